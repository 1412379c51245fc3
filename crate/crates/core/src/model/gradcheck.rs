//! Central finite-difference check of the full training-loss gradient.

use super::{Model, ModelParams};
use crate::datapipe::FixedWindow;
use crate::trainer::{accumulate_example, bce_pair_loss};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative: f64,
    pub max_absolute: f64,
    /// Tensor name and flat index of the worst relative error.
    pub worst: (String, usize),
    pub checked: usize,
}

fn pair_loss(model: &Model, w: &FixedWindow, negative: u32) -> Result<f64> {
    let trace = model.forward(&w.slots)?;
    let h = trace.output();
    Ok(bce_pair_loss(model.score(h, w.user, w.target)?, model.score(h, w.user, negative)?))
}

/// Compares every analytic partial of the pair loss with
/// `(L(x + step) - L(x - step)) / 2 step`. Relative error is
/// `|a - f| / max(|a|, |f|, floor)`.
pub fn check_gradients(model: &Model, w: &FixedWindow, negative: u32, step: f64, floor: f64) -> Result<GradCheck> {
    let mut grads = model.params.zeros_like();
    accumulate_example(model, w, negative, None, &mut grads)?;
    let analytic: Vec<(String, Vec<f64>)> =
        grads.tensors().into_iter().map(|(name, t)| (name, t.data().to_vec())).collect();
    let mut probe = model.clone();
    let mut out = GradCheck { max_relative: 0.0, max_absolute: 0.0, worst: (String::new(), 0), checked: 0 };
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for (i, &ga) in a.iter().enumerate() {
            let orig = tensor(&probe.params, ti)[i];
            set(&mut probe.params, ti, i, orig + step);
            let up = pair_loss(&probe, w, negative)?;
            set(&mut probe.params, ti, i, orig - step);
            let down = pair_loss(&probe, w, negative)?;
            set(&mut probe.params, ti, i, orig);
            let numeric = (up - down) / (2.0 * step);
            let abs = (ga - numeric).abs();
            let rel = abs / ga.abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            out.max_absolute = out.max_absolute.max(abs);
            if rel > out.max_relative {
                out.max_relative = rel;
                out.worst = (name.clone(), i);
            }
        }
    }
    Ok(out)
}

fn tensor(p: &ModelParams, ti: usize) -> &[f64] {
    p.tensors()[ti].1.data()
}

fn set(p: &mut ModelParams, ti: usize, i: usize, v: f64) {
    p.tensors_mut()[ti].data_mut()[i] = v;
}
