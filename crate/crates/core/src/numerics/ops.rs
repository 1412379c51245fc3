use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::matrix::dot;

/// Softmax restricted to the positions where `valid` is true. Invalid
/// positions get exactly zero.
pub fn masked_softmax(logits: &[f64], valid: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != valid.len() {
        return Err(Error::Shape(format!(
            "{} logits with {} mask entries",
            logits.len(),
            valid.len()
        )));
    }
    let mut out = vec![0.0; logits.len()];
    masked_softmax_into(logits, valid, &mut out)?;
    Ok(out)
}

pub(crate) fn masked_softmax_into(logits: &[f64], valid: &[bool], out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (&l, &v) in logits.iter().zip(valid) {
        if v {
            if !l.is_finite() {
                return Err(Error::Numerical(format!("non-finite logit {l}")));
            }
            max = max.max(l);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate("every softmax position is masked".into()));
    }
    let mut sum = 0.0;
    for ((o, &l), &v) in out.iter_mut().zip(logits).zip(valid) {
        *o = if v { (l - max).exp() } else { 0.0 };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Given softmax output `p` and upstream `dp`, the gradient on the logits.
/// Masked positions carry `p = 0` and therefore receive zero.
pub(crate) fn softmax_backward(p: &[f64], dp: &[f64], dlogits: &mut [f64]) {
    let inner = dot(p, dp);
    for ((d, &pi), &dpi) in dlogits.iter_mut().zip(p).zip(dp) {
        *d = pi * (dpi - inner);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }

    /// GELU is the exact `x * Phi(x)` form.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => x * normal_cdf(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => normal_cdf(x) + x * normal_pdf(x),
        }
    }
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    // One square root of the product keeps cos(x, x) exactly 1.
    Ok((dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let p = masked_softmax(&[3.3; 4], &[true; 4]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_valid_slot() {
        let p = masked_softmax(&[5.0, 123.0], &[true, false]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp(1), exp(2), exp(3) normalized, evaluated independently
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        let p = masked_softmax(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let want = [0.09003, 0.24473, 0.66524];
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-5);
            assert!((p[i] - e[i] / s).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        assert!(matches!(
            masked_softmax(&[1.0, 2.0], &[false, false]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = masked_softmax(&[1e5, 1e5 - 1.0], &[true, true]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
        // Phi(1) = 0.841344746068543
        assert!((Activation::Gelu.apply(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((Activation::Gelu.apply(1.0) - 0.84134).abs() < 1e-4);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for kind in [Activation::Relu, Activation::Gelu] {
            for &x in &[-2.1, -0.3, 0.4, 1.7] {
                let h = 1e-5;
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x)).abs() < 1e-8, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / sqrt(14 * 77)
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.97463).abs() < 1e-5);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-800.0)).is_finite());
    }

    proptest! {
        #[test]
        fn softmax_is_a_shift_invariant_distribution(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            mask_bits in proptest::collection::vec(any::<bool>(), 12),
            shift in -50.0f64..50.0,
        ) {
            let mut valid: Vec<bool> = mask_bits[..logits.len()].to_vec();
            valid[0] = true;
            let p = masked_softmax(&logits, &valid).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for (pi, v) in p.iter().zip(&valid) {
                prop_assert!(*pi >= 0.0);
                if !v { prop_assert_eq!(*pi, 0.0); }
            }
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = masked_softmax(&shifted, &valid).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
