//! Versioned binary checkpoint: magic, format version, a JSON header with
//! the hyperparameters and shape table, then every tensor as row-major
//! little-endian `f64`. Optimizer moments follow when present.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hyper, Model, ModelParams};
use crate::numerics::{AdamState, Matrix};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RAMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Free-form training bookkeeping stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epochs completed when the parameters were captured.
    pub epoch: usize,
    pub val_recall10: Option<f64>,
    /// `"best"` or `"final"`.
    pub role: String,
    pub seed: u64,
    pub init_scheme: String,
    pub rng_algorithm: String,
    #[serde(default)]
    pub evals_since_best: usize,
    #[serde(default)]
    pub best_val_recall10: Option<f64>,
    #[serde(default)]
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ShapeEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: Hyper,
    num_users: usize,
    num_items: usize,
    tensors: Vec<ShapeEntry>,
    optimizer: Option<OptimizerHeader>,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let params = &self.model.params;
        let tensors = params.tensors();
        let header = Header {
            hyper: self.model.hyper,
            num_users: params.num_users(),
            num_items: params.num_items(),
            tensors: tensors
                .iter()
                .map(|(name, t)| ShapeEntry { name: name.clone(), rows: t.rows(), cols: t.cols() })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                step: o.step,
            }),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut write_matrix = |m: &Matrix| -> Result<()> {
            let mut buf = Vec::with_capacity(m.data().len() * 8);
            for v in m.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
            Ok(())
        };
        for (_, t) in &tensors {
            write_matrix(t)?;
        }
        if let Some(opt) = &self.optimizer {
            let moments_ready = !opt.first_moment.is_empty();
            for idx in 0..tensors.len() {
                let (_, t) = &tensors[idx];
                let zero = Matrix::zeros(t.rows(), t.cols());
                write_matrix(if moments_ready { &opt.first_moment[idx] } else { &zero })?;
            }
            for idx in 0..tensors.len() {
                let (_, t) = &tensors[idx];
                let zero = Matrix::zeros(t.rows(), t.cols());
                write_matrix(if moments_ready { &opt.second_moment[idx] } else { &zero })?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;

        let hyper = header.hyper;
        hyper.validate()?;
        let mut params = ModelParams::init(
            &hyper,
            header.num_users,
            header.num_items,
            &mut crate::numerics::Rng::new(0),
        );
        let names: Vec<(String, (usize, usize))> =
            params.tensors().iter().map(|(n, t)| (n.clone(), t.shape())).collect();
        if names.len() != header.tensors.len()
            || names
                .iter()
                .zip(&header.tensors)
                .any(|((n, s), e)| *n != e.name || *s != (e.rows, e.cols))
        {
            return Err(Error::Format("checkpoint shape table does not match its hyperparameters".into()));
        }
        let mut read_matrix = |m: &mut Matrix| -> Result<()> {
            let mut buf = vec![0u8; m.data().len() * 8];
            input.read_exact(&mut buf)?;
            for (v, chunk) in m.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            Ok(())
        };
        for t in params.tensors_mut() {
            read_matrix(t)?;
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let mut first: Vec<Matrix> =
                    names.iter().map(|(_, (r, c))| Matrix::zeros(*r, *c)).collect();
                let mut second = first.clone();
                for m in first.iter_mut().chain(second.iter_mut()) {
                    read_matrix(m)?;
                }
                let started = o.step > 0;
                Some(AdamState {
                    learning_rate: o.learning_rate,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    epsilon: o.epsilon,
                    step: o.step,
                    first_moment: if started { first } else { Vec::new() },
                    second_moment: if started { second } else { Vec::new() },
                })
            }
        };
        let model = Model::from_parts(hyper, params)?;
        Ok(Checkpoint { model, optimizer, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
