//! Flat `key = value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datapipe::Policy;
use crate::model::{Hyper, ModelKind, ScaleRule};
use crate::numerics::Activation;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// `(key, default, description)` for every accepted key.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("model", "ram", "ram | ram-u | sa"),
    ("d", "64", "embedding width"),
    ("n", "50", "window length"),
    ("n_h", "2", "attention heads; must divide d"),
    ("n_b", "2", "attention blocks"),
    ("activation", "gelu", "gelu | relu"),
    ("mask_padding", "true", "exclude padding slots from attention"),
    ("scale", "sqrt_d", "sqrt_d | sqrt_head_dim"),
    ("dropout", "0", "training-time dropout rate"),
    ("epochs", "100", "maximum epochs"),
    ("lr", "0.001", "Adam learning rate"),
    ("batch_size", "1", "examples per update"),
    ("seed", "42", "master seed"),
    ("patience", "10", "evaluations without improvement before stopping"),
    ("eval_every", "1", "epochs between validation passes"),
    ("min_user_events", "5", "k-core threshold for users"),
    ("min_item_events", "5", "k-core threshold for items"),
    ("rating_threshold", "none", "drop events rated below this; none keeps all"),
    ("data", "", "prepared dataset directory"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper: Hyper,
    pub train: TrainConfig,
    pub policy: Policy,
    pub data: Option<PathBuf>,
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected a {}", std::any::type_name::<T>()))
}

impl RunConfig {
    /// Parses a document, reporting every bad line and every constraint
    /// violation at once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key = value", i + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if pairs.insert(k.to_owned(), (i + 1, v.to_owned())).is_some() {
                problems.push(format!("line {}: duplicate key {k:?}", i + 1));
            }
        }
        let pairs: Vec<(String, String)> = pairs.into_iter().map(|(k, (_, v))| (k, v)).collect();
        Self::from_pairs(&pairs, problems)
    }

    /// Applies `key=value` overrides on top of the defaults.
    pub fn from_pairs(pairs: &[(String, String)], mut problems: Vec<String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs {
            if let Err(e) = cfg.set(k, v) {
                problems.push(e);
            }
        }
        if let Err(Error::Config(e)) = cfg.hyper.validate() {
            problems.extend(e.split("; ").map(str::to_owned));
        }
        if let Err(Error::Config(e)) = cfg.train.validate() {
            problems.extend(e.split("; ").map(str::to_owned));
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    /// Sets one key; the error names the key and the problem.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        let r: std::result::Result<(), String> = match key {
            "model" => ModelKind::parse(v).map(|x| self.hyper.kind = x).map_err(|e| e.to_string()),
            "d" => parse_num(v).map(|x| self.hyper.d = x),
            "n" => parse_num(v).map(|x| self.hyper.n = x),
            "n_h" => parse_num(v).map(|x| self.hyper.heads = x),
            "n_b" => parse_num(v).map(|x| self.hyper.blocks = x),
            "activation" => Activation::parse(v).map(|x| self.hyper.activation = x).map_err(|e| e.to_string()),
            "mask_padding" => parse_bool(v).map(|x| self.hyper.mask_padding = x),
            "scale" => match v {
                "sqrt_d" => Ok(ScaleRule::SqrtD),
                "sqrt_head_dim" => Ok(ScaleRule::SqrtHeadDim),
                _ => Err("expected sqrt_d or sqrt_head_dim".into()),
            }
            .map(|x| self.hyper.scale = x),
            "dropout" => parse_num(v).map(|x| self.hyper.dropout = x),
            "epochs" => parse_num(v).map(|x| self.train.epochs = x),
            "lr" => parse_num(v).map(|x| self.train.learning_rate = x),
            "batch_size" => parse_num(v).map(|x| self.train.batch_size = x),
            "seed" => parse_num(v).map(|x| self.train.seed = x),
            "patience" => parse_num(v).map(|x| self.train.patience = x),
            "eval_every" => parse_num(v).map(|x| self.train.eval_every = x),
            "min_user_events" => parse_num(v).map(|x| self.policy.min_user_events = x),
            "min_item_events" => parse_num(v).map(|x| self.policy.min_item_events = x),
            "rating_threshold" => {
                let parsed = if v == "none" { Ok(None) } else { parse_num(v).map(Some) };
                parsed.map(|x| self.policy.rating_threshold = x)
            }
            "data" => {
                self.data = (!v.is_empty()).then(|| PathBuf::from(v));
                Ok(())
            }
            _ => return Err(format!("unknown key {key:?}")),
        };
        r.map_err(|e| format!("{key} = {value:?}: {e}"))
    }

    /// Canonical document form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let t = &self.train;
        let p = &self.policy;
        let mut out = String::new();
        let scale = match h.scale {
            ScaleRule::SqrtD => "sqrt_d",
            ScaleRule::SqrtHeadDim => "sqrt_head_dim",
        };
        let rows: Vec<(&str, String)> = vec![
            ("model", h.kind.name().into()),
            ("d", h.d.to_string()),
            ("n", h.n.to_string()),
            ("n_h", h.heads.to_string()),
            ("n_b", h.blocks.to_string()),
            ("activation", h.activation.name().into()),
            ("mask_padding", h.mask_padding.to_string()),
            ("scale", scale.into()),
            ("dropout", h.dropout.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            ("patience", t.patience.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("min_user_events", p.min_user_events.to_string()),
            ("min_item_events", p.min_item_events.to_string()),
            ("rating_threshold", p.rating_threshold.map_or("none".into(), |x| x.to_string())),
            ("data", self.data.as_ref().map_or(String::new(), |d| d.display().to_string())),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
