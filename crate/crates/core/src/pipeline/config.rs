//! Experiment configuration as flat dotted keys.
//!
//! A config file is TOML; nested tables and dotted keys are equivalent
//! (`[noise] alpha = 0.5` is `noise.alpha = 0.5`). Every key has a default,
//! unknown keys are rejected, and overrides use the same dotted names.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{Error, Result};
use crate::models::{ModelDims, UncertaintyLossKind};
use crate::synthesis::{NoiseSpec, SynthMethod};

pub const METHOD_UNCERTAINTY: &str = "uncertainty";
pub const SCORING_METHODS: [&str; 3] = [
    crate::scoring::METHOD_DEFAULT,
    crate::scoring::METHOD_MAHALANOBIS,
    METHOD_UNCERTAINTY,
];

/// Every accepted key with a one-line description.
pub const CONFIG_KEYS: [(&str, &str); 27] = [
    (
        "dataset",
        "generator preset name (desk, smoke) or a directory holding train.vosf and val.vosf",
    ),
    ("data.seed", "generator seed; defaults to `seed`"),
    (
        "data.fp_overlap",
        "FP overlap with the ID clusters in [0, 1] (generated data only)",
    ),
    (
        "data.displacement",
        "FP displacement in ID standard deviations (generated data only)",
    ),
    ("model.encoder", "encoder widths; the last is the latent dimension"),
    ("model.decoder_hidden", "decoder hidden widths (output width is D)"),
    ("model.head_hidden", "uncertainty head hidden widths"),
    ("model.classifier_hidden", "surrogate classifier hidden widths"),
    ("noise.alpha", "latent noise offset alpha"),
    ("noise.beta", "latent noise scale beta"),
    ("loss.lambda", "outlier loss weight in phase 2"),
    ("loss.uncertainty", "outlier loss form: sigmoid or bce"),
    (
        "synth.method",
        "training outlier synthesis: lsvos, vos, linear_mix, random_noise, noisy_id or none",
    ),
    ("synth.vos_candidates", "VOS candidates drawn per class"),
    ("synth.mix_weight", "LinearMix weight on the ID row"),
    ("train.phase1_epochs", "epochs with lambda = 0"),
    ("train.phase2_epochs", "epochs with the configured lambda"),
    ("train.epoch_scale", "multiplier applied to both epoch counts"),
    ("train.batch_size", "ID rows per step"),
    ("train.lr", "Adam learning rate"),
    ("queue.capacity", "feature queue capacity per class"),
    (
        "sample.n_per_class",
        "queue rows sampled per class for each auto-encoder step",
    ),
    ("seed", "training seed"),
    (
        "methods",
        "scorers to evaluate: default_score, mahalanobis, uncertainty",
    ),
    ("eval.tpr", "ID acceptance rate used for tau and FPR"),
    ("eval.ece_bins", "equal-width ECE bins"),
    ("eval.histogram_bins", "score histogram bins"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_seed: Option<u64>,
    pub fp_overlap: f64,
    pub displacement: f64,
    pub dims: ModelDims,
    pub noise: NoiseSpec,
    pub lambda: f64,
    pub uncertainty_loss: UncertaintyLossKind,
    pub synth_method: Option<SynthMethod>,
    pub vos_candidates: usize,
    pub mix_weight: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub queue_capacity: usize,
    pub n_per_class: usize,
    pub seed: u64,
    pub methods: Vec<String>,
    pub tpr: f64,
    pub ece_bins: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "desk".into(),
            data_seed: None,
            fp_overlap: 0.5,
            displacement: 10.0,
            dims: ModelDims::default(),
            noise: NoiseSpec::default(),
            lambda: 1.0,
            uncertainty_loss: UncertaintyLossKind::Sigmoid,
            synth_method: Some(SynthMethod::LsVos),
            vos_candidates: 10_000,
            mix_weight: 0.5,
            phase1_epochs: 50,
            phase2_epochs: 20,
            epoch_scale: 1.0,
            batch_size: 128,
            lr: 1e-3,
            queue_capacity: 1000,
            n_per_class: 500,
            seed: 0,
            methods: SCORING_METHODS.iter().map(|s| s.to_string()).collect(),
            tpr: 0.95,
            ece_bins: 10,
            histogram_bins: 40,
        }
    }
}

fn type_error(key: &str, want: &str, got: &Value) -> Error {
    Error::Config {
        message: format!("expected {want}, got {got}"),
        keys: vec![key.to_string()],
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(type_error(key, "a number", other)),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(type_error(key, "a non-negative integer", other)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_usize(key, x)).collect(),
        other => Err(type_error(key, "an array of integers", other)),
    }
}

fn as_str_list(key: &str, v: &Value) -> Result<Vec<String>> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_str(key, x).map(str::to_string)).collect(),
        Value::String(s) => Ok(s
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect()),
        other => Err(type_error(key, "an array of strings", other)),
    }
}

fn usize_list(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect())
}

/// Flattens nested tables into `(dotted key, leaf value)` pairs.
pub fn flatten_table(table: &toml::Table) -> Vec<(String, Value)> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
        for (k, v) in table {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Table(t) => walk(&key, t, out),
                other => out.push((key, other.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

/// Parses the right-hand side of `key=value`; bare words become strings.
pub fn parse_override_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.trim().to_string()),
    }
}

impl ExperimentConfig {
    /// Small models and few epochs for quick checks on the `smoke` preset.
    pub fn smoke() -> Self {
        Self {
            dataset: "smoke".into(),
            dims: ModelDims {
                encoder: vec![32, 16],
                decoder_hidden: vec![32],
                head_hidden: vec![32],
                classifier_hidden: vec![16],
            },
            phase1_epochs: 3,
            phase2_epochs: 3,
            batch_size: 64,
            queue_capacity: 200,
            n_per_class: 50,
            vos_candidates: 500,
            ..Self::default()
        }
    }

    /// Full-sized models on the `desk` preset with a tenth of the epochs.
    pub fn desk() -> Self {
        Self {
            epoch_scale: 0.1,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            message: e.to_string(),
            keys: Vec::new(),
        })?;
        let mut cfg = Self::default();
        cfg.apply(flatten_table(&table))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut pairs = Vec::with_capacity(overrides.len());
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| Error::Config {
                message: format!("override {:?} is not key=value", o.as_ref()),
                keys: Vec::new(),
            })?;
            pairs.push((k.trim().to_string(), parse_override_value(v)));
        }
        self.apply(pairs)
    }

    /// Sets every pair, reporting all unknown keys at once, then validates.
    pub fn apply(&mut self, pairs: Vec<(String, Value)>) -> Result<()> {
        let unknown: Vec<String> = pairs
            .iter()
            .filter(|(k, _)| !CONFIG_KEYS.iter().any(|(known, _)| known == k))
            .map(|(k, _)| k.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config {
                message: "unknown keys".into(),
                keys: unknown,
            });
        }
        for (k, v) in &pairs {
            self.set(k, v)?;
        }
        self.validate()
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "dataset" => self.dataset = as_str(key, v)?.to_string(),
            "data.seed" => self.data_seed = Some(as_u64(key, v)?),
            "data.fp_overlap" => self.fp_overlap = as_f64(key, v)?,
            "data.displacement" => self.displacement = as_f64(key, v)?,
            "model.encoder" => self.dims.encoder = as_usize_list(key, v)?,
            "model.decoder_hidden" => self.dims.decoder_hidden = as_usize_list(key, v)?,
            "model.head_hidden" => self.dims.head_hidden = as_usize_list(key, v)?,
            "model.classifier_hidden" => self.dims.classifier_hidden = as_usize_list(key, v)?,
            "noise.alpha" => {
                self.noise = NoiseSpec::new(as_f64(key, v)?, self.noise.beta()).map_err(|e| config_value(key, e))?
            }
            "noise.beta" => {
                self.noise = NoiseSpec::new(self.noise.alpha(), as_f64(key, v)?).map_err(|e| config_value(key, e))?
            }
            "loss.lambda" => self.lambda = as_f64(key, v)?,
            "loss.uncertainty" => {
                self.uncertainty_loss = UncertaintyLossKind::parse(as_str(key, v)?).map_err(|e| config_value(key, e))?
            }
            "synth.method" => {
                let s = as_str(key, v)?;
                self.synth_method = if s == "none" {
                    None
                } else {
                    Some(SynthMethod::parse(s).map_err(|e| config_value(key, e))?)
                };
            }
            "synth.vos_candidates" => self.vos_candidates = as_usize(key, v)?,
            "synth.mix_weight" => self.mix_weight = as_f64(key, v)?,
            "train.phase1_epochs" => self.phase1_epochs = as_usize(key, v)?,
            "train.phase2_epochs" => self.phase2_epochs = as_usize(key, v)?,
            "train.epoch_scale" => self.epoch_scale = as_f64(key, v)?,
            "train.batch_size" => self.batch_size = as_usize(key, v)?,
            "train.lr" => self.lr = as_f64(key, v)?,
            "queue.capacity" => self.queue_capacity = as_usize(key, v)?,
            "sample.n_per_class" => self.n_per_class = as_usize(key, v)?,
            "seed" => self.seed = as_u64(key, v)?,
            "methods" => self.methods = as_str_list(key, v)?,
            "eval.tpr" => self.tpr = as_f64(key, v)?,
            "eval.ece_bins" => self.ece_bins = as_usize(key, v)?,
            "eval.histogram_bins" => self.histogram_bins = as_usize(key, v)?,
            other => {
                return Err(Error::Config {
                    message: "unknown key".into(),
                    keys: vec![other.to_string()],
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(key.to_string());
            }
        };
        check(!self.dataset.trim().is_empty(), "dataset");
        check((0.0..=1.0).contains(&self.fp_overlap), "data.fp_overlap");
        check(
            self.displacement.is_finite() && self.displacement >= 0.0,
            "data.displacement",
        );
        check(self.dims.validate().is_ok(), "model.*");
        check(self.lambda.is_finite() && self.lambda >= 0.0, "loss.lambda");
        check(self.vos_candidates > 0, "synth.vos_candidates");
        check((0.0..=1.0).contains(&self.mix_weight), "synth.mix_weight");
        check(
            self.epoch_scale.is_finite() && self.epoch_scale > 0.0,
            "train.epoch_scale",
        );
        check(self.batch_size > 0, "train.batch_size");
        check(self.lr.is_finite() && self.lr > 0.0, "train.lr");
        check(self.queue_capacity > 0, "queue.capacity");
        check(self.n_per_class > 0, "sample.n_per_class");
        check(
            !self.methods.is_empty() && self.methods.iter().all(|m| SCORING_METHODS.contains(&m.as_str())),
            "methods",
        );
        check(self.tpr > 0.0 && self.tpr <= 1.0, "eval.tpr");
        check(self.ece_bins > 0, "eval.ece_bins");
        check(self.histogram_bins > 0, "eval.histogram_bins");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                message: "invalid values".into(),
                keys: bad,
            })
        }
    }

    /// Epoch count after applying `train.epoch_scale`; never rounds a
    /// positive count down to zero.
    pub fn scaled_epochs(&self, epochs: usize) -> usize {
        if epochs == 0 {
            return 0;
        }
        ((epochs as f64 * self.epoch_scale).round() as usize).max(1)
    }

    pub fn effective_data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Every key with its current value, sorted by key.
    pub fn to_pairs(&self) -> Vec<(String, Value)> {
        let f = Value::Float;
        let i = |x: usize| Value::Integer(x as i64);
        let mut pairs = vec![
            ("dataset", Value::String(self.dataset.clone())),
            ("data.fp_overlap", f(self.fp_overlap)),
            ("data.displacement", f(self.displacement)),
            ("model.encoder", usize_list(&self.dims.encoder)),
            ("model.decoder_hidden", usize_list(&self.dims.decoder_hidden)),
            ("model.head_hidden", usize_list(&self.dims.head_hidden)),
            ("model.classifier_hidden", usize_list(&self.dims.classifier_hidden)),
            ("noise.alpha", f(self.noise.alpha())),
            ("noise.beta", f(self.noise.beta())),
            ("loss.lambda", f(self.lambda)),
            ("loss.uncertainty", Value::String(self.uncertainty_loss.as_str().into())),
            (
                "synth.method",
                Value::String(self.synth_method.map_or("none", |m| m.id()).into()),
            ),
            ("synth.vos_candidates", i(self.vos_candidates)),
            ("synth.mix_weight", f(self.mix_weight)),
            ("train.phase1_epochs", i(self.phase1_epochs)),
            ("train.phase2_epochs", i(self.phase2_epochs)),
            ("train.epoch_scale", f(self.epoch_scale)),
            ("train.batch_size", i(self.batch_size)),
            ("train.lr", f(self.lr)),
            ("queue.capacity", i(self.queue_capacity)),
            ("sample.n_per_class", i(self.n_per_class)),
            ("seed", Value::Integer(self.seed as i64)),
            (
                "methods",
                Value::Array(self.methods.iter().map(|m| Value::String(m.clone())).collect()),
            ),
            ("eval.tpr", f(self.tpr)),
            ("eval.ece_bins", i(self.ece_bins)),
            ("eval.histogram_bins", i(self.histogram_bins)),
        ];
        if let Some(s) = self.data_seed {
            pairs.push(("data.seed", Value::Integer(s as i64)));
        }
        let mut out: Vec<(String, Value)> = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Resolved config as TOML with one dotted key per line.
    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 over the sorted `key = value` lines.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

fn config_value(key: &str, e: Error) -> Error {
    Error::Config {
        message: e.to_string(),
        keys: vec![key.to_string()],
    }
}
