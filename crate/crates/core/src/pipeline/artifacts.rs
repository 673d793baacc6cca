//! Run directory layout, manifest and model card.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FEATURE_VERSION;
use crate::metrics::EvaluationReport;
use crate::models::ModelBundle;
use crate::numerics::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION, RNG_ALGORITHM};
use crate::scoring::write_score_csv;

use super::config::ExperimentConfig;
use super::train::RunOutcome;

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_CARD_FILE: &str = "model_card.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub data_seed: u64,
    pub crate_version: String,
    pub checkpoint_version: u32,
    pub feature_format_version: u32,
    pub rng: String,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub uncertainty_head: Vec<usize>,
    pub classifier: Vec<usize>,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub uncertainty_loss: String,
    pub synth_method: String,
    pub seed: u64,
    pub data_seed: u64,
    pub updates: Updates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Updates {
    pub auto_encoder: u64,
    pub uncertainty_head: u64,
    pub classifier: u64,
}

impl ModelCard {
    pub fn new(cfg: &ExperimentConfig, bundle: &ModelBundle) -> Self {
        Self {
            feature_dim: bundle.ae.feature_dim(),
            n_classes: bundle.ae.n_classes(),
            latent_dim: bundle.ae.latent_dim(),
            encoder: bundle.ae.encoder().layer_dims(),
            decoder: bundle.ae.decoder().layer_dims(),
            uncertainty_head: bundle.head.net().layer_dims(),
            classifier: bundle.classifier.net().layer_dims(),
            lambda: cfg.lambda,
            alpha: cfg.noise.alpha(),
            beta: cfg.noise.beta(),
            uncertainty_loss: cfg.uncertainty_loss.as_str().into(),
            synth_method: cfg.synth_method.map_or("none", |m| m.id()).into(),
            seed: cfg.seed,
            data_seed: cfg.effective_data_seed(),
            updates: Updates {
                auto_encoder: bundle.ae.updates(),
                uncertainty_head: bundle.head.updates(),
                classifier: bundle.classifier.updates(),
            },
        }
    }
}

fn csv_file(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &RunOutcome,
    wall_clock_secs: f64,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    let mut record = |name: &str| outputs.push(name.to_string());

    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    record(CONFIG_FILE);
    fs::write(dir.join(REPORT_FILE), outcome.report.to_json()?)?;
    record(REPORT_FILE);

    let mut ckpt = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
    write_checkpoint(&mut ckpt, &outcome.bundle.to_named_nets())?;
    ckpt.flush()?;
    record(CHECKPOINT_FILE);

    fs::write(
        dir.join(MODEL_CARD_FILE),
        serde_json::to_string_pretty(&ModelCard::new(cfg, &outcome.bundle))?,
    )?;
    record(MODEL_CARD_FILE);

    csv_file(
        &dir.join("history.csv"),
        "phase,epoch,steps,det_loss,ae_loss,unc_loss,total_loss",
        outcome.history.iter().map(|h| {
            format!(
                "{},{},{},{},{},{},{}",
                h.phase,
                h.epoch,
                h.steps,
                h.det_loss,
                opt(h.ae_loss),
                opt(h.unc_loss),
                h.total_loss
            )
        }),
    )?;
    record("history.csv");

    write_score_csv(
        BufWriter::new(File::create(dir.join("scores.csv"))?),
        &outcome.score_sets,
    )?;
    record("scores.csv");

    let report = &outcome.report;
    let curve_rows = |pick: fn(&crate::metrics::MethodCurves) -> &Vec<[f64; 2]>| {
        report
            .order
            .iter()
            .flat_map(|m| {
                pick(&report.curves[m])
                    .iter()
                    .map(move |p| format!("{m},{},{}", p[0], p[1]))
            })
            .collect::<Vec<_>>()
    };
    csv_file(&dir.join("roc.csv"), "method,fpr,tpr", curve_rows(|c| &c.roc))?;
    record("roc.csv");
    csv_file(&dir.join("pr.csv"), "method,recall,precision", curve_rows(|c| &c.pr))?;
    record("pr.csv");
    let hist_rows = report.order.iter().flat_map(|m| {
        let h = &report.curves[m].histogram;
        (0..h.id_counts.len()).map(move |b| {
            format!(
                "{m},{},{},{},{}",
                h.edges[b],
                h.edges[b + 1],
                h.id_counts[b],
                h.ood_counts[b]
            )
        })
    });
    csv_file(
        &dir.join("histogram.csv"),
        "method,bin_lo,bin_hi,id_count,ood_count",
        hist_rows.collect::<Vec<_>>(),
    )?;
    record("histogram.csv");

    if let Some(p) = &outcome.projection {
        csv_file(
            &dir.join("pca.csv"),
            "kind,class_id,pc1,pc2",
            p.points
                .iter()
                .map(|(l, c, x, y)| format!("{},{c},{x},{y}", l.as_str())),
        )?;
        record("pca.csv");
    }

    let manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        data_seed: cfg.effective_data_seed(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_version: CHECKPOINT_VERSION,
        feature_format_version: FEATURE_VERSION,
        rng: RNG_ALGORITHM.into(),
        wall_clock_secs,
        outputs: {
            let mut o = outputs;
            o.push(MANIFEST_FILE.into());
            o
        },
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads the resolved config, models and stored report of a run directory.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, ModelBundle, EvaluationReport)> {
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.is_file() {
        return Err(Error::NotReady(format!("{} holds no finished run", dir.display())));
    }
    let cfg = ExperimentConfig::from_file(&cfg_path)?;
    let nets = read_checkpoint(BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?))?;
    let bundle = ModelBundle::from_named_nets(nets)?;
    let report = EvaluationReport::from_json(&fs::read_to_string(dir.join(REPORT_FILE))?)?;
    Ok((cfg, bundle, report))
}
