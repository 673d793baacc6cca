//! Parameter sweeps: one full run per override set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{render_rows, MethodMetrics};

use super::config::ExperimentConfig;
use super::train::run_experiment;

/// Overrides applied on top of the base config for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub overrides: Vec<(String, String)>,
}

impl SweepPoint {
    pub fn new<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            overrides: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn label(&self) -> String {
        if self.overrides.is_empty() {
            return "base".into();
        }
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let strings: Vec<String> = self.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        cfg.apply_overrides(&strings)?;
        Ok(cfg)
    }
}

/// Splits on commas outside brackets and quotes.
fn split_values(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut cur = String::new();
    for ch in raw.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' if !quoted => depth += 1,
            ']' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur.trim().to_string());
    out
}

/// Parses `key=v1,v2,...` specs. Several keys are zipped point by point; a
/// key with a single value is held fixed across the sweep.
pub fn parse_sweep<S: AsRef<str>>(specs: &[S]) -> Result<Vec<SweepPoint>> {
    if specs.is_empty() {
        return Err(Error::invalid("sweep needs at least one key=v1,v2,... spec"));
    }
    let mut columns = Vec::with_capacity(specs.len());
    for spec in specs {
        let (k, v) = spec.as_ref().split_once('=').ok_or_else(|| Error::Config {
            message: format!("sweep {:?} is not key=v1,v2,...", spec.as_ref()),
            keys: Vec::new(),
        })?;
        let values = split_values(v);
        if values.iter().any(String::is_empty) {
            return Err(Error::Config {
                message: "empty sweep value".into(),
                keys: vec![k.trim().to_string()],
            });
        }
        columns.push((k.trim().to_string(), values));
    }
    let n = columns.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mismatched: Vec<String> = columns
        .iter()
        .filter(|(_, v)| v.len() != 1 && v.len() != n)
        .map(|(k, _)| k.clone())
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Config {
            message: format!("zipped sweep lists must have {n} values or one"),
            keys: mismatched,
        });
    }
    Ok((0..n)
        .map(|i| {
            SweepPoint::new(
                columns
                    .iter()
                    .map(|(k, v)| (k.clone(), v[if v.len() == 1 { 0 } else { i }].clone())),
            )
        })
        .collect())
}

/// The noise-parameter grid `(alpha, beta)`.
pub fn noise_grid() -> Vec<SweepPoint> {
    [
        ("0", "0.1"),
        ("0", "0.5"),
        ("0", "1"),
        ("0.25", "1"),
        ("0.25", "5"),
        ("0.25", "10"),
    ]
    .into_iter()
    .map(|(a, b)| SweepPoint::new([("noise.alpha", a), ("noise.beta", b)]))
    .collect()
}

/// The outlier-loss weight grid `lambda`.
pub fn lambda_grid() -> Vec<SweepPoint> {
    ["0.1", "0.5", "1", "2", "5"]
        .into_iter()
        .map(|l| SweepPoint::new([("loss.lambda", l)]))
        .collect()
}

/// Outcome of one sweep point; exactly one of `metrics` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub point: SweepPoint,
    pub config_hash: Option<String>,
    pub metrics: Option<BTreeMap<String, MethodMetrics>>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn succeeded(&self) -> bool {
        self.metrics.is_some()
    }
}

/// Runs every point; failures are recorded and the sweep continues.
pub fn ablate(base: &ExperimentConfig, points: &[SweepPoint]) -> Result<Vec<AblationRow>> {
    if points.is_empty() {
        return Err(Error::invalid("empty sweep"));
    }
    Ok(points
        .par_iter()
        .map(|point| {
            let result = point.apply(base).and_then(|cfg| {
                let hash = cfg.hash();
                run_experiment(&cfg).map(|o| (hash, o.report))
            });
            match result {
                Ok((hash, report)) => AblationRow {
                    point: point.clone(),
                    config_hash: Some(hash),
                    metrics: Some(report.methods),
                    error: None,
                },
                Err(e) => {
                    warn!("sweep point {} failed: {e}", point.label());
                    AblationRow {
                        point: point.clone(),
                        config_hash: None,
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

/// Table of one method's metrics keyed by the swept values.
pub fn render_ablation(rows: &[AblationRow], method: &str) -> String {
    let labelled: Vec<(String, Option<&MethodMetrics>)> = rows
        .iter()
        .map(|r| (r.point.label(), r.metrics.as_ref().and_then(|m| m.get(method))))
        .collect();
    let ok: Vec<(String, &MethodMetrics)> = labelled.iter().filter_map(|(l, m)| m.map(|m| (l.clone(), m))).collect();
    let mut out = render_rows("Sweep", &ok);
    for r in rows.iter().filter(|r| !r.succeeded()) {
        out.push_str(&format!(
            "{}  FAILED: {}\n",
            r.point.label(),
            r.error.as_deref().unwrap_or("")
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `ablation.json` and `ablation.csv` (one row per point and method).
pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(rows)?)?;
    let mut keys: Vec<String> = Vec::new();
    for r in rows {
        for (k, _) in &r.point.overrides {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let mut csv = keys.iter().map(|k| csv_field(k)).collect::<Vec<_>>();
    csv.extend(["method", "auroc", "aupr", "aupr_ood", "fpr95", "ece", "status"].map(String::from));
    let mut text = csv.join(",") + "\n";
    for r in rows {
        let values: Vec<String> = keys
            .iter()
            .map(|k| {
                r.point
                    .overrides
                    .iter()
                    .find(|(kk, _)| kk == k)
                    .map(|(_, v)| csv_field(v))
                    .unwrap_or_default()
            })
            .collect();
        match &r.metrics {
            Some(methods) => {
                for (name, m) in methods {
                    let mut line = values.clone();
                    line.push(csv_field(name));
                    line.extend([m.auroc, m.aupr, m.aupr_ood, m.fpr95].map(|v| v.to_string()));
                    line.push(m.ece.map(|v| v.to_string()).unwrap_or_default());
                    line.push("ok".into());
                    text.push_str(&(line.join(",") + "\n"));
                }
            }
            None => {
                let mut line = values.clone();
                line.extend(["", "", "", "", "", ""].map(String::from));
                line.push(csv_field(&format!("failed: {}", r.error.as_deref().unwrap_or(""))));
                text.push_str(&(line.join(",") + "\n"));
            }
        }
    }
    fs::write(dir.join("ablation.csv"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipped_sweep() {
        let pts = parse_sweep(&["noise.alpha=0,0,0.25", "noise.beta=0.1,1,5", "seed=3"]).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2].label(), "noise.alpha=0.25 noise.beta=5 seed=3");
        assert!(parse_sweep(&["a=1,2", "b=1,2,3"]).is_err());
        assert!(parse_sweep::<&str>(&[]).is_err());
        let lists = parse_sweep(&["model.encoder=[8, 4],[16, 8]"]).unwrap();
        assert_eq!(lists[1].overrides[0].1, "[16, 8]");
    }

    #[test]
    fn standard_grids() {
        let iv: Vec<String> = noise_grid().iter().map(SweepPoint::label).collect();
        assert_eq!(iv[0], "noise.alpha=0 noise.beta=0.1");
        assert_eq!(iv[5], "noise.alpha=0.25 noise.beta=10");
        let v: Vec<String> = lambda_grid().iter().map(SweepPoint::label).collect();
        assert_eq!(
            v,
            [
                "loss.lambda=0.1",
                "loss.lambda=0.5",
                "loss.lambda=1",
                "loss.lambda=2",
                "loss.lambda=5"
            ]
        );
        for p in noise_grid().iter().chain(&lambda_grid()) {
            p.apply(&ExperimentConfig::default()).unwrap();
        }
    }

    #[test]
    fn failures_are_recorded() {
        let base = ExperimentConfig {
            phase1_epochs: 1,
            phase2_epochs: 1,
            ..ExperimentConfig::smoke()
        };
        let pts = vec![
            SweepPoint::new([("loss.lambda", "0.5")]),
            SweepPoint::new([("loss.lambda", "-1")]),
        ];
        let rows = ablate(&base, &pts).unwrap();
        assert!(rows[0].succeeded());
        assert!(!rows[1].succeeded());
        assert!(rows[1].error.as_deref().unwrap().contains("loss.lambda"));
        let dir = tempfile::tempdir().unwrap();
        write_ablation(dir.path(), &rows).unwrap();
        let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(render_ablation(&rows, "uncertainty").contains("FAILED"));
    }
}
