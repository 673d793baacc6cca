//! OOD evaluation metrics: AUROC, AUPR, FPR at a target TPR and ECE, plus
//! curve points and histograms for plotting.
//!
//! Inputs follow the scoring orientation (higher = more anomalous). AUROC
//! treats OOD as the positive class; AUPR takes the positive class as an
//! argument and defaults to ID.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{calibrate_tau, ScoreSet, Truth};

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_TPR: f64 = 0.95;

fn require_both(set: &ScoreSet, metric: &str) -> Result<()> {
    if set.n_id() == 0 || set.n_ood() == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{metric} needs ID and OOD items, got {} ID / {} OOD",
            set.n_id(),
            set.n_ood()
        )));
    }
    Ok(())
}

/// Indices of `scores` sorted ascending, grouped into runs of equal value.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random OOD item scores above a random ID item, ties
/// counting one half (Mann-Whitney U over mid-ranks).
pub fn auroc(set: &ScoreSet) -> Result<f64> {
    require_both(set, "AUROC")?;
    let mut rank_sum = 0.0;
    let mut seen = 0usize;
    for group in tie_groups(&set.scores) {
        let mid = seen as f64 + (group.len() as f64 + 1.0) / 2.0;
        let n_ood = group.iter().filter(|&&i| set.truth[i] == Truth::Ood).count();
        rank_sum += mid * n_ood as f64;
        seen += group.len();
    }
    let n_ood = set.n_ood() as f64;
    let n_id = set.n_id() as f64;
    Ok((rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_id))
}

/// Average precision with step interpolation: thresholds sweep from the most
/// positive-looking score downwards, and each recall increment is weighted
/// by the precision at that threshold. With `Truth::Id` positive, low scores
/// are the most positive-looking.
pub fn aupr(set: &ScoreSet, positive: Truth) -> Result<f64> {
    let n_pos = set.truth.iter().filter(|&&t| t == positive).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(format!("AUPR needs {positive} items")));
    }
    let mut groups = tie_groups(&set.scores);
    if positive == Truth::Ood {
        groups.reverse();
    }
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for group in groups {
        tp += group.iter().filter(|&&i| set.truth[i] == positive).count();
        predicted += group.len();
        let recall = tp as f64 / n_pos as f64;
        area += (recall - prev_recall) * (tp as f64 / predicted as f64);
        prev_recall = recall;
    }
    Ok(area)
}

/// Fraction of OOD items accepted when τ admits `tpr` of the ID items.
pub fn fpr_at_tpr(set: &ScoreSet, tpr: f64) -> Result<f64> {
    require_both(set, "FPR")?;
    let tau = calibrate_tau(&set.id_scores(), tpr)?.tau;
    let ood = set.ood_scores();
    Ok(ood.iter().filter(|&&s| s <= tau).count() as f64 / ood.len() as f64)
}

/// Expected calibration error over `n_bins` equal-width bins on [0, 1].
/// Bin `b` covers `[b/n, (b+1)/n)`, the last bin also includes 1.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::invalid("ECE of an empty set"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

/// ROC points `(fpr, tpr)` with OOD positive, from (0, 0) to (1, 1).
pub fn roc_curve(set: &ScoreSet) -> Result<Vec<[f64; 2]>> {
    require_both(set, "ROC")?;
    let (n_id, n_ood) = (set.n_id() as f64, set.n_ood() as f64);
    let mut points = vec![[0.0, 0.0]];
    let (mut fp, mut tp) = (0usize, 0usize);
    for group in tie_groups(&set.scores).into_iter().rev() {
        for i in group {
            match set.truth[i] {
                Truth::Ood => tp += 1,
                Truth::Id => fp += 1,
            }
        }
        points.push([fp as f64 / n_id, tp as f64 / n_ood]);
    }
    Ok(points)
}

/// Precision-recall points `(recall, precision)` for the given positive class.
pub fn pr_curve(set: &ScoreSet, positive: Truth) -> Result<Vec<[f64; 2]>> {
    let n_pos = set.truth.iter().filter(|&&t| t == positive).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(format!("PR curve needs {positive} items")));
    }
    let mut groups = tie_groups(&set.scores);
    if positive == Truth::Ood {
        groups.reverse();
    }
    let mut points = Vec::with_capacity(groups.len());
    let (mut tp, mut predicted) = (0usize, 0usize);
    for group in groups {
        tp += group.iter().filter(|&&i| set.truth[i] == positive).count();
        predicted += group.len();
        points.push([tp as f64 / n_pos as f64, tp as f64 / predicted as f64]);
    }
    Ok(points)
}

/// Shared-edge histogram of ID and OOD scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

pub fn score_histogram(set: &ScoreSet, n_bins: usize) -> Result<Histogram> {
    if set.is_empty() || n_bins == 0 {
        return Err(Error::invalid("histogram needs scores and at least one bin"));
    }
    let lo = set.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = set.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|b| if b == n_bins { hi } else { lo + width * b as f64 })
        .collect();
    let mut id_counts = vec![0; n_bins];
    let mut ood_counts = vec![0; n_bins];
    for (&s, &t) in set.scores.iter().zip(&set.truth) {
        let b = (((s - lo) / width) as usize).min(n_bins - 1);
        match t {
            Truth::Id => id_counts[b] += 1,
            Truth::Ood => ood_counts[b] += 1,
        }
    }
    Ok(Histogram {
        edges,
        id_counts,
        ood_counts,
    })
}

/// Settings shared by every method in a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub tpr: f64,
    pub ece_bins: usize,
    pub aupr_positive: &'static str,
    pub histogram_bins: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            tpr: DEFAULT_TPR,
            ece_bins: DEFAULT_ECE_BINS,
            aupr_positive: "ID",
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub auroc: f64,
    /// AUPR with ID as positive class (the reported AUPR).
    pub aupr: f64,
    pub aupr_ood: f64,
    pub fpr95: f64,
    /// `None` when the method produces no probability.
    pub ece: Option<f64>,
    pub tau: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurves {
    pub roc: Vec<[f64; 2]>,
    pub pr: Vec<[f64; 2]>,
    pub histogram: Histogram,
}

/// Confidence/correctness pairs for ECE.
#[derive(Debug, Clone, Default)]
pub struct Calibration {
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
}

pub fn evaluate_method(
    set: &ScoreSet,
    calibration: Option<&Calibration>,
    settings: &MetricSettings,
) -> Result<MethodMetrics> {
    let ece = match calibration {
        Some(c) => Some(ece(&c.confidences, &c.correct, settings.ece_bins)?),
        None => None,
    };
    Ok(MethodMetrics {
        auroc: auroc(set)?,
        aupr: aupr(set, Truth::Id)?,
        aupr_ood: aupr(set, Truth::Ood)?,
        fpr95: fpr_at_tpr(set, settings.tpr)?,
        ece,
        tau: calibrate_tau(&set.id_scores(), settings.tpr)?.tau,
        n_id: set.n_id(),
        n_ood: set.n_ood(),
    })
}

pub fn method_curves(set: &ScoreSet, settings: &MetricSettings) -> Result<MethodCurves> {
    Ok(MethodCurves {
        roc: roc_curve(set)?,
        pr: pr_curve(set, Truth::Id)?,
        histogram: score_histogram(set, settings.histogram_bins)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub seed: u64,
    pub settings: MetricSettingsRecord,
    pub n_id: usize,
    pub n_ood: usize,
    /// Method id -> metrics, in table order.
    pub order: Vec<String>,
    pub methods: BTreeMap<String, MethodMetrics>,
    pub curves: BTreeMap<String, MethodCurves>,
}

/// Owned form of [`MetricSettings`] for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSettingsRecord {
    pub tpr: f64,
    pub ece_bins: usize,
    pub aupr_positive: String,
    pub histogram_bins: usize,
}

impl From<&MetricSettings> for MetricSettingsRecord {
    fn from(s: &MetricSettings) -> Self {
        Self {
            tpr: s.tpr,
            ece_bins: s.ece_bins,
            aupr_positive: s.aupr_positive.to_string(),
            histogram_bins: s.histogram_bins,
        }
    }
}

impl EvaluationReport {
    pub fn new(config_hash: impl Into<String>, seed: u64, settings: &MetricSettings) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            settings: settings.into(),
            n_id: 0,
            n_ood: 0,
            order: Vec::new(),
            methods: BTreeMap::new(),
            curves: BTreeMap::new(),
        }
    }

    /// Scores one method and adds it to the report.
    pub fn add(&mut self, set: &ScoreSet, calibration: Option<&Calibration>, settings: &MetricSettings) -> Result<()> {
        let m = evaluate_method(set, calibration, settings)?;
        self.n_id = m.n_id;
        self.n_ood = m.n_ood;
        self.curves.insert(set.method.clone(), method_curves(set, settings)?);
        self.methods.insert(set.method.clone(), m);
        if !self.order.contains(&set.method) {
            self.order.push(set.method.clone());
        }
        Ok(())
    }

    pub fn get(&self, method: &str) -> Option<&MethodMetrics> {
        self.methods.get(method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text table, one row per method, values in percent.
    pub fn render_table(&self, label: impl Fn(&str) -> String) -> String {
        let rows: Vec<(String, &MethodMetrics)> = self
            .order
            .iter()
            .filter_map(|m| self.methods.get(m).map(|v| (label(m), v)))
            .collect();
        render_rows("Method", &rows)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Formats `(row label, metrics)` pairs as an aligned table.
pub fn render_rows(first_column: &str, rows: &[(String, &MethodMetrics)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([first_column.len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{first_column:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
        "AUROC", "AUPR", "FPR95", "ECE"
    );
    for (label, m) in rows {
        let ece = m.ece.map(pct).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{label:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
            pct(m.auroc),
            pct(m.aupr),
            pct(m.fpr95),
            ece
        );
    }
    out
}
