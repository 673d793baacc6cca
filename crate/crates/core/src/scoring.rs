//! Outlier scores, τ calibration and the ID/OOD decision rule.
//!
//! All scores follow one orientation: higher means more anomalous. An item
//! is accepted as ID iff `score <= tau`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::features::csv_err;
use crate::models::{default_score, SurrogateClassifier, UncertaintyHead};
use crate::numerics::SharedGaussian;

pub const ORIENTATION_HIGHER_IS_OOD: &str = "higher = more anomalous";
pub const ORIENTATION_NEGATED_CONFIDENCE: &str = "higher = more anomalous (negated max-softmax)";

pub const METHOD_DEFAULT: &str = "default_score";
pub const METHOD_MAHALANOBIS: &str = "mahalanobis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Truth {
    Id,
    Ood,
}

impl Truth {
    pub fn as_str(self) -> &'static str {
        match self {
            Truth::Id => "ID",
            Truth::Ood => "OOD",
        }
    }
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Truth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ID" => Ok(Truth::Id),
            "OOD" => Ok(Truth::Ood),
            other => Err(Error::invalid(format!("unknown truth label {other:?}"))),
        }
    }
}

/// Per-item scores of one method together with the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub method: String,
    pub scores: Vec<f64>,
    pub truth: Vec<Truth>,
    pub orientation: String,
}

impl ScoreSet {
    pub fn new(method: impl Into<String>, scores: Vec<f64>, truth: Vec<Truth>) -> Result<Self> {
        Self::with_orientation(method, scores, truth, ORIENTATION_HIGHER_IS_OOD)
    }

    pub fn with_orientation(
        method: impl Into<String>,
        scores: Vec<f64>,
        truth: Vec<Truth>,
        orientation: impl Into<String>,
    ) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} truth labels",
                scores.len(),
                truth.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("score {i} is not finite")));
        }
        Ok(Self {
            method: method.into(),
            scores,
            truth,
            orientation: orientation.into(),
        })
    }

    /// Builds a set from separate ID and OOD score lists (ID first).
    pub fn from_split(method: impl Into<String>, id: &[f64], ood: &[f64]) -> Result<Self> {
        let scores = id.iter().chain(ood).copied().collect();
        let truth = std::iter::repeat_n(Truth::Id, id.len())
            .chain(std::iter::repeat_n(Truth::Ood, ood.len()))
            .collect();
        Self::new(method, scores, truth)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn scores_of(&self, which: Truth) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.truth)
            .filter(|(_, &t)| t == which)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn id_scores(&self) -> Vec<f64> {
        self.scores_of(Truth::Id)
    }

    pub fn ood_scores(&self) -> Vec<f64> {
        self.scores_of(Truth::Ood)
    }

    pub fn n_id(&self) -> usize {
        self.truth.iter().filter(|&&t| t == Truth::Id).count()
    }

    pub fn n_ood(&self) -> usize {
        self.len() - self.n_id()
    }
}

/// A calibrated acceptance threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub target_tpr: f64,
    pub n: usize,
}

/// Smallest observed score whose inclusive empirical CDF over `id_scores`
/// reaches `target_tpr`.
pub fn calibrate_tau(id_scores: &[f64], target_tpr: f64) -> Result<Threshold> {
    if id_scores.is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty ID score set"));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::invalid(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    if id_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("ID scores must be finite"));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let needed = ((target_tpr * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(Threshold {
        tau: sorted[needed - 1],
        target_tpr,
        n,
    })
}

/// Fraction of `scores` accepted as ID under `tau`.
pub fn acceptance_rate(scores: &[f64], tau: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s <= tau).count() as f64 / scores.len() as f64
}

/// ID iff `score <= tau`.
pub fn classify(scores: &[f64], threshold: &Threshold) -> Vec<Truth> {
    scores
        .iter()
        .map(|&s| if s <= threshold.tau { Truth::Id } else { Truth::Ood })
        .collect()
}

/// Minimum squared Mahalanobis distance to the class means under a shared
/// covariance fit on ID training features.
#[derive(Debug, Clone)]
pub struct MahalanobisScorer {
    gaussian: SharedGaussian,
}

impl MahalanobisScorer {
    pub fn fit(features: ArrayView2<f64>, classes: &[usize], k: usize) -> Result<Self> {
        Ok(Self {
            gaussian: SharedGaussian::fit(features, classes, k)?,
        })
    }

    pub fn from_gaussian(gaussian: SharedGaussian) -> Self {
        Self { gaussian }
    }

    pub fn gaussian(&self) -> &SharedGaussian {
        &self.gaussian
    }

    pub fn score(&self, query: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut best = Array1::from_elem(query.nrows(), f64::INFINITY);
        for c in 0..self.gaussian.n_classes() {
            let d = self.gaussian.mahalanobis_sq(c, query)?;
            best.zip_mut_with(&d, |b, &v| *b = b.min(v));
        }
        Ok(best)
    }
}

/// Raw uncertainty-head outputs.
pub fn uncertainty_scores(head: &UncertaintyHead, u: ArrayView2<f64>) -> Result<Array1<f64>> {
    head.score(u)
}

/// Max-softmax confidence, negated so that higher is more anomalous.
pub fn negated_default_scores(clf: &SurrogateClassifier, u: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(default_score(clf, u)?.mapv(|c| -c))
}

pub const SCORE_HEADER: [&str; 4] = ["item_id", "method", "score", "truth"];

/// Writes `item_id,method,score,truth` rows for every set.
pub fn write_score_csv<W: Write>(w: W, sets: &[ScoreSet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SCORE_HEADER).map_err(csv_err)?;
    for set in sets {
        for (i, (s, t)) in set.scores.iter().zip(&set.truth).enumerate() {
            out.write_record([i.to_string(), set.method.clone(), s.to_string(), t.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a score dump back into one set per method, in first-seen order.
pub fn read_score_csv<R: Read>(r: R) -> Result<Vec<ScoreSet>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != SCORE_HEADER {
        return Err(Error::format("score csv", format!("unexpected header {headers:?}")));
    }
    let mut sets: Vec<ScoreSet> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let method = &row[1];
        let score: f64 = row[2]
            .parse()
            .map_err(|_| Error::format("score csv", format!("row {line}: bad score {:?}", &row[2])))?;
        let truth: Truth = row[3].parse()?;
        match sets.iter_mut().find(|s| s.method == method) {
            Some(set) => {
                set.scores.push(score);
                set.truth.push(truth);
            }
            None => sets.push(ScoreSet::new(method, vec![score], vec![truth])?),
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::numerics::SeededRng;

    #[test]
    fn tau_on_one_to_hundred() {
        let ids: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate_tau(&ids, 0.95).unwrap();
        assert_eq!(t.tau, 95.0);
        assert_eq!(acceptance_rate(&ids, t.tau), 0.95);
        assert_eq!(calibrate_tau(&ids, 1.0).unwrap().tau, 100.0);
    }

    #[test]
    fn tau_degenerate_and_empty() {
        let t = calibrate_tau(&[3.5; 40], 0.95).unwrap();
        assert_eq!(t.tau, 3.5);
        assert_eq!(acceptance_rate(&[3.5; 40], t.tau), 1.0);
        assert!(calibrate_tau(&[], 0.95).is_err());
        assert!(calibrate_tau(&[1.0], 0.0).is_err());
    }

    #[test]
    fn classify_boundary_is_inclusive() {
        let t = Threshold {
            tau: 2.0,
            target_tpr: 0.95,
            n: 1,
        };
        let eps = 2.0_f64.next_up();
        assert_eq!(classify(&[2.0, eps, 1.0], &t), vec![Truth::Id, Truth::Ood, Truth::Id]);
    }

    proptest! {
        #[test]
        fn achieved_tpr_in_range(seed in 0u64..10_000, n in 100usize..400) {
            let mut rng = SeededRng::new(seed);
            let ids: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let t = calibrate_tau(&ids, 0.95).unwrap();
            let rate = acceptance_rate(&ids, t.tau);
            prop_assert!(rate >= 0.95 && rate <= 0.95 + 1.0 / n as f64 + 1e-12);
        }

        #[test]
        fn tied_scores_still_meet_target(ids in prop::collection::vec(0u8..6, 1..200), target in 0.01f64..=1.0) {
            let ids: Vec<f64> = ids.into_iter().map(f64::from).collect();
            let t = calibrate_tau(&ids, target).unwrap();
            prop_assert!(acceptance_rate(&ids, t.tau) >= target - 1e-12);
            prop_assert!(ids.contains(&t.tau));
        }

        #[test]
        fn decision_invariant_under_monotone_map(seed in 0u64..10_000) {
            let mut rng = SeededRng::new(seed);
            let ids: Vec<f64> = (0..120).map(|_| rng.random::<f64>()).collect();
            let query: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 1.2).collect();
            let t = calibrate_tau(&ids, 0.95).unwrap();
            let f = |x: f64| (3.0 * x).exp() + x;
            let mapped = Threshold { tau: f(t.tau), ..t };
            let q2: Vec<f64> = query.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(classify(&query, &t), classify(&q2, &mapped));
        }
    }

    #[test]
    fn mahalanobis_reductions() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let classes = [0, 0, 0, 0];
        let scorer = MahalanobisScorer::fit(x.view(), &classes, 1).unwrap();
        // Covariance is diag(0.5, 0.5), so distance r maps to 2r².
        let q = array![[0.0, 0.0], [3.0, 4.0]];
        let s = scorer.score(q.view()).unwrap();
        assert!(s[0].abs() < 1e-12);
        assert!((s[1] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_takes_minimum_over_classes() {
        let mut rng = SeededRng::new(5);
        let x = Array2::from_shape_fn((400, 3), |(i, _)| {
            (i % 2) as f64 * 10.0 + rng.sample::<f64, _>(StandardNormal)
        });
        let classes: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let scorer = MahalanobisScorer::fit(x.view(), &classes, 2).unwrap();
        let q = array![[10.0, 10.0, 10.0], [0.0, 0.0, 0.0]];
        let s = scorer.score(q.view()).unwrap();
        let g = scorer.gaussian();
        for i in 0..2 {
            let a = g.mahalanobis_sq(0, q.slice(ndarray::s![i..i + 1, ..])).unwrap()[0];
            let b = g.mahalanobis_sq(1, q.slice(ndarray::s![i..i + 1, ..])).unwrap()[0];
            assert_eq!(s[i], a.min(b));
        }
        assert!(s[0] < 1.0 && s[1] < 1.0);
    }

    #[test]
    fn mahalanobis_affine_invariance() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let n = 200;
            let d = 4;
            let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
            let classes: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let q = Array2::from_shape_fn((30, d), |_| 2.0 * rng.sample::<f64, _>(StandardNormal));
            // Diagonally dominant matrices are invertible.
            let mut a = Array2::from_shape_fn((d, d), |_| rng.random::<f64>() - 0.5);
            for i in 0..d {
                a[[i, i]] += 3.0;
            }
            let b = Array1::from_shape_fn(d, |_| rng.random::<f64>() * 10.0);
            let tx = x.dot(&a.t()) + &b;
            let tq = q.dot(&a.t()) + &b;
            let s1 = MahalanobisScorer::fit(x.view(), &classes, 3)
                .unwrap()
                .score(q.view())
                .unwrap();
            let s2 = MahalanobisScorer::fit(tx.view(), &classes, 3)
                .unwrap()
                .score(tq.view())
                .unwrap();
            for (u, v) in s1.iter().zip(&s2) {
                assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "seed {seed}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn score_set_validation() {
        assert!(ScoreSet::new("m", vec![1.0], vec![]).is_err());
        assert!(ScoreSet::new("m", vec![f64::NAN], vec![Truth::Id]).is_err());
        let s = ScoreSet::from_split("m", &[0.1, 0.4], &[0.3]).unwrap();
        assert_eq!((s.n_id(), s.n_ood()), (2, 1));
        assert_eq!(s.ood_scores(), vec![0.3]);
    }

    #[test]
    fn score_csv_round_trip() {
        let a = ScoreSet::from_split("lsvos", &[0.1, -2.5e-7], &[1.0 / 3.0]).unwrap();
        let b = ScoreSet::from_split(METHOD_MAHALANOBIS, &[4.0], &[]).unwrap();
        let mut buf = Vec::new();
        write_score_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("item_id,method,score,truth\n0,lsvos,0.1,ID\n"));
        assert_eq!(read_score_csv(buf.as_slice()).unwrap(), vec![a, b]);
    }
}
