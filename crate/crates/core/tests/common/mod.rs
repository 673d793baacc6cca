//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod gradcheck;

use lsvos::geometry::Box3D;
use lsvos::numerics::{DenseNet, NetGrads, SeededRng};
use lsvos::scoring::{ScoreSet, Truth};
use rand::Rng;

pub fn auroc_pairs(set: &ScoreSet) -> f64 {
    let (id, ood) = (set.id_scores(), set.ood_scores());
    let mut wins = 0.0;
    for o in &ood {
        for i in &id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Step-interpolated precision/recall area, recomputing every threshold from scratch.
pub fn aupr_thresholds(set: &ScoreSet, positive: Truth) -> f64 {
    let mut ts = set.scores.clone();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if positive == Truth::Ood {
        ts.reverse();
    }
    let n_pos = set.truth.iter().filter(|&&t| t == positive).count() as f64;
    let (mut area, mut prev) = (0.0, 0.0);
    for t in ts {
        let accepted: Vec<Truth> = set
            .scores
            .iter()
            .zip(&set.truth)
            .filter(|(&s, _)| if positive == Truth::Id { s <= t } else { s >= t })
            .map(|(_, &y)| y)
            .collect();
        let tp = accepted.iter().filter(|&&y| y == positive).count() as f64;
        area += (tp / n_pos - prev) * tp / accepted.len() as f64;
        prev = tp / n_pos;
    }
    area
}

/// FPR at the smallest observed score admitting `tpr` of the ID items.
pub fn fpr_thresholds(set: &ScoreSet, tpr: f64) -> f64 {
    let (id, ood) = (set.id_scores(), set.ood_scores());
    let mut ts = set.scores.clone();
    ts.sort_by(f64::total_cmp);
    let tau = ts
        .into_iter()
        .find(|&t| id.iter().filter(|&&s| s <= t).count() as f64 >= tpr * id.len() as f64 - 1e-9)
        .expect("max score admits every ID item");
    ood.iter().filter(|&&s| s <= tau).count() as f64 / ood.len() as f64
}

/// Random score set with heavy ties and both classes present.
pub fn random_score_set(seed: u64, max_n: usize) -> ScoreSet {
    let mut rng = SeededRng::new(seed);
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(2..40);
    let shift = rng.random_range(0..10);
    let mut truth: Vec<Truth> = (0..n)
        .map(|_| if rng.random::<bool>() { Truth::Id } else { Truth::Ood })
        .collect();
    truth[0] = Truth::Id;
    truth[1] = Truth::Ood;
    let scores = truth
        .iter()
        .map(|t| (rng.random_range(0..levels) + if *t == Truth::Ood { shift } else { 0 }) as f64 * 0.25)
        .collect();
    ScoreSet::new("oracle", scores, truth).unwrap()
}

/// Monte-Carlo IoU: uniform points in the union's bounding box.
pub fn iou_monte_carlo(a: &Box3D, b: &Box3D, n: usize, rng: &mut SeededRng) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for bx in [a, b] {
        let r = bx.half_diagonal();
        let c = bx.center();
        let (z0, z1) = bx.z_range();
        for (axis, (l, h)) in [(c[0] - r, c[0] + r), (c[1] - r, c[1] + r), (z0, z1)]
            .into_iter()
            .enumerate()
        {
            lo[axis] = lo[axis].min(l);
            hi[axis] = hi[axis].max(h);
        }
    }
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n {
        let p = [0, 1, 2].map(|i| rng.random_range(lo[i]..hi[i]));
        let (ia, ib) = (a.contains(p), b.contains(p));
        both += usize::from(ia && ib);
        either += usize::from(ia || ib);
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Outcome of a finite-difference sweep over every parameter.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flips a ReLU, where the loss is not differentiable.
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences with step `h` for every parameter of `nets`.
///
/// `loss` evaluates the objective; `pattern` returns the ReLU on/off
/// pattern so that perturbations crossing a kink are skipped.
pub fn finite_difference_check(
    nets: &[DenseNet],
    analytic: &[NetGrads],
    h: f64,
    loss: impl Fn(&[DenseNet]) -> f64,
    pattern: impl Fn(&[DenseNet]) -> Vec<bool>,
) -> GradCheck {
    let base_pattern = pattern(nets);
    let mut out = GradCheck::default();
    for (ni, grads) in analytic.iter().enumerate() {
        let flat: Vec<Vec<f64>> = grads.slices().into_iter().map(<[f64]>::to_vec).collect();
        for (gi, group) in flat.iter().enumerate() {
            for (pi, &a) in group.iter().enumerate() {
                let mut plus = nets.to_vec();
                let mut minus = nets.to_vec();
                plus[ni].param_slices_mut()[gi][pi] += h;
                minus[ni].param_slices_mut()[gi][pi] -= h;
                if pattern(&plus) != base_pattern || pattern(&minus) != base_pattern {
                    out.skipped += 1;
                    continue;
                }
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                out.max_rel_error = out.max_rel_error.max(rel_error(a, numeric));
                out.checked += 1;
            }
        }
    }
    out
}

/// Positive/non-positive pattern of every hidden activation of `net` on `x`.
pub fn relu_pattern(net: &DenseNet, x: ndarray::ArrayView2<f64>) -> (Vec<bool>, ndarray::Array2<f64>) {
    let mut pattern = Vec::new();
    let mut a = x.to_owned();
    let n = net.layers().len();
    for (i, layer) in net.layers().iter().enumerate() {
        let z = a.dot(layer.weights()) + layer.bias();
        if i + 1 < n {
            pattern.extend(z.iter().map(|&v| v > 0.0));
        }
        a = match layer.activation() {
            lsvos::numerics::Activation::Relu => z.mapv(|v| v.max(0.0)),
            lsvos::numerics::Activation::Identity => z,
        };
    }
    (pattern, a)
}
