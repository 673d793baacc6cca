//! Virtual outlier generators.
//!
//! Every generator takes an explicit seed and records it in the returned
//! [`SynthBatch`], so a batch can be regenerated from its provenance alone.
//! Output rows are always `D` wide (no one-hot suffix).

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{augment_matrix, FeatureQueue, FeatureRecord, Label};
use crate::models::AutoEncoder;
use crate::numerics::{SeededRng, SharedGaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SynthMethod {
    LsVos,
    Vos,
    LinearMix,
    RandomNoise,
    NoisyId,
}

impl SynthMethod {
    pub const ALL: [SynthMethod; 5] = [
        SynthMethod::LsVos,
        SynthMethod::Vos,
        SynthMethod::LinearMix,
        SynthMethod::RandomNoise,
        SynthMethod::NoisyId,
    ];

    /// Identifier used in configs and file names.
    pub fn id(self) -> &'static str {
        match self {
            SynthMethod::LsVos => "lsvos",
            SynthMethod::Vos => "vos",
            SynthMethod::LinearMix => "linear_mix",
            SynthMethod::RandomNoise => "random_noise",
            SynthMethod::NoisyId => "noisy_id",
        }
    }

    /// Human-readable name for tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SynthMethod::LsVos => "LS-VOS",
            SynthMethod::Vos => "VOS",
            SynthMethod::LinearMix => "LinearMix",
            SynthMethod::RandomNoise => "Random noise",
            SynthMethod::NoisyId => "Noisy ID features",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown synthesis method {s:?}")))
    }
}

impl fmt::Display for SynthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Latent noise parameters: `o = β · (α + U(0, 1))` per latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    alpha: f64,
    beta: f64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::invalid(format!(
                "noise alpha/beta must be finite and >= 0, got {alpha}/{beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { alpha: 0.25, beta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Noise(NoiseSpec),
    Vos {
        n_per_class: usize,
        n_candidates: usize,
        regularization: f64,
    },
    Mix {
        weight: f64,
    },
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBatch {
    pub vectors: Array2<f64>,
    pub method: SynthMethod,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Draws an `(m, latent_dim)` noise matrix `β · (α + U(0, 1))`.
pub fn sample_latent_noise<R: Rng + ?Sized>(m: usize, latent_dim: usize, spec: NoiseSpec, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, latent_dim), || spec.beta * (spec.alpha + rng.random::<f64>()))
}

/// Encoded ID features and the latent noise that LS-VOS adds to them.
#[derive(Debug, Clone)]
pub struct LatentPerturbation {
    pub latent: Array2<f64>,
    pub noise: Array2<f64>,
}

impl LatentPerturbation {
    pub fn perturbed(&self) -> Array2<f64> {
        &self.latent + &self.noise
    }
}

fn check_id_rows(u_id: ArrayView2<f64>, classes: &[usize]) -> Result<()> {
    if u_id.nrows() == 0 {
        return Err(Error::invalid("no ID features to synthesize from"));
    }
    if classes.len() != u_id.nrows() {
        return Err(Error::invalid(format!(
            "{} classes for {} rows",
            classes.len(),
            u_id.nrows()
        )));
    }
    Ok(())
}

/// Encodes class-augmented ID features and samples the latent noise.
pub fn lsvos_perturb(
    ae: &AutoEncoder,
    u_id: ArrayView2<f64>,
    classes: &[usize],
    spec: NoiseSpec,
    seed: u64,
) -> Result<LatentPerturbation> {
    if !ae.is_trained() {
        return Err(Error::NotReady("auto-encoder has not been trained".into()));
    }
    check_id_rows(u_id, classes)?;
    if u_id.ncols() != ae.feature_dim() {
        return Err(Error::invalid(format!(
            "ID features have {} columns, D = {}",
            u_id.ncols(),
            ae.feature_dim()
        )));
    }
    let augmented = augment_matrix(&u_id.to_owned(), classes, ae.n_classes())?;
    let latent = ae.encode(augmented.view())?;
    let mut rng = SeededRng::new(seed);
    let noise = sample_latent_noise(latent.nrows(), latent.ncols(), spec, &mut rng);
    Ok(LatentPerturbation { latent, noise })
}

/// Virtual outliers `d(e([u, one_hot]) + o)`.
pub fn lsvos_synthesize(
    ae: &AutoEncoder,
    u_id: ArrayView2<f64>,
    classes: &[usize],
    spec: NoiseSpec,
    seed: u64,
) -> Result<SynthBatch> {
    let p = lsvos_perturb(ae, u_id, classes, spec, seed)?;
    let vectors = ae.decode(p.perturbed().view())?;
    Ok(SynthBatch {
        vectors,
        method: SynthMethod::LsVos,
        provenance: Provenance::Noise(spec),
        seed,
    })
}

/// Candidates drawn from one class Gaussian, split into kept and discarded.
#[derive(Debug, Clone)]
pub struct VosSelection {
    pub kept: Array2<f64>,
    pub kept_log_likelihood: Vec<f64>,
    pub discarded_log_likelihood: Vec<f64>,
}

/// Draws `n_candidates` from the Gaussian of `class` and keeps the `n_keep`
/// with the lowest log-likelihood.
pub fn vos_select<R: Rng + ?Sized>(
    gaussian: &SharedGaussian,
    class: usize,
    n_keep: usize,
    n_candidates: usize,
    rng: &mut R,
) -> Result<VosSelection> {
    if n_keep == 0 || n_keep > n_candidates {
        return Err(Error::invalid(format!(
            "cannot keep {n_keep} of {n_candidates} candidates"
        )));
    }
    let candidates = gaussian.sample(class, n_candidates, rng);
    let ll = gaussian.log_likelihood(class, candidates.view())?;
    let mut order: Vec<usize> = (0..n_candidates).collect();
    order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]));
    let kept = candidates.select(ndarray::Axis(0), &order[..n_keep]);
    Ok(VosSelection {
        kept,
        kept_log_likelihood: order[..n_keep].iter().map(|&i| ll[i]).collect(),
        discarded_log_likelihood: order[n_keep..].iter().map(|&i| ll[i]).collect(),
    })
}

/// Low-likelihood samples from class-conditional Gaussians fit to the queue
/// (per-class means, shared covariance). Rows are grouped by class.
pub fn vos_synthesize(queue: &FeatureQueue, n_per_class: usize, n_candidates: usize, seed: u64) -> Result<SynthBatch> {
    if !queue.is_ready() {
        return Err(Error::NotReady(
            "every queue class needs features before VOS can fit".into(),
        ));
    }
    let (features, classes) = queue.contents();
    let gaussian = SharedGaussian::fit(features.view(), &classes, queue.n_classes())?;
    let mut rng = SeededRng::new(seed);
    let mut parts = Vec::with_capacity(queue.n_classes());
    for c in 0..queue.n_classes() {
        parts.push(vos_select(&gaussian, c, n_per_class, n_candidates, &mut rng)?.kept);
    }
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
    let vectors = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(SynthBatch {
        vectors,
        method: SynthMethod::Vos,
        provenance: Provenance::Vos {
            n_per_class,
            n_candidates,
            regularization: gaussian.regularization(),
        },
        seed,
    })
}

/// Rows `w · u_id[i] + (1 - w) · u_fp[j]`, `i` sequential and `j` uniform.
pub fn linear_mix(u_id: ArrayView2<f64>, u_fp: ArrayView2<f64>, weight: f64, seed: u64) -> Result<SynthBatch> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::invalid(format!("mix weight {weight} outside [0, 1]")));
    }
    if u_id.nrows() == 0 {
        return Err(Error::invalid("no ID features to mix"));
    }
    if u_fp.nrows() == 0 {
        return Err(Error::NotReady("LinearMix needs FP features".into()));
    }
    if u_id.ncols() != u_fp.ncols() {
        return Err(Error::invalid("ID and FP features must have the same width"));
    }
    let mut rng = SeededRng::new(seed);
    let mut vectors = Array2::zeros(u_id.raw_dim());
    for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
        let j = rng.random_range(0..u_fp.nrows());
        for ((o, &a), &b) in row.iter_mut().zip(u_id.row(i)).zip(u_fp.row(j)) {
            *o = weight * a + (1.0 - weight) * b;
        }
    }
    Ok(SynthBatch {
        vectors,
        method: SynthMethod::LinearMix,
        provenance: Provenance::Mix { weight },
        seed,
    })
}

/// An `(m, d)` matrix of standard-normal draws.
pub fn random_noise(m: usize, d: usize, seed: u64) -> Result<SynthBatch> {
    if m == 0 || d == 0 {
        return Err(Error::invalid("random noise needs positive dimensions"));
    }
    let mut rng = SeededRng::new(seed);
    let vectors = Array2::from_shape_simple_fn((m, d), || rng.sample(StandardNormal));
    Ok(SynthBatch {
        vectors,
        method: SynthMethod::RandomNoise,
        provenance: Provenance::Plain,
        seed,
    })
}

/// ID features plus element-wise `U(0, 1)` noise.
pub fn noisy_id(u_id: ArrayView2<f64>, seed: u64) -> Result<SynthBatch> {
    if u_id.nrows() == 0 {
        return Err(Error::invalid("no ID features to perturb"));
    }
    let mut rng = SeededRng::new(seed);
    let vectors = u_id.mapv(|v| v + rng.random::<f64>());
    Ok(SynthBatch {
        vectors,
        method: SynthMethod::NoisyId,
        provenance: Provenance::Plain,
        seed,
    })
}

/// Feature records labelled `SYNTH_OUTLIER`, ready for the feature-file writers.
pub fn synth_records(batch: &SynthBatch, classes: &[usize]) -> Result<Vec<FeatureRecord>> {
    if classes.len() != batch.vectors.nrows() {
        return Err(Error::invalid(format!(
            "{} classes for {} rows",
            classes.len(),
            batch.vectors.nrows()
        )));
    }
    Ok(batch
        .vectors
        .rows()
        .into_iter()
        .zip(classes)
        .enumerate()
        .map(|(i, (row, &class_id))| FeatureRecord {
            vector: row.to_vec(),
            class_id,
            label: Label::SynthOutlier,
            source_id: format!("{}-{}-{i}", batch.method.id(), batch.seed),
        })
        .collect())
}
