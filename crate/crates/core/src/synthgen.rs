//! Synthetic stand-ins for detector output: Gaussian ID feature clusters,
//! displaced false-positive features and random box scenes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{FeatureDataset, FeatureRecord, Label, Split};
use crate::geometry::{Box3D, Detection, GroundTruth, Scene};
use crate::numerics::SeededRng;

/// Parameters of the synthetic feature distribution.
///
/// ID features of class `c` are `N(means[c], scales[c]² I)`. An FP feature
/// is an ID draw shifted along a fixed per-class unit direction by
/// `(1 - fp_overlap) * m * displacement * scales[c]`, where `m` is 1 for the
/// near component (probability `near_fraction`) and `far_factor` otherwise.
/// At `fp_overlap = 1` FP and ID features share one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub d: usize,
    pub k: usize,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub fp_overlap: f64,
    pub displacement: f64,
    pub near_fraction: f64,
    pub far_factor: f64,
    pub n_train_id: usize,
    pub n_train_fp: usize,
    pub n_val_id: usize,
    pub n_val_fp: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 2] = ["desk", "smoke"];

impl GeneratorSpec {
    /// Random class means `N(0, mean_spread² I)` with unit scales.
    pub fn with_random_means(d: usize, k: usize, mean_spread: f64, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed ^ 0x6d65_616e);
        let means = (0..k)
            .map(|_| {
                (0..d)
                    .map(|_| mean_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self {
            d,
            k,
            means,
            scales: vec![1.0; k],
            fp_overlap: 0.5,
            displacement: 10.0,
            near_fraction: 0.7,
            far_factor: 2.0,
            n_train_id: 600,
            n_train_fp: 200,
            n_val_id: 300,
            n_val_fp: 100,
            seed,
        }
    }

    /// D=64, K=3, 6000 ID / 2000 FP train, 2000 / 700 val.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_train_id: 6000,
            n_train_fp: 2000,
            n_val_id: 2000,
            n_val_fp: 700,
            ..Self::with_random_means(64, 3, 0.5, seed)
        }
    }

    /// D=16, K=3, 600 ID / 200 FP train, 300 / 100 val.
    pub fn smoke(seed: u64) -> Self {
        Self::with_random_means(16, 3, 1.0, seed)
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "smoke" => Ok(Self::smoke(seed)),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?} (expected one of {PRESETS:?})"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::invalid("D and K must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fp_overlap) {
            return Err(Error::invalid(format!("fp_overlap {} outside [0, 1]", self.fp_overlap)));
        }
        if !(0.0..=1.0).contains(&self.near_fraction) {
            return Err(Error::invalid(format!(
                "near_fraction {} outside [0, 1]",
                self.near_fraction
            )));
        }
        if !(self.displacement.is_finite()
            && self.displacement >= 0.0
            && self.far_factor.is_finite()
            && self.far_factor >= 0.0)
        {
            return Err(Error::invalid("displacement and far_factor must be finite and >= 0"));
        }
        if [self.n_train_id, self.n_train_fp, self.n_val_id, self.n_val_fp].contains(&0) {
            return Err(Error::invalid("all split counts must be positive"));
        }
        if self.n_train_id < self.k || self.n_val_id < self.k {
            return Err(Error::invalid("every class needs at least one ID feature per split"));
        }
        if self.means.len() != self.k || self.means.iter().any(|m| m.len() != self.d) {
            return Err(Error::invalid(format!(
                "means must be {} vectors of length {}",
                self.k, self.d
            )));
        }
        if self.scales.len() != self.k || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("scales must be K positive values"));
        }
        Ok(())
    }

    /// Unit FP displacement direction of each class.
    pub fn fp_directions(&self) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(self.seed ^ 0x6469_7273);
        (0..self.k)
            .map(|_| {
                let v: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect()
    }
}

fn draw_split(
    spec: &GeneratorSpec,
    dirs: &[Vec<f64>],
    n_id: usize,
    n_fp: usize,
    tag: &str,
    rng: &mut SeededRng,
) -> Vec<FeatureRecord> {
    let draw = |class: usize, label: Label, rng: &mut SeededRng| -> FeatureRecord {
        let scale = spec.scales[class];
        let shift = if label == Label::Fp {
            let m = if rng.random::<f64>() < spec.near_fraction {
                1.0
            } else {
                spec.far_factor
            };
            (1.0 - spec.fp_overlap) * m * spec.displacement * scale
        } else {
            0.0
        };
        let vector = (0..spec.d)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                // Rounded so binary feature files round-trip exactly.
                (spec.means[class][j] + scale * z + shift * dirs[class][j]) as f32 as f64
            })
            .collect();
        FeatureRecord {
            vector,
            class_id: class,
            label,
            source_id: String::new(),
        }
    };
    let mut out = Vec::with_capacity(n_id + n_fp);
    for i in 0..n_id {
        let rec = draw(i % spec.k, Label::Id, rng);
        out.push(rec);
    }
    for _ in 0..n_fp {
        let class = rng.random_range(0..spec.k);
        let rec = draw(class, Label::Fp, rng);
        out.push(rec);
    }
    out.shuffle(rng);
    for (i, r) in out.iter_mut().enumerate() {
        r.source_id = format!("{tag}-{i:06}");
    }
    out
}

/// Draws the train and validation splits.
pub fn generate_features(spec: &GeneratorSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    spec.validate()?;
    let dirs = spec.fp_directions();
    let mut rng = SeededRng::new(spec.seed);
    let train = draw_split(spec, &dirs, spec.n_train_id, spec.n_train_fp, "train", &mut rng);
    let val = draw_split(spec, &dirs, spec.n_val_id, spec.n_val_fp, "val", &mut rng);
    Ok((
        FeatureDataset::new(spec.d, spec.k, train, Split::Train)?,
        FeatureDataset::new(spec.d, spec.k, val, Split::Val)?,
    ))
}

/// A generated scene with the label each prediction was built to receive.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub intended: Vec<Label>,
}

const CLASS_SIZES: [[f64; 3]; 3] = [[4.5, 1.9, 1.6], [0.8, 0.8, 1.8], [1.8, 0.7, 1.7]];
const GRID_SPACING: f64 = 10.0;
const SPURIOUS_GAP: f64 = 30.0;

/// Random scenes of `boxes_per_scene` ground truths on a 10 m grid. Each
/// ground truth gets a prediction offset by up to `jitter` metres in x/y,
/// `jitter / 2` in z and `0.1 * jitter` radians in yaw. A quarter as many
/// spurious predictions (at least one) sit at least 30 m from every ground
/// truth.
pub fn generate_scenes(n_scenes: usize, boxes_per_scene: usize, jitter: f64, seed: u64) -> Result<Vec<GeneratedScene>> {
    if n_scenes == 0 || boxes_per_scene == 0 {
        return Err(Error::invalid("scene and box counts must be positive"));
    }
    if !(jitter.is_finite() && (0.0..1.0).contains(&jitter)) {
        return Err(Error::invalid(format!("jitter {jitter} outside [0, 1)")));
    }
    let mut rng = SeededRng::new(seed);
    let cols = (boxes_per_scene as f64).sqrt().ceil() as usize;
    let mut scenes = Vec::with_capacity(n_scenes);
    for _ in 0..n_scenes {
        let mut scene = Scene::default();
        let mut intended = Vec::new();
        for b in 0..boxes_per_scene {
            let class = rng.random_range(0..3);
            let base = CLASS_SIZES[class];
            let size = base.map(|s| s * rng.random_range(0.9..1.1));
            let center = [
                GRID_SPACING * (b % cols) as f64 + rng.random_range(-1.0..1.0),
                GRID_SPACING * (b / cols) as f64 + rng.random_range(-1.0..1.0),
                size[2] / 2.0,
            ];
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let gt = Box3D::new(center, size, yaw)?;
            scene.gts.push(GroundTruth {
                bbox: gt,
                class_id: class,
            });

            let mut j = || rng.random_range(-1.0..=1.0) * jitter;
            let offset = [j(), j(), j() / 2.0];
            let dyaw = 0.1 * j();
            let pred = Box3D::new(
                [center[0] + offset[0], center[1] + offset[1], center[2] + offset[2]],
                size,
                yaw + dyaw,
            )?;
            let conf = rng.random_range(0.3..1.0);
            scene.preds.push(Detection::new(pred, class, conf)?);
            intended.push(Label::Id);
        }
        for s in 0..(boxes_per_scene / 4).max(1) {
            let class = rng.random_range(0..3);
            let center = [
                -SPURIOUS_GAP - GRID_SPACING * s as f64,
                rng.random_range(-10.0..10.0),
                CLASS_SIZES[class][2] / 2.0,
            ];
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let conf = rng.random_range(0.05..0.9);
            scene.preds.push(Detection::new(
                Box3D::new(center, CLASS_SIZES[class], yaw)?,
                class,
                conf,
            )?);
            intended.push(Label::Fp);
        }
        scenes.push(GeneratedScene { scene, intended });
    }
    Ok(scenes)
}
