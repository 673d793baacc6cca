//! Two-phase training and held-out evaluation.
//!
//! Detector features are frozen, so training replays them: every step takes
//! one ID minibatch, pushes it to the queue, updates the surrogate classifier
//! (the `L_det` term) and the auto-encoder on a queue sample, and in phase 2
//! updates the uncertainty head on `u_ID` against `[v, u_FP]`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use log::{debug, info};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::{read_vosf, FeatureDataset, FeatureQueue, Label, Split};
use crate::metrics::{Calibration, EvaluationReport, MetricSettings};
use crate::models::{default_score, ModelBundle};
use crate::numerics::{adam_step, sigmoid, AdamConfig, AdamState, Pca2, SeededRng};
use crate::scoring::{negated_default_scores, MahalanobisScorer, ScoreSet, Truth, METHOD_DEFAULT, METHOD_MAHALANOBIS};
use crate::synthesis::{linear_mix, lsvos_synthesize, noisy_id, random_noise, vos_synthesize, SynthMethod};
use crate::synthgen::{generate_features, GeneratorSpec, PRESETS};

use super::config::{ExperimentConfig, METHOD_UNCERTAINTY};

/// Train and validation splits of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: FeatureDataset,
    pub val: FeatureDataset,
}

/// Generator spec for a preset dataset with the config's data overrides.
pub fn generator_spec(cfg: &ExperimentConfig) -> Result<GeneratorSpec> {
    let mut spec = GeneratorSpec::preset(&cfg.dataset, cfg.effective_data_seed())?;
    spec.fp_overlap = cfg.fp_overlap;
    spec.displacement = cfg.displacement;
    spec.validate()?;
    Ok(spec)
}

/// Generates a preset dataset or reads `train.vosf` / `val.vosf` from the
/// `dataset` directory.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    if PRESETS.contains(&cfg.dataset.as_str()) {
        let (train, val) = generate_features(&generator_spec(cfg)?)?;
        return Ok(ExperimentData { train, val });
    }
    let dir = Path::new(&cfg.dataset);
    if !dir.is_dir() {
        return Err(Error::Config {
            message: format!("{:?} is neither a preset ({PRESETS:?}) nor a directory", cfg.dataset),
            keys: vec!["dataset".into()],
        });
    }
    let read =
        |name: &str, split| -> Result<FeatureDataset> { read_vosf(BufReader::new(File::open(dir.join(name))?), split) };
    let train = read("train.vosf", Split::Train)?;
    let val = read("val.vosf", Split::Val)?;
    if (train.d, train.k) != (val.d, val.k) {
        return Err(Error::invalid("train and val feature files disagree on D or K"));
    }
    Ok(ExperimentData { train, val })
}

/// Mean losses of one epoch; `None` where the term never ran.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub phase: u8,
    pub epoch: usize,
    pub steps: usize,
    pub det_loss: f64,
    pub ae_loss: Option<f64>,
    pub unc_loss: Option<f64>,
    pub total_loss: f64,
}

/// 2-D PCA coordinates of validation and synthesized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(kind, class_id, pc1, pc2)` with kind `ID`, `FP` or `SYNTH_OUTLIER`.
    pub points: Vec<(Label, usize, f64, f64)>,
    pub explained_variance: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvaluationReport,
    pub bundle: ModelBundle,
    pub history: Vec<EpochLog>,
    pub score_sets: Vec<ScoreSet>,
    pub projection: Option<Projection>,
    /// Total queue occupancy after every step.
    pub queue_occupancy: Vec<usize>,
}

/// Seed streams of one run, derived in a fixed order from the config seed.
struct Streams {
    init: SeededRng,
    shuffle: SeededRng,
    queue: SeededRng,
    synth: SeededRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut master = SeededRng::new(seed);
        Self {
            init: master.fork(),
            shuffle: master.fork(),
            queue: master.fork(),
            synth: master.fork(),
        }
    }
}

/// Freshly initialized models for `cfg` on data of width `d` with `k` classes.
pub fn initial_bundle(cfg: &ExperimentConfig, d: usize, k: usize) -> Result<ModelBundle> {
    ModelBundle::new(d, k, &cfg.dims, &mut Streams::new(cfg.seed).init)
}

struct Optimizers {
    encoder: AdamState,
    decoder: AdamState,
    head: AdamState,
    classifier: AdamState,
}

impl Optimizers {
    fn new(bundle: &ModelBundle, lr: f64) -> Result<Self> {
        let c = AdamConfig::with_learning_rate(lr);
        Ok(Self {
            encoder: AdamState::for_net(c, bundle.ae.encoder())?,
            decoder: AdamState::for_net(c, bundle.ae.decoder())?,
            head: AdamState::for_net(c, bundle.head.net())?,
            classifier: AdamState::for_net(c, bundle.classifier.net())?,
        })
    }
}

fn phase_name(phase: u8) -> String {
    format!("phase {phase}")
}

/// Converts numerical failures and non-finite losses into a divergence error.
fn guard<T>(r: Result<T>, phase: u8, step: usize, term: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::NumericalFailure { layer, stage } => Error::Divergence {
            phase: phase_name(phase),
            step,
            detail: format!("{term}: non-finite values in layer {layer} ({stage})"),
        },
        other => other,
    })
}

fn finite(loss: f64, phase: u8, step: usize, term: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence {
            phase: phase_name(phase),
            step,
            detail: format!("{term} loss is {loss}"),
        })
    }
}

fn stack(parts: &[ArrayView2<f64>], d: usize) -> Result<Array2<f64>> {
    let parts: Vec<ArrayView2<f64>> = parts.iter().copied().filter(|p| p.nrows() > 0).collect();
    if parts.is_empty() {
        return Ok(Array2::zeros((0, d)));
    }
    concatenate(Axis(0), &parts).map_err(|e| Error::invalid(e.to_string()))
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    bundle: ModelBundle,
    opt: Optimizers,
    queue: FeatureQueue,
    streams: Streams,
    id_x: Array2<f64>,
    id_c: Vec<usize>,
    fp_x: Array2<f64>,
    step: usize,
    occupancy: Vec<usize>,
}

impl Trainer<'_> {
    /// Virtual outliers for the current ID batch, or `None` when the method
    /// cannot run yet.
    fn synthesize(&mut self, u: ArrayView2<f64>, c: &[usize]) -> Result<Option<Array2<f64>>> {
        let Some(method) = self.cfg.synth_method else {
            return Ok(None);
        };
        let seed = self.streams.synth.next_seed();
        let k = self.bundle.ae.n_classes();
        let batch = match method {
            SynthMethod::LsVos => {
                if !self.bundle.ae.is_trained() {
                    debug!("step {}: auto-encoder untrained, no LS-VOS outliers", self.step);
                    return Ok(None);
                }
                lsvos_synthesize(&self.bundle.ae, u, c, self.cfg.noise, seed)?
            }
            SynthMethod::Vos => {
                if !self.queue.is_ready() {
                    return Ok(None);
                }
                vos_synthesize(
                    &self.queue,
                    u.nrows().div_ceil(k),
                    self.cfg.vos_candidates.max(u.nrows()),
                    seed,
                )?
            }
            SynthMethod::LinearMix => {
                if self.fp_x.nrows() == 0 {
                    return Ok(None);
                }
                linear_mix(u, self.fp_x.view(), self.cfg.mix_weight, seed)?
            }
            SynthMethod::RandomNoise => random_noise(u.nrows(), u.ncols(), seed)?,
            SynthMethod::NoisyId => noisy_id(u, seed)?,
        };
        Ok(Some(batch.vectors))
    }

    fn run_phase(&mut self, phase: u8, epochs: usize, lambda: f64, history: &mut Vec<EpochLog>) -> Result<()> {
        let n_id = self.id_x.nrows();
        let b = self.cfg.batch_size.min(n_id);
        let steps = n_id.div_ceil(b);
        let n_fp = self.fp_x.nrows();
        let fp_per_step = n_fp.div_ceil(steps);
        let d = self.id_x.ncols();

        for epoch in 0..epochs {
            let mut id_order: Vec<usize> = (0..n_id).collect();
            id_order.shuffle(&mut self.streams.shuffle);
            let mut fp_order: Vec<usize> = (0..n_fp).collect();
            fp_order.shuffle(&mut self.streams.shuffle);

            let (mut det_sum, mut ae_sum, mut unc_sum, mut tot_sum) = (0.0, 0.0, 0.0, 0.0);
            let (mut ae_n, mut unc_n) = (0usize, 0usize);
            for s in 0..steps {
                self.step += 1;
                let step = self.step;
                let rows = &id_order[s * b..((s + 1) * b).min(n_id)];
                let u = self.id_x.select(Axis(0), rows);
                let c: Vec<usize> = rows.iter().map(|&i| self.id_c[i]).collect();

                for (row, &class) in u.rows().into_iter().zip(&c) {
                    self.queue
                        .push_vector(row.as_slice().expect("standard layout"), class)?;
                }
                self.occupancy.push(self.queue.total_len());

                let (det, g) = guard(
                    self.bundle.classifier.loss_and_grads(u.view(), &c),
                    phase,
                    step,
                    "classifier",
                )?;
                finite(det, phase, step, "classifier")?;
                adam_step(self.bundle.classifier.net_mut(), &g, &mut self.opt.classifier)?;
                self.bundle.classifier.record_update();

                let mut ae_loss = 0.0;
                if self.queue.is_ready() {
                    let x = self.queue.sample(self.cfg.n_per_class, &mut self.streams.queue)?;
                    let (l, grads) = guard(self.bundle.ae.loss_and_grads(x.view()), phase, step, "auto-encoder")?;
                    ae_loss = finite(l, phase, step, "auto-encoder")?;
                    let (enc, dec) = self.bundle.ae.nets_mut();
                    adam_step(enc, &grads.encoder, &mut self.opt.encoder)?;
                    adam_step(dec, &grads.decoder, &mut self.opt.decoder)?;
                    self.bundle.ae.record_update();
                    ae_sum += ae_loss;
                    ae_n += 1;
                }

                let mut unc_loss = 0.0;
                if lambda > 0.0 {
                    let v = guard(self.synthesize(u.view(), &c), phase, step, "synthesis")?;
                    let fp_rows: Vec<usize> = (0..fp_per_step.min(n_fp))
                        .map(|j| fp_order[(s * fp_per_step + j) % n_fp])
                        .collect();
                    let fp = self.fp_x.select(Axis(0), &fp_rows);
                    let u_ood = match &v {
                        Some(v) => stack(&[v.view(), fp.view()], d)?,
                        None => fp,
                    };
                    let (l, mut g) = guard(
                        self.bundle
                            .head
                            .loss_and_grads(u.view(), u_ood.view(), self.cfg.uncertainty_loss),
                        phase,
                        step,
                        "uncertainty head",
                    )?;
                    unc_loss = finite(l, phase, step, "uncertainty head")?;
                    g.scale(lambda);
                    adam_step(self.bundle.head.net_mut(), &g, &mut self.opt.head)?;
                    self.bundle.head.record_update();
                    unc_sum += unc_loss;
                    unc_n += 1;
                }

                det_sum += det;
                tot_sum += finite(
                    crate::models::total_loss(det, ae_loss, unc_loss, lambda)?,
                    phase,
                    step,
                    "total",
                )?;
            }
            let log = EpochLog {
                phase,
                epoch,
                steps,
                det_loss: det_sum / steps as f64,
                ae_loss: (ae_n > 0).then(|| ae_sum / ae_n as f64),
                unc_loss: (unc_n > 0).then(|| unc_sum / unc_n as f64),
                total_loss: tot_sum / steps as f64,
            };
            info!(
                "phase {phase} epoch {epoch}: det {:.4} ae {:?} unc {:?}",
                log.det_loss, log.ae_loss, log.unc_loss
            );
            history.push(log);
        }
        Ok(())
    }
}

/// Loads the data and runs [`run_with_data`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_with_data(cfg, &data)
}

/// Trains every model on `data.train` and evaluates on `data.val`.
pub fn run_with_data(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<RunOutcome> {
    cfg.validate()?;
    let (d, k) = (data.train.d, data.train.k);
    let (id_x, id_c) = data.train.matrix(Label::Id);
    let (fp_x, _) = data.train.matrix(Label::Fp);
    if id_x.nrows() == 0 {
        return Err(Error::invalid("training split has no ID features"));
    }
    let mut streams = Streams::new(cfg.seed);
    let bundle = ModelBundle::new(d, k, &cfg.dims, &mut streams.init)?;
    let mut trainer = Trainer {
        cfg,
        opt: Optimizers::new(&bundle, cfg.lr)?,
        bundle,
        queue: FeatureQueue::new(d, k, cfg.queue_capacity)?,
        streams,
        id_x,
        id_c,
        fp_x,
        step: 0,
        occupancy: Vec::new(),
    };
    let mut history = Vec::new();
    trainer.run_phase(1, cfg.scaled_epochs(cfg.phase1_epochs), 0.0, &mut history)?;
    trainer.run_phase(2, cfg.scaled_epochs(cfg.phase2_epochs), cfg.lambda, &mut history)?;

    let (report, score_sets) = evaluate_bundle(cfg, data, &trainer.bundle)?;
    let projection = project_features(cfg, data, &trainer.bundle)?;
    Ok(RunOutcome {
        report,
        bundle: trainer.bundle,
        history,
        score_sets,
        projection,
        queue_occupancy: trainer.occupancy,
    })
}

/// Scores the validation split with every configured method.
pub fn evaluate_bundle(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    bundle: &ModelBundle,
) -> Result<(EvaluationReport, Vec<ScoreSet>)> {
    let (vid, vid_c) = data.val.matrix(Label::Id);
    let (vfp, vfp_c) = data.val.matrix(Label::Fp);
    let u = stack(&[vid.view(), vfp.view()], data.val.d)?;
    let classes: Vec<usize> = vid_c.iter().chain(&vfp_c).copied().collect();
    let truth: Vec<Truth> = std::iter::repeat_n(Truth::Id, vid.nrows())
        .chain(std::iter::repeat_n(Truth::Ood, vfp.nrows()))
        .collect();

    let settings = MetricSettings {
        tpr: cfg.tpr,
        ece_bins: cfg.ece_bins,
        histogram_bins: cfg.histogram_bins,
        ..MetricSettings::default()
    };
    let mut report = EvaluationReport::new(cfg.hash(), cfg.seed, &settings);
    let mut sets = Vec::new();
    for method in &cfg.methods {
        let (set, calibration) = match method.as_str() {
            METHOD_DEFAULT => {
                let conf = default_score(&bundle.classifier, u.view())?;
                let probs = bundle.classifier.probabilities(u.view())?;
                let correct = probs
                    .rows()
                    .into_iter()
                    .zip(&classes)
                    .zip(&truth)
                    .map(|((p, &c), &t)| {
                        let argmax = p
                            .iter()
                            .enumerate()
                            .fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
                        t == Truth::Id && argmax == c
                    })
                    .collect();
                let scores = negated_default_scores(&bundle.classifier, u.view())?.to_vec();
                let set = ScoreSet::with_orientation(
                    method,
                    scores,
                    truth.clone(),
                    crate::scoring::ORIENTATION_NEGATED_CONFIDENCE,
                )?;
                (
                    set,
                    Some(Calibration {
                        confidences: conf.to_vec(),
                        correct,
                    }),
                )
            }
            METHOD_MAHALANOBIS => {
                let (tx, tc) = data.train.matrix(Label::Id);
                let scorer = MahalanobisScorer::fit(tx.view(), &tc, data.train.k)?;
                (
                    ScoreSet::new(method, scorer.score(u.view())?.to_vec(), truth.clone())?,
                    None,
                )
            }
            METHOD_UNCERTAINTY => {
                let f = bundle.head.score(u.view())?;
                let mut confidences = Vec::with_capacity(f.len());
                let mut correct = Vec::with_capacity(f.len());
                for (&x, &t) in f.iter().zip(&truth) {
                    let p_ood = sigmoid(x);
                    let predicted = if p_ood > 0.5 { Truth::Ood } else { Truth::Id };
                    confidences.push(p_ood.max(1.0 - p_ood));
                    correct.push(predicted == t);
                }
                (
                    ScoreSet::new(method, f.to_vec(), truth.clone())?,
                    Some(Calibration { confidences, correct }),
                )
            }
            other => return Err(Error::invalid(format!("unknown scoring method {other:?}"))),
        };
        report.add(&set, calibration.as_ref(), &settings)?;
        sets.push(set);
    }
    Ok((report, sets))
}

/// PCA of validation ID features; FP features and outliers synthesized from
/// the validation ID features are projected onto the same axes.
pub fn project_features(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    bundle: &ModelBundle,
) -> Result<Option<Projection>> {
    let (vid, vid_c) = data.val.matrix(Label::Id);
    let (vfp, vfp_c) = data.val.matrix(Label::Fp);
    if vid.nrows() < 2 {
        return Ok(None);
    }
    let pca = Pca2::fit(vid.view())?;
    let mut points = Vec::new();
    let mut push = |label: Label, x: &Array2<f64>, classes: &[usize]| {
        let p = pca.project(x.view());
        for (row, &c) in p.rows().into_iter().zip(classes) {
            points.push((label, c, row[0], row[1]));
        }
    };
    push(Label::Id, &vid, &vid_c);
    push(Label::Fp, &vfp, &vfp_c);
    if cfg.synth_method == Some(SynthMethod::LsVos) && bundle.ae.is_trained() {
        let seed = SeededRng::new(cfg.seed).next_seed();
        let v = lsvos_synthesize(&bundle.ae, vid.view(), &vid_c, cfg.noise, seed)?;
        push(Label::SynthOutlier, &v.vectors, &vid_c);
    }
    Ok(Some(Projection {
        points,
        explained_variance: [pca.explained_variance[0], pca.explained_variance[1]],
    }))
}
