//! Auto-encoder, uncertainty head and surrogate classifier, with their losses.
//!
//! The auto-encoder maps a class-augmented feature `[u, one_hot(c)]` of width
//! `D + K` to a latent code and back to a `D`-wide reconstruction of `u`.
//! The uncertainty head scores a raw `D`-wide feature (higher = more
//! outlier-like). The surrogate classifier stands in for a detector's
//! classification head: its cross-entropy is the detection term of the total
//! loss and its max-softmax probability is the default confidence score.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gradients, softmax_rows, Activation, DenseNet, Loss, NamedNet, NetGrads};

/// Layer widths for every model in a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    /// Encoder widths; the last one is the latent dimension.
    pub encoder: Vec<usize>,
    /// Decoder hidden widths; the output width is always `D`.
    pub decoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            encoder: vec![256, 128, 128],
            decoder_hidden: vec![128, 256],
            head_hidden: vec![256, 256],
            classifier_hidden: vec![128],
        }
    }
}

impl ModelDims {
    pub fn latent_dim(&self) -> usize {
        *self.encoder.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        let all = self
            .encoder
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.head_hidden)
            .chain(&self.classifier_hidden);
        if all.copied().any(|w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

fn chain(input: usize, widths: &[usize], output: Option<usize>) -> Vec<usize> {
    std::iter::once(input)
        .chain(widths.iter().copied())
        .chain(output)
        .collect()
}

/// `φ = d(e(x))` over class-augmented features.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    encoder: DenseNet,
    decoder: DenseNet,
    feature_dim: usize,
    n_classes: usize,
    updates: u64,
}

/// Gradients of the reconstruction loss for both halves.
#[derive(Debug, Clone)]
pub struct AeGrads {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
}

impl AutoEncoder {
    pub fn new<R: Rng + ?Sized>(d: usize, k: usize, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let encoder = DenseNet::mlp(&chain(d + k, &dims.encoder, None), rng)?;
        let decoder = DenseNet::mlp(&chain(dims.latent_dim(), &dims.decoder_hidden, Some(d)), rng)?;
        Self::from_parts(encoder, decoder, d, k, 0)
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, d: usize, k: usize, updates: u64) -> Result<Self> {
        if encoder.input_dim() != d + k {
            return Err(Error::invalid(format!(
                "encoder input {} != D + K = {}",
                encoder.input_dim(),
                d + k
            )));
        }
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::invalid("encoder output must equal decoder input"));
        }
        if decoder.output_dim() != d {
            return Err(Error::invalid(format!(
                "decoder output {} != D = {d}",
                decoder.output_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            feature_dim: d,
            n_classes: k,
            updates,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Optimizer updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_trained(&self) -> bool {
        self.updates > 0
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(x)?.view())
    }

    fn check_augmented(&self, x: ArrayView2<f64>) -> Result<()> {
        let want = self.feature_dim + self.n_classes;
        if x.ncols() != want {
            return Err(Error::invalid(format!(
                "auto-encoder input has {} columns, expected D + K = {want}",
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Reconstruction loss and gradients for both halves.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>) -> Result<(f64, AeGrads)> {
        self.check_augmented(x)?;
        let target = x.slice(s![.., ..self.feature_dim]);
        let enc_trace = self.encoder.forward_trace(x)?;
        let (loss, dec_grads) = {
            let dec_trace = self.decoder.forward_trace(enc_trace.output().view())?;
            let (value, grad_out) = Loss::Mse { targets: target }.evaluate(dec_trace.output())?;
            let (g, grad_latent) = self.decoder.backward_with_input(&dec_trace, grad_out)?;
            (value, (g, grad_latent))
        };
        let (decoder, grad_latent) = dec_grads;
        let encoder = self.encoder.backward(&enc_trace, grad_latent)?;
        Ok((loss, AeGrads { encoder, decoder }))
    }

    pub(crate) fn nets_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.encoder, &mut self.decoder)
    }

    pub(crate) fn record_update(&mut self) {
        self.updates += 1;
    }
}

/// Mean over rows and over the `D` output coordinates of `(x[:, ..D] - φ(x))²`.
pub fn ae_loss(ae: &AutoEncoder, x: ArrayView2<f64>) -> Result<f64> {
    ae.check_augmented(x)?;
    let recon = ae.reconstruct(x)?;
    let target = x.slice(s![.., ..ae.feature_dim]);
    Loss::Mse { targets: target }.evaluate(&recon).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncertaintyLossKind {
    /// `E_ood[-σ(f)] + E_id[-(1 - σ(f))]`, bounded in `(-2, 0)`.
    #[default]
    Sigmoid,
    /// Binary cross-entropy with the same orientation.
    Log,
}

impl UncertaintyLossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyLossKind::Sigmoid => "sigmoid",
            UncertaintyLossKind::Log => "bce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "bce" | "log" => Ok(Self::Log),
            other => Err(Error::invalid(format!("unknown uncertainty loss {other:?}"))),
        }
    }
}

/// Scalar outlier score `f_unc(u)` over raw `D`-wide features.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyHead {
    net: DenseNet,
    updates: u64,
}

impl UncertaintyHead {
    pub fn new<R: Rng + ?Sized>(d: usize, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        Self::from_net(DenseNet::mlp(&chain(d, &dims.head_hidden, Some(1)), rng)?, 0)
    }

    pub fn from_net(net: DenseNet, updates: u64) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::invalid("uncertainty head must have a scalar output"));
        }
        Ok(Self { net, updates })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Raw head output per row.
    pub fn score(&self, u: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward(u)?.column(0).to_owned())
    }

    /// Loss and gradients for stacked `[u_id; u_ood]`.
    pub fn loss_and_grads(
        &self,
        u_id: ArrayView2<f64>,
        u_ood: ArrayView2<f64>,
        kind: UncertaintyLossKind,
    ) -> Result<(f64, NetGrads)> {
        let (batch, flags) = stack_id_ood(u_id, u_ood)?;
        let loss = match kind {
            UncertaintyLossKind::Sigmoid => Loss::UncertaintySigmoid { is_ood: &flags },
            UncertaintyLossKind::Log => Loss::UncertaintyLog { is_ood: &flags },
        };
        gradients(&self.net, batch.view(), loss)
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub(crate) fn record_update(&mut self) {
        self.updates += 1;
    }
}

fn stack_id_ood(u_id: ArrayView2<f64>, u_ood: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<bool>)> {
    if u_id.nrows() + u_ood.nrows() == 0 {
        return Err(Error::invalid("uncertainty loss needs at least one row"));
    }
    if u_id.nrows() > 0 && u_ood.nrows() > 0 && u_id.ncols() != u_ood.ncols() {
        return Err(Error::invalid("ID and OOD features must have the same width"));
    }
    let parts: Vec<ArrayView2<f64>> = [u_id, u_ood].into_iter().filter(|m| m.nrows() > 0).collect();
    let batch = ndarray::concatenate(ndarray::Axis(0), &parts).map_err(|e| Error::invalid(e.to_string()))?;
    let mut flags = vec![false; u_id.nrows()];
    flags.extend(std::iter::repeat_n(true, u_ood.nrows()));
    Ok((batch, flags))
}

/// Outlier loss of `head` on ID rows `u_id` and outlier rows `u_ood`.
pub fn uncertainty_loss(
    head: &UncertaintyHead,
    u_id: ArrayView2<f64>,
    u_ood: ArrayView2<f64>,
    kind: UncertaintyLossKind,
) -> Result<f64> {
    let (batch, flags) = stack_id_ood(u_id, u_ood)?;
    let out = head.net.forward(batch.view())?;
    let loss = match kind {
        UncertaintyLossKind::Sigmoid => Loss::UncertaintySigmoid { is_ood: &flags },
        UncertaintyLossKind::Log => Loss::UncertaintyLog { is_ood: &flags },
    };
    loss.evaluate(&out).map(|(v, _)| v)
}

/// `L_det + L_AE + λ · L_uncertainty`.
pub fn total_loss(det_loss: f64, ae_loss: f64, unc_loss: f64, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "loss weight must be non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(det_loss + ae_loss);
    }
    Ok(det_loss + ae_loss + lambda * unc_loss)
}

/// Stand-in for a detector's classification head over `D`-wide features.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateClassifier {
    net: DenseNet,
    updates: u64,
}

impl SurrogateClassifier {
    pub fn new<R: Rng + ?Sized>(d: usize, k: usize, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        let dims = chain(d, &dims.classifier_hidden, Some(k));
        let acts: Vec<Activation> = (1..dims.len())
            .map(|i| {
                if i + 1 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::from_net(DenseNet::new(&dims, &acts, rng)?, 0)
    }

    pub fn from_net(net: DenseNet, updates: u64) -> Result<Self> {
        if net.output_dim() < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        Ok(Self { net, updates })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn logits(&self, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(u)
    }

    pub fn probabilities(&self, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(self.logits(u)?.view()))
    }

    /// Mean cross-entropy against the given classes, with gradients.
    pub fn loss_and_grads(&self, u: ArrayView2<f64>, classes: &[usize]) -> Result<(f64, NetGrads)> {
        gradients(&self.net, u, Loss::CrossEntropy { labels: classes })
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub(crate) fn record_update(&mut self) {
        self.updates += 1;
    }
}

/// Maximum softmax probability per row.
pub fn default_score(clf: &SurrogateClassifier, u: ArrayView2<f64>) -> Result<Array1<f64>> {
    let probs = clf.probabilities(u)?;
    Ok(Array1::from_iter(
        probs.rows().into_iter().map(|r| r.iter().copied().fold(0.0, f64::max)),
    ))
}

/// Every trainable model of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub ae: AutoEncoder,
    pub head: UncertaintyHead,
    pub classifier: SurrogateClassifier,
}

pub const NET_ENCODER: &str = "encoder";
pub const NET_DECODER: &str = "decoder";
pub const NET_HEAD: &str = "uncertainty_head";
pub const NET_CLASSIFIER: &str = "classifier";

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(d: usize, k: usize, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            ae: AutoEncoder::new(d, k, dims, rng)?,
            head: UncertaintyHead::new(d, dims, rng)?,
            classifier: SurrogateClassifier::new(d, k, dims, rng)?,
        })
    }

    pub fn to_named_nets(&self) -> Vec<NamedNet> {
        vec![
            NamedNet {
                name: NET_ENCODER.into(),
                updates: self.ae.updates,
                net: self.ae.encoder.clone(),
            },
            NamedNet {
                name: NET_DECODER.into(),
                updates: self.ae.updates,
                net: self.ae.decoder.clone(),
            },
            NamedNet {
                name: NET_HEAD.into(),
                updates: self.head.updates,
                net: self.head.net.clone(),
            },
            NamedNet {
                name: NET_CLASSIFIER.into(),
                updates: self.classifier.updates,
                net: self.classifier.net.clone(),
            },
        ]
    }

    pub fn from_named_nets(mut nets: Vec<NamedNet>) -> Result<Self> {
        let mut find = |name: &str| -> Result<NamedNet> {
            let i = nets
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing net {name:?}")))?;
            Ok(nets.swap_remove(i))
        };
        let enc = find(NET_ENCODER)?;
        let dec = find(NET_DECODER)?;
        let head = find(NET_HEAD)?;
        let clf = find(NET_CLASSIFIER)?;
        let d = dec.net.output_dim();
        let k = clf.net.output_dim();
        Ok(Self {
            ae: AutoEncoder::from_parts(enc.net, dec.net, d, k, enc.updates)?,
            head: UncertaintyHead::from_net(head.net, head.updates)?,
            classifier: SurrogateClassifier::from_net(clf.net, clf.updates)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Dense, SeededRng};
    use ndarray::array;

    fn head_with_constant(value: f64, d: usize) -> UncertaintyHead {
        let layer = Dense::new(Array2::zeros((d, 1)), array![value], Activation::Identity).unwrap();
        UncertaintyHead::from_net(DenseNet::from_layers(vec![layer]).unwrap(), 0).unwrap()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        // D = 1, K = 1: encoder copies the feature, decoder copies it back.
        let enc = DenseNet::from_layers(vec![Dense::new(
            array![[1.0], [0.0]],
            array![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let dec = DenseNet::from_layers(vec![
            Dense::new(array![[1.0]], array![0.0], Activation::Identity).unwrap()
        ])
        .unwrap();
        let ae = AutoEncoder::from_parts(enc, dec, 1, 1, 0).unwrap();
        let x = array![[0.3, 1.0], [-2.0, 1.0]];
        assert_eq!(ae_loss(&ae, x.view()).unwrap(), 0.0);
        let (_, g) = ae.loss_and_grads(x.view()).unwrap();
        assert_eq!(g.encoder.max_abs(), 0.0);
        assert_eq!(g.decoder.max_abs(), 0.0);
    }

    #[test]
    fn scalar_mse_definition() {
        // Decoder always outputs 0; target 1 -> loss 1.
        let enc = DenseNet::from_layers(vec![Dense::new(
            array![[0.0], [0.0]],
            array![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let dec = DenseNet::from_layers(vec![
            Dense::new(array![[0.0]], array![0.0], Activation::Identity).unwrap()
        ])
        .unwrap();
        let ae = AutoEncoder::from_parts(enc, dec, 1, 1, 0).unwrap();
        assert_eq!(ae_loss(&ae, array![[1.0, 1.0]].view()).unwrap(), 1.0);
    }

    #[test]
    fn ae_loss_matches_naive_loop() {
        let mut rng = SeededRng::new(21);
        let dims = ModelDims {
            encoder: vec![6, 3],
            decoder_hidden: vec![5],
            ..ModelDims::default()
        };
        let ae = AutoEncoder::new(4, 2, &dims, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 6), |(i, j)| {
            if j >= 4 {
                if j - 4 == i % 2 {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((i * 5 + j * 3) % 11) as f64 / 5.0 - 1.0
            }
        });
        let recon = ae.reconstruct(x.view()).unwrap();
        let mut sum = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                sum += (x[[i, j]] - recon[[i, j]]).powi(2);
            }
        }
        let naive = sum / 28.0;
        assert!((ae_loss(&ae, x.view()).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn ae_rejects_wrong_width() {
        let ae = AutoEncoder::new(4, 2, &ModelDims::default(), &mut SeededRng::new(0)).unwrap();
        assert!(ae_loss(&ae, Array2::zeros((2, 4)).view()).is_err());
        assert_eq!(ae.latent_dim(), 128);
        assert_eq!(ae.encoder().layer_dims(), vec![6, 256, 128, 128]);
        assert_eq!(ae.decoder().layer_dims(), vec![128, 128, 256, 4]);
    }

    #[test]
    fn uncertainty_loss_hand_values() {
        let u = Array2::<f64>::zeros((1, 2));
        let zero = head_with_constant(0.0, 2);
        let v = uncertainty_loss(&zero, u.view(), u.view(), UncertaintyLossKind::Sigmoid).unwrap();
        assert!((v + 1.0).abs() < 1e-15);

        let ln3 = 3f64.ln();
        let ood_head = head_with_constant(ln3, 2);
        let id_head = head_with_constant(-ln3, 2);
        let empty = Array2::<f64>::zeros((0, 2));
        let ood_part = uncertainty_loss(&ood_head, empty.view(), u.view(), UncertaintyLossKind::Sigmoid).unwrap();
        let id_part = uncertainty_loss(&id_head, u.view(), empty.view(), UncertaintyLossKind::Sigmoid).unwrap();
        assert!((ood_part + 0.75).abs() < 1e-15);
        assert!((id_part + 0.75).abs() < 1e-15);
        assert!((ood_part + id_part + 1.5).abs() < 1e-15);

        // Confident correct outputs approach the infimum of -2.
        let big = head_with_constant(20.0, 2);
        let small = head_with_constant(-20.0, 2);
        let total = uncertainty_loss(&big, empty.view(), u.view(), UncertaintyLossKind::Sigmoid).unwrap()
            + uncertainty_loss(&small, u.view(), empty.view(), UncertaintyLossKind::Sigmoid).unwrap();
        assert!(total > -2.0 && total < -2.0 + 1e-8);
    }

    #[test]
    fn uncertainty_loss_needs_rows() {
        let head = head_with_constant(0.0, 2);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(uncertainty_loss(&head, empty.view(), empty.view(), UncertaintyLossKind::Sigmoid).is_err());
    }

    #[test]
    fn log_variant_at_zero() {
        let u = Array2::<f64>::zeros((1, 2));
        let zero = head_with_constant(0.0, 2);
        let v = uncertainty_loss(&zero, u.view(), u.view(), UncertaintyLossKind::Log).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_terms() {
        assert_eq!(total_loss(0.5, 0.25, -1.0, 0.0).unwrap(), 0.75);
        assert_eq!(total_loss(0.5, 0.25, -1.0, 1.0).unwrap(), -0.25);
        assert_eq!(total_loss(0.5, 0.25, -1.0, 5.0).unwrap(), -4.25);
        assert!(total_loss(0.0, 0.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn default_score_hand_values() {
        let identity = |k: usize| {
            let layer = Dense::new(Array2::eye(k), Array1::zeros(k), Activation::Identity).unwrap();
            SurrogateClassifier::from_net(DenseNet::from_layers(vec![layer]).unwrap(), 0).unwrap()
        };
        let clf = identity(3);
        let s = default_score(&clf, array![[0.7, 0.7, 0.7], [2f64.ln(), 0.0, 0.0]].view()).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bundle_round_trips_through_named_nets() {
        let bundle = ModelBundle::new(5, 3, &ModelDims::default(), &mut SeededRng::new(4)).unwrap();
        let back = ModelBundle::from_named_nets(bundle.to_named_nets()).unwrap();
        assert_eq!(back, bundle);
        assert!(!back.ae.is_trained());
    }
}
