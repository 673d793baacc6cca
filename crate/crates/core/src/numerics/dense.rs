//! Fully connected stacks with ReLU or identity activations.
//!
//! A layer computes `y = act(x · W + b)` on a batch `x` of shape `(B, in)`.
//! Weights are stored `(in, out)` in row-major order so a batch forward pass
//! is a single matrix product.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::invalid("layer dims must be positive"));
        }
        if bias.len() != weights.ncols() {
            return Err(Error::invalid(format!(
                "bias length {} does not match layer output dim {}",
                bias.len(),
                weights.ncols()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias: bias.as_standard_layout().into_owned(),
            activation,
        })
    }

    /// Glorot-uniform weights in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::invalid(format!("init range: {e}")))?;
        let weights = Array2::from_shape_simple_fn((in_dim, out_dim), || dist.sample(rng));
        Ok(Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        }
        z
    }
}

/// Gradients for one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients for every layer of a [`DenseNet`], in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .into_iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Flat views in the same order as [`DenseNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for g in &self.layers {
            out.push(g.weights.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Intermediate activations kept by [`DenseNet::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("trace holds at least the input")
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a net needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a net with layer widths `dims` (input first) and Glorot init.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::glorot(w[0], w[1], act, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// ReLU on every hidden layer, identity on the output layer.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let acts: Vec<Activation> = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::new(dims, &acts, rng)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths including the input, e.g. `[67, 256, 128, 128]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable flat parameter views: `w0, b0, w1, b1, ...`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            let Dense { weights, bias, .. } = layer;
            out.push(weights.as_slice_mut().expect("standard layout"));
            out.push(bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            out.push(layer.weights.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} columns, net expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("batch contains non-finite entries"));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let mut h = self.layers[0].apply(batch);
        ensure_finite(&h, 0, "forward")?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.apply(h.view());
            ensure_finite(&h, i, "forward")?;
        }
        Ok(h)
    }

    /// Forward pass that keeps every layer's output for [`DenseNet::backward`].
    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let h = layer.apply(activations[i].view());
            ensure_finite(&h, i, "forward")?;
            activations.push(h);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `grad_output` (dL/d output, shape `(B, out)`) through the net.
    pub fn backward(&self, trace: &Trace, grad_output: Array2<f64>) -> Result<NetGrads> {
        self.backward_impl(trace, grad_output, false).map(|(g, _)| g)
    }

    /// Like [`DenseNet::backward`] but also returns dL/d input.
    pub fn backward_with_input(&self, trace: &Trace, grad_output: Array2<f64>) -> Result<(NetGrads, Array2<f64>)> {
        let (g, input) = self.backward_impl(trace, grad_output, true)?;
        Ok((g, input.expect("requested input gradient")))
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        grad_output: Array2<f64>,
        want_input: bool,
    ) -> Result<(NetGrads, Option<Array2<f64>>)> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::invalid("trace does not belong to this net"));
        }
        if grad_output.raw_dim() != trace.output().raw_dim() {
            return Err(Error::invalid(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_output.shape(),
                trace.output().shape()
            )));
        }
        let mut delta = grad_output;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta).and(&trace.activations[i + 1]).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let weights = standard(trace.activations[i].t().dot(&delta));
            let bias = delta.sum_axis(Axis(0));
            ensure_finite(&weights, i, "backward")?;
            grads.push(LayerGrads { weights, bias });
            if i > 0 || want_input {
                delta = standard(delta.dot(&layer.weights.t()));
                ensure_finite(&delta, i, "backward")?;
            }
        }
        grads.reverse();
        let input = want_input.then_some(delta);
        Ok((NetGrads { layers: grads }, input))
    }
}

/// `dot` may return column-major results (e.g. for single-column operands).
fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

fn ensure_finite(m: &Array2<f64>, layer: usize, stage: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure { layer, stage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use ndarray::{array, s};

    fn identity_layer(act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![Dense::new(Array2::eye(2), Array1::zeros(2), act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = identity_layer(Activation::Identity);
        let out = net.forward(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[1.0, 2.0]]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let net = identity_layer(Activation::Relu);
        let out = net.forward(array![[-1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[0.0, 2.0]]);
    }

    #[test]
    fn two_layer_hand_chain() {
        // x = [1, 1]
        // h = relu(x·W1 + b1), W1 = [[1, -2], [3, 0.5]], b1 = [0.5, -1]
        //   = relu([1 + 3 + 0.5, -2 + 0.5 - 1]) = relu([4.5, -2.5]) = [4.5, 0]
        // y = h·W2 + b2, W2 = [[2], [7]], b2 = [-1]  ->  9 - 1 = 8
        let l1 = Dense::new(array![[1.0, -2.0], [3.0, 0.5]], array![0.5, -1.0], Activation::Relu).unwrap();
        let l2 = Dense::new(array![[2.0], [7.0]], array![-1.0], Activation::Identity).unwrap();
        let net = DenseNet::from_layers(vec![l1, l2]).unwrap();
        let out = net.forward(array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(out, array![[8.0]]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = identity_layer(Activation::Identity);
        let err = net.forward(array![[1.0, 2.0, 3.0]].view()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn non_chaining_layers_are_rejected() {
        let mut rng = SeededRng::new(0);
        let a = Dense::glorot(3, 4, Activation::Relu, &mut rng).unwrap();
        let b = Dense::glorot(5, 1, Activation::Identity, &mut rng).unwrap();
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let mut r1 = SeededRng::new(9);
        let mut r2 = SeededRng::new(9);
        let a = DenseNet::mlp(&[10, 6, 1], &mut r1).unwrap();
        let b = DenseNet::mlp(&[10, 6, 1], &mut r2).unwrap();
        assert_eq!(a, b);
        let limit = (6.0_f64 / 16.0).sqrt();
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= limit));
        assert_eq!(a.layers()[1].activation(), Activation::Identity);
        assert_eq!(a.layers()[0].activation(), Activation::Relu);
        assert_eq!(a.layer_dims(), vec![10, 6, 1]);
    }

    #[test]
    fn overflow_names_the_layer() {
        let l1 = Dense::new(array![[1e300]], array![0.0], Activation::Identity).unwrap();
        let l2 = Dense::new(array![[1e300]], array![0.0], Activation::Identity).unwrap();
        let net = DenseNet::from_layers(vec![l1, l2]).unwrap();
        match net.forward(array![[1.0]].view()) {
            Err(Error::NumericalFailure { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn forward_is_batch_order_equivariant() {
        let mut rng = SeededRng::new(3);
        let net = DenseNet::mlp(&[4, 8, 3], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let out = net.forward(x.view()).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let xp = x.select(Axis(0), &perm);
        let outp = net.forward(xp.view()).unwrap();
        for (k, &src) in perm.iter().enumerate() {
            assert_eq!(outp.slice(s![k, ..]), out.slice(s![src, ..]));
        }
    }

    #[test]
    fn single_output_grads_are_flat() {
        let mut rng = SeededRng::new(8);
        let net = DenseNet::mlp(&[6, 16, 16, 1], &mut rng).unwrap();
        let x = Array2::from_shape_fn((9, 6), |(i, j)| (i * j) as f64 * 0.01 - 0.2);
        let trace = net.forward_trace(x.view()).unwrap();
        let grads = net.backward(&trace, Array2::ones((9, 1))).unwrap();
        assert_eq!(grads.slices().len(), 6);
    }
}
