//! Batch losses over a net's output and their output gradients.
//!
//! Every loss is a mean over the batch so learning-rate and loss-weight
//! settings do not depend on batch size.

use ndarray::{Array2, ArrayView2};

use super::dense::{DenseNet, NetGrads};
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// Mean over all entries of `(output - target)^2`.
    Mse { targets: ArrayView2<'a, f64> },
    /// Bounded sigmoid outlier loss: `E_ood[-σ(f)] + E_id[-(1 - σ(f))]`.
    /// `is_ood[i]` marks row `i` as an outlier. A side with no rows contributes nothing.
    UncertaintySigmoid { is_ood: &'a [bool] },
    /// Binary cross-entropy counterpart: `E_ood[-ln σ(f)] + E_id[-ln(1 - σ(f))]`.
    UncertaintyLog { is_ood: &'a [bool] },
    /// Mean softmax cross-entropy against class indices.
    CrossEntropy { labels: &'a [usize] },
}

impl Loss<'_> {
    /// Loss value and dL/d output.
    pub fn evaluate(&self, output: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let rows = output.nrows();
        if rows == 0 {
            return Err(Error::invalid("empty batch"));
        }
        match *self {
            Loss::Mse { targets } => {
                if targets.raw_dim() != output.raw_dim() {
                    return Err(Error::invalid(format!(
                        "mse targets {:?} do not match output {:?}",
                        targets.shape(),
                        output.shape()
                    )));
                }
                let n = output.len() as f64;
                let diff = output - &targets;
                let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
                let grad = diff * (2.0 / n);
                Ok((value, grad))
            }
            Loss::UncertaintySigmoid { is_ood } | Loss::UncertaintyLog { is_ood } => {
                if output.ncols() != 1 || is_ood.len() != rows {
                    return Err(Error::invalid(format!(
                        "uncertainty loss needs a ({rows}, 1) output with {rows} flags, got {:?} and {}",
                        output.shape(),
                        is_ood.len()
                    )));
                }
                let n_ood = is_ood.iter().filter(|&&b| b).count();
                let n_id = rows - n_ood;
                let log_form = matches!(self, Loss::UncertaintyLog { .. });
                let mut ood_sum = 0.0;
                let mut id_sum = 0.0;
                let mut grad = Array2::zeros((rows, 1));
                for (i, &ood) in is_ood.iter().enumerate() {
                    let f = output[[i, 0]];
                    let (p, q) = (sigmoid(f), sigmoid(-f));
                    if ood {
                        let w = 1.0 / n_ood as f64;
                        if log_form {
                            ood_sum += softplus(-f);
                            grad[[i, 0]] = -q * w;
                        } else {
                            ood_sum -= p;
                            grad[[i, 0]] = -p * q * w;
                        }
                    } else {
                        let w = 1.0 / n_id as f64;
                        if log_form {
                            id_sum += softplus(f);
                            grad[[i, 0]] = p * w;
                        } else {
                            id_sum -= q;
                            grad[[i, 0]] = p * q * w;
                        }
                    }
                }
                let mut value = 0.0;
                if n_ood > 0 {
                    value += ood_sum / n_ood as f64;
                }
                if n_id > 0 {
                    value += id_sum / n_id as f64;
                }
                Ok((value, grad))
            }
            Loss::CrossEntropy { labels } => {
                let k = output.ncols();
                if labels.len() != rows {
                    return Err(Error::invalid(format!("{} labels for {rows} rows", labels.len())));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::invalid(format!("label {bad} out of range for {k} logits")));
                }
                let probs = softmax_rows(output.view());
                let b = rows as f64;
                let mut value = 0.0;
                let mut grad = probs;
                for (i, &label) in labels.iter().enumerate() {
                    let row = output.row(i);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    value += lse - row[label];
                    grad[[i, label]] -= 1.0;
                }
                grad /= b;
                Ok((value / b, grad))
            }
        }
    }
}

/// Mean batch loss and its gradient with respect to every parameter of `net`.
pub fn gradients(net: &DenseNet, batch: ArrayView2<f64>, loss: Loss<'_>) -> Result<(f64, NetGrads)> {
    let trace = net.forward_trace(batch)?;
    let (value, grad_out) = loss.evaluate(trace.output())?;
    if !value.is_finite() {
        return Err(Error::NumericalFailure {
            layer: net.layers().len() - 1,
            stage: "loss",
        });
    }
    let grads = net.backward(&trace, grad_out)?;
    Ok((value, grads))
}
