//! Class-conditional Gaussians with one covariance shared across classes,
//! plus a 2-D PCA projection for plotting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Per-class means with a pooled within-class covariance.
#[derive(Debug, Clone)]
pub struct SharedGaussian {
    means: Array2<f64>,
    covariance: Array2<f64>,
    cholesky: Cholesky<f64, Dyn>,
    regularization: f64,
}

impl SharedGaussian {
    /// Fits `k` class means and the pooled covariance `(1/N) Σ (x - μ_c)(x - μ_c)ᵀ`.
    ///
    /// When any class has fewer than `D + 2` samples, or the covariance is not
    /// positive definite, `εI` is added with `ε = 1e-6 · trace / D`.
    pub fn fit(features: ArrayView2<f64>, classes: &[usize], k: usize) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid("cannot fit a Gaussian to an empty matrix"));
        }
        if classes.len() != n {
            return Err(Error::invalid(format!("{} class ids for {n} rows", classes.len())));
        }
        let mut counts = vec![0usize; k];
        let mut means = Array2::<f64>::zeros((k, d));
        for (row, &c) in features.rows().into_iter().zip(classes) {
            if c >= k {
                return Err(Error::invalid(format!("class id {c} out of range for {k} classes")));
            }
            counts[c] += 1;
            let mut m = means.row_mut(c);
            m += &row;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::NotReady(format!("class {empty} has no samples")));
        }
        for (mut m, &c) in means.rows_mut().into_iter().zip(&counts) {
            m /= c as f64;
        }
        let mut centered = features.to_owned();
        for (mut row, &c) in centered.rows_mut().into_iter().zip(classes) {
            row -= &means.row(c);
        }
        let covariance = centered.t().dot(&centered) / n as f64;
        let needs_reg = counts.iter().any(|&c| c < d + 2);
        Self::from_parts(means, covariance, needs_reg)
    }

    /// Class means `(K, D)` with a shared `(D, D)` covariance; `force_reg`
    /// adds the ridge even when the covariance factorizes.
    pub fn from_parts(means: Array2<f64>, covariance: Array2<f64>, force_reg: bool) -> Result<Self> {
        let d = covariance.nrows();
        if covariance.ncols() != d || means.ncols() != d || means.nrows() == 0 {
            return Err(Error::invalid("means must be (K, D) and covariance (D, D)"));
        }
        let trace = covariance.diag().sum();
        let base = if trace > 0.0 && trace.is_finite() {
            1e-6 * trace / d as f64
        } else {
            1e-6
        };
        let mut eps = if force_reg { base } else { 0.0 };
        for _ in 0..8 {
            let mut cov = covariance.clone();
            if eps > 0.0 {
                cov.diag_mut().mapv_inplace(|v| v + eps);
            }
            let m = DMatrix::from_row_slice(d, d, cov.as_standard_layout().as_slice().unwrap());
            let factor = Cholesky::new(m).filter(|c| {
                // Reject numerically singular factors.
                let min_pivot = c.l_dirty().diagonal().iter().copied().fold(f64::INFINITY, f64::min);
                min_pivot * min_pivot > 1e-12 * base / 1e-6
            });
            if let Some(cholesky) = factor {
                if eps > 0.0 {
                    log::warn!("covariance regularized with eps = {eps:e}");
                }
                return Ok(Self {
                    means,
                    covariance: cov,
                    cholesky,
                    regularization: eps,
                });
            }
            eps = if eps == 0.0 { base } else { eps * 10.0 };
        }
        Err(Error::NumericalFailure {
            layer: 0,
            stage: "covariance factorization",
        })
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    /// Covariance actually used, including any regularization.
    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// The `ε` added to the diagonal, zero when none was needed.
    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Squared Mahalanobis distance of every row of `x` to the mean of `class`.
    pub fn mahalanobis_sq(&self, class: usize, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let d = self.dim();
        if x.ncols() != d {
            return Err(Error::invalid(format!("query has {} columns, fit has {d}", x.ncols())));
        }
        if class >= self.n_classes() {
            return Err(Error::invalid(format!("class {class} out of range")));
        }
        let mean = self.means.row(class);
        let diff_t = DMatrix::from_fn(d, x.nrows(), |r, c| x[[c, r]] - mean[r]);
        let y = self
            .cholesky
            .l_dirty()
            .solve_lower_triangular(&diff_t)
            .ok_or(Error::NumericalFailure {
                layer: 0,
                stage: "triangular solve",
            })?;
        Ok(Array1::from_iter(y.column_iter().map(|col| col.norm_squared())))
    }

    /// Gaussian log-density of every row of `x` under `class`.
    pub fn log_likelihood(&self, class: usize, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let d = self.dim() as f64;
        let log_det: f64 = 2.0 * self.cholesky.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let norm = d * (2.0 * std::f64::consts::PI).ln() + log_det;
        Ok(self.mahalanobis_sq(class, x)?.mapv(|m| -0.5 * (m + norm)))
    }

    /// Draws `n` samples from the Gaussian of `class`.
    pub fn sample<R: Rng + ?Sized>(&self, class: usize, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let z = DMatrix::<f64>::from_fn(d, n, |_, _| rng.sample(StandardNormal));
        let l = self.cholesky.l();
        let x = l * z;
        let mean = self.means.row(class);
        Array2::from_shape_fn((n, d), |(i, j)| mean[j] + x[(j, i)])
    }
}

/// Projection of rows onto the top-two principal axes.
#[derive(Debug, Clone)]
pub struct Pca2 {
    pub mean: Array1<f64>,
    /// Shape `(D, 2)`; columns are unit principal axes.
    pub axes: Array2<f64>,
    pub explained_variance: [f64; 2],
}

impl Pca2 {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 || d < 2 {
            return Err(Error::invalid("PCA needs at least two rows and two columns"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        let m = DMatrix::from_row_slice(d, d, cov.as_standard_layout().as_slice().unwrap());
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut axes = Array2::zeros((d, 2));
        let mut explained_variance = [0.0; 2];
        for (slot, &idx) in order.iter().take(2).enumerate() {
            let v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
            // Sign convention: largest-magnitude component is positive.
            let pivot = v
                .iter()
                .copied()
                .fold(0.0_f64, |acc, c| if c.abs() > acc.abs() { c } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for r in 0..d {
                axes[[r, slot]] = sign * v[r];
            }
            explained_variance[slot] = eig.eigenvalues[idx];
        }
        Ok(Self {
            mean,
            axes,
            explained_variance,
        })
    }

    pub fn project(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.axes)
    }
}
