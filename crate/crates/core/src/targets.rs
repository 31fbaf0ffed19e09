//! Target densities, data-generating distributions and exact conditional samplers.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A density known up to normalization through its log-density and score.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Unnormalized log-density.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Coordinate `j` of `∇_x log p(x)`. Unchecked hot path.
    fn score_coord(&self, j: usize, x: &[f64]) -> f64;

    /// Full score with input validation.
    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("score evaluated at non-finite coordinate {v}")));
        }
        Ok((0..x.len()).map(|j| self.score_coord(j, x)).collect())
    }
}

/// Anything that produces i.i.d. rows.
pub trait DataSource: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64>;
}

/// Draws coordinate `j` of `x` given the remaining coordinates.
///
/// The value currently stored in `x[j]` is ignored.
pub trait ConditionalSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample_coord(&self, j: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<f64>;
}

/// Draws the coordinates in `block` jointly given the rest of `x`.
///
/// `out` receives one value per index of `block`, in the same order.
pub trait BlockConditionalSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample_block(&self, block: &[usize], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;
}

/// Covariance with `var` on the diagonal and `rho` everywhere else.
pub fn equicorrelated(dim: usize, rho: f64, var: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |a, b| if a == b { var } else { rho })
}

#[derive(Debug, Clone)]
pub struct CorrelatedGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl CorrelatedGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Config(format!(
                "covariance must be {d}x{d}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::Config("covariance is not symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        let precision = 0.5 * (&precision + precision.transpose());
        Ok(Self { mean, cov, precision, chol: chol.l() })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    /// Zero-mean Gaussian with equicorrelated covariance.
    pub fn equicorrelated(dim: usize, rho: f64, var: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), equicorrelated(dim, rho, var))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Mean and variance of `x_j | x_{-j}`. `x[j]` is ignored.
    pub fn conditional_params(&self, j: usize, x: &[f64]) -> (f64, f64) {
        let lam = &self.precision;
        let ljj = lam[(j, j)];
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            if k != j {
                acc += lam[(j, k)] * (xk - self.mean[k]);
            }
        }
        (self.mean[j] - acc / ljj, 1.0 / ljj)
    }

    fn block_params(&self, block: &[usize], x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let b = block.len();
        let lam_bb = DMatrix::from_fn(b, b, |r, c| self.precision[(block[r], block[c])]);
        let mut rhs = DVector::zeros(b);
        for (r, &i) in block.iter().enumerate() {
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate() {
                if !block.contains(&k) {
                    acc += self.precision[(i, k)] * (xk - self.mean[k]);
                }
            }
            rhs[r] = acc;
        }
        let chol = lam_bb
            .cholesky()
            .ok_or_else(|| Error::Config("block precision is not positive definite".into()))?;
        let shift = chol.solve(&rhs);
        let cov = chol.inverse();
        let mean = DVector::from_fn(b, |r, _| self.mean[block[r]] - shift[r]);
        Ok((mean, cov))
    }
}

impl Target for CorrelatedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_fn(x.len(), |k, _| x[k] - self.mean[k]);
        -0.5 * (diff.transpose() * &self.precision * &diff)[(0, 0)]
    }

    fn score_coord(&self, j: usize, x: &[f64]) -> f64 {
        let row = self.precision.row(j);
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            acc += row[k] * (xk - self.mean[k]);
        }
        -acc
    }
}

impl DataSource for CorrelatedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let d = self.mean.len();
        let mut out = Array2::zeros((n, d));
        let mut z = vec![0.0; d];
        for mut row in out.rows_mut() {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            for a in 0..d {
                let mut acc = self.mean[a];
                for (b, zb) in z.iter().enumerate().take(a + 1) {
                    acc += self.chol[(a, b)] * zb;
                }
                row[a] = acc;
            }
        }
        out
    }
}

impl ConditionalSampler for CorrelatedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_coord(&self, j: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        let (m, v) = self.conditional_params(j, x);
        let z: f64 = StandardNormal.sample(rng);
        Ok(m + v.sqrt() * z)
    }
}

impl BlockConditionalSampler for CorrelatedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_block(&self, block: &[usize], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        if let [j] = block {
            out[0] = self.sample_coord(*j, x, rng)?;
            return Ok(());
        }
        let (mean, cov) = self.block_params(block, x)?;
        let l = cov
            .cholesky()
            .ok_or_else(|| Error::Config("block covariance is not positive definite".into()))?
            .l();
        let z = DVector::from_fn(block.len(), |_, _| StandardNormal.sample(rng));
        let y = mean + l * z;
        out.copy_from_slice(y.as_slice());
        Ok(())
    }
}

/// Product of independent zero-mean Laplace coordinates.
#[derive(Debug, Clone)]
pub struct LaplaceProduct {
    scale: f64,
    dim: usize,
}

impl LaplaceProduct {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(Self { scale, dim })
    }

    /// Unit-variance Laplace, scale 1/√2.
    pub fn unit_variance(dim: usize) -> Self {
        Self::new(dim, std::f64::consts::FRAC_1_SQRT_2).expect("valid scale")
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        // inverse CDF on u ∈ (-1/2, 1/2)
        let u: f64 = rng.random::<f64>() - 0.5;
        let t = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
        -self.scale * u.signum() * t.ln()
    }
}

impl Target for LaplaceProduct {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -x.iter().map(|v| v.abs()).sum::<f64>() / self.scale
    }

    // Undefined at zero; the estimators only evaluate the scores of targets.
    fn score_coord(&self, j: usize, x: &[f64]) -> f64 {
        -x[j].signum() / self.scale
    }
}

impl DataSource for LaplaceProduct {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim));
        out.iter_mut().for_each(|v| *v = self.draw(rng));
        out
    }
}

impl ConditionalSampler for LaplaceProduct {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_coord(&self, _j: usize, _x: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        Ok(self.draw(rng))
    }
}

impl BlockConditionalSampler for LaplaceProduct {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_block(&self, _block: &[usize], _x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = self.draw(rng));
        Ok(())
    }
}

/// Rows `z + ε` with `z ~ N(0, Σ₁)` (unit diagonal, off-diagonal 0.5) and
/// `ε ~ ∏ Laplace(0, 1/√2)`. Mean 0, covariance `Σ₁ + I`.
#[derive(Debug, Clone)]
pub struct LaplaceNoiseGaussian {
    signal: CorrelatedGaussian,
    noise: LaplaceProduct,
}

impl LaplaceNoiseGaussian {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("Laplace-noise Gaussian needs dimension >= 2, got {dim}")));
        }
        Ok(Self {
            signal: CorrelatedGaussian::equicorrelated(dim, 0.5, 1.0)?,
            noise: LaplaceProduct::unit_variance(dim),
        })
    }

    /// Gaussian with the same first two moments.
    pub fn moment_matched_target(&self) -> CorrelatedGaussian {
        CorrelatedGaussian::equicorrelated(self.noise.dim, 0.5, 2.0).expect("SPD")
    }
}

impl DataSource for LaplaceNoiseGaussian {
    fn dim(&self) -> usize {
        self.noise.dim
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let z = self.signal.sample(n, rng);
        let e = self.noise.sample(n, rng);
        z + e
    }
}

/// Convenience wrapper around [`LaplaceNoiseGaussian`].
pub fn laplace_noise_gaussian_sample(dim: usize, n: usize, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
    Ok(LaplaceNoiseGaussian::new(dim)?.sample(n, rng))
}

/// Posterior over `(θ1, θ2)` for observations from `½N(θ1, v) + ½N(θ2, v)`
/// with independent standard normal priors.
#[derive(Debug, Clone)]
pub struct GmmPosterior {
    obs: Vec<f64>,
    var: f64,
}

impl GmmPosterior {
    pub fn new(obs: Vec<f64>, var: f64) -> Result<Self> {
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::Config(format!("component variance must be positive, got {var}")));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("observation".into()));
        }
        Ok(Self { obs, var })
    }

    /// Draw `n` observations at the given component means and build the posterior.
    pub fn simulate(n: usize, theta: [f64; 2], var: f64, rng: &mut dyn RngCore) -> Result<Self> {
        let sd = var.sqrt();
        let obs = (0..n)
            .map(|_| {
                let c = if rng.random::<bool>() { theta[0] } else { theta[1] };
                let z: f64 = StandardNormal.sample(rng);
                c + sd * z
            })
            .collect();
        Self::new(obs, var)
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    pub fn component_variance(&self) -> f64 {
        self.var
    }

    /// Per-observation log-likelihood pieces `(l1, l2, logsumexp)`, constants dropped.
    #[inline]
    fn components(&self, x: f64, t1: f64, t2: f64) -> (f64, f64, f64) {
        let inv = 0.5 / self.var;
        let l1 = -(x - t1) * (x - t1) * inv;
        let l2 = -(x - t2) * (x - t2) * inv;
        let m = l1.max(l2);
        (l1, l2, m + ((l1 - m).exp() + (l2 - m).exp()).ln())
    }
}

impl Target for GmmPosterior {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let (t1, t2) = (x[0], x[1]);
        let lik: f64 = self.obs.iter().map(|&o| self.components(o, t1, t2).2).sum();
        -0.5 * (t1 * t1 + t2 * t2) + lik
    }

    fn score_coord(&self, j: usize, x: &[f64]) -> f64 {
        let (t1, t2) = (x[0], x[1]);
        let own = x[j];
        let mut acc = -own;
        for &o in &self.obs {
            let (l1, l2, lse) = self.components(o, t1, t2);
            let l = if j == 0 { l1 } else { l2 };
            acc += (l - lse).exp() * (o - own) / self.var;
        }
        acc
    }
}
