//! Radial positive-definite kernels with analytic derivatives.
//!
//! Both families are functions of the squared distance `s = ||x - y||²`,
//! `k(x, y) = φ(s)`:
//!
//! | family | φ(s) |
//! |--------|------|
//! | RBF    | `exp(-s / 2σ²)` |
//! | IMQ    | `(c² + s)^(-β)` |
//!
//! Writing `δ = x_j - y_j`, the partials used by the Stein kernels are
//!
//! ```text
//! ∂k/∂x_j       =  2 φ'(s) δ
//! ∂k/∂y_j       = -2 φ'(s) δ
//! ∂²k/∂x_j∂y_j  = -2 φ'(s) - 4 φ''(s) δ²
//! ```

use crate::error::{Error, Result};

/// Kernel family and its parameters. Validated at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// Gaussian kernel with bandwidth `sigma`.
    Rbf { sigma: f64 },
    /// Inverse multiquadric `(c² + s)^(-beta)` with `beta` in (0, 1).
    Imq { c: f64, beta: f64 },
}

impl KernelFamily {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Config(format!("RBF bandwidth must be positive, got {sigma}")));
        }
        Ok(KernelFamily::Rbf { sigma })
    }

    pub fn imq(c: f64, beta: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Config(format!("IMQ offset c must be positive, got {c}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Config(format!("IMQ exponent beta must lie in (0, 1), got {beta}")));
        }
        Ok(KernelFamily::Imq { c, beta })
    }

    /// IMQ with c = 1, β = 0.5.
    pub fn imq_default() -> Self {
        KernelFamily::Imq { c: 1.0, beta: 0.5 }
    }

    /// `(φ(s), φ'(s), φ''(s))`.
    #[inline]
    fn profile(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            KernelFamily::Rbf { sigma } => {
                let inv = 1.0 / (2.0 * sigma * sigma);
                let v = (-s * inv).exp();
                (v, -inv * v, inv * inv * v)
            }
            KernelFamily::Imq { c, beta } => {
                let base = c * c + s;
                let v = base.powf(-beta);
                let d1 = -beta * v / base;
                let d2 = beta * (beta + 1.0) * v / (base * base);
                (v, d1, d2)
            }
        }
    }
}

/// Value and partials of a radial kernel at one coordinate offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTerms {
    pub value: f64,
    pub grad_x: f64,
    pub grad_y: f64,
    pub grad_xy: f64,
}

#[inline]
fn coord_terms(value: f64, d1: f64, d2: f64, delta: f64) -> KernelTerms {
    let gx = 2.0 * d1 * delta;
    KernelTerms {
        value,
        grad_x: gx,
        grad_y: -gx,
        grad_xy: -2.0 * d1 - 4.0 * d2 * delta * delta,
    }
}

/// Univariate kernel `k: R × R → R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel1D {
    family: KernelFamily,
}

impl Kernel1D {
    pub fn new(family: KernelFamily) -> Self {
        Self { family }
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        KernelFamily::rbf(sigma).map(Self::new)
    }

    pub fn imq(c: f64, beta: f64) -> Result<Self> {
        KernelFamily::imq(c, beta).map(Self::new)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.family.profile(d * d).0
    }

    pub fn grad_x(&self, x: f64, y: f64) -> f64 {
        self.terms(x, y).grad_x
    }

    pub fn grad_y(&self, x: f64, y: f64) -> f64 {
        self.terms(x, y).grad_y
    }

    pub fn grad_xy(&self, x: f64, y: f64) -> f64 {
        self.terms(x, y).grad_xy
    }

    /// All four quantities from one profile evaluation.
    #[inline]
    pub fn terms(&self, x: f64, y: f64) -> KernelTerms {
        let d = x - y;
        let (v, d1, d2) = self.family.profile(d * d);
        coord_terms(v, d1, d2, d)
    }
}

/// Multivariate kernel on `R^dim` through the squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelNd {
    family: KernelFamily,
    dim: usize,
}

/// Radial profile evaluated at one pair of points, reusable across coordinates.
#[derive(Debug, Clone, Copy)]
pub struct PairProfile {
    pub value: f64,
    d1: f64,
    d2: f64,
}

impl PairProfile {
    /// Partials in coordinate `j` given the offset `x_j - y_j`.
    #[inline]
    pub fn coord(&self, delta: f64) -> KernelTerms {
        coord_terms(self.value, self.d1, self.d2, delta)
    }
}

impl KernelNd {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("kernel dimension must be positive".into()));
        }
        Ok(Self { family, dim })
    }

    pub fn rbf(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::rbf(sigma)?, dim)
    }

    pub fn imq(c: f64, beta: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::imq(c, beta)?, dim)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        for len in [x.len(), y.len()] {
            if len != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: len });
            }
        }
        Ok(())
    }

    /// Profile of the pair; panics in debug builds on a length mismatch.
    #[inline]
    pub fn pair(&self, x: &[f64], y: &[f64]) -> PairProfile {
        debug_assert_eq!(x.len(), y.len());
        let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let (value, d1, d2) = self.family.profile(s);
        PairProfile { value, d1, d2 }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        Ok(self.pair(x, y).value)
    }

    pub fn grad_x_coord(&self, j: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        self.coord_terms(j, x, y).map(|t| t.grad_x)
    }

    pub fn grad_y_coord(&self, j: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        self.coord_terms(j, x, y).map(|t| t.grad_y)
    }

    pub fn grad_xy_coord(&self, j: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        self.coord_terms(j, x, y).map(|t| t.grad_xy)
    }

    pub fn coord_terms(&self, j: usize, x: &[f64], y: &[f64]) -> Result<KernelTerms> {
        self.check(x, y)?;
        if j >= self.dim {
            return Err(Error::Config(format!("coordinate {j} out of range for dimension {}", self.dim)));
        }
        Ok(self.pair(x, y).coord(x[j] - y[j]))
    }
}

/// Median of all pairwise Euclidean distances between rows.
///
/// Even counts average the two middle order statistics.
pub fn median_heuristic(samples: ndarray::ArrayView2<'_, f64>) -> Result<f64> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("median heuristic needs at least 2 rows, got {n}")));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        let ra = samples.row(a);
        for b in (a + 1)..n {
            let s: f64 = ra.iter().zip(samples.row(b)).map(|(u, v)| (u - v) * (u - v)).sum();
            dists.push(s.sqrt());
        }
    }
    let median = median_in_place(&mut dists);
    if median <= 0.0 || !median.is_finite() {
        if dists.iter().all(|&d| d == 0.0) {
            return Err(Error::DegenerateSample("all pairwise distances are zero".into()));
        }
        return Err(Error::DegenerateSample(format!("median pairwise distance is {median}")));
    }
    Ok(median)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let len = v.len();
    let mid = len / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_grad_x(k: &Kernel1D, x: f64, y: f64) -> f64 {
        let h = 1e-5;
        (k.eval(x + h, y) - k.eval(x - h, y)) / (2.0 * h)
    }

    fn fd_grad_xy(k: &Kernel1D, x: f64, y: f64) -> f64 {
        let h = 1e-4;
        (k.eval(x + h, y + h) - k.eval(x + h, y - h) - k.eval(x - h, y + h) + k.eval(x - h, y - h))
            / (4.0 * h * h)
    }

    #[test]
    fn rbf_values() {
        let k = Kernel1D::rbf(1.0).unwrap();
        assert_eq!(k.eval(0.0, 0.0), 1.0);
        assert!((k.eval(0.0, 2.0) - 0.135_335_283_236_612_7).abs() < 1e-12);
        assert_eq!(k.grad_x(0.0, 0.0), 0.0);
        assert!((k.grad_x(1.0, 0.0) + (-0.5f64).exp()).abs() < 1e-12);
        assert!((k.grad_xy(0.0, 0.0) - 1.0).abs() < 1e-15);
        let k2 = Kernel1D::rbf(2.0).unwrap();
        for a in [-3.0, 0.0, 1.7] {
            assert!((k2.grad_xy(a, a) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn imq_diagonal_is_one() {
        let k = Kernel1D::imq(1.0, 0.5).unwrap();
        for x in [-2.0, 0.0, 3.5] {
            assert_eq!(k.eval(x, x), 1.0);
        }
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(Kernel1D::rbf(0.0).is_err());
        assert!(Kernel1D::rbf(-1.0).is_err());
        assert!(Kernel1D::imq(0.0, 0.5).is_err());
        assert!(Kernel1D::imq(1.0, 1.0).is_err());
        assert!(KernelNd::rbf(1.0, 0).is_err());
    }

    #[test]
    fn univariate_derivatives_match_finite_differences() {
        let kernels = [Kernel1D::rbf(1.0).unwrap(), Kernel1D::rbf(0.7).unwrap(), Kernel1D::imq(1.0, 0.5).unwrap()];
        for k in &kernels {
            for &(x, y) in &[(0.3, -0.4), (1.2, 0.1), (-2.0, 0.5)] {
                let a = k.grad_x(x, y);
                assert!((a - fd_grad_x(k, x, y)).abs() <= 1e-6 * a.abs().max(1e-3));
                let b = k.grad_xy(x, y);
                assert!((b - fd_grad_xy(k, x, y)).abs() <= 1e-4 * b.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn nd_matches_1d_in_one_dimension() {
        let k1 = Kernel1D::rbf(1.3).unwrap();
        let kn = KernelNd::rbf(1.3, 1).unwrap();
        let (x, y) = (0.4, -1.1);
        assert_eq!(k1.eval(x, y), kn.eval(&[x], &[y]).unwrap());
        assert_eq!(k1.grad_xy(x, y), kn.grad_xy_coord(0, &[x], &[y]).unwrap());
    }

    #[test]
    fn nd_rejects_dimension_mismatch() {
        let k = KernelNd::rbf(1.0, 3).unwrap();
        assert!(k.eval(&[0.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
        assert!(k.grad_x_coord(3, &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn median_of_three_points() {
        let s = array![[0.0], [1.0], [3.0]];
        assert_eq!(median_heuristic(s.view()).unwrap(), 2.0);
    }

    #[test]
    fn median_even_count_averages() {
        // distances {1, 2, 3, 1, 2, 1}: sorted 1 1 1 2 2 3
        let s = array![[0.0], [1.0], [2.0], [3.0]];
        assert_eq!(median_heuristic(s.view()).unwrap(), 1.5);
    }

    #[test]
    fn median_degenerate() {
        let s = array![[0.0], [0.0]];
        assert!(matches!(median_heuristic(s.view()), Err(Error::DegenerateSample(_))));
        assert!(median_heuristic(array![[1.0]].view()).is_err());
    }
}
