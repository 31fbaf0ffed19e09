//! Stein kernels and the discrepancy estimators built on them.
//!
//! Conventions differ by estimator. [`estimate_kccsd`] returns the squared
//! norm `Σ_j ŵ_j²`, while [`estimate_ksd`] returns the norm `||ŵ||₂`. They are
//! kept as-is; compare powers of the two with that in mind.

use ndarray::{Array2, Array3, ArrayView2};
use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Kernel1D, KernelNd};
use crate::rng::{fork_seed, substream};
use crate::targets::{BlockConditionalSampler, ConditionalSampler, Target};

/// One univariate kernel per coordinate, or one shared by all.
#[derive(Debug, Clone)]
pub enum CoordinateKernels {
    Shared(Kernel1D),
    PerCoordinate(Vec<Kernel1D>),
}

impl CoordinateKernels {
    pub fn get(&self, j: usize) -> &Kernel1D {
        match self {
            CoordinateKernels::Shared(k) => k,
            CoordinateKernels::PerCoordinate(ks) => &ks[j],
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        match self {
            CoordinateKernels::PerCoordinate(ks) if ks.len() != d => {
                Err(Error::DimensionMismatch { expected: d, got: ks.len() })
            }
            _ => Ok(()),
        }
    }
}

impl From<Kernel1D> for CoordinateKernels {
    fn from(k: Kernel1D) -> Self {
        CoordinateKernels::Shared(k)
    }
}

#[inline]
fn combine(bx: f64, by: f64, value: f64, grad_x: f64, grad_y: f64, grad_xy: f64) -> f64 {
    bx * by * value + bx * grad_y + by * grad_x + grad_xy
}

/// Complete-conditional Stein kernel `k_cc^j(x_j, y_j; x_{-j})`.
///
/// `bx` is `b_j(x)` and `by` is `b_j` evaluated at `x` with `x_j` replaced by `y_j`.
#[inline]
pub fn cc_stein_kernel_from_scores(k: &Kernel1D, xj: f64, yj: f64, bx: f64, by: f64) -> f64 {
    let t = k.terms(xj, yj);
    combine(bx, by, t.value, t.grad_x, t.grad_y, t.grad_xy)
}

/// Complete-conditional Stein kernel for coordinate `j` at context `x`.
pub fn cc_stein_kernel<T: Target + ?Sized>(j: usize, x: &[f64], yj: f64, target: &T, k: &Kernel1D) -> Result<f64> {
    check_point(target, x)?;
    if j >= x.len() {
        return Err(Error::Config(format!("coordinate {j} out of range for dimension {}", x.len())));
    }
    let bx = target.score_coord(j, x);
    let mut y = x.to_vec();
    y[j] = yj;
    let by = target.score_coord(j, &y);
    let v = cc_stein_kernel_from_scores(k, x[j], yj, bx, by);
    if !v.is_finite() {
        return Err(Error::NonFiniteStein { row: 0, coord: j, value: v });
    }
    Ok(v)
}

fn check_point<T: Target + ?Sized>(target: &T, x: &[f64]) -> Result<()> {
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: x.len() });
    }
    Ok(())
}

/// Coordinate `j` of the KSD Stein kernel `k_0^j(x, y)`.
pub fn ksd_stein_kernel_coord<T: Target + ?Sized>(
    j: usize,
    x: &[f64],
    y: &[f64],
    target: &T,
    k: &KernelNd,
) -> Result<f64> {
    check_point(target, x)?;
    check_point(target, y)?;
    let t = k.coord_terms(j, x, y)?;
    let (bx, by) = (target.score_coord(j, x), target.score_coord(j, y));
    Ok(combine(bx, by, t.value, t.grad_x, t.grad_y, t.grad_xy))
}

/// `Σ_j k_0^j(x, y)` from precomputed scores, written into `per_coord` if given.
#[inline]
fn ksd_pair(x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], k: &KernelNd, per_coord: Option<&mut [f64]>) -> f64 {
    let p = k.pair(x, y);
    let mut total = 0.0;
    match per_coord {
        Some(out) => {
            for j in 0..x.len() {
                let t = p.coord(x[j] - y[j]);
                let v = combine(sx[j], sy[j], t.value, t.grad_x, t.grad_y, t.grad_xy);
                out[j] = v;
                total += v;
            }
        }
        None => {
            for j in 0..x.len() {
                let t = p.coord(x[j] - y[j]);
                total += combine(sx[j], sy[j], t.value, t.grad_x, t.grad_y, t.grad_xy);
            }
        }
    }
    total
}

/// Validated set of disjoint index blocks covering `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    dim: usize,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::Config("empty block in partition".into()));
            }
            for &i in b {
                if i >= dim {
                    return Err(Error::Config(format!("index {i} out of range for dimension {dim}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!("index {i} appears in more than one block")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("index {i} is not covered by the partition")));
        }
        Ok(Self { blocks, dim })
    }

    pub fn singletons(dim: usize) -> Self {
        Self { blocks: (0..dim).map(|j| vec![j]).collect(), dim }
    }

    pub fn full(dim: usize) -> Self {
        Self { blocks: vec![(0..dim).collect()], dim }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn check_block(block: &[usize], d: usize) -> Result<()> {
    if block.is_empty() {
        return Err(Error::Config("empty block".into()));
    }
    for (a, &i) in block.iter().enumerate() {
        if i >= d {
            return Err(Error::Config(format!("index {i} out of range for dimension {d}")));
        }
        if block[..a].contains(&i) {
            return Err(Error::Config(format!("index {i} repeated in block")));
        }
    }
    Ok(())
}

/// Block Stein kernel `k_cc^I(x_I, y_I; x_{-I})` with a kernel on `R^{|I|}`.
pub fn block_stein_kernel<T: Target + ?Sized>(
    block: &[usize],
    x: &[f64],
    y_block: &[f64],
    target: &T,
    k: &KernelNd,
) -> Result<f64> {
    check_point(target, x)?;
    check_block(block, x.len())?;
    if y_block.len() != block.len() {
        return Err(Error::DimensionMismatch { expected: block.len(), got: y_block.len() });
    }
    if k.dim() != block.len() {
        return Err(Error::DimensionMismatch { expected: block.len(), got: k.dim() });
    }
    let mut xb = vec![0.0; block.len()];
    let mut yhat = x.to_vec();
    let mut out = 0.0;
    block_kernel_into(block, x, y_block, target, k, &mut xb, &mut yhat, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn block_kernel_into<T: Target + ?Sized>(
    block: &[usize],
    x: &[f64],
    y_block: &[f64],
    target: &T,
    k: &KernelNd,
    xb: &mut [f64],
    yhat: &mut [f64],
    out: &mut f64,
) {
    for (a, &i) in block.iter().enumerate() {
        xb[a] = x[i];
        yhat[i] = y_block[a];
    }
    let p = k.pair(xb, y_block);
    let mut total = 0.0;
    for (a, &i) in block.iter().enumerate() {
        let t = p.coord(xb[a] - y_block[a]);
        let bx = target.score_coord(i, x);
        let by = target.score_coord(i, yhat);
        total += combine(bx, by, t.value, t.grad_x, t.grad_y, t.grad_xy);
    }
    for &i in block {
        yhat[i] = x[i];
    }
    *out = total;
}

/// Auxiliary conditional draws, indexed `[row, coordinate, draw]`.
///
/// For block estimators the draws of block `I` are stored at the positions of
/// its coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDraws {
    values: Array3<f64>,
}

impl AuxiliaryDraws {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.shape()[2] == 0 {
            return Err(Error::Config("at least one auxiliary draw per coordinate is required".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_y(&self) -> usize {
        self.values.shape()[2]
    }
}

fn check_counts(data: ArrayView2<'_, f64>, d: usize, n_y: usize) -> Result<()> {
    if data.nrows() == 0 {
        return Err(Error::Config("data must contain at least one row".into()));
    }
    if data.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: data.ncols() });
    }
    if n_y == 0 {
        return Err(Error::Config("n_y must be at least 1".into()));
    }
    Ok(())
}

/// Draw `n_y` complete-conditional values per row and coordinate.
///
/// Row `i`, coordinate `j` uses substream `i·d + j` of a master seed taken from `rng`.
pub fn draw_auxiliaries<S: ConditionalSampler + ?Sized>(
    data: ArrayView2<'_, f64>,
    sampler: &S,
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<AuxiliaryDraws> {
    let d = sampler.dim();
    check_counts(data, d, n_y)?;
    let master = fork_seed(rng);
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i).to_vec();
            let mut out = Vec::with_capacity(d * n_y);
            for j in 0..d {
                let mut r = substream(master, (i * d + j) as u64);
                for _ in 0..n_y {
                    let y = sampler.sample_coord(j, &x, &mut r).map_err(|e| Error::Sampler {
                        row: i,
                        coord: j,
                        reason: e.to_string(),
                    })?;
                    out.push(y);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    stack_rows(rows, d, n_y)
}

fn stack_rows(rows: Vec<Vec<f64>>, d: usize, n_y: usize) -> Result<AuxiliaryDraws> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array3::from_shape_vec((n, d, n_y), flat).map_err(|e| Error::Config(e.to_string()))?;
    AuxiliaryDraws::new(values)
}

/// Block analogue of [`draw_auxiliaries`]; block `b` of row `i` uses substream `i·m + b`.
pub fn draw_block_auxiliaries<S: BlockConditionalSampler + ?Sized>(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    sampler: &S,
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<AuxiliaryDraws> {
    let d = partition.dim();
    check_counts(data, d, n_y)?;
    if sampler.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sampler.dim() });
    }
    let m = partition.blocks().len();
    let master = fork_seed(rng);
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i).to_vec();
            let mut out = vec![0.0; d * n_y];
            for (b, block) in partition.blocks().iter().enumerate() {
                let mut r = substream(master, (i * m + b) as u64);
                let mut buf = vec![0.0; block.len()];
                for k in 0..n_y {
                    sampler.sample_block(block, &x, &mut r, &mut buf).map_err(|e| Error::Sampler {
                        row: i,
                        coord: block[0],
                        reason: e.to_string(),
                    })?;
                    for (a, &l) in block.iter().enumerate() {
                        out[l * n_y + k] = buf[a];
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    stack_rows(rows, d, n_y)
}

/// Per-coordinate (or per-block) squared weights and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyEstimate {
    /// `ŵ_j²` for each coordinate or block.
    pub weights: Vec<f64>,
    /// `Ŝ = Σ_j ŵ_j²`.
    pub total: f64,
    pub n: usize,
    pub n_y: usize,
    /// Per-row contributions `h(x^(i))`; their mean equals `total`.
    pub row_values: Vec<f64>,
}

impl DiscrepancyEstimate {
    /// Standard error of `total` from the spread of the row contributions.
    pub fn standard_error(&self) -> f64 {
        let n = self.row_values.len();
        if n < 2 {
            return f64::NAN;
        }
        let mean = self.row_values.iter().sum::<f64>() / n as f64;
        let var = self.row_values.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    fn from_matrix(per: Array2<f64>, n_y: usize) -> Self {
        let n = per.nrows();
        let weights: Vec<f64> = per.columns().into_iter().map(|c| c.sum() / n as f64).collect();
        let total = weights.iter().sum();
        let row_values = per.rows().into_iter().map(|r| r.sum()).collect();
        Self { weights, total, n, n_y, row_values }
    }
}

/// KCC-SD from precomputed auxiliary draws.
pub fn kccsd_from_draws<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    draws: &AuxiliaryDraws,
    kernels: &CoordinateKernels,
) -> Result<DiscrepancyEstimate> {
    let d = target.dim();
    check_counts(data, d, draws.n_y())?;
    kernels.check(d)?;
    if draws.n_rows() != data.nrows() || draws.dim() != d {
        return Err(Error::Config(format!(
            "auxiliary draws have shape {:?}, data is {}x{}",
            draws.values().shape(),
            data.nrows(),
            d
        )));
    }
    let n_y = draws.n_y();
    let aux = draws.values();
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i).to_vec();
            let mut y = x.clone();
            let mut out = vec![0.0; d];
            for j in 0..d {
                let k = kernels.get(j);
                let bx = target.score_coord(j, &x);
                let mut acc = 0.0;
                for s in 0..n_y {
                    let yj = aux[[i, j, s]];
                    y[j] = yj;
                    let by = target.score_coord(j, &y);
                    let v = cc_stein_kernel_from_scores(k, x[j], yj, bx, by);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteStein { row: i, coord: j, value: v });
                    }
                    acc += v;
                }
                y[j] = x[j];
                out[j] = acc / n_y as f64;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let per = Array2::from_shape_vec((data.nrows(), d), flat).expect("shape checked");
    Ok(DiscrepancyEstimate::from_matrix(per, n_y))
}

/// Exact KCC-SD: `ŵ_j² = (1/(n·n_y)) Σ_i Σ_k k_cc^j(x_j^(i), y_j^(i,k); x_{-j}^(i))`.
pub fn estimate_kccsd<T: Target + ?Sized, S: ConditionalSampler + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    sampler: &S,
    kernels: &CoordinateKernels,
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<DiscrepancyEstimate> {
    if sampler.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: sampler.dim() });
    }
    let draws = draw_auxiliaries(data, sampler, n_y, rng)?;
    kccsd_from_draws(data, target, &draws, kernels)
}

/// Block KCC-SD from precomputed block draws, one kernel per block.
pub fn block_kccsd_from_draws<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    target: &T,
    draws: &AuxiliaryDraws,
    kernels: &[KernelNd],
) -> Result<DiscrepancyEstimate> {
    let d = target.dim();
    check_counts(data, d, draws.n_y())?;
    if partition.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: partition.dim() });
    }
    let blocks = partition.blocks();
    if kernels.len() != blocks.len() {
        return Err(Error::DimensionMismatch { expected: blocks.len(), got: kernels.len() });
    }
    for (b, k) in blocks.iter().zip(kernels) {
        if k.dim() != b.len() {
            return Err(Error::DimensionMismatch { expected: b.len(), got: k.dim() });
        }
    }
    if draws.n_rows() != data.nrows() || draws.dim() != d {
        return Err(Error::Config("auxiliary draws do not match the data".into()));
    }
    let n_y = draws.n_y();
    let aux = draws.values();
    let m = blocks.len();
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i).to_vec();
            let mut yhat = x.clone();
            let mut out = vec![0.0; m];
            for (b, block) in blocks.iter().enumerate() {
                let mut xb = vec![0.0; block.len()];
                let mut yb = vec![0.0; block.len()];
                let mut acc = 0.0;
                for s in 0..n_y {
                    for (a, &l) in block.iter().enumerate() {
                        yb[a] = aux[[i, l, s]];
                    }
                    let mut v = 0.0;
                    block_kernel_into(block, &x, &yb, target, &kernels[b], &mut xb, &mut yhat, &mut v);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteStein { row: i, coord: block[0], value: v });
                    }
                    acc += v;
                }
                out[b] = acc / n_y as f64;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let per = Array2::from_shape_vec((data.nrows(), m), flat).expect("shape checked");
    Ok(DiscrepancyEstimate::from_matrix(per, n_y))
}

/// Block KCC-SD with draws from a block conditional sampler.
pub fn estimate_block_kccsd<T: Target + ?Sized, S: BlockConditionalSampler + ?Sized>(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    target: &T,
    sampler: &S,
    kernels: &[KernelNd],
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<DiscrepancyEstimate> {
    let draws = draw_block_auxiliaries(data, partition, sampler, n_y, rng)?;
    block_kccsd_from_draws(data, partition, target, &draws, kernels)
}

/// U- or V-statistic for the KSD pair average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KsdStatistic {
    /// Average over all ordered pairs including the diagonal.
    #[default]
    V,
    /// Average over distinct pairs only.
    U,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsdEstimate {
    /// `ŵ_j²` per coordinate.
    pub weights: Vec<f64>,
    /// `||ŵ||₂`. Negative U-statistic sums are clamped to zero before the root.
    pub value: f64,
}

fn scores_of<T: Target + ?Sized>(data: ArrayView2<'_, f64>, target: &T) -> Result<Array2<f64>> {
    let d = target.dim();
    if data.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: data.ncols() });
    }
    let mut s = Array2::zeros((data.nrows(), d));
    for (i, row) in data.rows().into_iter().enumerate() {
        let x = row.to_vec();
        for j in 0..d {
            let v = target.score_coord(j, &x);
            if !v.is_finite() {
                return Err(Error::NonFiniteStein { row: i, coord: j, value: v });
            }
            s[[i, j]] = v;
        }
    }
    Ok(s)
}

/// KSD `||ŵ||₂` with `ŵ_j²` the chosen pair average of `k_0^j`.
pub fn estimate_ksd<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    k: &KernelNd,
    statistic: KsdStatistic,
) -> Result<KsdEstimate> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Config(format!("KSD needs at least 2 rows, got {n}")));
    }
    let d = target.dim();
    if k.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
    }
    let scores = scores_of(data, target)?;
    let data = data.as_standard_layout();
    let scores = scores.as_standard_layout();
    let partial: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let xa = data.row(a);
            let sa = scores.row(a);
            let (xa, sa) = (xa.as_slice().unwrap(), sa.as_slice().unwrap());
            let mut acc = vec![0.0; d];
            let mut buf = vec![0.0; d];
            let start = if statistic == KsdStatistic::V { a } else { a + 1 };
            for b in start..n {
                let xb = data.row(b);
                let sb = scores.row(b);
                ksd_pair(xa, xb.as_slice().unwrap(), sa, sb.as_slice().unwrap(), k, Some(&mut buf));
                let w = if a == b { 1.0 } else { 2.0 };
                for (acc_j, v) in acc.iter_mut().zip(&buf) {
                    *acc_j += w * v;
                }
            }
            acc
        })
        .collect();
    let pairs = match statistic {
        KsdStatistic::V => (n * n) as f64,
        KsdStatistic::U => (n * (n - 1)) as f64,
    };
    let mut weights = vec![0.0; d];
    for row in &partial {
        for (w, v) in weights.iter_mut().zip(row) {
            *w += v;
        }
    }
    weights.iter_mut().for_each(|w| *w /= pairs);
    let value = weights.iter().sum::<f64>().max(0.0).sqrt();
    Ok(KsdEstimate { weights, value })
}

/// Matrix `H_ab = Σ_j k_0^j(x^(a), x^(b))`.
pub fn stein_gram<T: Target + ?Sized>(data: ArrayView2<'_, f64>, target: &T, k: &KernelNd) -> Result<Array2<f64>> {
    let n = data.nrows();
    let d = target.dim();
    if k.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
    }
    let scores = scores_of(data, target)?;
    let data = data.as_standard_layout();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let xa = data.row(a);
            let sa = scores.row(a);
            let (xa, sa) = (xa.as_slice().unwrap(), sa.as_slice().unwrap());
            (a..n)
                .map(|b| ksd_pair(xa, data.row(b).as_slice().unwrap(), sa, scores.row(b).as_slice().unwrap(), k, None))
                .collect()
        })
        .collect();
    let mut h = Array2::zeros((n, n));
    for (a, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            h[[a, a + off]] = v;
            h[[a + off, a]] = v;
        }
    }
    Ok(h)
}

/// Monte-Carlo estimate of the optimal test function
/// `f*_j(u; x_{-j}) = E_{y ~ q(·|x_{-j})}[k(u, y) b_j(y, x_{-j}) + ∂_y k(u, y)]`
/// on each grid point, sharing one set of `n_mc` draws.
#[allow(clippy::too_many_arguments)]
pub fn optimal_test_function<T: Target + ?Sized, S: ConditionalSampler + ?Sized>(
    j: usize,
    context: &[f64],
    grid: &[f64],
    sampler: &S,
    target: &T,
    k: &Kernel1D,
    n_mc: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    check_point(target, context)?;
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    if j >= context.len() {
        return Err(Error::Config(format!("coordinate {j} out of range")));
    }
    let mut y = context.to_vec();
    let mut draws = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let yj = sampler.sample_coord(j, context, rng)?;
        y[j] = yj;
        draws.push((yj, target.score_coord(j, &y)));
    }
    Ok(grid
        .iter()
        .map(|&u| {
            let s: f64 = draws
                .iter()
                .map(|&(yj, by)| {
                    let t = k.terms(u, yj);
                    t.value * by + t.grad_y
                })
                .sum();
            s / n_mc as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::targets::CorrelatedGaussian;
    use ndarray::array;

    #[test]
    fn cc_kernel_standard_normal_values() {
        let p = CorrelatedGaussian::standard(1);
        let k = Kernel1D::rbf(1.0).unwrap();
        assert!((cc_stein_kernel(0, &[0.0], 0.0, &p, &k).unwrap() - 1.0).abs() < 1e-15);
        assert!((cc_stein_kernel(0, &[1.0], 1.0, &p, &k).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cc_kernel_is_symmetric() {
        let p = CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap();
        let k = Kernel1D::imq(1.0, 0.5).unwrap();
        let a = cc_stein_kernel(1, &[0.2, 0.7, -1.0], -0.4, &p, &k).unwrap();
        let b = cc_stein_kernel(1, &[0.2, -0.4, -1.0], 0.7, &p, &k).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn ksd_kernel_at_origin() {
        let p = CorrelatedGaussian::standard(4);
        let k = KernelNd::rbf(1.0, 4).unwrap();
        for j in 0..4 {
            assert!((ksd_stein_kernel_coord(j, &[0.0; 4], &[0.0; 4], &p, &k).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ksd_and_cc_coincide_in_one_dimension() {
        let p = CorrelatedGaussian::standard(1);
        let k1 = Kernel1D::rbf(0.8).unwrap();
        let kn = KernelNd::rbf(0.8, 1).unwrap();
        let a = cc_stein_kernel(0, &[0.3], -1.2, &p, &k1).unwrap();
        let b = ksd_stein_kernel_coord(0, &[0.3], &[-1.2], &p, &kn).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn singleton_block_is_cc_kernel() {
        let p = CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap();
        let k1 = Kernel1D::rbf(1.0).unwrap();
        let kn = KernelNd::rbf(1.0, 1).unwrap();
        let x = [0.1, -0.6, 1.3];
        let a = cc_stein_kernel(2, &x, 0.4, &p, &k1).unwrap();
        let b = block_stein_kernel(&[2], &x, &[0.4], &p, &kn).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(Partition::new(vec![vec![0, 1]], 3).is_err());
        assert!(Partition::new(vec![vec![0, 3]], 3).is_err());
        assert!(Partition::new(vec![vec![0], vec![]], 1).is_err());
        assert!(Partition::new(vec![vec![2, 0], vec![1]], 3).is_ok());
    }

    #[test]
    fn single_row_single_draw_is_the_kernel_sum() {
        let p = CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap();
        let k = Kernel1D::rbf(1.0).unwrap();
        let data = array![[0.3, -0.2, 0.9]];
        let draws = AuxiliaryDraws::new(Array3::from_shape_vec((1, 3, 1), vec![0.5, 1.0, -0.7]).unwrap()).unwrap();
        let est = kccsd_from_draws(data.view(), &p, &draws, &k.into()).unwrap();
        let x = [0.3, -0.2, 0.9];
        let expect: f64 = [0.5, 1.0, -0.7]
            .iter()
            .enumerate()
            .map(|(j, &y)| cc_stein_kernel(j, &x, y, &p, &k).unwrap())
            .sum();
        assert!((est.total - expect).abs() < 1e-14);
        assert_eq!(est.row_values.len(), 1);
    }

    #[test]
    fn identical_rows_ksd() {
        let p = CorrelatedGaussian::standard(2);
        let k = KernelNd::rbf(1.0, 2).unwrap();
        let x = [0.5, -1.0];
        let data = array![[0.5, -1.0], [0.5, -1.0]];
        let est = estimate_ksd(data.view(), &p, &k, KsdStatistic::V).unwrap();
        let diag: f64 = (0..2).map(|j| ksd_stein_kernel_coord(j, &x, &x, &p, &k).unwrap()).sum();
        assert!((est.value - diag.sqrt()).abs() < 1e-14);
        assert!(estimate_ksd(array![[0.0, 0.0]].view(), &p, &k, KsdStatistic::V).is_err());
    }

    #[test]
    fn stein_gram_matches_pairwise_sum() {
        let p = CorrelatedGaussian::equicorrelated(3, 0.5, 1.0).unwrap();
        let k = KernelNd::imq(1.0, 0.5, 3).unwrap();
        let data = CorrelatedGaussian::standard(3).sample_rows(6, 2);
        let h = stein_gram(data.view(), &p, &k).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let (xa, xb) = (data.row(a).to_vec(), data.row(b).to_vec());
                let s: f64 = (0..3).map(|j| ksd_stein_kernel_coord(j, &xa, &xb, &p, &k).unwrap()).sum();
                assert!((h[[a, b]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_scores_abort() {
        struct Exploding;
        impl Target for Exploding {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn score_coord(&self, _: usize, x: &[f64]) -> f64 {
                1.0 / x[0]
            }
        }
        let k = Kernel1D::rbf(1.0).unwrap();
        let data = array![[1.0], [0.0]];
        let draws = AuxiliaryDraws::new(Array3::from_elem((2, 1, 1), 0.5)).unwrap();
        let err = kccsd_from_draws(data.view(), &Exploding, &draws, &k.into()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteStein { row: 1, coord: 0, .. }));
    }

    #[test]
    fn optimal_test_function_single_draw() {
        let p = CorrelatedGaussian::standard(1);
        let k = Kernel1D::rbf(1.0).unwrap();
        let grid = [-1.0, 0.0, 2.0];
        let f = optimal_test_function(0, &[0.0], &grid, &p, &p, &k, 1, &mut seeded(4)).unwrap();
        let y = p.sample_coord(0, &[0.0], &mut seeded(4)).unwrap();
        for (u, v) in grid.iter().zip(&f) {
            let expect = k.eval(*u, y) * (-y) + k.grad_y(*u, y);
            assert!((v - expect).abs() < 1e-15);
        }
    }

    trait SampleRows {
        fn sample_rows(&self, n: usize, seed: u64) -> Array2<f64>;
    }

    impl SampleRows for CorrelatedGaussian {
        fn sample_rows(&self, n: usize, seed: u64) -> Array2<f64> {
            crate::targets::DataSource::sample(self, n, &mut seeded(seed))
        }
    }
}
