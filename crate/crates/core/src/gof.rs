//! Wild-bootstrap goodness-of-fit tests.
//!
//! For KCC-SD the statistic is the mean of the per-row values
//! `h(x^(i)) = Σ_j (1/n_y) Σ_k k_cc^j(x_j^(i), y_j^(i,k); x_{-j}^(i))`,
//! `T_n = (1/n) Σ_i h_i`, and each bootstrap replicate reweights the same
//! values with fresh Rademacher signs, `R_n = (1/n) Σ_i ε_i h_i`.
//!
//! The KSD baseline uses the degenerate V-statistic form instead:
//! statistic `(1/n) Σ_{a,b} H_ab` and replicates `(1/n) Σ_{a,b} ε_a ε_b H_ab`
//! with `H_ab = Σ_j k_0^j(x^(a), x^(b))`.
//!
//! The p-value is the fraction of replicates strictly greater than the
//! statistic. The reject decision compares the statistic with the order
//! statistic at zero-based index `⌈(1-α)L⌉` of the sorted replicates.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::cond_model::{estimate_approx_kccsd, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, KernelFamily, KernelNd};
use crate::rng::{fork_seed, substream, StreamRng};
use crate::stein::{estimate_kccsd, stein_gram, CoordinateKernels};
use crate::targets::{ConditionalSampler, DataSource, Target};

/// Per-row contributions `h(x^(i))` of the KCC-SD statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct HValues(Vec<f64>);

impl HValues {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("h-values must be non-empty".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `T_n`.
    pub fn statistic(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Where the auxiliary conditional draws come from.
#[derive(Clone, Copy)]
pub enum AuxSource<'a> {
    /// A sampler for the complete conditionals of the data distribution.
    Conditional(&'a dyn ConditionalSampler),
    /// Histogram models fitted on the leading rows; `h` covers the test rows only.
    Learned(&'a TrainConfig),
}

/// Per-row h-values for the chosen auxiliary source.
pub fn compute_h<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    aux: AuxSource<'_>,
    kernels: &CoordinateKernels,
    n_y: usize,
    rng: &mut dyn RngCore,
) -> Result<HValues> {
    let est = match aux {
        AuxSource::Conditional(s) => estimate_kccsd(data, target, s, kernels, n_y, rng)?,
        AuxSource::Learned(cfg) => estimate_approx_kccsd(data, target, cfg, kernels, n_y, rng)?,
    };
    HValues::new(est.row_values)
}

/// `L × n` matrix of independent ±1 signs.
pub fn rademacher_signs(n: usize, replicates: usize, rng: &mut dyn RngCore) -> Array2<f64> {
    Array2::from_shape_simple_fn((replicates, n), || if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// One replicate `(1/n) Σ_i ε_i h_i` for given signs.
pub fn bootstrap_replicate(h: &HValues, signs: &[f64]) -> f64 {
    debug_assert_eq!(signs.len(), h.len());
    h.0.iter().zip(signs).map(|(v, e)| e * v).sum::<f64>() / h.len() as f64
}

/// Replicates for each row of `signs`.
pub fn wild_bootstrap_with_signs(h: &HValues, signs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if signs.ncols() != h.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: signs.ncols() });
    }
    Ok(signs
        .rows()
        .into_iter()
        .map(|row| bootstrap_replicate(h, &row.to_vec()))
        .collect())
}

/// `L` wild-bootstrap replicates with fresh Rademacher signs.
pub fn wild_bootstrap(h: &HValues, replicates: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if replicates == 0 {
        return Err(Error::Config("at least one bootstrap replicate is required".into()));
    }
    let signs = rademacher_signs(h.len(), replicates, rng);
    wild_bootstrap_with_signs(h, signs.view())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Sorted replicate at zero-based index `⌈(1-α)L⌉`, clamped to the last.
pub fn empirical_quantile(replicates: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if replicates.is_empty() {
        return Err(Error::Config("no replicates".into()));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let l = sorted.len();
    // the 1e-9 guard keeps products like 0.95·500 from rounding up past an integer
    let idx = (((1.0 - alpha) * l as f64) - 1e-9).ceil().max(0.0) as usize;
    Ok(sorted[idx.min(l - 1)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub quantile: f64,
    pub reject: bool,
    pub alpha: f64,
}

impl GofResult {
    pub fn from_replicates(statistic: f64, replicates: Vec<f64>, alpha: f64) -> Result<Self> {
        let quantile = empirical_quantile(&replicates, alpha)?;
        let above = replicates.iter().filter(|&&r| r > statistic).count();
        let p_value = above as f64 / replicates.len() as f64;
        Ok(Self {
            statistic,
            p_value,
            quantile,
            reject: statistic > quantile,
            alpha,
            replicates,
        })
    }
}

/// KCC-SD goodness-of-fit test: h-values, `L` replicates, quantile rule.
#[allow(clippy::too_many_arguments)]
pub fn gof_test<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    aux: AuxSource<'_>,
    kernels: &CoordinateKernels,
    n_y: usize,
    replicates: usize,
    alpha: f64,
    rng: &mut dyn RngCore,
) -> Result<GofResult> {
    check_alpha(alpha)?;
    let h = compute_h(data, target, aux, kernels, n_y, rng)?;
    gof_from_h(&h, replicates, alpha, rng)
}

/// Steps 1-4 of the test given precomputed h-values.
pub fn gof_from_h(h: &HValues, replicates: usize, alpha: f64, rng: &mut dyn RngCore) -> Result<GofResult> {
    let reps = wild_bootstrap(h, replicates, rng)?;
    GofResult::from_replicates(h.statistic(), reps, alpha)
}

/// KSD statistic `n·V_n` and its degenerate wild-bootstrap replicates for `signs` (`L × n`).
pub fn ksd_bootstrap_from_gram(gram: &Array2<f64>, signs: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
    let n = gram.nrows();
    if signs.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: signs.ncols() });
    }
    let statistic = gram.sum() / n as f64;
    // (L × n)(n × n) then row-wise dot with the signs
    let weighted = signs.dot(gram);
    let reps = weighted
        .rows()
        .into_iter()
        .zip(signs.rows())
        .map(|(w, e)| w.dot(&e) / n as f64)
        .collect();
    Ok((statistic, reps))
}

/// KSD goodness-of-fit test with the degenerate V-statistic wild bootstrap.
pub fn ksd_gof_test<T: Target + ?Sized>(
    data: ArrayView2<'_, f64>,
    target: &T,
    k: &KernelNd,
    replicates: usize,
    alpha: f64,
    rng: &mut dyn RngCore,
) -> Result<GofResult> {
    check_alpha(alpha)?;
    if data.nrows() < 2 {
        return Err(Error::Config("KSD test needs at least 2 rows".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("at least one bootstrap replicate is required".into()));
    }
    let gram = stein_gram(data, target, k)?;
    let signs = rademacher_signs(data.nrows(), replicates, rng);
    let (statistic, reps) = ksd_bootstrap_from_gram(&gram, signs.view())?;
    GofResult::from_replicates(statistic, reps, alpha)
}

/// One repetition of a power study: fresh data, one test.
pub trait PowerScenario: Sync {
    fn run_once(&self, n: usize, replicates: usize, alpha: f64, rng: &mut StreamRng) -> Result<GofResult>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    /// Fraction of repetitions with `p_value < alpha`.
    pub power: f64,
    pub p_values: Vec<f64>,
    /// Repetitions whose quantile rule rejected.
    pub rejections: usize,
}

/// Rejection rate over `n_reps` repetitions; repetition `r` uses substream `r`.
pub fn estimate_power<S: PowerScenario + ?Sized>(
    scenario: &S,
    n: usize,
    n_reps: usize,
    alpha: f64,
    replicates: usize,
    rng: &mut dyn RngCore,
) -> Result<PowerEstimate> {
    check_alpha(alpha)?;
    if n_reps == 0 {
        return Err(Error::Config("n_reps must be at least 1".into()));
    }
    let master = fork_seed(rng);
    let results: Vec<GofResult> = (0..n_reps)
        .into_par_iter()
        .map(|r| scenario.run_once(n, replicates, alpha, &mut substream(master, r as u64)))
        .collect::<Result<_>>()?;
    let p_values: Vec<f64> = results.iter().map(|g| g.p_value).collect();
    let hits = p_values.iter().filter(|&&p| p < alpha).count();
    Ok(PowerEstimate {
        power: hits as f64 / n_reps as f64,
        rejections: results.iter().filter(|g| g.reject).count(),
        p_values,
    })
}

/// How the KSD baseline picks its kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KsdKernelRule {
    /// RBF with the median pairwise distance of each data set as bandwidth.
    MedianRbf,
    Fixed(KernelFamily),
}

/// Test statistic used by a [`GofScenario`].
#[derive(Clone)]
pub enum TestMethod {
    KccsdExact {
        sampler: Arc<dyn ConditionalSampler>,
        kernels: CoordinateKernels,
        n_y: usize,
    },
    KccsdApprox {
        cfg: TrainConfig,
        kernels: CoordinateKernels,
        n_y: usize,
    },
    Ksd(KsdKernelRule),
}

/// Data from `source`, tested against `target` with `method`.
#[derive(Clone)]
pub struct GofScenario {
    pub source: Arc<dyn DataSource>,
    pub target: Arc<dyn Target>,
    pub method: TestMethod,
}

impl GofScenario {
    /// Run the configured test on given data.
    pub fn test(&self, data: ArrayView2<'_, f64>, replicates: usize, alpha: f64, rng: &mut dyn RngCore) -> Result<GofResult> {
        let target = self.target.as_ref();
        match &self.method {
            TestMethod::KccsdExact { sampler, kernels, n_y } => gof_test(
                data,
                target,
                AuxSource::Conditional(sampler.as_ref()),
                kernels,
                *n_y,
                replicates,
                alpha,
                rng,
            ),
            TestMethod::KccsdApprox { cfg, kernels, n_y } => {
                gof_test(data, target, AuxSource::Learned(cfg), kernels, *n_y, replicates, alpha, rng)
            }
            TestMethod::Ksd(rule) => {
                let family = match rule {
                    KsdKernelRule::MedianRbf => KernelFamily::rbf(median_heuristic(data)?)?,
                    KsdKernelRule::Fixed(f) => *f,
                };
                let k = KernelNd::new(family, target.dim())?;
                ksd_gof_test(data, target, &k, replicates, alpha, rng)
            }
        }
    }
}

impl PowerScenario for GofScenario {
    fn run_once(&self, n: usize, replicates: usize, alpha: f64, rng: &mut StreamRng) -> Result<GofResult> {
        let data = self.source.sample(n, rng);
        self.test(data.view(), replicates, alpha, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn hand_evaluated_quantile_rule() {
        let g = GofResult::from_replicates(1.5, vec![-1.0, 0.0, 1.0, 2.0], 0.25).unwrap();
        assert_eq!(g.quantile, 2.0);
        assert!(!g.reject);
        assert_eq!(g.p_value, 0.25);
    }

    #[test]
    fn extreme_statistics() {
        let reps = vec![0.5, 1.0, 2.0, 3.0];
        let low = GofResult::from_replicates(0.0, reps.clone(), 0.05).unwrap();
        assert_eq!(low.p_value, 1.0);
        assert!(!low.reject);
        let high = GofResult::from_replicates(10.0, reps, 0.05).unwrap();
        assert_eq!(high.p_value, 0.0);
        assert!(high.reject);
    }

    #[test]
    fn quantile_index_at_exact_products() {
        // 0.95 · 500 = 475 exactly: zero-based index 475
        let reps: Vec<f64> = (0..500).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&reps, 0.05).unwrap(), 475.0);
        assert!(empirical_quantile(&reps, 0.0).is_err());
        assert!(empirical_quantile(&reps, 1.0).is_err());
    }

    #[test]
    fn all_plus_and_all_minus_signs() {
        let h = HValues::new(vec![0.3, -1.2, 4.0, 0.25, 7.5]).unwrap();
        let t = h.statistic();
        assert_eq!(bootstrap_replicate(&h, &[1.0; 5]), t);
        assert_eq!(bootstrap_replicate(&h, &[-1.0; 5]), -t);
    }

    #[test]
    fn single_forced_replicate_is_bit_exact() {
        let h = HValues::new(vec![0.1, 0.7, -0.2]).unwrap();
        let signs = Array2::from_elem((1, 3), 1.0);
        let reps = wild_bootstrap_with_signs(&h, signs.view()).unwrap();
        assert_eq!(reps[0].to_bits(), h.statistic().to_bits());
    }

    #[test]
    fn ksd_forced_signs_reproduce_statistic() {
        let gram = Array2::from_shape_fn((4, 4), |(a, b)| 1.0 / (1.0 + (a + b) as f64));
        let (stat, reps) = ksd_bootstrap_from_gram(&gram, Array2::from_elem((1, 4), 1.0).view()).unwrap();
        assert!((reps[0] - stat).abs() < 1e-14 * stat.abs());
    }

    #[test]
    fn bootstrap_rejects_bad_arguments() {
        let h = HValues::new(vec![1.0]).unwrap();
        assert!(wild_bootstrap(&h, 0, &mut seeded(0)).is_err());
        assert!(HValues::new(vec![]).is_err());
        assert!(gof_from_h(&h, 10, 1.5, &mut seeded(0)).is_err());
    }

    struct AlwaysReject;
    impl PowerScenario for AlwaysReject {
        fn run_once(&self, _: usize, _: usize, alpha: f64, _: &mut StreamRng) -> Result<GofResult> {
            GofResult::from_replicates(1.0, vec![0.0; 10], alpha)
        }
    }

    #[test]
    fn always_reject_has_power_one() {
        let p = estimate_power(&AlwaysReject, 10, 7, 0.05, 10, &mut seeded(1)).unwrap();
        assert_eq!(p.power, 1.0);
        assert_eq!(p.rejections, 7);
    }
}
