//! Metropolis-within-Gibbs with an optional acceptance bias.
//!
//! Each coordinate update proposes `θ_j' = θ_j + s·z` and accepts with
//! probability `min(1, p̃(θ')/p̃(θ) + bias)`. A positive bias makes the chain
//! accept too often, so its stationary law drifts away from the target. The
//! same step, run from each retained state, supplies the auxiliary draws that
//! KCC-SD needs.

use ndarray::{Array2, Array3};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::Kernel1D;
use crate::rng::{fork_seed, seeded, StreamRng};
use crate::stats::{mean, std_err};
use crate::stein::{kccsd_from_draws, AuxiliaryDraws, CoordinateKernels};
use crate::targets::Target;

#[derive(Debug, Clone, PartialEq)]
pub struct MwgConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub proposal_std: f64,
    pub bias: f64,
    /// Starting state; the origin when `None`.
    pub initial: Option<Vec<f64>>,
}

impl Default for MwgConfig {
    fn default() -> Self {
        Self {
            iterations: 60_000,
            burn_in: 50_000,
            proposal_std: 0.5,
            bias: 0.0,
            initial: None,
        }
    }
}

impl MwgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.proposal_std.is_finite() && self.proposal_std >= 0.0) {
            return Err(Error::Config("proposal std must be non-negative".into()));
        }
        if !(self.bias.is_finite() && self.bias >= 0.0) {
            return Err(Error::Config("bias must be non-negative".into()));
        }
        Ok(())
    }
}

/// `min(1, exp(log_ratio) + bias)`, clamped to `[0, 1]`.
pub fn acceptance_probability(log_ratio: f64, bias: f64) -> f64 {
    let r = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    (r + bias).clamp(0.0, 1.0)
}

fn log_density_checked<T: Target + ?Sized>(target: &T, x: &[f64]) -> Result<f64> {
    let v = target.log_density(x);
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::NonFiniteInput(format!("log-density {v} at {x:?}")));
    }
    Ok(v)
}

fn step_from<T: Target + ?Sized>(
    theta: &mut [f64],
    current_logp: f64,
    j: usize,
    target: &T,
    cfg: &MwgConfig,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    let old = theta[j];
    let z: f64 = StandardNormal.sample(rng);
    theta[j] = old + cfg.proposal_std * z;
    let proposed_logp = log_density_checked(target, theta)?;
    let accept = acceptance_probability(proposed_logp - current_logp, cfg.bias);
    let u: f64 = rng.random();
    let out = if u < accept { (theta[j], proposed_logp) } else { (old, current_logp) };
    theta[j] = old;
    Ok(out)
}

/// One biased Metropolis update of coordinate `j`; returns the new value of `θ_j`.
pub fn mwg_coordinate_step<T: Target + ?Sized>(
    theta: &[f64],
    j: usize,
    target: &T,
    cfg: &MwgConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if cfg.bias.is_nan() || cfg.bias < 0.0 {
        return Err(Error::Config("bias must be non-negative".into()));
    }
    let mut state = theta.to_vec();
    let logp = log_density_checked(target, &state)?;
    step_from(&mut state, logp, j, target, cfg, rng).map(|(v, _)| v)
}

/// Post-burn-in chain states and their Metropolis-step auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// `(iterations - burn_in) × d`.
    pub samples: Array2<f64>,
    /// `n_y` one-step moves per retained state and coordinate.
    pub auxiliaries: AuxiliaryDraws,
}

impl ChainOutput {
    /// Keep every `thin`-th retained state, starting with the first.
    pub fn thinned(&self, thin: usize) -> Result<ChainOutput> {
        if thin == 0 {
            return Err(Error::Config("thinning interval must be positive".into()));
        }
        let keep: Vec<usize> = (0..self.samples.nrows()).step_by(thin).collect();
        let samples = self.samples.select(ndarray::Axis(0), &keep);
        let aux = self.auxiliaries.values().select(ndarray::Axis(0), &keep);
        Ok(ChainOutput { samples, auxiliaries: AuxiliaryDraws::new(aux)? })
    }
}

/// Run the sweeping chain. Auxiliary moves come from a separate stream forked
/// from `rng`, so the chain itself does not depend on `n_y`.
pub fn run_chain<T: Target + ?Sized>(target: &T, cfg: &MwgConfig, n_y: usize, rng: &mut dyn RngCore) -> Result<ChainOutput> {
    cfg.validate()?;
    if n_y == 0 {
        return Err(Error::Config("n_y must be at least 1".into()));
    }
    let d = target.dim();
    let mut theta = match &cfg.initial {
        Some(v) if v.len() != d => return Err(Error::DimensionMismatch { expected: d, got: v.len() }),
        Some(v) => v.clone(),
        None => vec![0.0; d],
    };
    let mut aux_rng: StreamRng = seeded(fork_seed(rng));
    let kept = cfg.iterations - cfg.burn_in;
    let mut samples = Array2::zeros((kept, d));
    let mut aux = Array3::zeros((kept, d, n_y));
    let mut logp = log_density_checked(target, &theta)?;
    for it in 0..cfg.iterations {
        for j in 0..d {
            let (v, lp) = step_from(&mut theta, logp, j, target, cfg, rng)?;
            theta[j] = v;
            logp = lp;
        }
        if it >= cfg.burn_in {
            let r = it - cfg.burn_in;
            for j in 0..d {
                samples[[r, j]] = theta[j];
                for k in 0..n_y {
                    aux[[r, j, k]] = step_from(&mut theta, logp, j, target, cfg, &mut aux_rng)?.0;
                }
            }
        }
    }
    Ok(ChainOutput { samples, auxiliaries: AuxiliaryDraws::new(aux)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSweepRow {
    pub bias: f64,
    /// Mean KCC-SD over seeds.
    pub mean: f64,
    pub std_err: f64,
    pub per_seed: Vec<f64>,
}

/// Mean KCC-SD of thinned chains for each bias, one chain per seed.
///
/// Every bias level reuses the same seeds.
#[allow(clippy::too_many_arguments)]
pub fn bias_sweep<T: Target + ?Sized>(
    target: &T,
    biases: &[f64],
    cfg: &MwgConfig,
    n_y: usize,
    kernel: &Kernel1D,
    seeds: &[u64],
    thin: usize,
) -> Result<Vec<BiasSweepRow>> {
    if biases.is_empty() || seeds.is_empty() {
        return Err(Error::Config("bias and seed lists must be non-empty".into()));
    }
    let kernels = CoordinateKernels::Shared(*kernel);
    let cells: Vec<(usize, u64)> = (0..biases.len()).flat_map(|b| seeds.iter().map(move |&s| (b, s))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(b, seed)| {
            let c = MwgConfig { bias: biases[b], ..cfg.clone() };
            let chain = run_chain(target, &c, n_y, &mut seeded(seed))?.thinned(thin)?;
            Ok(kccsd_from_draws(chain.samples.view(), target, &chain.auxiliaries, &kernels)?.total)
        })
        .collect::<Result<_>>()?;
    Ok(biases
        .iter()
        .enumerate()
        .map(|(b, &bias)| {
            let per_seed = values[b * seeds.len()..(b + 1) * seeds.len()].to_vec();
            BiasSweepRow { bias, mean: mean(&per_seed), std_err: std_err(&per_seed), per_seed }
        })
        .collect())
}
