//! Experiment runner behind the `steincc` binary.
//!
//! Each [`ExperimentId`] maps to one scenario. Results are flat [`ResultRow`]s
//! written as CSV by [`emit_csv`].

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::ValueEnum;
use ndarray::ArrayView2;
use rand::RngCore;
use steincc::cond_model::{estimate_approx_kccsd, TrainConfig};
use steincc::gof::{estimate_power, GofScenario, KsdKernelRule, PowerEstimate, TestMethod};
use steincc::kernels::{median_heuristic, Kernel1D, KernelFamily, KernelNd};
use steincc::mwg::{bias_sweep, MwgConfig};
use steincc::rng::substream;
use steincc::stats::{ks_uniform, mean, std_err};
use steincc::stein::{estimate_kccsd, estimate_ksd, CoordinateKernels, KsdStatistic};
use steincc::targets::{CorrelatedGaussian, DataSource, GmmPosterior, LaplaceNoiseGaussian, LaplaceProduct, Target};

pub const CSV_HEADER: &str = "experiment,method,kernel,dim,n,param,metric,value,seed,seconds";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] steincc::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    CsvFormat(#[from] csv::Error),
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

impl CliError {
    /// Process exit code: 1 for usage errors, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
        pub enum $name {
            $(#[value(name = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {}: {other}", stringify!($name))),
                }
            }
        }
    };
}

named_enum!(
    /// Scenario to run.
    ExperimentId {
        PowerVsDim => "power-vs-dim",
        PowerVsN => "power-vs-n",
        NullCalibration => "null-calibration",
        DiscrepancyVsN => "discrepancy-vs-n",
        LaplaceNoisePower => "laplace-noise-power",
        MwgBias => "mwg-bias",
    }
);

named_enum!(
    Method {
        KccsdExact => "kccsd-exact",
        KccsdApprox => "kccsd-approx",
        Ksd => "ksd",
    }
);

named_enum!(
    KernelChoice {
        Rbf => "rbf",
        Imq => "imq",
    }
);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub method: Method,
    pub kernel: KernelChoice,
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    pub biases: Vec<f64>,
    pub n_reps: usize,
    pub alpha: f64,
    pub bootstrap_l: usize,
    pub n_y: usize,
    pub seed: u64,
    /// RBF bandwidth. `None` means σ = 1 for KCC-SD and the median heuristic for KSD.
    pub bandwidth: Option<f64>,
    pub mwg_iterations: usize,
    pub mwg_burn_in: usize,
    /// Write 0 in the seconds column so repeated runs are byte-identical.
    pub omit_timing: bool,
}

impl ExperimentSpec {
    /// Defaults for one experiment, matching the desk-scale settings.
    pub fn defaults(experiment: ExperimentId) -> Self {
        let (dims, ns) = match experiment {
            ExperimentId::PowerVsDim => (vec![5, 15, 30], vec![1000]),
            ExperimentId::PowerVsN => (vec![30], vec![250, 500, 1000]),
            ExperimentId::NullCalibration => (vec![10], vec![500]),
            ExperimentId::DiscrepancyVsN => (vec![30], vec![500, 1000, 2000]),
            ExperimentId::LaplaceNoisePower => (vec![5, 15], vec![500]),
            ExperimentId::MwgBias => (vec![2], vec![100]),
        };
        let method = match experiment {
            ExperimentId::NullCalibration | ExperimentId::DiscrepancyVsN | ExperimentId::MwgBias => Method::KccsdExact,
            _ => Method::KccsdApprox,
        };
        Self {
            experiment,
            method,
            kernel: KernelChoice::Rbf,
            dims,
            ns,
            biases: vec![0.0, 0.05, 0.1, 0.2],
            n_reps: match experiment {
                ExperimentId::NullCalibration => 200,
                ExperimentId::DiscrepancyVsN => 5,
                ExperimentId::MwgBias => 10,
                _ => 100,
            },
            alpha: 0.05,
            bootstrap_l: 500,
            n_y: 5,
            seed: 0,
            bandwidth: None,
            mwg_iterations: 60_000,
            mwg_burn_in: 50_000,
            omit_timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.dims.is_empty() || self.ns.is_empty() || self.biases.is_empty() {
            return usage("dims, ns and biases must be non-empty");
        }
        if self.dims.contains(&0) || self.ns.contains(&0) {
            return usage("dims and ns must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return usage("alpha must lie in (0, 1)");
        }
        if self.n_reps == 0 || self.bootstrap_l == 0 || self.n_y == 0 {
            return usage("n-reps, bootstrap-l and n-y must be positive");
        }
        if let Some(s) = self.bandwidth {
            if !(s.is_finite() && s > 0.0) {
                return usage("bandwidth must be positive");
            }
        }
        if self.biases.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return usage("biases must be non-negative");
        }
        if self.mwg_burn_in >= self.mwg_iterations {
            return usage("mwg burn-in must be smaller than the iteration count");
        }
        match self.experiment {
            ExperimentId::MwgBias if self.method != Method::KccsdExact => {
                return usage("mwg-bias only supports kccsd-exact");
            }
            ExperimentId::LaplaceNoisePower if self.method == Method::KccsdExact => {
                return usage("laplace-noise-power has no exact conditionals; use kccsd-approx or ksd");
            }
            ExperimentId::LaplaceNoisePower if self.dims.contains(&1) => {
                return usage("laplace-noise-power needs dims >= 2");
            }
            _ => {}
        }
        Ok(())
    }

    fn family(&self) -> Result<KernelFamily, CliError> {
        Ok(match self.kernel {
            KernelChoice::Rbf => KernelFamily::rbf(self.bandwidth.unwrap_or(1.0))?,
            KernelChoice::Imq => KernelFamily::imq_default(),
        })
    }

    fn coordinate_kernels(&self) -> Result<CoordinateKernels, CliError> {
        Ok(Kernel1D::new(self.family()?).into())
    }

    fn ksd_rule(&self) -> Result<KsdKernelRule, CliError> {
        Ok(match (self.kernel, self.bandwidth) {
            (KernelChoice::Rbf, None) => KsdKernelRule::MedianRbf,
            _ => KsdKernelRule::Fixed(self.family()?),
        })
    }
}

/// One metric for one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentId,
    pub method: Method,
    pub kernel: KernelChoice,
    pub dim: usize,
    pub n: usize,
    /// Bias for `mwg-bias`, repetition index for per-repetition rows, else empty.
    pub param: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub seconds: f64,
}

/// Decimal with 10 significant digits; scientific outside `[1e-4, 1e10)`.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0.000000000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // The exponent of the rounded scientific form already accounts for
    // rounding up into the next decade.
    let sci = format!("{v:.9e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-4..10).contains(&exp) {
        format!("{:.*}", (9 - exp) as usize, v)
    } else {
        sci
    }
}

fn record(r: &ResultRow) -> [String; 10] {
    [
        r.experiment.to_string(),
        r.method.to_string(),
        r.kernel.to_string(),
        r.dim.to_string(),
        r.n.to_string(),
        r.param.map(format_value).unwrap_or_default(),
        r.metric.clone(),
        format_value(r.value),
        r.seed.to_string(),
        format_value(r.seconds),
    ]
}

/// Header plus one line per row, each ending in `\n`.
pub fn emit_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a file written by [`emit_csv`].
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, CliError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(CliError::Csv { line: 1, reason: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for (idx, rec) in rd.records().enumerate() {
        let f = rec?;
        let bad = |reason: String| CliError::Csv { line: idx + 2, reason };
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s}: {e}")));
        rows.push(ResultRow {
            experiment: f[0].parse().map_err(bad)?,
            method: f[1].parse().map_err(bad)?,
            kernel: f[2].parse().map_err(bad)?,
            dim: int(&f[3])? as usize,
            n: int(&f[4])? as usize,
            param: if f[5].is_empty() { None } else { Some(num(&f[5])?) },
            metric: f[6].to_string(),
            value: num(&f[7])?,
            seed: int(&f[8])?,
            seconds: num(&f[9])?,
        });
    }
    Ok(rows)
}

struct Cell<'a> {
    spec: &'a ExperimentSpec,
    dim: usize,
    n: usize,
    started: Instant,
}

impl Cell<'_> {
    fn row(&self, param: Option<f64>, metric: &str, value: f64) -> ResultRow {
        let seconds = if self.spec.omit_timing { 0.0 } else { self.started.elapsed().as_secs_f64() };
        ResultRow {
            experiment: self.spec.experiment,
            method: self.spec.method,
            kernel: self.spec.kernel,
            dim: self.dim,
            n: self.n,
            param,
            metric: metric.to_string(),
            value,
            seed: self.spec.seed,
            seconds,
        }
    }
}

fn test_method(
    spec: &ExperimentSpec,
    sampler: Option<Arc<dyn steincc::targets::ConditionalSampler>>,
) -> Result<TestMethod, CliError> {
    let kernels = spec.coordinate_kernels()?;
    Ok(match spec.method {
        Method::KccsdExact => TestMethod::KccsdExact {
            sampler: sampler.ok_or_else(|| CliError::Usage("no exact conditionals for this scenario".into()))?,
            kernels,
            n_y: spec.n_y,
        },
        Method::KccsdApprox => TestMethod::KccsdApprox { cfg: TrainConfig::default(), kernels, n_y: spec.n_y },
        Method::Ksd => TestMethod::Ksd(spec.ksd_rule()?),
    })
}

fn power_cell(spec: &ExperimentSpec, sc: &GofScenario, n: usize, stream: u64) -> Result<PowerEstimate, CliError> {
    Ok(estimate_power(sc, n, spec.n_reps, spec.alpha, spec.bootstrap_l, &mut substream(spec.seed, stream))?)
}

fn laplace_scenario(spec: &ExperimentSpec, d: usize) -> Result<GofScenario, CliError> {
    let q = Arc::new(LaplaceProduct::unit_variance(d));
    Ok(GofScenario { source: q.clone(), target: Arc::new(CorrelatedGaussian::standard(d)), method: test_method(spec, Some(q))? })
}

/// One discrepancy value for `data` under `target`, by the chosen method.
fn discrepancy<T: Target>(
    spec: &ExperimentSpec,
    data: ArrayView2<'_, f64>,
    target: &T,
    sampler: &CorrelatedGaussian,
    rng: &mut dyn RngCore,
) -> Result<f64, CliError> {
    let kernels = spec.coordinate_kernels()?;
    Ok(match spec.method {
        Method::KccsdExact => estimate_kccsd(data, target, sampler, &kernels, spec.n_y, rng)?.total,
        Method::KccsdApprox => estimate_approx_kccsd(data, target, &TrainConfig::default(), &kernels, spec.n_y, rng)?.total,
        Method::Ksd => {
            let family = match spec.ksd_rule()? {
                KsdKernelRule::MedianRbf => KernelFamily::rbf(median_heuristic(data)?)?,
                KsdKernelRule::Fixed(f) => f,
            };
            estimate_ksd(data, target, &KernelNd::new(family, target.dim())?, KsdStatistic::V)?.value
        }
    })
}

/// Run the experiment described by `spec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, CliError> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut stream = 0u64;
    let mut next_stream = || {
        stream += 1;
        stream
    };
    match spec.experiment {
        ExperimentId::PowerVsDim | ExperimentId::PowerVsN => {
            for &d in &spec.dims {
                for &n in &spec.ns {
                    let cell = Cell { spec, dim: d, n, started: Instant::now() };
                    let est = power_cell(spec, &laplace_scenario(spec, d)?, n, next_stream())?;
                    rows.push(cell.row(None, "power", est.power));
                }
            }
        }
        ExperimentId::LaplaceNoisePower => {
            for &d in &spec.dims {
                for &n in &spec.ns {
                    let cell = Cell { spec, dim: d, n, started: Instant::now() };
                    let q = LaplaceNoiseGaussian::new(d)?;
                    let target = Arc::new(q.moment_matched_target());
                    let sc = GofScenario { source: Arc::new(q), target, method: test_method(spec, None)? };
                    let est = power_cell(spec, &sc, n, next_stream())?;
                    rows.push(cell.row(None, "power", est.power));
                }
            }
        }
        ExperimentId::NullCalibration => {
            for &d in &spec.dims {
                for &n in &spec.ns {
                    let cell = Cell { spec, dim: d, n, started: Instant::now() };
                    let p = Arc::new(CorrelatedGaussian::equicorrelated(d, 0.5, 1.0)?);
                    let sc = GofScenario { source: p.clone(), target: p.clone(), method: test_method(spec, Some(p))? };
                    let est = power_cell(spec, &sc, n, next_stream())?;
                    rows.push(cell.row(None, "rejection_rate", est.power));
                    rows.push(cell.row(None, "ks_p_value", ks_uniform(&est.p_values).p_value));
                    for (r, p) in est.p_values.iter().enumerate() {
                        rows.push(cell.row(Some(r as f64), "p_value", *p));
                    }
                }
            }
        }
        ExperimentId::DiscrepancyVsN => {
            for &d in &spec.dims {
                let p = CorrelatedGaussian::standard(d);
                let q = CorrelatedGaussian::equicorrelated(d, 0.5, 1.0)?;
                for &n in &spec.ns {
                    let cell = Cell { spec, dim: d, n, started: Instant::now() };
                    let base = next_stream();
                    let mut vals = Vec::with_capacity(spec.n_reps);
                    for r in 0..spec.n_reps {
                        let mut rng = substream(spec.seed ^ base.rotate_left(32), r as u64);
                        let x = q.sample(n, &mut rng);
                        vals.push(discrepancy(spec, x.view(), &p, &q, &mut rng)?);
                    }
                    rows.push(cell.row(None, "mean", mean(&vals)));
                    rows.push(cell.row(None, "std_err", if vals.len() > 1 { std_err(&vals) } else { 0.0 }));
                }
            }
        }
        ExperimentId::MwgBias => {
            let started = Instant::now();
            let target = GmmPosterior::simulate(100, [1.0, -1.0], 2.0, &mut substream(spec.seed, 0))?;
            let cfg = MwgConfig { iterations: spec.mwg_iterations, burn_in: spec.mwg_burn_in, ..Default::default() };
            let seeds: Vec<u64> = (0..spec.n_reps as u64).map(|r| spec.seed.wrapping_mul(1_000_003).wrapping_add(r)).collect();
            let kernel = Kernel1D::new(spec.family()?);
            let thin = 10;
            let sweep = bias_sweep(&target, &spec.biases, &cfg, spec.n_y, &kernel, &seeds, thin)?;
            let kept = (spec.mwg_iterations - spec.mwg_burn_in).div_ceil(thin);
            let cell = Cell { spec, dim: 2, n: kept, started };
            for r in sweep {
                rows.push(cell.row(Some(r.bias), "mean", r.mean));
                rows.push(cell.row(Some(r.bias), "std_err", if seeds.len() > 1 { r.std_err } else { 0.0 }));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(1.0), "1.000000000");
        assert_eq!(format_value(0.0), "0.000000000");
        assert_eq!(format_value(0.05), "0.05000000000");
        assert_eq!(format_value(-123.456), "-123.4560000");
        assert_eq!(format_value(9.99999999999), "10.00000000");
        assert_eq!(format_value(1.5e-7), "1.500000000e-7");
    }

    #[test]
    fn enum_names_round_trip() {
        for e in ExperimentId::value_variants() {
            assert_eq!(e.as_str().parse::<ExperimentId>().unwrap(), *e);
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = ExperimentSpec::defaults(ExperimentId::PowerVsDim);
        s.alpha = 1.0;
        assert_eq!(s.validate().unwrap_err().exit_code(), 1);
        let mut s = ExperimentSpec::defaults(ExperimentId::LaplaceNoisePower);
        s.method = Method::KccsdExact;
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::defaults(ExperimentId::MwgBias);
        s.method = Method::Ksd;
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::defaults(ExperimentId::PowerVsN);
        s.ns.clear();
        assert!(s.validate().is_err());
    }
}
