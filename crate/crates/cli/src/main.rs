use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use steincc_cli::{emit_csv, run_experiment, CliError, ExperimentId, ExperimentSpec, KernelChoice, Method};

/// Run a goodness-of-fit or sampler-diagnostic experiment and write CSV results.
#[derive(Debug, Parser)]
#[command(name = "steincc", version)]
struct Args {
    #[arg(long, env = "STEINCC_EXPERIMENT", value_enum)]
    experiment: ExperimentId,
    /// Defaults to the experiment's usual method.
    #[arg(long, env = "STEINCC_METHOD", value_enum)]
    method: Option<Method>,
    #[arg(long, env = "STEINCC_KERNEL", value_enum, default_value = "rbf")]
    kernel: KernelChoice,
    /// Comma-separated dimensions.
    #[arg(long, env = "STEINCC_DIMS", value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Comma-separated sample sizes.
    #[arg(long, env = "STEINCC_NS", value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Comma-separated acceptance biases for mwg-bias.
    #[arg(long, env = "STEINCC_BIASES", value_delimiter = ',')]
    biases: Option<Vec<f64>>,
    /// Repetitions per cell (seeds for discrepancy-vs-n and mwg-bias).
    #[arg(long, env = "STEINCC_N_REPS")]
    n_reps: Option<usize>,
    #[arg(long, env = "STEINCC_ALPHA", default_value_t = 0.05)]
    alpha: f64,
    /// Wild-bootstrap replicates.
    #[arg(long, env = "STEINCC_BOOTSTRAP_L", default_value_t = 500)]
    bootstrap_l: usize,
    /// Auxiliary draws per row and coordinate.
    #[arg(long, env = "STEINCC_N_Y", default_value_t = 5)]
    n_y: usize,
    #[arg(long, env = "STEINCC_SEED", default_value_t = 0)]
    seed: u64,
    /// RBF bandwidth; KCC-SD otherwise uses 1 and KSD the median heuristic.
    #[arg(long, env = "STEINCC_BANDWIDTH")]
    bandwidth: Option<f64>,
    #[arg(long, env = "STEINCC_MWG_ITERATIONS", default_value_t = 60_000)]
    mwg_iterations: usize,
    #[arg(long, env = "STEINCC_MWG_BURN_IN", default_value_t = 50_000)]
    mwg_burn_in: usize,
    /// Output file; stdout when absent.
    #[arg(long, env = "STEINCC_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; all logical cores when absent.
    #[arg(long, env = "STEINCC_THREADS")]
    threads: Option<usize>,
    /// Write 0 for wall time so reruns produce identical files.
    #[arg(long, env = "STEINCC_OMIT_TIMING")]
    omit_timing: bool,
}

impl Args {
    fn spec(&self) -> ExperimentSpec {
        let mut s = ExperimentSpec::defaults(self.experiment);
        if let Some(m) = self.method {
            s.method = m;
        }
        s.kernel = self.kernel;
        if let Some(d) = &self.dims {
            s.dims.clone_from(d);
        }
        if let Some(n) = &self.ns {
            s.ns.clone_from(n);
        }
        if let Some(b) = &self.biases {
            s.biases.clone_from(b);
        }
        if let Some(r) = self.n_reps {
            s.n_reps = r;
        }
        s.alpha = self.alpha;
        s.bootstrap_l = self.bootstrap_l;
        s.n_y = self.n_y;
        s.seed = self.seed;
        s.bandwidth = self.bandwidth;
        s.mwg_iterations = self.mwg_iterations;
        s.mwg_burn_in = self.mwg_burn_in;
        s.omit_timing = self.omit_timing;
        s
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let rows = run_experiment(&args.spec())?;
    match &args.out {
        Some(path) => emit_csv(&rows, BufWriter::new(File::create(path)?)),
        None => emit_csv(&rows, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("steincc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
