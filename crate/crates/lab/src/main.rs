use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use strategic_core::estimators::max_eigenvalue;
use strategic_lab::output::{self, Format};
use strategic_lab::{
    load_scenario, run_experiment, AlgorithmParams, ExperimentConfig, LabError, ZoParams,
};

#[derive(Parser)]
#[command(
    name = "strategic-lab",
    version,
    about = "Run seeded experiments on strategic regression worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the outcome-maximizing rule from d + 1 probe rounds.
    Alg1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Bound on the largest eigenvalue of the visible second moment
        /// [default: computed from the scenario].
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long, default_value_t = 100.0)]
        multiplier: f64,
        /// Samples per round, overriding the derived count.
        #[arg(long)]
        samples: Option<usize>,
        /// Run the probe rounds concurrently on forked environments.
        #[arg(long)]
        parallel_rounds: bool,
    },
    /// Minimize the relaxed prediction risk with zeroth-order queries.
    Minrisk {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[command(flatten)]
        zo: ZoArgs,
    },
    /// Recover the causal parameters through a designed rule and least squares.
    Alg3 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long)]
        n3: Option<usize>,
        #[arg(long, default_value_t = 100.0)]
        multiplier: f64,
        /// Radius of the ball searched by the design step.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 300)]
        design_iters: usize,
        /// Fit under the zero rule instead of the designed rule.
        #[arg(long)]
        no_design: bool,
    },
    /// Publish a fixed rule and report observed outcome and risk.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights, one per feature.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        rule: Vec<f64>,
    },
    /// Split the exact risk of a fixed rule into static and gaming parts (needs --oracle).
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        rule: Vec<f64>,
    },
    /// Trade risk against outcomes over a list of alpha weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[command(flatten)]
        zo: ZoArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Fixture name or path to a scenario TOML file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Add ground-truth columns.
    #[arg(long)]
    oracle: bool,
    /// Run replications on this many threads.
    #[arg(long, value_name = "THREADS")]
    parallel: Option<usize>,
    /// Record wall time per replication.
    #[arg(long)]
    timing: bool,
    /// Agents in the evaluation round of each returned rule.
    #[arg(long, default_value_t = 10_000)]
    eval_samples: usize,
}

#[derive(Args)]
struct ZoArgs {
    #[arg(long, default_value_t = ZoParams::default().budget_queries)]
    budget: usize,
    #[arg(long, default_value_t = ZoParams::default().samples_per_query)]
    n: usize,
    #[arg(long, default_value_t = ZoParams::default().step_initial)]
    step: f64,
    #[arg(long, default_value_t = ZoParams::default().step_decay)]
    step_decay: f64,
    #[arg(long, default_value_t = ZoParams::default().smoothing_radius)]
    smoothing: f64,
    #[arg(long, default_value_t = ZoParams::default().domain_radius)]
    radius: f64,
    /// Draw a fresh zero-rule batch for every ungamed query.
    #[arg(long)]
    no_reuse: bool,
    #[arg(long, default_value_t = ZoParams::default().init_samples)]
    init_samples: usize,
    #[arg(long, default_value_t = ZoParams::default().eval_queries)]
    eval_queries: usize,
    #[arg(long, default_value_t = ZoParams::default().checkpoints)]
    checkpoints: usize,
}

impl ZoArgs {
    fn params(&self, alpha: f64) -> ZoParams {
        ZoParams {
            alpha,
            budget_queries: self.budget,
            samples_per_query: self.n,
            step_initial: self.step,
            step_decay: self.step_decay,
            smoothing_radius: self.smoothing,
            domain_radius: self.radius,
            reuse_zero_batch: !self.no_reuse,
            init_samples: self.init_samples,
            eval_queries: self.eval_queries,
            checkpoints: self.checkpoints,
        }
    }
}

fn run(cli: Cli) -> Result<i32, LabError> {
    let (common, params) = match cli.command {
        Command::Alg1 {
            common,
            epsilon,
            lambda_max,
            multiplier,
            samples,
            parallel_rounds,
        } => {
            let (lambda_max, source) = match lambda_max {
                Some(l) => (l, "cli"),
                None => {
                    let s = load_scenario(&common.scenario)?;
                    let v = s.visibility();
                    (max_eigenvalue(&(&v * &s.second_moment * &v))?, "scenario")
                }
            };
            let params = AlgorithmParams::Alg1 {
                epsilon,
                lambda_max,
                lambda_max_source: source.into(),
                sample_multiplier: multiplier,
                samples_per_round: samples,
                parallel_rounds,
            };
            (common, params)
        }
        Command::Minrisk { common, alpha, zo } => {
            (common, AlgorithmParams::Minrisk(zo.params(alpha)))
        }
        Command::Alg3 {
            common,
            epsilon,
            n1,
            n2,
            n3,
            multiplier,
            radius,
            design_iters,
            no_design,
        } => {
            let params = AlgorithmParams::Alg3 {
                epsilon,
                n1,
                n2,
                n3,
                multiplier,
                domain_radius: radius,
                design_iters,
                no_design,
            };
            (common, params)
        }
        Command::Evaluate { common, rule } => (common, AlgorithmParams::Evaluate { rule }),
        Command::Decompose { common, rule } => (common, AlgorithmParams::Decompose { rule }),
        Command::Sweep { common, alphas, zo } => {
            let zo = zo.params(0.0);
            (common, AlgorithmParams::Sweep { alphas, zo })
        }
    };

    let scenario = load_scenario(&common.scenario).map_err(|e| match e {
        LabError::Core(e) => LabError::Config(e.to_string()),
        other => other,
    })?;
    let format = match common.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let cfg = ExperimentConfig {
        scenario: common.scenario,
        seed: common.seed,
        reps: common.reps,
        oracle: common.oracle,
        threads: common.parallel,
        timing: common.timing,
        eval_samples: common.eval_samples,
        params,
    };
    let result = run_experiment(&cfg, &scenario)?;

    output::write_rows(&common.out, format, &result.rows)?;
    let trace_path = (!result.traces.is_empty()).then(|| output::sidecar(&common.out, "trace.csv"));
    if let Some(path) = &trace_path {
        output::write_trace(path, &result.traces)?;
    }
    let columns = output::header(&result.rows);
    let manifest = output::manifest(&cfg, format, &columns, trace_path.as_deref())?;
    output::write_manifest(&output::sidecar(&common.out, "manifest.json"), &manifest)?;

    for row in result.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "replication {}: {}",
            row.replication,
            row.error.as_deref().unwrap_or_default()
        );
    }
    Ok(result.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
