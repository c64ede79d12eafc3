//! Command-line front end: `test`, `moments`, `simulate`,
//! `check-expansion`, and `optimize-weights`.
//!
//! Exit codes: 0 success, 2 usage error (flag parsing), 1 data or numeric
//! error, with the failing stage named on stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use monokurt::report::to_json;
use monokurt::simulation::{ExpansionCheckConfig, SimConfig};
use monokurt::{
    ingest_csv, null_calibration, null_moments, optimize_weights, run_test, variance_oracle,
    IngestOptions, KurtosisWeights, MonotoneSample, Tail, TestReport,
};

#[derive(Parser)]
#[command(
    name = "monokurt",
    version,
    about = "Kurtosis test for multivariate normality with two-step monotone incomplete data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the normality test on a CSV file.
    Test(TestArgs),
    /// Print asymptotic null moments for given parameters (no data needed).
    Moments(MomentsArgs),
    /// Monte Carlo experiments: null calibration or the variance oracle.
    Simulate(SimulateArgs),
    /// Slope check of the covariance-estimator expansion remainder.
    CheckExpansion(CheckExpansionArgs),
    /// Variance-minimizing weights on the fixed-null-mean constraint.
    OptimizeWeights(OptimizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsMode {
    /// (tau, 1 - tau)
    TauBar,
    /// (1, 1)
    Unit,
    /// --c1/--c2
    Custom,
    /// minimize the null variance at fixed null mean
    Optimized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long, value_enum, default_value = "tau-bar")]
    weights: WeightsMode,
    /// Complete-block weight (with --weights custom).
    #[arg(long, requires = "c2")]
    c1: Option<f64>,
    /// Incomplete-block weight (with --weights custom).
    #[arg(long, requires = "c1")]
    c2: Option<f64>,
}

impl WeightsArgs {
    fn resolve(&self, p: usize, q: usize, tau: f64) -> Result<KurtosisWeights, Failure> {
        let stage = "weights";
        match self.weights {
            WeightsMode::TauBar => KurtosisWeights::tau_bar_weights(tau).at(stage),
            WeightsMode::Unit => Ok(KurtosisWeights::unit()),
            WeightsMode::Custom => match (self.c1, self.c2) {
                (Some(c1), Some(c2)) => KurtosisWeights::new(c1, c2).at(stage),
                _ => Err(Failure {
                    stage,
                    message: "--weights custom requires --c1 and --c2".into(),
                }),
            },
            WeightsMode::Optimized => optimize_weights(p, q, tau).at(stage),
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// CSV input; first p columns X (missing allowed), last q columns Y.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    /// Token marking missing values.
    #[arg(long, default_value = "NA")]
    missing_token: String,
    /// Input starts with a header line.
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Upper-tail alternative instead of the default two-sided test.
    #[arg(long)]
    one_sided: bool,
    #[command(flatten)]
    weights: WeightsArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    weights: WeightsArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    /// Distribution of the standardized statistic under the null.
    Calibration,
    /// Monte Carlo estimate of N*Var(b) with jackknife standard error.
    Variance,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "calibration")]
    mode: SimMode,
    /// key=value configuration file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    df: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    n_total: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bernoulli row masking instead of a deterministic complete count.
    #[arg(long)]
    bernoulli: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CheckExpansionArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000,4000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Negative control: drop the first-order correction term.
    #[arg(long)]
    drop_correction: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    out: OutputArgs,
}

struct Failure {
    stage: &'static str,
    message: String,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> AtStage<T> for monokurt::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            message: e.to_string(),
        })
    }
}

impl<T> AtStage<T> for std::io::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            message: e.to_string(),
        })
    }
}

fn emit(out: &OutputArgs, json: String, text: String) -> Result<(), Failure> {
    let body = match out.format {
        Format::Json => json,
        Format::Text => text,
    };
    match &out.output {
        Some(path) => fs::write(path, body + "\n").at("output"),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn report_text(r: &TestReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "kurtosis test: p={} q={} n={} N={} tau={:.6}\n",
        r.p, r.q, r.n, r.n_total, r.tau
    ));
    s.push_str(&format!("weights: c1={:.6} c2={:.6}\n", r.c1, r.c2));
    s.push_str(&format!("b1={:.6} b2={:.6} b={:.6}\n", r.b1, r.b2, r.b));
    s.push_str(&format!(
        "nu={:.6} sigma2={:.6} z={:.4} p-value={:.4}\n",
        r.nu, r.sigma2, r.z, r.p_value
    ));
    s.push_str(&format!(
        "decision at alpha={}: {}",
        r.alpha,
        if r.reject {
            "reject normality"
        } else {
            "fail to reject normality"
        }
    ));
    if let Some(cc) = &r.complete_case {
        s.push_str(&format!(
            "\ncomplete-case Mardia (d={}, m={}): b={:.6} z={:.4} p-value={:.4}",
            cc.p, cc.n, cc.b, cc.z, cc.p_value
        ));
    }
    s
}

fn build_sim_config(args: &SimulateArgs) -> Result<SimConfig, Failure> {
    let stage = "configuration";
    let mut lines = Vec::new();
    if let Some(path) = &args.config {
        lines.push(fs::read_to_string(path).at(stage)?);
    }
    // Flags append after the file, overriding earlier keys is not needed:
    // from_key_values takes the last occurrence because assignments are
    // processed in order.
    if let Some(v) = &args.family {
        lines.push(format!("family = {v}"));
    }
    if let Some(v) = args.df {
        lines.push(format!("df = {v}"));
    }
    if let Some(v) = args.eps {
        lines.push(format!("eps = {v}"));
    }
    if let Some(v) = args.scale {
        lines.push(format!("scale = {v}"));
    }
    if let Some(v) = args.p {
        lines.push(format!("p = {v}"));
    }
    if let Some(v) = args.q {
        lines.push(format!("q = {v}"));
    }
    if let Some(v) = args.n_total {
        lines.push(format!("n-total = {v}"));
    }
    if let Some(v) = args.tau {
        lines.push(format!("tau = {v}"));
    }
    if let Some(v) = args.c1 {
        lines.push(format!("c1 = {v}"));
    }
    if let Some(v) = args.c2 {
        lines.push(format!("c2 = {v}"));
    }
    if let Some(v) = args.replications {
        lines.push(format!("replications = {v}"));
    }
    if let Some(v) = args.seed {
        lines.push(format!("seed = {v}"));
    }
    if args.bernoulli {
        lines.push("bernoulli = true".into());
    }
    SimConfig::from_key_values(&lines.join("\n")).at(stage)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Test(args) => {
            let raw = fs::read_to_string(&args.input).at("input")?;
            let options = IngestOptions::new(args.p, args.q)
                .with_missing_token(&args.missing_token)
                .with_header(args.header);
            let sample: MonotoneSample = ingest_csv(&raw, &options).at("ingestion")?;
            for warning in sample.validate() {
                eprintln!("warning: {warning}");
            }
            let w = args
                .weights
                .resolve(sample.p(), sample.q(), sample.tau())?;
            if sample.n() == sample.n_total() && w.c2() != 0.0 {
                eprintln!("warning: sample has no incomplete rows; c2 is ignored");
            }
            let tail = if args.one_sided {
                Tail::Upper
            } else {
                Tail::TwoSided
            };
            let report = run_test(&sample, &w, args.alpha, tail).at("test")?;
            emit(&args.out, to_json(&report), report_text(&report))
        }
        Command::Moments(args) => {
            let w = args.weights.resolve(args.p, args.q, args.tau)?;
            let m = null_moments(args.p, args.q, args.tau, &w).at("moments")?;
            #[derive(serde::Serialize)]
            struct MomentsOut {
                p: usize,
                q: usize,
                tau: f64,
                c1: f64,
                c2: f64,
                nu: f64,
                sigma2: f64,
            }
            let out = MomentsOut {
                p: args.p,
                q: args.q,
                tau: args.tau,
                c1: w.c1(),
                c2: w.c2(),
                nu: m.nu,
                sigma2: m.sigma2,
            };
            let text = format!(
                "p={} q={} tau={:.6} c1={:.6} c2={:.6}\nnu={:.6}\nsigma2={:.6}",
                out.p, out.q, out.tau, out.c1, out.c2, out.nu, out.sigma2
            );
            emit(&args.out, to_json(&out), text)
        }
        Command::Simulate(args) => {
            let cfg = build_sim_config(&args)?;
            match args.mode {
                SimMode::Calibration => {
                    let summary = null_calibration(&cfg, args.alpha).at("calibration")?;
                    let text = format!(
                        "null calibration: R={} mean_z={:.4} var_z={} ks={:.4} (p={:.4}) rejection={:.4}",
                        summary.replications,
                        summary.mean_z,
                        summary
                            .var_z
                            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
                        summary.ks_distance,
                        summary.ks_p_value,
                        summary.rejection_rate
                    );
                    emit(&args.out, to_json(&summary), text)
                }
                SimMode::Variance => {
                    let summary = variance_oracle(&cfg).at("variance oracle")?;
                    let text = format!(
                        "variance oracle: R={} mean_b={:.6} N*Var(b)={:.4} (jackknife se {:.4})",
                        summary.replications,
                        summary.mean_b,
                        summary.scaled_variance,
                        summary.jackknife_se
                    );
                    emit(&args.out, to_json(&summary), text)
                }
            }
        }
        Command::CheckExpansion(args) => {
            let cfg = ExpansionCheckConfig {
                p: args.p,
                q: args.q,
                tau: args.tau,
                seed: args.seed,
                sample_sizes: args.sizes.clone(),
                replications_per_size: args.reps,
                drop_correction: args.drop_correction,
            };
            let summary = monokurt::expansion_order_check(&cfg).at("expansion check")?;
            let text = format!(
                "expansion order: sizes {:?} -> slope {:.4}{}",
                summary.sample_sizes,
                summary.slope,
                if summary.drop_correction {
                    " (correction dropped)"
                } else {
                    ""
                }
            );
            emit(&args.out, to_json(&summary), text)
        }
        Command::OptimizeWeights(args) => {
            let w = optimize_weights(args.p, args.q, args.tau).at("optimization")?;
            let m = null_moments(args.p, args.q, args.tau, &w).at("moments")?;
            #[derive(serde::Serialize)]
            struct OptimizedOut {
                p: usize,
                q: usize,
                tau: f64,
                c1: f64,
                c2: f64,
                nu: f64,
                sigma2: f64,
            }
            let out = OptimizedOut {
                p: args.p,
                q: args.q,
                tau: args.tau,
                c1: w.c1(),
                c2: w.c2(),
                nu: m.nu,
                sigma2: m.sigma2,
            };
            let text = format!(
                "optimized weights: c1={:.6} c2={:.6} (nu={:.6}, sigma2={:.6})",
                out.c1, out.c2, out.nu, out.sigma2
            );
            emit(&args.out, to_json(&out), text)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("MONOKURT_THREADS") {
        if let Ok(threads) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        } else {
            eprintln!("warning: MONOKURT_THREADS is not a number; using default");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error in {}: {}", f.stage, f.message);
            ExitCode::from(1)
        }
    }
}
