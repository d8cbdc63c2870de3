use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use spiked_fisher::limit_law::{classical_limit, solve_theta, WachterParams};
use spiked_fisher::model::EntryDist;
use spiked_fisher::montecarlo::{run_experiment, ExperimentConfig, ExperimentSummary, Mode};
use spiked_fisher::report::{threads_from_env, write_summary, ConfigFile, RunManifest};
use spiked_fisher::verify::{
    benchmark_config, run_suite, Scale, Suite, BENCH_N, BENCH_P, BENCH_T, CLT_REPLICATIONS,
};
use spiked_fisher::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

/// Spiked Fisher matrices: limiting laws and Monte Carlo validation.
#[derive(Debug, Parser)]
#[command(name = "sfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Support and Stieltjes transform of the Wachter law.
    Lsd {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        y: f64,
        /// Comma-separated evaluation points right of the support
        /// (default: b + 0.5, 2b, 5b).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Option<Vec<f64>>,
    },
    /// Centering parameter of a spike with its classical-limit cross-check.
    Theta {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        y: f64,
    },
    /// Runs the experiment described by a JSON config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sfl-out")]
        out: PathBuf,
    },
    /// Runs validation suites; exits 0 only if every criterion passes.
    Verify {
        #[arg(long, value_parser = ["consistency", "clt", "block", "all"])]
        suite: String,
        /// A fifth of the replications with tolerances widened by sqrt(5).
        #[arg(long)]
        quick: bool,
    },
    /// Fluctuation samples and qq data for the largest and smallest spike of
    /// the benchmark configuration.
    PaperFigure {
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config { .. } => EXIT_CONFIG,
            Error::ExperimentDegenerate { .. } => EXIT_DEGENERATE,
            _ => EXIT_FAILURE,
        };
        Failure { code, error }
    }
}

/// Errors from user-supplied numbers are input-validation failures.
fn invalid_input(error: Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn lsd(c: f64, y: f64, z: Option<Vec<f64>>) -> Result<(), Failure> {
    let w = WachterParams::new(c, y).map_err(invalid_input)?;
    let grid = z.unwrap_or_else(|| vec![w.b + 0.5, 2.0 * w.b, 5.0 * w.b]);
    let mut out = format!("a,b\n{:.4},{:.4}\nz,S\n", w.a, w.b);
    for z in grid {
        let s = w.stieltjes(z).map_err(invalid_input)?;
        out.push_str(&format!("{z:.4},{s:.10}\n"));
    }
    print!("{out}");
    Ok(())
}

fn theta(lambda: f64, c: f64, y: f64) -> Result<(), Failure> {
    let sol = solve_theta(lambda, c, y).map_err(invalid_input)?;
    let classical = classical_limit(lambda, c, y).map_err(invalid_input)?;
    println!("lambda,theta,residual,classical_limit");
    println!(
        "{},{:.6},{:.3e},{:.3}",
        lambda, sol.theta, sol.residual, classical
    );
    Ok(())
}

fn print_summary(summary: &ExperimentSummary, out: &Path) {
    println!(
        "{} of {} replications succeeded; results in {}",
        summary.successful,
        summary.replications,
        out.display()
    );
    let show = |x: Option<f64>| x.map_or("null".to_string(), |v| format!("{v:.4}"));
    for s in &summary.spikes {
        let m = &s.fluctuation.moments;
        println!(
            "spike {:>3}  lambda {:>10.4}  ratio {}  mean {}  var {}  ks {}",
            s.spike,
            s.lambda,
            show(s.ratio_mean),
            show(m.mean),
            show(m.variance),
            show(s.fluctuation.ks)
        );
    }
}

/// Writes a partial manifest, runs, then writes results and the final manifest.
fn run_and_write(config: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let threads = threads_from_env()?;
    let mut manifest = RunManifest::begin(config);
    manifest.write(out)?;
    let start = Instant::now();
    match run_experiment(config, threads) {
        Ok(summary) => {
            manifest.complete(start.elapsed().as_secs_f64());
            write_summary(&summary, &mut manifest, out)?;
            print_summary(&summary, out);
            Ok(())
        }
        Err(e) => {
            manifest.fail(start.elapsed().as_secs_f64(), &e);
            manifest.write(out)?;
            Err(e.into())
        }
    }
}

fn simulate(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let mut file = ConfigFile::load(config).map_err(|e| match e {
        io @ Error::Io { .. } => invalid_input(io),
        other => other.into(),
    })?;
    if let Some(r) = reps {
        file.replications = r;
    }
    if let Some(s) = seed {
        file.seed = s;
    }
    run_and_write(&file.resolve()?, out)
}

fn verify(suite: &str, quick: bool) -> Result<bool, Failure> {
    let suite: Suite = suite.parse()?;
    let scale = if quick { Scale::Quick } else { Scale::Full };
    let outcomes = run_suite(suite, scale, threads_from_env()?)?;
    for o in &outcomes {
        println!("{o}");
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn figure(out: &Path) -> Result<(), Failure> {
    let q = spiked_fisher::model::benchmark_spike_schedule(BENCH_P)?.0;
    let config = benchmark_config(
        (BENCH_P, BENCH_N, BENCH_T),
        EntryDist::Gaussian,
        Mode::CltSimple,
        CLT_REPLICATIONS,
        Some(vec![1, q]),
    )?;
    run_and_write(&config, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Lsd { c, y, z } => lsd(c, y, z),
        Command::Theta { lambda, c, y } => theta(lambda, c, y),
        Command::Simulate {
            config,
            reps,
            seed,
            out,
        } => simulate(&config, reps, seed, &out),
        Command::Verify { suite, quick } => match verify(&suite, quick) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_FAILURE),
            Err(f) => Err(f),
        },
        Command::PaperFigure { out } => figure(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
