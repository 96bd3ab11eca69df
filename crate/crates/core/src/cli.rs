//! Command-line front end. `run` parses arguments and returns the process
//! exit code; the `gwbar` binary is a thin wrapper around it.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{persist, run_experiment, ExperimentKind, ExperimentSpec};
use crate::inference::{aging_test, estimate, Decision};
use crate::model::ModelParams;
use crate::simulate::{simulate, stationary_matched_law, w_laplace, InitialLaw, SimulationSpec};
use crate::tree::LineageTree;
use crate::PolySpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_REJECT: i32 = 3;
pub const EXIT_NO_DECISION: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

const EXIT_CODES: &str = "\
Exit codes:
  0  success (test: no rejection; verify: every check passed)
  1  usage error
  2  invalid input file or parameters
  3  test: null hypothesis rejected
  4  test: no decision (extinct lineage or undefined statistic)
  5  verify: at least one check failed";

#[derive(Debug, Parser)]
#[command(name = "gwbar", version, about = "Bifurcating autoregressions on Galton-Watson trees", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one lineage and write it as JSON lines.
    #[command(after_help = EXIT_CODES)]
    Simulate(SimulateArgs),
    /// Estimate the parameters from a lineage file.
    #[command(after_help = EXIT_CODES)]
    Estimate(EstimateArgs),
    /// Run the aging test (equal new- and old-pole dynamics) on a lineage file.
    #[command(after_help = EXIT_CODES)]
    Test(TestArgs),
    /// Run a Monte-Carlo experiment and persist its report.
    #[command(after_help = EXIT_CODES)]
    Verify(VerifyArgs),
    /// Print the Laplace transform of W on a grid of lambda values.
    #[command(name = "w-laplace", after_help = EXIT_CODES)]
    WLaplace(WLaplaceArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Parameter JSON file.
    #[arg(long)]
    params: PathBuf,
    /// Last generation to simulate.
    #[arg(long)]
    gens: usize,
    #[arg(long)]
    seed: u64,
    /// Fixed root value; by default the root is drawn from the normal law
    /// with the stationary mean and variance.
    #[arg(long, allow_negative_numbers = true)]
    root: Option<f64>,
    /// Output file (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Lineage JSONL file.
    #[arg(long)]
    input: PathBuf,
    /// Use mothers up to this generation (default: depth - 1).
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Experiment spec JSON. Without it, --kind, --params, --gens,
    /// --replicates and --seed are all required.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<ExperimentKind>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    /// Test function, e.g. "y, z" for y + z. Repeatable.
    #[arg(long = "f")]
    f_specs: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory receiving `<timestamp>-<kind>/`.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    /// Skip writing the run directory.
    #[arg(long)]
    no_persist: bool,
    /// Also write the report JSON here (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WLaplaceArgs {
    #[arg(long)]
    params: PathBuf,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4,8")]
    lambda: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and executes the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Test(a) => cmd_test(a),
        Command::Verify(a) => cmd_verify(a),
        Command::WLaplace(a) => cmd_w_laplace(a),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Input(e)) => {
            eprintln!("error: {e}");
            EXIT_INVALID_INPUT
        }
    }
}

enum CliError {
    Usage(String),
    Input(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Input(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Input(e.into())
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_tree(path: &Path) -> Result<LineageTree> {
    LineageTree::read_jsonl(BufReader::new(File::open(path)?))
}

/// `--gens`, or one less than the tree depth. A tree that stops before
/// generation 2 is read as extinct and gets `n = 1`.
fn mother_generations(tree: &LineageTree, gens: Option<usize>) -> Result<usize> {
    match gens {
        Some(0) => Err(Error::Precondition("--gens must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(tree
            .depth()
            .ok_or(Error::EmptyTree)?
            .saturating_sub(1)
            .max(1)),
    }
}

fn cmd_simulate(a: SimulateArgs) -> std::result::Result<i32, CliError> {
    let params = ModelParams::from_path(&a.params)?;
    let (theta, kappa) = (params.theta(), params.kappa());
    let initial = match a.root {
        Some(value) => InitialLaw::Constant { value },
        None => stationary_matched_law(&theta, &kappa)?,
    };
    let spec = SimulationSpec {
        max_generation: a.gens,
        seed: a.seed,
        initial,
    };
    let tree = simulate(&spec, &theta, &kappa)?;
    let mut w = output(a.out.as_deref())?;
    tree.write_jsonl(&mut w)?;
    w.flush()?;
    eprintln!("simulated {} cells up to generation {}", tree.len(), a.gens);
    Ok(EXIT_OK)
}

fn cmd_estimate(a: EstimateArgs) -> std::result::Result<i32, CliError> {
    let tree = read_tree(&a.input)?;
    let n = mother_generations(&tree, a.gens)?;
    write_json(&estimate(&tree, n)?, a.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_test(a: TestArgs) -> std::result::Result<i32, CliError> {
    let tree = read_tree(&a.input)?;
    let n = mother_generations(&tree, a.gens)?;
    let report = aging_test(&tree, n, a.level)?;
    write_json(&report, a.out.as_deref())?;
    Ok(match report.decision {
        Decision::NoRejection => EXIT_OK,
        Decision::Reject => EXIT_REJECT,
        Decision::NoDecision => {
            if let Some(reason) = &report.reason {
                eprintln!("no decision: {reason}");
            }
            EXIT_NO_DECISION
        }
    })
}

fn verify_spec(a: &VerifyArgs) -> std::result::Result<ExperimentSpec, CliError> {
    let mut spec = match &a.spec {
        Some(path) => serde_json::from_str::<ExperimentSpec>(&std::fs::read_to_string(path)?)
            .map_err(Error::from)?,
        None => {
            let missing: Vec<&str> = [
                ("--kind", a.kind.is_none()),
                ("--params", a.params.is_none()),
                ("--gens", a.gens.is_none()),
                ("--replicates", a.replicates.is_none()),
                ("--seed", a.seed.is_none()),
            ]
            .into_iter()
            .filter_map(|(flag, absent)| absent.then_some(flag))
            .collect();
            if !missing.is_empty() {
                return Err(CliError::Usage(format!(
                    "without --spec these flags are required: {}",
                    missing.join(", ")
                )));
            }
            let params = ModelParams::from_path(a.params.as_ref().unwrap())?;
            ExperimentSpec::new(
                a.kind.unwrap(),
                params.theta(),
                params.kappa(),
                a.gens.unwrap(),
                a.replicates.unwrap(),
                a.seed.unwrap(),
            )
        }
    };
    if a.spec.is_some() {
        if let Some(path) = &a.params {
            let params = ModelParams::from_path(path)?;
            spec.theta = params.theta();
            spec.kappa = params.kappa();
        }
        if let Some(kind) = a.kind {
            spec.kind = kind;
        }
        if let Some(n) = a.gens {
            spec.n = n;
        }
        if let Some(r) = a.replicates {
            spec.replicates = r;
        }
        if let Some(seed) = a.seed {
            spec.seed = seed;
        }
    }
    if let Some(level) = a.level {
        spec.level = level;
    }
    if !a.f_specs.is_empty() {
        spec.f_specs = a
            .f_specs
            .iter()
            .map(|s| s.parse::<PolySpec>())
            .collect::<Result<_>>()?;
    }
    if a.threads.is_some() {
        spec.threads = a.threads;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_verify(a: VerifyArgs) -> std::result::Result<i32, CliError> {
    let spec = verify_spec(&a)?;
    let report = run_experiment(&spec)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: observed {:.6}, band [{:.6}, {:.6}]",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.observed,
            c.lower,
            c.upper
        );
    }
    if !a.no_persist {
        let dir = persist(&report, &a.runs)?;
        eprintln!("wrote {}", dir.display());
    }
    write_json(&report, a.out.as_deref())?;
    Ok(if report.all_pass {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn cmd_w_laplace(a: WLaplaceArgs) -> std::result::Result<i32, CliError> {
    let theta = ModelParams::from_path(&a.params)?.theta();
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "lambda,phi")?;
    for &lambda in &a.lambda {
        writeln!(w, "{lambda},{}", w_laplace(lambda, &theta)?)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}
