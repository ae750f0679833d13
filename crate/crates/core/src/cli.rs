//! `dispatch` command line: `bench`, `run`, `oracle-check`, `version`.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage or input error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{
    catalog_construction_cost, render_catalog_costs, render_report, run_bench, BenchConfig, BenchError,
    BenchModel, ReportFormat, DEFAULT_MESSAGES, DEFAULT_REPETITIONS, DEFAULT_WARMUP,
};
use crate::message::{DeliveryLog, DeliveryRecord, ModelTag};
use crate::oracle::{first_divergence, oracle_deliveries};
use crate::scenario::{parse_scenario, random_scenario, run_scenario, RandomLimits, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dispatch", about = "Direct message dispatch: benchmarks, scenario runs and oracle checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time N sends from one component to one handler under each model.
    Bench(BenchArgs),
    /// Play a scenario file against one model and write its delivery log.
    Run(RunArgs),
    /// Compare model delivery logs against the brute-force oracle.
    OracleCheck(OracleArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated models: direct, os_send, os_post_pump, msgmap_over_os, msgmap, vtable, vtable[N]
    #[arg(long, value_delimiter = ',', default_values_t = BenchModel::defaults())]
    pub models: Vec<BenchModel>,
    #[arg(long, default_value_t = DEFAULT_MESSAGES, value_parser = clap::value_parser!(u64).range(1..))]
    pub messages: u64,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: u64,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Payload size in bytes.
    #[arg(long, default_value_t = 0)]
    pub payload: usize,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also run the vtable model at these catalog sizes, e.g. 8,64,512.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    pub catalog_sizes: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: ModelTag,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Write the log here instead of standard output.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scenario", "random"]))]
pub struct OracleArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Number of seeded random scenarios to check.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "random")]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Bench(a) => cmd_bench(&a, out, err),
        Command::Run(a) => cmd_run(&a, out, err),
        Command::OracleCheck(a) => cmd_oracle_check(&a, scenario_runner, out, err),
        Command::Version => {
            let _ = writeln!(out, "{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
            EXIT_OK
        }
    };
    let _ = out.flush();
    result
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match path {
        Some(p) => match std::fs::write(p, text) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
                EXIT_FAILURE
            }
        },
        None => {
            let _ = out.write_all(text.as_bytes());
            EXIT_OK
        }
    }
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut models = args.models.clone();
    for &size in &args.catalog_sizes {
        let m = BenchModel::Vtable {
            catalog_size: size as usize,
        };
        if !models.contains(&m) {
            models.push(m);
        }
    }
    let config = BenchConfig {
        models,
        message_count: args.messages,
        warmup_count: args.warmup,
        repetitions: args.reps as usize,
        payload_size: args.payload,
    };
    let results = match run_bench(&config) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return match e {
                BenchError::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            };
        }
    };
    let mut report = render_report(&results, args.format);
    if args.format == ReportFormat::Markdown && !args.catalog_sizes.is_empty() {
        let mut costs = Vec::new();
        for &size in &args.catalog_sizes {
            match catalog_construction_cost(size as usize, 10_000) {
                Ok(c) => costs.push(c),
                Err(e) => {
                    let _ = writeln!(err, "error: catalog of {size}: {e}");
                    return EXIT_FAILURE;
                }
            }
        }
        report.push('\n');
        report.push_str(&render_catalog_costs(&costs));
    }
    write_output(args.out.as_deref(), &report, out, err)
}

fn load_scenario(path: &Path, err: &mut dyn Write) -> Result<Scenario, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })?;
    parse_scenario(&text).map_err(|e| {
        let _ = writeln!(err, "error: {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn scenario_exit_code(e: &ScenarioError) -> i32 {
    match e {
        ScenarioError::Parse { .. } | ScenarioError::Validation { .. } => EXIT_USAGE,
        ScenarioError::Step { .. } => EXIT_FAILURE,
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let scenario = match load_scenario(&args.scenario, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    match run_scenario(args.model, &scenario) {
        Ok(log) => write_output(args.log.as_deref(), &log.to_lines(), out, err),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", args.scenario.display());
            scenario_exit_code(&e)
        }
    }
}

/// Signature of the function that plays a scenario against a model.
pub type ScenarioRunner = fn(ModelTag, &Scenario) -> Result<DeliveryLog, ScenarioError>;

pub fn scenario_runner(model: ModelTag, scenario: &Scenario) -> Result<DeliveryLog, ScenarioError> {
    run_scenario(model, scenario)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckOutcome {
    /// Every listed model matched the oracle.
    Match(Vec<ModelTag>),
    Mismatch {
        model: ModelTag,
        index: usize,
        expected: Option<DeliveryRecord>,
        actual: Option<DeliveryRecord>,
    },
    Failed {
        model: ModelTag,
        error: ScenarioError,
    },
}

/// Runs every model that can play `scenario` and compares with the oracle.
/// The direct log must match record for record; the others must match on
/// everything except the model tag.
pub fn check_scenario(scenario: &Scenario, runner: ScenarioRunner) -> Result<CheckOutcome, ScenarioError> {
    let expected = oracle_deliveries(scenario)?;
    let mut checked = Vec::new();
    for model in ModelTag::ALL {
        if !scenario.supports(model) {
            continue;
        }
        let actual = match runner(model, scenario) {
            Ok(log) => log,
            Err(error) => return Ok(CheckOutcome::Failed { model, error }),
        };
        let divergence = if model == ModelTag::Direct {
            first_divergence(&expected.records, &actual.records, |a, b| a == b)
        } else {
            first_divergence(&expected.records, &actual.records, |a, b| {
                (a.seq, a.msg_type, a.sender, a.receiver) == (b.seq, b.msg_type, b.sender, b.receiver)
            })
        };
        if let Some((index, e, a)) = divergence {
            return Ok(CheckOutcome::Mismatch {
                model,
                index,
                expected: e.copied(),
                actual: a.copied(),
            });
        }
        checked.push(model);
    }
    Ok(CheckOutcome::Match(checked))
}

fn show(r: Option<DeliveryRecord>) -> String {
    r.map_or_else(|| "<none>".to_owned(), |r| r.to_string())
}

pub fn cmd_oracle_check(args: &OracleArgs, runner: ScenarioRunner, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let scenarios: Vec<(String, Scenario)> = match (&args.scenario, args.random) {
        (Some(path), _) => match load_scenario(path, err) {
            Ok(s) => vec![(path.display().to_string(), s)],
            Err(code) => return code,
        },
        (None, Some(count)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..count)
                .map(|i| {
                    // every fourth scenario also exercises post/pump (os only)
                    let limits = RandomLimits {
                        queued_actions: i % 4 == 3,
                        ..RandomLimits::default()
                    };
                    (format!("random #{i} (seed {})", args.seed), random_scenario(&mut rng, &limits))
                })
                .collect()
        }
        (None, None) => unreachable!("clap requires one source"),
    };

    let mut runs = 0usize;
    for (name, scenario) in &scenarios {
        match check_scenario(scenario, runner) {
            Ok(CheckOutcome::Match(models)) => runs += models.len(),
            Ok(CheckOutcome::Mismatch {
                model,
                index,
                expected,
                actual,
            }) => {
                let _ = writeln!(
                    out,
                    "MISMATCH {name}: model {model} diverges at record {index}\n  expected: {}\n  actual:   {}",
                    show(expected),
                    show(actual)
                );
                return EXIT_FAILURE;
            }
            Ok(CheckOutcome::Failed { model, error }) => {
                let _ = writeln!(out, "FAILED {name}: model {model}: {error}");
                return EXIT_FAILURE;
            }
            Err(e) => {
                let _ = writeln!(err, "error: {name}: {e}");
                return scenario_exit_code(&e);
            }
        }
    }
    let _ = writeln!(
        out,
        "ok: {} scenario(s), {runs} model run(s) match the oracle",
        scenarios.len()
    );
    EXIT_OK
}
