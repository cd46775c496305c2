//! `slowfast` command line: runs TOML-configured experiments and writes
//! CSV tables, a summary and a manifest per run.
//!
//! Exit codes: 0 when every acceptance rule passed, 2 when a rule failed,
//! 1 on configuration, precondition or I/O errors.

pub mod config;
pub mod output;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use slowfast::registry::catalog;
use slowfast::{Error, Result};

use config::{ExperimentConfig, ExperimentKind};
use output::{sha256_hex, Outputs, RunManifest, Summary};

#[derive(Parser, Debug)]
#[command(name = "slowfast", version, about = "Averaging experiments for slow-fast SDEs with time-dependent fast rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the summary as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run any experiment configuration.
    Run(RunArgs),
    /// Check the structural assumptions on random samples.
    Validate(RunArgs),
    /// Simulate coupled and averaged paths.
    Simulate(RunArgs),
    /// Sample the fast measures μ^x_t.
    Measure(RunArgs),
    /// Evaluate Poisson solutions and their residuals.
    Poisson(RunArgs),
    /// Strong averaging error over an ε grid.
    StrongRate(RunArgs),
    /// Weak averaging error over an ε grid.
    WeakRate(RunArgs),
    /// Exact errors of the closed-form examples.
    OracleCompare(RunArgs),
    /// Checks of the Λ ratio, the period average and the decay convolution.
    LemmaChecks(RunArgs),
    /// List the registered models.
    ListModels {
        #[arg(long)]
        json: bool,
    },
}

/// Parses `args` (program name first), runs and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (args, expected) = match cli.command {
        Command::ListModels { json } => {
            list_models(json);
            return 0;
        }
        Command::Run(a) => (a, None),
        Command::Validate(a) => (a, Some(ExperimentKind::Validate)),
        Command::Simulate(a) => (a, Some(ExperimentKind::Simulate)),
        Command::Measure(a) => (a, Some(ExperimentKind::Measure)),
        Command::Poisson(a) => (a, Some(ExperimentKind::Poisson)),
        Command::StrongRate(a) => (a, Some(ExperimentKind::StrongRate)),
        Command::WeakRate(a) => (a, Some(ExperimentKind::WeakRate)),
        Command::OracleCompare(a) => (a, Some(ExperimentKind::OracleCompare)),
        Command::LemmaChecks(a) => (a, Some(ExperimentKind::LemmaChecks)),
    };
    match execute(&args, expected) {
        Ok(summary) => {
            if args.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                for r in &summary.rules {
                    println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                }
                for n in &summary.notes {
                    println!("note: {n}");
                }
            }
            if summary.passed {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn list_models(json: bool) {
    let models = catalog();
    if json {
        println!("{}", serde_json::to_string_pretty(&models).expect("catalog serializes"));
        return;
    }
    for m in models {
        println!("{}{}", m.id, if m.loadable { "" } else { " (library only)" });
        println!("    {}", m.summary);
        for p in m.params {
            let default = p.default.map(|d| format!(" = {d}")).unwrap_or_default();
            println!("    {}: {}{default}  {}", p.name, p.kind, p.doc);
        }
    }
}

fn execute(args: &RunArgs, expected: Option<ExperimentKind>) -> Result<Summary> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut config = ExperimentConfig::load(&args.config)?;
    let kind = config.experiment.kind();
    if let Some(want) = expected {
        if want != kind {
            return Err(Error::Config(format!("`{}` was given a `{}` configuration", want.name(), kind.name())));
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out_dir = args.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    config.output = None;

    let reg = config.model.build()?;
    let mut outputs = Outputs::new(&out_dir, &config.id, config.seed)?;
    let mut summary = Summary::new(&config.id, kind.name(), reg.id, config.seed);

    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(args.threads.unwrap_or(0)).build().map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| run::execute(&config.experiment, &reg, config.seed, &mut outputs, &mut summary))?;

    let summary_json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    outputs.bytes("summary.json", &summary_json)?;
    let manifest = RunManifest {
        config_sha256: sha256_hex(config.to_toml().as_bytes()),
        library_version: slowfast::VERSION,
        seed: config.seed,
        threads,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: outputs.files().to_vec(),
    };
    let path = outputs.path("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(summary)
}
