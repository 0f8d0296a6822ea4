//! `semitrace`: runs the trace-expansion checks and archives the results.

mod archive;
mod logging;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use semitrace::config::RunConfig;
use semitrace::verify::Stage;
use semitrace::Error;

/// Exit statuses.
const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "semitrace", version, about = "Semiclassical trace expansion checks for magnetic Schrödinger operators on flat tori")]
struct Cli {
    /// JSON run configuration. Without it the `--preset` problem is used.
    #[arg(long, global = true, env = "SEMITRACE_CONFIG")]
    config: Option<PathBuf>,

    /// Built-in problem used when no config file is given.
    #[arg(long, global = true, env = "SEMITRACE_PRESET", value_enum, default_value_t = Preset::Free)]
    preset: Preset,

    /// Output directory for the run archive.
    #[arg(long, global = true, env = "SEMITRACE_OUT", default_value = "semitrace-out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SEMITRACE_THREADS")]
    threads: Option<usize>,

    /// Seed for every random draw; overrides the config value.
    #[arg(long, global = true, env = "SEMITRACE_SEED")]
    seed: Option<u64>,

    /// Also render SVG plots next to the plot data.
    #[arg(long, global = true, env = "SEMITRACE_SVG")]
    svg: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Free,
    Generic,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Transverse-gauge invariants and spectrum invariance under a gauge change.
    GaugeCheck,
    /// Remainder orders of the rescaled operator expansion.
    ExpandCheck,
    /// Pointwise and integrated trace coefficients f0, f1, f2.
    Coeffs,
    /// Functional calculus against exact spectral decomposition, with sweeps.
    HsCheck,
    /// Trace ladder with both routes and resolution certificates.
    Trace {
        /// Also write the dense operator at this p as a binary file.
        #[arg(long, value_name = "P")]
        export_dense: Option<f64>,
    },
    /// Trace ladder, expansion fit and diagonal-kernel study.
    Verify,
    /// Every check, aggregated into one report.
    FullReport,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::GaugeCheck => Stage::GaugeCheck,
            Command::ExpandCheck => Stage::ExpandCheck,
            Command::HsCheck => Stage::HsCheck,
            Command::Trace { .. } => Stage::Trace,
            Command::Verify => Stage::Verify,
            Command::FullReport => Stage::FullReport,
            Command::Coeffs => return None,
        })
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String), Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::from_json(&text)?
        }
        None => match cli.preset {
            Preset::Free => RunConfig::free(),
            Preset::Generic => RunConfig::generic(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let snapshot = cfg.to_json();
    Ok((cfg, snapshot))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_USAGE,
        Error::Stage { source, .. } => exit_code(source),
        _ => EXIT_INTERNAL,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let (cfg, snapshot) = load_config(cli)?;
    let archive = archive::Archive::create(&cli.out, &snapshot)?;
    logging::init(&archive.log_path())?;
    log::info!("config snapshot sha256 {}", archive.snapshot_sha256);

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let Some(stage) = cli.command.stage() else {
        archive.write_coefficients(&cfg)?;
        return Ok(EXIT_PASS);
    };
    let report = semitrace::verify::run_report(&cfg, stage)?;
    let report = archive.write_report(report, &cfg, cli.svg)?;
    if stage == Stage::HsCheck {
        archive.write_hs_sweep(&cfg)?;
    }
    if let Command::Trace { export_dense: Some(p) } = cli.command {
        archive.write_dense(&cfg, p)?;
    }
    for row in &report.criteria {
        println!("{}", row.line());
    }
    println!("report: {}", archive.dir.join("report.json").display());
    Ok(if report.passed() { EXIT_PASS } else { EXIT_FAIL })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
