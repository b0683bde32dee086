//! The `stgms` command line: configuration, experiment drivers and CSV output.

pub mod config;
pub mod experiment;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::coefficient::write_field;
use crate::error::{Error, Result};
use crate::online::{HistoryRow, OnlineParams};
use crate::snapshot::GENERATOR_ID;

pub use config::{ExperimentConfig, FieldKind, SweepKind};
pub use experiment::{build_problem, offline_params, Setup};

pub const VERSION: &str = concat!("stgms ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "stgms", version, about = "Space-time GMsFEM experiments for parabolic problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Snapshot seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores), overriding the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fine space-time reference solution.
    SolveFine,
    /// Offline multiscale solve with `L` functions per neighborhood.
    SolveOffline,
    /// Offline solve followed by `sweeps` online enrichment sweeps.
    SolveOnline,
    /// Offline error table over `sweep_values`.
    TableOffline,
    /// Online error tables for every `L` in `L_list`.
    TableOnline,
    /// Correlation of `1/Λ*` with `e2²` over `L_list`.
    CorrStudy,
    /// Coefficient field as CSV.
    DumpField,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SolveFine => "solve-fine",
            Command::SolveOffline => "solve-offline",
            Command::SolveOnline => "solve-online",
            Command::TableOffline => "table-offline",
            Command::TableOnline => "table-online",
            Command::CorrStudy => "corr-study",
            Command::DumpField => "dump-field",
        }
    }
}

/// Resolves the configuration of a parsed command line.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `name` into the output directory behind the provenance header.
fn emit(
    cfg: &ExperimentConfig,
    command: Command,
    name: &str,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let mut buf = Vec::new();
    writeln!(buf, "# version={VERSION}")?;
    writeln!(buf, "# command={}", command.name())?;
    writeln!(buf, "# generator_id={GENERATOR_ID}")?;
    writeln!(buf, "# seed={}", cfg.seed)?;
    for line in cfg.echo().lines() {
        writeln!(buf, "# config {line}")?;
    }
    body(&mut buf)?;
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    std::fs::write(&path, buf)?;
    Ok(path)
}

fn history_csv(rows: &[HistoryRow]) -> impl FnOnce(&mut Vec<u8>) -> std::io::Result<()> + '_ {
    move |w| {
        writeln!(w, "{}", HistoryRow::HEADER)?;
        rows.iter().try_for_each(|r| r.write_row(&mut *w))
    }
}

/// Runs one subcommand and returns the files it wrote.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute_in_pool(command, cfg))
}

fn execute_in_pool(command: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let problem = build_problem(cfg)?;
    if command == Command::DumpField {
        return Ok(vec![emit(cfg, command, "field.csv", |w| write_field(&problem.kappa, w))?]);
    }
    let setup = Setup::new(problem)?;
    let mut files = Vec::new();
    match command {
        Command::SolveFine => {
            for u in &setup.fine {
                files.push(emit(cfg, command, &format!("fine_slab{}.csv", u.slab), |w| u.write_csv(w))?);
            }
        }
        Command::SolveOffline => {
            let basis = crate::offline::OfflineBasis::build(setup.mesh(), &setup.problem.kappa, offline_params(cfg, cfg.l, cfg.p_bf))?;
            let (report, coarse, spaces) = setup.evaluate(&basis)?;
            files.push(emit(cfg, command, "offline_report.csv", |w| {
                writeln!(w, "{}", crate::diagnostics::ErrorReport::HEADER)?;
                report.write_row(w)
            })?);
            files.push(emit(cfg, command, "coarse_solution.csv", |w| coarse.write_csv(&spaces, w))?);
        }
        Command::SolveOnline => {
            let basis = crate::offline::OfflineBasis::build(setup.mesh(), &setup.problem.kappa, offline_params(cfg, cfg.l, cfg.p_bf))?;
            let history = setup.online(&basis, &OnlineParams { sweeps: cfg.sweeps, theta: cfg.theta })?;
            files.push(emit(cfg, command, "online_history.csv", history_csv(&history))?);
        }
        Command::TableOffline => {
            let reports = setup.offline_table(cfg)?;
            files.push(emit(cfg, command, "offline_table.csv", |w| {
                writeln!(w, "{}", crate::diagnostics::ErrorReport::HEADER)?;
                reports.iter().try_for_each(|r| r.write_row(&mut *w))
            })?);
        }
        Command::TableOnline => {
            let table = setup.online_table(cfg)?;
            files.push(emit(cfg, command, "online_table_e1.csv", |w| table.write_csv(w, false))?);
            files.push(emit(cfg, command, "online_table_e2.csv", |w| table.write_csv(w, true))?);
            for run in &table.runs {
                files.push(emit(cfg, command, &format!("online_history_L{}.csv", run.l), history_csv(&run.plain))?);
                if let Some(adaptive) = &run.adaptive {
                    let name = format!("online_history_L{}_adaptive.csv", run.l);
                    files.push(emit(cfg, command, &name, history_csv(adaptive))?);
                }
            }
        }
        Command::CorrStudy => {
            let study = setup.correlation_study(cfg)?;
            if study.correlation.is_nan() {
                eprintln!("warning: correlation undefined (constant sample or fewer than two rows)");
            }
            files.push(emit(cfg, command, "corr_study.csv", |w| study.write_csv(w))?);
        }
        Command::DumpField => unreachable!(),
    }
    Ok(files)
}

/// Exit code of a failed run: 2 for configuration errors, 3 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else {
        3
    }
}

/// Entry point of the `stgms` binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("stgms {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

/// Reads back a CSV written by the CLI, dropping `#` comment lines.
pub fn read_body(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect())
}
