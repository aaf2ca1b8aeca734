use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cad_core::error::Error;
use cad_core::scenario::{self, Kind, Report, ScenarioConfig};
use clap::{Parser, ValueEnum};

#[derive(Parser)]
#[command(name = "cad", about = "Courant algebroids, reduction and Poisson-Lie T-duality checks")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the report and data files.
    #[arg(long)]
    out: PathBuf,
    /// Divisors of the base lattice step, e.g. 1,2,4.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Command {
    Axioms,
    Reduce,
    Dualize,
    Branes,
    Noether,
}

impl From<Command> for Kind {
    fn from(c: Command) -> Self {
        match c {
            Command::Axioms => Kind::Axioms,
            Command::Reduce => Kind::Reduce,
            Command::Dualize => Kind::Dualize,
            Command::Branes => Kind::Branes,
            Command::Noether => Kind::Noether,
        }
    }
}

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_MISSING_FILE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_SCENARIO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::File(_) | Error::Io(_) => EXIT_MISSING_FILE,
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_SCENARIO,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("CAD_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("CAD_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err("CAD_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Error> {
    if !cli.config.is_file() {
        return Err(Error::File(format!("{} (no such file)", cli.config.display())));
    }
    let mut cfg = ScenarioConfig::load(&cli.config)?;
    let kind: Kind = cli.command.into();
    if cfg.kind != kind {
        return Err(Error::Config(format!("config is for '{:?}' but the command is '{:?}'", cfg.kind, kind)));
    }
    if let Some(levels) = &cli.levels {
        cfg.convergence_levels = Some(levels.clone());
        cfg.validate()?;
    }
    Ok(cfg)
}

fn write_outputs(out: &Path, report: &Report, artifacts: &[scenario::Artifact]) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(out.join("report.json"), json + "\n")?;
    let timings = serde_json::to_string_pretty(&report.timings()).map_err(std::io::Error::other)?;
    std::fs::write(out.join("timings.json"), timings + "\n")?;
    for a in artifacts {
        std::fs::write(out.join(&a.name), &a.content)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let (report, artifacts) = match scenario::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Err(e) = write_outputs(&cli.out, &report, &artifacts) {
        eprintln!("error: writing {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_MISSING_FILE);
    }
    for c in &report.checks {
        let order = c.order.map(|o| format!(" order {o}")).unwrap_or_default();
        println!("{} {} residual {:.3e}{order}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.residual);
    }
    println!("{} checks, {} failed, {:.2}s", report.checks.len(), report.checks.iter().filter(|c| !c.pass).count(), report.wall_time);
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}
