//! `runcons`: scenario files in, CSV tables out.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use running_consensus::runner::{run, RunError, RunOptions};
use running_consensus::scenario::{bundled, ExperimentKind, ScenarioFile, BUNDLED};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "RUNCONS_OUT_DIR";

#[derive(Parser)]
#[command(name = "runcons", version, about = "Running-consensus detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Base seed, overriding the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials, overriding the scenario.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory [env: RUNCONS_OUT_DIR, default: results].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Write the node trajectory of trial 0 to this CSV file.
    #[arg(long, value_name = "PATH", global = true)]
    dump_trajectory: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the expected gossip matrix.
    Spectral { scenario: Option<PathBuf> },
    /// Consensus bounds with simulated gamma_n and rho_n.
    Bounds { scenario: Option<PathBuf> },
    /// Fixed-sample-size detection.
    Fss { scenario: Option<PathBuf> },
    /// Sequential detection.
    Sequential { scenario: Option<PathBuf> },
    /// Page change detection.
    Change { scenario: Option<PathBuf> },
    /// Relative efficiencies of the change detectors.
    Efficiency { scenario: Option<PathBuf> },
    /// Run the bundled scenario of a figure tag.
    Reproduce {
        /// Figure tag, e.g. fig:sim2.
        tag: Option<String>,
        /// List the available tags.
        #[arg(long)]
        list: bool,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn load(kind: ExperimentKind, path: Option<&Path>) -> Result<ScenarioFile, Failure> {
    let sc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            let raw: ScenarioFile =
                toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            if raw.experiment.kind != kind {
                return Err(Failure::Usage(format!(
                    "{} describes a {} experiment, not {}",
                    p.display(),
                    raw.experiment.kind.label(),
                    kind.label()
                )));
            }
            raw
        }
        None => ScenarioFile::empty(kind),
    };
    Ok(sc)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let (kind, path, tag) = match &cli.command {
        Command::Spectral { scenario } => (ExperimentKind::Spectral, scenario, None),
        Command::Bounds { scenario } => (ExperimentKind::Bounds, scenario, None),
        Command::Fss { scenario } => (ExperimentKind::Fss, scenario, None),
        Command::Sequential { scenario } => (ExperimentKind::Sequential, scenario, None),
        Command::Change { scenario } => (ExperimentKind::Change, scenario, None),
        Command::Efficiency { scenario } => (ExperimentKind::Efficiency, scenario, None),
        Command::Reproduce { list: true, .. } => {
            for (t, _) in BUNDLED {
                println!("{t}");
            }
            return Ok(());
        }
        Command::Reproduce { tag: None, .. } => return Err(Failure::Usage("reproduce needs a figure tag".into())),
        Command::Reproduce { tag: Some(t), .. } => (ExperimentKind::Spectral, &None, Some(t.as_str())),
    };
    let base = match tag {
        Some(t) => bundled(t)
            .ok_or_else(|| Failure::Usage(format!("unknown figure tag `{t}` (see `reproduce --list`)")))?
            .map_err(|e| Failure::Usage(e.to_string()))?,
        None => load(kind, path.as_deref())?,
    };
    let sc = base.with_overrides(&c.set).map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = RunOptions { seed: c.seed, trials: c.trials, threads: c.threads, trajectory: c.dump_trajectory.clone() };
    let outputs = run(&sc, &opts)?;
    let dir = c
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let stem = sc.stem();
    for o in outputs {
        let path = dir.join(format!("{stem}{}.csv", o.suffix));
        o.table.write_to(&path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        if o.summary.is_empty() {
            println!("{}: {} rows", path.display(), o.table.len());
        } else {
            println!("{}: {} rows; {}", path.display(), o.table.len(), o.summary);
        }
    }
    if let Some(p) = &c.dump_trajectory {
        println!("{}: trajectory of trial 0", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
