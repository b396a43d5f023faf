//! `projctl`: batch front end for saturation, synthesis, exact control and probes.

mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Source, Verb};
use error::{CliError, ExitKind};
use output::{config_hash, Format, OutputDir};

#[derive(Debug, Parser)]
#[command(name = "projctl", version, about = "Controllability experiments on the Galerkin-truncated 3D Navier-Stokes system")]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for concurrent trials.
    #[arg(long)]
    jobs: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn execute(cli: &Cli) -> Result<run::Outcome, CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::config(format!("{}: {e}", cli.config.display())))?;
    let src = Source::new(&text);
    let mut cfg = config::parse(&text).map_err(|e| e.context(&cli.config.display().to_string()))?;
    if let Some(v) = cfg.verb {
        if v != cli.verb {
            return Err(CliError::config(format!(
                "configuration is for '{}' but the command is '{}'",
                v.name(),
                cli.verb.name()
            )));
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    let dir = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let saturate = std::mem::take(&mut cfg.saturate);
    let exact = std::mem::take(&mut cfg.exact);
    let resolved = config::resolve(cfg, &src)?;
    let mut out = OutputDir::create(&dir, config_hash(&text, seed), cli.verb.name(), seed, cli.format)?;
    let outcome = match cli.verb {
        Verb::Saturate => run::saturate(&resolved, &saturate, &mut out),
        Verb::Synthesize => run::synthesize(&resolved, &src, &mut out),
        Verb::Exact => run::exact(&resolved, &exact, &src, &mut out),
        Verb::Probe => run::probe(&resolved, &exact, &mut out),
    }?;
    for p in out.written() {
        eprintln!("wrote {}", p.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Config.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(&cli) {
        Ok(o) => {
            println!("{}: {}", cli.verb.name(), o.summary);
            if o.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(o.failure.code() as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
