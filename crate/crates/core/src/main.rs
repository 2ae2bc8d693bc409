use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use donas::harness::config::{ExperimentConfig, Mode};
use donas::harness::report::{self, Status};
use donas::harness::run;
use donas::Error;

#[derive(Parser)]
#[command(name = "donas", version = report::VERSION, about = "Double-oracle adversarial training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's `mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ if e.is_numeric() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        seed,
        out,
        mode,
        resume,
    } = Cli::parse().command;
    let start = Instant::now();

    let cfg = match ExperimentConfig::load(&config) {
        Ok(mut c) => {
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(o) = out.clone() {
                c.out = o;
            }
            if let Some(m) = mode {
                c.mode = m;
            }
            Ok(c)
        }
        // An unreadable config file is a configuration error.
        Err(Error::Io { path, source }) => Err(Error::Config {
            location: path.display().to_string(),
            message: format!("cannot read config: {source}"),
        }),
        Err(e) => Err(e),
    };

    let (dir, echo, result) = match cfg {
        Ok(cfg) => {
            let echo = cfg.to_text();
            let r = run::run_experiment(&cfg, resume.as_deref());
            (cfg.out, Some(echo), r.map(|_| ()))
        }
        Err(e) => (out.unwrap_or_else(|| ExperimentConfig::default().out), None, Err(e)),
    };

    let (status, code) = match &result {
        Ok(()) => (Status::Ok, 0),
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(e);
            (
                Status::Failed {
                    exit_code: i32::from(code),
                    reason: e.to_string(),
                },
                code,
            )
        }
    };
    if let Err(e) = report::write_manifest(&dir, echo.as_deref(), &status, start.elapsed()) {
        eprintln!("error: could not write manifest: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
