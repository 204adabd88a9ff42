//! `gp`: command-line front end for the gesture pipeline and the
//! participation supervisor.

mod config;
mod net;
mod vision;

use clap::{Args, Parser, Subcommand};
use config::{Config, ConfigError};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gp", version, about = "Hand-gesture recognition and participation telemetry")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Config file (`gpconfig 1` key=value lines); defaults to $GP_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set cpdh.tau=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codebook background model from frames.
    BgTrain(vision::BgTrain),
    /// Write foreground masks for frames.
    BgSubtract(vision::BgSubtract),
    /// Train a toy cascade from positive and negative PGM patches.
    CascadeTrain(vision::CascadeTrain),
    /// Detect objects in an image.
    CascadeDetect(vision::CascadeDetect),
    /// Build a CPDH gallery from directories of mask images.
    GalleryBuild(vision::GalleryBuild),
    /// Classify a mask image against a gallery.
    Classify(vision::Classify),
    /// Render a scene script to frames, and/or write a model kit.
    Synth(vision::Synth),
    /// Run the full pipeline over frames.
    Run(vision::Run),
    /// Serve the participation supervisor.
    Supervise(net::Supervise),
    /// Replay learner event schedules against a supervisor.
    Simulate(net::Simulate),
    /// Export a store as participation series.
    Export(net::Export),
    /// Print the effective configuration.
    DumpConfig,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

impl Common {
    /// Loads, overrides and validates the configuration.
    pub fn config(&self, tweak: impl FnOnce(&mut Config) -> Result<(), Failure>) -> Result<Config, Failure> {
        let mut c = Config::load(self.config.as_deref(), &self.sets)?;
        tweak(&mut c)?;
        c.validate()?;
        Ok(c)
    }
}

/// `-o` target, or stdout when absent.
pub fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn dispatch(cli: Cli) -> CmdResult {
    let c = &cli.common;
    match cli.command {
        Command::BgTrain(a) => a.run(c),
        Command::BgSubtract(a) => a.run(c),
        Command::CascadeTrain(a) => a.run(c),
        Command::CascadeDetect(a) => a.run(c),
        Command::GalleryBuild(a) => a.run(c),
        Command::Classify(a) => a.run(c),
        Command::Synth(a) => a.run(c),
        Command::Run(a) => a.run(c),
        Command::Supervise(a) => a.run(c),
        Command::Simulate(a) => a.run(c),
        Command::Export(a) => a.run(c),
        Command::DumpConfig => {
            let cfg = c.config(|_| Ok(()))?;
            let mut out = output(None)?;
            out.write_all(cfg.dump().as_bytes()).and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
