//! `qrbs`: synthesize hinge sequences, fit them, and inspect the result.
//!
//! Every subcommand takes the same flags:
//!
//! ```text
//! qrbs <subcommand> [--config FILE] [--seed N] [--set key=value ...] [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 invariant violation, 4 fit divergence. Failures print one line,
//! `error kind=<kind>: <message>`, to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{override_keys, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "qrbs", version, about = "Quasi-rigid blend skinning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration; absent keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for sampling, fitting and evaluation (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration value, e.g. `--set fit.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (`data/`, `meshes/`, `checkpoints/`, `metrics/`, `diag/`).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic hinge sequence: observed clouds and ground truth.
    Synth(Common),
    /// Fit shape, rig and motion to the observed clouds; writes a checkpoint.
    Fit(Common),
    /// Deform the canonical mesh into one frame and write it as OBJ.
    Deform(Common),
    /// Volume-render one frame to PPM plus an opacity map.
    Render(Common),
    /// Extract the canonical surface from an SDF grid as OBJ.
    ExtractMesh(Common),
    /// Compare the fitted frames against reference meshes.
    Eval(Common),
    /// Run point assignment on the canonical mesh and dump diagnostics.
    AssignDebug(Common),
}

fn keys_help() -> String {
    let mut out = String::from("Config keys (for --set, with defaults):\n");
    for (k, v) in override_keys() {
        let v = if v.len() > 60 { format!("{}...", &v[..57]) } else { v };
        out += &format!("  {k} = {v}\n");
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = keys_help();
    let mut cmd = Cli::command().after_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| s.after_help(help.clone()));
    }
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, common) = match &cli.command {
        Command::Synth(c) => ("synth", c),
        Command::Fit(c) => ("fit", c),
        Command::Deform(c) => ("deform", c),
        Command::Render(c) => ("render", c),
        Command::ExtractMesh(c) => ("extract-mesh", c),
        Command::Eval(c) => ("eval", c),
        Command::AssignDebug(c) => ("assign-debug", c),
    };
    let result = RunConfig::load(common.config.as_deref(), &common.set, common.seed)
        .map_err(commands::Failure::Config)
        .and_then(|cfg| commands::run(name, &cfg, &common.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.exit_code())
        }
    }
}
