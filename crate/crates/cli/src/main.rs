//! `onebit`: command-line front end.
//!
//! Every subcommand accepts `--seed`, `--config <file>`, `--out <path>` and
//! `--quiet`. A config file is flat TOML whose keys are the subcommand's
//! long flags (`m = 400`, `hidden = [50, 50]`); flags given on the command
//! line win. For `grid` the config is the experiment grid itself.
//!
//! Exit codes: 0 on success, 1 on usage or I/O errors, 2 on numerical
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "onebit", version, about = "One-bit compressed sensing with generative priors", args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw of the command
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML file with default values for the flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress messages
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random ReLU generator
    SynthGen(commands::SynthGenArgs),
    /// Sample an ensemble and a one-bit observation of a generator output
    Measure(commands::MeasureArgs),
    /// Decode an observation written by `measure`
    Decode(commands::DecodeArgs),
    /// Run an experiment sweep and write CSV
    Grid(commands::GridArgs),
    /// Fit log median error against log m
    Fit(commands::FitArgs),
    /// Empirical checks of the recovery theory
    #[command(subcommand)]
    Validate(commands::Validate),
    /// Build a generator that memorizes target points
    Memorize(commands::MemorizeArgs),
}

impl Command {
    fn path(&self) -> Vec<&'static str> {
        use commands::Validate as V;
        match self {
            Command::SynthGen(_) => vec!["synth-gen"],
            Command::Measure(_) => vec!["measure"],
            Command::Decode(_) => vec!["decode"],
            Command::Grid(_) => vec!["grid"],
            Command::Fit(_) => vec!["fit"],
            Command::Memorize(_) => vec!["memorize"],
            Command::Validate(v) => vec![
                "validate",
                match v {
                    V::Srec(_) => "srec",
                    V::Jl(_) => "jl",
                    V::Concentration(_) => "concentration",
                    V::MeanWidth(_) => "mean-width",
                    V::EpsNet(_) => "eps-net",
                },
            ],
        }
    }
}

/// Turns a flat TOML table into `--key value` flags.
fn config_flags(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text.parse()?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> anyhow::Result<String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                toml::Value::Boolean(b) => Ok(b.to_string()),
                other => anyhow::bail!("config key `{key}` has unsupported value {other}"),
            }
        };
        match &value {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts: anyhow::Result<Vec<String>> = items.iter().map(scalar).collect();
                flags.push(flag);
                flags.push(parts?.join(","));
            }
            v => {
                flags.push(flag);
                flags.push(scalar(v)?);
            }
        }
    }
    Ok(flags)
}

fn parse(argv: Vec<String>) -> Result<Cli, ExitCode> {
    let fail = |e: clap::Error| {
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        ExitCode::from(code)
    };
    let cli = Cli::try_parse_from(&argv).map_err(fail)?;
    let Some(config) = cli.common.config.clone() else {
        return Ok(cli);
    };
    if matches!(cli.command, Command::Grid(_)) {
        return Ok(cli);
    }
    let flags = match config_flags(&config) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: reading {}: {e:#}", config.display());
            return Err(ExitCode::from(1));
        }
    };
    // insert after the subcommand names so that explicit flags still win
    let path = cli.command.path();
    let mut pos = 1;
    for name in &path {
        pos += argv[pos..].iter().position(|a| a == name).map_or(0, |i| i + 1);
    }
    let mut merged = argv[..pos].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&argv[pos..]);
    Cli::try_parse_from(&merged).map_err(fail)
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args().collect()) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
