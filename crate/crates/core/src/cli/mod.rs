//! Command-line front end. Exit codes: 0 success, 1 numerical failure,
//! 2 configuration error.

pub mod commands;
pub mod config;
pub mod output;

use clap::Parser;
use config::{Command, ExperimentConfig};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use thiserror::Error;

pub const THREADS_ENV: &str = "COCYCLE_LAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), msg: msg.into() }
    }

    pub fn numeric(e: impl std::fmt::Display) -> Self {
        CliError::Numeric(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cocycle-lab", version, about = "Lyapunov spectra, domination and perturbation experiments for linear cocycles")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rotation[:alpha], torus:a,b, cat, symbolic:len
    #[arg(long)]
    pub system: Option<String>,
    /// schrodinger, constant:rows, diag:entries, identity:d, rotation:angle, witness:arc
    #[arg(long)]
    pub cocycle: Option<String>,
    /// Energy, comma list or start:end:count
    #[arg(long = "E", allow_hyphen_values = true)]
    pub energy: Option<String>,
    /// Potential: zero or cosine
    #[arg(long = "V")]
    pub potential: Option<String>,
    /// Coupling of the cosine potential
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub mmax: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<String>,
    /// Also write an SVG plot
    #[arg(long)]
    pub svg: bool,
    /// Any other config key, as KEY=VALUE
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Cli {
    fn flag_values(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut m = BTreeMap::new();
        let pairs = [
            ("system", &self.system),
            ("cocycle", &self.cocycle),
            ("E", &self.energy),
            ("V", &self.potential),
            ("lambda", &self.lambda),
            ("n", &self.n),
            ("m", &self.m),
            ("p", &self.p),
            ("eps", &self.eps),
            ("delta", &self.delta),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("mmax", &self.mmax),
            ("out", &self.out),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        }
        if self.svg {
            m.insert("svg".into(), "true".into());
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::config(kv.clone(), "expected KEY=VALUE"))?;
            config::check_key(k.trim())?;
            m.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(m)
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config(THREADS_ENV, "expected a positive integer"))?;
        // a pool may already exist when called in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", e.to_string()))?;
            config::parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    ExperimentConfig::resolve(cli.command, file, cli.flag_values()?)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| resolve(&cli)).and_then(|cfg| commands::execute(&cfg));
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
