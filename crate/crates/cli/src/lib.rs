//! Command-line front end for the spin-bath simulator.

use std::fmt;

pub mod args;
mod commands;
pub mod config;
pub mod output;

use args::{Cli, Command};
use output::{Manifest, Run};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError(String);

impl CliError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, always
        f.write_str(&self.0.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::CoherenceScan(_) => "coherence-scan",
        Command::EntanglementTrace(_) => "entanglement-trace",
        Command::Spectrum(_) => "spectrum",
        Command::TomographyDemo(_) => "tomography-demo",
        Command::Calibrate(_) => "calibrate",
        Command::FitDecay(_) => "fit-decay",
        Command::Reproduce(_) => "reproduce",
    }
}

/// Runs one parsed command and returns the names of the files written.
pub fn run(cli: &Cli, arguments: Vec<String>) -> Result<Vec<String>, CliError> {
    let g = &cli.global;
    match g.threads {
        Some(0) => return Err(CliError::new("--threads must be at least 1")),
        Some(t) => {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        None => {}
    }
    let loaded = config::load(g.config.as_deref(), &g.overrides)?;
    let mut cfg = loaded.config;
    if cfg.sample_uncertainties {
        cfg = cfg.sampled(g.seed);
    }
    let effective = cfg.to_toml_string();

    let mut run = Run::new(&g.output_dir)?;
    if let Some(p) = &g.config {
        run.input("config", p, &loaded.source);
    }
    match &cli.command {
        Command::CoherenceScan(a) => commands::coherence_scan_cmd(&cfg, a, &mut run)?,
        Command::EntanglementTrace(a) => commands::entanglement_cmd(&cfg, a, &mut run)?,
        Command::Spectrum(a) => commands::spectrum_cmd(&cfg, a, &mut run)?,
        Command::TomographyDemo(a) => commands::tomography_cmd(a, g.seed, &mut run)?,
        Command::Calibrate(a) => commands::calibrate_cmd(&cfg, a, &mut run)?,
        Command::FitDecay(a) => commands::fit_decay_cmd(a, &mut run)?,
        Command::Reproduce(a) => commands::reproduce_cmd(&cfg, a.target, &mut run)?,
    }
    run.finish(Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command_name(&cli.command).into(),
        arguments,
        seed: g.seed,
        threads: g.threads,
        overrides: g.overrides.clone(),
        inputs: Vec::new(),
        effective_config_sha256: output::sha256_hex(effective.as_bytes()),
        effective_config: effective,
        outputs: Vec::new(),
    })
}
