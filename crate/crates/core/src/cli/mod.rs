// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 bridge failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BRIDGE: i32 = 3;

/// Version recorded in every run manifest.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "molsae", version, about = "TopK sparse autoencoders for molecular embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// RunConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if needed.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed SMILES through the bridge into a shard, plus optional label files.
    Embed(Common),
    /// Train one SAE.
    Train(Common),
    /// Train and evaluate the expansion × k grid.
    Sweep(Common),
    /// Reconstruction and functional fidelity of a checkpoint.
    EvalFidelity(Common),
    /// Per-feature activation statistics.
    Landscape(Common),
    /// Single-variable probes for substructure labels.
    ProbeSubstructures(Common),
    /// Spearman correlations against descriptors, with PCA and NMF baselines.
    ProbeDescriptors(Common),
    /// Multivariate toxicity models on features and neurons.
    ProbeToxicity(Common),
    /// Feature ablation campaign.
    SteerFeatures(Common),
    /// Neuron mean-ablation campaign.
    SteerNeurons(Common),
    /// Tanimoto null distribution and feature coherence tests.
    TanimotoNull(Common),
    /// Plot-ready CSV series from earlier outputs.
    ExportPlots(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Embed(c) => ("embed", c),
            Command::Train(c) => ("train", c),
            Command::Sweep(c) => ("sweep", c),
            Command::EvalFidelity(c) => ("eval-fidelity", c),
            Command::Landscape(c) => ("landscape", c),
            Command::ProbeSubstructures(c) => ("probe-substructures", c),
            Command::ProbeDescriptors(c) => ("probe-descriptors", c),
            Command::ProbeToxicity(c) => ("probe-toxicity", c),
            Command::SteerFeatures(c) => ("steer-features", c),
            Command::SteerNeurons(c) => ("steer-neurons", c),
            Command::TanimotoNull(c) => ("tanimoto-null", c),
            Command::ExportPlots(c) => ("export-plots", c),
        }
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_bridge() => EXIT_BRIDGE,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    layout_version: u32,
    toolkit: &'static str,
    toolkit_version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

/// Name of the manifest a subcommand writes under `--out`.
pub fn manifest_name(command: &str) -> String {
    format!("run-{command}.json")
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    Ok(cfg.with_seed(seed))
}

fn execute(command: &Command) -> Result<(), CliError> {
    let (name, common) = command.parts();
    let cfg = load_config(&common.config, common.seed)?;
    let digest = cfg.digest();
    let mut resolved = cfg.clone();
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    resolved.resolve_paths(&base);
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", common.threads)))?;
    let outputs = pool.install(|| commands::dispatch(name, &resolved, &common.out))?;
    let manifest = RunManifest {
        layout_version: 1,
        toolkit: "molsae",
        toolkit_version: TOOLKIT_VERSION,
        command: name,
        seed: cfg.seed,
        config_sha256: digest,
        outputs,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    bytes.push(b'\n');
    crate::io::write_file(&common.out.join(manifest_name(name)), &bytes)?;
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
