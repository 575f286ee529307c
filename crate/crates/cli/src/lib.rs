//! Command-line workflows: spectra, gradient checks, data, training,
//! evaluation, ablations and feature dumps.

pub mod commands;
pub mod pgm;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use foam_core::error::Error;
use foam_core::gradcheck::{Component, DEFAULT_STEP, DEFAULT_TOLERANCE};
use foam_core::hdc::CorruptionKind;
use foam_core::scenes::SEED_ENV;

#[derive(Debug, Parser)]
#[command(name = "foam", version, about = "Frequency-spatial blocks and de-corruption training on synthetic overlap scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed override; falls back to the FOAM_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spatial images, shifted log-magnitude and phase spectra, band energies.
    Spectrum(SpectrumArgs),
    /// Finite-difference gradient checks of the differentiable components.
    Gradcheck(GradcheckArgs),
    /// Writes a synthetic scene dataset.
    GenData(GenDataArgs),
    /// Trains one model and writes a checkpoint and loss trace.
    Train(TrainArgs),
    /// Scores a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Trains the baseline, +FSTB and +FSTB+HDC variants over several seeds.
    Ablate(AblateArgs),
    /// Dumps one pyramid feature map of a checkpoint.
    DumpFeatures(DumpArgs),
}

fn parse_kind(s: &str) -> Result<CorruptionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// One component, or every one of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComponentSelection(pub Option<Component>);

fn parse_component(s: &str) -> Result<ComponentSelection, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ComponentSelection(None));
    }
    s.parse().map(|c| ComponentSelection(Some(c))).map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Single image tensor to analyse.
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    pub input: Option<PathBuf>,
    /// Analyse a generated scene instead.
    #[arg(long)]
    pub demo: bool,
    /// Corruptions to apply; all three when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub corrupt: Vec<CorruptionKind>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// conv, dd, sigma, sdca, fdba, fsfn, fstb, consistent-i, consistent-ii or all.
    #[arg(long, default_value = "all", value_parser = parse_component)]
    pub component: ComponentSelection,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of scenes; defaults to the configured training count.
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of training seeds per variant.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Skip the aligned-layer grid.
    #[arg(long)]
    pub no_layer_grid: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Scene image tensor.
    #[arg(long)]
    pub input: PathBuf,
    /// Stage index; 0 is the backbone output.
    #[arg(long, default_value_t = 1)]
    pub stage: usize,
    /// 1-based pyramid level.
    #[arg(long)]
    pub level: usize,
    /// Also dump the corruption branch under this corruption.
    #[arg(long, value_parser = parse_kind)]
    pub corrupt: Option<CorruptionKind>,
    #[command(flatten)]
    pub common: Common,
}

/// Failure classes, mapped onto exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// `--seed`, then the environment, then nothing.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Spectrum(a) => commands::spectrum(&a).map(drop),
        Command::Gradcheck(a) => commands::gradcheck(&a).map(drop),
        Command::GenData(a) => commands::gen_data(&a).map(drop),
        Command::Train(a) => commands::train(&a).map(drop),
        Command::Eval(a) => commands::eval(&a).map(drop),
        Command::Ablate(a) => commands::ablate(&a).map(drop),
        Command::DumpFeatures(a) => commands::dump_features(&a).map(drop),
    }
}
