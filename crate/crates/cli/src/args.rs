use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "spinbath", version, about = "Electron-nuclear entanglement under a carbon spin bath")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// System configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "SPINBATH_OUTPUT_DIR", default_value = "out")]
    pub output_dir: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Config override `path=value`, e.g. `constants.b_z_gauss=480` or
    /// `carbon.0.a_xz_khz=110`. Repeatable.
    #[arg(long = "overrides", short = 'O', global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Worker threads for parallel scans.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Electron coherence versus τ at fixed pulse count.
    CoherenceScan(ScanArgs),
    /// Concurrence versus pulse count at fixed τ.
    EntanglementTrace(EntanglementArgs),
    /// Noise spectrum reconstructed from a simulated coherence scan.
    Spectrum(ScanArgs),
    /// Simulated tomography of a two-qubit state with maximum-likelihood reconstruction.
    TomographyDemo(TomographyArgs),
    /// Fit one carbon's hyperfine parameters to a coherence trace.
    Calibrate(CalibrateArgs),
    /// Fit a Gaussian decay to an (x, y) trace.
    FitDecay(FitDecayArgs),
    /// Regenerate the data behind one figure panel.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub tau_start: f64,
    #[arg(long, default_value_t = 0.7)]
    pub tau_stop: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_step: f64,
    /// 1-based carbon indices into the configuration, comma separated; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub carbons: Option<Vec<usize>>,
}

#[derive(Debug, Args, Clone)]
pub struct EntanglementArgs {
    #[arg(long)]
    pub tau: f64,
    /// Largest (even) pulse count.
    #[arg(long, default_value_t = 120)]
    pub n_max: usize,
    #[arg(long, value_delimiter = ',')]
    pub carbons: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateKind {
    /// (|00⟩ + |11⟩)/√2.
    Bell,
    /// Bell state with its coherence scaled by `--w`.
    Dephased,
    Mixed,
}

#[derive(Debug, Args, Clone)]
pub struct TomographyArgs {
    #[arg(long, value_enum, default_value = "bell")]
    pub state: StateKind,
    #[arg(long, default_value_t = 0.6)]
    pub w: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub shots: u64,
    /// Mean photons per shot from m_s = 0.
    #[arg(long, default_value_t = 0.03)]
    pub rate_bright: f64,
    /// Mean photons per shot from m_s = -1.
    #[arg(long, default_value_t = 0.02)]
    pub rate_dark: f64,
    /// Report exact expected counts instead of Poisson draws.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args, Clone)]
pub struct CalibrateArgs {
    /// Coherence trace CSV (`tau_us,w`).
    #[arg(long)]
    pub trace: PathBuf,
    /// 1-based index of the carbon to fit; the others stay fixed.
    #[arg(long)]
    pub carbon: usize,
    /// Pulse count when the trace has no `# n:` metadata.
    #[arg(long)]
    pub n: Option<usize>,
    /// Half-width of the A_zz search box around the configured value (kHz).
    #[arg(long, default_value_t = 7.3)]
    pub dzz: f64,
    /// Half-width of the A_xz search box around the configured value (kHz).
    #[arg(long, default_value_t = 23.0)]
    pub dxz: f64,
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
}

#[derive(Debug, Args, Clone)]
pub struct FitDecayArgs {
    /// Two-column CSV of (t, y).
    #[arg(long)]
    pub trace: PathBuf,
    /// Fit a constant floor as well.
    #[arg(long)]
    pub floor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fig1c,
    Fig1d,
    Fig2b,
    Fig2c,
    Fig2d,
    Fig2e,
    Fig3a,
    Fig3b,
    Fig3c,
    Fig3d,
    Fig3e,
    Fig4a,
    Fig4b,
    Fig4c,
}

#[derive(Debug, Args, Clone)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub target: Target,
}
