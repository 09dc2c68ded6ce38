//! Command-line front end.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::pipeline::{DenoiserChoice, Mode};

pub use config::{ResolvedConfig, RunConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FGDVI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fgdvi", version, about = "Flow-guided diffusion video inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into a corpus directory.
    Synth,
    /// Estimate and complete flows from the corrupted frames of a corpus.
    Flow,
    /// Inpaint a corpus.
    Inpaint,
    /// Score inpainted frames against the corpus ground truth.
    Eval,
    /// Compare vanilla and interpolated sampling cost.
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Flow => "flow",
            Command::Inpaint => "inpaint",
            Command::Eval => "eval",
            Command::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Interp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Interp => Mode::Interp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Oracle,
    Heuristic,
    Delayed,
}

impl From<DenoiserArg> for DenoiserChoice {
    fn from(d: DenoiserArg) -> Self {
        match d {
            DenoiserArg::Oracle => DenoiserChoice::Oracle,
            DenoiserArg::Heuristic => DenoiserChoice::Heuristic,
            DenoiserArg::Delayed => DenoiserChoice::Delayed,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Total denoising steps T.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Interpolated steps S.
    #[arg(long, global = true)]
    pub interp_steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub denoiser: Option<DenoiserArg>,
    /// Corpus directory.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Scene spec JSON for `synth`.
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    /// Directory with fwd_XXXX.flo / bwd_XXXX.flo; defaults to the corpus flow/ directory.
    #[arg(long, global = true)]
    pub flow_dir: Option<PathBuf>,
    /// Inpainting output directory scored by `eval`.
    #[arg(long, global = true)]
    pub result: Option<PathBuf>,
    /// Propagation weight file.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Simulated cost of the delayed denoiser per frame.
    #[arg(long, global = true)]
    pub per_call_ms: Option<f64>,
    /// Jacobi iterations of the heuristic denoiser.
    #[arg(long, global = true)]
    pub fill_iters: Option<usize>,
    /// DDIM eta; 0 is deterministic.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Skip flow-guided propagation.
    #[arg(long, global = true)]
    pub no_propagation: bool,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = init_threads().and_then(|_| {
        let cfg = RunConfig::resolve(&cli)?;
        commands::dispatch(cli.command, &cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
