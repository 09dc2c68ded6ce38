use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Cli;
use crate::corpus::MaskStyle;
use crate::diffusion::SigmaPolicy;
use crate::error::{Error, Result};
use crate::pipeline::{DenoiserChoice, DenoiserSpec, Mode, PipelineConfig};
use crate::propagation::PropagationOptions;
use crate::sampler::{BenchConfig, SamplerConfig};

/// Settings for every subcommand; read from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Never echoed, so identical runs into different directories produce identical files.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub flow_dir: Option<PathBuf>,
    pub result: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Mode,
    pub steps: usize,
    pub interp_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma: SigmaPolicy,
    pub occlusion_tau: Option<f64>,
    pub denoiser: DenoiserSpec,
    pub propagate: bool,
    pub propagation: PropagationOptions,
    pub residual_mask: bool,
    /// Replaces the scene's mask style in `synth`.
    pub mask: Option<MaskStyle>,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            input: None,
            out: None,
            scene: None,
            flow_dir: None,
            result: None,
            weights: None,
            seed: None,
            mode: p.mode,
            steps: p.sampler.steps,
            interp_steps: p.sampler.interp_steps,
            beta_min: p.beta_min,
            beta_max: p.beta_max,
            sigma: p.sampler.sigma,
            occlusion_tau: p.sampler.occlusion_tau,
            denoiser: p.denoiser,
            propagate: p.propagate,
            propagation: p.propagation,
            residual_mask: p.residual_mask,
            mask: None,
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line flags on top of the file settings.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let c = &cli.common;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {$(
                if let Some(v) = &c.$flag {
                    $field = v.clone().into();
                }
            )*};
        }
        set! {
            input => cfg.input, out => cfg.out, scene => cfg.scene, flow_dir => cfg.flow_dir,
            result => cfg.result, weights => cfg.weights, seed => cfg.seed, steps => cfg.steps,
            interp_steps => cfg.interp_steps, per_call_ms => cfg.denoiser.per_call_ms,
        }
        if let Some(m) = c.mode {
            cfg.mode = m.into();
        }
        if let Some(d) = c.denoiser {
            cfg.denoiser.kind = d.into();
        }
        if let Some(n) = c.fill_iters {
            cfg.denoiser.fill_iters = Some(n);
        }
        if let Some(eta) = c.eta {
            cfg.sigma = if eta == 0.0 { SigmaPolicy::Zero } else { SigmaPolicy::Eta(eta) };
        }
        if c.no_propagation {
            cfg.propagate = false;
        }
        if cli.command == super::Command::Bench {
            if let Some(t) = c.steps {
                cfg.bench.steps = vec![t];
            }
            if let Some(seed) = c.seed {
                cfg.bench.seed = seed;
            }
            if let Some(ms) = c.per_call_ms {
                cfg.bench.per_call_ms = ms;
            }
        }
        if cfg.interp_steps > cfg.steps {
            return Err(Error::Config(format!(
                "interp_steps {} exceeds steps {}",
                cfg.interp_steps, cfg.steps
            )));
        }
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            sampler: SamplerConfig {
                steps: self.steps,
                interp_steps: self.interp_steps,
                seed: self.seed.unwrap_or(0),
                sigma: self.sigma,
                occlusion_tau: self.occlusion_tau,
            },
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            denoiser: self.denoiser.clone(),
            propagate: self.propagate,
            propagation: self.propagation,
            residual_mask: self.residual_mask,
        }
    }

    pub fn needs_ground_truth(&self) -> bool {
        self.denoiser.kind == DenoiserChoice::Oracle
            || (self.denoiser.kind == DenoiserChoice::Delayed && self.denoiser.delayed_inner == DenoiserChoice::Oracle)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| Error::Config(format!("missing required --{flag}")))
    }
}

/// What `resolved_config.json` contains.
#[derive(Debug, Serialize)]
pub struct ResolvedConfig<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
}
