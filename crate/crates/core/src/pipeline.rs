//! End-to-end inpainting: encode, complete flows, propagate, sample, decode, composite.

use std::time::Duration;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::corpus::{corrupt, decode, downsample_mask, encode, LATENT_FACTOR};
use crate::denoiser::DenoiserKind;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::flow::{default_fill_iterations, downsample_flow, FlowSet};
use crate::propagation::{propagate, PropagationOptions, PropagationWeights};
use crate::sampler::{initial_noise, sample_interpolated, sample_vanilla, CallLog, SamplerConfig};
use crate::tensor::{ensure_mask_matches, LatentSequence, MaskSequence, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    #[default]
    Interp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserChoice {
    Oracle,
    #[default]
    Heuristic,
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSpec {
    pub kind: DenoiserChoice,
    /// Denoiser wrapped by `delayed`.
    pub delayed_inner: DenoiserChoice,
    pub per_call_ms: f64,
    /// Jacobi iterations for the heuristic fill; defaults to `10 (h + w)` of the latent.
    pub fill_iters: Option<usize>,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            kind: DenoiserChoice::Heuristic,
            delayed_inner: DenoiserChoice::Heuristic,
            per_call_ms: 10.0,
            fill_iters: None,
        }
    }
}

impl DenoiserSpec {
    /// `clean` is needed by the oracle only.
    pub fn build(&self, clean: Option<&LatentSequence>, latent_hw: (usize, usize)) -> Result<DenoiserKind> {
        let simple = |choice: DenoiserChoice| -> Result<DenoiserKind> {
            match choice {
                DenoiserChoice::Oracle => clean
                    .map(|c| DenoiserKind::Oracle { clean: c.clone() })
                    .ok_or_else(|| Error::Config("the oracle denoiser needs ground-truth frames".into())),
                DenoiserChoice::Heuristic => Ok(DenoiserKind::Heuristic {
                    fill_iters: self.fill_iters.unwrap_or(default_fill_iterations(latent_hw.0, latent_hw.1)),
                }),
                DenoiserChoice::Delayed => Err(Error::Config("a delayed denoiser cannot wrap another delayed one".into())),
            }
        };
        match self.kind {
            DenoiserChoice::Delayed => {
                if !(self.per_call_ms.is_finite() && self.per_call_ms >= 0.0) {
                    return Err(Error::Config("per_call_ms must be finite and non-negative".into()));
                }
                Ok(DenoiserKind::Delayed {
                    inner: Box::new(simple(self.delayed_inner)?),
                    per_call_cost: Duration::from_secs_f64(self.per_call_ms / 1e3),
                })
            }
            other => simple(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub sampler: SamplerConfig,
    pub beta_min: f64,
    pub beta_max: f64,
    pub denoiser: DenoiserSpec,
    /// Run flow-guided propagation before sampling.
    pub propagate: bool,
    pub propagation: PropagationOptions,
    /// Condition the sampler on the hole left after propagation instead of the original one.
    pub residual_mask: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Interp,
            sampler: SamplerConfig::default(),
            beta_min: 0.02,
            beta_max: 0.30,
            denoiser: DenoiserSpec::default(),
            propagate: true,
            propagation: PropagationOptions {
                occlusion_tau: Some(crate::flow::DEFAULT_OCCLUSION_TAU),
                ..Default::default()
            },
            residual_mask: true,
        }
    }
}

impl PipelineConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.sampler.steps, self.beta_min, self.beta_max)?.with_sigma_policy(self.sampler.sigma)
    }
}

#[derive(Debug, Clone)]
pub struct InpaintInput {
    /// Frames with hole pixels zeroed (zeroed again here if not).
    pub corrupted: VideoTensor,
    pub masks: MaskSequence,
    /// Flows at frame or latent resolution.
    pub flows: Option<FlowSet>,
    /// Clean frames, used by the oracle denoiser only.
    pub ground_truth: Option<VideoTensor>,
}

/// Latent-space state handed to the sampler.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corrupted: VideoTensor,
    /// Encoded corrupted frames, before propagation.
    pub z_phi: LatentSequence,
    pub latent_mask: MaskSequence,
    /// Completed flows at latent resolution.
    pub flows: Option<FlowSet>,
    /// Condition after propagation.
    pub condition: LatentSequence,
    /// Mask the sampler is conditioned on.
    pub condition_mask: MaskSequence,
}

#[derive(Debug, Clone)]
pub struct InpaintOutput {
    /// Decoded result composited with the known pixels, before quantization.
    pub frames: VideoTensor,
    pub latents: LatentSequence,
    pub call_log: CallLog,
    pub prepared: Prepared,
}

/// Brings flows to latent resolution.
pub fn latent_flows(flows: &FlowSet, frame_hw: (usize, usize)) -> Result<FlowSet> {
    let latent_hw = (frame_hw.0 / LATENT_FACTOR, frame_hw.1 / LATENT_FACTOR);
    match flows.dim() {
        None => Ok(flows.clone()),
        Some(d) if d == frame_hw => flows.map(|f| downsample_flow(f, LATENT_FACTOR)),
        Some(d) if d == latent_hw => Ok(flows.clone()),
        Some(d) => Err(Error::shape("flows", &[frame_hw.0, frame_hw.1], &[d.0, d.1])),
    }
}

pub fn prepare(input: &InpaintInput, config: &PipelineConfig, weights: &PropagationWeights) -> Result<Prepared> {
    let (n, _, h, w) = input.corrupted.dim();
    ensure_mask_matches("inpaint", input.corrupted.shape(), input.masks.shape())?;
    if n == 0 {
        return Err(Error::InvalidArgument("no frames to inpaint".into()));
    }
    let corrupted = corrupt(&input.corrupted, &input.masks)?;
    let z_phi = encode(&corrupted)?;
    let latent_mask = downsample_mask(&input.masks)?;

    let flows = match &input.flows {
        Some(f) => {
            let f = latent_flows(f, (h, w))?;
            let holes: Vec<_> = latent_mask.outer_iter().map(|m| m.index_axis(Axis(0), 0).to_owned()).collect();
            Some(f.complete(&holes)?)
        }
        None if config.mode == Mode::Interp && n > 1 => {
            return Err(Error::InvalidArgument("interpolated sampling needs flows".into()))
        }
        None => None,
    };

    let (condition, condition_mask) = match (&flows, config.propagate) {
        (Some(f), true) => {
            let p = propagate(&z_phi, &latent_mask, f, weights, config.propagation)?;
            let mask = if config.residual_mask { p.residual } else { latent_mask.clone() };
            (p.latents, mask)
        }
        _ => (z_phi.clone(), latent_mask.clone()),
    };
    Ok(Prepared {
        corrupted,
        z_phi,
        latent_mask,
        flows,
        condition,
        condition_mask,
    })
}

/// Hole pixels from `decoded` clamped to `[0, 1]`; everything else from `known`.
pub fn composite(known: &VideoTensor, masks: &MaskSequence, decoded: &VideoTensor) -> Result<VideoTensor> {
    crate::tensor::blend_sequence(masks, &decoded.mapv(|v| v.clamp(0.0, 1.0)), known)
}

pub fn inpaint(input: &InpaintInput, config: &PipelineConfig, weights: &PropagationWeights) -> Result<InpaintOutput> {
    config.sampler.validate()?;
    let prepared = prepare(input, config, weights)?;
    let sched = config.schedule()?;
    let (_, _, lh, lw) = prepared.z_phi.dim();
    let clean = match &input.ground_truth {
        Some(gt) => {
            crate::tensor::ensure_same_shape("ground truth", gt.shape(), input.corrupted.shape())?;
            Some(encode(gt)?)
        }
        None => None,
    };
    let denoiser = config.denoiser.build(clean.as_ref(), (lh, lw))?;
    let z_t = initial_noise(prepared.z_phi.dim(), config.sampler.seed);
    let (z0, call_log) = match (config.mode, &prepared.flows) {
        (Mode::Interp, Some(f)) => sample_interpolated(
            &z_t,
            &prepared.condition,
            &prepared.condition_mask,
            f,
            &denoiser,
            &sched,
            &config.sampler,
        )?,
        // a single frame has no neighbours and no flows
        _ => sample_vanilla(&z_t, &prepared.condition, &prepared.condition_mask, &denoiser, &sched, &config.sampler)?,
    };
    let frames = composite(&prepared.corrupted, &input.masks, &decode(&z0))?;
    Ok(InpaintOutput {
        frames,
        latents: z0,
        call_log,
        prepared,
    })
}
