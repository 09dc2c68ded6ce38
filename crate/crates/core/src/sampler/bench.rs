//! Wall-clock and call-count comparison of the two samplers.

use std::time::{Duration, Instant};

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use super::{initial_noise, sample_interpolated, sample_vanilla, SamplerConfig};
use crate::denoiser::DenoiserKind;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::flow::FlowSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Values of `T` to sweep; each run uses `S = T / 2`.
    pub steps: Vec<usize>,
    pub frames: usize,
    /// Simulated denoiser cost per frame, in milliseconds.
    pub per_call_ms: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            steps: vec![10, 20, 50],
            frames: 4,
            per_call_ms: 10.0,
            channels: 3,
            height: 8,
            width: 8,
            beta_min: 0.02,
            beta_max: 0.30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub steps: usize,
    pub interp_steps: usize,
    pub frames: usize,
    pub vanilla_frame_denoisings: usize,
    pub interp_frame_denoisings: usize,
    /// `1 - interp / vanilla` on call counts.
    pub call_reduction: f64,
    pub vanilla_secs: f64,
    pub interp_secs: f64,
    /// `1 - interp / vanilla` on wall-clock time.
    pub wall_reduction: f64,
    pub vanilla_ms_per_frame: f64,
    pub interp_ms_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub entries: Vec<BenchEntry>,
}

/// Runs both samplers with a delayed oracle denoiser on a static scene for every `T`.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.frames == 0 || config.channels == 0 || config.height == 0 || config.width == 0 {
        return Err(Error::Config("bench sizes must be positive".into()));
    }
    if !(config.per_call_ms.is_finite() && config.per_call_ms >= 0.0) {
        return Err(Error::Config("per_call_ms must be finite and non-negative".into()));
    }
    let shape = (config.frames, config.channels, config.height, config.width);
    let clean = Array4::from_shape_fn(shape, |(_, c, y, x)| 0.5 + 0.1 * c as f64 + 0.02 * y as f64 - 0.03 * x as f64);
    let mut mask = Array4::zeros((config.frames, 1, config.height, config.width));
    mask.slice_mut(s![.., 0, config.height / 4..config.height / 2 + 1, config.width / 4..config.width / 2 + 1])
        .fill(1.0);
    let flows = FlowSet::zeros(config.frames, config.height, config.width);
    let denoiser = DenoiserKind::Delayed {
        inner: Box::new(DenoiserKind::Oracle { clean: clean.clone() }),
        per_call_cost: Duration::from_secs_f64(config.per_call_ms / 1e3),
    };

    let mut entries = Vec::with_capacity(config.steps.len());
    for &steps in &config.steps {
        let sampler = SamplerConfig {
            steps,
            interp_steps: steps / 2,
            seed: config.seed,
            ..Default::default()
        };
        let sched = NoiseSchedule::linear(steps, config.beta_min, config.beta_max)?;
        let z_t = initial_noise(shape, config.seed);

        let start = Instant::now();
        let (_, vlog) = sample_vanilla(&z_t, &clean, &mask, &denoiser, &sched, &sampler)?;
        let vanilla_secs = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let (_, ilog) = sample_interpolated(&z_t, &clean, &mask, &flows, &denoiser, &sched, &sampler)?;
        let interp_secs = start.elapsed().as_secs_f64();

        let per_frame = |secs: f64| secs * 1e3 / config.frames as f64;
        entries.push(BenchEntry {
            steps,
            interp_steps: sampler.interp_steps,
            frames: config.frames,
            vanilla_frame_denoisings: vlog.total_frame_denoisings,
            interp_frame_denoisings: ilog.total_frame_denoisings,
            call_reduction: 1.0 - ilog.total_frame_denoisings as f64 / vlog.total_frame_denoisings as f64,
            vanilla_secs,
            interp_secs,
            wall_reduction: if vanilla_secs > 0.0 { 1.0 - interp_secs / vanilla_secs } else { 0.0 },
            vanilla_ms_per_frame: per_frame(vanilla_secs),
            interp_ms_per_frame: per_frame(interp_secs),
        });
    }
    Ok(BenchReport {
        config: config.clone(),
        entries,
    })
}
