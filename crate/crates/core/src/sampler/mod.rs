//! Sampling loops.
//!
//! [`sample_vanilla`] runs deterministic (or sigma-noised) DDIM over every
//! frame at every step. [`sample_interpolated`] runs flow-guided latent
//! interpolation for the first `S` steps: only one parity class of frames is
//! denoised, the other class is rebuilt by warping the neighbours' predicted
//! clean latents, blending with the known condition and renoising to the next
//! timestep; the classes swap every step. The remaining `T - S` steps are
//! vanilla.
//!
//! All randomness comes from one ChaCha stream seeded by
//! [`SamplerConfig::seed`], consumed step by step: first the DDIM noise for the
//! denoised frames (only when `sigma_t > 0`), then the renoising noise for the
//! interpolated frames, each in ascending frame order.

mod bench;

use std::time::{Duration, Instant};

use ndarray::{Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserInput};
use crate::diffusion::{ddim_step, predict_z0, q_sample, NoiseSchedule, SigmaPolicy};
use crate::error::{Error, Result};
use crate::flow::{warp, FlowSet, FlowValidity, DEFAULT_OCCLUSION_TAU};
use crate::tensor::{blend_frame, ensure_mask_matches, ensure_same_shape, scatter_frames, select_frames, LatentSequence, MaskSequence};

pub use bench::{run_bench, BenchConfig, BenchEntry, BenchReport};

/// ChaCha stream used for the initial latent.
pub const INITIAL_NOISE_STREAM: u64 = 0;
/// ChaCha stream used inside the sampling loop.
pub const SAMPLER_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total denoising steps `T`.
    pub steps: usize,
    /// Interpolated steps `S <= T`, taken first.
    pub interp_steps: usize,
    pub seed: u64,
    pub sigma: SigmaPolicy,
    /// Forward-backward threshold for trusting a warp; `None` trusts every pixel.
    pub occlusion_tau: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            interp_steps: 5,
            seed: 0,
            sigma: SigmaPolicy::Zero,
            occlusion_tau: Some(DEFAULT_OCCLUSION_TAU),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.interp_steps > self.steps {
            return Err(Error::Config(format!(
                "interp_steps {} exceeds steps {}",
                self.interp_steps, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestep: usize,
    /// Frames passed through the denoiser.
    pub active: Vec<usize>,
    /// Frames rebuilt by flow interpolation.
    pub interpolated: Vec<usize>,
    pub frame_denoisings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub denoise_secs: f64,
    pub interpolate_secs: f64,
    pub total_secs: f64,
}

/// Denoiser-call accounting for one sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallLog {
    pub frames: usize,
    pub steps: usize,
    pub interp_steps: usize,
    pub records: Vec<StepRecord>,
    pub total_frame_denoisings: usize,
    pub timing: PhaseTiming,
}

impl CallLog {
    fn new(frames: usize, steps: usize, interp_steps: usize) -> Self {
        Self {
            frames,
            steps,
            interp_steps,
            records: Vec::with_capacity(steps),
            total_frame_denoisings: 0,
            timing: PhaseTiming::default(),
        }
    }

    fn push(&mut self, record: StepRecord) {
        self.total_frame_denoisings += record.frame_denoisings;
        self.records.push(record);
    }

    /// Equality of everything except wall-clock timing.
    pub fn same_calls(&self, other: &CallLog) -> bool {
        self.frames == other.frames
            && self.steps == other.steps
            && self.interp_steps == other.interp_steps
            && self.records == other.records
            && self.total_frame_denoisings == other.total_frame_denoisings
    }
}

/// Standard normal latents of `shape` from the initial-noise stream of `seed`.
pub fn initial_noise(shape: (usize, usize, usize, usize), seed: u64) -> LatentSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INITIAL_NOISE_STREAM);
    gaussian(shape, &mut rng)
}

fn gaussian(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

fn sampler_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLER_STREAM);
    rng
}

/// `(active, complement)` for the first interpolated step: odd frames when
/// `T` is even, even frames otherwise.
pub fn parity_init(steps: usize, frames: usize) -> (Vec<usize>, Vec<usize>) {
    let first = if steps.is_multiple_of(2) { 1 } else { 0 };
    parity_split(first, frames)
}

fn parity_split(first: usize, frames: usize) -> (Vec<usize>, Vec<usize>) {
    (0..frames).partition(|i| i % 2 == first)
}

/// Rebuilds the `complement` frames from the predicted clean latents of their
/// denoised neighbours.
///
/// `a0_hat` holds the predictions for `active`, in that order. Each
/// complement frame averages the warps from its left and right neighbours
/// that are in `active`, weighted by their validity; pixels where no warp is
/// valid fall back to `z_phi`. Only hole pixels take the warped value.
#[allow(clippy::too_many_arguments)]
pub fn interpolate_complement(
    active: &[usize],
    a0_hat: &LatentSequence,
    complement: &[usize],
    z_phi: &LatentSequence,
    m: &MaskSequence,
    flows: &FlowSet,
    validity: &FlowValidity,
) -> Result<LatentSequence> {
    let (n, c, h, w) = z_phi.dim();
    ensure_mask_matches("interpolate_complement", z_phi.shape(), m.shape())?;
    flows.ensure_frames(n, h, w)?;
    if validity.forward.len() != flows.forward.len() || validity.backward.len() != flows.backward.len() {
        return Err(Error::InvalidArgument("validity masks do not match the flow set".into()));
    }
    if a0_hat.dim() != (active.len(), c, h, w) {
        return Err(Error::shape("interpolate_complement", &[active.len(), c, h, w], a0_hat.shape()));
    }
    let mut slot = vec![None; n];
    for (k, &i) in active.iter().enumerate() {
        slot[i] = Some(k);
    }
    let frames = complement
        .par_iter()
        .map(|&i| {
            let mut sources = Vec::with_capacity(2);
            if i > 0 {
                if let Some(k) = slot[i - 1] {
                    sources.push((k, &flows.backward[i - 1], &validity.backward[i - 1]));
                }
            }
            if i + 1 < n {
                if let Some(k) = slot[i + 1] {
                    sources.push((k, &flows.forward[i], &validity.forward[i]));
                }
            }
            if sources.is_empty() {
                return Err(Error::InvalidArgument(format!("frame {i} has no denoised neighbour to interpolate from")));
            }
            let warped = sources
                .iter()
                .map(|(k, flow, _)| warp(a0_hat.index_axis(Axis(0), *k), flow))
                .collect::<Result<Vec<_>>>()?;
            let known = z_phi.index_axis(Axis(0), i).to_owned();
            let mut mixed = Array3::zeros((c, h, w));
            for y in 0..h {
                for x in 0..w {
                    let weight: f64 = sources.iter().map(|(_, _, v)| v[[y, x]]).sum();
                    for ch in 0..c {
                        mixed[[ch, y, x]] = if weight > 0.0 {
                            sources
                                .iter()
                                .zip(&warped)
                                .map(|((_, _, v), wf)| v[[y, x]] * wf[[ch, y, x]])
                                .sum::<f64>()
                                / weight
                        } else {
                            known[[ch, y, x]]
                        };
                    }
                }
            }
            Ok(blend_frame(m.slice(ndarray::s![i, 0, .., ..]), &mixed, &known))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array4::zeros((complement.len(), c, h, w));
    for (k, f) in frames.iter().enumerate() {
        out.index_axis_mut(Axis(0), k).assign(f);
    }
    Ok(out)
}

struct Loop<'a> {
    z_phi: &'a LatentSequence,
    m: &'a MaskSequence,
    denoiser: &'a dyn Denoiser,
    sched: &'a NoiseSchedule,
    rng: ChaCha8Rng,
    log: CallLog,
    denoise_time: Duration,
    interp_time: Duration,
}

impl Loop<'_> {
    /// Denoises `frames` of `z` from `t` to `t - 1`; returns the new latents and predicted noise.
    fn denoise(&mut self, z: &LatentSequence, frames: &[usize], t: usize) -> Result<(LatentSequence, LatentSequence)> {
        let noisy = select_frames(z, frames);
        let input = DenoiserInput::new(noisy, t, self.z_phi, self.m, frames.to_vec())?;
        let start = Instant::now();
        let eps = self.denoiser.predict_eps(&input, self.sched)?;
        self.denoise_time += start.elapsed();
        ensure_same_shape("denoiser output", input.noisy.shape(), eps.shape())?;
        let noise = if self.sched.sigma(t)? > 0.0 {
            Some(gaussian(input.noisy.dim(), &mut self.rng))
        } else {
            None
        };
        let prev = ddim_step(&input.noisy, &eps, t, t - 1, noise.as_ref(), self.sched)?;
        Ok((prev, eps))
    }

    fn vanilla_step(&mut self, z: &mut LatentSequence, t: usize) -> Result<()> {
        let all: Vec<usize> = (0..z.dim().0).collect();
        let (prev, _) = self.denoise(z, &all, t)?;
        *z = prev;
        self.log.push(StepRecord {
            timestep: t,
            frame_denoisings: all.len(),
            active: all,
            interpolated: Vec::new(),
        });
        Ok(())
    }
}

fn check_inputs(z_t: &LatentSequence, z_phi: &LatentSequence, m: &MaskSequence, sched: &NoiseSchedule, config: &SamplerConfig) -> Result<()> {
    config.validate()?;
    ensure_same_shape("sampler", z_phi.shape(), z_t.shape())?;
    ensure_mask_matches("sampler", z_phi.shape(), m.shape())?;
    if z_t.dim().0 == 0 {
        return Err(Error::InvalidArgument("no frames to sample".into()));
    }
    if sched.steps() != config.steps {
        return Err(Error::Config(format!(
            "schedule has {} steps but config asks for {}",
            sched.steps(),
            config.steps
        )));
    }
    Ok(())
}

fn new_loop<'a>(
    z_phi: &'a LatentSequence,
    m: &'a MaskSequence,
    denoiser: &'a dyn Denoiser,
    sched: &'a NoiseSchedule,
    config: &SamplerConfig,
    interp_steps: usize,
) -> Loop<'a> {
    Loop {
        z_phi,
        m,
        denoiser,
        sched,
        rng: sampler_rng(config.seed),
        log: CallLog::new(z_phi.dim().0, config.steps, interp_steps),
        denoise_time: Duration::ZERO,
        interp_time: Duration::ZERO,
    }
}

fn finish(mut lp: Loop<'_>, started: Instant) -> CallLog {
    lp.log.timing = PhaseTiming {
        denoise_secs: lp.denoise_time.as_secs_f64(),
        interpolate_secs: lp.interp_time.as_secs_f64(),
        total_secs: started.elapsed().as_secs_f64(),
    };
    lp.log
}

/// DDIM over all frames for `t = T..=1`.
pub fn sample_vanilla(
    z_t: &LatentSequence,
    z_phi: &LatentSequence,
    m: &MaskSequence,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<(LatentSequence, CallLog)> {
    check_inputs(z_t, z_phi, m, sched, config)?;
    let started = Instant::now();
    let mut lp = new_loop(z_phi, m, denoiser, sched, config, 0);
    let mut z = z_t.clone();
    for t in (1..=config.steps).rev() {
        lp.vanilla_step(&mut z, t)?;
    }
    Ok((z, finish(lp, started)))
}

/// Flow-guided latent interpolation for the first `S` steps, vanilla DDIM afterwards.
///
/// `flows` must be complete at latent resolution. A single frame has no
/// neighbours, so it is sampled as in [`sample_vanilla`].
#[allow(clippy::too_many_arguments)]
pub fn sample_interpolated(
    z_t: &LatentSequence,
    z_phi: &LatentSequence,
    m: &MaskSequence,
    flows: &FlowSet,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<(LatentSequence, CallLog)> {
    check_inputs(z_t, z_phi, m, sched, config)?;
    let (n, _, h, w) = z_t.dim();
    if n < 2 {
        return sample_vanilla(z_t, z_phi, m, denoiser, sched, config);
    }
    flows.ensure_frames(n, h, w)?;
    let validity = match config.occlusion_tau {
        Some(tau) => flows.validity(tau)?,
        None => FlowValidity::all_valid(n, h, w),
    };

    let started = Instant::now();
    let mut lp = new_loop(z_phi, m, denoiser, sched, config, config.interp_steps);
    let mut z = z_t.clone();
    let (mut active, mut complement) = parity_init(config.steps, n);
    let last_interp = config.steps - config.interp_steps;
    for t in (1..=config.steps).rev() {
        if t <= last_interp {
            lp.vanilla_step(&mut z, t)?;
            continue;
        }
        let (a_prev, eps) = lp.denoise(&z, &active, t)?;
        let a0_hat = predict_z0(&select_frames(&z, &active), &eps, t, sched)?;

        let start = Instant::now();
        let abar0 = interpolate_complement(&active, &a0_hat, &complement, z_phi, m, flows, &validity)?;
        let renoise = gaussian(abar0.dim(), &mut lp.rng);
        let abar_prev = q_sample(&abar0, t - 1, &renoise, sched)?;
        lp.interp_time += start.elapsed();

        scatter_frames(&mut z, &active, &a_prev);
        scatter_frames(&mut z, &complement, &abar_prev);
        lp.log.push(StepRecord {
            timestep: t,
            frame_denoisings: active.len(),
            active: active.clone(),
            interpolated: complement.clone(),
        });
        std::mem::swap(&mut active, &mut complement);
    }
    Ok((z, finish(lp, started)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserKind;
    use crate::flow::FlowField;
    use crate::tensor::max_abs_diff;
    use ndarray::s;

    #[test]
    fn parity_examples() {
        assert_eq!(parity_init(10, 8), (vec![1, 3, 5, 7], vec![0, 2, 4, 6]));
        assert_eq!(parity_init(9, 8).0, vec![0, 2, 4, 6]);
        assert_eq!(parity_init(10, 1), (vec![], vec![0]));
    }

    fn setup(n: usize) -> (LatentSequence, MaskSequence) {
        let z = Array4::from_shape_fn((n, 2, 4, 6), |(f, c, y, x)| 0.1 * x as f64 + 0.2 * y as f64 - 0.3 * c as f64 + 0.01 * f as f64);
        let mut m = Array4::zeros((n, 1, 4, 6));
        m.slice_mut(s![.., 0, 1..3, 2..4]).fill(1.0);
        (z, m)
    }

    #[test]
    fn static_interpolation_reproduces_condition() {
        let (mut z, m) = setup(3);
        for f in 1..3 {
            let first = z.index_axis(Axis(0), 0).to_owned();
            z.index_axis_mut(Axis(0), f).assign(&first);
        }
        let flows = FlowSet::zeros(3, 4, 6);
        let validity = FlowValidity::all_valid(3, 4, 6);
        let a0 = select_frames(&z, &[1]);
        let out = interpolate_complement(&[1], &a0, &[0, 2], &z, &m, &flows, &validity).unwrap();
        assert_eq!(out, select_frames(&z, &[0, 2]));
    }

    #[test]
    fn empty_mask_takes_condition() {
        let (z, _) = setup(2);
        let m = Array4::zeros((2, 1, 4, 6));
        let flows = FlowSet::new(vec![FlowField::constant(4, 6, 2.0, 1.0)], vec![FlowField::constant(4, 6, -2.0, -1.0)]).unwrap();
        let a0 = Array4::from_elem((1, 2, 4, 6), 7.0);
        let out = interpolate_complement(&[1], &a0, &[0], &z, &m, &flows, &FlowValidity::all_valid(2, 4, 6)).unwrap();
        assert_eq!(out, select_frames(&z, &[0]));
    }

    #[test]
    fn invalid_warps_fall_back_to_condition() {
        let (z, m) = setup(2);
        let flows = FlowSet::zeros(2, 4, 6);
        let mut validity = FlowValidity::all_valid(2, 4, 6);
        validity.forward[0].fill(0.0);
        let a0 = Array4::from_elem((1, 2, 4, 6), 7.0);
        let out = interpolate_complement(&[1], &a0, &[0], &z, &m, &flows, &validity).unwrap();
        assert_eq!(out, select_frames(&z, &[0]));
        assert!(interpolate_complement(&[], &Array4::zeros((0, 2, 4, 6)), &[0], &z, &m, &flows, &validity).is_err());
    }

    #[test]
    fn counts_and_parity_alternation() {
        let (z, m) = setup(8);
        let sched = NoiseSchedule::linear(10, 0.02, 0.3).unwrap();
        let cfg = SamplerConfig::default();
        let kind = DenoiserKind::Oracle { clean: z.clone() };
        let zt = initial_noise(z.dim(), 1);
        let (_, vlog) = sample_vanilla(&zt, &z, &m, &kind, &sched, &cfg).unwrap();
        assert_eq!(vlog.total_frame_denoisings, 80);
        let (_, ilog) = sample_interpolated(&zt, &z, &m, &FlowSet::zeros(8, 4, 6), &kind, &sched, &cfg).unwrap();
        assert_eq!(ilog.total_frame_denoisings, 60);
        for pair in ilog.records[..5].windows(2) {
            assert_eq!(pair[0].active, pair[1].interpolated);
        }
        assert_eq!(ilog.records[5].active.len(), 8);
    }

    #[test]
    fn rejects_s_above_t() {
        let (z, m) = setup(2);
        let sched = NoiseSchedule::linear(4, 0.02, 0.3).unwrap();
        let cfg = SamplerConfig { steps: 4, interp_steps: 5, ..Default::default() };
        let kind = DenoiserKind::Heuristic { fill_iters: 10 };
        assert!(sample_interpolated(&z, &z, &m, &FlowSet::zeros(2, 4, 6), &kind, &sched, &cfg).is_err());
    }

    #[test]
    fn single_frame_falls_back_to_vanilla() {
        let (z, m) = setup(1);
        let sched = NoiseSchedule::linear(4, 0.02, 0.3).unwrap();
        let cfg = SamplerConfig { steps: 4, interp_steps: 4, ..Default::default() };
        let kind = DenoiserKind::Oracle { clean: z.clone() };
        let zt = initial_noise(z.dim(), 3);
        let (a, la) = sample_interpolated(&zt, &z, &m, &FlowSet::zeros(1, 4, 6), &kind, &sched, &cfg).unwrap();
        let (b, lb) = sample_vanilla(&zt, &z, &m, &kind, &sched, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.total_frame_denoisings, lb.total_frame_denoisings);
        assert!(max_abs_diff(&a, &z) < 1e-9);
    }
}
