//! Noise predictors consumed by the samplers.
//!
//! A denoiser sees the noisy latents of the frames being denoised this step,
//! the timestep, and a condition holding the encoded input latents and hole
//! mask of the same frames concatenated on the channel axis. Two concrete
//! predictors stand in for a trained network: an oracle that knows the clean
//! latents, and a heuristic that fills holes by harmonic interpolation.

mod attention;

use std::time::Duration;

use ndarray::{concatenate, s, Array4, Axis};
use rayon::prelude::*;

use crate::diffusion::{ddim_step, eps_from_z0, NoiseSchedule};
use crate::error::{Error, Result};
use crate::flow::laplace_fill;
use crate::tensor::{blend_frame, ensure_mask_matches, ensure_same_shape, select_frames, LatentSequence, MaskSequence};

pub use attention::{
    attention_block, attention_probs, rearrange_st, rearrange_st_inverse, rearrange_tokens, spatiotemporal_attention,
    unrearrange_tokens, AttentionWeights,
};

/// Inputs for one batched denoiser call.
#[derive(Debug, Clone)]
pub struct DenoiserInput {
    /// Noisy latents of the active frames.
    pub noisy: LatentSequence,
    pub t: usize,
    /// `[z_phi (C) | m (1)]` for the active frames.
    pub condition: Array4<f64>,
    /// Sequence indices of the active frames, in batch order.
    pub frames: Vec<usize>,
}

impl DenoiserInput {
    /// Builds the input for `frames`, taking the condition from full-length sequences.
    pub fn new(noisy: LatentSequence, t: usize, z_phi: &LatentSequence, mask: &MaskSequence, frames: Vec<usize>) -> Result<Self> {
        ensure_mask_matches("denoiser condition", z_phi.shape(), mask.shape())?;
        let latent = select_frames(z_phi, &frames);
        let m = select_frames(mask, &frames);
        ensure_same_shape("denoiser input", latent.shape(), noisy.shape())?;
        let condition = concatenate(Axis(1), &[latent.view(), m.view()]).expect("frame and spatial sizes agree");
        Ok(Self {
            noisy,
            t,
            condition,
            frames,
        })
    }

    pub fn channels(&self) -> usize {
        self.noisy.dim().1
    }

    pub fn latent_condition(&self) -> LatentSequence {
        self.condition.slice(s![.., ..self.channels(), .., ..]).to_owned()
    }

    pub fn mask(&self) -> MaskSequence {
        let c = self.channels();
        self.condition.slice(s![.., c..c + 1, .., ..]).to_owned()
    }

    /// Network input layout `[noisy (C) | z_phi (C) | m (1)]`.
    pub fn network_input(&self) -> Array4<f64> {
        concatenate(Axis(1), &[self.noisy.view(), self.condition.view()]).expect("shapes agree")
    }
}

/// Predicts the noise in a batch of noisy latents.
pub trait Denoiser: Sync {
    fn predict_eps(&self, input: &DenoiserInput, sched: &NoiseSchedule) -> Result<LatentSequence>;
}

#[derive(Debug, Clone)]
pub enum DenoiserKind {
    /// Knows the clean latents of every frame and inverts the forward process exactly.
    Oracle { clean: LatentSequence },
    /// Predicts the condition latents with holes filled harmonically.
    Heuristic { fill_iters: usize },
    /// Sleeps `per_call_cost` for every frame in the batch, then delegates.
    Delayed { inner: Box<DenoiserKind>, per_call_cost: Duration },
}

impl DenoiserKind {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiserKind::Oracle { .. } => "oracle",
            DenoiserKind::Heuristic { .. } => "heuristic",
            DenoiserKind::Delayed { .. } => "delayed",
        }
    }
}

/// Clean-latent estimate used by the heuristic denoiser:
/// known pixels from the condition, hole pixels harmonically filled per channel.
pub fn heuristic_z0(z_phi: &LatentSequence, mask: &MaskSequence, fill_iters: usize) -> Result<LatentSequence> {
    ensure_mask_matches("heuristic", z_phi.shape(), mask.shape())?;
    let frames = (0..z_phi.dim().0)
        .into_par_iter()
        .map(|n| {
            let frame = z_phi.index_axis(Axis(0), n);
            let hole = mask.slice(s![n, 0, .., ..]);
            if hole.iter().all(|&v| v == 0.0) {
                return Ok(frame.to_owned());
            }
            let mut filled = frame.to_owned();
            for (mut out, src) in filled.axis_iter_mut(Axis(0)).zip(frame.axis_iter(Axis(0))) {
                out.assign(&laplace_fill(src, hole, fill_iters)?);
            }
            Ok(blend_frame(hole, &filled, &frame.to_owned()))
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = frames.iter().map(|f| f.view().insert_axis(Axis(0))).collect();
    Ok(concatenate(Axis(0), &views).expect("frames share a shape"))
}

impl Denoiser for DenoiserKind {
    fn predict_eps(&self, input: &DenoiserInput, sched: &NoiseSchedule) -> Result<LatentSequence> {
        if input.t == 0 {
            return Err(Error::InvalidArgument("denoising requires t >= 1".into()));
        }
        match self {
            DenoiserKind::Oracle { clean } => {
                if let Some(&bad) = input.frames.iter().find(|&&f| f >= clean.dim().0) {
                    return Err(Error::InvalidArgument(format!("oracle has no clean latent for frame {bad}")));
                }
                let target = select_frames(clean, &input.frames);
                eps_from_z0(&input.noisy, &target, input.t, sched)
            }
            DenoiserKind::Heuristic { fill_iters } => {
                let z0 = heuristic_z0(&input.latent_condition(), &input.mask(), *fill_iters)?;
                eps_from_z0(&input.noisy, &z0, input.t, sched)
            }
            DenoiserKind::Delayed { inner, per_call_cost } => {
                let frames = u32::try_from(input.frames.len()).unwrap_or(u32::MAX);
                std::thread::sleep(per_call_cost.saturating_mul(frames));
                inner.predict_eps(input, sched)
            }
        }
    }
}

/// One denoising step `t -> t - 1`: returns the updated latents and the predicted noise.
pub fn denoise(
    denoiser: &dyn Denoiser,
    input: &DenoiserInput,
    sched: &NoiseSchedule,
    noise: Option<&LatentSequence>,
) -> Result<(LatentSequence, LatentSequence)> {
    let eps = denoiser.predict_eps(input, sched)?;
    let prev = ddim_step(&input.noisy, &eps, input.t, input.t - 1, noise, sched)?;
    Ok((prev, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{predict_z0, q_sample};
    use crate::tensor::max_abs_diff;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(10, 0.02, 0.3).unwrap()
    }

    fn pattern(n: usize) -> LatentSequence {
        Array4::from_shape_fn((n, 2, 4, 5), |(f, c, y, x)| ((f * 13 + c * 7 + y * 3 + x) as f64 * 0.37).sin())
    }

    #[test]
    fn oracle_recovers_noise_and_clean() {
        let clean = pattern(3);
        let eps = pattern(3).mapv(|v| v * 1.7 - 0.2);
        let s = sched();
        let noisy = q_sample(&clean, 6, &eps, &s).unwrap();
        let input = DenoiserInput::new(noisy.clone(), 6, &clean, &Array4::zeros((3, 1, 4, 5)), vec![0, 1, 2]).unwrap();
        let kind = DenoiserKind::Oracle { clean: clean.clone() };
        let pred = kind.predict_eps(&input, &s).unwrap();
        assert!(max_abs_diff(&pred, &eps) < 1e-12);
        let z0 = predict_z0(&noisy, &pred, 6, &s).unwrap();
        assert!(max_abs_diff(&z0, &clean) < 1e-12);
    }

    #[test]
    fn oracle_uses_frame_indices() {
        let clean = pattern(4);
        let s = sched();
        let active = vec![1, 3];
        let sub = select_frames(&clean, &active);
        let noisy = q_sample(&sub, 2, &Array4::zeros(sub.raw_dim()), &s).unwrap();
        let input = DenoiserInput::new(noisy, 2, &clean, &Array4::zeros((4, 1, 4, 5)), active).unwrap();
        let eps = DenoiserKind::Oracle { clean }.predict_eps(&input, &s).unwrap();
        assert!(eps.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn heuristic_without_hole_predicts_condition() {
        let z_phi = pattern(2);
        let m = Array4::zeros((2, 1, 4, 5));
        assert_eq!(heuristic_z0(&z_phi, &m, 50).unwrap(), z_phi);
    }

    #[test]
    fn heuristic_constant_fill_closed_form() {
        let s = sched();
        let z_phi = Array4::from_elem((1, 1, 4, 4), 0.6);
        let mut m = Array4::zeros((1, 1, 4, 4));
        m.slice_mut(s![0, 0, 1..3, 1..3]).fill(1.0);
        let mut cond = z_phi.clone();
        cond.slice_mut(s![0, 0, 1..3, 1..3]).fill(0.0);
        let noisy = Array4::from_elem((1, 1, 4, 4), 0.2);
        let input = DenoiserInput::new(noisy, 4, &cond, &m, vec![0]).unwrap();
        let eps = DenoiserKind::Heuristic { fill_iters: 100 }.predict_eps(&input, &s).unwrap();
        let a = s.alpha(4).unwrap();
        let expected = (0.2 - a.sqrt() * 0.6) / (1.0 - a).sqrt();
        assert!(eps.iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn denoise_returns_ddim_update() {
        let s = sched();
        let clean = pattern(2);
        let noisy = q_sample(&clean, 3, &pattern(2), &s).unwrap();
        let input = DenoiserInput::new(noisy, 3, &clean, &Array4::zeros((2, 1, 4, 5)), vec![0, 1]).unwrap();
        let (prev, eps) = denoise(&DenoiserKind::Oracle { clean: clean.clone() }, &input, &s, None).unwrap();
        let expected = q_sample(&clean, 2, &eps, &s).unwrap();
        assert!(max_abs_diff(&prev, &expected) < 1e-12);
        let at_zero = DenoiserInput { t: 0, ..input };
        assert!(DenoiserKind::Heuristic { fill_iters: 1 }.predict_eps(&at_zero, &s).is_err());
    }

    #[test]
    fn network_input_layout() {
        let z_phi = pattern(1);
        let m = Array4::ones((1, 1, 4, 5));
        let noisy = Array4::from_elem((1, 2, 4, 5), 9.0);
        let input = DenoiserInput::new(noisy, 1, &z_phi, &m, vec![0]).unwrap();
        let x = input.network_input();
        assert_eq!(x.dim(), (1, 5, 4, 5));
        assert_eq!(x[[0, 0, 0, 0]], 9.0);
        assert_eq!(x[[0, 2, 1, 1]], z_phi[[0, 0, 1, 1]]);
        assert_eq!(x[[0, 4, 3, 4]], 1.0);
    }
}
