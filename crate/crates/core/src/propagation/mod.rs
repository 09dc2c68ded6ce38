//! One-step latent propagation between adjacent frames.
//!
//! Before sampling, every frame borrows content for its hole from its
//! neighbours: the neighbour latent is warped by the completed flow, refined by
//! a flow-guided modulated deformable convolution whose offsets and modulation
//! come from a small predictor network, fused with the frame's own latent and
//! mask, and hard-blended into the hole. A backward sweep (last frame to
//! first, using forward flows) is followed by a forward sweep (first to last,
//! using backward flows).
//!
//! The hole of each frame shrinks as it is filled: a pixel only receives
//! content when the neighbour's (current) hole does not leak into its
//! bilinear footprint and, if an occlusion threshold is set, the flow passes
//! the forward-backward check. The remaining hole is returned alongside the
//! latents.

mod conv;
mod deform;

use ndarray::{concatenate, s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{occlusion_mask, warp, warp_grid, FlowField, FlowSet};
use crate::tensor::{ensure_mask_matches, LatentSequence, MaskSequence};
use crate::weights::WeightFile;

pub use conv::{leaky_relu, Conv2d};
pub use deform::{center_delta_kernel, deformable_sample, sigmoid, tap_position, DeformField, SATURATED_LOGIT, TAPS};

/// Width of the predictor's hidden layer.
pub const PREDICTOR_WIDTH: usize = 32;
/// Negative slope of the predictor's activation.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Predictor output: 18 offset channels then 9 modulation logits.
pub const PREDICTOR_OUTPUTS: usize = 3 * TAPS;

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationWeights {
    pub predictor_hidden: Conv2d,
    pub predictor_out: Conv2d,
    /// `C x C x 3 x 3`.
    pub deform_kernel: Array4<f64>,
    pub fusion: Conv2d,
}

impl PropagationWeights {
    pub fn channels(&self) -> usize {
        self.fusion.outputs()
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            predictor_hidden: Conv2d::zeros(2 * channels + 3, PREDICTOR_WIDTH, 3),
            predictor_out: Conv2d::zeros(PREDICTOR_WIDTH, PREDICTOR_OUTPUTS, 3),
            deform_kernel: Array4::zeros((channels, channels, 3, 3)),
            fusion: Conv2d::zeros(2 * channels + 1, channels, 3),
        }
    }

    /// Weights under which propagation reduces to masked flow warping:
    /// zero offsets, unit modulation, centre-delta kernel and a fusion that
    /// passes the deformable output straight through.
    pub fn plain_warp(channels: usize) -> Self {
        let mut w = Self::zeros(channels);
        w.predictor_out.bias.slice_mut(s![2 * TAPS..]).fill(SATURATED_LOGIT);
        w.deform_kernel = center_delta_kernel(channels);
        for c in 0..channels {
            w.fusion.weight[[c, c, 1, 1]] = 1.0;
        }
        w
    }

    /// Uniform random weights in `[-scale, scale]` from a seeded stream.
    pub fn seeded(channels: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let predictor_hidden = Conv2d::random(2 * channels + 3, PREDICTOR_WIDTH, 3, scale, &mut rng);
        let predictor_out = Conv2d::random(PREDICTOR_WIDTH, PREDICTOR_OUTPUTS, 3, scale, &mut rng);
        let deform = Conv2d::random(channels, channels, 3, scale, &mut rng);
        let fusion = Conv2d::random(2 * channels + 1, channels, 3, scale, &mut rng);
        Self {
            predictor_hidden,
            predictor_out,
            deform_kernel: deform.weight,
            fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let checks = [
            ("predictor.0 inputs", self.predictor_hidden.inputs(), 2 * c + 3),
            ("predictor.0 outputs", self.predictor_hidden.outputs(), PREDICTOR_WIDTH),
            ("predictor.1 inputs", self.predictor_out.inputs(), PREDICTOR_WIDTH),
            ("predictor.1 outputs", self.predictor_out.outputs(), PREDICTOR_OUTPUTS),
            ("fusion inputs", self.fusion.inputs(), 2 * c + 1),
        ];
        for (what, found, expected) in checks {
            if found != expected {
                return Err(Error::InvalidArgument(format!("{what}: expected {expected}, found {found}")));
            }
        }
        if self.deform_kernel.dim() != (c, c, 3, 3) {
            return Err(Error::shape("deform.weight", &[c, c, 3, 3], self.deform_kernel.shape()));
        }
        if self.deform_kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("deform kernel must be finite".into()));
        }
        Ok(())
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = WeightFile::default();
        wf.push("predictor.0.weight", self.predictor_hidden.weight.clone().into_dyn());
        wf.push("predictor.0.bias", self.predictor_hidden.bias.clone().into_dyn());
        wf.push("predictor.1.weight", self.predictor_out.weight.clone().into_dyn());
        wf.push("predictor.1.bias", self.predictor_out.bias.clone().into_dyn());
        wf.push("deform.weight", self.deform_kernel.clone().into_dyn());
        wf.push("fusion.weight", self.fusion.weight.clone().into_dyn());
        wf.push("fusion.bias", self.fusion.bias.clone().into_dyn());
        wf
    }

    pub fn from_weight_file(wf: &WeightFile, channels: usize) -> Result<Self> {
        let c = channels;
        let conv = |name: &str, i: usize, o: usize| -> Result<Conv2d> {
            Conv2d::new(
                wf.array4(&format!("{name}.weight"), [o, i, 3, 3])?,
                wf.array1(&format!("{name}.bias"), o)?,
            )
        };
        let w = Self {
            predictor_hidden: conv("predictor.0", 2 * c + 3, PREDICTOR_WIDTH)?,
            predictor_out: conv("predictor.1", PREDICTOR_WIDTH, PREDICTOR_OUTPUTS)?,
            deform_kernel: wf.array4("deform.weight", [c, c, 3, 3])?,
            fusion: conv("fusion", 2 * c + 1, c)?,
        };
        w.validate()?;
        Ok(w)
    }
}

/// Offsets and modulation for aligning `neighbour` to `current`.
///
/// The predictor sees `[warp(neighbour, flow), flow.u, flow.v, current, hole]`.
pub fn predict_offsets(
    neighbour: ArrayView3<f64>,
    current: ArrayView3<f64>,
    hole: ArrayView2<f64>,
    flow: &FlowField,
    weights: &PropagationWeights,
) -> Result<DeformField> {
    let (c, h, w) = current.dim();
    if neighbour.dim() != (c, h, w) {
        return Err(Error::shape("predict_offsets", &[c, h, w], neighbour.shape()));
    }
    if hole.dim() != (h, w) {
        return Err(Error::shape("predict_offsets mask", &[h, w], hole.shape()));
    }
    let warped = warp(neighbour, flow)?;
    let input = concatenate(
        Axis(0),
        &[
            warped.view(),
            flow.u.view().insert_axis(Axis(0)),
            flow.v.view().insert_axis(Axis(0)),
            current,
            hole.insert_axis(Axis(0)),
        ],
    )
    .expect("spatial sizes checked");
    let mut hidden = weights.predictor_hidden.forward(input.view())?;
    hidden.mapv_inplace(|x| leaky_relu(x, LEAKY_SLOPE));
    let out = weights.predictor_out.forward(hidden.view())?;
    let offsets = out
        .slice(s![..2 * TAPS, .., ..])
        .to_owned()
        .into_shape_with_order((TAPS, 2, h, w))
        .expect("18 channels reshape to 9 x 2");
    let modulation = out.slice(s![2 * TAPS.., .., ..]).to_owned();
    Ok(DeformField { offsets, modulation })
}

/// A hole pixel is filled only if less than this share of its bilinear
/// footprint in the neighbour is still hole.
pub const MAX_HOLE_WEIGHT: f64 = 0.5;

/// Order of the two propagation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PassOrder {
    #[default]
    BackwardThenForward,
    ForwardThenBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PropagationOptions {
    pub order: PassOrder,
    /// Forward-backward consistency threshold; `None` disables the check.
    pub occlusion_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub latents: LatentSequence,
    /// Hole pixels that no sweep could fill.
    pub residual: MaskSequence,
}

/// Propagates content into the holes and returns only the latents.
pub fn propagate_latents(z: &LatentSequence, m: &MaskSequence, flows: &FlowSet, weights: &PropagationWeights) -> Result<LatentSequence> {
    Ok(propagate(z, m, flows, weights, PropagationOptions::default())?.latents)
}

pub fn propagate(
    z: &LatentSequence,
    m: &MaskSequence,
    flows: &FlowSet,
    weights: &PropagationWeights,
    options: PropagationOptions,
) -> Result<Propagated> {
    let (n, c, h, w) = z.dim();
    ensure_mask_matches("propagate", z.shape(), m.shape())?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty latent sequence".into()));
    }
    flows.ensure_frames(n, h, w)?;
    if weights.channels() != c {
        return Err(Error::InvalidArgument(format!(
            "propagation weights are for {} channels, latents have {c}",
            weights.channels()
        )));
    }
    weights.validate()?;

    let mut latents = z.clone();
    let mut holes: Vec<Array2<f64>> = m.axis_iter(Axis(0)).map(|f| f.index_axis(Axis(0), 0).to_owned()).collect();
    let backward_sweep: Vec<(usize, usize)> = (0..n.saturating_sub(1)).rev().map(|i| (i, i + 1)).collect();
    let forward_sweep: Vec<(usize, usize)> = (1..n).map(|i| (i, i - 1)).collect();
    let sweeps = match options.order {
        PassOrder::BackwardThenForward => [backward_sweep, forward_sweep],
        PassOrder::ForwardThenBackward => [forward_sweep, backward_sweep],
    };
    for (i, j) in sweeps.into_iter().flatten() {
        if holes[i].iter().all(|&v| v == 0.0) {
            continue;
        }
        // flow stored on frame i pointing at frame j, and its reverse
        let (flow, reverse) = if j == i + 1 {
            (&flows.forward[i], &flows.backward[i])
        } else {
            (&flows.backward[j], &flows.forward[j])
        };
        let (filled, update) = propagate_step(&latents, &holes, i, j, flow, reverse, weights, options.occlusion_tau)?;
        let mut frame = latents.index_axis_mut(Axis(0), i);
        for ((ch, y, x), v) in frame.indexed_iter_mut() {
            if update[[y, x]] {
                *v = filled[[ch, y, x]];
            }
        }
        holes[i].zip_mut_with(&update, |hv, &u| {
            if u {
                *hv = 0.0;
            }
        });
    }
    let mut residual = Array4::zeros((n, 1, h, w));
    for (k, hole) in holes.iter().enumerate() {
        residual.slice_mut(s![k, 0, .., ..]).assign(hole);
    }
    Ok(Propagated { latents, residual })
}

#[allow(clippy::too_many_arguments)]
fn propagate_step(
    latents: &LatentSequence,
    holes: &[Array2<f64>],
    i: usize,
    j: usize,
    flow: &FlowField,
    reverse: &FlowField,
    weights: &PropagationWeights,
    tau: Option<f64>,
) -> Result<(Array3<f64>, Array2<bool>)> {
    let current = latents.index_axis(Axis(0), i);
    let neighbour = latents.index_axis(Axis(0), j);
    let field = predict_offsets(neighbour, current, holes[i].view(), flow, weights)?;
    let aligned = deformable_sample(neighbour, &field, flow, &weights.deform_kernel)?;
    let fusion_in = concatenate(
        Axis(0),
        &[aligned.view(), current, holes[i].view().insert_axis(Axis(0))],
    )
    .expect("spatial sizes checked");
    let fused = weights.fusion.forward(fusion_in.view())?;

    let leaked = warp_grid(holes[j].view(), flow)?;
    let valid = match tau {
        Some(tau) => Some(occlusion_mask(flow, reverse, tau)?),
        None => None,
    };
    let update = Array2::from_shape_fn(holes[i].dim(), |(y, x)| {
        holes[i][[y, x]] != 0.0 && leaked[[y, x]] < MAX_HOLE_WEIGHT && valid.as_ref().is_none_or(|v| v[[y, x]] != 0.0)
    });
    Ok((fused, update))
}
