//! Optical flow fields at latent resolution and the operations built on them.
//!
//! Flows use the backward-warping convention: a flow stored for frame `i`
//! towards frame `j` says where the content of pixel `p` of frame `i` is found
//! in frame `j`, so `warp(frame_j, flow)` aligns frame `j` with frame `i`.
//! Units are pixels of the grid the flow lives on, per frame step.

mod estimate;
mod fill;
mod flo;
mod warp;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{compensated_sum, Grid, VideoTensor};

pub use estimate::{estimate_flow, BlockMatchParams};
pub use fill::{complete_flow, default_fill_iterations, laplace_fill, FILL_TOLERANCE};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use warp::{bilinear_sample, warp, warp_grid};

/// Default forward-backward consistency threshold, in latent pixels.
pub const DEFAULT_OCCLUSION_TAU: f64 = 1.0;

/// Scale applied to E_warp for reporting (values are given in units of 1e-2).
pub const E_WARP_REPORT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

/// Binary grid, `1.0` where the flow passed the forward-backward check.
pub type ValidityMask = Grid;

impl FlowField {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::shape("flow field", u.shape(), v.shape()));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("flow contains non-finite values".into()));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::constant(h, w, 0.0, 0.0)
    }

    pub fn constant(h: usize, w: usize, du: f64, dv: f64) -> Self {
        Self {
            u: Array2::from_elem((h, w), du),
            v: Array2::from_elem((h, w), dv),
        }
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: &self.u * factor,
            v: &self.v * factor,
        }
    }
}

/// Forward and backward flows between consecutive frames.
///
/// `forward[i]` maps frame `i` to frame `i + 1`; `backward[i]` maps frame
/// `i + 1` to frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    pub forward: Vec<FlowField>,
    pub backward: Vec<FlowField>,
}

impl FlowSet {
    pub fn new(forward: Vec<FlowField>, backward: Vec<FlowField>) -> Result<Self> {
        if forward.len() != backward.len() {
            return Err(Error::InvalidArgument(format!(
                "forward has {} flows but backward has {}",
                forward.len(),
                backward.len()
            )));
        }
        if let Some(first) = forward.first() {
            let dim = first.dim();
            if let Some(f) = forward.iter().chain(backward.iter()).find(|f| f.dim() != dim) {
                return Err(Error::shape("flow set", &[dim.0, dim.1], &[f.dim().0, f.dim().1]));
            }
        }
        Ok(Self { forward, backward })
    }

    pub fn zeros(frames: usize, h: usize, w: usize) -> Self {
        let pairs = frames.saturating_sub(1);
        Self {
            forward: vec![FlowField::zeros(h, w); pairs],
            backward: vec![FlowField::zeros(h, w); pairs],
        }
    }

    /// Number of frames this set connects (`pairs + 1`).
    pub fn frames(&self) -> usize {
        self.forward.len() + 1
    }

    pub fn dim(&self) -> Option<(usize, usize)> {
        self.forward.first().map(FlowField::dim)
    }

    pub(crate) fn ensure_frames(&self, frames: usize, h: usize, w: usize) -> Result<()> {
        if frames > 1 && self.forward.len() != frames - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} frames need {} flow pairs, got {}",
                frames,
                frames - 1,
                self.forward.len()
            )));
        }
        if let Some(dim) = self.dim() {
            if dim != (h, w) {
                return Err(Error::shape("flow set", &[h, w], &[dim.0, dim.1]));
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&FlowField) -> Result<FlowField> + Sync) -> Result<Self> {
        let forward = self.forward.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        let backward = self.backward.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        Self::new(forward, backward)
    }

    /// Completes every flow inside the hole of the frame it is stored on.
    ///
    /// `holes[k]` is the hole of frame `k`.
    pub fn complete(&self, holes: &[Grid]) -> Result<Self> {
        if holes.len() != self.frames() {
            return Err(Error::InvalidArgument(format!(
                "{} hole masks for {} frames",
                holes.len(),
                self.frames()
            )));
        }
        let forward = (0..self.forward.len())
            .into_par_iter()
            .map(|i| complete_flow(&self.forward[i], holes[i].view()))
            .collect::<Result<Vec<_>>>()?;
        let backward = (0..self.backward.len())
            .into_par_iter()
            .map(|i| complete_flow(&self.backward[i], holes[i + 1].view()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(forward, backward)
    }

    /// Forward-backward consistency masks for both directions.
    pub fn validity(&self, tau: f64) -> Result<FlowValidity> {
        let forward = self
            .forward
            .par_iter()
            .zip(self.backward.par_iter())
            .map(|(f, b)| occlusion_mask(f, b, tau))
            .collect::<Result<Vec<_>>>()?;
        let backward = self
            .backward
            .par_iter()
            .zip(self.forward.par_iter())
            .map(|(b, f)| occlusion_mask(b, f, tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowValidity { forward, backward })
    }
}

/// Validity masks matching a [`FlowSet`] entry for entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowValidity {
    pub forward: Vec<ValidityMask>,
    pub backward: Vec<ValidityMask>,
}

impl FlowValidity {
    pub fn all_valid(frames: usize, h: usize, w: usize) -> Self {
        let pairs = frames.saturating_sub(1);
        Self {
            forward: vec![Array2::ones((h, w)); pairs],
            backward: vec![Array2::ones((h, w)); pairs],
        }
    }
}

/// `1` where `|fwd(p) + bwd(p + fwd(p))| <= tau`.
pub fn occlusion_mask(fwd: &FlowField, bwd: &FlowField, tau: f64) -> Result<ValidityMask> {
    if fwd.dim() != bwd.dim() {
        let (h, w) = fwd.dim();
        let (bh, bw) = bwd.dim();
        return Err(Error::shape("occlusion_mask", &[h, w], &[bh, bw]));
    }
    Ok(Array2::from_shape_fn(fwd.dim(), |(y, x)| {
        let (fu, fv) = (fwd.u[[y, x]], fwd.v[[y, x]]);
        let tx = x as f64 + fu;
        let ty = y as f64 + fv;
        let ru = fu + bilinear_sample(bwd.u.view(), tx, ty);
        let rv = fv + bilinear_sample(bwd.v.view(), tx, ty);
        if ru.hypot(rv) <= tau {
            1.0
        } else {
            0.0
        }
    }))
}

/// Average-pools a flow by `factor` and rescales it to the coarse grid's units.
pub fn downsample_flow(flow: &FlowField, factor: usize) -> Result<FlowField> {
    let (h, w) = flow.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "factor {factor} does not divide flow size {h}x{w}"
        )));
    }
    if factor == 1 {
        return Ok(flow.clone());
    }
    let pool = |g: &Array2<f64>| {
        let area = (factor * factor) as f64;
        Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
            let block = g.slice(ndarray::s![
                y * factor..(y + 1) * factor,
                x * factor..(x + 1) * factor
            ]);
            block.sum() / area / factor as f64
        })
    };
    Ok(FlowField {
        u: pool(&flow.u),
        v: pool(&flow.v),
    })
}

fn mean_l1(pred: &[FlowField], truth: &[FlowField]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "flow count mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut count = 0usize;
    let mut terms = Vec::new();
    for (p, t) in pred.iter().zip(truth) {
        if p.dim() != t.dim() {
            return Err(Error::shape("flow_loss", &[t.dim().0, t.dim().1], &[p.dim().0, p.dim().1]));
        }
        count += p.u.len();
        terms.extend(
            p.u.iter()
                .zip(t.u.iter())
                .zip(p.v.iter().zip(t.v.iter()))
                .map(|((pu, tu), (pv, tv))| (pu - tu).abs() + (pv - tv).abs()),
        );
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(compensated_sum(terms) / count as f64)
}

/// Mean L1 flow error, summed over the forward and backward directions.
pub fn flow_loss(pred: &FlowSet, truth: &FlowSet) -> Result<f64> {
    Ok(mean_l1(&pred.forward, &truth.forward)? + mean_l1(&pred.backward, &truth.backward)?)
}

/// Flow warping error between consecutive frames over valid pixels.
///
/// For each pair the squared difference between frame `i` and frame `i + 1`
/// warped by `forward[i]` is averaged over valid pixels and channels; pairs are
/// then averaged. Pairs without any valid pixel are skipped.
pub fn e_warp(frames: &VideoTensor, flows: &FlowSet, validity: &[ValidityMask]) -> Result<f64> {
    let (n, _c, h, w) = frames.dim();
    flows.ensure_frames(n, h, w)?;
    if validity.len() != flows.forward.len() {
        return Err(Error::InvalidArgument(format!(
            "{} validity masks for {} flow pairs",
            validity.len(),
            flows.forward.len()
        )));
    }
    let per_pair = (0..flows.forward.len())
        .into_par_iter()
        .map(|i| pair_warp_error(frames, i, &flows.forward[i], validity[i].view()))
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<f64> = per_pair.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Degenerate("no valid pixels to measure warping error on".into()));
    }
    Ok(compensated_sum(used.iter().copied()) / used.len() as f64)
}

fn pair_warp_error(frames: &VideoTensor, i: usize, flow: &FlowField, valid: ArrayView2<f64>) -> Result<Option<f64>> {
    let cur = frames.index_axis(Axis(0), i);
    let next = frames.index_axis(Axis(0), i + 1);
    if valid.dim() != flow.dim() {
        return Err(Error::shape("e_warp validity", &[flow.dim().0, flow.dim().1], valid.shape()));
    }
    let warped: Array3<f64> = warp(next, flow)?;
    let channels = cur.shape()[0];
    let mut terms = Vec::new();
    for ((c, y, x), &a) in cur.indexed_iter() {
        if valid[[y, x]] != 0.0 {
            let d = a - warped[[c, y, x]];
            terms.push(d * d);
        }
    }
    let pixels = terms.len() / channels.max(1);
    if pixels == 0 {
        return Ok(None);
    }
    Ok(Some(compensated_sum(terms.iter().copied()) / terms.len() as f64))
}

/// [`e_warp`] in the reporting convention (units of 1e-2).
pub fn e_warp_scaled(frames: &VideoTensor, flows: &FlowSet, validity: &[ValidityMask]) -> Result<f64> {
    Ok(e_warp(frames, flows, validity)? * E_WARP_REPORT_SCALE)
}
