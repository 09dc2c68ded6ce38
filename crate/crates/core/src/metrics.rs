//! PSNR, SSIM and warping error over decoded videos.
//!
//! Every metric works on the `[0, 1]` scale. A region mask (`N x 1 x H x W`,
//! non-zero = included) restricts the statistic to hole pixels; without one the
//! full frame is used.

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSample;
use crate::error::{Error, Result};
use crate::flow::{e_warp, FlowSet, ValidityMask, E_WARP_REPORT_SCALE};
use crate::tensor::{compensated_sum, ensure_mask_matches, ensure_same_shape, MaskSequence, VideoTensor};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const PSNR_CAP_MSE: f64 = 1e-10;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_CAP_MSE {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

fn check(a: &VideoTensor, b: &VideoTensor, region: Option<&MaskSequence>) -> Result<()> {
    ensure_same_shape("metric inputs", a.shape(), b.shape())?;
    if let Some(m) = region {
        ensure_mask_matches("metric region", a.shape(), m.shape())?;
    }
    Ok(())
}

fn included(region: Option<&MaskSequence>, k: usize, y: usize, x: usize) -> bool {
    region.is_none_or(|m| m[[k, 0, y, x]] != 0.0)
}

/// Sum of squared errors and number of included samples for frame `k`.
fn frame_sse(a: &VideoTensor, b: &VideoTensor, region: Option<&MaskSequence>, k: usize) -> (f64, usize) {
    let fa = a.index_axis(Axis(0), k);
    let fb = b.index_axis(Axis(0), k);
    let terms: Vec<f64> = fa
        .indexed_iter()
        .filter(|((_, y, x), _)| included(region, k, *y, *x))
        .map(|((c, y, x), &va)| {
            let d = va - fb[[c, y, x]];
            d * d
        })
        .collect();
    let n = terms.len();
    (compensated_sum(terms), n)
}

fn empty_region() -> Error {
    Error::Degenerate("metric region contains no pixels".into())
}

/// `10 log10(1 / MSE)` over the region, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &VideoTensor, b: &VideoTensor, region: Option<&MaskSequence>) -> Result<f64> {
    check(a, b, region)?;
    let parts: Vec<(f64, usize)> = (0..a.shape()[0]).into_par_iter().map(|k| frame_sse(a, b, region, k)).collect();
    let count: usize = parts.iter().map(|p| p.1).sum();
    if count == 0 {
        return Err(empty_region());
    }
    Ok(psnr_from_mse(compensated_sum(parts.iter().map(|p| p.0)) / count as f64))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
fn gaussian_taps(radius: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter evaluated only where the window fits inside the grid.
fn filter_valid(g: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let r = taps.len() / 2;
    let (h, w) = g.dim();
    let rows = Array2::from_shape_fn((h, w - 2 * r), |(y, x)| taps.iter().enumerate().map(|(i, t)| t * g[[y, x + i]]).sum::<f64>());
    Array2::from_shape_fn((h - 2 * r, w - 2 * r), |(y, x)| {
        taps.iter().enumerate().map(|(i, t)| t * rows[[y + i, x]]).sum::<f64>()
    })
}

/// SSIM map of one channel over the pixels whose window fits inside the frame.
///
/// Frames smaller than the 11x11 window use the largest window that fits.
pub fn ssim_map(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let r = SSIM_RADIUS.min((h.min(w).saturating_sub(1)) / 2);
    let taps = gaussian_taps(r);
    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = filter_valid(&a, &taps);
    let mu_b = filter_valid(&b, &taps);
    let aa = filter_valid(&(&a * &a), &taps);
    let bb = filter_valid(&(&b * &b), &taps);
    let ab = filter_valid(&(&a * &b), &taps);
    ndarray::Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .map_collect(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
}

/// Mean SSIM of frame `k` over window centres inside the region, and their count.
fn frame_ssim(a: &VideoTensor, b: &VideoTensor, region: Option<&MaskSequence>, k: usize) -> (f64, usize) {
    let (_, c, h, w) = a.dim();
    let r = SSIM_RADIUS.min((h.min(w).saturating_sub(1)) / 2);
    let mut terms = Vec::new();
    for ch in 0..c {
        let map = ssim_map(a.slice(s![k, ch, .., ..]), b.slice(s![k, ch, .., ..]));
        for ((y, x), &v) in map.indexed_iter() {
            if included(region, k, y + r, x + r) {
                terms.push(v);
            }
        }
    }
    let n = terms.len();
    (compensated_sum(terms), n)
}

/// Single-scale SSIM with an 11x11 Gaussian window, averaged over frames and channels.
pub fn ssim(a: &VideoTensor, b: &VideoTensor, region: Option<&MaskSequence>) -> Result<f64> {
    check(a, b, region)?;
    let parts: Vec<(f64, usize)> = (0..a.shape()[0]).into_par_iter().map(|k| frame_ssim(a, b, region, k)).collect();
    let count: usize = parts.iter().map(|p| p.1).sum();
    if count == 0 {
        return Err(empty_region());
    }
    Ok(compensated_sum(parts.iter().map(|p| p.0)) / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub psnr: f64,
    /// Absent when no window centre falls inside the region.
    pub ssim: Option<f64>,
    /// `null` for frames where the region is empty.
    pub per_frame_psnr: Vec<Option<f64>>,
    pub per_frame_ssim: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    pub full: RegionMetrics,
    /// Absent when the masks contain no hole pixel.
    pub hole: Option<RegionMetrics>,
    /// Mean squared warping error over valid pixels; absent without a valid pixel.
    pub e_warp: Option<f64>,
    /// [`e_warp`](Self::e_warp) in units of 1e-2.
    pub e_warp_scaled: Option<f64>,
}

fn region_metrics(reference: &VideoTensor, output: &VideoTensor, region: Option<&MaskSequence>) -> Result<Option<RegionMetrics>> {
    let n = reference.shape()[0];
    let per_frame: Vec<((f64, usize), (f64, usize))> = (0..n)
        .into_par_iter()
        .map(|k| (frame_sse(reference, output, region, k), frame_ssim(reference, output, region, k)))
        .collect();
    let (psnr_count, ssim_count): (usize, usize) = per_frame.iter().fold((0, 0), |acc, (p, s)| (acc.0 + p.1, acc.1 + s.1));
    if psnr_count == 0 {
        return Ok(None);
    }
    let mse = compensated_sum(per_frame.iter().map(|(p, _)| p.0)) / psnr_count as f64;
    let ssim = (ssim_count > 0).then(|| compensated_sum(per_frame.iter().map(|(_, s)| s.0)) / ssim_count as f64);
    Ok(Some(RegionMetrics {
        psnr: psnr_from_mse(mse),
        ssim,
        per_frame_psnr: per_frame.iter().map(|(p, _)| (p.1 > 0).then(|| psnr_from_mse(p.0 / p.1 as f64))).collect(),
        per_frame_ssim: per_frame.iter().map(|(_, s)| (s.1 > 0).then(|| s.0 / s.1 as f64)).collect(),
    }))
}

/// Metrics of `output` against `reference`, with warping error along `flows` on `validity`.
pub fn report(
    reference: &VideoTensor,
    masks: &MaskSequence,
    output: &VideoTensor,
    flows: &FlowSet,
    validity: &[ValidityMask],
) -> Result<MetricReport> {
    check(reference, output, Some(masks))?;
    let full = region_metrics(reference, output, None)?.ok_or_else(empty_region)?;
    let hole = region_metrics(reference, output, Some(masks))?;
    let e = if reference.shape()[0] < 2 {
        None
    } else {
        match e_warp(output, flows, validity) {
            Ok(v) => Some(v),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(MetricReport {
        frames: reference.shape()[0],
        full,
        hole,
        e_warp: e,
        e_warp_scaled: e.map(|v| v * E_WARP_REPORT_SCALE),
    })
}

/// [`report`] against a corpus sample's ground truth, flows and exact occlusion.
pub fn report_sample(sample: &CorpusSample, output: &VideoTensor) -> Result<MetricReport> {
    report(&sample.frames, &sample.masks, output, &sample.flows, &sample.validity.forward)
}
