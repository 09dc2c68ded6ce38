//! Array aliases and small helpers shared by every stage.
//!
//! Video and latent sequences are `N x C x H x W` arrays of `f64`; masks use the
//! same layout with a single channel and hold exactly `0.0` or `1.0`, where `1.0`
//! marks a missing (hole) pixel.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// `N x C x H x W` frames with values on the `[0, 1]` scale.
pub type VideoTensor = Array4<f64>;
/// `N x C x H/4 x W/4` latent codes.
pub type LatentSequence = Array4<f64>;
/// `N x 1 x H x W` binary masks, `1.0` = hole.
pub type MaskSequence = Array4<f64>;
/// A single `C x H x W` frame or latent.
pub type Frame = Array3<f64>;
/// A single-channel `H x W` grid.
pub type Grid = Array2<f64>;

pub(crate) fn ensure_same_shape(context: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(context, a, b));
    }
    Ok(())
}

/// Checks that `mask` is `N x 1 x H x W` for a sequence of shape `N x C x H x W`.
pub(crate) fn ensure_mask_matches(context: &'static str, seq: &[usize], mask: &[usize]) -> Result<()> {
    let expected = [seq[0], 1, seq[2], seq[3]];
    if mask != expected {
        return Err(Error::shape(context, &expected, mask));
    }
    Ok(())
}

/// Neumaier-compensated sum, order-stable for the sizes used here.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Elementwise `mask ? hole : known`, broadcasting a `1 x H x W` mask over channels.
///
/// Selection (not `m*a + (1-m)*b`) keeps known values bit-exact.
pub fn blend_frame(mask: ArrayView2<f64>, hole: &Frame, known: &Frame) -> Frame {
    let mut out = known.clone();
    for (mut out_c, hole_c) in out.axis_iter_mut(Axis(0)).zip(hole.axis_iter(Axis(0))) {
        Zip::from(&mut out_c)
            .and(&hole_c)
            .and(&mask)
            .for_each(|o, &h, &m| {
                if m != 0.0 {
                    *o = h;
                }
            });
    }
    out
}

/// Sequence version of [`blend_frame`].
pub fn blend_sequence(mask: &MaskSequence, hole: &Array4<f64>, known: &Array4<f64>) -> Result<Array4<f64>> {
    ensure_same_shape("blend_sequence", hole.shape(), known.shape())?;
    ensure_mask_matches("blend_sequence", known.shape(), mask.shape())?;
    let mut out = known.clone();
    for n in 0..known.shape()[0] {
        let frame = blend_frame(
            mask.index_axis(Axis(0), n).index_axis(Axis(0), 0),
            &hole.index_axis(Axis(0), n).to_owned(),
            &known.index_axis(Axis(0), n).to_owned(),
        );
        out.index_axis_mut(Axis(0), n).assign(&frame);
    }
    Ok(out)
}

/// Gathers the listed frames into a new sequence, in the listed order.
pub fn select_frames(seq: &Array4<f64>, indices: &[usize]) -> Array4<f64> {
    seq.select(Axis(0), indices)
}

/// Writes `frames` (in order) back into `seq` at `indices`.
pub fn scatter_frames(seq: &mut Array4<f64>, indices: &[usize], frames: &Array4<f64>) {
    for (k, &i) in indices.iter().enumerate() {
        seq.index_axis_mut(Axis(0), i).assign(&frames.index_axis(Axis(0), k));
    }
}

pub fn is_binary(mask: &Array4<f64>) -> bool {
    mask.iter().all(|&v| v == 0.0 || v == 1.0)
}

pub fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0_f64, |acc, &x, &y| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(vals), 1.0);
    }

    #[test]
    fn blend_keeps_known_bits() {
        let known = Array3::from_shape_fn((2, 2, 2), |(c, y, x)| 0.1 * (c + y + x) as f64 + 1e-17);
        let hole = Array3::from_elem((2, 2, 2), 9.0);
        let mask = array![[0.0, 1.0], [0.0, 0.0]];
        let out = blend_frame(mask.view(), &hole, &known);
        assert_eq!(out[[0, 0, 1]], 9.0);
        assert_eq!(out[[1, 0, 1]], 9.0);
        assert_eq!(out[[1, 1, 1]].to_bits(), known[[1, 1, 1]].to_bits());
    }
}
