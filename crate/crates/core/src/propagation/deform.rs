use ndarray::{Array3, Array4, ArrayView3};

use crate::error::{Error, Result};
use crate::flow::{bilinear_sample, FlowField};

/// Taps of the 3x3 deformable kernel, row-major.
pub const TAPS: usize = 9;

/// Logit large enough that its sigmoid rounds to exactly 1.0 in `f64`.
pub const SATURATED_LOGIT: f64 = 40.0;

/// Per-pixel tap offsets and modulation logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformField {
    /// `9 x 2 x H x W`; `[k, 0]` is the x offset of tap `k`, `[k, 1]` the y offset.
    pub offsets: Array4<f64>,
    /// `9 x H x W` logits, squashed by the logistic function.
    pub modulation: Array3<f64>,
}

impl DeformField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            offsets: Array4::zeros((TAPS, 2, h, w)),
            modulation: Array3::zeros((TAPS, h, w)),
        }
    }

    /// Zero offsets with unit modulation.
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            offsets: Array4::zeros((TAPS, 2, h, w)),
            modulation: Array3::from_elem((TAPS, h, w), SATURATED_LOGIT),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        let (_, _, h, w) = self.offsets.dim();
        (h, w)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tap `k` sits at `(k % 3 - 1, k / 3 - 1)` relative to the output pixel.
#[inline]
pub fn tap_position(k: usize) -> (f64, f64) {
    ((k % 3) as f64 - 1.0, (k / 3) as f64 - 1.0)
}

/// Flow-guided modulated deformable convolution.
///
/// `out[o](p) = sum_{c,k} kernel[o,c,k] * sigmoid(m_k(p)) * z[c](p + p_k + flow(p) + off_k(p))`
/// with clamped bilinear sampling.
pub fn deformable_sample(z: ArrayView3<f64>, field: &DeformField, flow: &FlowField, kernel: &Array4<f64>) -> Result<Array3<f64>> {
    let (c_in, h, w) = z.dim();
    let (c_out, k_in, kh, kw) = kernel.dim();
    if k_in != c_in || kh != 3 || kw != 3 {
        return Err(Error::shape("deformable kernel", &[c_out, c_in, 3, 3], kernel.shape()));
    }
    if field.dim() != (h, w) || field.modulation.dim() != (TAPS, h, w) {
        return Err(Error::shape("deform field", &[h, w], &[field.dim().0, field.dim().1]));
    }
    if flow.dim() != (h, w) {
        return Err(Error::shape("deform flow", &[h, w], &[flow.dim().0, flow.dim().1]));
    }
    let mut out = Array3::zeros((c_out, h, w));
    let mut samples = vec![0.0; c_in];
    for y in 0..h {
        for x in 0..w {
            let base_x = x as f64 + flow.u[[y, x]];
            let base_y = y as f64 + flow.v[[y, x]];
            for k in 0..TAPS {
                let (tx, ty) = tap_position(k);
                let sx = base_x + tx + field.offsets[[k, 0, y, x]];
                let sy = base_y + ty + field.offsets[[k, 1, y, x]];
                let m = sigmoid(field.modulation[[k, y, x]]);
                for (c, s) in samples.iter_mut().enumerate() {
                    *s = bilinear_sample(z.index_axis(ndarray::Axis(0), c), sx, sy);
                }
                let (ky, kx) = (k / 3, k % 3);
                for o in 0..c_out {
                    let mut acc = 0.0;
                    for (c, s) in samples.iter().enumerate() {
                        acc += kernel[[o, c, ky, kx]] * s;
                    }
                    out[[o, y, x]] += m * acc;
                }
            }
        }
    }
    Ok(out)
}

/// `C x C x 3 x 3` kernel passing channel `c` through the centre tap only.
pub fn center_delta_kernel(channels: usize) -> Array4<f64> {
    let mut k = Array4::zeros((channels, channels, 3, 3));
    for c in 0..channels {
        k[[c, c, 1, 1]] = 1.0;
    }
    k
}
