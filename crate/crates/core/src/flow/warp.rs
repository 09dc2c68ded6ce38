use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::FlowField;
use crate::error::{Error, Result};

/// Bilinear sample of `grid` at continuous `(x, y)`, clamping the coordinate to the grid.
#[inline]
pub fn bilinear_sample(grid: ArrayView2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = (1.0 - fx) * grid[[y0, x0]] + fx * grid[[y0, x1]];
    let bottom = (1.0 - fx) * grid[[y1, x0]] + fx * grid[[y1, x1]];
    (1.0 - fy) * top + fy * bottom
}

/// Backward warp of one channel: `out(p) = src(p + flow(p))`.
pub fn warp_grid(src: ArrayView2<f64>, flow: &FlowField) -> Result<Array2<f64>> {
    if src.dim() != flow.dim() {
        let (h, w) = flow.dim();
        return Err(Error::shape("warp", &[h, w], src.shape()));
    }
    Ok(Array2::from_shape_fn(src.dim(), |(y, x)| {
        bilinear_sample(
            src,
            x as f64 + flow.u[[y, x]],
            y as f64 + flow.v[[y, x]],
        )
    }))
}

/// Backward warp of a `C x H x W` frame.
pub fn warp(src: ArrayView3<f64>, flow: &FlowField) -> Result<Array3<f64>> {
    let (c, h, w) = src.dim();
    if (h, w) != flow.dim() {
        let (fh, fw) = flow.dim();
        return Err(Error::shape("warp", &[c, fh, fw], src.shape()));
    }
    let mut out = Array3::zeros((c, h, w));
    for (mut o, s) in out.axis_iter_mut(Axis(0)).zip(src.axis_iter(Axis(0))) {
        o.assign(&warp_grid(s, flow)?);
    }
    Ok(out)
}
