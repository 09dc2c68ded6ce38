use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::FlowField;
use crate::error::{Error, Result};

/// Parameters for coarse-to-fine integer block matching.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchParams {
    /// Search radius around the upsampled coarse estimate, per level.
    pub radius: i64,
    /// Half-size of the square matching window.
    pub half_window: i64,
    pub levels: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            radius: 2,
            half_window: 1,
            levels: 3,
        }
    }
}

fn pool2(frame: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = frame.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(k, y, x)| {
        0.25 * (frame[[k, 2 * y, 2 * x]]
            + frame[[k, 2 * y + 1, 2 * x]]
            + frame[[k, 2 * y, 2 * x + 1]]
            + frame[[k, 2 * y + 1, 2 * x + 1]])
    })
}

fn pool2_mask(mask: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        let any = mask[[2 * y, 2 * x]] + mask[[2 * y + 1, 2 * x]] + mask[[2 * y, 2 * x + 1]] + mask[[2 * y + 1, 2 * x + 1]];
        if any > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Estimates integer flow from `from` towards `to` (`from(p) ~ to(p + f(p))`).
///
/// Hole pixels in either frame are excluded from the matching cost. Pixels
/// whose window sees no usable pixel keep the coarse estimate; callers are
/// expected to complete the flow inside the hole afterwards.
pub fn estimate_flow(
    from: ArrayView3<f64>,
    to: ArrayView3<f64>,
    from_hole: ArrayView2<f64>,
    to_hole: ArrayView2<f64>,
    params: BlockMatchParams,
) -> Result<FlowField> {
    if from.dim() != to.dim() {
        return Err(Error::shape("estimate_flow", from.shape(), to.shape()));
    }
    let (_, h, w) = from.dim();
    if from_hole.dim() != (h, w) || to_hole.dim() != (h, w) {
        return Err(Error::shape("estimate_flow mask", &[h, w], from_hole.shape()));
    }
    let mut pyramid = vec![(from.to_owned(), to.to_owned(), from_hole.to_owned(), to_hole.to_owned())];
    while pyramid.len() < params.levels.max(1) {
        let (a, b, ma, mb) = pyramid.last().unwrap();
        let (_, lh, lw) = a.dim();
        if lh % 2 != 0 || lw % 2 != 0 || lh < 16 || lw < 16 {
            break;
        }
        pyramid.push((pool2(a.view()), pool2(b.view()), pool2_mask(ma.view()), pool2_mask(mb.view())));
    }

    let mut flow: Option<(Array2<i64>, Array2<i64>)> = None;
    for (a, b, ma, mb) in pyramid.iter().rev() {
        let (_, lh, lw) = a.dim();
        let prior = |y: usize, x: usize| match &flow {
            Some((u, v)) => {
                let (ph, pw) = u.dim();
                let (py, px) = ((y / 2).min(ph - 1), (x / 2).min(pw - 1));
                (2 * u[[py, px]], 2 * v[[py, px]])
            }
            None => (0, 0),
        };
        let mut u = Array2::zeros((lh, lw));
        let mut v = Array2::zeros((lh, lw));
        for y in 0..lh {
            for x in 0..lw {
                let (pu, pv) = prior(y, x);
                let mut best = (f64::INFINITY, pu, pv);
                // search around the coarse estimate and around zero motion
                for (cu0, cv0) in [(pu, pv), (0, 0)] {
                    for dv in -params.radius..=params.radius {
                        for du in -params.radius..=params.radius {
                            let (cu, cv) = (cu0 + du, cv0 + dv);
                            if let Some(cost) = window_cost(a.view(), b.view(), ma.view(), mb.view(), y, x, cu, cv, params.half_window) {
                                let better = cost < best.0
                                    || (cost == best.0 && cu.abs() + cv.abs() < best.1.abs() + best.2.abs());
                                if better {
                                    best = (cost, cu, cv);
                                }
                            }
                        }
                    }
                }
                u[[y, x]] = best.1;
                v[[y, x]] = best.2;
            }
        }
        flow = Some((u, v));
    }
    let (u, v) = flow.expect("pyramid has at least one level");
    FlowField::new(u.mapv(|x| x as f64), v.mapv(|x| x as f64))
}

#[allow(clippy::too_many_arguments)]
fn window_cost(
    a: ArrayView3<f64>,
    b: ArrayView3<f64>,
    ma: ArrayView2<f64>,
    mb: ArrayView2<f64>,
    y: usize,
    x: usize,
    du: i64,
    dv: i64,
    half: i64,
) -> Option<f64> {
    let (_, h, w) = a.dim();
    let (h, w) = (h as i64, w as i64);
    let mut sum = 0.0;
    let mut count = 0usize;
    for oy in -half..=half {
        for ox in -half..=half {
            let (qy, qx) = (y as i64 + oy, x as i64 + ox);
            let (ty, tx) = (qy + dv, qx + du);
            if qy < 0 || qx < 0 || qy >= h || qx >= w || ty < 0 || tx < 0 || ty >= h || tx >= w {
                continue;
            }
            let (qy, qx, ty, tx) = (qy as usize, qx as usize, ty as usize, tx as usize);
            if ma[[qy, qx]] != 0.0 || mb[[ty, tx]] != 0.0 {
                continue;
            }
            for (ca, cb) in a.axis_iter(Axis(0)).zip(b.axis_iter(Axis(0))) {
                sum += (ca[[qy, qx]] - cb[[ty, tx]]).abs();
            }
            count += 1;
        }
    }
    let side = (2 * half + 1) as usize;
    // windows mostly outside the frame or the known region match by accident
    (2 * count >= side * side).then(|| sum / count as f64)
}
