use ndarray::{Array2, ArrayView2, Zip};

use super::FlowField;
use crate::error::{Error, Result};

/// Stop once the largest Jacobi update falls below this.
pub const FILL_TOLERANCE: f64 = 1e-4;

/// Default iteration cap for an `h x w` grid.
pub fn default_fill_iterations(h: usize, w: usize) -> usize {
    10 * (h + w)
}

/// Harmonic fill of the `hole` pixels of `grid` by Jacobi relaxation.
///
/// Known pixels are a fixed Dirichlet boundary; the grid edge is a zero-flux
/// boundary. Hole pixels start at the mean of the known pixels bordering the
/// hole, so the input's hole values never influence the result.
pub fn laplace_fill(grid: ArrayView2<f64>, hole: ArrayView2<f64>, max_iters: usize) -> Result<Array2<f64>> {
    if grid.dim() != hole.dim() {
        return Err(Error::shape("laplace_fill", grid.shape(), hole.shape()));
    }
    let (h, w) = grid.dim();
    let holes: Vec<(usize, usize)> = hole
        .indexed_iter()
        .filter(|(_, &m)| m != 0.0)
        .map(|(p, _)| p)
        .collect();
    if holes.is_empty() {
        return Ok(grid.to_owned());
    }
    if holes.len() == h * w {
        return Err(Error::Degenerate("hole covers the whole grid; nothing to fill from".into()));
    }

    let neighbours = |y: usize, x: usize| {
        let mut n = [(0usize, 0usize); 4];
        let mut k = 0;
        if y > 0 {
            n[k] = (y - 1, x);
            k += 1;
        }
        if y + 1 < h {
            n[k] = (y + 1, x);
            k += 1;
        }
        if x > 0 {
            n[k] = (y, x - 1);
            k += 1;
        }
        if x + 1 < w {
            n[k] = (y, x + 1);
            k += 1;
        }
        (n, k)
    };

    let mut boundary_sum = 0.0;
    let mut boundary_count = 0usize;
    Zip::indexed(&hole).for_each(|(y, x), &m| {
        if m == 0.0 {
            let (n, k) = neighbours(y, x);
            if n[..k].iter().any(|&q| hole[q] != 0.0) {
                boundary_sum += grid[[y, x]];
                boundary_count += 1;
            }
        }
    });
    let init = boundary_sum / boundary_count as f64;

    let mut cur = grid.to_owned();
    for &p in &holes {
        cur[p] = init;
    }
    let mut next = cur.clone();
    for _ in 0..max_iters {
        let mut max_update = 0.0_f64;
        for &(y, x) in &holes {
            let (n, k) = neighbours(y, x);
            let mean = n[..k].iter().map(|&q| cur[q]).sum::<f64>() / k as f64;
            max_update = max_update.max((mean - cur[[y, x]]).abs());
            next[[y, x]] = mean;
        }
        std::mem::swap(&mut cur, &mut next);
        if max_update < FILL_TOLERANCE {
            break;
        }
    }
    Ok(cur)
}

/// Fills flow vectors inside `hole` from the surrounding known flow.
pub fn complete_flow(flow: &FlowField, hole: ArrayView2<f64>) -> Result<FlowField> {
    let (h, w) = flow.dim();
    let iters = default_fill_iterations(h, w);
    let u = laplace_fill(flow.u.view(), hole, iters)?;
    let v = laplace_fill(flow.v.view(), hole, iters)?;
    FlowField::new(u, v)
}
