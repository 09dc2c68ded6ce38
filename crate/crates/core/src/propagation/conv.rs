use ndarray::{Array1, Array3, Array4, ArrayView3};
use rand::Rng;

use crate::error::{Error, Result};

/// Square-kernel 2-D convolution with zero padding that keeps the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out x in x k x k`, `k` odd.
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn new(weight: Array4<f64>, bias: Array1<f64>) -> Result<Self> {
        let (o, _, kh, kw) = weight.dim();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv kernel must be odd and square, got {kh}x{kw}")));
        }
        if bias.len() != o {
            return Err(Error::shape("conv bias", &[o], bias.shape()));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("conv weights must be finite".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize, k: usize) -> Self {
        Self {
            weight: Array4::zeros((outputs, inputs, k, k)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn random<R: Rng>(inputs: usize, outputs: usize, k: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || rng.random_range(-scale..=scale);
        Self {
            weight: Array4::from_shape_simple_fn((outputs, inputs, k, k), &mut draw),
            bias: Array1::from_shape_simple_fn(outputs, &mut draw),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim().1
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&self, input: ArrayView3<f64>) -> Result<Array3<f64>> {
        let (ci, h, w) = input.dim();
        let (co, wi, k, _) = self.weight.dim();
        if ci != wi {
            return Err(Error::shape("conv input channels", &[wi], &[ci]));
        }
        let r = (k / 2) as i64;
        let mut out = Array3::zeros((co, h, w));
        for o in 0..co {
            let b = self.bias[o];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = b;
                    for c in 0..ci {
                        for ky in 0..k {
                            let sy = y as i64 + ky as i64 - r;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = x as i64 + kx as i64 - r;
                                if sx < 0 || sx >= w as i64 {
                                    continue;
                                }
                                acc += self.weight[[o, c, ky, kx]] * input[[c, sy as usize, sx as usize]];
                            }
                        }
                    }
                    out[[o, y, x]] = acc;
                }
            }
        }
        Ok(out)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}
