//! Spatiotemporal token layout and a single-head attention block.

use ndarray::{s, Array2, Array3, Array4, Array5, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::propagation::Conv2d;
use crate::tensor::LatentSequence;
use crate::weights::WeightFile;

/// `[b, t, n, hw, d] -> [b, n, t*hw, d]`: folds time into the token axis.
pub fn rearrange_tokens(z: &Array5<f64>) -> Array4<f64> {
    let (b, t, n, hw, d) = z.dim();
    z.view()
        .permuted_axes([0, 2, 1, 3, 4])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, n, t * hw, d))
        .expect("standard layout")
}

/// Inverse of [`rearrange_tokens`] for a known frame count `t`.
pub fn unrearrange_tokens(z: &Array4<f64>, t: usize) -> Result<Array5<f64>> {
    let (b, n, len, d) = z.dim();
    if t == 0 || len % t != 0 {
        return Err(Error::InvalidArgument(format!("token length {len} does not factor by t = {t}")));
    }
    let hw = len / t;
    Ok(z.view()
        .into_shape_with_order((b, n, t, hw, d))
        .expect("length factors")
        .permuted_axes([0, 2, 1, 3, 4])
        .as_standard_layout()
        .into_owned())
}

/// `[b, t, n, hw] -> [b, n, t*hw]`.
pub fn rearrange_st(z: &Array4<f64>) -> Array3<f64> {
    let z5 = z.view().insert_axis(Axis(4)).to_owned();
    rearrange_tokens(&z5).remove_axis(Axis(3))
}

/// `[b, n, t*hw] -> [b, t, n, hw]`.
pub fn rearrange_st_inverse(z: &Array3<f64>, t: usize) -> Result<Array4<f64>> {
    let z4 = z.view().insert_axis(Axis(3)).to_owned();
    Ok(unrearrange_tokens(&z4, t)?.remove_axis(Axis(4)))
}

/// Square `d x d` projections, applied as `x W` on row-vector tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

impl AttentionWeights {
    pub fn identity(d: usize) -> Self {
        Self {
            query: Array2::eye(d),
            key: Array2::eye(d),
            value: Array2::eye(d),
        }
    }

    pub fn seeded(d: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Conv2d::random(d, d, 1, scale, &mut rng).weight.into_shape_with_order((d, d)).expect("1x1 kernel");
        Self {
            query: draw(),
            key: draw(),
            value: draw(),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    fn validate(&self, d: usize) -> Result<()> {
        for (name, w) in [("attention query", &self.query), ("attention key", &self.key), ("attention value", &self.value)] {
            if w.dim() != (d, d) {
                return Err(Error::shape(name, &[d, d], w.shape()));
            }
        }
        Ok(())
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut wf = WeightFile::default();
        wf.push("attn.q", self.query.clone().into_dyn());
        wf.push("attn.k", self.key.clone().into_dyn());
        wf.push("attn.v", self.value.clone().into_dyn());
        wf
    }

    pub fn from_weight_file(wf: &WeightFile) -> Result<Self> {
        let get = |name: &str| -> Result<Array2<f64>> {
            let t = wf.get(name)?;
            if t.shape.len() != 2 || t.shape[0] != t.shape[1] {
                return Err(Error::InvalidArgument(format!("`{name}` must be square, found {:?}", t.shape)));
            }
            Ok(t.to_array().into_dimensionality().expect("rank checked"))
        };
        let w = Self {
            query: get("attn.q")?,
            key: get("attn.k")?,
            value: get("attn.v")?,
        };
        w.validate(w.dim())?;
        Ok(w)
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Attention probabilities `softmax(Q K^T / sqrt(d))`, shape `[b, n, L, L]`.
pub fn attention_probs(tokens: &Array4<f64>, weights: &AttentionWeights) -> Result<Array4<f64>> {
    let (b, n, l, d) = tokens.dim();
    weights.validate(d)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array4::zeros((b, n, l, l));
    for bi in 0..b {
        for ni in 0..n {
            let x = tokens.slice(s![bi, ni, .., ..]);
            let q = x.dot(&weights.query);
            let k = x.dot(&weights.key);
            let mut logits = q.dot(&k.t()) * scale;
            softmax_rows(&mut logits);
            out.slice_mut(s![bi, ni, .., ..]).assign(&logits);
        }
    }
    Ok(out)
}

/// Single-head scaled dot-product attention over `[b, n, L, d]` tokens.
pub fn attention_block(tokens: &Array4<f64>, weights: &AttentionWeights) -> Result<Array4<f64>> {
    let probs = attention_probs(tokens, weights)?;
    let (b, n, l, d) = tokens.dim();
    let mut out = Array4::zeros((b, n, l, d));
    for bi in 0..b {
        for ni in 0..n {
            let v = tokens.slice(s![bi, ni, .., ..]).dot(&weights.value);
            let p = probs.slice(s![bi, ni, .., ..]);
            out.slice_mut(s![bi, ni, .., ..]).assign(&p.dot(&v));
        }
    }
    Ok(out)
}

/// Attention across all frames of each spatial window of a latent sequence.
///
/// The `N x C x H x W` sequence is cut into `window x window` patches; each
/// patch's pixels from every frame form one token set (time folded into the
/// token axis), features are the `C` channels.
pub fn spatiotemporal_attention(z: &LatentSequence, window: usize, weights: &AttentionWeights) -> Result<LatentSequence> {
    let (t, c, h, w) = z.dim();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::InvalidArgument(format!("window {window} does not tile {h}x{w}")));
    }
    let (py, px) = (h / window, w / window);
    let hw = window * window;
    let tokens5 = Array5::from_shape_fn((1, t, py * px, hw, c), |(_, f, patch, k, ch)| {
        let (gy, gx) = (patch / px, patch % px);
        let (ly, lx) = (k / window, k % window);
        z[[f, ch, gy * window + ly, gx * window + lx]]
    });
    let mixed = attention_block(&rearrange_tokens(&tokens5), weights)?;
    let back = unrearrange_tokens(&mixed, t)?;
    Ok(Array4::from_shape_fn((t, c, h, w), |(f, ch, y, x)| {
        let patch = (y / window) * px + x / window;
        let k = (y % window) * window + x % window;
        back[[0, f, patch, k, ch]]
    }))
}
