//! Synthetic videos with exact ground-truth flow, masks, and file I/O.
//!
//! A scene is a static textured background with sprites moving at constant
//! integer velocities. Layer `0` is the background and layer `s + 1` is sprite
//! `s`; later sprites are drawn on top. Sprites leaving the frame are clipped.
//! Rendered values are snapped to the 8-bit grid so a corpus written to disk
//! reads back bit-identically.

pub mod codec;
mod dir;
pub mod pnm;

use std::f64::consts::TAU;

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{downsample_flow, FlowField, FlowSet, FlowValidity};
use crate::tensor::{MaskSequence, VideoTensor};

pub use codec::{decode, downsample_mask, encode, upsample_mask, LATENT_FACTOR};
pub use dir::{load_corpus, load_flows, write_corpus, write_flows, CorpusFiles, CorpusManifest, LoadedCorpus, MANIFEST_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// One value per channel; a single value is broadcast.
    Solid { color: Vec<f64> },
    /// Sum of three random plane waves per channel, drawn from the scene seed.
    Waves {
        #[serde(default = "one")]
        scale: f64,
    },
    Checker { size: usize, low: f64, high: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub texture: Texture,
    pub width: usize,
    pub height: usize,
    /// Top-left corner at frame 0.
    pub x: f64,
    pub y: f64,
    /// Pixels per frame.
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum MaskStyle {
    /// Hole follows the union of the listed sprites (all when absent), grown by `dilate` pixels.
    Object {
        #[serde(default)]
        dilate: usize,
        #[serde(default)]
        sprites: Option<Vec<usize>>,
    },
    /// Static free-form block.
    Rectangle { x: usize, y: usize, width: usize, height: usize },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "three")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    pub background: Texture,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
    pub mask: MaskStyle,
}

fn three() -> usize {
    3
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.frames == 0 {
            return bad("scene needs at least one frame".into());
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(LATENT_FACTOR) || !self.width.is_multiple_of(LATENT_FACTOR) {
            return bad(format!(
                "scene size {}x{} must be a positive multiple of {LATENT_FACTOR}",
                self.height, self.width
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        let textures = std::iter::once(&self.background).chain(self.sprites.iter().map(|s| &s.texture));
        for tex in textures {
            match tex {
                Texture::Solid { color } if color.len() != 1 && color.len() != self.channels => {
                    return bad(format!("solid color has {} values for {} channels", color.len(), self.channels))
                }
                Texture::Waves { scale } if !scale.is_finite() => return bad("wave scale must be finite".into()),
                Texture::Checker { size: 0, .. } => return bad("checker size must be positive".into()),
                _ => {}
            }
        }
        for (i, sp) in self.sprites.iter().enumerate() {
            if sp.width == 0 || sp.height == 0 {
                return bad(format!("sprite {i} has zero size"));
            }
            for (name, v) in [("x", sp.x), ("y", sp.y), ("vx", sp.vx), ("vy", sp.vy)] {
                if !v.is_finite() || v.fract() != 0.0 || v.abs() > 1e9 {
                    return bad(format!("sprite {i}: {name} = {v} must be a finite integer"));
                }
            }
        }
        if let MaskStyle::Object { sprites: Some(list), .. } = &self.mask {
            if let Some(&i) = list.iter().find(|&&i| i >= self.sprites.len()) {
                return bad(format!("mask refers to sprite {i}, scene has {}", self.sprites.len()));
            }
        }
        Ok(())
    }

    fn position(&self, sprite: usize, frame: usize) -> (i64, i64) {
        let sp = &self.sprites[sprite];
        let k = frame as f64;
        ((sp.x + sp.vx * k) as i64, (sp.y + sp.vy * k) as i64)
    }

    fn velocity(&self, layer: usize) -> (f64, f64) {
        match layer {
            0 => (0.0, 0.0),
            l => (self.sprites[l - 1].vx, self.sprites[l - 1].vy),
        }
    }

    /// Topmost layer covering every pixel of `frame`.
    fn layers(&self, frame: usize) -> Array2<usize> {
        let mut ids = Array2::zeros((self.height, self.width));
        for (i, sp) in self.sprites.iter().enumerate() {
            let (px, py) = self.position(i, frame);
            let (x0, x1) = clip(px, sp.width, self.width);
            let (y0, y1) = clip(py, sp.height, self.height);
            if x0 < x1 && y0 < y1 {
                ids.slice_mut(s![y0..y1, x0..x1]).fill(i + 1);
            }
        }
        ids
    }
}

fn clip(start: i64, len: usize, limit: usize) -> (usize, usize) {
    let lo = start.clamp(0, limit as i64) as usize;
    let hi = (start + len as i64).clamp(0, limit as i64) as usize;
    (lo, hi)
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
}

enum Painter {
    Solid(Vec<f64>),
    Waves(Vec<Vec<Wave>>),
    Checker { size: usize, low: f64, high: f64 },
}

impl Painter {
    fn new(tex: &Texture, channels: usize, seed: u64, layer: usize) -> Self {
        match tex {
            Texture::Solid { color } => Painter::Solid((0..channels).map(|c| color[c % color.len()]).collect()),
            Texture::Checker { size, low, high } => Painter::Checker {
                size: *size,
                low: *low,
                high: *high,
            },
            Texture::Waves { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(layer as u64);
                let waves = (0..channels)
                    .map(|_| {
                        (0..3)
                            .map(|_| Wave {
                                fx: rng.random_range(-0.6..0.6) * scale,
                                fy: rng.random_range(-0.6..0.6) * scale,
                                phase: rng.random_range(0.0..TAU),
                            })
                            .collect()
                    })
                    .collect();
                Painter::Waves(waves)
            }
        }
    }

    /// Value at local coordinates; snapped to the 8-bit grid.
    fn paint(&self, c: usize, x: i64, y: i64) -> f64 {
        let v = match self {
            Painter::Solid(color) => color[c],
            Painter::Checker { size, low, high } => {
                let cell = x.div_euclid(*size as i64) + y.div_euclid(*size as i64);
                if cell.rem_euclid(2) == 0 {
                    *low
                } else {
                    *high
                }
            }
            Painter::Waves(waves) => {
                0.5 + waves[c]
                    .iter()
                    .map(|w| 0.15 * (w.fx * x as f64 + w.fy * y as f64 + w.phase).sin())
                    .sum::<f64>()
            }
        };
        pnm::dequantize(pnm::quantize(v))
    }
}

/// Ground truth and corrupted input for one synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    /// Clean frames `y`.
    pub frames: VideoTensor,
    /// `N x 1 x H x W`, `1` = hole.
    pub masks: MaskSequence,
    /// `y` with hole pixels zeroed.
    pub corrupted: VideoTensor,
    /// Exact flow at frame resolution.
    pub flows: FlowSet,
    /// [`flows`](Self::flows) average-pooled to latent resolution.
    pub latent_flows: FlowSet,
    /// Exact occlusion at frame resolution: `1` where the flow target shows the same layer.
    pub validity: FlowValidity,
}

impl CorpusSample {
    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Zeros every hole pixel.
pub fn corrupt(frames: &VideoTensor, masks: &MaskSequence) -> Result<VideoTensor> {
    crate::tensor::ensure_mask_matches("corrupt", frames.shape(), masks.shape())?;
    let mut out = frames.clone();
    for (mut frame, mask) in out.outer_iter_mut().zip(masks.outer_iter()) {
        let hole = mask.index_axis(Axis(0), 0);
        for mut ch in frame.outer_iter_mut() {
            ndarray::Zip::from(&mut ch).and(&hole).for_each(|v, &m| {
                if m != 0.0 {
                    *v = 0.0;
                }
            });
        }
    }
    Ok(out)
}

/// Renders `scene` deterministically.
pub fn generate(scene: &SyntheticScene) -> Result<CorpusSample> {
    scene.validate()?;
    let (n, c, h, w) = (scene.frames, scene.channels, scene.height, scene.width);
    let painters: Vec<Painter> = std::iter::once(&scene.background)
        .chain(scene.sprites.iter().map(|s| &s.texture))
        .enumerate()
        .map(|(layer, tex)| Painter::new(tex, c, scene.seed, layer))
        .collect();

    let layers: Vec<Array2<usize>> = (0..n).into_par_iter().map(|k| scene.layers(k)).collect();

    let rendered: Vec<Array3<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let ids = &layers[k];
            Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
                let layer = ids[[y, x]];
                let (ox, oy) = if layer == 0 { (0, 0) } else { scene.position(layer - 1, k) };
                painters[layer].paint(ch, x as i64 - ox, y as i64 - oy)
            })
        })
        .collect();
    let mut frames = Array4::zeros((n, c, h, w));
    for (mut dst, src) in frames.outer_iter_mut().zip(&rendered) {
        dst.assign(src);
    }

    let masks = render_masks(scene);
    let corrupted = corrupt(&frames, &masks)?;

    let pairs = n - 1;
    let flow_of = |ids: &Array2<usize>, sign: f64| {
        let u = ids.mapv(|l| sign * scene.velocity(l).0);
        let v = ids.mapv(|l| sign * scene.velocity(l).1);
        FlowField { u, v }
    };
    let forward: Vec<FlowField> = (0..pairs).map(|i| flow_of(&layers[i], 1.0)).collect();
    let backward: Vec<FlowField> = (0..pairs).map(|i| flow_of(&layers[i + 1], -1.0)).collect();
    let validity = FlowValidity {
        forward: (0..pairs).map(|i| exact_validity(&layers[i], &layers[i + 1], &forward[i])).collect(),
        backward: (0..pairs).map(|i| exact_validity(&layers[i + 1], &layers[i], &backward[i])).collect(),
    };
    let flows = FlowSet::new(forward, backward)?;
    let latent_flows = flows.map(|f| downsample_flow(f, LATENT_FACTOR))?;
    Ok(CorpusSample {
        frames,
        masks,
        corrupted,
        flows,
        latent_flows,
        validity,
    })
}

/// `1` where `p + flow(p)` lies inside the frame and shows the same layer.
fn exact_validity(from: &Array2<usize>, to: &Array2<usize>, flow: &FlowField) -> Array2<f64> {
    let (h, w) = from.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let tx = x as f64 + flow.u[[y, x]];
        let ty = y as f64 + flow.v[[y, x]];
        let inside = tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64;
        if inside && to[[ty as usize, tx as usize]] == from[[y, x]] {
            1.0
        } else {
            0.0
        }
    })
}

fn render_masks(scene: &SyntheticScene) -> MaskSequence {
    let (n, h, w) = (scene.frames, scene.height, scene.width);
    let mut masks = Array4::zeros((n, 1, h, w));
    match &scene.mask {
        MaskStyle::None => {}
        MaskStyle::Rectangle { x, y, width, height } => {
            let (x1, y1) = ((x + width).min(w), (y + height).min(h));
            if x < &x1 && y < &y1 {
                masks.slice_mut(s![.., 0, *y..y1, *x..x1]).fill(1.0);
            }
        }
        MaskStyle::Object { dilate, sprites } => {
            let chosen: Vec<usize> = match sprites {
                Some(list) => list.iter().map(|i| i + 1).collect(),
                None => (1..=scene.sprites.len()).collect(),
            };
            for k in 0..n {
                // occluded parts of a chosen sprite still belong to the object
                let mut hole = Array2::<f64>::zeros((h, w));
                for &l in &chosen {
                    let sp = &scene.sprites[l - 1];
                    let (px, py) = scene.position(l - 1, k);
                    let (x0, x1) = clip(px, sp.width, w);
                    let (y0, y1) = clip(py, sp.height, h);
                    if x0 < x1 && y0 < y1 {
                        hole.slice_mut(s![y0..y1, x0..x1]).fill(1.0);
                    }
                }
                masks.slice_mut(s![k, 0, .., ..]).assign(&dilate_square(&hole, *dilate));
            }
        }
    }
    masks
}

fn dilate_square(hole: &Array2<f64>, r: usize) -> Array2<f64> {
    if r == 0 {
        return hole.clone();
    }
    let (h, w) = hole.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let ys = y.saturating_sub(r)..(y + r + 1).min(h);
        let xs = x.saturating_sub(r)..(x + r + 1).min(w);
        if hole.slice(s![ys, xs]).iter().any(|&v| v != 0.0) {
            1.0
        } else {
            0.0
        }
    })
}
