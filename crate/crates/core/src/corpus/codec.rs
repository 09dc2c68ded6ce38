//! Latent encoder/decoder stand-ins: 4x4 average pooling and 4x nearest upsampling.

use ndarray::{s, Array4};

use crate::error::{Error, Result};
use crate::tensor::{LatentSequence, MaskSequence, VideoTensor};

/// Spatial reduction between frames and latents.
pub const LATENT_FACTOR: usize = 4;

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(LATENT_FACTOR) || !w.is_multiple_of(LATENT_FACTOR) || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "frame size {h}x{w} is not a positive multiple of {LATENT_FACTOR}"
        )));
    }
    Ok(())
}

/// Per-channel 4x4 mean.
pub fn encode(frames: &VideoTensor) -> Result<LatentSequence> {
    let (n, c, h, w) = frames.dim();
    check_divisible(h, w)?;
    let f = LATENT_FACTOR;
    let area = (f * f) as f64;
    Ok(Array4::from_shape_fn((n, c, h / f, w / f), |(k, ch, y, x)| {
        frames.slice(s![k, ch, y * f..(y + 1) * f, x * f..(x + 1) * f]).sum() / area
    }))
}

/// Repeats every latent pixel over a 4x4 block, so `encode(decode(z)) == z`.
pub fn decode(latents: &LatentSequence) -> VideoTensor {
    let (n, c, h, w) = latents.dim();
    let f = LATENT_FACTOR;
    Array4::from_shape_fn((n, c, h * f, w * f), |(k, ch, y, x)| latents[[k, ch, y / f, x / f]])
}

/// A latent pixel is a hole if any pixel of its block is.
pub fn downsample_mask(mask: &MaskSequence) -> Result<MaskSequence> {
    let (n, c, h, w) = mask.dim();
    check_divisible(h, w)?;
    let f = LATENT_FACTOR;
    Ok(Array4::from_shape_fn((n, c, h / f, w / f), |(k, ch, y, x)| {
        let block = mask.slice(s![k, ch, y * f..(y + 1) * f, x * f..(x + 1) * f]);
        if block.iter().any(|&v| v != 0.0) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Nearest upsampling of a latent-resolution mask back to frame resolution.
pub fn upsample_mask(mask: &MaskSequence) -> MaskSequence {
    decode(mask)
}
