//! Corpus directory layout.
//!
//! ```text
//! manifest.json
//! frames/0000.ppm     clean frames (PGM when single-channel)
//! masks/0000.pgm      255 = hole
//! flow/fwd_0000.flo   frame i -> i+1
//! flow/bwd_0000.flo   frame i+1 -> i
//! valid/fwd_0000.pgm  exact occlusion for the flow of the same name
//! valid/bwd_0000.pgm
//! ```

use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use super::{corrupt, pnm, CorpusSample, SyntheticScene, LATENT_FACTOR};
use crate::error::{Error, Result};
use crate::flow::{read_flo, write_flo, FlowSet, FlowValidity};
use crate::io::write_json;
use crate::tensor::{MaskSequence, VideoTensor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFiles {
    pub frames: Vec<String>,
    pub masks: Vec<String>,
    pub forward_flow: Vec<String>,
    pub backward_flow: Vec<String>,
    pub forward_valid: Vec<String>,
    pub backward_valid: Vec<String>,
}

impl CorpusFiles {
    fn standard(n: usize, channels: usize) -> Self {
        let ext = if channels == 1 { "pgm" } else { "ppm" };
        let pairs = n.saturating_sub(1);
        Self {
            frames: (0..n).map(|i| format!("frames/{i:04}.{ext}")).collect(),
            masks: (0..n).map(|i| format!("masks/{i:04}.pgm")).collect(),
            forward_flow: (0..pairs).map(|i| format!("flow/{}", flow_name("fwd", i))).collect(),
            backward_flow: (0..pairs).map(|i| format!("flow/{}", flow_name("bwd", i))).collect(),
            forward_valid: (0..pairs).map(|i| format!("valid/fwd_{i:04}.pgm")).collect(),
            backward_valid: (0..pairs).map(|i| format!("valid/bwd_{i:04}.pgm")).collect(),
        }
    }
}

pub(crate) fn flow_name(dir: &str, pair: usize) -> String {
    format!("{dir}_{pair:04}.flo")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub latent_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SyntheticScene>,
    pub files: CorpusFiles,
}

/// Frames and masks read from a corpus directory; flows are loaded on demand.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub frames: VideoTensor,
    pub masks: MaskSequence,
    pub corrupted: VideoTensor,
}

impl LoadedCorpus {
    /// Ground-truth flows and occlusion stored next to the frames.
    pub fn sample(&self) -> Result<CorpusSample> {
        let flows = load_flows(&self.root.join("flow"), self.manifest.frames)?;
        let latent_flows = flows.map(|f| crate::flow::downsample_flow(f, LATENT_FACTOR))?;
        let files = &self.manifest.files;
        let read = |names: &[String]| {
            names
                .iter()
                .map(|p| pnm::read_mask(self.root.join(p)))
                .collect::<Result<Vec<_>>>()
        };
        Ok(CorpusSample {
            frames: self.frames.clone(),
            masks: self.masks.clone(),
            corrupted: self.corrupted.clone(),
            flows,
            latent_flows,
            validity: FlowValidity {
                forward: read(&files.forward_valid)?,
                backward: read(&files.backward_valid)?,
            },
        })
    }
}

/// Writes `sample` into the directory `root`, which must already exist.
pub fn write_corpus(root: &Path, scene: Option<&SyntheticScene>, sample: &CorpusSample) -> Result<CorpusManifest> {
    let (n, c, h, w) = sample.frames.dim();
    let files = CorpusFiles::standard(n, c);
    for (k, name) in files.frames.iter().enumerate() {
        pnm::write_frame(root.join(name), sample.frames.index_axis(Axis(0), k))?;
    }
    for (k, name) in files.masks.iter().enumerate() {
        pnm::write_mask(root.join(name), sample.masks.slice(ndarray::s![k, 0, .., ..]))?;
    }
    for i in 0..n.saturating_sub(1) {
        write_flo(root.join(&files.forward_flow[i]), &sample.flows.forward[i])?;
        write_flo(root.join(&files.backward_flow[i]), &sample.flows.backward[i])?;
        pnm::write_mask(root.join(&files.forward_valid[i]), sample.validity.forward[i].view())?;
        pnm::write_mask(root.join(&files.backward_valid[i]), sample.validity.backward[i].view())?;
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        frames: n,
        channels: c,
        height: h,
        width: w,
        latent_factor: LATENT_FACTOR,
        scene: scene.cloned(),
        files,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_corpus(root: &Path) -> Result<LoadedCorpus> {
    let manifest: CorpusManifest = serde_json::from_slice(&std::fs::read(root.join("manifest.json"))?)?;
    let (n, c, h, w) = (manifest.frames, manifest.channels, manifest.height, manifest.width);
    if manifest.files.frames.len() != n || manifest.files.masks.len() != n {
        return Err(Error::Config(format!("manifest lists {} frames and {} masks for N = {n}", manifest.files.frames.len(), manifest.files.masks.len())));
    }
    let mut frames = Array4::zeros((n, c, h, w));
    let mut masks = Array4::zeros((n, 1, h, w));
    for k in 0..n {
        let f = pnm::read_frame(root.join(&manifest.files.frames[k]))?;
        if f.dim() != (c, h, w) {
            return Err(Error::shape("corpus frame", &[c, h, w], f.shape()));
        }
        frames.index_axis_mut(Axis(0), k).assign(&f);
        let m = pnm::read_mask(root.join(&manifest.files.masks[k]))?;
        if m.dim() != (h, w) {
            return Err(Error::shape("corpus mask", &[h, w], m.shape()));
        }
        masks.slice_mut(ndarray::s![k, 0, .., ..]).assign(&m);
    }
    let corrupted = corrupt(&frames, &masks)?;
    Ok(LoadedCorpus {
        root: root.to_path_buf(),
        manifest,
        frames,
        masks,
        corrupted,
    })
}

/// Reads `fwd_XXXX.flo` / `bwd_XXXX.flo` for every consecutive pair of `frames`.
pub fn load_flows(dir: &Path, frames: usize) -> Result<FlowSet> {
    let pairs = frames.saturating_sub(1);
    let mut forward = Vec::with_capacity(pairs);
    let mut backward = Vec::with_capacity(pairs);
    for i in 0..pairs {
        for (kind, from, to, out) in [("fwd", i, i + 1, &mut forward), ("bwd", i + 1, i, &mut backward)] {
            let path = dir.join(flow_name(kind, i));
            if !path.is_file() {
                return Err(Error::MissingFlow { from, to, path });
            }
            out.push(read_flo(&path)?);
        }
    }
    FlowSet::new(forward, backward)
}

/// Writes a flow set using the corpus naming scheme.
pub fn write_flows(dir: &Path, flows: &FlowSet) -> Result<()> {
    for i in 0..flows.forward.len() {
        write_flo(dir.join(flow_name("fwd", i)), &flows.forward[i])?;
        write_flo(dir.join(flow_name("bwd", i)), &flows.backward[i])?;
    }
    Ok(())
}
