use std::path::Path;

use ndarray::{Array4, Axis};

use super::{Command, ResolvedConfig, RunConfig};
use crate::corpus::{self, generate, load_corpus, load_flows, pnm, write_corpus, write_flows, SyntheticScene};
use crate::error::{Error, Result};
use crate::flow::{complete_flow, estimate_flow, BlockMatchParams, FlowSet};
use crate::io::{write_dir_atomic, write_json};
use crate::metrics::report_sample;
use crate::pipeline::{inpaint, InpaintInput, Mode};
use crate::propagation::PropagationWeights;
use crate::sampler::run_bench;
use crate::weights::WeightFile;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synth => synth(cfg),
        Command::Flow => flow(cfg),
        Command::Inpaint => inpaint_cmd(cfg),
        Command::Eval => eval(cfg),
        Command::Bench => bench(cfg),
    }
}

fn echo(dir: &Path, command: Command, cfg: &RunConfig) -> Result<()> {
    write_json(
        &dir.join(RESOLVED_CONFIG),
        &ResolvedConfig {
            command: command.name(),
            config: cfg,
        },
    )
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let scene_path = cfg.require(&cfg.scene, "scene")?;
    let out = cfg.require(&cfg.out, "out")?;
    let bytes = std::fs::read(scene_path)?;
    let mut scene: SyntheticScene =
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", scene_path.display())))?;
    if let Some(seed) = cfg.seed {
        scene.seed = seed;
    }
    if let Some(mask) = &cfg.mask {
        scene.mask = mask.clone();
    }
    let sample = generate(&scene)?;
    write_dir_atomic(out, |dir| {
        write_corpus(dir, Some(&scene), &sample)?;
        echo(dir, Command::Synth, cfg)
    })?;
    println!("wrote {} frames to {}", scene.frames, out.display());
    Ok(())
}

fn flow(cfg: &RunConfig) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let out = cfg.require(&cfg.out, "out")?;
    let c = load_corpus(input)?;
    let z = corpus::encode(&c.corrupted)?;
    let m = corpus::downsample_mask(&c.masks)?;
    let n = z.shape()[0];
    let frame = |k: usize| z.index_axis(Axis(0), k);
    let hole = |k: usize| m.index_axis(Axis(0), k).index_axis_move(Axis(0), 0);
    let pair = |from: usize, to: usize| {
        let f = estimate_flow(frame(from), frame(to), hole(from), hole(to), BlockMatchParams::default())?;
        complete_flow(&f, hole(from))
    };
    let forward = (0..n.saturating_sub(1)).map(|i| pair(i, i + 1)).collect::<Result<Vec<_>>>()?;
    let backward = (0..n.saturating_sub(1)).map(|i| pair(i + 1, i)).collect::<Result<Vec<_>>>()?;
    let flows = FlowSet::new(forward, backward)?;
    std::fs::create_dir_all(out)?;
    write_flows(out, &flows)?;
    echo(out, Command::Flow, cfg)?;
    println!("wrote {} flow pairs to {}", flows.forward.len(), out.display());
    Ok(())
}

fn inpaint_cmd(cfg: &RunConfig) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let out = cfg.require(&cfg.out, "out")?;
    let c = load_corpus(input)?;
    let (n, channels, _, _) = c.frames.dim();
    let flow_dir = cfg.flow_dir.clone().unwrap_or_else(|| input.join("flow"));
    let flows = match load_flows(&flow_dir, n) {
        Ok(f) => Some(f),
        Err(e @ Error::MissingFlow { .. }) if cfg.mode == Mode::Interp && n > 1 => return Err(e),
        Err(Error::MissingFlow { .. }) => None,
        Err(e) => return Err(e),
    };
    let weights = match &cfg.weights {
        Some(p) => PropagationWeights::from_weight_file(&WeightFile::read(p)?, channels)?,
        None => PropagationWeights::plain_warp(channels),
    };
    let pipeline = cfg.pipeline();
    let result = inpaint(
        &InpaintInput {
            corrupted: c.corrupted.clone(),
            masks: c.masks.clone(),
            flows,
            ground_truth: cfg.needs_ground_truth().then(|| c.frames.clone()),
        },
        &pipeline,
        &weights,
    )?;
    std::fs::create_dir_all(out)?;
    for (k, name) in c.manifest.files.frames.iter().enumerate() {
        pnm::write_frame(out.join(name), result.frames.index_axis(Axis(0), k))?;
    }
    write_json(&out.join("call_log.json"), &result.call_log)?;
    echo(out, Command::Inpaint, cfg)?;
    println!(
        "inpainted {n} frames ({} frame denoisings) into {}",
        result.call_log.total_frame_denoisings,
        out.display()
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let result_dir = cfg.require(&cfg.result, "result")?;
    let c = load_corpus(input)?;
    let sample = c.sample()?;
    let mut output = Array4::zeros(c.frames.dim());
    for (k, name) in c.manifest.files.frames.iter().enumerate() {
        let f = pnm::read_frame(result_dir.join(name))?;
        let expected = c.frames.index_axis(Axis(0), k);
        if f.dim() != expected.dim() {
            return Err(Error::shape("result frame", expected.shape(), f.shape()));
        }
        output.index_axis_mut(Axis(0), k).assign(&f);
    }
    let report = report_sample(&sample, &output)?;
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("metrics.json"), &report)?;
        echo(out, Command::Eval, cfg)?;
    }
    print_json(&report)
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let report = run_bench(&cfg.bench)?;
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("bench.json"), &report)?;
        echo(out, Command::Bench, cfg)?;
    }
    print_json(&report)
}
