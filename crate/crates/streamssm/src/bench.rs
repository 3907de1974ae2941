//! Latency harness: per-frame streaming versus recomputing the whole clip at
//! every frame (causal, and a bidirectional-in-time variant that has no
//! streaming formulation at all).
//!
//! The point being measured: streaming cost per frame is flat in the history
//! length, recompute grows linearly with it.

use crate::backbone::{extract_frame, Backbone, BackboneConfig};
use crate::blocks::BiMambaBlockParams;
use crate::error::{ModelError, Result};
use crate::io::synthetic_clip;
use crate::real::Real;
use crate::streaming::{session_new, session_step};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

pub const MODE_STREAMING: &str = "streaming";
pub const MODE_RECOMPUTE_CAUSAL: &str = "recompute-causal";
pub const MODE_RECOMPUTE_BIDI: &str = "recompute-bidirectional";

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BenchConfig {
    pub backbone: BackboneConfig,
    /// Clip lengths to sweep.
    pub lengths: Vec<usize>,
    /// Untimed frames before measurement starts, per run.
    pub warmup: usize,
    /// Timed runs per (mode, length).
    pub repeats: usize,
    pub seed: u64,
    /// Skip the recompute baselines (they dominate wall time at long T).
    pub streaming_only: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut backbone = BackboneConfig::desk_default();
        backbone.channels = 192;
        backbone.head_hidden = 192;
        backbone.m_spatial = 4;
        backbone.n_temporal = 4;
        BenchConfig {
            backbone,
            lengths: vec![8, 32, 128],
            warmup: 16,
            repeats: 5,
            seed: 0,
            streaming_only: false,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct LatencySample {
    pub mode: String,
    /// Clip length for this run.
    pub t: usize,
    pub frame_index: usize,
    pub latency_us: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub t: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    /// 1e6 / mean_us: sustainable frames per second at this history length.
    pub fps: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchReport {
    pub samples: Vec<LatencySample>,
    pub summary: Vec<ModeSummary>,
    /// Median latency of timing an empty closure; any reported number near
    /// this floor is measuring the clock, not the model.
    pub clock_floor_us: f64,
}

impl BenchReport {
    pub fn summary_for(&self, mode: &str, t: usize) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode && s.t == t)
    }

    /// Mean over frames of the per-frame minimum across repeats. The minimum
    /// discards scheduler spikes, so this estimates the model's own cost on
    /// a noisy machine.
    pub fn robust_mean_us(&self, mode: &str, t: usize) -> Option<f64> {
        let mut mins: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for s in self.samples.iter().filter(|s| s.mode == mode && s.t == t) {
            let e = mins.entry(s.frame_index).or_insert(f64::INFINITY);
            *e = e.min(s.latency_us);
        }
        if mins.is_empty() {
            return None;
        }
        Some(mins.values().sum::<f64>() / mins.len() as f64)
    }
}

/// Median latency of a no-op measurement, in microseconds.
pub fn clock_floor_us() -> f64 {
    let mut samples: Vec<f64> = (0..64)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(());
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

fn summarize(samples: &[LatencySample], mode: &str, t: usize) -> ModeSummary {
    let mut lat: Vec<f64> = samples
        .iter()
        .filter(|s| s.mode == mode && s.t == t)
        .map(|s| s.latency_us)
        .collect();
    lat.sort_by(f64::total_cmp);
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    ModeSummary {
        mode: mode.to_string(),
        t,
        mean_us: mean,
        median_us: percentile(&lat, 0.5),
        p95_us: percentile(&lat, 0.95),
        fps: 1e6 / mean,
    }
}

/// Temporal-bidirectional variant of the backbone: same spatial stage, but
/// the causal temporal blocks are replaced with bidirectional blocks over the
/// whole token sequence. This is the architecture that cannot stream — every
/// frame depends on every other — so its only inference mode is recompute.
pub struct BidiBaseline<F> {
    base: Backbone<F>,
    temporal: Vec<BiMambaBlockParams<F>>,
}

impl<F: Real> BidiBaseline<F> {
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        let base = Backbone::init(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x62696469);
        let bc = config.block_cfg();
        let temporal = (0..config.n_temporal)
            .map(|_| BiMambaBlockParams::init(bc, &mut rng))
            .collect();
        Ok(BidiBaseline { base, temporal })
    }

    /// Full forward over a (B, 3, T, H, W) clip; returns (B, T, C) pooled
    /// features.
    pub fn forward(&self, video: &Tensor<F>) -> Result<Tensor<F>> {
        let mut grid = self.base.patchify(video)?;
        self.base.embed(&mut grid, 0)?;
        self.base.spatial_stage(&mut grid)?;
        let (batch, time, p_count, c) = (grid.batch, grid.time, grid.patches, grid.channels);
        let n = time * p_count;
        let inv_p = F::from_f64(1.0 / p_count as f64);
        let mut features = Tensor::zeros(&[batch, time, c]);
        for b in 0..batch {
            let mut seq = Tensor::zeros(&[n, c]);
            for t in 0..time {
                for p in 0..p_count {
                    seq.data_mut()[(t * p_count + p) * c..(t * p_count + p + 1) * c]
                        .copy_from_slice(grid.row(b, t, p));
                }
            }
            for block in &self.temporal {
                seq = block.forward(&seq)?;
            }
            for t in 0..time {
                let dst = &mut features.data_mut()[(b * time + t) * c..(b * time + t + 1) * c];
                for p in 0..p_count {
                    let row = &seq.data()[(t * p_count + p) * c..(t * p_count + p + 1) * c];
                    for i in 0..c {
                        dst[i] += row[i];
                    }
                }
                for v in dst.iter_mut() {
                    *v *= inv_p;
                }
            }
        }
        Ok(features)
    }
}

fn clip_prefix<F: Real>(video: &Tensor<F>, frames: usize) -> Tensor<F> {
    let s = video.shape();
    let (time, h, w) = (s[2], s[3], s[4]);
    let mut out = Tensor::zeros(&[1, 3, frames, h, w]);
    for ch in 0..3 {
        for t in 0..frames {
            let src = (ch * time + t) * h * w;
            let dst = (ch * frames + t) * h * w;
            out.data_mut()[dst..dst + h * w].copy_from_slice(&video.data()[src..src + h * w]);
        }
    }
    out
}

/// Per-frame streaming latency over a T-frame clip: one timed sample per
/// frame per repeat, fresh session each repeat.
pub fn bench_streaming<F: Real>(
    model: &Backbone<F>,
    video: &Tensor<F>,
    warmup: usize,
    repeats: usize,
) -> Result<Vec<LatencySample>> {
    let time = video.shape()[2];
    let frames: Vec<Tensor<F>> = (0..time).map(|t| extract_frame(video, 0, t)).collect();
    // warmup outside the timed region
    let mut session = session_new(model);
    for frame in frames.iter().take(warmup.min(time)) {
        session_step(model, &mut session, frame)?;
    }
    let mut samples = Vec::with_capacity(repeats * time);
    for _ in 0..repeats {
        let mut session = session_new(model);
        for (t, frame) in frames.iter().enumerate() {
            let start = Instant::now();
            let out = session_step(model, &mut session, frame)?;
            let us = start.elapsed().as_secs_f64() * 1e6;
            std::hint::black_box(&out);
            samples.push(LatencySample {
                mode: MODE_STREAMING.to_string(),
                t: time,
                frame_index: t,
                latency_us: us,
            });
        }
    }
    Ok(samples)
}

/// Recompute baseline: the latency of frame `t` is one full parallel forward
/// over frames `0..=t` — what a causal model without carried state pays.
pub fn bench_recompute_causal<F: Real>(
    model: &Backbone<F>,
    video: &Tensor<F>,
    repeats: usize,
) -> Result<Vec<LatencySample>> {
    let time = video.shape()[2];
    // warmup
    std::hint::black_box(model.forward_parallel(&clip_prefix(video, 1))?);
    let mut samples = Vec::new();
    for _ in 0..repeats {
        for t in 0..time {
            let prefix = clip_prefix(video, t + 1);
            let start = Instant::now();
            let out = model.forward_parallel(&prefix)?;
            let us = start.elapsed().as_secs_f64() * 1e6;
            std::hint::black_box(&out);
            samples.push(LatencySample {
                mode: MODE_RECOMPUTE_CAUSAL.to_string(),
                t: time,
                frame_index: t,
                latency_us: us,
            });
        }
    }
    Ok(samples)
}

/// Same recompute schedule for the bidirectional-in-time architecture.
pub fn bench_recompute_bidi<F: Real>(
    model: &BidiBaseline<F>,
    video: &Tensor<F>,
    repeats: usize,
) -> Result<Vec<LatencySample>> {
    let time = video.shape()[2];
    std::hint::black_box(model.forward(&clip_prefix(video, 1))?);
    let mut samples = Vec::new();
    for _ in 0..repeats {
        for t in 0..time {
            let prefix = clip_prefix(video, t + 1);
            let start = Instant::now();
            let out = model.forward(&prefix)?;
            let us = start.elapsed().as_secs_f64() * 1e6;
            std::hint::black_box(&out);
            samples.push(LatencySample {
                mode: MODE_RECOMPUTE_BIDI.to_string(),
                t: time,
                frame_index: t,
                latency_us: us,
            });
        }
    }
    Ok(samples)
}

/// Full sweep: every mode at every length, one synthetic clip per length.
pub fn run_bench<F: Real>(config: &BenchConfig) -> Result<BenchReport> {
    config.backbone.validate()?;
    if config.lengths.is_empty() || config.repeats == 0 {
        return Err(ModelError::InvalidConfig(
            "bench needs at least one length and one repeat".into(),
        ));
    }
    let model: Backbone<F> = Backbone::init(config.backbone, config.seed)?;
    let bidi: Option<BidiBaseline<F>> = if config.streaming_only {
        None
    } else {
        Some(BidiBaseline::init(config.backbone, config.seed)?)
    };
    let clips: Vec<Tensor<F>> = config
        .lengths
        .iter()
        .map(|&t| {
            if t == 0 {
                return Err(ModelError::InvalidConfig("clip length 0".into()));
            }
            Ok(synthetic_clip::<F>(t, config.backbone.frame_h, config.backbone.frame_w, config.seed))
        })
        .collect::<Result<_>>()?;
    // repeats outermost: every (mode, length) cell is revisited on every
    // pass, so slow machine-wide drift spreads evenly instead of biasing
    // whichever cell happened to run last
    let mut samples = Vec::new();
    for _ in 0..config.repeats {
        for clip in &clips {
            samples.extend(bench_streaming(&model, clip, config.warmup, 1)?);
            if let Some(bidi) = &bidi {
                samples.extend(bench_recompute_causal(&model, clip, 1)?);
                samples.extend(bench_recompute_bidi(bidi, clip, 1)?);
            }
        }
    }
    let mut summary = Vec::new();
    for &t in &config.lengths {
        summary.push(summarize(&samples, MODE_STREAMING, t));
        if !config.streaming_only {
            summary.push(summarize(&samples, MODE_RECOMPUTE_CAUSAL, t));
            summary.push(summarize(&samples, MODE_RECOMPUTE_BIDI, t));
        }
    }
    Ok(BenchReport {
        samples,
        summary,
        clock_floor_us: clock_floor_us(),
    })
}

pub fn write_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "mode,T,frame_index,latency_us")?;
    for s in &report.samples {
        writeln!(file, "{},{},{},{:.3}", s.mode, s.t, s.frame_index, s.latency_us)?;
    }
    Ok(())
}

pub fn write_json(path: &Path, report: &BenchReport) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, report)
        .map_err(|e| ModelError::Format(format!("json write: {e}")))?;
    Ok(())
}
