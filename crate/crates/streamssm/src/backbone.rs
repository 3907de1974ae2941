//! Full model assembly: patchify -> embed -> M bidirectional spatial blocks
//! per frame -> n causal temporal blocks over the frame-major token sequence
//! -> per-frame pooling -> MLP head.
//!
//! The temporal stage consumes tokens frame-major (all P patches of frame 0,
//! then frame 1, ...). That ordering is what makes token-level causal
//! scanning equal frame-level causality, and the test suite pins it.

use crate::blocks::{BiMambaBlockParams, BlockConfig, MambaBlockParams, MlpHeadParams};
use crate::error::{ModelError, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read as _, Write as _};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub patch_k: usize,
    /// embed dim C
    pub channels: usize,
    pub expand: usize,
    pub state_dim: usize,
    pub conv_k: usize,
    pub dt_rank: usize,
    /// M spatial bidirectional blocks
    pub m_spatial: usize,
    /// n temporal causal blocks
    pub n_temporal: usize,
    pub head_hidden: usize,
    pub head_out_dim: usize,
    /// Hint only; the temporal embedding is generated on the fly, so any
    /// number of frames is accepted at inference time.
    pub max_frames: usize,
}

impl BackboneConfig {
    /// Desk-scale defaults: every test runs in seconds. Full-size dims
    /// remain a config choice.
    pub fn desk_default() -> Self {
        BackboneConfig {
            frame_h: 32,
            frame_w: 32,
            patch_k: 8,
            channels: 64,
            expand: 2,
            state_dim: 16,
            conv_k: 4,
            dt_rank: 4,
            m_spatial: 2,
            n_temporal: 2,
            head_hidden: 64,
            head_out_dim: 8,
            max_frames: 8,
        }
    }

    /// Tiny configuration for gradient checks and toy training.
    pub fn tiny() -> Self {
        BackboneConfig {
            frame_h: 8,
            frame_w: 8,
            patch_k: 4,
            channels: 8,
            expand: 2,
            state_dim: 2,
            conv_k: 2,
            dt_rank: 2,
            m_spatial: 1,
            n_temporal: 1,
            head_hidden: 8,
            head_out_dim: 4,
            max_frames: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_h % self.patch_k != 0 || self.frame_w % self.patch_k != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "frame {}x{} not divisible by patch_k {}",
                self.frame_h, self.frame_w, self.patch_k
            )));
        }
        if self.m_spatial < 1 || self.n_temporal < 1 {
            return Err(ModelError::InvalidConfig(
                "m_spatial and n_temporal must be >= 1".into(),
            ));
        }
        if self.conv_k < 2 {
            return Err(ModelError::InvalidConfig("conv_k must be >= 2".into()));
        }
        Ok(())
    }

    /// Patches per frame, P.
    pub fn patches(&self) -> usize {
        (self.frame_h / self.patch_k) * (self.frame_w / self.patch_k)
    }

    /// Pixel dimension of one patch, 3*k*k.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_k * self.patch_k
    }

    pub fn block_cfg(&self) -> BlockConfig {
        BlockConfig {
            channel: self.channels,
            inner: self.expand * self.channels,
            state_dim: self.state_dim,
            conv_k: self.conv_k,
            dt_rank: self.dt_rank,
        }
    }

    /// Deterministic FNV-1a hash of the serialized config; used to detect
    /// session/model skew.
    pub fn hash(&self) -> u64 {
        let s = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Embedded video tokens with explicit (batch, time, patch, channel) shape
/// bookkeeping. The flat layout is row-major in exactly that order, so a
/// (T*P, C) view per batch element is already frame-major.
#[derive(Clone, Debug)]
pub struct TokenGrid<F> {
    pub data: Tensor<F>,
    pub batch: usize,
    pub time: usize,
    pub patches: usize,
    pub channels: usize,
}

impl<F: Real> TokenGrid<F> {
    pub fn zeros(batch: usize, time: usize, patches: usize, channels: usize) -> Self {
        TokenGrid {
            data: Tensor::zeros(&[batch, time, patches, channels]),
            batch,
            time,
            patches,
            channels,
        }
    }

    pub fn row(&self, b: usize, t: usize, p: usize) -> &[F] {
        let c = self.channels;
        let i = ((b * self.time + t) * self.patches + p) * c;
        &self.data.data()[i..i + c]
    }

    pub fn row_mut(&mut self, b: usize, t: usize, p: usize) -> &mut [F] {
        let c = self.channels;
        let i = ((b * self.time + t) * self.patches + p) * c;
        &mut self.data.data_mut()[i..i + c]
    }
}

/// Token ordering fed to the temporal stage. `FrameMajor` is the contract;
/// `PatchMajor` exists only to demonstrate that violating the contract breaks
/// causality (used by the verification fault injector).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenOrder {
    FrameMajor,
    PatchMajor,
}

#[derive(Clone, Debug)]
pub struct Backbone<F> {
    pub config: BackboneConfig,
    /// (C, 3*k*k)
    pub patch_proj: Tensor<F>,
    /// (C)
    pub patch_bias: Tensor<F>,
    /// learnable spatial position embedding, (P, C)
    pub pos_spatial: Tensor<F>,
    pub spatial: Vec<BiMambaBlockParams<F>>,
    pub temporal: Vec<MambaBlockParams<F>>,
    pub head: MlpHeadParams<F>,
}

/// Per-frame features and head outputs from a parallel forward pass.
#[derive(Clone, Debug)]
pub struct BackboneOutput<F> {
    /// Post-temporal tokens, (B, T*P, C) frame-major.
    pub tokens: Tensor<F>,
    /// Mean-pooled per-frame features (pre-head), (B, T, C).
    pub features: Tensor<F>,
    /// Head outputs, (B, T, head_out_dim).
    pub head: Tensor<F>,
}

/// Sinusoidal temporal embedding for frame index `t`, generated on the fly so
/// any sequence length is accepted.
pub fn temporal_embedding<F: Real>(t: usize, channels: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(channels);
    for i in 0..channels {
        let pair = (i / 2) as f64;
        let freq = (10000.0f64).powf(-2.0 * pair / channels as f64);
        let angle = t as f64 * freq;
        out.push(F::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
    }
    out
}

impl<F: Real> Backbone<F> {
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bc = config.block_cfg();
        let d = config.patch_dim();
        let c = config.channels;
        let p = config.patches();
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut gauss = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::from_f64(normal.sample(&mut rng))).collect()
        };
        let patch_proj = Tensor::from_vec(&[c, d], gauss(c * d));
        let patch_bias = Tensor::zeros(&[c]);
        let pos_spatial = Tensor::from_vec(&[p, c], gauss(p * c));
        let spatial = (0..config.m_spatial)
            .map(|_| BiMambaBlockParams::init(bc, &mut rng))
            .collect();
        let temporal = (0..config.n_temporal)
            .map(|_| MambaBlockParams::init(bc, &mut rng))
            .collect();
        let head = MlpHeadParams::init(c, config.head_hidden, config.head_out_dim, &mut rng);
        Ok(Backbone {
            config,
            patch_proj,
            patch_bias,
            pos_spatial,
            spatial,
            temporal,
            head,
        })
    }

    /// Extracts the pixel vector of patch `p` of frame `(b, t)` from a
    /// (B, 3, T, H, W) video, channel-major within the patch.
    pub fn patch_pixels(video: &Tensor<F>, config: &BackboneConfig, b: usize, t: usize, p: usize) -> Vec<F> {
        let (h, w, k) = (config.frame_h, config.frame_w, config.patch_k);
        let shape = video.shape();
        let (time, _hh, ww) = (shape[2], shape[3], shape[4]);
        let wpat = w / k;
        let (py, px) = (p / wpat, p % wpat);
        let mut out = Vec::with_capacity(config.patch_dim());
        for ch in 0..3 {
            for dy in 0..k {
                for dx in 0..k {
                    let y = py * k + dy;
                    let x = px * k + dx;
                    let idx = (((b * 3 + ch) * time + t) * h + y) * ww + x;
                    out.push(video.data()[idx]);
                }
            }
        }
        out
    }

    fn check_video(&self, video: &Tensor<F>) -> Result<(usize, usize)> {
        let s = video.shape();
        let c = &self.config;
        if s.len() != 5 || s[1] != 3 || s[3] != c.frame_h || s[4] != c.frame_w {
            return Err(ModelError::shape(
                "video",
                &[0, 3, 0, c.frame_h, c.frame_w],
                s,
            ));
        }
        if !video.all_finite() {
            return Err(ModelError::NonFinite("video".into()));
        }
        Ok((s[0], s[2]))
    }

    /// Non-overlapping patches, linearly projected to C channels.
    pub fn patchify(&self, video: &Tensor<F>) -> Result<TokenGrid<F>> {
        let (batch, time) = self.check_video(video)?;
        let c = &self.config;
        let p_count = c.patches();
        let d = c.patch_dim();
        let mut grid = TokenGrid::zeros(batch, time, p_count, c.channels);
        for b in 0..batch {
            for t in 0..time {
                for p in 0..p_count {
                    let pix = Self::patch_pixels(video, c, b, t, p);
                    let row = grid.row_mut(b, t, p);
                    crate::blocks::matvec(self.patch_proj.data(), c.channels, d, &pix, row);
                    for (rv, &bias) in row.iter_mut().zip(self.patch_bias.data()) {
                        *rv += bias;
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Projects one frame to (P, C) token rows; used by streaming.
    pub fn patchify_frame(&self, frame: &Tensor<F>) -> Result<Tensor<F>> {
        let c = &self.config;
        if frame.shape() != [3, c.frame_h, c.frame_w] {
            return Err(ModelError::shape(
                "frame",
                &[3, c.frame_h, c.frame_w],
                frame.shape(),
            ));
        }
        // reuse patchify through a (1,3,1,H,W) view
        let video = Tensor::from_vec(
            &[1, 3, 1, c.frame_h, c.frame_w],
            frame.data().to_vec(),
        );
        let grid = self.patchify(&video)?;
        Ok(Tensor::from_vec(
            &[c.patches(), c.channels],
            grid.data.data().to_vec(),
        ))
    }

    /// Adds the learnable spatial embedding and the generated sinusoidal
    /// temporal embedding. `t_offset` shifts the frame index (streaming uses
    /// the absolute frame counter).
    pub fn embed(&self, grid: &mut TokenGrid<F>, t_offset: usize) -> Result<()> {
        let c = self.config.channels;
        if self.pos_spatial.shape() != [grid.patches, c] {
            return Err(ModelError::shape(
                "pos_spatial",
                &[grid.patches, c],
                self.pos_spatial.shape(),
            ));
        }
        for t in 0..grid.time {
            let pt = temporal_embedding::<F>(t + t_offset, c);
            for b in 0..grid.batch {
                for p in 0..grid.patches {
                    let ps = &self.pos_spatial.data()[p * c..(p + 1) * c];
                    let row = grid.row_mut(b, t, p);
                    for i in 0..c {
                        row[i] += ps[i] + pt[i];
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs the M bidirectional blocks on each frame independently.
    pub fn spatial_stage(&self, grid: &mut TokenGrid<F>) -> Result<()> {
        let (p_count, c) = (grid.patches, grid.channels);
        for b in 0..grid.batch {
            for t in 0..grid.time {
                let mut frame = Tensor::zeros(&[p_count, c]);
                for p in 0..p_count {
                    frame.data_mut()[p * c..(p + 1) * c].copy_from_slice(grid.row(b, t, p));
                }
                for block in &self.spatial {
                    frame = block.forward(&frame)?;
                }
                for p in 0..p_count {
                    grid.row_mut(b, t, p).copy_from_slice(&frame.data()[p * c..(p + 1) * c]);
                }
            }
        }
        Ok(())
    }

    /// Runs the n causal blocks over the (T*P, C) token sequence of each
    /// batch element, in the given token order.
    pub fn temporal_stage(&self, grid: &TokenGrid<F>, order: TokenOrder) -> Result<Tensor<F>> {
        let (time, p_count, c) = (grid.time, grid.patches, grid.channels);
        let n = time * p_count;
        let mut out = Tensor::zeros(&[grid.batch, n, c]);
        for b in 0..grid.batch {
            let mut seq = Tensor::zeros(&[n, c]);
            for i in 0..n {
                let (t, p) = match order {
                    TokenOrder::FrameMajor => (i / p_count, i % p_count),
                    TokenOrder::PatchMajor => (i % time, i / time),
                };
                seq.data_mut()[i * c..(i + 1) * c].copy_from_slice(grid.row(b, t, p));
            }
            for block in &self.temporal {
                seq = block.forward(&seq)?;
            }
            for i in 0..n {
                let (t, p) = match order {
                    TokenOrder::FrameMajor => (i / p_count, i % p_count),
                    TokenOrder::PatchMajor => (i % time, i / time),
                };
                let j = t * p_count + p;
                out.data_mut()[(b * n + j) * c..(b * n + j + 1) * c]
                    .copy_from_slice(&seq.data()[i * c..(i + 1) * c]);
            }
        }
        Ok(out)
    }

    /// Mean-pools each frame's tokens and applies the head.
    pub fn pool_and_head(&self, tokens: &Tensor<F>, batch: usize, time: usize) -> (Tensor<F>, Tensor<F>) {
        let c = self.config.channels;
        let p_count = self.config.patches();
        let out_dim = self.config.head_out_dim;
        let inv_p = F::from_f64(1.0 / p_count as f64);
        let mut features = Tensor::zeros(&[batch, time, c]);
        let mut head_out = Tensor::zeros(&[batch, time, out_dim]);
        let n = time * p_count;
        for b in 0..batch {
            for t in 0..time {
                let mut pooled = vec![F::zero(); c];
                for p in 0..p_count {
                    let i = (b * n + t * p_count + p) * c;
                    for ch in 0..c {
                        pooled[ch] += tokens.data()[i + ch];
                    }
                }
                for v in pooled.iter_mut() {
                    *v *= inv_p;
                }
                let y = self.head.forward(&pooled);
                features.data_mut()[(b * time + t) * c..(b * time + t + 1) * c]
                    .copy_from_slice(&pooled);
                head_out.data_mut()[(b * time + t) * out_dim..(b * time + t + 1) * out_dim]
                    .copy_from_slice(&y);
            }
        }
        (features, head_out)
    }

    pub fn forward_parallel(&self, video: &Tensor<F>) -> Result<BackboneOutput<F>> {
        self.forward_with_options(video, None, TokenOrder::FrameMajor, 0)
    }

    /// Full forward with optional encoder-side masking (sorted masked token
    /// indices + the learned mask embedding), an explicit temporal token
    /// order, and a frame-index offset for the temporal embedding.
    pub fn forward_with_options(
        &self,
        video: &Tensor<F>,
        mask: Option<(&[usize], &Tensor<F>)>,
        order: TokenOrder,
        t_offset: usize,
    ) -> Result<BackboneOutput<F>> {
        let (batch, time) = self.check_video(video)?;
        let mut grid = self.patchify(video)?;
        if let Some((masked, token)) = mask {
            let c = self.config.channels;
            if token.shape() != [c] {
                return Err(ModelError::shape("mask token", &[c], token.shape()));
            }
            let p_count = grid.patches;
            for b in 0..batch {
                for &idx in masked {
                    let (t, p) = (idx / p_count, idx % p_count);
                    grid.row_mut(b, t, p).copy_from_slice(token.data());
                }
            }
        }
        self.embed(&mut grid, t_offset)?;
        self.spatial_stage(&mut grid)?;
        let tokens = self.temporal_stage(&grid, order)?;
        let (features, head) = self.pool_and_head(&tokens, batch, time);
        Ok(BackboneOutput {
            tokens,
            features,
            head,
        })
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f("patch_proj".into(), &self.patch_proj);
        f("patch_bias".into(), &self.patch_bias);
        f("pos_spatial".into(), &self.pos_spatial);
        for (i, b) in self.spatial.iter().enumerate() {
            b.visit(&format!("spatial.{i}"), f);
        }
        for (i, b) in self.temporal.iter().enumerate() {
            b.visit(&format!("temporal.{i}"), f);
        }
        self.head.visit("head", f);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> Backbone<G> {
        Backbone {
            config: self.config,
            patch_proj: f(&self.patch_proj),
            patch_bias: f(&self.patch_bias),
            pos_spatial: f(&self.pos_spatial),
            spatial: self.spatial.iter().map(|b| b.map(f)).collect(),
            temporal: self.temporal.iter().map(|b| b.map(f)).collect(),
            head: self.head.map(f),
        }
    }

    pub fn param_count(config: &BackboneConfig) -> usize {
        let bc = config.block_cfg();
        config.channels * config.patch_dim()
            + config.channels
            + config.patches() * config.channels
            + config.m_spatial * BiMambaBlockParams::<F>::param_count(&bc)
            + config.n_temporal * MambaBlockParams::<F>::param_count(&bc)
            + MlpHeadParams::<F>::param_count(config.channels, config.head_hidden, config.head_out_dim)
    }
}

/// Copies frame `(b, t)` of a (B, 3, T, H, W) video into a (3, H, W) tensor.
pub fn extract_frame<F: Real>(video: &Tensor<F>, b: usize, t: usize) -> Tensor<F> {
    let s = video.shape();
    let (time, h, w) = (s[2], s[3], s[4]);
    let mut frame = Tensor::zeros(&[3, h, w]);
    for ch in 0..3 {
        let src = ((b * 3 + ch) * time + t) * h * w;
        frame.data_mut()[ch * h * w..(ch + 1) * h * w]
            .copy_from_slice(&video.data()[src..src + h * w]);
    }
    frame
}

/// Reassembles per-token pixel vectors (B, T, P, 3*k*k) into a video tensor.
pub fn depatchify<F: Real>(pix: &Tensor<F>, config: &BackboneConfig) -> Result<Tensor<F>> {
    let s = pix.shape();
    let d = config.patch_dim();
    if s.len() != 4 || s[2] != config.patches() || s[3] != d {
        return Err(ModelError::shape("depatchify", &[0, 0, config.patches(), d], s));
    }
    let (batch, time) = (s[0], s[1]);
    let (h, w, k) = (config.frame_h, config.frame_w, config.patch_k);
    let wpat = w / k;
    let mut video = Tensor::zeros(&[batch, 3, time, h, w]);
    for b in 0..batch {
        for t in 0..time {
            for p in 0..config.patches() {
                let (py, px) = (p / wpat, p % wpat);
                let base = ((b * time + t) * config.patches() + p) * d;
                let mut i = base;
                for ch in 0..3 {
                    for dy in 0..k {
                        for dx in 0..k {
                            let y = py * k + dy;
                            let x = px * k + dx;
                            let idx = (((b * 3 + ch) * time + t) * h + y) * w + x;
                            video.data_mut()[idx] = pix.data()[i];
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(video)
}

// --- checkpoint format -----------------------------------------------------
//
// file = b"SSMCKPT\0" + u64 LE manifest length + manifest JSON (UTF-8)
//      + raw blob of little-endian floats in manifest order.

const CKPT_MAGIC: &[u8; 8] = b"SSMCKPT\0";

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointManifest {
    version: u32,
    dtype: String,
    config: BackboneConfig,
    params: Vec<ParamEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob.
    offset: u64,
}

fn write_floats<F: Real>(out: &mut Vec<u8>, data: &[F]) {
    if F::is_f32() {
        for &v in data {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    } else {
        for &v in data {
            out.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
}

fn read_floats<F: Real>(blob: &[u8], offset: usize, count: usize) -> Result<Vec<F>> {
    let width = if F::is_f32() { 4 } else { 8 };
    let end = offset + count * width;
    if end > blob.len() {
        return Err(ModelError::Format("checkpoint blob truncated".into()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = offset + i * width;
        let v = if F::is_f32() {
            f32::from_le_bytes(blob[at..at + 4].try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(blob[at..at + 8].try_into().unwrap())
        };
        out.push(F::from_f64(v));
    }
    Ok(out)
}

impl<F: Real> Backbone<F> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let width = if F::is_f32() { 4u64 } else { 8u64 };
        let mut params = Vec::new();
        let mut blob = Vec::new();
        self.visit(&mut |name, t| {
            params.push(ParamEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            write_floats(&mut blob, t.data());
        });
        debug_assert!(params
            .windows(2)
            .all(|w| w[1].offset - w[0].offset == width * w[0].shape.iter().product::<usize>() as u64));
        let manifest = CheckpointManifest {
            version: 1,
            dtype: if F::is_f32() { "f32".into() } else { "f64".into() },
            config: self.config,
            params,
        };
        let manifest_json = serde_json::to_vec(&manifest)
            .map_err(|e| ModelError::Format(format!("manifest encode: {e}")))?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(CKPT_MAGIC)?;
        file.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
        file.write_all(&manifest_json)?;
        file.write_all(&blob)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Backbone<F>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != CKPT_MAGIC {
            return Err(ModelError::Format("bad checkpoint magic".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + mlen {
            return Err(ModelError::Format("checkpoint manifest truncated".into()));
        }
        let manifest: CheckpointManifest = serde_json::from_slice(&bytes[16..16 + mlen])
            .map_err(|e| ModelError::Format(format!("manifest decode: {e}")))?;
        let expect_dtype = if F::is_f32() { "f32" } else { "f64" };
        if manifest.dtype != expect_dtype {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint dtype {} but model is {expect_dtype}",
                manifest.dtype
            )));
        }
        let blob = &bytes[16 + mlen..];

        // Rebuild a skeleton and replace every tensor in visit order.
        let skeleton = Backbone::<F>::init(manifest.config, 0)?;
        let mut entry_iter = manifest.params.iter();
        let mut err: Option<ModelError> = None;
        let model = skeleton.map(&mut |t: &Tensor<F>| {
            if err.is_some() {
                return Tensor::zeros(t.shape());
            }
            match entry_iter.next() {
                Some(entry) if entry.shape == t.shape() => {
                    match read_floats::<F>(blob, entry.offset as usize, t.len()) {
                        Ok(data) => Tensor::from_vec(t.shape(), data),
                        Err(e) => {
                            err = Some(e);
                            Tensor::zeros(t.shape())
                        }
                    }
                }
                Some(entry) => {
                    err = Some(ModelError::shape(&entry.name, t.shape(), &entry.shape));
                    Tensor::zeros(t.shape())
                }
                None => {
                    err = Some(ModelError::Format("checkpoint missing parameters".into()));
                    Tensor::zeros(t.shape())
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn random_video(
        rng: &mut ChaCha8Rng,
        batch: usize,
        time: usize,
        h: usize,
        w: usize,
    ) -> Tensor<f64> {
        Tensor::from_vec(
            &[batch, 3, time, h, w],
            (0..batch * 3 * time * h * w)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn patch_count_arithmetic() {
        let mut c = BackboneConfig::desk_default();
        c.frame_h = 32;
        c.frame_w = 32;
        c.patch_k = 16;
        assert_eq!(c.patches(), 4);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let mut c = BackboneConfig::desk_default();
        c.patch_k = 7;
        assert!(matches!(c.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn constant_video_gives_equal_tokens() {
        let mut c = BackboneConfig::tiny();
        c.frame_h = 8;
        c.frame_w = 8;
        c.patch_k = 4;
        let model = Backbone::<f64>::init(c, 3).unwrap();
        let video = Tensor::filled(&[1, 3, 2, 8, 8], 0.5);
        let grid = model.patchify(&video).unwrap();
        let first = grid.row(0, 0, 0).to_vec();
        for t in 0..2 {
            for p in 0..c.patches() {
                assert_eq!(grid.row(0, t, p), &first[..]);
            }
        }
    }

    #[test]
    fn patchify_depatchify_roundtrip_with_orthonormal_projection() {
        // channels == patch_dim, W orthonormal, zero bias: W^T W = I
        let mut c = BackboneConfig::tiny();
        c.patch_k = 2;
        c.channels = 12; // 3*2*2
        c.head_hidden = 4;
        let mut model = Backbone::<f64>::init(c, 4).unwrap();
        let d = c.patch_dim();
        // Gram-Schmidt a random matrix into an orthonormal one
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for r in &rows {
                let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    v[i] -= dot * r[i];
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                rows.push(v);
            }
        }
        model.patch_proj = Tensor::from_vec(&[d, d], rows.concat());
        model.patch_bias = Tensor::zeros(&[d]);

        let video = random_video(&mut rng, 1, 2, 8, 8);
        let grid = model.patchify(&video).unwrap();
        // apply W^T to each token, then reassemble
        let p_count = c.patches();
        let mut pix = Tensor::zeros(&[1, 2, p_count, d]);
        for t in 0..2 {
            for p in 0..p_count {
                let tok = grid.row(0, t, p);
                let out = &mut pix.data_mut()[((t * p_count) + p) * d..((t * p_count) + p + 1) * d];
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += model.patch_proj.data()[j * d + i] * tok[j];
                    }
                    out[i] = acc;
                }
            }
        }
        let rebuilt = depatchify(&pix, &c).unwrap();
        assert!(video.max_abs_diff(&rebuilt) < 1e-6);
    }

    #[test]
    fn embed_zero_tokens_yields_temporal_rows() {
        let c = BackboneConfig::tiny();
        let mut model = Backbone::<f64>::init(c, 5).unwrap();
        model.pos_spatial = Tensor::zeros(&[c.patches(), c.channels]);
        let mut grid = TokenGrid::zeros(1, 3, c.patches(), c.channels);
        model.embed(&mut grid, 0).unwrap();
        for t in 0..3 {
            let pt = temporal_embedding::<f64>(t, c.channels);
            for p in 0..c.patches() {
                assert_eq!(grid.row(0, t, p), &pt[..]);
            }
        }
    }

    #[test]
    fn temporal_embedding_at_zero() {
        let pt = temporal_embedding::<f64>(0, 8);
        for i in 0..8 {
            if i % 2 == 0 {
                assert_eq!(pt[i], 0.0, "even index {i} should be sin(0)");
            } else {
                assert_eq!(pt[i], 1.0, "odd index {i} should be cos(0)");
            }
        }
    }

    #[test]
    fn flexible_length_prefix_consistency() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let long = random_video(&mut rng, 1, 12, 8, 8);
        let short = Tensor::from_vec(
            &[1, 3, 4, 8, 8],
            {
                // copy first 4 frames per channel
                let mut v = Vec::new();
                for ch in 0..3 {
                    for t in 0..4 {
                        let base = (ch * 12 + t) * 64;
                        v.extend_from_slice(&long.data()[base..base + 64]);
                    }
                }
                v
            },
        );
        let out_long = model.forward_parallel(&long).unwrap();
        let out_short = model.forward_parallel(&short).unwrap();
        let od = c.head_out_dim;
        for t in 0..4 {
            for i in 0..od {
                let a = out_long.head.data()[t * od + i];
                let b = out_short.head.data()[t * od + i];
                assert!((a - b).abs() < 1e-12, "frame {t}");
            }
        }
    }

    #[test]
    fn end_to_end_causality_under_perturbation() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let video = random_video(&mut rng, 1, 6, 8, 8);
        let out = model.forward_parallel(&video).unwrap();
        let mut noisy = video.clone();
        // replace frames > 2 with noise
        for ch in 0..3 {
            for t in 3..6 {
                let base = (ch * 6 + t) * 64;
                for i in 0..64 {
                    noisy.data_mut()[base + i] = rng.gen_range(0.0..1.0);
                }
            }
        }
        let out_n = model.forward_parallel(&noisy).unwrap();
        let od = c.head_out_dim;
        for t in 0..3 {
            for i in 0..od {
                assert_eq!(
                    out.head.data()[t * od + i],
                    out_n.head.data()[t * od + i],
                    "frame {t} must ignore later frames"
                );
            }
        }
    }

    #[test]
    fn patch_major_order_breaks_causality() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let video = random_video(&mut rng, 1, 4, 8, 8);
        let out = model
            .forward_with_options(&video, None, TokenOrder::PatchMajor, 0)
            .unwrap();
        let mut noisy = video.clone();
        for ch in 0..3 {
            let base = (ch * 4 + 3) * 64;
            for i in 0..64 {
                noisy.data_mut()[base + i] = rng.gen_range(0.0..1.0);
            }
        }
        let out_n = model
            .forward_with_options(&noisy, None, TokenOrder::PatchMajor, 0)
            .unwrap();
        let od = c.head_out_dim;
        let diff: f64 = (0..od)
            .map(|i| (out.head.data()[i] - out_n.head.data()[i]).abs())
            .sum();
        assert!(diff > 1e-12, "patch-major order should leak future frames");
    }

    #[test]
    fn batch_independence_bitwise() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v1 = random_video(&mut rng, 1, 3, 8, 8);
        let v2 = random_video(&mut rng, 1, 3, 8, 8);
        let mut both = Vec::new();
        both.extend_from_slice(v1.data());
        both.extend_from_slice(v2.data());
        let vb = Tensor::from_vec(&[2, 3, 3, 8, 8], both);
        let o1 = model.forward_parallel(&v1).unwrap();
        let o2 = model.forward_parallel(&v2).unwrap();
        let ob = model.forward_parallel(&vb).unwrap();
        let half = o1.head.len();
        assert_eq!(&ob.head.data()[..half], o1.head.data());
        assert_eq!(&ob.head.data()[half..], o2.head.data());
    }

    #[test]
    fn spatial_stage_is_frame_order_invariant() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let video = random_video(&mut rng, 1, 4, 8, 8);
        let mut grid = model.patchify(&video).unwrap();
        model.embed(&mut grid, 0).unwrap();

        let mut shuffled = grid.clone();
        let perm = [2usize, 0, 3, 1];
        let c_ch = c.channels;
        for (dst, &src) in perm.iter().enumerate() {
            for p in 0..c.patches() {
                let row = grid.row(0, src, p).to_vec();
                shuffled.row_mut(0, dst, p)[..c_ch].copy_from_slice(&row);
            }
        }
        model.spatial_stage(&mut grid).unwrap();
        model.spatial_stage(&mut shuffled).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for p in 0..c.patches() {
                assert_eq!(shuffled.row(0, dst, p), grid.row(0, src, p));
            }
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f64>::init(c, 10).unwrap();
        let mut total = 0usize;
        model.visit(&mut |_, t| total += t.len());
        assert_eq!(total, Backbone::<f64>::param_count(&c));
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let c = BackboneConfig::tiny();
        let model = Backbone::<f32>::init(c, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let loaded = Backbone::<f32>::load_checkpoint(&path).unwrap();
        let mut orig = Vec::new();
        model.visit(&mut |_, t| orig.push(t.clone()));
        let mut re = Vec::new();
        loaded.visit(&mut |_, t| re.push(t.clone()));
        assert_eq!(orig.len(), re.len());
        for (a, b) in orig.iter().zip(&re) {
            assert_eq!(a.data(), b.data());
        }
        // dtype mismatch is an explicit error
        assert!(matches!(
            Backbone::<f64>::load_checkpoint(&path),
            Err(ModelError::ConfigMismatch(_))
        ));
    }
}
