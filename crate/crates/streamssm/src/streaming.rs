//! Online inference: one frame in, one prediction out, with a fixed-size
//! state carried across frames.
//!
//! Only the temporal blocks hold state — the spatial stage is frame-local by
//! construction — so per-frame cost and session memory are independent of how
//! many frames have been consumed. Folding [`session_step`] over a clip
//! reproduces [`crate::backbone::Backbone::forward_parallel`] on that clip.

use crate::backbone::{temporal_embedding, Backbone};
use crate::blocks::BlockStreamState;
use crate::error::{ModelError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct StreamSession<F> {
    states: Vec<BlockStreamState<F>>,
    frame_counter: u64,
    config_hash: u64,
}

/// Per-frame result of a streaming step.
#[derive(Clone, Debug)]
pub struct StepOutput<F> {
    /// Mean-pooled per-frame feature vector (pre-head), length C.
    pub features: Vec<F>,
    /// Head output, length head_out_dim.
    pub head: Vec<F>,
}

impl<F: Real> StreamSession<F> {
    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    /// Total number of floats held in the session state; constant in the
    /// number of frames consumed.
    pub fn state_float_count(&self) -> usize {
        self.states
            .iter()
            .map(|s| s.conv_tail.len() + s.scan.h.len())
            .sum()
    }
}

/// Fresh session: zero states, frame counter 0.
pub fn session_new<F: Real>(model: &Backbone<F>) -> StreamSession<F> {
    let bc = model.config.block_cfg();
    StreamSession {
        states: (0..model.config.n_temporal)
            .map(|_| BlockStreamState::zeros(&bc))
            .collect(),
        frame_counter: 0,
        config_hash: model.config.hash(),
    }
}

/// Consumes one frame (3, H, W): patchify + embed at the absolute frame
/// index, full spatial stage, then each temporal block advances its cached
/// state over the frame's P tokens. Mutates the session in place.
pub fn session_step<F: Real>(
    model: &Backbone<F>,
    session: &mut StreamSession<F>,
    frame: &Tensor<F>,
) -> Result<StepOutput<F>> {
    if session.config_hash != model.config.hash() {
        return Err(ModelError::ConfigMismatch(
            "session was created for a different model config".into(),
        ));
    }
    let c = model.config.channels;
    let p_count = model.config.patches();

    let mut tokens = model.patchify_frame(frame)?;
    let pt = temporal_embedding::<F>(session.frame_counter as usize, c);
    for p in 0..p_count {
        let ps = &model.pos_spatial.data()[p * c..(p + 1) * c];
        let row = &mut tokens.data_mut()[p * c..(p + 1) * c];
        for i in 0..c {
            row[i] += ps[i] + pt[i];
        }
    }
    for block in &model.spatial {
        tokens = block.forward(&tokens)?;
    }

    let mut out_rows = vec![F::zero(); p_count * c];
    for p in 0..p_count {
        let mut row = tokens.data()[p * c..(p + 1) * c].to_vec();
        for (block, state) in model.temporal.iter().zip(session.states.iter_mut()) {
            row = block.step(&row, state)?;
        }
        out_rows[p * c..(p + 1) * c].copy_from_slice(&row);
    }

    let inv_p = F::from_f64(1.0 / p_count as f64);
    let mut pooled = vec![F::zero(); c];
    for p in 0..p_count {
        for ch in 0..c {
            pooled[ch] += out_rows[p * c + ch];
        }
    }
    for v in pooled.iter_mut() {
        *v *= inv_p;
    }
    let head = model.head.forward(&pooled);
    session.frame_counter += 1;
    Ok(StepOutput {
        features: pooled,
        head,
    })
}

// --- session snapshot format -----------------------------------------------
//
// 16-byte header: b"SSMSESS\0" + u32 version + u32 float width,
// then u64 config hash, u64 frame counter, then raw little-endian floats in
// fixed block order (conv tail before scan state, block by block).

const SESSION_MAGIC: &[u8; 8] = b"SSMSESS\0";
const SESSION_VERSION: u32 = 1;

pub fn session_save<F: Real>(session: &StreamSession<F>) -> Vec<u8> {
    let width: u32 = if F::is_f32() { 4 } else { 8 };
    let mut out = Vec::new();
    out.extend_from_slice(SESSION_MAGIC);
    out.extend_from_slice(&SESSION_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&session.config_hash.to_le_bytes());
    out.extend_from_slice(&session.frame_counter.to_le_bytes());
    let mut push = |data: &[F]| {
        for &v in data {
            if F::is_f32() {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
    };
    for st in &session.states {
        push(st.conv_tail.data());
        push(st.scan.h.data());
    }
    out
}

pub fn session_load<F: Real>(bytes: &[u8], model: &Backbone<F>) -> Result<StreamSession<F>> {
    if bytes.len() < 32 || &bytes[..8] != SESSION_MAGIC {
        return Err(ModelError::Format("bad session magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SESSION_VERSION {
        return Err(ModelError::Format(format!("unsupported session version {version}")));
    }
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expect_width: u32 = if F::is_f32() { 4 } else { 8 };
    if width != expect_width {
        return Err(ModelError::ConfigMismatch(format!(
            "session float width {width}, model expects {expect_width}"
        )));
    }
    let config_hash = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if config_hash != model.config.hash() {
        return Err(ModelError::ConfigMismatch(
            "session snapshot belongs to a different model config".into(),
        ));
    }
    let frame_counter = u64::from_le_bytes(bytes[24..32].try_into().unwrap());

    let mut session = session_new(model);
    session.frame_counter = frame_counter;
    let mut at = 32usize;
    let w = expect_width as usize;
    let read_into = |data: &mut [F], at: &mut usize| -> Result<()> {
        let need = data.len() * w;
        if *at + need > bytes.len() {
            return Err(ModelError::Format("session snapshot truncated".into()));
        }
        for v in data.iter_mut() {
            let b = &bytes[*at..*at + w];
            *v = if F::is_f32() {
                F::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64)
            } else {
                F::from_f64(f64::from_le_bytes(b.try_into().unwrap()))
            };
            *at += w;
        }
        Ok(())
    };
    for st in session.states.iter_mut() {
        read_into(st.conv_tail.data_mut(), &mut at)?;
        read_into(st.scan.h.data_mut(), &mut at)?;
    }
    if at != bytes.len() {
        return Err(ModelError::Format("session snapshot has trailing bytes".into()));
    }
    Ok(session)
}
