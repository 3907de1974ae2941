//! Hierarchical pretraining objective: masked-pixel reconstruction plus
//! teacher feature alignment by cosine loss, combined as
//! `l_total = l_rec + alpha * l_align`.
//!
//! Masked tokens are replaced by a learned mask embedding before the
//! backbone, so the encoder sees a full-length sequence and pretraining
//! shapes match streaming shapes. Gradients are exact, via the scalar tape in
//! [`crate::autodiff`].

use crate::autodiff::{gradients, Var};
use crate::backbone::{Backbone, BackboneConfig, TokenOrder};
use crate::blocks::{matvec, BiMambaBlockParams};
use crate::error::{ModelError, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Masked / unmasked token index sets over the N = T*P flattened tokens.
#[derive(Clone, Debug)]
pub struct MaskPlan {
    omega: Vec<usize>,
    omega_bar: Vec<usize>,
    mask_ratio: f64,
}

impl MaskPlan {
    /// Sorted masked token indices.
    pub fn omega(&self) -> &[usize] {
        &self.omega
    }
    /// Sorted unmasked token indices.
    pub fn omega_bar(&self) -> &[usize] {
        &self.omega_bar
    }
    pub fn mask_ratio(&self) -> f64 {
        self.mask_ratio
    }
}

fn split_indices(
    token_count: usize,
    masked: Vec<usize>,
    mask_ratio: f64,
) -> Result<MaskPlan> {
    if masked.is_empty() {
        return Err(ModelError::DegenerateMask {
            ratio: mask_ratio,
            side: "masked",
            token_count,
        });
    }
    if masked.len() >= token_count {
        return Err(ModelError::DegenerateMask {
            ratio: mask_ratio,
            side: "unmasked",
            token_count,
        });
    }
    let mut omega = masked;
    omega.sort_unstable();
    let mut in_omega = vec![false; token_count];
    for &i in &omega {
        in_omega[i] = true;
    }
    let omega_bar = (0..token_count).filter(|&i| !in_omega[i]).collect();
    Ok(MaskPlan {
        omega,
        omega_bar,
        mask_ratio,
    })
}

/// Uniform random subset without replacement; |omega| = round(ratio * count).
pub fn make_mask(token_count: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) || mask_ratio == 0.0 {
        return Err(ModelError::InvalidConfig(format!(
            "mask_ratio must be in (0, 1), got {mask_ratio}"
        )));
    }
    let n_masked = (mask_ratio * token_count as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..token_count).collect();
    indices.shuffle(&mut rng);
    split_indices(token_count, indices[..n_masked].to_vec(), mask_ratio)
}

/// Tube variant: the same spatial patch locations masked across all frames.
pub fn make_tube_mask(time: usize, patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) || mask_ratio == 0.0 {
        return Err(ModelError::InvalidConfig(format!(
            "mask_ratio must be in (0, 1), got {mask_ratio}"
        )));
    }
    let n_sp = (mask_ratio * patches as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spatial: Vec<usize> = (0..patches).collect();
    spatial.shuffle(&mut rng);
    let masked: Vec<usize> = spatial[..n_sp.min(patches)]
        .iter()
        .flat_map(|&p| (0..time).map(move |t| t * patches + p))
        .collect();
    split_indices(time * patches, masked, mask_ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainConfig {
    pub backbone: BackboneConfig,
    pub decoder_hidden: usize,
    pub teacher_dim: usize,
    pub mask_ratio: f64,
    pub tube: bool,
    pub alpha: f64,
}

impl PretrainConfig {
    pub fn tiny() -> Self {
        PretrainConfig {
            backbone: BackboneConfig::tiny(),
            decoder_hidden: 16,
            teacher_dim: 8,
            mask_ratio: 0.75,
            tube: false,
            alpha: 0.25,
        }
    }
}

/// Student model: backbone plus the pretraining-only parameters (mask token,
/// pixel decoder, alignment head).
#[derive(Clone, Debug)]
pub struct PretrainModel<F> {
    pub config: PretrainConfig,
    pub backbone: Backbone<F>,
    /// Learned embedding substituted for masked tokens, (C).
    pub mask_token: Tensor<F>,
    /// Two-layer pixel decoder: C -> hidden -> 3*k*k.
    pub dec_w1: Tensor<F>,
    pub dec_b1: Tensor<F>,
    pub dec_w2: Tensor<F>,
    pub dec_b2: Tensor<F>,
    /// Alignment head: C -> teacher_dim.
    pub align_w: Tensor<F>,
    pub align_b: Tensor<F>,
}

impl<F: Real> PretrainModel<F> {
    pub fn init(config: PretrainConfig, seed: u64) -> Result<Self> {
        let backbone = Backbone::init(config.backbone, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726574);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut gauss = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::from_f64(normal.sample(&mut rng))).collect()
        };
        let c = config.backbone.channels;
        let d = config.backbone.patch_dim();
        let (dh, td) = (config.decoder_hidden, config.teacher_dim);
        Ok(PretrainModel {
            config,
            backbone,
            mask_token: Tensor::from_vec(&[c], gauss(c)),
            dec_w1: Tensor::from_vec(&[dh, c], gauss(dh * c)),
            dec_b1: Tensor::zeros(&[dh]),
            dec_w2: Tensor::from_vec(&[d, dh], gauss(d * dh)),
            dec_b2: Tensor::zeros(&[d]),
            align_w: Tensor::from_vec(&[td, c], gauss(td * c)),
            align_b: Tensor::zeros(&[td]),
        })
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        self.backbone.visit(f);
        f("mask_token".into(), &self.mask_token);
        f("dec_w1".into(), &self.dec_w1);
        f("dec_b1".into(), &self.dec_b1);
        f("dec_w2".into(), &self.dec_w2);
        f("dec_b2".into(), &self.dec_b2);
        f("align_w".into(), &self.align_w);
        f("align_b".into(), &self.align_b);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> PretrainModel<G> {
        PretrainModel {
            config: self.config,
            backbone: self.backbone.map(f),
            mask_token: f(&self.mask_token),
            dec_w1: f(&self.dec_w1),
            dec_b1: f(&self.dec_b1),
            dec_w2: f(&self.dec_w2),
            dec_b2: f(&self.dec_b2),
            align_w: f(&self.align_w),
            align_b: f(&self.align_b),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.extend(t.data().iter().map(|v| v.to_f64())));
        out
    }

    /// (name, length) of every parameter tensor, in flat order.
    pub fn param_names(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t.len())));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_names().iter().map(|(_, n)| n).sum()
    }

    /// Rebuilds a model of another scalar type from a flat slice in
    /// `flat_params` order.
    pub fn from_slice<G: Real>(&self, vals: &[G]) -> PretrainModel<G> {
        let mut cursor = 0usize;
        let model = self.map(&mut |t: &Tensor<F>| {
            let n = t.len();
            let out = Tensor::from_vec(t.shape(), vals[cursor..cursor + n].to_vec());
            cursor += n;
            out
        });
        assert_eq!(cursor, vals.len(), "flat parameter length mismatch");
        model
    }

    pub fn load_flat(&mut self, vals: &[f64]) {
        *self = self.from_slice(&vals.iter().map(|&v| F::from_f64(v)).collect::<Vec<F>>());
    }

    fn decode_token(&self, token: &[F]) -> Vec<F> {
        let (dh, c) = (self.dec_w1.shape()[0], self.dec_w1.shape()[1]);
        let d = self.dec_w2.shape()[0];
        let mut hidden = vec![F::zero(); dh];
        matvec(self.dec_w1.data(), dh, c, token, &mut hidden);
        for (h, &b) in hidden.iter_mut().zip(self.dec_b1.data()) {
            *h = (*h + b).tanh();
        }
        let mut out = vec![F::zero(); d];
        matvec(self.dec_w2.data(), d, dh, &hidden, &mut out);
        for (o, &b) in out.iter_mut().zip(self.dec_b2.data()) {
            *o += b;
        }
        out
    }

    fn align_token(&self, token: &[F]) -> Vec<F> {
        let (td, c) = (self.align_w.shape()[0], self.align_w.shape()[1]);
        let mut out = vec![F::zero(); td];
        matvec(self.align_w.data(), td, c, token, &mut out);
        for (o, &b) in out.iter_mut().zip(self.align_b.data()) {
            *o += b;
        }
        out
    }

    /// Runs the student on the masked clip. Returns reconstructed pixels at
    /// masked tokens, (B, |omega|, 3k^2), and alignment-head features at
    /// unmasked tokens, (B, |omega_bar|, teacher_dim).
    pub fn student_forward(&self, video: &Tensor<F>, plan: &MaskPlan) -> Result<(Tensor<F>, Tensor<F>)> {
        let out = self.backbone.forward_with_options(
            video,
            Some((plan.omega(), &self.mask_token)),
            TokenOrder::FrameMajor,
            0,
        )?;
        let s = out.tokens.shape();
        let (batch, n, c) = (s[0], s[1], s[2]);
        let expected_n = video.shape()[2] * self.config.backbone.patches();
        if n != expected_n {
            return Err(ModelError::shape("student tokens", &[batch, expected_n, c], s));
        }
        let d = self.config.backbone.patch_dim();
        let td = self.config.teacher_dim;
        let mut x_hat = Tensor::zeros(&[batch, plan.omega().len(), d]);
        let mut x_f = Tensor::zeros(&[batch, plan.omega_bar().len(), td]);
        for b in 0..batch {
            for (j, &idx) in plan.omega().iter().enumerate() {
                let token = &out.tokens.data()[(b * n + idx) * c..(b * n + idx + 1) * c];
                let pix = self.decode_token(token);
                x_hat.data_mut()[(b * plan.omega().len() + j) * d..(b * plan.omega().len() + j + 1) * d]
                    .copy_from_slice(&pix);
            }
            for (j, &idx) in plan.omega_bar().iter().enumerate() {
                let token = &out.tokens.data()[(b * n + idx) * c..(b * n + idx + 1) * c];
                let feat = self.align_token(token);
                x_f.data_mut()
                    [(b * plan.omega_bar().len() + j) * td..(b * plan.omega_bar().len() + j + 1) * td]
                    .copy_from_slice(&feat);
            }
        }
        Ok((x_hat, x_f))
    }
}

/// Everything produced by one loss evaluation.
#[derive(Clone, Debug)]
pub struct PretrainOutput<F> {
    /// Reconstructed pixels at masked tokens, (B, |omega|, 3k^2).
    pub x_hat: Tensor<F>,
    /// Student features at unmasked tokens, (B, |omega_bar|, teacher_dim).
    pub x_f: Tensor<F>,
    pub l_rec: F,
    pub l_align: F,
    pub l_total: F,
    pub alpha: F,
    /// How many zero-norm feature vectors were treated as cos = 0.
    pub zero_cos_count: usize,
}

/// Mean squared reconstruction error over masked tokens only; per-token mean
/// square over the 3k^2 pixel dims, then mean over (batch, omega).
pub fn loss_rec<F: Real>(
    video: &Tensor<F>,
    x_hat: &Tensor<F>,
    plan: &MaskPlan,
    config: &BackboneConfig,
) -> Result<F> {
    let d = config.patch_dim();
    let batch = video.shape()[0];
    if x_hat.shape() != [batch, plan.omega().len(), d] {
        return Err(ModelError::shape(
            "x_hat",
            &[batch, plan.omega().len(), d],
            x_hat.shape(),
        ));
    }
    let p_count = config.patches();
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut total = F::zero();
    for b in 0..batch {
        for (j, &idx) in plan.omega().iter().enumerate() {
            let (t, p) = (idx / p_count, idx % p_count);
            let gt = Backbone::patch_pixels(video, config, b, t, p);
            let pred = &x_hat.data()[(b * plan.omega().len() + j) * d..(b * plan.omega().len() + j + 1) * d];
            let mut tok = F::zero();
            for i in 0..d {
                let e = pred[i] - gt[i];
                tok += e * e;
            }
            total += tok * inv_d;
        }
    }
    Ok(total * F::from_f64(1.0 / (batch * plan.omega().len()) as f64))
}

/// `1 - mean cos(x_f, x_t)` over unmasked tokens; zero-norm vectors count as
/// cos = 0 and are tallied. Range [0, 2].
pub fn loss_align<F: Real>(
    x_f: &Tensor<F>,
    x_t: &Tensor<F>,
    plan: &MaskPlan,
) -> Result<(F, usize)> {
    let s = x_f.shape();
    let (batch, m, td) = (s[0], s[1], s[2]);
    if m != plan.omega_bar().len() {
        return Err(ModelError::shape("x_f", &[batch, plan.omega_bar().len(), td], s));
    }
    let n_total = x_t.shape()[1];
    if x_t.shape()[0] != batch || x_t.shape()[2] != td {
        return Err(ModelError::shape("x_t", &[batch, n_total, td], x_t.shape()));
    }
    let mut zero_count = 0usize;
    let mut acc = F::zero();
    for b in 0..batch {
        for (j, &idx) in plan.omega_bar().iter().enumerate() {
            let f = &x_f.data()[(b * m + j) * td..(b * m + j + 1) * td];
            let t = &x_t.data()[(b * n_total + idx) * td..(b * n_total + idx + 1) * td];
            let mut dot = F::zero();
            let mut nf = F::zero();
            let mut nt = F::zero();
            for i in 0..td {
                dot += f[i] * t[i];
                nf += f[i] * f[i];
                nt += t[i] * t[i];
            }
            if nf.to_f64() == 0.0 || nt.to_f64() == 0.0 {
                zero_count += 1;
                // cos defined as 0: contributes 0 to the accumulator
            } else {
                let cos = dot / (nf.sqrt() * nt.sqrt());
                acc += cos.maximum(F::from_f64(-1.0)).minimum(F::one());
            }
        }
    }
    let mean = acc * F::from_f64(1.0 / (batch * m) as f64);
    Ok((F::one() - mean, zero_count))
}

/// Teacher features converted to the student's scalar type.
pub fn teacher_features_as<F: Real>(
    teacher: &dyn TeacherOracle,
    video: &Tensor<f64>,
) -> Result<Tensor<F>> {
    Ok(teacher.features(video)?.map(F::from_f64))
}

/// Combined objective on one clip.
pub fn loss_total<F: Real>(
    video: &Tensor<F>,
    model: &PretrainModel<F>,
    teacher_feats: &Tensor<F>,
    plan: &MaskPlan,
    alpha: F,
) -> Result<PretrainOutput<F>> {
    if alpha.to_f64() < 0.0 {
        return Err(ModelError::InvalidConfig("alpha must be >= 0".into()));
    }
    if teacher_feats.shape().last() != Some(&model.config.teacher_dim) {
        return Err(ModelError::ConfigMismatch(format!(
            "teacher features dim {:?} vs alignment head {}",
            teacher_feats.shape(),
            model.config.teacher_dim
        )));
    }
    let (x_hat, x_f) = model.student_forward(video, plan)?;
    let l_rec = loss_rec(video, &x_hat, plan, &model.config.backbone)?;
    let (l_align, zero_cos_count) = loss_align(&x_f, teacher_feats, plan)?;
    let l_total = l_rec + alpha * l_align;
    Ok(PretrainOutput {
        x_hat,
        x_f,
        l_rec,
        l_align,
        l_total,
        alpha,
        zero_cos_count,
    })
}

/// Opaque feature provider for alignment. Deterministic, sees the full
/// unmasked clip, never the mask.
pub trait TeacherOracle {
    fn feature_dim(&self) -> usize;
    /// (B, 3, T, H, W) -> per-token features (B, T*P, feature_dim).
    fn features(&self, video: &Tensor<f64>) -> Result<Tensor<f64>>;
}

/// Frozen randomly initialized reference teacher: patch embedding plus
/// bidirectional blocks over the full spatiotemporal token sequence (so it is
/// bidirectional across time, unlike the causal student), then a linear map
/// to the teacher feature dim.
pub struct ReferenceTeacher {
    base: Backbone<f64>,
    blocks: Vec<BiMambaBlockParams<f64>>,
    out_w: Tensor<f64>,
    out_b: Tensor<f64>,
    dim: usize,
}

impl ReferenceTeacher {
    pub fn init(config: BackboneConfig, teacher_dim: usize, n_blocks: usize, seed: u64) -> Result<Self> {
        let base = Backbone::init(config, seed ^ 0x7465616368)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let bc = config.block_cfg();
        let blocks = (0..n_blocks)
            .map(|_| BiMambaBlockParams::init(bc, &mut rng))
            .collect();
        let normal = Normal::new(0.0, 0.05).unwrap();
        let out_w = Tensor::from_vec(
            &[teacher_dim, config.channels],
            (0..teacher_dim * config.channels)
                .map(|_| normal.sample(&mut rng))
                .collect(),
        );
        let out_b = Tensor::zeros(&[teacher_dim]);
        Ok(ReferenceTeacher {
            base,
            blocks,
            out_w,
            out_b,
            dim: teacher_dim,
        })
    }
}

impl TeacherOracle for ReferenceTeacher {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, video: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut grid = self.base.patchify(video)?;
        self.base.embed(&mut grid, 0)?;
        let (batch, time, p_count, c) = (grid.batch, grid.time, grid.patches, grid.channels);
        let n = time * p_count;
        let mut out = Tensor::zeros(&[batch, n, self.dim]);
        for b in 0..batch {
            let mut seq = Tensor::zeros(&[n, c]);
            for t in 0..time {
                for p in 0..p_count {
                    seq.data_mut()[(t * p_count + p) * c..(t * p_count + p + 1) * c]
                        .copy_from_slice(grid.row(b, t, p));
                }
            }
            for block in &self.blocks {
                seq = block.forward(&seq)?;
            }
            for i in 0..n {
                let row = &seq.data()[i * c..(i + 1) * c];
                let dst = &mut out.data_mut()[(b * n + i) * self.dim..(b * n + i + 1) * self.dim];
                matvec(self.out_w.data(), self.dim, c, row, dst);
                for (v, &bias) in dst.iter_mut().zip(self.out_b.data()) {
                    *v += bias;
                }
            }
        }
        Ok(out)
    }
}

/// Teacher backed by precomputed per-token features from a tensor file
/// (same raw container as clips); the hook for real pretrained features.
pub struct FileTeacher {
    feats: Tensor<f64>,
    dim: usize,
}

impl FileTeacher {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let feats: Tensor<f64> = crate::io::read_tensor(path)?;
        if feats.shape().len() != 3 {
            return Err(ModelError::Format(
                "teacher feature file must be (batch, tokens, dim)".into(),
            ));
        }
        let dim = feats.shape()[2];
        Ok(FileTeacher { feats, dim })
    }

    pub fn from_tensor(feats: Tensor<f64>) -> Self {
        let dim = feats.shape()[2];
        FileTeacher { feats, dim }
    }
}

impl TeacherOracle for FileTeacher {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, video: &Tensor<f64>) -> Result<Tensor<f64>> {
        if video.shape()[0] != self.feats.shape()[0] {
            return Err(ModelError::ConfigMismatch(format!(
                "teacher feature batch {} vs video batch {}",
                self.feats.shape()[0],
                video.shape()[0]
            )));
        }
        Ok(self.feats.clone())
    }
}

/// Exact gradients of `l_total` with respect to every trainable parameter,
/// in `flat_params` order.
pub fn grad_total(
    video: &Tensor<f64>,
    model: &PretrainModel<f64>,
    teacher: &dyn TeacherOracle,
    plan: &MaskPlan,
    alpha: f64,
) -> Result<(PretrainOutput<f64>, Vec<f64>)> {
    let feats = teacher.features(video)?;
    let output = loss_total(video, model, &feats, plan, alpha)?;
    let flat = model.flat_params();
    let (_, grads) = gradients(&flat, |vars| {
        let m: PretrainModel<Var> = model.from_slice(vars);
        let video_v = video.map(Var::from_f64);
        let feats_v = feats.map(Var::from_f64);
        loss_total(&video_v, &m, &feats_v, plan, Var::from_f64(alpha))
            .expect("shapes validated by the f64 pass")
            .l_total
    });
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        let mut at = 0usize;
        for (name, len) in model.param_names() {
            if bad < at + len {
                return Err(ModelError::NonFinite(format!("gradient of {name}")));
            }
            at += len;
        }
        return Err(ModelError::NonFinite("gradient".into()));
    }
    Ok((output, grads))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub l_total: f64,
    pub l_rec: f64,
    pub l_align: f64,
}

/// Adam-style training loop over the given clips (round-robin), one fixed
/// mask plan per clip. Returns the per-step loss trajectory; aborts with the
/// partial trajectory if the loss goes non-finite.
pub fn train_toy(
    model: &mut PretrainModel<f64>,
    teacher: &dyn TeacherOracle,
    clips: &[Tensor<f64>],
    steps: usize,
    lr: f64,
    alpha: f64,
    seed: u64,
) -> Result<Vec<TrainRecord>> {
    if clips.is_empty() {
        return Err(ModelError::InvalidConfig("train_toy needs at least one clip".into()));
    }
    let token_count_of = |clip: &Tensor<f64>| clip.shape()[2] * model.config.backbone.patches();
    let plans: Vec<MaskPlan> = clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            if model.config.tube {
                make_tube_mask(
                    clip.shape()[2],
                    model.config.backbone.patches(),
                    model.config.mask_ratio,
                    seed.wrapping_add(i as u64),
                )
            } else {
                make_mask(token_count_of(clip), model.config.mask_ratio, seed.wrapping_add(i as u64))
            }
        })
        .collect::<Result<_>>()?;

    let mut params = model.flat_params();
    let mut m1 = vec![0.0f64; params.len()];
    let mut m2 = vec![0.0f64; params.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut trajectory = Vec::with_capacity(steps);
    for step in 0..steps {
        let clip_idx = step % clips.len();
        model.load_flat(&params);
        let (out, grads) = grad_total(&clips[clip_idx], model, teacher, &plans[clip_idx], alpha)?;
        if !out.l_total.is_finite() {
            return Err(ModelError::Diverged {
                step,
                trajectory,
            });
        }
        trajectory.push(TrainRecord {
            step,
            l_total: out.l_total,
            l_rec: out.l_rec,
            l_align: out.l_align,
        });
        let t = (step + 1) as f64;
        let (c1, c2) = (1.0 - b1.powf(t), 1.0 - b2.powf(t));
        for i in 0..params.len() {
            m1[i] = b1 * m1[i] + (1.0 - b1) * grads[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * grads[i] * grads[i];
            params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
        }
    }
    model.load_flat(&params);
    Ok(trajectory)
}
