//! Gated selective-SSM blocks.
//!
//! Two flavours share the same internals (pre-norm, input projection into an
//! SSM branch and a gate branch, depthwise causal conv, per-token selective
//! parameters, diagonal scan, gated output projection, residual):
//!
//! - [`MambaBlockParams`]: causal, past-to-present only; supports single-token
//!   streaming via [`BlockStreamState`].
//! - [`BiMambaBlockParams`]: two directional parameter sets over a shared
//!   input projection, merged by summation before the output projection.
//!   Used spatially, where all tokens of a frame are available at once.

use crate::error::{ModelError, Result};
use crate::real::{silu, softplus, Real};
use crate::ssm::ScanState;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockConfig {
    pub channel: usize,
    /// inner_dim = expand_factor * channel
    pub inner: usize,
    pub state_dim: usize,
    pub conv_k: usize,
    pub dt_rank: usize,
}

const RMS_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// One direction's scan machinery: depthwise conv + selective projections +
/// diagonal evolution + skip.
#[derive(Clone, Debug)]
pub struct DirectionParams<F> {
    /// (inner, conv_k)
    pub conv_w: Tensor<F>,
    /// (inner)
    pub conv_b: Tensor<F>,
    /// (state_dim, inner)
    pub b_proj: Tensor<F>,
    /// (state_dim, inner)
    pub c_proj: Tensor<F>,
    /// (dt_rank, inner)
    pub dt_in: Tensor<F>,
    /// (inner, dt_rank)
    pub dt_out: Tensor<F>,
    /// (inner)
    pub dt_bias: Tensor<F>,
    /// (inner, state_dim); A = -exp(a_log)
    pub a_log: Tensor<F>,
    /// (inner) skip scale
    pub d_skip: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct MambaBlockParams<F> {
    pub cfg: BlockConfig,
    /// (channel)
    pub norm_scale: Tensor<F>,
    /// (2*inner, channel)
    pub in_proj: Tensor<F>,
    pub dir: DirectionParams<F>,
    /// (channel, inner)
    pub out_proj: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct BiMambaBlockParams<F> {
    pub cfg: BlockConfig,
    pub norm_scale: Tensor<F>,
    pub in_proj: Tensor<F>,
    pub fwd: DirectionParams<F>,
    pub bwd: DirectionParams<F>,
    pub out_proj: Tensor<F>,
}

/// Streaming state for one causal block: the scan state plus the last
/// `conv_k - 1` inner activations. Fixed size regardless of frames consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStreamState<F> {
    /// (conv_k - 1, inner), oldest row first.
    pub conv_tail: Tensor<F>,
    pub scan: ScanState<F>,
}

impl<F: Real> BlockStreamState<F> {
    pub fn zeros(cfg: &BlockConfig) -> Self {
        BlockStreamState {
            conv_tail: Tensor::zeros(&[cfg.conv_k - 1, cfg.inner]),
            scan: ScanState::zeros(cfg.inner, cfg.state_dim),
        }
    }

    pub fn float_count(cfg: &BlockConfig) -> usize {
        (cfg.conv_k - 1) * cfg.inner + cfg.inner * cfg.state_dim
    }
}

pub(crate) fn matvec<F: Real>(w: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let mut acc = F::zero();
        let row = &w[r * cols..(r + 1) * cols];
        for i in 0..cols {
            acc += row[i] * x[i];
        }
        out[r] = acc;
    }
}

pub(crate) fn rms_norm_row<F: Real>(x: &[F], scale: &[F], out: &mut [F]) {
    let n = F::from_f64(x.len() as f64);
    let mut ms = F::zero();
    for &v in x {
        ms += v * v;
    }
    ms = ms / n;
    let r = F::one() / (ms + F::from_f64(RMS_EPS)).sqrt();
    for i in 0..x.len() {
        out[i] = x[i] * r * scale[i];
    }
}

/// N(0, 1/sqrt(cols)): fan-in scaled so matvec outputs stay O(input) and the
/// selective pathway is not vanishingly small at init.
pub(crate) fn fan_in_init<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
    Tensor::from_vec(
        &[rows, cols],
        (0..rows * cols)
            .map(|_| F::from_f64(normal.sample(rng)))
            .collect(),
    )
}

impl<F: Real> DirectionParams<F> {
    pub fn init(cfg: &BlockConfig, rng: &mut ChaCha8Rng) -> Self {
        let conv_w = fan_in_init(rng, cfg.inner, cfg.conv_k);
        let conv_b = Tensor::zeros(&[cfg.inner]);
        let b_proj = fan_in_init(rng, cfg.state_dim, cfg.inner);
        let c_proj = fan_in_init(rng, cfg.state_dim, cfg.inner);
        let dt_in = fan_in_init(rng, cfg.dt_rank, cfg.inner);
        let dt_out = fan_in_init(rng, cfg.inner, cfg.dt_rank);
        // dt_bias initialized so softplus(dt_bias) lands in [0.01, 0.1]
        let dt_bias = Tensor::from_vec(
            &[cfg.inner],
            (0..cfg.inner)
                .map(|_| {
                    let target: f64 = rng.gen_range(0.01..0.1);
                    F::from_f64((target.exp() - 1.0).ln())
                })
                .collect(),
        );
        // A = -exp(a_log) = -(n+1) at init
        let a_log = Tensor::from_vec(
            &[cfg.inner, cfg.state_dim],
            (0..cfg.inner)
                .flat_map(|_| (0..cfg.state_dim).map(|n| F::from_f64(((n + 1) as f64).ln())))
                .collect(),
        );
        let d_skip = Tensor::filled(&[cfg.inner], F::one());
        DirectionParams {
            conv_w,
            conv_b,
            b_proj,
            c_proj,
            dt_in,
            dt_out,
            dt_bias,
            a_log,
            d_skip,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{prefix}.conv_w"), &self.conv_w);
        f(format!("{prefix}.conv_b"), &self.conv_b);
        f(format!("{prefix}.b_proj"), &self.b_proj);
        f(format!("{prefix}.c_proj"), &self.c_proj);
        f(format!("{prefix}.dt_in"), &self.dt_in);
        f(format!("{prefix}.dt_out"), &self.dt_out);
        f(format!("{prefix}.dt_bias"), &self.dt_bias);
        f(format!("{prefix}.a_log"), &self.a_log);
        f(format!("{prefix}.d_skip"), &self.d_skip);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> DirectionParams<G> {
        DirectionParams {
            conv_w: f(&self.conv_w),
            conv_b: f(&self.conv_b),
            b_proj: f(&self.b_proj),
            c_proj: f(&self.c_proj),
            dt_in: f(&self.dt_in),
            dt_out: f(&self.dt_out),
            dt_bias: f(&self.dt_bias),
            a_log: f(&self.a_log),
            d_skip: f(&self.d_skip),
        }
    }

    /// Trainable parameter count for one direction.
    pub fn param_count(cfg: &BlockConfig) -> usize {
        cfg.inner * cfg.conv_k          // conv_w
            + cfg.inner                 // conv_b
            + 2 * cfg.state_dim * cfg.inner // b_proj, c_proj
            + cfg.dt_rank * cfg.inner   // dt_in
            + cfg.inner * cfg.dt_rank   // dt_out
            + cfg.inner                 // dt_bias
            + cfg.inner * cfg.state_dim // a_log
            + cfg.inner                 // d_skip
    }

    /// `A = -exp(a_log)`, precomputed once per forward pass.
    fn a_neg(&self) -> Vec<F> {
        self.a_log.data().iter().map(|&v| -v.exp()).collect()
    }
}

/// Per-token selective scan update shared between the full forward pass and
/// the streaming step, so the two are bitwise identical.
///
/// `u` is the conv-activated inner row; `h` is (inner, state_dim); writes the
/// skip-added SSM output into `y` (inner).
fn token_scan_update<F: Real>(
    dir: &DirectionParams<F>,
    cfg: &BlockConfig,
    a_neg: &[F],
    u: &[F],
    h: &mut [F],
    y: &mut [F],
) {
    let (inner, state, dt_rank) = (cfg.inner, cfg.state_dim, cfg.dt_rank);
    let mut dtr = vec![F::zero(); dt_rank];
    matvec(dir.dt_in.data(), dt_rank, inner, u, &mut dtr);
    let mut bvec = vec![F::zero(); state];
    matvec(dir.b_proj.data(), state, inner, u, &mut bvec);
    let mut cvec = vec![F::zero(); state];
    matvec(dir.c_proj.data(), state, inner, u, &mut cvec);

    for d in 0..inner {
        let mut dt = dir.dt_bias.data()[d];
        let row = &dir.dt_out.data()[d * dt_rank..(d + 1) * dt_rank];
        for r in 0..dt_rank {
            dt += row[r] * dtr[r];
        }
        let delta = softplus(dt);
        let x = u[d];
        let mut acc = F::zero();
        for n in 0..state {
            let i = d * state + n;
            let z = delta * a_neg[i];
            let a_bar = z.exp();
            let b_bar = delta * bvec[n] * crate::ssm::phi(z);
            h[i] = a_bar * h[i] + b_bar * x;
            acc += cvec[n] * h[i];
        }
        y[d] = acc + dir.d_skip.data()[d] * x;
    }
}

/// Causal depthwise conv at one position: `window` holds conv_k rows of inner
/// activations, oldest first.
fn conv_at<F: Real>(dir: &DirectionParams<F>, cfg: &BlockConfig, window: &[&[F]], out: &mut [F]) {
    debug_assert_eq!(window.len(), cfg.conv_k);
    for d in 0..cfg.inner {
        let mut acc = dir.conv_b.data()[d];
        for (j, row) in window.iter().enumerate() {
            acc += dir.conv_w.data()[d * cfg.conv_k + j] * row[d];
        }
        out[d] = silu(acc);
    }
}

/// Ungated directional branch over a full sequence: conv -> SiLU -> selective
/// scan -> skip. Input and output are (seq, inner). The scan starts from zero
/// state; pass `conv_pad` rows (conv_k-1, inner) as the left conv context.
fn branch_forward<F: Real>(
    dir: &DirectionParams<F>,
    cfg: &BlockConfig,
    xs: &[F],
    seq: usize,
) -> Vec<F> {
    let inner = cfg.inner;
    let a_neg = dir.a_neg();
    let zeros = vec![F::zero(); inner];
    let mut h = vec![F::zero(); inner * cfg.state_dim];
    let mut y = vec![F::zero(); seq * inner];
    let mut xc = vec![F::zero(); inner];
    for t in 0..seq {
        let window: Vec<&[F]> = (0..cfg.conv_k)
            .map(|j| {
                let pos = t as isize - (cfg.conv_k - 1 - j) as isize;
                if pos < 0 {
                    &zeros[..]
                } else {
                    &xs[pos as usize * inner..(pos as usize + 1) * inner]
                }
            })
            .collect();
        conv_at(dir, cfg, &window, &mut xc);
        token_scan_update(dir, cfg, &a_neg, &xc, &mut h, &mut y[t * inner..(t + 1) * inner]);
    }
    y
}

fn check_channel<F: Real>(cfg: &BlockConfig, tokens: &Tensor<F>) -> Result<usize> {
    let shape = tokens.shape();
    if shape.len() != 2 || shape[1] != cfg.channel {
        return Err(ModelError::shape(
            "block tokens",
            &[0, cfg.channel],
            shape,
        ));
    }
    Ok(shape[0])
}

/// Shared pre-norm + input projection: returns (x_part, z) both (seq, inner).
fn project_in<F: Real>(
    norm_scale: &Tensor<F>,
    in_proj: &Tensor<F>,
    cfg: &BlockConfig,
    tokens: &Tensor<F>,
    seq: usize,
) -> (Vec<F>, Vec<F>) {
    let (channel, inner) = (cfg.channel, cfg.inner);
    let mut x_part = vec![F::zero(); seq * inner];
    let mut z = vec![F::zero(); seq * inner];
    let mut xn = vec![F::zero(); channel];
    let mut xz = vec![F::zero(); 2 * inner];
    for t in 0..seq {
        rms_norm_row(&tokens.data()[t * channel..(t + 1) * channel], norm_scale.data(), &mut xn);
        matvec(in_proj.data(), 2 * inner, channel, &xn, &mut xz);
        x_part[t * inner..(t + 1) * inner].copy_from_slice(&xz[..inner]);
        z[t * inner..(t + 1) * inner].copy_from_slice(&xz[inner..]);
    }
    (x_part, z)
}

fn project_out<F: Real>(
    out_proj: &Tensor<F>,
    cfg: &BlockConfig,
    tokens: &Tensor<F>,
    gated: &[F],
    seq: usize,
) -> Tensor<F> {
    let (channel, inner) = (cfg.channel, cfg.inner);
    let mut out = tokens.clone();
    let mut proj = vec![F::zero(); channel];
    for t in 0..seq {
        matvec(out_proj.data(), channel, inner, &gated[t * inner..(t + 1) * inner], &mut proj);
        for c in 0..channel {
            out.data_mut()[t * channel + c] += proj[c];
        }
    }
    out
}

impl<F: Real> MambaBlockParams<F> {
    pub fn init(cfg: BlockConfig, rng: &mut ChaCha8Rng) -> Self {
        let in_proj = fan_in_init(rng, 2 * cfg.inner, cfg.channel);
        let out_proj = fan_in_init(rng, cfg.channel, cfg.inner);
        MambaBlockParams {
            cfg,
            norm_scale: Tensor::filled(&[cfg.channel], F::one()),
            in_proj,
            dir: DirectionParams::init(&cfg, rng),
            out_proj,
        }
    }

    /// Full-sequence causal forward: `tokens` is (seq, channel).
    pub fn forward(&self, tokens: &Tensor<F>) -> Result<Tensor<F>> {
        let seq = check_channel(&self.cfg, tokens)?;
        let cfg = &self.cfg;
        let (x_part, z) = project_in(&self.norm_scale, &self.in_proj, cfg, tokens, seq);
        let mut y = branch_forward(&self.dir, cfg, &x_part, seq);
        for (yv, &zv) in y.iter_mut().zip(&z) {
            *yv = *yv * silu(zv);
        }
        Ok(project_out(&self.out_proj, cfg, tokens, &y, seq))
    }

    /// Single-token streaming step; folding this over a sequence from a fresh
    /// state reproduces [`Self::forward`] bitwise.
    pub fn step(&self, token: &[F], state: &mut BlockStreamState<F>) -> Result<Vec<F>> {
        let cfg = &self.cfg;
        if token.len() != cfg.channel {
            return Err(ModelError::shape("block step token", &[cfg.channel], &[token.len()]));
        }
        if state.conv_tail.shape() != [cfg.conv_k - 1, cfg.inner]
            || state.scan.h.shape() != [cfg.inner, cfg.state_dim]
        {
            return Err(ModelError::ConfigMismatch(
                "stream state shape does not match block config".into(),
            ));
        }
        let inner = cfg.inner;
        let mut xn = vec![F::zero(); cfg.channel];
        rms_norm_row(token, self.norm_scale.data(), &mut xn);
        let mut xz = vec![F::zero(); 2 * inner];
        matvec(self.in_proj.data(), 2 * inner, cfg.channel, &xn, &mut xz);
        let (x_part, z) = xz.split_at(inner);

        let mut window: Vec<&[F]> = (0..cfg.conv_k - 1)
            .map(|j| &state.conv_tail.data()[j * inner..(j + 1) * inner])
            .collect();
        window.push(x_part);
        let mut xc = vec![F::zero(); inner];
        conv_at(&self.dir, cfg, &window, &mut xc);

        let a_neg = self.dir.a_neg();
        let mut y = vec![F::zero(); inner];
        token_scan_update(&self.dir, cfg, &a_neg, &xc, state.scan.h.data_mut(), &mut y);
        for d in 0..inner {
            y[d] = y[d] * silu(z[d]);
        }

        // shift conv tail
        let tail = state.conv_tail.data_mut();
        for j in 1..cfg.conv_k - 1 {
            let (a, b) = tail.split_at_mut(j * inner);
            a[(j - 1) * inner..].copy_from_slice(&b[..inner]);
        }
        if cfg.conv_k > 1 {
            tail[(cfg.conv_k - 2) * inner..].copy_from_slice(x_part);
        }

        let mut proj = vec![F::zero(); cfg.channel];
        matvec(self.out_proj.data(), cfg.channel, inner, &y, &mut proj);
        Ok(token.iter().zip(&proj).map(|(&t, &p)| t + p).collect())
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{prefix}.norm_scale"), &self.norm_scale);
        f(format!("{prefix}.in_proj"), &self.in_proj);
        self.dir.visit(&format!("{prefix}.dir"), f);
        f(format!("{prefix}.out_proj"), &self.out_proj);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> MambaBlockParams<G> {
        MambaBlockParams {
            cfg: self.cfg,
            norm_scale: f(&self.norm_scale),
            in_proj: f(&self.in_proj),
            dir: self.dir.map(f),
            out_proj: f(&self.out_proj),
        }
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        cfg.channel
            + 2 * cfg.inner * cfg.channel
            + DirectionParams::<F>::param_count(cfg)
            + cfg.channel * cfg.inner
    }
}

impl<F: Real> BiMambaBlockParams<F> {
    pub fn init(cfg: BlockConfig, rng: &mut ChaCha8Rng) -> Self {
        let in_proj = fan_in_init(rng, 2 * cfg.inner, cfg.channel);
        let out_proj = fan_in_init(rng, cfg.channel, cfg.inner);
        BiMambaBlockParams {
            cfg,
            norm_scale: Tensor::filled(&[cfg.channel], F::one()),
            in_proj,
            fwd: DirectionParams::init(&cfg, rng),
            bwd: DirectionParams::init(&cfg, rng),
            out_proj,
        }
    }

    /// Bidirectional forward over the tokens of one frame: forward-direction
    /// scan plus reversed backward-direction scan, summed before the gate and
    /// output projection. Not causal.
    pub fn forward(&self, tokens: &Tensor<F>) -> Result<Tensor<F>> {
        let seq = check_channel(&self.cfg, tokens)?;
        let cfg = &self.cfg;
        let inner = cfg.inner;
        let (x_part, z) = project_in(&self.norm_scale, &self.in_proj, cfg, tokens, seq);

        let y_f = branch_forward(&self.fwd, cfg, &x_part, seq);

        let mut x_rev = vec![F::zero(); seq * inner];
        for t in 0..seq {
            x_rev[t * inner..(t + 1) * inner]
                .copy_from_slice(&x_part[(seq - 1 - t) * inner..(seq - t) * inner]);
        }
        let y_b_rev = branch_forward(&self.bwd, cfg, &x_rev, seq);

        let mut gated = vec![F::zero(); seq * inner];
        for t in 0..seq {
            for d in 0..inner {
                let yb = y_b_rev[(seq - 1 - t) * inner + d];
                gated[t * inner + d] = (y_f[t * inner + d] + yb) * silu(z[t * inner + d]);
            }
        }
        Ok(project_out(&self.out_proj, cfg, tokens, &gated, seq))
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{prefix}.norm_scale"), &self.norm_scale);
        f(format!("{prefix}.in_proj"), &self.in_proj);
        self.fwd.visit(&format!("{prefix}.fwd"), f);
        self.bwd.visit(&format!("{prefix}.bwd"), f);
        f(format!("{prefix}.out_proj"), &self.out_proj);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> BiMambaBlockParams<G> {
        BiMambaBlockParams {
            cfg: self.cfg,
            norm_scale: f(&self.norm_scale),
            in_proj: f(&self.in_proj),
            fwd: self.fwd.map(f),
            bwd: self.bwd.map(f),
            out_proj: f(&self.out_proj),
        }
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        cfg.channel
            + 2 * cfg.inner * cfg.channel
            + 2 * DirectionParams::<F>::param_count(cfg)
            + cfg.channel * cfg.inner
    }
}

/// Two-layer head: affine -> tanh -> affine, applied per pooled frame vector.
#[derive(Clone, Debug)]
pub struct MlpHeadParams<F> {
    /// (hidden, in)
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    /// (out, hidden)
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

impl<F: Real> MlpHeadParams<F> {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let mut gauss = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::from_f64(normal.sample(rng))).collect()
        };
        MlpHeadParams {
            w1: Tensor::from_vec(&[hidden, in_dim], gauss(hidden * in_dim)),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::from_vec(&[out_dim, hidden], gauss(out_dim * hidden)),
            b2: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn forward(&self, features: &[F]) -> Vec<F> {
        let (hidden, in_dim) = (self.w1.shape()[0], self.w1.shape()[1]);
        let out_dim = self.w2.shape()[0];
        debug_assert_eq!(features.len(), in_dim);
        let mut h = vec![F::zero(); hidden];
        matvec(self.w1.data(), hidden, in_dim, features, &mut h);
        for (hv, &b) in h.iter_mut().zip(self.b1.data()) {
            *hv = (*hv + b).tanh();
        }
        let mut out = vec![F::zero(); out_dim];
        matvec(self.w2.data(), out_dim, hidden, &h, &mut out);
        for (ov, &b) in out.iter_mut().zip(self.b2.data()) {
            *ov += b;
        }
        out
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    pub fn map<G: Real>(&self, f: &mut dyn FnMut(&Tensor<F>) -> Tensor<G>) -> MlpHeadParams<G> {
        MlpHeadParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn param_count(in_dim: usize, hidden: usize, out_dim: usize) -> usize {
        hidden * in_dim + hidden + out_dim * hidden + out_dim
    }
}
