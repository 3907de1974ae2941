//! Self-check suites behind the CLI `verify` subcommand. Each suite
//! recomputes a property with an independent method and reports the worst
//! observed error against a pinned tolerance.
//!
//! `inject_fault` deliberately runs the parallel reference with the wrong
//! temporal token order; a healthy harness must then report failure. That
//! exercises the reporting path itself, not the model.

use crate::backbone::{extract_frame, Backbone, BackboneConfig, TokenOrder};
use crate::error::Result;
use crate::io::synthetic_clip;
use crate::pretrain::{
    grad_total, loss_align, loss_total, make_mask, teacher_features_as, PretrainConfig,
    PretrainModel, ReferenceTeacher,
};
use crate::real::Real;
use crate::ssm::{discretize, scan_naive, scan_parallel, ScanState, SsmParams};
use crate::streaming::{session_new, session_step};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn from_error(name: &str, max_error: f64, tolerance: f64, detail: String) -> Self {
        SuiteResult {
            name: name.to_string(),
            passed: max_error.is_finite() && max_error <= tolerance,
            max_error,
            tolerance,
            detail,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Run the precision-dependent suites in f64 instead of f32 (tighter
    /// tolerances apply).
    pub use_f64: bool,
    pub seed: u64,
    /// Corrupt the parallel reference's token order to prove failures are
    /// actually detected.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            use_f64: false,
            seed: 0,
            inject_fault: false,
        }
    }
}

fn suite_zoh(seed: u64) -> SuiteResult {
    // pinned scalar case: A=-1, delta=ln 2 halves the state exactly
    let params = SsmParams {
        a: Tensor::from_vec(&[1, 1], vec![-1.0f64]),
        b: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        c: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        delta: Tensor::from_vec(&[1, 1], vec![std::f64::consts::LN_2]),
    };
    let mut max_err = match discretize(&params) {
        Ok(d) => (d.a_bar.data()[0] - 0.5)
            .abs()
            .max((d.b_bar.data()[0] - 0.5).abs()),
        Err(_) => f64::INFINITY,
    };
    // random cases against the direct closed form
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let a: f64 = -rng.gen_range(0.01..4.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let dt: f64 = rng.gen_range(1e-4..1.0);
        let p = SsmParams {
            a: Tensor::from_vec(&[1, 1], vec![a]),
            b: Tensor::from_vec(&[1, 1, 1], vec![b]),
            c: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
            delta: Tensor::from_vec(&[1, 1], vec![dt]),
        };
        match discretize(&p) {
            Ok(d) => {
                let a_ref = (dt * a).exp();
                let b_ref = b * (dt * a).exp_m1() / a;
                max_err = max_err
                    .max((d.a_bar.data()[0] - a_ref).abs())
                    .max((d.b_bar.data()[0] - b_ref).abs());
            }
            Err(_) => max_err = f64::INFINITY,
        }
    }
    SuiteResult::from_error(
        "zoh-discretization",
        max_err,
        1e-12,
        "scalar half-life case + 200 random coefficients vs closed form".into(),
    )
}

fn suite_scan<F: Real>(seed: u64) -> SuiteResult {
    let tol = if F::is_f32() { 1e-5 } else { 1e-10 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mut max_err = 0.0f64;
    for _ in 0..20 {
        let (seq, heads, state) = (rng.gen_range(1..40), rng.gen_range(1..4), rng.gen_range(1..6));
        let params = SsmParams::<F> {
            a: Tensor::from_vec(
                &[heads, state],
                (0..heads * state)
                    .map(|_| F::from_f64(-rng.gen_range(0.05..3.0)))
                    .collect(),
            ),
            b: Tensor::from_vec(
                &[seq, heads, state],
                (0..seq * heads * state)
                    .map(|_| F::from_f64(rng.gen_range(-1.0..1.0)))
                    .collect(),
            ),
            c: Tensor::from_vec(
                &[seq, heads, state],
                (0..seq * heads * state)
                    .map(|_| F::from_f64(rng.gen_range(-1.0..1.0)))
                    .collect(),
            ),
            delta: Tensor::from_vec(
                &[seq, heads],
                (0..seq * heads)
                    .map(|_| F::from_f64(rng.gen_range(1e-3..0.5)))
                    .collect(),
            ),
        };
        let u = Tensor::from_vec(
            &[seq, heads],
            (0..seq * heads)
                .map(|_| F::from_f64(rng.gen_range(-1.0..1.0)))
                .collect(),
        );
        let err = (|| -> Result<f64> {
            let d = discretize(&params)?;
            let h0 = ScanState::zeros(heads, state);
            let (y_naive, _) = scan_naive(&d, &params.c, &u, &h0)?;
            let (y_par, _) = scan_parallel(&d, &params.c, &u, &h0)?;
            Ok(y_naive.max_abs_diff(&y_par))
        })();
        match err {
            Ok(e) => max_err = max_err.max(e),
            Err(_) => max_err = f64::INFINITY,
        }
    }
    SuiteResult::from_error(
        "selective-scan",
        max_err,
        tol,
        "chunked parallel scan vs sequential recurrence, 20 random shapes".into(),
    )
}

fn suite_streaming<F: Real>(seed: u64, inject_fault: bool) -> SuiteResult {
    let tol = if F::is_f32() { 1e-4 } else { 1e-9 };
    let cfg = BackboneConfig::desk_default();
    let time = 6;
    let result = (|| -> Result<f64> {
        let model: Backbone<F> = Backbone::init(cfg, seed ^ 2)?;
        let clip = synthetic_clip::<F>(time, cfg.frame_h, cfg.frame_w, seed ^ 3);
        let order = if inject_fault {
            TokenOrder::PatchMajor
        } else {
            TokenOrder::FrameMajor
        };
        let parallel = model.forward_with_options(&clip, None, order, 0)?;
        let mut session = session_new(&model);
        let mut max_err = 0.0f64;
        let c = cfg.channels;
        for t in 0..time {
            let frame = extract_frame(&clip, 0, t);
            let out = session_step(&model, &mut session, &frame)?;
            let reference = &parallel.features.data()[t * c..(t + 1) * c];
            for i in 0..c {
                max_err = max_err.max((out.features[i].to_f64() - reference[i].to_f64()).abs());
            }
        }
        Ok(max_err)
    })();
    SuiteResult::from_error(
        "streaming-equivalence",
        result.unwrap_or(f64::INFINITY),
        tol,
        format!("per-frame streaming vs parallel forward, {time} frames"),
    )
}

fn suite_causality(seed: u64) -> SuiteResult {
    let cfg = BackboneConfig::desk_default();
    let time = 5;
    let result = (|| -> Result<f64> {
        let model: Backbone<f64> = Backbone::init(cfg, seed ^ 4)?;
        let clip = synthetic_clip::<f64>(time, cfg.frame_h, cfg.frame_w, seed ^ 5);
        let mut perturbed = clip.clone();
        // rewrite the last frame entirely
        let (h, w) = (cfg.frame_h, cfg.frame_w);
        for ch in 0..3 {
            let at = (ch * time + (time - 1)) * h * w;
            for v in &mut perturbed.data_mut()[at..at + h * w] {
                *v = 1.0 - *v;
            }
        }
        let a = model.forward_parallel(&clip)?;
        let b = model.forward_parallel(&perturbed)?;
        let c = cfg.channels;
        let mut max_err = 0.0f64;
        for t in 0..time - 1 {
            for i in 0..c {
                let (x, y) = (a.features.data()[t * c + i], b.features.data()[t * c + i]);
                max_err = max_err.max((x - y).abs());
            }
        }
        Ok(max_err)
    })();
    SuiteResult::from_error(
        "causality",
        result.unwrap_or(f64::INFINITY),
        1e-6,
        "future-frame rewrite must not move past features".into(),
    )
}

fn suite_gradient(seed: u64) -> SuiteResult {
    let result = (|| -> Result<f64> {
        let cfg = PretrainConfig::tiny();
        let model = PretrainModel::<f64>::init(cfg, seed ^ 6)?;
        let teacher = ReferenceTeacher::init(cfg.backbone, cfg.teacher_dim, 1, seed ^ 7)?;
        let video = synthetic_clip::<f64>(2, cfg.backbone.frame_h, cfg.backbone.frame_w, seed ^ 8);
        let plan = make_mask(2 * cfg.backbone.patches(), cfg.mask_ratio, seed ^ 9)?;
        let feats = teacher_features_as::<f64>(&teacher, &video)?;
        let flat = model.flat_params();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for &alpha in &[0.0, 0.25] {
            let (_, grads) = grad_total(&video, &model, &teacher, &plan, alpha)?;
            let loss_at = |params: &[f64]| -> Result<f64> {
                let m = model.from_slice(params);
                Ok(loss_total(&video, &m, &feats, &plan, alpha)?.l_total)
            };
            // stride keeps verify fast; the acceptance suite sweeps every param
            let stride = (flat.len() / 64).max(1);
            for i in (0..flat.len()).step_by(stride) {
                let mut p = flat.clone();
                p[i] += eps;
                let mut m = flat.clone();
                m[i] -= eps;
                let fd = (loss_at(&p)? - loss_at(&m)?) / (2.0 * eps);
                let rel = (grads[i] - fd).abs() / fd.abs().max(1e-6);
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    })();
    SuiteResult::from_error(
        "gradient",
        result.unwrap_or(f64::INFINITY),
        1e-3,
        "tape gradients vs central differences, alpha in {0, 0.25}".into(),
    )
}

fn suite_loss_properties(seed: u64) -> SuiteResult {
    let result = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        // alignment loss bounded in [0, 2] on random features
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 10);
        for _ in 0..200 {
            let td = rng.gen_range(1..8);
            let plan = make_mask(4, 0.5, rng.gen())?;
            let m = plan.omega_bar().len();
            let x_t = Tensor::from_vec(
                &[1, 4, td],
                (0..4 * td).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            );
            let x_f = Tensor::from_vec(
                &[1, m, td],
                (0..m * td).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            );
            let (l, _): (f64, usize) = loss_align(&x_f, &x_t, &plan)?;
            worst = worst.max((-l).max(l - 2.0)).max(0.0);
        }
        // combined loss is affine in alpha
        let cfg = PretrainConfig::tiny();
        let model = PretrainModel::<f64>::init(cfg, seed ^ 11)?;
        let teacher = ReferenceTeacher::init(cfg.backbone, cfg.teacher_dim, 1, seed ^ 12)?;
        let video = synthetic_clip::<f64>(2, cfg.backbone.frame_h, cfg.backbone.frame_w, seed ^ 13);
        let plan = make_mask(2 * cfg.backbone.patches(), cfg.mask_ratio, seed ^ 14)?;
        let feats = teacher_features_as::<f64>(&teacher, &video)?;
        let o0 = loss_total(&video, &model, &feats, &plan, 0.0)?;
        let oa = loss_total(&video, &model, &feats, &plan, 0.25)?;
        worst = worst.max((o0.l_total - o0.l_rec).abs());
        worst = worst.max((oa.l_total - (oa.l_rec + 0.25 * oa.l_align)).abs());
        Ok(worst)
    })();
    SuiteResult::from_error(
        "loss-properties",
        result.unwrap_or(f64::INFINITY),
        1e-12,
        "alignment loss range + total-loss alpha identity".into(),
    )
}

/// Runs every suite; `report.passed` is the AND of all of them.
pub fn run_verify(options: &VerifyOptions) -> VerifyReport {
    let seed = options.seed;
    let suites = vec![
        suite_zoh(seed),
        if options.use_f64 {
            suite_scan::<f64>(seed)
        } else {
            suite_scan::<f32>(seed)
        },
        if options.use_f64 {
            suite_streaming::<f64>(seed, options.inject_fault)
        } else {
            suite_streaming::<f32>(seed, options.inject_fault)
        },
        suite_causality(seed),
        suite_gradient(seed),
        suite_loss_properties(seed),
    ];
    let passed = suites.iter().all(|s| s.passed);
    VerifyReport { suites, passed }
}
