//! End-to-end acceptance gate. Each numbered criterion prints exactly one
//! PASS/FAIL line with its measured value and pinned tolerance; the test
//! fails if any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamssm::backbone::{extract_frame, Backbone, BackboneConfig};
use streamssm::bench::{
    run_bench, BenchConfig, MODE_RECOMPUTE_BIDI, MODE_RECOMPUTE_CAUSAL, MODE_STREAMING,
};
use streamssm::io::synthetic_clip;
use streamssm::pretrain::{
    grad_total, loss_align, loss_rec, loss_total, make_mask, teacher_features_as, train_toy,
    PretrainConfig, PretrainModel, ReferenceTeacher, TeacherOracle,
};
use streamssm::real::Real;
use streamssm::ssm::{discretize, scan_naive, scan_parallel, scan_step, ScanState, SsmParams};
use streamssm::streaming::{session_load, session_new, session_save, session_step};
use streamssm::tensor::Tensor;

struct Criterion {
    passed: bool,
    line: String,
}

fn report(n: usize, name: &str, passed: bool, detail: String) -> Criterion {
    let line = format!(
        "{} {n}. {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    Criterion { passed, line }
}

fn random_clip<F: Real>(rng: &mut ChaCha8Rng, time: usize, h: usize, w: usize) -> Tensor<F> {
    Tensor::from_vec(
        &[1, 3, time, h, w],
        (0..3 * time * h * w)
            .map(|_| F::from_f64(rng.gen_range(0.0..1.0)))
            .collect(),
    )
}

fn streaming_max_err<F: Real>(seed: u64) -> f64 {
    let cfg = BackboneConfig::desk_default();
    let model: Backbone<F> = Backbone::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc11f);
    let clip = random_clip::<F>(&mut rng, 8, cfg.frame_h, cfg.frame_w);
    let parallel = model.forward_parallel(&clip).unwrap();
    let mut session = session_new(&model);
    let c = cfg.channels;
    let mut max_err = 0.0f64;
    for t in 0..8 {
        let out = session_step(&model, &mut session, &extract_frame(&clip, 0, t)).unwrap();
        let reference = &parallel.features.data()[t * c..(t + 1) * c];
        for i in 0..c {
            max_err = max_err.max((out.features[i].to_f64() - reference[i].to_f64()).abs());
        }
    }
    max_err
}

fn criterion_1() -> Criterion {
    let e32 = streaming_max_err::<f32>(41);
    let e64 = streaming_max_err::<f64>(42);
    report(
        1,
        "streaming-parallel equivalence",
        e32 <= 1e-4 && e64 <= 1e-9,
        format!("f32 max err {e32:.2e} (tol 1e-4), f64 max err {e64:.2e} (tol 1e-9)"),
    )
}

fn criterion_2() -> Criterion {
    let cfg = BackboneConfig::desk_default();
    let model: Backbone<f32> = Backbone::init(cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let clip = random_clip::<f32>(&mut rng, 8, cfg.frame_h, cfg.frame_w);
    let base = model.forward_parallel(&clip).unwrap();
    let c = cfg.channels;
    let (h, w) = (cfg.frame_h, cfg.frame_w);
    let mut max_err = 0.0f64;
    for &t_cut in &[0usize, 3, 7] {
        let mut perturbed = clip.clone();
        for ch in 0..3 {
            for t in (t_cut + 1)..8 {
                let at = (ch * 8 + t) * h * w;
                for v in &mut perturbed.data_mut()[at..at + h * w] {
                    *v = 1.0 - *v;
                }
            }
        }
        let out = model.forward_parallel(&perturbed).unwrap();
        for t in 0..=t_cut {
            for i in 0..c {
                let a = base.features.data()[t * c + i] as f64;
                let b = out.features.data()[t * c + i] as f64;
                max_err = max_err.max((a - b).abs());
            }
        }
    }
    report(
        2,
        "causality",
        max_err <= 1e-6,
        format!("past-frame max err {max_err:.2e} over cuts {{0,3,7}} (tol 1e-6)"),
    )
}

fn criterion_3() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err = 0.0f64;
    let mut fold_bitwise = true;
    for _ in 0..100 {
        let (seq, heads, state) = (
            rng.gen_range(1..=64),
            rng.gen_range(1..=4),
            rng.gen_range(1..=16),
        );
        let params = SsmParams::<f32> {
            a: Tensor::from_vec(
                &[heads, state],
                (0..heads * state)
                    .map(|_| -rng.gen_range(0.05..3.0f32))
                    .collect(),
            ),
            b: Tensor::from_vec(
                &[seq, heads, state],
                (0..seq * heads * state)
                    .map(|_| rng.gen_range(-1.0..1.0f32))
                    .collect(),
            ),
            c: Tensor::from_vec(
                &[seq, heads, state],
                (0..seq * heads * state)
                    .map(|_| rng.gen_range(-1.0..1.0f32))
                    .collect(),
            ),
            delta: Tensor::from_vec(
                &[seq, heads],
                (0..seq * heads)
                    .map(|_| rng.gen_range(1e-3..0.5f32))
                    .collect(),
            ),
        };
        let u = Tensor::from_vec(
            &[seq, heads],
            (0..seq * heads)
                .map(|_| rng.gen_range(-1.0..1.0f32))
                .collect(),
        );
        let d = discretize(&params).unwrap();
        let h0 = ScanState::zeros(heads, state);
        let (y_naive, _) = scan_naive(&d, &params.c, &u, &h0).unwrap();
        let (y_par, _) = scan_parallel(&d, &params.c, &u, &h0).unwrap();
        max_err = max_err.max(y_naive.max_abs_diff(&y_par));
        // fold scan_step token by token; must be bitwise equal to the naive scan
        let lane = heads * state;
        let mut h = ScanState::zeros(heads, state);
        for t in 0..seq {
            let y_t = scan_step(
                &d.a_bar.data()[t * lane..(t + 1) * lane],
                &d.b_bar.data()[t * lane..(t + 1) * lane],
                &params.c.data()[t * lane..(t + 1) * lane],
                &u.data()[t * heads..(t + 1) * heads],
                &mut h,
            )
            .unwrap();
            for hd in 0..heads {
                if y_t[hd].to_bits() != y_naive.data()[t * heads + hd].to_bits() {
                    fold_bitwise = false;
                }
            }
        }
    }
    report(
        3,
        "scan oracle",
        max_err <= 1e-5 && fold_bitwise,
        format!(
            "parallel-vs-naive max err {max_err:.2e} over 100 cases (tol 1e-5), step fold bitwise: {fold_bitwise}"
        ),
    )
}

fn criterion_4() -> Criterion {
    // golden scalar: A=-1, delta=ln2, B=1 -> a_bar = b_bar = 0.5
    let params = SsmParams {
        a: Tensor::from_vec(&[1, 1], vec![-1.0f64]),
        b: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        c: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        delta: Tensor::from_vec(&[1, 1], vec![std::f64::consts::LN_2]),
    };
    let d = discretize(&params).unwrap();
    let golden_err = (d.a_bar.data()[0] - 0.5)
        .abs()
        .max((d.b_bar.data()[0] - 0.5).abs());
    // small-delta limit: b_bar -> delta * B
    let small = SsmParams {
        a: Tensor::from_vec(&[1, 1], vec![-2.0f64]),
        b: Tensor::from_vec(&[1, 1, 1], vec![0.7]),
        c: Tensor::from_vec(&[1, 1, 1], vec![1.0]),
        delta: Tensor::from_vec(&[1, 1], vec![1e-6]),
    };
    let ds = discretize(&small).unwrap();
    let limit_err = (ds.b_bar.data()[0] - 1e-6 * 0.7).abs();
    report(
        4,
        "ZOH discretization",
        golden_err <= 1e-12 && limit_err <= 1e-8,
        format!("half-life err {golden_err:.2e} (tol 1e-12), small-delta err {limit_err:.2e} (tol 1e-8)"),
    )
}

fn criterion_5() -> Criterion {
    let cfg = PretrainConfig::tiny();
    let model = PretrainModel::<f64>::init(cfg, 5).unwrap();
    let n_params = model.param_count();
    let teacher = ReferenceTeacher::init(cfg.backbone, cfg.teacher_dim, 1, 50).unwrap();
    let video = synthetic_clip::<f64>(2, cfg.backbone.frame_h, cfg.backbone.frame_w, 51);
    let plan = make_mask(2 * cfg.backbone.patches(), cfg.mask_ratio, 52).unwrap();
    let feats = teacher.features(&video).unwrap();
    let flat = model.flat_params();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for &alpha in &[0.0, 0.25] {
        let (_, grads) = grad_total(&video, &model, &teacher, &plan, alpha).unwrap();
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += eps;
            let up = loss_total(&video, &model.from_slice(&p), &feats, &plan, alpha)
                .unwrap()
                .l_total;
            p[i] = flat[i] - eps;
            let dn = loss_total(&video, &model.from_slice(&p), &feats, &plan, alpha)
                .unwrap()
                .l_total;
            let fd = (up - dn) / (2.0 * eps);
            worst = worst.max((grads[i] - fd).abs() / fd.abs().max(1e-6));
        }
    }
    report(
        5,
        "gradient correctness",
        n_params <= 5000 && worst <= 1e-3,
        format!("{n_params} params (<= 5000), worst rel err {worst:.2e} over alpha {{0, 0.25}} (tol 1e-3)"),
    )
}

fn criterion_6() -> Criterion {
    let cfg = PretrainConfig::tiny();
    let bb = cfg.backbone;
    let video = synthetic_clip::<f64>(2, bb.frame_h, bb.frame_w, 60);
    let plan = make_mask(2 * bb.patches(), 0.75, 61).unwrap();
    // l_rec at perfect reconstruction
    let d = bb.patch_dim();
    let p_count = bb.patches();
    let mut x_hat = Tensor::zeros(&[1, plan.omega().len(), d]);
    for (j, &idx) in plan.omega().iter().enumerate() {
        let gt = Backbone::patch_pixels(&video, &bb, 0, idx / p_count, idx % p_count);
        x_hat.data_mut()[j * d..(j + 1) * d].copy_from_slice(&gt);
    }
    let rec_zero = loss_rec(&video, &x_hat, &plan, &bb).unwrap() == 0.0;
    // 1000 random pairs stay in [0, 2]
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut in_range = true;
    let pair_plan = make_mask(2, 0.5, 0).unwrap();
    for _ in 0..1000 {
        let td = rng.gen_range(1..8);
        let x_t = Tensor::from_vec(
            &[1, 2, td],
            (0..2 * td).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        );
        let x_f = Tensor::from_vec(
            &[1, 1, td],
            (0..td).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        );
        let (l, _): (f64, usize) = loss_align(&x_f, &x_t, &pair_plan).unwrap();
        if !(0.0..=2.0).contains(&l) {
            in_range = false;
        }
    }
    // exact 0 / 2 at identical / antipodal (exactly representable vectors)
    let x_t = Tensor::from_vec(&[1, 2, 2], vec![0.0, 0.0, 2.0, 0.0]);
    let same = Tensor::from_vec(&[1, 1, 2], vec![2.0, 0.0]);
    let anti = Tensor::from_vec(&[1, 1, 2], vec![-2.0, 0.0]);
    let (l_same, _) = loss_align(&same, &x_t, &pair_plan).unwrap();
    let (l_anti, _) = loss_align(&anti, &x_t, &pair_plan).unwrap();
    let exact = l_same == 0.0 && l_anti == 2.0;
    // affine in alpha to 1 ulp
    let model = PretrainModel::<f64>::init(cfg, 63).unwrap();
    let teacher = ReferenceTeacher::init(bb, cfg.teacher_dim, 1, 64).unwrap();
    let feats = teacher_features_as::<f64>(&teacher, &video).unwrap();
    let o0 = loss_total(&video, &model, &feats, &plan, 0.0).unwrap();
    let oa = loss_total(&video, &model, &feats, &plan, 0.25).unwrap();
    let ob = loss_total(&video, &model, &feats, &plan, 0.5).unwrap();
    let ulp = (o0.l_total * f64::EPSILON).abs().max(f64::EPSILON);
    let affine_err = ((ob.l_total - o0.l_total) - 2.0 * (oa.l_total - o0.l_total)).abs();
    let identity = oa.l_total == oa.l_rec + 0.25 * oa.l_align && o0.l_total == o0.l_rec;
    let affine = affine_err <= 2.0 * ulp && identity;
    report(
        6,
        "loss properties",
        rec_zero && in_range && exact && affine,
        format!(
            "perfect-rec zero: {rec_zero}, 1000 pairs in [0,2]: {in_range}, exact 0/2: {exact}, alpha-affine err {affine_err:.2e}"
        ),
    )
}

fn criterion_7() -> Criterion {
    let cfg = PretrainConfig::tiny();
    let teacher = ReferenceTeacher::init(cfg.backbone, cfg.teacher_dim, 1, 71).unwrap();
    let clips = vec![synthetic_clip::<f64>(
        2,
        cfg.backbone.frame_h,
        cfg.backbone.frame_w,
        72,
    )];
    let mut detail = String::new();
    let mut passed = true;
    for &alpha in &[0.0, 0.25] {
        let mut model = PretrainModel::<f64>::init(cfg, 70).unwrap();
        let traj = train_toy(&mut model, &teacher, &clips, 200, 5e-3, alpha, 73).unwrap();
        let (first, last) = (traj[0].l_total, traj[traj.len() - 1].l_total);
        let ok = last <= 0.1 * first;
        passed &= ok;
        detail.push_str(&format!(
            "alpha={alpha}: {first:.4} -> {last:.4} (ratio {:.3}); ",
            last / first
        ));
    }
    report(7, "toy pretraining", passed, format!("{detail}tol ratio 0.1 over 200 steps"))
}

fn criterion_8() -> Criterion {
    // small dims keep the O(T^2) recompute baselines inside the time budget;
    // the latency-vs-T trend is what is under test, not absolute cost
    let mut backbone = BackboneConfig::desk_default();
    backbone.frame_h = 16;
    backbone.frame_w = 16;
    backbone.channels = 32;
    backbone.head_hidden = 32;
    backbone.m_spatial = 1;
    backbone.n_temporal = 1;
    let config = BenchConfig {
        backbone,
        lengths: vec![32, 128],
        warmup: 8,
        repeats: 3,
        seed: 80,
        streaming_only: false,
    };
    let rep = run_bench::<f32>(&config).unwrap();
    // mean of per-frame minima across repeats: scheduler spikes on a shared
    // machine would otherwise dominate the raw mean
    let s32 = rep.robust_mean_us(MODE_STREAMING, 32).unwrap();
    let s128 = rep.robust_mean_us(MODE_STREAMING, 128).unwrap();
    let rc32 = rep.robust_mean_us(MODE_RECOMPUTE_CAUSAL, 32).unwrap();
    let rc128 = rep.robust_mean_us(MODE_RECOMPUTE_CAUSAL, 128).unwrap();
    let rb32 = rep.robust_mean_us(MODE_RECOMPUTE_BIDI, 32).unwrap();
    let rb128 = rep.robust_mean_us(MODE_RECOMPUTE_BIDI, 128).unwrap();
    let stream_ratio = s128 / s32;
    let causal_ratio = rc128 / rc32;
    let bidi_ratio = rb128 / rb32;
    report(
        8,
        "throughput trend",
        stream_ratio <= 1.2 && causal_ratio >= 2.0 && bidi_ratio >= 2.0,
        format!(
            "streaming T=32->128 mean ratio {stream_ratio:.3} (<= 1.2), recompute-causal {causal_ratio:.2}x (>= 2), recompute-bidirectional {bidi_ratio:.2}x (>= 2)"
        ),
    )
}

fn criterion_9() -> Criterion {
    let cfg = BackboneConfig::desk_default();
    let model: Backbone<f32> = Backbone::init(cfg, 90).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    model.save_checkpoint(&ckpt).unwrap();
    let loaded: Backbone<f32> = Backbone::load_checkpoint(&ckpt).unwrap();
    let mut ckpt_bitwise = true;
    model.visit(&mut |name, t| {
        let mut other = None;
        loaded.visit(&mut |n2, t2| {
            if n2 == name {
                other = Some(t2.data().to_vec());
            }
        });
        let other = other.expect("same param set");
        for (a, b) in t.data().iter().zip(&other) {
            if a.to_bits() != b.to_bits() {
                ckpt_bitwise = false;
            }
        }
    });

    // stream 4 frames, snapshot, then compare resumed vs uninterrupted
    let clip = synthetic_clip::<f32>(8, cfg.frame_h, cfg.frame_w, 91);
    let mut session = session_new(&model);
    for t in 0..4 {
        session_step(&model, &mut session, &extract_frame(&clip, 0, t)).unwrap();
    }
    let snap = session_save(&session);
    let mut resumed = session_load(&snap, &model).unwrap();
    let mut session_bitwise = true;
    for t in 4..8 {
        let frame = extract_frame(&clip, 0, t);
        let a = session_step(&model, &mut session, &frame).unwrap();
        let b = session_step(&model, &mut resumed, &frame).unwrap();
        for (x, y) in a.features.iter().zip(&b.features) {
            if x.to_bits() != y.to_bits() {
                session_bitwise = false;
            }
        }
    }
    report(
        9,
        "persistence",
        ckpt_bitwise && session_bitwise,
        format!("checkpoint bit-exact: {ckpt_bitwise}, resumed session bitwise: {session_bitwise}"),
    )
}

#[test]
fn acceptance() {
    let steps: Vec<fn() -> Criterion> = vec![
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut all = true;
    for step in steps {
        let start = std::time::Instant::now();
        let c = step();
        println!("{} [{:.1}s]", c.line, start.elapsed().as_secs_f64());
        all &= c.passed;
    }
    assert!(all, "at least one acceptance criterion failed");
}
