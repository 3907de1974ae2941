//! Command-line harness: latency benchmarks, self-verification, the toy
//! pretraining loop, and synthetic data generation.
//!
//! Exit codes: 0 success, 1 a check or run failed, 2 configuration error.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use streamssm::bench::{run_bench, write_csv, write_json, BenchConfig};
use streamssm::error::ModelError;
use streamssm::io::{synthetic_clip, write_tensor};
use streamssm::pretrain::{train_toy, PretrainConfig, PretrainModel, ReferenceTeacher, TrainRecord};
use streamssm::verify::{run_verify, VerifyOptions};

#[derive(Parser)]
#[command(name = "streamssm", version, about = "streaming SSM video backbone harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// JSON config file (BenchConfig for `bench`, PretrainConfig for
    /// `pretrain-toy`); defaults are used when omitted
    #[arg(long, global = true, env = "STREAMSSM_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0, env = "STREAMSSM_SEED")]
    seed: u64,

    /// Output file for `bench` (CSV), output directory for `pretrain-toy`
    /// and `gen-data`
    #[arg(long, global = true, env = "STREAMSSM_OUT")]
    out: Option<PathBuf>,

    /// Run in f64 instead of f32
    #[arg(long = "f64", global = true, env = "STREAMSSM_F64")]
    use_f64: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-frame latency: streaming vs full recompute baselines
    Bench {
        /// Skip the recompute baselines
        #[arg(long)]
        streaming_only: bool,
    },
    /// Run the self-check suites and report max errors vs tolerances
    Verify {
        /// Deliberately corrupt the reference path; the run must then fail
        #[arg(long)]
        inject_fault: bool,
    },
    /// Masked-reconstruction + alignment training on synthetic clips
    PretrainToy {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 5e-3)]
        lr: f64,
    },
    /// Write synthetic clips as raw tensor files
    GenData {
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn exit_code_for(err: &ModelError) -> i32 {
    match err {
        ModelError::InvalidConfig(_) | ModelError::ConfigMismatch(_) => 2,
        _ => 1,
    }
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read config {}: {e}", path.display());
        2
    })?;
    serde_json::from_str(&text).map_err(|e| {
        eprintln!("error: bad config {}: {e}", path.display());
        2
    })
}

fn run(cli: Cli) -> i32 {
    match cli.cmd {
        Cmd::Bench { streaming_only } => cmd_bench(&cli, streaming_only),
        Cmd::Verify { inject_fault } => cmd_verify(&cli, inject_fault),
        Cmd::PretrainToy { steps, lr } => cmd_pretrain(&cli, steps, lr),
        Cmd::GenData {
            clips,
            frames,
            height,
            width,
        } => cmd_gen_data(&cli, clips, frames, height, width),
    }
}

fn cmd_bench(cli: &Cli, streaming_only: bool) -> i32 {
    let mut config: BenchConfig = match &cli.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(code) => return code,
        },
        None => BenchConfig::default(),
    };
    config.seed = cli.seed;
    config.streaming_only |= streaming_only;
    let report = match if cli.use_f64 {
        run_bench::<f64>(&config)
    } else {
        run_bench::<f32>(&config)
    } {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    println!("clock floor: {:.3} us", report.clock_floor_us);
    println!("{:<26} {:>5} {:>12} {:>12} {:>12} {:>10}", "mode", "T", "mean_us", "median_us", "p95_us", "fps");
    for s in &report.summary {
        println!(
            "{:<26} {:>5} {:>12.1} {:>12.1} {:>12.1} {:>10.1}",
            s.mode, s.t, s.mean_us, s.median_us, s.p95_us, s.fps
        );
    }
    let csv_path = cli.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    if let Err(e) = write_csv(&csv_path, &report) {
        eprintln!("error: {e}");
        return 1;
    }
    let json_path = csv_path.with_extension("json");
    if let Err(e) = write_json(&json_path, &report) {
        eprintln!("error: {e}");
        return 1;
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    0
}

fn cmd_verify(cli: &Cli, inject_fault: bool) -> i32 {
    let report = run_verify(&VerifyOptions {
        use_f64: cli.use_f64,
        seed: cli.seed,
        inject_fault,
    });
    for s in &report.suites {
        println!(
            "{} {:<24} max_error={:.3e} tolerance={:.0e}  ({})",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.max_error,
            s.tolerance,
            s.detail
        );
    }
    if let Some(out) = &cli.out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = std::fs::write(out, json) {
            eprintln!("error: cannot write {}: {e}", out.display());
            return 1;
        }
    }
    if report.passed {
        println!("verify: all {} suites passed", report.suites.len());
        0
    } else {
        println!("verify: FAILED");
        1
    }
}

fn write_trajectory(path: &Path, records: &[TrainRecord], with_align: bool) -> std::io::Result<()> {
    use std::io::Write as _;
    let mut file = std::fs::File::create(path)?;
    if with_align {
        writeln!(file, "step,l_total,l_rec,l_align")?;
        for r in records {
            writeln!(file, "{},{:.9},{:.9},{:.9}", r.step, r.l_total, r.l_rec, r.l_align)?;
        }
    } else {
        writeln!(file, "step,l_total,l_rec")?;
        for r in records {
            writeln!(file, "{},{:.9},{:.9}", r.step, r.l_total, r.l_rec)?;
        }
    }
    Ok(())
}

fn cmd_pretrain(cli: &Cli, steps: usize, lr: f64) -> i32 {
    let config: PretrainConfig = match &cli.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(code) => return code,
        },
        None => PretrainConfig::tiny(),
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }
    let teacher = match ReferenceTeacher::init(config.backbone, config.teacher_dim, 1, cli.seed ^ 1)
    {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let clips = vec![
        synthetic_clip::<f64>(2, config.backbone.frame_h, config.backbone.frame_w, cli.seed ^ 2),
        synthetic_clip::<f64>(2, config.backbone.frame_h, config.backbone.frame_w, cli.seed ^ 3),
    ];
    // one run with alignment on, one ablation with alpha = 0
    for (alpha, file, with_align) in [
        (config.alpha, "pretrain_align.csv", true),
        (0.0, "pretrain_noalign.csv", false),
    ] {
        let mut model = match PretrainModel::<f64>::init(config, cli.seed) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code_for(&e);
            }
        };
        let traj = match train_toy(&mut model, &teacher, &clips, steps, lr, alpha, cli.seed ^ 4) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code_for(&e);
            }
        };
        let (first, last) = (&traj[0], &traj[traj.len() - 1]);
        println!(
            "alpha={alpha}: l_total {:.6} -> {:.6} over {} steps",
            first.l_total, last.l_total, traj.len()
        );
        let path = out_dir.join(file);
        if let Err(e) = write_trajectory(&path, &traj, with_align) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return 1;
        }
        println!("wrote {}", path.display());
    }
    0
}

fn cmd_gen_data(cli: &Cli, clips: usize, frames: usize, height: usize, width: usize) -> i32 {
    if clips == 0 || frames == 0 || height == 0 || width == 0 {
        eprintln!("error: clips, frames, height, and width must all be positive");
        return 2;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }
    for i in 0..clips {
        let path = out_dir.join(format!("clip_{i:03}.ten"));
        let result = if cli.use_f64 {
            write_tensor(&path, &synthetic_clip::<f64>(frames, height, width, cli.seed + i as u64))
        } else {
            write_tensor(&path, &synthetic_clip::<f32>(frames, height, width, cli.seed + i as u64))
        };
        if let Err(e) = result {
            eprintln!("error: {e}");
            return 1;
        }
        println!("wrote {}", path.display());
    }
    0
}
