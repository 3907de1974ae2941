//! Small latency sweep: streaming per-frame cost stays flat as the clip
//! grows, while recomputing the whole history per frame grows linearly.
//!
//! Run with: cargo run --release --example latency_bench
//! (the full sweep at larger dims is `streamssm bench`)

use streamssm::bench::{run_bench, BenchConfig};
use streamssm::backbone::BackboneConfig;

fn main() -> Result<(), streamssm::ModelError> {
    let config = BenchConfig {
        backbone: BackboneConfig::desk_default(),
        lengths: vec![8, 32],
        warmup: 4,
        repeats: 3,
        seed: 0,
        streaming_only: false,
    };
    let report = run_bench::<f32>(&config)?;
    println!("clock floor: {:.3} us", report.clock_floor_us);
    println!(
        "{:<26} {:>5} {:>12} {:>12} {:>10}",
        "mode", "T", "mean_us", "p95_us", "fps"
    );
    for s in &report.summary {
        println!(
            "{:<26} {:>5} {:>12.1} {:>12.1} {:>10.1}",
            s.mode, s.t, s.mean_us, s.p95_us, s.fps
        );
    }
    Ok(())
}
