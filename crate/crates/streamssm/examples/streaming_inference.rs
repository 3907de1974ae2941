//! Processes a synthetic clip one frame at a time and shows that the
//! streaming path reproduces the full parallel forward pass, then snapshots
//! the session mid-stream and resumes it.
//!
//! Run with: cargo run --example streaming_inference

use streamssm::backbone::{extract_frame, Backbone, BackboneConfig};
use streamssm::io::synthetic_clip;
use streamssm::streaming::{session_load, session_new, session_save, session_step};

fn main() -> Result<(), streamssm::ModelError> {
    let config = BackboneConfig::desk_default();
    let model: Backbone<f32> = Backbone::init(config, 42)?;
    let time = 8;
    let clip = synthetic_clip::<f32>(time, config.frame_h, config.frame_w, 7);

    // reference: the whole clip at once
    let parallel = model.forward_parallel(&clip)?;

    // streaming: one frame at a time, constant per-frame state
    let mut session = session_new(&model);
    println!(
        "streaming {} frames, carried state = {} floats per frame",
        time,
        session.state_float_count()
    );
    let c = config.channels;
    for t in 0..time {
        let out = session_step(&model, &mut session, &extract_frame(&clip, 0, t))?;
        let reference = &parallel.features.data()[t * c..(t + 1) * c];
        let max_diff = out
            .features
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        println!("frame {t}: |streaming - parallel| = {max_diff:.2e}");
    }

    // snapshot / resume round-trip continues bitwise
    let snapshot = session_save(&session);
    let mut resumed = session_load(&snapshot, &model)?;
    let next = synthetic_clip::<f32>(1, config.frame_h, config.frame_w, 8);
    let frame = extract_frame(&next, 0, 0);
    let a = session_step(&model, &mut session, &frame)?;
    let b = session_step(&model, &mut resumed, &frame)?;
    let bitwise = a
        .features
        .iter()
        .zip(&b.features)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!(
        "snapshot: {} bytes, resumed step bitwise-identical: {bitwise}",
        snapshot.len()
    );
    Ok(())
}
