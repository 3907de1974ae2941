//! Saves a model checkpoint, loads it back, and confirms the reloaded model
//! produces bit-identical outputs. Also shows the dtype guard: an f32
//! checkpoint refuses to load as f64.
//!
//! Run with: cargo run --example checkpoint_roundtrip

use streamssm::backbone::{Backbone, BackboneConfig};
use streamssm::io::synthetic_clip;

fn main() -> Result<(), streamssm::ModelError> {
    let config = BackboneConfig::desk_default();
    let model: Backbone<f32> = Backbone::init(config, 1)?;
    let dir = std::env::temp_dir().join("streamssm_ckpt_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    model.save_checkpoint(&path)?;
    println!(
        "wrote {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path)?.len()
    );

    let reloaded: Backbone<f32> = Backbone::load_checkpoint(&path)?;
    let clip = synthetic_clip::<f32>(4, config.frame_h, config.frame_w, 2);
    let a = model.forward_parallel(&clip)?;
    let b = reloaded.forward_parallel(&clip)?;
    let bitwise = a
        .features
        .data()
        .iter()
        .zip(b.features.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!("reloaded model output bitwise-identical: {bitwise}");

    match Backbone::<f64>::load_checkpoint(&path) {
        Err(e) => println!("loading as f64 correctly fails: {e}"),
        Ok(_) => println!("unexpected: dtype mismatch not detected"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
