//! Masked-reconstruction + teacher-alignment pretraining on a synthetic
//! clip, small enough to overfit in seconds. Losses are computed with exact
//! tape gradients; the example prints the trajectory for alpha = 0.25 and
//! the alpha = 0 ablation.
//!
//! Run with: cargo run --release --example toy_pretraining

use streamssm::io::synthetic_clip;
use streamssm::pretrain::{train_toy, PretrainConfig, PretrainModel, ReferenceTeacher};

fn main() -> Result<(), streamssm::ModelError> {
    let config = PretrainConfig::tiny();
    let teacher = ReferenceTeacher::init(config.backbone, config.teacher_dim, 1, 11)?;
    let clips = vec![synthetic_clip::<f64>(
        2,
        config.backbone.frame_h,
        config.backbone.frame_w,
        5,
    )];
    for alpha in [0.25, 0.0] {
        let mut model = PretrainModel::<f64>::init(config, 3)?;
        println!(
            "alpha = {alpha}: {} trainable parameters",
            model.param_count()
        );
        let trajectory = train_toy(&mut model, &teacher, &clips, 120, 5e-3, alpha, 9)?;
        for record in trajectory.iter().step_by(20) {
            println!(
                "  step {:>4}  l_total {:.5}  l_rec {:.5}  l_align {:.5}",
                record.step, record.l_total, record.l_rec, record.l_align
            );
        }
        let (first, last) = (&trajectory[0], trajectory.last().unwrap());
        println!(
            "  final/initial loss ratio: {:.4}",
            last.l_total / first.l_total
        );
    }
    Ok(())
}
