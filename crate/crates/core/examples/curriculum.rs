// The hardness schedule and its effect on the hard-negative loss.

use patchsem::{gamma_at, hdce, ContrastConfig, CurriculumSchedule, RngState, ScheduleShape};

pub fn run_example() -> patchsem::Result<Vec<f64>> {
    let linear = CurriculumSchedule { gamma_min: 0.0, gamma_max: 2.0, warmup_steps: 100, shape: ScheduleShape::Linear };
    let cosine = CurriculumSchedule { shape: ScheduleShape::Cosine, ..linear };
    println!("step  linear  cosine");
    for t in [0, 25, 50, 75, 100, 150] {
        println!("{t:>4}  {:.4}  {:.4}", gamma_at(&linear, t), gamma_at(&cosine, t));
    }

    // With w == z the per-positive loss only grows as negatives are tilted
    // toward the anchor.
    let z = RngState::new(3).unit_rows(12, 6);
    let mut losses = Vec::new();
    for gamma in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let r = hdce(&z, &z, &ContrastConfig { tau: 0.5, gamma, detach_weights: false })?;
        println!("gamma {gamma:.1}: loss {:.6}", r.loss);
        losses.push(r.loss);
    }
    Ok(losses)
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    run_example().map(|_| ())
}
