//! Fits depth and camera motion to the static textured scene and reports
//! median-scaled depth error and the ego translation direction.
//!
//! `cargo run --release --example fit_ego_motion -- [steps]`

use std::time::Instant;

use dmk::fit::{fit_pair, FitConfig};
use dmk::metrics::{score, Estimate, DEFAULT_CUTOFF};
use dmk::synth::{render_pair, SceneSpec};

fn main() {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let sample = render_pair(&SceneSpec::ego_demo(), 0).unwrap();
    let config = FitConfig { steps, ..FitConfig::default() };

    let start = Instant::now();
    let fit = fit_pair(&sample.frame_a, &sample.frame_b, Some(sample.intrinsics()), &config).unwrap();
    println!("{steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    for e in fit.trace.iter().step_by(8) {
        println!("  step {:>5}  loss {:.5}", e.step, e.losses.total);
    }

    let eval = score(
        &Estimate { depth: &fit.depth_a, t_obj: &fit.t_obj_ab, ego_translation: fit.ego_ab.translation },
        &Estimate { depth: &sample.depth_a, t_obj: &sample.t_obj_ab, ego_translation: sample.ego_ab.translation },
        &sample.valid_a,
        &sample.object_mask_a(),
        DEFAULT_CUTOFF,
        true,
    )
    .unwrap();
    println!("scale {:.3}  abs_rel {:.4}  delta1 {:.3}", eval.scale, eval.depth.abs_rel, eval.depth.delta1);
    println!("ego translation {:?} vs {:?}", fit.ego_ab.translation, sample.ego_ab.translation);
    println!("direction error {:.2} deg", eval.motion.ego_angle_deg);
}
