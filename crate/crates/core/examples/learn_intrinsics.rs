//! Recovers the focal lengths together with depth and motion, starting
//! from the generic guess fx = fy = width.

use dmk::fit::{fit_pair, FitConfig};
use dmk::synth::{render_pair, SceneSpec};

fn main() {
    let spec = SceneSpec::ego_demo();
    let sample = render_pair(&spec, 0).unwrap();
    let config = FitConfig { learn_intrinsics: true, ..FitConfig::default() };
    let fit = fit_pair(&sample.frame_a, &sample.frame_b, None, &config).unwrap();
    let (k, t) = (fit.intrinsics, spec.intrinsics);
    println!("fitted fx {:.2} fy {:.2} cx {:.2} cy {:.2}", k.fx, k.fy, k.cx, k.cy);
    println!("true   fx {:.2} fy {:.2} cx {:.2} cy {:.2}", t.fx, t.fy, t.cx, t.cy);
    println!("focal error {:.1}% / {:.1}%", 100.0 * (k.fx - t.fx).abs() / t.fx, 100.0 * (k.fy - t.fy).abs() / t.fy);
}
