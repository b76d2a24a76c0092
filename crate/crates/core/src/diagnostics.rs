//! Finite-difference checks of every objective term on random inputs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{grad_check, EngineError, GradCheckConfig, GradReport, ScalarField, Value, Var};
use crate::frame::Frame;
use crate::geometry::{euler_to_rotation, resample, warp, Intrinsics, Var3};
use crate::losses::{
    cycle_consistency, depth_smoothness, group_smoothness, pair_loss, photometric_loss, sparsity_l_half,
    HyperParams, MotionVars,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    GroupSmooth,
    Sparsity,
    DepthSmooth,
    Cycle,
    Photometric,
    PairTotal,
}

impl LossName {
    pub const ALL: [LossName; 6] = [
        LossName::GroupSmooth,
        LossName::Sparsity,
        LossName::DepthSmooth,
        LossName::Cycle,
        LossName::Photometric,
        LossName::PairTotal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossName::GroupSmooth => "group_smooth",
            LossName::Sparsity => "sparsity",
            LossName::DepthSmooth => "depth_smooth",
            LossName::Cycle => "cycle",
            LossName::Photometric => "photometric",
            LossName::PairTotal => "pair_total",
        }
    }

    /// Terms evaluated through bilinear sampling get the looser bound.
    pub fn through_warp(&self) -> bool {
        matches!(self, LossName::Cycle | LossName::Photometric | LossName::PairTotal)
    }

    pub fn tolerance(&self) -> f64 {
        if self.through_warp() {
            5e-3
        } else {
            1e-3
        }
    }
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown loss {0:?}; expected one of group_smooth, sparsity, depth_smooth, cycle, photometric, pair_total")]
pub struct UnknownLoss(pub String);

impl FromStr for LossName {
    type Err = UnknownLoss;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossName::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLoss(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCheck {
    pub loss: LossName,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub passed: bool,
    pub report: GradReport,
}

struct Inputs {
    frame_a: Frame,
    frame_b: Frame,
    camera: Intrinsics,
    hyper: HyperParams,
}

fn field(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> ScalarField {
    let values = (0..h * w).map(|_| rng.gen_range(lo..hi)).collect();
    ScalarField::new(h, w, values).expect("check resolution")
}

fn signed(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> ScalarField {
    field(rng, h, w, -scale, scale)
}

fn scalars(rng: &mut ChaCha8Rng, scale: [f64; 3]) -> Vec<Value> {
    scale.iter().map(|&s| Value::Scalar(rng.gen_range(-s..s))).collect()
}

/// Smooth random image so that sub-pixel shifts stay informative.
fn smooth_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    let mut wave = || {
        let (a, b, c, d) = (
            rng.gen_range(0.4..1.2),
            rng.gen_range(0.4..1.2),
            rng.gen_range(0.0..6.3),
            rng.gen_range(0.1..0.3),
        );
        ScalarField::from_fn(h, w, move |r, col| 0.5 + d * (a * col as f64 + b * r as f64 + c).sin())
    };
    Frame::new(wave(), wave(), wave())
}

fn motion<'t>(v: &[Var<'t>]) -> MotionVars<'t> {
    MotionVars {
        rotation: euler_to_rotation([v[0], v[1], v[2]]),
        t_ego: Var3::new(v[3], v[4], v[5]),
        t_obj: Var3::new(v[6], v[7], v[8]),
    }
}

/// Leaves of one direction: euler (3), ego translation (3), residual (3 fields).
fn motion_leaves(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Value> {
    let mut out = scalars(rng, [0.02, 0.02, 0.02]);
    out.extend(scalars(rng, [0.05, 0.05, 0.1]));
    for _ in 0..3 {
        out.push(signed(rng, h, w, 0.03).into());
    }
    out
}

/// Runs the central-difference check of `loss` on seeded random inputs.
pub fn check_loss(loss: LossName, height: usize, width: usize, seed: u64) -> Result<LossCheck, EngineError> {
    let (h, w) = (height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let inputs = Inputs {
        frame_a: smooth_frame(&mut rng, h, w),
        frame_b: smooth_frame(&mut rng, h, w),
        camera: Intrinsics::new(w as f64, w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
        hyper: HyperParams::default(),
    };
    let mut config = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    if loss.through_warp() {
        config.eps = 1e-6;
    }
    let depth = |rng: &mut ChaCha8Rng| -> Value { field(rng, h, w, 3.0, 5.0).into() };
    let inp = &inputs;

    let report = match loss {
        LossName::GroupSmooth => {
            let leaves: Vec<Value> = (0..3).map(|_| signed(&mut rng, h, w, 1.0).into()).collect();
            grad_check(|_, v| group_smoothness(&Var3::new(v[0], v[1], v[2])), &leaves, &config)?
        }
        LossName::Sparsity => {
            let leaves: Vec<Value> = (0..3).map(|_| field(&mut rng, h, w, 0.1, 1.0).into()).collect();
            let eps = inp.hyper.eps_norm;
            grad_check(|_, v| sparsity_l_half(&Var3::new(v[0], v[1], v[2]), eps), &leaves, &config)?
        }
        LossName::DepthSmooth => {
            let leaves = vec![depth(&mut rng)];
            grad_check(
                |_, v| depth_smoothness(v[0].recip(), &inp.frame_a, &inp.hyper),
                &leaves,
                &config,
            )?
        }
        LossName::Cycle => {
            let mut leaves = vec![depth(&mut rng)];
            leaves.extend(motion_leaves(&mut rng, h, w));
            leaves.extend(motion_leaves(&mut rng, h, w));
            let mask_seed = rng.gen::<u64>();
            grad_check(
                |tape, v| {
                    let fwd = motion(&v[1..10]);
                    let bwd = motion(&v[10..19]);
                    let (t_f, t_b) = (fwd.total(), bwd.total());
                    let wr = warp(v[0], &inp.camera.constants(tape), &fwd.rotation, &t_f);
                    let (t_b_warped, m) = t_b.sample_bilinear(wr.u, wr.v);
                    let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
                    let keep = ScalarField::from_fn(h, w, |_, _| (mrng.gen_bool(0.8)) as u8 as f64);
                    let mask = wr.mask.zip_map(&m, |a, b| a * b).zip_map(&keep, |a, b| a * b);
                    cycle_consistency(&fwd.rotation, &t_f, &bwd.rotation, &t_b_warped, &mask, &inp.hyper)
                },
                &leaves,
                &config,
            )?
        }
        LossName::Photometric => {
            let mut leaves = vec![depth(&mut rng), depth(&mut rng)];
            leaves.extend(motion_leaves(&mut rng, h, w));
            grad_check(
                |tape, v| {
                    let m = motion(&v[2..11]);
                    let wr = warp(v[0], &inp.camera.constants(tape), &m.rotation, &m.total());
                    let s = resample(&inp.frame_b.constants(tape), v[1], &wr);
                    photometric_loss(&inp.frame_a, &s.channels, wr.z, s.depth, &s.mask, &inp.hyper)
                },
                &leaves,
                &config,
            )?
        }
        LossName::PairTotal => {
            let mut leaves = vec![depth(&mut rng), depth(&mut rng)];
            leaves.extend(motion_leaves(&mut rng, h, w));
            leaves.extend(motion_leaves(&mut rng, h, w));
            let cam = [inp.camera.fx, inp.camera.fy, inp.camera.cx, inp.camera.cy];
            leaves.extend(cam.iter().map(|&c| Value::Scalar(c)));
            grad_check(
                |_, v| {
                    let camera = crate::geometry::CameraVars {
                        fx: v[20],
                        fy: v[21],
                        cx: v[22],
                        cy: v[23],
                    };
                    pair_loss(
                        &inp.frame_a,
                        &inp.frame_b,
                        v[0],
                        v[1],
                        &motion(&v[2..11]),
                        &motion(&v[11..20]),
                        &camera,
                        &inp.hyper,
                    )
                    .total
                },
                &leaves,
                &config,
            )?
        }
    };
    let tolerance = loss.tolerance();
    Ok(LossCheck {
        loss,
        height,
        width,
        seed,
        tolerance,
        passed: report.max_rel_error < tolerance,
        report,
    })
}
