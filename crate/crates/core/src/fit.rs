//! Direct per-pair optimization of depth, motion and optionally intrinsics.
//!
//! Depth is decoded from unconstrained logits with softplus; the residual
//! fields and ego-motions are optimized as they are. Learnable intrinsics
//! are stored relative to the image size (`fx = W p0`, `fy = W p1`,
//! `cx = W p2`, `cy = H p3`) so one learning rate fits all four.

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, ScalarField, Tape, Var, VectorField3};
use crate::frame::Frame;
use crate::geometry::{euler_to_rotation, CameraVars, Intrinsics, RigidMotion, Var3};
use crate::losses::{pair_loss, HyperParams, LossValues, MotionVars};
use crate::metrics::median;

/// Ego translations shorter than this leave depth unobservable.
pub const NO_PARALLAX_NORM: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("invalid fit config: {0}")]
    Config(String),
    #[error("non-finite {component} at step {step}")]
    Divergence { step: usize, component: &'static str },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("empty evaluation mask")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub depth: f64,
    pub residual: f64,
    pub ego: f64,
    pub intrinsics: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            depth: 1e-2,
            residual: 1e-3,
            ego: 1e-3,
            intrinsics: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub schema: u32,
    pub steps: usize,
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Uniform jitter added to the initial depth logits, drawn from `seed`.
    pub init_jitter: f64,
    /// Initial constant depth.
    pub init_depth: f64,
    /// Record a loss breakdown every this many steps (and at the last step).
    pub log_every: usize,
    pub learn_intrinsics: bool,
    /// Steps at the start during which no pixel counts as occluded.
    pub occlusion_warmup: usize,
    /// Coarse-to-fine stages run on blurred frames before the full-detail
    /// phase; stage `k` of `n` applies `2 (n - k)` box-filter passes.
    pub blur_stages: usize,
    pub steps_per_blur_stage: usize,
    pub hyper: HyperParams,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schema: 1,
            steps: 2000,
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            init_jitter: 0.0,
            init_depth: 5.0,
            log_every: 50,
            learn_intrinsics: false,
            occlusion_warmup: 1000,
            blur_stages: 2,
            steps_per_blur_stage: 400,
            hyper: HyperParams::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.to_string()));
        if self.schema != 1 {
            return bad("unsupported schema");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        let lr = self.lr;
        if ![lr.depth, lr.residual, lr.ego, lr.intrinsics]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.init_depth > 0.0) || !(self.init_jitter >= 0.0) {
            return bad("adam_eps and init_depth must be positive, init_jitter non-negative");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if self.blur_stages > 0 && self.steps_per_blur_stage == 0 {
            return bad("steps_per_blur_stage must be at least 1 when blur_stages > 0");
        }
        self.hyper
            .validate()
            .map_err(|e| FitError::Config(e.to_string()))
    }
}

/// Inverse of softplus: `ln(e^d - 1)`.
pub fn softplus_inv(d: f64) -> f64 {
    d + (-(-d).exp()).ln_1p()
}

pub fn softplus(x: f64) -> f64 {
    crate::engine::softplus(x)
}

/// Optimized quantities in their unconstrained form.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub depth_logit_a: ScalarField,
    pub depth_logit_b: ScalarField,
    pub t_obj_ab: VectorField3,
    pub t_obj_ba: VectorField3,
    /// Euler angles then translation.
    pub ego_ab: [f64; 6],
    pub ego_ba: [f64; 6],
    /// Relative intrinsics `(fx/W, fy/W, cx/W, cy/H)`.
    pub intrinsics: [f64; 4],
}

impl FitParams {
    pub fn dims(&self) -> (usize, usize) {
        self.depth_logit_a.dims()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let (h, w) = self.dims();
        let (w, h) = (w as f64, h as f64);
        let p = self.intrinsics;
        Intrinsics::new(w * p[0], w * p[1], w * p[2], h * p[3])
    }

    fn motion(p: &[f64; 6]) -> RigidMotion {
        RigidMotion::new([p[0], p[1], p[2]], [p[3], p[4], p[5]])
    }
}

/// Initial parameters: constant depth, no motion. Without `intrinsics`
/// the camera starts at `fx = fy = W`, `cx = W/2`, `cy = H/2`.
pub fn init_params(height: usize, width: usize, intrinsics: Option<Intrinsics>, config: &FitConfig) -> FitParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let l0 = softplus_inv(config.init_depth);
    let mut logits = |_: usize| {
        let values = (0..height * width)
            .map(|_| {
                if config.init_jitter > 0.0 {
                    l0 + rng.gen_range(-config.init_jitter..config.init_jitter)
                } else {
                    l0
                }
            })
            .collect();
        ScalarField::new(height, width, values).expect("fit resolution")
    };
    let (w, h) = (width as f64, height as f64);
    let k = intrinsics.unwrap_or(Intrinsics::new(w, w, w / 2.0, h / 2.0));
    FitParams {
        depth_logit_a: logits(0),
        depth_logit_b: logits(1),
        t_obj_ab: VectorField3::zeros(height, width),
        t_obj_ba: VectorField3::zeros(height, width),
        ego_ab: [0.0; 6],
        ego_ba: [0.0; 6],
        intrinsics: [k.fx / w, k.fy / w, k.cx / w, k.cy / h],
    }
}

/// Adam with bias correction over one flat parameter block.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub losses: LossValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub depth_a: ScalarField,
    pub depth_b: ScalarField,
    pub t_obj_ab: VectorField3,
    pub t_obj_ba: VectorField3,
    pub ego_ab: RigidMotion,
    pub ego_ba: RigidMotion,
    pub intrinsics: Intrinsics,
    pub learned_intrinsics: bool,
    /// Breakdown at the logged steps.
    pub trace: Vec<TraceEntry>,
    /// Total loss at every step.
    pub totals: Vec<f64>,
    pub converged: bool,
    /// Ego translation too short for depth to be observable.
    pub no_parallax: bool,
}

struct Graph<'t> {
    la: Var<'t>,
    lb: Var<'t>,
    t_ab: Var3<'t>,
    t_ba: Var3<'t>,
    ego_ab: [Var<'t>; 6],
    ego_ba: [Var<'t>; 6],
    intr: [Var<'t>; 4],
}

fn build<'t>(tape: &'t Tape, p: &FitParams, learn_intrinsics: bool) -> Graph<'t> {
    let six = |v: &[f64; 6]| v.map(|x| tape.param(x));
    let intr = if learn_intrinsics {
        p.intrinsics.map(|x| tape.param(x))
    } else {
        p.intrinsics.map(|x| tape.scalar(x))
    };
    Graph {
        la: tape.param(p.depth_logit_a.clone()),
        lb: tape.param(p.depth_logit_b.clone()),
        t_ab: Var3::param_field(tape, &p.t_obj_ab),
        t_ba: Var3::param_field(tape, &p.t_obj_ba),
        ego_ab: six(&p.ego_ab),
        ego_ba: six(&p.ego_ba),
        intr,
    }
}

fn motion_vars<'t>(ego: &[Var<'t>; 6], t_obj: Var3<'t>) -> MotionVars<'t> {
    MotionVars {
        rotation: euler_to_rotation([ego[0], ego[1], ego[2]]),
        t_ego: Var3::new(ego[3], ego[4], ego[5]),
        t_obj,
    }
}

/// Loss breakdown of `params` without updating anything.
pub fn evaluate(frame_a: &Frame, frame_b: &Frame, params: &FitParams, hyper: &HyperParams) -> LossValues {
    let tape = Tape::new();
    let g = build(&tape, params, false);
    loss_of(&g, frame_a, frame_b, params, hyper).values()
}

fn loss_of<'t>(
    g: &Graph<'t>,
    frame_a: &Frame,
    frame_b: &Frame,
    params: &FitParams,
    hyper: &HyperParams,
) -> crate::losses::LossBreakdown<'t> {
    let (h, w) = params.dims();
    let (w, h) = (w as f64, h as f64);
    let camera = CameraVars {
        fx: g.intr[0] * w,
        fy: g.intr[1] * w,
        cx: g.intr[2] * w,
        cy: g.intr[3] * h,
    };
    pair_loss(
        frame_a,
        frame_b,
        g.la.softplus(),
        g.lb.softplus(),
        &motion_vars(&g.ego_ab, g.t_ab),
        &motion_vars(&g.ego_ba, g.t_ba),
        &camera,
        hyper,
    )
}

fn photometric(v: &LossValues, h: &HyperParams) -> f64 {
    h.alpha_rgb * v.photo_l1 + h.beta_rgb * v.photo_ssim
}

/// True when zeroing every translation does not raise the photometric
/// loss: the pair carries no parallax even if Adam left the translation
/// wandering at the scale of its step size.
fn translation_is_idle(frame_a: &Frame, frame_b: &Frame, p: &FitParams, h: &HyperParams) -> bool {
    let fitted = photometric(&evaluate(frame_a, frame_b, p, h), h);
    let (rows, cols) = p.dims();
    let mut still = p.clone();
    still.t_obj_ab = VectorField3::zeros(rows, cols);
    still.t_obj_ba = VectorField3::zeros(rows, cols);
    let mut frozen = still.clone();
    for ego in [&mut still.ego_ab, &mut still.ego_ba] {
        ego[3..].fill(0.0);
    }
    // a translation can cancel a spurious rotation, so also try no motion at all
    for ego in [&mut frozen.ego_ab, &mut frozen.ego_ba] {
        ego.fill(0.0);
    }
    [still, frozen]
        .iter()
        .any(|q| photometric(&evaluate(frame_a, frame_b, q, h), h) <= fitted + 1e-4)
}

fn converged(totals: &[f64]) -> bool {
    const WINDOW: usize = 50;
    if totals.len() < 2 * WINDOW {
        return false;
    }
    let n = totals.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let last = mean(&totals[n - WINDOW..]);
    let prev = mean(&totals[n - 2 * WINDOW..n - WINDOW]);
    (prev - last).abs() <= 1e-3 * prev.abs()
}

/// Runs `config.steps` Adam steps from `init_params`. Intrinsics are learned
/// when `config.learn_intrinsics` is set; `intrinsics` is then only the
/// starting point (or the default guess when `None`).
pub fn fit_pair(
    frame_a: &Frame,
    frame_b: &Frame,
    intrinsics: Option<Intrinsics>,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    config.validate()?;
    if frame_a.dims() != frame_b.dims() {
        return Err(FitError::Config("frames differ in resolution".into()));
    }
    if intrinsics.is_none() && !config.learn_intrinsics {
        return Err(FitError::Config("intrinsics are required unless learned".into()));
    }
    let (h, w) = frame_a.dims();
    let mut p = init_params(h, w, intrinsics, config);
    let adam = |n: usize, lr: f64| Adam::new(n, lr, config.beta1, config.beta2, config.adam_eps);
    let lr = config.lr;
    let mut opt_depth = [adam(h * w, lr.depth), adam(h * w, lr.depth)];
    let mut opt_res = [adam(3 * h * w, lr.residual), adam(3 * h * w, lr.residual)];
    let mut opt_ego = [adam(6, lr.ego), adam(6, lr.ego)];
    let mut opt_intr = adam(4, lr.intrinsics);

    // an infinite tolerance keeps every pixel
    let warmup = HyperParams {
        eps_occ: f64::INFINITY,
        ..config.hyper.clone()
    };
    let stages: Vec<(Frame, Frame)> = (0..config.blur_stages)
        .map(|k| {
            let passes = 2 * (config.blur_stages - k);
            (frame_a.blurred(passes), frame_b.blurred(passes))
        })
        .collect();
    let mut trace = Vec::new();
    let mut totals = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let tape = Tape::new();
        let g = build(&tape, &p, config.learn_intrinsics);
        let hyper = if step < config.occlusion_warmup { &warmup } else { &config.hyper };
        let (fa, fb) = match step.checked_div(config.steps_per_blur_stage).and_then(|i| stages.get(i)) {
            Some((a, b)) => (a, b),
            None => (frame_a, frame_b),
        };
        let loss = loss_of(&g, fa, fb, &p, hyper);
        let values = loss.values();
        if let Some(component) = values.first_non_finite() {
            return Err(FitError::Divergence { step, component });
        }
        if let Some(e) = tape.fault() {
            return Err(e.into());
        }
        totals.push(values.total);
        if step % config.log_every == 0 || step + 1 == config.steps {
            trace.push(TraceEntry { step, losses: values });
        }
        let grads = tape.backward(loss.total)?;

        let field_grads = |v: Var3<'_>| {
            let mut out = Vec::with_capacity(3 * h * w);
            for c in v.components() {
                out.extend_from_slice(grads.field(c).values());
            }
            out
        };
        let check = |gs: &[f64], component| {
            if gs.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(FitError::Divergence { step, component })
            }
        };

        let ga = grads.field(g.la);
        let gb = grads.field(g.lb);
        check(ga.values(), "depth gradient")?;
        check(gb.values(), "depth gradient")?;
        opt_depth[0].step(p.depth_logit_a.values_mut(), ga.values());
        opt_depth[1].step(p.depth_logit_b.values_mut(), gb.values());

        for (k, (t, field)) in [(g.t_ab, &mut p.t_obj_ab), (g.t_ba, &mut p.t_obj_ba)]
            .into_iter()
            .enumerate()
        {
            let gr = field_grads(t);
            check(&gr, "residual gradient")?;
            let mut flat: Vec<f64> = field.components().iter().flat_map(|c| c.values().to_vec()).collect();
            opt_res[k].step(&mut flat, &gr);
            let n = h * w;
            field.x.values_mut().copy_from_slice(&flat[..n]);
            field.y.values_mut().copy_from_slice(&flat[n..2 * n]);
            field.z.values_mut().copy_from_slice(&flat[2 * n..]);
        }

        for (k, (vars, vals)) in [(g.ego_ab, &mut p.ego_ab), (g.ego_ba, &mut p.ego_ba)]
            .into_iter()
            .enumerate()
        {
            let gr = vars.map(|v| grads.scalar(v));
            check(&gr, "ego gradient")?;
            opt_ego[k].step(vals, &gr);
        }

        if config.learn_intrinsics {
            let gr = g.intr.map(|v| grads.scalar(v));
            check(&gr, "intrinsics gradient")?;
            opt_intr.step(&mut p.intrinsics, &gr);
            // keep the camera valid; the principal point stays inside the image
            p.intrinsics[0] = p.intrinsics[0].max(1e-3);
            p.intrinsics[1] = p.intrinsics[1].max(1e-3);
            p.intrinsics[2] = p.intrinsics[2].clamp(1e-3, 1.0 - 1e-3);
            p.intrinsics[3] = p.intrinsics[3].clamp(1e-3, 1.0 - 1e-3);
        }
    }

    let ego_ab = FitParams::motion(&p.ego_ab);
    let no_parallax = ego_ab.translation_vec().norm() < NO_PARALLAX_NORM || translation_is_idle(frame_a, frame_b, &p, &config.hyper);
    Ok(FitResult {
        depth_a: p.depth_logit_a.map(softplus),
        depth_b: p.depth_logit_b.map(softplus),
        t_obj_ab: p.t_obj_ab.clone(),
        t_obj_ba: p.t_obj_ba.clone(),
        ego_ab,
        ego_ba: FitParams::motion(&p.ego_ba),
        intrinsics: p.intrinsics(),
        learned_intrinsics: config.learn_intrinsics,
        converged: converged(&totals),
        no_parallax,
        trace,
        totals,
    })
}

/// Scales `pred` by `median(gt) / median(pred)` over `mask > 0.5`.
pub fn scale_align(pred: &ScalarField, gt: &ScalarField, mask: &ScalarField) -> Result<(ScalarField, f64), FitError> {
    let pick = |f: &ScalarField| -> Vec<f64> {
        f.values()
            .iter()
            .zip(mask.values())
            .filter(|(_, &m)| m > 0.5)
            .map(|(&v, _)| v)
            .collect()
    };
    let (mp, mg) = match (median(&pick(pred)), median(&pick(gt))) {
        (Some(p), Some(g)) => (p, g),
        _ => return Err(FitError::EmptyMask),
    };
    let s = mg / mp;
    Ok((pred.map(|v| v * s), s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse_examples() {
        assert!((softplus_inv(1.0) - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
        assert!((softplus_inv(1.0) - 0.5413).abs() < 1e-4);
        assert!((softplus(softplus_inv(5.0)) - 5.0).abs() < 1e-12);
        assert!((softplus(softplus_inv(1e-3)) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn default_init() {
        let p = init_params(6, 8, Some(Intrinsics::new(10.0, 10.0, 4.0, 3.0)), &FitConfig::default());
        assert!(p.depth_logit_a.values().iter().all(|&l| (softplus(l) - 5.0).abs() < 1e-12));
        assert_eq!(p.t_obj_ab, VectorField3::zeros(6, 8));
        assert_eq!(p.ego_ab, [0.0; 6]);
        assert_eq!(p.intrinsics(), Intrinsics::new(10.0, 10.0, 4.0, 3.0));
    }

    #[test]
    fn learnable_intrinsics_init() {
        let p = init_params(96, 128, None, &FitConfig::default());
        assert_eq!(p.intrinsics(), Intrinsics::new(128.0, 128.0, 64.0, 48.0));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut x = [1.0, -1.0];
        a.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-8);
        assert!((x[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut a = Adam::new(1, 0.05, 0.9, 0.999, 1e-8);
        let mut x = [3.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0)];
            a.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn scale_align_examples() {
        let gt = ScalarField::from_fn(3, 3, |r, c| 1.0 + (r * 3 + c) as f64);
        let ones = ScalarField::filled(3, 3, 1.0);
        let (out, s) = scale_align(&gt.map(|v| 2.0 * v), &gt, &ones).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(out, gt);
        assert_eq!(scale_align(&gt, &gt, &ones).unwrap().1, 1.0);

        // an outlier shifts the mean but not the median
        let mut pred = gt.clone();
        pred.set(2, 2, 1000.0);
        let (_, s) = scale_align(&pred, &gt, &ones).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(scale_align(&gt, &gt, &ScalarField::zeros(3, 3)), Err(FitError::EmptyMask));
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let c = FitConfig {
            steps: 0,
            ..FitConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.lr.depth = 0.0;
        assert!(c.validate().is_err());
        let c: FitConfig = serde_json::from_str(r#"{"schema":1,"steps":7,"lr":{"ego":0.01}}"#).unwrap();
        assert_eq!(c.steps, 7);
        assert_eq!(c.lr.ego, 0.01);
        assert_eq!(c.lr.depth, 1e-2);
    }

    fn textured(h: usize, w: usize, shift: f64) -> Frame {
        Frame::from_fn(h, w, |r, c| {
            let x = c as f64 + shift;
            let y = r as f64;
            [
                0.5 + 0.3 * (0.9 * x).sin() * (0.7 * y).cos(),
                0.5 + 0.3 * (0.5 * x + 0.4 * y).sin(),
                0.5 + 0.2 * (1.3 * y).sin(),
            ]
        })
    }

    #[test]
    fn static_pair_flags_missing_parallax() {
        let f = textured(10, 12, 0.0);
        let k = Intrinsics::new(12.0, 12.0, 6.0, 5.0);
        let config = FitConfig {
            steps: 300,
            ..FitConfig::default()
        };
        let r = fit_pair(&f, &f, Some(k), &config).unwrap();
        assert!(r.no_parallax);
        // Adam keeps the translation jittering at about its step size
        assert!(r.t_obj_ab.norm().max() < 1e-3);
        assert!(r.ego_ab.translation_vec().norm() < 2e-2);
        assert_eq!(r.totals.len(), 300);
        assert_eq!(r.trace.len(), 7);
    }

    #[test]
    fn single_step_has_single_trace_entry() {
        let f = textured(8, 8, 0.0);
        let config = FitConfig {
            steps: 1,
            learn_intrinsics: true,
            ..FitConfig::default()
        };
        let r = fit_pair(&f, &textured(8, 8, 0.5), None, &config).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.trace[0].step, 0);
    }

    #[test]
    fn fitting_is_deterministic_and_decreases_loss() {
        let k = Intrinsics::new(12.0, 12.0, 6.0, 5.0);
        let config = FitConfig {
            steps: 40,
            ..FitConfig::default()
        };
        let (a, b) = (textured(10, 12, 0.0), textured(10, 12, 0.4));
        let r1 = fit_pair(&a, &b, Some(k), &config).unwrap();
        let r2 = fit_pair(&a, &b, Some(k), &config).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.totals.last().unwrap() < &r1.totals[0]);
    }

    #[test]
    fn divergence_reports_step_and_component() {
        let k = Intrinsics::new(12.0, 12.0, 6.0, 5.0);
        let mut config = FitConfig::default();
        config.steps = 3;
        let mut a = textured(10, 12, 0.0);
        a.channels[1].set(2, 2, f64::NAN);
        let err = fit_pair(&a, &textured(10, 12, 0.4), Some(k), &config).unwrap_err();
        assert!(matches!(err, FitError::Divergence { step: 0, .. }), "{err:?}");
    }

    #[test]
    fn schedules_can_be_switched_off() {
        let k = Intrinsics::new(12.0, 12.0, 6.0, 5.0);
        let (a, b) = (textured(10, 12, 0.0), textured(10, 12, 0.4));
        let plain = FitConfig {
            steps: 20,
            blur_stages: 0,
            steps_per_blur_stage: 0,
            occlusion_warmup: 0,
            ..FitConfig::default()
        };
        let staged = FitConfig {
            blur_stages: 1,
            steps_per_blur_stage: 10,
            ..plain.clone()
        };
        let r0 = fit_pair(&a, &b, Some(k), &plain).unwrap();
        let r1 = fit_pair(&a, &b, Some(k), &staged).unwrap();
        // blurred frames change the objective only inside the stage
        assert_ne!(r0.totals[0], r1.totals[0]);
        assert!(FitConfig { steps_per_blur_stage: 0, ..staged }.validate().is_err());
    }

    #[test]
    fn missing_intrinsics_is_a_config_error() {
        let f = textured(8, 8, 0.0);
        assert!(matches!(
            fit_pair(&f, &f, None, &FitConfig::default()),
            Err(FitError::Config(_))
        ));
    }
}
