//! Training objective for a frame pair.
//!
//! Every integral over the image plane is discretized as a mean over pixels,
//! so the weights below do not depend on resolution. The objective has three
//! families:
//!
//! * motion regularization of the residual translation field (group
//!   smoothness plus the self-normalizing L1/2 sparsity penalty),
//! * edge-aware smoothness of the disparity maps,
//! * consistency: motion cycle consistency and the occlusion-aware
//!   photometric loss (L1 plus SSIM).
//!
//! Motion and consistency terms are evaluated for both frame orders; the
//! depth term once per frame.

use serde::{Deserialize, Serialize};

use crate::engine::{Axis, ScalarField, Tape, Var};
use crate::frame::Frame;
use crate::geometry::{resample, total_translation, warp, CameraVars, Rotation, Var3};

/// SSIM stabilizers for unit-range images.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("hyperparameter {0} must be non-negative, got {1}")]
    NegativeWeight(&'static str, f64),
    #[error("hyperparameter {0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
}

/// Loss weights and stabilizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub schema: u32,
    pub alpha_mot: f64,
    pub beta_mot: f64,
    pub alpha_dep: f64,
    pub alpha_cyc: f64,
    pub beta_cyc: f64,
    pub alpha_rgb: f64,
    pub beta_rgb: f64,
    pub eps_norm: f64,
    /// Relative tolerance of the depth comparison in the occlusion mask.
    pub eps_occ: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            schema: 1,
            alpha_mot: 1.0,
            beta_mot: 0.1,
            alpha_dep: 0.1,
            alpha_cyc: 1e-3,
            beta_cyc: 5e-2,
            alpha_rgb: 0.85,
            beta_rgb: 3.0,
            eps_norm: 1e-6,
            eps_occ: 0.2,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LossError> {
        let weights = [
            ("alpha_mot", self.alpha_mot),
            ("beta_mot", self.beta_mot),
            ("alpha_dep", self.alpha_dep),
            ("alpha_cyc", self.alpha_cyc),
            ("beta_cyc", self.beta_cyc),
            ("alpha_rgb", self.alpha_rgb),
            ("beta_rgb", self.beta_rgb),
            ("eps_occ", self.eps_occ),
        ];
        for (name, w) in weights {
            if !(w >= 0.0) {
                return Err(LossError::NegativeWeight(name, w));
            }
        }
        if !(self.eps_norm > 0.0) {
            return Err(LossError::NonPositive("eps_norm", self.eps_norm));
        }
        Ok(())
    }
}

fn sum_all<'t>(terms: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    terms
        .into_iter()
        .reduce(|a, b| a + b)
        .expect("at least one term")
}

/// Sum over components of the mean spatial-gradient magnitude.
pub fn group_smoothness<'t>(t: &Var3<'t>) -> Var<'t> {
    sum_all(t.components().map(|c| {
        let du = c.diff(Axis::U);
        let dv = c.diff(Axis::V);
        (du.square() + dv.square() + crate::engine::EPS_ABS * crate::engine::EPS_ABS)
            .sqrt()
            .mean()
    }))
}

/// `2 sum_i <|T_i|> mean sqrt(1 + |T_i| / <|T_i|>)`.
///
/// A component whose mean magnitude is below `eps_norm` contributes its limit
/// value 0. The mean magnitude stays on the tape, which keeps the penalty
/// exactly 1-homogeneous.
pub fn sparsity_l_half<'t>(t: &Var3<'t>, eps_norm: f64) -> Var<'t> {
    let tape = t.x.tape();
    sum_all(t.components().map(|c| {
        let a = c.abs();
        let m = a.mean();
        if m.scalar() < eps_norm {
            tape.scalar(0.0)
        } else {
            (a / m + 1.0).sqrt().mean() * m * 2.0
        }
    }))
}

pub fn motion_regularizer<'t>(t_obj: &Var3<'t>, h: &HyperParams) -> Var<'t> {
    group_smoothness(t_obj) * h.alpha_mot + sparsity_l_half(t_obj, h.eps_norm) * h.beta_mot
}

/// `exp(-||d I||)` along `axis`, Euclidean norm over channels.
pub fn edge_weights(image: &Frame, axis: Axis) -> ScalarField {
    let (h, w) = image.dims();
    ScalarField::from_fn(h, w, |r, c| {
        let next = match axis {
            Axis::U if c + 1 < w => Some((r, c + 1)),
            Axis::V if r + 1 < h => Some((r + 1, c)),
            _ => None,
        };
        let norm_sq = match next {
            Some((r2, c2)) => image
                .channels
                .iter()
                .map(|ch| (ch.get(r2, c2) - ch.get(r, c)).powi(2))
                .sum::<f64>(),
            None => 0.0,
        };
        (-norm_sq.sqrt()).exp()
    })
}

/// Unweighted edge-aware disparity smoothness.
pub fn depth_smoothness_term<'t>(disparity: Var<'t>, image: &Frame) -> Var<'t> {
    let tape = disparity.tape();
    let wu = tape.constant(edge_weights(image, Axis::U));
    let wv = tape.constant(edge_weights(image, Axis::V));
    (disparity.diff(Axis::U).abs_smooth() * wu + disparity.diff(Axis::V).abs_smooth() * wv).mean()
}

pub fn depth_smoothness<'t>(disparity: Var<'t>, image: &Frame, h: &HyperParams) -> Var<'t> {
    depth_smoothness_term(disparity, image) * h.alpha_dep
}

/// Unweighted `(rotation, translation)` cycle terms.
///
/// `t_inv_warped` is the reverse-direction translation field already sampled
/// at the forward warp coordinates; pixels where `mask` is 0 contribute 0.
pub fn cycle_terms<'t>(
    rotation: &Rotation<'t>,
    translation: &Var3<'t>,
    rotation_inv: &Rotation<'t>,
    t_inv_warped: &Var3<'t>,
    mask: &ScalarField,
    eps_norm: f64,
) -> (Var<'t>, Var<'t>) {
    let tape = translation.x.tape();
    let rot_num = rotation.matmul(rotation_inv).dist_identity_sq();
    let rot_den = rotation.dist_identity_sq() + rotation_inv.dist_identity_sq() + eps_norm;
    let rot = rot_num / rot_den;

    let residual = rotation_inv.apply(translation).add(t_inv_warped);
    let den = translation.norm_sq() + t_inv_warped.norm_sq() + eps_norm;
    let trans = (residual.norm_sq() / den * tape.constant(mask.clone())).mean();
    (rot, trans)
}

pub fn cycle_consistency<'t>(
    rotation: &Rotation<'t>,
    translation: &Var3<'t>,
    rotation_inv: &Rotation<'t>,
    t_inv_warped: &Var3<'t>,
    mask: &ScalarField,
    h: &HyperParams,
) -> Var<'t> {
    let (rot, trans) = cycle_terms(rotation, translation, rotation_inv, t_inv_warped, mask, h.eps_norm);
    rot * h.alpha_cyc + trans * h.beta_cyc
}

fn ssim_map<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let mu_a = a.box3();
    let mu_b = b.box3();
    let var_a = a.square().box3() - mu_a.square();
    let var_b = b.square().box3() - mu_b.square();
    let cov = (a * b).box3() - mu_a * mu_b;
    let num = (mu_a * mu_b * 2.0 + SSIM_C1) * (cov * 2.0 + SSIM_C2);
    let den = (mu_a.square() + mu_b.square() + SSIM_C1) * (var_a + var_b + SSIM_C2);
    num / den
}

/// Structural similarity with a 3x3 uniform window, averaged over pixels and
/// channels.
pub fn ssim<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    assert_eq!(a.len(), b.len(), "ssim needs matching channel counts");
    let n = a.len() as f64;
    sum_all(a.iter().zip(b).map(|(&x, &y)| ssim_map(x, y).mean())) / n
}

/// 1 where the warped point is not hidden behind the target surface:
/// `z' <= (1 + eps_occ) D_warp`. Relative, since depth is only known up to
/// scale.
pub fn occlusion_mask(z_prime: &ScalarField, d_warp: &ScalarField, eps_occ: f64) -> ScalarField {
    z_prime.zip_map(d_warp, |z, d| if z <= d * (1.0 + eps_occ) { 1.0 } else { 0.0 })
}

/// Unweighted `(l1, (1 - ssim) / 2)` photometric terms.
///
/// The occlusion and validity masks are constants: no gradient flows through
/// the mask decision.
pub fn photometric_terms<'t>(
    image: &Frame,
    warped: &[Var<'t>],
    z_prime: Var<'t>,
    d_warp: Var<'t>,
    mask: &ScalarField,
    eps_occ: f64,
) -> (Var<'t>, Var<'t>) {
    let tape = z_prime.tape();
    let occ = occlusion_mask(&z_prime.field(), &d_warp.field(), eps_occ);
    let keep = tape.constant(occ.zip_map(mask, |a, b| a * b));
    let target = image.constants(tape);
    let l1 = (sum_all(target.iter().zip(warped).map(|(&t, &w)| (t - w).abs())) * keep).mean();
    let masked_t: Vec<Var<'t>> = target.iter().map(|&t| t * keep).collect();
    let masked_w: Vec<Var<'t>> = warped.iter().map(|&w| w * keep).collect();
    let dssim = (1.0 - ssim(&masked_t, &masked_w)) * 0.5;
    (l1, dssim)
}

pub fn photometric_loss<'t>(
    image: &Frame,
    warped: &[Var<'t>],
    z_prime: Var<'t>,
    d_warp: Var<'t>,
    mask: &ScalarField,
    h: &HyperParams,
) -> Var<'t> {
    let (l1, dssim) = photometric_terms(image, warped, z_prime, d_warp, mask, h.eps_occ);
    l1 * h.alpha_rgb + dssim * h.beta_rgb
}

/// Motion of one frame order: rotation, ego translation (scalars) and the
/// residual field on the source grid.
#[derive(Debug, Clone, Copy)]
pub struct MotionVars<'t> {
    pub rotation: Rotation<'t>,
    pub t_ego: Var3<'t>,
    pub t_obj: Var3<'t>,
}

impl<'t> MotionVars<'t> {
    pub fn total(&self) -> Var3<'t> {
        total_translation(&self.t_obj, &self.t_ego)
    }
}

/// Named objective components, unweighted and summed over both frame
/// orders, plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<'t> {
    pub group_smooth: Var<'t>,
    pub sparsity: Var<'t>,
    pub depth_smooth: Var<'t>,
    pub cyc_rot: Var<'t>,
    pub cyc_trans: Var<'t>,
    pub photo_l1: Var<'t>,
    pub photo_ssim: Var<'t>,
    pub total: Var<'t>,
}

/// Plain values of a [`LossBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub group_smooth: f64,
    pub sparsity: f64,
    pub depth_smooth: f64,
    pub cyc_rot: f64,
    pub cyc_trans: f64,
    pub photo_l1: f64,
    pub photo_ssim: f64,
    pub total: f64,
}

impl LossValues {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("group_smooth", self.group_smooth),
            ("sparsity", self.sparsity),
            ("depth_smooth", self.depth_smooth),
            ("cyc_rot", self.cyc_rot),
            ("cyc_trans", self.cyc_trans),
            ("photo_l1", self.photo_l1),
            ("photo_ssim", self.photo_ssim),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

impl LossBreakdown<'_> {
    pub fn values(&self) -> LossValues {
        LossValues {
            group_smooth: self.group_smooth.scalar(),
            sparsity: self.sparsity.scalar(),
            depth_smooth: self.depth_smooth.scalar(),
            cyc_rot: self.cyc_rot.scalar(),
            cyc_trans: self.cyc_trans.scalar(),
            photo_l1: self.photo_l1.scalar(),
            photo_ssim: self.photo_ssim.scalar(),
            total: self.total.scalar(),
        }
    }
}

struct DirectionTerms<'t> {
    group_smooth: Var<'t>,
    sparsity: Var<'t>,
    cyc_rot: Var<'t>,
    cyc_trans: Var<'t>,
    photo_l1: Var<'t>,
    photo_ssim: Var<'t>,
}

fn direction_terms<'t>(
    target: &Frame,
    source: &Frame,
    target_depth: Var<'t>,
    source_depth: Var<'t>,
    forward: &MotionVars<'t>,
    backward: &MotionVars<'t>,
    camera: &CameraVars<'t>,
    h: &HyperParams,
) -> DirectionTerms<'t> {
    let tape: &'t Tape = target_depth.tape();
    let t_fwd = forward.total();
    let t_bwd = backward.total();
    let w = warp(target_depth, camera, &forward.rotation, &t_fwd);
    let source_channels = source.constants(tape);
    let sampled = resample(&source_channels, source_depth, &w);
    let (photo_l1, photo_ssim) =
        photometric_terms(target, &sampled.channels, w.z, sampled.depth, &sampled.mask, h.eps_occ);
    let (t_inv_warped, _) = t_bwd.sample_bilinear(w.u, w.v);
    let (cyc_rot, cyc_trans) = cycle_terms(
        &forward.rotation,
        &t_fwd,
        &backward.rotation,
        &t_inv_warped,
        &sampled.mask,
        h.eps_norm,
    );
    DirectionTerms {
        group_smooth: group_smoothness(&forward.t_obj),
        sparsity: sparsity_l_half(&forward.t_obj, h.eps_norm),
        cyc_rot,
        cyc_trans,
        photo_l1,
        photo_ssim,
    }
}

/// Full objective for a frame pair, evaluated in both frame orders.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss<'t>(
    frame_a: &Frame,
    frame_b: &Frame,
    depth_a: Var<'t>,
    depth_b: Var<'t>,
    motion_ab: &MotionVars<'t>,
    motion_ba: &MotionVars<'t>,
    camera: &CameraVars<'t>,
    h: &HyperParams,
) -> LossBreakdown<'t> {
    let ab = direction_terms(frame_a, frame_b, depth_a, depth_b, motion_ab, motion_ba, camera, h);
    let ba = direction_terms(frame_b, frame_a, depth_b, depth_a, motion_ba, motion_ab, camera, h);
    let depth_smooth = depth_smoothness_term(depth_a.recip(), frame_a)
        + depth_smoothness_term(depth_b.recip(), frame_b);

    let group_smooth = ab.group_smooth + ba.group_smooth;
    let sparsity = ab.sparsity + ba.sparsity;
    let cyc_rot = ab.cyc_rot + ba.cyc_rot;
    let cyc_trans = ab.cyc_trans + ba.cyc_trans;
    let photo_l1 = ab.photo_l1 + ba.photo_l1;
    let photo_ssim = ab.photo_ssim + ba.photo_ssim;
    let total = group_smooth * h.alpha_mot
        + sparsity * h.beta_mot
        + depth_smooth * h.alpha_dep
        + cyc_rot * h.alpha_cyc
        + cyc_trans * h.beta_cyc
        + photo_l1 * h.alpha_rgb
        + photo_ssim * h.beta_rgb;
    LossBreakdown {
        group_smooth,
        sparsity,
        depth_smooth,
        cyc_rot,
        cyc_trans,
        photo_l1,
        photo_ssim,
        total,
    }
}
