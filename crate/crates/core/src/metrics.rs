//! Depth error suite and 3D motion-field errors against ground truth.

use serde::{Deserialize, Serialize};

use crate::engine::{ScalarField, VectorField3};

/// Default depth cutoff in scene units.
pub const DEFAULT_CUTOFF: f64 = 80.0;

/// Below this norm a vector counts as zero when measuring angles.
pub const ZERO_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

fn check(a: (usize, usize), b: (usize, usize)) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::Shape(a, b))
    }
}

/// Pixels count when `mask > 0.5` and `0 < gt <= cutoff`.
pub fn depth_metrics(
    pred: &ScalarField,
    gt: &ScalarField,
    mask: &ScalarField,
    cutoff: f64,
) -> Result<DepthMetrics, MetricsError> {
    check(pred.dims(), gt.dims())?;
    check(mask.dims(), gt.dims())?;
    let mut n = 0usize;
    let mut acc = [0.0f64; 7];
    for ((&p, &g), &m) in pred.values().iter().zip(gt.values()).zip(mask.values()) {
        if m <= 0.5 || g <= 0.0 || g > cutoff {
            continue;
        }
        n += 1;
        let d = g - p;
        acc[0] += d.abs() / g;
        acc[1] += d * d / g;
        acc[2] += d * d;
        acc[3] += (g.ln() - p.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        for k in 1..=3 {
            if ratio < 1.25f64.powi(k as i32) {
                acc[3 + k] += 1.0;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let a = acc.map(|v| v / n as f64);
    Ok(DepthMetrics {
        abs_rel: a[0],
        sq_rel: a[1],
        rmse: a[2].sqrt(),
        rmse_log: a[3].sqrt(),
        delta1: a[4],
        delta2: a[5],
        delta3: a[6],
    })
}

/// Angle between two vectors in degrees; 0 if both are zero, 90 if one is.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    match (na < ZERO_NORM, nb < ZERO_NORM) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 90.0,
        _ => {
            let dot = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
            (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
        }
    }
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Residual-field and ego-motion errors. Statistics over an empty region
/// are reported as 0 with a zero pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub object_pixels: usize,
    pub background_pixels: usize,
    pub epe_object_mean: f64,
    pub epe_object_median: f64,
    pub epe_background_mean: f64,
    pub epe_background_median: f64,
    /// Mean predicted residual norm over the background.
    pub background_norm_mean: f64,
    /// Mean ground-truth residual norm inside objects.
    pub object_gt_norm_mean: f64,
    /// Angle between the mean predicted and mean true in-object residual.
    pub object_direction_deg: f64,
    pub ego_angle_deg: f64,
    /// `|t_pred| / |t_gt|`, 0 when the true translation is zero.
    pub ego_magnitude_ratio: f64,
}

pub fn motion_metrics(
    pred: &VectorField3,
    gt: &VectorField3,
    object_mask: &ScalarField,
    pred_ego: [f64; 3],
    gt_ego: [f64; 3],
) -> Result<MotionMetrics, MetricsError> {
    check(pred.dims(), gt.dims())?;
    check(object_mask.dims(), gt.dims())?;
    let (h, w) = gt.dims();
    let (mut obj, mut bg) = (Vec::new(), Vec::new());
    let mut bg_norm = 0.0;
    let mut gt_norm = 0.0;
    let mut mean_pred = [0.0; 3];
    let mut mean_gt = [0.0; 3];
    for r in 0..h {
        for c in 0..w {
            let (p, g) = (pred.get(r, c), gt.get(r, c));
            let epe = norm([p[0] - g[0], p[1] - g[1], p[2] - g[2]]);
            if object_mask.get(r, c) > 0.5 {
                obj.push(epe);
                gt_norm += norm(g);
                for k in 0..3 {
                    mean_pred[k] += p[k];
                    mean_gt[k] += g[k];
                }
            } else {
                bg.push(epe);
                bg_norm += norm(p);
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let per = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let gt_ego_norm = norm(gt_ego);
    Ok(MotionMetrics {
        object_pixels: obj.len(),
        background_pixels: bg.len(),
        epe_object_mean: mean(&obj),
        epe_object_median: median(&obj).unwrap_or(0.0),
        epe_background_mean: mean(&bg),
        epe_background_median: median(&bg).unwrap_or(0.0),
        background_norm_mean: per(bg_norm, bg.len()),
        object_gt_norm_mean: per(gt_norm, obj.len()),
        object_direction_deg: if obj.is_empty() { 0.0 } else { angle_deg(mean_pred, mean_gt) },
        ego_angle_deg: angle_deg(pred_ego, gt_ego),
        ego_magnitude_ratio: if gt_ego_norm < ZERO_NORM {
            0.0
        } else {
            norm(pred_ego) / gt_ego_norm
        },
    })
}

/// Depth and motion scores of one fit against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Factor applied to predicted depth and translations.
    pub scale: f64,
    #[serde(flatten)]
    pub depth: DepthMetrics,
    #[serde(flatten)]
    pub motion: MotionMetrics,
}

/// Predicted and true quantities of the first frame.
pub struct Estimate<'a> {
    pub depth: &'a ScalarField,
    pub t_obj: &'a VectorField3,
    pub ego_translation: [f64; 3],
}

/// Scores `pred` against `gt` on `valid`. With `median_scale` the predicted
/// depth is median-aligned and the same factor rescales the predicted
/// translations, which share the unknown scene scale.
pub fn score(
    pred: &Estimate,
    gt: &Estimate,
    valid: &ScalarField,
    object_mask: &ScalarField,
    cutoff: f64,
    median_scale: bool,
) -> Result<Evaluation, MetricsError> {
    check(pred.depth.dims(), gt.depth.dims())?;
    check(valid.dims(), gt.depth.dims())?;
    let scale = if median_scale {
        crate::fit::scale_align(pred.depth, gt.depth, valid)
            .map_err(|_| MetricsError::EmptyMask)?
            .1
    } else {
        1.0
    };
    let depth = depth_metrics(&pred.depth.map(|d| d * scale), gt.depth, valid, cutoff)?;
    let t = pred.t_obj;
    let scaled_t = VectorField3::new(t.x.map(|v| v * scale), t.y.map(|v| v * scale), t.z.map(|v| v * scale))
        .expect("same dims");
    let motion = motion_metrics(
        &scaled_t,
        gt.t_obj,
        object_mask,
        pred.ego_translation.map(|v| v * scale),
        gt.ego_translation,
    )?;
    Ok(Evaluation { scale, depth, motion })
}

impl Evaluation {
    /// Looks up a metric by its serialized name.
    pub fn get(&self, key: &str) -> Option<f64> {
        serde_json::to_value(self).ok()?.get(key)?.as_f64()
    }
}

/// Flat key/value pairs of any metrics record, sorted by key.
fn flat(record: &impl Serialize) -> Vec<(String, String)> {
    match serde_json::to_value(record).expect("metrics serialize") {
        serde_json::Value::Object(map) => map.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        _ => Vec::new(),
    }
}

pub fn csv_header(record: &impl Serialize) -> String {
    flat(record).into_iter().map(|(k, _)| k).collect::<Vec<_>>().join(",")
}

pub fn csv_row(record: &impl Serialize) -> String {
    flat(record).into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
}
