//! Pinhole projection, Euler rotations and the per-pixel rigid warp.
//!
//! The warp maps a pixel `p = (u, v, 1)` with depth `z` in the source frame
//! to `z' p' = K R K^-1 z p + K T(u, v)` in the target frame. `T` is a
//! per-pixel translation field: a constant field reproduces pure
//! ego-motion, and the residual object field is added on top.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::engine::{ScalarField, Tape, Var, VectorField3, BOUNDS_SLACK};

/// Warped points at or below this depth are masked out.
pub const Z_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid intrinsics {0:?} for a {1}x{2} image")]
    InvalidIntrinsics(Intrinsics, usize, usize),
}

/// Pinhole camera matrix entries, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < width as f64
            && self.cy > 0.0
            && self.cy < height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self, width, height))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    /// Pixel with depth `z` to camera-frame point.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * z,
            (v - self.cy) / self.fy * z,
            z,
        )
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> CameraVars<'t> {
        CameraVars {
            fx: tape.scalar(self.fx),
            fy: tape.scalar(self.fy),
            cx: tape.scalar(self.cx),
            cy: tape.scalar(self.cy),
        }
    }
}

/// Intrinsics as tape scalars, trainable or constant.
#[derive(Debug, Clone, Copy)]
pub struct CameraVars<'t> {
    pub fx: Var<'t>,
    pub fy: Var<'t>,
    pub cx: Var<'t>,
    pub cy: Var<'t>,
}

impl CameraVars<'_> {
    pub fn values(&self) -> Intrinsics {
        Intrinsics::new(
            self.fx.scalar(),
            self.fy.scalar(),
            self.cx.scalar(),
            self.cy.scalar(),
        )
    }
}

/// Euler angles (radians, applied x then y then z) plus a translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidMotion {
    pub euler: [f64; 3],
    pub translation: [f64; 3],
}

impl RigidMotion {
    pub fn new(euler: [f64; 3], translation: [f64; 3]) -> Self {
        Self { euler, translation }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.euler)
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation_vec()
    }

    /// `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation_vec());
        Self {
            euler: euler_from_matrix(&rt),
            translation: [t.x, t.y, t.z],
        }
    }
}

/// `R = Rz(euler[2]) * Ry(euler[1]) * Rx(euler[0])`.
pub fn rotation_matrix(euler: [f64; 3]) -> Matrix3<f64> {
    Rotation3::from_euler_angles(euler[0], euler[1], euler[2]).into_inner()
}

pub fn euler_from_matrix(m: &Matrix3<f64>) -> [f64; 3] {
    let (a, b, c) = Rotation3::from_matrix_unchecked(*m).euler_angles();
    [a, b, c]
}

/// Three tape nodes, either scalars (a 3-vector) or fields (a vector field).
#[derive(Debug, Clone, Copy)]
pub struct Var3<'t> {
    pub x: Var<'t>,
    pub y: Var<'t>,
    pub z: Var<'t>,
}

impl<'t> Var3<'t> {
    pub fn new(x: Var<'t>, y: Var<'t>, z: Var<'t>) -> Self {
        Self { x, y, z }
    }

    pub fn constant_vec(tape: &'t Tape, v: [f64; 3]) -> Self {
        Self::new(tape.scalar(v[0]), tape.scalar(v[1]), tape.scalar(v[2]))
    }

    pub fn param_vec(tape: &'t Tape, v: [f64; 3]) -> Self {
        Self::new(tape.param(v[0]), tape.param(v[1]), tape.param(v[2]))
    }

    pub fn constant_field(tape: &'t Tape, f: &VectorField3) -> Self {
        Self::new(
            tape.constant(f.x.clone()),
            tape.constant(f.y.clone()),
            tape.constant(f.z.clone()),
        )
    }

    pub fn param_field(tape: &'t Tape, f: &VectorField3) -> Self {
        Self::new(
            tape.param(f.x.clone()),
            tape.param(f.y.clone()),
            tape.param(f.z.clone()),
        )
    }

    pub fn components(&self) -> [Var<'t>; 3] {
        [self.x, self.y, self.z]
    }

    pub fn add(&self, other: &Var3<'t>) -> Var3<'t> {
        Var3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn neg(&self) -> Var3<'t> {
        Var3::new(-self.x, -self.y, -self.z)
    }

    /// Squared Euclidean norm, per pixel for fields.
    pub fn norm_sq(&self) -> Var<'t> {
        self.x.square() + self.y.square() + self.z.square()
    }

    /// Panics when the components are scalars.
    pub fn field_values(&self) -> VectorField3 {
        VectorField3::new(self.x.field(), self.y.field(), self.z.field())
            .expect("consistent components")
    }

    /// Panics when the components are fields.
    pub fn vec_values(&self) -> [f64; 3] {
        [self.x.scalar(), self.y.scalar(), self.z.scalar()]
    }

    /// Bilinear lookup of every component at `(u, v)`.
    pub fn sample_bilinear(&self, u: Var<'t>, v: Var<'t>) -> (Var3<'t>, ScalarField) {
        let (x, mask) = self.x.sample_bilinear(u, v);
        let (y, _) = self.y.sample_bilinear(u, v);
        let (z, _) = self.z.sample_bilinear(u, v);
        (Var3::new(x, y, z), mask)
    }
}

/// 3x3 rotation with differentiable entries.
#[derive(Debug, Clone, Copy)]
pub struct Rotation<'t> {
    pub m: [[Var<'t>; 3]; 3],
}

impl<'t> Rotation<'t> {
    pub fn constant(tape: &'t Tape, m: &Matrix3<f64>) -> Self {
        let e = |r: usize, c: usize| tape.scalar(m[(r, c)]);
        Self {
            m: [
                [e(0, 0), e(0, 1), e(0, 2)],
                [e(1, 0), e(1, 1), e(1, 2)],
                [e(2, 0), e(2, 1), e(2, 2)],
            ],
        }
    }

    pub fn identity(tape: &'t Tape) -> Self {
        Self::constant(tape, &Matrix3::identity())
    }

    pub fn transpose(&self) -> Self {
        let m = self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn matmul(&self, other: &Rotation<'t>) -> Rotation<'t> {
        let e = |r: usize, c: usize| {
            self.m[r][0] * other.m[0][c] + self.m[r][1] * other.m[1][c] + self.m[r][2] * other.m[2][c]
        };
        Rotation {
            m: [
                [e(0, 0), e(0, 1), e(0, 2)],
                [e(1, 0), e(1, 1), e(1, 2)],
                [e(2, 0), e(2, 1), e(2, 2)],
            ],
        }
    }

    /// `R v`, per pixel when `v` is a field.
    pub fn apply(&self, v: &Var3<'t>) -> Var3<'t> {
        let row = |r: usize| self.m[r][0] * v.x + self.m[r][1] * v.y + self.m[r][2] * v.z;
        Var3::new(row(0), row(1), row(2))
    }

    /// Squared Frobenius distance to the identity.
    pub fn dist_identity_sq(&self) -> Var<'t> {
        let mut acc: Option<Var<'t>> = None;
        for r in 0..3 {
            for c in 0..3 {
                let d = if r == c { self.m[r][c] - 1.0 } else { self.m[r][c] };
                let sq = d.square();
                acc = Some(match acc {
                    Some(a) => a + sq,
                    None => sq,
                });
            }
        }
        acc.expect("nine entries")
    }

    pub fn values(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.m[r][c].scalar())
    }
}

/// Differentiable `Rz(g) Ry(b) Rx(a)` from scalar angles `[a, b, g]`.
pub fn euler_to_rotation<'t>(euler: [Var<'t>; 3]) -> Rotation<'t> {
    let [a, b, g] = euler;
    let (sa, ca) = (a.sin(), a.cos());
    let (sb, cb) = (b.sin(), b.cos());
    let (sg, cg) = (g.sin(), g.cos());
    let sbsa = sb * sa;
    let sbca = sb * ca;
    Rotation {
        m: [
            [cg * cb, cg * sbsa - sg * ca, cg * sbca + sg * sa],
            [sg * cb, sg * sbsa + cg * ca, sg * sbca - cg * sa],
            [-sb, cb * sa, cb * ca],
        ],
    }
}

/// `T(u, v) = T_obj(u, v) + T_ego`.
pub fn total_translation<'t>(t_obj: &Var3<'t>, t_ego: &Var3<'t>) -> Var3<'t> {
    t_obj.add(t_ego)
}

/// Column (`u`) and row (`v`) index grids.
pub fn pixel_grid(height: usize, width: usize) -> (ScalarField, ScalarField) {
    (
        ScalarField::from_fn(height, width, |_, c| c as f64),
        ScalarField::from_fn(height, width, |r, _| r as f64),
    )
}

#[derive(Debug, Clone)]
pub struct WarpResult<'t> {
    pub u: Var<'t>,
    pub v: Var<'t>,
    pub z: Var<'t>,
    /// 1 where the warped depth exceeds [`Z_MIN`] and `(u, v)` is inside the image.
    pub mask: ScalarField,
}

/// Per-pixel `z' p' = K R K^-1 z p + K T`.
pub fn warp<'t>(
    depth: Var<'t>,
    camera: &CameraVars<'t>,
    rotation: &Rotation<'t>,
    translation: &Var3<'t>,
) -> WarpResult<'t> {
    let tape = depth.tape();
    let (h, w) = depth.field().dims();
    let (gu, gv) = pixel_grid(h, w);
    let (gu, gv) = (tape.constant(gu), tape.constant(gv));

    let point = Var3::new(
        (gu - camera.cx) / camera.fx * depth,
        (gv - camera.cy) / camera.fy * depth,
        depth,
    );
    let moved = rotation.apply(&point).add(translation);
    let denom = moved.z.max(tape.scalar(Z_MIN));
    let u = camera.fx * moved.x / denom + camera.cx;
    let v = camera.fy * moved.y / denom + camera.cy;

    let (uf, vf, zf) = (u.field(), v.field(), moved.z.field());
    let (wmax, hmax) = ((w - 1) as f64 + BOUNDS_SLACK, (h - 1) as f64 + BOUNDS_SLACK);
    let mask = ScalarField::from_fn(h, w, |r, c| {
        let (x, y, z) = (uf.get(r, c), vf.get(r, c), zf.get(r, c));
        let inside = z > Z_MIN && (-BOUNDS_SLACK..=wmax).contains(&x) && (-BOUNDS_SLACK..=hmax).contains(&y);
        if inside {
            1.0
        } else {
            0.0
        }
    });
    WarpResult {
        u,
        v,
        z: moved.z,
        mask,
    }
}

#[derive(Debug, Clone)]
pub struct Resampled<'t> {
    pub channels: Vec<Var<'t>>,
    pub depth: Var<'t>,
    pub mask: ScalarField,
}

/// Samples the source frame channels and depth at the warped coordinates.
pub fn resample<'t>(channels: &[Var<'t>], depth: Var<'t>, warp: &WarpResult<'t>) -> Resampled<'t> {
    let mut mask = warp.mask.clone();
    let mut out = Vec::with_capacity(channels.len());
    for &ch in channels {
        let (s, m) = ch.sample_bilinear(warp.u, warp.v);
        mask = mask.zip_map(&m, |a, b| a * b);
        out.push(s);
    }
    let (d, m) = depth.sample_bilinear(warp.u, warp.v);
    mask = mask.zip_map(&m, |a, b| a * b);
    Resampled {
        channels: out,
        depth: d,
        mask,
    }
}
