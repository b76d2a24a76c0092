//! Procedural frame pairs with exact ground truth.
//!
//! A scene is a slanted background plane plus fronto-parallel rectangles,
//! all defined in the coordinates of camera `a`. Frame `b` sees the world
//! after the ego-motion; each object additionally translates by its own
//! vector. Both frames are rendered by casting the pixel ray against every
//! surface and keeping the nearest hit, so the renderer and the warp share
//! no code beyond the camera model.
//!
//! Textures are painted in frame-`a` pixel coordinates: a surface point is
//! shaded by projecting its frame-`a` position and evaluating value noise
//! there.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{ScalarField, Tape, VectorField3};
use crate::frame::Frame;
use crate::geometry::{resample, warp, Intrinsics, RigidMotion, Rotation, Var3, Z_MIN};

/// Largest accepted self-check residual for a noise-free sample.
pub const SELF_CHECK_TOLERANCE: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec at {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("object {0} leaves the frame")]
    LeavesFrame(usize),
    #[error("self check residual {0} exceeds tolerance")]
    SelfCheck(f64),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Depth at the top and bottom image rows; inverse depth is linear in
    /// the row in between.
    pub depth_top: f64,
    pub depth_bottom: f64,
    pub texture_seed: u64,
    /// Noise cell size in pixels.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: f64,
}

fn default_texture_scale() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// `[x0, y0, width, height]` in frame-`a` pixels.
    pub rect: [usize; 4],
    pub depth: f64,
    pub translation: [f64; 3],
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "schema_v1")]
    pub schema: u32,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub background: BackgroundSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    /// Camera motion from `a` to `b`: `X_b = R X_a + t`.
    #[serde(default)]
    pub ego: RigidMotion,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn schema_v1() -> u32 {
    1
}

impl SceneSpec {
    /// Textured slanted background seen by a forward-moving camera.
    pub fn ego_demo() -> Self {
        Self {
            schema: 1,
            width: 64,
            height: 48,
            intrinsics: Intrinsics::new(52.0, 52.0, 32.0, 24.0),
            background: BackgroundSpec {
                depth_top: 9.0,
                depth_bottom: 3.5,
                texture_seed: 11,
                texture_scale: 6.0,
            },
            objects: vec![
                ObjectSpec {
                    rect: [8, 20, 14, 12],
                    depth: 2.5,
                    translation: [0.0; 3],
                    texture_seed: 21,
                },
                ObjectSpec {
                    rect: [42, 10, 12, 14],
                    depth: 4.0,
                    translation: [0.0; 3],
                    texture_seed: 22,
                },
            ],
            ego: RigidMotion::new([0.004, -0.012, 0.003], [0.08, 0.02, 0.25]),
            noise_sigma: 0.0,
        }
    }

    /// One object translating downwards, across the ego-motion flow.
    pub fn dynamic_demo() -> Self {
        Self {
            objects: vec![ObjectSpec {
                rect: [24, 16, 16, 14],
                depth: 3.0,
                translation: [0.0, 0.12, 0.0],
                texture_seed: 31,
            }],
            ..Self::ego_demo()
        }
    }

    /// No objects, no motion.
    pub fn static_scene() -> Self {
        Self {
            objects: Vec::new(),
            ego: RigidMotion::default(),
            ..Self::ego_demo()
        }
    }

    /// A random valid noise-free spec; retries until the objects stay in frame.
    pub fn random(seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n_obj = rng.gen_range(0..=2);
            let objects = (0..n_obj)
                .map(|i| {
                    let (w, h) = (rng.gen_range(8..16), rng.gen_range(8..14));
                    ObjectSpec {
                        rect: [rng.gen_range(6..58 - w), rng.gen_range(6..42 - h), w, h],
                        depth: rng.gen_range(2.0..3.2),
                        translation: [
                            rng.gen_range(-0.12..0.12),
                            rng.gen_range(-0.08..0.08),
                            rng.gen_range(-0.1..0.1),
                        ],
                        texture_seed: seed.wrapping_mul(31).wrapping_add(i as u64 + 1),
                    }
                })
                .collect();
            let ego = RigidMotion::new(
                [
                    rng.gen_range(-0.015..0.015),
                    rng.gen_range(-0.015..0.015),
                    rng.gen_range(-0.015..0.015),
                ],
                [
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.3..0.3),
                ],
            );
            let spec = Self {
                schema: 1,
                width: 64,
                height: 48,
                intrinsics: Intrinsics::new(
                    rng.gen_range(44.0..64.0),
                    rng.gen_range(44.0..64.0),
                    rng.gen_range(30.0..34.0),
                    rng.gen_range(22.0..26.0),
                ),
                background: BackgroundSpec {
                    depth_top: rng.gen_range(6.0..10.0),
                    depth_bottom: rng.gen_range(3.5..5.0),
                    texture_seed: rng.gen(),
                    texture_scale: 6.0,
                },
                objects,
                ego,
                noise_sigma: 0.0,
            };
            if spec.validate().is_ok() {
                return spec;
            }
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.schema != 1 {
            return Err(invalid("schema", format!("unsupported version {}", self.schema)));
        }
        if self.width < 2 || self.height < 2 {
            return Err(invalid("width", "resolution must be at least 2x2"));
        }
        if self.intrinsics.validate(self.width, self.height).is_err() {
            return Err(invalid("intrinsics", "focal lengths must be positive and the principal point inside the image"));
        }
        let bg = &self.background;
        for (name, d) in [("depth_top", bg.depth_top), ("depth_bottom", bg.depth_bottom)] {
            if !(d.is_finite() && d > Z_MIN) {
                return Err(invalid(format!("background.{name}"), "must be a positive depth"));
            }
        }
        if !(bg.texture_scale.is_finite() && bg.texture_scale > 0.0) {
            return Err(invalid("background.texture_scale", "must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be non-negative"));
        }
        if !self.ego.euler.iter().chain(&self.ego.translation).all(|v| v.is_finite()) {
            return Err(invalid("ego", "must be finite"));
        }
        let background = self.background_plane();
        for (i, o) in self.objects.iter().enumerate() {
            let [x0, y0, w, h] = o.rect;
            if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
                return Err(invalid(format!("objects[{i}].rect"), "must be non-empty and inside the image"));
            }
            if !(o.depth.is_finite() && o.depth > Z_MIN) {
                return Err(invalid(format!("objects[{i}].depth"), "must be a positive depth"));
            }
            if !o.translation.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("objects[{i}].translation"), "must be finite"));
            }
            for r in y0..y0 + h {
                for c in x0..x0 + w {
                    if o.depth >= background.depth_at(&self.intrinsics, c as f64, r as f64) {
                        return Err(invalid(format!("objects[{i}].depth"), "must be in front of the background"));
                    }
                }
            }
            self.check_in_frame(i)?;
        }
        Ok(())
    }

    fn check_in_frame(&self, i: usize) -> Result<(), SynthError> {
        let o = &self.objects[i];
        let k = &self.intrinsics;
        let [x0, y0, w, h] = o.rect.map(|v| v as f64);
        let motion = self.ego.rotation();
        let t = self.ego.translation_vec() + Vector3::from(o.translation);
        for (u, v) in [
            (x0 - 0.5, y0 - 0.5),
            (x0 + w - 0.5, y0 - 0.5),
            (x0 - 0.5, y0 + h - 0.5),
            (x0 + w - 0.5, y0 + h - 0.5),
        ] {
            let p = motion * k.unproject(u, v, o.depth) + t;
            if p.z <= Z_MIN {
                return Err(SynthError::LeavesFrame(i));
            }
            let (ub, vb) = k.project(&p);
            let inside = (-0.5..=self.width as f64 - 0.5).contains(&ub)
                && (-0.5..=self.height as f64 - 0.5).contains(&vb);
            if !inside {
                return Err(SynthError::LeavesFrame(i));
            }
        }
        Ok(())
    }

    fn background_plane(&self) -> Plane {
        // n = (0, ny, nz), n . X = 1, inverse depth linear in the row
        let k = &self.intrinsics;
        let (it, ib) = (1.0 / self.background.depth_top, 1.0 / self.background.depth_bottom);
        let yt = (0.0 - k.cy) / k.fy;
        let yb = (self.height as f64 - 1.0 - k.cy) / k.fy;
        let ny = (ib - it) / (yb - yt);
        let nz = it - ny * yt;
        Plane {
            normal: Vector3::new(0.0, ny, nz),
            offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    fn depth_at(&self, k: &Intrinsics, u: f64, v: f64) -> f64 {
        let d = k.unproject(u, v, 1.0);
        self.offset / self.normal.dot(&d)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (sx, sy) = (smoothstep(x - fx), smoothstep(y - fy));
    let top = lattice(ix, iy, seed) * (1.0 - sx) + lattice(ix + 1, iy, seed) * sx;
    let bottom = lattice(ix, iy + 1, seed) * (1.0 - sx) + lattice(ix + 1, iy + 1, seed) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Two-octave colored value noise in `[0.15, 0.85]`.
#[derive(Debug, Clone, Copy)]
struct Texture {
    seed: u64,
    scale: f64,
}

impl Texture {
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let s0 = splitmix(self.seed.wrapping_mul(6).wrapping_add(2 * ch as u64));
            let s1 = splitmix(self.seed.wrapping_mul(6).wrapping_add(2 * ch as u64 + 1));
            let fine = value_noise(u / self.scale, v / self.scale, s0);
            let coarse = value_noise(u / (2.5 * self.scale), v / (2.5 * self.scale), s1);
            *o = 0.15 + 0.7 * (0.6 * fine + 0.4 * coarse);
        }
        out
    }
}

struct Surface {
    plane: Plane,
    /// Frame-`a` pixel extent `[u0, u1) x [v0, v1)`; `None` for unbounded.
    extent: Option<[f64; 4]>,
    translation: Vector3<f64>,
    texture: Texture,
}

struct Hit {
    depth: f64,
    surface: usize,
    color: [f64; 3],
}

/// Nearest surface hit by the ray through `(u, v)` of the camera reached by
/// `(rotation, ego)` from camera `a`; objects translate only when `moved`.
fn cast(
    k: &Intrinsics,
    surfaces: &[Surface],
    rotation: &Matrix3<f64>,
    ego: &Vector3<f64>,
    moved: bool,
    u: f64,
    v: f64,
) -> Option<Hit> {
    let d = k.unproject(u, v, 1.0);
    let rt = rotation.transpose();
    let rd = rt * d;
    let mut best: Option<Hit> = None;
    for (id, s) in surfaces.iter().enumerate() {
        let shift = if moved { ego + s.translation } else { *ego };
        let denom = s.plane.normal.dot(&rd);
        if denom.abs() < 1e-12 {
            continue;
        }
        let lambda = (s.plane.offset + s.plane.normal.dot(&(rt * shift))) / denom;
        if lambda <= Z_MIN || best.as_ref().is_some_and(|b| b.depth <= lambda) {
            continue;
        }
        let xa = rt * (d * lambda - shift);
        if xa.z <= Z_MIN {
            continue;
        }
        let (ua, va) = k.project(&xa);
        if let Some([u0, u1, v0, v1]) = s.extent {
            if !(ua >= u0 && ua < u1 && va >= v0 && va < v1) {
                continue;
            }
        }
        best = Some(Hit {
            depth: lambda,
            surface: id,
            color: s.texture.color(ua, va),
        });
    }
    best
}

/// A rendered pair with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub spec: SceneSpec,
    pub seed: u64,
    pub frame_a: Frame,
    pub frame_b: Frame,
    pub depth_a: ScalarField,
    pub depth_b: ScalarField,
    /// Residual translation on the grid of `a`, motion `a -> b`.
    pub t_obj_ab: VectorField3,
    /// Residual translation on the grid of `b`, motion `b -> a`.
    pub t_obj_ba: VectorField3,
    pub ego_ab: RigidMotion,
    pub ego_ba: RigidMotion,
    /// Surface ids: 0 for the background, `i + 1` for object `i`.
    pub objects_a: Vec<u8>,
    pub objects_b: Vec<u8>,
    /// 1 where the pixel is visible in the other frame.
    pub valid_a: ScalarField,
    pub valid_b: ScalarField,
}

impl SceneSample {
    pub fn intrinsics(&self) -> Intrinsics {
        self.spec.intrinsics
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }

    /// Object membership in frame `a` as a 0/1 field.
    pub fn object_mask_a(&self) -> ScalarField {
        let (h, w) = self.dims();
        ScalarField::from_fn(h, w, |r, c| (self.objects_a[r * w + c] > 0) as u8 as f64)
    }
}

struct View {
    colors: [ScalarField; 3],
    depth: ScalarField,
    ids: Vec<u8>,
}

fn render_view(spec: &SceneSpec, surfaces: &[Surface], rotation: &Matrix3<f64>, ego: &Vector3<f64>, moved: bool) -> View {
    let (h, w) = (spec.height, spec.width);
    let mut colors = [
        ScalarField::zeros(h, w),
        ScalarField::zeros(h, w),
        ScalarField::zeros(h, w),
    ];
    let mut depth = ScalarField::zeros(h, w);
    let mut ids = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let hit = cast(&spec.intrinsics, surfaces, rotation, ego, moved, c as f64, r as f64)
                .expect("background plane is hit by every ray");
            for (ch, v) in colors.iter_mut().zip(hit.color) {
                ch.set(r, c, v);
            }
            depth.set(r, c, hit.depth);
            ids[r * w + c] = hit.surface as u8;
        }
    }
    View { colors, depth, ids }
}

/// 1 where the motion maps the pixel onto a 2x2 neighbourhood of the same
/// surface in the other view.
fn validity(
    k: &Intrinsics,
    depth: &ScalarField,
    ids: &[u8],
    other_ids: &[u8],
    rotation: &Matrix3<f64>,
    shifts: &[Vector3<f64>],
) -> ScalarField {
    let (h, w) = depth.dims();
    ScalarField::from_fn(h, w, |r, c| {
        let id = ids[r * w + c];
        let p = rotation * k.unproject(c as f64, r as f64, depth.get(r, c)) + shifts[id as usize];
        if p.z <= Z_MIN {
            return 0.0;
        }
        let (u, v) = k.project(&p);
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return 0.0;
        }
        let x0 = (u.floor() as usize).min(w - 2);
        let y0 = (v.floor() as usize).min(h - 2);
        let same = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
            .iter()
            .all(|&(rr, cc)| other_ids[rr * w + cc] == id);
        same as u8 as f64
    })
}

/// Renders both frames of `spec`. `seed` perturbs the textures and drives
/// the pixel noise.
pub fn render_pair(spec: &SceneSpec, seed: u64) -> Result<SceneSample, SynthError> {
    spec.validate()?;
    if spec.objects.len() > 254 {
        return Err(invalid("objects", "at most 254 objects"));
    }
    let k = spec.intrinsics;
    let scale = spec.background.texture_scale;
    let mix = |s: u64| splitmix(s ^ splitmix(seed));
    let mut surfaces = vec![Surface {
        plane: spec.background_plane(),
        extent: None,
        translation: Vector3::zeros(),
        texture: Texture {
            seed: mix(spec.background.texture_seed),
            scale,
        },
    }];
    for o in &spec.objects {
        let [x0, y0, w, h] = o.rect.map(|v| v as f64);
        surfaces.push(Surface {
            plane: Plane {
                normal: Vector3::new(0.0, 0.0, 1.0),
                offset: o.depth,
            },
            extent: Some([x0 - 0.5, x0 + w - 0.5, y0 - 0.5, y0 + h - 0.5]),
            translation: Vector3::from(o.translation),
            texture: Texture {
                seed: mix(o.texture_seed),
                scale,
            },
        });
    }

    let rot = spec.ego.rotation();
    let ego = spec.ego.translation_vec();
    let view_a = render_view(spec, &surfaces, &Matrix3::identity(), &Vector3::zeros(), false);
    let view_b = render_view(spec, &surfaces, &rot, &ego, true);

    let (h, w) = (spec.height, spec.width);
    let obj_t = |id: u8| surfaces[id as usize].translation;
    let rt = rot.transpose();
    let field = |ids: &[u8], f: &dyn Fn(u8) -> Vector3<f64>| {
        let mut out = VectorField3::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                let t = f(ids[r * w + c]);
                out.set(r, c, [t.x, t.y, t.z]);
            }
        }
        out
    };
    let t_obj_ab = field(&view_a.ids, &obj_t);
    let t_obj_ba = field(&view_b.ids, &|id| -(rt * obj_t(id)));

    let ego_ab = spec.ego;
    let ego_ba = spec.ego.inverse();
    let shifts_ab: Vec<_> = surfaces.iter().map(|s| ego + s.translation).collect();
    let shifts_ba: Vec<_> = surfaces.iter().map(|s| -(rt * (ego + s.translation))).collect();
    let valid_a = validity(&k, &view_a.depth, &view_a.ids, &view_b.ids, &rot, &shifts_ab);
    let valid_b = validity(&k, &view_b.depth, &view_b.ids, &view_a.ids, &rt, &shifts_ba);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut finish = |colors: [ScalarField; 3]| -> Frame {
        let [r, g, b] = colors.map(|mut ch| {
            if spec.noise_sigma > 0.0 {
                let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
                for v in ch.values_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            ch
        });
        Frame::new(r, g, b)
    };
    let frame_a = finish(view_a.colors);
    let frame_b = finish(view_b.colors);

    Ok(SceneSample {
        spec: spec.clone(),
        seed,
        frame_a,
        frame_b,
        depth_a: view_a.depth,
        depth_b: view_b.depth,
        t_obj_ab,
        t_obj_ba,
        ego_ab,
        ego_ba,
        objects_a: view_a.ids,
        objects_b: view_b.ids,
        valid_a,
        valid_b,
    })
}

/// Largest color difference between frame `a` and frame `b` pulled back
/// through the ground-truth depth and motion, over pixels valid in `a`.
pub fn photometric_residual(sample: &SceneSample) -> f64 {
    let tape = Tape::new();
    let depth = tape.constant(sample.depth_a.clone());
    let ego = &sample.ego_ab;
    let t = Var3::constant_field(&tape, &sample.t_obj_ab).add(&Var3::constant_vec(&tape, ego.translation));
    let w = warp(
        depth,
        &sample.intrinsics().constants(&tape),
        &Rotation::constant(&tape, &ego.rotation()),
        &t,
    );
    let resampled = resample(&sample.frame_b.constants(&tape), tape.constant(sample.depth_b.clone()), &w);
    let mut worst: f64 = 0.0;
    let (h, wd) = sample.dims();
    for r in 0..h {
        for c in 0..wd {
            if sample.valid_a.get(r, c) == 0.0 || resampled.mask.get(r, c) == 0.0 {
                continue;
            }
            for (ch, s) in sample.frame_a.channels.iter().zip(&resampled.channels) {
                worst = worst.max((ch.get(r, c) - s.field().get(r, c)).abs());
            }
        }
    }
    worst
}

/// [`photometric_residual`] with the generator tolerance enforced.
pub fn self_check(sample: &SceneSample) -> Result<f64, SynthError> {
    let res = photometric_residual(sample);
    if res <= SELF_CHECK_TOLERANCE {
        Ok(res)
    } else {
        Err(SynthError::SelfCheck(res))
    }
}
