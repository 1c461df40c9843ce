//! Procedural scene description: analytic primitives, textures and lights.

use nalgebra::{Isometry3, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::luma;

/// Linear RGB reflectance in `[0, 1]`. Deserializes from a single number
/// (gray) or a three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ColorRepr", into = "[f64; 3]")]
pub struct Color(pub [f64; 3]);

#[derive(Deserialize)]
#[serde(untagged)]
enum ColorRepr {
    Gray(f64),
    Rgb([f64; 3]),
}

impl From<ColorRepr> for Color {
    fn from(c: ColorRepr) -> Self {
        match c {
            ColorRepr::Gray(g) => Color([g; 3]),
            ColorRepr::Rgb(rgb) => Color(rgb),
        }
    }
}

impl From<Color> for [f64; 3] {
    fn from(c: Color) -> Self {
        c.0
    }
}

impl Color {
    pub const fn gray(v: f64) -> Self {
        Color([v; 3])
    }

    pub fn luma(&self) -> f64 {
        luma(self.0[0] as f32, self.0[1] as f32, self.0[2] as f32) as f64
    }

    fn in_unit_range(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Flat {
        albedo: Color,
    },
    /// Squares of side `scale` meters.
    Checker {
        scale: f64,
        #[serde(default = "default_dark")]
        dark: Color,
        #[serde(default = "default_light")]
        light: Color,
    },
    /// Three octaves of value noise; `scale` is the finest lattice spacing
    /// in meters. Albedo is `mean ± contrast / 2`.
    Noise {
        seed: u64,
        scale: f64,
        #[serde(default = "default_mean")]
        mean: f64,
        #[serde(default = "default_contrast")]
        contrast: f64,
    },
}

fn default_dark() -> Color {
    Color::gray(0.2)
}
fn default_light() -> Color {
    Color::gray(0.8)
}
fn default_mean() -> f64 {
    0.5
}
fn default_contrast() -> f64 {
    0.8
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Flat {
            albedo: Color::gray(0.5),
        }
    }
}

impl Texture {
    pub fn noise(seed: u64, scale: f64) -> Self {
        Texture::Noise {
            seed,
            scale,
            mean: default_mean(),
            contrast: default_contrast(),
        }
    }

    /// Albedo at surface coordinates `(s, t)` in meters.
    pub fn albedo(&self, s: f64, t: f64) -> [f64; 3] {
        match *self {
            Texture::Flat { albedo } => albedo.0,
            Texture::Checker { scale, dark, light } => {
                let parity =
                    ((s / scale).floor() as i64 + (t / scale).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    dark.0
                } else {
                    light.0
                }
            }
            Texture::Noise {
                seed,
                scale,
                mean,
                contrast,
            } => {
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let n =
                        fractal_noise(seed.wrapping_add(c as u64 * 0x9E37), s / scale, t / scale);
                    *o = (mean + contrast * (n - 0.5)).clamp(0.0, 1.0);
                }
                out
            }
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Schema {
                path: format!("{path}.{field}"),
                message: msg.to_string(),
            })
        };
        match *self {
            Texture::Flat { albedo } if !albedo.in_unit_range() => {
                bad("albedo", "must lie in [0, 1]")
            }
            Texture::Checker { scale, .. } if !(scale > 0.0 && scale.is_finite()) => {
                bad("scale", "must be > 0")
            }
            Texture::Checker { dark, .. } if !dark.in_unit_range() => {
                bad("dark", "must lie in [0, 1]")
            }
            Texture::Checker { light, .. } if !light.in_unit_range() => {
                bad("light", "must lie in [0, 1]")
            }
            Texture::Noise { scale, .. } if !(scale > 0.0 && scale.is_finite()) => {
                bad("scale", "must be > 0")
            }
            Texture::Noise { mean, .. } if !(0.0..=1.0).contains(&mean) => {
                bad("mean", "must lie in [0, 1]")
            }
            Texture::Noise { contrast, .. } if !(0.0..=1.0).contains(&contrast) => {
                bad("contrast", "must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }
}

/// 64-bit finalizer from splitmix64.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3u64, |h, &w| {
        mix64(h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15))
    })
}

#[inline]
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    (hash_words(&[seed, ix as u64, iy as u64]) >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (u, v) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * u;
    let bottom = c + (d - c) * u;
    top + (bottom - top) * v
}

fn fractal_noise(seed: u64, x: f64, y: f64) -> f64 {
    0.5 * value_noise(seed, x, y)
        + 0.3 * value_noise(seed ^ 0xA5A5, x / 2.0, y / 2.0)
        + 0.2 * value_noise(seed ^ 0x5A5A, x / 4.0, y / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneObject {
    /// Rectangular patch centered on `point`, or unbounded when `extent`
    /// is omitted. `extent` holds half-sizes along the patch's in-plane axes.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        extent: Option<[f64; 2]>,
        #[serde(default)]
        texture: Texture,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        texture: Texture,
    },
}

/// Unbounded world plane `z = distance` facing the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub distance: f64,
    #[serde(default)]
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Illumination {
    /// Visible-light ambient term.
    pub ambient: f64,
    /// Diffuse light co-located with the camera.
    pub headlight: f64,
    /// Weak environment radiance added to IR images.
    pub ir_ambient: f64,
    /// Attenuation of ambient light in the IR band.
    pub ir_intensity_scale: f64,
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            ambient: 0.5,
            headlight: 0.5,
            ir_ambient: 0.05,
            ir_intensity_scale: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub background: Option<Background>,
    #[serde(default)]
    pub illumination: Illumination,
}

fn schema(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() && self.background.is_none() {
            return Err(schema(
                "objects".into(),
                "scene needs at least one object or a background",
            ));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let base = format!("objects[{i}]");
            match obj {
                SceneObject::Plane {
                    point,
                    normal,
                    extent,
                    texture,
                } => {
                    if !finite3(point) {
                        return Err(schema(format!("{base}.point"), "must be finite"));
                    }
                    let n = Vector3::from(*normal);
                    if !finite3(normal) || n.norm() < 1e-9 {
                        return Err(schema(
                            format!("{base}.normal"),
                            "must be a finite non-zero vector",
                        ));
                    }
                    if let Some(e) = extent {
                        if !e.iter().all(|v| *v > 0.0 && v.is_finite()) {
                            return Err(schema(
                                format!("{base}.extent"),
                                "half-extents must be > 0",
                            ));
                        }
                    }
                    texture.validate(&format!("{base}.texture"))?;
                }
                SceneObject::Sphere {
                    center,
                    radius,
                    texture,
                } => {
                    if !finite3(center) {
                        return Err(schema(format!("{base}.center"), "must be finite"));
                    }
                    if !(*radius > 0.0 && radius.is_finite()) {
                        return Err(schema(
                            format!("{base}.radius"),
                            format!("must be > 0, got {radius}"),
                        ));
                    }
                    texture.validate(&format!("{base}.texture"))?;
                }
            }
        }
        if let Some(bg) = &self.background {
            if !(bg.distance > 0.0 && bg.distance.is_finite()) {
                return Err(schema("background.distance".into(), "must be > 0"));
            }
            bg.texture.validate("background.texture")?;
        }
        let il = &self.illumination;
        for (name, v) in [
            ("ambient", il.ambient),
            ("headlight", il.headlight),
            ("ir_ambient", il.ir_ambient),
            ("ir_intensity_scale", il.ir_intensity_scale),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(schema(format!("illumination.{name}"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Unbounded plane at depth `z` facing a camera at the origin.
    pub fn fronto_plane(z: f64, texture: Texture) -> Self {
        Self {
            objects: vec![SceneObject::Plane {
                point: [0.0, 0.0, z],
                normal: [0.0, 0.0, -1.0],
                extent: None,
                texture,
            }],
            background: None,
            illumination: Illumination::default(),
        }
    }

    /// Unbounded plane through `(0, 0, z)` rotated by `angle_rad` about the
    /// camera's vertical axis.
    pub fn slanted_plane(z: f64, angle_rad: f64, texture: Texture) -> Self {
        Self {
            objects: vec![SceneObject::Plane {
                point: [0.0, 0.0, z],
                normal: [angle_rad.sin(), 0.0, -angle_rad.cos()],
                extent: None,
                texture,
            }],
            background: None,
            illumination: Illumination::default(),
        }
    }
}

/// Orthonormal frame attached to a primitive: `u`, `v` span texture space,
/// `n` is the plane normal (unused for spheres).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    pub origin: Point3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub n: Vector3<f64>,
}

impl Frame {
    fn from_normal(origin: Point3<f64>, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let hint = if n.y.abs() < 0.9 {
            Vector3::y()
        } else {
            Vector3::x()
        };
        let u = n.cross(&hint).normalize();
        let v = u.cross(&n);
        Self { origin, u, v, n }
    }

    fn transformed(&self, t: &Isometry3<f64>) -> Self {
        Self {
            origin: t * self.origin,
            u: t.rotation * self.u,
            v: t.rotation * self.v,
            n: t.rotation * self.n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum PrimKind {
    Plane { extent: Option<[f64; 2]> },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct Primitive {
    pub kind: PrimKind,
    pub frame: Frame,
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    /// Ray parameter; with a unit-z camera ray this is optical-axis depth.
    pub t: f64,
    pub point: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
    pub prim: usize,
    pub uv: (f64, f64),
}

/// A scene with all motion applied, ready for ray casting.
#[derive(Debug, Clone)]
pub struct WorldScene {
    pub(crate) prims: Vec<Primitive>,
    pub(crate) illumination: Illumination,
}

const T_MIN: f64 = 1e-9;

impl WorldScene {
    /// Scene at rest: every object at its specified placement.
    pub fn new(spec: &SceneSpec) -> Self {
        Self::build(spec, &[])
    }

    /// Places object `i` with `object_poses[i]` (identity when missing).
    pub fn build(spec: &SceneSpec, object_poses: &[Isometry3<f64>]) -> Self {
        let mut prims = Vec::with_capacity(spec.objects.len() + 1);
        for (i, obj) in spec.objects.iter().enumerate() {
            let pose = object_poses
                .get(i)
                .copied()
                .unwrap_or_else(Isometry3::identity);
            let prim = match obj {
                SceneObject::Plane {
                    point,
                    normal,
                    extent,
                    texture,
                } => Primitive {
                    kind: PrimKind::Plane { extent: *extent },
                    frame: Frame::from_normal(Point3::from(*point), Vector3::from(*normal)),
                    texture: texture.clone(),
                },
                SceneObject::Sphere {
                    center,
                    radius,
                    texture,
                } => Primitive {
                    kind: PrimKind::Sphere { radius: *radius },
                    frame: Frame {
                        origin: Point3::from(*center),
                        u: Vector3::x(),
                        v: Vector3::y(),
                        n: Vector3::z(),
                    },
                    texture: texture.clone(),
                },
            };
            prims.push(Primitive {
                frame: prim.frame.transformed(&pose),
                ..prim
            });
        }
        if let Some(bg) = &spec.background {
            prims.push(Primitive {
                kind: PrimKind::Plane { extent: None },
                frame: Frame::from_normal(Point3::new(0.0, 0.0, bg.distance), -Vector3::z()),
                texture: bg.texture.clone(),
            });
        }
        Self {
            prims,
            illumination: spec.illumination,
        }
    }

    /// Nearest intersection with `t > 0` along `origin + t · dir`.
    pub(crate) fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.prims.iter().enumerate() {
            let limit = best.map_or(f64::INFINITY, |h| h.t);
            if let Some(hit) = p.intersect(origin, dir, limit) {
                best = Some(Hit { prim: i, ..hit });
            }
        }
        best
    }
}

impl Primitive {
    fn intersect(&self, o: &Point3<f64>, dir: &Vector3<f64>, limit: f64) -> Option<Hit> {
        let f = &self.frame;
        match self.kind {
            PrimKind::Plane { extent } => {
                let denom = dir.dot(&f.n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (f.origin - o).dot(&f.n) / denom;
                if !(t > T_MIN && t < limit) {
                    return None;
                }
                let point = o + dir * t;
                let rel = point - f.origin;
                let (s, q) = (rel.dot(&f.u), rel.dot(&f.v));
                if let Some([eu, ev]) = extent {
                    if s.abs() > eu || q.abs() > ev {
                        return None;
                    }
                }
                // face the incoming ray
                let normal = if denom < 0.0 { f.n } else { -f.n };
                Some(Hit {
                    t,
                    point,
                    normal: Unit::new_unchecked(normal),
                    prim: 0,
                    uv: (s, q),
                })
            }
            PrimKind::Sphere { radius } => {
                let oc = o - f.origin;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let near = (-b - sq) / a;
                let far = (-b + sq) / a;
                let t = if near > T_MIN { near } else { far };
                if !(t > T_MIN && t < limit) {
                    return None;
                }
                let point = o + dir * t;
                let outward = (point - f.origin) / radius;
                let normal = if outward.dot(dir) < 0.0 {
                    outward
                } else {
                    -outward
                };
                let local = Vector3::new(outward.dot(&f.u), outward.dot(&f.v), outward.dot(&f.n));
                let uv = (
                    local.x.atan2(local.z) * radius,
                    local.y.clamp(-1.0, 1.0).asin() * radius,
                );
                Some(Hit {
                    t,
                    point,
                    normal: Unit::new_normalize(normal),
                    prim: 0,
                    uv,
                })
            }
        }
    }
}
