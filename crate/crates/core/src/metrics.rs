//! Depth-map and 6DoF pose evaluation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::maps::{DepthMap, MaskedMap, Unit};
use crate::par;

pub const DELTA_THRESHOLDS: [f64; 3] = [1.05, 1.10, 1.25];

/// How the δ test treats a ratio exactly on the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaConvention {
    /// `max(p/g, g/p) < δ`
    #[default]
    Strict,
    /// `max(p/g, g/p) <= δ`
    Inclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricsReport {
    pub rmse: f64,
    pub rel: f64,
    pub mae: f64,
    pub delta_105: f64,
    pub delta_110: f64,
    pub delta_125: f64,
    pub n_evaluated: usize,
}

impl DepthMetricsReport {
    pub fn deltas(&self) -> [f64; 3] {
        [self.delta_105, self.delta_110, self.delta_125]
    }

    /// Unweighted mean of per-image reports.
    pub fn mean(reports: &[DepthMetricsReport]) -> Result<DepthMetricsReport> {
        if reports.is_empty() {
            return Err(Error::Invalid("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&DepthMetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(DepthMetricsReport {
            rmse: avg(|r| r.rmse),
            rel: avg(|r| r.rel),
            mae: avg(|r| r.mae),
            delta_105: avg(|r| r.delta_105),
            delta_110: avg(|r| r.delta_110),
            delta_125: avg(|r| r.delta_125),
            n_evaluated: reports.iter().map(|r| r.n_evaluated).sum(),
        })
    }
}

/// Nearest-neighbour resample to `width × height`.
pub fn resize_nearest<U: Unit>(m: &MaskedMap<U>, width: usize, height: usize) -> MaskedMap<U> {
    let (sw, sh) = m.dims();
    MaskedMap::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * sw as f64 / width as f64).floor() as usize).min(sw - 1);
        let sy = (((y as f64 + 0.5) * sh as f64 / height as f64).floor() as usize).min(sh - 1);
        m.get(sx, sy)
    })
}

/// RMSE, REL, MAE and δ inlier fractions over pixels valid in both maps.
///
/// `resize_to` is `(height, width)`; both maps are resampled with nearest
/// neighbour before comparison.
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    resize_to: Option<(usize, usize)>,
    convention: DeltaConvention,
) -> Result<DepthMetricsReport> {
    let resized;
    let (pred, gt) = match resize_to {
        Some((h, w)) => {
            if h == 0 || w == 0 {
                return Err(Error::param("resize_to", "dimensions must be > 0"));
            }
            resized = (resize_nearest(pred, w, h), resize_nearest(gt, w, h));
            (&resized.0, &resized.1)
        }
        None => (pred, gt),
    };
    if pred.dims() != gt.dims() {
        return Err(Error::dims("prediction", gt.dims(), pred.dims()));
    }
    let mut n = 0usize;
    let (mut se, mut ae, mut re) = (0.0f64, 0.0f64, 0.0f64);
    let mut inliers = [0usize; 3];
    for i in 0..gt.len() {
        let (Some(p), Some(g)) = (pred.get_index(i), gt.get_index(i)) else {
            continue;
        };
        let (p, g) = (p as f64, g as f64);
        let diff = (p - g).abs();
        n += 1;
        se += diff * diff;
        ae += diff;
        re += diff / g;
        let ratio = (p / g).max(g / p);
        for (k, &t) in DELTA_THRESHOLDS.iter().enumerate() {
            let hit = match convention {
                DeltaConvention::Strict => ratio < t,
                DeltaConvention::Inclusive => ratio <= t,
            };
            inliers[k] += hit as usize;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels(
            "no pixel is valid in both prediction and ground truth",
        ));
    }
    let nf = n as f64;
    Ok(DepthMetricsReport {
        rmse: (se / nf).sqrt(),
        rel: re / nf,
        mae: ae / nf,
        delta_105: inliers[0] as f64 / nf,
        delta_110: inliers[1] as f64 / nf,
        delta_125: inliers[2] as f64 / nf,
        n_evaluated: n,
    })
}

/// Per-pixel optional values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField<T> {
    width: usize,
    height: usize,
    values: Vec<Option<T>>,
}

impl<T: Copy> PixelField<T> {
    fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<T>) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[Option<T>] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub type NormalMap = PixelField<[f64; 3]>;
pub type GradientMap = PixelField<[f64; 2]>;

fn cross_neighbors(z: &DepthMap, x: usize, y: usize) -> Option<[f64; 4]> {
    if x == 0 || y == 0 || x + 1 >= z.width() || y + 1 >= z.height() {
        return None;
    }
    Some([
        z.get(x - 1, y)? as f64,
        z.get(x + 1, y)? as f64,
        z.get(x, y - 1)? as f64,
        z.get(x, y + 1)? as f64,
    ])
}

/// Unit normals from back-projected points; tangents are central
/// differences and the normal is `ty × tx`, so surfaces face the camera
/// (negative z). Pixels missing any 4-neighbour are invalid.
pub fn normals_from_depth(z: &DepthMap, rig: &StereoRig) -> NormalMap {
    PixelField::from_fn(z.width(), z.height(), |x, y| {
        z.get(x, y)?;
        let [zl, zr, zu, zd] = cross_neighbors(z, x, y)?;
        let (u, v) = (x as f64, y as f64);
        let p = |uu: f64, vv: f64, d: f64| Vector3::from(rig.back_project(uu, vv, d));
        let tx = p(u + 1.0, v, zr) - p(u - 1.0, v, zl);
        let ty = p(u, v + 1.0, zd) - p(u, v - 1.0, zu);
        let n = ty.cross(&tx);
        let len = n.norm();
        (len > 0.0 && len.is_finite()).then(|| {
            let n = n / len;
            [n.x, n.y, n.z]
        })
    })
}

/// `(∂z/∂x, ∂z/∂y)` in meters per pixel by central differences.
pub fn gradient_from_depth(z: &DepthMap) -> GradientMap {
    PixelField::from_fn(z.width(), z.height(), |x, y| {
        z.get(x, y)?;
        let [zl, zr, zu, zd] = cross_neighbors(z, x, y)?;
        Some([(zr - zl) / 2.0, (zd - zu) / 2.0])
    })
}

/// `(1 − C)·z_sim + C·z_coarse` per pixel. A pixel needs only the operands
/// its weight actually references.
pub fn confidence_fusion(z_sim: &DepthMap, z_coarse: &DepthMap, conf: &[f32]) -> Result<DepthMap> {
    if z_sim.dims() != z_coarse.dims() {
        return Err(Error::dims("coarse depth", z_sim.dims(), z_coarse.dims()));
    }
    if conf.len() != z_sim.len() {
        return Err(Error::Invalid(format!(
            "confidence has {} entries, expected {}",
            conf.len(),
            z_sim.len()
        )));
    }
    let w = z_sim.width();
    let mut out = DepthMap::invalid(w, z_sim.height());
    for (i, &c) in conf.iter().enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidPixel {
                x: i % w,
                y: i / w,
                reason: format!("confidence {c} outside [0, 1]"),
            });
        }
        let v = if c == 0.0 {
            z_sim.get_index(i)
        } else if c == 1.0 {
            z_coarse.get_index(i)
        } else {
            match (z_sim.get_index(i), z_coarse.get_index(i)) {
                (Some(a), Some(b)) => {
                    let c = c as f64;
                    let v = ((1.0 - c) * a as f64 + c * b as f64) as f32;
                    Some(v.clamp(a.min(b), a.max(b)))
                }
                _ => None,
            }
        };
        if let Some(v) = v {
            out.set(i % w, i / w, v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_c: f64,
    pub w_n: f64,
    pub w_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_c: 1.0,
            w_n: 1.0,
            w_g: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_c", self.w_c), ("w_n", self.w_n), ("w_g", self.w_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub depth_coarse: f64,
    pub normal_coarse: f64,
    pub gradient_coarse: f64,
    pub depth_fine: f64,
    pub normal_fine: f64,
    pub gradient_fine: f64,
    pub total: f64,
}

fn masked_l1<T: Copy>(a: &PixelField<T>, b: &PixelField<T>, dist: impl Fn(T, T) -> f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += dist(*x, *y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn branch_terms(pred: &DepthMap, gt: &DepthMap, rig: &StereoRig) -> Result<[f64; 3]> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims("prediction", gt.dims(), pred.dims()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..gt.len() {
        if let (Some(p), Some(g)) = (pred.get_index(i), gt.get_index(i)) {
            sum += (p as f64 - g as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels(
            "prediction and ground truth do not overlap",
        ));
    }
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let ln = masked_l1(
        &normals_from_depth(pred, rig),
        &normals_from_depth(gt, rig),
        |a, b| l1(&a, &b),
    );
    let lg = masked_l1(
        &gradient_from_depth(pred),
        &gradient_from_depth(gt),
        |a, b| l1(&a, &b),
    );
    Ok([sum / n as f64, ln, lg])
}

/// `L = L_f + w_c·L_c` with each branch `L_Z + w_n·L_N + w_g·L_G`; every
/// term is an L1 mean over pixels valid in both operands.
pub fn restoration_loss(
    pred_c: &DepthMap,
    pred_f: &DepthMap,
    gt: &DepthMap,
    rig: &StereoRig,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let [zc, nc, gc] = branch_terms(pred_c, gt, rig)?;
    let [zf, nf, gf] = branch_terms(pred_f, gt, rig)?;
    let branch = |z: f64, n: f64, g: f64| z + weights.w_n * n + weights.w_g * g;
    Ok(LossBreakdown {
        depth_coarse: zc,
        normal_coarse: nc,
        gradient_coarse: gc,
        depth_fine: zf,
        normal_fine: nf,
        gradient_fine: gf,
        total: branch(zf, nf, gf) + weights.w_c * branch(zc, nc, gc),
    })
}

/// Rotation and translation taking model coordinates to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        Self {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn apply(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rotation_matrix() * Vector3::from(*p) + self.translation_vector()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let r = self.rotation_matrix();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6 && (r.determinant() - 1.0).abs() <= 1e-6) {
            return Err(Error::Schema {
                path: format!("{path}.rotation"),
                message: "must be orthonormal with determinant +1".into(),
            });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Schema {
                path: format!("{path}.translation"),
                message: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Ground-truth pose of a model together with an estimate of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSample {
    pub gt: Pose,
    pub estimate: Pose,
    pub model_points: Vec<[f64; 3]>,
    pub diameter: f64,
    #[serde(default)]
    pub symmetric: bool,
}

impl PoseSample {
    pub fn validate(&self, path: &str) -> Result<()> {
        self.gt.validate(&format!("{path}.gt"))?;
        self.estimate.validate(&format!("{path}.estimate"))?;
        if self.model_points.is_empty() {
            return Err(Error::Schema {
                path: format!("{path}.model_points"),
                message: "must contain at least one point".into(),
            });
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(Error::Schema {
                path: format!("{path}.diameter"),
                message: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

fn transformed(pose: &Pose, pts: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    let (r, t) = (pose.rotation_matrix(), pose.translation_vector());
    pts.iter().map(|p| r * Vector3::from(*p) + t).collect()
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_error(gt: &Pose, estimate: &Pose, model_points: &[[f64; 3]]) -> f64 {
    let a = transformed(gt, model_points);
    let b = transformed(estimate, model_points);
    a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Mean distance from each ground-truth point to the nearest estimated one.
pub fn adds_error(gt: &Pose, estimate: &Pose, model_points: &[[f64; 3]]) -> f64 {
    let a = transformed(gt, model_points);
    let b = transformed(estimate, model_points);
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / a.len() as f64
}

pub const AUC_MAX_THRESHOLD_M: f64 = 0.10;
pub const AUC_STEPS: usize = 100;

/// Area under the accuracy-threshold curve on `[0, 0.10]` m, trapezoid rule
/// at 1 mm steps, normalised to `[0, 1]`. A sample counts as accurate at
/// threshold `t` when its error is `<= t`.
pub fn accuracy_auc(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let n = errors.len() as f64;
    let acc: Vec<f64> = (0..=AUC_STEPS)
        .map(|k| {
            let t = k as f64 * AUC_MAX_THRESHOLD_M / AUC_STEPS as f64;
            errors.iter().filter(|&&e| e <= t).count() as f64 / n
        })
        .collect();
    let area: f64 = acc.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    area / AUC_STEPS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseAccuracy {
    /// Fraction of samples whose error is below a tenth of the diameter.
    pub add_01d: f64,
    pub auc_add: f64,
    pub auc_adds: f64,
}

/// ADD-0.1d and AUC over a batch. With `use_adds_for_symmetric`, symmetric
/// samples are scored with ADD-S in `add_01d` and `auc_add`; `auc_adds`
/// always uses ADD-S.
pub fn pose_accuracy(samples: &[PoseSample], use_adds_for_symmetric: bool) -> Result<PoseAccuracy> {
    if samples.is_empty() {
        return Err(Error::Invalid(
            "pose evaluation needs at least one sample".into(),
        ));
    }
    for (i, s) in samples.iter().enumerate() {
        s.validate(&format!("samples[{i}]"))?;
    }
    let errs: Vec<(f64, f64)> = par::map_slice(samples, |s| {
        let adds = adds_error(&s.gt, &s.estimate, &s.model_points);
        let add = if use_adds_for_symmetric && s.symmetric {
            adds
        } else {
            add_error(&s.gt, &s.estimate, &s.model_points)
        };
        (add, adds)
    });
    let add: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let adds: Vec<f64> = errs.iter().map(|e| e.1).collect();
    let hits = samples
        .iter()
        .zip(&add)
        .filter(|(s, &e)| e < 0.1 * s.diameter)
        .count();
    Ok(PoseAccuracy {
        add_01d: hits as f64 / samples.len() as f64,
        auc_add: accuracy_auc(&add),
        auc_adds: accuracy_auc(&adds),
    })
}
