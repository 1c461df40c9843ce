use nalgebra::{Isometry3, Point3, Translation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{hash_words, WorldScene};
use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::image::{clamp_unit, luma, ImageGray, ImageRgb, StereoImage};
use crate::maps::{DepthMap, INVALID};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Grayscale infrared with the projected dot pattern.
    Ir,
    /// Visible-light color.
    Rgb,
}

impl std::fmt::Display for RenderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RenderMode::Ir => "ir",
            RenderMode::Rgb => "rgb",
        })
    }
}

/// One pinhole camera: intrinsics from the rig, `pose` maps camera
/// coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub pose: Isometry3<f64>,
    pub rig: StereoRig,
}

impl CameraView {
    pub fn left(rig: &StereoRig, rig_pose: &Isometry3<f64>) -> Self {
        Self {
            pose: *rig_pose,
            rig: *rig,
        }
    }

    pub fn right(rig: &StereoRig, rig_pose: &Isometry3<f64>) -> Self {
        Self {
            pose: rig_pose * Translation3::new(rig.baseline_m, 0.0, 0.0),
            rig: *rig,
        }
    }

    fn origin(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    /// World-space ray through pixel `(x, y)`; the direction has unit
    /// component along the optical axis.
    #[inline]
    fn ray(&self, x: usize, y: usize) -> Vector3<f64> {
        self.pose.rotation * Vector3::from(self.rig.pixel_ray(x as f64, y as f64))
    }
}

/// Additive per-pixel intensity from the projected dots.
#[derive(Debug, Clone, PartialEq)]
pub struct IrLayer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrProjectorSpec {
    /// Dots per steradian.
    pub dot_density: f64,
    pub seed: u64,
    /// Peak dot intensity on a surface 1 m from the projector.
    pub intensity: f64,
}

impl Default for IrProjectorSpec {
    fn default() -> Self {
        Self {
            dot_density: 40_000.0,
            seed: 0,
            intensity: 0.08,
        }
    }
}

impl IrProjectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dot_density > 0.0 && self.dot_density.is_finite()) {
            return Err(Error::param("dot_density", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::param("intensity", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Peak splat intensity of a dot landing `distance_m` from the projector.
    pub fn dot_intensity(&self, distance_m: f64) -> f64 {
        self.intensity / (distance_m * distance_m)
    }
}

/// Read noise and quantization applied to every rendered image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    /// Standard deviation of additive Gaussian noise, in intensity units.
    pub noise_std: f64,
    pub seed: u64,
    /// Round intensities to 8-bit levels.
    pub quantize: bool,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Gaussian splat standard deviation in pixels.
const SPLAT_SIGMA_PX: f64 = 1.0;
const SPLAT_RADIUS_PX: i64 = 3;
/// The dot field overfills the camera frustum by this factor.
const FRUSTUM_MARGIN: f64 = 1.15;
/// Hits farther apart than this are treated as occluded.
pub const OCCLUSION_TOLERANCE_M: f64 = 1e-3;

/// Per-pixel ray cast. Pixels that hit nothing are black.
pub fn render_view(
    scene: &WorldScene,
    view: &CameraView,
    mode: RenderMode,
    ir_layer: Option<&IrLayer>,
) -> StereoImage {
    let (w, h) = view.rig.image_size;
    let il = scene.illumination;
    let origin = view.origin();
    match mode {
        RenderMode::Rgb => {
            let mut data = vec![0.0f32; 3 * w * h];
            par::for_each_row(&mut data, 3 * w, |y, row| {
                for x in 0..w {
                    let dir = view.ray(x, y);
                    if let Some(hit) = scene.intersect(&origin, &dir) {
                        let albedo = scene.prims[hit.prim].texture.albedo(hit.uv.0, hit.uv.1);
                        let cos = hit.normal.dot(&dir.normalize()).abs();
                        let shade = il.ambient + il.headlight * cos;
                        for c in 0..3 {
                            row[3 * x + c] = clamp_unit((albedo[c] * shade) as f32);
                        }
                    }
                }
            });
            StereoImage::Rgb(ImageRgb::from_raw(w, h, data))
        }
        RenderMode::Ir => {
            let mut data = vec![0.0f32; w * h];
            par::for_each_row(&mut data, w, |y, row| {
                for (x, out) in row.iter_mut().enumerate() {
                    let dir = view.ray(x, y);
                    let mut v = 0.0f64;
                    if let Some(hit) = scene.intersect(&origin, &dir) {
                        let a = scene.prims[hit.prim].texture.albedo(hit.uv.0, hit.uv.1);
                        let gray = luma(a[0] as f32, a[1] as f32, a[2] as f32) as f64;
                        v = gray * il.ir_intensity_scale + il.ir_ambient;
                    }
                    if let Some(layer) = ir_layer {
                        v += layer.data[y * w + x] as f64;
                    }
                    *out = clamp_unit(v as f32);
                }
            });
            StereoImage::Gray(ImageGray::from_raw(w, h, data))
        }
    }
}

/// Optical-axis depth of the nearest surface; misses are invalid.
pub fn render_gt_depth(scene: &WorldScene, view: &CameraView) -> DepthMap {
    let (w, h) = view.rig.image_size;
    let origin = view.origin();
    let mut values = vec![INVALID; w * h];
    par::for_each_row(&mut values, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            if let Some(hit) = scene.intersect(&origin, &view.ray(x, y)) {
                *out = hit.t as f32;
            }
        }
    });
    DepthMap::from_values(w, h, values).expect("dimensions match")
}

/// Dot directions in the projector frame (unit z component), drawn
/// uniformly per solid angle inside the frustum of `rig`.
pub fn projector_dots(projector: &IrProjectorSpec, rig: &StereoRig) -> Vec<Vector3<f64>> {
    let (w, h) = rig.image_size;
    let (cx, cy) = rig.principal_point;
    let f = rig.focal_px;
    let x0 = (-0.5 - cx) / f * FRUSTUM_MARGIN;
    let x1 = (w as f64 - 0.5 - cx) / f * FRUSTUM_MARGIN;
    let y0 = (-0.5 - cy) / f * FRUSTUM_MARGIN;
    let y1 = (h as f64 - 0.5 - cy) / f * FRUSTUM_MARGIN;
    let count = (projector.dot_density * rect_solid_angle(x0, x1, y0, y1)).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(projector.seed);
    let mut dots = Vec::with_capacity(count);
    while dots.len() < count {
        let tx = rng.random_range(x0..x1);
        let ty = rng.random_range(y0..y1);
        // solid-angle density on the z = 1 plane is cos³θ
        let accept = (1.0 + tx * tx + ty * ty).powf(-1.5);
        if rng.random::<f64>() < accept {
            dots.push(Vector3::new(tx, ty, 1.0));
        }
    }
    dots
}

/// Solid angle of the rectangle `[x0, x1] × [y0, y1]` on the plane `z = 1`.
pub fn rect_solid_angle(x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let g = |x: f64, y: f64| (x * y / (1.0 + x * x + y * y).sqrt()).atan();
    g(x1, y1) - g(x0, y1) - g(x1, y0) + g(x0, y0)
}

/// Pose of the projector: midway between the two cameras, same orientation.
pub fn projector_pose(rig: &StereoRig, rig_pose: &Isometry3<f64>) -> Isometry3<f64> {
    rig_pose * Translation3::new(rig.baseline_m / 2.0, 0.0, 0.0)
}

/// Splats every dot visible from `view` into an additive layer.
///
/// Dots are cast from the projector into the scene, so both cameras see
/// the same world-space pattern.
pub fn project_ir_pattern(
    scene: &WorldScene,
    view: &CameraView,
    projector: &IrProjectorSpec,
    projector_pose: &Isometry3<f64>,
) -> IrLayer {
    let dirs = projector_dots(projector, &view.rig);
    project_dots(scene, view, projector, projector_pose, &dirs)
}

fn project_dots(
    scene: &WorldScene,
    view: &CameraView,
    projector: &IrProjectorSpec,
    projector_pose: &Isometry3<f64>,
    dirs: &[Vector3<f64>],
) -> IrLayer {
    let (w, h) = view.rig.image_size;
    let p_origin = Point3::from(projector_pose.translation.vector);
    let cam_origin = view.origin();
    let to_cam = view.pose.inverse();

    let splats: Vec<Option<(f64, f64, f64)>> = par::map_slice(dirs, |d| {
        let dir = projector_pose.rotation * d;
        let hit = scene.intersect(&p_origin, &dir)?;
        let distance = hit.t * dir.norm();
        let pc = to_cam * hit.point;
        let (u, v) = view.rig.project([pc.x, pc.y, pc.z])?;
        let r = SPLAT_RADIUS_PX as f64;
        if u < -r || v < -r || u > w as f64 - 1.0 + r || v > h as f64 - 1.0 + r {
            return None;
        }
        let cam_dir_cam = pc.coords / pc.z;
        let cam_dir = view.pose.rotation * cam_dir_cam;
        let seen = scene.intersect(&cam_origin, &cam_dir)?;
        if (seen.t - pc.z).abs() * cam_dir_cam.norm() > OCCLUSION_TOLERANCE_M {
            return None;
        }
        Some((u, v, projector.dot_intensity(distance)))
    });

    // bucket by nearest row so each output row gathers in a fixed order
    let mut rows: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); h];
    for s in splats.into_iter().flatten() {
        let r = (s.1.round() as i64).clamp(0, h as i64 - 1) as usize;
        rows[r].push(s);
    }
    let inv2s2 = 1.0 / (2.0 * SPLAT_SIGMA_PX * SPLAT_SIGMA_PX);
    let mut data = vec![0.0f32; w * h];
    par::for_each_row(&mut data, w, |y, row| {
        let lo = (y as i64 - SPLAT_RADIUS_PX - 1).max(0) as usize;
        let hi = ((y as i64 + SPLAT_RADIUS_PX + 1) as usize).min(h - 1);
        let mut acc = vec![0.0f64; w];
        for bucket in &rows[lo..=hi] {
            for &(u, v, intensity) in bucket {
                let dy = y as f64 - v;
                if dy.abs() > SPLAT_RADIUS_PX as f64 {
                    continue;
                }
                let xs = ((u.round() as i64) - SPLAT_RADIUS_PX).max(0);
                let xe = ((u.round() as i64) + SPLAT_RADIUS_PX).min(w as i64 - 1);
                for x in xs..=xe {
                    let dx = x as f64 - u;
                    acc[x as usize] += intensity * (-(dx * dx + dy * dy) * inv2s2).exp();
                }
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    IrLayer {
        width: w,
        height: h,
        data,
    }
}

/// Adds seeded Gaussian read noise (and optional 8-bit quantization).
/// `stream` separates cameras and frames; each row has its own generator.
pub fn apply_sensor_noise(img: &mut StereoImage, sensor: &SensorSpec, stream: u64) {
    if sensor.noise_std == 0.0 && !sensor.quantize {
        return;
    }
    let (w, _) = img.dims();
    let (data, channels) = match img {
        StereoImage::Gray(g) => (g.data_mut(), 1),
        StereoImage::Rgb(c) => (c.data_mut(), 3),
    };
    let normal = Normal::new(0.0, sensor.noise_std.max(0.0)).expect("finite std");
    par::for_each_row(data, channels * w, |y, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[sensor.seed, stream, y as u64]));
        for v in row.iter_mut() {
            let mut x = *v as f64;
            if sensor.noise_std > 0.0 {
                x += normal.sample(&mut rng);
            }
            let mut q = clamp_unit(x as f32);
            if sensor.quantize {
                q = (q * 255.0).round() / 255.0;
            }
            *v = q;
        }
    });
}

/// IR when the median valid ground-truth depth is below `threshold_m`,
/// RGB otherwise. The median of an even count is the lower middle value.
pub fn select_render_mode(gt_depth: &DepthMap, threshold_m: f64) -> Result<RenderMode> {
    let median = median_depth(gt_depth).ok_or(Error::NoValidPixels("ground-truth depth"))?;
    Ok(if (median as f64) < threshold_m {
        RenderMode::Ir
    } else {
        RenderMode::Rgb
    })
}

pub fn median_depth(depth: &DepthMap) -> Option<f32> {
    let mut vals: Vec<f32> = depth.iter_valid().map(|(_, _, v)| v).collect();
    if vals.is_empty() {
        return None;
    }
    let mid = (vals.len() - 1) / 2;
    let (_, m, _) = vals.select_nth_unstable_by(mid, f32::total_cmp);
    Some(*m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelect {
    #[default]
    Auto,
    Ir,
    Rgb,
}

/// Everything besides the scene and rig that shapes a rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOptions {
    pub projector: Option<IrProjectorSpec>,
    pub sensor: SensorSpec,
    pub mode: ModeSelect,
    pub threshold_m: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            projector: Some(IrProjectorSpec::default()),
            sensor: SensorSpec::default(),
            mode: ModeSelect::Auto,
            threshold_m: 2.0,
        }
    }
}

impl FrameOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.projector {
            p.validate()?;
        }
        self.sensor.validate()?;
        if !(self.threshold_m > 0.0) {
            return Err(Error::param("threshold_m", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub left: StereoImage,
    pub right: StereoImage,
    pub gt_depth: DepthMap,
    pub mode: RenderMode,
    pub frame_index: usize,
}

/// Renders ground truth, picks the mode, and renders both views in it.
pub fn render_stereo_frame(
    scene: &WorldScene,
    rig: &StereoRig,
    rig_pose: &Isometry3<f64>,
    opts: &FrameOptions,
    frame_index: usize,
) -> Result<StereoFrame> {
    rig.validate()?;
    opts.validate()?;
    let left_view = CameraView::left(rig, rig_pose);
    let right_view = CameraView::right(rig, rig_pose);
    let gt_depth = render_gt_depth(scene, &left_view);
    let mode = match opts.mode {
        ModeSelect::Auto => select_render_mode(&gt_depth, opts.threshold_m)?,
        ModeSelect::Ir => RenderMode::Ir,
        ModeSelect::Rgb => RenderMode::Rgb,
    };
    let (ll, rl) = match (mode, &opts.projector) {
        (RenderMode::Ir, Some(p)) => {
            let pose = projector_pose(rig, rig_pose);
            let dirs = projector_dots(p, rig);
            (
                Some(project_dots(scene, &left_view, p, &pose, &dirs)),
                Some(project_dots(scene, &right_view, p, &pose, &dirs)),
            )
        }
        _ => (None, None),
    };
    let mut left = render_view(scene, &left_view, mode, ll.as_ref());
    let mut right = render_view(scene, &right_view, mode, rl.as_ref());
    apply_sensor_noise(
        &mut left,
        &opts.sensor,
        hash_words(&[frame_index as u64, 0]),
    );
    apply_sensor_noise(
        &mut right,
        &opts.sensor,
        hash_words(&[frame_index as u64, 1]),
    );
    Ok(StereoFrame {
        left,
        right,
        gt_depth,
        mode,
        frame_index,
    })
}
