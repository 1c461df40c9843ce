use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectified stereo pair: two identical pinhole cameras, the right one
/// displaced by `baseline_m` along the left camera's +x axis.
///
/// Camera frame is x right, y down, z forward. Pixel `(x, y)` looks along
/// `((x - cx) / f, (y - cy) / f, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereoRig {
    pub baseline_m: f64,
    pub focal_px: f64,
    pub principal_point: (f64, f64),
    pub image_size: (usize, usize),
}

impl Default for StereoRig {
    fn default() -> Self {
        Self::centered(0.055, 600.0, 640, 480).expect("default rig is valid")
    }
}

impl StereoRig {
    pub fn new(
        baseline_m: f64,
        focal_px: f64,
        principal_point: (f64, f64),
        image_size: (usize, usize),
    ) -> Result<Self> {
        let rig = Self {
            baseline_m,
            focal_px,
            principal_point,
            image_size,
        };
        rig.validate()?;
        Ok(rig)
    }

    /// Rig with the principal point at the image center.
    pub fn centered(baseline_m: f64, focal_px: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            baseline_m,
            focal_px,
            ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            (width, height),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_m.is_finite() && self.baseline_m > 0.0) {
            return Err(Error::param("baseline_m", "must be finite and > 0"));
        }
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::param("focal_px", "must be finite and > 0"));
        }
        let (w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::param("image_size", "width and height must be > 0"));
        }
        let (cx, cy) = self.principal_point;
        let inside = |c: f64, n: usize| c.is_finite() && c >= 0.0 && c <= n as f64 - 1.0;
        if !inside(cx, w) || !inside(cy, h) {
            return Err(Error::param(
                "principal_point",
                format!("({cx}, {cy}) lies outside the {w}x{h} image"),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.image_size.0
    }

    pub fn height(&self) -> usize {
        self.image_size.1
    }

    /// `baseline × focal`, the numerator of the disparity/depth relation.
    pub fn bf(&self) -> f64 {
        self.baseline_m * self.focal_px
    }

    /// Unnormalized ray direction with unit z for pixel coordinates `(u, v)`.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        [
            (u - self.principal_point.0) / self.focal_px,
            (v - self.principal_point.1) / self.focal_px,
            1.0,
        ]
    }

    /// Projects a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.focal_px * p[0] / p[2] + self.principal_point.0,
            self.focal_px * p[1] / p[2] + self.principal_point.1,
        ))
    }

    /// Camera-frame point seen at pixel `(u, v)` with optical-axis depth `z`.
    #[inline]
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        let r = self.pixel_ray(u, v);
        [r[0] * z, r[1] * z, z]
    }
}
