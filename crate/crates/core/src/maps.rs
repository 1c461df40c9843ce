//! Float grids with validity masks, and the disparity/depth conversions.

use std::fmt;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::camera::StereoRig;
use crate::error::{Error, Result};

/// Value stored at invalid pixels. The mask is authoritative; the sentinel
/// only guarantees that arithmetic on an invalid pixel cannot yield a
/// plausible number.
pub const INVALID: f32 = f32::NAN;

/// Unit marker for a [`MaskedMap`], deciding which values may be valid.
pub trait Unit: Copy + Send + Sync + fmt::Debug + 'static {
    const NAME: &'static str;
    fn admits(v: f32) -> bool;
}

/// Disparity in pixels, `d >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pixels;

/// Depth in meters, `z > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Meters;

impl Unit for Pixels {
    const NAME: &'static str = "disparity";
    fn admits(v: f32) -> bool {
        v.is_finite() && v >= 0.0
    }
}

impl Unit for Meters {
    const NAME: &'static str = "depth";
    fn admits(v: f32) -> bool {
        v.is_finite() && v > 0.0
    }
}

/// Row-major grid of `f32` values plus a per-pixel validity mask.
///
/// Invalid pixels always hold [`INVALID`]; valid pixels always satisfy the
/// unit's admissibility rule.
#[derive(Clone)]
pub struct MaskedMap<U: Unit> {
    width: usize,
    height: usize,
    values: Vec<f32>,
    mask: Vec<bool>,
    _unit: PhantomData<U>,
}

pub type DisparityMap = MaskedMap<Pixels>;
pub type DepthMap = MaskedMap<Meters>;

impl<U: Unit> fmt::Debug for MaskedMap<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct(U::NAME)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("valid", &self.valid_count())
            .finish()
    }
}

/// Bitwise equality: sentinel NaNs compare equal to each other.
impl<U: Unit> PartialEq for MaskedMap<U> {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl<U: Unit> MaskedMap<U> {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![INVALID; width * height],
            mask: vec![false; width * height],
            _unit: PhantomData,
        }
    }

    /// Every admissible value becomes valid; everything else is invalidated.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Invalid(format!(
                "{} map has {} values, expected {}x{}",
                U::NAME,
                values.len(),
                width,
                height
            )));
        }
        let mut map = Self {
            width,
            height,
            mask: values.iter().map(|&v| U::admits(v)).collect(),
            values,
            _unit: PhantomData,
        };
        map.canonicalize();
        Ok(map)
    }

    /// Values and mask given explicitly. Valid pixels must be admissible;
    /// values under a false mask are replaced by the sentinel.
    pub fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f32>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || mask.len() != width * height {
            return Err(Error::Invalid(format!(
                "{} map parts have {} values / {} mask flags, expected {}",
                U::NAME,
                values.len(),
                mask.len(),
                width * height
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| mask[i] && !U::admits(values[i])) {
            return Err(Error::InvalidPixel {
                x: i % width,
                y: i / width,
                reason: format!("{} value {} marked valid", U::NAME, values[i]),
            });
        }
        let mut map = Self {
            width,
            height,
            values,
            mask,
            _unit: PhantomData,
        };
        map.canonicalize();
        Ok(map)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<f32>) -> Self {
        let mut map = Self::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some(v) = f(x, y) {
                    map.set(x, y, v);
                }
            }
        }
        map
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| Some(value))
    }

    fn canonicalize(&mut self) {
        for (v, &m) in self.values.iter_mut().zip(&self.mask) {
            if !m {
                *v = INVALID;
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.values[i])
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> Option<f32> {
        self.mask[i].then(|| self.values[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Stores `v`, or invalidates the pixel if `v` is not admissible.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        let i = y * self.width + x;
        self.set_index(i, v);
    }

    #[inline]
    pub(crate) fn set_index(&mut self, i: usize, v: f32) {
        if U::admits(v) {
            self.values[i] = v;
            self.mask[i] = true;
        } else {
            self.values[i] = INVALID;
            self.mask[i] = false;
        }
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.values[i] = INVALID;
        self.mask[i] = false;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_ratio(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.values.len() as f64
        }
    }

    /// Iterator over `(x, y, value)` for valid pixels, row-major.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        let w = self.width.max(1);
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i % w, i / w, self.values[i]))
    }

    /// Keeps only the pixels whose flag in `keep` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.mask.len());
        for i in 0..self.mask.len() {
            if !keep[i] {
                self.values[i] = INVALID;
                self.mask[i] = false;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthConversionParams {
    /// Added to the disparity before division.
    pub epsilon: f64,
    /// Depths beyond this are reported invalid.
    pub max_range_m: f64,
}

impl Default for DepthConversionParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_range_m: 20.0,
        }
    }
}

impl DepthConversionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be finite and > 0"));
        }
        if !(self.max_range_m > 0.0) {
            return Err(Error::param("max_range_m", "must be > 0"));
        }
        Ok(())
    }
}

fn check_rig_dims(what: &'static str, dims: (usize, usize), rig: &StereoRig) -> Result<()> {
    if dims != rig.image_size {
        return Err(Error::dims(what, rig.image_size, dims));
    }
    Ok(())
}

/// `z = C_b · C_f / (d + ε)` per valid pixel; results beyond the configured
/// range are invalidated.
pub fn disparity_to_depth(
    d: &DisparityMap,
    rig: &StereoRig,
    params: &DepthConversionParams,
) -> Result<DepthMap> {
    params.validate()?;
    disparity_to_depth_with_epsilon(d, rig, params.epsilon, params.max_range_m)
}

/// Same as [`disparity_to_depth`] but accepts any `epsilon >= 0`; used where
/// the exact algebraic inverse of [`depth_to_disparity`] is wanted.
pub fn disparity_to_depth_with_epsilon(
    d: &DisparityMap,
    rig: &StereoRig,
    epsilon: f64,
    max_range_m: f64,
) -> Result<DepthMap> {
    check_rig_dims("disparity map", d.dims(), rig)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", "must be finite and >= 0"));
    }
    let bf = rig.bf();
    let mut out = DepthMap::invalid(d.width, d.height);
    for i in 0..d.values.len() {
        if let Some(disp) = d.get_index(i) {
            let z = bf / (disp as f64 + epsilon);
            if z.is_finite() && z <= max_range_m {
                out.set_index(i, z as f32);
            }
        }
    }
    Ok(out)
}

/// `d = C_b · C_f / z` per valid pixel.
pub fn depth_to_disparity(z: &DepthMap, rig: &StereoRig) -> Result<DisparityMap> {
    check_rig_dims("depth map", z.dims(), rig)?;
    let bf = rig.bf();
    let mut out = DisparityMap::invalid(z.width, z.height);
    for i in 0..z.values.len() {
        if let Some(depth) = z.get_index(i) {
            if depth <= 0.0 {
                return Err(Error::InvalidPixel {
                    x: i % z.width,
                    y: i / z.width,
                    reason: format!("non-positive depth {depth}"),
                });
            }
            out.set_index(i, (bf / depth as f64) as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig(b: f64, f: f64, w: usize, h: usize) -> StereoRig {
        StereoRig::centered(b, f, w, h).unwrap()
    }

    #[test]
    fn thirty_pixels_is_one_meter() {
        let r = rig(0.05, 600.0, 2, 1);
        let d = DisparityMap::constant(2, 1, 30.0);
        let z = disparity_to_depth(&d, &r, &DepthConversionParams::default()).unwrap();
        let expected: f64 = 0.05 * 600.0 / (30.0 + 1e-6);
        assert!((expected - 0.999_999_967).abs() < 1e-9);
        assert_eq!(z.get(0, 0), Some(expected as f32));
    }

    #[test]
    fn zero_disparity_exceeds_max_range() {
        let r = rig(0.05, 600.0, 1, 1);
        let d = DisparityMap::constant(1, 1, 0.0);
        assert!(d.is_valid(0, 0));
        let z = disparity_to_depth(&d, &r, &DepthConversionParams::default()).unwrap();
        assert!(!z.is_valid(0, 0));
        assert!(z.values()[0].is_nan());
    }

    #[test]
    fn invalid_pixels_stay_invalid() {
        let r = rig(0.05, 600.0, 2, 1);
        let d = DisparityMap::from_parts(2, 1, vec![30.0, 30.0], vec![true, false]).unwrap();
        let z = disparity_to_depth(&d, &r, &DepthConversionParams::default()).unwrap();
        assert!(z.is_valid(0, 0));
        assert!(!z.is_valid(1, 0));
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let r = rig(0.05, 600.0, 4, 3);
        let d = DisparityMap::constant(3, 4, 1.0);
        let msg = disparity_to_depth(&d, &r, &DepthConversionParams::default())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("3x4") && msg.contains("4x3"), "{msg}");
    }

    #[test]
    fn depth_to_disparity_examples() {
        let r = rig(0.055, 600.0, 2, 1);
        let z = DepthMap::from_values(2, 1, vec![1.0, 2.0]).unwrap();
        let d = depth_to_disparity(&z, &r).unwrap();
        assert!((d.get(0, 0).unwrap() - 33.0).abs() < 1e-5);
        assert!((d.get(1, 0).unwrap() - 16.5).abs() < 1e-5);
    }

    #[test]
    fn depth_map_rejects_non_positive_valid_values() {
        assert!(DepthMap::from_parts(1, 1, vec![0.0], vec![true]).is_err());
        assert!(DepthMap::from_parts(1, 1, vec![-1.0], vec![true]).is_err());
        let m = DepthMap::from_values(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(m.mask(), &[false, true]);
    }

    #[test]
    fn sentinel_carried_by_invalid_pixels() {
        let m = DisparityMap::from_parts(2, 1, vec![3.0, 4.0], vec![true, false]).unwrap();
        assert!(m.values()[1].is_nan());
        assert_eq!(m.get(1, 0), None);
    }

    proptest! {
        #[test]
        fn round_trip_without_epsilon(z in 0.1f32..19.0, b in 0.01f64..0.2, f in 200.0f64..1200.0) {
            let r = rig(b, f, 1, 1);
            let depth = DepthMap::constant(1, 1, z);
            let d = depth_to_disparity(&depth, &r).unwrap();
            let back = disparity_to_depth_with_epsilon(&d, &r, 0.0, f64::INFINITY).unwrap();
            let rel = ((back.get(0, 0).unwrap() - z) / z).abs();
            prop_assert!(rel <= 1e-6, "relative error {rel}");
        }

        #[test]
        fn round_trip_with_epsilon_bound(z in 0.1f32..19.0) {
            let r = rig(0.055, 600.0, 1, 1);
            let params = DepthConversionParams::default();
            let depth = DepthMap::constant(1, 1, z);
            let d = depth_to_disparity(&depth, &r).unwrap();
            let back = disparity_to_depth(&d, &r, &params).unwrap().get(0, 0).unwrap();
            let bound = params.epsilon * z as f64 / r.bf();
            // f32 storage adds a few ulps on top of the epsilon bias.
            let ulps = 4.0 * f32::EPSILON as f64;
            prop_assert!((((back - z) / z) as f64).abs() <= bound + ulps);
        }

        #[test]
        fn depth_strictly_decreasing_in_disparity(a in 0.5f32..200.0, gap in 0.01f32..50.0) {
            let r = rig(0.055, 600.0, 2, 1);
            let d = DisparityMap::from_values(2, 1, vec![a, a + gap]).unwrap();
            let params = DepthConversionParams { max_range_m: f64::INFINITY, ..Default::default() };
            let z = disparity_to_depth(&d, &r, &params).unwrap();
            prop_assert!(z.get(0, 0).unwrap() > z.get(1, 0).unwrap());
        }

        #[test]
        fn conversions_never_validate_pixels(mask in proptest::collection::vec(any::<bool>(), 12)) {
            let r = rig(0.055, 600.0, 4, 3);
            let d = DisparityMap::from_parts(4, 3, vec![10.0; 12], mask.clone()).unwrap();
            let z = disparity_to_depth(&d, &r, &DepthConversionParams::default()).unwrap();
            let back = depth_to_disparity(&z, &r).unwrap();
            for i in 0..12 {
                prop_assert!(!z.mask()[i] || mask[i]);
                prop_assert!(!back.mask()[i] || z.mask()[i]);
            }
        }
    }
}
