//! Post-matching cleanup and the end-to-end stereo matcher.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::StereoRig;
use crate::census::{build_cost_volume, census_transform, CensusWindow};
use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::maps::{disparity_to_depth, DepthConversionParams, DepthMap, DisparityMap, INVALID};
use crate::par;
use crate::sgm::{
    aggregate, right_disparity_from_volume, subpixel_refine, wta_disparity, SgmParams,
};

/// Which of the consistency check and the median filter runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineOrder {
    #[default]
    ConsistencyFirst,
    MedianFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    pub lr_threshold: f32,
    pub median_window: usize,
    pub speckle_max_size: usize,
    pub speckle_diff: f32,
    pub order: RefineOrder,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            lr_threshold: 1.0,
            median_window: 3,
            speckle_max_size: 100,
            speckle_diff: 1.0,
            order: RefineOrder::ConsistencyFirst,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_threshold >= 0.0) {
            return Err(Error::param("lr_threshold", "must be >= 0"));
        }
        if self.median_window.is_multiple_of(2) {
            return Err(Error::param("median_window", "must be odd and >= 1"));
        }
        if !(self.speckle_diff >= 0.0) {
            return Err(Error::param("speckle_diff", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub census_window: CensusWindow,
    pub d_max: usize,
    pub sgm: SgmParams,
    pub refine: RefineParams,
    pub depth: DepthConversionParams,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            census_window: CensusWindow::default(),
            d_max: 64,
            sgm: SgmParams::default(),
            refine: RefineParams::default(),
            depth: DepthConversionParams::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        self.census_window.validate()?;
        if self.d_max == 0 {
            return Err(Error::param("d_max", "must be >= 1"));
        }
        self.sgm.validate()?;
        self.refine.validate()?;
        self.depth.validate()
    }
}

/// Keeps `(x, y)` iff the right view, looked up at `x − round(d_L)`, is
/// valid and agrees within `threshold`.
pub fn lr_consistency(
    left: &DisparityMap,
    right: &DisparityMap,
    threshold: f32,
) -> Result<DisparityMap> {
    if left.dims() != right.dims() {
        return Err(Error::dims(
            "right disparity map",
            left.dims(),
            right.dims(),
        ));
    }
    let mut out = left.clone();
    for (x, y, dl) in left.iter_valid() {
        let xr = x as f64 - (dl as f64).round();
        let keep = xr >= 0.0
            && right
                .get(xr as usize, y)
                .is_some_and(|dr| (dl - dr).abs() <= threshold);
        if !keep {
            out.invalidate(x, y);
        }
    }
    Ok(out)
}

/// Replaces each valid pixel by the median of the valid values in its
/// window (lower middle for even counts). Invalid pixels are left alone.
pub fn median_filter(d: &DisparityMap, window: usize) -> Result<DisparityMap> {
    if window.is_multiple_of(2) {
        return Err(Error::param("median_window", "must be odd"));
    }
    let (w, h) = d.dims();
    let r = window / 2;
    let mut values = vec![INVALID; w * h];
    par::for_each_row(&mut values, w, |y, row| {
        let mut buf = Vec::with_capacity(window * window);
        for (x, out) in row.iter_mut().enumerate() {
            if !d.is_valid(x, y) {
                continue;
            }
            buf.clear();
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    if let Some(v) = d.get(xx, yy) {
                        buf.push(v);
                    }
                }
            }
            let mid = (buf.len() - 1) / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
            *out = *m;
        }
    });
    DisparityMap::from_values(w, h, values)
}

/// Invalidates 4-connected components of at most `max_size` pixels, where
/// neighbors join when their disparities differ by at most `diff`.
pub fn speckle_filter(d: &DisparityMap, max_size: usize, diff: f32) -> DisparityMap {
    let (w, h) = d.dims();
    let mut out = d.clone();
    let mut label = vec![false; w * h];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if label[start] || !d.mask()[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        component.clear();
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            let v = d.values()[i];
            let mut visit = |j: usize| {
                if !label[j] && d.mask()[j] && (d.values()[j] - v).abs() <= diff {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if component.len() <= max_size {
            for &i in &component {
                out.invalidate(i % w, i / w);
            }
        }
    }
    out
}

/// Wall-clock milliseconds spent per stage of [`match_stereo`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub census_ms: f64,
    pub cost_volume_ms: f64,
    pub aggregate_ms: f64,
    pub select_ms: f64,
    pub refine_ms: f64,
    pub depth_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct StereoMatch {
    pub disparity: DisparityMap,
    pub depth: DepthMap,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Census → cost volume → aggregation → WTA → subpixel → consistency →
/// median → speckle → depth.
pub fn match_stereo(
    left: &ImageGray,
    right: &ImageGray,
    rig: &StereoRig,
    cfg: &MatchConfig,
) -> Result<StereoMatch> {
    cfg.validate()?;
    rig.validate()?;
    if left.dims() != right.dims() {
        return Err(Error::dims("right image", left.dims(), right.dims()));
    }
    if left.dims() != rig.image_size {
        return Err(Error::dims("left image", rig.image_size, left.dims()));
    }
    let mut timings = StageTimings::default();
    let start = Instant::now();

    let t = Instant::now();
    let cl = census_transform(left, cfg.census_window)?;
    let cr = census_transform(right, cfg.census_window)?;
    timings.census_ms = ms_since(t);

    let t = Instant::now();
    let costs = build_cost_volume(&cl, &cr, cfg.d_max)?;
    drop((cl, cr));
    timings.cost_volume_ms = ms_since(t);

    let t = Instant::now();
    let agg = aggregate(&costs, &cfg.sgm)?;
    drop(costs);
    timings.aggregate_ms = ms_since(t);

    let t = Instant::now();
    let coarse = wta_disparity(&agg, &cfg.sgm);
    let left_disp = subpixel_refine(&agg, &coarse)?;
    let right_disp = right_disparity_from_volume(&agg);
    drop(agg);
    timings.select_ms = ms_since(t);

    let t = Instant::now();
    let rp = &cfg.refine;
    let filtered = match rp.order {
        RefineOrder::ConsistencyFirst => {
            let checked = lr_consistency(&left_disp, &right_disp, rp.lr_threshold)?;
            median_filter(&checked, rp.median_window)?
        }
        RefineOrder::MedianFirst => {
            let smoothed = median_filter(&left_disp, rp.median_window)?;
            lr_consistency(&smoothed, &right_disp, rp.lr_threshold)?
        }
    };
    let disparity = speckle_filter(&filtered, rp.speckle_max_size, rp.speckle_diff);
    timings.refine_ms = ms_since(t);

    let t = Instant::now();
    let depth = disparity_to_depth(&disparity, rig, &cfg.depth)?;
    timings.depth_ms = ms_since(t);
    timings.total_ms = ms_since(start);

    Ok(StereoMatch {
        disparity,
        depth,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> Option<f32>) -> DisparityMap {
        DisparityMap::from_fn(w, h, f)
    }

    #[test]
    fn consistent_maps_survive() {
        let d = DisparityMap::constant(12, 3, 5.0);
        let out = lr_consistency(&d, &d, 1.0).unwrap();
        for y in 0..3 {
            for x in 0..12 {
                assert_eq!(out.get(x, y), if x >= 5 { Some(5.0) } else { None });
            }
        }
    }

    #[test]
    fn gross_mismatch_kills_everything() {
        let l = DisparityMap::constant(12, 3, 5.0);
        let r = DisparityMap::constant(12, 3, 9.0);
        assert_eq!(lr_consistency(&l, &r, 1.0).unwrap().valid_count(), 0);
    }

    #[test]
    fn occlusion_strip_matches_rule() {
        // foreground at d=8 over x in 20..30, background d=3 elsewhere
        let w = 40;
        let left = map(w, 2, |x, _| {
            Some(if (20..30).contains(&x) { 8.0 } else { 3.0 })
        });
        let right = map(w, 2, |x, _| {
            if (12..22).contains(&x) {
                Some(8.0)
            } else if (22..27).contains(&x) {
                None
            } else {
                Some(3.0)
            }
        });
        let out = lr_consistency(&left, &right, 1.0).unwrap();
        for y in 0..2 {
            for x in 0..w {
                let dl = left.get(x, y).unwrap();
                let xr = x as i64 - dl.round() as i64;
                let expect = xr >= 0
                    && right
                        .get(xr as usize, y)
                        .is_some_and(|dr| (dl - dr).abs() <= 1.0);
                assert_eq!(out.is_valid(x, y), expect, "x={x}");
            }
        }
        // left border plus background pixels that land on the foreground
        let invalid: Vec<usize> = (0..w).filter(|&x| !out.is_valid(x, 0)).collect();
        assert_eq!(invalid, [0, 1, 2, 15, 16, 17, 18, 19]);
    }

    #[test]
    fn infinite_threshold_is_identity_in_bounds() {
        for seed in 0..20 {
            let l = random_map(20, 5, seed, 9);
            let r = random_map(20, 5, seed + 100, 9);
            let out = lr_consistency(&l, &r, f32::INFINITY).unwrap();
            for y in 0..5 {
                for x in 0..20 {
                    let expect = l.get(x, y).is_some_and(|d| {
                        let xr = x as i64 - d.round() as i64;
                        xr >= 0 && r.is_valid(xr as usize, y)
                    });
                    assert_eq!(out.is_valid(x, y), expect);
                    if expect {
                        assert_eq!(out.get(x, y), l.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn median_examples() {
        let c = DisparityMap::constant(6, 5, 10.0);
        assert_eq!(median_filter(&c, 3).unwrap(), c);

        let spike = map(5, 5, |x, y| {
            Some(if (x, y) == (2, 2) { 50.0 } else { 10.0 })
        });
        assert_eq!(median_filter(&spike, 3).unwrap().get(2, 2), Some(10.0));

        // two valid values in the window: lower one wins
        let pair = map(3, 1, |x, _| match x {
            0 => Some(4.0),
            1 => Some(9.0),
            _ => None,
        });
        let out = median_filter(&pair, 3).unwrap();
        assert_eq!(out.get(0, 0), Some(4.0));
        assert_eq!(out.get(1, 0), Some(4.0));
        assert_eq!(out.get(2, 0), None);
        assert!(median_filter(&pair, 2).is_err());
    }

    #[test]
    fn speckle_examples() {
        let uniform = DisparityMap::constant(20, 20, 7.0);
        assert_eq!(speckle_filter(&uniform, 100, 1.0), uniform);

        let island = map(10, 10, |x, y| {
            Some(if (4..6).contains(&x) && (4..6).contains(&y) {
                17.0
            } else {
                7.0
            })
        });
        let out = speckle_filter(&island, 4, 1.0);
        assert_eq!(out.valid_count(), 96);
        assert!(!out.is_valid(4, 4) && !out.is_valid(5, 5));

        let five = map(10, 10, |x, y| {
            Some(if (2..7).contains(&x) && y == 3 {
                17.0
            } else {
                7.0
            })
        });
        let out = speckle_filter(&five, 4, 1.0);
        assert_eq!(out.valid_count(), 100);
    }

    #[test]
    fn speckle_uses_four_connectivity() {
        // diagonal neighbors do not join
        let d = map(4, 4, |x, y| (x == y).then_some(3.0));
        assert_eq!(speckle_filter(&d, 1, 1.0).valid_count(), 0);
        assert_eq!(speckle_filter(&d, 0, 1.0).valid_count(), 4);
    }

    fn random_map(w: usize, h: usize, seed: u64, levels: u32) -> DisparityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..w * h)
            .map(|_| {
                if rng.random_bool(0.2) {
                    f32::NAN
                } else {
                    rng.random_range(0..levels) as f32
                }
            })
            .collect();
        DisparityMap::from_values(w, h, vals).unwrap()
    }

    proptest! {
        #[test]
        fn refinement_never_creates_valid_pixels(seed in 0u64..1000, thr in 0.0f32..3.0) {
            let l = random_map(16, 9, seed, 6);
            let r = random_map(16, 9, seed + 1, 6);
            let lr = lr_consistency(&l, &r, thr).unwrap();
            let sp = speckle_filter(&l, 3, 1.0);
            let md = median_filter(&l, 3).unwrap();
            for i in 0..l.len() {
                prop_assert!(!lr.mask()[i] || l.mask()[i]);
                prop_assert!(!sp.mask()[i] || l.mask()[i]);
                prop_assert_eq!(md.mask()[i], l.mask()[i]);
            }
        }

        #[test]
        fn median_output_within_window_range(seed in 0u64..1000) {
            let l = random_map(12, 8, seed, 40);
            let md = median_filter(&l, 3).unwrap();
            for (x, y, v) in md.iter_valid() {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for yy in y.saturating_sub(1)..(y + 2).min(8) {
                    for xx in x.saturating_sub(1)..(x + 2).min(12) {
                        if let Some(n) = l.get(xx, yy) {
                            lo = lo.min(n);
                            hi = hi.max(n);
                        }
                    }
                }
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }

    fn textured(w: usize, h: usize, seed: u64) -> ImageGray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h)
            .map(|_| rng.random_range(0..=255u8) as f32 / 255.0)
            .collect();
        ImageGray::new(w, h, data).unwrap()
    }

    fn small_cfg() -> MatchConfig {
        MatchConfig {
            d_max: 16,
            ..Default::default()
        }
    }

    #[test]
    fn identical_images_give_zero_disparity() {
        let img = textured(80, 48, 3);
        let rig = StereoRig::centered(0.055, 600.0, 80, 48).unwrap();
        let m = match_stereo(&img, &img, &rig, &small_cfg()).unwrap();
        assert!(m.disparity.valid_count() > 80 * 48 / 2);
        assert!(m.disparity.iter_valid().all(|(_, _, d)| d.abs() < 0.5));
    }

    #[test]
    fn textureless_images_are_rejected() {
        let img = ImageGray::filled(80, 48, 0.5);
        let rig = StereoRig::centered(0.055, 600.0, 80, 48).unwrap();
        let m = match_stereo(&img, &img, &rig, &small_cfg()).unwrap();
        assert!(m.disparity.valid_ratio() <= 0.01);
    }

    #[test]
    fn shifted_pair_recovers_shift() {
        let right = textured(96, 40, 8);
        let left = ImageGray::from_fn(
            96,
            40,
            |x, y| if x >= 6 { right.get(x - 6, y) } else { 0.3 },
        );
        let rig = StereoRig::centered(0.055, 600.0, 96, 40).unwrap();
        let m = match_stereo(&left, &right, &rig, &small_cfg()).unwrap();
        let valid: Vec<f32> = m.disparity.iter_valid().map(|(_, _, d)| d).collect();
        assert!(valid.len() > 96 * 40 / 2);
        assert!(valid.iter().all(|d| (d - 6.0).abs() < 0.5));
        let z = rig.bf() / 6.0;
        assert!(m
            .depth
            .iter_valid()
            .all(|(_, _, v)| (v as f64 - z).abs() / z < 0.1));
    }

    #[test]
    fn deterministic_and_order_flag() {
        let right = textured(64, 32, 2);
        let left = ImageGray::from_fn(64, 32, |x, y| right.get(x.saturating_sub(3), y));
        let rig = StereoRig::centered(0.055, 600.0, 64, 32).unwrap();
        let a = match_stereo(&left, &right, &rig, &small_cfg()).unwrap();
        let b = match_stereo(&left, &right, &rig, &small_cfg()).unwrap();
        assert_eq!(a.disparity, b.disparity);
        assert_eq!(a.depth, b.depth);
        let mut cfg = small_cfg();
        cfg.refine.order = RefineOrder::MedianFirst;
        assert!(
            match_stereo(&left, &right, &rig, &cfg)
                .unwrap()
                .disparity
                .valid_count()
                > 0
        );
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = textured(20, 20, 1);
        let b = textured(21, 20, 1);
        let rig = StereoRig::centered(0.055, 600.0, 20, 20).unwrap();
        assert!(match_stereo(&a, &b, &rig, &small_cfg()).is_err());
        let rig2 = StereoRig::centered(0.055, 600.0, 30, 20).unwrap();
        assert!(match_stereo(&a, &a, &rig2, &small_cfg()).is_err());
    }
}
