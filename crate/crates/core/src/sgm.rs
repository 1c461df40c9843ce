//! Semi-global cost aggregation and disparity selection.
//!
//! Each path direction `r` runs the recurrence
//!
//! ```text
//! L_r(p, d) = C(p, d) + min(L_r(p−r, d), L_r(p−r, d±1) + P1, min_k L_r(p−r, k) + P2)
//!                     − min_k L_r(p−r, k)
//! ```
//!
//! and the aggregated cost is the sum over directions. Subtracting the
//! previous minimum bounds every per-path value by `C + P2`, so per-path
//! state lives in `u16` and the sum in `u32`.

use serde::{Deserialize, Serialize};

use crate::census::{CostVolume, VolumeGeometry};
use crate::error::{Error, Result};
use crate::maps::{DisparityMap, INVALID};
use crate::par;

/// Largest penalty accepted; keeps every per-path value inside `u16`.
pub const MAX_PENALTY: u16 = 16384;

/// Number of scanline directions summed by [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PathSet {
    Four,
    Eight,
}

impl TryFrom<u8> for PathSet {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(PathSet::Four),
            8 => Ok(PathSet::Eight),
            other => Err(format!("paths must be 4 or 8, got {other}")),
        }
    }
}

impl From<PathSet> for u8 {
    fn from(p: PathSet) -> u8 {
        match p {
            PathSet::Four => 4,
            PathSet::Eight => 8,
        }
    }
}

impl PathSet {
    pub fn directions(self) -> &'static [PathDirection] {
        match self {
            PathSet::Four => &PathDirection::ALL[..4],
            PathSet::Eight => &PathDirection::ALL,
        }
    }
}

/// Direction of travel along a scanline; the predecessor of `p` is `p − r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathDirection {
    pub dx: isize,
    pub dy: isize,
}

impl PathDirection {
    pub const fn new(dx: isize, dy: isize) -> Self {
        Self { dx, dy }
    }

    /// Horizontal and vertical directions first, then the diagonals.
    pub const ALL: [PathDirection; 8] = [
        PathDirection::new(1, 0),
        PathDirection::new(-1, 0),
        PathDirection::new(0, 1),
        PathDirection::new(0, -1),
        PathDirection::new(1, 1),
        PathDirection::new(-1, 1),
        PathDirection::new(1, -1),
        PathDirection::new(-1, -1),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgmParams {
    pub p1: u16,
    pub p2: u16,
    pub paths: PathSet,
    pub uniqueness_ratio: f64,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            p1: 8,
            p2: 96,
            paths: PathSet::Eight,
            uniqueness_ratio: 0.15,
        }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        if self.p1 > self.p2 {
            return Err(Error::param(
                "p1",
                format!("p1={} exceeds p2={}", self.p1, self.p2),
            ));
        }
        if self.p2 > MAX_PENALTY {
            return Err(Error::param("p2", format!("must be at most {MAX_PENALTY}")));
        }
        if !(0.0..1.0).contains(&self.uniqueness_ratio) {
            return Err(Error::param("uniqueness_ratio", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Sum of per-path aggregated costs, laid out like the [`CostVolume`] it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedVolume {
    geom: VolumeGeometry,
    values: Vec<u32>,
    evidence: Vec<bool>,
}

impl AggregatedVolume {
    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn d_max(&self) -> usize {
        self.geom.d_max
    }

    fn depth(&self) -> usize {
        self.geom.d_max + 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, d: usize) -> u32 {
        self.values[(y * self.geom.width + x) * self.depth() + d]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u32] {
        let n = self.depth();
        let i = (y * self.geom.width + x) * n;
        &self.values[i..i + n]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    #[inline]
    pub fn is_defined(&self, x: usize, y: usize, d: usize) -> bool {
        self.geom.is_defined(x, y, d)
    }

    #[inline]
    pub fn has_evidence(&self, x: usize, y: usize) -> bool {
        self.evidence[y * self.geom.width + x]
    }
}

fn check_penalties(costs: &CostVolume, params: &SgmParams) -> Result<()> {
    params.validate()?;
    if costs.max_cost() as u32 + params.p1 as u32 + params.p2 as u32 > u16::MAX as u32 {
        return Err(Error::param(
            "p2",
            format!(
                "max cost {} plus penalties overflows 16 bits",
                costs.max_cost()
            ),
        ));
    }
    Ok(())
}

/// Sums the path-wise dynamic programs over `params.paths`.
///
/// Horizontal paths run row-parallel; vertical and diagonal paths sweep the
/// image row by row and run column-parallel within a row. The sum is
/// integer, so it does not depend on evaluation order.
pub fn aggregate(costs: &CostVolume, params: &SgmParams) -> Result<AggregatedVolume> {
    check_penalties(costs, params)?;
    let geom = costs.geometry();
    let (w, h, n) = (geom.width, geom.height, geom.d_max + 1);
    let (p1, p2) = (params.p1, params.p2);
    let dirs = params.paths.directions();
    let mut sum = vec![0u32; w * h * n];

    let forward = dirs.contains(&PathDirection::new(1, 0));
    let backward = dirs.contains(&PathDirection::new(-1, 0));
    if forward || backward {
        par::for_each_row(&mut sum, w * n, |y, srow| {
            let crow = &costs.costs()[y * w * n..(y + 1) * w * n];
            let mut prev = vec![0u16; n];
            let mut cur = vec![0u16; n];
            if forward {
                horizontal_pass(crow, srow, n, 0..w, &mut prev, &mut cur, p1, p2);
            }
            if backward {
                horizontal_pass(crow, srow, n, (0..w).rev(), &mut prev, &mut cur, p1, p2);
            }
        });
    }

    let down: Vec<isize> = dirs.iter().filter(|r| r.dy == 1).map(|r| r.dx).collect();
    let up: Vec<isize> = dirs.iter().filter(|r| r.dy == -1).map(|r| r.dx).collect();
    sweep(costs, &mut sum, &down, false, p1, p2);
    sweep(costs, &mut sum, &up, true, p1, p2);

    Ok(AggregatedVolume {
        geom,
        values: sum,
        evidence: costs.evidence().to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
fn horizontal_pass(
    crow: &[u16],
    srow: &mut [u32],
    n: usize,
    xs: impl Iterator<Item = usize>,
    prev: &mut Vec<u16>,
    cur: &mut Vec<u16>,
    p1: u16,
    p2: u16,
) {
    let mut prev_min = 0u16;
    for (i, x) in xs.enumerate() {
        let c = &crow[x * n..(x + 1) * n];
        let m = if i == 0 {
            cur.copy_from_slice(c);
            c.iter().copied().min().unwrap_or(0)
        } else {
            path_step(c, prev, prev_min, p1, p2, cur)
        };
        for (s, &v) in srow[x * n..(x + 1) * n].iter_mut().zip(cur.iter()) {
            *s += v as u32;
        }
        std::mem::swap(prev, cur);
        prev_min = m;
    }
}

/// Pixels per parallel work item inside a sweep row.
const SWEEP_CHUNK: usize = 32;

/// Runs every direction with the given `dx` values and `dy = +1` (or `−1`
/// when `upward`) in one pass over the rows.
fn sweep(costs: &CostVolume, sum: &mut [u32], dxs: &[isize], upward: bool, p1: u16, p2: u16) {
    let k = dxs.len();
    if k == 0 {
        return;
    }
    let (w, h) = (costs.width(), costs.height());
    let n = costs.depth();
    // per (x, direction): n path values followed by their minimum
    let stride = n + 1;
    let mut prev = vec![0u16; w * k * stride];
    let mut cur = vec![0u16; w * k * stride];
    let rows: Vec<usize> = if upward {
        (0..h).rev().collect()
    } else {
        (0..h).collect()
    };
    for (step, &y) in rows.iter().enumerate() {
        let first = step == 0;
        let crow = &costs.costs()[y * w * n..(y + 1) * w * n];
        let srow = &mut sum[y * w * n..(y + 1) * w * n];
        let prev_ref = &prev;
        par::for_each_row_zip(
            &mut cur,
            SWEEP_CHUNK * k * stride,
            srow,
            SWEEP_CHUNK * n,
            |chunk, cur_chunk, sum_chunk| {
                let x0 = chunk * SWEEP_CHUNK;
                let count = sum_chunk.len() / n;
                for i in 0..count {
                    let x = x0 + i;
                    let c = &crow[x * n..(x + 1) * n];
                    for (j, &dx) in dxs.iter().enumerate() {
                        let slot = &mut cur_chunk[(i * k + j) * stride..(i * k + j + 1) * stride];
                        let (vals, min_slot) = slot.split_at_mut(n);
                        let px = x as isize - dx;
                        let m = if first || px < 0 || px >= w as isize {
                            vals.copy_from_slice(c);
                            c.iter().copied().min().unwrap_or(0)
                        } else {
                            let base = (px as usize * k + j) * stride;
                            let p = &prev_ref[base..base + stride];
                            path_step(c, &p[..n], p[n], p1, p2, vals)
                        };
                        min_slot[0] = m;
                        for (s, &v) in sum_chunk[i * n..(i + 1) * n].iter_mut().zip(vals.iter()) {
                            *s += v as u32;
                        }
                    }
                }
            },
        );
        std::mem::swap(&mut prev, &mut cur);
    }
}

/// One step of the recurrence; returns the minimum of `out`.
#[inline(always)]
fn path_step(cost: &[u16], prev: &[u16], prev_min: u16, p1: u16, p2: u16, out: &mut [u16]) -> u16 {
    let n = cost.len();
    let prev = &prev[..n];
    let out = &mut out[..n];
    let jump = prev_min + p2;
    if n == 1 {
        out[0] = cost[0] + prev[0].min(jump) - prev_min;
        return out[0];
    }
    let mut m;
    {
        let v = prev[0].min(prev[1] + p1).min(jump);
        out[0] = cost[0] + v - prev_min;
        m = out[0];
    }
    for d in 1..n - 1 {
        let v = prev[d]
            .min(prev[d - 1] + p1)
            .min(prev[d + 1] + p1)
            .min(jump);
        let o = cost[d] + v - prev_min;
        out[d] = o;
        m = m.min(o);
    }
    {
        let v = prev[n - 1].min(prev[n - 2] + p1).min(jump);
        out[n - 1] = cost[n - 1] + v - prev_min;
        m = m.min(out[n - 1]);
    }
    m
}

/// Aggregates along a single direction with a plain per-pixel loop.
///
/// Slow but direct; it serves as the reference for [`aggregate`] (the sum
/// of single paths over a path set must equal the fast result).
pub fn aggregate_single_path(
    costs: &CostVolume,
    dir: PathDirection,
    params: &SgmParams,
) -> Result<AggregatedVolume> {
    check_penalties(costs, params)?;
    if dir.dx.abs() > 1 || dir.dy.abs() > 1 || (dir.dx == 0 && dir.dy == 0) {
        return Err(Error::param(
            "direction",
            format!("({}, {}) is not a unit step", dir.dx, dir.dy),
        ));
    }
    let geom = costs.geometry();
    let (w, h, n) = (geom.width, geom.height, geom.d_max + 1);
    let (p1, p2) = (params.p1 as u32, params.p2 as u32);
    let mut l = vec![0u32; w * h * n];
    let ys: Vec<usize> = if dir.dy >= 0 {
        (0..h).collect()
    } else {
        (0..h).rev().collect()
    };
    let xs: Vec<usize> = if dir.dx >= 0 {
        (0..w).collect()
    } else {
        (0..w).rev().collect()
    };
    for &y in &ys {
        for &x in &xs {
            let px = x as isize - dir.dx;
            let py = y as isize - dir.dy;
            let here = (y * w + x) * n;
            if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                for d in 0..n {
                    l[here + d] = costs.get(x, y, d) as u32;
                }
                continue;
            }
            let there = (py as usize * w + px as usize) * n;
            let prev: Vec<u32> = l[there..there + n].to_vec();
            let prev_min = *prev.iter().min().unwrap();
            for d in 0..n {
                let mut best = prev[d];
                if d > 0 {
                    best = best.min(prev[d - 1] + p1);
                }
                if d + 1 < n {
                    best = best.min(prev[d + 1] + p1);
                }
                best = best.min(prev_min + p2);
                l[here + d] = costs.get(x, y, d) as u32 + best - prev_min;
            }
        }
    }
    Ok(AggregatedVolume {
        geom,
        values: l,
        evidence: costs.evidence().to_vec(),
    })
}

/// Winner-take-all with a uniqueness test.
///
/// A pixel survives when its best cost is strictly more than
/// `(1 + uniqueness_ratio)` times below the best cost at any disparity
/// outside `{d* − 1, d*, d* + 1}`. Pixels without matching evidence, or
/// whose winning disparity reaches past the image, are invalid.
pub fn wta_disparity(agg: &AggregatedVolume, params: &SgmParams) -> DisparityMap {
    let (w, h) = (agg.width(), agg.height());
    let ratio = 1.0 + params.uniqueness_ratio;
    let mut values = vec![INVALID; w * h];
    par::for_each_row(&mut values, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            if !agg.has_evidence(x, y) {
                continue;
            }
            let costs = agg.pixel(x, y);
            let (best_d, best) = argmin(costs.iter().copied().enumerate());
            if !agg.is_defined(x, y, best_d) {
                continue;
            }
            let second = costs
                .iter()
                .enumerate()
                .filter(|(d, _)| d.abs_diff(best_d) > 1)
                .map(|(_, &c)| c)
                .min();
            if let Some(second) = second {
                if !(second as f64 > best as f64 * ratio) {
                    continue;
                }
            }
            *out = best_d as f32;
        }
    });
    DisparityMap::from_values(w, h, values).expect("dimensions match")
}

/// Lowest index wins ties.
#[inline]
fn argmin(it: impl Iterator<Item = (usize, u32)>) -> (usize, u32) {
    let mut best = (0, u32::MAX);
    for (d, c) in it {
        if c < best.1 {
            best = (d, c);
        }
    }
    best
}

/// Largest subpixel offset; `d + offset` stays exactly representable.
pub const MAX_SUBPIXEL_OFFSET: f32 = 0.5 - 1.0 / 1024.0;

/// Fits a parabola through the aggregated costs around each integer
/// disparity. Disparities at `0` or `d_max`, and pixels whose three costs
/// do not form an upward parabola, keep their integer value.
pub fn subpixel_refine(agg: &AggregatedVolume, d: &DisparityMap) -> Result<DisparityMap> {
    if d.dims() != (agg.width(), agg.height()) {
        return Err(Error::dims(
            "disparity map",
            (agg.width(), agg.height()),
            d.dims(),
        ));
    }
    let mut out = d.clone();
    for (x, y, v) in d.iter_valid() {
        if v.fract() != 0.0 {
            return Err(Error::InvalidPixel {
                x,
                y,
                reason: format!("disparity {v} is not an integer"),
            });
        }
        let di = v as usize;
        if di == 0 || di >= agg.d_max() {
            continue;
        }
        let offset = parabola_offset(
            agg.get(x, y, di - 1) as f64,
            agg.get(x, y, di) as f64,
            agg.get(x, y, di + 1) as f64,
        );
        if let Some(off) = offset {
            out.set(x, y, v + off);
        }
    }
    Ok(out)
}

/// Vertex offset of the parabola through `(−1, c_minus)`, `(0, c0)`,
/// `(1, c_plus)`; `None` when the curvature is not positive.
pub fn parabola_offset(c_minus: f64, c0: f64, c_plus: f64) -> Option<f32> {
    let denom = c_minus - 2.0 * c0 + c_plus;
    if !(denom > 0.0) {
        return None;
    }
    let off = (c_minus - c_plus) / (2.0 * denom);
    Some((off as f32).clamp(-MAX_SUBPIXEL_OFFSET, MAX_SUBPIXEL_OFFSET))
}

/// Right-view disparity `d_R(x, y) = argmin_d agg(x + d, y, d)`, lowest `d`
/// on ties. Columns with no evaluable match are invalid.
pub fn right_disparity_from_volume(agg: &AggregatedVolume) -> DisparityMap {
    let (w, h) = (agg.width(), agg.height());
    let d_max = agg.d_max();
    let mut values = vec![INVALID; w * h];
    par::for_each_row(&mut values, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let candidates = (0..=d_max)
                .take_while(|&d| x + d < w)
                .filter(|&d| agg.is_defined(x + d, y, d))
                .map(|d| (d, agg.get(x + d, y, d)));
            let (d, c) = argmin(candidates);
            if c != u32::MAX {
                *out = d as f32;
            }
        }
    });
    DisparityMap::from_values(w, h, values).expect("dimensions match")
}
