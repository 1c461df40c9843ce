//! Center-symmetric census transform and Hamming-distance cost volumes.
//!
//! A window of `w × h` cells (both odd) holds `(w·h − 1) / 2` pairs of cells
//! mirrored through the center. Pair `k` is formed by the `k`-th cell of the
//! window in row-major order and its mirror; bit `k` of the descriptor is set
//! iff the first cell is strictly darker than its mirror.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::par;

/// Census window size in pixels, both dimensions odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusWindow {
    pub width: usize,
    pub height: usize,
}

impl Default for CensusWindow {
    /// 9×7: 31 comparison bits.
    fn default() -> Self {
        Self {
            width: 9,
            height: 7,
        }
    }
}

impl CensusWindow {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let w = Self { width, height };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3
            || self.height < 3
            || self.width.is_multiple_of(2)
            || self.height.is_multiple_of(2)
        {
            return Err(Error::param(
                "census_window",
                format!(
                    "{}x{} must be odd and at least 3x3",
                    self.width, self.height
                ),
            ));
        }
        if self.bits() > 64 {
            return Err(Error::param(
                "census_window",
                format!(
                    "{}x{} needs {} bits, at most 64 supported",
                    self.width,
                    self.height,
                    self.bits()
                ),
            ));
        }
        Ok(())
    }

    /// Descriptor width: number of symmetric pairs.
    pub fn bits(&self) -> usize {
        (self.width * self.height - 1) / 2
    }

    pub fn half(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// Offsets `(dx, dy)` of the first cell of each pair; the mirror cell
    /// sits at `(-dx, -dy)`.
    pub fn pair_offsets(&self) -> Vec<(isize, isize)> {
        let (hx, hy) = self.half();
        (0..self.bits())
            .map(|k| {
                let cx = (k % self.width) as isize - hx as isize;
                let cy = (k / self.width) as isize - hy as isize;
                (cx, cy)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensusDescriptorMap {
    width: usize,
    height: usize,
    window: CensusWindow,
    descriptors: Vec<u64>,
}

impl CensusDescriptorMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> CensusWindow {
        self.window
    }

    pub fn bits(&self) -> usize {
        self.window.bits()
    }

    /// Pixels closer than half a window to the border have no descriptor.
    #[inline]
    pub fn is_defined(&self, x: usize, y: usize) -> bool {
        let (hx, hy) = self.window.half();
        x >= hx && x + hx < self.width && y >= hy && y + hy < self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u64> {
        self.is_defined(x, y)
            .then(|| self.descriptors[y * self.width + x])
    }

    pub(crate) fn raw(&self) -> &[u64] {
        &self.descriptors
    }
}

pub fn census_transform(img: &ImageGray, window: CensusWindow) -> Result<CensusDescriptorMap> {
    window.validate()?;
    let (w, h) = img.dims();
    if window.width > w || window.height > h {
        return Err(Error::param(
            "census_window",
            format!(
                "{}x{} window does not fit a {}x{} image",
                window.width, window.height, w, h
            ),
        ));
    }
    let (hx, hy) = window.half();
    let offsets: Vec<isize> = window
        .pair_offsets()
        .into_iter()
        .map(|(dx, dy)| dy * w as isize + dx)
        .collect();
    let data = img.data();
    let mut descriptors = vec![0u64; w * h];
    par::for_each_row(&mut descriptors, w, |y, row| {
        if y < hy || y + hy >= h {
            return;
        }
        for x in hx..w - hx {
            let c = (y * w + x) as isize;
            let mut desc = 0u64;
            for (k, &off) in offsets.iter().enumerate() {
                let a = data[(c + off) as usize];
                let b = data[(c - off) as usize];
                desc |= ((a < b) as u64) << k;
            }
            row[x] = desc;
        }
    });
    Ok(CensusDescriptorMap {
        width: w,
        height: h,
        window,
        descriptors,
    })
}

/// Matching costs for every pixel and every disparity `0..=d_max`, stored
/// with the disparity index innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d_max: usize,
    max_cost: u16,
    border: (usize, usize),
    costs: Vec<u16>,
    evidence: Vec<bool>,
}

impl CostVolume {
    /// Wraps an arbitrary cost array with no census border. `costs` is
    /// indexed `(y * width + x) * (d_max + 1) + d`; entries with `x < d`
    /// count as out of range.
    pub fn from_raw(width: usize, height: usize, d_max: usize, costs: Vec<u16>) -> Result<Self> {
        if costs.len() != width * height * (d_max + 1) {
            return Err(Error::Invalid(format!(
                "cost array has {} entries, expected {}x{}x{}",
                costs.len(),
                width,
                height,
                d_max + 1
            )));
        }
        let max_cost = costs.iter().copied().max().unwrap_or(0);
        let mut vol = Self {
            width,
            height,
            d_max,
            max_cost,
            border: (0, 0),
            costs,
            evidence: Vec::new(),
        };
        vol.evidence = vol.compute_evidence();
        Ok(vol)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Number of disparity hypotheses, `d_max + 1`.
    pub fn depth(&self) -> usize {
        self.d_max + 1
    }

    /// Sentinel stored where no match can be evaluated.
    pub fn max_cost(&self) -> u16 {
        self.max_cost
    }

    pub fn border(&self) -> (usize, usize) {
        self.border
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, d: usize) -> u16 {
        self.costs[(y * self.width + x) * self.depth() + d]
    }

    /// Costs of all disparities at one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u16] {
        let n = self.depth();
        let i = (y * self.width + x) * n;
        &self.costs[i..i + n]
    }

    pub fn costs(&self) -> &[u16] {
        &self.costs
    }

    /// Both descriptors exist for the match of `(x, y)` at disparity `d`.
    #[inline]
    pub fn is_defined(&self, x: usize, y: usize, d: usize) -> bool {
        defined(self.width, self.height, self.border, x, y, d)
    }

    /// False where every evaluable disparity has the same cost: the data
    /// carries no preference and the pixel cannot be matched.
    #[inline]
    pub fn has_evidence(&self, x: usize, y: usize) -> bool {
        self.evidence[y * self.width + x]
    }

    pub(crate) fn geometry(&self) -> VolumeGeometry {
        VolumeGeometry {
            width: self.width,
            height: self.height,
            d_max: self.d_max,
            border: self.border,
        }
    }

    pub(crate) fn evidence(&self) -> &[bool] {
        &self.evidence
    }

    fn compute_evidence(&self) -> Vec<bool> {
        let mut out = vec![false; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut lo = u16::MAX;
                let mut hi = 0u16;
                for d in 0..=self.d_max {
                    if self.is_defined(x, y, d) {
                        let c = self.get(x, y, d);
                        lo = lo.min(c);
                        hi = hi.max(c);
                    }
                }
                out[y * self.width + x] = lo < hi;
            }
        }
        out
    }
}

/// Shape shared by cost and aggregated volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct VolumeGeometry {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub border: (usize, usize),
}

impl VolumeGeometry {
    #[inline]
    pub fn is_defined(&self, x: usize, y: usize, d: usize) -> bool {
        defined(self.width, self.height, self.border, x, y, d)
    }
}

#[inline]
fn defined(w: usize, h: usize, (hx, hy): (usize, usize), x: usize, y: usize, d: usize) -> bool {
    y >= hy && y + hy < h && x >= hx + d && x + hx < w
}

/// `cost(x, y, d) = popcount(left(x, y) ^ right(x − d, y))`; undefined
/// entries hold [`CostVolume::max_cost`], one more than any real distance.
pub fn build_cost_volume(
    left: &CensusDescriptorMap,
    right: &CensusDescriptorMap,
    d_max: usize,
) -> Result<CostVolume> {
    if (left.width, left.height) != (right.width, right.height) {
        return Err(Error::dims(
            "right census map",
            (left.width, left.height),
            (right.width, right.height),
        ));
    }
    if left.window != right.window {
        return Err(Error::param(
            "census_window",
            format!(
                "left {}x{} and right {}x{} windows differ",
                left.window.width, left.window.height, right.window.width, right.window.height
            ),
        ));
    }
    if left.bits() + 1 > u16::MAX as usize {
        return Err(Error::param("census_window", "descriptor too wide"));
    }
    let (w, h) = (left.width, left.height);
    let n = d_max + 1;
    let max_cost = (left.bits() + 1) as u16;
    let border = left.window.half();
    let (hx, hy) = border;
    let ld = left.raw();
    let rd = right.raw();

    let mut costs = vec![max_cost; w * h * n];
    let mut evidence = vec![false; w * h];
    par::for_each_row_zip(&mut costs, w * n, &mut evidence, w, |y, row, ev| {
        if y < hy || y + hy >= h {
            return;
        }
        let lrow = &ld[y * w..(y + 1) * w];
        let rrow = &rd[y * w..(y + 1) * w];
        for x in hx..w.saturating_sub(hx) {
            let cell = &mut row[x * n..(x + 1) * n];
            let l = lrow[x];
            let top = d_max.min(x - hx);
            let mut lo = u16::MAX;
            let mut hi = 0u16;
            for (d, c) in cell.iter_mut().enumerate().take(top + 1) {
                let v = (l ^ rrow[x - d]).count_ones() as u16;
                *c = v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ev[x] = lo < hi;
        }
    });
    Ok(CostVolume {
        width: w,
        height: h,
        d_max,
        max_cost,
        border,
        costs,
        evidence,
    })
}
