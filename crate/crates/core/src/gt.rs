//! Ground-truth mitotic counts: exact rectangle counting, the grid-based
//! 10-HPF count map, the exact (grid-free) maximum-window algorithm, MC
//! distribution statistics and case grouping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{AnnotationSet, FoiShape, Label, RectPx};
use crate::raster::{bin_points, moving_window, DensityGrid, WindowMode};

/// Exact count of filtered points inside a half-open rectangle.
pub fn count_in_rect(set: &AnnotationSet, rect: &RectPx, label: Label) -> usize {
    set.iter_label(label)
        .filter(|a| rect.contains(a.x_px, a.y_px))
        .count()
}

/// Grid of approximate 10-HPF mitotic counts: mitosis bin counts run
/// through a moving-window sum of FOI extent. Output is indexed by window
/// top-left as in [`moving_window`].
pub fn gt_mc_map(set: &AnnotationSet, shape: &FoiShape, downsample: u32) -> Result<DensityGrid> {
    let counts = bin_points(set, Label::Mitosis, downsample);
    let (kc, kr) = shape.kernel_bins(downsample);
    moving_window(&counts, kc, kr, WindowMode::Sum)
}

// Segment tree with range add and range max over compressed coordinates,
// plus leftmost-argmax retrieval.
struct MaxAddTree {
    n: usize,
    max: Vec<i64>,
    lazy: Vec<i64>,
}

impl MaxAddTree {
    fn new(n: usize) -> Self {
        MaxAddTree {
            n,
            max: vec![0; 4 * n],
            lazy: vec![0; 4 * n],
        }
    }

    fn add(&mut self, lo: usize, hi: usize, v: i64) {
        self.add_rec(1, 0, self.n - 1, lo, hi, v);
    }

    fn add_rec(&mut self, node: usize, l: usize, r: usize, lo: usize, hi: usize, v: i64) {
        if hi < l || r < lo {
            return;
        }
        if lo <= l && r <= hi {
            self.max[node] += v;
            self.lazy[node] += v;
            return;
        }
        let mid = (l + r) / 2;
        self.add_rec(node * 2, l, mid, lo, hi, v);
        self.add_rec(node * 2 + 1, mid + 1, r, lo, hi, v);
        self.max[node] = self.max[node * 2].max(self.max[node * 2 + 1]) + self.lazy[node];
    }

    fn root_max(&self) -> i64 {
        self.max[1]
    }

    /// Index of the leftmost leaf attaining the root maximum.
    fn argmax(&self) -> usize {
        let mut node = 1;
        let (mut l, mut r) = (0, self.n - 1);
        let mut target = self.max[1];
        while l < r {
            target -= self.lazy[node];
            let mid = (l + r) / 2;
            if self.max[node * 2] == target {
                node *= 2;
                r = mid;
            } else {
                node = node * 2 + 1;
                l = mid + 1;
            }
        }
        l
    }
}

/// Maximum, over all real-valued placements of a closed `w x h` window, of
/// the number of covered mitosis points, with one achieving window top-left.
///
/// Each point (x, y) admits anchors in the rectangle [x-w, x] x [y-h, y];
/// the answer is the deepest overlap of these rectangles, found by an
/// x-sweep with range-add/range-max over compressed y intervals in
/// O(n log n). Insertions at equal x are processed before removals so that
/// closed-window maxima are attained.
pub fn exact_max_window(set: &AnnotationSet, width_px: f64, height_px: f64) -> Result<(usize, (f64, f64))> {
    if !(width_px > 0.0 && height_px > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window dims must be positive, got {width_px} x {height_px}"
        )));
    }
    let points: Vec<(f64, f64)> = set
        .iter_label(Label::Mitosis)
        .map(|a| (a.x_px, a.y_px))
        .collect();
    if points.is_empty() {
        return Ok((0, (0.0, 0.0)));
    }

    let mut coords: Vec<f64> = points
        .iter()
        .flat_map(|&(_, y)| [y - height_px, y])
        .collect();
    coords.sort_by(f64::total_cmp);
    coords.dedup();
    let idx = |v: f64| coords.binary_search_by(|c| c.total_cmp(&v)).unwrap();

    // (x, is_insert, y_lo_idx, y_hi_idx)
    let mut events: Vec<(f64, bool, usize, usize)> = Vec::with_capacity(points.len() * 2);
    for &(x, y) in &points {
        let lo = idx(y - height_px);
        let hi = idx(y);
        events.push((x - width_px, true, lo, hi));
        events.push((x, false, lo, hi));
    }
    // by x; inserts before removals at equal x
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut tree = MaxAddTree::new(coords.len());
    let mut best = 0i64;
    let mut anchor = (0.0, 0.0);
    for &(x, insert, lo, hi) in &events {
        tree.add(lo, hi, if insert { 1 } else { -1 });
        if insert && tree.root_max() > best {
            best = tree.root_max();
            anchor = (x, coords[tree.argmax()]);
        }
    }
    Ok((best as usize, anchor))
}

/// Distribution of grid MC values at valid window centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDistribution {
    pub slide_id: String,
    pub sample_count: usize,
    pub max_mc: u32,
    pub p25: u32,
    pub p50: u32,
    pub p75: u32,
    pub histogram: BTreeMap<u32, usize>,
}

/// Nearest-rank percentile on sorted data: the order statistic at index
/// `min(ceil(p * n), n - 1)` (zero-based).
fn nearest_rank(sorted: &[u32], p: f64) -> u32 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).min(n - 1);
    sorted[k]
}

/// Histogram and percentiles of the MC map over valid centers. The MA map
/// is indexed by window top-left; the valid mask has full grid geometry.
pub fn mc_distribution(map: &DensityGrid, valid: &BinaryMask) -> Result<McDistribution> {
    let full = &valid.grid;
    if map.cols > full.cols || map.rows > full.rows || map.downsample != full.downsample {
        return Err(Error::GeometryMismatch(format!(
            "mc map {}x{} vs mask {}x{}",
            map.cols, map.rows, full.cols, full.rows
        )));
    }
    let kc = full.cols - map.cols + 1;
    let kr = full.rows - map.rows + 1;
    let mut values: Vec<u32> = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            if valid.is_set(r + kr / 2, c + kc / 2) {
                values.push(map.get(r, c).round() as u32);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::NoValidRegion);
    }
    values.sort_unstable();
    let mut histogram = BTreeMap::new();
    for &v in &values {
        *histogram.entry(v).or_insert(0usize) += 1;
    }
    Ok(McDistribution {
        slide_id: map.slide_id.clone(),
        sample_count: values.len(),
        max_mc: *values.last().unwrap(),
        p25: nearest_rank(&values, 0.25),
        p50: nearest_rank(&values, 0.50),
        p75: nearest_rank(&values, 0.75),
        histogram,
    })
}

impl McDistribution {
    /// Fraction of samples with MC at or above the threshold.
    pub fn fraction_at_or_above(&self, threshold: u32) -> f64 {
        let above: usize = self
            .histogram
            .range(threshold..)
            .map(|(_, &n)| n)
            .sum();
        above as f64 / self.sample_count as f64
    }
}

/// Case grouping by how decisively the MC distribution sits relative to the
/// grading threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseGroup {
    ClearlyLow,
    Borderline,
    ClearlyHigh,
}

/// ClearlyLow if no possible count reaches the threshold; ClearlyHigh if
/// more than 75 % of the possible counts do; otherwise Borderline.
pub fn classify_case(dist: &McDistribution, threshold: u32) -> CaseGroup {
    if dist.max_mc < threshold {
        CaseGroup::ClearlyLow
    } else if dist.fraction_at_or_above(threshold) > 0.75 {
        CaseGroup::ClearlyHigh
    } else {
        CaseGroup::Borderline
    }
}
