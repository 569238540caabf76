//! Downsampled scalar grids over slides, summed-area tables, the moving
//! window operator, point and disc rasterization, and the density-raster
//! file format (DRF).

use std::io::Read as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, Label, SlideMeta};

pub const DRF_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    BinCount,
    DiscMap,
    MaMap,
    Mask,
    Estimate,
}

impl GridKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridKind::BinCount => "BinCount",
            GridKind::DiscMap => "DiscMap",
            GridKind::MaMap => "MaMap",
            GridKind::Mask => "Mask",
            GridKind::Estimate => "Estimate",
        }
    }

    pub fn parse(s: &str) -> Option<GridKind> {
        match s {
            "BinCount" => Some(GridKind::BinCount),
            "DiscMap" => Some(GridKind::DiscMap),
            "MaMap" => Some(GridKind::MaMap),
            "Mask" => Some(GridKind::Mask),
            "Estimate" => Some(GridKind::Estimate),
            _ => None,
        }
    }
}

/// A downsampled row-major scalar field over a slide. One bin covers
/// `downsample x downsample` full-resolution pixels, origin at (0, 0).
/// Values are held in f32, matching the on-disk payload precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub slide_id: String,
    pub downsample: u32,
    pub cols: usize,
    pub rows: usize,
    pub kind: GridKind,
    values: Vec<f32>,
}

impl DensityGrid {
    pub fn zeroed(slide_id: &str, downsample: u32, cols: usize, rows: usize, kind: GridKind) -> Self {
        DensityGrid {
            slide_id: slide_id.to_string(),
            downsample,
            cols,
            rows,
            kind,
            values: vec![0.0; rows * cols],
        }
    }

    /// Zeroed grid covering a slide: `cols = ceil(width/D)`, `rows = ceil(height/D)`.
    pub fn zeroed_for_slide(slide: &SlideMeta, downsample: u32, kind: GridKind) -> Self {
        let (cols, rows) = grid_dims(slide, downsample);
        Self::zeroed(&slide.slide_id, downsample, cols, rows, kind)
    }

    pub fn from_values(
        slide_id: &str,
        downsample: u32,
        cols: usize,
        rows: usize,
        kind: GridKind,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::GeometryMismatch(format!(
                "value count {} != rows*cols {}",
                values.len(),
                rows * cols
            )));
        }
        let g = DensityGrid {
            slide_id: slide_id.to_string(),
            downsample,
            cols,
            rows,
            kind,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.cols + col] = v;
    }

    /// Full-resolution coordinate of a bin center.
    pub fn bin_center_px(&self, row: usize, col: usize) -> (f64, f64) {
        let d = self.downsample as f64;
        ((col as f64 + 0.5) * d, (row as f64 + 0.5) * d)
    }

    /// Kind-specific value validation: all values finite; masks are 0/1;
    /// bin counts are non-negative integers.
    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidRange(format!("non-finite value at index {i}")));
            }
            match self.kind {
                GridKind::Mask => {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::InvalidField {
                            slide_id: self.slide_id.clone(),
                            field: "values".into(),
                            detail: format!("Mask grid holds {v} at index {i}, expected 0 or 1"),
                        });
                    }
                }
                GridKind::BinCount => {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidField {
                            slide_id: self.slide_id.clone(),
                            field: "values".into(),
                            detail: format!(
                                "BinCount grid holds {v} at index {i}, expected non-negative integer"
                            ),
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn same_geometry(&self, other: &DensityGrid) -> bool {
        self.cols == other.cols && self.rows == other.rows && self.downsample == other.downsample
    }
}

/// Grid dimensions covering a slide at a downsample factor.
pub fn grid_dims(slide: &SlideMeta, downsample: u32) -> (usize, usize) {
    let d = downsample as u64;
    let cols = (slide.width_px as u64).div_ceil(d) as usize;
    let rows = (slide.height_px as u64).div_ceil(d) as usize;
    (cols, rows)
}

/// Bins annotation points of one label into per-bin counts. The bin of a
/// point is `(floor(y/D), floor(x/D))`; the grid sum equals the number of
/// filtered points.
pub fn bin_points(set: &AnnotationSet, label: Label, downsample: u32) -> DensityGrid {
    assert!(downsample >= 1);
    let mut grid = DensityGrid::zeroed_for_slide(&set.slide, downsample, GridKind::BinCount);
    let d = downsample as f64;
    for a in set.iter_label(label) {
        let c = (a.x_px / d).floor() as usize;
        let r = (a.y_px / d).floor() as usize;
        let v = grid.get(r, c);
        grid.set(r, c, v + 1.0);
    }
    grid
}

/// Marks every bin whose center lies within `diameter_px / 2` of any
/// filtered point; the union of filled discs, as a 0/1 map.
pub fn rasterize_discs(
    set: &AnnotationSet,
    label: Label,
    diameter_px: f64,
    downsample: u32,
) -> Result<DensityGrid> {
    if !(diameter_px > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disc diameter must be > 0, got {diameter_px}"
        )));
    }
    let mut grid = DensityGrid::zeroed_for_slide(&set.slide, downsample, GridKind::DiscMap);
    let d = downsample as f64;
    let radius = diameter_px / 2.0;
    let r2 = radius * radius;
    for a in set.iter_label(label) {
        let c_lo = (((a.x_px - radius) / d).floor().max(0.0)) as usize;
        let c_hi = ((a.x_px + radius) / d).floor() as usize;
        let r_lo = (((a.y_px - radius) / d).floor().max(0.0)) as usize;
        let r_hi = ((a.y_px + radius) / d).floor() as usize;
        for row in r_lo..=r_hi.min(grid.rows.saturating_sub(1)) {
            for col in c_lo..=c_hi.min(grid.cols.saturating_sub(1)) {
                let (cx, cy) = grid.bin_center_px(row, col);
                let dx = cx - a.x_px;
                let dy = cy - a.y_px;
                if dx * dx + dy * dy <= r2 {
                    grid.set(row, col, 1.0);
                }
            }
        }
    }
    grid.kind = GridKind::DiscMap;
    Ok(grid)
}

/// 2-D prefix sums of a grid, accumulated in f64 so that window sums over
/// integer-valued sources are exact.
#[derive(Debug, Clone)]
pub struct SummedAreaTable {
    pub cols: usize,
    pub rows: usize,
    values: Vec<f64>,
}

impl SummedAreaTable {
    /// `S(r, c)` = sum of the source over `[0..=r, 0..=c]`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Sum over the inclusive rectangle `[r0..=r1, c0..=c1]`.
    pub fn window_sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> f64 {
        debug_assert!(r0 <= r1 && c0 <= c1 && r1 < self.rows && c1 < self.cols);
        let mut s = self.get(r1, c1);
        if r0 > 0 {
            s -= self.get(r0 - 1, c1);
        }
        if c0 > 0 {
            s -= self.get(r1, c0 - 1);
        }
        if r0 > 0 && c0 > 0 {
            s += self.get(r0 - 1, c0 - 1);
        }
        s
    }
}

pub fn integral_image(grid: &DensityGrid) -> SummedAreaTable {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut values = vec![0.0f64; rows * cols];
    for r in 0..rows {
        let mut row_acc = 0.0f64;
        for c in 0..cols {
            row_acc += grid.get(r, c) as f64;
            let above = if r > 0 { values[(r - 1) * cols + c] } else { 0.0 };
            values[r * cols + c] = row_acc + above;
        }
    }
    SummedAreaTable { cols, rows, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    Sum,
    Mean,
}

/// Moving-window sum or mean over the grid, computed via a summed-area
/// table in O(rows * cols) regardless of kernel size.
///
/// The output has dimensions `(rows - kr + 1, cols - kc + 1)` and is indexed
/// by window top-left; the window whose output sits at `(r, c)` is centered
/// on source bin `(r + kr/2, c + kc/2)`. Windows are only evaluated where
/// they fit entirely inside the grid.
pub fn moving_window(
    grid: &DensityGrid,
    kernel_cols: usize,
    kernel_rows: usize,
    mode: WindowMode,
) -> Result<DensityGrid> {
    if kernel_cols == 0 || kernel_rows == 0 {
        return Err(Error::InvalidArgument("kernel dimensions must be >= 1".into()));
    }
    if kernel_cols > grid.cols || kernel_rows > grid.rows {
        return Err(Error::KernelTooLarge {
            kernel_cols,
            kernel_rows,
            cols: grid.cols,
            rows: grid.rows,
        });
    }
    let sat = integral_image(grid);
    let out_rows = grid.rows - kernel_rows + 1;
    let out_cols = grid.cols - kernel_cols + 1;
    let norm = match mode {
        WindowMode::Sum => 1.0,
        WindowMode::Mean => 1.0 / (kernel_rows as f64 * kernel_cols as f64),
    };
    let mut out = DensityGrid::zeroed(&grid.slide_id, grid.downsample, out_cols, out_rows, GridKind::MaMap);
    for r in 0..out_rows {
        for c in 0..out_cols {
            let s = sat.window_sum(r, c, r + kernel_rows - 1, c + kernel_cols - 1);
            out.set(r, c, (s * norm) as f32);
        }
    }
    Ok(out)
}

/// Center offset of a moving-window output relative to the source grid:
/// output cell `(r, c)` corresponds to source center `(r + off_r, c + off_c)`.
pub fn window_center_offset(kernel_cols: usize, kernel_rows: usize) -> (usize, usize) {
    (kernel_cols / 2, kernel_rows / 2)
}

#[derive(Debug, Serialize, Deserialize)]
struct DrfHeader {
    drf_version: u32,
    slide_id: String,
    kind: String,
    downsample: u32,
    rows: usize,
    cols: usize,
}

fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("f32")
}

/// Writes a grid as DRF: a JSON sidecar at `path` plus a row-major
/// little-endian f32 payload next to it with extension `.f32`.
pub fn write_raster(grid: &DensityGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = DrfHeader {
        drf_version: DRF_VERSION,
        slide_id: grid.slide_id.clone(),
        kind: grid.kind.as_str().to_string(),
        downsample: grid.downsample,
        rows: grid.rows,
        cols: grid.cols,
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    std::fs::write(path, json)?;
    let mut payload = Vec::with_capacity(grid.values.len() * 4);
    for v in &grid.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(payload_path(path), payload)?;
    Ok(())
}

/// Reads a DRF grid back, validating header consistency and kind-specific
/// value constraints.
pub fn read_raster(path: impl AsRef<Path>) -> Result<DensityGrid> {
    let path = path.as_ref();
    let header_err = |detail: String| Error::MalformedHeader {
        path: path.display().to_string(),
        detail,
    };
    let text = std::fs::read_to_string(path)?;
    let header: DrfHeader = serde_json::from_str(&text).map_err(|e| header_err(e.to_string()))?;
    if header.drf_version != DRF_VERSION {
        return Err(Error::UnsupportedVersion(header.drf_version));
    }
    let kind = GridKind::parse(&header.kind)
        .ok_or_else(|| header_err(format!("unknown kind `{}`", header.kind)))?;
    if header.downsample == 0 {
        return Err(header_err("downsample must be >= 1".into()));
    }
    let payload_file = payload_path(path);
    let mut bytes = Vec::new();
    std::fs::File::open(&payload_file)?.read_to_end(&mut bytes)?;
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| header_err("rows*cols overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            path: payload_file.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DensityGrid::from_values(
        &header.slide_id,
        header.downsample,
        header.cols,
        header.rows,
        kind,
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Annotation;

    fn slide(w: u32, h: u32) -> SlideMeta {
        SlideMeta { slide_id: "s1".into(), width_px: w, height_px: h, mpp: 0.25 }
    }

    fn set_of(points: &[(f64, f64)], slide: SlideMeta) -> AnnotationSet {
        let anns = points
            .iter()
            .map(|&(x, y)| Annotation { x_px: x, y_px: y, label: Label::Mitosis })
            .collect();
        AnnotationSet::new(slide, anns).unwrap()
    }

    #[test]
    fn bin_points_conserves_mass() {
        let set = set_of(&[(0.0, 0.0), (10.0, 10.0), (500.0, 300.0), (999.0, 999.0), (1.0, 2.0)], slide(1000, 1000));
        let g = bin_points(&set, Label::Mitosis, 128);
        let sum: f32 = g.values().iter().sum();
        assert_eq!(sum, 5.0);
    }

    #[test]
    fn bin_points_half_open_bins() {
        let set = set_of(&[(128.0, 0.0)], slide(1000, 1000));
        let g = bin_points(&set, Label::Mitosis, 128);
        assert_eq!(g.get(0, 1), 1.0);
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn bin_points_matches_per_point_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|_| (rng.random_range(0.0..2000.0), rng.random_range(0.0..1500.0)))
            .collect();
        let set = set_of(&pts, slide(2000, 1500));
        let d = 64u32;
        let g = bin_points(&set, Label::Mitosis, d);
        let mut oracle = vec![0.0f32; g.rows * g.cols];
        for &(x, y) in &pts {
            let c = (x / d as f64).floor() as usize;
            let r = (y / d as f64).floor() as usize;
            oracle[r * g.cols + c] += 1.0;
        }
        assert_eq!(g.values(), &oracle[..]);
        assert_eq!(g.values().iter().sum::<f32>(), 1000.0);
    }

    #[test]
    fn disc_area_matches_membership_count() {
        let set = set_of(&[(300.0, 300.0)], slide(600, 600));
        let g = rasterize_discs(&set, Label::Mitosis, 50.0, 1).unwrap();
        let ones = g.values().iter().filter(|&&v| v == 1.0).count();
        // brute-force disc membership over bin centers at D=1
        let mut expect = 0usize;
        for r in 0..600 {
            for c in 0..600 {
                let dx = (c as f64 + 0.5) - 300.0;
                let dy = (r as f64 + 0.5) - 300.0;
                if dx * dx + dy * dy <= 25.0 * 25.0 {
                    expect += 1;
                }
            }
        }
        assert_eq!(ones, expect);
    }

    #[test]
    fn disc_union_is_idempotent_mask() {
        let set = set_of(&[(100.0, 100.0), (110.0, 100.0)], slide(600, 600));
        let g = rasterize_discs(&set, Label::Mitosis, 50.0, 1).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0 || v == 1.0));
        g.validate().unwrap();
    }

    #[test]
    fn sat_constant_field() {
        let g = DensityGrid::from_values("s1", 1, 4, 4, GridKind::BinCount, vec![1.0; 16]).unwrap();
        let sat = integral_image(&g);
        assert_eq!(sat.get(3, 3), 16.0);
        assert_eq!(sat.window_sum(1, 1, 2, 2), 4.0);
    }

    #[test]
    fn sat_matches_naive_on_random_windows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (64, 64);
        let values: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(0..20) as f32).collect();
        let g = DensityGrid::from_values("s1", 1, cols, rows, GridKind::BinCount, values).unwrap();
        let sat = integral_image(&g);
        for _ in 0..200 {
            let r0 = rng.random_range(0..rows);
            let r1 = rng.random_range(r0..rows);
            let c0 = rng.random_range(0..cols);
            let c1 = rng.random_range(c0..cols);
            let mut naive = 0.0f64;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    naive += g.get(r, c) as f64;
                }
            }
            assert_eq!(sat.window_sum(r0, c0, r1, c1), naive);
        }
    }

    #[test]
    fn moving_window_small_cases() {
        let g = DensityGrid::from_values("s1", 1, 4, 4, GridKind::BinCount, vec![1.0; 16]).unwrap();
        let sum = moving_window(&g, 2, 2, WindowMode::Sum).unwrap();
        assert_eq!((sum.rows, sum.cols), (3, 3));
        assert!(sum.values().iter().all(|&v| v == 4.0));
        let mean = moving_window(&g, 2, 2, WindowMode::Mean).unwrap();
        for (s, m) in sum.values().iter().zip(mean.values()) {
            assert_eq!(*m, s / 4.0);
        }
    }

    #[test]
    fn moving_window_matches_naive_sliding() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (128, 128);
        let values: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(0..8) as f32).collect();
        let g = DensityGrid::from_values("s1", 1, cols, rows, GridKind::BinCount, values).unwrap();
        let (kc, kr) = (31, 17);
        let mw = moving_window(&g, kc, kr, WindowMode::Sum).unwrap();
        for r in 0..mw.rows {
            for c in 0..mw.cols {
                let mut naive = 0.0f64;
                for rr in r..r + kr {
                    for cc in c..c + kc {
                        naive += g.get(rr, cc) as f64;
                    }
                }
                assert_eq!(mw.get(r, c) as f64, naive, "mismatch at ({r},{c})");
            }
        }
    }

    #[test]
    fn moving_window_rejects_oversized_kernel() {
        let g = DensityGrid::zeroed("s1", 1, 4, 4, GridKind::BinCount);
        assert!(matches!(
            moving_window(&g, 5, 2, WindowMode::Sum),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn drf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = DensityGrid::from_values("s1", 128, 3, 2, GridKind::Estimate, vec![0.5, 1.25, -3.0, 0.0, 7.5, 2.0]).unwrap();
        write_raster(&g, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn drf_payload_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = DensityGrid::zeroed("s1", 1, 3, 2, GridKind::Estimate);
        write_raster(&g, &path).unwrap();
        std::fs::write(path.with_extension("f32"), [0u8; 10]).unwrap();
        assert!(matches!(read_raster(&path), Err(Error::PayloadSizeMismatch { .. })));
    }

    #[test]
    fn drf_rejects_invalid_mask_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut g = DensityGrid::zeroed("s1", 1, 2, 2, GridKind::Mask);
        write_raster(&g, &path).unwrap();
        g.set(0, 0, 0.5);
        std::fs::write(
            path.with_extension("f32"),
            g.values().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
        )
        .unwrap();
        assert!(matches!(read_raster(&path), Err(Error::InvalidField { .. })));
    }

    #[test]
    fn drf_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        std::fs::write(
            &path,
            r#"{"drf_version":9,"slide_id":"s1","kind":"Mask","downsample":1,"rows":1,"cols":1}"#,
        )
        .unwrap();
        std::fs::write(path.with_extension("f32"), [0u8; 4]).unwrap();
        assert!(matches!(read_raster(&path), Err(Error::UnsupportedVersion(9))));
    }
}
