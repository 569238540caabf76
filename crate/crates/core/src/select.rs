//! The selection head of the pipeline: masked argmax of the moving-average
//! map and FOI rectangle placement, plus the FOI list file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{FoiShape, RectPx};
use crate::raster::DensityGrid;

/// A concrete placed 10-HPF selection with its map score. `selector_id`
/// names the algorithm or rater that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FoiSelection {
    pub slide_id: String,
    pub selector_id: String,
    pub center_px: (f64, f64),
    pub rect_px: RectPx,
    /// MA value at the selected center; None for externally supplied
    /// (e.g. pathologist) selections.
    pub score: Option<f64>,
}

/// Kernel bin dimensions implied by an MA map and the full-geometry mask it
/// was derived from: `k = full - ma + 1` per axis.
fn implied_kernel(ma: &DensityGrid, valid: &BinaryMask) -> Result<(usize, usize)> {
    let full = &valid.grid;
    if ma.downsample != full.downsample {
        return Err(Error::GeometryMismatch(format!(
            "ma downsample {} != mask downsample {}",
            ma.downsample, full.downsample
        )));
    }
    if ma.cols > full.cols || ma.rows > full.rows {
        return Err(Error::GeometryMismatch(format!(
            "ma map {}x{} larger than mask {}x{}",
            ma.cols, ma.rows, full.cols, full.rows
        )));
    }
    Ok((full.cols - ma.cols + 1, full.rows - ma.rows + 1))
}

fn selection_at(
    ma: &DensityGrid,
    shape: &FoiShape,
    downsample: u32,
    kc: usize,
    kr: usize,
    r: usize,
    c: usize,
    selector_id: &str,
) -> FoiSelection {
    let d = downsample as f64;
    let center_row = r + kr / 2;
    let center_col = c + kc / 2;
    let cx = (center_col as f64 + 0.5) * d;
    let cy = (center_row as f64 + 0.5) * d;
    FoiSelection {
        slide_id: ma.slide_id.clone(),
        selector_id: selector_id.to_string(),
        center_px: (cx, cy),
        rect_px: RectPx::from_center(cx, cy, shape.width_px as f64, shape.height_px as f64),
        score: Some(ma.get(r, c) as f64),
    }
}

/// Returns the valid window center with the maximal MA value. Ties break to
/// the smallest row, then smallest column. The MA map is indexed by window
/// top-left; the valid mask has full grid geometry with centers marked.
pub fn select_foi(
    ma: &DensityGrid,
    valid: &BinaryMask,
    shape: &FoiShape,
    downsample: u32,
    selector_id: &str,
) -> Result<FoiSelection> {
    let (kc, kr) = implied_kernel(ma, valid)?;
    let mut best: Option<(f32, usize, usize)> = None;
    for r in 0..ma.rows {
        for c in 0..ma.cols {
            if !valid.is_set(r + kr / 2, c + kc / 2) {
                continue;
            }
            let v = ma.get(r, c);
            if best.map_or(true, |(bv, _, _)| v > bv) {
                best = Some((v, r, c));
            }
        }
    }
    let (_, r, c) = best.ok_or(Error::NoValidRegion)?;
    Ok(selection_at(ma, shape, downsample, kc, kr, r, c, selector_id))
}

/// Greedy top-k selection: repeatedly takes the best remaining valid center
/// and suppresses all centers whose rects would overlap an already selected
/// rect by more than 25 % of the FOI area. Returns at most `k` selections
/// in non-increasing score order.
pub fn top_k_foi(
    ma: &DensityGrid,
    valid: &BinaryMask,
    shape: &FoiShape,
    downsample: u32,
    selector_id: &str,
    k: usize,
) -> Result<Vec<FoiSelection>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let (kc, kr) = implied_kernel(ma, valid)?;
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for r in 0..ma.rows {
        for c in 0..ma.cols {
            if valid.is_set(r + kr / 2, c + kc / 2) {
                candidates.push((ma.get(r, c), r, c));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoValidRegion);
    }
    // highest score first, (row, col) ascending on ties
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let max_overlap = 0.25 * shape.width_px as f64 * shape.height_px as f64;
    let mut picked: Vec<FoiSelection> = Vec::new();
    for &(_, r, c) in &candidates {
        if picked.len() == k {
            break;
        }
        let sel = selection_at(ma, shape, downsample, kc, kr, r, c, selector_id);
        if picked
            .iter()
            .all(|p| p.rect_px.intersection_area(&sel.rect_px) <= max_overlap)
        {
            picked.push(sel);
        }
    }
    Ok(picked)
}

#[derive(Debug, Serialize, Deserialize)]
struct FoiRecord {
    slide_id: String,
    selector_id: String,
    center_x_px: f64,
    center_y_px: f64,
    width_px: f64,
    height_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Writes a FOI list file (JSON array).
pub fn write_foi_list(selections: &[FoiSelection], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<FoiRecord> = selections
        .iter()
        .map(|s| FoiRecord {
            slide_id: s.slide_id.clone(),
            selector_id: s.selector_id.clone(),
            center_x_px: s.center_px.0,
            center_y_px: s.center_px.1,
            width_px: s.rect_px.width,
            height_px: s.rect_px.height,
            score: s.score,
        })
        .collect();
    let mut json = serde_json::to_string_pretty(&records)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a FOI list file. Also accepts pathologist selections (score null
/// or absent); rectangles are taken exactly as given.
pub fn read_foi_list(path: impl AsRef<Path>) -> Result<Vec<FoiSelection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let records: Vec<FoiRecord> = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(records
        .into_iter()
        .map(|r| FoiSelection {
            rect_px: RectPx::from_center(r.center_x_px, r.center_y_px, r.width_px, r.height_px),
            slide_id: r.slide_id,
            selector_id: r.selector_id,
            center_px: (r.center_x_px, r.center_y_px),
            score: r.score,
        })
        .collect())
}
