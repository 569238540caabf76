//! Desk-scale synthetic slide generator: random tissue thumbnails plus a
//! clustered (Thomas) mitosis point process with one planted hotspot, used
//! as the test substrate in place of scanned slides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{tissue_from_thumbnail, BinaryMask};
use crate::model::{Annotation, AnnotationSet, Label, SlideMeta};
use crate::raster::{grid_dims, integral_image, DensityGrid, GridKind};

/// Parameters of one synthetic case. Spatial intensities are per mm² of
/// tissue; offspring scatter is in microns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub width_px: u32,
    pub height_px: u32,
    pub mpp: f64,
    pub downsample: u32,
    pub tissue_blob_count: u32,
    /// Blob radius range in grid bins.
    pub blob_radius_bins: (f64, f64),
    /// Parent (cluster center) intensity per mm² of tissue.
    pub parent_per_mm2: f64,
    /// Mean offspring per parent.
    pub offspring_mean: f64,
    /// Isotropic Gaussian offspring scatter, in microns.
    pub offspring_sigma_um: f64,
    /// Offspring-mean boost factor of the single planted hotspot parent.
    pub hotspot_boost: f64,
    pub hard_negative_per_mm2: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width_px: 40_000,
            height_px: 30_000,
            mpp: 0.25,
            downsample: 128,
            tissue_blob_count: 5,
            blob_radius_bins: (30.0, 80.0),
            parent_per_mm2: 0.4,
            offspring_mean: 8.0,
            offspring_sigma_um: 40.0,
            hotspot_boost: 8.0,
            hard_negative_per_mm2: 2.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidArgument("slide dims must be positive".into()));
        }
        if !(self.mpp > 0.0) || self.downsample == 0 {
            return Err(Error::InvalidArgument("mpp and downsample must be positive".into()));
        }
        if self.hotspot_boost < 1.0 {
            return Err(Error::InvalidArgument("hotspot_boost must be >= 1".into()));
        }
        for (name, v) in [
            ("parent_per_mm2", self.parent_per_mm2),
            ("offspring_mean", self.offspring_mean),
            ("offspring_sigma_um", self.offspring_sigma_um),
            ("hard_negative_per_mm2", self.hard_negative_per_mm2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn slide_meta(&self, slide_id: &str) -> SlideMeta {
        SlideMeta {
            slide_id: slide_id.to_string(),
            width_px: self.width_px,
            height_px: self.height_px,
            mpp: self.mpp,
        }
    }

    fn bin_area_mm2(&self) -> f64 {
        let bin_mm = self.downsample as f64 * self.mpp * 1e-3;
        bin_mm * bin_mm
    }
}

/// Location of the planted hotspot parent and bookkeeping counts, written
/// alongside each generated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecord {
    pub slide_id: String,
    pub parent_x_px: f64,
    pub parent_y_px: f64,
    pub planted_offspring: usize,
    pub total_mitoses: usize,
    pub total_hard_negatives: usize,
}

const MAX_TISSUE_ATTEMPTS: u32 = 100;
const BLOB_EDGE_BINS: f64 = 2.0;

fn render_tissue_attempt(
    params: &SynthParams,
    slide_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(DensityGrid, BinaryMask)> {
    let meta = params.slide_meta(slide_id);
    let (cols, rows) = grid_dims(&meta, params.downsample);
    let mut thumb = DensityGrid::zeroed(slide_id, params.downsample, cols, rows, GridKind::Estimate);
    for v in thumb.values_mut() {
        *v = 0.9;
    }
    for _ in 0..params.tissue_blob_count {
        let cx = rng.random_range(0.0..cols as f64);
        let cy = rng.random_range(0.0..rows as f64);
        let radius = rng.random_range(params.blob_radius_bins.0..=params.blob_radius_bins.1);
        let brightness = rng.random_range(0.2..=0.5) as f32;
        let reach = radius + BLOB_EDGE_BINS;
        let c_lo = ((cx - reach).floor().max(0.0)) as usize;
        let c_hi = ((cx + reach).ceil().min(cols as f64 - 1.0)) as usize;
        let r_lo = ((cy - reach).floor().max(0.0)) as usize;
        let r_hi = ((cy + reach).ceil().min(rows as f64 - 1.0)) as usize;
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let dx = c as f64 + 0.5 - cx;
                let dy = r as f64 + 0.5 - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                // linear soft edge between radius and radius + edge width
                let t = ((radius + BLOB_EDGE_BINS - dist) / BLOB_EDGE_BINS).clamp(0.0, 1.0) as f32;
                let v = 0.9 + (brightness - 0.9) * t;
                if v < thumb.get(r, c) {
                    thumb.set(r, c, v);
                }
            }
        }
    }
    let mask = tissue_from_thumbnail(&thumb, 0.8)?;
    Ok((thumb, mask))
}

/// Generates a tissue thumbnail (grayscale in [0, 1]) and its threshold
/// mask. Regenerates until the tissue fraction lands in [0.2, 0.9];
/// deterministic for a fixed seed.
pub fn synth_tissue(params: &SynthParams, slide_id: &str, seed: u64) -> Result<(DensityGrid, BinaryMask)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_TISSUE_ATTEMPTS {
        let (thumb, mask) = render_tissue_attempt(params, slide_id, &mut rng)?;
        let fraction = mask.fraction_set();
        if (0.2..=0.9).contains(&fraction) {
            return Ok((thumb, mask));
        }
    }
    Err(Error::Unsatisfiable {
        attempts: MAX_TISSUE_ATTEMPTS,
        detail: "tissue fraction never reached [0.2, 0.9]".into(),
    })
}

/// Square half-extent (in bins) of all-tissue surroundings required for the
/// planted hotspot parent; generously covers a centered 10-HPF window at
/// the default downsample.
const HOTSPOT_MARGIN_BINS: usize = 32;

/// Bins whose `(2m+1) x (2m+1)` square neighborhood lies in-grid and is
/// entirely tissue.
fn interior_tissue_bins(grid: &DensityGrid, m: usize) -> Vec<(usize, usize)> {
    if grid.rows < 2 * m + 1 || grid.cols < 2 * m + 1 {
        return Vec::new();
    }
    let sat = integral_image(grid);
    let full = ((2 * m + 1) * (2 * m + 1)) as f64;
    let mut out = Vec::new();
    for r in m..grid.rows - m {
        for c in m..grid.cols - m {
            if sat.window_sum(r - m, c - m, r + m, c + m) == full {
                out.push((r, c));
            }
        }
    }
    out
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

/// Uniform point on a uniformly chosen tissue bin, in full-res pixels.
fn uniform_tissue_point(
    rng: &mut ChaCha8Rng,
    tissue_bins: &[(usize, usize)],
    d: f64,
    width: f64,
    height: f64,
) -> (f64, f64) {
    let (r, c) = tissue_bins[rng.random_range(0..tissue_bins.len())];
    let x = ((c as f64 + rng.random::<f64>()) * d).min(width - 0.01);
    let y = ((r as f64 + rng.random::<f64>()) * d).min(height - 0.01);
    (round2(x), round2(y))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Thomas-process annotation generator. Draws Poisson cluster parents over
/// the tissue area (at least one; the first parent is the planted hotspot
/// with offspring mean boosted by `hotspot_boost`), scatters Gaussian
/// offspring around each parent, drops offspring off tissue, and adds
/// uniform hard negatives. All emitted coordinates are on the 0.01 px
/// lattice, inside slide bounds and on tissue bins.
pub fn synth_annotations(
    params: &SynthParams,
    tissue: &BinaryMask,
    slide_id: &str,
    seed: u64,
) -> Result<(AnnotationSet, PlantedRecord)> {
    params.validate()?;
    let grid = &tissue.grid;
    let tissue_bins: Vec<(usize, usize)> = (0..grid.rows)
        .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
        .filter(|&(r, c)| grid.get(r, c) == 1.0)
        .collect();
    if tissue_bins.is_empty() {
        return Err(Error::InvalidArgument("tissue mask is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = params.downsample as f64;
    let (width, height) = (params.width_px as f64, params.height_px as f64);
    let tissue_area = tissue_bins.len() as f64 * params.bin_area_mm2();
    let sigma_px = params.offspring_sigma_um / params.mpp;

    let n_parents = poisson_count(&mut rng, params.parent_per_mm2 * tissue_area).max(1);
    let on_tissue = |x: f64, y: f64| -> bool {
        if !(x >= 0.0 && x < width && y >= 0.0 && y < height) {
            return false;
        }
        grid.get((y / d) as usize, (x / d) as usize) == 1.0
    };

    let mut annotations = Vec::new();
    let mut planted = PlantedRecord {
        slide_id: slide_id.to_string(),
        parent_x_px: 0.0,
        parent_y_px: 0.0,
        planted_offspring: 0,
        total_mitoses: 0,
        total_hard_negatives: 0,
    };
    let scatter = if sigma_px > 0.0 {
        Some(Normal::new(0.0, sigma_px).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    // the planted hotspot goes on interior tissue so it stays recoverable;
    // background parents may hug tissue or slide edges
    let interior_bins = interior_tissue_bins(grid, HOTSPOT_MARGIN_BINS);
    for parent_idx in 0..n_parents {
        let pool = if parent_idx == 0 && !interior_bins.is_empty() {
            &interior_bins
        } else {
            &tissue_bins
        };
        let (px, py) = uniform_tissue_point(&mut rng, pool, d, width, height);
        let mean = if parent_idx == 0 {
            planted.parent_x_px = px;
            planted.parent_y_px = py;
            params.offspring_mean * params.hotspot_boost
        } else {
            params.offspring_mean
        };
        let n_offspring = poisson_count(&mut rng, mean);
        for _ in 0..n_offspring {
            let (ox, oy) = match &scatter {
                Some(normal) => (px + normal.sample(&mut rng), py + normal.sample(&mut rng)),
                None => (px, py),
            };
            let (ox, oy) = (round2(ox), round2(oy));
            if on_tissue(ox, oy) {
                annotations.push(Annotation { x_px: ox, y_px: oy, label: Label::Mitosis });
                if parent_idx == 0 {
                    planted.planted_offspring += 1;
                }
            }
        }
    }
    let n_hard = poisson_count(&mut rng, params.hard_negative_per_mm2 * tissue_area);
    for _ in 0..n_hard {
        let (x, y) = uniform_tissue_point(&mut rng, &tissue_bins, d, width, height);
        annotations.push(Annotation { x_px: x, y_px: y, label: Label::HardNegative });
    }
    planted.total_mitoses = annotations.iter().filter(|a| a.label == Label::Mitosis).count();
    planted.total_hard_negatives = annotations.len() - planted.total_mitoses;
    let set = AnnotationSet::new(params.slide_meta(slide_id), annotations)?;
    Ok((set, planted))
}

/// A fully generated synthetic case.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub meta: SlideMeta,
    pub thumbnail: DensityGrid,
    pub tissue: BinaryMask,
    pub set: AnnotationSet,
    pub planted: PlantedRecord,
}

/// Generates thumbnail, tissue mask and annotations for one case from a
/// single seed.
pub fn synth_case(params: &SynthParams, slide_id: &str, seed: u64) -> Result<SynthCase> {
    let (thumbnail, tissue) = synth_tissue(params, slide_id, seed)?;
    // decorrelate the point process from the tissue stream
    let (set, planted) = synth_annotations(params, &tissue, slide_id, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(SynthCase {
        meta: params.slide_meta(slide_id),
        thumbnail,
        tissue,
        set,
        planted,
    })
}
