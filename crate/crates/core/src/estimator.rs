//! Pluggable mitotic-density estimator sources. These stand in for trained
//! per-patch models at the pipeline interface: a perfect oracle, noise- and
//! clutter-degraded variants for sensitivity sweeps, and externally
//! produced density rasters.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{AnnotationSet, Label};
use crate::raster::{bin_points, read_raster, DensityGrid, GridKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Exact per-bin mitosis counts.
    Oracle,
    /// Oracle plus i.i.d. Gaussian noise clipped at zero.
    Noisy { sigma: f64 },
    /// Oracle plus unit false-positive impulses, Poisson over the tissue
    /// area at a rate per mm².
    Clutter { fp_per_mm2: f64 },
    /// A DRF grid produced by an external model.
    ExternalFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub id: String,
    pub kind: EstimatorKind,
}

impl EstimatorSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            EstimatorKind::Noisy { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::InvalidParam(format!("sigma must be >= 0, got {sigma}")));
                }
            }
            EstimatorKind::Clutter { fp_per_mm2 } => {
                if !(fp_per_mm2.is_finite() && *fp_per_mm2 >= 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "fp_per_mm2 must be >= 0, got {fp_per_mm2}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Produces the estimator's density plane for one slide. Deterministic for
/// a fixed (spec, set, seed); noise enters at bin level, before any moving
/// average downstream.
pub fn estimate(
    spec: &EstimatorSpec,
    set: &AnnotationSet,
    tissue: &BinaryMask,
    downsample: u32,
    seed: u64,
) -> Result<DensityGrid> {
    spec.validate()?;
    let oracle = || {
        let mut g = bin_points(set, Label::Mitosis, downsample);
        g.kind = GridKind::Estimate;
        g
    };
    match &spec.kind {
        EstimatorKind::Oracle => Ok(oracle()),
        EstimatorKind::Noisy { sigma } => {
            let mut g = oracle();
            if *sigma > 0.0 {
                let normal = Normal::new(0.0, *sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for v in g.values_mut() {
                    *v = (*v as f64 + normal.sample(&mut rng)).max(0.0) as f32;
                }
            }
            Ok(g)
        }
        EstimatorKind::Clutter { fp_per_mm2 } => {
            let mut g = oracle();
            let tissue_bins: Vec<usize> = tissue
                .grid
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(i, _)| i)
                .collect();
            let bin_mm = downsample as f64 * set.slide.mpp * 1e-3;
            let tissue_area_mm2 = tissue_bins.len() as f64 * bin_mm * bin_mm;
            let mean = fp_per_mm2 * tissue_area_mm2;
            if mean > 0.0 && !tissue_bins.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let poisson = Poisson::new(mean).map_err(|e| Error::InvalidParam(e.to_string()))?;
                let n = poisson.sample(&mut rng) as usize;
                for _ in 0..n {
                    let i = tissue_bins[rng.random_range(0..tissue_bins.len())];
                    g.values_mut()[i] += 1.0;
                }
            }
            Ok(g)
        }
        EstimatorKind::ExternalFile { path } => {
            let g = read_raster(path)?;
            let (cols, rows) = crate::raster::grid_dims(&set.slide, downsample);
            if g.cols != cols || g.rows != rows || g.downsample != downsample {
                return Err(Error::GeometryMismatch(format!(
                    "external grid {}x{} at D={} does not match slide `{}` ({}x{} at D={})",
                    g.cols, g.rows, g.downsample, set.slide.slide_id, cols, rows, downsample
                )));
            }
            Ok(g)
        }
    }
}
