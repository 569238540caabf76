//! Regression targets for patch-level mitotic-count estimation: the partial
//! border weight, the normalized count target, and the three-group patch
//! sampler used to draw training patches from a slide.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{AnnotationSet, Label, RectPx};

/// Sampling group of a training patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchGroup {
    /// Contains at least one mitotic figure.
    WithMitosis,
    /// Contains at least one annotated hard-negative cell.
    WithHardNegative,
    /// Uniformly placed on tissue, no further condition.
    Random,
}

impl PatchGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatchGroup::WithMitosis => "with_mitosis",
            PatchGroup::WithHardNegative => "with_hard_negative",
            PatchGroup::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub slide_id: String,
    pub rect_px: RectPx,
    pub group: PatchGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget {
    pub patch: PatchSpec,
    pub c_value: f64,
    pub beta: f64,
    pub diameter_px: f64,
}

/// Partial weight of a point at positional offset `x` beyond a patch's
/// half-extent on one axis (negative = inside). Saturates at `d` deep
/// inside, ramps linearly to 0 across the border band `[-d/2, d/2]`.
pub fn gamma(x: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("diameter must be > 0, got {d}")));
    }
    Ok(if x < -d / 2.0 {
        d
    } else if x <= d / 2.0 {
        d / 2.0 - x
    } else {
        0.0
    })
}

/// Normalized mitotic-count regression target for a patch:
/// `C = (1/beta) * sum_i gamma_x(i) * gamma_y(i) / d^2` over mitosis points,
/// with offsets measured from the patch center. A point deep inside the
/// patch contributes exactly `1/beta`; contributions fade linearly across a
/// border band of width `d`, so abutting patches split a border point's
/// weight between them.
pub fn patch_target(
    set: &AnnotationSet,
    rect: &RectPx,
    diameter_px: f64,
    beta: f64,
) -> Result<RegressionTarget> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    let (cx, cy) = rect.center();
    let mut sum = 0.0;
    for a in set.iter_label(Label::Mitosis) {
        let gx = gamma((a.x_px - cx).abs() - rect.width / 2.0, diameter_px)?;
        if gx == 0.0 {
            continue;
        }
        let gy = gamma((a.y_px - cy).abs() - rect.height / 2.0, diameter_px)?;
        sum += gx * gy / (diameter_px * diameter_px);
    }
    Ok(RegressionTarget {
        patch: PatchSpec {
            slide_id: set.slide.slide_id.clone(),
            rect_px: *rect,
            group: PatchGroup::Random,
        },
        c_value: sum / beta,
        beta,
        diameter_px,
    })
}

const MAX_REJECTION_ATTEMPTS: u32 = 1000;

/// Draws `n` patches of the given group from a slide. Condition-bearing
/// groups center the patch on a uniformly chosen annotation of the matching
/// label with uniform jitter up to a quarter of the patch extent, then clamp
/// to slide bounds, so the conditioning annotation always stays inside.
/// Random patches are placed uniformly among positions whose center bin is
/// tissue. Deterministic for a fixed seed.
pub fn sample_patches(
    set: &AnnotationSet,
    tissue: &BinaryMask,
    group: PatchGroup,
    n: usize,
    patch_px: (f64, f64),
    seed: u64,
) -> Result<Vec<PatchSpec>> {
    let (w, h) = patch_px;
    let slide = &set.slide;
    let (sw, sh) = (slide.width_px as f64, slide.height_px as f64);
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(w > 0.0 && h > 0.0 && w <= sw && h <= sh) {
        return Err(Error::InvalidArgument(format!(
            "patch {w}x{h} does not fit slide {sw}x{sh}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    match group {
        PatchGroup::WithMitosis | PatchGroup::WithHardNegative => {
            let label = if group == PatchGroup::WithMitosis {
                Label::Mitosis
            } else {
                Label::HardNegative
            };
            let anchors: Vec<_> = set.iter_label(label).collect();
            if anchors.is_empty() {
                return Err(Error::GroupUnsatisfiable {
                    slide_id: slide.slide_id.clone(),
                    detail: format!("no {} annotations on slide", label.as_str()),
                });
            }
            for _ in 0..n {
                let a = anchors[rng.random_range(0..anchors.len())];
                let cx = a.x_px + rng.random_range(-0.25 * w..=0.25 * w);
                let cy = a.y_px + rng.random_range(-0.25 * h..=0.25 * h);
                let left = (cx - w / 2.0).clamp(0.0, sw - w);
                let top = (cy - h / 2.0).clamp(0.0, sh - h);
                out.push(PatchSpec {
                    slide_id: slide.slide_id.clone(),
                    rect_px: RectPx::new(left, top, w, h),
                    group,
                });
            }
        }
        PatchGroup::Random => {
            if tissue.count_set() == 0 {
                return Err(Error::GroupUnsatisfiable {
                    slide_id: slide.slide_id.clone(),
                    detail: "slide has no tissue bins".into(),
                });
            }
            let d = tissue.grid.downsample as f64;
            for _ in 0..n {
                let mut placed = false;
                for _ in 0..MAX_REJECTION_ATTEMPTS {
                    let cx = rng.random_range(w / 2.0..=sw - w / 2.0);
                    let cy = rng.random_range(h / 2.0..=sh - h / 2.0);
                    let col = ((cx / d) as usize).min(tissue.grid.cols - 1);
                    let row = ((cy / d) as usize).min(tissue.grid.rows - 1);
                    if tissue.is_set(row, col) {
                        out.push(PatchSpec {
                            slide_id: slide.slide_id.clone(),
                            rect_px: RectPx::new(cx - w / 2.0, cy - h / 2.0, w, h),
                            group,
                        });
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::GroupUnsatisfiable {
                        slide_id: slide.slide_id.clone(),
                        detail: format!(
                            "no tissue-centered position found in {MAX_REJECTION_ATTEMPTS} attempts"
                        ),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Writes patch/target rows as CSV for consumption by external training
/// code: `slide_id,left,top,width,height,group,c_value`.
pub fn write_patch_targets(targets: &[RegressionTarget], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "slide_id,left,top,width,height,group,c_value")?;
    for t in targets {
        let r = &t.patch.rect_px;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.patch.slide_id,
            r.left,
            r.top,
            r.width,
            r.height,
            t.patch.group.as_str(),
            t.c_value
        )?;
    }
    Ok(())
}
