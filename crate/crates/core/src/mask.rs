//! Valid-mask generation: tissue thresholding on thumbnails, morphological
//! closing, and the coverage filter that restricts FOI centers to windows
//! at least 95 % covered by tissue.

use crate::error::{Error, Result};
use crate::raster::{integral_image, DensityGrid, GridKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSemantics {
    Tissue,
    Valid,
}

/// A 0/1 grid marking tissue bins or valid FOI centers.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub grid: DensityGrid,
    pub semantics: MaskSemantics,
}

impl BinaryMask {
    pub fn new(grid: DensityGrid, semantics: MaskSemantics) -> Result<Self> {
        if grid.kind != GridKind::Mask {
            return Err(Error::GeometryMismatch(format!(
                "mask grid must have kind Mask, got {:?}",
                grid.kind
            )));
        }
        grid.validate()?;
        Ok(BinaryMask { grid, semantics })
    }

    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.grid.get(row, col) == 1.0
    }

    pub fn count_set(&self) -> usize {
        self.grid.values().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn fraction_set(&self) -> f64 {
        self.count_set() as f64 / self.grid.values().len() as f64
    }
}

/// Thresholds a normalized grayscale thumbnail (1 = bright glass background)
/// into a tissue mask: tissue where `gray < threshold`.
pub fn tissue_from_thumbnail(gray: &DensityGrid, threshold: f64) -> Result<BinaryMask> {
    if let Some(v) = gray.values().iter().find(|v| !(0.0..=1.0).contains(&(**v as f64))) {
        return Err(Error::InvalidRange(format!(
            "thumbnail value {v} outside [0, 1]"
        )));
    }
    let mut mask = DensityGrid::zeroed(&gray.slide_id, gray.downsample, gray.cols, gray.rows, GridKind::Mask);
    for (out, &v) in mask.values_mut().iter_mut().zip(gray.values()) {
        *out = if (v as f64) < threshold { 1.0 } else { 0.0 };
    }
    BinaryMask::new(mask, MaskSemantics::Tissue)
}

fn disc_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut offs = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

fn dilate(grid: &DensityGrid, offs: &[(i64, i64)]) -> DensityGrid {
    let mut out = DensityGrid::zeroed(&grid.slide_id, grid.downsample, grid.cols, grid.rows, GridKind::Mask);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if grid.get(r, c) == 1.0 {
                for &(dy, dx) in offs {
                    let rr = r as i64 + dy;
                    let cc = c as i64 + dx;
                    if rr >= 0 && cc >= 0 && (rr as usize) < grid.rows && (cc as usize) < grid.cols {
                        out.set(rr as usize, cc as usize, 1.0);
                    }
                }
            }
        }
    }
    out
}

fn erode(grid: &DensityGrid, offs: &[(i64, i64)]) -> DensityGrid {
    let mut out = DensityGrid::zeroed(&grid.slide_id, grid.downsample, grid.cols, grid.rows, GridKind::Mask);
    for r in 0..grid.rows {
        'cell: for c in 0..grid.cols {
            for &(dy, dx) in offs {
                let rr = r as i64 + dy;
                let cc = c as i64 + dx;
                // out-of-grid neighbors count as set, so erosion does not
                // eat tissue that touches the slide border
                if rr >= 0 && cc >= 0 && (rr as usize) < grid.rows && (cc as usize) < grid.cols {
                    if grid.get(rr as usize, cc as usize) != 1.0 {
                        continue 'cell;
                    }
                }
            }
            out.set(r, c, 1.0);
        }
    }
    out
}

/// Morphological closing (dilation then erosion) with a discrete disc
/// structuring element. Radius 0 is the identity.
pub fn morph_close(mask: &BinaryMask, radius_bins: u32) -> BinaryMask {
    if radius_bins == 0 {
        return mask.clone();
    }
    let offs = disc_offsets(radius_bins as i64);
    let closed = erode(&dilate(&mask.grid, &offs), &offs);
    BinaryMask {
        grid: closed,
        semantics: mask.semantics,
    }
}

/// Marks every window center whose `kernel_cols x kernel_rows` window lies
/// entirely inside the grid and is covered by tissue to at least `coverage`
/// (inclusive comparison). The output has full grid geometry; centers whose
/// window does not fit are 0.
pub fn valid_mask(
    tissue: &BinaryMask,
    kernel_cols: usize,
    kernel_rows: usize,
    coverage: f64,
) -> Result<BinaryMask> {
    let grid = &tissue.grid;
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
    let kernel_area = (kernel_cols * kernel_rows) as f64;
    let mut out = DensityGrid::zeroed(&grid.slide_id, grid.downsample, grid.cols, grid.rows, GridKind::Mask);
    let (off_c, off_r) = (kernel_cols / 2, kernel_rows / 2);
    for r in 0..grid.rows - kernel_rows + 1 {
        for c in 0..grid.cols - kernel_cols + 1 {
            let mean = sat.window_sum(r, c, r + kernel_rows - 1, c + kernel_cols - 1) / kernel_area;
            if mean >= coverage {
                out.set(r + off_r, c + off_c, 1.0);
            }
        }
    }
    BinaryMask::new(out, MaskSemantics::Valid)
}

/// Writes a mask as binary PGM (P5, maxval 255): 255 = set, 0 = background.
pub fn write_mask_pgm(mask: &BinaryMask, path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let g = &mask.grid;
    let mut buf = Vec::with_capacity(g.values().len() + 32);
    write!(buf, "P5\n{} {}\n255\n", g.cols, g.rows)?;
    buf.extend(g.values().iter().map(|&v| if v == 1.0 { 255u8 } else { 0u8 }));
    std::fs::write(path, buf)?;
    Ok(())
}
