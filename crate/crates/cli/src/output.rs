//! Output plumbing shared by the subcommands: run manifests, atomic file
//! writes with partial-output cleanup, and the heatmap colormap.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mitoscan::raster::{write_raster, DensityGrid};

use crate::CliError;

/// Tracks every file a subcommand creates so a failing run can remove its
/// partial outputs. Single-file formats go through a temp file + rename.
pub struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs { created: Vec::new() }
    }

    fn tmp_path(path: &Path) -> PathBuf {
        let mut name = std::ffi::OsString::from(".tmp-");
        name.push(path.file_name().unwrap_or_default());
        path.with_file_name(name)
    }

    /// Writes bytes atomically: temp file in the same directory, then rename.
    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let tmp = Self::tmp_path(path);
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        self.created.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(path, &bytes)
    }

    /// DRF output is a sidecar + payload pair; both are tracked for cleanup.
    pub fn write_drf(&mut self, path: &Path, grid: &DensityGrid) -> Result<(), CliError> {
        write_raster(grid, path)?;
        self.created.push(path.to_path_buf());
        self.created.push(path.with_extension("f32"));
        Ok(())
    }

    /// Writes through a core writer that takes a path (CSV, FOI list, ...).
    pub fn write_with<F>(&mut self, path: &Path, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&Path) -> mitoscan::Result<()>,
    {
        let tmp = Self::tmp_path(path);
        write(&tmp)?;
        fs::rename(&tmp, path)?;
        self.created.push(path.to_path_buf());
        Ok(())
    }

    pub fn discard_all(&mut self) {
        for p in self.created.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

#[derive(Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a T,
}

/// Writes the per-invocation run manifest (`manifest-<command>.json`) into
/// the output directory.
pub fn write_manifest<T: Serialize>(
    out: &mut Outputs,
    dir: &Path,
    command: &str,
    config: &T,
) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: "mitoscan",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    out.write_json(&dir.join(format!("manifest-{command}.json")), &manifest)
}

/// Five-stop linear colormap: black, green, yellow, red, white at
/// t = 0, 0.25, 0.5, 0.75, 1.
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
        [255.0, 255.0, 255.0],
    ];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (STOPS[i][c] + (STOPS[i + 1][c] - STOPS[i][c]) * f).round() as u8;
    }
    rgb
}

/// Compact decimal used in render filenames: up to 4 fractional digits,
/// trailing zeros trimmed.
pub fn compact_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}
