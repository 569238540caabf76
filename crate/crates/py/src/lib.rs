//! Python bindings for the FOI selection toolkit: FOI geometry, grids and
//! moving windows, exact maximum-window counts, regression targets,
//! agreement statistics, and a one-call hotspot selector.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mitoscan::gt::exact_max_window as core_exact_max_window;
use mitoscan::mask::{valid_mask, BinaryMask, MaskSemantics};
use mitoscan::model::{Annotation, AnnotationSet, Grade, GradingScheme, Label, RectPx, SlideMeta};
use mitoscan::raster::{bin_points, moving_window, DensityGrid, GridKind};
use mitoscan::select::select_foi;
use mitoscan::target::{gamma as core_gamma, patch_target as core_patch_target};
use mitoscan::WindowMode;

fn err(e: mitoscan::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn point_set(
    points: Vec<(f64, f64)>,
    slide_width: u32,
    slide_height: u32,
    mpp: f64,
) -> PyResult<AnnotationSet> {
    let meta = SlideMeta {
        slide_id: "py".to_string(),
        width_px: slide_width,
        height_px: slide_height,
        mpp,
    };
    let annotations = points
        .into_iter()
        .map(|(x, y)| Annotation { x_px: x, y_px: y, label: Label::Mitosis })
        .collect();
    AnnotationSet::new(meta, annotations).map_err(err)
}

/// 10-HPF field-of-interest geometry at a given resolution.
#[pyclass(name = "FoiShape", skip_from_py_object)]
#[derive(Clone)]
struct PyFoiShape {
    inner: mitoscan::FoiShape,
}

#[pymethods]
impl PyFoiShape {
    #[getter]
    fn width_px(&self) -> u32 {
        self.inner.width_px
    }

    #[getter]
    fn height_px(&self) -> u32 {
        self.inner.height_px
    }

    #[getter]
    fn mpp(&self) -> f64 {
        self.inner.mpp
    }

    fn pixel_area_mm2(&self) -> f64 {
        self.inner.pixel_area_mm2()
    }

    /// Moving-window kernel dims `(cols, rows)` at a grid downsample.
    fn kernel_bins(&self, downsample: u32) -> (usize, usize) {
        self.inner.kernel_bins(downsample)
    }

    fn __repr__(&self) -> String {
        format!(
            "FoiShape({}x{} px @ {} um/px)",
            self.inner.width_px, self.inner.height_px, self.inner.mpp
        )
    }
}

#[pyfunction]
#[pyo3(signature = (area_mm2=2.37, aspect_w=4, aspect_h=3, mpp=0.25))]
fn foi_shape(area_mm2: f64, aspect_w: u32, aspect_h: u32, mpp: f64) -> PyResult<PyFoiShape> {
    Ok(PyFoiShape {
        inner: mitoscan::foi_shape(area_mm2, aspect_w, aspect_h, mpp).map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (mc, scheme="kiupel"))]
fn grade(mc: u32, scheme: &str) -> PyResult<&'static str> {
    let scheme = match scheme {
        "kiupel" => GradingScheme::Kiupel,
        "elston" | "elston_ellis" => GradingScheme::ElstonEllis,
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    Ok(match mitoscan::grade(mc, scheme) {
        Grade::Low => "low",
        Grade::Moderate => "moderate",
        Grade::High => "high",
    })
}

/// Partial border weight of Eq. 2 (corrected piecewise reading).
#[pyfunction]
fn gamma(x: f64, d: f64) -> PyResult<f64> {
    core_gamma(x, d).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (successes, n, z=1.96))]
fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    mitoscan::evaluation::wilson_interval(successes, n, z)
}

#[pyfunction]
fn cohen_kappa(table: [[usize; 2]; 2]) -> PyResult<f64> {
    mitoscan::evaluation::cohen_kappa(table).map_err(err)
}

#[pyfunction]
fn fleiss_kappa(ratings: Vec<Vec<bool>>) -> PyResult<f64> {
    mitoscan::evaluation::fleiss_kappa(&ratings).map_err(err)
}

/// A downsampled row-major scalar field.
#[pyclass(name = "Grid", skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: DensityGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (slide_id, downsample, cols, rows, values, kind="Estimate"))]
    fn new(
        slide_id: &str,
        downsample: u32,
        cols: usize,
        rows: usize,
        values: Vec<f32>,
        kind: &str,
    ) -> PyResult<Self> {
        let kind = GridKind::parse(kind)
            .ok_or_else(|| PyValueError::new_err(format!("unknown grid kind {kind:?}")))?;
        let inner = DensityGrid::from_values(slide_id, downsample, cols, rows, kind, values)
            .map_err(err)?;
        Ok(PyGrid { inner })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn downsample(&self) -> u32 {
        self.inner.downsample
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f32> {
        if row >= self.inner.rows || col >= self.inner.cols {
            return Err(PyValueError::new_err(format!(
                "index ({row}, {col}) out of bounds for {}x{} grid",
                self.inner.rows, self.inner.cols
            )));
        }
        Ok(self.inner.get(row, col))
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    /// Moving-window sum or mean; output indexed by window top-left.
    #[pyo3(signature = (kernel_cols, kernel_rows, mode="sum"))]
    fn moving_window(&self, kernel_cols: usize, kernel_rows: usize, mode: &str) -> PyResult<PyGrid> {
        let mode = match mode {
            "sum" => WindowMode::Sum,
            "mean" => WindowMode::Mean,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        Ok(PyGrid {
            inner: moving_window(&self.inner, kernel_cols, kernel_rows, mode).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid({}x{} bins, D={}, kind={})",
            self.inner.rows,
            self.inner.cols,
            self.inner.downsample,
            self.inner.kind.as_str()
        )
    }
}

/// Bins points into grid cells of `downsample` px.
#[pyfunction]
#[pyo3(signature = (points, slide_width, slide_height, downsample=128, mpp=0.25))]
fn bin_points_grid(
    points: Vec<(f64, f64)>,
    slide_width: u32,
    slide_height: u32,
    downsample: u32,
    mpp: f64,
) -> PyResult<PyGrid> {
    let set = point_set(points, slide_width, slide_height, mpp)?;
    Ok(PyGrid { inner: bin_points(&set, Label::Mitosis, downsample) })
}

/// Exact maximum number of points covered by a closed `width x height`
/// window at any real-valued placement; returns `(count, (anchor_x, anchor_y))`.
#[pyfunction]
fn exact_max_window(
    points: Vec<(f64, f64)>,
    width: f64,
    height: f64,
    slide_width: u32,
    slide_height: u32,
) -> PyResult<(usize, (f64, f64))> {
    let set = point_set(points, slide_width, slide_height, 0.25)?;
    core_exact_max_window(&set, width, height).map_err(err)
}

/// Normalized mitotic-count regression target (Eq. 1) for one patch.
#[pyfunction]
#[pyo3(signature = (points, rect, slide_width, slide_height, diameter=50.0, beta=10.0))]
fn patch_target(
    points: Vec<(f64, f64)>,
    rect: (f64, f64, f64, f64),
    slide_width: u32,
    slide_height: u32,
    diameter: f64,
    beta: f64,
) -> PyResult<f64> {
    let set = point_set(points, slide_width, slide_height, 0.25)?;
    let rect = RectPx::new(rect.0, rect.1, rect.2, rect.3);
    Ok(core_patch_target(&set, &rect, diameter, beta).map_err(err)?.c_value)
}

/// One-call hotspot selection on a bare point set (whole slide treated as
/// tissue): bins the points, runs the 10-HPF moving window and returns the
/// argmax FOI as a dict.
#[pyfunction]
#[pyo3(signature = (points, slide_width, slide_height, mpp=0.25, downsample=128, area_mm2=2.37, aspect=(4, 3)))]
fn select_hotspot(
    py: Python<'_>,
    points: Vec<(f64, f64)>,
    slide_width: u32,
    slide_height: u32,
    mpp: f64,
    downsample: u32,
    area_mm2: f64,
    aspect: (u32, u32),
) -> PyResult<Py<PyDict>> {
    let set = point_set(points, slide_width, slide_height, mpp)?;
    let shape = mitoscan::foi_shape(area_mm2, aspect.0, aspect.1, mpp).map_err(err)?;
    let (kc, kr) = shape.kernel_bins(downsample);
    let counts = bin_points(&set, Label::Mitosis, downsample);
    let mut ones = DensityGrid::zeroed(&set.slide.slide_id, downsample, counts.cols, counts.rows, GridKind::Mask);
    for v in ones.values_mut() {
        *v = 1.0;
    }
    let tissue = BinaryMask::new(ones, MaskSemantics::Tissue).map_err(err)?;
    let valid = valid_mask(&tissue, kc, kr, 0.95).map_err(err)?;
    let ma = moving_window(&counts, kc, kr, WindowMode::Sum).map_err(err)?;
    let sel = select_foi(&ma, &valid, &shape, downsample, "argmax").map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("center", sel.center_px)?;
    let r = sel.rect_px;
    out.set_item("rect", (r.left, r.top, r.width, r.height))?;
    out.set_item("score", sel.score)?;
    Ok(out.into())
}

#[pymodule]
fn mitoscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFoiShape>()?;
    m.add_class::<PyGrid>()?;
    m.add_function(wrap_pyfunction!(foi_shape, m)?)?;
    m.add_function(wrap_pyfunction!(grade, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(bin_points_grid, m)?)?;
    m.add_function(wrap_pyfunction!(exact_max_window, m)?)?;
    m.add_function(wrap_pyfunction!(patch_target, m)?)?;
    m.add_function(wrap_pyfunction!(select_hotspot, m)?)?;
    Ok(())
}
