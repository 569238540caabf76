//! Selection and evaluation of the mitotically most active 10-HPF region
//! (field of interest, FOI) of a whole-slide tumor annotation set.
//!
//! The library works on annotation coordinates, slide thumbnails and
//! downsampled density grids; it never touches raw slide pixels. The main
//! pipeline is: bin annotated mitotic figures (or an estimator output) into
//! a grid, run a moving-window sum of 10-HPF extent over it, restrict to a
//! tissue-derived valid mask, and take the masked argmax as the FOI center.
//! Exact (grid-free) maximum-window counts, regression targets for
//! count-estimating models, inter-rater agreement statistics and a synthetic
//! clustered-slide generator round out the toolkit.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod gt;
pub mod mask;
pub mod model;
pub mod raster;
pub mod select;
pub mod synth;
pub mod target;

pub use error::{Error, Result};
pub use model::{
    foi_shape, grade, Annotation, AnnotationSet, FoiShape, Grade, GradingScheme, Label, RectPx,
    SlideMeta, SlideRegistry,
};
pub use raster::{DensityGrid, GridKind, SummedAreaTable, WindowMode};
