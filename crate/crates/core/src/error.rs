use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map one-to-one to the failure modes of
/// the ingestion, raster and evaluation operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },
    #[error("invalid field `{field}` on slide `{slide_id}`: {detail}")]
    InvalidField {
        slide_id: String,
        field: String,
        detail: String,
    },
    #[error("duplicate slide_id `{0}`")]
    DuplicateSlide(String),
    #[error("row {row}: unknown slide_id `{slide_id}`")]
    UnknownSlide { row: usize, slide_id: String },
    #[error("row {row}: point ({x}, {y}) outside slide `{slide_id}` bounds")]
    OutOfBounds {
        row: usize,
        slide_id: String,
        x: f64,
        y: f64,
    },
    #[error("row {row}: malformed annotation row: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("kernel {kernel_cols}x{kernel_rows} larger than grid {cols}x{rows}")]
    KernelTooLarge {
        kernel_cols: usize,
        kernel_rows: usize,
        cols: usize,
        rows: usize,
    },
    #[error("no valid region: the valid mask has no set center")]
    NoValidRegion,
    #[error("grid values outside the expected range: {0}")]
    InvalidRange(String),
    #[error("malformed raster header {path}: {detail}")]
    MalformedHeader { path: String, detail: String },
    #[error("raster payload {path}: expected {expected} bytes, found {found}")]
    PayloadSizeMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("unsupported raster version {0}")]
    UnsupportedVersion(u32),
    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid estimator parameter: {0}")]
    InvalidParam(String),
    #[error("degenerate variance: correlation undefined")]
    DegenerateVariance,
    #[error("degenerate marginals: expected agreement is 1, kappa undefined")]
    DegenerateMarginals,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("patch group unsatisfiable on slide `{slide_id}`: {detail}")]
    GroupUnsatisfiable { slide_id: String, detail: String },
    #[error("selection rect out of slide bounds on `{0}`")]
    RectOutOfBounds(String),
    #[error("unsatisfiable after {attempts} attempts: {detail}")]
    Unsatisfiable { attempts: u32, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
