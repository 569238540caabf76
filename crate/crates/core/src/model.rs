//! Domain types shared by the whole pipeline: slide metadata, annotation
//! sets, the 10-HPF field-of-interest geometry and tumor grading schemes.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identity and geometry of one whole slide; anchor for all unit conversions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    /// Scan resolution in microns per pixel (0.25 for the reference scanner).
    #[serde(default = "default_mpp")]
    pub mpp: f64,
}

fn default_mpp() -> f64 {
    0.25
}

impl SlideMeta {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, detail: String| Error::InvalidField {
            slide_id: self.slide_id.clone(),
            field: field.to_string(),
            detail,
        };
        if self.width_px == 0 {
            return Err(err("width_px", "must be >= 1".into()));
        }
        if self.height_px == 0 {
            return Err(err("height_px", "must be >= 1".into()));
        }
        if !(self.mpp.is_finite() && self.mpp > 0.0) {
            return Err(err("mpp", format!("must be finite and positive, got {}", self.mpp)));
        }
        Ok(())
    }

    /// Slide area in mm² at full resolution.
    pub fn area_mm2(&self) -> f64 {
        let px_mm = self.mpp * 1e-3;
        self.width_px as f64 * self.height_px as f64 * px_mm * px_mm
    }
}

/// Annotation class: a mitotic figure, or a mitosis-like distractor cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mitosis,
    HardNegative,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Mitosis => "mitosis",
            Label::HardNegative => "hard_negative",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "mitosis" => Some(Label::Mitosis),
            "hard_negative" => Some(Label::HardNegative),
            _ => None,
        }
    }
}

/// One labeled cell-center point in full-resolution pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub x_px: f64,
    pub y_px: f64,
    pub label: Label,
}

/// All annotations of one slide, in canonical (y, x, label) order.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub slide: SlideMeta,
    annotations: Vec<Annotation>,
}

impl AnnotationSet {
    /// Builds a set, sorting into the canonical order. Coordinates must lie
    /// inside the half-open slide bounds [0, width) x [0, height).
    pub fn new(slide: SlideMeta, mut annotations: Vec<Annotation>) -> Result<Self> {
        for a in &annotations {
            if !(a.x_px >= 0.0 && a.x_px < slide.width_px as f64)
                || !(a.y_px >= 0.0 && a.y_px < slide.height_px as f64)
            {
                return Err(Error::OutOfBounds {
                    row: 0,
                    slide_id: slide.slide_id.clone(),
                    x: a.x_px,
                    y: a.y_px,
                });
            }
        }
        sort_canonical(&mut annotations);
        Ok(AnnotationSet { slide, annotations })
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn iter_label(&self, label: Label) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.label == label)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.iter_label(label).count()
    }
}

fn sort_canonical(annotations: &mut [Annotation]) {
    annotations.sort_by(|a, b| {
        a.y_px
            .total_cmp(&b.y_px)
            .then(a.x_px.total_cmp(&b.x_px))
            .then(a.label.cmp(&b.label))
    });
}

/// Ordered slide registry with unique ids.
#[derive(Debug, Clone, Default)]
pub struct SlideRegistry {
    slides: Vec<SlideMeta>,
}

impl SlideRegistry {
    pub fn new(slides: Vec<SlideMeta>) -> Result<Self> {
        let mut reg = SlideRegistry::default();
        for s in slides {
            reg.insert(s)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, slide: SlideMeta) -> Result<()> {
        slide.validate()?;
        if self.get(&slide.slide_id).is_some() {
            return Err(Error::DuplicateSlide(slide.slide_id));
        }
        self.slides.push(slide);
        Ok(())
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlideMeta> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn slides(&self) -> &[SlideMeta] {
        &self.slides
    }

    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }
}

/// Loads the slide-meta JSON file (array of objects) into a registry.
pub fn load_slide_meta(path: impl AsRef<Path>) -> Result<SlideRegistry> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let slides: Vec<SlideMeta> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    SlideRegistry::new(slides)
}

pub fn write_slide_meta(registry: &SlideRegistry, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, registry.slides())?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Loads the annotation CSV (`slide_id,x_px,y_px,label`) and groups rows per
/// slide. Every referenced slide must exist in the registry; coordinates are
/// checked against the half-open slide bounds. Row numbers in errors count
/// data rows starting at 1 (the header is row 0).
pub fn load_annotations(
    path: impl AsRef<Path>,
    registry: &SlideRegistry,
) -> Result<BTreeMap<String, AnnotationSet>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let expected = ["slide_id", "x_px", "y_px", "label"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("expected header `slide_id,x_px,y_px,label`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }

    let mut per_slide: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            detail: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::MalformedRow {
                row,
                detail: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let slide_id = record[0].to_string();
        let slide = registry.get(&slide_id).ok_or(Error::UnknownSlide {
            row,
            slide_id: slide_id.clone(),
        })?;
        let parse = |s: &str, name: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
                row,
                detail: format!("cannot parse {name} `{s}`"),
            })
        };
        let x = parse(&record[1], "x_px")?;
        let y = parse(&record[2], "y_px")?;
        let label = Label::parse(&record[3]).ok_or(Error::UnknownLabel {
            row,
            label: record[3].to_string(),
        })?;
        if !(x >= 0.0 && x < slide.width_px as f64) || !(y >= 0.0 && y < slide.height_px as f64) {
            return Err(Error::OutOfBounds {
                row,
                slide_id,
                x,
                y,
            });
        }
        per_slide
            .entry(slide_id)
            .or_default()
            .push(Annotation { x_px: x, y_px: y, label });
    }

    let mut out = BTreeMap::new();
    for (slide_id, anns) in per_slide {
        let slide = registry.get(&slide_id).unwrap().clone();
        out.insert(slide_id, AnnotationSet::new(slide, anns)?);
    }
    Ok(out)
}

/// Writes annotation sets back to the CSV format. Coordinates are printed as
/// decimal text with up to 2 fractional digits and no trailing zeros, so a
/// write/load round trip is bit-exact for coordinates on the 0.01 px lattice.
pub fn write_annotations<'a>(
    sets: impl IntoIterator<Item = &'a AnnotationSet>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "slide_id,x_px,y_px,label")?;
    for set in sets {
        for a in set.annotations() {
            writeln!(
                w,
                "{},{},{},{}",
                set.slide.slide_id,
                format_coord(a.x_px),
                format_coord(a.y_px),
                a.label.as_str()
            )?;
        }
    }
    Ok(())
}

fn format_coord(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

/// An axis-aligned rectangle in full-resolution pixels, half-open on the
/// right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectPx {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl RectPx {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        RectPx { left, top, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        RectPx {
            left: cx - width / 2.0,
            top: cy - height / 2.0,
            width,
            height,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left && x < self.left + self.width && y >= self.top && y < self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn intersection_area(&self, other: &RectPx) -> f64 {
        let w = (self.left + self.width).min(other.left + other.width) - self.left.max(other.left);
        let h = (self.top + self.height).min(other.top + other.height) - self.top.max(other.top);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn inside_slide(&self, slide: &SlideMeta) -> bool {
        self.left >= 0.0
            && self.top >= 0.0
            && self.left + self.width <= slide.width_px as f64
            && self.top + self.height <= slide.height_px as f64
    }
}

/// The 10-HPF field-of-interest rectangle geometry at a given resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoiShape {
    pub area_mm2: f64,
    pub aspect_w: u32,
    pub aspect_h: u32,
    pub mpp: f64,
    pub width_px: u32,
    pub height_px: u32,
}

/// Derives pixel dimensions for an FOI of the given area and aspect ratio.
///
/// `width_mm = sqrt(area * aspect_w / aspect_h)` and vice versa; pixel
/// dimensions are rounded half away from zero. The standard 10-HPF field
/// (2.37 mm², 4:3) at 0.25 µm/px comes out as 7111 x 5333 px.
pub fn foi_shape(area_mm2: f64, aspect_w: u32, aspect_h: u32, mpp: f64) -> Result<FoiShape> {
    if !(area_mm2.is_finite() && area_mm2 > 0.0) {
        return Err(Error::InvalidArgument(format!("area_mm2 must be > 0, got {area_mm2}")));
    }
    if aspect_w == 0 || aspect_h == 0 {
        return Err(Error::InvalidArgument("aspect ratio terms must be >= 1".into()));
    }
    if !(mpp.is_finite() && mpp > 0.0) {
        return Err(Error::InvalidArgument(format!("mpp must be > 0, got {mpp}")));
    }
    let width_mm = (area_mm2 * aspect_w as f64 / aspect_h as f64).sqrt();
    let height_mm = (area_mm2 * aspect_h as f64 / aspect_w as f64).sqrt();
    let width_px = (width_mm * 1000.0 / mpp).round() as u32;
    let height_px = (height_mm * 1000.0 / mpp).round() as u32;
    Ok(FoiShape {
        area_mm2,
        aspect_w,
        aspect_h,
        mpp,
        width_px,
        height_px,
    })
}

impl FoiShape {
    /// Recovered area from the rounded pixel dimensions, in mm².
    pub fn pixel_area_mm2(&self) -> f64 {
        let px_mm = self.mpp * 1e-3;
        self.width_px as f64 * self.height_px as f64 * px_mm * px_mm
    }

    /// Kernel extent in grid bins at a given downsample, per axis,
    /// rounded half up.
    pub fn kernel_bins(&self, downsample: u32) -> (usize, usize) {
        let d = downsample as f64;
        let kc = (self.width_px as f64 / d).round().max(1.0) as usize;
        let kr = (self.height_px as f64 / d).round().max(1.0) as usize;
        (kc, kr)
    }
}

/// Mitotic-count grading scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradingScheme {
    /// High grade at MC >= 7 per 10 HPF.
    Kiupel,
    /// Low 0-9, moderate 10-19, high >= 20.
    ElstonEllis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grade {
    Low,
    Moderate,
    High,
}

/// Maps a mitotic count to a grade. Total over all non-negative counts.
pub fn grade(mc: u32, scheme: GradingScheme) -> Grade {
    match scheme {
        GradingScheme::Kiupel => {
            if mc >= 7 {
                Grade::High
            } else {
                Grade::Low
            }
        }
        GradingScheme::ElstonEllis => {
            if mc >= 20 {
                Grade::High
            } else if mc >= 10 {
                Grade::Moderate
            } else {
                Grade::Low
            }
        }
    }
}
