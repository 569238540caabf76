//! Evaluation of region selections against ground truth: map correlation,
//! grade agreement statistics, achievement proportions with confidence
//! intervals, and per-case reporting.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimatorSpec};
use crate::gt::{classify_case, count_in_rect, gt_mc_map, mc_distribution, CaseGroup, McDistribution};
use crate::mask::{morph_close, tissue_from_thumbnail, valid_mask, BinaryMask};
use crate::model::{
    foi_shape, grade, AnnotationSet, Grade, GradingScheme, Label, RectPx, SlideRegistry,
};
use crate::raster::{moving_window, DensityGrid, WindowMode};
use crate::select::{select_foi, FoiSelection};

/// Sample Pearson correlation between two grids over the valid window
/// centers. Both grids must share geometry; the valid mask has full grid
/// geometry as produced by the mask pipeline.
pub fn pearson(a: &DensityGrid, b: &DensityGrid, valid: &BinaryMask) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::GeometryMismatch(format!(
            "pearson inputs {}x{} vs {}x{}",
            a.cols, a.rows, b.cols, b.rows
        )));
    }
    let full = &valid.grid;
    if a.cols > full.cols || a.rows > full.rows {
        return Err(Error::GeometryMismatch(format!(
            "grid {}x{} larger than mask {}x{}",
            a.cols, a.rows, full.cols, full.rows
        )));
    }
    let kc = full.cols - a.cols + 1;
    let kr = full.rows - a.rows + 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in 0..a.rows {
        for c in 0..a.cols {
            if valid.is_set(r + kr / 2, c + kc / 2) {
                xs.push(a.get(r, c) as f64);
                ys.push(b.get(r, c) as f64);
            }
        }
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::DegenerateVariance);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    assert!(n > 0 && successes <= n);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = p + z2 / (2.0 * nf);
    let radius = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    (
        ((center - radius) / denom).max(0.0),
        ((center + radius) / denom).min(1.0),
    )
}

/// Cohen's kappa from a 2x2 confusion table `[[a, b], [c, d]]` (rows: rater
/// one, columns: rater two).
pub fn cohen_kappa(table: [[usize; 2]; 2]) -> Result<f64> {
    let n: usize = table.iter().flatten().sum();
    if n == 0 {
        return Err(Error::EmptyInput("empty confusion table".into()));
    }
    let nf = n as f64;
    let po = (table[0][0] + table[1][1]) as f64 / nf;
    let row0 = (table[0][0] + table[0][1]) as f64;
    let row1 = (table[1][0] + table[1][1]) as f64;
    let col0 = (table[0][0] + table[1][0]) as f64;
    let col1 = (table[0][1] + table[1][1]) as f64;
    let pe = (row0 * col0 + row1 * col1) / (nf * nf);
    if (1.0 - pe).abs() < 1e-12 {
        return Err(Error::DegenerateMarginals);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Fleiss' kappa over a binary rating matrix: `ratings[case][rater]`.
/// Requires a complete matrix with at least 2 raters and 2 cases.
pub fn fleiss_kappa(ratings: &[Vec<bool>]) -> Result<f64> {
    let cases = ratings.len();
    if cases < 2 {
        return Err(Error::EmptyInput("Fleiss kappa needs >= 2 cases".into()));
    }
    let raters = ratings[0].len();
    if raters < 2 {
        return Err(Error::EmptyInput("Fleiss kappa needs >= 2 raters".into()));
    }
    if ratings.iter().any(|r| r.len() != raters) {
        return Err(Error::EmptyInput("incomplete rating matrix".into()));
    }
    let nf = raters as f64;
    let mut p_bar = 0.0;
    let mut cat_totals = [0.0f64; 2];
    for case in ratings {
        let pos = case.iter().filter(|&&b| b).count() as f64;
        let neg = nf - pos;
        cat_totals[0] += neg;
        cat_totals[1] += pos;
        p_bar += (pos * (pos - 1.0) + neg * (neg - 1.0)) / (nf * (nf - 1.0));
    }
    p_bar /= cases as f64;
    let total = cases as f64 * nf;
    let pe: f64 = cat_totals.iter().map(|&t| (t / total) * (t / total)).sum();
    if (1.0 - pe).abs() < 1e-12 {
        return Err(Error::DegenerateMarginals);
    }
    Ok((p_bar - pe) / (1.0 - pe))
}

/// One evaluated selection: the ground-truth MC inside its rect, grades,
/// and whether it reached the upper half / upper quartile of the slide's
/// MC distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub selector_id: String,
    pub rect_px: RectPx,
    pub gt_mc: u32,
    pub grades: BTreeMap<String, Grade>,
    pub achieved_upper_half: bool,
    pub achieved_upper_quartile: bool,
}

/// Scores one placed selection against the slide's ground truth. Both
/// achievement flags use inclusive comparisons against the distribution
/// percentiles.
pub fn evaluate_selection(
    set: &AnnotationSet,
    sel: &FoiSelection,
    dist: &McDistribution,
    schemes: &[GradingScheme],
) -> Result<SelectionRecord> {
    if !sel.rect_px.inside_slide(&set.slide) {
        return Err(Error::RectOutOfBounds(set.slide.slide_id.clone()));
    }
    let gt_mc = count_in_rect(set, &sel.rect_px, Label::Mitosis) as u32;
    let grades = schemes
        .iter()
        .map(|&s| (format!("{s:?}"), grade(gt_mc, s)))
        .collect();
    Ok(SelectionRecord {
        selector_id: sel.selector_id.clone(),
        rect_px: sel.rect_px,
        gt_mc,
        grades,
        achieved_upper_half: gt_mc >= dist.p50,
        achieved_upper_quartile: gt_mc >= dist.p75,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievementStats {
    pub cases: usize,
    pub proportion_upper_half: f64,
    pub proportion_upper_quartile: f64,
    pub ci95_upper_half: (f64, f64),
    pub ci95_upper_quartile: (f64, f64),
}

/// Proportions of achieved upper-half / upper-quartile selections with
/// Wilson 95 % intervals.
pub fn achievement_stats(records: &[&SelectionRecord]) -> Result<AchievementStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no selection records".into()));
    }
    let n = records.len();
    let half = records.iter().filter(|r| r.achieved_upper_half).count();
    let quart = records.iter().filter(|r| r.achieved_upper_quartile).count();
    Ok(AchievementStats {
        cases: n,
        proportion_upper_half: half as f64 / n as f64,
        proportion_upper_quartile: quart as f64 / n as f64,
        ci95_upper_half: wilson_interval(half, n, 1.96),
        ci95_upper_quartile: wilson_interval(quart, n, 1.96),
    })
}

/// Per-slide evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub slide_id: String,
    pub group: CaseGroup,
    pub gt_stats: McDistribution,
    pub selections: Vec<SelectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_selector: BTreeMap<String, AchievementStats>,
    pub per_estimator_pearson: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, Vec<String>>,
    pub warnings: Vec<String>,
}

/// Configuration of a full evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub downsample: u32,
    pub foi_area_mm2: f64,
    pub aspect_w: u32,
    pub aspect_h: u32,
    pub tissue_threshold: f64,
    pub closing_radius_bins: u32,
    pub coverage: f64,
    pub grading_threshold: u32,
    pub schemes: Vec<GradingScheme>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            downsample: 128,
            foi_area_mm2: 2.37,
            aspect_w: 4,
            aspect_h: 3,
            tissue_threshold: 0.8,
            closing_radius_bins: 3,
            coverage: 0.95,
            grading_threshold: 7,
            schemes: vec![GradingScheme::Kiupel, GradingScheme::ElstonEllis],
            seed: 0,
        }
    }
}

fn group_name(g: CaseGroup) -> &'static str {
    match g {
        CaseGroup::ClearlyLow => "ClearlyLow",
        CaseGroup::Borderline => "Borderline",
        CaseGroup::ClearlyHigh => "ClearlyHigh",
    }
}

/// Runs the full per-case evaluation: builds the tissue and valid masks,
/// the ground-truth MC map and distribution per slide, scores the external
/// selections and one pipeline selection per estimator spec, and aggregates
/// per-selector achievement statistics and per-estimator map correlations.
///
/// `thumbnails` maps slide ids to normalized grayscale thumbnail grids.
/// Errors from constituent operations are annotated with the slide id.
pub fn build_reports(
    registry: &SlideRegistry,
    annotations: &BTreeMap<String, AnnotationSet>,
    thumbnails: &BTreeMap<String, DensityGrid>,
    external_selections: &[FoiSelection],
    estimators: &[EstimatorSpec],
    config: &EvalConfig,
) -> Result<(Vec<CaseReport>, Summary)> {
    for sel in external_selections {
        if registry.get(&sel.slide_id).is_none() {
            return Err(Error::UnknownSlide {
                row: 0,
                slide_id: sel.slide_id.clone(),
            });
        }
    }

    let mut reports = Vec::new();
    let mut per_estimator_r: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut warnings = Vec::new();

    for slide in registry.slides() {
        let id = &slide.slide_id;
        let annotate = |e: Error| -> Error {
            Error::InvalidField {
                slide_id: id.clone(),
                field: "evaluation".into(),
                detail: e.to_string(),
            }
        };
        let set = match annotations.get(id) {
            Some(s) => s,
            None => {
                warnings.push(format!("slide {id}: no annotations, skipped"));
                continue;
            }
        };
        let thumb = thumbnails.get(id).ok_or_else(|| Error::InvalidField {
            slide_id: id.clone(),
            field: "thumbnail".into(),
            detail: "missing thumbnail grid".into(),
        })?;
        let tissue_raw = tissue_from_thumbnail(thumb, config.tissue_threshold).map_err(annotate)?;
        let tissue = morph_close(&tissue_raw, config.closing_radius_bins);
        let shape = foi_shape(config.foi_area_mm2, config.aspect_w, config.aspect_h, slide.mpp)
            .map_err(annotate)?;
        let (kc, kr) = shape.kernel_bins(config.downsample);
        let valid = valid_mask(&tissue, kc, kr, config.coverage).map_err(annotate)?;
        let gt_map = gt_mc_map(set, &shape, config.downsample).map_err(annotate)?;
        let dist = mc_distribution(&gt_map, &valid).map_err(annotate)?;
        let group = classify_case(&dist, config.grading_threshold);

        let mut selections = Vec::new();
        for sel in external_selections.iter().filter(|s| &s.slide_id == id) {
            selections.push(evaluate_selection(set, sel, &dist, &config.schemes)?);
        }
        for spec in estimators {
            let est = estimate(spec, set, &tissue, config.downsample, config.seed).map_err(annotate)?;
            let ma = moving_window(&est, kc, kr, WindowMode::Sum).map_err(annotate)?;
            match pearson(&gt_map, &ma, &valid) {
                Ok(r) => per_estimator_r.entry(spec.id.clone()).or_default().push(r),
                Err(Error::DegenerateVariance) => {
                    warnings.push(format!("slide {id}: degenerate variance for estimator {}", spec.id));
                }
                Err(e) => return Err(annotate(e)),
            }
            let sel = select_foi(&ma, &valid, &shape, config.downsample, &spec.id).map_err(annotate)?;
            selections.push(evaluate_selection(set, &sel, &dist, &config.schemes)?);
        }

        reports.push(CaseReport {
            slide_id: id.clone(),
            group,
            gt_stats: dist,
            selections,
        });
    }

    reports.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));

    let mut selector_ids: Vec<String> = reports
        .iter()
        .flat_map(|r| r.selections.iter().map(|s| s.selector_id.clone()))
        .collect();
    selector_ids.sort();
    selector_ids.dedup();

    let mut per_selector = BTreeMap::new();
    for sid in &selector_ids {
        let records: Vec<&SelectionRecord> = reports
            .iter()
            .flat_map(|r| r.selections.iter().filter(|s| &s.selector_id == sid))
            .collect();
        if records.is_empty() {
            warnings.push(format!("selector {sid}: no selections, omitted from aggregates"));
            continue;
        }
        per_selector.insert(sid.clone(), achievement_stats(&records)?);
    }

    let per_estimator_pearson = per_estimator_r
        .into_iter()
        .map(|(id, rs)| {
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            (id, mean)
        })
        .collect();

    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &reports {
        groups
            .entry(group_name(r.group).to_string())
            .or_default()
            .push(r.slide_id.clone());
    }

    Ok((
        reports,
        Summary {
            per_selector,
            per_estimator_pearson,
            groups,
            warnings,
        },
    ))
}

/// Flat CSV export (one row per selector x case) for external plotting.
pub fn write_report_csv(reports: &[CaseReport], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "slide_id,group,selector_id,gt_mc,p25,p50,p75,max_mc,achieved_upper_half,achieved_upper_quartile"
    )?;
    for r in reports {
        for s in &r.selections {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.slide_id,
                group_name(r.group),
                s.selector_id,
                s.gt_mc,
                r.gt_stats.p25,
                r.gt_stats.p50,
                r.gt_stats.p75,
                r.gt_stats.max_mc,
                s.achieved_upper_half,
                s.achieved_upper_quartile
            )?;
        }
    }
    Ok(())
}
