//! Subcommand definitions and wiring onto the library pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mitoscan::estimator::{EstimatorKind, EstimatorSpec};
use mitoscan::evaluation::{build_reports, write_report_csv, EvalConfig};
use mitoscan::gt::gt_mc_map;
use mitoscan::mask::{morph_close, tissue_from_thumbnail, valid_mask, write_mask_pgm, BinaryMask, MaskSemantics};
use mitoscan::model::{
    foi_shape, load_annotations, load_slide_meta, write_annotations, write_slide_meta,
    GradingScheme, SlideRegistry,
};
use mitoscan::raster::{moving_window, read_raster};
use mitoscan::select::{read_foi_list, select_foi, top_k_foi, write_foi_list};
use mitoscan::synth::{synth_case, SynthCase, SynthParams};
use mitoscan::target::{patch_target, sample_patches, write_patch_targets, PatchGroup};
use mitoscan::{Error, WindowMode};

use crate::output::{colormap, compact_num, write_manifest, Outputs};
use crate::CliError;

#[derive(Parser)]
#[command(name = "mitoscan", version, about = "Mitotic hotspot (10-HPF FOI) selection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic slides (tissue thumbnails + clustered annotations)
    Synth(SynthArgs),
    /// Compute ground-truth mitotic-count maps
    Gtmap(GtmapArgs),
    /// Derive tissue and valid-center masks from a thumbnail
    Mask(MaskArgs),
    /// Select the FOI from a density grid and a valid mask
    Select(SelectArgs),
    /// Sample training patches and compute regression targets
    Targets(TargetsArgs),
    /// Evaluate selections and estimators against ground truth
    Evaluate(EvaluateArgs),
    /// Render a density grid to a heatmap PNG
    Render(RenderArgs),
}

#[derive(Args, Serialize, Clone)]
struct FoiArgs {
    /// FOI area in mm² (10 high-power fields)
    #[arg(long, default_value_t = 2.37)]
    area: f64,
    /// FOI aspect ratio, e.g. 4:3
    #[arg(long, default_value = "4:3")]
    aspect: String,
}

impl FoiArgs {
    fn parse_aspect(&self) -> Result<(u32, u32), CliError> {
        let mut it = self.aspect.split(':');
        let parse = |s: Option<&str>| -> Option<u32> { s?.parse().ok().filter(|&v| v > 0) };
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(w), Some(h), None) => Ok((w, h)),
            _ => Err(CliError::Usage(format!(
                "aspect must be W:H with positive integers, got {:?}",
                self.aspect
            ))),
        }
    }

    fn shape(&self, mpp: f64) -> Result<mitoscan::FoiShape, CliError> {
        let (aw, ah) = self.parse_aspect()?;
        Ok(foi_shape(self.area, aw, ah, mpp)?)
    }
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of cases to generate
    #[arg(long, default_value_t = 1)]
    cases: u32,
    /// Worker threads for case generation
    #[arg(long, default_value_t = 1)]
    jobs: u32,
    #[arg(long, default_value_t = 40_000)]
    width: u32,
    #[arg(long, default_value_t = 30_000)]
    height: u32,
    #[arg(long, default_value_t = 0.25)]
    mpp: f64,
    #[arg(long, default_value_t = 128)]
    downsample: u32,
    #[arg(long, default_value_t = 5)]
    blobs: u32,
    #[arg(long, default_value_t = 0.4)]
    parents_per_mm2: f64,
    #[arg(long, default_value_t = 8.0)]
    offspring_mean: f64,
    #[arg(long, default_value_t = 40.0)]
    offspring_sigma_um: f64,
    #[arg(long, default_value_t = 8.0)]
    hotspot_boost: f64,
    #[arg(long, default_value_t = 2.0)]
    hard_negatives_per_mm2: f64,
}

#[derive(Args, Serialize)]
struct GtmapArgs {
    /// Slide-meta JSON
    #[arg(long)]
    slides: PathBuf,
    /// Annotation CSV
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    downsample: u32,
    #[command(flatten)]
    foi: FoiArgs,
}

#[derive(Args, Serialize)]
struct MaskArgs {
    /// Thumbnail DRF (grayscale, 1 = bright glass)
    #[arg(long)]
    thumbnail: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Closing structuring-element radius in bins
    #[arg(long, default_value_t = 3)]
    closing: u32,
    #[arg(long, default_value_t = 0.95)]
    coverage: f64,
    #[arg(long, default_value_t = 0.25)]
    mpp: f64,
    /// Also write the valid mask as a PGM image
    #[arg(long)]
    pgm: bool,
    #[command(flatten)]
    foi: FoiArgs,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    /// Density grid DRF (bin-level estimate or counts)
    #[arg(long)]
    density: PathBuf,
    /// Valid-mask DRF
    #[arg(long)]
    mask: PathBuf,
    /// Output FOI list JSON
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    mpp: f64,
    /// Number of non-overlapping FOIs to select
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value = "argmax")]
    selector_id: String,
    #[command(flatten)]
    foi: FoiArgs,
}

#[derive(Args, Serialize)]
struct TargetsArgs {
    #[arg(long)]
    slides: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    slide_id: String,
    /// Thumbnail DRF for tissue placement of random patches
    #[arg(long)]
    thumbnail: PathBuf,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Patches per sampling group
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 512.0)]
    patch_width: f64,
    #[arg(long, default_value_t = 512.0)]
    patch_height: f64,
    /// Border-band diameter d in px
    #[arg(long, default_value_t = 50.0)]
    diameter: f64,
    /// Target normalization constant
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    slides: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Directory holding per-slide thumbnails (<slide_id>.thumb.json)
    #[arg(long)]
    thumbs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// External FOI list JSON (e.g. rater selections)
    #[arg(long)]
    selections: Option<PathBuf>,
    /// Estimator spec JSON (array); defaults to a single oracle
    #[arg(long)]
    estimators: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    downsample: u32,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value_t = 3)]
    closing: u32,
    #[arg(long, default_value_t = 0.95)]
    coverage: f64,
    /// High-grade mitotic-count threshold
    #[arg(long, default_value_t = 7)]
    grading_threshold: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    foi: FoiArgs,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    /// Input grid DRF
    #[arg(long)]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = Outputs::new();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a, &mut out),
        Command::Gtmap(a) => cmd_gtmap(&a, &mut out),
        Command::Mask(a) => cmd_mask(&a, &mut out),
        Command::Select(a) => cmd_select(&a, &mut out),
        Command::Targets(a) => cmd_targets(&a, &mut out),
        Command::Evaluate(a) => cmd_evaluate(&a, &mut out),
        Command::Render(a) => cmd_render(&a, &mut out),
    };
    if result.is_err() {
        out.discard_all();
    }
    result
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if p.as_os_str().is_empty() => PathBuf::from("."),
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("."),
    }
}

fn synth_params(a: &SynthArgs) -> SynthParams {
    SynthParams {
        width_px: a.width,
        height_px: a.height,
        mpp: a.mpp,
        downsample: a.downsample,
        tissue_blob_count: a.blobs,
        parent_per_mm2: a.parents_per_mm2,
        offspring_mean: a.offspring_mean,
        offspring_sigma_um: a.offspring_sigma_um,
        hotspot_boost: a.hotspot_boost,
        hard_negative_per_mm2: a.hard_negatives_per_mm2,
        seed: a.seed,
        ..SynthParams::default()
    }
}

fn cmd_synth(a: &SynthArgs, out: &mut Outputs) -> Result<(), CliError> {
    ensure_dir(&a.out)?;
    write_manifest(out, &a.out, "synth", a)?;
    let params = synth_params(a);
    params.validate()?;

    let jobs = a.jobs.clamp(1, a.cases.max(1)) as usize;
    let indices: Vec<u32> = (0..a.cases).collect();
    let mut cases: Vec<(u32, SynthCase)> = std::thread::scope(|s| {
        let chunks: Vec<_> = indices
            .chunks(indices.len().div_ceil(jobs).max(1))
            .map(|chunk| {
                let params = &params;
                s.spawn(move || -> mitoscan::Result<Vec<(u32, SynthCase)>> {
                    chunk
                        .iter()
                        .map(|&i| {
                            let id = format!("synth_{i:03}");
                            synth_case(params, &id, params.seed.wrapping_add(i as u64))
                                .map(|c| (i, c))
                        })
                        .collect()
                })
            })
            .collect();
        chunks
            .into_iter()
            .map(|h| h.join().expect("synth worker panicked"))
            .collect::<mitoscan::Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;
    cases.sort_by_key(|(i, _)| *i);

    let registry = SlideRegistry::new(cases.iter().map(|(_, c)| c.meta.clone()).collect())?;
    out.write_with(&a.out.join("slides.json"), |p| write_slide_meta(&registry, p))?;
    for (_, case) in &cases {
        let id = &case.meta.slide_id;
        out.write_with(&a.out.join(format!("{id}.csv")), |p| {
            write_annotations([&case.set], p)
        })?;
        out.write_drf(&a.out.join(format!("{id}.thumb.json")), &case.thumbnail)?;
        out.write_json(&a.out.join(format!("{id}.planted.json")), &case.planted)?;
    }
    Ok(())
}

fn cmd_gtmap(a: &GtmapArgs, out: &mut Outputs) -> Result<(), CliError> {
    a.foi.parse_aspect()?;
    ensure_dir(&a.out)?;
    write_manifest(out, &a.out, "gtmap", a)?;
    let registry = load_slide_meta(&a.slides)?;
    let sets = load_annotations(&a.annotations, &registry)?;
    for (id, set) in &sets {
        let shape = a.foi.shape(set.slide.mpp)?;
        let map = gt_mc_map(set, &shape, a.downsample)?;
        out.write_drf(&a.out.join(format!("{id}.gtmc.json")), &map)?;
    }
    Ok(())
}

fn cmd_mask(a: &MaskArgs, out: &mut Outputs) -> Result<(), CliError> {
    let shape = a.foi.shape(a.mpp)?;
    ensure_dir(&a.out)?;
    write_manifest(out, &a.out, "mask", a)?;
    let thumb = read_raster(&a.thumbnail)?;
    let id = thumb.slide_id.clone();
    let tissue = morph_close(&tissue_from_thumbnail(&thumb, a.threshold)?, a.closing);
    let (kc, kr) = shape.kernel_bins(thumb.downsample);
    let valid = valid_mask(&tissue, kc, kr, a.coverage)?;
    out.write_drf(&a.out.join(format!("{id}.tissue.json")), &tissue.grid)?;
    out.write_drf(&a.out.join(format!("{id}.valid.json")), &valid.grid)?;
    if a.pgm {
        out.write_with(&a.out.join(format!("{id}.valid.pgm")), |p| {
            write_mask_pgm(&valid, p)
        })?;
    }
    Ok(())
}

fn cmd_select(a: &SelectArgs, out: &mut Outputs) -> Result<(), CliError> {
    let shape = a.foi.shape(a.mpp)?;
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    write_manifest(out, &dir, "select", a)?;
    let density = read_raster(&a.density)?;
    let mask_grid = read_raster(&a.mask)?;
    let valid = BinaryMask::new(mask_grid, MaskSemantics::Valid)?;
    let (kc, kr) = shape.kernel_bins(density.downsample);
    let ma = moving_window(&density, kc, kr, WindowMode::Sum)?;
    let selections = if a.k == 1 {
        vec![select_foi(&ma, &valid, &shape, density.downsample, &a.selector_id)?]
    } else {
        top_k_foi(&ma, &valid, &shape, density.downsample, &a.selector_id, a.k)?
    };
    out.write_with(&a.out, |p| write_foi_list(&selections, p))?;
    Ok(())
}

fn cmd_targets(a: &TargetsArgs, out: &mut Outputs) -> Result<(), CliError> {
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    write_manifest(out, &dir, "targets", a)?;
    let registry = load_slide_meta(&a.slides)?;
    let sets = load_annotations(&a.annotations, &registry)?;
    let set = sets.get(&a.slide_id).ok_or_else(|| Error::UnknownSlide {
        row: 0,
        slide_id: a.slide_id.clone(),
    })?;
    let thumb = read_raster(&a.thumbnail)?;
    let tissue = tissue_from_thumbnail(&thumb, a.threshold)?;
    let mut targets = Vec::new();
    for group in [PatchGroup::WithMitosis, PatchGroup::WithHardNegative, PatchGroup::Random] {
        let patches = sample_patches(
            set,
            &tissue,
            group,
            a.n,
            (a.patch_width, a.patch_height),
            a.seed,
        )?;
        for patch in patches {
            let mut t = patch_target(set, &patch.rect_px, a.diameter, a.beta)?;
            t.patch = patch;
            targets.push(t);
        }
    }
    out.write_with(&a.out, |p| write_patch_targets(&targets, p))?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (aw, ah) = a.foi.parse_aspect()?;
    ensure_dir(&a.out)?;
    write_manifest(out, &a.out, "evaluate", a)?;
    let registry = load_slide_meta(&a.slides)?;
    let sets = load_annotations(&a.annotations, &registry)?;
    let mut thumbnails = BTreeMap::new();
    for id in sets.keys() {
        let path = a.thumbs.join(format!("{id}.thumb.json"));
        thumbnails.insert(id.clone(), read_raster(&path)?);
    }
    let selections = match &a.selections {
        Some(p) => read_foi_list(p)?,
        None => Vec::new(),
    };
    let estimators: Vec<EstimatorSpec> = match &a.estimators {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Data(Error::MalformedFile {
                    path: p.display().to_string(),
                    detail: e.to_string(),
                })
            })?
        }
        None => vec![EstimatorSpec { id: "oracle".into(), kind: EstimatorKind::Oracle }],
    };
    let config = EvalConfig {
        downsample: a.downsample,
        foi_area_mm2: a.foi.area,
        aspect_w: aw,
        aspect_h: ah,
        tissue_threshold: a.threshold,
        closing_radius_bins: a.closing,
        coverage: a.coverage,
        grading_threshold: a.grading_threshold,
        schemes: vec![GradingScheme::Kiupel, GradingScheme::ElstonEllis],
        seed: a.seed,
    };
    let (reports, summary) = build_reports(
        &registry,
        &sets,
        &thumbnails,
        &selections,
        &estimators,
        &config,
    )?;
    for report in &reports {
        out.write_json(&a.out.join(format!("{}.report.json", report.slide_id)), report)?;
    }
    out.write_json(&a.out.join("summary.json"), &summary)?;
    out.write_with(&a.out.join("report.csv"), |p| write_report_csv(&reports, p))?;
    Ok(())
}

fn cmd_render(a: &RenderArgs, out: &mut Outputs) -> Result<(), CliError> {
    ensure_dir(&a.out)?;
    write_manifest(out, &a.out, "render", a)?;
    let grid = read_raster(&a.input)?;
    let values = grid.values();
    let min = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let range = max - min;
    let mut img = image::RgbImage::new(grid.cols as u32, grid.rows as u32);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let v = grid.get(r, c) as f64;
            let t = if range > 0.0 { (v - min) / range } else { 0.0 };
            img.put_pixel(c as u32, r as u32, image::Rgb(colormap(t)));
        }
    }
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("grid");
    // min-max normalization range goes into the filename so renders with
    // different scales stay distinguishable
    let name = format!("{stem}.{}-{}.png", compact_num(min), compact_num(max));
    let mut bytes = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut bytes),
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| CliError::Internal(e.to_string()))?;
    out.write_bytes(&a.out.join(name), &bytes)?;
    Ok(())
}
