//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines for passing criteria too.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mitoscan::estimator::{estimate, EstimatorKind, EstimatorSpec};
use mitoscan::evaluation::{cohen_kappa, fleiss_kappa, pearson, wilson_interval};
use mitoscan::gt::{classify_case, count_in_rect, exact_max_window, gt_mc_map, CaseGroup, McDistribution};
use mitoscan::mask::{morph_close, valid_mask, BinaryMask, MaskSemantics};
use mitoscan::model::{
    foi_shape, grade, Annotation, AnnotationSet, FoiShape, Grade, GradingScheme, Label, RectPx,
    SlideMeta,
};
use mitoscan::raster::{bin_points, moving_window, GridKind, WindowMode};
use mitoscan::select::select_foi;
use mitoscan::synth::{synth_case, SynthParams};
use mitoscan::target::patch_target;
use mitoscan::{DensityGrid, Error};

fn report(n: u32, name: &str, ok: bool) {
    println!("criterion {n} ({name}): {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed");
}

fn slide(id: &str, w: u32, h: u32) -> SlideMeta {
    SlideMeta { slide_id: id.into(), width_px: w, height_px: h, mpp: 0.25 }
}

fn default_shape() -> FoiShape {
    foi_shape(2.37, 4, 3, 0.25).unwrap()
}

#[test]
fn criterion_01_foi_geometry() {
    let shape = default_shape();
    let exact = shape.width_px == 7111 && shape.height_px == 5333;
    let rel_err = (shape.pixel_area_mm2() - 2.37).abs() / 2.37;
    report(1, "FOI geometry", exact && rel_err < 1e-3);
}

#[test]
fn criterion_02_sat_moving_window_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x02);
    let mut ok = true;
    for case in 0..500 {
        let cols = rng.random_range(1..=256usize);
        let rows = rng.random_range(1..=256usize);
        let kc = rng.random_range(1..=cols.min(24));
        let kr = rng.random_range(1..=rows.min(24));
        let integer_grid = case % 2 == 0;
        let mut g = DensityGrid::zeroed("s", 64, cols, rows, GridKind::Estimate);
        for v in g.values_mut() {
            *v = if integer_grid {
                rng.random_range(0..20) as f32
            } else {
                rng.random::<f32>() * 10.0
            };
        }
        let mode = if case % 4 < 2 { WindowMode::Sum } else { WindowMode::Mean };
        let fast = moving_window(&g, kc, kr, mode).unwrap();
        for r in 0..rows - kr + 1 {
            for c in 0..cols - kc + 1 {
                let mut s = 0.0f64;
                for dr in 0..kr {
                    for dc in 0..kc {
                        s += g.get(r + dr, c + dc) as f64;
                    }
                }
                if let WindowMode::Mean = mode {
                    s /= (kr * kc) as f64;
                }
                let got = fast.get(r, c) as f64;
                if integer_grid && matches!(mode, WindowMode::Sum) {
                    if got != s {
                        ok = false;
                    }
                } else {
                    let denom = s.abs().max(1.0);
                    if (got - s).abs() / denom > 1e-6 {
                        ok = false;
                    }
                }
            }
        }
    }
    report(2, "SAT/moving-window equivalence", ok);
}

fn brute_force_max_window(set: &AnnotationSet, w: f64, h: f64) -> usize {
    let pts: Vec<(f64, f64)> = set
        .iter_label(Label::Mitosis)
        .map(|a| (a.x_px, a.y_px))
        .collect();
    let mut best = 0;
    for &(xi, _) in &pts {
        for &(_, yj) in &pts {
            // closed window anchored so its right/bottom edges sit on a point
            let (a, b) = (xi - w, yj - h);
            let n = pts
                .iter()
                .filter(|&&(x, y)| x >= a && x <= a + w && y >= b && y <= b + h)
                .count();
            best = best.max(n);
        }
    }
    best
}

#[test]
fn criterion_03_exact_max_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x03);
    let meta = slide("s", 10_000, 8_000);
    let mut ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=200usize);
        // integer coordinates and dims keep the closed-window boundary
        // comparisons exact in f64, so oracle and sweep agree bitwise
        let mut anns = Vec::with_capacity(n);
        for _ in 0..n {
            anns.push(Annotation {
                x_px: rng.random_range(0..10_000) as f64,
                y_px: rng.random_range(0..8_000) as f64,
                label: Label::Mitosis,
            });
        }
        let set = AnnotationSet::new(meta.clone(), anns).unwrap();
        let w = rng.random_range(300..2000) as f64;
        let h = rng.random_range(300..2000) as f64;
        let (count, (ax, ay)) = exact_max_window(&set, w, h).unwrap();
        if count != brute_force_max_window(&set, w, h) {
            ok = false;
        }
        // the reported anchor must achieve the count (closed window)
        let achieved = set
            .iter_label(Label::Mitosis)
            .filter(|a| a.x_px >= ax && a.x_px <= ax + w && a.y_px >= ay && a.y_px <= ay + h)
            .count();
        if achieved != count {
            ok = false;
        }
    }
    report(3, "exact-max oracle", ok);
}

/// Euclidean distance from a point to the rectangle boundary.
fn dist_to_boundary(rect: &RectPx, x: f64, y: f64) -> f64 {
    let (l, t) = (rect.left, rect.top);
    let (r, b) = (rect.left + rect.width, rect.top + rect.height);
    if x >= l && x < r && y >= t && y < b {
        (x - l).min(r - x).min(y - t).min(b - y)
    } else {
        let dx = (l - x).max(x - r).max(0.0);
        let dy = (t - y).max(y - b).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

#[test]
fn criterion_04_grid_vs_exact_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x04);
    let shape = default_shape();
    let d = 128u32;
    let band = d as f64 * std::f64::consts::SQRT_2;
    let mut violations = 0usize;
    for i in 0..50 {
        let w = rng.random_range(12_000..24_000u32);
        let h = rng.random_range(9_000..18_000u32);
        let meta = slide(&format!("s{i}"), w, h);
        let n = rng.random_range(200..=800usize);
        let mut anns = Vec::with_capacity(n);
        for _ in 0..n {
            anns.push(Annotation {
                x_px: rng.random::<f64>() * w as f64,
                y_px: rng.random::<f64>() * h as f64,
                label: Label::Mitosis,
            });
        }
        let set = AnnotationSet::new(meta, anns).unwrap();
        let map = gt_mc_map(&set, &shape, d).unwrap();
        let (kc, kr) = shape.kernel_bins(d);
        let pts: Vec<(f64, f64)> =
            set.iter_label(Label::Mitosis).map(|a| (a.x_px, a.y_px)).collect();
        for r in 0..map.rows {
            for c in 0..map.cols {
                let center_row = r + kr / 2;
                let center_col = c + kc / 2;
                let cx = (center_col as f64 + 0.5) * d as f64;
                let cy = (center_row as f64 + 0.5) * d as f64;
                let rect =
                    RectPx::from_center(cx, cy, shape.width_px as f64, shape.height_px as f64);
                let exact = count_in_rect(&set, &rect, Label::Mitosis) as f64;
                let grid_v = map.get(r, c) as f64;
                let band_count = pts
                    .iter()
                    .filter(|&&(x, y)| dist_to_boundary(&rect, x, y) <= band)
                    .count() as f64;
                if (grid_v - exact).abs() > band_count {
                    violations += 1;
                }
            }
        }
    }
    report(4, "grid-vs-exact bound", violations == 0);
}

#[test]
fn criterion_05_regression_target_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x05);
    let beta = 10.0;
    let meta = slide("s", 100_000, 100_000);
    let mut ok = true;
    for _ in 0..1000 {
        let w = rng.random_range(200.0..1000.0f64);
        let h = rng.random_range(200.0..1000.0f64);
        let diam = rng.random_range(1.0..(w.min(h) / 2.0));
        let origin_x = rng.random_range(2000.0..50_000.0f64);
        let origin_y = rng.random_range(2000.0..50_000.0f64);
        // points interior to the 2x2 block, ramps clear of the outer border
        let m = rng.random_range(1..=8usize);
        let margin = diam / 2.0 + 1e-3;
        let mut anns = Vec::with_capacity(m);
        for _ in 0..m {
            anns.push(Annotation {
                x_px: origin_x + margin + rng.random::<f64>() * (2.0 * w - 2.0 * margin),
                y_px: origin_y + margin + rng.random::<f64>() * (2.0 * h - 2.0 * margin),
                label: Label::Mitosis,
            });
        }
        let set = AnnotationSet::new(meta.clone(), anns).unwrap();
        let mut total = 0.0;
        for tr in 0..2 {
            for tc in 0..2 {
                let rect =
                    RectPx::new(origin_x + tc as f64 * w, origin_y + tr as f64 * h, w, h);
                total += beta * patch_target(&set, &rect, diam, beta).unwrap().c_value;
            }
        }
        if (total - m as f64).abs() > 1e-9 {
            ok = false;
        }
        // deep interior point contributes exactly 1/beta
        let interior = AnnotationSet::new(
            meta.clone(),
            vec![Annotation { x_px: origin_x + w / 2.0, y_px: origin_y + h / 2.0, label: Label::Mitosis }],
        )
        .unwrap();
        let rect = RectPx::new(origin_x, origin_y, w, h);
        let c_interior = patch_target(&interior, &rect, diam, beta).unwrap().c_value;
        if (c_interior - 0.1).abs() > 1e-12 {
            ok = false;
        }
        // point on an edge center contributes half
        let edge = AnnotationSet::new(
            meta.clone(),
            vec![Annotation { x_px: origin_x + w, y_px: origin_y + h / 2.0, label: Label::Mitosis }],
        )
        .unwrap();
        let c_edge = patch_target(&edge, &rect, diam, beta).unwrap().c_value;
        if (c_edge - 0.05).abs() > 1e-12 {
            ok = false;
        }
    }
    report(5, "regression-target Eq. 1/2 properties", ok);
}

struct Pipeline {
    set: AnnotationSet,
    valid: BinaryMask,
    gt: DensityGrid,
    planted_parent: (f64, f64),
    tissue: BinaryMask,
}

fn run_synth_pipeline(params: &SynthParams, slide_id: &str, seed: u64) -> Option<Pipeline> {
    let case = synth_case(params, slide_id, seed).ok()?;
    let shape = default_shape();
    let (kc, kr) = shape.kernel_bins(params.downsample);
    let closed = morph_close(&case.tissue, 3);
    let valid = valid_mask(&closed, kc, kr, 0.95).ok()?;
    let gt = gt_mc_map(&case.set, &shape, params.downsample).ok()?;
    Some(Pipeline {
        set: case.set,
        valid,
        gt,
        planted_parent: (case.planted.parent_x_px, case.planted.parent_y_px),
        tissue: case.tissue,
    })
}

fn max_gt_over_valid(gt: &DensityGrid, valid: &BinaryMask, kc: usize, kr: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for r in 0..gt.rows {
        for c in 0..gt.cols {
            if valid.is_set(r + kr / 2, c + kc / 2) {
                let v = gt.get(r, c) as f64;
                if best.map_or(true, |b| v > b) {
                    best = Some(v);
                }
            }
        }
    }
    best
}

#[test]
fn criterion_06_pipeline_exactness() {
    let params = SynthParams::default();
    let shape = default_shape();
    let (kc, kr) = shape.kernel_bins(params.downsample);
    let oracle = EstimatorSpec { id: "oracle".into(), kind: EstimatorKind::Oracle };
    let mut ok = true;
    let mut checked = 0;
    for seed in 0..20u64 {
        let p = match run_synth_pipeline(&params, &format!("p{seed}"), seed) {
            Some(p) => p,
            None => continue,
        };
        let est = estimate(&oracle, &p.set, &p.tissue, params.downsample, seed).unwrap();
        let ma = moving_window(&est, kc, kr, WindowMode::Sum).unwrap();
        let sel = match select_foi(&ma, &p.valid, &shape, params.downsample, "oracle") {
            Ok(s) => s,
            Err(Error::NoValidRegion) => continue,
            Err(e) => panic!("{e}"),
        };
        checked += 1;
        let max_gt = max_gt_over_valid(&p.gt, &p.valid, kc, kr).unwrap();
        // exactness: the kernel-aligned rect at the selected center must
        // recount, point by point, the grid maximum
        let dd = params.downsample as f64;
        let center_col = (sel.center_px.0 / dd) as usize;
        let center_row = (sel.center_px.1 / dd) as usize;
        let aligned = RectPx::new(
            (center_col - kc / 2) as f64 * dd,
            (center_row - kr / 2) as f64 * dd,
            kc as f64 * dd,
            kr as f64 * dd,
        );
        if (count_in_rect(&p.set, &aligned, Label::Mitosis) as f64) < max_gt {
            ok = false;
        }
        let picked = count_in_rect(&p.set, &sel.rect_px, Label::Mitosis) as f64;
        let (exact_max, _) =
            exact_max_window(&p.set, shape.width_px as f64, shape.height_px as f64).unwrap();
        if picked < 0.9 * exact_max as f64 {
            ok = false;
        }
    }
    report(6, "pipeline exactness", ok && checked >= 18);
}

#[test]
fn criterion_07_planted_hotspot_recovery() {
    let params = SynthParams { hotspot_boost: 8.0, ..SynthParams::default() };
    let shape = default_shape();
    let (kc, kr) = shape.kernel_bins(params.downsample);
    let oracle = EstimatorSpec { id: "oracle".into(), kind: EstimatorKind::Oracle };
    let mut hits = 0;
    for seed in 0..50u64 {
        let Some(p) = run_synth_pipeline(&params, &format!("h{seed}"), 1000 + seed) else {
            continue;
        };
        let est = estimate(&oracle, &p.set, &p.tissue, params.downsample, seed).unwrap();
        let ma = moving_window(&est, kc, kr, WindowMode::Sum).unwrap();
        let Ok(sel) = select_foi(&ma, &p.valid, &shape, params.downsample, "oracle") else {
            continue;
        };
        let (px, py) = p.planted_parent;
        if sel.rect_px.contains(px, py) {
            hits += 1;
        }
    }
    println!("criterion 7: planted parent recovered in {hits}/50 seeds");
    report(7, "planted-hotspot recovery", hits >= 49);
}

/// Spearman rank correlation; ties get average ranks. Returns 0 for a
/// constant sequence.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0;
            for k in i..=j {
                out[idx[k]] = r;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        0.0
    } else {
        num / (dx * dy).sqrt()
    }
}

#[test]
fn criterion_08_noise_degradation_monotonicity() {
    let params = SynthParams::default();
    let shape = default_shape();
    let (kc, kr) = shape.kernel_bins(params.downsample);
    let sigmas = [0.0, 0.5, 1.0, 2.0, 4.0];
    let mut mean_pearson = Vec::new();
    let mut mean_ratio = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        let spec = EstimatorSpec {
            id: format!("noisy{si}"),
            kind: if sigma == 0.0 {
                EstimatorKind::Oracle
            } else {
                EstimatorKind::Noisy { sigma }
            },
        };
        let mut rs = Vec::new();
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let Some(p) = run_synth_pipeline(&params, &format!("n{seed}"), 2000 + seed) else {
                continue;
            };
            let est = estimate(&spec, &p.set, &p.tissue, params.downsample, seed).unwrap();
            let ma = moving_window(&est, kc, kr, WindowMode::Sum).unwrap();
            if let Ok(r) = pearson(&ma, &p.gt, &p.valid) {
                rs.push(r);
            }
            let Ok(sel) = select_foi(&ma, &p.valid, &shape, params.downsample, "e") else {
                continue;
            };
            let (exact_max, _) =
                exact_max_window(&p.set, shape.width_px as f64, shape.height_px as f64).unwrap();
            if exact_max > 0 {
                let picked = count_in_rect(&p.set, &sel.rect_px, Label::Mitosis) as f64;
                ratios.push(picked / exact_max as f64);
            }
        }
        mean_pearson.push(rs.iter().sum::<f64>() / rs.len() as f64);
        mean_ratio.push(ratios.iter().sum::<f64>() / ratios.len() as f64);
    }
    let rho_p = spearman(&sigmas, &mean_pearson);
    let rho_r = spearman(&sigmas, &mean_ratio);
    println!(
        "criterion 8: mean pearson {mean_pearson:.4?} (rho {rho_p:.3}), mean ratio {mean_ratio:.4?} (rho {rho_r:.3})"
    );
    report(8, "noise-degradation monotonicity", rho_p <= 0.0 && rho_r <= 0.0);
}

#[test]
fn criterion_09_statistics_desk_checks() {
    let mut ok = true;
    ok &= (cohen_kappa([[20, 5], [10, 15]]).unwrap() - 0.4).abs() <= 1e-9;
    let unanimous: Vec<Vec<bool>> = (0..10)
        .map(|i| vec![i % 2 == 0; 4])
        .collect();
    ok &= (fleiss_kappa(&unanimous).unwrap() - 1.0).abs() <= 1e-12;
    let (lo, hi) = wilson_interval(10, 10, 1.96);
    ok &= (lo - 0.722).abs() <= 1e-3 && (hi - 1.0).abs() <= 1e-3;
    ok &= grade(7, GradingScheme::Kiupel) == Grade::High;

    let dist = |values: &[u32]| {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let mut histogram = BTreeMap::new();
        for &v in &sorted {
            *histogram.entry(v).or_insert(0usize) += 1;
        }
        McDistribution {
            slide_id: "s".into(),
            sample_count: sorted.len(),
            max_mc: *sorted.last().unwrap(),
            p25: sorted[(sorted.len() + 3) / 4 - 1],
            p50: sorted[sorted.len() / 2],
            p75: sorted[3 * sorted.len() / 4],
            histogram,
        }
    };
    // no sample reaches the threshold
    ok &= classify_case(&dist(&[0, 1, 2, 6]), 7) == CaseGroup::ClearlyLow;
    // more than 75 % of samples at or above the threshold
    ok &= classify_case(&dist(&[7, 8, 9, 10, 3]), 7) == CaseGroup::ClearlyHigh;
    // reaches the threshold but not decisively
    ok &= classify_case(&dist(&[0, 1, 7, 8]), 7) == CaseGroup::Borderline;
    report(9, "statistics desk checks", ok);
}

#[test]
fn masks_have_expected_semantics() {
    // sanity anchor for the pipeline helpers used above
    let params = SynthParams::default();
    let case = synth_case(&params, "sanity", 7).unwrap();
    assert_eq!(case.tissue.semantics, MaskSemantics::Tissue);
    assert!(case.tissue.fraction_set() > 0.0);
    let est = bin_points(&case.set, Label::Mitosis, params.downsample);
    assert_eq!(
        est.values().iter().sum::<f32>() as usize,
        case.set.count_label(Label::Mitosis)
    );
}
