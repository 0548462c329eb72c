//! Metrics, decision-boundary export, embedding scatter, and the ablation
//! runner.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::datasets::DomainPair;
use crate::diffcore::DiffArray;
use crate::models::ModelBundle;
use crate::trainer::{fit, EpochReport, TrainConfig, TrainError, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("accuracy: length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("accuracy: empty input")]
    Empty,
    #[error("boundary grid requires 2-D inputs, got dim {0}")]
    NotPlanar(usize),
    #[error("grid csv {path}: {msg}")]
    BadGrid { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Fraction of predictions equal to the truth.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truth.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Class predictions over a regular grid covering the data with a 10% margin.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
    pub classes: Vec<usize>,
    pub class_count: usize,
}

impl BoundaryGrid {
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let dx = (self.x_max - self.x_min) / self.resolution as f64;
        let dy = (self.y_max - self.y_min) / self.resolution as f64;
        (self.x_min + (ix as f64 + 0.5) * dx, self.y_min + (iy as f64 + 0.5) * dy)
    }
}

/// Classify every cell center of a resolution x resolution grid through the
/// generator and classifier.
pub fn boundary_grid(bundle: &ModelBundle, pair: &DomainPair, resolution: usize) -> Result<BoundaryGrid, EvalError> {
    if pair.dim() != 2 {
        return Err(EvalError::NotPlanar(pair.dim()));
    }
    assert!(resolution >= 2, "resolution must be >= 2");
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for i in 0..pair.source().len() {
        let p = pair.source().row(i);
        xs.push(p[0]);
        ys.push(p[1]);
    }
    for i in 0..pair.target_len() {
        let p = pair.target_row(i);
        xs.push(p[0]);
        ys.push(p[1]);
    }
    let (x_lo, x_hi) = min_max(&xs);
    let (y_lo, y_hi) = min_max(&ys);
    let mx = 0.1 * (x_hi - x_lo).max(1e-9);
    let my = 0.1 * (y_hi - y_lo).max(1e-9);
    let grid = BoundaryGrid {
        x_min: x_lo - mx,
        x_max: x_hi + mx,
        y_min: y_lo - my,
        y_max: y_hi + my,
        resolution,
        classes: Vec::new(),
        class_count: pair.class_count(),
    };

    let mut points = Vec::with_capacity(resolution * resolution * 2);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (cx, cy) = grid.cell_center(ix, iy);
            points.push(cx);
            points.push(cy);
        }
    }
    let x = DiffArray::constant(vec![resolution * resolution, 2], points).expect("finite grid");
    let (_, classes) = bundle.predict(&x).map_err(TrainError::Diff)?;
    Ok(BoundaryGrid { classes, ..grid })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Raw grid as CSV: one header line, then `x,y,class` per cell in row order.
pub fn grid_to_csv(grid: &BoundaryGrid) -> String {
    let mut out = String::from("x,y,class\n");
    for iy in 0..grid.resolution {
        for ix in 0..grid.resolution {
            let (cx, cy) = grid.cell_center(ix, iy);
            let _ = writeln!(out, "{},{},{}", cx, cy, grid.classes[iy * grid.resolution + ix]);
        }
    }
    out
}

/// Rebuild a grid from its CSV form. Cell centers are assumed to lie on a
/// regular row-major lattice, as written by `grid_to_csv`.
pub fn grid_from_csv(text: &str, path_for_errors: &str, class_count: usize) -> Result<BoundaryGrid, EvalError> {
    let bad = |msg: String| EvalError::BadGrid { path: path_for_errors.to_string(), msg };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut classes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(bad(format!("row {}: expected 3 cells", i + 1)));
        }
        xs.push(cells[0].parse::<f64>().map_err(|e| bad(format!("row {}: {}", i + 1, e)))?);
        ys.push(cells[1].parse::<f64>().map_err(|e| bad(format!("row {}: {}", i + 1, e)))?);
        classes.push(cells[2].parse::<usize>().map_err(|e| bad(format!("row {}: {}", i + 1, e)))?);
    }
    let n = classes.len();
    let resolution = (n as f64).sqrt().round() as usize;
    if resolution * resolution != n || resolution < 2 {
        return Err(bad(format!("{} cells is not a square grid", n)));
    }
    let (cx_lo, cx_hi) = min_max(&xs);
    let (cy_lo, cy_hi) = min_max(&ys);
    let dx = (cx_hi - cx_lo) / (resolution - 1) as f64;
    let dy = (cy_hi - cy_lo) / (resolution - 1) as f64;
    Ok(BoundaryGrid {
        x_min: cx_lo - dx / 2.0,
        x_max: cx_hi + dx / 2.0,
        y_min: cy_lo - dy / 2.0,
        y_max: cy_hi + dy / 2.0,
        resolution,
        classes,
        class_count,
    })
}

const PALETTE: [&str; 8] = [
    "#e8b4b4", "#b4c7e8", "#b4e8c0", "#e8dcb4", "#d2b4e8", "#b4e4e8", "#e8c4b4", "#c8c8c8",
];
const POINT_PALETTE: [&str; 8] = [
    "#c0392b", "#2455a4", "#1e8449", "#b7950b", "#7d3c98", "#148f9c", "#ca5d2b", "#555555",
];

/// Render the boundary grid plus data points as an SVG document. Boundary
/// cells become background tiles, source points circles, target points
/// crosses; a legend sits in the top-left corner.
pub fn render_boundary_svg(grid: &BoundaryGrid, pair: &DomainPair) -> String {
    let size = 600.0;
    let to_px = |x: f64, y: f64| {
        let px = (x - grid.x_min) / (grid.x_max - grid.x_min) * size;
        let py = size - (y - grid.y_min) / (grid.y_max - grid.y_min) * size;
        (px, py)
    };
    let cell_w = size / grid.resolution as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>");
    // background tiles, slightly oversized to avoid hairline seams
    for iy in 0..grid.resolution {
        for ix in 0..grid.resolution {
            let class = grid.classes[iy * grid.resolution + ix];
            let (cx, cy) = grid.cell_center(ix, iy);
            let (px, py) = to_px(cx, cy);
            let fill = PALETTE[class % PALETTE.len()];
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                px - cell_w / 2.0,
                py - cell_w / 2.0,
                cell_w + 0.5,
                cell_w + 0.5,
                fill
            );
        }
    }
    for i in 0..pair.source().len() {
        let p = pair.source().row(i);
        let (px, py) = to_px(p[0], p[1]);
        let stroke = POINT_PALETTE[pair.source().labels[i] % POINT_PALETTE.len()];
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" stroke=\"black\" stroke-width=\"0.4\"/>",
            px, py, stroke
        );
    }
    for i in 0..pair.target_len() {
        let p = pair.target_row(i);
        let (px, py) = to_px(p[0], p[1]);
        let _ = writeln!(
            svg,
            "<path d=\"M {:.2} {:.2} l 6 6 m 0 -6 l -6 6\" stroke=\"#222\" stroke-width=\"1.2\" fill=\"none\"/>",
            px - 3.0,
            py - 3.0
        );
    }
    // legend
    let _ = writeln!(svg, "<rect x=\"8\" y=\"8\" width=\"150\" height=\"{}\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#888\"/>", 26 + 18 * grid.class_count);
    for c in 0..grid.class_count {
        let y = 24 + 18 * c;
        let _ = writeln!(
            svg,
            "<rect x=\"14\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"32\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">class {}</text>",
            y,
            PALETTE[c % PALETTE.len()],
            y + 10,
            c
        );
    }
    let ly = 24 + 18 * grid.class_count;
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" font-size=\"11\" font-family=\"sans-serif\">o source / x target</text>",
        ly + 10
    );
    svg.push_str("</svg>\n");
    svg
}

/// Write the boundary SVG plus a sibling `<path>.grid.csv` of the raw grid.
pub fn export_boundary(grid: &BoundaryGrid, pair: &DomainPair, path: &Path) -> Result<(), EvalError> {
    let svg = render_boundary_svg(grid, pair);
    std::fs::write(path, svg).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    let csv_path = sibling_grid_csv(path);
    std::fs::write(&csv_path, grid_to_csv(grid))
        .map_err(|source| EvalError::Io { path: csv_path.display().to_string(), source })?;
    Ok(())
}

pub fn sibling_grid_csv(svg_path: &Path) -> std::path::PathBuf {
    let mut name = svg_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "grid".into());
    name.push_str(".grid.csv");
    svg_path.with_file_name(name)
}

/// Project embeddings onto their first two principal axes and render a
/// scatter (source colored by true class, target drawn as crosses).
pub fn embedding_scatter_svg(bundle: &ModelBundle, pair: &DomainPair) -> Result<String, EvalError> {
    let x_s = DiffArray::constant(vec![pair.source().len(), pair.dim()], pair.source().features.clone())
        .expect("finite features");
    let (f_s, _) = bundle.predict(&x_s).map_err(TrainError::Diff)?;
    let x_t = DiffArray::constant(vec![pair.target_len(), pair.dim()], pair.target_features().to_vec())
        .expect("finite features");
    let (f_t, _) = bundle.predict(&x_t).map_err(TrainError::Diff)?;

    let d = bundle.embed_dim;
    let mut all = f_s.values();
    all.extend(f_t.values());
    let n = all.len() / d;

    let mut mean = vec![0.0; d];
    for row in all.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<f64> = all
        .chunks(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let axes = principal_axes(&centered, n, d);

    let project = |row: &[f64]| {
        let p0: f64 = row.iter().zip(&mean).zip(&axes.0).map(|((v, m), a)| (v - m) * a).sum();
        let p1: f64 = row.iter().zip(&mean).zip(&axes.1).map(|((v, m), a)| (v - m) * a).sum();
        (p0, p1)
    };

    let mut pts: Vec<(f64, f64)> = all.chunks(d).map(project).collect();
    let (x_lo, x_hi) = min_max(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
    let (y_lo, y_hi) = min_max(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
    let sx = (x_hi - x_lo).max(1e-9);
    let sy = (y_hi - y_lo).max(1e-9);
    let size = 600.0;
    for p in pts.iter_mut() {
        p.0 = (p.0 - x_lo) / sx * (size - 40.0) + 20.0;
        p.1 = size - ((p.1 - y_lo) / sy * (size - 40.0) + 20.0);
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>");
    let ns = pair.source().len();
    for (i, (px, py)) in pts.iter().enumerate().take(ns) {
        let color = POINT_PALETTE[pair.source().labels[i] % POINT_PALETTE.len()];
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>", px, py, color);
    }
    for (px, py) in pts.iter().skip(ns) {
        let _ = writeln!(
            svg,
            "<path d=\"M {:.2} {:.2} l 6 6 m 0 -6 l -6 6\" stroke=\"#222\" stroke-width=\"1.2\" fill=\"none\"/>",
            px - 3.0,
            py - 3.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// First two principal axes of centered data via power iteration with
/// deflation. Deterministic (fixed start vector).
fn principal_axes(centered: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    // covariance, d x d
    let mut cov = vec![0.0; d * d];
    for row in centered.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= n as f64;
    }
    let power = |mat: &[f64]| {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64) * 1e-3).collect();
        for _ in 0..200 {
            let mut w = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    w[i] += mat[i * d + j] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for x in w.iter_mut() {
                *x /= norm;
            }
            v = w;
        }
        v
    };
    let a0 = power(&cov);
    // deflate: cov - lambda a0 a0^T
    let mut ca0 = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            ca0[i] += cov[i * d + j] * a0[j];
        }
    }
    let lambda: f64 = a0.iter().zip(&ca0).map(|(a, b)| a * b).sum();
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= lambda * a0[i] * a0[j];
        }
    }
    let a1 = power(&deflated);
    (a0, a1)
}

/// One trained run inside an ablation sweep.
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub history: Vec<EpochReport>,
    pub diverged: Option<String>,
}

pub struct AblationTable {
    pub runs: Vec<AblationRun>,
    pub epochs: usize,
    /// Per-variant median target-accuracy curve, in `variants` order.
    pub variants: Vec<Variant>,
    pub median_curves: Vec<Vec<f64>>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Train every (variant, seed) combination and assemble per-epoch target
/// accuracies plus per-variant median curves. A run that aborts on
/// divergence keeps its last good accuracy for the remaining epochs.
pub fn run_ablation(
    pair: &DomainPair,
    base_cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable, EvalError> {
    assert!(!variants.is_empty() && !seeds.is_empty(), "need at least one variant and seed");
    let mut runs = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let mut cfg = base_cfg.clone();
            cfg.variant = variant;
            cfg.seed = seed;
            let outcome = fit(pair, &cfg)?;
            runs.push(AblationRun { variant, seed, history: outcome.history, diverged: outcome.diverged });
        }
    }
    let epochs = base_cfg.epochs;
    let mut median_curves = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut curve = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let mut accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| accuracy_at(&r.history, e))
                .collect();
            curve.push(median(&mut accs));
        }
        median_curves.push(curve);
    }
    Ok(AblationTable { runs, epochs, variants: variants.to_vec(), median_curves })
}

fn accuracy_at(history: &[EpochReport], epoch_idx: usize) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let i = epoch_idx.min(history.len() - 1);
    history[i].acc_target
}

impl AblationTable {
    /// CSV with one row per (variant, seed, epoch) plus median rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,epoch,acc_target\n");
        for run in &self.runs {
            for e in 0..self.epochs {
                let _ = writeln!(out, "{},{},{},{}", run.variant.name(), run.seed, e + 1, accuracy_at(&run.history, e));
            }
        }
        for (variant, curve) in self.variants.iter().zip(&self.median_curves) {
            for (e, acc) in curve.iter().enumerate() {
                let _ = writeln!(out, "{},median,{},{}", variant.name(), e + 1, acc);
            }
        }
        out
    }

    /// Human-readable aligned table of the median curves.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<9}", "epoch");
        for v in &self.variants {
            let _ = write!(out, "{:>9}", v.name());
        }
        out.push('\n');
        for e in 0..self.epochs {
            let _ = write!(out, "{:<9}", e + 1);
            for curve in &self.median_curves {
                let _ = write!(out, "{:>9.3}", curve[e]);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_moons_pair;

    #[test]
    fn accuracy_basic() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn grid_covers_data_and_matches_model() {
        let pair = make_moons_pair(20, 35.0, 0.1, 1).unwrap();
        let bundle = ModelBundle::init(2, 15, 2, 8, 1).unwrap();
        let grid = boundary_grid(&bundle, &pair, 24).unwrap();
        assert_eq!(grid.classes.len(), 24 * 24);
        for i in 0..pair.source().len() {
            let p = pair.source().row(i);
            assert!(p[0] > grid.x_min && p[0] < grid.x_max && p[1] > grid.y_min && p[1] < grid.y_max);
        }
        // grid predictions at an arbitrary cell agree with direct prediction
        let (cx, cy) = grid.cell_center(5, 7);
        let x = DiffArray::constant(vec![1, 2], vec![cx, cy]).unwrap();
        let (_, pred) = bundle.predict(&x).unwrap();
        assert_eq!(pred[0], grid.classes[7 * 24 + 5]);
    }

    #[test]
    fn grid_csv_round_trip_renders_identically() {
        let pair = make_moons_pair(10, 35.0, 0.1, 2).unwrap();
        let bundle = ModelBundle::init(2, 15, 2, 8, 2).unwrap();
        let grid = boundary_grid(&bundle, &pair, 16).unwrap();
        let csv = grid_to_csv(&grid);
        assert_eq!(csv.lines().count(), 16 * 16 + 1);
        let reloaded = grid_from_csv(&csv, "mem", 2).unwrap();
        let a = render_boundary_svg(&grid, &pair);
        let b = render_boundary_svg(&reloaded, &pair);
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let pair = make_moons_pair(10, 35.0, 0.1, 3).unwrap();
        let bundle = ModelBundle::init(2, 15, 2, 8, 3).unwrap();
        let grid = boundary_grid(&bundle, &pair, 8).unwrap();
        let svg = render_boundary_svg(&grid, &pair);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // every opened rect/circle/path/text is self-closed or closed
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("</svg>").count(), 1);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_run_ablation_equals_fit() {
        let pair = make_moons_pair(10, 35.0, 0.1, 4).unwrap();
        let mut cfg = TrainConfig::moons_default(Variant::GanDa, 0);
        cfg.epochs = 2;
        let table = run_ablation(&pair, &cfg, &[Variant::GanDa], &[7]).unwrap();
        let mut direct_cfg = cfg.clone();
        direct_cfg.seed = 7;
        let direct = fit(&pair, &direct_cfg).unwrap();
        assert_eq!(table.runs.len(), 1);
        for (a, b) in table.runs[0].history.iter().zip(direct.history.iter()) {
            assert_eq!(a.acc_target.to_bits(), b.acc_target.to_bits());
        }
        assert_eq!(table.median_curves[0][1], direct.history[1].acc_target);
    }
}
