//! Synthetic two-domain datasets, feature-table ingestion, and seeded
//! mini-batch iteration.
//!
//! Target ground-truth labels are stored but deliberately hidden from the
//! training path: `DomainPair` exposes `target_features()` to the trainer and
//! `eval_target_labels()` only to evaluation code.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{row}: {msg}")]
    Csv { path: String, row: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Labeled sample set: row-major n x d features plus class labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, class_count: usize) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::Invalid("labeled set must contain at least one sample".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::Invalid(format!(
                "{} feature values do not match {} samples of dim {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!(
                "label {} out of range for {} classes",
                bad, class_count
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("features contain non-finite values".into()));
        }
        Ok(LabeledSet { features, labels, dim, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Subset by sample indices.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledSet { features, labels, dim: self.dim, class_count: self.class_count }
    }
}

/// Labeled source set paired with an unlabeled target set. The held-out
/// target labels exist only for evaluation.
#[derive(Debug, Clone)]
pub struct DomainPair {
    source: LabeledSet,
    target_features: Vec<f64>,
    target_labels_heldout: Vec<usize>,
    dim: usize,
    class_count: usize,
}

impl DomainPair {
    pub fn new(source: LabeledSet, target_features: Vec<f64>, target_labels_heldout: Vec<usize>) -> Result<Self, DataError> {
        let dim = source.dim;
        if target_features.len() != target_labels_heldout.len() * dim {
            return Err(DataError::Invalid(format!(
                "target: {} feature values do not match {} samples of dim {}",
                target_features.len(),
                target_labels_heldout.len(),
                dim
            )));
        }
        if target_labels_heldout.is_empty() {
            return Err(DataError::Invalid("target domain must contain at least one sample".into()));
        }
        if let Some(&bad) = target_labels_heldout.iter().find(|&&l| l >= source.class_count) {
            return Err(DataError::Invalid(format!(
                "target label {} out of range for {} classes",
                bad, source.class_count
            )));
        }
        let class_count = source.class_count;
        Ok(DomainPair { source, target_features, target_labels_heldout, dim, class_count })
    }

    pub fn source(&self) -> &LabeledSet {
        &self.source
    }

    pub fn target_features(&self) -> &[f64] {
        &self.target_features
    }

    pub fn target_len(&self) -> usize {
        self.target_labels_heldout.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Ground-truth target labels. Evaluation only; the trainer never calls this.
    pub fn eval_target_labels(&self) -> &[usize] {
        &self.target_labels_heldout
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.target_features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Two interleaved half-circles: class 0 is the upper moon on the unit
/// circle, class 1 the lower moon offset by (1, 0.5).
pub fn make_moons(n_per_class: usize, noise_sigma: f64, seed: u64) -> Result<LabeledSet, DataError> {
    if n_per_class < 1 {
        return Err(DataError::Invalid("n_per_class must be >= 1".into()));
    }
    if noise_sigma < 0.0 {
        return Err(DataError::Invalid("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut features = Vec::with_capacity(n_per_class * 4);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    let step = if n_per_class == 1 { 0.0 } else { PI / (n_per_class - 1) as f64 };
    for class in 0..2usize {
        for i in 0..n_per_class {
            let t = step * i as f64;
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), -t.sin() + 0.5)
            };
            if noise_sigma > 0.0 {
                x += normal.sample(&mut rng);
                y += normal.sample(&mut rng);
            }
            features.push(x);
            features.push(y);
            labels.push(class);
        }
    }
    LabeledSet::new(features, labels, 2, 2)
}

/// Rotate every 2-D point about the origin by `theta_degrees`.
pub fn rotate(set: &LabeledSet, theta_degrees: f64) -> Result<LabeledSet, DataError> {
    if set.dim != 2 {
        return Err(DataError::Invalid(format!("rotate requires 2-D features, got dim {}", set.dim)));
    }
    let theta = theta_degrees.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let mut features = Vec::with_capacity(set.features.len());
    for i in 0..set.len() {
        let p = set.row(i);
        features.push(c * p[0] - s * p[1]);
        features.push(s * p[0] + c * p[1]);
    }
    LabeledSet::new(features, set.labels.clone(), 2, set.class_count)
}

/// Moons domain pair: source at 0 degrees, target is a freshly sampled moons
/// set rotated by `rotation_degrees`.
pub fn make_moons_pair(
    n_per_class: usize,
    rotation_degrees: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<DomainPair, DataError> {
    let source = make_moons(n_per_class, noise_sigma, seed)?;
    let target_base = make_moons(n_per_class, noise_sigma, seed.wrapping_add(0x9e37_79b9))?;
    let target = rotate(&target_base, rotation_degrees)?;
    DomainPair::new(source, target.features, target.labels)
}

/// C Gaussian clusters; target is the same clusters translated by
/// `shift_vector` with fresh noise.
pub fn make_blobs(
    class_count: usize,
    dim: usize,
    n_per_class: usize,
    center_spread: f64,
    shift_vector: &[f64],
    seed: u64,
) -> Result<DomainPair, DataError> {
    if class_count < 2 {
        return Err(DataError::Invalid("make_blobs requires C >= 2".into()));
    }
    if dim < 2 {
        return Err(DataError::Invalid("make_blobs requires d >= 2".into()));
    }
    if shift_vector.len() != dim {
        return Err(DataError::Invalid(format!(
            "shift vector has {} entries, expected {}",
            shift_vector.len(),
            dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| (0..dim).map(|_| center_spread * unit.sample(&mut rng)).collect())
        .collect();

    let sample_domain = |shift: Option<&[f64]>, rng: &mut ChaCha8Rng| {
        let mut features = Vec::with_capacity(class_count * n_per_class * dim);
        let mut labels = Vec::with_capacity(class_count * n_per_class);
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                for (j, &cj) in center.iter().enumerate() {
                    let mut v = cj + unit.sample(rng);
                    if let Some(s) = shift {
                        v += s[j];
                    }
                    features.push(v);
                }
                labels.push(c);
            }
        }
        (features, labels)
    };

    let (src_f, src_l) = sample_domain(None, &mut rng);
    let (tgt_f, tgt_l) = sample_domain(Some(shift_vector), &mut rng);
    let source = LabeledSet::new(src_f, src_l, dim, class_count)?;
    DomainPair::new(source, tgt_f, tgt_l)
}

fn parse_feature_csv(path: &Path) -> Result<(Vec<f64>, Vec<usize>, usize, usize), DataError> {
    let pstr = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: pstr.clone(), source })?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut max_label = 0usize;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(DataError::Csv {
                path: pstr.clone(),
                row,
                msg: "need at least one feature and a label".into(),
            });
        }
        let d = cells.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(DataError::Csv {
                    path: pstr.clone(),
                    row,
                    msg: format!("ragged row: {} features, expected {}", d, expect),
                });
            }
            _ => {}
        }
        for cell in &cells[..d] {
            let v: f64 = cell.parse().map_err(|_| DataError::Csv {
                path: pstr.clone(),
                row,
                msg: format!("non-numeric cell '{}'", cell),
            })?;
            if !v.is_finite() {
                return Err(DataError::Csv { path: pstr.clone(), row, msg: "non-finite feature".into() });
            }
            features.push(v);
        }
        let label: usize = cells[d].parse().map_err(|_| DataError::Csv {
            path: pstr.clone(),
            row,
            msg: format!("non-integer label '{}'", cells[d]),
        })?;
        max_label = max_label.max(label);
        labels.push(label);
        rows += 1;
    }
    let dim = dim.ok_or_else(|| DataError::Csv { path: pstr, row: 0, msg: "empty file".into() })?;
    Ok((features, labels, dim, rows))
}

/// Load a source/target pair from headerless CSV feature tables
/// (comma-separated reals followed by an integer class label per row).
pub fn load_feature_csv(path_source: &Path, path_target: &Path) -> Result<DomainPair, DataError> {
    let (src_f, src_l, src_d, _) = parse_feature_csv(path_source)?;
    let (tgt_f, tgt_l, tgt_d, _) = parse_feature_csv(path_target)?;
    if src_d != tgt_d {
        return Err(DataError::Invalid(format!(
            "feature dimension mismatch: source {} vs target {}",
            src_d, tgt_d
        )));
    }
    let class_count = src_l.iter().chain(tgt_l.iter()).max().map(|m| m + 1).unwrap_or(0);
    let source = LabeledSet::new(src_f, src_l, src_d, class_count)?;
    DomainPair::new(source, tgt_f, tgt_l)
}

/// Write a labeled set in the same CSV format `load_feature_csv` reads.
pub fn write_feature_csv(path: &Path, features: &[f64], labels: &[usize], dim: usize) -> Result<(), DataError> {
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        for j in 0..dim {
            out.push_str(&format!("{:.17e},", features[i * dim + j]));
        }
        out.push_str(&format!("{}\n", label));
    }
    fs::write(path, out).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// One mini-batch: a labeled source slice and an unlabeled target slice.
pub struct Batch {
    pub source: LabeledSet,
    pub target_features: Vec<f64>,
    /// Row indices of the target batch within the pair's target set.
    pub target_indices: Vec<usize>,
    pub target_rows: usize,
}

/// Deterministic per-(seed, epoch) shuffled batches. Source and target are
/// permuted independently; the stream is as long as the larger domain's
/// batch count, with the shorter domain cycling through its batches.
pub fn batch_iter(pair: &DomainPair, batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mix = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng_s = ChaCha8Rng::seed_from_u64(mix);
    let mut rng_t = ChaCha8Rng::seed_from_u64(mix ^ 0x5151_5151_5151_5151);

    let perm = |n: usize, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    };
    let src_idx = perm(pair.source.len(), &mut rng_s);
    let tgt_idx = perm(pair.target_len(), &mut rng_t);

    let nb_s = src_idx.len().div_ceil(batch_size);
    let nb_t = tgt_idx.len().div_ceil(batch_size);
    let total = nb_s.max(nb_t);

    let mut batches = Vec::with_capacity(total);
    for b in 0..total {
        let sb = b % nb_s;
        let s_slice = &src_idx[sb * batch_size..((sb + 1) * batch_size).min(src_idx.len())];
        let tb = b % nb_t;
        let t_slice = &tgt_idx[tb * batch_size..((tb + 1) * batch_size).min(tgt_idx.len())];
        let mut target_features = Vec::with_capacity(t_slice.len() * pair.dim);
        for &i in t_slice {
            target_features.extend_from_slice(pair.target_row(i));
        }
        batches.push(Batch {
            source: pair.source.select(s_slice),
            target_features,
            target_indices: t_slice.to_vec(),
            target_rows: t_slice.len(),
        });
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_counts() {
        let s = make_moons(100, 0.1, 7).unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.labels.iter().filter(|&&l| l == 0).count(), 100);
    }

    #[test]
    fn moons_noiseless_on_unit_arc() {
        let s = make_moons(50, 0.0, 0).unwrap();
        for i in 0..s.len() {
            if s.labels[i] == 0 {
                let p = s.row(i);
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                assert!((r - 1.0).abs() < 1e-12 && p[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn moons_deterministic() {
        let a = make_moons(30, 0.1, 42).unwrap();
        let b = make_moons(30, 0.1, 42).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn rotate_quarter_turn() {
        let s = LabeledSet::new(vec![1.0, 0.0], vec![0], 2, 1).unwrap();
        let r = rotate(&s, 90.0).unwrap();
        assert!((r.features[0]).abs() < 1e-12 && (r.features[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_inverse_round_trip() {
        let s = make_moons(20, 0.1, 3).unwrap();
        let back = rotate(&rotate(&s, 35.0).unwrap(), -35.0).unwrap();
        for (a, b) in s.features.iter().zip(back.features.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_rejects_high_dim() {
        let s = LabeledSet::new(vec![1.0, 2.0, 3.0], vec![0], 3, 1).unwrap();
        assert!(rotate(&s, 10.0).is_err());
    }

    #[test]
    fn blobs_counts_and_zero_shift() {
        let pair = make_blobs(3, 2, 50, 3.0, &[0.0, 0.0], 5).unwrap();
        assert_eq!(pair.source().len(), 150);
        assert_eq!(pair.target_len(), 150);
        // zero shift: per-class source/target means agree within sampling noise
        for c in 0..3 {
            for j in 0..2 {
                let sm: f64 = (0..150)
                    .filter(|&i| pair.source().labels[i] == c)
                    .map(|i| pair.source().row(i)[j])
                    .sum::<f64>()
                    / 50.0;
                let tm: f64 = (0..150)
                    .filter(|&i| pair.eval_target_labels()[i] == c)
                    .map(|i| pair.target_row(i)[j])
                    .sum::<f64>()
                    / 50.0;
                assert!((sm - tm).abs() < 1.0, "class {c} axis {j}: {sm} vs {tm}");
            }
        }
    }

    #[test]
    fn blobs_reproducible() {
        let a = make_blobs(2, 3, 10, 2.0, &[1.0, 0.0, 0.0], 11).unwrap();
        let b = make_blobs(2, 3, 10, 2.0, &[1.0, 0.0, 0.0], 11).unwrap();
        assert_eq!(a.source().features, b.source().features);
        assert_eq!(a.target_features(), b.target_features());
    }

    #[test]
    fn csv_round_trip_and_parse() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&sp, "1.0,2.0,0\n3.0,4.0,1\n").unwrap();
        std::fs::write(&tp, "0.5,0.5,0\n").unwrap();
        let pair = load_feature_csv(&sp, &tp).unwrap();
        assert_eq!(pair.source().features, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pair.source().labels, vec![0, 1]);
        assert_eq!(pair.dim(), 2);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&sp, "1.0,2.0,0\n3.0,oops,1\n").unwrap();
        std::fs::write(&tp, "0.5,0.5,0\n").unwrap();
        let err = load_feature_csv(&sp, &tp).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn csv_dim_mismatch_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&sp, "1.0,2.0,0\n").unwrap();
        std::fs::write(&tp, "0.5,0.5,0.5,0\n").unwrap();
        assert!(load_feature_csv(&sp, &tp).is_err());
        std::fs::write(&tp, "").unwrap();
        assert!(load_feature_csv(&sp, &tp).is_err());
    }

    #[test]
    fn batch_iter_counts_and_coverage() {
        let pair = make_moons_pair(100, 35.0, 0.1, 1).unwrap();
        let batches = batch_iter(&pair, 8, 1, 0);
        assert_eq!(batches.len(), 25);
        let mut counts = vec![0usize; 2];
        let mut total = 0usize;
        for b in &batches {
            total += b.source.len();
            for &l in &b.source.labels {
                counts[l] += 1;
            }
        }
        assert_eq!(total, 200);
        assert_eq!(counts, vec![100, 100]);
    }

    #[test]
    fn batch_iter_seed_epoch_determinism() {
        let pair = make_moons_pair(40, 35.0, 0.1, 2).unwrap();
        let a = batch_iter(&pair, 8, 9, 3);
        let b = batch_iter(&pair, 9, 9, 3);
        let _ = b;
        let b2 = batch_iter(&pair, 8, 9, 3);
        let c = batch_iter(&pair, 8, 9, 4);
        assert_eq!(a[0].source.features, b2[0].source.features);
        assert_ne!(a[0].source.features, c[0].source.features);
    }
}
