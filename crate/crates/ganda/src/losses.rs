//! Training objectives: cross-entropy, MMD estimators, the predefined-target
//! alignment loss, and the conditional adversarial loss.

use crate::diffcore::{DiffArray, DiffError, Result};
use crate::pfr::PfrTargets;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("mmd: empty sample set")]
    EmptySet,
    #[error("mmd: dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("mmd: bandwidth must be > 0, got {0}")]
    BadBandwidth(f64),
}

/// Mean cross-entropy of row-wise logits against integer labels.
pub fn cross_entropy(logits: &DiffArray, labels: &[usize]) -> Result<DiffArray> {
    logits.log_softmax()?.nll(labels)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased V-statistic estimate of squared MMD with a Gaussian kernel
/// k(x,y) = exp(-||x-y||^2 / (2 bw^2)).
pub fn rbf_mmd2(a: &[f64], b: &[f64], dim: usize, bandwidth: f64) -> std::result::Result<f64, LossError> {
    if bandwidth <= 0.0 {
        return Err(LossError::BadBandwidth(bandwidth));
    }
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(LossError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (a.len() / dim, b.len() / dim);
    if na == 0 || nb == 0 {
        return Err(LossError::EmptySet);
    }
    let denom = 2.0 * bandwidth * bandwidth;
    let k = |x: &[f64], y: &[f64]| (-sq_dist(x, y) / denom).exp();
    fn row(m: &[f64], i: usize, dim: usize) -> &[f64] {
        &m[i * dim..(i + 1) * dim]
    }

    let mut kaa = 0.0;
    for i in 0..na {
        for j in 0..na {
            kaa += k(row(a, i, dim), row(a, j, dim));
        }
    }
    let mut kbb = 0.0;
    for i in 0..nb {
        for j in 0..nb {
            kbb += k(row(b, i, dim), row(b, j, dim));
        }
    }
    let mut kab = 0.0;
    for i in 0..na {
        for j in 0..nb {
            kab += k(row(a, i, dim), row(b, j, dim));
        }
    }
    Ok(kaa / (na * na) as f64 + kbb / (nb * nb) as f64 - 2.0 * kab / (na * nb) as f64)
}

/// Linear-kernel squared MMD: squared distance between sample means.
pub fn linear_mmd2(a: &[f64], b: &[f64], dim: usize) -> std::result::Result<f64, LossError> {
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(LossError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (a.len() / dim, b.len() / dim);
    if na == 0 || nb == 0 {
        return Err(LossError::EmptySet);
    }
    let mut mu_a = vec![0.0; dim];
    for i in 0..na {
        for j in 0..dim {
            mu_a[j] += a[i * dim + j];
        }
    }
    let mut mu_b = vec![0.0; dim];
    for i in 0..nb {
        for j in 0..dim {
            mu_b[j] += b[i * dim + j];
        }
    }
    for j in 0..dim {
        mu_a[j] /= na as f64;
        mu_b[j] /= nb as f64;
    }
    Ok(sq_dist(&mu_a, &mu_b))
}

/// Per-class batch means, counts, and the set of classes present.
#[derive(Debug, Clone)]
pub struct AlignmentBatchStats {
    pub means: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
    pub classes_present: Vec<usize>,
}

pub fn class_means(features: &[f64], labels: &[usize], dim: usize, class_count: usize) -> AlignmentBatchStats {
    let mut sums = vec![vec![0.0; dim]; class_count];
    let mut counts = vec![0usize; class_count];
    for (i, &label) in labels.iter().enumerate() {
        counts[label] += 1;
        for j in 0..dim {
            sums[label][j] += features[i * dim + j];
        }
    }
    let means = sums
        .into_iter()
        .zip(counts.iter())
        .map(|(s, &n)| if n > 0 { Some(s.iter().map(|v| v / n as f64).collect()) } else { None })
        .collect();
    let classes_present = (0..class_count).filter(|&c| counts[c] > 0).collect();
    AlignmentBatchStats { means, counts, classes_present }
}

/// Differentiable per-class means via a constant selection matrix:
/// rows of the result are the means of the present classes, in class order.
/// Returns the present classes alongside the (p x D) mean matrix.
fn diff_class_means(
    features: &DiffArray,
    labels: &[usize],
    class_count: usize,
) -> Result<Option<(Vec<usize>, DiffArray)>> {
    let shape = features.shape();
    let n = shape[0];
    debug_assert_eq!(labels.len(), n);
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..class_count).filter(|&c| counts[c] > 0).collect();
    if present.is_empty() {
        return Ok(None);
    }
    let p = present.len();
    let mut sel = vec![0.0; p * n];
    for (row, &c) in present.iter().enumerate() {
        let w = 1.0 / counts[c] as f64;
        for (i, &l) in labels.iter().enumerate() {
            if l == c {
                sel[row * n + i] = w;
            }
        }
    }
    let sel = DiffArray::constant(vec![p, n], sel)?;
    Ok(Some((present, sel.matmul(features)?)))
}

fn domain_alignment_term(
    features: &DiffArray,
    labels: &[usize],
    targets: &PfrTargets,
) -> Result<Option<DiffArray>> {
    let Some((present, means)) = diff_class_means(features, labels, targets.class_count)? else {
        return Ok(None);
    };
    let d = targets.embed_dim;
    let mut tvals = Vec::with_capacity(present.len() * d);
    for &c in &present {
        tvals.extend_from_slice(targets.row(c));
    }
    let tmat = DiffArray::constant(vec![present.len(), d], tvals)?;
    let loss = means.sub(&tmat)?.sum_squares()?.mul_scalar(1.0 / present.len() as f64)?;
    Ok(Some(loss))
}

/// Squared distance between per-class batch means and the predefined target
/// rows, summed over present classes and normalized by how many are present,
/// for source and target batches. Either side may be absent (empty label set).
pub fn alignment_loss(
    source_features: &DiffArray,
    source_labels: &[usize],
    target_features: Option<&DiffArray>,
    target_pseudo_labels: &[usize],
    targets: &PfrTargets,
) -> Result<DiffArray> {
    let d = targets.embed_dim;
    if source_features.shape()[1] != d {
        return Err(DiffError::ShapeMismatch {
            op: "alignment_loss",
            lhs: source_features.shape(),
            rhs: vec![targets.class_count, d],
        });
    }
    let mut total = DiffArray::constant(vec![1], vec![0.0])?;
    if let Some(term) = domain_alignment_term(source_features, source_labels, targets)? {
        total = total.add(&term)?;
    }
    if let Some(tf) = target_features {
        if tf.shape()[1] != d {
            return Err(DiffError::ShapeMismatch {
                op: "alignment_loss",
                lhs: tf.shape(),
                rhs: vec![targets.class_count, d],
            });
        }
        if let Some(term) = domain_alignment_term(tf, target_pseudo_labels, targets)? {
            total = total.add(&term)?;
        }
    }
    Ok(total)
}

/// Flattened outer product of a single feature vector and a probability
/// vector: index i*C + j holds f_i * y_j.
pub fn multilinear(f: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len() * y.len());
    for &fi in f {
        for &yj in y {
            out.push(fi * yj);
        }
    }
    out
}

/// Discriminator binary cross-entropy with domain labels source=1, target=0,
/// averaged as the mean of the two per-domain means.
pub fn adversarial_disc_loss(d_logits_source: &DiffArray, d_logits_target: &DiffArray) -> Result<DiffArray> {
    let ns = d_logits_source.values().len();
    let nt = d_logits_target.values().len();
    let ls = d_logits_source.bce_with_logits(&vec![1.0; ns])?;
    let lt = d_logits_target.bce_with_logits(&vec![0.0; nt])?;
    ls.add(&lt)?.mul_scalar(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(shape: &[usize], v: &[f64]) -> DiffArray {
        DiffArray::constant(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = c(&[3, 4], &[0.0; 12]);
        let loss = cross_entropy(&logits, &[0, 1, 3]).unwrap().scalar();
        assert!((loss - (4.0f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_large_margin_vanishes() {
        let mut vals = vec![0.0; 2 * 2];
        vals[0] = 50.0; // row 0 favors class 0
        vals[3] = 50.0; // row 1 favors class 1
        let loss = cross_entropy(&c(&[2, 2], &vals), &[0, 1]).unwrap().scalar();
        assert!(loss < 1e-20);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        // independent per-sample computation with naive exponentials
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let vals: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = [0usize, 2, 1, 1, 0];
        let loss = cross_entropy(&c(&[5, 3], &vals), &labels).unwrap().scalar();
        let mut expect = 0.0;
        for i in 0..5 {
            let row = &vals[i * 3..(i + 1) * 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[labels[i]].exp() / z).ln();
        }
        expect /= 5.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn rbf_mmd_identical_sets() {
        let a = [0.1, 0.2, 0.3, 0.4];
        let v = rbf_mmd2(&a, &a, 2, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn rbf_mmd_single_pair_closed_form() {
        // A = {0}, B = {1}: mmd2 = 2 - 2 exp(-1/(2 s^2))
        for s in [0.5, 1.0, 2.0] {
            let v = rbf_mmd2(&[0.0], &[1.0], 1, s).unwrap();
            let expect = 2.0 - 2.0 * (-1.0 / (2.0 * s * s)).exp();
            assert!((v - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn mmd_empty_set_errors() {
        assert!(rbf_mmd2(&[], &[1.0], 1, 1.0).is_err());
        assert!(linear_mmd2(&[1.0], &[], 1).is_err());
    }

    #[test]
    fn linear_mmd_mean_distance() {
        // means (1,0) vs (0,1) -> 2
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert!((linear_mmd2(&a, &b, 2).unwrap() - 2.0).abs() < 1e-15);
        let same = [0.3, 0.7, 0.3, 0.7];
        assert!(linear_mmd2(&same, &same, 2).unwrap().abs() < 1e-15);
    }

    #[test]
    fn class_means_basic() {
        let stats = class_means(&[1.0, 0.0, 3.0, 0.0], &[0, 0], 2, 2);
        assert_eq!(stats.means[0].as_ref().unwrap(), &vec![2.0, 0.0]);
        assert!(stats.means[1].is_none());
        assert_eq!(stats.classes_present, vec![0]);
        assert_eq!(stats.counts.iter().sum::<usize>(), 2);
    }

    fn targets_2x2() -> PfrTargets {
        PfrTargets {
            matrix: vec![0.0, 0.0, 0.0, 0.0],
            class_count: 2,
            embed_dim: 2,
            ofr_dim: 1,
            cfr_dim: 1,
            epoch_applied: 1,
        }
    }

    #[test]
    fn alignment_loss_zero_when_mean_hits_target() {
        let mut t = targets_2x2();
        t.matrix = vec![1.0, 2.0, 0.0, 0.0];
        let f = c(&[2, 2], &[0.0, 1.0, 2.0, 3.0]); // mean of class 0 = (1,2)
        let loss = alignment_loss(&f, &[0, 0], None, &[], &t).unwrap().scalar();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn alignment_loss_squared_distance() {
        let t = targets_2x2(); // target rows all zero
        let f = c(&[1, 2], &[1.0, 1.0]);
        let loss = alignment_loss(&f, &[0], None, &[], &t).unwrap().scalar();
        assert!((loss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn alignment_loss_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (n_s, n_t, classes, d) = (11usize, 9usize, 3usize, 4usize);
        let fs: Vec<f64> = (0..n_s * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ft: Vec<f64> = (0..n_t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<usize> = (0..n_s).map(|_| rng.gen_range(0..classes)).collect();
        let yt: Vec<usize> = (0..n_t).map(|_| rng.gen_range(0..classes)).collect();
        let tmat: Vec<f64> = (0..classes * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets = PfrTargets {
            matrix: tmat.clone(),
            class_count: classes,
            embed_dim: d,
            ofr_dim: 3,
            cfr_dim: 1,
            epoch_applied: 1,
        };

        let got = alignment_loss(&c(&[n_s, d], &fs), &ys, Some(&c(&[n_t, d], &ft)), &yt, &targets)
            .unwrap()
            .scalar();

        // per-class loop oracle
        let oracle = |f: &[f64], y: &[usize]| -> f64 {
            let stats = class_means(f, y, d, classes);
            let mut sum = 0.0;
            for &cl in &stats.classes_present {
                let mu = stats.means[cl].as_ref().unwrap();
                sum += mu.iter().zip(&tmat[cl * d..(cl + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            sum / stats.classes_present.len() as f64
        };
        let expect = oracle(&fs, &ys) + oracle(&ft, &yt);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn alignment_loss_invariant_to_within_class_permutation() {
        let t = targets_2x2();
        let f1 = c(&[3, 2], &[1.0, 0.0, 2.0, 0.0, 5.0, 5.0]);
        let f2 = c(&[3, 2], &[2.0, 0.0, 1.0, 0.0, 5.0, 5.0]);
        let a = alignment_loss(&f1, &[0, 0, 1], None, &[], &t).unwrap().scalar();
        let b = alignment_loss(&f2, &[0, 0, 1], None, &[], &t).unwrap().scalar();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn multilinear_identities() {
        let f = [0.0, 0.0, 1.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let o = multilinear(&f, &y);
        assert_eq!(o.len(), 12);
        assert!(o.iter().enumerate().all(|(i, &v)| v == if i == 7 { 1.0 } else { 0.0 }));

        // bilinearity and the norm identity
        let f2 = [0.5, -1.0];
        let y2 = [2.0, 0.25, -0.5];
        let scaled = multilinear(&f2.map(|v| 3.0 * v), &y2);
        let base = multilinear(&f2, &y2);
        for (a, b) in scaled.iter().zip(base.iter()) {
            assert!((a - 3.0 * b).abs() < 1e-15);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm(&base) - norm(&f2) * norm(&y2)).abs() < 1e-12);
    }

    #[test]
    fn adversarial_loss_at_confusion_and_separation() {
        let s = c(&[4], &[0.0; 4]);
        let t = c(&[4], &[0.0; 4]);
        let l = adversarial_disc_loss(&s, &t).unwrap().scalar();
        assert!((l - (2.0f64).ln()).abs() < 1e-14);

        let s = c(&[4], &[40.0; 4]);
        let t = c(&[4], &[-40.0; 4]);
        let l = adversarial_disc_loss(&s, &t).unwrap().scalar();
        assert!(l < 1e-15);
    }
}
