//! Predefined feature targets: per-class orthogonal blocks (OFR), a shared
//! common block (CFR), and their per-epoch scaled concatenation.
//!
//! With C classes and embedding dim D, each class row is an all-ones segment
//! of width m = floor(D/(C+1)) inside an otherwise-zero C*m prefix,
//! concatenated with an all-ones suffix of width D - C*m shared by every
//! class. Epoch e scales the OFR part by (1/alpha)^e and the CFR part by
//! alpha^e with alpha = 1/(C+1), clamped at `sched_epochs` so the scale
//! freezes instead of growing without bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfrError {
    #[error("embedding dim {dim} too small for {classes} classes (need D >= C+1)")]
    DimTooSmall { dim: usize, classes: usize },
    #[error("epoch must be >= 1, got {0}")]
    BadEpoch(usize),
}

/// Which parts of the target matrix are active and how the CFR block evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PfrVariant {
    /// OFR scaled by (1/alpha)^e, CFR by alpha^e.
    Full,
    /// CFR block forced to zero; OFR scheduled as in `Full`.
    NoCfr,
    /// OFR block forced to zero; CFR scheduled as in `Full`.
    NoOfr,
    /// CFR held at all-ones, unscaled; OFR scheduled as in `Full`.
    FixCfr,
}

#[derive(Debug, Clone, Copy)]
pub struct PfrConfig {
    pub class_count: usize,
    pub embed_dim: usize,
    pub sched_epochs: usize,
    pub variant: PfrVariant,
}

impl PfrConfig {
    pub fn new(class_count: usize, embed_dim: usize, sched_epochs: usize, variant: PfrVariant) -> Result<Self, PfrError> {
        block_width(class_count, embed_dim)?;
        Ok(PfrConfig { class_count, embed_dim, sched_epochs, variant })
    }

    pub fn alpha(&self) -> f64 {
        1.0 / (self.class_count as f64 + 1.0)
    }
}

/// The scheduled C x D target matrix for one epoch.
#[derive(Debug, Clone)]
pub struct PfrTargets {
    pub matrix: Vec<f64>,
    pub class_count: usize,
    pub embed_dim: usize,
    pub ofr_dim: usize,
    pub cfr_dim: usize,
    pub epoch_applied: usize,
}

impl PfrTargets {
    pub fn row(&self, c: usize) -> &[f64] {
        &self.matrix[c * self.embed_dim..(c + 1) * self.embed_dim]
    }
}

/// m = floor(D/(C+1)); errors when D < C+1 (the blocks would be empty).
pub fn block_width(class_count: usize, embed_dim: usize) -> Result<usize, PfrError> {
    if embed_dim < class_count + 1 {
        return Err(PfrError::DimTooSmall { dim: embed_dim, classes: class_count });
    }
    Ok(embed_dim / (class_count + 1))
}

/// Unscaled OFR block: row c is all ones on [c*m, (c+1)*m), zero elsewhere.
pub fn build_ofr(class_count: usize, embed_dim: usize) -> Result<Vec<f64>, PfrError> {
    let m = block_width(class_count, embed_dim)?;
    let width = class_count * m;
    let mut rows = vec![0.0; class_count * width];
    for c in 0..class_count {
        for j in c * m..(c + 1) * m {
            rows[c * width + j] = 1.0;
        }
    }
    Ok(rows)
}

/// Unscaled CFR block: identical all-ones rows of width D - C*m.
pub fn build_cfr(class_count: usize, embed_dim: usize) -> Result<Vec<f64>, PfrError> {
    let m = block_width(class_count, embed_dim)?;
    let width = embed_dim - class_count * m;
    Ok(vec![1.0; class_count * width])
}

/// Target matrix for `epoch` (1-indexed). The schedule exponent is
/// min(epoch, sched_epochs); later epochs reuse the frozen matrix.
pub fn scheduled_targets(cfg: &PfrConfig, epoch: usize) -> Result<PfrTargets, PfrError> {
    if epoch < 1 {
        return Err(PfrError::BadEpoch(epoch));
    }
    let (class_count, embed_dim) = (cfg.class_count, cfg.embed_dim);
    let m = block_width(class_count, embed_dim)?;
    let ofr_dim = class_count * m;
    let cfr_dim = embed_dim - ofr_dim;
    let e = epoch.min(cfg.sched_epochs) as i32;
    let alpha = cfg.alpha();
    let ofr_scale = alpha.powi(-e);
    let cfr_scale = alpha.powi(e);

    let ofr = build_ofr(class_count, embed_dim)?;
    let mut matrix = vec![0.0; class_count * embed_dim];
    for c in 0..class_count {
        let row = &mut matrix[c * embed_dim..(c + 1) * embed_dim];
        if cfg.variant != PfrVariant::NoOfr {
            for j in 0..ofr_dim {
                row[j] = ofr_scale * ofr[c * ofr_dim + j];
            }
        }
        let cfr_value = match cfg.variant {
            PfrVariant::Full | PfrVariant::NoOfr => cfr_scale,
            PfrVariant::NoCfr => 0.0,
            PfrVariant::FixCfr => 1.0,
        };
        for j in ofr_dim..embed_dim {
            row[j] = cfr_value;
        }
    }
    Ok(PfrTargets { matrix, class_count, embed_dim, ofr_dim, cfr_dim, epoch_applied: epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_width_cases() {
        assert_eq!(block_width(2, 15).unwrap(), 5);
        assert_eq!(block_width(10, 256).unwrap(), 23);
        assert!(block_width(2, 2).is_err());
    }

    #[test]
    fn ofr_structure() {
        let ofr = build_ofr(2, 15).unwrap();
        // rows are [1^5 0^5] and [0^5 1^5] over width 10
        let r0 = &ofr[0..10];
        let r1 = &ofr[10..20];
        assert!(r0[..5].iter().all(|&v| v == 1.0) && r0[5..].iter().all(|&v| v == 0.0));
        assert!(r1[..5].iter().all(|&v| v == 0.0) && r1[5..].iter().all(|&v| v == 1.0));
        let dot: f64 = r0.iter().zip(r1).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
        let norm2: f64 = r0.iter().map(|v| v * v).sum();
        assert_eq!(norm2, 5.0);
    }

    #[test]
    fn cfr_structure() {
        let cfr = build_cfr(2, 15).unwrap();
        assert_eq!(cfr.len(), 2 * 5);
        assert!(cfr.iter().all(|&v| v == 1.0));
        // cfr_dim = D - C*m >= m >= 1 always holds by floor arithmetic
        for (c, d) in [(2usize, 15usize), (3, 10), (7, 29), (4, 5)] {
            let m = block_width(c, d).unwrap();
            assert!(d - c * m >= m && m >= 1, "C={c} D={d}");
        }
    }

    #[test]
    fn schedule_epoch_one_scales() {
        let cfg = PfrConfig::new(2, 15, 3, PfrVariant::Full).unwrap();
        let t = scheduled_targets(&cfg, 1).unwrap();
        // alpha = 1/3: OFR scale 3, CFR scale 1/3
        assert!((t.row(0)[0] - 3.0).abs() < 1e-15);
        assert!((t.row(0)[14] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.ofr_dim + t.cfr_dim, 15);
    }

    #[test]
    fn schedule_ten_class_epoch_three() {
        // alpha = 1/11; after three epochs the CFR block sits near 1e-3
        let cfg = PfrConfig::new(10, 256, 3, PfrVariant::Full).unwrap();
        let t = scheduled_targets(&cfg, 3).unwrap();
        let cfr_value = t.row(0)[t.embed_dim - 1];
        let expect = (1.0f64 / 11.0).powi(3);
        assert!((cfr_value - expect).abs() < 1e-18);
        assert!((expect - 7.513e-4).abs() < 1e-6);
    }

    #[test]
    fn schedule_freezes_after_clamp() {
        let cfg = PfrConfig::new(2, 15, 3, PfrVariant::Full).unwrap();
        let a = scheduled_targets(&cfg, 3).unwrap();
        let b = scheduled_targets(&cfg, 50).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert!(scheduled_targets(&cfg, 0).is_err());
    }

    #[test]
    fn variants_zero_expected_blocks() {
        let no_cfr = PfrConfig::new(2, 15, 3, PfrVariant::NoCfr).unwrap();
        let t = scheduled_targets(&no_cfr, 2).unwrap();
        assert!(t.row(0)[10..].iter().all(|&v| v == 0.0));
        assert!(t.row(0)[0] > 0.0);

        let no_ofr = PfrConfig::new(2, 15, 3, PfrVariant::NoOfr).unwrap();
        let t = scheduled_targets(&no_ofr, 5).unwrap();
        assert!(t.row(1)[..10].iter().all(|&v| v == 0.0));
        // after the clamp the whole matrix is bounded by alpha^sched_epochs
        let alpha = no_ofr.alpha();
        let bound = alpha.powi(3);
        assert!(t.matrix.iter().all(|&v| v.abs() <= bound + 1e-15));

        let fix = PfrConfig::new(2, 15, 3, PfrVariant::FixCfr).unwrap();
        let t = scheduled_targets(&fix, 4).unwrap();
        assert!(t.row(0)[10..].iter().all(|&v| v == 1.0));
        assert!((t.row(0)[0] - 27.0).abs() < 1e-12);
    }

    #[test]
    fn full_schedule_scale_product_is_one() {
        for (c, d) in [(2usize, 15usize), (5, 32), (10, 256)] {
            let cfg = PfrConfig::new(c, d, 3, PfrVariant::Full).unwrap();
            for epoch in 1..=4 {
                let t = scheduled_targets(&cfg, epoch).unwrap();
                let ofr_scale = t.row(0)[0];
                let cfr_scale = t.row(0)[d - 1];
                assert!((ofr_scale * cfr_scale - 1.0).abs() < 1e-9, "C={c} D={d} e={epoch}");
            }
        }
    }
}
