//! Adversarial domain adaptation with predefined feature targets.
//!
//! Trains a feature generator, label classifier, and class-conditioned
//! domain discriminator on a labeled source domain and an unlabeled target
//! domain. Batch class means are regressed onto a fixed per-class target
//! matrix built from orthogonal all-ones blocks plus a shared common block,
//! with a per-epoch schedule that shifts weight from the shared block to the
//! discriminative blocks. Ships with synthetic two-domain datasets (rotated
//! twin moons, shifted Gaussian blobs), CSV feature-table ingestion, an
//! ablation runner over the five model variants, decision-boundary SVG
//! export, and a finite-difference gradient checker.

pub mod datasets;
pub mod diffcore;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod manifest;
pub mod models;
pub mod pfr;
pub mod trainer;

pub use datasets::{DomainPair, LabeledSet};
pub use trainer::{fit, EpochReport, TrainConfig, Variant};
