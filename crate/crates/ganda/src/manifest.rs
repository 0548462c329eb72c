//! Run manifests: everything needed to reproduce a training run
//! bit-identically, plus pointers to the artifacts it produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{load_feature_csv, make_blobs, make_moons_pair, DataError, DomainPair};
use crate::trainer::{fit, TrainConfig, TrainError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("manifest {path}: {msg}")]
    Bad { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How the domain pair was obtained; regenerating from this is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetDescriptor {
    Moons {
        n_per_class: usize,
        rotation: f64,
        noise: f64,
        seed: u64,
    },
    Blobs {
        class_count: usize,
        dim: usize,
        n_per_class: usize,
        center_spread: f64,
        shift: Vec<f64>,
        seed: u64,
    },
    Csv {
        source: PathBuf,
        target: PathBuf,
    },
}

impl DatasetDescriptor {
    pub fn load(&self) -> Result<DomainPair, DataError> {
        match self {
            DatasetDescriptor::Moons { n_per_class, rotation, noise, seed } => {
                make_moons_pair(*n_per_class, *rotation, *noise, *seed)
            }
            DatasetDescriptor::Blobs { class_count, dim, n_per_class, center_spread, shift, seed } => {
                make_blobs(*class_count, *dim, *n_per_class, *center_spread, shift, *seed)
            }
            DatasetDescriptor::Csv { source, target } => load_feature_csv(source, target),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: TrainConfig,
    pub dataset: DatasetDescriptor,
    pub final_acc_source: f64,
    pub final_acc_target: f64,
    pub diverged: Option<String>,
    pub history_path: PathBuf,
    pub model_path: PathBuf,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let json = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, json).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<RunManifest, ManifestError> {
        let pstr = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: pstr.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Bad { path: pstr, msg: e.to_string() })
    }

    /// Re-run the experiment recorded in this manifest and return the final
    /// (source, target) accuracies it reproduces.
    pub fn rerun(&self) -> Result<(f64, f64), ManifestError> {
        let pair = self.dataset.load()?;
        let outcome = fit(&pair, &self.config)?;
        let last = outcome
            .history
            .last()
            .ok_or_else(|| ManifestError::Bad { path: "<rerun>".into(), msg: "empty history".into() })?;
        Ok((last.acc_source, last.acc_target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Variant;

    #[test]
    fn manifest_round_trip_and_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = DatasetDescriptor::Moons { n_per_class: 12, rotation: 35.0, noise: 0.1, seed: 3 };
        let pair = dataset.load().unwrap();
        let mut cfg = TrainConfig::moons_default(Variant::GanDa, 3);
        cfg.epochs = 2;
        let outcome = fit(&pair, &cfg).unwrap();
        let last = outcome.history.last().unwrap();
        let manifest = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config: cfg,
            dataset,
            final_acc_source: last.acc_source,
            final_acc_target: last.acc_target,
            diverged: None,
            history_path: "history.jsonl".into(),
            model_path: "model.json".into(),
        };
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        let (acc_s, acc_t) = loaded.rerun().unwrap();
        assert_eq!(acc_s.to_bits(), manifest.final_acc_source.to_bits());
        assert_eq!(acc_t.to_bits(), manifest.final_acc_target.to_bits());
    }
}
