//! Network definitions: feature generator, label classifier, and domain
//! discriminator, plus parameter save/load.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffArray, Result};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embedding dim {dim} too small for {classes} classes (need D >= C+1)")]
    DimTooSmall { dim: usize, classes: usize },
    #[error("parameter file {path}: {msg}")]
    BadParamFile { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Relu,
    Identity,
}

/// Fully-connected network with ReLU hidden activations.
pub struct Mlp {
    pub weights: Vec<DiffArray>,
    pub biases: Vec<DiffArray>,
    pub widths: Vec<usize>,
    pub output_activation: OutputActivation,
}

impl Mlp {
    /// He-style init: weights ~ N(0, sqrt(2/fan_in)), biases zero.
    pub fn init(widths: &[usize], output_activation: OutputActivation, rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w > 0), "bad widths {widths:?}");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            weights.push(DiffArray::param(vec![fan_in, fan_out], w).expect("finite init"));
            biases.push(DiffArray::param(vec![fan_out], vec![0.0; fan_out]).expect("finite init"));
        }
        Mlp { weights, biases, widths: widths.to_vec(), output_activation }
    }

    pub fn forward(&self, x: &DiffArray) -> Result<DiffArray> {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if i < last || self.output_activation == OutputActivation::Relu {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<DiffArray> {
        self.weights.iter().chain(self.biases.iter()).cloned().collect()
    }
}

/// Generator + classifier + discriminator with consistent dimensions.
pub struct ModelBundle {
    pub generator: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub class_count: usize,
}

/// Outputs of one combined forward pass.
pub struct ForwardOut {
    /// Generator embeddings, n x D, entrywise nonnegative.
    pub features: DiffArray,
    /// Classifier logits, n x C.
    pub logits: DiffArray,
    /// Discriminator logits, n x 1, fed through gradient reversal.
    pub d_logits: DiffArray,
}

impl ModelBundle {
    /// 4-layer generator, 3-layer classifier and discriminator.
    pub fn init(input_dim: usize, embed_dim: usize, class_count: usize, hidden: usize, seed: u64) -> std::result::Result<Self, ModelError> {
        if embed_dim < class_count + 1 {
            return Err(ModelError::DimTooSmall { dim: embed_dim, classes: class_count });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Mlp::init(&[input_dim, hidden, hidden, hidden, embed_dim], OutputActivation::Relu, &mut rng);
        let classifier = Mlp::init(&[embed_dim, hidden, hidden, class_count], OutputActivation::Identity, &mut rng);
        let discriminator = Mlp::init(&[embed_dim * class_count, hidden, hidden, 1], OutputActivation::Identity, &mut rng);
        Ok(ModelBundle { generator, classifier, discriminator, input_dim, embed_dim, class_count })
    }

    /// Generator -> classifier -> (f ⊗ softmax(logits)) -> reversal -> discriminator.
    pub fn forward_all(&self, x: &DiffArray, grl_lambda: f64) -> Result<ForwardOut> {
        let features = self.generator.forward(x)?;
        let logits = self.classifier.forward(&features)?;
        let probs = logits.softmax()?;
        let joint = features.outer_rows(&probs)?;
        let d_logits = self.discriminator.forward(&joint.grad_reverse(grl_lambda)?)?;
        Ok(ForwardOut { features, logits, d_logits })
    }

    /// Embeddings and class predictions without touching the discriminator.
    pub fn predict(&self, x: &DiffArray) -> Result<(DiffArray, Vec<usize>)> {
        let features = self.generator.forward(x)?;
        let logits = self.classifier.forward(&features)?;
        Ok((features, argmax_rows(&logits.values(), self.class_count)))
    }

    pub fn params(&self) -> Vec<DiffArray> {
        let mut p = self.generator.params();
        p.extend(self.classifier.params());
        p.extend(self.discriminator.params());
        p
    }

    pub fn save(&self, path: &Path) -> std::result::Result<(), ModelError> {
        let records: Vec<ParamRecord> = self
            .named_params()
            .into_iter()
            .map(|(name, p)| ParamRecord { name, shape: p.shape(), values: p.values() })
            .collect();
        let json = serde_json::to_string(&records).expect("serializable");
        std::fs::write(path, json).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(&mut self, path: &Path) -> std::result::Result<(), ModelError> {
        let pstr = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: pstr.clone(), source })?;
        let records: Vec<ParamRecord> = serde_json::from_str(&text)
            .map_err(|e| ModelError::BadParamFile { path: pstr.clone(), msg: e.to_string() })?;
        let named = self.named_params();
        if records.len() != named.len() {
            return Err(ModelError::BadParamFile {
                path: pstr,
                msg: format!("expected {} parameters, found {}", named.len(), records.len()),
            });
        }
        for (record, (name, param)) in records.into_iter().zip(named) {
            if record.name != name || record.shape != param.shape() {
                return Err(ModelError::BadParamFile {
                    path: pstr,
                    msg: format!("parameter {} has shape {:?}, expected {} {:?}", record.name, record.shape, name, param.shape()),
                });
            }
            param
                .load_values(record.values)
                .map_err(|e| ModelError::BadParamFile { path: pstr.clone(), msg: e.to_string() })?;
        }
        Ok(())
    }

    fn named_params(&self) -> Vec<(String, DiffArray)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("generator", &self.generator),
            ("classifier", &self.classifier),
            ("discriminator", &self.discriminator),
        ] {
            for (i, w) in net.weights.iter().enumerate() {
                out.push((format!("{prefix}.w{i}"), w.clone()));
            }
            for (i, b) in net.biases.iter().enumerate() {
                out.push((format!("{prefix}.b{i}"), b.clone()));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Row-wise argmax with ties broken toward the lower index.
pub fn argmax_rows(values: &[f64], cols: usize) -> Vec<usize> {
    values
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
