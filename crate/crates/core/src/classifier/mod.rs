//! The kspace-net classifier: reward model, evaluation classifier and
//! scoring rule, plus the image-domain reference classifier.

pub mod net;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{DataError, Record};
use crate::harness::MetricError;
use crate::masking::{apply_mask, ColumnMask, MaskError};
use crate::numerics::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::numerics::{ComplexTensor, NumericsError, ParamSet, Real, Tape, Tensor};

pub use net::{Frontend, NetConfig};
pub use train::{class_weights, record_masks, record_orders, weighted_nll, train_classifier, train_image_classifier, TrainConfig, TrainReport};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"KNET";

/// Largest batch pushed through one forward pass during inference.
pub const INFERENCE_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training split must contain both classes")]
    SingleClass,
    #[error("empty record subset")]
    EmptySubset,
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Anything that maps a batch of masked k-spaces to binary class
/// log-probabilities. Implemented by [`KspaceNet`] and by test stubs.
pub trait RewardModel: Sync {
    /// `x: [B, 1, d_r, d_c]` → `B` rows of `[log p(y=0), log p(y=1)]`.
    fn log_probs(&self, x: &ComplexTensor<f32>) -> Result<Vec<[f64; 2]>, ClassifierError>;

    /// Identifies the parameters, so callers can verify a model is frozen.
    fn checksum(&self) -> String;
}

/// `log softmax(logits)[y]` for two logits.
pub fn log_softmax2(logits: [f64; 2], y: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    logits[y as usize] - lse
}

/// Stacks masked k-spaces into a `[B, 1, d_r, d_c]` batch.
pub fn masked_batch(records: &[&Record], masks: &[&ColumnMask]) -> Result<ComplexTensor<f32>, ClassifierError> {
    let first = records.first().ok_or(ClassifierError::EmptySubset)?;
    let shape = first.kspace.shape().to_vec();
    let masked = records
        .iter()
        .zip(masks)
        .map(|(r, m)| apply_mask(&r.kspace, m))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&ComplexTensor<f32>> = masked.iter().collect();
    let stacked = ComplexTensor::stack(&refs)?;
    Ok(stacked.reshape(&[records.len(), 1, shape[0], shape[1]])?)
}

/// A kspace-net (or image-domain) classifier with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KspaceNet<T> {
    pub config: NetConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> KspaceNet<T> {
    pub fn init(config: NetConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        net::init_trunk(&config, "trunk", &mut rng, &mut params);
        net::init_mlp("head", (config.feature_dim(), config.hidden, 2), 0.5, &mut rng, &mut params);
        Ok(Self { config, params })
    }

    /// Logits `[B, 2]` for k-space `[B, 1, d_r, d_c]`.
    pub fn logits(&self, x: &ComplexTensor<T>) -> Result<Tensor<T>, ClassifierError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let h = net::trunk(&self.config, &p, "trunk", tape.complex_constant(x.clone()))?;
        let out = net::mlp(&p, "head", h)?.value();
        Ok((*out).clone())
    }

    /// Pooled trunk features `[B, widths[1]]`.
    pub fn features(&self, x: &ComplexTensor<T>) -> Result<Tensor<T>, ClassifierError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let h = net::trunk(&self.config, &p, "trunk", tape.complex_constant(x.clone()))?.value();
        Ok((*h).clone())
    }

    /// `log q(y | x_s)` per batch element.
    pub fn log_likelihood(&self, x: &ComplexTensor<T>, labels: &[u8]) -> Result<Vec<f64>, ClassifierError> {
        let logits = self.logits(x)?;
        if labels.len() != logits.shape()[0] {
            return Err(ClassifierError::Config(format!("{} labels for batch {}", labels.len(), logits.shape()[0])));
        }
        labels
            .iter()
            .zip(logits.data().chunks(2))
            .map(|(&y, l)| {
                if y > 1 {
                    return Err(ClassifierError::BadLabel(y));
                }
                Ok(log_softmax2([l[0].to_f64(), l[1].to_f64()], y))
            })
            .collect()
    }

    pub fn config_json(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        Ok(write_checkpoint(path, CHECKPOINT_MAGIC, &self.config_json(), &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let (json, params) = read_checkpoint(path, CHECKPOINT_MAGIC)?;
        let config: NetConfig = serde_json::from_str(&json).map_err(|e| ClassifierError::Config(e.to_string()))?;
        let fresh = Self::init(config.clone(), 0)?;
        let expected: Vec<(&str, &[usize])> = fresh.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let found: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(ClassifierError::Config("checkpoint parameters do not match its config".into()));
        }
        Ok(Self { config, params })
    }
}

impl RewardModel for KspaceNet<f32> {
    fn log_probs(&self, x: &ComplexTensor<f32>) -> Result<Vec<[f64; 2]>, ClassifierError> {
        let b = x.shape()[0];
        let plane = x.len() / b.max(1);
        let mut out = Vec::with_capacity(b);
        for start in (0..b).step_by(INFERENCE_BATCH) {
            let n = INFERENCE_BATCH.min(b - start);
            let mut shape = x.shape().to_vec();
            shape[0] = n;
            let chunk = ComplexTensor::new(
                Tensor::new(shape.clone(), x.re.data()[start * plane..(start + n) * plane].to_vec())?,
                Tensor::new(shape, x.im.data()[start * plane..(start + n) * plane].to_vec())?,
            )?;
            let logits = self.logits(&chunk)?;
            for l in logits.data().chunks(2) {
                let l = [l[0] as f64, l[1] as f64];
                out.push([log_softmax2(l, 0), log_softmax2(l, 1)]);
            }
        }
        Ok(out)
    }

    fn checksum(&self) -> String {
        self.params.checksum()
    }
}

/// Reward model with fixed logits, whatever the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub logits: [f64; 2],
}

impl RewardModel for ConstantModel {
    fn log_probs(&self, x: &ComplexTensor<f32>) -> Result<Vec<[f64; 2]>, ClassifierError> {
        let row = [log_softmax2(self.logits, 0), log_softmax2(self.logits, 1)];
        Ok(vec![row; x.shape()[0]])
    }

    fn checksum(&self) -> String {
        format!("constant:{:?}", self.logits)
    }
}

/// Per-record `log q(y | x ⊙ mask)` for per-record masks.
pub fn record_log_likelihoods<M: RewardModel + ?Sized>(
    model: &M,
    records: &[&Record],
    masks: &[&ColumnMask],
) -> Result<Vec<f64>, ClassifierError> {
    if records.is_empty() {
        return Err(ClassifierError::EmptySubset);
    }
    let mut out = Vec::with_capacity(records.len());
    for (rs, ms) in records.chunks(INFERENCE_BATCH).zip(masks.chunks(INFERENCE_BATCH)) {
        let lp = model.log_probs(&masked_batch(rs, ms)?)?;
        for (r, row) in rs.iter().zip(lp) {
            if r.label > 1 {
                return Err(ClassifierError::BadLabel(r.label));
            }
            out.push(row[r.label as usize]);
        }
    }
    Ok(out)
}

/// Positive-class probabilities `q(y=1 | x ⊙ mask)`, used as ranking scores.
pub fn positive_scores<M: RewardModel + ?Sized>(
    model: &M,
    records: &[&Record],
    masks: &[&ColumnMask],
) -> Result<Vec<f64>, ClassifierError> {
    if records.is_empty() {
        return Err(ClassifierError::EmptySubset);
    }
    let mut out = Vec::with_capacity(records.len());
    for (rs, ms) in records.chunks(INFERENCE_BATCH).zip(masks.chunks(INFERENCE_BATCH)) {
        out.extend(model.log_probs(&masked_batch(rs, ms)?)?.iter().map(|row| row[1].exp()));
    }
    Ok(out)
}

/// Scoring rule `V(s) = mean log q(y | x ⊙ s)` over `subset`.
pub fn score_mask<M: RewardModel + ?Sized>(model: &M, subset: &[&Record], mask: &ColumnMask) -> Result<f64, ClassifierError> {
    let masks = vec![mask; subset.len()];
    let ll = record_log_likelihoods(model, subset, &masks)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}
