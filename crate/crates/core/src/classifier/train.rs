use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{net, positive_scores, ClassifierError, Frontend, KspaceNet, NetConfig};
use crate::data::{Dataset, Record, SplitName};
use crate::harness::auroc;
use crate::masking::{budget, sample_order, ColumnMask, VdsPrior};
use crate::numerics::{AdamWConfig, AdamWState, NumericsError, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Per-example sampling rate is drawn uniformly from `[min_rate, max_rate]`.
    pub min_rate: f64,
    pub max_rate: f64,
    /// Validation rate whose AUROC selects the best epoch.
    pub early_stop_rate: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Rates at which the best parameters are reported on validation.
    pub report_rates: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            optimizer: AdamWConfig {
                learning_rate: 3e-3,
                ..AdamWConfig::default()
            },
            min_rate: 0.025,
            max_rate: 1.0,
            early_stop_rate: 0.10,
            patience: 5,
            report_rates: vec![0.05, 0.08, 0.10, 0.125, 1.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Validation AUROC at the early-stopping rate after each epoch.
    pub epoch_val_auroc: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// `(rate, validation AUROC)` of the kept parameters.
    pub val_auroc: Vec<(f64, f64)>,
}

/// Inverse-frequency class weights `w_c = n / (2 n_c)`, so both classes
/// carry the same total weight.
pub fn class_weights(n_neg: usize, n_pos: usize) -> [f64; 2] {
    let n = (n_neg + n_pos) as f64;
    [n / (2.0 * n_neg as f64), n / (2.0 * n_pos as f64)]
}

/// Mean class-weighted negative log-likelihood of `logits [B, 2]`.
pub fn weighted_nll<'t, T: Real>(logits: Var<'t, T>, labels: &[u8], class_weight: [f64; 2]) -> Result<Var<'t, T>, NumericsError> {
    let idx: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let w = Tensor::new(vec![idx.len()], idx.iter().map(|&y| T::from_f64(-class_weight[y])).collect())?;
    Ok(logits.log_softmax(None)?.gather(&idx)?.mul_const(w)?.mean())
}

/// One fixed mask per record, drawn from `prior` at `rate` with a seed derived
/// from `(seed, record id)`. A prefix of the same draw order is used for
/// every rate, so lower-rate masks are subsets of higher-rate ones.
pub fn record_masks(prior: &VdsPrior, rate: f64, records: &[&Record], seed: u64) -> Result<Vec<ColumnMask>, ClassifierError> {
    let count = budget(rate, prior.d_c()).max(1);
    record_orders(prior, records, seed)?
        .iter()
        .map(|order| Ok(ColumnMask::from_columns(prior.d_c(), &order[..count])?))
        .collect()
}

/// The full per-record draw orders behind [`record_masks`].
pub fn record_orders(prior: &VdsPrior, records: &[&Record], seed: u64) -> Result<Vec<Vec<usize>>, ClassifierError> {
    records
        .iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r.id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Ok(sample_order(prior, prior.d_c(), &mut rng)?)
        })
        .collect()
}

fn val_auroc(model: &KspaceNet<f32>, prior: Option<&VdsPrior>, rate: f64, val: &[&Record], seed: u64) -> Result<f64, ClassifierError> {
    let masks = match prior {
        Some(p) => record_masks(p, rate, val, seed)?,
        None => vec![ColumnMask::full(val[0].kspace.shape()[1]); val.len()],
    };
    let refs: Vec<&ColumnMask> = masks.iter().collect();
    let scores = positive_scores(model, val, &refs)?;
    let labels: Vec<u8> = val.iter().map(|r| r.label).collect();
    Ok(auroc(&scores, &labels)?)
}

/// Trains a kspace-net under random VDS masks with class-weighted
/// cross-entropy, keeping the epoch with the best validation AUROC at
/// `config.early_stop_rate`.
pub fn train_classifier(
    dataset: &Dataset,
    prior: &VdsPrior,
    net_config: &NetConfig,
    config: &TrainConfig,
) -> Result<(KspaceNet<f32>, TrainReport), ClassifierError> {
    if net_config.frontend != Frontend::Fourier {
        return Err(ClassifierError::Config("train_classifier expects the Fourier frontend".into()));
    }
    if prior.d_c() != dataset.d_c {
        return Err(ClassifierError::Config(format!("prior over {} columns for d_c = {}", prior.d_c(), dataset.d_c)));
    }
    train_loop(dataset, Some(prior), net_config, config)
}

/// Trains the image-domain reference classifier on fully sampled data.
pub fn train_image_classifier(
    dataset: &Dataset,
    net_config: &NetConfig,
    config: &TrainConfig,
) -> Result<(KspaceNet<f32>, TrainReport), ClassifierError> {
    let net_config = NetConfig {
        frontend: Frontend::ImageMagnitude,
        ..net_config.clone()
    };
    train_loop(dataset, None, &net_config, config)
}

fn train_loop(
    dataset: &Dataset,
    prior: Option<&VdsPrior>,
    net_config: &NetConfig,
    config: &TrainConfig,
) -> Result<(KspaceNet<f32>, TrainReport), ClassifierError> {
    if !(config.min_rate > 0.0 && config.min_rate <= config.max_rate && config.max_rate <= 1.0) {
        return Err(ClassifierError::Config(format!(
            "rate range [{}, {}] must lie in (0, 1]",
            config.min_rate, config.max_rate
        )));
    }
    if config.batch_size == 0 {
        return Err(ClassifierError::Config("batch_size must be positive".into()));
    }
    let train = dataset.split_records(SplitName::Train);
    let val = dataset.split_records(SplitName::Val);
    let n_pos = train.iter().filter(|r| r.label == 1).count();
    let n_neg = train.iter().filter(|r| r.label == 0).count();
    if n_pos == 0 || n_neg == 0 || n_pos + n_neg != train.len() {
        return Err(ClassifierError::SingleClass);
    }
    let class_weight = class_weights(n_neg, n_pos);

    let mut model = KspaceNet::<f32>::init(net_config.clone(), config.seed)?;
    let mut opt = AdamWState::new(config.optimizer, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let val_seed = config.seed.wrapping_add(2);
    let stop_rate = if prior.is_some() { config.early_stop_rate } else { 1.0 };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_val_auroc: Vec::new(),
        best_epoch: 0,
        val_auroc: Vec::new(),
    };
    let mut best = model.params.clone();
    let mut best_auc = f64::NEG_INFINITY;
    let d_c = dataset.d_c;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&Record> = idx.iter().map(|&i| train[i]).collect();
            let masks: Vec<ColumnMask> = match prior {
                Some(p) => records
                    .iter()
                    .map(|_| {
                        let rate = rng.gen_range(config.min_rate..=config.max_rate);
                        let order = sample_order(p, budget(rate, d_c).max(1), &mut rng)?;
                        ColumnMask::from_columns(d_c, &order)
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![ColumnMask::full(d_c); records.len()],
            };
            let mask_refs: Vec<&ColumnMask> = masks.iter().collect();
            let x = super::masked_batch(&records, &mask_refs)?;
            let labels: Vec<u8> = records.iter().map(|r| r.label).collect();

            let tape = Tape::new();
            let p = model.params.bind(&tape);
            let h = net::trunk(&model.config, &p, "trunk", tape.complex_constant(x))?;
            let logits = net::mlp(&p, "head", h)?;
            let loss = weighted_nll(logits, &labels, class_weight)?;
            let value = loss.value().data()[0] as f64;
            if !value.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = p.grads(&tape.backward(loss)?);
            opt.step(&mut model.params, &grads)?;
            loss_sum += value;
            n_batches += 1;
        }
        report.epoch_loss.push(loss_sum / n_batches as f64);
        let auc = val_auroc(&model, prior, stop_rate, &val, val_seed)?;
        report.epoch_val_auroc.push(auc);
        if auc > best_auc {
            best_auc = auc;
            best = model.params.clone();
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= config.patience {
            break;
        }
    }

    model.params = best;
    let rates: Vec<f64> = if prior.is_some() { config.report_rates.clone() } else { vec![1.0] };
    for rate in rates {
        report.val_auroc.push((rate, val_auroc(&model, prior, rate, &val, val_seed)?));
    }
    Ok((model, report))
}
