//! Synthetic labelled k-space datasets and their on-disk format.

mod io;
mod phantom;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{ComplexTensor, NumericsError};

pub use io::{read_dataset, read_split, split_path, write_dataset, write_split, FORMAT_VERSION, MAGIC};
pub use phantom::{column_energy, generate_phantom, image_from_kspace, to_kspace, Phantom, PhantomParams, Variant};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated in header")]
    TruncatedHeader,
    #[error("file truncated in record {record}")]
    Truncated { record: usize },
    #[error("malformed split file line {line}: {reason}")]
    BadSplit { line: usize, reason: String },
    #[error("unknown record id {0}")]
    UnknownRecord(u64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub label: u8,
    /// Centred k-space `[d_r, d_c]`, divided by the dataset normalization constant.
    pub kspace: ComplexTensor<f32>,
    /// Lesion column offset for generated positives; not persisted.
    pub lesion_offset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Record ids per split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    pub fn ids(&self, split: SplitName) -> &[u64] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub d_r: usize,
    pub d_c: usize,
    /// Fraction of positive records in every split.
    pub positivity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub phantom: PhantomParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_val: 800,
            n_test: 800,
            d_r: 32,
            d_c: 32,
            positivity: 0.10,
            noise_sigma: 0.03,
            seed: 0,
            phantom: PhantomParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.positivity > 0.0 && self.positivity < 1.0) {
            return Err(DataError::InvalidConfig(format!(
                "positivity must lie in (0, 1), got {}",
                self.positivity
            )));
        }
        if self.d_r < 16 || self.d_c < 16 {
            return Err(DataError::InvalidConfig(format!("d_r, d_c must be ≥ 16, got {}×{}", self.d_r, self.d_c)));
        }
        if self.n_train == 0 {
            return Err(DataError::InvalidConfig("empty training split".into()));
        }
        Ok(())
    }
}

/// Records plus their train/val/test assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub d_r: usize,
    pub d_c: usize,
    /// Divisor already applied to every stored k-space.
    pub norm_constant: f32,
    pub records: Vec<Record>,
    pub split: DatasetSplit,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(d_r: usize, d_c: usize, norm_constant: f32, records: Vec<Record>, split: DatasetSplit) -> Result<Self, DataError> {
        let index: HashMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        if index.len() != records.len() {
            return Err(DataError::InvalidConfig("duplicate record ids".into()));
        }
        for id in split.train.iter().chain(&split.val).chain(&split.test) {
            if !index.contains_key(id) {
                return Err(DataError::UnknownRecord(*id));
            }
        }
        Ok(Self {
            d_r,
            d_c,
            norm_constant,
            records,
            split,
            index,
        })
    }

    pub fn record(&self, id: u64) -> Option<&Record> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    /// Records of one split, in split order.
    pub fn split_records(&self, split: SplitName) -> Vec<&Record> {
        self.split.ids(split).iter().map(|id| &self.records[self.index[id]]).collect()
    }

    pub fn positivity(&self, split: SplitName) -> f64 {
        let recs = self.split_records(split);
        if recs.is_empty() {
            return 0.0;
        }
        recs.iter().filter(|r| r.label == 1).count() as f64 / recs.len() as f64
    }

    /// First `per_class` positives and `per_class` negatives of a split, in
    /// split order (fewer if a class runs out).
    pub fn balanced_subset(&self, split: SplitName, per_class: usize) -> Vec<&Record> {
        let recs = self.split_records(split);
        let pos = recs.iter().filter(|r| r.label == 1).take(per_class);
        let neg = recs.iter().filter(|r| r.label == 0).take(per_class);
        pos.chain(neg).copied().collect()
    }
}

/// SplitMix64 finalizer, used to derive independent per-record seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stratified_labels(n: usize, positivity: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n_pos = (positivity * n as f64).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(rng);
    labels
}

/// Generates one record (raw, unnormalized k-space in 64-bit).
pub fn generate_record(config: &DatasetConfig, id: u64, label: u8) -> Result<(ComplexTensor<f64>, Option<usize>), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, id + 1));
    let ph = generate_phantom(&mut rng, config.d_r, config.d_c, label == 1, &config.phantom)?;
    let k = to_kspace(&ph.image, config.noise_sigma, &mut rng)?;
    Ok((k, ph.lesion_offset))
}

/// Builds the dataset: stratified labels per split, one phantom per record,
/// and a single normalization constant (99th percentile of `|X|` over the
/// training split) applied to every record.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut label_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0));
    let sizes = [config.n_train, config.n_val, config.n_test];
    let mut split = DatasetSplit::default();
    let mut plan = Vec::new();
    let mut next_id = 0u64;
    for (s, &n) in sizes.iter().enumerate() {
        for label in stratified_labels(n, config.positivity, &mut label_rng) {
            plan.push((next_id, label));
            match s {
                0 => split.train.push(next_id),
                1 => split.val.push(next_id),
                _ => split.test.push(next_id),
            }
            next_id += 1;
        }
    }

    let raw: Vec<(ComplexTensor<f64>, Option<usize>)> = plan
        .par_iter()
        .map(|&(id, label)| generate_record(config, id, label))
        .collect::<Result<_, _>>()?;

    let mut mags: Vec<f64> = raw[..config.n_train]
        .iter()
        .flat_map(|(k, _)| k.magnitude().into_data())
        .collect();
    let idx = ((mags.len() as f64 * 0.99).ceil() as usize).clamp(1, mags.len()) - 1;
    let (_, p99, _) = mags.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    let norm = (*p99).max(f64::MIN_POSITIVE);
    let norm_f32 = norm as f32;

    let records = plan
        .iter()
        .zip(raw)
        .map(|(&(id, label), (k, lesion_offset))| {
            let scale = 1.0 / norm_f32 as f64;
            let k = ComplexTensor {
                re: k.re.map(|v| v * scale),
                im: k.im.map(|v| v * scale),
            };
            Record {
                id,
                label,
                kspace: k.cast(),
                lesion_offset,
            }
        })
        .collect();
    Dataset::new(config.d_r, config.d_c, norm_f32, records, split)
}
