#![allow(dead_code)]

pub mod grad;

use kspace::classifier::{log_softmax2, ClassifierError, RewardModel};
use kspace::data::{build_dataset, column_energy, Dataset, DatasetConfig, PhantomParams, Variant};
use kspace::numerics::ComplexTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small dataset for tests that only need real records.
pub fn small_dataset(n_train: usize, n_val: usize, n_test: usize, d_c: usize, positivity: f64, seed: u64) -> Dataset {
    build_dataset(&DatasetConfig {
        n_train,
        n_val,
        n_test,
        d_r: 16.max(d_c),
        d_c,
        positivity,
        seed,
        phantom: PhantomParams {
            variant: Variant::Hard,
            ..PhantomParams::default()
        },
        ..DatasetConfig::default()
    })
    .expect("valid config")
}

/// Reward model whose positive logit is linear in per-column energy.
#[derive(Debug, Clone)]
pub struct ColumnStub {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ColumnStub {
    pub fn random(d_c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weights: (0..d_c).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            bias: rng.gen_range(-0.5..0.5),
        }
    }

    pub fn logit(&self, x: &ComplexTensor<f32>) -> f64 {
        let e = column_energy(x);
        self.bias + e.iter().zip(&self.weights).map(|(e, w)| w * e.sqrt()).sum::<f64>()
    }
}

impl RewardModel for ColumnStub {
    fn log_probs(&self, x: &ComplexTensor<f32>) -> Result<Vec<[f64; 2]>, ClassifierError> {
        let s = x.shape();
        let plane = s[2] * s[3];
        (0..s[0])
            .map(|b| {
                let re = x.re.data()[b * plane..(b + 1) * plane].to_vec();
                let im = x.im.data()[b * plane..(b + 1) * plane].to_vec();
                let one = ComplexTensor::new(
                    kspace::numerics::Tensor::new(vec![s[2], s[3]], re)?,
                    kspace::numerics::Tensor::new(vec![s[2], s[3]], im)?,
                )?;
                let l = [0.0, self.logit(&one)];
                Ok([log_softmax2(l, 0), log_softmax2(l, 1)])
            })
            .collect()
    }

    fn checksum(&self) -> String {
        format!("column-stub:{:?}:{}", self.weights, self.bias)
    }
}
