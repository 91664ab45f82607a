//! The kspace-net architecture: complex convolution in k-space, per-channel
//! `|ifft2|`, a small residual conv backbone, global pooling and an MLP head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{BoundParams, ComplexVar, NumericsError, ParamSet, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    /// Learned complex convolution in k-space followed by `|ifft2|`.
    Fourier,
    /// Plain `|ifft2|` of the input (single channel).
    ImageMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub frontend: Frontend,
    pub fourier_channels: usize,
    /// Odd kernel extent of the k-space convolution.
    pub fourier_kernel: usize,
    /// Channel widths of the two backbone stages.
    pub widths: [usize; 2],
    pub hidden: usize,
    /// Multiplies the frontend magnitudes before the backbone.
    pub input_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            frontend: Frontend::Fourier,
            fourier_channels: 4,
            fourier_kernel: 3,
            widths: [8, 16],
            hidden: 32,
            input_scale: 32.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.fourier_kernel.is_multiple_of(2) {
            return Err(NumericsError::InvalidArgument(format!(
                "fourier_kernel must be odd, got {}",
                self.fourier_kernel
            )));
        }
        if self.fourier_channels == 0 || self.widths.contains(&0) || self.hidden == 0 {
            return Err(NumericsError::InvalidArgument("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.frontend {
            Frontend::Fourier => self.fourier_channels,
            Frontend::ImageMagnitude => 1,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.widths[1]
    }
}

fn he<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
}

fn conv_param<T: Real, R: Rng + ?Sized>(p: &mut ParamSet<T>, name: &str, out: usize, inp: usize, k: usize, rng: &mut R) {
    p.insert(format!("{name}.w"), he(&[out, inp, k, k], inp * k * k, 1.0, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]));
}

/// Adds the trunk parameters (`<prefix>.*`) for `cfg`.
pub fn init_trunk<T: Real, R: Rng + ?Sized>(cfg: &NetConfig, prefix: &str, rng: &mut R, p: &mut ParamSet<T>) {
    let k = cfg.fourier_kernel;
    if cfg.frontend == Frontend::Fourier {
        let f = cfg.fourier_channels;
        let normal = Normal::new(0.0, 1.0 / k as f64).expect("positive std");
        for part in ["re", "im"] {
            p.insert(
                format!("{prefix}.fourier.{part}"),
                Tensor::from_fn(&[f, 1, k, k], |_| T::from_f64(normal.sample(rng))),
            );
        }
    }
    let [w0, w1] = cfg.widths;
    conv_param(p, &format!("{prefix}.stem"), w0, cfg.in_channels(), 3, rng);
    conv_param(p, &format!("{prefix}.s1c1"), w0, w0, 3, rng);
    conv_param(p, &format!("{prefix}.s1c2"), w0, w0, 3, rng);
    conv_param(p, &format!("{prefix}.s2c1"), w1, w0, 3, rng);
    conv_param(p, &format!("{prefix}.s2c2"), w1, w1, 3, rng);
    conv_param(p, &format!("{prefix}.s2proj"), w1, w0, 1, rng);
}

/// Adds a two-layer perceptron `in → hidden → out` under `<prefix>.*`.
/// `out_gain` scales the initial output layer.
pub fn init_mlp<T: Real, R: Rng + ?Sized>(
    prefix: &str,
    dims: (usize, usize, usize),
    out_gain: f64,
    rng: &mut R,
    p: &mut ParamSet<T>,
) {
    let (inp, hidden, out) = dims;
    p.insert(format!("{prefix}.l1.w"), he(&[inp, hidden], inp, 1.0, rng));
    p.insert(format!("{prefix}.l1.b"), Tensor::zeros(&[hidden]));
    p.insert(format!("{prefix}.l2.w"), he(&[hidden, out], hidden, out_gain, rng));
    p.insert(format!("{prefix}.l2.b"), Tensor::zeros(&[out]));
}

fn conv<'t, T: Real>(
    p: &BoundParams<'t, T>,
    name: &str,
    x: Var<'t, T>,
    stride: usize,
    pad: usize,
) -> Result<Var<'t, T>, NumericsError> {
    x.conv2d(p.var(&format!("{name}.w"))?, stride, pad)?
        .add_channel_bias(p.var(&format!("{name}.b"))?)
}

/// Real-valued frontend features `[B, C, H, W]` from k-space `[B, 1, H, W]`.
pub fn frontend<'t, T: Real>(
    cfg: &NetConfig,
    p: &BoundParams<'t, T>,
    prefix: &str,
    x: ComplexVar<'t, T>,
) -> Result<Var<'t, T>, NumericsError> {
    let y = match cfg.frontend {
        Frontend::Fourier => {
            let kernel = ComplexVar {
                re: p.var(&format!("{prefix}.fourier.re"))?,
                im: p.var(&format!("{prefix}.fourier.im"))?,
            };
            x.conv2d(kernel, 1, cfg.fourier_kernel / 2)?
        }
        Frontend::ImageMagnitude => x,
    };
    Ok(y.ifft2()?.magnitude()?.scale(T::from_f64(cfg.input_scale)))
}

/// Pooled trunk features `[B, widths[1]]` from k-space `[B, 1, H, W]`.
pub fn trunk<'t, T: Real>(
    cfg: &NetConfig,
    p: &BoundParams<'t, T>,
    prefix: &str,
    x: ComplexVar<'t, T>,
) -> Result<Var<'t, T>, NumericsError> {
    let h = frontend(cfg, p, prefix, x)?;
    let h = conv(p, &format!("{prefix}.stem"), h, 2, 1)?.relu();

    let r = conv(p, &format!("{prefix}.s1c1"), h, 1, 1)?.relu();
    let r = conv(p, &format!("{prefix}.s1c2"), r, 1, 1)?;
    let h = r.add(h)?.relu();

    let r = conv(p, &format!("{prefix}.s2c1"), h, 2, 1)?.relu();
    let r = conv(p, &format!("{prefix}.s2c2"), r, 1, 1)?;
    let skip = conv(p, &format!("{prefix}.s2proj"), h, 2, 0)?;
    let h = r.add(skip)?.relu();

    h.global_avg_pool()
}

pub fn mlp<'t, T: Real>(p: &BoundParams<'t, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
    let h = x
        .linear(p.var(&format!("{prefix}.l1.w"))?, p.var(&format!("{prefix}.l1.b"))?)?
        .relu();
    h.linear(p.var(&format!("{prefix}.l2.w"))?, p.var(&format!("{prefix}.l2.b"))?)
}
