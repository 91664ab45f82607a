//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance binary.

use kspace::classifier::{net, weighted_nll, Frontend, KspaceNet, NetConfig};
use kspace::numerics::{BoundParams, ComplexTensor, ComplexVar, NumericsError, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

pub type LossFn = dyn for<'t> Fn(&'t Tape<f64>, &BoundParams<'t, f64>) -> Result<Var<'t, f64>, NumericsError>;

pub struct GradCase {
    pub name: String,
    pub params: ParamSet<f64>,
    pub loss: Box<LossFn>,
}

fn case<F>(name: &str, params: &ParamSet<f64>, f: F) -> GradCase
where
    F: for<'t> Fn(&'t Tape<f64>, &BoundParams<'t, f64>) -> Result<Var<'t, f64>, NumericsError> + 'static,
{
    GradCase {
        name: name.to_string(),
        params: params.clone(),
        loss: Box::new(f),
    }
}

fn eval(params: &ParamSet<f64>, f: &LossFn) -> f64 {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    f(&tape, &bound).unwrap().value().data()[0]
}

/// Largest norm-relative error between analytic and central-difference
/// gradients over the parameter tensors, with the offending tensor's name.
pub fn max_rel_error(params: &ParamSet<f64>, f: &LossFn) -> (f64, String) {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = f(&tape, &bound).unwrap();
    let grads = bound.grads(&tape.backward(loss).unwrap());
    let mut worst = (0.0, String::new());
    for (i, (name, t)) in params.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for j in 0..t.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.tensors_mut().nth(i).unwrap().data_mut()[j] += H;
            minus.tensors_mut().nth(i).unwrap().data_mut()[j] -= H;
            numeric[j] = (eval(&plus, f) - eval(&minus, f)) / (2.0 * H);
        }
        let analytic = grads[i].data();
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied())).max(1e-8);
        if diff / scale >= worst.0 {
            worst = (diff / scale, name.to_string());
        }
    }
    worst
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Fixed pseudo-random weights turning any tensor into a scalar with a
/// non-trivial upstream gradient.
fn project(x: Var<'_, f64>, seed: u64) -> Result<Var<'_, f64>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&x.shape(), &mut rng);
    Ok(x.mul_const(w)?.sum())
}

pub fn conv2d() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    ps.insert("x", rand_tensor(&[2, 2, 5, 5], &mut rng));
    ps.insert("w", rand_tensor(&[3, 2, 3, 3], &mut rng));
    ps.insert("b", rand_tensor(&[3], &mut rng));
    [(1, 1), (2, 1), (1, 0)]
        .into_iter()
        .map(|(stride, pad)| {
            case(&format!("conv2d s{stride} p{pad}"), &ps, move |_, p| {
                let y = p.var("x")?.conv2d(p.var("w")?, stride, pad)?.add_channel_bias(p.var("b")?)?;
                project(y, 7)
            })
        })
        .collect()
}

pub fn complex_conv2d() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    for name in ["xr", "xi"] {
        ps.insert(name, rand_tensor(&[1, 1, 4, 4], &mut rng));
    }
    for name in ["kr", "ki"] {
        ps.insert(name, rand_tensor(&[2, 1, 3, 3], &mut rng));
    }
    vec![case("complex conv2d", &ps, |_, p| {
        let x = ComplexVar { re: p.var("xr")?, im: p.var("xi")? };
        let k = ComplexVar { re: p.var("kr")?, im: p.var("ki")? };
        let y = x.conv2d(k, 1, 1)?;
        project(y.re, 3)?.add(project(y.im, 4)?)
    })]
}

pub fn fft() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    ps.insert("re", rand_tensor(&[2, 4, 8], &mut rng));
    ps.insert("im", rand_tensor(&[2, 4, 8], &mut rng));
    // non power-of-two extents exercise the direct transform path
    let mut odd = ParamSet::new();
    odd.insert("re", rand_tensor(&[3, 5], &mut rng));
    odd.insert("im", rand_tensor(&[3, 5], &mut rng));
    vec![
        case("fft2", &ps, |_, p| {
            let y = ComplexVar { re: p.var("re")?, im: p.var("im")? }.fft2()?;
            project(y.re, 5)?.add(project(y.im, 6)?)
        }),
        case("ifft2 magnitude", &ps, |_, p| {
            let m = ComplexVar { re: p.var("re")?, im: p.var("im")? }.ifft2()?.magnitude()?;
            project(m, 8)
        }),
        case("odd-extent fft chain", &odd, |_, p| {
            let x = ComplexVar { re: p.var("re")?, im: p.var("im")? };
            project(x.fft2()?.ifft2()?.fft2()?.magnitude()?, 9)
        }),
    ]
}

pub fn dense() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::new();
    ps.insert("x", rand_tensor(&[3, 2, 3, 3], &mut rng));
    ps.insert("w", rand_tensor(&[2, 4], &mut rng));
    ps.insert("b", rand_tensor(&[4], &mut rng));
    vec![case("relu pool linear", &ps, |_, p| {
        let f = p.var("x")?.relu().global_avg_pool()?;
        project(f.linear(p.var("w")?, p.var("b")?)?.relu(), 10)
    })]
}

pub fn softmax_cross_entropy() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    ps.insert("logits", rand_tensor(&[4, 3], &mut rng).map(|v| 3.0 * v));
    let weights = Tensor::new(vec![4], vec![0.5, 2.0, 0.5, 1.0]).unwrap();
    vec![case("weighted cross-entropy", &ps, move |_, p| {
        let lp = p.var("logits")?.log_softmax(None)?;
        Ok(lp.gather(&[0, 2, 1, 1])?.mul_const(weights.clone())?.mean().scale(-1.0))
    })]
}

pub fn masked_policy_terms() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamSet::new();
    ps.insert("logits", rand_tensor(&[3, 5], &mut rng));
    ps.insert("v", rand_tensor(&[3], &mut rng));
    let legal = vec![
        true, false, true, true, false, //
        false, false, true, false, false, //
        true, true, true, true, true,
    ];
    let old = Tensor::new(vec![3], vec![-1.2, -0.1, -1.7]).unwrap();
    let adv = Tensor::new(vec![3], vec![0.7, -1.3, 0.4]).unwrap();
    vec![case("masked ppo loss", &ps, move |t, p| {
        let lp = p.var("logits")?.log_softmax(Some(legal.clone()))?;
        let new = lp.gather(&[2, 2, 4])?;
        let ratio = new.sub(t.constant(old.clone()))?.exp();
        let s1 = ratio.mul_const(adv.clone())?;
        let s2 = ratio.clamp(0.8, 1.2).mul_const(adv.clone())?;
        let surr = s1.min(s2)?.mean();
        let ent = lp.entropy()?.mean();
        let v = p.var("v")?;
        let vl = v.mul(v)?.mean();
        surr.scale(-1.0).add(vl.scale(0.5))?.sub(ent.scale(0.01))
    })]
}

pub fn reshape_exp_scale() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamSet::new();
    ps.insert("x", rand_tensor(&[2, 6], &mut rng));
    vec![case("reshape exp scale", &ps, |_, p| project(p.var("x")?.reshape(&[3, 4])?.exp().scale(0.3), 11))]
}

pub fn kspace_net() -> Vec<GradCase> {
    [Frontend::Fourier, Frontend::ImageMagnitude]
        .into_iter()
        .map(|frontend| {
            let config = NetConfig {
                frontend,
                fourier_channels: 2,
                fourier_kernel: 3,
                widths: [2, 3],
                hidden: 4,
                input_scale: 4.0,
            };
            let model = KspaceNet::<f64>::init(config.clone(), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x = ComplexTensor::new(rand_tensor(&[2, 1, 16, 16], &mut rng), rand_tensor(&[2, 1, 16, 16], &mut rng)).unwrap();
            case(&format!("kspace-net {frontend:?}"), &model.params, move |tape, p| {
                let h = net::trunk(&config, p, "trunk", tape.complex_constant(x.clone()))?;
                weighted_nll(net::mlp(p, "head", h)?, &[0, 1], [0.7, 2.3])
            })
        })
        .collect()
}

pub fn all_cases() -> Vec<GradCase> {
    [conv2d, complex_conv2d, fft, dense, softmax_cross_entropy, masked_policy_terms, reshape_exp_scale, kspace_net]
        .iter()
        .flat_map(|f| f())
        .collect()
}
