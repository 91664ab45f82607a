//! Tape-based reverse-mode automatic differentiation over coarse tensor ops.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Complex
//! values are carried as a pair of real vars ([`ComplexVar`]); the 2D FFT is a
//! single node holding both output parts stacked along a new leading axis of
//! extent 2, from which [`Var::part`] selects.
//!
//! [`Tape::backward`] may be called once per tape. A second call returns
//! [`NumericsError::BackwardTwice`]; build a fresh tape for the next step.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::fft;
use super::{ComplexTensor, NumericsError, Real, Tensor};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MulConst(usize, Rc<Tensor<T>>),
    Exp(usize),
    Relu(usize),
    Clamp(usize, T, T),
    Min(usize, usize),
    Sum(usize),
    Mean(usize),
    Conv2d { x: usize, w: usize, geom: ConvGeom },
    AddChannelBias(usize, usize),
    MatMul(usize, usize),
    AddRowBias(usize, usize),
    GlobalAvgPool(usize),
    Fft2 { re: usize, im: usize, inverse: bool },
    Part(usize, usize),
    Magnitude(usize, usize),
    LogSoftmax(usize),
    Gather(usize, Rc<Vec<usize>>),
    Entropy(usize),
    Reshape(usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Complex value as a pair of real vars of equal shape.
#[derive(Debug, Clone, Copy)]
pub struct ComplexVar<'t, T: Real> {
    pub re: Var<'t, T>,
    pub im: Var<'t, T>,
}

/// Gradients produced by [`Tape::backward`], indexed by var.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape if it did not influence the loss.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::ShapeMismatch(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(64)),
            consumed: Cell::new(false),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn val(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn complex_constant(&self, value: ComplexTensor<T>) -> ComplexVar<'_, T> {
        ComplexVar {
            re: self.constant(value.re),
            im: self.constant(value.im),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, NumericsError> {
        if self.consumed.replace(true) {
            return Err(NumericsError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::ONE));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], id: usize, g: Tensor<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("zip_map operands share a shape")
}

fn backprop<T: Real>(
    nodes: &[Node<T>],
    id: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<(), NumericsError> {
    let node = &nodes[id];
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let va = &nodes[*a].value;
            let vb = &nodes[*b].value;
            accumulate(grads, nodes, *a, zip_map(g, vb, |x, y| x * y));
            accumulate(grads, nodes, *b, zip_map(g, va, |x, y| x * y));
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, nodes, *a, g.map(|v| v * c));
        }
        Op::MulConst(a, c) => accumulate(grads, nodes, *a, zip_map(g, c, |x, y| x * y)),
        Op::Exp(a) => accumulate(grads, nodes, *a, zip_map(g, out, |x, y| x * y)),
        Op::Relu(a) => {
            let va = &nodes[*a].value;
            accumulate(
                grads,
                nodes,
                *a,
                zip_map(g, va, |x, y| if y > T::ZERO { x } else { T::ZERO }),
            );
        }
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            let va = &nodes[*a].value;
            accumulate(
                grads,
                nodes,
                *a,
                zip_map(g, va, |x, y| if y >= lo && y <= hi { x } else { T::ZERO }),
            );
        }
        Op::Min(a, b) => {
            let va = &nodes[*a].value;
            let vb = &nodes[*b].value;
            let mut ga = g.clone();
            let mut gb = g.clone();
            for i in 0..g.len() {
                if va.data()[i] <= vb.data()[i] {
                    gb.data_mut()[i] = T::ZERO;
                } else {
                    ga.data_mut()[i] = T::ZERO;
                }
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Sum(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            accumulate(grads, nodes, *a, Tensor::full(&shape, g.data()[0]));
        }
        Op::Mean(a) => {
            let va = &nodes[*a].value;
            let s = g.data()[0] / T::from_f64(va.len() as f64);
            accumulate(grads, nodes, *a, Tensor::full(va.shape(), s));
        }
        Op::Conv2d { x, w, geom } => {
            let need_dx = nodes[*x].requires_grad;
            let need_dw = nodes[*w].requires_grad;
            let (dx, dw) = conv::backward(
                geom,
                nodes[*x].value.data(),
                nodes[*w].value.data(),
                g.data(),
                need_dx,
                need_dw,
            );
            if let Some(dx) = dx {
                accumulate(grads, nodes, *x, Tensor::new(nodes[*x].value.shape().to_vec(), dx)?);
            }
            if let Some(dw) = dw {
                accumulate(grads, nodes, *w, Tensor::new(nodes[*w].value.shape().to_vec(), dw)?);
            }
        }
        Op::AddChannelBias(x, b) => {
            let shape = g.shape();
            let (n, c) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let mut db = vec![T::ZERO; c];
            for i in 0..n {
                for (ch, d) in db.iter_mut().enumerate() {
                    let start = (i * c + ch) * inner;
                    *d += g.data()[start..start + inner].iter().copied().sum::<T>();
                }
            }
            accumulate(grads, nodes, *x, g.clone());
            accumulate(grads, nodes, *b, Tensor::new(vec![c], db)?);
        }
        Op::MatMul(a, b) => {
            let va = &nodes[*a].value;
            let vb = &nodes[*b].value;
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if nodes[*a].requires_grad {
                // dA = dY · Bᵀ
                let mut da = vec![T::ZERO; m * k];
                T::gemm(m, n, k, T::ONE, g.data(), (n as isize, 1), vb.data(), (1, n as isize), T::ZERO, &mut da, (k as isize, 1));
                accumulate(grads, nodes, *a, Tensor::new(vec![m, k], da)?);
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ · dY
                let mut db = vec![T::ZERO; k * n];
                T::gemm(k, m, n, T::ONE, va.data(), (1, k as isize), g.data(), (n as isize, 1), T::ZERO, &mut db, (n as isize, 1));
                accumulate(grads, nodes, *b, Tensor::new(vec![k, n], db)?);
            }
        }
        Op::AddRowBias(a, b) => {
            let n = g.shape()[1];
            let mut db = vec![T::ZERO; n];
            for row in g.data().chunks(n) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, Tensor::new(vec![n], db)?);
        }
        Op::GlobalAvgPool(x) => {
            let shape = nodes[*x].value.shape().to_vec();
            let inner: usize = shape[2..].iter().product();
            let scale = T::from_f64(1.0 / inner as f64);
            let mut dx = Vec::with_capacity(shape.iter().product());
            for &v in g.data() {
                dx.extend(std::iter::repeat_n(v * scale, inner));
            }
            accumulate(grads, nodes, *x, Tensor::new(shape, dx)?);
        }
        Op::Fft2 { re, im, inverse } => {
            // Forward Y = F·X (F unnormalized DFT): dX = conj(F)·dY = N·ifft2(dY).
            // Inverse Y = conj(F)·X / N:               dX = F·dY / N = fft2(dY) / N.
            let half = g.len() / 2;
            let shape = nodes[*re].value.shape().to_vec();
            let h = shape[shape.len() - 2];
            let w = shape[shape.len() - 1];
            let n = T::from_f64((h * w) as f64);
            let mut gre = g.data()[..half].to_vec();
            let mut gim = g.data()[half..].to_vec();
            fft::transform_planes(&mut gre, &mut gim, h, w, !*inverse);
            if *inverse {
                let s = T::ONE / n;
                gre.iter_mut().chain(gim.iter_mut()).for_each(|v| *v *= s);
            } else {
                gre.iter_mut().chain(gim.iter_mut()).for_each(|v| *v *= n);
            }
            accumulate(grads, nodes, *re, Tensor::new(shape.clone(), gre)?);
            accumulate(grads, nodes, *im, Tensor::new(shape, gim)?);
        }
        Op::Part(a, part) => {
            let src_shape = nodes[*a].value.shape().to_vec();
            let half = g.len();
            let mut full = vec![T::ZERO; 2 * half];
            full[part * half..(part + 1) * half].copy_from_slice(g.data());
            accumulate(grads, nodes, *a, Tensor::new(src_shape, full)?);
        }
        Op::Magnitude(re, im) => {
            let vr = &nodes[*re].value;
            let vi = &nodes[*im].value;
            let mut gr = Vec::with_capacity(g.len());
            let mut gi = Vec::with_capacity(g.len());
            for i in 0..g.len() {
                let m = out.data()[i];
                if m > T::ZERO {
                    gr.push(g.data()[i] * vr.data()[i] / m);
                    gi.push(g.data()[i] * vi.data()[i] / m);
                } else {
                    gr.push(T::ZERO);
                    gi.push(T::ZERO);
                }
            }
            accumulate(grads, nodes, *re, Tensor::new(g.shape().to_vec(), gr)?);
            accumulate(grads, nodes, *im, Tensor::new(g.shape().to_vec(), gi)?);
        }
        Op::LogSoftmax(a) => {
            // dx_j = g_j − softmax_j · Σ_i g_i, over finite (legal) entries
            let k = out.shape()[1];
            let mut dx = vec![T::ZERO; out.len()];
            for ((orow, grow), drow) in out.data().chunks(k).zip(g.data().chunks(k)).zip(dx.chunks_mut(k)) {
                let gsum: T = orow
                    .iter()
                    .zip(grow)
                    .filter(|(l, _)| l.is_finite())
                    .map(|(_, &gv)| gv)
                    .sum();
                for j in 0..k {
                    if orow[j].is_finite() {
                        drow[j] = grow[j] - orow[j].exp() * gsum;
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(out.shape().to_vec(), dx)?);
        }
        Op::Gather(a, idx) => {
            let src_shape = nodes[*a].value.shape().to_vec();
            let k = src_shape[1];
            let mut dx = vec![T::ZERO; src_shape[0] * k];
            for (row, (&j, &gv)) in idx.iter().zip(g.data()).enumerate() {
                dx[row * k + j] = gv;
            }
            accumulate(grads, nodes, *a, Tensor::new(src_shape, dx)?);
        }
        Op::Entropy(a) => {
            // H = −Σ e^l · l  ⇒  dH/dl_j = −e^{l_j}(l_j + 1)
            let vl = &nodes[*a].value;
            let k = vl.shape()[1];
            let mut dx = vec![T::ZERO; vl.len()];
            for (row, (lrow, drow)) in vl.data().chunks(k).zip(dx.chunks_mut(k)).enumerate() {
                for j in 0..k {
                    if lrow[j].is_finite() {
                        drow[j] = -g.data()[row] * lrow[j].exp() * (lrow[j] + T::ONE);
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(vl.shape().to_vec(), dx)?);
        }
        Op::Reshape(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            accumulate(grads, nodes, *a, g.clone().reshape(&shape)?);
        }
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.tape.rg(self.id);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: Var<'t, T>, what: &str) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>), NumericsError> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let (a, b) = self.same_shape(other, "add")?;
        Ok(self.binary(other, zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let (a, b) = self.same_shape(other, "sub")?;
        Ok(self.binary(other, zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let (a, b) = self.same_shape(other, "mul")?;
        Ok(self.binary(other, zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id)))
    }

    pub fn min(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let (a, b) = self.same_shape(other, "min")?;
        Ok(self.binary(
            other,
            zip_map(&a, &b, |x, y| if x <= y { x } else { y }),
            Op::Min(self.id, other.id),
        ))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(self.value().map(|v| v * c), Op::Scale(self.id, c))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&self, c: Tensor<T>) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if a.shape() != c.shape() {
            return Err(shape_err(format!("mul_const: {:?} vs {:?}", a.shape(), c.shape())));
        }
        let v = zip_map(&a, &c, |x, y| x * y);
        Ok(self.unary(v, Op::MulConst(self.id, Rc::new(c))))
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(self.value().map(|v| v.exp()), Op::Exp(self.id))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(
            self.value().map(|v| if v > T::ZERO { v } else { T::ZERO }),
            Op::Relu(self.id),
        )
    }

    pub fn clamp(&self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(self.value().map(|v| v.max(lo).min(hi)), Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(&self) -> Var<'t, T> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let v = self.value();
        let m = v.sum() / T::from_f64(v.len() as f64);
        self.unary(Tensor::scalar(m), Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, NumericsError> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Batched 2D cross-correlation, `self: [N,C,H,W]`, `kernel: [O,C,k,k]`.
    pub fn conv2d(&self, kernel: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        let w = kernel.value();
        let geom = ConvGeom::new(x.shape(), w.shape(), stride, padding)?;
        let out = Tensor::new(geom.out_shape(), conv::forward(&geom, x.data(), w.data()))?;
        Ok(self.binary(kernel, out, Op::Conv2d { x: self.id, w: kernel.id, geom }))
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N,C,...]` tensor.
    pub fn add_channel_bias(&self, bias: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        let b = bias.value();
        let shape = x.shape();
        if shape.len() < 2 || b.shape() != [shape[1]] {
            return Err(shape_err(format!("channel bias {:?} for input {:?}", b.shape(), shape)));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut out = (*x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[(i / inner) % c];
        }
        Ok(self.binary(bias, out, Op::AddChannelBias(self.id, bias.id)))
    }

    /// `[M,K] · [K,N]`.
    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        let b = other.value();
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err(format!("matmul {:?} · {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![T::ZERO; m * n];
        T::gemm(m, k, n, T::ONE, a.data(), (k as isize, 1), b.data(), (n as isize, 1), T::ZERO, &mut out, (n as isize, 1));
        Ok(self.binary(other, Tensor::new(vec![m, n], out)?, Op::MatMul(self.id, other.id)))
    }

    /// Adds `bias[j]` to column `j` of an `[M,N]` matrix.
    pub fn add_row_bias(&self, bias: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        let b = bias.value();
        if a.shape().len() != 2 || b.shape() != [a.shape()[1]] {
            return Err(shape_err(format!("row bias {:?} for {:?}", b.shape(), a.shape())));
        }
        let n = a.shape()[1];
        let mut out = (*a).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        Ok(self.binary(bias, out, Op::AddRowBias(self.id, bias.id)))
    }

    /// Affine layer `self · weight + bias`.
    pub fn linear(&self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.matmul(weight)?.add_row_bias(bias)
    }

    /// `[N,C,H,W] → [N,C]` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        let shape = x.shape();
        if shape.len() < 3 {
            return Err(shape_err(format!("global_avg_pool on {shape:?}")));
        }
        let inner: usize = shape[2..].iter().product();
        let scale = T::from_f64(1.0 / inner as f64);
        let data = x.data().chunks(inner).map(|c| c.iter().copied().sum::<T>() * scale).collect();
        Ok(self.unary(Tensor::new(vec![shape[0], shape[1]], data)?, Op::GlobalAvgPool(self.id)))
    }

    /// Selects part `0` or `1` of a tensor whose leading axis has extent 2.
    pub fn part(&self, part: usize) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        if x.shape().first() != Some(&2) || part > 1 {
            return Err(shape_err(format!("part {part} of {:?}", x.shape())));
        }
        let half = x.len() / 2;
        let v = Tensor::new(x.shape()[1..].to_vec(), x.data()[part * half..(part + 1) * half].to_vec())?;
        Ok(self.unary(v, Op::Part(self.id, part)))
    }

    /// Row-wise log-softmax of `[N,K]` logits. Entries where `legal` is false
    /// get `-inf` and receive no gradient; `legal` is row-major `[N,K]`.
    pub fn log_softmax(&self, legal: Option<Vec<bool>>) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        if x.shape().len() != 2 {
            return Err(shape_err(format!("log_softmax expects [N,K], got {:?}", x.shape())));
        }
        let k = x.shape()[1];
        if let Some(l) = &legal {
            if l.len() != x.len() {
                return Err(shape_err(format!("legal mask of {} for {:?}", l.len(), x.shape())));
            }
        }
        let mut out = vec![T::neg_infinity(); x.len()];
        for (row, (xr, or)) in x.data().chunks(k).zip(out.chunks_mut(k)).enumerate() {
            let ok = |j: usize| legal.as_ref().is_none_or(|l| l[row * k + j]);
            let mut mx = T::neg_infinity();
            for j in (0..k).filter(|&j| ok(j)) {
                mx = mx.max(xr[j]);
            }
            if !mx.is_finite() {
                return Err(NumericsError::InvalidArgument(format!("row {row} has no legal entries")));
            }
            let z: T = (0..k).filter(|&j| ok(j)).map(|j| (xr[j] - mx).exp()).sum();
            let lz = mx + z.ln();
            for j in (0..k).filter(|&j| ok(j)) {
                or[j] = xr[j] - lz;
            }
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.unary(v, Op::LogSoftmax(self.id)))
    }

    /// `[N,K] → [N]`, picking column `idx[n]` of row `n`.
    pub fn gather(&self, idx: &[usize]) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        if x.shape().len() != 2 || x.shape()[0] != idx.len() || idx.iter().any(|&j| j >= x.shape()[1]) {
            return Err(shape_err(format!("gather {} indices from {:?}", idx.len(), x.shape())));
        }
        let k = x.shape()[1];
        let data = idx.iter().enumerate().map(|(r, &j)| x.data()[r * k + j]).collect();
        Ok(self.unary(Tensor::new(vec![idx.len()], data)?, Op::Gather(self.id, Rc::new(idx.to_vec()))))
    }

    /// Row entropies `[N]` of a log-probability matrix `[N,K]` (from
    /// [`Var::log_softmax`]); `-inf` entries contribute zero.
    pub fn entropy(&self) -> Result<Var<'t, T>, NumericsError> {
        let x = self.value();
        if x.shape().len() != 2 {
            return Err(shape_err(format!("entropy expects [N,K], got {:?}", x.shape())));
        }
        let k = x.shape()[1];
        let data = x
            .data()
            .chunks(k)
            .map(|r| -r.iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<T>())
            .collect();
        Ok(self.unary(Tensor::new(vec![x.shape()[0]], data)?, Op::Entropy(self.id)))
    }
}

impl<'t, T: Real> ComplexVar<'t, T> {
    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    fn transform(&self, inverse: bool) -> Result<ComplexVar<'t, T>, NumericsError> {
        let re = self.re.value();
        let im = self.im.value();
        if re.shape() != im.shape() || re.shape().len() < 2 {
            return Err(shape_err(format!("fft parts {:?} / {:?}", re.shape(), im.shape())));
        }
        let x = ComplexTensor::new((*re).clone(), (*im).clone())?;
        let y = if inverse { fft::ifft2(&x)? } else { fft::fft2(&x)? };
        let mut shape = vec![2];
        shape.extend_from_slice(re.shape());
        let mut data = y.re.into_data();
        data.extend(y.im.into_data());
        let stacked = self.re.binary(
            self.im,
            Tensor::new(shape, data)?,
            Op::Fft2 {
                re: self.re.id,
                im: self.im.id,
                inverse,
            },
        );
        Ok(ComplexVar {
            re: stacked.part(0)?,
            im: stacked.part(1)?,
        })
    }

    pub fn fft2(&self) -> Result<ComplexVar<'t, T>, NumericsError> {
        self.transform(false)
    }

    pub fn ifft2(&self) -> Result<ComplexVar<'t, T>, NumericsError> {
        self.transform(true)
    }

    /// Elementwise `|z|`; the gradient at `z = 0` is taken as zero.
    pub fn magnitude(&self) -> Result<Var<'t, T>, NumericsError> {
        let re = self.re.value();
        let im = self.im.value();
        if re.shape() != im.shape() {
            return Err(shape_err("magnitude parts differ".into()));
        }
        let v = zip_map(&re, &im, |a, b| (a * a + b * b).sqrt());
        Ok(self.re.binary(self.im, v, Op::Magnitude(self.re.id, self.im.id)))
    }

    /// Complex cross-correlation composed from four real convolutions.
    pub fn conv2d(&self, kernel: ComplexVar<'t, T>, stride: usize, padding: usize) -> Result<ComplexVar<'t, T>, NumericsError> {
        let ac = self.re.conv2d(kernel.re, stride, padding)?;
        let bd = self.im.conv2d(kernel.im, stride, padding)?;
        let ad = self.re.conv2d(kernel.im, stride, padding)?;
        let bc = self.im.conv2d(kernel.re, stride, padding)?;
        Ok(ComplexVar {
            re: ac.sub(bd)?,
            im: ad.add(bc)?,
        })
    }
}
