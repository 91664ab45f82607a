use super::{NumericsError, Real};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericsError::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Contiguous slice for the leading index `i` (e.g. one sample of a batch).
    pub fn slab(&self, i: usize) -> &[T] {
        let inner: usize = self.shape[1..].iter().product();
        &self.data[i * inner..(i + 1) * inner]
    }
}

/// Complex tensor stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self, NumericsError> {
        if re.shape() != im.shape() {
            return Err(NumericsError::ShapeMismatch(format!(
                "real part {:?} vs imaginary part {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn from_real(re: Tensor<T>) -> Self {
        let im = Tensor::zeros(re.shape());
        Self { re, im }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, NumericsError> {
        Ok(Self {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn cast<U: Real>(&self) -> ComplexTensor<U> {
        ComplexTensor {
            re: self.re.cast(),
            im: self.im.cast(),
        }
    }

    pub fn magnitude(&self) -> Tensor<T> {
        Tensor {
            shape: self.re.shape.clone(),
            data: self
                .re
                .data
                .iter()
                .zip(&self.im.data)
                .map(|(&a, &b)| (a * a + b * b).sqrt())
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.re.sq_norm() + self.im.sq_norm()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.re
            .data
            .iter()
            .zip(&self.im.data)
            .zip(other.re.data.iter().zip(&other.im.data))
            .map(|((a, b), (c, d))| {
                let dr = a.to_f64() - c.to_f64();
                let di = b.to_f64() - d.to_f64();
                (dr * dr + di * di).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&ComplexTensor<T>]) -> Result<Self, NumericsError> {
        let first = items
            .first()
            .ok_or_else(|| NumericsError::ShapeMismatch("cannot stack zero tensors".into()))?;
        let inner = first.shape().to_vec();
        let mut re = Vec::with_capacity(items.len() * first.len());
        let mut im = Vec::with_capacity(items.len() * first.len());
        for item in items {
            if item.shape() != inner.as_slice() {
                return Err(NumericsError::ShapeMismatch(format!(
                    "stack: {:?} vs {:?}",
                    item.shape(),
                    inner
                )));
            }
            re.extend_from_slice(item.re.data());
            im.extend_from_slice(item.im.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        Ok(Self {
            re: Tensor {
                shape: shape.clone(),
                data: re,
            },
            im: Tensor { shape, data: im },
        })
    }
}
