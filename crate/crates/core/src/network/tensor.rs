use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor. Activations use the `[batch, channels, height, width]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![S::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected a rank-4 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Slice of batch item `i`.
    pub fn item(&self, i: usize) -> &[S] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [S] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "tensor add shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let (n, _, h, w) = parts[0].dims4();
    for p in parts {
        let (pn, _, ph, pw) = p.dims4();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch(format!("cannot concatenate {:?} with {:?}", parts[0].shape, p.shape)));
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut data = Vec::with_capacity(n * channels * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::from_vec(&[n, channels, h, w], data)
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn split_channels<S: Scalar>(grad: &Tensor<S>, channels: &[usize]) -> Vec<Tensor<S>> {
    let (n, c, h, w) = grad.dims4();
    assert_eq!(channels.iter().sum::<usize>(), c, "split channel count");
    let plane = h * w;
    let mut out: Vec<Vec<S>> = channels.iter().map(|&k| Vec::with_capacity(n * k * plane)).collect();
    for i in 0..n {
        let item = grad.item(i);
        let mut offset = 0;
        for (part, &k) in out.iter_mut().zip(channels) {
            part.extend_from_slice(&item[offset * plane..(offset + k) * plane]);
            offset += k;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &k)| Tensor { shape: vec![n, k, h, w], data: d })
        .collect()
}
