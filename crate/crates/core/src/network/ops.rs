//! Layer primitives with explicit backward passes.
//!
//! Convolutions are lowered to GEMM through `im2col` / `col2im`. All
//! activations use the `[batch, channels, height, width]` layout.

use super::scalar::matmul;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Batch-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// ELU alpha.
pub const ELU_ALPHA: f64 = 1.0;

/// Spatial geometry of a convolution, from the input plane's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `(in + 2 pad - kernel) / stride + 1`, or `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// `(in - 1) * stride - 2 pad + kernel`, or `None` when that is not positive.
pub fn transposed_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * pad).filter(|&s| s > 0)
}

impl ConvGeometry {
    pub fn new(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let (Some(out_h), Some(out_w)) =
            (conv_output_size(in_h, kernel, stride, pad), conv_output_size(in_w, kernel, stride, pad))
        else {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kernel} (stride {stride}, pad {pad}) does not fit a {in_h}x{in_w} input"
            )));
        };
        Ok(Self { channels, in_h, in_w, kernel, stride, pad, out_h, out_w })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds an input plane stack `[C, H, W]` into `[C*k*k, out_h*out_w]`.
pub fn im2col<S: Scalar>(input: &[S], g: &ConvGeometry, col: &mut [S]) {
    debug_assert_eq!(input.len(), g.channels * g.in_h * g.in_w);
    debug_assert_eq!(col.len(), g.col_rows() * g.col_cols());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * g.col_cols()..(row + 1) * g.col_cols()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix >= 0 && ix < g.in_w as isize { src[ix as usize] } else { S::zero() };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `[C, H, W]`, accumulating.
pub fn col2im<S: Scalar>(col: &[S], g: &ConvGeometry, output: &mut [S]) {
    debug_assert_eq!(output.len(), g.channels * g.in_h * g.in_w);
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut output[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * g.col_cols()..(row + 1) * g.col_cols()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_weights<S: Scalar>(weights: &Tensor<S>, in_channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    if weights.shape().len() != 4 || weights.shape()[2] != weights.shape()[3] {
        return Err(Error::ShapeMismatch(format!("{what} weights must be [a, b, k, k], got {:?}", weights.shape())));
    }
    let (a, b, k, _) = weights.dims4();
    let expect_in = if what == "conv2d" { b } else { a };
    if expect_in != in_channels {
        return Err(Error::ShapeMismatch(format!(
            "{what} weights {:?} expect {expect_in} input channels, input has {in_channels}",
            weights.shape()
        )));
    }
    Ok((a, b, k))
}

fn check_bias<S: Scalar>(bias: Option<&[S]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => {
            Err(Error::ShapeMismatch(format!("bias has {} entries for {channels} channels", b.len())))
        }
        _ => Ok(()),
    }
}

fn add_bias<S: Scalar>(out: &mut Tensor<S>, bias: Option<&[S]>) {
    let Some(bias) = bias else { return };
    let (n, c, h, w) = out.dims4();
    for i in 0..n {
        let item = out.item_mut(i);
        for (ch, &b) in bias.iter().enumerate().take(c) {
            item[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<S: Scalar>(grad_out: &Tensor<S>) -> Vec<S> {
    let (n, c, h, w) = grad_out.dims4();
    let mut g = vec![S::zero(); c];
    for i in 0..n {
        let item = grad_out.item(i);
        for (ch, gc) in g.iter_mut().enumerate() {
            *gc += item[ch * h * w..(ch + 1) * h * w].iter().copied().sum();
        }
    }
    g
}

/// Cross-correlation with weights `[out, in, k, k]`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: Option<&[S]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4();
    let (out_c, _, k) = check_weights(weights, c, "conv2d")?;
    check_bias(bias, out_c)?;
    let g = ConvGeometry::new(c, h, w, k, stride, pad)?;
    let mut out = Tensor::zeros(&[n, out_c, g.out_h, g.out_w]);
    let mut col = vec![S::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        im2col(input.item(i), &g, &mut col);
        matmul(out.item_mut(i), weights.data(), &col, out_c, g.col_rows(), g.col_cols(), false, false, false);
    }
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let (n, c, h, w) = input.dims4();
    let (out_c, _, k) = check_weights(weights, c, "conv2d")?;
    let g = ConvGeometry::new(c, h, w, k, stride, pad)?;
    if grad_out.shape() != [n, out_c, g.out_h, g.out_w] {
        return Err(Error::ShapeMismatch(format!("conv2d upstream gradient has shape {:?}", grad_out.shape())));
    }
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = vec![S::zero(); weights.len()];
    let mut col = vec![S::zero(); g.col_rows() * g.col_cols()];
    let mut dcol = vec![S::zero(); col.len()];
    for i in 0..n {
        im2col(input.item(i), &g, &mut col);
        matmul(&mut grad_w, grad_out.item(i), &col, out_c, g.col_cols(), g.col_rows(), false, true, true);
        matmul(&mut dcol, weights.data(), grad_out.item(i), g.col_rows(), out_c, g.col_cols(), true, false, false);
        col2im(&dcol, &g, grad_in.item_mut(i));
    }
    Ok((grad_in, grad_w, bias_grad(grad_out)))
}

/// Transposed convolution with weights `[in, out, k, k]`; the adjoint of
/// [`conv2d`] with the same weights, plus bias.
pub fn transposed_conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: Option<&[S]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4();
    let (_, out_c, k) = check_weights(weights, c, "transposed_conv2d")?;
    check_bias(bias, out_c)?;
    let (Some(oh), Some(ow)) = (transposed_output_size(h, k, stride, pad), transposed_output_size(w, k, stride, pad))
    else {
        return Err(Error::ShapeMismatch(format!("transposed conv output for {h}x{w} input is empty")));
    };
    // The geometry of the forward convolution this is the adjoint of.
    let g = ConvGeometry::new(out_c, oh, ow, k, stride, pad)?;
    if (g.out_h, g.out_w) != (h, w) {
        return Err(Error::ShapeMismatch(format!("{h}x{w} input is not reachable with stride {stride}, pad {pad}")));
    }
    let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
    let mut col = vec![S::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        matmul(&mut col, weights.data(), input.item(i), g.col_rows(), c, g.col_cols(), true, false, false);
        col2im(&col, &g, out.item_mut(i));
    }
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`transposed_conv2d`]: `(d_input, d_weights, d_bias)`.
pub fn transposed_conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let (n, c, h, w) = input.dims4();
    let (_, out_c, k) = check_weights(weights, c, "transposed_conv2d")?;
    let (_, gc, oh, ow) = grad_out.dims4();
    if grad_out.shape()[0] != n || gc != out_c {
        return Err(Error::ShapeMismatch(format!("transposed conv upstream gradient has shape {:?}", grad_out.shape())));
    }
    let g = ConvGeometry::new(out_c, oh, ow, k, stride, pad)?;
    if (g.out_h, g.out_w) != (h, w) {
        return Err(Error::ShapeMismatch("transposed conv gradient does not match the input".into()));
    }
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = vec![S::zero(); weights.len()];
    let mut dcol = vec![S::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        im2col(grad_out.item(i), &g, &mut dcol);
        matmul(grad_in.item_mut(i), weights.data(), &dcol, c, g.col_rows(), g.col_cols(), false, false, false);
        matmul(&mut grad_w, input.item(i), &dcol, c, g.col_cols(), g.col_rows(), false, true, true);
    }
    Ok((grad_in, grad_w, bias_grad(grad_out)))
}

pub fn elu<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        x
    } else {
        S::from_f64(ELU_ALPHA) * (x.exp() - S::one())
    }
}

/// ELU derivative expressed through its output.
pub(crate) fn elu_grad_from_output<S: Scalar>(y: S) -> S {
    if y >= S::zero() {
        S::one()
    } else {
        y + S::from_f64(ELU_ALPHA)
    }
}

/// Normalization statistics source for [`norm_act`].
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, S> {
    /// Per-channel statistics of the current batch.
    Train,
    /// Stored running statistics.
    Eval { mean: &'a [S], var: &'a [S] },
}

/// Intermediates of [`norm_act`] needed for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
    pub output: Vec<S>,
    pub train: bool,
}

/// Per-channel standardization, affine `gamma * x + beta`, then ELU.
pub fn norm_act<S: Scalar>(
    input: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    mode: NormMode<'_, S>,
) -> Result<(Tensor<S>, NormCache<S>)> {
    let (n, c, h, w) = input.dims4();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch(format!("norm parameters sized {}/{} for {c} channels", gamma.len(), beta.len())));
    }
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::ShapeMismatch("normalization over a zero-size channel".into()));
    }
    let eps = S::from_f64(NORM_EPS);
    let inv_count = S::one() / S::from_f64(count as f64);
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    let train = matches!(mode, NormMode::Train);
    match mode {
        NormMode::Train => {
            for ch in 0..c {
                let chan = |i: usize| &input.item(i)[ch * plane..(ch + 1) * plane];
                let m = (0..n).flat_map(chan).copied().sum::<S>() * inv_count;
                let v = (0..n).flat_map(chan).map(|&x| (x - m) * (x - m)).sum::<S>() * inv_count;
                mean[ch] = m;
                var[ch] = v;
            }
        }
        NormMode::Eval { mean: rm, var: rv } => {
            if rm.len() != c || rv.len() != c {
                return Err(Error::ShapeMismatch("running statistics do not match channel count".into()));
            }
            mean.copy_from_slice(rm);
            var.copy_from_slice(rv);
        }
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![S::zero(); input.len()];
    let mut output = vec![S::zero(); input.len()];
    for i in 0..n {
        let item = input.item(i);
        let base = i * c * plane;
        for ch in 0..c {
            for p in 0..plane {
                let idx = ch * plane + p;
                let xh = (item[idx] - mean[ch]) * inv_std[ch];
                xhat[base + idx] = xh;
                output[base + idx] = elu(gamma[ch] * xh + beta[ch]);
            }
        }
    }
    let out = Tensor::from_vec(input.shape(), output.clone())?;
    Ok((out, NormCache { xhat, inv_std, batch_mean: mean, batch_var: var, output, train }))
}

/// Gradients of [`norm_act`]: `(d_input, d_gamma, d_beta)`.
pub fn norm_act_backward<S: Scalar>(
    cache: &NormCache<S>,
    gamma: &[S],
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let (n, c, h, w) = grad_out.dims4();
    let plane = h * w;
    let count = S::from_f64((n * plane) as f64);
    // Gradient w.r.t. the affine output, then w.r.t. xhat.
    let dy: Vec<S> = grad_out
        .data()
        .iter()
        .zip(&cache.output)
        .map(|(&g, &y)| g * elu_grad_from_output(y))
        .collect();
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    let mut sum_dxhat = vec![S::zero(); c];
    let mut sum_dxhat_xhat = vec![S::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            for p in 0..plane {
                let idx = (i * c + ch) * plane + p;
                dgamma[ch] += dy[idx] * cache.xhat[idx];
                dbeta[ch] += dy[idx];
                let dxh = dy[idx] * gamma[ch];
                sum_dxhat[ch] += dxh;
                sum_dxhat_xhat[ch] += dxh * cache.xhat[idx];
            }
        }
    }
    let mut dx = vec![S::zero(); dy.len()];
    for i in 0..n {
        for ch in 0..c {
            for p in 0..plane {
                let idx = (i * c + ch) * plane + p;
                let dxh = dy[idx] * gamma[ch];
                dx[idx] = if cache.train {
                    cache.inv_std[ch] / count
                        * (count * dxh - sum_dxhat[ch] - cache.xhat[idx] * sum_dxhat_xhat[ch])
                } else {
                    dxh * cache.inv_std[ch]
                };
            }
        }
    }
    (Tensor::from_vec(grad_out.shape(), dx).expect("same shape"), dgamma, dbeta)
}

/// Fully connected layer: `[n, in] -> [n, out]` with weights `[out, in]`.
pub fn dense<S: Scalar>(input: &[S], batch: usize, weights: &[S], bias: &[S]) -> Vec<S> {
    let out_dim = bias.len();
    let in_dim = weights.len() / out_dim;
    let mut out = vec![S::zero(); batch * out_dim];
    matmul(&mut out, input, weights, batch, in_dim, out_dim, false, true, false);
    for row in out.chunks_exact_mut(out_dim) {
        row.iter_mut().zip(bias).for_each(|(v, &b)| *v += b);
    }
    out
}

/// Gradients of [`dense`]: `(d_input, d_weights, d_bias)`.
pub fn dense_backward<S: Scalar>(input: &[S], batch: usize, weights: &[S], grad_out: &[S]) -> (Vec<S>, Vec<S>, Vec<S>) {
    let out_dim = grad_out.len() / batch;
    let in_dim = weights.len() / out_dim;
    let mut grad_in = vec![S::zero(); batch * in_dim];
    matmul(&mut grad_in, grad_out, weights, batch, out_dim, in_dim, false, false, false);
    let mut grad_w = vec![S::zero(); weights.len()];
    matmul(&mut grad_w, grad_out, input, out_dim, batch, in_dim, true, false, false);
    let mut grad_b = vec![S::zero(); out_dim];
    for row in grad_out.chunks_exact(out_dim) {
        grad_b.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
    }
    (grad_in, grad_w, grad_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Direct-summation convolution, independent of im2col.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4();
        let (o, _, k, _) = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &w, Some(&[0.0; 3]), 1, 0).unwrap(), x);
    }

    #[test]
    fn all_ones_center_is_nine() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 2, 4, 4], &mut rng);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &w, Some(&[0.5, -1.0, 2.0]), 1, 1).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, [0.5, -1.0, 2.0][i / 16]);
        }
        let z = transposed_conv2d(&Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[2, 3, 4, 4]), Some(&[1.0, 2.0, 3.0]), 2, 1).unwrap();
        assert_eq!(z.shape(), &[1, 3, 8, 8]);
        assert!(z.data().iter().enumerate().all(|(i, &v)| v == [1.0, 2.0, 3.0][i / 64]));
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad, k) in [(1, 0, 3), (2, 1, 4), (2, 0, 3), (3, 2, 5)] {
            let x = random(&[2, 3, 9, 8], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let got = conv2d(&x, &w, None, stride, pad).unwrap();
            let expect = conv_oracle(&x, &w, stride, pad);
            assert_eq!(got.shape(), expect.shape());
            assert!(got.data().iter().zip(expect.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn transposed_shape_contract() {
        let x = Tensor::<f64>::zeros(&[1, 4, 8, 8]);
        let w = Tensor::zeros(&[4, 2, 4, 4]);
        assert_eq!(transposed_conv2d(&x, &w, None, 2, 1).unwrap().shape(), &[1, 2, 16, 16]);
        assert!(transposed_conv2d(&x, &Tensor::zeros(&[3, 2, 4, 4]), None, 2, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[2, 3, 3, 3]), None, 1, 1).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (stride, pad, k, size) in [(2, 1, 4, 8), (1, 1, 3, 5), (2, 0, 2, 6), (3, 1, 5, 10)] {
            let x = random(&[2, 3, size, size], &mut rng);
            let w = random(&[5, 3, k, k], &mut rng);
            let y_shape = conv2d(&x, &w, None, stride, pad).unwrap().shape().to_vec();
            let y = random(&y_shape, &mut rng);
            let lhs = dot(&conv2d(&x, &w, None, stride, pad).unwrap(), &y);
            let back = transposed_conv2d(&y, &w, None, stride, pad);
            // Some geometries drop trailing input rows; then only the backward op is an exact adjoint.
            let (gx, _, _) = conv2d_backward(&x, &w, &y, stride, pad).unwrap();
            assert!((lhs - dot(&x, &gx)).abs() < 1e-10, "backward adjoint");
            if let Ok(back) = back {
                if back.shape() == x.shape() {
                    assert!((lhs - dot(&x, &back)).abs() < 1e-10, "<conv x, y> = <x, deconv y>");
                }
            }
        }
    }

    fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += eps;
                let up = f(&p);
                p[i] -= 2.0 * eps;
                (up - f(&p)) / (2.0 * eps)
            })
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_and_deconv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 2, 6, 6], &mut rng);
        let w = random(&[3, 2, 4, 4], &mut rng);
        let up = random(&[2, 3, 3, 3], &mut rng);
        let loss = |xv: &[f64], wv: &[f64]| {
            let xt = Tensor::from_vec(x.shape(), xv.to_vec()).unwrap();
            let wt = Tensor::from_vec(w.shape(), wv.to_vec()).unwrap();
            dot(&conv2d(&xt, &wt, Some(&[0.1, 0.2, 0.3]), 2, 1).unwrap(), &up)
        };
        let (gx, gw, gb) = conv2d_backward(&x, &w, &up, 2, 1).unwrap();
        close(gx.data(), &numeric_grad(&|v| loss(v, w.data()), x.data()));
        close(&gw, &numeric_grad(&|v| loss(x.data(), v), w.data()));
        let sums: Vec<f64> = (0..3).map(|c| (0..2).map(|i| up.item(i)[c * 9..(c + 1) * 9].iter().sum::<f64>()).sum()).collect();
        close(&gb, &sums);

        let xd = random(&[2, 3, 3, 3], &mut rng);
        let wd = random(&[3, 2, 4, 4], &mut rng);
        let upd = random(&[2, 2, 6, 6], &mut rng);
        let lossd = |xv: &[f64], wv: &[f64]| {
            let xt = Tensor::from_vec(xd.shape(), xv.to_vec()).unwrap();
            let wt = Tensor::from_vec(wd.shape(), wv.to_vec()).unwrap();
            dot(&transposed_conv2d(&xt, &wt, None, 2, 1).unwrap(), &upd)
        };
        let (gx, gw, _) = transposed_conv2d_backward(&xd, &wd, &upd, 2, 1).unwrap();
        close(gx.data(), &numeric_grad(&|v| lossd(v, wd.data()), xd.data()));
        close(&gw, &numeric_grad(&|v| lossd(xd.data(), v), wd.data()));
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0f64), 0.0);
        assert!((elu(-1.0f64) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu(2.5f64), 2.5);
    }

    #[test]
    fn train_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[4, 3, 5, 5], &mut rng);
        let (_, cache) = norm_act(&x, &[1.0; 3], &[0.0; 3], NormMode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|i| cache.xhat[(i * 3 + ch) * 25..(i * 3 + ch + 1) * 25].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-3 && (v - 1.0).abs() < 1e-3, "mean {m} var {v}");
        }
        assert!(norm_act(&x, &[1.0; 2], &[0.0; 3], NormMode::Train).is_err());
    }

    #[test]
    fn norm_act_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[3, 2, 3, 3], &mut rng);
        let gamma = [1.3, 0.7];
        let beta = [0.1, -0.4];
        let up = random(&[3, 2, 3, 3], &mut rng);
        let loss = |xv: &[f64], g: &[f64], b: &[f64]| {
            let xt = Tensor::from_vec(x.shape(), xv.to_vec()).unwrap();
            dot(&norm_act(&xt, g, b, NormMode::Train).unwrap().0, &up)
        };
        let (_, cache) = norm_act(&x, &gamma, &beta, NormMode::Train).unwrap();
        let (gx, gg, gb) = norm_act_backward(&cache, &gamma, &up);
        close(gx.data(), &numeric_grad(&|v| loss(v, &gamma, &beta), x.data()));
        close(&gg, &numeric_grad(&|v| loss(x.data(), v, &beta), &gamma));
        close(&gb, &numeric_grad(&|v| loss(x.data(), &gamma, v), &beta));
    }

    #[test]
    fn dense_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..2 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, 0.2, 0.3];
        let up: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |xv: &[f64], wv: &[f64]| dense(xv, 2, wv, &b).iter().zip(&up).map(|(a, c)| a * c).sum::<f64>();
        let (gx, gw, _) = dense_backward(&x, 2, &w, &up);
        close(&gx, &numeric_grad(&|v| loss(v, &w), &x));
        close(&gw, &numeric_grad(&|v| loss(&x, v), &w));
    }

    proptest! {
        #[test]
        fn output_size_formulas(input in 1usize..64, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
            if let Some(out) = conv_output_size(input, k, s, p) {
                prop_assert_eq!(out, (input + 2 * p - k) / s + 1);
                let x = Tensor::<f32>::zeros(&[1, 1, input, 1 + 2 * p.max(k)]);
                let w = Tensor::<f32>::zeros(&[1, 1, k, k]);
                let y = conv2d(&x, &w, None, s, p).unwrap();
                prop_assert_eq!(y.shape()[2], out);
                // Inputs that the strided conv reaches exactly invert under the transposed op.
                if (input + 2 * p - k) % s == 0 {
                    prop_assert_eq!(transposed_output_size(out, k, s, p), Some(input));
                }
            }
        }
    }
}
