use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::network::{Scalar, Tensor};

/// Weights of the reconstruction and parsing terms of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 100.0 }
    }
}

/// `0.5 * sum (pred - target)^2` over every element, and its gradient `pred - target`.
pub fn reconstruction_loss<S: Scalar>(predicted: &Tensor<S>, target: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    if predicted.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    let diff: Vec<S> = predicted.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
    let loss = 0.5 * diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>();
    Ok((loss, Tensor::from_vec(predicted.shape(), diff)?))
}

/// Pixel-wise softmax cross-entropy summed over pixels of a `[1, C, H, W]`
/// (or `[C, H, W]`-shaped batch item) logit map; gradient is softmax minus one-hot.
pub fn parsing_loss<S: Scalar>(logits: &[S], num_classes: usize, labels: &LabelMap) -> Result<(f64, Vec<S>)> {
    let plane = labels.height() * labels.width();
    if logits.len() != num_classes * plane {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {num_classes} classes over {plane} pixels",
            logits.len()
        )));
    }
    let mut grad = vec![S::zero(); logits.len()];
    let mut loss = 0.0;
    let mut probs = vec![0.0f64; num_classes];
    for (p, &label) in labels.data().iter().enumerate() {
        let label = label as usize;
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let max = (0..num_classes).map(|c| logits[c * plane + p].as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (c, prob) in probs.iter_mut().enumerate() {
            *prob = (logits[c * plane + p].as_f64() - max).exp();
            z += *prob;
        }
        loss += z.ln() - (logits[label * plane + p].as_f64() - max);
        for (c, prob) in probs.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[c * plane + p] = S::from_f64(prob / z - onehot);
        }
    }
    Ok((loss, grad))
}

/// Value and output gradients of the joint objective on a batch.
#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    /// Batch mean of per-image `lambda1 * l_rec + lambda2 * l_cro`.
    pub total: f64,
    /// Batch mean of the per-image reconstruction loss.
    pub l_rec: f64,
    /// Batch mean of the per-image parsing loss; zero when it is not evaluated.
    pub l_cro: f64,
    pub grad_harmonized: Tensor<S>,
    pub grad_logits: Tensor<S>,
}

/// `lambda1 * L_rec + lambda2 * L_cro`, averaged over the batch.
///
/// The parsing term is skipped entirely when `lambda2 == 0`, so labels are
/// only required when it is weighted in.
pub fn combined_loss<S: Scalar>(
    harmonized: &Tensor<S>,
    logits: &Tensor<S>,
    target: &Tensor<S>,
    labels: &[Option<LabelMap>],
    weights: LossWeights,
) -> Result<LossOutput<S>> {
    let (n, c, _, _) = logits.dims4();
    if labels.len() != n || harmonized.shape()[0] != n {
        return Err(Error::ShapeMismatch(format!("{} label maps for a batch of {n}", labels.len())));
    }
    let inv_n = 1.0 / n as f64;
    let (l_rec, mut grad_h) = reconstruction_loss(harmonized, target)?;
    let scale = S::from_f64(weights.lambda1 * inv_n);
    grad_h.data_mut().iter_mut().for_each(|g| *g *= scale);

    let mut grad_l = Tensor::zeros(logits.shape());
    let mut l_cro = 0.0;
    if weights.lambda2 != 0.0 {
        let scale = S::from_f64(weights.lambda2 * inv_n);
        for (i, labels) in labels.iter().enumerate() {
            let labels = labels
                .as_ref()
                .ok_or_else(|| Error::MissingLabels(format!("batch item {i} has no label map")))?;
            if labels.dims() != (logits.shape()[2], logits.shape()[3]) {
                return Err(Error::DimensionMismatch {
                    expected: (logits.shape()[2], logits.shape()[3]),
                    actual: labels.dims(),
                });
            }
            let (loss, grad) = parsing_loss(logits.item(i), c, labels)?;
            l_cro += loss;
            grad_l.item_mut(i).iter_mut().zip(grad).for_each(|(d, g)| *d = g * scale);
        }
    }
    let (l_rec, l_cro) = (l_rec * inv_n, l_cro * inv_n);
    Ok(LossOutput {
        total: weights.lambda1 * l_rec + weights.lambda2 * l_cro,
        l_rec,
        l_cro,
        grad_harmonized: grad_h,
        grad_logits: grad_l,
    })
}
