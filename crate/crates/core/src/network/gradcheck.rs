use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{image_tensor, input_tensor, Mode, Network};
use super::Tensor;
use crate::datasynth::TrainingPair;
use crate::error::{Error, Result};
use crate::training::{combined_loss, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub samples: usize,
    /// `(parameter name, element, analytic, numeric)` of the worst sample.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss_at(net: &Network<f64>, input: &Tensor<f64>, target: &Tensor<f64>, pair: &TrainingPair, weights: LossWeights) -> Result<f64> {
    let fwd = net.forward(input, Mode::Train)?;
    Ok(combined_loss(&fwd.harmonized, &fwd.logits, target, std::slice::from_ref(&pair.labels), weights)?.total)
}

/// Compares analytic gradients of the combined loss with central finite
/// differences on `samples` parameter elements drawn from `seed`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(
    net: &Network<f64>,
    pair: &TrainingPair,
    weights: LossWeights,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {epsilon}")));
    }
    let size = net.config().input_size;
    let input = input_tensor(&[(&pair.composite, &pair.mask)], size)?;
    let target = image_tensor(&[&pair.ground_truth])?;
    let fwd = net.forward(&input, Mode::Train)?;
    let loss = combined_loss(&fwd.harmonized, &fwd.logits, &target, std::slice::from_ref(&pair.labels), weights)?;
    let grads = net.backward(&fwd.cache, &loss.grad_harmonized, &loss.grad_logits)?;

    let index: Vec<(usize, usize)> = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.value.len()).map(move |e| (p, e)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, index.len(), samples.min(index.len()));

    let mut probe = net.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, samples: picks.len(), worst: None };
    for pick in picks.iter() {
        let (p, e) = index[pick];
        let original = probe.params()[p].value.data()[e];
        probe.params_mut()[p].value.data_mut()[e] = original + epsilon;
        let up = loss_at(&probe, &input, &target, pair, weights)?;
        probe.params_mut()[p].value.data_mut()[e] = original - epsilon;
        let down = loss_at(&probe, &input, &target, pair, weights)?;
        probe.params_mut()[p].value.data_mut()[e] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads.get(p)[e];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((net.params()[p].name.clone(), e, analytic, numeric));
        }
    }
    Ok(report)
}
