use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::loss::{combined_loss, LossWeights};
use crate::datasynth::{read_manifest, TrainingPair};
use crate::error::{Error, Result};
use crate::network::{image_tensor, input_tensor, ArchConfig, Gradients, Mode, Network, ParamGroup, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub iters_stage1: u32,
    pub iters_stage2: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 100.0,
            learning_rate: DEFAULT_LEARNING_RATE,
            iters_stage1: 1500,
            iters_stage2: 500,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// Fixed SGD step size for [0, 1]-scaled data with per-image summed losses.
///
/// With `lambda2 = 100` the summed parsing loss makes the objective stiff:
/// on 64x64 toy pairs 1e-5 diverges for about a quarter of seeds.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-6;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2 }
    }
}

/// `p <- p - lr * g` for every parameter outside the `frozen` groups.
pub fn sgd_step<S: Scalar>(net: &mut Network<S>, grads: &Gradients<S>, learning_rate: f64, frozen: &[ParamGroup]) -> Result<()> {
    if grads.len() != net.params().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            net.params().len()
        )));
    }
    if grads.iter().zip(net.params()).any(|(g, p)| g.len() != p.value.len()) {
        return Err(Error::ShapeMismatch("gradient and parameter sizes differ".into()));
    }
    let lr = S::from_f64(learning_rate);
    for (i, param) in net.params_mut().iter_mut().enumerate() {
        if frozen.contains(&param.group) {
            continue;
        }
        for (p, &g) in param.value.data_mut().iter_mut().zip(grads.get(i)) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub stage: u8,
    pub l_rec: f64,
    pub l_cro: f64,
    pub combined: f64,
}

pub const LOSS_LOG_HEADER: &str = "iteration,stage,l_rec,l_cro,combined";

pub fn format_loss_log(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in records {
        writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.iteration, r.stage, r.l_rec, r.l_cro, r.combined).expect("string write");
    }
    out
}

/// Seeded sampler of mini-batches: walks a shuffled order, reshuffling each epoch.
struct Batches {
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(len: usize) -> Self {
        Self { order: (0..len).collect(), pos: len }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Runs `iterations` SGD steps on `pairs`, appending to the log.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    state: &mut Checkpoint,
    pairs: &[TrainingPair],
    stage: u8,
    iterations: u32,
    weights: LossWeights,
    config: &TrainConfig,
    frozen: &[ParamGroup],
    log: &mut dyn FnMut(LossRecord),
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(format!("stage {stage} has no training pairs")));
    }
    let size = state.network.config().input_size;
    let mut batches = Batches::new(pairs.len());
    for _ in 0..iterations {
        let idx = batches.next(config.batch_size, &mut state.rng);
        let items: Vec<_> = idx.iter().map(|&i| (&pairs[i].composite, &pairs[i].mask)).collect();
        let input = input_tensor::<f32>(&items, size)?;
        let target = image_tensor::<f32>(&idx.iter().map(|&i| &pairs[i].ground_truth).collect::<Vec<_>>())?;
        let labels: Vec<_> = idx.iter().map(|&i| pairs[i].labels.clone()).collect();
        let fwd = state.network.forward(&input, Mode::Train)?;
        let loss = combined_loss(&fwd.harmonized, &fwd.logits, &target, &labels, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at iteration {} (loss {}); lower the learning rate",
                state.iteration, loss.total
            )));
        }
        let grads = state.network.backward(&fwd.cache, &loss.grad_harmonized, &loss.grad_logits)?;
        sgd_step(&mut state.network, &grads, config.learning_rate, frozen)?;
        state.network.update_running_stats(&fwd.cache, frozen);
        log(LossRecord { iteration: state.iteration, stage, l_rec: loss.l_rec, l_cro: loss.l_cro, combined: loss.total });
        state.iteration += 1;
    }
    Ok(())
}

/// Two-stage schedule: joint training with both losses, then finetuning
/// with the parsing decoder frozen and its loss weight set to zero.
pub fn train(
    stage1: &[TrainingPair],
    stage2: &[TrainingPair],
    config: &TrainConfig,
    arch: ArchConfig,
    log: &mut dyn FnMut(LossRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if config.lambda2 > 0.0 {
        if let Some(i) = stage1.iter().position(|p| p.labels.is_none()) {
            return Err(Error::MissingLabels(format!("stage-1 pair {i} has no label map")));
        }
    }
    let network = Network::build(arch, config.seed)?;
    let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f5a_3b1e);
    train_from(Checkpoint { network, iteration: 0, rng }, stage1, stage2, config, log)
}

/// Continues the two-stage schedule from an existing state.
pub fn train_from(
    mut state: Checkpoint,
    stage1: &[TrainingPair],
    stage2: &[TrainingPair],
    config: &TrainConfig,
    log: &mut dyn FnMut(LossRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    run_stage(&mut state, stage1, 1, config.iters_stage1, config.weights(), config, &[], log)?;
    let finetune = LossWeights { lambda1: config.lambda1, lambda2: 0.0 };
    run_stage(&mut state, stage2, 2, config.iters_stage2, finetune, config, &[ParamGroup::Parsing], log)?;
    Ok(state)
}

/// [`train`] on pairs loaded from manifest files.
pub fn train_from_manifests(
    stage1: &Path,
    stage2: &Path,
    config: &TrainConfig,
    arch: ArchConfig,
    log: &mut dyn FnMut(LossRecord),
) -> Result<Checkpoint> {
    let load = |path: &Path| -> Result<Vec<TrainingPair>> {
        read_manifest(path)?.iter().map(|r| r.load(arch.num_classes)).collect()
    };
    let (a, b) = (load(stage1)?, load(stage2)?);
    train(&a, &b, config, arch, log)
}
