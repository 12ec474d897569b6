//! Composite / ground-truth training pairs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pyramid::{retrieve_reference, spatial_pyramid_histogram, PyramidHistogram, DEFAULT_LEVELS};
use super::scene::{generate_toy_scene, SceneConfig, GROUND};
use super::transfer::color_transfer;
use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, Image, LabelMap, Mask};

/// Default blend strengths sampled per synthesized pair.
pub const DEFAULT_STRENGTHS: [f64; 3] = [0.4, 0.7, 1.0];

/// A synthesized composite with the image it was derived from.
///
/// `composite` equals `ground_truth` wherever `mask` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub composite: Image,
    pub mask: Mask,
    pub ground_truth: Image,
    pub labels: Option<LabelMap>,
}

impl TrainingPair {
    pub fn new(composite: Image, mask: Mask, ground_truth: Image, labels: Option<LabelMap>) -> Result<Self> {
        ensure_same_dims(ground_truth.dims(), composite.dims())?;
        ensure_same_dims(ground_truth.dims(), mask.dims())?;
        if let Some(l) = &labels {
            ensure_same_dims(ground_truth.dims(), l.dims())?;
        }
        Ok(Self { composite, mask, ground_truth, labels })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ground_truth.dims()
    }

    /// True when the composite matches the ground truth on every background pixel.
    pub fn background_preserved(&self) -> bool {
        self.mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 0)
            .all(|(i, _)| self.composite.data()[i * 3..i * 3 + 3] == self.ground_truth.data()[i * 3..i * 3 + 3])
    }
}

/// Edits the masked region of `ground_truth` toward the reference region's
/// appearance and pairs the result with the untouched original.
pub fn synthesize_pair(
    ground_truth: &Image,
    region_mask: &Mask,
    reference: &Image,
    reference_mask: &Mask,
    strength: f64,
) -> Result<TrainingPair> {
    let composite = color_transfer(ground_truth, region_mask, reference, reference_mask, strength)?;
    TrainingPair::new(composite, region_mask.clone(), ground_truth.clone(), None)
}

/// Settings for [`synthesize_toy_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDatasetConfig {
    pub scene: SceneConfig,
    /// Number of scenes in the retrieval pool references are drawn from.
    pub pool_size: usize,
    pub pyramid_levels: usize,
    pub strengths: Vec<f64>,
    /// Smallest region, as a fraction of the image, used as a target or reference.
    pub min_region_fraction: f64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            pool_size: 32,
            pyramid_levels: DEFAULT_LEVELS,
            strengths: DEFAULT_STRENGTHS.to_vec(),
            min_region_fraction: 0.01,
        }
    }
}

struct PoolEntry {
    image: Image,
    labels: LabelMap,
}

fn class_counts(labels: &LabelMap) -> Vec<usize> {
    let mut counts = vec![0; labels.num_classes()];
    for &l in labels.data() {
        counts[usize::from(l)] += 1;
    }
    counts
}

/// Generates `count` labeled pairs: each picks a region of a fresh scene,
/// retrieves the most similar pool scene containing the same class, and
/// transfers that region's appearance onto it.
pub fn synthesize_toy_pairs(seed: u64, count: usize, config: &ToyDatasetConfig) -> Result<Vec<TrainingPair>> {
    config.scene.validate()?;
    if config.pool_size == 0 || config.strengths.is_empty() {
        return Err(Error::InvalidConfig("pool_size and strengths must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<PoolEntry> = (0..config.pool_size)
        .map(|_| {
            let (image, labels) = generate_toy_scene(rng.next_u64(), &config.scene)?;
            Ok(PoolEntry { image, labels })
        })
        .collect::<Result<_>>()?;
    let pyramids: Vec<(usize, PyramidHistogram)> = pool
        .iter()
        .enumerate()
        .map(|(i, e)| Ok((i, spatial_pyramid_histogram(&e.labels, config.pyramid_levels, config.scene.num_classes)?)))
        .collect::<Result<_>>()?;

    let pixels = config.scene.height * config.scene.width;
    let min_pixels = ((config.min_region_fraction * pixels as f64).ceil() as usize).max(1);
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::InvalidConfig("retrieval pool never supplied a matching reference region".into()));
        }
        let (gt, labels) = generate_toy_scene(rng.next_u64(), &config.scene)?;
        let counts = class_counts(&labels);
        // Objects are preferred; the ground plane is the fallback region.
        let mut candidates: Vec<usize> =
            (2..counts.len()).filter(|&c| counts[c] >= min_pixels).collect();
        if candidates.is_empty() {
            candidates = vec![usize::from(GROUND)];
        }
        let target_class = candidates[rng.random_range(0..candidates.len())];
        let strength = config.strengths[rng.random_range(0..config.strengths.len())];

        let query = spatial_pyramid_histogram(&labels, config.pyramid_levels, config.scene.num_classes)?;
        let ranked = retrieve_reference(&query, &pyramids)?;
        let Some(reference) = ranked
            .iter()
            .map(|(id, _)| &pool[*id])
            .find(|e| class_counts(&e.labels)[target_class] >= min_pixels)
        else {
            continue;
        };
        let mask = labels.mask_of(target_class);
        let ref_mask = reference.labels.mask_of(target_class);
        let mut pair = synthesize_pair(&gt, &mask, &reference.image, &ref_mask, strength)?;
        pair.labels = Some(labels);
        pairs.push(pair);
    }
    Ok(pairs)
}
