//! Training-data synthesis: histogram-matching color transfer between
//! semantically matched regions, spatial-pyramid reference retrieval, and a
//! procedural scene generator.

mod histogram;
mod manifest;
mod pair;
mod pyramid;
mod scene;
mod transfer;

pub use histogram::{match_histograms, Histogram, TransferLut, DEFAULT_BINS};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_dataset, ManifestRecord};
pub use pair::{synthesize_pair, synthesize_toy_pairs, ToyDatasetConfig, TrainingPair, DEFAULT_STRENGTHS};
pub use pyramid::{level_weights, retrieve_reference, spatial_pyramid_histogram, PyramidHistogram, DEFAULT_LEVELS};
pub use scene::{class_color, generate_toy_scene, SceneConfig, GROUND, MAX_CLASSES, SKY};
pub use transfer::{color_transfer, region_transfer_luts, TransferChannel};
