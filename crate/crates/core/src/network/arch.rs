use serde::{Deserialize, Serialize};

use super::ops::{conv_output_size, transposed_output_size};
use crate::error::{Error, Result};

/// Number of input channels: RGB plus the foreground mask.
pub const INPUT_CHANNELS: usize = 4;
/// Number of harmonized output channels.
pub const OUTPUT_CHANNELS: usize = 3;

/// Layer graph hyperparameters of the joint encoder-decoder.
///
/// Both decoders mirror the encoder: decoder layer `j` undoes encoder layer
/// `D - 1 - j`, so every decoder layer but the last emits
/// `encoder_channels[D - 2 - j]` feature maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub bottleneck_dim: usize,
    pub num_classes: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Feed parsing-decoder features into the harmonization decoder. When
    /// off the same channels are fed zeros, so parameter layouts match.
    #[serde(default = "default_links")]
    pub cross_decoder_links: bool,
}

fn default_links() -> bool {
    true
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            encoder_channels: vec![16, 32, 64],
            bottleneck_dim: 512,
            num_classes: 25,
            kernel_size: 4,
            stride: 2,
            padding: 1,
            cross_decoder_links: true,
        }
    }
}

impl ArchConfig {
    /// Tiny double-precision-friendly configuration for gradient checks.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input_size: 8,
            encoder_channels: vec![4, 6],
            bottleneck_dim: 8,
            num_classes,
            kernel_size: 4,
            stride: 2,
            padding: 1,
            cross_decoder_links: true,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Spatial size after `level` encoder layers.
    pub fn size_at(&self, level: usize) -> usize {
        self.input_size / self.stride.pow(level as u32)
    }

    /// Side length of the bottleneck feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.size_at(self.depth())
    }

    /// Flattened length of the last encoder feature map.
    pub fn bottleneck_features(&self) -> usize {
        let s = self.bottleneck_size();
        self.encoder_channels[self.depth() - 1] * s * s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.encoder_channels.is_empty() {
            return bad("at least one encoder layer is required".into());
        }
        if self.encoder_channels.contains(&0) || self.bottleneck_dim == 0 {
            return bad("channel counts and bottleneck width must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.kernel_size == 0 || self.stride < 2 {
            return bad("kernel_size must be positive and stride at least 2".into());
        }
        let depth = u32::try_from(self.depth()).unwrap_or(u32::MAX);
        let factor = self.stride.checked_pow(depth).unwrap_or(usize::MAX);
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return bad(format!(
                "input_size {} must be divisible by stride^layers = {}^{}",
                self.input_size, self.stride, depth
            ));
        }
        for level in 0..self.depth() {
            let (inp, out) = (self.size_at(level), self.size_at(level + 1));
            let (k, s, p) = (self.kernel_size, self.stride, self.padding);
            if conv_output_size(inp, k, s, p) != Some(out) || transposed_output_size(out, k, s, p) != Some(inp) {
                return bad(format!("kernel {k}, stride {s}, padding {p} do not map {inp} to {out} and back"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
