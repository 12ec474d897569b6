//! Appearance transfer between masked regions.

use super::histogram::{match_histograms, Histogram, TransferLut, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, lab_to_rgb_pixel, rgb_to_lab, Image, Mask};

/// Lab channels whose statistics are transferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferChannel {
    /// L*, the luminance statistic.
    Lightness,
    /// b*, the blue-yellow axis standing in for color temperature.
    BlueYellow,
}

impl TransferChannel {
    pub const ALL: [TransferChannel; 2] = [TransferChannel::Lightness, TransferChannel::BlueYellow];

    pub fn lab_index(self) -> usize {
        match self {
            TransferChannel::Lightness => 0,
            TransferChannel::BlueYellow => 2,
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            TransferChannel::Lightness => (0.0, 100.0),
            TransferChannel::BlueYellow => (-128.0, 127.0),
        }
    }
}

fn region_histogram(lab: &[f64], mask: &Mask, channel: TransferChannel) -> Result<Histogram> {
    let (lo, hi) = channel.range();
    let idx = channel.lab_index();
    let values = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0)
        .map(|(i, _)| lab[i * 3 + idx]);
    Histogram::from_values(lo, hi, DEFAULT_BINS, values)
}

/// Per-channel LUTs taking the target region's statistics to the reference region's.
pub fn region_transfer_luts(
    target: &Image,
    target_mask: &Mask,
    reference: &Image,
    reference_mask: &Mask,
) -> Result<Vec<(TransferChannel, TransferLut)>> {
    ensure_same_dims(target.dims(), target_mask.dims())?;
    ensure_same_dims(reference.dims(), reference_mask.dims())?;
    if target_mask.is_empty() {
        return Err(Error::EmptyRegion("target mask"));
    }
    if reference_mask.is_empty() {
        return Err(Error::EmptyRegion("reference mask"));
    }
    let target_lab = rgb_to_lab(target);
    let reference_lab = rgb_to_lab(reference);
    TransferChannel::ALL
        .into_iter()
        .map(|ch| {
            let src = region_histogram(target_lab.data(), target_mask, ch)?;
            let dst = region_histogram(reference_lab.data(), reference_mask, ch)?;
            Ok((ch, match_histograms(&src, &dst)?))
        })
        .collect()
}

/// Matches the luminance and color-temperature histograms of the target region
/// to those of the reference region, then blends by `strength` in RGB.
///
/// Pixels outside `target_mask` are copied bit for bit. The a* channel is not touched.
pub fn color_transfer(
    target: &Image,
    target_mask: &Mask,
    reference: &Image,
    reference_mask: &Mask,
    strength: f64,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidConfig(format!("strength {strength} outside [0, 1]")));
    }
    let luts = region_transfer_luts(target, target_mask, reference, reference_mask)?;
    let target_lab = rgb_to_lab(target);
    let s = strength as f32;
    let mut out = target.clone();
    for (i, &m) in target_mask.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        let mut lab = [target_lab.data()[i * 3], target_lab.data()[i * 3 + 1], target_lab.data()[i * 3 + 2]];
        for (ch, lut) in &luts {
            lab[ch.lab_index()] = lut.apply(lab[ch.lab_index()]);
        }
        let matched = lab_to_rgb_pixel(lab).map(|v| v.clamp(0.0, 1.0) as f32);
        let (y, x) = (i / target.width(), i % target.width());
        let orig = target.pixel(y, x);
        out.set_pixel(y, x, std::array::from_fn(|c| (1.0 - s) * orig[c] + s * matched[c]));
    }
    Ok(out)
}
