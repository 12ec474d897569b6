//! Guided upsampling of network output with a joint bilateral filter.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    /// Spatial Gaussian sigma, in low-resolution pixels.
    pub sigma_spatial: f64,
    /// Range Gaussian sigma on Euclidean RGB distance of the guide, `[0, 1]` scale.
    pub sigma_range: f64,
    /// Half-width of the low-resolution neighbourhood.
    pub radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self::with_sigmas(2.0, 0.1)
    }
}

impl BilateralParams {
    /// Radius defaults to `ceil(3 * sigma_spatial)`.
    pub fn with_sigmas(sigma_spatial: f64, sigma_range: f64) -> Self {
        Self { sigma_spatial, sigma_range, radius: (3.0 * sigma_spatial).ceil().max(1.0) as usize }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial > 0.0 && self.sigma_range > 0.0) || !self.sigma_spatial.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bilateral sigmas must be positive, got spatial {} range {}",
                self.sigma_spatial, self.sigma_range
            )));
        }
        if self.radius == 0 {
            return Err(Error::InvalidConfig("bilateral radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// Integer scale factor between `low` and `guide` along both axes.
fn scale_factors(low: (usize, usize), guide: (usize, usize)) -> Result<(usize, usize)> {
    let (lh, lw) = low;
    let (gh, gw) = guide;
    if lh == 0 || lw == 0 || gh < lh || gw < lw || gh % lh != 0 || gw % lw != 0 {
        return Err(Error::InvalidConfig(format!(
            "guide {gh}x{gw} is not an integer multiple of the low-resolution {lh}x{lw} image"
        )));
    }
    Ok((gh / lh, gw / lw))
}

/// Box average of the guide over each `sy x sx` block.
fn downsample_guide(guide: &Image, sy: usize, sx: usize, lh: usize, lw: usize) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; lh * lw];
    let inv = 1.0 / (sy * sx) as f64;
    for (y, row) in out.chunks_mut(lw).enumerate() {
        for (x, acc) in row.iter_mut().enumerate() {
            for gy in y * sy..(y + 1) * sy {
                for gx in x * sx..(x + 1) * sx {
                    let p = guide.pixel(gy, gx);
                    (0..3).for_each(|c| acc[c] += p[c] as f64);
                }
            }
            acc.iter_mut().for_each(|v| *v *= inv);
        }
    }
    out
}

/// Upsamples `low` to the guide's resolution.
///
/// Each output pixel is a weighted mean of low-resolution neighbours within
/// `radius` of its position in low-resolution coordinates. Weights multiply
/// a spatial Gaussian by a range Gaussian between the guide pixel and the
/// block-averaged guide at the neighbour.
pub fn joint_bilateral_upsample(low: &Image, guide: &Image, params: &BilateralParams) -> Result<Image> {
    params.validate()?;
    let (lh, lw) = low.dims();
    let (gh, gw) = guide.dims();
    let (sy, sx) = scale_factors((lh, lw), (gh, gw))?;
    let guide_low = downsample_guide(guide, sy, sx, lh, lw);
    let spatial = -0.5 / (params.sigma_spatial * params.sigma_spatial);
    let range = -0.5 / (params.sigma_range * params.sigma_range);
    let r = params.radius as isize;

    let mut data = Vec::with_capacity(gh * gw * 3);
    for gy in 0..gh {
        let cy = (gy as f64 + 0.5) / sy as f64 - 0.5;
        let ly = gy / sy;
        for gx in 0..gw {
            let cx = (gx as f64 + 0.5) / sx as f64 - 0.5;
            let lx = gx / sx;
            let g = guide.pixel(gy, gx);
            // Accumulate deviations from the covering low-res pixel so a
            // constant input comes back bit-exact.
            let anchor = low.pixel(ly, lx);
            let mut lo = anchor;
            let mut hi = anchor;
            let mut acc = [0.0f64; 3];
            let mut total = 0.0;
            let ys = (ly as isize - r).max(0) as usize..=((ly as isize + r) as usize).min(lh - 1);
            for qy in ys {
                let dy = qy as f64 - cy;
                let xs = (lx as isize - r).max(0) as usize..=((lx as isize + r) as usize).min(lw - 1);
                for qx in xs {
                    let dx = qx as f64 - cx;
                    let gq = guide_low[qy * lw + qx];
                    let dist2: f64 = (0..3).map(|c| (g[c] as f64 - gq[c]).powi(2)).sum();
                    let w = (spatial * (dy * dy + dx * dx) + range * dist2).exp();
                    let v = low.pixel(qy, qx);
                    for c in 0..3 {
                        acc[c] += w * (v[c] as f64 - anchor[c] as f64);
                        lo[c] = lo[c].min(v[c]);
                        hi[c] = hi[c].max(v[c]);
                    }
                    total += w;
                }
            }
            for c in 0..3 {
                let v = if total > 0.0 { anchor[c] as f64 + acc[c] / total } else { anchor[c] as f64 };
                data.push((v as f32).clamp(lo[c], hi[c]));
            }
        }
    }
    Image::new(gh, gw, data)
}
