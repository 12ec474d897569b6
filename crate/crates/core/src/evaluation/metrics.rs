use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, Image, LabelMap};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const PEAK: f64 = 255.0;

/// Mean squared error over all pixels and channels, on the 8-bit scale.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) * PEAK;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(255^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Per-class intersection over union and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct IouScores {
    /// `None` for classes absent from both maps.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in either map.
    pub mean: f64,
}

pub fn mean_iou(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<IouScores> {
    ensure_same_dims(gt.dims(), pred.dims())?;
    let mut inter = vec![0usize; num_classes];
    let mut union = vec![0usize; num_classes];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if let Some(&label) = [p, g].iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        union[p] += 1;
        if p == g {
            inter[p] += 1;
        } else {
            union[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyRegion("label maps"));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouScores { per_class, mean })
}
