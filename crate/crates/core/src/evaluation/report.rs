use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{mean_iou, mse, psnr_from_mse, IouScores};
use crate::datasynth::{read_manifest, TrainingPair};
use crate::error::Result;
use crate::image::{composite, Image, LabelMap, Mask};
use crate::network::{logits_to_labels, Mode, Network, Scalar};

pub const REPORT_HEADER: &str = "image,mse,psnr,iou_mean,baseline_mse,baseline_psnr";

/// Eval-mode harmonization of one composite. With `paste_background` the
/// composite's own pixels replace the network output outside the mask.
pub fn harmonize<S: Scalar>(
    net: &Network<S>,
    composite_image: &Image,
    mask: &Mask,
    paste_background: bool,
) -> Result<(Image, LabelMap)> {
    let (out, logits, _) = net.forward_joint(composite_image, mask, Mode::Eval)?;
    let labels = logits_to_labels(&logits, 0);
    let out = if paste_background { composite(&out, composite_image, mask)? } else { out };
    Ok((out, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub mse: f64,
    pub psnr: f64,
    pub iou: Option<IouScores>,
    pub baseline_mse: f64,
    pub baseline_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per successfully evaluated record, in input order.
    pub rows: Vec<EvalRow>,
    /// `(image, error message)` for records that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn mean_mse(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.mse))
    }

    /// Mean of per-image PSNR values (not the PSNR of the mean MSE).
    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_iou(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.iou.as_ref().map(|s| s.mean)))
    }

    pub fn mean_baseline_mse(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.baseline_mse))
    }

    pub fn mean_baseline_psnr(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.baseline_psnr))
    }

    /// Per-class IoU averaged over the images in which the class occurs.
    pub fn mean_class_iou(&self) -> Vec<Option<f64>> {
        let classes = self.rows.iter().filter_map(|r| r.iou.as_ref()).map(|s| s.per_class.len()).max().unwrap_or(0);
        (0..classes)
            .map(|c| mean(self.rows.iter().filter_map(|r| r.iou.as_ref()?.per_class.get(c).copied().flatten())))
            .collect()
    }

    /// Report CSV: one row per image, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let iou = opt(r.iou.as_ref().map(|s| s.mean));
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{},{:.6},{:.6}",
                r.image, r.mse, r.psnr, iou, r.baseline_mse, r.baseline_psnr
            );
        }
        if !self.rows.is_empty() {
            let _ = writeln!(
                out,
                "mean,{},{},{},{},{}",
                opt(self.mean_mse()),
                opt(self.mean_psnr()),
                opt(self.mean_iou()),
                opt(self.mean_baseline_mse()),
                opt(self.mean_baseline_psnr())
            );
        }
        out
    }
}

pub fn evaluate_pair<S: Scalar>(net: &Network<S>, name: &str, pair: &TrainingPair, paste_background: bool) -> Result<EvalRow> {
    let (out, predicted) = harmonize(net, &pair.composite, &pair.mask, paste_background)?;
    let m = mse(&out, &pair.ground_truth)?;
    let base = mse(&pair.composite, &pair.ground_truth)?;
    let iou = match &pair.labels {
        Some(gt) => Some(mean_iou(&predicted, gt, net.config().num_classes)?),
        None => None,
    };
    Ok(EvalRow {
        image: name.to_owned(),
        mse: m,
        psnr: psnr_from_mse(m),
        iou,
        baseline_mse: base,
        baseline_psnr: psnr_from_mse(base),
    })
}

/// Evaluates in-memory pairs; a failing pair is recorded, not fatal.
pub fn evaluate_pairs<S: Scalar>(net: &Network<S>, pairs: &[(String, TrainingPair)], paste_background: bool) -> EvalReport {
    let mut report = EvalReport { rows: Vec::new(), failures: Vec::new() };
    for (name, pair) in pairs {
        match evaluate_pair(net, name, pair, paste_background) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((name.clone(), e.to_string())),
        }
    }
    report
}

/// Evaluates every manifest record. Only an unreadable manifest is an
/// error; records that fail to load or run land in `failures`.
pub fn evaluate_dataset<S: Scalar>(net: &Network<S>, manifest: &Path, paste_background: bool) -> Result<EvalReport> {
    let records = read_manifest(manifest)?;
    let mut report = EvalReport { rows: Vec::new(), failures: Vec::new() };
    for record in &records {
        let name = record.composite.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match record.load(net.config().num_classes).and_then(|pair| evaluate_pair(net, &name, &pair, paste_background)) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((name, e.to_string())),
        }
    }
    Ok(report)
}
