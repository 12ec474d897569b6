//! Tab-separated dataset manifests.
//!
//! One record per line: `composite<TAB>mask<TAB>ground_truth<TAB>labels`,
//! with `-` for a missing label map. Relative paths resolve against the
//! manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pair::TrainingPair;
use crate::error::{Error, Result};
use crate::image::{load_image, load_label_map, load_mask, save_image, save_label_map, save_mask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub composite: PathBuf,
    pub mask: PathBuf,
    pub ground_truth: PathBuf,
    pub labels: Option<PathBuf>,
}

impl ManifestRecord {
    /// Loads the rasters; label maps are validated against `num_classes`.
    pub fn load(&self, num_classes: usize) -> Result<TrainingPair> {
        let labels = match &self.labels {
            Some(p) => Some(load_label_map(p, num_classes)?),
            None => None,
        };
        TrainingPair::new(load_image(&self.composite)?, load_mask(&self.mask)?, load_image(&self.ground_truth)?, labels)
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let resolve = |field: &str| {
        let p = Path::new(field);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [composite, mask, gt, labels] = fields[..] else {
            return Err(Error::Manifest { line: i + 1, reason: format!("expected 4 tab-separated fields, found {}", fields.len()) });
        };
        if [composite, mask, gt, labels].iter().any(|f| f.is_empty()) {
            return Err(Error::Manifest { line: i + 1, reason: "empty field".into() });
        }
        records.push(ManifestRecord {
            composite: resolve(composite),
            mask: resolve(mask),
            ground_truth: resolve(gt),
            labels: (labels != "-").then(|| resolve(labels)),
        });
    }
    Ok(records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Serializes records, writing paths as given.
pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let labels = r.labels.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.composite.display(), r.mask.display(), r.ground_truth.display(), labels);
    }
    out
}

/// Writes each pair as PNG files plus `manifest.tsv` into `dir`, returning
/// the manifest path. File names are stable: `composite_0000.png`, ...
pub fn write_dataset(dir: impl AsRef<Path>, pairs: &[TrainingPair]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let name = |kind: &str| PathBuf::from(format!("{kind}_{i:04}.png"));
        let record = ManifestRecord {
            composite: name("composite"),
            mask: name("mask"),
            ground_truth: name("gt"),
            labels: pair.labels.as_ref().map(|_| name("labels")),
        };
        save_image(&pair.composite, dir.join(&record.composite))?;
        save_mask(&pair.mask, dir.join(&record.mask))?;
        save_image(&pair.ground_truth, dir.join(&record.ground_truth))?;
        if let (Some(labels), Some(p)) = (&pair.labels, &record.labels) {
            save_label_map(labels, dir.join(p))?;
        }
        records.push(record);
    }
    let manifest = dir.join("manifest.tsv");
    std::fs::write(&manifest, format_manifest(&records)).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
