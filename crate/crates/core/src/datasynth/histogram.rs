//! Channel histograms and monotone histogram matching.

use crate::error::{Error, Result};

/// Default bin count, one per 8-bit level.
pub const DEFAULT_BINS: usize = 256;

/// Fixed-width histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidConfig(format!("histogram needs bins > 0 and hi > lo, got {bins} over [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, counts: vec![0.0; bins] })
    }

    /// Histogram with explicit (non-negative) bin weights.
    pub fn from_counts(lo: f64, hi: f64, counts: Vec<f64>) -> Result<Self> {
        let mut h = Self::new(lo, hi, counts.len())?;
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig("histogram counts must be finite and non-negative".into()));
        }
        h.counts = counts;
        Ok(h)
    }

    pub fn from_values(lo: f64, hi: f64, bins: usize, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut h = Self::new(lo, hi, bins)?;
        for v in values {
            h.add(v);
        }
        Ok(h)
    }

    /// Adds one sample; values outside the range land in the end bins.
    pub fn add(&mut self, value: f64) {
        let bin = self.bin_of(value);
        self.counts[bin] += 1.0;
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let t = ((value - self.lo) / self.bin_width()).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.counts.len() - 1)
        }
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn edge(&self, k: usize) -> f64 {
        if k == self.counts.len() {
            self.hi
        } else {
            self.lo + k as f64 * self.bin_width()
        }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    /// Normalized cumulative counts at the `bins + 1` edges: `cdf[0] = 0`, `cdf[bins] = 1`.
    fn edge_cdf(&self) -> Vec<f64> {
        let total = self.total();
        let mut cdf = Vec::with_capacity(self.counts.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &c in &self.counts {
            acc += c;
            cdf.push(acc / total);
        }
        *cdf.last_mut().unwrap() = 1.0;
        cdf
    }

    fn same_layout(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }
}

/// Monotone value mapping for one channel.
///
/// Each source bin carries the mapped values at its left and right edges;
/// values inside the bin are interpolated linearly. Representing the two
/// edges separately lets the map jump across empty source bins, which is
/// what makes self-matching an exact identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferLut {
    lo: f64,
    hi: f64,
    /// `(left, right)` mapped values per source bin, non-decreasing in reading order.
    segments: Vec<(f64, f64)>,
}

impl TransferLut {
    pub fn apply(&self, value: f64) -> f64 {
        let width = (self.hi - self.lo) / self.segments.len() as f64;
        let v = value.clamp(self.lo, self.hi);
        let t = ((v - self.lo) / width).floor();
        let bin = (t.max(0.0) as usize).min(self.segments.len() - 1);
        let frac = ((v - self.lo) / width - bin as f64).clamp(0.0, 1.0);
        let (left, right) = self.segments[bin];
        left + frac * (right - left)
    }

    /// Mapped value at the center of each source bin.
    pub fn sampled_at_centers(&self) -> Vec<f64> {
        self.segments.iter().map(|(l, r)| 0.5 * (l + r)).collect()
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn is_monotone(&self) -> bool {
        let flat: Vec<f64> = self.segments.iter().flat_map(|&(l, r)| [l, r]).collect();
        flat.windows(2).all(|w| w[0] <= w[1])
    }
}

/// `inf { x : F(x) >= u }` for the piecewise-linear CDF through `cdf` at the edges.
fn lower_inverse(h: &Histogram, cdf: &[f64], u: f64) -> f64 {
    if u <= 0.0 {
        return h.lo;
    }
    let k = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
    interpolate_in_bin(h, cdf, k, u)
}

/// `sup { x : F(x) <= u }` for the same CDF.
fn upper_inverse(h: &Histogram, cdf: &[f64], u: f64) -> f64 {
    if u >= 1.0 {
        return h.hi;
    }
    let k = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1);
    interpolate_in_bin(h, cdf, k, u)
}

fn interpolate_in_bin(h: &Histogram, cdf: &[f64], k: usize, u: f64) -> f64 {
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let frac = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
    (h.edge(k - 1) + frac * h.bin_width()).clamp(h.lo, h.hi)
}

/// Histogram matching: maps the source distribution onto the reference
/// one through `F_ref^-1(F_src(x))` with piecewise-uniform densities.
pub fn match_histograms(source: &Histogram, reference: &Histogram) -> Result<TransferLut> {
    if !source.same_layout(reference) {
        return Err(Error::ShapeMismatch("histograms must share their bin layout".into()));
    }
    if !(source.total() > 0.0) || !(reference.total() > 0.0) {
        return Err(Error::EmptyHistogram);
    }
    let src = source.edge_cdf();
    let refc = reference.edge_cdf();
    let mut segments = Vec::with_capacity(source.bin_count());
    for k in 0..source.bin_count() {
        // Below the source support everything maps to the start of the reference support.
        let right = if src[k + 1] > 0.0 {
            lower_inverse(reference, &refc, src[k + 1])
        } else {
            upper_inverse(reference, &refc, 0.0)
        };
        let left = if source.counts[k] > 0.0 {
            upper_inverse(reference, &refc, src[k]).min(right)
        } else {
            right
        };
        segments.push((left, right));
    }
    // Rounding in the cumulative sums can leave a neighbor a few ulps out of
    // order; restore the invariant explicitly.
    let mut floor = f64::NEG_INFINITY;
    for seg in &mut segments {
        seg.0 = seg.0.max(floor);
        seg.1 = seg.1.max(seg.0);
        floor = seg.1;
    }
    Ok(TransferLut { lo: source.lo, hi: source.hi, segments })
}
