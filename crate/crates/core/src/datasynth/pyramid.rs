//! Spatial-pyramid label histograms and histogram-intersection retrieval.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image::LabelMap;

/// Default pyramid depth used for reference retrieval.
pub const DEFAULT_LEVELS: usize = 2;

/// Level `l` splits the map into `2^l x 2^l` cells, each holding a normalized
/// label histogram (all zeros when the cell covers no pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidHistogram {
    levels: usize,
    num_classes: usize,
    /// `cells[l]` is `4^l * num_classes` values, cell-major.
    cells: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Level weights `2^-L` for level 0 and `2^(l-L-1)` above it.
pub fn level_weights(levels: usize) -> Vec<f64> {
    let top = levels as i32;
    (0..=levels)
        .map(|l| if l == 0 { 2f64.powi(-top) } else { 2f64.powi(l as i32 - top - 1) })
        .collect()
}

impl PyramidHistogram {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Histogram of cell `(row, col)` at `level`.
    pub fn cell(&self, level: usize, row: usize, col: usize) -> &[f64] {
        let side = 1usize << level;
        let start = (row * side + col) * self.num_classes;
        &self.cells[level][start..start + self.num_classes]
    }

    fn cells_at(&self, level: usize) -> impl Iterator<Item = &[f64]> {
        self.cells[level].chunks_exact(self.num_classes)
    }

    /// Weighted histogram-intersection distance in `[0, 1]`.
    ///
    /// Per level, intersections are averaged over the cells that are non-empty
    /// in both pyramids; cells empty on either side are skipped.
    pub fn distance(&self, other: &PyramidHistogram) -> Result<f64> {
        if self.levels != other.levels || self.num_classes != other.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "pyramids differ: {}x{} vs {}x{} (levels x classes)",
                self.levels, self.num_classes, other.levels, other.num_classes
            )));
        }
        let mut similarity = 0.0;
        for (l, w) in self.weights.iter().enumerate() {
            let (mut sum, mut used) = (0.0, 0usize);
            for (q, r) in self.cells_at(l).zip(other.cells_at(l)) {
                if is_empty(q) || is_empty(r) {
                    continue;
                }
                sum += q.iter().zip(r).map(|(a, b)| a.min(*b)).sum::<f64>();
                used += 1;
            }
            if used > 0 {
                similarity += w * sum / used as f64;
            }
        }
        Ok((1.0 - similarity).max(0.0))
    }
}

fn is_empty(cell: &[f64]) -> bool {
    cell.iter().all(|&v| v == 0.0)
}

pub fn spatial_pyramid_histogram(labels: &LabelMap, levels: usize, num_classes: usize) -> Result<PyramidHistogram> {
    if num_classes < labels.num_classes() {
        if let Some(&bad) = labels.data().iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad.into(), num_classes });
        }
    }
    if levels > 16 {
        return Err(Error::InvalidConfig(format!("pyramid depth {levels} is unreasonably large")));
    }
    let (h, w) = labels.dims();
    let mut cells = Vec::with_capacity(levels + 1);
    for l in 0..=levels {
        let side = 1usize << l;
        let mut hist = vec![0.0; side * side * num_classes];
        for y in 0..h {
            let row = y * side / h;
            for x in 0..w {
                let col = x * side / w;
                hist[(row * side + col) * num_classes + labels.get(y, x)] += 1.0;
            }
        }
        for cell in hist.chunks_exact_mut(num_classes) {
            let total: f64 = cell.iter().sum();
            if total > 0.0 {
                cell.iter_mut().for_each(|v| *v /= total);
            }
        }
        cells.push(hist);
    }
    Ok(PyramidHistogram { levels, num_classes, cells, weights: level_weights(levels) })
}

/// Ranks `corpus` by ascending distance to `query`; ties keep id order.
pub fn retrieve_reference<Id: Ord + Clone>(
    query: &PyramidHistogram,
    corpus: &[(Id, PyramidHistogram)],
) -> Result<Vec<(Id, f64)>> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("retrieval corpus is empty".into()));
    }
    let mut ranked = corpus
        .iter()
        .map(|(id, p)| Ok((id.clone(), query.distance(p)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| match a.1.total_cmp(&b.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(label: u8, n: usize, classes: usize) -> LabelMap {
        LabelMap::new(n, n, classes, vec![label; n * n]).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        for levels in 0..6 {
            let s: f64 = level_weights(levels).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "levels={levels}");
        }
        assert_eq!(level_weights(2), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn level_zero_is_plain_histogram() {
        let labels = LabelMap::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
        let p = spatial_pyramid_histogram(&labels, 0, 3).unwrap();
        assert_eq!(p.cell(0, 0, 0), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn constant_map_gives_point_masses() {
        let p = spatial_pyramid_histogram(&constant(2, 8, 4), 2, 4).unwrap();
        for l in 0..=2 {
            let side = 1 << l;
            for r in 0..side {
                for c in 0..side {
                    assert_eq!(p.cell(l, r, c), &[0.0, 0.0, 1.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn one_pixel_per_cell() {
        let labels = LabelMap::new(2, 2, 4, vec![0, 1, 2, 3]).unwrap();
        let p = spatial_pyramid_histogram(&labels, 1, 4).unwrap();
        for (i, (r, c)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let mut expect = [0.0; 4];
            expect[i] = 1.0;
            assert_eq!(p.cell(1, r, c), &expect);
        }
    }

    #[test]
    fn empty_cells_on_tiny_maps() {
        let labels = LabelMap::new(1, 1, 2, vec![1]).unwrap();
        let p = spatial_pyramid_histogram(&labels, 2, 2).unwrap();
        assert_eq!(p.cell(2, 0, 0), &[0.0, 1.0]);
        assert_eq!(p.cell(2, 3, 3), &[0.0, 0.0]);
        assert_eq!(p.distance(&p).unwrap(), 0.0);
    }

    #[test]
    fn retrieval_ranks_exact_match_first() {
        let q = spatial_pyramid_histogram(&LabelMap::new(2, 2, 3, vec![0, 1, 1, 2]).unwrap(), 1, 3).unwrap();
        let corpus = vec![
            ("a", spatial_pyramid_histogram(&constant(1, 2, 3), 1, 3).unwrap()),
            ("b", q.clone()),
            ("c", spatial_pyramid_histogram(&constant(0, 2, 3), 1, 3).unwrap()),
        ];
        let ranked = retrieve_reference(&q, &corpus).unwrap();
        assert_eq!(ranked[0], ("b", 0.0));
        assert_eq!(retrieve_reference(&q, &corpus[..1]).unwrap()[0].0, "a");
    }

    #[test]
    fn retrieval_disjoint_supports_and_ties() {
        let zero = spatial_pyramid_histogram(&constant(0, 4, 2), 2, 2).unwrap();
        let one = spatial_pyramid_histogram(&constant(1, 4, 2), 2, 2).unwrap();
        let ranked = retrieve_reference(&zero, &[(1, one.clone()), (2, zero.clone())]).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(ranked[1].1, 1.0);
        let tied = retrieve_reference(&zero, &[(9, one.clone()), (3, one.clone())]).unwrap();
        assert_eq!(tied.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 9]);
    }

    #[test]
    fn mismatched_pyramids_error() {
        let a = spatial_pyramid_histogram(&constant(0, 4, 2), 2, 2).unwrap();
        let b = spatial_pyramid_histogram(&constant(0, 4, 2), 1, 2).unwrap();
        assert!(retrieve_reference(&a, &[(0, b)]).is_err());
        assert!(retrieve_reference::<u32>(&a, &[]).is_err());
    }

    fn label_map(n: usize) -> impl Strategy<Value = LabelMap> {
        proptest::collection::vec(0u8..5, n * n).prop_map(move |d| LabelMap::new(n, n, 5, d).unwrap())
    }

    proptest! {
        #[test]
        fn distance_is_a_semimetric(a in label_map(6), b in label_map(6), levels in 0usize..3) {
            let p = spatial_pyramid_histogram(&a, levels, 5).unwrap();
            let q = spatial_pyramid_histogram(&b, levels, 5).unwrap();
            prop_assert!(p.distance(&p).unwrap().abs() < 1e-12);
            let d = p.distance(&q).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - q.distance(&p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn cells_are_normalized(a in label_map(7), levels in 0usize..4) {
            let p = spatial_pyramid_histogram(&a, levels, 5).unwrap();
            prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for l in 0..=levels {
                for cell in p.cells_at(l) {
                    let s: f64 = cell.iter().sum();
                    prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
