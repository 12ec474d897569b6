use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Win counts between methods: `wins[i][j]` is how often `ids[i]` was
/// preferred over `ids[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseCounts {
    ids: Vec<String>,
    wins: Vec<Vec<u64>>,
}

impl PairwiseCounts {
    pub fn new(ids: Vec<String>, wins: Vec<Vec<u64>>) -> Result<Self> {
        let n = ids.len();
        if wins.len() != n || wins.iter().any(|row| row.len() != n) {
            return Err(Error::Pairwise(format!("win matrix must be {n}x{n}")));
        }
        if (0..n).any(|i| wins[i][i] != 0) {
            return Err(Error::Pairwise("a method cannot be compared with itself".into()));
        }
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::Pairwise("duplicate method id".into()));
        }
        Ok(Self { ids, wins })
    }

    /// Tallies `(winner, loser)` judgments; methods are ordered by id.
    pub fn from_judgments<S: AsRef<str>>(judgments: &[(S, S)]) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (w, l) in judgments {
            index.insert(w.as_ref(), 0);
            index.insert(l.as_ref(), 0);
        }
        for (k, slot) in index.values_mut().enumerate() {
            *slot = k;
        }
        let n = index.len();
        let mut wins = vec![vec![0u64; n]; n];
        for (w, l) in judgments {
            if w.as_ref() == l.as_ref() {
                return Err(Error::Pairwise(format!("{} compared with itself", w.as_ref())));
            }
            wins[index[w.as_ref()]][index[l.as_ref()]] += 1;
        }
        Self::new(index.into_keys().map(str::to_owned).collect(), wins)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn wins(&self, i: usize, j: usize) -> u64 {
        self.wins[i][j]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn comparisons(&self, i: usize, j: usize) -> u64 {
        self.wins[i][j] + self.wins[j][i]
    }

    fn check_fittable(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Pairwise("no comparisons".into()));
        }
        if let Some(i) = (0..n).find(|&i| (0..n).all(|j| self.comparisons(i, j) == 0)) {
            if n > 1 {
                return Err(Error::IsolatedMethod(self.ids[i].clone()));
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && self.comparisons(i, j) > 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(())
    }

    /// `sum_ij n_ij ln(p_i / (p_i + p_j))`.
    pub fn log_likelihood(&self, scores: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.len() {
            for j in 0..self.len() {
                let n = self.wins[i][j];
                if n > 0 {
                    ll += n as f64 * (scores[i] / (scores[i] + scores[j])).ln();
                }
            }
        }
        ll
    }
}

/// Parses `winner_id,loser_id` rows. A matching header line, blank lines
/// and surrounding whitespace are ignored.
pub fn parse_pairwise_csv(text: &str) -> Result<PairwiseCounts> {
    let mut judgments = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (judgments.is_empty() && line.replace(' ', "") == "winner_id,loser_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match fields[..] {
            [w, l] if !w.is_empty() && !l.is_empty() => judgments.push((w, l)),
            _ => return Err(Error::Pairwise(format!("line {}: expected `winner_id,loser_id`", k + 1))),
        }
    }
    PairwiseCounts::from_judgments(&judgments)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtFit {
    /// Strengths in the order of [`PairwiseCounts::ids`], with mean 1.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the start and after every iteration.
    pub log_likelihood: Vec<f64>,
}

/// Maximum-likelihood Bradley-Terry strengths by the MM fixed point
/// `p_i <- W_i / sum_j m_ij / (p_i + p_j)`, stopped once the largest
/// relative change drops below `tolerance`.
pub fn bt_scores(counts: &PairwiseCounts, tolerance: f64, max_iters: usize) -> Result<BtFit> {
    counts.check_fittable()?;
    let n = counts.len();
    let total_wins: Vec<f64> = (0..n).map(|i| counts.wins[i].iter().sum::<u64>() as f64).collect();
    let mut p = vec![1.0; n];
    let mut trace = vec![counts.log_likelihood(&p)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                if total_wins[i] == 0.0 {
                    return 0.0;
                }
                let denom: f64 = (0..n)
                    .filter(|&j| j != i && counts.comparisons(i, j) > 0)
                    .map(|j| counts.comparisons(i, j) as f64 / (p[i] + p[j]))
                    .sum();
                total_wins[i] / denom
            })
            .collect();
        let mean = next.iter().sum::<f64>() / n as f64;
        next.iter_mut().for_each(|v| *v /= mean);
        let change = p
            .iter()
            .zip(&next)
            .map(|(&a, &b)| if a == b { 0.0 } else { (b - a).abs() / a.max(b) })
            .fold(0.0, f64::max);
        p = next;
        let ll = counts.log_likelihood(&p);
        let prev = *trace.last().expect("initial value");
        assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "MM step decreased the log-likelihood: {prev} -> {ll}");
        trace.push(ll);
        if change < tolerance {
            converged = true;
            break;
        }
    }
    Ok(BtFit { scores: p, iterations, converged, log_likelihood: trace })
}
