use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionScore {
    pub rand_index: f64,
    pub adjusted_rand_index: f64,
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

struct PairCounts {
    total: f64,
    /// Σ C(n_ij, 2) over the contingency table.
    both: f64,
    truth: f64,
    pred: f64,
}

fn pair_counts(truth: &[usize], pred: &[usize]) -> Result<PairCounts> {
    if truth.len() != pred.len() {
        return Err(Error::Invalid(format!(
            "label vectors differ in length ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::Invalid("partition scores need at least two items".into()));
    }
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *cells.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    let sum = |m: &mut dyn Iterator<Item = u64>| m.map(choose2).sum::<f64>();
    Ok(PairCounts {
        total: choose2(truth.len() as u64),
        both: sum(&mut cells.into_values()),
        truth: sum(&mut rows.into_values()),
        pred: sum(&mut cols.into_values()),
    })
}

/// Fraction of item pairs on which the two partitions agree.
pub fn rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let c = pair_counts(truth, pred)?;
    let agree = c.total + 2.0 * c.both - c.truth - c.pred;
    Ok(agree / c.total)
}

/// Rand index corrected for chance under the permutation model.
pub fn adjusted_rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let c = pair_counts(truth, pred)?;
    let expected = c.truth * c.pred / c.total;
    let max = 0.5 * (c.truth + c.pred);
    if max == expected {
        let identical = c.both == c.truth && c.both == c.pred;
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((c.both - expected) / (max - expected))
}

pub fn score_partition(truth: &[usize], pred: &[usize]) -> Result<PartitionScore> {
    Ok(PartitionScore {
        rand_index: rand_index(truth, pred)?,
        adjusted_rand_index: adjusted_rand_index(truth, pred)?,
    })
}
