//! Small descriptive statistics shared by the reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-width histogram. `edges` has `counts.len() + 1` entries; values
/// outside `[edges[0], edges[last]]` are clamped into the end bins, so counts
/// always sum to the number of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "histogram needs bins >= 1 and finite lo < hi, got {bins} bins over [{lo}, {hi}]"
            )));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
            let idx = if pos.is_nan() || pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
            counts[idx] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Area under the ROC curve of `score` separating `positives` from
/// `negatives`: the probability that a random positive outranks a random
/// negative, ties counting one half.
pub fn roc_area(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U via midranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * all[i..j].iter().filter(|(_, p)| *p).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts() {
        let h = Histogram::new(&[-2.0, -1.0, 0.0, 0.999, 1.0, 5.0], -1.0, 1.0, 4).unwrap();
        assert_eq!(h.edges, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 0, 1, 3]);
        assert_eq!(h.total(), 6);
        assert!(Histogram::new(&[], 1.0, 1.0, 3).is_err());
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean(&[1.0, 2.0]), Some(1.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn roc_area_extremes() {
        assert_eq!(roc_area(&[2.0, 3.0], &[0.0, 1.0]), Some(1.0));
        assert_eq!(roc_area(&[0.0, 1.0], &[2.0, 3.0]), Some(0.0));
        assert_eq!(roc_area(&[1.0, 1.0], &[1.0]), Some(0.5));
        assert_eq!(roc_area(&[], &[1.0]), None);
    }
}
