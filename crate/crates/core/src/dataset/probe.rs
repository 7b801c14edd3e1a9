use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, ATTRIBUTE_NAMES, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the gradient's max-norm falls below this.
    pub tolerance: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            l2: 1e-4,
            max_iterations: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub iterations: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Fits a multinomial logistic regression from the 18 attribute bits to the
/// class label by full-batch gradient descent and reports split accuracies.
pub fn attribute_linear_probe<T: Scalar>(
    ds: &Dataset<T>,
    seed: u64,
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let collect = |split| -> (Vec<Vec<f64>>, Vec<usize>) {
        ds.iter()
            .filter(|s| s.split == split)
            .map(|s| (s.attributes.to_vec(), s.class_label.index()))
            .unzip()
    };
    let (x_train, y_train) = collect(Split::Train);
    let (x_test, y_test) = collect(Split::Test);
    let mut present: Vec<usize> = y_train.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "attribute probe needs at least 2 classes in the train split, found {}",
            present.len()
        )));
    }
    if x_test.is_empty() {
        return Err(Error::InvalidArgument("attribute probe needs a test split".into()));
    }

    let n_in = ATTRIBUTE_NAMES.len();
    let n_out = CLASS_NAMES.len();
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut rng = rng_from(seed);
    // Row c holds the class-c weights followed by its bias.
    let mut w: Vec<Vec<f64>> = (0..n_out)
        .map(|_| (0..=n_in).map(|_| init.sample(&mut rng)).collect())
        .collect();

    let n = x_train.len() as f64;
    let mut iterations = 0;
    let mut grad = vec![vec![0.0; n_in + 1]; n_out];
    while iterations < opts.max_iterations {
        iterations += 1;
        for row in grad.iter_mut() {
            row.iter_mut().for_each(|g| *g = 0.0);
        }
        for (x, &y) in x_train.iter().zip(&y_train) {
            let p = softmax(&logits(&w, x));
            for (c, row) in grad.iter_mut().enumerate() {
                let d = p[c] - if c == y { 1.0 } else { 0.0 };
                for (g, xi) in row.iter_mut().zip(x.iter().chain(std::iter::once(&1.0))) {
                    *g += d * xi / n;
                }
            }
        }
        let mut max_g: f64 = 0.0;
        for (row, g_row) in w.iter_mut().zip(&grad) {
            for (j, (wj, gj)) in row.iter_mut().zip(g_row).enumerate() {
                let reg = if j < n_in { opts.l2 * *wj } else { 0.0 };
                let g = gj + reg;
                max_g = max_g.max(g.abs());
                *wj -= opts.learning_rate * g;
            }
        }
        if max_g < opts.tolerance {
            break;
        }
    }

    let accuracy = |xs: &[Vec<f64>], ys: &[usize]| {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| argmax(&logits(&w, x)) == y)
            .count();
        hits as f64 / xs.len().max(1) as f64
    };
    Ok(ProbeResult {
        train_accuracy: accuracy(&x_train, &y_train),
        test_accuracy: accuracy(&x_test, &y_test),
        iterations,
        n_train: x_train.len(),
        n_test: x_test.len(),
    })
}

fn logits(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()])
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, Coding, SynthSpec};

    #[test]
    fn unique_attribute_per_class_is_perfectly_separable() {
        let ds = synth_dataset::<f32>(&SynthSpec::new(80, 16, Coding::ForegroundCoded, 10, 3)).unwrap();
        let r = attribute_linear_probe(&ds, 1, &ProbeOptions::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.train_accuracy, 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let ds = synth_dataset::<f32>(&SynthSpec::new(40, 16, Coding::ForegroundCoded, 4, 3)).unwrap();
        let opts = ProbeOptions { max_iterations: 50, ..Default::default() };
        assert_eq!(
            attribute_linear_probe(&ds, 9, &opts).unwrap(),
            attribute_linear_probe(&ds, 9, &opts).unwrap()
        );
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = synth_dataset::<f32>(&SynthSpec::new(40, 16, Coding::ForegroundCoded, 4, 3)).unwrap();
        let only = ds.filter(|s| s.class_label.0 == 0);
        assert!(attribute_linear_probe(&only, 1, &ProbeOptions::default()).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
