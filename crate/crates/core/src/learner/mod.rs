//! One-vs-rest linear SVM used both as the access point's global model and as
//! each device's local model.

mod io;
mod pegasos;

pub use io::{read_model, read_model_file, write_model, write_model_file, MODEL_MAGIC};
pub use pegasos::{objective, update, TrainConfig};

use crate::scalar::dot;
use crate::{Error, Result, Scalar};

/// A feature vector and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub data: Vec<T>,
    pub label: usize,
}

impl<T> Sample<T> {
    pub fn new(data: Vec<T>, label: usize) -> Self {
        Self { data, label }
    }
}

/// Importance of a received sample under the current model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Importance {
    /// The current model misclassifies the sample.
    More,
    /// The current model already classifies the sample correctly.
    Less,
}

impl Importance {
    pub fn as_str(self) -> &'static str {
        match self {
            Importance::More => "more",
            Importance::Less => "less",
        }
    }
}

/// `classes x (dim + 1)` weight matrix, row-major; the last column of each
/// row is the bias, applied to an implicit constant-1 feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    classes: usize,
    dim: usize,
    weights: Vec<T>,
    steps: u64,
}

impl<T: Scalar> LinearModel<T> {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![T::zero(); classes * (dim + 1)],
            steps: 0,
        }
    }

    pub fn from_weights(classes: usize, dim: usize, weights: Vec<T>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("a model needs at least one class"));
        }
        if weights.len() != classes * (dim + 1) {
            return Err(Error::invalid(format!(
                "expected {} weights for {classes} classes of dimension {dim}, got {}",
                classes * (dim + 1),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(Self {
            classes,
            dim,
            weights,
            steps: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Feature dimension, excluding the bias.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened weights, the payload a device uploads.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<T> {
        self.weights
    }

    /// Number of SGD steps taken so far; drives the step-size schedule of
    /// warm-started updates.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn row(&self, class: usize) -> &[T] {
        let w = self.dim + 1;
        &self.weights[class * w..(class + 1) * w]
    }

    pub fn score(&self, class: usize, data: &[T]) -> T {
        let row = self.row(class);
        dot(&row[..self.dim], data) + row[self.dim]
    }

    fn check_dim(&self, data: &[T]) -> Result<()> {
        if data.len() == self.dim {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "data has dimension {}, model expects {}",
                data.len(),
                self.dim
            )))
        }
    }

    /// Class with the highest score; ties go to the lowest index.
    pub fn predict(&self, data: &[T]) -> Result<usize> {
        self.check_dim(data)?;
        let mut best = 0;
        let mut best_score = self.score(0, data);
        for c in 1..self.classes {
            let s = self.score(c, data);
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        Ok(best)
    }

    /// Misclassified data is more important.
    pub fn judge(&self, estimate: &[T], label: usize) -> Result<Importance> {
        Ok(if self.predict(estimate)? == label {
            Importance::Less
        } else {
            Importance::More
        })
    }

    /// Fraction of `testset` classified correctly.
    pub fn evaluate(&self, testset: &[Sample<T>]) -> Result<f64> {
        if testset.is_empty() {
            return Err(Error::invalid("test set is empty"));
        }
        let mut correct = 0usize;
        for s in testset {
            if self.predict(&s.data)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / testset.len() as f64)
    }

    pub fn scale(&mut self, factor: T) {
        for w in &mut self.weights {
            *w *= factor;
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [T], &mut u64) {
        (&mut self.weights, &mut self.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = LinearModel::<f64>::zeros(10, 5);
        assert_eq!(m.predict(&[0.3, -1.0, 2.0, 0.0, 9.0]).unwrap(), 0);
        assert_eq!(m.judge(&[1.0; 5], 0).unwrap(), Importance::Less);
        assert_eq!(m.judge(&[1.0; 5], 3).unwrap(), Importance::More);
    }

    #[test]
    fn unique_positive_score_wins() {
        let d = 4;
        let mut w = vec![0.0; 3 * (d + 1)];
        w[(d + 1)..(d + 1) + d].copy_from_slice(&unit(d, 0));
        let m = LinearModel::from_weights(3, d, w).unwrap();
        assert_eq!(m.predict(&unit(d, 0)).unwrap(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = LinearModel::<f64>::zeros(2, 3);
        assert!(m.predict(&[1.0, 2.0]).is_err());
        assert!(m.judge(&[1.0; 4], 0).is_err());
        assert!(LinearModel::from_weights(2, 3, vec![0.0; 7]).is_err());
        assert!(LinearModel::from_weights(1, 1, vec![f64::NAN, 0.0]).is_err());
        assert!(m.evaluate(&[]).is_err());
    }

    #[test]
    fn evaluate_counts_class_zero_fraction_for_zero_model() {
        let m = LinearModel::<f64>::zeros(10, 2);
        let test: Vec<_> = (0..100).map(|i| Sample::new(vec![i as f64, 1.0], i % 10)).collect();
        assert_eq!(m.evaluate(&test).unwrap(), 0.1);
    }

    fn model_strategy() -> impl Strategy<Value = (LinearModel<f64>, Vec<Vec<f64>>)> {
        (1usize..6, 1usize..8).prop_flat_map(|(c, d)| {
            (
                prop::collection::vec(-5.0f64..5.0, c * (d + 1)),
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), 1..20),
            )
                .prop_map(move |(w, xs)| (LinearModel::from_weights(c, d, w).unwrap(), xs))
        })
    }

    proptest! {
        #[test]
        fn predict_matches_brute_force_argmax((m, xs) in model_strategy()) {
            for x in &xs {
                let scores: Vec<f64> = (0..m.classes())
                    .map(|c| {
                        let row = m.row(c);
                        x.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + row[m.dim()]
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let expected = scores.iter().position(|&s| s == max).unwrap();
                // Summation order can differ from the unrolled dot product; only
                // compare where the winner is not a near tie.
                let runner_up = scores
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != expected)
                    .map(|(_, &s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max - runner_up > 1e-9 {
                    prop_assert_eq!(m.predict(x).unwrap(), expected);
                }
            }
        }

        #[test]
        fn predict_ignores_common_shift((m, xs) in model_strategy(), shift in -10.0f64..10.0) {
            let c = m.classes();
            let d = m.dim();
            // Adding the same vector to every class row shifts all scores equally.
            let shift_row: Vec<f64> = (0..=d).map(|j| shift * (j as f64 + 1.0).sin()).collect();
            let mut w = m.weights().to_vec();
            for r in 0..c {
                for j in 0..=d {
                    w[r * (d + 1) + j] += shift_row[j];
                }
            }
            let shifted = LinearModel::from_weights(c, d, w).unwrap();
            for x in &xs {
                let scores: Vec<f64> = (0..c).map(|k| m.score(k, x)).collect();
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-6 {
                    prop_assert_eq!(m.predict(x).unwrap(), shifted.predict(x).unwrap());
                }
            }
        }

        #[test]
        fn judging_own_prediction_is_less_important((m, xs) in model_strategy()) {
            for x in &xs {
                let p = m.predict(x).unwrap();
                prop_assert_eq!(m.judge(x, p).unwrap(), Importance::Less);
            }
        }

        #[test]
        fn evaluate_is_permutation_invariant((m, xs) in model_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let test: Vec<Sample<f64>> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| Sample::new(x.clone(), i % m.classes()))
                .collect();
            let mut shuffled = test.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(m.evaluate(&test).unwrap(), m.evaluate(&shuffled).unwrap());
            let recount = test.iter().filter(|s| m.predict(&s.data).unwrap() == s.label).count();
            prop_assert_eq!(m.evaluate(&test).unwrap(), recount as f64 / test.len() as f64);
        }

        #[test]
        fn positive_scaling_keeps_predictions((m, xs) in model_strategy(), factor in 1e-3f64..1e3) {
            let mut scaled = m.clone();
            scaled.scale(factor);
            for x in &xs {
                let scores: Vec<f64> = (0..m.classes()).map(|k| m.score(k, x)).collect();
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 {
                    prop_assert_eq!(m.predict(x).unwrap(), scaled.predict(x).unwrap());
                }
            }
        }
    }
}
