//! Regularized hinge-loss SGD (Pegasos schedule `eta_t = 1 / (lambda t)`),
//! one binary problem per class sharing the pass over the data.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{LinearModel, Sample};
use crate::scalar::{axpy, dot};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// L2 regularization strength `lambda`.
    pub lambda: f64,
    /// Passes over the buffer per call to [`update`].
    pub epochs: usize,
    /// Added to the step counter in the schedule, `eta = 1 / (lambda (t + offset))`.
    /// With offset 0 this is plain Pegasos, whose first steps are of size
    /// `1 / lambda`.
    pub schedule_offset: f64,
    /// Project each class's weights onto the ball of radius `1 / sqrt(lambda)`.
    pub project: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

impl TrainConfig {
    /// One epoch per update and the schedule offset from [`Self::auto_offset`].
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            epochs: 1,
            schedule_offset: Self::auto_offset(lambda),
            project: true,
        }
    }

    /// Offset that makes the first step size `lambda^(-1/4)` (Bottou's
    /// heuristic for hinge loss, also used by scikit-learn's "optimal" rate).
    pub fn auto_offset(lambda: f64) -> f64 {
        1.0 / (lambda * lambda.powf(-0.25))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.schedule_offset >= 0.0 && self.schedule_offset.is_finite()) {
            return Err(Error::invalid("schedule offset must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        Ok(())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }
}

/// Average regularized one-vs-rest hinge loss:
/// `lambda/2 |W|^2 + 1/n sum_i sum_c max(0, 1 - y_ic (w_c . x_i + b_c))`.
pub fn objective<T: Scalar>(model: &LinearModel<T>, data: &[Sample<T>], lambda: f64) -> f64 {
    let reg = model.weights().iter().map(|w| w.to_f64_lossy().powi(2)).sum::<f64>();
    let mut hinge = 0.0;
    for s in data {
        for c in 0..model.classes() {
            let y = if s.label == c { 1.0 } else { -1.0 };
            hinge += (1.0 - y * model.score(c, &s.data).to_f64_lossy()).max(0.0);
        }
    }
    0.5 * lambda * reg + hinge / data.len().max(1) as f64
}

/// Runs `cfg.epochs` shuffled passes of SGD over `buffer`, warm-started from
/// `model` and continuing its step counter.
pub fn update<T: Scalar, R: Rng + ?Sized>(
    model: &LinearModel<T>,
    buffer: &[Sample<T>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LinearModel<T>> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::invalid("training buffer is empty"));
    }
    if let Some(s) = buffer.iter().find(|s| s.data.len() != model.dim()) {
        return Err(Error::invalid(format!(
            "sample has dimension {}, model expects {}",
            s.data.len(),
            model.dim()
        )));
    }
    if let Some(s) = buffer.iter().find(|s| s.label >= model.classes()) {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            s.label,
            model.classes()
        )));
    }

    let mut out = model.clone();
    let mut state = ScaledWeights::new(&mut out, cfg);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            state.step(&buffer[i]);
        }
    }
    state.finish();
    Ok(out)
}

/// Weight rows kept as `w_c = scale_c * v_c` so the per-step shrink and the
/// projection cost O(1) instead of O(d).
struct ScaledWeights<'a, T> {
    weights: &'a mut [T],
    steps: &'a mut u64,
    scale: Vec<f64>,
    sq_norm: Vec<f64>,
    classes: usize,
    dim: usize,
    lambda: f64,
    offset: f64,
    radius: Option<f64>,
    margins: Vec<f64>,
}

impl<'a, T: Scalar> ScaledWeights<'a, T> {
    fn new(model: &'a mut LinearModel<T>, cfg: &TrainConfig) -> Self {
        let classes = model.classes();
        let dim = model.dim();
        let (weights, steps) = model.parts_mut();
        let sq_norm = weights
            .chunks(dim + 1)
            .map(|r| r.iter().map(|w| w.to_f64_lossy().powi(2)).sum())
            .collect();
        Self {
            weights,
            steps,
            scale: vec![1.0; classes],
            sq_norm,
            classes,
            dim,
            lambda: cfg.lambda,
            offset: cfg.schedule_offset,
            radius: cfg.project.then(|| 1.0 / cfg.lambda.sqrt()),
            margins: vec![0.0; classes],
        }
    }

    fn step(&mut self, sample: &Sample<T>) {
        *self.steps += 1;
        let t = *self.steps as f64 + self.offset;
        let eta = 1.0 / (self.lambda * t);
        let shrink = 1.0 - eta * self.lambda;
        let w = self.dim + 1;
        let x = &sample.data;
        let x_sq = x.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() + 1.0;

        for c in 0..self.classes {
            let row = &self.weights[c * w..(c + 1) * w];
            self.margins[c] = (dot(&row[..self.dim], x) + row[self.dim]).to_f64_lossy();
        }

        for c in 0..self.classes {
            let y = if sample.label == c { 1.0 } else { -1.0 };
            let raw = self.margins[c];
            let violated = y * self.scale[c] * raw < 1.0;

            if shrink <= 0.0 {
                // First step of a fresh schedule: (1 - eta lambda) = 0 wipes the row.
                self.weights[c * w..(c + 1) * w].fill(T::zero());
                self.scale[c] = 1.0;
                self.sq_norm[c] = 0.0;
            } else {
                self.scale[c] *= shrink;
            }
            let row_dot = if shrink <= 0.0 { 0.0 } else { raw };

            if violated {
                let alpha = eta * y / self.scale[c];
                let row = &mut self.weights[c * w..(c + 1) * w];
                axpy(T::from_f64_lossy(alpha), x, &mut row[..self.dim]);
                row[self.dim] += T::from_f64_lossy(alpha);
                self.sq_norm[c] += 2.0 * alpha * row_dot + alpha * alpha * x_sq;
            }

            if let Some(radius) = self.radius {
                let norm = self.scale[c] * self.sq_norm[c].max(0.0).sqrt();
                if norm > radius {
                    self.scale[c] *= radius / norm;
                }
            }

            if self.scale[c] < 1e-8 {
                self.fold(c);
            }
        }
    }

    /// Multiplies the scale of row `c` back into its weights.
    fn fold(&mut self, c: usize) {
        let w = self.dim + 1;
        let s = T::from_f64_lossy(self.scale[c]);
        let row = &mut self.weights[c * w..(c + 1) * w];
        for v in row.iter_mut() {
            *v *= s;
        }
        self.sq_norm[c] = row.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
        self.scale[c] = 1.0;
    }

    fn finish(mut self) {
        for c in 0..self.classes {
            self.fold(c);
        }
    }
}
