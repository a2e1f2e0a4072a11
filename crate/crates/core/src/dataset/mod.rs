//! Training corpora: IDX (MNIST) files, synthetic Gaussian blobs, payload
//! power normalization and splits across devices.

mod idx;

pub use idx::{load_idx, parse_idx, write_idx, IMAGE_MAGIC, LABEL_MAGIC};

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::learner::Sample;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    dim: usize,
    num_classes: usize,
    scale: f64,
}

impl<T: Scalar> Dataset<T> {
    /// An empty dataset; only produced by splits that leave a device without data.
    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self {
            samples: Vec::new(),
            dim,
            num_classes,
            scale: 1.0,
        }
    }

    pub fn new(samples: Vec<Sample<T>>, dim: usize, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if let Some(s) = samples.iter().find(|s| s.data.len() != dim) {
            return Err(Error::invalid(format!(
                "sample of dimension {} in a dataset of dimension {dim}",
                s.data.len()
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} out of range for {num_classes} classes",
                s.label
            )));
        }
        Ok(Self {
            samples,
            dim,
            num_classes,
            scale: 1.0,
        })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Cumulative factor applied to the features since construction.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    pub fn mean_square(&self) -> f64 {
        let total: f64 = self
            .samples
            .iter()
            .flat_map(|s| s.data.iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum();
        total / (self.samples.len() * self.dim).max(1) as f64
    }

    pub fn apply_scale(&mut self, factor: f64) {
        let f = T::from_f64_lossy(factor);
        for s in &mut self.samples {
            for v in &mut s.data {
                *v *= f;
            }
        }
        self.scale *= factor;
    }

    /// Rescales to unit mean-square feature value; returns the factor applied.
    /// An all-zero dataset is left unchanged.
    pub fn normalize_power(&mut self) -> f64 {
        let ms = self.mean_square();
        if ms == 0.0 {
            return 1.0;
        }
        let factor = 1.0 / ms.sqrt();
        self.apply_scale(factor);
        factor
    }

    /// Brings this dataset to the same cumulative scale as `reference`, e.g.
    /// a test set onto the power normalization of its training set.
    pub fn match_scale(&mut self, reference: &Dataset<T>) {
        let factor = reference.scale / self.scale;
        self.apply_scale(factor);
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
            scale: self.scale,
        }
    }

    /// `n` samples drawn without replacement, with class proportions preserved
    /// up to rounding. Returned in the original order.
    pub fn stratified_subset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset<T>> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!(
                "subset size {n} must be in 1..={}",
                self.len()
            )));
        }
        let by_class = self.indices_by_class();
        let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let take = apportion(&counts, n);
        let mut picked = Vec::with_capacity(n);
        for (mut idx, k) in by_class.into_iter().zip(take) {
            idx.shuffle(rng);
            picked.extend_from_slice(&idx[..k]);
        }
        picked.sort_unstable();
        Ok(self.subset(&picked))
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, l) in self.labels().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// Splits `total` into integer shares proportional to `weights` by the
/// largest-remainder rule, never exceeding a weight. Ties go to the lower index.
pub(crate) fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    assert!(total <= sum, "cannot apportion {total} out of {sum}");
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<u128> = weights.iter().map(|&w| w as u128 * total as u128).collect();
    let mut shares: Vec<usize> = exact.iter().map(|&e| (e / sum as u128) as usize).collect();
    let mut left = total - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] % sum as u128;
        let rb = exact[b] % sum as u128;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if shares[i] < weights[i] {
            shares[i] += 1;
            left -= 1;
        }
    }
    shares
}

/// Gaussian blobs: class `c` centred at `separation * e_(c mod dim)`, unit
/// isotropic spread, power-normalized. Samples are ordered by class.
pub fn synth_blobs<T: Scalar, R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset<T>> {
    if classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::invalid("blob counts must all be >= 1"));
    }
    if !(separation > 0.0) {
        return Err(Error::invalid(format!("separation must be > 0, got {separation}")));
    }
    let mut samples = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        for _ in 0..n_per_class {
            let mut x: Vec<T> = (0..dim).map(|_| T::standard_normal(rng)).collect();
            x[c % dim] += T::from_f64_lossy(separation);
            samples.push(Sample::new(x, c));
        }
    }
    let mut ds = Dataset::new(samples, dim, classes)?;
    ds.normalize_power();
    Ok(ds)
}

/// How a training set is divided among devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// `devices` disjoint parts at uniformly random cut points, each non-empty.
    Random { devices: usize },
    /// Two parts with `|D1| / |D2| = ratio`, stratified by class.
    Ratio { ratio: f64 },
}

impl SplitSpec {
    pub fn devices(&self) -> usize {
        match self {
            SplitSpec::Random { devices } => *devices,
            SplitSpec::Ratio { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Random { devices: 0 } => {
                Err(Error::invalid("number of devices must be >= 1"))
            }
            SplitSpec::Ratio { ratio } if !(ratio > 0.0 && ratio.is_finite()) => {
                Err(Error::invalid(format!("size ratio must be > 0, got {ratio}")))
            }
            _ => Ok(()),
        }
    }
}

/// Index sets of a split; each set is sorted and the sets partition `0..n`.
pub fn split_indices<R: Rng + ?Sized>(
    labels: &[usize],
    num_classes: usize,
    spec: SplitSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n = labels.len();
    let k = spec.devices();
    if k > n {
        return Err(Error::invalid(format!("cannot split {n} samples across {k} devices")));
    }
    let mut parts = match spec {
        SplitSpec::Random { devices } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut cuts: Vec<usize> = index::sample(rng, n - 1, devices - 1)
                .into_iter()
                .map(|c| c + 1)
                .collect();
            cuts.sort_unstable();
            cuts.push(n);
            let mut start = 0;
            cuts.into_iter()
                .map(|end| {
                    let part = order[start..end].to_vec();
                    start = end;
                    part
                })
                .collect::<Vec<_>>()
        }
        SplitSpec::Ratio { ratio } => {
            let first = (n as f64 * ratio / (1.0 + ratio)).round() as usize;
            let mut by_class = vec![Vec::new(); num_classes];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
            let take = apportion(&counts, first.min(n));
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (mut idx, t) in by_class.into_iter().zip(take) {
                idx.shuffle(rng);
                a.extend_from_slice(&idx[..t]);
                b.extend_from_slice(&idx[t..]);
            }
            vec![a, b]
        }
    };
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Splits a dataset across devices; see [`SplitSpec`].
pub fn split<T: Scalar, R: Rng + ?Sized>(
    dataset: &Dataset<T>,
    spec: SplitSpec,
    rng: &mut R,
) -> Result<Vec<Dataset<T>>> {
    let labels: Vec<usize> = dataset.labels().collect();
    let parts = split_indices(&labels, dataset.num_classes(), spec, rng)?;
    Ok(parts.iter().map(|p| dataset.subset(p)).collect())
}
