//! Distributed edge learning: every device trains a local model on its own
//! data once, then uploads noisy copies of it. The access point sums all
//! received copies into the global model.
//!
//! Block allocation follows the schemes compared in the experiments:
//! proportional to local dataset size, equal shares `N / K`, or everything to
//! the device with the most data.

use std::io::Write;

use rand::Rng;

use crate::channel::{BlockFadingChannel, TxSnr};
use crate::dataset::{split, Dataset, SplitSpec};
use crate::learner::{self, LinearModel, TrainConfig};
use crate::rng::{SeedStreams, Stream};
use crate::{Error, Result, Scalar};

/// Resource blocks per device under a total budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    counts: Vec<usize>,
    total: usize,
}

impl AllocationPlan {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn allocated(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Equal shares: `floor(N / K)` blocks for every device.
    pub fn equal(devices: usize, total: usize) -> Result<Self> {
        if devices == 0 || total == 0 {
            return Err(Error::invalid("need at least one device and one block"));
        }
        if total < devices {
            return Err(Error::invalid(format!(
                "equal allocation needs N >= K, got N = {total}, K = {devices}"
            )));
        }
        Ok(Self {
            counts: vec![total / devices; devices],
            total,
        })
    }

    /// All blocks to the device with the largest dataset, ties to the lowest index.
    pub fn largest_only(sizes: &[usize], total: usize) -> Result<Self> {
        if sizes.is_empty() || total == 0 {
            return Err(Error::invalid("need at least one device and one block"));
        }
        let max = *sizes.iter().max().unwrap();
        let winner = sizes.iter().position(|&d| d == max).unwrap();
        let mut counts = vec![0; sizes.len()];
        counts[winner] = total;
        Ok(Self { counts, total })
    }

    /// Devices listed in `silent` get no blocks; their share is not reassigned.
    fn silence(&mut self, silent: &[usize]) {
        for &k in silent {
            self.counts[k] = 0;
        }
    }

    /// `k,D_k,N_k` rows, one per device.
    pub fn write_csv<W: Write>(&self, sizes: &[usize], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "D_k", "N_k"])?;
        for (k, (d, n)) in sizes.iter().zip(&self.counts).enumerate() {
            w.write_record([k.to_string(), d.to_string(), n.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Proportional allocation `N_k = floor(D_k N / sum D)`. The remainder left
/// by flooring stays unused.
pub fn allocate_blocks(sizes: &[usize], total: usize) -> Result<AllocationPlan> {
    let sum: u128 = sizes.iter().map(|&d| d as u128).sum();
    if sum == 0 {
        return Err(Error::invalid("total dataset size must be > 0"));
    }
    if total == 0 {
        return Err(Error::invalid("block budget must be >= 1"));
    }
    let counts = sizes
        .iter()
        .map(|&d| (d as u128 * total as u128 / sum) as usize)
        .collect();
    Ok(AllocationPlan { counts, total })
}

/// Received copies of each device's local model, `copies[k][n]` being the
/// flattened weights after the `n`-th upload of device `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCopies<T> {
    pub classes: usize,
    pub dim: usize,
    pub copies: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> ModelCopies<T> {
    pub fn counts(&self) -> Vec<usize> {
        self.copies.iter().map(Vec::len).collect()
    }
}

/// Trains a device's model from scratch on clean local data. An empty local
/// dataset yields the zero model.
pub fn local_train<T: Scalar, R: Rng + ?Sized>(
    local: &Dataset<T>,
    classes: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LinearModel<T>> {
    let zero = LinearModel::zeros(classes, local.dim());
    if local.is_empty() {
        return Ok(zero);
    }
    learner::update(&zero, local.samples(), cfg, rng)
}

/// Uploads `model` `copies` times, each over its own block with an independent
/// fading draw. Weights are normalized to unit mean-square before transmission;
/// the normalizing factor travels error-free alongside, like labels do.
pub fn transmit_model<T: Scalar, F: Rng + ?Sized, N: Rng + ?Sized>(
    model: &LinearModel<T>,
    copies: usize,
    channel: &BlockFadingChannel,
    fading: &mut F,
    noise: &mut N,
) -> Result<Vec<Vec<T>>> {
    let weights = model.weights();
    let ms = weights.iter().map(|w| w.to_f64_lossy().powi(2)).sum::<f64>() / weights.len() as f64;
    if ms == 0.0 {
        return Ok(vec![weights.to_vec(); copies]);
    }
    let rms = T::from_f64_lossy(ms.sqrt());
    let normalized: Vec<T> = weights.iter().map(|&w| w / rms).collect();
    (0..copies)
        .map(|_| {
            let draw = channel.draw(fading);
            let rx = channel.receive(&normalized, &[draw], noise)?;
            Ok(rx.payload_estimate.into_iter().map(|v| v * rms).collect())
        })
        .collect()
}

fn check_shapes<T: Scalar>(models: &[LinearModel<T>]) -> Result<(usize, usize)> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("need at least one model"))?;
    let shape = (first.classes(), first.dim());
    if models.iter().any(|m| (m.classes(), m.dim()) != shape) {
        return Err(Error::invalid("models have different shapes"));
    }
    Ok(shape)
}

/// Plain model averaging `W = 1/K sum_k w_k`.
pub fn aggregate_equal<T: Scalar>(models: &[LinearModel<T>]) -> Result<LinearModel<T>> {
    let (classes, dim) = check_shapes(models)?;
    let mut sum = vec![T::zero(); classes * (dim + 1)];
    for m in models {
        for (s, &w) in sum.iter_mut().zip(m.weights()) {
            *s += w;
        }
    }
    let k = T::from_usize(models.len()).unwrap();
    LinearModel::from_weights(classes, dim, sum.into_iter().map(|s| s / k).collect())
}

/// Importance-aware aggregation `W' = 1/N sum_k sum_n w_k(n)`. The divisor is
/// the budget `N`, not the number of copies actually received.
pub fn aggregate_importance<T: Scalar>(copies: &ModelCopies<T>, total: usize) -> Result<LinearModel<T>> {
    if total == 0 {
        return Err(Error::invalid("block budget must be >= 1"));
    }
    let received: usize = copies.copies.iter().map(Vec::len).sum();
    if received == 0 {
        return Err(Error::DegenerateAllocation);
    }
    if received > total {
        return Err(Error::invalid(format!(
            "{received} copies exceed the budget of {total} blocks"
        )));
    }
    let len = copies.classes * (copies.dim + 1);
    let mut sum = vec![T::zero(); len];
    for copy in copies.copies.iter().flatten() {
        if copy.len() != len {
            return Err(Error::invalid(format!(
                "model copy has {} weights, expected {len}",
                copy.len()
            )));
        }
        for (s, &w) in sum.iter_mut().zip(copy) {
            *s += w;
        }
    }
    let n = T::from_usize(total).unwrap();
    LinearModel::from_weights(copies.classes, copies.dim, sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistributedScheme {
    /// Blocks proportional to dataset size.
    Proposed,
    /// `floor(N / K)` blocks per device.
    EqualAllocation,
    /// All blocks to the device with the most data.
    LargestOnly,
}

impl DistributedScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributedScheme::Proposed => "proposed",
            DistributedScheme::EqualAllocation => "equal_allocation",
            DistributedScheme::LargestOnly => "largest_only",
        }
    }

    pub fn plan(self, sizes: &[usize], total: usize) -> Result<AllocationPlan> {
        match self {
            DistributedScheme::Proposed => allocate_blocks(sizes, total),
            DistributedScheme::EqualAllocation => AllocationPlan::equal(sizes.len(), total),
            DistributedScheme::LargestOnly => AllocationPlan::largest_only(sizes, total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedConfig {
    /// Total resource blocks `N`.
    pub blocks: usize,
    pub split: SplitSpec,
    pub tx_snr: TxSnr,
    /// SGD settings for local training; `epochs` counts full passes over the
    /// local dataset.
    pub train: TrainConfig,
}

impl DistributedConfig {
    pub fn new(blocks: usize, split: SplitSpec, tx_snr: TxSnr) -> Self {
        Self {
            blocks,
            split,
            tx_snr,
            train: TrainConfig::default().with_epochs(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedOutcome<T> {
    pub scheme: DistributedScheme,
    pub accuracy: f64,
    pub sizes: Vec<usize>,
    pub plan: AllocationPlan,
    /// Devices that received no data and therefore upload nothing.
    pub degenerate: Vec<usize>,
    pub global: LinearModel<T>,
}

impl<T> DistributedOutcome<T> {
    pub fn blocks_spent(&self) -> usize {
        self.plan.allocated()
    }
}

/// Locally trained models of every device after the split.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModels<T> {
    pub sizes: Vec<usize>,
    pub models: Vec<LinearModel<T>>,
    pub dim: usize,
}

/// Splits `train` and trains each device's model. Depends only on the
/// `Split` and `Device(k)` streams, so every scheme can share the result.
pub fn prepare_devices<T: Scalar>(
    train: &Dataset<T>,
    classes: usize,
    split_spec: SplitSpec,
    train_cfg: &TrainConfig,
    streams: &SeedStreams,
) -> Result<DeviceModels<T>> {
    let locals = split(train, split_spec, &mut streams.rng(Stream::Split))?;
    let sizes = locals.iter().map(Dataset::len).collect();
    let models = locals
        .iter()
        .enumerate()
        .map(|(k, d)| local_train(d, classes, train_cfg, &mut streams.rng(Stream::Device(k))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviceModels {
        sizes,
        models,
        dim: train.dim(),
    })
}

/// Allocation, noisy upload, aggregation and test evaluation for one scheme.
pub fn upload_and_evaluate<T: Scalar>(
    devices: &DeviceModels<T>,
    test: &Dataset<T>,
    blocks: usize,
    tx_snr: TxSnr,
    scheme: DistributedScheme,
    streams: &SeedStreams,
) -> Result<DistributedOutcome<T>> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let sizes = devices.sizes.clone();
    let degenerate: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] == 0).collect();
    let mut plan = scheme.plan(&sizes, blocks)?;
    plan.silence(&degenerate);

    let channel = BlockFadingChannel::new(tx_snr);
    let mut fading = streams.rng(Stream::Fading);
    let mut noise = streams.rng(Stream::Noise);
    let copies = devices
        .models
        .iter()
        .zip(plan.counts())
        .map(|(m, &n)| transmit_model(m, n, &channel, &mut fading, &mut noise))
        .collect::<Result<Vec<_>>>()?;
    let classes = devices.models.first().map_or(0, LinearModel::classes);
    let copies = ModelCopies {
        classes,
        dim: devices.dim,
        copies,
    };
    let global = aggregate_importance(&copies, blocks)?;
    let accuracy = global.evaluate(test.samples())?;
    Ok(DistributedOutcome {
        scheme,
        accuracy,
        sizes,
        plan,
        degenerate,
        global,
    })
}

/// One distributed round: split, local training, allocation, noisy upload,
/// aggregation and test evaluation.
///
/// Local models depend only on the split and the per-device `Device(k)`
/// streams, so every scheme sees the same local models under one seed.
pub fn run_distributed<T: Scalar>(
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &DistributedConfig,
    scheme: DistributedScheme,
    streams: &SeedStreams,
) -> Result<DistributedOutcome<T>> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let classes = train.num_classes().max(test.num_classes());
    let devices = prepare_devices(train, classes, cfg.split, &cfg.train, streams)?;
    upload_and_evaluate(&devices, test, cfg.blocks, cfg.tx_snr, scheme, streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;
    use crate::learner::Sample;

    #[test]
    fn proportional_examples() {
        assert_eq!(allocate_blocks(&[30000, 30000], 200).unwrap().counts(), &[100, 100]);
        assert_eq!(allocate_blocks(&[1, 2], 200).unwrap().counts(), &[66, 133]);
        assert_eq!(allocate_blocks(&[0, 5], 7).unwrap().counts(), &[0, 7]);
        assert!(allocate_blocks(&[0, 0], 7).is_err());
        assert!(allocate_blocks(&[], 7).is_err());
        assert!(allocate_blocks(&[1], 0).is_err());
    }

    #[test]
    fn baseline_plans() {
        assert_eq!(AllocationPlan::equal(3, 200).unwrap().counts(), &[66, 66, 66]);
        assert!(AllocationPlan::equal(3, 2).is_err());
        assert_eq!(AllocationPlan::largest_only(&[5, 9, 9], 200).unwrap().counts(), &[0, 200, 0]);
    }

    #[test]
    fn plan_csv() {
        let plan = allocate_blocks(&[1, 2], 200).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&[1, 2], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,D_k,N_k\n0,1,66\n1,2,133\n");
    }

    fn model(classes: usize, dim: usize, f: impl Fn(usize) -> f64) -> LinearModel<f64> {
        LinearModel::from_weights(classes, dim, (0..classes * (dim + 1)).map(f).collect()).unwrap()
    }

    #[test]
    fn equal_aggregation_examples() {
        let w = model(2, 3, |i| i as f64 * 0.5 - 1.0);
        assert_eq!(aggregate_equal(&[w.clone(), w.clone(), w.clone()]).unwrap(), w);
        let mut neg = w.clone();
        neg.scale(-1.0);
        assert!(aggregate_equal(&[w.clone(), neg]).unwrap().weights().iter().all(|&x| x == 0.0));
        assert!(aggregate_equal(&[w, model(2, 2, |_| 0.0)]).is_err());
        assert!(aggregate_equal::<f64>(&[]).is_err());
    }

    #[test]
    fn importance_aggregation_examples() {
        let w1 = model(2, 2, |i| i as f64);
        let w2 = model(2, 2, |i| 1.0 - i as f64);
        let copies = ModelCopies {
            classes: 2,
            dim: 2,
            copies: vec![vec![w1.weights().to_vec()], vec![w2.weights().to_vec(); 2]],
        };
        let agg = aggregate_importance(&copies, 3).unwrap();
        for (i, a) in agg.weights().iter().enumerate() {
            let expected = (w1.weights()[i] + 2.0 * w2.weights()[i]) / 3.0;
            assert!((a - expected).abs() < 1e-15);
        }
        let single = ModelCopies { classes: 2, dim: 2, copies: vec![vec![w1.weights().to_vec(); 3]] };
        let agg = aggregate_importance(&single, 4).unwrap();
        for (a, w) in agg.weights().iter().zip(w1.weights()) {
            assert!((a - 0.75 * w).abs() < 1e-15);
        }
        let empty = ModelCopies::<f64> { classes: 2, dim: 2, copies: vec![vec![], vec![]] };
        assert!(matches!(aggregate_importance(&empty, 3), Err(Error::DegenerateAllocation)));
        assert!(aggregate_importance(&copies, 2).is_err());
    }

    #[test]
    fn transmit_model_edges() {
        let s = SeedStreams::new(1);
        let (mut f, mut n) = (s.rng(Stream::Fading), s.rng(Stream::Noise));
        let w = model(3, 4, |i| (i as f64).sin());
        let ch = BlockFadingChannel::new(TxSnr::new(1.0).unwrap());
        assert!(transmit_model(&w, 0, &ch, &mut f, &mut n).unwrap().is_empty());
        let ch = BlockFadingChannel::new(TxSnr::new(1e12).unwrap());
        for copy in transmit_model(&w, 5, &ch, &mut f, &mut n).unwrap() {
            for (a, b) in copy.iter().zip(w.weights()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        let zero = LinearModel::<f64>::zeros(2, 2);
        let copies = transmit_model(&zero, 2, &ch, &mut f, &mut n).unwrap();
        assert!(copies.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn averaged_copies_converge_like_one_over_n() {
        let w = model(2, 49, |i| ((i * 7) % 11) as f64 - 5.0);
        let ch = BlockFadingChannel::new(TxSnr::from_db(10.0).unwrap());
        let mse_of_mean = |n_copies: usize, seed: u64| {
            let s = SeedStreams::new(seed);
            let (mut f, mut nz) = (s.rng(Stream::Fading), s.rng(Stream::Noise));
            let copies = transmit_model(&w, n_copies, &ch, &mut f, &mut nz).unwrap();
            let mut err = 0.0;
            for j in 0..w.weights().len() {
                let mean = copies.iter().map(|c| c[j]).sum::<f64>() / n_copies as f64;
                err += (mean - w.weights()[j]).powi(2);
            }
            err / w.weights().len() as f64
        };
        // Per-copy noise variance is E[1/|h|^2]-heavy tailed, so compare
        // medians over many repetitions instead of single runs.
        let median = |n: usize| {
            let mut v: Vec<f64> = (0..201).map(|s| mse_of_mean(n, 100 + s)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[100]
        };
        let ratio = median(10) / median(100);
        assert!(ratio > 5.0 && ratio < 20.0, "variance ratio {ratio}");
    }

    fn blob_sets(seed: u64) -> (Dataset<f64>, Dataset<f64>) {
        let s = SeedStreams::new(seed);
        let train = synth_blobs(3, 6, 100, 5.0, &mut s.rng(Stream::Subset)).unwrap();
        let mut test = synth_blobs(3, 6, 50, 5.0, &mut s.rng(Stream::Shuffle)).unwrap();
        test.match_scale(&train);
        (train, test)
    }

    #[test]
    fn local_training_fits_and_handles_degenerate_data() {
        let s = SeedStreams::new(2);
        let train: Dataset<f64> = synth_blobs(3, 6, 100, 10.0, &mut s.rng(Stream::Subset)).unwrap();
        let cfg = TrainConfig::default().with_epochs(10);
        let m = local_train(&train, 3, &cfg, &mut s.rng(Stream::Device(0))).unwrap();
        assert_eq!(m.evaluate(train.samples()).unwrap(), 1.0);
        assert_eq!(m, local_train(&train, 3, &cfg, &mut s.rng(Stream::Device(0))).unwrap());

        let one_class: Vec<Sample<f64>> = train.samples().iter().filter(|s| s.label == 2).cloned().collect();
        let ds = Dataset::new(one_class, 6, 3).unwrap();
        let m = local_train(&ds, 3, &cfg, &mut s.rng(Stream::Device(1))).unwrap();
        assert!(ds.samples().iter().all(|x| m.predict(&x.data).unwrap() == 2));

        let m = local_train(&Dataset::<f64>::empty(6, 3), 3, &cfg, &mut s.rng(Stream::Device(2))).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn symmetric_split_makes_proposed_and_equal_identical() {
        let (train, test) = blob_sets(3);
        let cfg = DistributedConfig::new(200, SplitSpec::Ratio { ratio: 1.0 }, TxSnr::from_db(20.0).unwrap());
        let s = SeedStreams::new(3);
        let a = run_distributed(&train, &test, &cfg, DistributedScheme::Proposed, &s).unwrap();
        let b = run_distributed(&train, &test, &cfg, DistributedScheme::EqualAllocation, &s).unwrap();
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.global, b.global);
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn single_device_noiseless_matches_local_model() {
        let (train, test) = blob_sets(4);
        let cfg = DistributedConfig::new(7, SplitSpec::Random { devices: 1 }, TxSnr::new(f64::INFINITY).unwrap());
        let s = SeedStreams::new(4);
        let out = run_distributed(&train, &test, &cfg, DistributedScheme::Proposed, &s).unwrap();
        let local = local_train(&train, 3, &cfg.train, &mut s.rng(Stream::Device(0))).unwrap();
        assert_eq!(out.accuracy, local.evaluate(test.samples()).unwrap());
        assert_eq!(out.plan.counts(), &[7]);
    }

    #[test]
    fn degenerate_device_uploads_nothing() {
        let (train, test) = blob_sets(5);
        // A ratio this small leaves the first device without samples.
        let cfg = DistributedConfig::new(100, SplitSpec::Ratio { ratio: 1e-4 }, TxSnr::from_db(20.0).unwrap());
        let out = run_distributed(&train, &test, &cfg, DistributedScheme::EqualAllocation, &SeedStreams::new(5)).unwrap();
        assert_eq!(out.sizes[0], 0);
        assert_eq!(out.degenerate, vec![0]);
        assert_eq!(out.plan.counts(), &[0, 50]);
    }

    #[test]
    fn runs_are_deterministic() {
        let (train, test) = blob_sets(6);
        let cfg = DistributedConfig::new(50, SplitSpec::Random { devices: 4 }, TxSnr::from_db(5.0).unwrap());
        for scheme in [DistributedScheme::Proposed, DistributedScheme::EqualAllocation, DistributedScheme::LargestOnly] {
            let a = run_distributed(&train, &test, &cfg, scheme, &SeedStreams::new(9)).unwrap();
            let b = run_distributed(&train, &test, &cfg, scheme, &SeedStreams::new(9)).unwrap();
            assert_eq!(a, b);
        }
    }
}
