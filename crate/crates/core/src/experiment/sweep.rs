use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DatasetSource, ExperimentConfig, Mode, Precision, Scheme, SweepAxis, ThresholdSide};
use crate::centralized::{run_centralized, CentralizedConfig, ThresholdPolicy};
use crate::channel::{db_to_linear, TxSnr};
use crate::dataset::{load_idx, synth_blobs, Dataset, SplitSpec};
use crate::distributed::{prepare_devices, upload_and_evaluate};
use crate::rng::{SeedStreams, Stream};
use crate::{Error, Result, Scalar};

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub sweep_param: &'static str,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    /// NaN when the trial failed.
    pub accuracy: f64,
    pub blocks_spent: usize,
    pub wall_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_param: &'static str,
    pub sweep_value: f64,
    pub scheme: Scheme,
    /// Successful trials only.
    pub trials: usize,
    pub failed: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedRunRow {
    pub scheme: Scheme,
    pub devices: usize,
    pub ratio: Option<f64>,
    pub blocks: usize,
    pub tx_snr_db: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub sizes: Vec<usize>,
    pub allocation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub detail: Vec<DetailRow>,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<DistributedRunRow>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &DetailRow> {
        self.detail.iter().filter(|r| r.error.is_some())
    }

    pub fn write_detail<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep_param", "sweep_value", "scheme", "seed", "accuracy", "blocks_spent", "wall_ms"])?;
        for r in &self.detail {
            w.write_record([
                r.sweep_param.to_string(),
                r.sweep_value.to_string(),
                r.scheme.to_string(),
                r.seed.to_string(),
                r.accuracy.to_string(),
                r.blocks_spent.to_string(),
                r.wall_ms.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep_param", "sweep_value", "scheme", "trials", "mean_accuracy", "std_accuracy"])?;
        for r in &self.summary {
            w.write_record([
                r.sweep_param.to_string(),
                r.sweep_value.to_string(),
                r.scheme.to_string(),
                r.trials.to_string(),
                r.mean_accuracy.to_string(),
                r.std_accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_runs<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "K", "ratio", "N", "tx_snr_db", "seed", "accuracy"])?;
        for r in &self.runs {
            w.write_record([
                r.scheme.to_string(),
                r.devices.to_string(),
                r.ratio.map(|x| x.to_string()).unwrap_or_default(),
                r.blocks.to_string(),
                r.tx_snr_db.to_string(),
                r.seed.to_string(),
                r.accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Writes the detail table to `output`, the summary next to it as
    /// `<stem>.summary.csv` and, for distributed sweeps, `<stem>.runs.csv`.
    pub fn write_files(&self, output: &Path) -> Result<Vec<PathBuf>> {
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut written = vec![output.to_path_buf()];
        self.write_detail(create(output)?)?;
        let summary = sibling(output, "summary");
        self.write_summary(create(&summary)?)?;
        written.push(summary);
        if !self.runs.is_empty() {
            let runs = sibling(output, "runs");
            self.write_runs(create(&runs)?)?;
            written.push(runs);
        }
        Ok(written)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn sibling(output: &Path, tag: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{tag}.csv"))
}

/// Loads (or generates) the training and test sets, with the training set
/// power-normalized and the test set on the same scale.
pub fn load_datasets<T: Scalar>(source: &DatasetSource) -> Result<(Dataset<T>, Dataset<T>)> {
    match source {
        DatasetSource::Mnist {
            dir,
            train_subset,
            test_subset,
            subset_seed,
        } => {
            let mut train = load_idx::<T>(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
            let mut test = load_idx::<T>(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?;
            let streams = SeedStreams::new(*subset_seed);
            let mut rng = streams.rng(Stream::Subset);
            if let Some(n) = train_subset {
                train = train.stratified_subset(*n, &mut rng)?;
            }
            if let Some(n) = test_subset {
                test = test.stratified_subset(*n, &mut rng)?;
            }
            train.normalize_power();
            test.match_scale(&train);
            Ok((train, test))
        }
        DatasetSource::Blobs {
            classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
            seed,
        } => {
            let mut rng = SeedStreams::new(*seed).rng(Stream::Subset);
            let train = synth_blobs::<T, _>(*classes, *dim, *train_per_class, *separation, &mut rng)?;
            let mut test = synth_blobs::<T, _>(*classes, *dim, *test_per_class, *separation, &mut rng)?;
            test.match_scale(&train);
            Ok((train, test))
        }
    }
}

/// Runs every (sweep value, scheme, seed) trial of `cfg`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    match cfg.precision {
        Precision::F64 => {
            let (train, test) = load_datasets::<f64>(&cfg.dataset)?;
            run_sweep_on(cfg, &train, &test)
        }
        Precision::F32 => {
            let (train, test) = load_datasets::<f32>(&cfg.dataset)?;
            run_sweep_on(cfg, &train, &test)
        }
    }
}

/// Parameters of one point on the sweep axis.
#[derive(Debug, Clone, Copy)]
pub(super) struct Point {
    pub blocks: usize,
    pub tx_snr_db: f64,
    pub high_db: f64,
    pub low_db: f64,
    pub gamma_db: f64,
    pub split: SplitSpec,
}

impl Point {
    pub(super) fn base(cfg: &ExperimentConfig) -> Self {
        let c = &cfg.centralized;
        let d = &cfg.distributed;
        Point {
            blocks: match cfg.mode {
                Mode::Centralized => c.blocks,
                Mode::Distributed => d.blocks,
            },
            tx_snr_db: cfg.tx_snr_db,
            high_db: c.gamma_high_db,
            low_db: c.gamma_low_db,
            gamma_db: c.gamma_db,
            split: match d.ratio {
                Some(ratio) => SplitSpec::Ratio { ratio },
                None => SplitSpec::Random { devices: d.devices },
            },
        }
    }

    fn at(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Self {
        let mut p = Self::base(cfg);
        match axis {
            SweepAxis::Blocks => p.blocks = value as usize,
            SweepAxis::TxSnrDb => p.tx_snr_db = value,
            SweepAxis::ThresholdDb => {
                p.gamma_db = value;
                match cfg.centralized.sweep_threshold {
                    ThresholdSide::High => p.high_db = value,
                    ThresholdSide::Low => p.low_db = value,
                }
            }
            SweepAxis::Ratio => p.split = SplitSpec::Ratio { ratio: value },
            SweepAxis::Devices => {
                p.split = SplitSpec::Random {
                    devices: value as usize,
                }
            }
        }
        p
    }

    pub(super) fn tx_snr(&self) -> Result<TxSnr> {
        TxSnr::new(db_to_linear(self.tx_snr_db)?)
    }
}

pub(super) fn centralized_config(cfg: &ExperimentConfig, p: &Point, policy: ThresholdPolicy) -> Result<CentralizedConfig> {
    let mut c = CentralizedConfig::new(p.blocks, policy, p.tx_snr()?);
    c.train = cfg.train;
    c.eval_every = cfg.centralized.eval_every;
    c.convergence = cfg.centralized.convergence;
    Ok(c)
}

struct UnitResult {
    rows: Vec<(usize, DetailRow)>,
    runs: Vec<(usize, DistributedRunRow)>,
}

fn elapsed_ms(start: Instant, enabled: bool) -> u64 {
    if enabled {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

fn centralized_unit<T: Scalar>(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> UnitResult {
    let p = Point::at(cfg, axis, value);
    let streams = SeedStreams::new(seed);
    let mut rows = Vec::new();
    for (si, &scheme) in cfg.schemes.iter().enumerate() {
        let start = Instant::now();
        let outcome = (|| {
            let policy = match scheme {
                Scheme::Proposed => ThresholdPolicy::from_db(p.high_db, p.low_db)?,
                _ => {
                    let g = db_to_linear(p.gamma_db)?;
                    ThresholdPolicy::equal(g)?
                }
            };
            let c = centralized_config(cfg, &p, policy)?;
            let trace = run_centralized(train, test, &c, &streams)?;
            if let Some(dir) = &cfg.centralized.trace_dir {
                let name = format!("trace_{}{}_{}_seed{}.csv", axis.label(), value, scheme, seed);
                let path = dir.join(name);
                trace.write_csv(create(&path)?)?;
            }
            Ok::<_, Error>(trace)
        })();
        let wall_ms = elapsed_ms(start, cfg.record_timing);
        rows.push((si, detail(axis, value, scheme, seed, wall_ms, outcome.map(|t| (t.final_accuracy, t.blocks_spent())))));
    }
    UnitResult { rows, runs: Vec::new() }
}

fn distributed_unit<T: Scalar>(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> UnitResult {
    let p = Point::at(cfg, axis, value);
    let streams = SeedStreams::new(seed);
    let start = Instant::now();
    let classes = train.num_classes().max(test.num_classes());
    let devices = prepare_devices(train, classes, p.split, &cfg.local_train_config(), &streams);
    let prep_ms = elapsed_ms(start, cfg.record_timing);

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (si, &scheme) in cfg.schemes.iter().enumerate() {
        let start = Instant::now();
        let outcome = match (&devices, scheme.distributed()) {
            (Ok(dev), Some(ds)) => p.tx_snr().and_then(|tx| upload_and_evaluate(dev, test, p.blocks, tx, ds, &streams)),
            (Err(e), _) => Err(Error::invalid(e.to_string())),
            (_, None) => Err(Error::invalid(format!("scheme {scheme} is not a distributed scheme"))),
        };
        let wall_ms = prep_ms + elapsed_ms(start, cfg.record_timing);
        if let Ok(o) = &outcome {
            runs.push((
                si,
                DistributedRunRow {
                    scheme,
                    devices: o.sizes.len(),
                    ratio: match p.split {
                        SplitSpec::Ratio { ratio } => Some(ratio),
                        SplitSpec::Random { .. } => None,
                    },
                    blocks: p.blocks,
                    tx_snr_db: p.tx_snr_db,
                    seed,
                    accuracy: o.accuracy,
                    sizes: o.sizes.clone(),
                    allocation: o.plan.counts().to_vec(),
                },
            ));
        }
        rows.push((si, detail(axis, value, scheme, seed, wall_ms, outcome.map(|o| (o.accuracy, o.blocks_spent())))));
    }
    UnitResult { rows, runs }
}

fn detail(
    axis: SweepAxis,
    value: f64,
    scheme: Scheme,
    seed: u64,
    wall_ms: u64,
    outcome: Result<(f64, usize)>,
) -> DetailRow {
    let (accuracy, blocks_spent, error) = match outcome {
        Ok((a, b)) => (a, b, None),
        Err(e) => (f64::NAN, 0, Some(e.to_string())),
    };
    DetailRow {
        sweep_param: axis.label(),
        sweep_value: value,
        scheme,
        seed,
        accuracy,
        blocks_spent,
        wall_ms,
        error,
    }
}

/// [`run_sweep`] on already loaded data.
///
/// Each trial is seeded from its seed alone, so the result does not depend
/// on whether trials run in parallel. Rows come out ordered by sweep value,
/// then scheme (config order), then seed (config order). Failed trials keep
/// their row with NaN accuracy and are left out of the summary.
pub fn run_sweep_on<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset<T>, test: &Dataset<T>) -> Result<SweepReport> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["sweep: missing required section".into()]))?;
    if let Some(dir) = &cfg.centralized.trace_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let units: Vec<(usize, usize)> = (0..sweep.values.len())
        .flat_map(|v| (0..cfg.seeds.len()).map(move |s| (v, s)))
        .collect();
    let work = |&(v, s): &(usize, usize)| {
        let (value, seed) = (sweep.values[v], cfg.seeds[s]);
        match cfg.mode {
            Mode::Centralized => centralized_unit(cfg, sweep.axis, value, seed, train, test),
            Mode::Distributed => distributed_unit(cfg, sweep.axis, value, seed, train, test),
        }
    };
    let results: Vec<UnitResult> = if cfg.parallel {
        units.par_iter().map(work).collect()
    } else {
        units.iter().map(work).collect()
    };

    let mut keyed_rows = Vec::new();
    let mut keyed_runs = Vec::new();
    for (&(v, s), r) in units.iter().zip(results) {
        keyed_rows.extend(r.rows.into_iter().map(|(si, row)| ((v, si, s), row)));
        keyed_runs.extend(r.runs.into_iter().map(|(si, run)| ((v, si, s), run)));
    }
    keyed_rows.sort_by_key(|(k, _)| *k);
    keyed_runs.sort_by_key(|(k, _)| *k);
    let detail: Vec<DetailRow> = keyed_rows.into_iter().map(|(_, r)| r).collect();
    let summary = summarize(&detail);
    Ok(SweepReport {
        axis: sweep.axis,
        detail,
        summary,
        runs: keyed_runs.into_iter().map(|(_, r)| r).collect(),
    })
}

pub(super) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn summarize(detail: &[DetailRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut start = 0;
    while start < detail.len() {
        let head = &detail[start];
        let end = start
            + detail[start..]
                .iter()
                .take_while(|r| r.sweep_value.to_bits() == head.sweep_value.to_bits() && r.scheme == head.scheme)
                .count();
        let group = &detail[start..end];
        let ok: Vec<f64> = group.iter().filter(|r| r.error.is_none()).map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&ok);
        out.push(SummaryRow {
            sweep_param: head.sweep_param,
            sweep_value: head.sweep_value,
            scheme: head.scheme,
            trials: ok.len(),
            failed: group.len() - ok.len(),
            mean_accuracy: mean,
            std_accuracy: std,
        });
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::config::parse_config_str;
    use super::*;

    fn blobs_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            mode = "centralized"
            trials = 3
            [dataset]
            source = "blobs"
            classes = 3
            dim = 4
            train_per_class = 40
            test_per_class = 30
            [channel]
            tx_snr_db = 10
            [centralized]
            blocks = 60
            gamma_high_db = 12
            gamma_low_db = 6
            {extra}
            [sweep]
            n = [30, 60]
            "#
        );
        parse_config_str(&text).unwrap()
    }

    #[test]
    fn rows_are_ordered_and_summarized() {
        let cfg = blobs_config("");
        let report = run_sweep(&cfg).unwrap();
        assert_eq!(report.detail.len(), 2 * 2 * 3);
        let keys: Vec<(f64, Scheme, u64)> = report.detail.iter().map(|r| (r.sweep_value, r.scheme, r.seed)).collect();
        assert_eq!(keys[0], (30.0, Scheme::Proposed, 0));
        assert_eq!(keys[3], (30.0, Scheme::EqualImportance, 0));
        assert_eq!(keys[11], (60.0, Scheme::EqualImportance, 2));
        assert!(report.detail.iter().all(|r| r.blocks_spent <= r.sweep_value as usize && r.wall_ms == 0));
        assert_eq!(report.summary.len(), 4);
        for (s, chunk) in report.summary.iter().zip(report.detail.chunks(3)) {
            let acc: Vec<f64> = chunk.iter().map(|r| r.accuracy).collect();
            let (m, sd) = mean_std(&acc);
            assert_eq!((s.mean_accuracy, s.std_accuracy, s.trials), (m, sd, 3));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let mut cfg = blobs_config("");
        let par = run_sweep(&cfg).unwrap();
        cfg.parallel = false;
        assert_eq!(run_sweep(&cfg).unwrap(), par);
    }

    #[test]
    fn single_point_matches_direct_run() {
        let mut cfg = blobs_config("");
        cfg.seeds = vec![7];
        cfg.sweep.as_mut().unwrap().values = vec![60.0];
        let report = run_sweep(&cfg).unwrap();
        let (train, test) = load_datasets::<f64>(&cfg.dataset).unwrap();
        let p = Point::base(&cfg);
        let c = centralized_config(&cfg, &p, ThresholdPolicy::from_db(12.0, 6.0).unwrap()).unwrap();
        let direct = run_centralized(&train, &test, &c, &SeedStreams::new(7)).unwrap();
        assert_eq!(report.detail[0].accuracy, direct.final_accuracy);
        assert_eq!(report.detail[0].blocks_spent, direct.blocks_spent());
    }

    #[test]
    fn failed_trials_keep_their_row() {
        let text = r#"
            mode = "distributed"
            trials = 2
            schemes = ["proposed", "equal_allocation"]
            [dataset]
            source = "blobs"
            classes = 2
            dim = 2
            train_per_class = 20
            test_per_class = 10
            [channel]
            tx_snr_db = 10
            [learner]
            local_epochs = 2
            [distributed]
            blocks = 3
            [sweep]
            k = [2, 4]
        "#;
        let report = run_sweep(&parse_config_str(text).unwrap()).unwrap();
        let failed: Vec<&DetailRow> = report.failures().collect();
        assert_eq!(failed.len(), 2);
        assert!(failed.iter().all(|r| r.sweep_value == 4.0 && r.scheme == Scheme::EqualAllocation));
        assert!(failed[0].accuracy.is_nan());
        let s = report.summary.iter().find(|s| s.sweep_value == 4.0 && s.scheme == Scheme::EqualAllocation).unwrap();
        assert_eq!((s.trials, s.failed), (0, 2));
        assert_eq!(report.runs.len(), 6);
    }

    #[test]
    fn files_are_written_next_to_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = blobs_config(&format!("trace_dir = {:?}", dir.path().join("traces")));
        cfg.seeds = vec![1];
        let report = run_sweep(&cfg).unwrap();
        let out = dir.path().join("sub/sweep.csv");
        let written = report.write_files(&out).unwrap();
        assert_eq!(written, vec![out.clone(), dir.path().join("sub/sweep.summary.csv")]);
        let detail = fs::read_to_string(&out).unwrap();
        assert!(detail.starts_with("sweep_param,sweep_value,scheme,seed,accuracy,blocks_spent,wall_ms\nN,30,proposed,1,"));
        assert_eq!(fs::read_dir(dir.path().join("traces")).unwrap().count(), 4);
    }
}
