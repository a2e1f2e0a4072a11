//! Experiment configuration files (TOML).
//!
//! Validation walks the whole document and reports every problem at once,
//! each prefixed with its key path. See `configs/` in the repository for
//! annotated examples.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::centralized::Convergence;
use crate::distributed::DistributedScheme;
use crate::learner::TrainConfig;
use crate::{Error, Result};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Centralized,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Centralized: importance-dependent thresholds. Distributed: blocks
    /// proportional to dataset size.
    Proposed,
    /// Centralized baseline: one threshold for every sample.
    EqualImportance,
    EqualAllocation,
    LargestOnly,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::EqualImportance => "equal",
            Scheme::EqualAllocation => "equal_allocation",
            Scheme::LargestOnly => "largest_only",
        }
    }

    fn parse(name: &str, mode: Mode) -> Option<Self> {
        match (mode, name) {
            (_, "proposed") => Some(Scheme::Proposed),
            (Mode::Centralized, "equal" | "equal_importance") => Some(Scheme::EqualImportance),
            (Mode::Distributed, "equal_allocation" | "equal") => Some(Scheme::EqualAllocation),
            (Mode::Distributed, "largest_only") => Some(Scheme::LargestOnly),
            _ => None,
        }
    }

    pub fn distributed(self) -> Option<DistributedScheme> {
        match self {
            Scheme::Proposed => Some(DistributedScheme::Proposed),
            Scheme::EqualAllocation => Some(DistributedScheme::EqualAllocation),
            Scheme::LargestOnly => Some(DistributedScheme::LargestOnly),
            Scheme::EqualImportance => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Blocks,
    TxSnrDb,
    ThresholdDb,
    Ratio,
    Devices,
}

impl SweepAxis {
    const ALL: [SweepAxis; 5] = [
        SweepAxis::Blocks,
        SweepAxis::TxSnrDb,
        SweepAxis::ThresholdDb,
        SweepAxis::Ratio,
        SweepAxis::Devices,
    ];

    /// Key in the `[sweep]` section.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Blocks => "n",
            SweepAxis::TxSnrDb => "tx_snr_db",
            SweepAxis::ThresholdDb => "threshold_db",
            SweepAxis::Ratio => "ratio",
            SweepAxis::Devices => "k",
        }
    }

    /// Value of the `sweep_param` CSV column.
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Blocks => "N",
            SweepAxis::TxSnrDb => "tx_snr_db",
            SweepAxis::ThresholdDb => "threshold_db",
            SweepAxis::Ratio => "ratio",
            SweepAxis::Devices => "K",
        }
    }

    fn allowed_in(self, mode: Mode) -> bool {
        match self {
            SweepAxis::Blocks | SweepAxis::TxSnrDb => true,
            SweepAxis::ThresholdDb => mode == Mode::Centralized,
            SweepAxis::Ratio | SweepAxis::Devices => mode == Mode::Distributed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Which proposed-scheme threshold a `threshold_db` sweep moves; the
/// equal-importance baseline always uses the swept value as its single
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSide {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Mnist {
        dir: PathBuf,
        /// Class-stratified subset sizes; `None` keeps the whole file.
        train_subset: Option<usize>,
        test_subset: Option<usize>,
        subset_seed: u64,
    },
    Blobs {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedParams {
    pub blocks: usize,
    pub gamma_high_db: f64,
    pub gamma_low_db: f64,
    /// Threshold of the equal-importance baseline.
    pub gamma_db: f64,
    pub sweep_threshold: ThresholdSide,
    pub eval_every: usize,
    pub trace_dir: Option<PathBuf>,
    pub convergence: Option<Convergence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedParams {
    pub blocks: usize,
    pub devices: usize,
    /// `Some` selects the two-device ratio split, `None` a random split over
    /// `devices`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub precision: Precision,
    pub parallel: bool,
    /// Fill the `wall_ms` column; off by default so reruns are byte-identical.
    pub record_timing: bool,
    pub dataset: DatasetSource,
    pub tx_snr_db: f64,
    pub train: TrainConfig,
    /// Passes over the local dataset when a device trains its model.
    pub local_epochs: usize,
    pub centralized: CentralizedParams,
    pub distributed: DistributedParams,
    pub sweep: Option<Sweep>,
    pub grid_db: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Replaces the trial seeds by `base, base + 1, ...` keeping their count.
    pub fn rebase_seeds(&mut self, base: u64) {
        let n = self.seeds.len() as u64;
        self.seeds = (base..base + n).collect();
    }

    pub fn set_data_dir(&mut self, dir: PathBuf) {
        if let DatasetSource::Mnist { dir: d, .. } = &mut self.dataset {
            *d = dir;
        }
    }

    pub fn local_train_config(&self) -> TrainConfig {
        self.train.with_epochs(self.local_epochs)
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut issues = Issues::default();
    let cfg = build(&root, &mut issues);
    match cfg {
        Some(cfg) if issues.0.is_empty() => Ok(cfg),
        _ => Err(Error::Config(issues.0)),
    }
}

#[derive(Default)]
struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, path: &str, msg: impl fmt::Display) {
        self.0.push(format!("{path}: {msg}"));
    }
}

/// Typed access to one table, remembering which keys were read.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Self {
            path: path.to_string(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn raw(&mut self, k: &str) -> Option<&'a Value> {
        self.used.insert(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn has(&self, k: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(k))
    }

    fn sub(&mut self, k: &str, issues: &mut Issues) -> Section<'a> {
        let path = self.key(k);
        match self.raw(k) {
            Some(Value::Table(t)) => Section::new(&path, Some(t)),
            Some(_) => {
                issues.push(&path, "expected a table");
                Section::new(&path, None)
            }
            None => Section::new(&path, None),
        }
    }

    fn float(&mut self, k: &str, issues: &mut Issues) -> Option<f64> {
        match self.raw(k)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                issues.push(&self.key(k), "expected a number");
                None
            }
        }
    }

    fn int(&mut self, k: &str, issues: &mut Issues) -> Option<u64> {
        match self.raw(k)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                issues.push(&self.key(k), "expected a non-negative integer");
                None
            }
        }
    }

    fn string(&mut self, k: &str, issues: &mut Issues) -> Option<&'a str> {
        match self.raw(k)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                issues.push(&self.key(k), "expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, k: &str, issues: &mut Issues) -> Option<bool> {
        match self.raw(k)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                issues.push(&self.key(k), "expected true or false");
                None
            }
        }
    }

    fn array(&mut self, k: &str, issues: &mut Issues) -> Option<&'a Vec<Value>> {
        match self.raw(k)? {
            Value::Array(a) => Some(a),
            _ => {
                issues.push(&self.key(k), "expected an array");
                None
            }
        }
    }

    fn floats(&mut self, k: &str, issues: &mut Issues) -> Option<Vec<f64>> {
        let arr = self.array(k, issues)?;
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                Value::Float(f) => out.push(*f),
                Value::Integer(n) => out.push(*n as f64),
                _ => {
                    issues.push(&format!("{}[{i}]", self.key(k)), "expected a number");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn required<T>(&self, k: &str, v: Option<T>, issues: &mut Issues) -> Option<T> {
        if v.is_none() && !self.has(k) {
            issues.push(&self.key(k), "missing required key");
        }
        v
    }

    /// Reports keys present in the table that were never read.
    fn finish(self, issues: &mut Issues) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(k) {
                    issues.push(&self.key(k), "unknown key");
                }
            }
        }
    }
}

fn positive(v: Option<f64>, path: &str, issues: &mut Issues) -> Option<f64> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            issues.push(path, format!("must be a finite number > 0, got {x}"));
            None
        }
        other => other,
    }
}

fn finite(v: Option<f64>, path: &str, issues: &mut Issues) -> Option<f64> {
    match v {
        Some(x) if !x.is_finite() => {
            issues.push(path, format!("must be finite, got {x}"));
            None
        }
        other => other,
    }
}

fn at_least(v: Option<u64>, min: u64, path: &str, issues: &mut Issues) -> Option<usize> {
    match v {
        Some(x) if x < min => {
            issues.push(path, format!("must be >= {min}, got {x}"));
            None
        }
        other => other.map(|x| x as usize),
    }
}

fn build(root: &Table, issues: &mut Issues) -> Option<ExperimentConfig> {
    let mut top = Section::new("", Some(root));

    let mode_name = top.string("mode", issues);
    let mode = match top.required("mode", mode_name, issues) {
        Some("centralized") => Some(Mode::Centralized),
        Some("distributed") => Some(Mode::Distributed),
        Some(other) => {
            issues.push("mode", format!("expected \"centralized\" or \"distributed\", got {other:?}"));
            None
        }
        None => None,
    };

    let schemes = top.array("schemes", issues).and_then(|arr| {
        let mode = mode?;
        let mut out = Vec::new();
        for (i, v) in arr.iter().enumerate() {
            match v.as_str().and_then(|s| Scheme::parse(s, mode)) {
                Some(s) if !out.contains(&s) => out.push(s),
                Some(s) => issues.push(&format!("schemes[{i}]"), format!("duplicate scheme {s}")),
                None => issues.push(&format!("schemes[{i}]"), format!("unknown scheme {v} for this mode")),
            }
        }
        if out.is_empty() {
            issues.push("schemes", "must list at least one scheme");
        }
        Some(out)
    });
    let schemes = schemes.or_else(|| {
        mode.map(|m| match m {
            Mode::Centralized => vec![Scheme::Proposed, Scheme::EqualImportance],
            Mode::Distributed => vec![Scheme::Proposed, Scheme::EqualAllocation, Scheme::LargestOnly],
        })
    });

    let seed = top.int("seed", issues).unwrap_or(0);
    let trials = at_least(top.int("trials", issues), 1, "trials", issues);
    let seed_list = top.array("seeds", issues).map(|arr| {
        arr.iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                Value::Integer(n) if *n >= 0 => Some(*n as u64),
                _ => {
                    issues.push(&format!("seeds[{i}]"), "expected a non-negative integer");
                    None
                }
            })
            .collect::<Vec<_>>()
    });
    let seeds = match (seed_list, trials) {
        (Some(_), Some(_)) => {
            issues.push("seeds", "give either `seeds` or `trials`, not both");
            None
        }
        (Some(list), None) if list.is_empty() => {
            issues.push("seeds", "must list at least one seed");
            None
        }
        (Some(list), None) => Some(list),
        (None, t) => Some((seed..seed + t.unwrap_or(DEFAULT_TRIALS) as u64).collect()),
    };

    let output = top
        .string("output", issues)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    let precision = match top.string("precision", issues) {
        None | Some("f64") => Precision::F64,
        Some("f32") => Precision::F32,
        Some(other) => {
            issues.push("precision", format!("expected \"f32\" or \"f64\", got {other:?}"));
            Precision::F64
        }
    };
    let parallel = top.boolean("parallel", issues).unwrap_or(true);
    let record_timing = top.boolean("record_timing", issues).unwrap_or(false);

    let dataset = parse_dataset(&mut top.sub("dataset", issues), issues);

    let mut channel = top.sub("channel", issues);
    let tx_snr_db = finite(channel.float("tx_snr_db", issues), "channel.tx_snr_db", issues);
    let tx_snr_db = channel.required("tx_snr_db", tx_snr_db, issues);
    channel.finish(issues);

    let mut learner = top.sub("learner", issues);
    let lambda = positive(learner.float("lambda", issues), "learner.lambda", issues).unwrap_or(1e-4);
    let epochs = at_least(learner.int("epochs", issues), 1, "learner.epochs", issues).unwrap_or(1);
    let local_epochs = at_least(learner.int("local_epochs", issues), 1, "learner.local_epochs", issues).unwrap_or(50);
    let offset = learner.float("schedule_offset", issues);
    let project = learner.boolean("project", issues).unwrap_or(true);
    learner.finish(issues);
    let mut train = TrainConfig::new(lambda).with_epochs(epochs);
    train.project = project;
    if let Some(o) = offset {
        if o >= 0.0 && o.is_finite() {
            train.schedule_offset = o;
        } else {
            issues.push("learner.schedule_offset", format!("must be finite and >= 0, got {o}"));
        }
    }

    let centralized = parse_centralized(&mut top.sub("centralized", issues), mode == Some(Mode::Centralized), issues);
    let distributed = parse_distributed(&mut top.sub("distributed", issues), mode == Some(Mode::Distributed), issues);

    let grid_db = {
        let mut grid = top.sub("gridsearch", issues);
        let values = grid.floats("grid_db", issues);
        let present = grid.table.is_some();
        let values = if present { grid.required("grid_db", values, issues) } else { values };
        grid.finish(issues);
        if present {
            if mode == Some(Mode::Distributed) {
                issues.push("gridsearch", "threshold search only applies to centralized mode");
            }
            match values {
                Some(v) if v.is_empty() => {
                    issues.push("gridsearch.grid_db", "must list at least one value");
                    None
                }
                Some(v) if v.iter().any(|x| !x.is_finite()) => {
                    issues.push("gridsearch.grid_db", "values must be finite");
                    None
                }
                v => v,
            }
        } else {
            None
        }
    };

    let sweep = {
        let mut sec = top.sub("sweep", issues);
        let present: Vec<SweepAxis> = SweepAxis::ALL.into_iter().filter(|a| sec.has(a.key())).collect();
        let mut sweep = None;
        if sec.table.is_none() && grid_db.is_none() {
            issues.push("sweep", "missing required section (or give [gridsearch])");
        } else if sec.table.is_some() && present.is_empty() {
            issues.push(
                "sweep",
                format!("name exactly one axis: {}", SweepAxis::ALL.map(SweepAxis::key).join(", ")),
            );
        } else if present.len() > 1 {
            let names: Vec<String> = present.iter().map(|a| format!("sweep.{}", a.key())).collect();
            issues.push("sweep", format!("exactly one axis allowed, found {}", names.join(" and ")));
        }
        for axis in &present {
            let values = sec.floats(axis.key(), issues);
            if present.len() == 1 {
                sweep = values.map(|values| Sweep { axis: *axis, values });
            }
        }
        sec.finish(issues);
        sweep
    };

    top.finish(issues);

    let (mode, schemes, seeds, dataset, tx_snr_db, centralized, distributed) =
        (mode?, schemes?, seeds?, dataset?, tx_snr_db?, centralized?, distributed?);

    if let Some(sw) = &sweep {
        validate_sweep(sw, mode, &centralized, &distributed, issues);
    }

    Some(ExperimentConfig {
        mode,
        schemes,
        seeds,
        output,
        precision,
        parallel,
        record_timing,
        dataset,
        tx_snr_db,
        train,
        local_epochs,
        centralized,
        distributed,
        sweep,
        grid_db,
    })
}

fn parse_dataset(sec: &mut Section<'_>, issues: &mut Issues) -> Option<DatasetSource> {
    let source = sec.string("source", issues).unwrap_or("mnist");
    let out = match source {
        "mnist" => {
            let dir = sec.string("dir", issues).unwrap_or("data/mnist-5k");
            let train_subset = at_least(sec.int("train_subset", issues), 1, "dataset.train_subset", issues);
            let test_subset = at_least(sec.int("test_subset", issues), 1, "dataset.test_subset", issues);
            let subset_seed = sec.int("subset_seed", issues).unwrap_or(0);
            Some(DatasetSource::Mnist {
                dir: PathBuf::from(dir),
                train_subset,
                test_subset,
                subset_seed,
            })
        }
        "blobs" => {
            let classes = at_least(sec.int("classes", issues), 1, "dataset.classes", issues).unwrap_or(2);
            let dim = at_least(sec.int("dim", issues), 1, "dataset.dim", issues).unwrap_or(2);
            let train_per_class =
                at_least(sec.int("train_per_class", issues), 1, "dataset.train_per_class", issues).unwrap_or(100);
            let test_per_class =
                at_least(sec.int("test_per_class", issues), 1, "dataset.test_per_class", issues).unwrap_or(100);
            let separation =
                positive(sec.float("separation", issues), "dataset.separation", issues).unwrap_or(10.0);
            let seed = sec.int("seed", issues).unwrap_or(0);
            Some(DatasetSource::Blobs {
                classes,
                dim,
                train_per_class,
                test_per_class,
                separation,
                seed,
            })
        }
        other => {
            issues.push("dataset.source", format!("expected \"mnist\" or \"blobs\", got {other:?}"));
            None
        }
    };
    let section = std::mem::replace(sec, Section::new("", None));
    section.finish(issues);
    out
}

fn parse_centralized(sec: &mut Section<'_>, required: bool, issues: &mut Issues) -> Option<CentralizedParams> {
    let blocks = at_least(sec.int("blocks", issues), 1, "centralized.blocks", issues);
    let high = finite(sec.float("gamma_high_db", issues), "centralized.gamma_high_db", issues);
    let low = finite(sec.float("gamma_low_db", issues), "centralized.gamma_low_db", issues);
    let gamma = finite(sec.float("gamma_db", issues), "centralized.gamma_db", issues);
    let side = match sec.string("sweep_threshold", issues) {
        None | Some("high") => ThresholdSide::High,
        Some("low") => ThresholdSide::Low,
        Some(other) => {
            issues.push("centralized.sweep_threshold", format!("expected \"high\" or \"low\", got {other:?}"));
            ThresholdSide::High
        }
    };
    let eval_every = sec.int("eval_every", issues).unwrap_or(0) as usize;
    let trace_dir = sec.string("trace_dir", issues).map(PathBuf::from);
    let convergence = {
        let mut c = sec.sub("convergence", issues);
        let present = c.table.is_some();
        let d = Convergence::default();
        let window = at_least(c.int("window", issues), 1, "centralized.convergence.window", issues).unwrap_or(d.window);
        let tolerance =
            positive(c.float("tolerance", issues), "centralized.convergence.tolerance", issues).unwrap_or(d.tolerance);
        let holdout = c.float("holdout_fraction", issues).unwrap_or(d.holdout_fraction);
        if !(holdout > 0.0 && holdout < 1.0) {
            issues.push("centralized.convergence.holdout_fraction", format!("must be in (0, 1), got {holdout}"));
        }
        c.finish(issues);
        present.then_some(Convergence {
            window,
            tolerance,
            holdout_fraction: holdout,
        })
    };

    if required {
        sec.required("blocks", blocks, issues);
        sec.required("gamma_high_db", high, issues);
        sec.required("gamma_low_db", low, issues);
    }
    if let (Some(h), Some(l)) = (high, low) {
        if h < l {
            issues.push(
                "centralized.gamma_high_db",
                format!("threshold for misclassified samples ({h} dB) must be >= gamma_low_db ({l} dB)"),
            );
        }
    }
    let section = std::mem::replace(sec, Section::new("", None));
    section.finish(issues);
    if !required {
        return Some(CentralizedParams {
            blocks: blocks.unwrap_or(1),
            gamma_high_db: high.unwrap_or(0.0),
            gamma_low_db: low.unwrap_or(0.0),
            gamma_db: gamma.unwrap_or(0.0),
            sweep_threshold: side,
            eval_every,
            trace_dir,
            convergence,
        });
    }
    let (high, low) = (high?, low?);
    Some(CentralizedParams {
        blocks: blocks?,
        gamma_high_db: high,
        gamma_low_db: low,
        // The baseline defaults to the lower threshold when not given.
        gamma_db: gamma.unwrap_or(low),
        sweep_threshold: side,
        eval_every,
        trace_dir,
        convergence,
    })
}

fn parse_distributed(sec: &mut Section<'_>, required: bool, issues: &mut Issues) -> Option<DistributedParams> {
    let blocks = at_least(sec.int("blocks", issues), 1, "distributed.blocks", issues);
    let devices = at_least(sec.int("devices", issues), 1, "distributed.devices", issues);
    let ratio = positive(sec.float("ratio", issues), "distributed.ratio", issues);
    if required {
        sec.required("blocks", blocks, issues);
    }
    if ratio.is_some() && devices.is_some_and(|k| k != 2) {
        issues.push("distributed.devices", "a ratio split always has 2 devices");
    }
    let section = std::mem::replace(sec, Section::new("", None));
    section.finish(issues);
    Some(DistributedParams {
        blocks: if required { blocks? } else { blocks.unwrap_or(1) },
        devices: devices.unwrap_or(2),
        ratio,
    })
}

fn validate_sweep(
    sweep: &Sweep,
    mode: Mode,
    centralized: &CentralizedParams,
    distributed: &DistributedParams,
    issues: &mut Issues,
) {
    let path = format!("sweep.{}", sweep.axis.key());
    if !sweep.axis.allowed_in(mode) {
        issues.push(&path, format!("axis not available in {mode:?} mode").to_lowercase());
        return;
    }
    if sweep.values.is_empty() {
        issues.push(&path, "must list at least one value");
    }
    for (i, &v) in sweep.values.iter().enumerate() {
        let p = format!("{path}[{i}]");
        let integral = v.fract() == 0.0 && v >= 1.0;
        match sweep.axis {
            SweepAxis::Blocks | SweepAxis::Devices if !integral => {
                issues.push(&p, format!("must be an integer >= 1, got {v}"))
            }
            SweepAxis::TxSnrDb | SweepAxis::ThresholdDb if !v.is_finite() => {
                issues.push(&p, format!("must be finite, got {v}"))
            }
            SweepAxis::Ratio if !(v > 0.0 && v.is_finite()) => issues.push(&p, format!("must be > 0, got {v}")),
            SweepAxis::ThresholdDb => {
                let (h, l) = match centralized.sweep_threshold {
                    ThresholdSide::High => (v, centralized.gamma_low_db),
                    ThresholdSide::Low => (centralized.gamma_high_db, v),
                };
                if h < l {
                    issues.push(
                        &p,
                        format!("gives gamma_high_db {h} < gamma_low_db {l}; the misclassified-sample threshold must not be lower"),
                    );
                }
            }
            _ => {}
        }
    }
    if sweep.axis == SweepAxis::Devices && distributed.ratio.is_some() {
        issues.push("distributed.ratio", "cannot sweep the number of devices with a ratio split");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        mode = "centralized"
        [channel]
        tx_snr_db = 4.0
        [centralized]
        blocks = 1000
        gamma_high_db = 6.0
        gamma_low_db = 0.0
        [sweep]
        n = [250, 500]
    "#;

    fn errors(text: &str) -> Vec<String> {
        match parse_config_str(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Centralized);
        assert_eq!(cfg.schemes, vec![Scheme::Proposed, Scheme::EqualImportance]);
        assert_eq!(cfg.seeds, (0..10).collect::<Vec<u64>>());
        assert_eq!(cfg.train.lambda, 1e-4);
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.local_epochs, 50);
        assert_eq!(cfg.centralized.gamma_db, 0.0);
        assert_eq!(cfg.centralized.eval_every, 0);
        assert!(matches!(cfg.dataset, DatasetSource::Mnist { train_subset: None, .. }));
        assert_eq!(cfg.sweep, Some(Sweep { axis: SweepAxis::Blocks, values: vec![250.0, 500.0] }));
        assert_eq!(cfg.precision, Precision::F64);
        assert!(!cfg.record_timing);
    }

    #[test]
    fn two_axes_are_both_named() {
        let e = errors(&MINIMAL.replace("n = [250, 500]", "n = [250]\ntx_snr_db = [0, 4]"));
        assert!(e.iter().any(|m| m.contains("sweep.n") && m.contains("sweep.tx_snr_db")), "{e:?}");
    }

    #[test]
    fn inverted_thresholds_are_rejected() {
        let e = errors(&MINIMAL.replace("gamma_high_db = 6.0", "gamma_high_db = -1.0"));
        assert!(e.iter().any(|m| m.starts_with("centralized.gamma_high_db")), "{e:?}");

        let sweep = MINIMAL.replace("n = [250, 500]", "threshold_db = [-3.0, 3.0]");
        let e = errors(&sweep.replace("gamma_low_db = 0.0", "gamma_low_db = 1.0"));
        assert!(e.iter().any(|m| m.starts_with("sweep.threshold_db[0]")), "{e:?}");
    }

    #[test]
    fn every_problem_is_reported() {
        let text = r#"
            mode = "centralized"
            colour = "blue"
            trials = 0
            [channel]
            [centralized]
            blocks = 0
            gamma_high_db = "high"
            gamma_low_db = 0.0
            [learner]
            lambda = -1
            [sweep]
            n = [1.5]
        "#;
        let e = errors(text);
        for key in ["colour", "trials", "channel.tx_snr_db", "centralized.blocks", "centralized.gamma_high_db", "learner.lambda"] {
            assert!(e.iter().any(|m| m.starts_with(key)), "no error for {key}: {e:?}");
        }
    }

    #[test]
    fn mode_specific_checks() {
        let text = r#"
            mode = "distributed"
            schemes = ["proposed", "largest_only", "equal"]
            seeds = [3, 5]
            [channel]
            tx_snr_db = 20
            [distributed]
            blocks = 200
            ratio = 2.0
            [sweep]
            ratio = [1, 2, 4, 9]
        "#;
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.schemes, vec![Scheme::Proposed, Scheme::LargestOnly, Scheme::EqualAllocation]);
        assert_eq!(cfg.seeds, vec![3, 5]);

        let e = errors(&text.replace("ratio = [1, 2, 4, 9]", "threshold_db = [1]"));
        assert!(e.iter().any(|m| m.starts_with("sweep.threshold_db")), "{e:?}");
        let e = errors(&text.replace("\"largest_only\"", "\"mystery\""));
        assert!(e.iter().any(|m| m.starts_with("schemes[1]")), "{e:?}");
        let e = errors(&text.replace("[distributed]", "[distributed]\ndevices = 3"));
        assert!(e.iter().any(|m| m.starts_with("distributed.devices")), "{e:?}");
    }

    #[test]
    fn gridsearch_replaces_sweep() {
        let text = MINIMAL.replace("[sweep]\n        n = [250, 500]", "[gridsearch]\n grid_db = [0, 3]");
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.sweep, None);
        assert_eq!(cfg.grid_db, Some(vec![0.0, 3.0]));
        let e = errors(&MINIMAL.replace("[sweep]\n        n = [250, 500]", ""));
        assert!(e.iter().any(|m| m.starts_with("sweep")), "{e:?}");
    }

    #[test]
    fn syntax_errors_are_config_errors() {
        assert!(matches!(parse_config_str("mode = "), Err(Error::Config(_))));
    }
}
