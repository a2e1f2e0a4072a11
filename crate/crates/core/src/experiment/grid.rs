use std::io::Write;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode, Precision};
use super::sweep::{centralized_config, load_datasets, mean_std, Point};
use crate::centralized::{run_centralized, ThresholdPolicy};
use crate::dataset::Dataset;
use crate::rng::SeedStreams;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub high_db: f64,
    pub low_db: f64,
    /// One accuracy per seed, in config order.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl GridEntry {
    pub fn is_diagonal(&self) -> bool {
        self.high_db == self.low_db
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    /// Every pair `high >= low` over the grid, ordered by `(high, low)`.
    pub entries: Vec<GridEntry>,
    /// Index of the best pair overall.
    pub best: usize,
    /// Index of the best single-threshold (diagonal) pair.
    pub best_equal: usize,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridEntry {
        &self.entries[self.best]
    }

    pub fn best_equal(&self) -> &GridEntry {
        &self.entries[self.best_equal]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma_high_db", "gamma_low_db", "trials", "mean_accuracy", "std_accuracy"])?;
        for e in &self.entries {
            w.write_record([
                e.high_db.to_string(),
                e.low_db.to_string(),
                e.accuracies.len().to_string(),
                e.mean_accuracy.to_string(),
                e.std_accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Index of the highest mean; ties go to the lexicographically smallest
/// `(high, low)` pair.
fn argmax<'a>(entries: impl Iterator<Item = (usize, &'a GridEntry)>) -> Option<usize> {
    let mut best: Option<(usize, &GridEntry)> = None;
    for (i, e) in entries {
        let better = match best {
            None => true,
            Some((_, b)) => {
                e.mean_accuracy > b.mean_accuracy
                    || (e.mean_accuracy == b.mean_accuracy && (e.high_db, e.low_db) < (b.high_db, b.low_db))
            }
        };
        if better {
            best = Some((i, e));
        }
    }
    best.map(|(i, _)| i)
}

/// Evaluates the centralized scheme at every `(high_db, low_db)` pair over
/// the configured seeds; the rest of the setup comes from `cfg`.
pub fn evaluate_threshold_pairs(cfg: &ExperimentConfig, pairs: &[(f64, f64)]) -> Result<Vec<GridEntry>> {
    if cfg.mode != Mode::Centralized {
        return Err(Error::invalid("threshold search needs a centralized config"));
    }
    match cfg.precision {
        Precision::F64 => {
            let (train, test) = load_datasets::<f64>(&cfg.dataset)?;
            evaluate_on(cfg, pairs, &train, &test)
        }
        Precision::F32 => {
            let (train, test) = load_datasets::<f32>(&cfg.dataset)?;
            evaluate_on(cfg, pairs, &train, &test)
        }
    }
}

fn evaluate_on<T: Scalar>(
    cfg: &ExperimentConfig,
    pairs: &[(f64, f64)],
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<Vec<GridEntry>> {
    let point = Point::base(cfg);
    let configs = pairs
        .iter()
        .map(|&(h, l)| centralized_config(cfg, &point, ThresholdPolicy::from_db(h, l)?))
        .collect::<Result<Vec<_>>>()?;
    let units: Vec<(usize, u64)> = (0..pairs.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let work = |&(p, seed): &(usize, u64)| {
        run_centralized(train, test, &configs[p], &SeedStreams::new(seed)).map(|t| t.final_accuracy)
    };
    let accuracies: Vec<f64> = if cfg.parallel {
        units.par_iter().map(work).collect::<Result<_>>()?
    } else {
        units.iter().map(work).collect::<Result<_>>()?
    };
    Ok(pairs
        .iter()
        .zip(accuracies.chunks(cfg.seeds.len()))
        .map(|(&(high_db, low_db), acc)| {
            let (mean_accuracy, std_accuracy) = mean_std(acc);
            GridEntry {
                high_db,
                low_db,
                accuracies: acc.to_vec(),
                mean_accuracy,
                std_accuracy,
            }
        })
        .collect())
}

/// Exhaustive search over all pairs `high >= low` drawn from the
/// `[gridsearch] grid_db` values.
pub fn grid_search_thresholds(cfg: &ExperimentConfig) -> Result<GridSearchResult> {
    let grid = cfg
        .grid_db
        .as_deref()
        .ok_or_else(|| Error::Config(vec!["gridsearch.grid_db: missing required key".into()]))?;
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.is_empty() {
        return Err(Error::Config(vec!["gridsearch.grid_db: must list at least one value".into()]));
    }
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .flat_map(|&h| values.iter().filter(move |&&l| l <= h).map(move |&l| (h, l)))
        .collect();
    let entries = evaluate_threshold_pairs(cfg, &pairs)?;
    let best = argmax(entries.iter().enumerate()).expect("grid is nonempty");
    let best_equal = argmax(entries.iter().enumerate().filter(|(_, e)| e.is_diagonal())).expect("grid has a diagonal");
    Ok(GridSearchResult {
        entries,
        best,
        best_equal,
    })
}
