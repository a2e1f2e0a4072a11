//! Centralized edge learning: devices upload raw samples one resource block at
//! a time and the access point trains on what it receives.
//!
//! Per sample the access point
//! 1. receives one block and judges the noisy estimate with its current model,
//! 2. keeps requesting retransmissions, MRC-combining them, until the combined
//!    SNR reaches the threshold for that importance level,
//! 3. appends the combined estimate to its buffer and updates the model.
//!
//! The run stops when the block budget is spent, the training pool is used up
//! or (optionally) the validation accuracy has flattened out.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{linear_to_db, BlockFadingChannel, ChannelDraw, CombinedSignal, TxSnr};
use crate::dataset::Dataset;
use crate::learner::{self, Importance, LinearModel, Sample, TrainConfig};
use crate::rng::{SeedStreams, Stream};
use crate::{Error, Result, Scalar};

/// Required combined SNR per importance level, linear scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    gamma_high: f64,
    gamma_low: f64,
}

impl ThresholdPolicy {
    pub fn new(gamma_high: f64, gamma_low: f64) -> Result<Self> {
        if !(gamma_high > 0.0 && gamma_low > 0.0) {
            return Err(Error::invalid(format!(
                "thresholds must be > 0, got ({gamma_high}, {gamma_low})"
            )));
        }
        if gamma_high < gamma_low {
            return Err(Error::invalid(format!(
                "threshold for misclassified samples ({gamma_high}) must be at least the \
                 threshold for correctly classified ones ({gamma_low})"
            )));
        }
        Ok(Self { gamma_high, gamma_low })
    }

    pub fn from_db(high_db: f64, low_db: f64) -> Result<Self> {
        Self::new(
            crate::channel::db_to_linear(high_db)?,
            crate::channel::db_to_linear(low_db)?,
        )
    }

    /// Equal importance: one threshold for every sample.
    pub fn equal(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub fn gamma_high(&self) -> f64 {
        self.gamma_high
    }

    pub fn gamma_low(&self) -> f64 {
        self.gamma_low
    }

    pub fn is_equal_importance(&self) -> bool {
        self.gamma_high == self.gamma_low
    }
}

pub fn threshold_for(importance: Importance, policy: &ThresholdPolicy) -> f64 {
    match importance {
        Importance::More => policy.gamma_high,
        Importance::Less => policy.gamma_low,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockBudget {
    total: usize,
    spent: usize,
}

impl BlockBudget {
    pub fn new(total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::invalid("block budget must be >= 1"));
        }
        Ok(Self { total, spent: 0 })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spent(&self) -> usize {
        self.spent
    }

    pub fn remaining(&self) -> usize {
        self.total - self.spent
    }

    pub fn is_exhausted(&self) -> bool {
        self.spent == self.total
    }

    fn spend(&mut self) -> Result<()> {
        if self.is_exhausted() {
            return Err(Error::BudgetExhausted { total: self.total });
        }
        self.spent += 1;
        Ok(())
    }
}

/// ARQ state for one sample: the MRC estimate so far and the blocks behind it.
#[derive(Debug, Clone)]
pub struct ArqSession<'a, T> {
    payload: &'a [T],
    signal: CombinedSignal<T>,
    draws: Vec<ChannelDraw>,
}

impl<'a, T: Scalar> ArqSession<'a, T> {
    /// Initial transmission over one block.
    pub fn start<F: Rng + ?Sized, N: Rng + ?Sized>(
        payload: &'a [T],
        budget: &mut BlockBudget,
        channel: &BlockFadingChannel,
        fading: &mut F,
        noise: &mut N,
    ) -> Result<Self> {
        budget.spend()?;
        let draw = channel.draw(fading);
        let signal = channel.receive(payload, &[draw], noise)?;
        Ok(Self {
            payload,
            signal,
            draws: vec![draw],
        })
    }

    pub fn estimate(&self) -> &[T] {
        &self.signal.payload_estimate
    }

    pub fn combined_snr(&self) -> f64 {
        self.signal.combined_snr
    }

    pub fn draws(&self) -> &[ChannelDraw] {
        &self.draws
    }

    /// Retransmits on fresh blocks until the combined SNR reaches `threshold`
    /// or the budget runs out. The retransmitted copies are combined among
    /// themselves first, so noise is drawn once for all of them, then merged
    /// with the earlier estimate.
    pub fn retransmit_until<F: Rng + ?Sized, N: Rng + ?Sized>(
        &mut self,
        threshold: f64,
        budget: &mut BlockBudget,
        channel: &BlockFadingChannel,
        fading: &mut F,
        noise: &mut N,
    ) -> Result<()> {
        let first_new = self.draws.len();
        let mut combined = self.signal.combined_snr;
        while combined < threshold && !budget.is_exhausted() {
            budget.spend()?;
            let draw = channel.draw(fading);
            combined += draw.received_snr;
            self.draws.push(draw);
        }
        let fresh = &self.draws[first_new..];
        if !fresh.is_empty() {
            let extra = channel.receive(self.payload, fresh, noise)?;
            let signal = std::mem::replace(
                &mut self.signal,
                CombinedSignal {
                    payload_estimate: Vec::new(),
                    combined_snr: 0.0,
                    blocks_used: 0,
                },
            );
            self.signal = signal.merge(extra)?;
        }
        Ok(())
    }

    pub fn finish(self) -> CombinedSignal<T> {
        self.signal
    }
}

/// Transmits `payload` until the MRC output SNR reaches `threshold` or the
/// budget runs out. At least one block is always used.
pub fn transmit_until_threshold<T: Scalar, F: Rng + ?Sized, N: Rng + ?Sized>(
    payload: &[T],
    threshold: f64,
    budget: &mut BlockBudget,
    channel: &BlockFadingChannel,
    fading: &mut F,
    noise: &mut N,
) -> Result<CombinedSignal<T>> {
    let mut session = ArqSession::start(payload, budget, channel, fading, noise)?;
    session.retransmit_until(threshold, budget, channel, fading, noise)?;
    Ok(session.finish())
}

/// Early stop on a flat validation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Number of consecutive updates inspected.
    pub window: usize,
    /// Largest accuracy spread within the window that counts as converged.
    pub tolerance: f64,
    /// Share of the training pool held out for validation.
    pub holdout_fraction: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 50,
            tolerance: 1e-3,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralizedConfig {
    /// Total resource blocks `N`.
    pub blocks: usize,
    pub policy: ThresholdPolicy,
    pub tx_snr: TxSnr,
    pub train: TrainConfig,
    /// Evaluate test accuracy every this many updates; 0 evaluates only the
    /// final model. The last row always carries the final accuracy.
    pub eval_every: usize,
    pub convergence: Option<Convergence>,
}

impl CentralizedConfig {
    pub fn new(blocks: usize, policy: ThresholdPolicy, tx_snr: TxSnr) -> Self {
        Self {
            blocks,
            policy,
            tx_snr,
            train: TrainConfig::default(),
            eval_every: 0,
            convergence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    DataExhausted,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based position of the sample in the upload sequence.
    pub index: usize,
    pub importance: Importance,
    /// Required combined SNR for this sample.
    pub threshold: f64,
    pub blocks: usize,
    pub spent_total: usize,
    pub combined_snr: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_accuracy: f64,
    pub blocks_total: usize,
    pub stop: StopReason,
}

impl RunTrace {
    pub fn blocks_spent(&self) -> usize {
        self.rows.last().map_or(0, |r| r.spent_total)
    }

    pub const CSV_HEADER: &'static str = "i,importance,blocks,spent_total,combined_snr_db,accuracy";

    /// `i,importance,blocks,spent_total,combined_snr_db,accuracy`; accuracy is
    /// empty on rows where it was not evaluated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                r.importance.as_str().to_string(),
                r.blocks.to_string(),
                r.spent_total.to_string(),
                format!("{:.6}", linear_to_db(r.combined_snr)),
                r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Runs the importance-aware upload loop over `train` until a stop condition
/// holds. Randomness comes from `streams`: sample order from `Shuffle`,
/// fading from `Fading`, payload noise from `Noise` and SGD order from
/// `Training`.
pub fn run_centralized<T: Scalar>(
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &CentralizedConfig,
    streams: &SeedStreams,
) -> Result<RunTrace> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("training and test sets must be nonempty"));
    }
    if train.dim() != test.dim() {
        return Err(Error::invalid("training and test dimensions differ"));
    }
    cfg.train.validate()?;
    let mut budget = BlockBudget::new(cfg.blocks)?;
    let channel = BlockFadingChannel::new(cfg.tx_snr);
    let mut fading = streams.rng(Stream::Fading);
    let mut noise = streams.rng(Stream::Noise);
    let mut trainer = streams.rng(Stream::Training);

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut streams.rng(Stream::Shuffle));
    let validation: Vec<Sample<T>> = match cfg.convergence {
        Some(conv) => {
            let held = ((train.len() as f64) * conv.holdout_fraction).round() as usize;
            let held = held.min(train.len() - 1);
            order
                .split_off(order.len() - held)
                .into_iter()
                .map(|i| train.samples()[i].clone())
                .collect()
        }
        None => Vec::new(),
    };
    let mut recent_validation = Vec::new();

    let classes = train.num_classes().max(test.num_classes());
    let mut model = LinearModel::zeros(classes, train.dim());
    let mut buffer: Vec<Sample<T>> = Vec::new();
    let mut rows = Vec::new();
    let mut stop = StopReason::DataExhausted;

    for (pos, &idx) in order.iter().enumerate() {
        if budget.is_exhausted() {
            stop = StopReason::BudgetExhausted;
            break;
        }
        let sample = &train.samples()[idx];
        let spent_before = budget.spent();

        let mut session = ArqSession::start(&sample.data, &mut budget, &channel, &mut fading, &mut noise)?;
        let importance = model.judge(session.estimate(), sample.label)?;
        let threshold = threshold_for(importance, &cfg.policy);
        session.retransmit_until(threshold, &mut budget, &channel, &mut fading, &mut noise)?;
        let received = session.finish();

        buffer.push(Sample::new(received.payload_estimate, sample.label));
        model = learner::update(&model, &buffer, &cfg.train, &mut trainer)?;

        let accuracy = if cfg.eval_every > 0 && (pos + 1) % cfg.eval_every == 0 {
            Some(model.evaluate(test.samples())?)
        } else {
            None
        };
        rows.push(TraceRow {
            index: pos + 1,
            importance,
            threshold,
            blocks: budget.spent() - spent_before,
            spent_total: budget.spent(),
            combined_snr: received.combined_snr,
            accuracy,
        });

        if let Some(conv) = cfg.convergence {
            recent_validation.push(model.evaluate(&validation)?);
            if recent_validation.len() > conv.window {
                recent_validation.remove(0);
            }
            if recent_validation.len() == conv.window {
                let (lo, hi) = recent_validation
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
                if hi - lo < conv.tolerance {
                    stop = StopReason::Converged;
                    break;
                }
            }
        }
    }
    if stop == StopReason::DataExhausted && budget.is_exhausted() {
        stop = StopReason::BudgetExhausted;
    }

    let final_accuracy = match rows.last() {
        Some(TraceRow { accuracy: Some(a), .. }) => *a,
        _ => model.evaluate(test.samples())?,
    };
    if let Some(last) = rows.last_mut() {
        last.accuracy = Some(final_accuracy);
    }
    Ok(RunTrace {
        rows,
        final_accuracy,
        blocks_total: cfg.blocks,
        stop,
    })
}
