//! Block-fading data channel.
//!
//! Each resource block sees an independent Rayleigh gain, so its power
//! `|h|^2` is unit-mean exponential and the received SNR is `|h|^2` times the
//! transmit SNR. Retransmissions are maximal-ratio combined, which adds branch
//! SNRs. At the payload level the channel is the equivalent real AWGN channel:
//! a payload received at combined SNR `g` carries i.i.d. Gaussian noise of
//! variance `P_sig / g` on every component.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::{Error, Result, Scalar};

/// Reference payload power. Datasets and model payloads are normalized to
/// unit mean-square component value before transmission.
pub const SIGNAL_POWER: f64 = 1.0;

pub fn db_to_linear(db: f64) -> Result<f64> {
    if !db.is_finite() {
        return Err(Error::invalid(format!("dB value must be finite, got {db}")));
    }
    Ok(10f64.powf(db / 10.0))
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Transmit SNR of one resource block, before fading. Linear scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TxSnr(f64);

impl TxSnr {
    /// Accepts any positive value including `+inf` (the noiseless limit).
    pub fn new(linear: f64) -> Result<Self> {
        if linear > 0.0 {
            Ok(Self(linear))
        } else {
            Err(Error::invalid(format!("transmit SNR must be > 0, got {linear}")))
        }
    }

    pub fn from_db(db: f64) -> Result<Self> {
        Self::new(db_to_linear(db)?)
    }

    pub fn linear(self) -> f64 {
        self.0
    }

    pub fn db(self) -> f64 {
        linear_to_db(self.0)
    }
}

/// One resource block's fading realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub gain_power: f64,
    pub received_snr: f64,
}

/// Draws one Rayleigh block: `|h|^2 ~ Exp(1)`.
pub fn draw_block<R: Rng + ?Sized>(rng: &mut R, tx_snr: TxSnr) -> ChannelDraw {
    let e: f64 = Exp1.sample(rng);
    // A zero gain has probability ~2^-53 but would make the block carry no
    // information at all; keep received SNR strictly positive.
    let gain_power = e.max(f64::MIN_POSITIVE);
    ChannelDraw {
        gain_power,
        received_snr: gain_power * tx_snr.linear(),
    }
}

/// MRC output SNR: the sum of branch SNRs.
pub fn mrc_combine(draws: &[ChannelDraw]) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::invalid("MRC needs at least one branch"));
    }
    if let Some(d) = draws.iter().find(|d| !(d.received_snr >= 0.0)) {
        return Err(Error::invalid(format!(
            "branch SNR must be >= 0, got {}",
            d.received_snr
        )));
    }
    Ok(draws.iter().map(|d| d.received_snr).sum())
}

/// Adds equivalent-channel noise of variance `signal_power / combined_snr` to
/// every payload component.
pub fn corrupt_payload<T: Scalar, R: Rng + ?Sized>(
    payload: &[T],
    combined_snr: f64,
    signal_power: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(combined_snr > 0.0) {
        return Err(Error::invalid(format!(
            "combined SNR must be > 0, got {combined_snr}"
        )));
    }
    if payload.is_empty() {
        return Err(Error::invalid("payload is empty"));
    }
    let sigma = T::from_f64_lossy((signal_power / combined_snr).sqrt());
    Ok(payload
        .iter()
        .map(|&x| x + sigma * T::standard_normal(rng))
        .collect())
}

/// A payload estimate after MRC over `blocks_used` resource blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSignal<T> {
    pub payload_estimate: Vec<T>,
    pub combined_snr: f64,
    pub blocks_used: usize,
}

impl<T: Scalar> CombinedSignal<T> {
    /// MRC of two independent receptions of the same payload: SNR-weighted
    /// average of the estimates, SNRs and block counts add.
    pub fn merge(self, other: CombinedSignal<T>) -> Result<Self> {
        if self.payload_estimate.len() != other.payload_estimate.len() {
            return Err(Error::invalid(format!(
                "cannot combine payloads of length {} and {}",
                self.payload_estimate.len(),
                other.payload_estimate.len()
            )));
        }
        let total = self.combined_snr + other.combined_snr;
        let wa = T::from_f64_lossy(self.combined_snr / total);
        let wb = T::from_f64_lossy(other.combined_snr / total);
        let payload_estimate = self
            .payload_estimate
            .iter()
            .zip(&other.payload_estimate)
            .map(|(&a, &b)| wa * a + wb * b)
            .collect();
        Ok(Self {
            payload_estimate,
            combined_snr: total,
            blocks_used: self.blocks_used + other.blocks_used,
        })
    }
}

/// Rayleigh block-fading channel with a fixed transmit SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockFadingChannel {
    pub tx_snr: TxSnr,
    pub signal_power: f64,
}

impl BlockFadingChannel {
    pub fn new(tx_snr: TxSnr) -> Self {
        Self {
            tx_snr,
            signal_power: SIGNAL_POWER,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, fading: &mut R) -> ChannelDraw {
        draw_block(fading, self.tx_snr)
    }

    pub fn corrupt<T: Scalar, R: Rng + ?Sized>(
        &self,
        payload: &[T],
        combined_snr: f64,
        blocks_used: usize,
        noise: &mut R,
    ) -> Result<CombinedSignal<T>> {
        Ok(CombinedSignal {
            payload_estimate: corrupt_payload(payload, combined_snr, self.signal_power, noise)?,
            combined_snr,
            blocks_used,
        })
    }

    /// Sends `payload` over the given blocks and returns the MRC estimate.
    pub fn receive<T: Scalar, R: Rng + ?Sized>(
        &self,
        payload: &[T],
        draws: &[ChannelDraw],
        noise: &mut R,
    ) -> Result<CombinedSignal<T>> {
        let snr = mrc_combine(draws)?;
        self.corrupt(payload, snr, draws.len(), noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(0.0).unwrap(), 1.0);
        assert_relative_eq!(db_to_linear(20.0).unwrap(), 100.0, max_relative = 1e-15);
        assert_relative_eq!(db_to_linear(4.0).unwrap(), 2.511_886_431_509_58, max_relative = 1e-12);
        assert!(db_to_linear(f64::NAN).is_err());
        assert!(db_to_linear(f64::INFINITY).is_err());
        assert!(TxSnr::new(0.0).is_err());
        assert!(TxSnr::new(-1.0).is_err());
        assert!(TxSnr::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn db_round_trip(db in -100.0f64..100.0) {
            let back = TxSnr::from_db(db).unwrap().db();
            prop_assert!((back - db).abs() <= 1e-9 * db.abs().max(1.0));
        }

        #[test]
        fn mrc_is_additive(snrs in prop::collection::vec(0.0f64..1e3, 2..40), cut in 1usize..39) {
            let draws: Vec<ChannelDraw> = snrs
                .iter()
                .map(|&s| ChannelDraw { gain_power: s, received_snr: s })
                .collect();
            let cut = cut.min(draws.len() - 1);
            let whole = mrc_combine(&draws).unwrap();
            let parts = mrc_combine(&draws[..cut]).unwrap() + mrc_combine(&draws[cut..]).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        }
    }

    #[test]
    fn mrc_examples() {
        let d = |s: f64| ChannelDraw { gain_power: s, received_snr: s };
        assert_eq!(mrc_combine(&[d(2.0), d(3.0)]).unwrap(), 5.0);
        assert_eq!(mrc_combine(&[d(1.7)]).unwrap(), 1.7);
        assert_eq!(mrc_combine(&[d(0.5); 4]).unwrap(), 2.0);
        assert!(mrc_combine(&[]).is_err());
        assert!(mrc_combine(&[d(-1.0)]).is_err());
    }

    #[test]
    fn draw_is_seeded_and_consistent() {
        let tx = TxSnr::from_db(4.0).unwrap();
        let s = SeedStreams::new(3);
        let (mut a, mut b) = (s.rng(Stream::Fading), s.rng(Stream::Fading));
        for _ in 0..100 {
            let (x, y) = (draw_block(&mut a, tx), draw_block(&mut b, tx));
            assert_eq!(x, y);
            assert_eq!(x.received_snr, x.gain_power * tx.linear());
        }
    }

    #[test]
    fn gain_moments_match_unit_exponential() {
        let tx = TxSnr::new(1.0).unwrap();
        let mut rng = SeedStreams::new(11).rng(Stream::Fading);
        let n = 1_000_000;
        let (mut sum, mut above) = (0.0, 0usize);
        for _ in 0..n {
            let g = draw_block(&mut rng, tx).gain_power;
            sum += g;
            above += (g > 1.0) as usize;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
        assert!((above as f64 / n as f64 - (-1f64).exp()).abs() < 0.005);
    }

    #[test]
    fn noise_vanishes_at_high_snr() {
        let payload: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 - 2.0).collect();
        let mut rng = SeedStreams::new(1).rng(Stream::Noise);
        let est = corrupt_payload(&payload, 1e12, 1.0, &mut rng).unwrap();
        for (a, b) in est.iter().zip(&payload) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(corrupt_payload(&payload, 0.0, 1.0, &mut rng).is_err());
        assert!(corrupt_payload::<f64, _>(&[], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let payload = vec![0.25f32; 64];
        let s = SeedStreams::new(5);
        let a = corrupt_payload(&payload, 2.0, 1.0, &mut s.rng(Stream::Noise)).unwrap();
        let b = corrupt_payload(&payload, 2.0, 1.0, &mut s.rng(Stream::Noise)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_weights_by_snr() {
        let a = CombinedSignal { payload_estimate: vec![1.0, 0.0], combined_snr: 1.0, blocks_used: 1 };
        let b = CombinedSignal { payload_estimate: vec![4.0, 3.0], combined_snr: 2.0, blocks_used: 2 };
        let m = a.merge(b).unwrap();
        assert_eq!(m.combined_snr, 3.0);
        assert_eq!(m.blocks_used, 3);
        assert_relative_eq!(m.payload_estimate[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.payload_estimate[1], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn merged_noise_variance_matches_total_snr() {
        // Two receptions at SNR 1 and 3 must carry the noise of one reception at 4.
        let ch = BlockFadingChannel::new(TxSnr::new(1.0).unwrap());
        let payload = vec![0.0f64; 100_000];
        let mut rng = SeedStreams::new(9).rng(Stream::Noise);
        let a = ch.corrupt(&payload, 1.0, 1, &mut rng).unwrap();
        let b = ch.corrupt(&payload, 3.0, 2, &mut rng).unwrap();
        let m = a.merge(b).unwrap();
        let var = m.payload_estimate.iter().map(|x| x * x).sum::<f64>() / payload.len() as f64;
        assert!((var / 0.25 - 1.0).abs() < 0.02, "var {var}");
    }
}
