//! Monte Carlo simulation of data-importance aware radio resource allocation
//! for edge machine learning.
//!
//! Two upload pipelines share one block-fading channel model:
//!
//! * [`centralized`]: devices upload raw samples. The access point judges each
//!   received sample against its current model and retransmits misclassified
//!   samples to a higher combined SNR than correctly classified ones.
//! * [`distributed`]: devices upload locally trained models. Resource blocks
//!   are split in proportion to local dataset size and every received copy is
//!   summed into the global model.
//!
//! The numeric core is generic over the payload scalar ([`Scalar`], `f32` or
//! `f64`); the aliases below fix it to `f64`, which is what the experiment
//! harness uses.

pub mod centralized;
pub mod channel;
pub mod dataset;
pub mod distributed;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod rng;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = dataset::Dataset<f64>;
pub type LinearModel = learner::LinearModel<f64>;
pub type Sample = learner::Sample<f64>;
pub type CombinedSignal = channel::CombinedSignal<f64>;
pub type ModelCopies = distributed::ModelCopies<f64>;

pub type Dataset32 = dataset::Dataset<f32>;
pub type LinearModel32 = learner::LinearModel<f32>;
