//! Lax-bisimulation policy transfer and transfer-guided exploration for
//! finite MDPs.
//!
//! The numerical core ([`mdp`], [`ot`], [`bisim`], [`transfer`] and the
//! distribution helpers in [`explore`]) is generic over a [`Scalar`]; the
//! aliases below fix it to `f64`, which is what the learning harness,
//! environments and experiment runner use.

pub mod bisim;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod explore;
pub mod learner;
pub mod mdp;
pub mod metrics;
pub mod ot;
pub mod scalar;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::TabularMdp<f64>;
pub type QTable = mdp::QFunction<f64>;
pub type Metric = bisim::PairwiseMetric<f64>;
pub type Transfer = transfer::TransferTable<f64>;
pub type Bisim = bisim::BisimConfig<f64>;

pub type Mdp32 = mdp::TabularMdp<f32>;
pub type QTable32 = mdp::QFunction<f32>;
pub type Metric32 = bisim::PairwiseMetric<f32>;
