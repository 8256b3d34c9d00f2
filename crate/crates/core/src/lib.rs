//! Energy-minimal transmit planning for a two-phase cooperative rate-splitting
//! downlink over multiple time blocks.
//!
//! The AP serves mobile users (mUEs) directly and reaches a permanently blocked
//! destination user (dUE) through mUE relays. Plans are produced by the joint
//! full-horizon solver (GENIE), the per-block efficiency-constrained scheduler
//! (ECO), the per-block even-transmission scheduler (EDT), and two baselines.

pub mod algorithms;
pub mod conic;
pub mod error;
pub mod harness;
pub mod rate_model;
pub mod sca;
pub mod scenario;

pub use algorithms::{Algorithm, AlgorithmOutput, EfficiencyProfile, ResidualState, Traffic};
pub use error::{Error, Result};
pub use harness::{ExperimentPreset, TrialResult};
pub use rate_model::{BlockPlan, Framework, RateReport, RateSplit, TransmitPlan};
pub use scenario::{BlockageMode, ChannelRealization, Geometry, SystemConfig};
