//! Monte Carlo stochastic depth for residual MLPs.
//!
//! Train a residual network with randomly skipped blocks, then sample gated
//! subnetworks at test time to get a predictive distribution and its
//! entropy. Calibration metrics, out-of-distribution entropy curves and a
//! verification harness sit on top.

pub mod data;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod resnet;
pub mod rng;
pub mod stochastic;
pub mod train;
pub mod verify;

pub use data::{Dataset, IdentitySpec, IdentityWorld, Split, SplitSpec, Standardizer};
pub use error::{Error, Result};
pub use metrics::{CalibrationReport, PredictionSet, ReliabilityBin};
pub use numerics::{Gradient, Matrix};
pub use resnet::{Checkpoint, GateMask, Mode, NetworkSpec, ResidualNet};
pub use stochastic::{
    enumerate_predict, mc_predict, DepthSchedule, GateConvention, McConfig, PredictiveSummary, Regime,
};
pub use train::{TrainConfig, TrainReport};
pub use verify::{MorphSweep, VerificationConfig, VerificationTrial};
