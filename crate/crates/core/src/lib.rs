//! Threshold Bipolar scheduling for joining peers in live p2p streaming:
//! buffer maps, the scheduler, the piecewise progress model, a swarm
//! simulator and trace estimators.

pub mod analytic;
pub mod buffer;
pub mod estimators;
pub mod rle;
pub mod scheduler;
pub mod sim;
pub mod trace;

pub use analytic::{ModelError, ModelParams, Progress, RateGroup, Segment};
pub use buffer::{BufferError, BufferMessage, BufferMetrics, ChunkId, LagSet};
pub use estimators::{
    analyze, BetaMethod, Estimate, EstimatorConfig, EstimatorError, EstimatorReport, RateMethod,
    TauOffMethod,
};
pub use rle::{Rle, RleError};
pub use scheduler::{CandidateSet, Decision, Fetch, HostState, Mode, TbParams};
pub use sim::{RunManifest, SimError, SimOutput, Simulation, SwarmConfig, TrackerState};
pub use trace::{BufferRecord, DecisionRecord, ProgressSample, Trace, TraceError};
