//! Discrete-event simulation of SLO-aware request scheduling for LLM
//! serving.
//!
//! The numeric core (cost model, SLO arithmetic, fit metrics) is generic over
//! [`Scalar`], implemented for `f32` and `f64`. The simulator itself runs in
//! `f64`; the aliases below name the concrete types it uses.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costmodel;
pub mod engine;
pub mod error;
pub mod predictor;
pub mod report;
pub mod scalar;
pub mod sched;
pub mod seed;
pub mod slo;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use costmodel::{CostModel, FitQuality, ItlCoeffs, PrefillCoeffs, ProfileSample};
pub use engine::{measure_overhead, run, simulate, Overhead, RunOptions, SimConfig, SimResult};
pub use predictor::{Bucketing, LengthPredictor, PredictorConfig, PredictorEval};
pub use report::{summarize, sweep, RunReport, SweepReport};
pub use sched::{Policy, PolicyName, PolicySpec, SchedulerState, StepPlan};
pub use slo::{Request, RequestOutcome, RequestStatus, SloCategoryTable};
pub use workload::{Trace, WorkloadSpec};

pub type ItlParams = ItlCoeffs<f64>;
pub type PrefillParams = PrefillCoeffs<f64>;
pub type CostParams = CostModel<f64>;
pub type FitReport = FitQuality<f64>;

pub type ItlParamsF32 = ItlCoeffs<f32>;
pub type PrefillParamsF32 = PrefillCoeffs<f32>;
pub type CostParamsF32 = CostModel<f32>;
pub type FitReportF32 = FitQuality<f32>;
