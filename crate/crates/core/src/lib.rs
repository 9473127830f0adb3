//! Sequential Monte Carlo Bayesian experiment design.
//!
//! This crate implements online learning of Hamiltonian parameters from
//! binary measurement outcomes. A weighted particle cloud approximates the
//! posterior distribution over model parameters; after each measurement the
//! cloud is reweighted by Bayes' rule and occasionally rejuvenated by a
//! Liu-West resampler. Before each measurement, candidate experiment
//! controls (evolution times) are proposed by a guess heuristic, optionally
//! refined by a local optimizer, and ranked by a utility function (negative
//! expected posterior variance or expected information gain). The chosen
//! experiment feeds the next Bayes update.
//!
//! Supporting machinery: iterative Bayesian Cramér-Rao bounds for
//! self-certification of estimator risk ([`crb`]), covariance-ellipse
//! credible regions ([`region`]), and a reproducible multi-trial benchmark
//! harness with CSV output ([`bench`]).
//!
//! All randomness flows through named, seedable streams ([`rng`]); a fixed
//! base seed reproduces every trial bit-for-bit, serial or parallel.

pub mod bench;
pub mod crb;
pub mod design;
pub mod error;
pub mod model;
pub mod prior;
pub mod region;
pub mod rng;
pub mod smc;

pub use bench::{
    aggregate, inspect_trial, percentile, run_bcrb_schedule, run_benchmark, run_trial, run_trials,
    BenchmarkConfig, BoundRow, InspectReport, StepRow, SummaryRow, TrialRecord, TruthSource,
};
pub use crb::{bayes_info, bcrb_step, fisher_info, prior_info, BcrbMode, InfoMatrix};
pub use design::{
    estimate_adaptive, guess_control, optimize_local, reapprox, util_ig, util_nv, util_nv_with,
    AdaptiveSetup, DesignConfig, HeuristicKind, OptimizerKind, OutcomeSource, RecordedOutcomes,
    ScaleMatrix, SimulatedOutcomes, StepInfo, UtilityKind,
};
pub use error::{Error, Result};
pub use model::{Control, Decay, Model, ModelDescriptor, ModelKind, Outcome};
pub use prior::GaussianPrior;
pub use region::{
    ellipse_region, expected_normal_mass, hyper_to_param_region, region_mass, region_volume,
    RegionEstimate,
};
pub use smc::{ParticleCloud, ResampleConfig};
