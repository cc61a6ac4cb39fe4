//! Deterministic discrete-event simulator and policy library for
//! memory-constrained, multi-tenant model serving on an edge server.
//!
//! Applications each carry a zoo of model variants at different precision
//! levels. The simulator schedules proactive loads around predicted request
//! times, resolves memory contention through one of four eviction policies
//! (largest-first, best-fit, warm-start-aware best-fit, and its
//! fitness-scored refinement), and reports warm/cold/failure outcomes
//! together with the evaluation metrics derived from them.
//!
//! All core math is generic over the [`scalar::Scalar`] float width; the
//! aliases at the crate root pin the common instantiations.

pub mod audit;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod policies;
pub mod scalar;
pub mod workload;

pub use domain::{
    classify, default_scenario, validate_scenario, AppId, ApplicationSpec, Classification,
    DomainError, InferenceRequest, LoadState, LoadedEntry, MemoryState, ModelVariant, OutcomeKind,
    PolicyKind, RequestOutcome, RequestWindow, ScenarioConfig,
};
pub use scalar::Scalar;

/// f64 instantiations, the default for simulations.
pub type ModelVariant64 = domain::ModelVariant<f64>;
pub type ApplicationSpec64 = domain::ApplicationSpec<f64>;
pub type ScenarioConfig64 = domain::ScenarioConfig<f64>;
pub type MemoryState64 = domain::MemoryState<f64>;
pub type RequestOutcome64 = domain::RequestOutcome<f64>;
pub type WorkloadPair64 = workload::WorkloadPair<f64>;
pub type BuiltWorkload64 = workload::BuiltWorkload<f64>;
pub type RunLog64 = engine::RunLog<f64>;
pub type SimulationReport64 = metrics::SimulationReport<f64>;

/// f32 instantiations for memory-lean sweeps.
pub type ModelVariant32 = domain::ModelVariant<f32>;
pub type ApplicationSpec32 = domain::ApplicationSpec<f32>;
pub type ScenarioConfig32 = domain::ScenarioConfig<f32>;
pub type RunLog32 = engine::RunLog<f32>;
pub type SimulationReport32 = metrics::SimulationReport<f32>;
