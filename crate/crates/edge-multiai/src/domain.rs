//! Domain types shared by every other module: model variants, application
//! zoos, memory state, request outcomes and scenario configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Application identifier. Ordering is lexicographic and is used as the final
/// tie-break whenever two otherwise equal choices must be made deterministic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Self {
        AppId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AppId {
    fn from(s: &str) -> Self {
        AppId::new(s)
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid scenario: {reason}")]
    InvalidScenario { reason: String },
    #[error("unknown application: {app_id}")]
    UnknownApplication { app_id: AppId },
    #[error("memory budget exceeded: loading {requested_mb} MB over budget {budget_mb} MB")]
    BudgetExceeded { requested_mb: f64, budget_mb: f64 },
}

fn invalid(reason: impl Into<String>) -> DomainError {
    DomainError::InvalidScenario {
        reason: reason.into(),
    }
}

/// One precision level of an application's model: its memory footprint,
/// accuracy and timing characteristics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelVariant<T: Scalar> {
    pub app_id: AppId,
    pub precision_label: String,
    pub size_mb: T,
    pub accuracy_pct: T,
    pub load_time_ms: T,
    pub inference_time_ms: T,
}

impl<T: Scalar> ModelVariant<T> {
    pub fn validate(&self) -> Result<(), DomainError> {
        let finite_pos = |v: T| v.is_finite() && v > T::zero();
        if !finite_pos(self.size_mb) {
            return Err(invalid(format!(
                "variant {}/{}: size_mb must be positive",
                self.app_id, self.precision_label
            )));
        }
        if !(self.accuracy_pct.is_finite()
            && self.accuracy_pct > T::zero()
            && self.accuracy_pct <= T::hundred())
        {
            return Err(invalid(format!(
                "variant {}/{}: accuracy_pct must be in (0, 100]",
                self.app_id, self.precision_label
            )));
        }
        if !finite_pos(self.load_time_ms) {
            return Err(invalid(format!(
                "variant {}/{}: load_time_ms must be positive",
                self.app_id, self.precision_label
            )));
        }
        if !finite_pos(self.inference_time_ms) {
            return Err(invalid(format!(
                "variant {}/{}: inference_time_ms must be positive",
                self.app_id, self.precision_label
            )));
        }
        Ok(())
    }
}

/// An application together with its ordered set of model variants.
///
/// The zoo is kept sorted by size descending, so index 0 is always the
/// highest-precision (largest) variant and the last index the smallest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ApplicationSpec<T: Scalar> {
    pub app_id: AppId,
    pub name: String,
    pub zoo: Vec<ModelVariant<T>>,
}

impl<T: Scalar> ApplicationSpec<T> {
    /// Sorts the zoo by size descending, then checks every invariant.
    pub fn normalize(&mut self) -> Result<(), DomainError> {
        if self.zoo.is_empty() {
            return Err(invalid(format!("application {}: empty zoo", self.app_id)));
        }
        for variant in &self.zoo {
            variant.validate()?;
            if variant.app_id != self.app_id {
                return Err(invalid(format!(
                    "application {}: variant {} carries app_id {}",
                    self.app_id, variant.precision_label, variant.app_id
                )));
            }
        }
        self.zoo.sort_by(|a, b| {
            b.size_mb
                .partial_cmp(&a.size_mb)
                .expect("variant sizes are finite")
        });
        for pair in self.zoo.windows(2) {
            if pair[0].size_mb <= pair[1].size_mb {
                return Err(invalid(format!(
                    "application {}: variants {} and {} have equal sizes",
                    self.app_id, pair[0].precision_label, pair[1].precision_label
                )));
            }
            if pair[0].accuracy_pct < pair[1].accuracy_pct {
                return Err(invalid(format!(
                    "application {}: accuracy increases as size decreases ({} < {})",
                    self.app_id, pair[0].precision_label, pair[1].precision_label
                )));
            }
        }
        Ok(())
    }

    /// Highest-precision (largest) variant.
    pub fn highest(&self) -> &ModelVariant<T> {
        &self.zoo[0]
    }

    /// Lowest-precision (smallest) variant.
    pub fn lowest(&self) -> &ModelVariant<T> {
        self.zoo.last().expect("zoo is non-empty")
    }
}

/// A single inference request at an instant in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InferenceRequest<T: Scalar> {
    pub app_id: AppId,
    pub time_ms: T,
}

impl<T: Scalar> InferenceRequest<T> {
    pub fn new(app_id: impl Into<AppId>, time_ms: T) -> Self {
        InferenceRequest {
            app_id: app_id.into(),
            time_ms,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.time_ms.is_finite() && self.time_ms >= T::zero()) {
            return Err(invalid(format!(
                "request for {}: time_ms must be finite and non-negative",
                self.app_id
            )));
        }
        Ok(())
    }
}

/// Protection window around one predicted request.
///
/// The model loads `delta_ms + load_lead_ms` before the predicted time so it
/// is resident `delta_ms` early, and stays protected until `delta_ms` after.
/// Lead-ins that would start before the simulation origin clamp to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RequestWindow<T: Scalar> {
    pub app_id: AppId,
    pub predicted_time_ms: T,
    pub delta_ms: T,
    pub load_lead_ms: T,
}

impl<T: Scalar> RequestWindow<T> {
    pub fn new(
        app_id: AppId,
        predicted_time_ms: T,
        delta_ms: T,
        load_lead_ms: T,
    ) -> Result<Self, DomainError> {
        if !(predicted_time_ms.is_finite() && predicted_time_ms >= T::zero()) {
            return Err(invalid("window predicted_time_ms must be non-negative"));
        }
        if !(delta_ms.is_finite() && delta_ms >= T::zero()) {
            return Err(invalid("window delta_ms must be non-negative"));
        }
        if !(load_lead_ms.is_finite() && load_lead_ms >= T::zero()) {
            return Err(invalid("window load_lead_ms must be non-negative"));
        }
        Ok(RequestWindow {
            app_id,
            predicted_time_ms,
            delta_ms,
            load_lead_ms,
        })
    }

    pub fn open_ms(&self) -> T {
        (self.predicted_time_ms - self.delta_ms - self.load_lead_ms).max(T::zero())
    }

    pub fn close_ms(&self) -> T {
        self.predicted_time_ms + self.delta_ms
    }

    /// Window membership: open <= now < close.
    pub fn contains(&self, now_ms: T) -> bool {
        self.open_ms() <= now_ms && now_ms < self.close_ms()
    }

    /// Closed-interval intersection with `[from_ms, to_ms]`.
    pub fn overlaps(&self, from_ms: T, to_ms: T) -> bool {
        self.open_ms() <= to_ms && self.close_ms() >= from_ms
    }
}

/// Load progress of a reserved memory entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum LoadState<T: Scalar> {
    /// The reserved variant is resident and servable.
    Ready,
    /// The reserved variant is still loading and becomes servable at
    /// `ready_ms`. While it loads, `serving` answers requests: it holds the
    /// previously resident variant during an in-place upgrade, and `None`
    /// when the slot was empty or its occupant was evicted to make room.
    Loading {
        serving: Option<ModelVariant<T>>,
        ready_ms: T,
    },
}

/// One reserved slot in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LoadedEntry<T: Scalar> {
    pub reserved: ModelVariant<T>,
    pub state: LoadState<T>,
    /// When the reserved variant's load was issued.
    pub loaded_at_ms: T,
}

impl<T: Scalar> LoadedEntry<T> {
    pub fn ready(reserved: ModelVariant<T>) -> Self {
        LoadedEntry {
            reserved,
            state: LoadState::Ready,
            loaded_at_ms: T::zero(),
        }
    }

    pub fn is_loading(&self) -> bool {
        matches!(self.state, LoadState::Loading { .. })
    }

    /// The variant that answers a request right now, if any.
    pub fn serving(&self) -> Option<&ModelVariant<T>> {
        match &self.state {
            LoadState::Ready => Some(&self.reserved),
            LoadState::Loading { serving, .. } => serving.as_ref(),
        }
    }
}

/// The set of currently loaded model variants and the memory budget.
///
/// Space is accounted at reservation time: an entry's `reserved` size counts
/// against the budget from the instant the load is enacted, which keeps the
/// budget invariant conservative while loads are in flight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MemoryState<T: Scalar> {
    budget_mb: T,
    loaded: BTreeMap<AppId, LoadedEntry<T>>,
}

impl<T: Scalar> MemoryState<T> {
    pub fn new(budget_mb: T) -> Self {
        assert!(
            budget_mb.is_finite() && budget_mb > T::zero(),
            "memory budget must be positive"
        );
        MemoryState {
            budget_mb,
            loaded: BTreeMap::new(),
        }
    }

    pub fn budget_mb(&self) -> T {
        self.budget_mb
    }

    pub fn used_mb(&self) -> T {
        self.loaded
            .values()
            .fold(T::zero(), |acc, e| acc + e.reserved.size_mb)
    }

    pub fn free_mb(&self) -> T {
        self.budget_mb - self.used_mb()
    }

    pub fn entry(&self, app_id: &AppId) -> Option<&LoadedEntry<T>> {
        self.loaded.get(app_id)
    }

    /// Variant currently able to serve `app_id`, if any.
    pub fn serving_variant(&self, app_id: &AppId) -> Option<&ModelVariant<T>> {
        self.loaded.get(app_id).and_then(|e| e.serving())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AppId, &LoadedEntry<T>)> {
        self.loaded.iter()
    }

    pub fn contains(&self, app_id: &AppId) -> bool {
        self.loaded.contains_key(app_id)
    }

    pub fn remove(&mut self, app_id: &AppId) -> Option<LoadedEntry<T>> {
        self.loaded.remove(app_id)
    }

    /// Inserts or replaces the entry for the variant's application, enforcing
    /// the budget invariant.
    pub fn insert(&mut self, entry: LoadedEntry<T>) -> Result<(), DomainError> {
        let app_id = entry.reserved.app_id.clone();
        let previous = self.loaded.remove(&app_id);
        let new_used = self.used_mb() + entry.reserved.size_mb;
        if new_used > self.budget_mb {
            if let Some(prev) = previous {
                self.loaded.insert(app_id, prev);
            }
            return Err(DomainError::BudgetExceeded {
                requested_mb: entry.reserved.size_mb.as_f64(),
                budget_mb: self.budget_mb.as_f64(),
            });
        }
        self.loaded.insert(app_id, entry);
        Ok(())
    }

    /// Marks a pending load as finished; the reserved variant starts serving.
    pub fn complete_load(&mut self, app_id: &AppId) {
        if let Some(entry) = self.loaded.get_mut(app_id) {
            entry.state = LoadState::Ready;
        }
    }
}

/// How a request was served.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    WarmStart,
    ColdStart,
    Failure,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::WarmStart => f.write_str("warm"),
            OutcomeKind::ColdStart => f.write_str("cold"),
            OutcomeKind::Failure => f.write_str("failure"),
        }
    }
}

/// Per-request result: how it was served, by which variant, and at what cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RequestOutcome<T: Scalar> {
    pub request: InferenceRequest<T>,
    pub kind: OutcomeKind,
    pub served_variant: Option<ModelVariant<T>>,
    pub latency_ms: T,
    pub accuracy_pct: Option<T>,
}

impl<T: Scalar> RequestOutcome<T> {
    pub fn warm(request: InferenceRequest<T>, variant: &ModelVariant<T>) -> Self {
        RequestOutcome {
            request,
            kind: OutcomeKind::WarmStart,
            latency_ms: variant.inference_time_ms,
            accuracy_pct: Some(variant.accuracy_pct),
            served_variant: Some(variant.clone()),
        }
    }

    /// Cold start paying `load_penalty_ms` of load time before inference.
    /// The penalty is the full load time for an on-demand load and the
    /// remaining load time when the request lands mid-load.
    pub fn cold(
        request: InferenceRequest<T>,
        variant: &ModelVariant<T>,
        load_penalty_ms: T,
    ) -> Self {
        debug_assert!(
            load_penalty_ms > T::zero() && load_penalty_ms <= variant.load_time_ms,
            "cold-start load penalty must be within (0, load_time]"
        );
        RequestOutcome {
            request,
            kind: OutcomeKind::ColdStart,
            latency_ms: load_penalty_ms + variant.inference_time_ms,
            accuracy_pct: Some(variant.accuracy_pct),
            served_variant: Some(variant.clone()),
        }
    }

    pub fn failure(request: InferenceRequest<T>) -> Self {
        RequestOutcome {
            request,
            kind: OutcomeKind::Failure,
            served_variant: None,
            latency_ms: T::zero(),
            accuracy_pct: None,
        }
    }
}

/// Eviction policy selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "none")]
    NoPolicy,
    #[serde(rename = "lfe")]
    Lfe,
    #[serde(rename = "bfe")]
    Bfe,
    #[serde(rename = "ws-bfe")]
    WsBfe,
    #[serde(rename = "iws-bfe")]
    IwsBfe,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::NoPolicy,
        PolicyKind::Lfe,
        PolicyKind::Bfe,
        PolicyKind::WsBfe,
        PolicyKind::IwsBfe,
    ];

    /// The four eviction policies, excluding the on-demand baseline.
    pub const EVICTING: [PolicyKind; 4] = [
        PolicyKind::Lfe,
        PolicyKind::Bfe,
        PolicyKind::WsBfe,
        PolicyKind::IwsBfe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::NoPolicy => "none",
            PolicyKind::Lfe => "lfe",
            PolicyKind::Bfe => "bfe",
            PolicyKind::WsBfe => "ws-bfe",
            PolicyKind::IwsBfe => "iws-bfe",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(PolicyKind::NoPolicy),
            "lfe" => Ok(PolicyKind::Lfe),
            "bfe" => Ok(PolicyKind::Bfe),
            "ws-bfe" => Ok(PolicyKind::WsBfe),
            "iws-bfe" => Ok(PolicyKind::IwsBfe),
            other => Err(invalid(format!(
                "unknown policy {other:?}; expected one of none, lfe, bfe, ws-bfe, iws-bfe"
            ))),
        }
    }
}

/// Full description of one simulated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScenarioConfig<T: Scalar> {
    pub applications: Vec<ApplicationSpec<T>>,
    pub memory_budget_mb: T,
    pub policy: PolicyKind,
    /// Prediction deviation knob in [0, 1]; drives both arrival-time jitter
    /// and the fraction of requests left unpredicted.
    pub deviation: T,
    /// Target mean number of request windows overlapping any instant.
    pub mean_concurrency: T,
    pub horizon_ms: T,
    pub requests_per_app: u32,
    /// Window width scale: delta = mean residual + alpha * residual std dev.
    pub alpha: T,
    pub seed: u64,
    /// When set, the predicted trace also contains requests that never
    /// materialize in the actual trace.
    #[serde(default)]
    pub phantom_predictions: bool,
}

impl<T: Scalar> ScenarioConfig<T> {
    /// Index of applications by id. Callers validate first, so duplicate ids
    /// cannot occur here.
    pub fn zoo_index(&self) -> BTreeMap<AppId, ApplicationSpec<T>> {
        self.applications
            .iter()
            .map(|app| (app.app_id.clone(), app.clone()))
            .collect()
    }

    /// Mean load time across every variant of every application.
    pub fn mean_load_time_ms(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0usize;
        for app in &self.applications {
            for variant in &app.zoo {
                sum = sum + variant.load_time_ms;
                count += 1;
            }
        }
        if count == 0 {
            T::zero()
        } else {
            sum / T::from_usize_lossy(count)
        }
    }
}

/// Checks every scenario invariant, re-sorting zoos by size where needed,
/// and returns the normalized configuration.
pub fn validate_scenario<T: Scalar>(
    mut cfg: ScenarioConfig<T>,
) -> Result<ScenarioConfig<T>, DomainError> {
    if cfg.applications.is_empty() {
        return Err(invalid("scenario has no applications"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for app in &mut cfg.applications {
        app.normalize()?;
        if !seen.insert(app.app_id.clone()) {
            return Err(invalid(format!("duplicate application id {}", app.app_id)));
        }
    }
    if !(cfg.memory_budget_mb.is_finite() && cfg.memory_budget_mb > T::zero()) {
        return Err(invalid("memory_budget_mb must be positive"));
    }
    for app in &cfg.applications {
        let smallest = app.lowest();
        if smallest.size_mb > cfg.memory_budget_mb {
            return Err(invalid(format!(
                "application {}: smallest variant {} ({} MB) exceeds the {} MB budget",
                app.app_id, smallest.precision_label, smallest.size_mb, cfg.memory_budget_mb
            )));
        }
    }
    if !(cfg.deviation.is_finite() && cfg.deviation >= T::zero() && cfg.deviation <= T::one()) {
        return Err(invalid("deviation must be in [0, 1]"));
    }
    if !(cfg.mean_concurrency.is_finite() && cfg.mean_concurrency > T::zero()) {
        return Err(invalid("mean_concurrency must be positive"));
    }
    if !(cfg.horizon_ms.is_finite() && cfg.horizon_ms > T::zero()) {
        return Err(invalid("horizon_ms must be positive"));
    }
    if cfg.requests_per_app == 0 {
        return Err(invalid("requests_per_app must be at least 1"));
    }
    let two = T::from_f64_lossy(2.0);
    if !(cfg.alpha.is_finite() && cfg.alpha >= T::zero() && cfg.alpha <= two) {
        return Err(invalid("alpha must be in [0, 2]"));
    }
    Ok(cfg)
}

/// Result of classifying an arriving request against the memory state.
#[derive(Clone, Debug, PartialEq)]
pub enum Classification<'a, T: Scalar> {
    /// Some variant of the application is resident and servable.
    WarmCandidate(&'a ModelVariant<T>),
    /// No variant of the application can serve right now.
    ColdCandidate,
}

/// Classifies a request: warm if any servable variant of the requesting
/// application is in memory, cold otherwise.
pub fn classify<'a, T: Scalar>(
    request: &InferenceRequest<T>,
    memory: &'a MemoryState<T>,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) -> Result<Classification<'a, T>, DomainError> {
    if !zoo_index.contains_key(&request.app_id) {
        return Err(DomainError::UnknownApplication {
            app_id: request.app_id.clone(),
        });
    }
    match memory.serving_variant(&request.app_id) {
        Some(variant) => Ok(Classification::WarmCandidate(variant)),
        None => Ok(Classification::ColdCandidate),
    }
}

/// The five-application scenario bundled with the crate, parsed from the
/// embedded JSON asset.
pub fn default_scenario<T: Scalar>() -> ScenarioConfig<T> {
    let raw = include_str!("../assets/default_scenario.json");
    let cfg: ScenarioConfig<T> =
        serde_json::from_str(raw).expect("bundled default scenario parses");
    validate_scenario(cfg).expect("bundled default scenario validates")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variant(app: &str, label: &str, size: f64, acc: f64, load: f64) -> ModelVariant<f64> {
        ModelVariant {
            app_id: AppId::new(app),
            precision_label: label.to_string(),
            size_mb: size,
            accuracy_pct: acc,
            load_time_ms: load,
            inference_time_ms: load / 10.0,
        }
    }

    fn two_variant_app(app: &str, big: f64, small: f64) -> ApplicationSpec<f64> {
        ApplicationSpec {
            app_id: AppId::new(app),
            name: app.to_string(),
            zoo: vec![
                variant(app, "FP32", big, 90.0, big * 1.6),
                variant(app, "INT8", small, 70.0, small * 1.6),
            ],
        }
    }

    fn scenario(apps: Vec<ApplicationSpec<f64>>, budget: f64) -> ScenarioConfig<f64> {
        ScenarioConfig {
            applications: apps,
            memory_budget_mb: budget,
            policy: PolicyKind::IwsBfe,
            deviation: 0.3,
            mean_concurrency: 3.0,
            horizon_ms: 600_000.0,
            requests_per_app: 10,
            alpha: 0.0,
            seed: 7,
            phantom_predictions: false,
        }
    }

    #[test]
    fn bundled_scenario_is_accepted() {
        let cfg = default_scenario::<f64>();
        assert_eq!(cfg.applications.len(), 5);
        assert_eq!(cfg.memory_budget_mb, 1024.0);
        for app in &cfg.applications {
            assert_eq!(app.zoo.len(), 3);
            assert!(app.highest().size_mb > app.lowest().size_mb);
        }
        // Spot values for the face-recognition zoo.
        let face = &cfg.applications[0];
        assert_eq!(face.app_id.as_str(), "face_recognition");
        assert_eq!(face.highest().size_mb, 535.1);
        assert_eq!(face.highest().accuracy_pct, 90.2);
        assert_eq!(face.lowest().size_mb, 144.2);
    }

    #[test]
    fn oversized_smallest_variant_is_rejected() {
        let apps = vec![two_variant_app("a", 2500.0, 2000.0)];
        let err = validate_scenario(scenario(apps, 1024.0)).unwrap_err();
        assert!(err.to_string().contains("exceeds the 1024 MB budget"));
    }

    #[test]
    fn accuracy_increasing_with_smaller_size_is_rejected() {
        let mut app = two_variant_app("a", 500.0, 100.0);
        app.zoo[0].accuracy_pct = 60.0; // big variant now less accurate
        let err = validate_scenario(scenario(vec![app], 1024.0)).unwrap_err();
        assert!(err.to_string().contains("accuracy increases"));
    }

    #[test]
    fn unsorted_zoo_is_resorted() {
        let mut app = two_variant_app("a", 500.0, 100.0);
        app.zoo.reverse();
        let cfg = validate_scenario(scenario(vec![app], 1024.0)).unwrap();
        assert_eq!(cfg.applications[0].highest().size_mb, 500.0);
    }

    #[test]
    fn duplicate_app_ids_are_rejected() {
        let apps = vec![
            two_variant_app("a", 500.0, 100.0),
            two_variant_app("a", 400.0, 90.0),
        ];
        let err = validate_scenario(scenario(apps, 1024.0)).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn classify_warm_and_cold() {
        let app = two_variant_app("a", 500.0, 100.0);
        let zoo_index: BTreeMap<_, _> = [(app.app_id.clone(), app.clone())].into();
        let mut memory = MemoryState::new(1024.0);

        let request = InferenceRequest::new("a", 10.0);
        assert_eq!(
            classify(&request, &memory, &zoo_index).unwrap(),
            Classification::ColdCandidate
        );

        memory
            .insert(LoadedEntry::ready(app.lowest().clone()))
            .unwrap();
        match classify(&request, &memory, &zoo_index).unwrap() {
            Classification::WarmCandidate(v) => assert_eq!(v.precision_label, "INT8"),
            other => panic!("expected warm, got {other:?}"),
        }

        let unknown = InferenceRequest::new("zz", 10.0);
        assert!(matches!(
            classify(&unknown, &memory, &zoo_index),
            Err(DomainError::UnknownApplication { .. })
        ));
    }

    #[test]
    fn classify_matches_set_intersection_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;

        let apps: Vec<ApplicationSpec<f64>> = (0..6)
            .map(|i| two_variant_app(&format!("app{i}"), 200.0 + i as f64, 50.0 + i as f64))
            .collect();
        let zoo_index: BTreeMap<_, _> = apps
            .iter()
            .map(|a| (a.app_id.clone(), a.clone()))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let mut memory = MemoryState::new(10_000.0);
            let mut resident = std::collections::BTreeSet::new();
            for app in &apps {
                if rng.gen_bool(0.5) {
                    let v = if rng.gen_bool(0.5) {
                        app.highest()
                    } else {
                        app.lowest()
                    };
                    memory.insert(LoadedEntry::ready(v.clone())).unwrap();
                    resident.insert(app.app_id.clone());
                }
            }
            let target = &apps[rng.gen_range(0..apps.len())];
            let request = InferenceRequest::new(target.app_id.as_str(), rng.gen_range(0.0..1e6));
            // Oracle: warm iff the app's variant set intersects the loaded set.
            let warm_expected = resident.contains(&target.app_id);
            let got = classify(&request, &memory, &zoo_index).unwrap();
            match (warm_expected, got) {
                (true, Classification::WarmCandidate(_)) => {}
                (false, Classification::ColdCandidate) => {}
                (exp, got) => panic!("oracle {exp} disagrees with {got:?}"),
            }
        }
    }

    #[test]
    fn memory_budget_is_enforced() {
        let app_a = two_variant_app("a", 600.0, 100.0);
        let app_b = two_variant_app("b", 600.0, 100.0);
        let mut memory = MemoryState::new(1000.0);
        memory
            .insert(LoadedEntry::ready(app_a.highest().clone()))
            .unwrap();
        let err = memory
            .insert(LoadedEntry::ready(app_b.highest().clone()))
            .unwrap_err();
        assert!(matches!(err, DomainError::BudgetExceeded { .. }));
        // Replacing an app's own entry reuses its reservation.
        memory
            .insert(LoadedEntry::ready(app_a.lowest().clone()))
            .unwrap();
        assert_eq!(memory.used_mb(), 100.0);
    }

    #[test]
    fn window_geometry_clamps_at_zero() {
        let w = RequestWindow::new(AppId::new("a"), 1000.0, 50.0, 200.0).unwrap();
        assert_eq!(w.open_ms(), 750.0);
        assert_eq!(w.close_ms(), 1050.0);
        assert!(w.contains(750.0));
        assert!(!w.contains(1050.0));

        let early = RequestWindow::new(AppId::new("a"), 100.0, 50.0, 200.0).unwrap();
        assert_eq!(early.open_ms(), 0.0);

        let point = RequestWindow::new(AppId::new("a"), 5.0, 0.0, 0.0).unwrap();
        assert_eq!(point.open_ms(), point.close_ms());
        assert!(!point.contains(5.0));
    }

    #[test]
    fn outcome_constructors_encode_latency_rules() {
        let v = variant("a", "FP32", 500.0, 90.0, 800.0);
        let warm = RequestOutcome::warm(InferenceRequest::new("a", 1.0), &v);
        assert_eq!(warm.latency_ms, 80.0);
        assert_eq!(warm.accuracy_pct, Some(90.0));

        let cold = RequestOutcome::cold(InferenceRequest::new("a", 1.0), &v, 800.0);
        assert_eq!(cold.latency_ms, 880.0);

        let partial = RequestOutcome::cold(InferenceRequest::new("a", 1.0), &v, 90.0);
        assert_eq!(partial.latency_ms, 170.0);

        let fail = RequestOutcome::<f64>::failure(InferenceRequest::new("a", 1.0));
        assert!(fail.served_variant.is_none());
        assert!(fail.accuracy_pct.is_none());
    }

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.as_str().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("lru".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn types_are_send_and_sync() {
        fn check<T: Send + Sync>() {}
        check::<ScenarioConfig<f64>>();
        check::<MemoryState<f64>>();
        check::<RequestOutcome<f64>>();
        check::<RequestWindow<f32>>();
    }

    #[test]
    fn scenario_json_round_trips_with_exact_field_names() {
        let cfg = default_scenario::<f64>();
        let json = serde_json::to_string(&cfg).unwrap();
        for field in [
            "applications",
            "memory_budget_mb",
            "policy",
            "deviation",
            "mean_concurrency",
            "horizon_ms",
            "requests_per_app",
            "alpha",
            "seed",
            "app_id",
            "precision_label",
            "size_mb",
            "accuracy_pct",
            "load_time_ms",
            "inference_time_ms",
        ] {
            assert!(json.contains(field), "missing field name {field}");
        }
        let back: ScenarioConfig<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
