//! The discrete-event simulation loop: request windows, proactive and
//! on-demand model loads, policy enactment, and the per-request outcome log.
//!
//! Events at equal timestamps process in a fixed priority order (window
//! close, then load completion, then request arrival, then window open),
//! with ties broken by application id and finally by insertion order. A
//! load completing exactly when its request arrives therefore serves warm.
//!
//! Memory is reserved when a plan is enacted, not when the load finishes.
//! While a load is in flight the slot serves the previously resident
//! variant if the load is an in-place upgrade, and nothing otherwise; a
//! request landing on an unservable in-flight slot is a cold start charged
//! the remaining load time. Window close never unloads anything: space is
//! reclaimed lazily by later plans.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AppId, ApplicationSpec, Classification, LoadState, LoadedEntry, MemoryState, ModelVariant,
    PolicyKind, RequestOutcome, RequestWindow, ScenarioConfig,
};
use crate::policies::{self, EvictionAction, EvictionPlan, HistoryEntry, PolicyContext};
use crate::scalar::Scalar;
use crate::workload::{compute_delta_scaled, compute_history_window, WorkloadPair};

#[derive(Debug, Error)]
pub enum EngineError {
    /// The memory state changed between planning and enactment. The
    /// single-threaded loop never does this; the guard catches misuse of
    /// the public API.
    #[error("plan is stale: {reason}")]
    PlanStale { reason: String },
}

/// Why a model load was issued.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadCause {
    /// Window-open load ahead of a predicted request.
    Proactive,
    /// On-demand load triggered by a cold-start request.
    ColdStart,
    /// Eviction victim swapped down to its lowest-precision variant.
    Replacement,
}

/// One model load: issued at `time_ms`, servable `variant.load_time_ms`
/// later. `seq` is the global emission index used for exact replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LoadEvent<T: Scalar> {
    pub time_ms: T,
    pub app_id: AppId,
    pub variant: ModelVariant<T>,
    pub cause: LoadCause,
    pub seq: u64,
}

/// One model removal from memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UnloadEvent<T: Scalar> {
    pub time_ms: T,
    pub app_id: AppId,
    pub seq: u64,
}

/// Everything one seeded run produced: per-request outcomes, the memory
/// occupancy timeline, and the load/unload event log that lets an
/// independent auditor re-derive every classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunLog<T: Scalar> {
    pub outcomes: Vec<RequestOutcome<T>>,
    /// Emission index of each outcome, parallel to `outcomes`.
    pub outcome_seqs: Vec<u64>,
    /// (time, reserved MB) after every memory mutation.
    pub memory_timeline: Vec<(T, T)>,
    pub load_events: Vec<LoadEvent<T>>,
    pub unload_events: Vec<UnloadEvent<T>>,
}

impl<T: Scalar> RunLog<T> {
    /// JSON Lines form: one outcome object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for outcome in &self.outcomes {
            out.push_str(&serde_json::to_string(outcome).expect("outcomes serialize"));
            out.push('\n');
        }
        out
    }

    /// CSV summary: one row per outcome.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_ms", "app_id", "kind", "variant", "latency_ms", "accuracy_pct"])?;
        for o in &self.outcomes {
            w.write_record([
                format!("{}", o.request.time_ms),
                o.request.app_id.to_string(),
                o.kind.to_string(),
                o.served_variant
                    .as_ref()
                    .map(|v| v.precision_label.clone())
                    .unwrap_or_default(),
                format!("{}", o.latency_ms),
                o.accuracy_pct.map(|a| format!("{a}")).unwrap_or_default(),
            ])?;
        }
        w.flush()
    }
}

/// Event kinds in tie-break priority order at equal timestamps.
#[derive(Clone, Debug, PartialEq, Eq)]
enum SimEvent {
    WindowClose { window_idx: usize },
    LoadComplete { app_id: AppId },
    RequestArrival { request_idx: usize },
    WindowOpen { window_idx: usize },
}

impl SimEvent {
    fn rank(&self) -> u8 {
        match self {
            SimEvent::WindowClose { .. } => 0,
            SimEvent::LoadComplete { .. } => 1,
            SimEvent::RequestArrival { .. } => 2,
            SimEvent::WindowOpen { .. } => 3,
        }
    }
}

struct QueuedEvent<T: Scalar> {
    time_ms: T,
    app_id: AppId,
    seq: u64,
    event: SimEvent,
}

impl<T: Scalar> PartialEq for QueuedEvent<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for QueuedEvent<T> {}
impl<T: Scalar> PartialOrd for QueuedEvent<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for QueuedEvent<T> {
    /// Reversed so the binary heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        let forward = self
            .time_ms
            .partial_cmp(&other.time_ms)
            .expect("event times are finite")
            .then_with(|| self.event.rank().cmp(&other.event.rank()))
            .then_with(|| self.app_id.cmp(&other.app_id))
            .then_with(|| self.seq.cmp(&other.seq));
        forward.reverse()
    }
}

/// Builds one protection window per predicted request, with the load lead
/// sized for the application's highest-precision variant.
pub fn window_schedule<T: Scalar>(
    pair: &WorkloadPair<T>,
    delta_ms: T,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) -> Vec<RequestWindow<T>> {
    pair.predicted
        .requests
        .iter()
        .map(|r| {
            let app = zoo_index
                .get(&r.app_id)
                .unwrap_or_else(|| panic!("predicted trace names unknown app {}", r.app_id));
            RequestWindow::new(
                r.app_id.clone(),
                r.time_ms,
                delta_ms,
                app.highest().load_time_ms,
            )
            .expect("windows from validated traces are well-formed")
        })
        .collect()
}

/// Applies a plan to a memory snapshot: victims are unloaded or swapped to
/// their lowest-precision variant, then the planned variant is reserved for
/// the requester. Returns the updated state. Fails with `PlanStale` when
/// the snapshot no longer supports the plan.
pub fn enact<T: Scalar>(
    plan: &EvictionPlan<T>,
    memory: &MemoryState<T>,
    now_ms: T,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) -> Result<MemoryState<T>, EngineError> {
    let mut next = memory.clone();
    apply_plan(plan, &mut next, now_ms, zoo_index)?;
    Ok(next)
}

/// Pending-load bookkeeping returned by plan application:
/// (app, variant, completion time) for every load the plan started.
type StartedLoads<T> = Vec<(AppId, ModelVariant<T>, T)>;

fn apply_plan<T: Scalar>(
    plan: &EvictionPlan<T>,
    memory: &mut MemoryState<T>,
    now_ms: T,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) -> Result<StartedLoads<T>, EngineError> {
    let stale = |reason: String| EngineError::PlanStale { reason };
    let mut started = Vec::new();
    for (app, action) in &plan.evictions {
        let entry = memory
            .remove(app)
            .ok_or_else(|| stale(format!("eviction target {app} is not loaded")))?;
        if entry.is_loading() {
            return Err(stale(format!("eviction target {app} has a load in flight")));
        }
        if *action == EvictionAction::ReplaceWithLowest {
            let lowest = zoo_index
                .get(app)
                .ok_or_else(|| stale(format!("unknown application {app}")))?
                .lowest()
                .clone();
            let ready_ms = now_ms + lowest.load_time_ms;
            // The victim's space goes to the requester now, so the slot
            // serves nothing until the low-precision swap finishes.
            memory
                .insert(LoadedEntry {
                    reserved: lowest.clone(),
                    state: LoadState::Loading {
                        serving: None,
                        ready_ms,
                    },
                    loaded_at_ms: now_ms,
                })
                .map_err(|e| stale(e.to_string()))?;
            started.push((app.clone(), lowest, ready_ms));
        }
    }

    let requester = plan.load_variant.app_id.clone();
    let previous = memory.remove(&requester);
    if previous.as_ref().is_some_and(|e| e.is_loading()) {
        return Err(stale(format!("requester {requester} has a load in flight")));
    }
    // An in-place upgrade keeps the old variant serving until the new one
    // is ready; a load into an empty slot serves nothing meanwhile.
    let serving = previous.map(|e| e.reserved);
    let ready_ms = now_ms + plan.load_variant.load_time_ms;
    memory
        .insert(LoadedEntry {
            reserved: plan.load_variant.clone(),
            state: LoadState::Loading {
                serving,
                ready_ms,
            },
            loaded_at_ms: now_ms,
        })
        .map_err(|e| stale(e.to_string()))?;
    started.push((requester, plan.load_variant.clone(), ready_ms));
    Ok(started)
}

struct EngineState<T: Scalar> {
    memory: MemoryState<T>,
    history: Vec<HistoryEntry<T>>,
    queue: BinaryHeap<QueuedEvent<T>>,
    next_queue_seq: u64,
    next_emit_seq: u64,
    log: RunLog<T>,
}

impl<T: Scalar> EngineState<T> {
    fn push_event(&mut self, time_ms: T, app_id: AppId, event: SimEvent) {
        let seq = self.next_queue_seq;
        self.next_queue_seq += 1;
        self.queue.push(QueuedEvent {
            time_ms,
            app_id,
            seq,
            event,
        });
    }

    fn emit_seq(&mut self) -> u64 {
        let seq = self.next_emit_seq;
        self.next_emit_seq += 1;
        seq
    }

    fn record_outcome(&mut self, outcome: RequestOutcome<T>) {
        let seq = self.emit_seq();
        self.log.outcomes.push(outcome);
        self.log.outcome_seqs.push(seq);
    }

    /// Enacts a plan against live state, logging evictions and loads and
    /// scheduling their completions. `cause` labels the requester's load;
    /// victim swaps are always `Replacement`.
    fn enact_live(
        &mut self,
        plan: &EvictionPlan<T>,
        now_ms: T,
        cause: LoadCause,
        zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
    ) {
        for (app, action) in &plan.evictions {
            if *action == EvictionAction::Unload {
                let seq = self.emit_seq();
                self.log.unload_events.push(UnloadEvent {
                    time_ms: now_ms,
                    app_id: app.clone(),
                    seq,
                });
            }
        }
        let started = apply_plan(plan, &mut self.memory, now_ms, zoo_index)
            .expect("plans from a snapshot of live state cannot be stale");
        let requester = &plan.load_variant.app_id;
        for (app, variant, ready_ms) in started {
            let seq = self.emit_seq();
            self.log.load_events.push(LoadEvent {
                time_ms: now_ms,
                app_id: app.clone(),
                variant,
                cause: if &app == requester {
                    cause
                } else {
                    LoadCause::Replacement
                },
                seq,
            });
            self.push_event(ready_ms, app.clone(), SimEvent::LoadComplete { app_id: app });
        }
        self.log
            .memory_timeline
            .push((now_ms, self.memory.used_mb()));
        debug_assert!(self.memory.used_mb() <= self.memory.budget_mb());
    }
}

/// Runs one scenario against one workload pair and returns the outcome log.
///
/// The configuration must be validated and the pair derived from it; both
/// are enforced upstream and breached preconditions panic.
pub fn run<T: Scalar>(cfg: &ScenarioConfig<T>, pair: &WorkloadPair<T>) -> RunLog<T> {
    let residuals = pair.residuals();
    let delta_ms = if residuals.is_empty() {
        T::zero()
    } else {
        compute_delta_scaled(&residuals, cfg.alpha).expect("non-empty residuals")
    };
    let history_window_ms = compute_history_window(&pair.actual).unwrap_or_else(|_| T::zero());
    run_with_constants(cfg, pair, delta_ms, history_window_ms)
}

/// As [`run`], with the scheduling constants supplied by the caller (the
/// normal path derives them from the pair).
pub fn run_with_constants<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    pair: &WorkloadPair<T>,
    delta_ms: T,
    history_window_ms: T,
) -> RunLog<T> {
    let zoo_index = cfg.zoo_index();
    let windows = if cfg.policy == PolicyKind::NoPolicy {
        Vec::new()
    } else {
        window_schedule(pair, delta_ms, &zoo_index)
    };
    let unpredicted = pair.unpredicted_flags();

    let mut state = EngineState {
        memory: MemoryState::new(cfg.memory_budget_mb),
        history: Vec::new(),
        queue: BinaryHeap::new(),
        next_queue_seq: 0,
        next_emit_seq: 0,
        log: RunLog {
            outcomes: Vec::with_capacity(pair.actual.len()),
            outcome_seqs: Vec::with_capacity(pair.actual.len()),
            memory_timeline: vec![(T::zero(), T::zero())],
            load_events: Vec::new(),
            unload_events: Vec::new(),
        },
    };

    for (idx, window) in windows.iter().enumerate() {
        state.push_event(
            window.open_ms(),
            window.app_id.clone(),
            SimEvent::WindowOpen { window_idx: idx },
        );
        state.push_event(
            window.close_ms(),
            window.app_id.clone(),
            SimEvent::WindowClose { window_idx: idx },
        );
    }
    for (idx, request) in pair.actual.requests.iter().enumerate() {
        state.push_event(
            request.time_ms,
            request.app_id.clone(),
            SimEvent::RequestArrival { request_idx: idx },
        );
    }

    while let Some(queued) = state.queue.pop() {
        let now_ms = queued.time_ms;
        match queued.event {
            SimEvent::WindowClose { .. } => {
                // The app simply stops being maximalist; reclamation is
                // lazy, so nothing is unloaded here.
            }
            SimEvent::LoadComplete { app_id } => {
                state.memory.complete_load(&app_id);
            }
            SimEvent::WindowOpen { window_idx } => {
                handle_window_open(
                    cfg,
                    &mut state,
                    &windows,
                    window_idx,
                    now_ms,
                    delta_ms,
                    history_window_ms,
                    &zoo_index,
                );
            }
            SimEvent::RequestArrival { request_idx } => {
                handle_request(
                    cfg,
                    &mut state,
                    &windows,
                    request_idx,
                    pair,
                    unpredicted[request_idx],
                    now_ms,
                    delta_ms,
                    history_window_ms,
                    &zoo_index,
                );
            }
        }
    }

    debug_assert_eq!(state.log.outcomes.len(), pair.actual.len());
    state.log
}

#[allow(clippy::too_many_arguments)]
fn handle_window_open<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    state: &mut EngineState<T>,
    windows: &[RequestWindow<T>],
    window_idx: usize,
    now_ms: T,
    delta_ms: T,
    history_window_ms: T,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) {
    let app_id = windows[window_idx].app_id.clone();
    let highest = zoo_index[&app_id].highest();
    match state.memory.entry(&app_id) {
        // Already at the top precision, or a load is mid-flight: leave it.
        Some(entry) if entry.is_loading() => return,
        Some(entry) if entry.reserved.precision_label == highest.precision_label => return,
        _ => {}
    }
    let ctx = PolicyContext {
        now_ms,
        requester: &app_id,
        memory: &state.memory,
        windows,
        history: &state.history,
        delta_ms,
        history_window_ms,
        zoo_index,
    };
    if let Ok(plan) = policies::plan(cfg.policy, &ctx, 0) {
        // Contention may step the plan down to the variant already
        // resident; reloading it would serve nothing.
        let already_resident = state
            .memory
            .entry(&app_id)
            .is_some_and(|e| e.reserved.precision_label == plan.load_variant.precision_label);
        if !already_resident {
            state.enact_live(&plan, now_ms, LoadCause::Proactive, zoo_index);
        }
    }
    // A failed proactive plan is not a request failure; arrivals inside the
    // window will try again on demand.
}

#[allow(clippy::too_many_arguments)]
fn handle_request<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    state: &mut EngineState<T>,
    windows: &[RequestWindow<T>],
    request_idx: usize,
    pair: &WorkloadPair<T>,
    unpredicted: bool,
    now_ms: T,
    delta_ms: T,
    history_window_ms: T,
    zoo_index: &BTreeMap<AppId, ApplicationSpec<T>>,
) {
    let request = pair.actual.requests[request_idx].clone();
    let app_id = request.app_id.clone();

    let outcome = match crate::domain::classify(&request, &state.memory, zoo_index)
        .expect("actual trace apps are in the scenario")
    {
        Classification::WarmCandidate(variant) => RequestOutcome::warm(request, &variant.clone()),
        Classification::ColdCandidate => {
            match state.memory.entry(&app_id) {
                // The slot is mid-load with nothing servable: pay the
                // remaining load time.
                Some(LoadedEntry {
                    reserved,
                    state: LoadState::Loading { ready_ms, .. },
                    ..
                }) => {
                    let remaining = *ready_ms - now_ms;
                    RequestOutcome::cold(request, &reserved.clone(), remaining)
                }
                _ => {
                    let ctx = PolicyContext {
                        now_ms,
                        requester: &app_id,
                        memory: &state.memory,
                        windows,
                        history: &state.history,
                        delta_ms,
                        history_window_ms,
                        zoo_index,
                    };
                    match policies::plan(cfg.policy, &ctx, 0) {
                        Ok(plan) => {
                            let variant = plan.load_variant.clone();
                            state.enact_live(&plan, now_ms, LoadCause::ColdStart, zoo_index);
                            RequestOutcome::cold(request, &variant, variant.load_time_ms)
                        }
                        Err(_) => RequestOutcome::failure(request),
                    }
                }
            }
        }
    };

    state.record_outcome(outcome);
    state.history.push(HistoryEntry {
        app_id,
        time_ms: now_ms,
        unpredicted,
    });
}
