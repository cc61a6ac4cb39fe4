//! Independent replay auditor.
//!
//! Rebuilds memory residency from the run log's load and unload events
//! alone, in exact emission order, and checks that every recorded outcome
//! matches the classification that residency implies: a request is warm if
//! and only if some variant of its application was servable at arrival.
//! The budget invariant and outcome conservation are checked along the way.
//!
//! The reconstruction shares no code with the engine's decision path: it
//! derives servability purely from event causes and load times.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{AppId, ModelVariant, OutcomeKind, ScenarioConfig};
use crate::engine::{LoadCause, RunLog};
use crate::scalar::Scalar;
use crate::workload::WorkloadPair;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("outcome conservation violated: {outcomes} outcomes for {requests} requests")]
    Conservation { outcomes: usize, requests: usize },
    #[error("budget exceeded during replay: {used_mb} MB used of {budget_mb} MB at t={time_ms}")]
    BudgetExceeded {
        time_ms: f64,
        used_mb: f64,
        budget_mb: f64,
    },
    #[error("classification mismatch at t={time_ms} for {app_id}: log says {logged:?}, replay says {expected:?}")]
    ClassificationMismatch {
        time_ms: f64,
        app_id: AppId,
        logged: OutcomeKind,
        expected: OutcomeKind,
    },
    #[error("malformed log: {reason}")]
    MalformedLog { reason: String },
}

/// Counts from a successful replay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub requests: usize,
    pub warm: usize,
    pub cold: usize,
    pub failures: usize,
}

struct Slot<T: Scalar> {
    reserved_mb: T,
    /// Variant able to serve before `ready_ms`; the reserved load itself
    /// serves afterwards.
    serving_before_ready: Option<ModelVariant<T>>,
    ready_ms: T,
    reserved: ModelVariant<T>,
}

impl<T: Scalar> Slot<T> {
    fn servable_at(&self, now_ms: T) -> Option<&ModelVariant<T>> {
        if self.ready_ms <= now_ms {
            Some(&self.reserved)
        } else {
            self.serving_before_ready.as_ref()
        }
    }
}

enum ReplayEvent<'a, T: Scalar> {
    Load(&'a crate::engine::LoadEvent<T>),
    Unload(&'a crate::engine::UnloadEvent<T>),
    Outcome(usize),
}

/// Replays a run log and verifies the budget invariant, outcome
/// conservation, and every per-request classification.
pub fn audit<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    pair: &WorkloadPair<T>,
    log: &RunLog<T>,
) -> Result<AuditReport, AuditError> {
    if log.outcomes.len() != pair.actual.len() {
        return Err(AuditError::Conservation {
            outcomes: log.outcomes.len(),
            requests: pair.actual.len(),
        });
    }
    if log.outcomes.len() != log.outcome_seqs.len() {
        return Err(AuditError::MalformedLog {
            reason: "outcome_seqs length differs from outcomes".into(),
        });
    }

    // Merge all emissions back into their original order.
    let mut events: Vec<(u64, ReplayEvent<'_, T>)> = Vec::new();
    for e in &log.load_events {
        events.push((e.seq, ReplayEvent::Load(e)));
    }
    for e in &log.unload_events {
        events.push((e.seq, ReplayEvent::Unload(e)));
    }
    for (idx, seq) in log.outcome_seqs.iter().enumerate() {
        events.push((*seq, ReplayEvent::Outcome(idx)));
    }
    events.sort_by_key(|(seq, _)| *seq);

    let budget = cfg.memory_budget_mb;
    let mut slots: BTreeMap<AppId, Slot<T>> = BTreeMap::new();
    let mut report = AuditReport::default();

    let used = |slots: &BTreeMap<AppId, Slot<T>>| {
        slots
            .values()
            .fold(T::zero(), |acc, s| acc + s.reserved_mb)
    };

    for (_, event) in events {
        match event {
            ReplayEvent::Unload(e) => {
                if slots.remove(&e.app_id).is_none() {
                    return Err(AuditError::MalformedLog {
                        reason: format!("unload of {} which is not resident", e.app_id),
                    });
                }
            }
            ReplayEvent::Load(e) => {
                let previous = slots.remove(&e.app_id);
                // A replacement hands the victim's space away immediately,
                // so nothing serves until the low-precision swap finishes.
                // Any other load onto an occupied slot is an in-place
                // upgrade whose old variant keeps serving; a load onto an
                // empty slot serves nothing until ready.
                let serving_before_ready = match e.cause {
                    LoadCause::Replacement => None,
                    _ => previous.and_then(|p| p.servable_at(e.time_ms).cloned()),
                };
                slots.insert(
                    e.app_id.clone(),
                    Slot {
                        reserved_mb: e.variant.size_mb,
                        serving_before_ready,
                        ready_ms: e.time_ms + e.variant.load_time_ms,
                        reserved: e.variant.clone(),
                    },
                );
                let total = used(&slots);
                if total > budget {
                    return Err(AuditError::BudgetExceeded {
                        time_ms: e.time_ms.as_f64(),
                        used_mb: total.as_f64(),
                        budget_mb: budget.as_f64(),
                    });
                }
            }
            ReplayEvent::Outcome(idx) => {
                let outcome = &log.outcomes[idx];
                let now = outcome.request.time_ms;
                let app_id = &outcome.request.app_id;
                report.requests += 1;
                // Cold-start loads are emitted before their outcome, so a
                // fresh on-demand load is visible here as a pending slot.
                let expected = match slots.get(app_id) {
                    Some(slot) if slot.servable_at(now).is_some() => OutcomeKind::WarmStart,
                    Some(_) => OutcomeKind::ColdStart,
                    None => OutcomeKind::Failure,
                };
                if outcome.kind != expected {
                    return Err(AuditError::ClassificationMismatch {
                        time_ms: now.as_f64(),
                        app_id: app_id.clone(),
                        logged: outcome.kind,
                        expected,
                    });
                }
                match outcome.kind {
                    OutcomeKind::WarmStart => report.warm += 1,
                    OutcomeKind::ColdStart => report.cold += 1,
                    OutcomeKind::Failure => report.failures += 1,
                }
            }
        }
    }

    // Every recorded occupancy sample must respect the budget too.
    for (t, used_mb) in &log.memory_timeline {
        if *used_mb > budget {
            return Err(AuditError::BudgetExceeded {
                time_ms: t.as_f64(),
                used_mb: used_mb.as_f64(),
                budget_mb: budget.as_f64(),
            });
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{default_scenario, validate_scenario, PolicyKind};
    use crate::engine::run;
    use crate::workload::build_workload;

    #[test]
    fn audit_accepts_real_runs_for_every_policy() {
        let base = validate_scenario(default_scenario::<f64>()).unwrap();
        for policy in PolicyKind::ALL {
            for seed in [1u64, 2, 3] {
                let mut cfg = base.clone();
                cfg.policy = policy;
                cfg.seed = seed;
                cfg.requests_per_app = 40;
                let built = build_workload(&cfg);
                let log = run(&cfg, &built.pair);
                let report = audit(&cfg, &built.pair, &log)
                    .unwrap_or_else(|e| panic!("{policy:?}/{seed}: {e}"));
                assert_eq!(report.requests, built.pair.actual.len());
                assert_eq!(
                    report.warm + report.cold + report.failures,
                    report.requests
                );
            }
        }
    }

    #[test]
    fn audit_rejects_forged_warm_outcome() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 20;
        let built = build_workload(&cfg);
        let mut log = run(&cfg, &built.pair);
        // Forge the first failure or cold into a warm start.
        let victim = log
            .outcomes
            .iter()
            .position(|o| o.kind != crate::domain::OutcomeKind::WarmStart)
            .expect("some non-warm outcome exists");
        let variant = cfg.applications[0].zoo[0].clone();
        log.outcomes[victim].kind = crate::domain::OutcomeKind::WarmStart;
        log.outcomes[victim].served_variant = Some(variant);
        assert!(matches!(
            audit(&cfg, &built.pair, &log),
            Err(AuditError::ClassificationMismatch { .. })
        ));
    }

    #[test]
    fn audit_rejects_dropped_outcome() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 10;
        let built = build_workload(&cfg);
        let mut log = run(&cfg, &built.pair);
        log.outcomes.pop();
        log.outcome_seqs.pop();
        assert!(matches!(
            audit(&cfg, &built.pair, &log),
            Err(AuditError::Conservation { .. })
        ));
    }

    #[test]
    fn audit_rejects_overbudget_timeline() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 10;
        let built = build_workload(&cfg);
        let mut log = run(&cfg, &built.pair);
        log.memory_timeline.push((1.0, cfg.memory_budget_mb * 2.0));
        assert!(matches!(
            audit(&cfg, &built.pair, &log),
            Err(AuditError::BudgetExceeded { .. })
        ));
    }
}
