//! Model eviction policies.
//!
//! When an application needs memory for a model load, a policy reads a
//! snapshot of the world and produces an eviction/replacement plan, or
//! signals that the request cannot be served. Four strategies are provided
//! behind one planning interface:
//!
//! * `lfe` evicts the largest loaded models first until the demand fits.
//! * `bfe` evicts the loaded model whose size best fits the missing amount.
//! * `ws-bfe` is best-fit on scavengeable space, deprioritizes applications
//!   whose predicted windows overlap the requester's, and swaps victims down
//!   to their lowest-precision variant instead of unloading them.
//! * `iws-bfe` additionally drops recently requested applications from the
//!   candidate set and ranks the rest by a fitness score combining the
//!   distance to their next predicted request with the probability of an
//!   unexpected request.
//!
//! Only minimalist applications (loaded but outside every request window)
//! are eviction candidates; applications inside a window are protected, as
//! are slots with a load still in flight. If a plan cannot be found for the
//! desired variant, planning retries with the next smaller variant of the
//! requester and ultimately fails when even the smallest does not fit.
//!
//! Policies are pure planners: they never mutate state, so they can be
//! evaluated concurrently. Only the engine applies plans.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AppId, ApplicationSpec, MemoryState, ModelVariant, PolicyKind, RequestWindow,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    /// Even the smallest variant of the requester cannot fit after
    /// scavenging every eligible candidate.
    #[error("inference failure: no variant of {app_id} fits after maximal scavenging")]
    InferenceFailure { app_id: AppId },
    #[error("desired variant index {index} out of bounds for {app_id}")]
    VariantOutOfBounds { app_id: AppId, index: usize },
}

/// What to do with one eviction victim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvictionAction {
    /// Remove the model from memory entirely.
    Unload,
    /// Swap the model for the application's lowest-precision variant.
    ReplaceWithLowest,
}

/// The plan a policy hands back: victims in application order, the variant
/// to load for the requester, and the total space the plan frees (victims
/// plus the requester's own reclaimed slot, if any).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvictionPlan<T: Scalar> {
    pub evictions: Vec<(AppId, EvictionAction)>,
    pub load_variant: ModelVariant<T>,
    pub freed_mb: T,
}

/// One entry of the request log the engine feeds back to the policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HistoryEntry<T: Scalar> {
    pub app_id: AppId,
    pub time_ms: T,
    /// True when no prediction linked to this arrival.
    pub unpredicted: bool,
}

/// Read-only snapshot handed to a policy for one planning decision.
pub struct PolicyContext<'a, T: Scalar> {
    pub now_ms: T,
    /// The application demanding memory.
    pub requester: &'a AppId,
    pub memory: &'a MemoryState<T>,
    /// The full predicted window schedule.
    pub windows: &'a [RequestWindow<T>],
    /// Time-sorted log of actual requests seen so far.
    pub history: &'a [HistoryEntry<T>],
    pub delta_ms: T,
    pub history_window_ms: T,
    pub zoo_index: &'a BTreeMap<AppId, ApplicationSpec<T>>,
}

/// Splits applications into the maximalist set (inside some predicted
/// window right now) and the minimalist set (loaded but outside every
/// window). Only minimalist applications may be evicted.
pub fn partition_sets<T: Scalar>(ctx: &PolicyContext<'_, T>) -> (BTreeSet<AppId>, BTreeSet<AppId>) {
    let maximalist: BTreeSet<AppId> = ctx
        .windows
        .iter()
        .filter(|w| w.contains(ctx.now_ms))
        .map(|w| w.app_id.clone())
        .collect();
    let minimalist = ctx
        .memory
        .iter()
        .map(|(app, _)| app.clone())
        .filter(|app| !maximalist.contains(app))
        .collect();
    (maximalist, minimalist)
}

/// Empirical probability that an unexpected request for `candidate` lands
/// within `delta_ms` after a request of the current requester: the fraction
/// of the requester's past requests that were followed within delta by an
/// unpredicted request of the candidate. Zero when the requester has no
/// history.
pub fn unexpected_request_probability<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    candidate: &AppId,
) -> T {
    let requester_times: Vec<T> = ctx
        .history
        .iter()
        .filter(|h| &h.app_id == ctx.requester)
        .map(|h| h.time_ms)
        .collect();
    if requester_times.is_empty() {
        return T::zero();
    }
    let candidate_unpredicted: Vec<T> = ctx
        .history
        .iter()
        .filter(|h| &h.app_id == candidate && h.unpredicted)
        .map(|h| h.time_ms)
        .collect();
    let hits = requester_times
        .iter()
        .filter(|&&t| {
            candidate_unpredicted
                .iter()
                .any(|&u| u > t && u <= t + ctx.delta_ms)
        })
        .count();
    T::from_usize_lossy(hits) / T::from_usize_lossy(requester_times.len())
}

/// Next predicted request time of `app` strictly after `now`.
fn next_predicted_after<T: Scalar>(
    windows: &[RequestWindow<T>],
    app: &AppId,
    now_ms: T,
) -> Option<T> {
    windows
        .iter()
        .filter(|w| &w.app_id == app && w.predicted_time_ms > now_ms)
        .map(|w| w.predicted_time_ms)
        .fold(None, |acc: Option<T>, t| {
            Some(acc.map_or(t, |best| best.min(t)))
        })
}

/// Eviction fitness of a candidate in [0, 1]: the distance to its next
/// predicted request, normalized by the farthest such distance over all
/// candidates, damped by the probability of an unexpected request. Higher
/// means safer to evict. Candidates with no future predicted request take
/// normalized distance 1.
pub fn fitness_score<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    candidate: &AppId,
    candidates: &BTreeSet<AppId>,
) -> T {
    let max_distance = candidates
        .iter()
        .filter_map(|app| next_predicted_after(ctx.windows, app, ctx.now_ms))
        .map(|t| t - ctx.now_ms)
        .fold(T::zero(), T::max);
    let normalized = match next_predicted_after(ctx.windows, candidate, ctx.now_ms) {
        Some(t) if max_distance > T::zero() => (t - ctx.now_ms) / max_distance,
        _ => T::one(),
    };
    normalized * (T::one() - unexpected_request_probability(ctx, candidate))
}

/// A minimalist application eligible for eviction.
struct Candidate<T: Scalar> {
    app_id: AppId,
    /// Size of the variant currently holding the slot.
    loaded_mb: T,
    /// Space freed by swapping down to the lowest-precision variant.
    scavenge_mb: T,
    /// Some window of this app intersects the requester's current window.
    overlaps: bool,
    /// When the occupying variant was loaded.
    loaded_at_ms: T,
}

/// Collects eviction candidates: minimalist, not the requester, and not mid
/// load (a slot with a load in flight backs an outcome already recorded, so
/// it cannot be revoked).
fn eviction_candidates<T: Scalar>(ctx: &PolicyContext<'_, T>) -> Vec<Candidate<T>> {
    let (maximalist, minimalist) = partition_sets(ctx);
    let _ = maximalist;
    let window_hi = ctx.now_ms + ctx.delta_ms;
    minimalist
        .into_iter()
        .filter(|app| app != ctx.requester)
        .filter_map(|app| {
            let entry = ctx.memory.entry(&app)?;
            if entry.is_loading() {
                return None;
            }
            let lowest = ctx.zoo_index.get(&app)?.lowest();
            let overlaps = ctx
                .windows
                .iter()
                .any(|w| w.app_id == app && w.overlaps(ctx.now_ms, window_hi));
            Some(Candidate {
                app_id: app,
                loaded_mb: entry.reserved.size_mb,
                scavenge_mb: entry.reserved.size_mb - lowest.size_mb,
                overlaps,
                loaded_at_ms: entry.loaded_at_ms,
            })
        })
        .collect()
}

/// Space available to the requester before evicting anyone: free memory
/// plus its own slot, which an in-place swap reclaims.
fn base_available<T: Scalar>(ctx: &PolicyContext<'_, T>) -> T {
    let own = ctx
        .memory
        .entry(ctx.requester)
        .map(|e| e.reserved.size_mb)
        .unwrap_or_else(T::zero);
    ctx.memory.free_mb() + own
}

fn finish_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    evictions: Vec<(AppId, EvictionAction)>,
    freed_by_evictions: T,
    variant: &ModelVariant<T>,
) -> EvictionPlan<T> {
    let own = ctx
        .memory
        .entry(ctx.requester)
        .map(|e| e.reserved.size_mb)
        .unwrap_or_else(T::zero);
    EvictionPlan {
        evictions,
        load_variant: variant.clone(),
        freed_mb: freed_by_evictions + own,
    }
}

fn requester_zoo<'a, T: Scalar>(
    ctx: &PolicyContext<'a, T>,
    desired_index: usize,
) -> Result<&'a ApplicationSpec<T>, PolicyError> {
    let app = ctx
        .zoo_index
        .get(ctx.requester)
        .unwrap_or_else(|| panic!("requester {} missing from zoo index", ctx.requester));
    if desired_index >= app.zoo.len() {
        return Err(PolicyError::VariantOutOfBounds {
            app_id: ctx.requester.clone(),
            index: desired_index,
        });
    }
    Ok(app)
}

/// Largest-first eviction: unload the biggest minimalist models until the
/// desired variant fits, stepping down the requester's zoo when the whole
/// minimalist set is not enough.
pub fn lfe_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    desired_index: usize,
) -> Result<EvictionPlan<T>, PolicyError> {
    let app = requester_zoo(ctx, desired_index)?;
    let mut candidates = eviction_candidates(ctx);
    candidates.sort_by(|a, b| {
        b.loaded_mb
            .partial_cmp(&a.loaded_mb)
            .expect("sizes are finite")
            .then_with(|| a.app_id.cmp(&b.app_id))
    });

    for variant in &app.zoo[desired_index..] {
        let mut available = base_available(ctx);
        let mut evictions = Vec::new();
        let mut freed = T::zero();
        let mut queue = candidates.iter();
        while available < variant.size_mb {
            let Some(victim) = queue.next() else { break };
            available = available + victim.loaded_mb;
            freed = freed + victim.loaded_mb;
            evictions.push((victim.app_id.clone(), EvictionAction::Unload));
        }
        if available >= variant.size_mb {
            return Ok(finish_plan(ctx, evictions, freed, variant));
        }
    }
    Err(PolicyError::InferenceFailure {
        app_id: ctx.requester.clone(),
    })
}

/// Best-fit selection over `(gain, key)` pairs: when one candidate alone
/// covers the need, take the one with the smallest surplus; otherwise take
/// candidates in ascending |gain - need| order until the need is covered.
/// Returns the chosen indices, or None when the group cannot cover the need.
fn best_fit_order<T: Scalar>(need: T, gains: &[(T, &AppId)]) -> Option<Vec<usize>> {
    if need <= T::zero() {
        return Some(Vec::new());
    }
    let sufficient = gains
        .iter()
        .enumerate()
        .filter(|(_, (gain, _))| *gain >= need)
        .min_by(|(_, (ga, aa)), (_, (gb, ab))| {
            (*ga - need)
                .partial_cmp(&(*gb - need))
                .expect("gains are finite")
                .then_with(|| aa.cmp(ab))
        });
    if let Some((idx, _)) = sufficient {
        return Some(vec![idx]);
    }
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| {
        (gains[a].0 - need)
            .abs()
            .partial_cmp(&(gains[b].0 - need).abs())
            .expect("gains are finite")
            .then_with(|| gains[a].1.cmp(gains[b].1))
    });
    let mut chosen = Vec::new();
    let mut covered = T::zero();
    for idx in order {
        if covered >= need {
            break;
        }
        covered = covered + gains[idx].0;
        chosen.push(idx);
    }
    (covered >= need).then_some(chosen)
}

/// Best-fit eviction: evict the minimalist model whose size exceeds the
/// missing amount by the least, falling back to multi-eviction in ascending
/// size-difference order, then to smaller variants of the requester.
pub fn bfe_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    desired_index: usize,
) -> Result<EvictionPlan<T>, PolicyError> {
    let app = requester_zoo(ctx, desired_index)?;
    let candidates = eviction_candidates(ctx);

    for variant in &app.zoo[desired_index..] {
        let need = variant.size_mb - base_available(ctx);
        let gains: Vec<(T, &AppId)> = candidates
            .iter()
            .map(|c| (c.loaded_mb, &c.app_id))
            .collect();
        if let Some(chosen) = best_fit_order(need, &gains) {
            let mut freed = T::zero();
            let evictions = chosen
                .into_iter()
                .map(|idx| {
                    freed = freed + candidates[idx].loaded_mb;
                    (candidates[idx].app_id.clone(), EvictionAction::Unload)
                })
                .collect();
            return Ok(finish_plan(ctx, evictions, freed, variant));
        }
    }
    Err(PolicyError::InferenceFailure {
        app_id: ctx.requester.clone(),
    })
}

/// Warm-start-aware best-fit: like `bfe` on scavengeable space, except that
/// candidates whose windows overlap the requester's current window are only
/// considered after every non-overlapping candidate, and victims are swapped
/// down to their lowest-precision variant so an unpredicted request can
/// still warm-start on them.
pub fn wsbfe_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    desired_index: usize,
) -> Result<EvictionPlan<T>, PolicyError> {
    let app = requester_zoo(ctx, desired_index)?;
    let all: Vec<Candidate<T>> = eviction_candidates(ctx)
        .into_iter()
        .filter(|c| c.scavenge_mb > T::zero())
        .collect();
    let groups: [Vec<&Candidate<T>>; 2] = [
        all.iter().filter(|c| !c.overlaps).collect(),
        all.iter().filter(|c| c.overlaps).collect(),
    ];

    for variant in &app.zoo[desired_index..] {
        let mut need = variant.size_mb - base_available(ctx);
        let mut evictions = Vec::new();
        let mut freed = T::zero();
        for group in &groups {
            if need <= T::zero() {
                break;
            }
            let gains: Vec<(T, &AppId)> =
                group.iter().map(|c| (c.scavenge_mb, &c.app_id)).collect();
            match best_fit_order(need, &gains) {
                Some(chosen) => {
                    for idx in chosen {
                        need = need - group[idx].scavenge_mb;
                        freed = freed + group[idx].scavenge_mb;
                        evictions
                            .push((group[idx].app_id.clone(), EvictionAction::ReplaceWithLowest));
                    }
                }
                None => {
                    // Group alone cannot cover the need; take all of it and
                    // carry the remainder into the next group.
                    for c in group {
                        need = need - c.scavenge_mb;
                        freed = freed + c.scavenge_mb;
                        evictions.push((c.app_id.clone(), EvictionAction::ReplaceWithLowest));
                    }
                }
            }
        }
        if need <= T::zero() {
            return Ok(finish_plan(ctx, evictions, freed, variant));
        }
    }
    Err(PolicyError::InferenceFailure {
        app_id: ctx.requester.clone(),
    })
}

struct ScoredCandidate<T: Scalar> {
    score: T,
    scavenge_mb: T,
    app_id: AppId,
}

impl<T: Scalar> PartialEq for ScoredCandidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl<T: Scalar> Eq for ScoredCandidate<T> {}
impl<T: Scalar> PartialOrd for ScoredCandidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for ScoredCandidate<T> {
    /// Max-heap order: higher score first, ties to the larger scavengeable
    /// amount, then ascending app id.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .partial_cmp(&other.score)
            .expect("scores are finite")
            .then_with(|| {
                self.scavenge_mb
                    .partial_cmp(&other.scavenge_mb)
                    .expect("sizes are finite")
            })
            .then_with(|| other.app_id.cmp(&self.app_id))
    }
}

/// Intelligent warm-start-aware best-fit: restricts candidates to
/// minimalist applications not requested during the last history window and
/// not overlapping the requester's window, then replaces them with their
/// lowest-precision variant in descending fitness-score order until the
/// demand fits.
pub fn iwsbfe_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
    desired_index: usize,
) -> Result<EvictionPlan<T>, PolicyError> {
    let app = requester_zoo(ctx, desired_index)?;

    // Recently requested applications are likely to be requested again.
    let lookback = ctx.now_ms - ctx.history_window_ms;
    let recently_requested: BTreeSet<&AppId> = ctx
        .history
        .iter()
        .filter(|h| h.time_ms > lookback)
        .map(|h| &h.app_id)
        .collect();

    let eligible: Vec<Candidate<T>> = eviction_candidates(ctx)
        .into_iter()
        .filter(|c| c.scavenge_mb > T::zero())
        .filter(|c| !recently_requested.contains(&c.app_id))
        .filter(|c| !c.overlaps)
        .collect();
    let candidate_ids: BTreeSet<AppId> = eligible.iter().map(|c| c.app_id.clone()).collect();

    for variant in &app.zoo[desired_index..] {
        let mut available = base_available(ctx);
        let mut heap: BinaryHeap<ScoredCandidate<T>> = eligible
            .iter()
            .map(|c| ScoredCandidate {
                score: fitness_score(ctx, &c.app_id, &candidate_ids),
                scavenge_mb: c.scavenge_mb,
                app_id: c.app_id.clone(),
            })
            .collect();
        let mut evictions = Vec::new();
        let mut freed = T::zero();
        while variant.size_mb > available {
            let Some(top) = heap.pop() else { break };
            available = available + top.scavenge_mb;
            freed = freed + top.scavenge_mb;
            evictions.push((top.app_id, EvictionAction::ReplaceWithLowest));
        }
        if variant.size_mb <= available {
            return Ok(finish_plan(ctx, evictions, freed, variant));
        }
    }
    Err(PolicyError::InferenceFailure {
        app_id: ctx.requester.clone(),
    })
}

/// The baseline without model management: loads the highest-precision
/// variant on demand, making room by unloading the oldest loads first.
/// No request windows, no replacement, no fallback to smaller variants.
pub fn fifo_baseline_plan<T: Scalar>(
    ctx: &PolicyContext<'_, T>,
) -> Result<EvictionPlan<T>, PolicyError> {
    let app = requester_zoo(ctx, 0)?;
    let variant = app.highest();
    let mut candidates = eviction_candidates(ctx);
    candidates.sort_by(|a, b| {
        a.loaded_at_ms
            .partial_cmp(&b.loaded_at_ms)
            .expect("timestamps are finite")
            .then_with(|| a.app_id.cmp(&b.app_id))
    });
    let mut available = base_available(ctx);
    let mut evictions = Vec::new();
    let mut freed = T::zero();
    let mut queue = candidates.iter();
    while available < variant.size_mb {
        let Some(victim) = queue.next() else { break };
        available = available + victim.loaded_mb;
        freed = freed + victim.loaded_mb;
        evictions.push((victim.app_id.clone(), EvictionAction::Unload));
    }
    if available >= variant.size_mb {
        Ok(finish_plan(ctx, evictions, freed, variant))
    } else {
        Err(PolicyError::InferenceFailure {
            app_id: ctx.requester.clone(),
        })
    }
}

/// Plans a load under the given policy.
pub fn plan<T: Scalar>(
    kind: PolicyKind,
    ctx: &PolicyContext<'_, T>,
    desired_index: usize,
) -> Result<EvictionPlan<T>, PolicyError> {
    match kind {
        PolicyKind::NoPolicy => fifo_baseline_plan(ctx),
        PolicyKind::Lfe => lfe_plan(ctx, desired_index),
        PolicyKind::Bfe => bfe_plan(ctx, desired_index),
        PolicyKind::WsBfe => wsbfe_plan(ctx, desired_index),
        PolicyKind::IwsBfe => iwsbfe_plan(ctx, desired_index),
    }
}
