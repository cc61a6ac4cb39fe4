//! Workload synthesis: actual and predicted request traces with a controlled
//! deviation between them, plus the derived scheduling constants.
//!
//! The deviation knob `d` drives two perturbations at once: arrival times in
//! the predicted trace are jittered by zero-mean Gaussian noise with standard
//! deviation `d` times the application's mean inter-arrival time, and a
//! uniformly chosen fraction `d/2` of requests is dropped from the predicted
//! trace entirely (those arrivals stay unpredicted). The divergence actually
//! realized between the two traces is measured and reported, not targeted.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AppId, InferenceRequest, ScenarioConfig};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("not a distribution: {reason}")]
    NotADistribution { reason: String },
    #[error("divergence undefined: q is zero at index {index} where p is positive")]
    DivergenceUndefined { index: usize },
    #[error("empty profile: {reason}")]
    EmptyProfile { reason: String },
    #[error("malformed trace csv: {reason}")]
    MalformedCsv { reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceLabel {
    Actual,
    Predicted,
}

impl TraceLabel {
    fn as_str(&self) -> &'static str {
        match self {
            TraceLabel::Actual => "actual",
            TraceLabel::Predicted => "predicted",
        }
    }
}

/// A time-sorted sequence of requests. Sorting is strict on the pair
/// (time, app_id): ties in time are broken by app id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkloadTrace<T: Scalar> {
    pub label: TraceLabel,
    pub requests: Vec<InferenceRequest<T>>,
}

impl<T: Scalar> WorkloadTrace<T> {
    pub fn new(label: TraceLabel, mut requests: Vec<InferenceRequest<T>>) -> Self {
        sort_requests(&mut requests);
        debug_assert!(is_strictly_sorted(&requests), "duplicate (time, app) pair");
        WorkloadTrace { label, requests }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Consecutive gaps of the pooled, time-sorted trace.
    pub fn inter_arrivals(&self) -> Vec<T> {
        self.requests
            .windows(2)
            .map(|w| w[1].time_ms - w[0].time_ms)
            .collect()
    }

    /// Per-application mean inter-arrival times. Applications with fewer
    /// than two requests fall back to the pooled mean (or zero when the
    /// whole trace has fewer than two requests).
    pub fn per_app_mean_inter_arrival(&self) -> BTreeMap<AppId, T> {
        let pooled = mean(&self.inter_arrivals()).unwrap_or_else(T::zero);
        let mut times: BTreeMap<AppId, Vec<T>> = BTreeMap::new();
        for r in &self.requests {
            times.entry(r.app_id.clone()).or_default().push(r.time_ms);
        }
        times
            .into_iter()
            .map(|(app, ts)| {
                let gaps: Vec<T> = ts.windows(2).map(|w| w[1] - w[0]).collect();
                (app, mean(&gaps).unwrap_or(pooled))
            })
            .collect()
    }
}

fn sort_requests<T: Scalar>(requests: &mut [InferenceRequest<T>]) {
    requests.sort_by(|a, b| {
        a.time_ms
            .partial_cmp(&b.time_ms)
            .expect("request times are finite")
            .then_with(|| a.app_id.cmp(&b.app_id))
    });
}

fn is_strictly_sorted<T: Scalar>(requests: &[InferenceRequest<T>]) -> bool {
    requests
        .windows(2)
        .all(|w| (w[0].time_ms, &w[0].app_id) < (w[1].time_ms, &w[1].app_id))
}

fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    Some(sum / T::from_usize_lossy(values.len()))
}

fn population_std<T: Scalar>(values: &[T], mean: T) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let var = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
        / T::from_usize_lossy(values.len());
    var.sqrt()
}

/// An actual trace and the predicted trace derived from it. `links[i]` holds
/// the index into `actual.requests` that predicted request `i` was derived
/// from, or `None` for a phantom prediction. Actual requests that no
/// prediction links back to are the unpredicted requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkloadPair<T: Scalar> {
    pub actual: WorkloadTrace<T>,
    pub predicted: WorkloadTrace<T>,
    pub links: Vec<Option<usize>>,
    pub target_deviation: T,
    pub measured_kl_nats: T,
}

impl<T: Scalar> WorkloadPair<T> {
    /// Absolute prediction residuals |actual - predicted| over linked pairs.
    pub fn residuals(&self) -> Vec<T> {
        self.links
            .iter()
            .enumerate()
            .filter_map(|(pred_idx, link)| {
                link.map(|act_idx| {
                    (self.actual.requests[act_idx].time_ms
                        - self.predicted.requests[pred_idx].time_ms)
                        .abs()
                })
            })
            .collect()
    }

    /// Flags actual requests that have no linked prediction.
    pub fn unpredicted_flags(&self) -> Vec<bool> {
        let mut flags = vec![true; self.actual.len()];
        for link in self.links.iter().flatten() {
            flags[*link] = false;
        }
        flags
    }

    pub fn unpredicted_count(&self) -> usize {
        self.unpredicted_flags().iter().filter(|f| **f).count()
    }

    /// Predicted request times of one application, sorted ascending.
    pub fn predicted_times_for(&self, app_id: &AppId) -> Vec<T> {
        self.predicted
            .requests
            .iter()
            .filter(|r| &r.app_id == app_id)
            .map(|r| r.time_ms)
            .collect()
    }
}

/// Pooled arrival rate (requests per ms) targeting `mean_concurrency`
/// expected overlapping windows, given a window width estimate.
fn pooled_rate_for_width<T: Scalar>(cfg: &ScenarioConfig<T>, window_width_ms: T) -> T {
    let floor = T::from_f64_lossy(1e-9);
    (cfg.mean_concurrency / window_width_ms).max(floor)
}

/// Provisional pooled rate: solves concurrency = rate * (2 * delta0 + mean
/// load time) with delta0 set to a tenth of the pooled mean inter-arrival,
/// which collapses to rate = (concurrency - 0.2) / mean load time.
fn provisional_pooled_rate<T: Scalar>(cfg: &ScenarioConfig<T>) -> T {
    let theta = cfg.mean_load_time_ms();
    let excess = (cfg.mean_concurrency - T::from_f64_lossy(0.2)).max(T::from_f64_lossy(0.05));
    excess / theta
}

/// Generates the actual trace at the provisional pooled arrival rate.
/// Every application receives exactly `requests_per_app` requests whose
/// inter-arrival times are i.i.d. exponential.
pub fn generate_actual<T: Scalar>(cfg: &ScenarioConfig<T>, rng_seed: u64) -> WorkloadTrace<T> {
    generate_actual_with_rate(cfg, provisional_pooled_rate(cfg), rng_seed)
}

/// Generates the actual trace with an explicit pooled rate, split evenly
/// across applications.
pub fn generate_actual_with_rate<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    pooled_rate_per_ms: T,
    rng_seed: u64,
) -> WorkloadTrace<T> {
    let n_apps = cfg.applications.len();
    let per_app_rate = pooled_rate_per_ms.as_f64() / n_apps as f64;
    let exp = Exp::new(per_app_rate).expect("positive arrival rate");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut requests = Vec::with_capacity(n_apps * cfg.requests_per_app as usize);
    let mut apps: Vec<&AppId> = cfg.applications.iter().map(|a| &a.app_id).collect();
    apps.sort();
    for app_id in apps {
        let mut t = 0.0f64;
        for _ in 0..cfg.requests_per_app {
            t += exp.sample(&mut rng);
            requests.push(InferenceRequest {
                app_id: app_id.clone(),
                time_ms: T::from_f64_lossy(t),
            });
        }
    }
    dedupe_nudge(&mut requests);
    WorkloadTrace::new(TraceLabel::Actual, requests)
}

/// Breaks exact (time, app) collisions by nudging the later entry up one ulp.
/// Collisions are practically impossible with continuous draws but would
/// violate the strict trace ordering.
fn dedupe_nudge<T: Scalar>(requests: &mut Vec<InferenceRequest<T>>) {
    sort_requests(requests);
    for i in 1..requests.len() {
        if requests[i].time_ms == requests[i - 1].time_ms
            && requests[i].app_id == requests[i - 1].app_id
        {
            let bumped = requests[i].time_ms.as_f64();
            requests[i].time_ms = T::from_f64_lossy(f64::from_bits(bumped.to_bits() + 1));
        }
    }
    sort_requests(requests);
}

/// Derives the predicted trace from the actual one.
pub fn derive_predicted<T: Scalar>(
    actual: &WorkloadTrace<T>,
    deviation: T,
    rng_seed: u64,
) -> WorkloadPair<T> {
    derive_predicted_opts(actual, deviation, rng_seed, None)
}

/// As [`derive_predicted`], optionally adding phantom predictions (requests
/// predicted but never issued) placed uniformly over `[0, horizon_ms]`.
pub fn derive_predicted_opts<T: Scalar>(
    actual: &WorkloadTrace<T>,
    deviation: T,
    rng_seed: u64,
    phantom_horizon_ms: Option<T>,
) -> WorkloadPair<T> {
    assert!(
        deviation >= T::zero() && deviation <= T::one(),
        "deviation must be in [0, 1]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let per_app_ia = actual.per_app_mean_inter_arrival();

    // Jitter every arrival by app-scaled Gaussian noise; clamp at the origin.
    let mut predicted: Vec<(InferenceRequest<T>, Option<usize>)> = actual
        .requests
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let sigma = (deviation * per_app_ia[&r.app_id]).as_f64();
            let noise = Normal::new(0.0, sigma)
                .expect("non-negative jitter scale")
                .sample(&mut rng);
            let time = T::from_f64_lossy((r.time_ms.as_f64() + noise).max(0.0));
            (
                InferenceRequest {
                    app_id: r.app_id.clone(),
                    time_ms: time,
                },
                Some(idx),
            )
        })
        .collect();

    // Drop a deviation/2 fraction of predictions; those arrivals stay
    // unpredicted.
    let removed = ((deviation.as_f64() / 2.0) * actual.len() as f64).floor() as usize;
    let mut drop_idx = rand::seq::index::sample(&mut rng, actual.len(), removed).into_vec();
    drop_idx.sort_unstable_by(|a, b| b.cmp(a));
    for idx in drop_idx {
        predicted.remove(idx);
    }

    if let Some(horizon) = phantom_horizon_ms {
        let phantoms = ((deviation.as_f64() / 2.0) * actual.len() as f64).floor() as usize;
        let apps: Vec<AppId> = per_app_ia.keys().cloned().collect();
        if !apps.is_empty() {
            for _ in 0..phantoms {
                let app = apps[rng.gen_range(0..apps.len())].clone();
                let time = T::from_f64_lossy(rng.gen_range(0.0..horizon.as_f64()));
                predicted.push((InferenceRequest { app_id: app, time_ms: time }, None));
            }
        }
    }

    predicted.sort_by(|a, b| {
        a.0.time_ms
            .partial_cmp(&b.0.time_ms)
            .expect("times are finite")
            .then_with(|| a.0.app_id.cmp(&b.0.app_id))
    });
    // Nudge exact collisions so the trace stays strictly ordered.
    for i in 1..predicted.len() {
        if predicted[i].0.time_ms == predicted[i - 1].0.time_ms
            && predicted[i].0.app_id == predicted[i - 1].0.app_id
        {
            let bumped = predicted[i].0.time_ms.as_f64();
            predicted[i].0.time_ms = T::from_f64_lossy(f64::from_bits(bumped.to_bits() + 1));
        }
    }

    let (requests, links): (Vec<_>, Vec<_>) = predicted.into_iter().unzip();
    let predicted = WorkloadTrace {
        label: TraceLabel::Predicted,
        requests,
    };
    let measured_kl_nats = inter_arrival_kl(actual, &predicted);
    WorkloadPair {
        actual: actual.clone(),
        predicted,
        links,
        target_deviation: deviation,
        measured_kl_nats,
    }
}

const KL_BINS: usize = 20;
const KL_RANGE_SCALE: f64 = 3.0;

/// KL divergence between the binned inter-arrival distributions of the two
/// traces. Bins are equal-width over [0, 3x the actual pooled mean
/// inter-arrival], with overflow clamped into the last bin and Laplace
/// smoothing (pseudo-count 1) keeping every bin positive.
pub fn inter_arrival_kl<T: Scalar>(actual: &WorkloadTrace<T>, predicted: &WorkloadTrace<T>) -> T {
    let actual_gaps = actual.inter_arrivals();
    let predicted_gaps = predicted.inter_arrivals();
    let Some(mean_gap) = mean(&actual_gaps) else {
        return T::zero();
    };
    if mean_gap <= T::zero() {
        return T::zero();
    }
    let hi = mean_gap.as_f64() * KL_RANGE_SCALE;
    let p = smoothed_histogram(&actual_gaps, hi);
    let q = smoothed_histogram(&predicted_gaps, hi);
    T::from_f64_lossy(
        kl_divergence(&p, &q).expect("smoothed histograms are valid distributions"),
    )
}

fn smoothed_histogram<T: Scalar>(values: &[T], hi: f64) -> Vec<f64> {
    let mut counts = vec![1.0f64; KL_BINS]; // Laplace pseudo-counts
    for v in values {
        let x = v.as_f64();
        let bin = if hi > 0.0 {
            (((x / hi) * KL_BINS as f64).floor() as usize).min(KL_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

/// Kullback-Leibler divergence in nats between two discrete distributions
/// over the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, WorkloadError> {
    if p.len() != q.len() {
        return Err(WorkloadError::NotADistribution {
            reason: format!("support sizes differ ({} vs {})", p.len(), q.len()),
        });
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(WorkloadError::NotADistribution {
                reason: format!("{name} contains a negative or non-finite mass"),
            });
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(WorkloadError::NotADistribution {
                reason: format!("{name} sums to {sum}, expected 1"),
            });
        }
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(WorkloadError::DivergenceUndefined { index });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Mean absolute prediction residual.
pub fn compute_delta<T: Scalar>(residuals: &[T]) -> Result<T, WorkloadError> {
    mean(residuals).ok_or_else(|| WorkloadError::EmptyProfile {
        reason: "no linked requests to profile".into(),
    })
}

/// Window half-width for the sweep: mean residual plus `alpha` population
/// standard deviations.
pub fn compute_delta_scaled<T: Scalar>(residuals: &[T], alpha: T) -> Result<T, WorkloadError> {
    let d = compute_delta(residuals)?;
    Ok(d + alpha * population_std(residuals, d))
}

/// History window: mean inter-arrival time of the pooled actual trace.
pub fn compute_history_window<T: Scalar>(actual: &WorkloadTrace<T>) -> Result<T, WorkloadError> {
    if actual.len() < 2 {
        return Err(WorkloadError::EmptyProfile {
            reason: "history window needs at least two requests".into(),
        });
    }
    Ok(mean(&actual.inter_arrivals()).expect("two or more requests"))
}

/// A fully calibrated workload: the trace pair plus the scheduling constants
/// derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BuiltWorkload<T: Scalar> {
    pub pair: WorkloadPair<T>,
    /// Operative window half-width (mean residual + alpha * std).
    pub delta_ms: T,
    pub history_window_ms: T,
}

// Seed streams for the independent random draws of one scenario seed.
const STREAM_ACTUAL_PROBE: u64 = 1;
const STREAM_PREDICT_PROBE: u64 = 2;
const STREAM_ACTUAL_FINAL: u64 = 3;
const STREAM_PREDICT_FINAL: u64 = 4;

/// Deviation at which the arrival rate is calibrated. Pinning the profiling
/// deviation keeps the actual workload statistically identical across a
/// deviation sweep, so the sweep varies prediction quality and nothing
/// else; the scenario's own deviation still shapes its windows.
const RATE_CALIBRATION_DEVIATION: f64 = 0.3;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 over (seed, stream) keeps the per-purpose streams decorrelated.
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the workload for a scenario: generates a probe trace at the
/// provisional rate, profiles prediction residuals on it, re-solves the
/// pooled rate once so the expected number of overlapping windows matches
/// the configured concurrency, then regenerates and derives the final pair.
///
/// Profiling runs at a fixed reference deviation and the plain mean
/// residual, so neither the scenario's deviation nor `alpha` re-scales the
/// workload itself. Deviation and alpha sweeps therefore compare policies
/// at a fixed arrival intensity, with only windows and predictions varying.
pub fn build_workload<T: Scalar>(cfg: &ScenarioConfig<T>) -> BuiltWorkload<T> {
    let theta = cfg.mean_load_time_ms();
    let phantom = cfg.phantom_predictions.then_some(cfg.horizon_ms);

    let probe_actual = generate_actual(cfg, stream_seed(cfg.seed, STREAM_ACTUAL_PROBE));
    let probe_pair = derive_predicted_opts(
        &probe_actual,
        T::from_f64_lossy(RATE_CALIBRATION_DEVIATION),
        stream_seed(cfg.seed, STREAM_PREDICT_PROBE),
        None,
    );
    let probe_delta = compute_delta(&probe_pair.residuals()).unwrap_or_else(|_| T::zero());

    let two = T::from_f64_lossy(2.0);
    let rate = pooled_rate_for_width(cfg, two * probe_delta + theta);
    let actual = generate_actual_with_rate(cfg, rate, stream_seed(cfg.seed, STREAM_ACTUAL_FINAL));
    let pair = derive_predicted_opts(
        &actual,
        cfg.deviation,
        stream_seed(cfg.seed, STREAM_PREDICT_FINAL),
        phantom,
    );

    let residuals = pair.residuals();
    let delta_ms = if residuals.is_empty() {
        T::zero()
    } else {
        compute_delta_scaled(&residuals, cfg.alpha).expect("non-empty residuals")
    };
    let history_window_ms = compute_history_window(&pair.actual).unwrap_or_else(|_| T::zero());
    BuiltWorkload {
        pair,
        delta_ms,
        history_window_ms,
    }
}

const TRACE_CSV_HEADER: [&str; 4] = ["app_id", "time_ms", "label", "link_id"];

/// Writes a trace pair as CSV with header `app_id,time_ms,label,link_id`.
/// Actual rows carry their own index as `link_id`; predicted rows carry the
/// index of the actual request they were derived from, or an empty field for
/// phantoms. Pair metadata rides in leading `#` comment lines.
pub fn write_pair_csv<T: Scalar, W: Write>(
    pair: &WorkloadPair<T>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "# target_deviation={}", pair.target_deviation)?;
    writeln!(out, "# measured_kl_nats={}", pair.measured_kl_nats)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    for (idx, r) in pair.actual.requests.iter().enumerate() {
        w.write_record([
            r.app_id.as_str(),
            &format!("{}", r.time_ms),
            TraceLabel::Actual.as_str(),
            &idx.to_string(),
        ])?;
    }
    for (idx, r) in pair.predicted.requests.iter().enumerate() {
        let link = pair.links[idx].map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            r.app_id.as_str(),
            &format!("{}", r.time_ms),
            TraceLabel::Predicted.as_str(),
            &link,
        ])?;
    }
    w.flush()
}

/// Reads a trace pair written by [`write_pair_csv`].
pub fn read_pair_csv<T: Scalar, R: Read>(input: R) -> Result<WorkloadPair<T>, WorkloadError> {
    let malformed = |reason: String| WorkloadError::MalformedCsv { reason };
    let mut target_deviation = T::zero();
    let mut measured_kl = T::zero();

    let mut body = String::new();
    let mut reader = std::io::BufReader::new(input);
    reader
        .read_to_string(&mut body)
        .map_err(|e| malformed(e.to_string()))?;
    let mut data_lines = Vec::new();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("target_deviation=") {
                target_deviation = T::from_f64_lossy(
                    v.parse::<f64>().map_err(|e| malformed(e.to_string()))?,
                );
            } else if let Some(v) = rest.strip_prefix("measured_kl_nats=") {
                measured_kl = T::from_f64_lossy(
                    v.parse::<f64>().map_err(|e| malformed(e.to_string()))?,
                );
            }
        } else {
            data_lines.push(line);
        }
    }

    let data = data_lines.join("\n").into_bytes();
    let mut rdr = csv::Reader::from_reader(data.as_slice());
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let app_id = AppId::new(&record[0]);
        let time_ms =
            T::from_f64_lossy(record[1].parse::<f64>().map_err(|e| malformed(e.to_string()))?);
        let request = InferenceRequest { app_id, time_ms };
        match &record[2] {
            "actual" => actual.push(request),
            "predicted" => {
                let link = if record[3].is_empty() {
                    None
                } else {
                    Some(record[3].parse::<usize>().map_err(|e| malformed(e.to_string()))?)
                };
                predicted.push((request, link));
            }
            other => return Err(malformed(format!("unknown label {other:?}"))),
        }
    }
    let (requests, links): (Vec<_>, Vec<_>) = predicted.into_iter().unzip();
    Ok(WorkloadPair {
        actual: WorkloadTrace {
            label: TraceLabel::Actual,
            requests: actual,
        },
        predicted: WorkloadTrace {
            label: TraceLabel::Predicted,
            requests,
        },
        links,
        target_deviation,
        measured_kl_nats: measured_kl,
    })
}
