//! Evaluation metrics over run logs: satisfaction rate, cold-start share,
//! normalized accuracy, the robustness score, Pareto dominance, fairness
//! dispersion, and confidence intervals across repeated runs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AppId, OutcomeKind, ScenarioConfig};
use crate::engine::RunLog;
use crate::scalar::Scalar;
use crate::workload::WorkloadPair;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty log")]
    EmptyLog,
    #[error("no requests to score")]
    NoRequests,
    #[error("insufficient repetitions: need at least 2, got {got}")]
    InsufficientRepetitions { got: usize },
    #[error("fairness needs at least 2 applications, got {got}")]
    TooFewApplications { got: usize },
    #[error("empty accuracy pool")]
    EmptyAccuracyPool,
}

/// Per-application tallies for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PerAppStats<T: Scalar> {
    pub requests: u64,
    pub warm: u64,
    pub cold: u64,
    pub failures: u64,
    /// Mean accuracy over served inferences; absent when every request of
    /// the app failed.
    pub mean_accuracy_pct: Option<T>,
    /// Fraction of the app's actual requests falling inside one of its
    /// predicted windows [t - delta, t + delta].
    pub prediction_accuracy: T,
}

/// Run-level aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OverallStats<T: Scalar> {
    pub satisfaction_rate_pct: T,
    pub cold_start_pct: T,
    pub failure_pct: T,
    /// Mean raw accuracy over served inferences.
    pub mean_accuracy_pct: Option<T>,
    /// Served accuracies min-max normalized against the scenario's zoo
    /// accuracy range, then averaged.
    pub normalized_accuracy: T,
    /// Mean over applications of warm ratio times prediction accuracy.
    pub robustness: T,
}

/// Everything the evaluation derives from one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SimulationReport<T: Scalar> {
    pub per_app: BTreeMap<AppId, PerAppStats<T>>,
    pub overall: OverallStats<T>,
}

/// Percentage of requests served warm.
pub fn satisfaction_rate<T: Scalar>(log: &RunLog<T>) -> Result<T, MetricsError> {
    share(log, OutcomeKind::WarmStart)
}

/// Percentage of requests served cold.
pub fn cold_start_pct<T: Scalar>(log: &RunLog<T>) -> Result<T, MetricsError> {
    share(log, OutcomeKind::ColdStart)
}

/// Percentage of failed requests.
pub fn failure_pct<T: Scalar>(log: &RunLog<T>) -> Result<T, MetricsError> {
    share(log, OutcomeKind::Failure)
}

fn share<T: Scalar>(log: &RunLog<T>, kind: OutcomeKind) -> Result<T, MetricsError> {
    if log.outcomes.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let n = log.outcomes.iter().filter(|o| o.kind == kind).count();
    Ok(T::hundred() * T::from_usize_lossy(n) / T::from_usize_lossy(log.outcomes.len()))
}

/// Per-application cold-start percentages.
pub fn cold_start_pct_by_app<T: Scalar>(
    log: &RunLog<T>,
) -> Result<BTreeMap<AppId, T>, MetricsError> {
    if log.outcomes.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut totals: BTreeMap<AppId, (u64, u64)> = BTreeMap::new();
    for o in &log.outcomes {
        let entry = totals.entry(o.request.app_id.clone()).or_default();
        entry.0 += 1;
        if o.kind == OutcomeKind::ColdStart {
            entry.1 += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(app, (total, cold))| {
            (
                app,
                T::hundred() * T::from_usize_lossy(cold as usize)
                    / T::from_usize_lossy(total as usize),
            )
        })
        .collect())
}

/// Min-max normalizes `value` against a pool range. A degenerate pool (all
/// values equal) maps to 1.0 by convention.
pub fn minmax_normalize<T: Scalar>(value: T, pool_min: T, pool_max: T) -> T {
    if pool_max <= pool_min {
        T::one()
    } else {
        (value - pool_min) / (pool_max - pool_min)
    }
}

/// Mean min-max normalized accuracy of the target log's served inferences,
/// normalized over the accuracies pooled from all given logs.
pub fn normalized_accuracy<T: Scalar>(
    target: &RunLog<T>,
    pool: &[&RunLog<T>],
) -> Result<T, MetricsError> {
    let mut pool_min = T::infinity();
    let mut pool_max = T::neg_infinity();
    let mut any = false;
    for log in pool {
        for o in &log.outcomes {
            if let Some(acc) = o.accuracy_pct {
                pool_min = pool_min.min(acc);
                pool_max = pool_max.max(acc);
                any = true;
            }
        }
    }
    if !any {
        return Err(MetricsError::EmptyAccuracyPool);
    }
    let served: Vec<T> = target
        .outcomes
        .iter()
        .filter_map(|o| o.accuracy_pct)
        .collect();
    if served.is_empty() {
        return Err(MetricsError::EmptyAccuracyPool);
    }
    let sum = served
        .iter()
        .fold(T::zero(), |acc, &a| acc + minmax_normalize(a, pool_min, pool_max));
    Ok(sum / T::from_usize_lossy(served.len()))
}

/// Robustness: mean over applications of (warm / requests) weighted by the
/// application's prediction accuracy. Applications with no requests are
/// excluded from the mean.
pub fn robustness<T: Scalar>(report: &SimulationReport<T>) -> Result<T, MetricsError> {
    let active: Vec<&PerAppStats<T>> =
        report.per_app.values().filter(|s| s.requests > 0).collect();
    if active.is_empty() {
        return Err(MetricsError::NoRequests);
    }
    let sum = active.iter().fold(T::zero(), |acc, s| {
        let warm_ratio = T::from_usize_lossy(s.warm as usize)
            / T::from_usize_lossy(s.requests as usize);
        acc + warm_ratio * s.prediction_accuracy
    });
    Ok(sum / T::from_usize_lossy(active.len()))
}

/// Indices of the non-dominated points in a minimize-both objective space.
/// Point p dominates q when p <= q in both coordinates and p < q in at
/// least one.
pub fn pareto_front<T: Scalar>(points: &[(T, T)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .partial_cmp(&points[b].0)
            .expect("coordinates are finite")
            .then_with(|| points[a].1.partial_cmp(&points[b].1).expect("finite"))
    });
    let mut front = Vec::new();
    // Minimum y among points with strictly smaller x than the current group.
    let mut best_y = T::infinity();
    let mut i = 0;
    while i < order.len() {
        let x = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            j += 1;
        }
        let group_min_y = points[order[i]].1; // sorted by y within the group
        for &idx in &order[i..j] {
            let y = points[idx].1;
            if y > group_min_y {
                continue; // dominated by a same-x point with lower y
            }
            if best_y <= y {
                continue; // dominated by a strictly-smaller-x point
            }
            front.push(idx);
        }
        best_y = best_y.min(group_min_y);
        i = j;
    }
    front.sort_unstable();
    front
}

/// Sample mean and two-sided 95% confidence half-width using the Student t
/// critical value with n - 1 degrees of freedom.
pub fn mean_ci95<T: Scalar>(values: &[T]) -> Result<(T, T), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::InsufficientRepetitions { got: values.len() });
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = values
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / (n - T::one());
    let sd = var.sqrt();
    let t = T::from_f64_lossy(t_critical_975(values.len() - 1));
    Ok((mean, t * sd / n.sqrt()))
}

/// Two-sided 95% Student t critical values (0.975 quantile) for 1..=120
/// degrees of freedom; the normal quantile serves beyond the table.
pub fn t_critical_975(df: usize) -> f64 {
    const TABLE: [f64; 120] = [
        12.706204736, 4.302652730, 3.182446305, 2.776445105, 2.570581836,
        2.446911851, 2.364624252, 2.306004135, 2.262157163, 2.228138852,
        2.200985160, 2.178812830, 2.160368656, 2.144786688, 2.131449546,
        2.119905299, 2.109815578, 2.100922040, 2.093024054, 2.085963447,
        2.079613845, 2.073873068, 2.068657610, 2.063898562, 2.059538553,
        2.055529439, 2.051830516, 2.048407142, 2.045229642, 2.042272456,
        2.039513446, 2.036933343, 2.034515297, 2.032244509, 2.030107928,
        2.028094001, 2.026192463, 2.024394164, 2.022690920, 2.021075390,
        2.019540970, 2.018081703, 2.016692199, 2.015367574, 2.014103389,
        2.012895599, 2.011740514, 2.010634758, 2.009575237, 2.008559112,
        2.007583770, 2.006646805, 2.005745995, 2.004879288, 2.004044783,
        2.003240719, 2.002465459, 2.001717484, 2.000995378, 2.000297822,
        1.999623585, 1.998971517, 1.998340543, 1.997729654, 1.997137908,
        1.996564419, 1.996008354, 1.995468931, 1.994945415, 1.994437112,
        1.993943368, 1.993463567, 1.992997126, 1.992543495, 1.992102154,
        1.991672610, 1.991254395, 1.990847069, 1.990450210, 1.990063421,
        1.989686323, 1.989318557, 1.988959780, 1.988609667, 1.988267907,
        1.987934206, 1.987608282, 1.987289865, 1.986978700, 1.986674541,
        1.986377154, 1.986086317, 1.985801814, 1.985523442, 1.985251004,
        1.984984312, 1.984723186, 1.984467454, 1.984216952, 1.983971518,
        1.983731003, 1.983495258, 1.983264145, 1.983037526, 1.982815274,
        1.982597262, 1.982383370, 1.982173483, 1.981967490, 1.981765282,
        1.981566757, 1.981371815, 1.981180359, 1.980992298, 1.980807541,
        1.980626002, 1.980447599, 1.980272249, 1.980099876, 1.979930405,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.959963985
    }
}

/// Per-metric mean and 95% confidence half-width over repeated runs of the
/// same configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AggregateReport<T: Scalar> {
    pub repetitions: usize,
    /// metric name -> (mean, ci95 half-width)
    pub metrics: BTreeMap<String, (T, T)>,
}

/// Metric names and values of a report, in the order the tidy outputs use.
pub fn metric_values<T: Scalar>(report: &SimulationReport<T>) -> Vec<(&'static str, T)> {
    let mut rows = vec![
        ("satisfaction_rate_pct", report.overall.satisfaction_rate_pct),
        ("cold_start_pct", report.overall.cold_start_pct),
        ("failure_pct", report.overall.failure_pct),
        ("normalized_accuracy", report.overall.normalized_accuracy),
        ("robustness", report.overall.robustness),
    ];
    if let Some(acc) = report.overall.mean_accuracy_pct {
        rows.push(("mean_accuracy_pct", acc));
    }
    rows
}

/// Aggregates repeated reports into per-metric means with 95% confidence
/// intervals. Order of the reports does not matter.
pub fn aggregate<T: Scalar>(
    reports: &[SimulationReport<T>],
) -> Result<AggregateReport<T>, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::InsufficientRepetitions {
            got: reports.len(),
        });
    }
    let mut columns: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for report in reports {
        for (name, value) in metric_values(report) {
            columns.entry(name.to_string()).or_default().push(value);
        }
    }
    let mut metrics = BTreeMap::new();
    for (name, values) in columns {
        if values.len() == reports.len() {
            metrics.insert(name, mean_ci95(&values)?);
        }
    }
    Ok(AggregateReport {
        repetitions: reports.len(),
        metrics,
    })
}

/// Per-application cold-start and accuracy table with a dispersion
/// statistic (coefficient of variation, population std over mean) per
/// column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FairnessReport<T: Scalar> {
    pub rows: Vec<(AppId, T, Option<T>)>,
    pub cold_start_cv: T,
    pub accuracy_cv: T,
}

/// Coefficient of variation: population standard deviation over mean, zero
/// for an all-zero column.
pub fn coefficient_of_variation<T: Scalar>(values: &[T]) -> T {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
    if mean == T::zero() {
        return T::zero();
    }
    let var = values
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / n;
    var.sqrt() / mean
}

pub fn fairness_report<T: Scalar>(
    report: &SimulationReport<T>,
) -> Result<FairnessReport<T>, MetricsError> {
    if report.per_app.len() < 2 {
        return Err(MetricsError::TooFewApplications {
            got: report.per_app.len(),
        });
    }
    let mut rows = Vec::new();
    let mut cold = Vec::new();
    let mut accuracy = Vec::new();
    for (app, stats) in &report.per_app {
        let cold_pct = if stats.requests == 0 {
            T::zero()
        } else {
            T::hundred() * T::from_usize_lossy(stats.cold as usize)
                / T::from_usize_lossy(stats.requests as usize)
        };
        rows.push((app.clone(), cold_pct, stats.mean_accuracy_pct));
        cold.push(cold_pct);
        if let Some(acc) = stats.mean_accuracy_pct {
            accuracy.push(acc);
        }
    }
    Ok(FairnessReport {
        cold_start_cv: coefficient_of_variation(&cold),
        accuracy_cv: coefficient_of_variation(&accuracy),
        rows,
    })
}

/// Builds the full report for one run: per-app tallies, prediction accuracy
/// from the workload pair, and the run-level aggregates.
pub fn build_report<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    pair: &WorkloadPair<T>,
    log: &RunLog<T>,
    delta_ms: T,
) -> SimulationReport<T> {
    let mut per_app: BTreeMap<AppId, PerAppStats<T>> = BTreeMap::new();
    let mut acc_by_app: BTreeMap<AppId, Vec<T>> = BTreeMap::new();
    for o in &log.outcomes {
        let stats = per_app
            .entry(o.request.app_id.clone())
            .or_insert(PerAppStats {
                requests: 0,
                warm: 0,
                cold: 0,
                failures: 0,
                mean_accuracy_pct: None,
                prediction_accuracy: T::zero(),
            });
        stats.requests += 1;
        match o.kind {
            OutcomeKind::WarmStart => stats.warm += 1,
            OutcomeKind::ColdStart => stats.cold += 1,
            OutcomeKind::Failure => stats.failures += 1,
        }
        if let Some(acc) = o.accuracy_pct {
            acc_by_app
                .entry(o.request.app_id.clone())
                .or_default()
                .push(acc);
        }
    }
    for (app, accs) in acc_by_app {
        let sum = accs.iter().fold(T::zero(), |a, &v| a + v);
        per_app.get_mut(&app).expect("app has outcomes").mean_accuracy_pct =
            Some(sum / T::from_usize_lossy(accs.len()));
    }

    // Prediction accuracy: hit rate of actual requests inside the window
    // [t - delta, t + delta] of their own linked prediction. Unpredicted
    // requests count as misses, so the score degrades as predictions do
    // instead of crediting accidental overlap with unrelated windows.
    let mut prediction_of_actual: BTreeMap<usize, usize> = BTreeMap::new();
    for (pred_idx, link) in pair.links.iter().enumerate() {
        if let Some(act_idx) = link {
            prediction_of_actual.insert(*act_idx, pred_idx);
        }
    }
    let mut hits_by_app: BTreeMap<AppId, u64> = BTreeMap::new();
    for (act_idx, request) in pair.actual.requests.iter().enumerate() {
        let hit = prediction_of_actual.get(&act_idx).is_some_and(|&pred_idx| {
            let predicted = pair.predicted.requests[pred_idx].time_ms;
            (request.time_ms - predicted).abs() <= delta_ms
        });
        if hit {
            *hits_by_app.entry(request.app_id.clone()).or_default() += 1;
        }
    }
    for (app, stats) in per_app.iter_mut() {
        let hits = hits_by_app.get(app).copied().unwrap_or(0);
        stats.prediction_accuracy = if stats.requests == 0 {
            T::zero()
        } else {
            T::from_usize_lossy(hits as usize) / T::from_usize_lossy(stats.requests as usize)
        };
    }

    // Zoo accuracy range anchors the normalization so runs of the same
    // scenario are directly comparable.
    let mut zoo_min = T::infinity();
    let mut zoo_max = T::neg_infinity();
    for app in &cfg.applications {
        for v in &app.zoo {
            zoo_min = zoo_min.min(v.accuracy_pct);
            zoo_max = zoo_max.max(v.accuracy_pct);
        }
    }
    let served: Vec<T> = log.outcomes.iter().filter_map(|o| o.accuracy_pct).collect();
    let normalized_accuracy = if served.is_empty() {
        T::zero()
    } else {
        served
            .iter()
            .fold(T::zero(), |a, &v| a + minmax_normalize(v, zoo_min, zoo_max))
            / T::from_usize_lossy(served.len())
    };
    let mean_accuracy_pct = if served.is_empty() {
        None
    } else {
        Some(served.iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(served.len()))
    };

    let overall = OverallStats {
        satisfaction_rate_pct: satisfaction_rate(log).unwrap_or_else(|_| T::zero()),
        cold_start_pct: cold_start_pct(log).unwrap_or_else(|_| T::zero()),
        failure_pct: failure_pct(log).unwrap_or_else(|_| T::zero()),
        mean_accuracy_pct,
        normalized_accuracy,
        robustness: T::zero(),
    };
    let mut report = SimulationReport { per_app, overall };
    report.overall.robustness = robustness(&report).unwrap_or_else(|_| T::zero());
    report
}

/// Context identifying one run in serialized outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunMeta<T: Scalar> {
    pub policy: String,
    pub deviation: T,
    pub mean_concurrency: T,
    pub alpha: T,
    pub seed: u64,
    pub memory_budget_mb: T,
    pub config_sha256: String,
    pub delta_ms: T,
    pub history_window_ms: T,
    pub measured_kl_nats: T,
}

/// Report plus its identifying metadata, the on-disk JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunArtifact<T: Scalar> {
    pub meta: RunMeta<T>,
    pub report: SimulationReport<T>,
}

/// Tidy CSV rows `metric,policy,deviation,alpha,seed,value` for one run.
pub fn write_tidy_csv<T: Scalar, W: Write>(
    artifact: &RunArtifact<T>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "# seed={}", artifact.meta.seed)?;
    writeln!(out, "# config_sha256={}", artifact.meta.config_sha256)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "policy", "deviation", "alpha", "seed", "value"])?;
    for (metric, value) in metric_values(&artifact.report) {
        w.write_record([
            metric,
            &artifact.meta.policy,
            &format!("{}", artifact.meta.deviation),
            &format!("{}", artifact.meta.alpha),
            &artifact.meta.seed.to_string(),
            &format!("{value}"),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        default_scenario, validate_scenario, InferenceRequest, ModelVariant, PolicyKind,
        RequestOutcome,
    };
    use crate::engine::run;
    use crate::workload::build_workload;
    use approx::assert_abs_diff_eq;

    fn toy_log(kinds: &[OutcomeKind]) -> RunLog<f64> {
        let cfg = default_scenario::<f64>();
        let variant = cfg.applications[0].zoo[0].clone();
        let outcomes = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let request = InferenceRequest::new("face_recognition", i as f64);
                match kind {
                    OutcomeKind::WarmStart => RequestOutcome::warm(request, &variant),
                    OutcomeKind::ColdStart => {
                        RequestOutcome::cold(request, &variant, variant.load_time_ms)
                    }
                    OutcomeKind::Failure => RequestOutcome::failure(request),
                }
            })
            .collect::<Vec<_>>();
        let n = outcomes.len();
        RunLog {
            outcomes,
            outcome_seqs: (0..n as u64).collect(),
            memory_timeline: vec![(0.0, 0.0)],
            load_events: vec![],
            unload_events: vec![],
        }
    }

    #[test]
    fn rate_examples() {
        use OutcomeKind::*;
        let log = toy_log(&[
            WarmStart, WarmStart, WarmStart, WarmStart, WarmStart, WarmStart, WarmStart,
            ColdStart, ColdStart, Failure,
        ]);
        assert_eq!(satisfaction_rate(&log).unwrap(), 70.0);
        assert_eq!(cold_start_pct(&log).unwrap(), 20.0);
        assert_eq!(failure_pct(&log).unwrap(), 10.0);

        let all_warm = toy_log(&[WarmStart, WarmStart]);
        assert_eq!(satisfaction_rate(&all_warm).unwrap(), 100.0);
        let all_fail = toy_log(&[Failure, Failure]);
        assert_eq!(satisfaction_rate(&all_fail).unwrap(), 0.0);

        let empty = toy_log(&[]);
        assert!(matches!(satisfaction_rate(&empty), Err(MetricsError::EmptyLog)));
    }

    #[test]
    fn shares_sum_to_one_hundred() {
        let base = validate_scenario(default_scenario::<f64>()).unwrap();
        for policy in PolicyKind::ALL {
            let mut cfg = base.clone();
            cfg.policy = policy;
            cfg.requests_per_app = 30;
            let built = build_workload(&cfg);
            let log = run(&cfg, &built.pair);
            let total = satisfaction_rate(&log).unwrap()
                + cold_start_pct(&log).unwrap()
                + failure_pct(&log).unwrap();
            assert_abs_diff_eq!(total, 100.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn per_app_cold_share_recombines_to_overall() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 40;
        let built = build_workload(&cfg);
        let log = run(&cfg, &built.pair);
        let by_app = cold_start_pct_by_app(&log).unwrap();
        let mut weighted = 0.0;
        for (app, pct) in &by_app {
            let n = log
                .outcomes
                .iter()
                .filter(|o| &o.request.app_id == app)
                .count() as f64;
            weighted += pct * n;
        }
        let overall = cold_start_pct(&log).unwrap();
        assert_abs_diff_eq!(weighted / log.outcomes.len() as f64, overall, epsilon = 1e-9);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(68.0, 68.0, 89.7), 0.0);
        assert_eq!(minmax_normalize(89.7, 68.0, 89.7), 1.0);
        assert_abs_diff_eq!(
            minmax_normalize(78.85, 68.0, 89.7),
            0.5,
            epsilon = 1e-12
        );
        // Degenerate pool maps to 1 by convention.
        assert_eq!(minmax_normalize(50.0, 70.0, 70.0), 1.0);
    }

    fn report_with(per_app: Vec<(&str, u64, u64, f64)>) -> SimulationReport<f64> {
        // (app, requests, warm, prediction_accuracy)
        let per_app: BTreeMap<AppId, PerAppStats<f64>> = per_app
            .into_iter()
            .map(|(app, requests, warm, psi)| {
                (
                    AppId::new(app),
                    PerAppStats {
                        requests,
                        warm,
                        cold: requests - warm,
                        failures: 0,
                        mean_accuracy_pct: Some(80.0),
                        prediction_accuracy: psi,
                    },
                )
            })
            .collect();
        SimulationReport {
            per_app,
            overall: OverallStats {
                satisfaction_rate_pct: 0.0,
                cold_start_pct: 0.0,
                failure_pct: 0.0,
                mean_accuracy_pct: Some(80.0),
                normalized_accuracy: 0.0,
                robustness: 0.0,
            },
        }
    }

    #[test]
    fn robustness_examples() {
        // All warm, perfect prediction -> 1.
        let r = report_with(vec![("a", 10, 10, 1.0), ("b", 4, 4, 1.0)]);
        assert_eq!(robustness(&r).unwrap(), 1.0);
        // Zero warm -> 0.
        let r = report_with(vec![("a", 10, 0, 1.0)]);
        assert_eq!(robustness(&r).unwrap(), 0.0);
        // (0.5 * 0.8 + 1.0 * 1.0) / 2 = 0.7.
        let r = report_with(vec![("a", 10, 5, 0.8), ("b", 6, 6, 1.0)]);
        assert_abs_diff_eq!(robustness(&r).unwrap(), 0.7, epsilon = 1e-12);
        // No requests at all.
        let r = report_with(vec![]);
        assert!(matches!(robustness(&r), Err(MetricsError::NoRequests)));
    }

    #[test]
    fn robustness_matches_direct_formula_on_randomized_reports() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..1_000 {
            let napps = rng.gen_range(1..8);
            let spec: Vec<(String, u64, u64, f64)> = (0..napps)
                .map(|i| {
                    let requests = rng.gen_range(1..50u64);
                    let warm = rng.gen_range(0..=requests);
                    (format!("app{i}"), requests, warm, rng.gen_range(0.0..1.0))
                })
                .collect();
            let r = report_with(
                spec.iter()
                    .map(|(a, r_, w, p)| (a.as_str(), *r_, *w, *p))
                    .collect(),
            );
            let direct: f64 = spec
                .iter()
                .map(|(_, requests, warm, psi)| (*warm as f64 / *requests as f64) * psi)
                .sum::<f64>()
                / napps as f64;
            assert_abs_diff_eq!(robustness(&r).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn pareto_examples() {
        // Strict domination.
        assert_eq!(pareto_front(&[(10.0, 5.0), (20.0, 10.0)]), vec![0]);
        // Incomparable points both survive.
        assert_eq!(pareto_front(&[(10.0, 20.0), (20.0, 10.0)]), vec![0, 1]);
        // Duplicates do not dominate each other.
        assert_eq!(pareto_front(&[(1.0, 1.0), (1.0, 1.0)]), vec![0, 1]);
    }

    fn brute_force_front(points: &[(f64, f64)]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| {
                    j != i
                        && points[j].0 <= points[i].0
                        && points[j].1 <= points[i].1
                        && (points[j].0 < points[i].0 || points[j].1 < points[i].1)
                })
            })
            .collect()
    }

    #[test]
    fn pareto_matches_brute_force_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1_000 {
            let n = rng.gen_range(1..40);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    // Coarse grid forces plenty of exact ties.
                    (
                        rng.gen_range(0..10) as f64,
                        rng.gen_range(0..10) as f64,
                    )
                })
                .collect();
            assert_eq!(
                pareto_front(&points),
                brute_force_front(&points),
                "points {points:?}"
            );
            // Every front member is mutually non-dominated; every excluded
            // point is dominated by some front member.
            let front = pareto_front(&points);
            for &i in &front {
                for &j in &front {
                    if i != j {
                        let dom = points[j].0 <= points[i].0
                            && points[j].1 <= points[i].1
                            && (points[j].0 < points[i].0 || points[j].1 < points[i].1);
                        assert!(!dom);
                    }
                }
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        let mk = |sat: f64| {
            let mut r = report_with(vec![("a", 10, 5, 1.0)]);
            r.overall.satisfaction_rate_pct = sat;
            r
        };
        // Identical reports: zero-width interval.
        let agg = aggregate(&[mk(70.0), mk(70.0)]).unwrap();
        assert_eq!(agg.metrics["satisfaction_rate_pct"], (70.0, 0.0));
        // {60, 70}: mean 65, half-width = t(1) * s / sqrt(2) = 12.7062 * 5.
        let agg = aggregate(&[mk(60.0), mk(70.0)]).unwrap();
        let (mean, hw) = agg.metrics["satisfaction_rate_pct"];
        assert_eq!(mean, 65.0);
        assert_abs_diff_eq!(hw, 12.706204736 * 5.0, epsilon = 1e-6);
        // Single report: error.
        assert!(matches!(
            aggregate(&[mk(60.0)]),
            Err(MetricsError::InsufficientRepetitions { got: 1 })
        ));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mk = |sat: f64, rob: f64| {
            let mut r = report_with(vec![("a", 10, 5, 1.0)]);
            r.overall.satisfaction_rate_pct = sat;
            r.overall.robustness = rob;
            r
        };
        let a = aggregate(&[mk(60.0, 0.5), mk(70.0, 0.7), mk(80.0, 0.9)]).unwrap();
        let b = aggregate(&[mk(80.0, 0.9), mk(60.0, 0.5), mk(70.0, 0.7)]).unwrap();
        for (name, (mean_a, hw_a)) in &a.metrics {
            let (mean_b, hw_b) = b.metrics[name];
            assert_abs_diff_eq!(*mean_a, mean_b, epsilon = 1e-12);
            assert_abs_diff_eq!(*hw_a, hw_b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fairness_examples() {
        // Identical rates: CV 0.
        let mut r = report_with(vec![("a", 10, 9, 1.0), ("b", 10, 9, 1.0)]);
        r.per_app.get_mut(&AppId::new("a")).unwrap().cold = 1;
        r.per_app.get_mut(&AppId::new("b")).unwrap().cold = 1;
        let f = fairness_report(&r).unwrap();
        assert_eq!(f.cold_start_cv, 0.0);

        // Rates {10, 30}: population std 10, mean 20 -> CV 0.5.
        let mut r = report_with(vec![("a", 10, 9, 1.0), ("b", 10, 7, 1.0)]);
        r.per_app.get_mut(&AppId::new("a")).unwrap().cold = 1;
        r.per_app.get_mut(&AppId::new("b")).unwrap().cold = 3;
        let f = fairness_report(&r).unwrap();
        assert_abs_diff_eq!(f.cold_start_cv, 0.5, epsilon = 1e-12);

        // Single app: error.
        let r = report_with(vec![("a", 10, 9, 1.0)]);
        assert!(matches!(
            fairness_report(&r),
            Err(MetricsError::TooFewApplications { got: 1 })
        ));
    }

    #[test]
    fn normalized_accuracy_pools_across_logs() {
        let cfg = default_scenario::<f64>();
        let hi = &cfg.applications[1].zoo[0]; // 94.5, the zoo maximum
        let lo = &cfg.applications[2].zoo[2]; // 68.0, the zoo minimum
        let mk = |v: &ModelVariant<f64>| {
            let outcome = RequestOutcome::warm(InferenceRequest::new(v.app_id.as_str(), 0.0), v);
            RunLog {
                outcomes: vec![outcome],
                outcome_seqs: vec![0],
                memory_timeline: vec![],
                load_events: vec![],
                unload_events: vec![],
            }
        };
        let log_hi = mk(hi);
        let log_lo = mk(lo);
        let pool = [&log_hi, &log_lo];
        assert_eq!(normalized_accuracy(&log_lo, &pool).unwrap(), 0.0);
        assert_eq!(normalized_accuracy(&log_hi, &pool).unwrap(), 1.0);
        let only_failures = toy_log(&[OutcomeKind::Failure]);
        assert!(normalized_accuracy(&only_failures, &pool).is_err());
    }

    #[test]
    fn build_report_counts_are_consistent() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 30;
        let built = build_workload(&cfg);
        let log = run(&cfg, &built.pair);
        let report = build_report(&cfg, &built.pair, &log, built.delta_ms);
        let total: u64 = report.per_app.values().map(|s| s.requests).sum();
        assert_eq!(total as usize, log.outcomes.len());
        let warm: u64 = report.per_app.values().map(|s| s.warm).sum();
        assert_abs_diff_eq!(
            report.overall.satisfaction_rate_pct,
            100.0 * warm as f64 / total as f64,
            epsilon = 1e-9
        );
        for stats in report.per_app.values() {
            assert!(stats.prediction_accuracy >= 0.0 && stats.prediction_accuracy <= 1.0);
            assert_eq!(stats.requests, stats.warm + stats.cold + stats.failures);
        }
        assert!(report.overall.robustness >= 0.0 && report.overall.robustness <= 1.0);
        assert!(report.overall.normalized_accuracy >= 0.0);
        assert!(report.overall.normalized_accuracy <= 1.0);
    }

    #[test]
    fn tidy_csv_embeds_seed_and_hash() {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.requests_per_app = 10;
        let built = build_workload(&cfg);
        let log = run(&cfg, &built.pair);
        let report = build_report(&cfg, &built.pair, &log, built.delta_ms);
        let artifact = RunArtifact {
            meta: RunMeta {
                policy: cfg.policy.to_string(),
                deviation: cfg.deviation,
                mean_concurrency: cfg.mean_concurrency,
                alpha: cfg.alpha,
                seed: cfg.seed,
                memory_budget_mb: cfg.memory_budget_mb,
                config_sha256: "deadbeef".into(),
                delta_ms: built.delta_ms,
                history_window_ms: built.history_window_ms,
                measured_kl_nats: built.pair.measured_kl_nats,
            },
            report,
        };
        let mut buf = Vec::new();
        write_tidy_csv(&artifact, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed=42\n# config_sha256=deadbeef\n"));
        assert!(text.contains("metric,policy,deviation,alpha,seed,value"));
        assert!(text.contains("satisfaction_rate_pct,iws-bfe,0.3,0,42,"));
    }
}
