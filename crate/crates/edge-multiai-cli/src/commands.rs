//! The run, sweep and report subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use edge_multiai::domain::{default_scenario, validate_scenario, PolicyKind, ScenarioConfig};
use edge_multiai::engine::{run, RunLog};
use edge_multiai::metrics::{
    aggregate, build_report, fairness_report, pareto_front, RunArtifact, RunMeta,
    SimulationReport,
};
use edge_multiai::workload::{build_workload, BuiltWorkload};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{
    collect_artifacts, default_out_root, sha256_hex, write_run_artifacts, ReportFormat,
};
use crate::{AppError, Overrides, ReportArgs, RunArgs, SweepArgs};

/// Loads a scenario from a JSON file, or the bundled default when no path
/// is given. Parse errors carry line, column and byte offset.
fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig<f64>, AppError> {
    let Some(path) = path else {
        return Ok(default_scenario());
    };
    let raw = fs::read_to_string(path)
        .map_err(|e| AppError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&raw, &path.display().to_string())
}

fn parse_scenario(raw: &str, origin: &str) -> Result<ScenarioConfig<f64>, AppError> {
    match serde_json::from_str::<ScenarioConfig<f64>>(raw) {
        Ok(cfg) => Ok(cfg),
        Err(e) => {
            let offset = byte_offset(raw, e.line(), e.column());
            Err(AppError::Config(format!(
                "{origin}: line {}, column {} (byte offset {offset}): {e}",
                e.line(),
                e.column()
            )))
        }
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (idx, l) in text.split('\n').enumerate() {
        if idx + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

fn apply_overrides(cfg: &mut ScenarioConfig<f64>, o: &Overrides) -> Result<(), AppError> {
    if let Some(policy) = &o.policy {
        cfg.policy = policy
            .parse::<PolicyKind>()
            .map_err(|e| AppError::Config(e.to_string()))?;
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(deviation) = o.deviation {
        cfg.deviation = deviation;
    }
    if let Some(c) = o.mean_concurrency {
        cfg.mean_concurrency = c;
    }
    if let Some(alpha) = o.alpha {
        cfg.alpha = alpha;
    }
    if let Some(budget) = o.budget_mb {
        cfg.memory_budget_mb = budget;
    }
    Ok(())
}

/// One complete seeded simulation: workload, engine, report.
fn execute(cfg: &ScenarioConfig<f64>) -> (BuiltWorkload<f64>, RunLog<f64>, RunArtifact<f64>) {
    let built = build_workload(cfg);
    let log = run(cfg, &built.pair);
    let report = build_report(cfg, &built.pair, &log, built.delta_ms);
    let config_json = serde_json::to_string(cfg).expect("config serializes");
    let artifact = RunArtifact {
        meta: RunMeta {
            policy: cfg.policy.to_string(),
            deviation: cfg.deviation,
            mean_concurrency: cfg.mean_concurrency,
            alpha: cfg.alpha,
            seed: cfg.seed,
            memory_budget_mb: cfg.memory_budget_mb,
            config_sha256: sha256_hex(config_json.as_bytes()),
            delta_ms: built.delta_ms,
            history_window_ms: built.history_window_ms,
            measured_kl_nats: built.pair.measured_kl_nats,
        },
        report,
    };
    (built, log, artifact)
}

pub fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let mut cfg = load_scenario(args.config.as_deref())?;
    apply_overrides(&mut cfg, &args.overrides)?;
    let cfg = validate_scenario(cfg).map_err(|e| AppError::Config(e.to_string()))?;
    let format = ReportFormat::parse(args.format.as_deref())?;
    let out = args.out.unwrap_or_else(default_out_root);

    let (built, log, artifact) = execute(&cfg);
    write_run_artifacts(&out, &artifact, &log, &built.pair, format)?;
    println!(
        "run complete: policy={} seed={} satisfaction={:.2}% cold={:.2}% failures={:.2}% -> {}",
        artifact.meta.policy,
        artifact.meta.seed,
        artifact.report.overall.satisfaction_rate_pct,
        artifact.report.overall.cold_start_pct,
        artifact.report.overall.failure_pct,
        out.display()
    );
    Ok(())
}

/// Axis a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Deviation,
    MeanConcurrency,
    Alpha,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub policies: Vec<String>,
    pub repetitions: u32,
    pub base: ScenarioConfig<f64>,
}

fn validate_sweep(spec: &SweepSpec) -> Result<(), AppError> {
    if spec.values.is_empty() {
        return Err(AppError::Config("sweep values must be non-empty".into()));
    }
    if spec.values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AppError::Config(
            "sweep values must be sorted ascending without duplicates".into(),
        ));
    }
    if spec.policies.is_empty() {
        return Err(AppError::Config("sweep needs at least one policy".into()));
    }
    if spec.repetitions == 0 {
        return Err(AppError::Config("repetitions must be at least 1".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    spec: &'a SweepSpec,
    spec_sha256: String,
    code_version: &'static str,
    runs: Vec<ManifestRun>,
}

#[derive(Serialize)]
struct ManifestRun {
    dir: String,
    policy: String,
    axis_value: f64,
    seed: u64,
    config_sha256: String,
}

pub fn cmd_sweep(args: SweepArgs) -> Result<(), AppError> {
    let raw = fs::read_to_string(&args.spec)
        .map_err(|e| AppError::Io(format!("cannot read {}: {e}", args.spec.display())))?;
    let spec: SweepSpec = serde_json::from_str(&raw).map_err(|e| {
        let offset = byte_offset(&raw, e.line(), e.column());
        AppError::Config(format!(
            "{}: line {}, column {} (byte offset {offset}): {e}",
            args.spec.display(),
            e.line(),
            e.column()
        ))
    })?;
    validate_sweep(&spec)?;
    let format = ReportFormat::parse(args.format.as_deref())?;
    let out = args.out.unwrap_or_else(default_out_root);
    fs::create_dir_all(&out)?;

    // Enumerate the grid; repetitions vary only the seed.
    let mut jobs = Vec::new();
    for policy in &spec.policies {
        let kind = policy
            .parse::<PolicyKind>()
            .map_err(|e| AppError::Config(e.to_string()))?;
        for &value in &spec.values {
            for rep in 0..spec.repetitions {
                let mut cfg = spec.base.clone();
                cfg.policy = kind;
                match spec.axis {
                    SweepAxis::Deviation => cfg.deviation = value,
                    SweepAxis::MeanConcurrency => cfg.mean_concurrency = value,
                    SweepAxis::Alpha => cfg.alpha = value,
                }
                cfg.seed = spec.base.seed.wrapping_add(rep as u64);
                let cfg = validate_scenario(cfg).map_err(|e| AppError::Config(e.to_string()))?;
                jobs.push((policy.clone(), value, cfg));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| AppError::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<(usize, BuiltWorkload<f64>, RunLog<f64>, RunArtifact<f64>)> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(idx, (_, _, cfg))| {
                let (built, log, artifact) = execute(cfg);
                (idx, built, log, artifact)
            })
            .collect()
    });
    let mut results = results;
    results.sort_by_key(|(idx, _, _, _)| *idx);

    let mut manifest_runs = Vec::new();
    let mut grouped: BTreeMap<(String, String), Vec<SimulationReport<f64>>> = BTreeMap::new();
    let mut per_run_rows = Vec::new();
    for (idx, built, log, artifact) in &results {
        let (policy, value, _) = &jobs[*idx];
        let dir = out.join(format!(
            "runs/{idx:04}_{policy}_{value}_{seed}",
            seed = artifact.meta.seed
        ));
        write_run_artifacts(&dir, artifact, log, &built.pair, format)?;
        manifest_runs.push(ManifestRun {
            dir: dir.display().to_string(),
            policy: policy.clone(),
            axis_value: *value,
            seed: artifact.meta.seed,
            config_sha256: artifact.meta.config_sha256.clone(),
        });
        grouped
            .entry((policy.clone(), format!("{value}")))
            .or_default()
            .push(artifact.report.clone());
        for (metric, metric_value) in edge_multiai::metrics::metric_values(&artifact.report) {
            per_run_rows.push((
                metric.to_string(),
                policy.clone(),
                *value,
                artifact.meta.seed,
                metric_value,
            ));
        }
    }

    // Tidy per-run table.
    let spec_sha = sha256_hex(raw.as_bytes());
    let axis_name = match spec.axis {
        SweepAxis::Deviation => "deviation",
        SweepAxis::MeanConcurrency => "mean_concurrency",
        SweepAxis::Alpha => "alpha",
    };
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "policy", axis_name, "seed", "value"])
            .map_err(csv_err)?;
        for (metric, policy, value, seed, metric_value) in &per_run_rows {
            w.write_record([
                metric,
                policy,
                &format!("{value}"),
                &seed.to_string(),
                &format!("{metric_value}"),
            ])
            .map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| AppError::Io(e.to_string()))?;
        let mut bytes = format!(
            "# seed={}\n# config_sha256={spec_sha}\n",
            spec.base.seed
        )
        .into_bytes();
        bytes.extend(body);
        fs::write(out.join("sweep_runs.csv"), bytes)?;
    }

    // Aggregated table with 95% confidence half-widths; the CI columns stay
    // empty for single repetitions.
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy", axis_name, "metric", "mean", "ci95_half_width", "repetitions",
        ])
        .map_err(csv_err)?;
        for ((policy, value), reports) in &grouped {
            if reports.len() >= 2 {
                let agg = aggregate(reports).map_err(|e| AppError::Config(e.to_string()))?;
                for (metric, (mean, hw)) in &agg.metrics {
                    w.write_record([
                        policy,
                        value,
                        metric,
                        &format!("{mean}"),
                        &format!("{hw}"),
                        &reports.len().to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            } else {
                for (metric, metric_value) in
                    edge_multiai::metrics::metric_values(&reports[0])
                {
                    w.write_record([
                        policy.as_str(),
                        value,
                        metric,
                        &format!("{metric_value}"),
                        "",
                        "1",
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        let body = w.into_inner().map_err(|e| AppError::Io(e.to_string()))?;
        let mut bytes = format!(
            "# seed={}\n# config_sha256={spec_sha}\n",
            spec.base.seed
        )
        .into_bytes();
        bytes.extend(body);
        fs::write(out.join("sweep_aggregate.csv"), bytes)?;
    }

    let manifest = SweepManifest {
        spec: &spec,
        spec_sha256: spec_sha,
        code_version: env!("CARGO_PKG_VERSION"),
        runs: manifest_runs,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    println!(
        "sweep complete: {} runs -> {}",
        results.len(),
        out.display()
    );
    Ok(())
}

fn csv_err(e: csv::Error) -> AppError {
    AppError::Io(e.to_string())
}

/// Mean per (policy, x) group of a metric extracted from artifacts.
fn grouped_means<F>(
    artifacts: &[RunArtifact<f64>],
    x_of: impl Fn(&RunArtifact<f64>) -> f64,
    value_of: F,
) -> BTreeMap<(String, String), (f64, usize)>
where
    F: Fn(&RunArtifact<f64>) -> Option<f64>,
{
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for artifact in artifacts {
        let Some(v) = value_of(artifact) else { continue };
        let key = (artifact.meta.policy.clone(), format!("{}", x_of(artifact)));
        let entry = acc.entry(key).or_insert((0.0, 0));
        entry.0 += v;
        entry.1 += 1;
    }
    acc
}

fn write_curve_csv(
    path: &Path,
    x_name: &str,
    metric_name: &str,
    groups: &BTreeMap<(String, String), (f64, usize)>,
) -> Result<(), AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", x_name, metric_name, "runs"])
        .map_err(csv_err)?;
    for ((policy, x), (sum, n)) in groups {
        w.write_record([
            policy,
            x,
            &format!("{}", sum / *n as f64),
            &n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| AppError::Io(e.to_string()))?;
    fs::write(path, body)?;
    Ok(())
}

pub fn cmd_report(args: ReportArgs) -> Result<(), AppError> {
    let artifacts = collect_artifacts(&args.results)?;
    if artifacts.is_empty() {
        return Err(AppError::Io(format!(
            "no run reports found under {}",
            args.results.display()
        )));
    }
    let out = args.out.unwrap_or_else(|| args.results.clone());
    fs::create_dir_all(&out)?;

    // Satisfaction against requested concurrency.
    write_curve_csv(
        &out.join("satisfaction_by_concurrency.csv"),
        "mean_concurrency",
        "satisfaction_rate_pct",
        &grouped_means(
            &artifacts,
            |a| a.meta.mean_concurrency,
            |a| Some(a.report.overall.satisfaction_rate_pct),
        ),
    )?;
    // Cold-start, accuracy and robustness against deviation.
    write_curve_csv(
        &out.join("cold_start_by_deviation.csv"),
        "deviation",
        "cold_start_pct",
        &grouped_means(
            &artifacts,
            |a| a.meta.deviation,
            |a| Some(a.report.overall.cold_start_pct),
        ),
    )?;
    write_curve_csv(
        &out.join("accuracy_by_deviation.csv"),
        "deviation",
        "normalized_accuracy",
        &grouped_means(
            &artifacts,
            |a| a.meta.deviation,
            |a| Some(a.report.overall.normalized_accuracy),
        ),
    )?;
    write_curve_csv(
        &out.join("robustness_by_deviation.csv"),
        "deviation",
        "robustness",
        &grouped_means(
            &artifacts,
            |a| a.meta.deviation,
            |a| Some(a.report.overall.robustness),
        ),
    )?;

    // Bi-objective points per (policy, alpha) with front membership.
    {
        let cold = grouped_means(
            &artifacts,
            |a| a.meta.alpha,
            |a| Some(a.report.overall.cold_start_pct),
        );
        let error = grouped_means(
            &artifacts,
            |a| a.meta.alpha,
            |a| a.report.overall.mean_accuracy_pct.map(|acc| 100.0 - acc),
        );
        let keys: Vec<_> = cold.keys().filter(|k| error.contains_key(*k)).cloned().collect();
        let points: Vec<(f64, f64)> = keys
            .iter()
            .map(|k| {
                let (cs, cn) = cold[k];
                let (es, en) = error[k];
                (cs / cn as f64, es / en as f64)
            })
            .collect();
        let front: std::collections::BTreeSet<usize> =
            pareto_front(&points).into_iter().collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["policy", "alpha", "cold_start_pct", "model_error", "on_front"])
            .map_err(csv_err)?;
        for (idx, key) in keys.iter().enumerate() {
            w.write_record([
                &key.0,
                &key.1,
                &format!("{}", points[idx].0),
                &format!("{}", points[idx].1),
                &front.contains(&idx).to_string(),
            ])
            .map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| AppError::Io(e.to_string()))?;
        fs::write(out.join("pareto_points.csv"), body)?;
    }

    // Per-application fairness: cold share and accuracy per policy.
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy",
            "app_id",
            "cold_start_pct",
            "mean_accuracy_pct",
            "cold_start_cv",
            "accuracy_cv",
        ])
        .map_err(csv_err)?;
        let mut by_policy: BTreeMap<String, Vec<&RunArtifact<f64>>> = BTreeMap::new();
        for artifact in &artifacts {
            by_policy
                .entry(artifact.meta.policy.clone())
                .or_default()
                .push(artifact);
        }
        for (policy, runs) in by_policy {
            // Mean the per-app columns across the policy's runs.
            let mut cold: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for artifact in runs {
                if let Ok(f) = fairness_report(&artifact.report) {
                    for (app, cold_pct, mean_acc) in &f.rows {
                        let c = cold.entry(app.to_string()).or_insert((0.0, 0));
                        c.0 += cold_pct;
                        c.1 += 1;
                        if let Some(a) = mean_acc {
                            let e = acc.entry(app.to_string()).or_insert((0.0, 0));
                            e.0 += a;
                            e.1 += 1;
                        }
                    }
                }
            }
            let cold_means: Vec<f64> = cold.values().map(|(s, n)| s / *n as f64).collect();
            let acc_means: Vec<f64> = acc.values().map(|(s, n)| s / *n as f64).collect();
            let cold_cv = edge_multiai::metrics::coefficient_of_variation(&cold_means);
            let acc_cv = edge_multiai::metrics::coefficient_of_variation(&acc_means);
            for (app, (sum, n)) in &cold {
                let mean_acc = acc
                    .get(app)
                    .map(|(s, m)| format!("{}", s / *m as f64))
                    .unwrap_or_default();
                w.write_record([
                    &policy,
                    app,
                    &format!("{}", sum / *n as f64),
                    &mean_acc,
                    &format!("{cold_cv}"),
                    &format!("{acc_cv}"),
                ])
                .map_err(csv_err)?;
            }
        }
        let body = w.into_inner().map_err(|e| AppError::Io(e.to_string()))?;
        fs::write(out.join("per_app_fairness.csv"), body)?;
    }

    println!("report tables written to {}", out.display());
    Ok(())
}
