//! The whole pipeline is generic over the scalar width; run it at f32 and
//! check the books still balance.

use edge_multiai::audit::audit;
use edge_multiai::domain::{default_scenario, validate_scenario, PolicyKind};
use edge_multiai::engine::run;
use edge_multiai::metrics::build_report;
use edge_multiai::workload::build_workload;

#[test]
fn f32_pipeline_runs_and_audits() {
    let mut cfg = validate_scenario(default_scenario::<f32>()).unwrap();
    cfg.requests_per_app = 40;
    for policy in PolicyKind::ALL {
        let mut cfg = cfg.clone();
        cfg.policy = policy;
        let built = build_workload(&cfg);
        let log = run(&cfg, &built.pair);
        let report = audit(&cfg, &built.pair, &log).unwrap();
        assert_eq!(report.requests, built.pair.actual.len());
        let sim = build_report(&cfg, &built.pair, &log, built.delta_ms);
        let total = sim.overall.satisfaction_rate_pct
            + sim.overall.cold_start_pct
            + sim.overall.failure_pct;
        assert!((total - 100.0).abs() < 1e-3, "{policy:?}: shares sum to {total}");
    }
}

#[test]
fn f32_and_f64_runs_agree_on_outcome_kinds() {
    // Same seed, same draws (randomness happens in f64 either way); the
    // outcome sequence should classify identically at both widths.
    let mut cfg64 = validate_scenario(default_scenario::<f64>()).unwrap();
    cfg64.requests_per_app = 30;
    let mut cfg32 = validate_scenario(default_scenario::<f32>()).unwrap();
    cfg32.requests_per_app = 30;

    let built64 = build_workload(&cfg64);
    let built32 = build_workload(&cfg32);
    let log64 = run(&cfg64, &built64.pair);
    let log32 = run(&cfg32, &built32.pair);
    let kinds64: Vec<_> = log64.outcomes.iter().map(|o| o.kind).collect();
    let kinds32: Vec<_> = log32.outcomes.iter().map(|o| o.kind).collect();
    let agree = kinds64
        .iter()
        .zip(&kinds32)
        .filter(|(a, b)| a == b)
        .count();
    // Rounding can flip knife-edge classifications, but the runs should
    // agree almost everywhere.
    assert!(
        agree as f64 >= 0.95 * kinds64.len() as f64,
        "only {agree}/{} outcomes agree across widths",
        kinds64.len()
    );
}
