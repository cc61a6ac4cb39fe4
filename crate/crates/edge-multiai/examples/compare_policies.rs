//! Runs the bundled scenario under every policy and prints the headline
//! metrics side by side.

use edge_multiai::domain::{default_scenario, validate_scenario, PolicyKind};
use edge_multiai::engine::run;
use edge_multiai::metrics::build_report;
use edge_multiai::workload::build_workload;

fn main() {
    println!("policy    satisfaction%  cold%  failure%  robustness");
    for policy in PolicyKind::ALL {
        let mut cfg = validate_scenario(default_scenario::<f64>()).unwrap();
        cfg.policy = policy;
        let built = build_workload(&cfg);
        let log = run(&cfg, &built.pair);
        let report = build_report(&cfg, &built.pair, &log, built.delta_ms);
        println!(
            "{:<9} {:>12.2} {:>6.2} {:>9.2} {:>11.3}",
            policy.to_string(),
            report.overall.satisfaction_rate_pct,
            report.overall.cold_start_pct,
            report.overall.failure_pct,
            report.overall.robustness,
        );
    }
}
