//! File writers for run artifacts, sweep tables and figure-ready CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use edge_multiai::engine::RunLog;
use edge_multiai::metrics::RunArtifact;
use edge_multiai::workload::{write_pair_csv, WorkloadPair};
use sha2::{Digest, Sha256};

use crate::AppError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Default output root: $EDGE_MULTIAI_OUT, falling back to ./results.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("EDGE_MULTIAI_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

impl ReportFormat {
    pub fn parse(raw: Option<&str>) -> Result<Self, AppError> {
        match raw {
            None => Ok(ReportFormat::Both),
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            Some(other) => Err(AppError::Config(format!(
                "unknown format {other:?}; expected csv or json"
            ))),
        }
    }

    fn csv(self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::Both)
    }
}

fn meta_header(artifact: &RunArtifact<f64>) -> String {
    format!(
        "# seed={}\n# config_sha256={}\n",
        artifact.meta.seed, artifact.meta.config_sha256
    )
}

/// Writes the artifacts of one run into `dir`: the outcome log as JSON
/// Lines and CSV, the workload pair, and the report. Every file embeds the
/// seed and the hash of the resolved configuration.
pub fn write_run_artifacts(
    dir: &Path,
    artifact: &RunArtifact<f64>,
    log: &RunLog<f64>,
    pair: &WorkloadPair<f64>,
    format: ReportFormat,
) -> Result<(), AppError> {
    fs::create_dir_all(dir)?;
    let header = meta_header(artifact);

    let meta_line = serde_json::to_string(&artifact.meta).expect("meta serializes");
    fs::write(
        dir.join("run_log.jsonl"),
        format!("{meta_line}\n{}", log.to_jsonl()),
    )?;

    let mut csv_bytes = header.clone().into_bytes();
    log.write_csv(&mut csv_bytes)?;
    fs::write(dir.join("run_log.csv"), csv_bytes)?;

    let mut pair_bytes = header.clone().into_bytes();
    write_pair_csv(pair, &mut pair_bytes)?;
    fs::write(dir.join("workload.csv"), pair_bytes)?;

    if format.json() {
        let json = serde_json::to_string_pretty(artifact).expect("artifact serializes");
        fs::write(dir.join("report.json"), json)?;
    }
    if format.csv() {
        let mut tidy = Vec::new();
        edge_multiai::metrics::write_tidy_csv(artifact, &mut tidy)?;
        fs::write(dir.join("report.csv"), tidy)?;
    }
    Ok(())
}

/// Recursively collects run artifacts (report.json files) under a root.
pub fn collect_artifacts(root: &Path) -> Result<Vec<RunArtifact<f64>>, AppError> {
    let mut artifacts = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir)
            .map_err(|e| AppError::Io(format!("cannot read {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                let raw = fs::read_to_string(&path)?;
                match serde_json::from_str::<RunArtifact<f64>>(&raw) {
                    Ok(artifact) => artifacts.push(artifact),
                    Err(e) => {
                        eprintln!("warning: skipping {}: {e}", path.display());
                    }
                }
            }
        }
    }
    // Deterministic table order regardless of directory traversal.
    artifacts.sort_by(|a, b| {
        a.meta
            .policy
            .cmp(&b.meta.policy)
            .then_with(|| a.meta.deviation.total_cmp(&b.meta.deviation))
            .then_with(|| a.meta.alpha.total_cmp(&b.meta.alpha))
            .then_with(|| a.meta.mean_concurrency.total_cmp(&b.meta.mean_concurrency))
            .then_with(|| a.meta.seed.cmp(&b.meta.seed))
    });
    Ok(artifacts)
}
