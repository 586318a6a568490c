//! Run reports and their three serializations: an aligned text table, CSV,
//! and JSON lines (one self-contained JSON object per line, which parses
//! back to an equal report).

use super::cv::FoldOutcome;
use super::{ExperimentConfig, HarnessError};
use crate::metrics::MetricReport;
use serde::{Deserialize, Serialize};

/// Build/version stamp embedded in every report.
pub fn build_fingerprint() -> String {
    format!(
        "fedseq-core {} ({})",
        env!("CARGO_PKG_VERSION"),
        option_env!("FEDSEQ_GIT_HASH").unwrap_or("no-git-hash")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub eval_participants: Vec<String>,
    pub n_clients: usize,
    pub train_secs: f64,
    pub metrics: MetricReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub network: String,
    pub per_fold: Vec<FoldReport>,
    pub mean_valence_ccc: f64,
    pub mean_arousal_ccc: f64,
    pub total_wall_secs: f64,
    pub total_train_secs: f64,
    /// Sum over folds of train time divided by that fold's client count:
    /// the synchronous-local-processing estimate.
    pub simulated_parallel_secs: f64,
    pub inference_secs_100: Option<f64>,
    pub inference_secs_500: Option<f64>,
    pub config: ExperimentConfig,
    pub fingerprint: String,
}

impl RunReport {
    pub fn new(
        config: ExperimentConfig,
        outcomes: &[FoldOutcome],
        total_wall_secs: f64,
    ) -> Result<Self, HarnessError> {
        if outcomes.is_empty() {
            return Err(HarnessError::Config(
                "report needs at least one fold".into(),
            ));
        }
        let per_fold: Vec<FoldReport> = outcomes
            .iter()
            .map(|o| FoldReport {
                fold_index: o.fold_index,
                eval_participants: o.eval_participants.clone(),
                n_clients: o.n_clients,
                train_secs: o.train_secs,
                metrics: o.metrics.clone(),
                warnings: o.warnings.clone(),
            })
            .collect();
        let n = per_fold.len() as f64;
        let mean_valence_ccc = per_fold.iter().map(|f| f.metrics.valence_ccc).sum::<f64>() / n;
        let mean_arousal_ccc = per_fold.iter().map(|f| f.metrics.arousal_ccc).sum::<f64>() / n;
        let total_train_secs = per_fold.iter().map(|f| f.train_secs).sum::<f64>();
        let simulated_parallel_secs = per_fold
            .iter()
            .map(|f| f.train_secs / f.n_clients as f64)
            .sum::<f64>();
        Ok(RunReport {
            method: config.mode.label().to_string(),
            network: config.network.cell.label().to_string(),
            per_fold,
            mean_valence_ccc,
            mean_arousal_ccc,
            total_wall_secs,
            total_train_secs,
            simulated_parallel_secs,
            inference_secs_100: None,
            inference_secs_500: None,
            config,
            fingerprint: build_fingerprint(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
    JsonLines,
}

/// Deterministic rendering of a report in the chosen format.
pub fn render_report(run: &RunReport, format: ReportFormat) -> Result<Vec<u8>, HarnessError> {
    match format {
        ReportFormat::JsonLines => {
            let mut line = serde_json::to_string(run)?;
            line.push('\n');
            Ok(line.into_bytes())
        }
        ReportFormat::Csv => {
            let mut out = String::from(
                "fold,valence_ccc,arousal_ccc,valence_pearson,arousal_pearson,n_frames,n_clients,train_secs\n",
            );
            for f in &run.per_fold {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    f.fold_index,
                    f.metrics.valence_ccc,
                    f.metrics.arousal_ccc,
                    f.metrics.valence_pearson,
                    f.metrics.arousal_pearson,
                    f.metrics.n_frames,
                    f.n_clients,
                    f.train_secs
                ));
            }
            out.push_str(&format!(
                "mean,{},{},,,,,{}\n",
                run.mean_valence_ccc, run.mean_arousal_ccc, run.total_train_secs
            ));
            Ok(out.into_bytes())
        }
        ReportFormat::TextTable => {
            let inference = match (run.inference_secs_100, run.inference_secs_500) {
                (Some(a), Some(b)) => format!("{a:.4}/{b:.4}"),
                (Some(a), None) => format!("{a:.4}"),
                _ => "-".to_string(),
            };
            let mut out = String::new();
            out.push_str(&format!(
                "{:<10} {:<8} {:>12} {:>12} {:>14} {:>16}\n",
                "method",
                "network",
                "valence CCC",
                "arousal CCC",
                "train time (s)",
                "inference (s)"
            ));
            out.push_str(&format!(
                "{:<10} {:<8} {:>12.4} {:>12.4} {:>14.2} {:>16}\n",
                run.method,
                run.network,
                run.mean_valence_ccc,
                run.mean_arousal_ccc,
                run.total_train_secs,
                inference
            ));
            out.push('\n');
            for f in &run.per_fold {
                out.push_str(&format!(
                    "  fold {}: valence {:.4}, arousal {:.4} over {} frames (eval: {}, {} clients, {:.2}s)\n",
                    f.fold_index,
                    f.metrics.valence_ccc,
                    f.metrics.arousal_ccc,
                    f.metrics.n_frames,
                    f.eval_participants.join("+"),
                    f.n_clients,
                    f.train_secs
                ));
                for warning in &f.warnings {
                    out.push_str(&format!("    warning: {warning}\n"));
                }
            }
            out.push_str(&format!(
                "  wall {:.2}s, train {:.2}s, simulated-parallel {:.2}s [{}]\n",
                run.total_wall_secs,
                run.total_train_secs,
                run.simulated_parallel_secs,
                run.fingerprint
            ));
            Ok(out.into_bytes())
        }
    }
}

/// Parse one JSON line back into a report.
pub fn parse_json_report(bytes: &[u8]) -> Result<RunReport, HarnessError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| HarnessError::Config(format!("report is not utf-8: {e}")))?;
    let line = text
        .lines()
        .next()
        .ok_or_else(|| HarnessError::Config("empty report".into()))?;
    Ok(serde_json::from_str(line)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Mode;
    use crate::nets::{CellKind, CellVariant, NetworkConfig};

    #[test]
    fn empty_fold_list_fails_at_construction() {
        let config = ExperimentConfig::new(
            Mode::Central,
            NetworkConfig {
                cell: CellKind {
                    variant: CellVariant::Gru,
                    bidirectional: false,
                },
                input_size: 4,
                hidden_size: 4,
                num_layers: 1,
                fc_hidden: 10,
                outputs: 2,
                sequence_length: 8,
                learning_rate: 1e-3,
            },
        );
        assert!(RunReport::new(config, &[], 1.0).is_err());
    }
}
