//! Experiment harness: configuration, the participant-wise cross-validation
//! driver for both training modes, report rendering, model checkpoints and
//! inference timing.

mod checkpoint;
mod config;
mod cv;
mod report;
mod timing;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{load_config, parse_config, render_config, SEED_ENV_VAR};
pub use cv::{
    evaluate_model, participant_windows, run_cross_validation, run_cross_validation_on,
    run_single_fold, FoldOutcome,
};
pub use report::{parse_json_report, render_report, FoldReport, ReportFormat, RunReport};
pub use timing::time_inference;

use crate::data::DataError;
use crate::federation::{AggregationRule, FederationError, ProtocolError};
use crate::metrics::MetricError;
use crate::nets::{NetError, NetworkConfig};
use crate::trainer::TrainError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot run {k} folds with {participants} participants")]
    TooFewParticipants { participants: usize, k: usize },
    #[error("no evaluable frames: {0}")]
    NoEvalFrames(String),
    #[error("train/eval leakage: {0}")]
    LeakageDetected(String),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// All training sequences on one machine.
    Central,
    /// One client per training participant, synchronous weight averaging.
    Federated,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Central => "central",
            Mode::Federated => "federated",
        }
    }
}

/// Everything needed to rerun an experiment exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub network: NetworkConfig,
    pub k_folds: usize,
    pub epochs: usize,
    /// Local epochs per federated round; `epochs` must be a multiple.
    pub epochs_per_round: usize,
    pub seed: u64,
    /// Window step; `None` means non-overlapping (stride == window length).
    pub window_stride: Option<usize>,
    pub aggregation: AggregationRule,
    /// Pool evaluation frames per fold (false) or average per-participant
    /// CCC within the fold (true).
    pub ccc_per_participant: bool,
    pub normalize: bool,
    pub reset_optimizer_per_round: bool,
    pub round_timeout_secs: u64,
    /// Validate hyper-parameters against the published grid.
    pub paper_grid: bool,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Expected client roster for the TCP transport.
    pub clients: Vec<String>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, network: NetworkConfig) -> Self {
        ExperimentConfig {
            mode,
            network,
            k_folds: 8,
            epochs: 100,
            epochs_per_round: 1,
            seed: 0,
            window_stride: None,
            aggregation: AggregationRule::Mean,
            ccc_per_participant: false,
            normalize: true,
            reset_optimizer_per_round: false,
            round_timeout_secs: 3600,
            paper_grid: false,
            data_dir: None,
            out_dir: None,
            clients: Vec::new(),
        }
    }

    pub fn window_length(&self) -> usize {
        self.network.sequence_length
    }

    pub fn stride(&self) -> usize {
        self.window_stride.unwrap_or(self.network.sequence_length)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.network.validate().map_err(HarnessError::Net)?;
        if self.k_folds == 0 {
            return Err(HarnessError::Config("k_folds must be positive".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(HarnessError::Config(
                "epochs_per_round must be positive".into(),
            ));
        }
        if self.mode == Mode::Federated && !self.epochs.is_multiple_of(self.epochs_per_round) {
            return Err(HarnessError::Config(format!(
                "epochs {} must be a multiple of epochs_per_round {}",
                self.epochs, self.epochs_per_round
            )));
        }
        if let Some(stride) = self.window_stride {
            if stride == 0 {
                return Err(HarnessError::Config(
                    "window_stride must be positive".into(),
                ));
            }
        }
        if self.paper_grid {
            let check = self.network.paper_grid_check();
            if !check.is_ok() {
                return Err(HarnessError::Config(format!(
                    "outside the published grid: {}",
                    check.violations.join("; ")
                )));
            }
        }
        Ok(())
    }
}
