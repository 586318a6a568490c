//! Flat key-value experiment config files.
//!
//! Schema: one `key = value` per line, `#` starts a comment. Keys:
//!
//! ```text
//! mode = central | federated
//! cell = rnn | gru | lstm
//! bidirectional = true | false
//! input_size = 40
//! hidden_size = 64
//! num_layers = 1
//! fc_hidden = 10
//! outputs = 2
//! sequence_length = 100        # window length in frames
//! learning_rate = 0.0001
//! k_folds = 8
//! epochs = 100
//! epochs_per_round = 1
//! seed = 7
//! window_stride = 100          # optional, defaults to sequence_length
//! aggregation = mean | weighted_mean
//! ccc_per_participant = false
//! normalize = true
//! reset_optimizer_per_round = false
//! round_timeout_secs = 3600
//! paper_grid = false
//! data_dir = <path>            # optional
//! out_dir = <path>             # optional
//! clients = a,b,c              # TCP client roster, optional
//! ```
//!
//! The `FEDSEQ_SEED` environment variable overrides `seed`.

use super::{ExperimentConfig, HarnessError, Mode};
use crate::federation::AggregationRule;
use crate::nets::{CellKind, CellVariant, NetworkConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SEED_ENV_VAR: &str = "FEDSEQ_SEED";

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(HarnessError::Config(format!(
            "{key}: expected a boolean, got '{other}'"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse '{value}'")))
}

/// Parse config text. Unknown keys are rejected so typos fail loudly.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        values.insert(key.trim().to_string(), value.trim().to_string());
    }

    let mut network = NetworkConfig {
        cell: CellKind {
            variant: CellVariant::Gru,
            bidirectional: true,
        },
        input_size: 40,
        hidden_size: 64,
        num_layers: 1,
        fc_hidden: 10,
        outputs: 2,
        sequence_length: 100,
        learning_rate: 1e-4,
    };
    let mut config = ExperimentConfig::new(Mode::Central, network.clone());

    for (key, value) in &values {
        match key.as_str() {
            "mode" => {
                config.mode = match value.as_str() {
                    "central" => Mode::Central,
                    "federated" => Mode::Federated,
                    other => return Err(HarnessError::Config(format!("unknown mode '{other}'"))),
                }
            }
            "cell" => {
                network.cell.variant = match value.as_str() {
                    "rnn" | "simple_rnn" => CellVariant::SimpleRnn,
                    "gru" => CellVariant::Gru,
                    "lstm" => CellVariant::Lstm,
                    other => return Err(HarnessError::Config(format!("unknown cell '{other}'"))),
                }
            }
            "bidirectional" => network.cell.bidirectional = parse_bool(key, value)?,
            "input_size" => network.input_size = parse_num(key, value)?,
            "hidden_size" => network.hidden_size = parse_num(key, value)?,
            "num_layers" => network.num_layers = parse_num(key, value)?,
            "fc_hidden" => network.fc_hidden = parse_num(key, value)?,
            "outputs" => network.outputs = parse_num(key, value)?,
            "sequence_length" => network.sequence_length = parse_num(key, value)?,
            "learning_rate" => network.learning_rate = parse_num(key, value)?,
            "k_folds" => config.k_folds = parse_num(key, value)?,
            "epochs" => config.epochs = parse_num(key, value)?,
            "epochs_per_round" => config.epochs_per_round = parse_num(key, value)?,
            "seed" => config.seed = parse_num(key, value)?,
            "window_stride" => config.window_stride = Some(parse_num(key, value)?),
            "aggregation" => {
                config.aggregation = match value.as_str() {
                    "mean" => AggregationRule::Mean,
                    "weighted_mean" => AggregationRule::WeightedMean,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown aggregation '{other}'"
                        )))
                    }
                }
            }
            "ccc_per_participant" => config.ccc_per_participant = parse_bool(key, value)?,
            "normalize" => config.normalize = parse_bool(key, value)?,
            "reset_optimizer_per_round" => {
                config.reset_optimizer_per_round = parse_bool(key, value)?
            }
            "round_timeout_secs" => config.round_timeout_secs = parse_num(key, value)?,
            "paper_grid" => config.paper_grid = parse_bool(key, value)?,
            "data_dir" => config.data_dir = Some(PathBuf::from(value)),
            "out_dir" => config.out_dir = Some(PathBuf::from(value)),
            "clients" => {
                config.clients = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            other => {
                return Err(HarnessError::Config(format!("unknown key '{other}'")));
            }
        }
    }
    config.network = network;
    config.validate()?;
    Ok(config)
}

/// Read a config file and apply the `FEDSEQ_SEED` override if present.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        config.seed = seed
            .parse()
            .map_err(|_| HarnessError::Config(format!("{SEED_ENV_VAR}: bad seed '{seed}'")))?;
    }
    Ok(config)
}

/// Render a config back to the flat key-value schema; parsing the result
/// reproduces the config.
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    push("mode", config.mode.label().to_string());
    let cell = match config.network.cell.variant {
        CellVariant::SimpleRnn => "rnn",
        CellVariant::Gru => "gru",
        CellVariant::Lstm => "lstm",
    };
    push("cell", cell.to_string());
    push(
        "bidirectional",
        config.network.cell.bidirectional.to_string(),
    );
    push("input_size", config.network.input_size.to_string());
    push("hidden_size", config.network.hidden_size.to_string());
    push("num_layers", config.network.num_layers.to_string());
    push("fc_hidden", config.network.fc_hidden.to_string());
    push("outputs", config.network.outputs.to_string());
    push(
        "sequence_length",
        config.network.sequence_length.to_string(),
    );
    push("learning_rate", config.network.learning_rate.to_string());
    push("k_folds", config.k_folds.to_string());
    push("epochs", config.epochs.to_string());
    push("epochs_per_round", config.epochs_per_round.to_string());
    push("seed", config.seed.to_string());
    if let Some(stride) = config.window_stride {
        push("window_stride", stride.to_string());
    }
    let agg = match config.aggregation {
        AggregationRule::Mean => "mean",
        AggregationRule::WeightedMean => "weighted_mean",
    };
    push("aggregation", agg.to_string());
    push(
        "ccc_per_participant",
        config.ccc_per_participant.to_string(),
    );
    push("normalize", config.normalize.to_string());
    push(
        "reset_optimizer_per_round",
        config.reset_optimizer_per_round.to_string(),
    );
    push("round_timeout_secs", config.round_timeout_secs.to_string());
    push("paper_grid", config.paper_grid.to_string());
    if let Some(dir) = &config.data_dir {
        push("data_dir", dir.display().to_string());
    }
    if let Some(dir) = &config.out_dir {
        push("out_dir", dir.display().to_string());
    }
    if !config.clients.is_empty() {
        push("clients", config.clients.join(","));
    }
    out
}
