//! Recurrent network definitions: simple RNN, GRU and LSTM cells with
//! optional bidirectional wrappers and stacking, a small fully-connected
//! regression head, and hand-written backpropagation through time.

mod bptt;
mod params;

pub use bptt::{backward, forward, ForwardTape};
pub use params::ParameterSet;

use crate::tensor::{uniform_init, Rng, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input width {got} does not match configured input size {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("sequence of {got} frames exceeds configured length {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite value in network input")]
    NonFiniteInput,
    #[error("forward pass produced a non-finite value")]
    NonFiniteOutput,
    #[error("parameter layout mismatch: expected {expected:#x}, got {got:#x}")]
    LayoutMismatch { expected: u64, got: u64 },
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("parameter '{name}' has shape {got:?}, expected {expected:?}")]
    BadParameterShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("duplicate parameter name '{0}'")]
    DuplicateParameter(String),
    #[error("upstream gradient has shape {got:?}, expected {expected:?}")]
    GradShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tape does not match this forward call: {0}")]
    TapeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The three recurrent cell families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellVariant {
    SimpleRnn,
    Gru,
    Lstm,
}

impl CellVariant {
    /// Number of stacked gate blocks in the combined weight matrices.
    pub(crate) fn gates(self) -> usize {
        match self {
            CellVariant::SimpleRnn => 1,
            CellVariant::Gru => 3,
            CellVariant::Lstm => 4,
        }
    }
}

/// Cell family plus directionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKind {
    pub variant: CellVariant,
    pub bidirectional: bool,
}

impl CellKind {
    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Display name in the usual RNN/BiGRU/BiLSTM convention.
    pub fn label(&self) -> &'static str {
        match (self.variant, self.bidirectional) {
            (CellVariant::SimpleRnn, false) => "RNN",
            (CellVariant::SimpleRnn, true) => "BiRNN",
            (CellVariant::Gru, false) => "GRU",
            (CellVariant::Gru, true) => "BiGRU",
            (CellVariant::Lstm, false) => "LSTM",
            (CellVariant::Lstm, true) => "BiLSTM",
        }
    }
}

/// Full architecture description for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub cell: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub fc_hidden: usize,
    pub outputs: usize,
    pub sequence_length: usize,
    pub learning_rate: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let positive = [
            ("input_size", self.input_size),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("fc_hidden", self.fc_hidden),
            ("outputs", self.outputs),
            ("sequence_length", self.sequence_length),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NetError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::InvalidConfig(
                "learning_rate must be a positive finite number".into(),
            ));
        }
        Ok(())
    }

    /// Width of the per-timestep feature fed to the regression head.
    pub fn fc_input_width(&self) -> usize {
        self.cell.directions() * self.hidden_size
    }
}

/// Admissible hyper-parameter grid from the published configuration table.
pub const GRID_HIDDEN_SIZES: &[usize] = &[8, 16, 64, 128, 256, 512];
pub const GRID_LEARNING_RATES: &[f64] = &[1e-3, 1e-4, 1e-5];
pub const GRID_FEATURE_SEQ_LENGTHS: &[usize] = &[50, 100, 200, 400, 600, 800, 1000, 2000];
pub const GRID_IMAGE_SEQ_LENGTHS: &[usize] = &[4, 8, 16, 32];
pub const GRID_NUM_LAYERS: &[usize] = &[1, 2, 4, 6, 8];

/// Result of validating a config against the published grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridCheck {
    /// Hard violations: the value is not in the admissible grid at all.
    pub violations: Vec<String>,
    /// Accepted values that only apply to the out-of-scope image branch.
    pub notes: Vec<String>,
}

impl GridCheck {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl NetworkConfig {
    /// Check every field against the published hyper-parameter grid.
    pub fn paper_grid_check(&self) -> GridCheck {
        let mut check = GridCheck::default();
        if !GRID_HIDDEN_SIZES.contains(&self.hidden_size) {
            check.violations.push(format!(
                "hidden_size {} not in {GRID_HIDDEN_SIZES:?}",
                self.hidden_size
            ));
        }
        if !GRID_LEARNING_RATES.contains(&self.learning_rate) {
            check.violations.push(format!(
                "learning_rate {} not in {GRID_LEARNING_RATES:?}",
                self.learning_rate
            ));
        }
        if !GRID_NUM_LAYERS.contains(&self.num_layers) {
            check.violations.push(format!(
                "num_layers {} not in {GRID_NUM_LAYERS:?}",
                self.num_layers
            ));
        }
        if self.fc_hidden != 10 {
            check.violations.push(format!(
                "fc_hidden {} differs from the published 10",
                self.fc_hidden
            ));
        }
        if self.outputs != 2 {
            check.violations.push(format!(
                "outputs {} differs from the published 2",
                self.outputs
            ));
        }
        if GRID_IMAGE_SEQ_LENGTHS.contains(&self.sequence_length) {
            check.notes.push(format!(
                "sequence_length {} belongs to the image branch, which this artifact does not process",
                self.sequence_length
            ));
        } else if !GRID_FEATURE_SEQ_LENGTHS.contains(&self.sequence_length) {
            check.violations.push(format!(
                "sequence_length {} not in {GRID_FEATURE_SEQ_LENGTHS:?}",
                self.sequence_length
            ));
        }
        check
    }
}

/// Direction name used in parameter entry names.
fn dir_name(d: usize) -> &'static str {
    if d == 0 {
        "fwd"
    } else {
        "bwd"
    }
}

/// Canonical (name, shape) list for a config: layer-major, then direction,
/// then w_ih / w_hh / b, with the fully-connected head at the end.
pub(crate) fn parameter_layout(config: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let gates = config.cell.variant.gates();
    let h = config.hidden_size;
    let dirs = config.cell.directions();
    let mut layout = Vec::new();
    let mut width_in = config.input_size;
    for layer in 0..config.num_layers {
        for d in 0..dirs {
            let prefix = format!("layer{layer}.{}", dir_name(d));
            layout.push((format!("{prefix}.w_ih"), vec![gates * h, width_in]));
            layout.push((format!("{prefix}.w_hh"), vec![gates * h, h]));
            layout.push((format!("{prefix}.b"), vec![gates * h]));
        }
        width_in = dirs * h;
    }
    layout.push(("fc.w1".into(), vec![config.fc_hidden, width_in]));
    layout.push(("fc.b1".into(), vec![config.fc_hidden]));
    layout.push(("fc.w2".into(), vec![config.outputs, config.fc_hidden]));
    layout.push(("fc.b2".into(), vec![config.outputs]));
    layout
}

/// Initialize a fresh parameter set.
///
/// Weights are uniform in [-1/sqrt(hidden), +1/sqrt(hidden)); biases are zero
/// except the LSTM forget-gate block, which starts at 1.0.
pub fn init_network(config: &NetworkConfig, rng: &mut Rng) -> Result<ParameterSet, NetError> {
    config.validate()?;
    let bound = 1.0 / (config.hidden_size as f64).sqrt();
    let h = config.hidden_size;
    let mut entries = Vec::new();
    for (name, shape) in parameter_layout(config) {
        let tensor = if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            let mut t = Tensor::zeros(shape);
            if config.cell.variant == CellVariant::Lstm && name.ends_with(".b") {
                // gate order is (i, f, g, o): rows h..2h are the forget gate
                for v in &mut t.data_mut()[h..2 * h] {
                    *v = 1.0;
                }
            }
            t
        } else {
            uniform_init(rng, shape, -bound, bound)?
        };
        entries.push((name, tensor));
    }
    ParameterSet::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(variant: CellVariant, bidirectional: bool) -> NetworkConfig {
        NetworkConfig {
            cell: CellKind {
                variant,
                bidirectional,
            },
            input_size: 40,
            hidden_size: 8,
            num_layers: 1,
            fc_hidden: 10,
            outputs: 2,
            sequence_length: 16,
            learning_rate: 1e-4,
        }
    }

    #[test]
    fn simple_rnn_shapes() {
        let cfg = config(CellVariant::SimpleRnn, false);
        let params = init_network(&cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(params.get("layer0.fwd.w_ih").unwrap().shape(), &[8, 40]);
        assert_eq!(params.get("layer0.fwd.w_hh").unwrap().shape(), &[8, 8]);
        assert_eq!(params.get("layer0.fwd.b").unwrap().shape(), &[8]);
        assert_eq!(params.get("fc.w1").unwrap().shape(), &[10, 8]);
        assert_eq!(params.get("fc.w2").unwrap().shape(), &[2, 10]);
    }

    #[test]
    fn lstm_has_four_stacked_gate_blocks() {
        let cfg = config(CellVariant::Lstm, false);
        let params = init_network(&cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(params.get("layer0.fwd.w_ih").unwrap().shape(), &[32, 40]);
        assert_eq!(params.get("layer0.fwd.w_hh").unwrap().shape(), &[32, 8]);
        let b = params.get("layer0.fwd.b").unwrap();
        assert_eq!(b.shape(), &[32]);
        // forget-gate block initialized to 1.0, everything else 0
        assert!(b.data()[..8].iter().all(|&v| v == 0.0));
        assert!(b.data()[8..16].iter().all(|&v| v == 1.0));
        assert!(b.data()[16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bidirectional_doubles_fc_input_width() {
        let cfg = config(CellVariant::Gru, true);
        let params = init_network(&cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(params.get("fc.w1").unwrap().shape(), &[10, 16]);
        assert!(params.get("layer0.bwd.w_ih").is_some());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = config(CellVariant::Gru, true);
        let a = init_network(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_network(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layout_id(), b.layout_id());
    }

    #[test]
    fn init_respects_bound() {
        let cfg = config(CellVariant::SimpleRnn, false);
        let params = init_network(&cfg, &mut Rng::new(11)).unwrap();
        let bound = 1.0 / (8f64).sqrt();
        for (name, t) in params.entries() {
            if name.contains("w_") || name.contains(".w") {
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn stacked_layers_consume_previous_width() {
        let mut cfg = config(CellVariant::Gru, true);
        cfg.num_layers = 2;
        let params = init_network(&cfg, &mut Rng::new(0)).unwrap();
        // layer 1 input is the 2h-wide concatenated output of layer 0
        assert_eq!(params.get("layer1.fwd.w_ih").unwrap().shape(), &[24, 16]);
    }

    #[test]
    fn paper_grid_check_flags_values() {
        let mut cfg = config(CellVariant::Gru, true);
        cfg.hidden_size = 8;
        cfg.sequence_length = 600;
        assert!(cfg.paper_grid_check().is_ok());

        cfg.hidden_size = 7;
        assert!(!cfg.paper_grid_check().is_ok());

        cfg.hidden_size = 128;
        cfg.sequence_length = 16; // image branch
        let check = cfg.paper_grid_check();
        assert!(check.is_ok());
        assert_eq!(check.notes.len(), 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = config(CellVariant::Gru, false);
        cfg.hidden_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = config(CellVariant::Gru, false);
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
    }
}
