//! Federation client: waits for global weights, trains locally, reports the
//! updated weights with its window count. The Adam state persists across
//! rounds (only weights are aggregated), unless configured to reset.

use super::transport::ClientTransport;
use super::{FederationError, MessageTag, ProtocolError, RoundMessage};
use crate::nets::{NetworkConfig, ParameterSet};
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::trainer::{train_on_windows, TrainError};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Registering,
    Training,
    Reporting,
    Stopped,
}

#[derive(Debug)]
pub struct ClientState {
    pub phase: ClientPhase,
    pub local_params: Option<ParameterSet>,
    pub round: u32,
}

/// Reset local weights to the received global, run the configured number of
/// local epochs, and return the updated weights with the window count.
pub fn local_train(
    config: &NetworkConfig,
    global: &ParameterSet,
    windows: &[(Tensor, Tensor)],
    adam: &mut AdamState,
    epochs_per_round: usize,
) -> Result<(ParameterSet, u64), TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoWindows);
    }
    let mut local = global.clone();
    train_on_windows(&mut local, adam, config, windows, epochs_per_round)?;
    Ok((local, windows.len() as u64))
}

pub struct FederatedClient<T: ClientTransport> {
    pub id: String,
    pub state: ClientState,
    transport: T,
    config: NetworkConfig,
    windows: Vec<(Tensor, Tensor)>,
    epochs_per_round: usize,
    timeout: Duration,
    reset_optimizer_per_round: bool,
    adam: Option<AdamState>,
}

impl<T: ClientTransport> FederatedClient<T> {
    pub fn new(
        id: String,
        transport: T,
        config: NetworkConfig,
        windows: Vec<(Tensor, Tensor)>,
        epochs_per_round: usize,
        timeout: Duration,
        reset_optimizer_per_round: bool,
    ) -> Self {
        FederatedClient {
            id,
            state: ClientState {
                phase: ClientPhase::Registering,
                local_params: None,
                round: 0,
            },
            transport,
            config,
            windows,
            epochs_per_round,
            timeout,
            reset_optimizer_per_round,
            adam: None,
        }
    }

    /// Register, then serve rounds until DONE.
    pub fn run(&mut self) -> Result<(), FederationError> {
        if self.windows.is_empty() {
            // empty local data is a configuration error in this protocol
            return Err(FederationError::Train(TrainError::NoWindows));
        }
        self.transport.send(&RoundMessage::register(&self.id))?;
        loop {
            let msg = self.transport.recv_timeout(self.timeout)?;
            match msg.tag {
                MessageTag::Global => {
                    let global = msg
                        .payload
                        .ok_or(ProtocolError::MissingPayload { tag: msg.tag })?;
                    if let Some(prev) = &self.state.local_params {
                        if prev.layout_id() != global.layout_id() {
                            return Err(FederationError::Protocol(ProtocolError::LayoutMismatch {
                                expected: prev.layout_id(),
                                got: global.layout_id(),
                            }));
                        }
                    }
                    self.state.round = msg.round;
                    self.state.phase = ClientPhase::Training;
                    if self.reset_optimizer_per_round || self.adam.is_none() {
                        self.adam = Some(AdamState::new(&global, self.config.learning_rate));
                    }
                    let adam = self.adam.as_mut().expect("initialized above");
                    let (updated, n_samples) = local_train(
                        &self.config,
                        &global,
                        &self.windows,
                        adam,
                        self.epochs_per_round,
                    )?;
                    self.state.local_params = Some(updated.clone());
                    self.state.phase = ClientPhase::Reporting;
                    self.transport.send(&RoundMessage::update(
                        msg.round, &self.id, n_samples, updated,
                    ))?;
                }
                MessageTag::Done => {
                    self.state.phase = ClientPhase::Stopped;
                    return Ok(());
                }
                tag => {
                    return Err(FederationError::Protocol(
                        ProtocolError::UnexpectedMessage {
                            tag,
                            phase: "client loop",
                        },
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_network, CellKind, CellVariant};
    use crate::tensor::Rng;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            cell: CellKind {
                variant: CellVariant::SimpleRnn,
                bidirectional: false,
            },
            input_size: 3,
            hidden_size: 4,
            num_layers: 1,
            fc_hidden: 10,
            outputs: 2,
            sequence_length: 5,
            learning_rate: 1e-3,
        }
    }

    fn windows(seed: u64, count: usize) -> Vec<(Tensor, Tensor)> {
        let mut rng = Rng::new(seed);
        (0..count)
            .map(|_| {
                (
                    crate::tensor::uniform_init(&mut rng, vec![5, 3], -1.0, 1.0).unwrap(),
                    crate::tensor::uniform_init(&mut rng, vec![5, 2], -0.9, 0.9).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_global_unchanged() {
        let cfg = small_config();
        let global = init_network(&cfg, &mut Rng::new(1)).unwrap();
        let mut adam = AdamState::new(&global, cfg.learning_rate);
        let w = windows(2, 3);
        let (updated, n) = local_train(&cfg, &global, &w, &mut adam, 0).unwrap();
        assert_eq!(updated, global);
        assert_eq!(n, 3);
    }

    #[test]
    fn local_train_is_deterministic() {
        let cfg = small_config();
        let global = init_network(&cfg, &mut Rng::new(1)).unwrap();
        let w = windows(2, 3);
        let run = || {
            let mut adam = AdamState::new(&global, cfg.learning_rate);
            local_train(&cfg, &global, &w, &mut adam, 2).unwrap()
        };
        let (a, _) = run();
        let (b, _) = run();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_local_data_is_an_error() {
        let cfg = small_config();
        let global = init_network(&cfg, &mut Rng::new(1)).unwrap();
        let mut adam = AdamState::new(&global, cfg.learning_rate);
        assert!(matches!(
            local_train(&cfg, &global, &[], &mut adam, 1),
            Err(TrainError::NoWindows)
        ));
    }
}
