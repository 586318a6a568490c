//! The aggregation server: a strict synchronous state machine
//! WAIT_REGISTER -> (BROADCAST -> COLLECT -> AGGREGATE)* -> FINISHED.
//! A round never aggregates until every expected client has reported; a
//! missing client aborts the run after the configured timeout.

use super::transport::ServerTransport;
use super::{
    aggregate, AggregationRule, FederatedClient, FederationError, MessageTag, ProtocolError,
    RoundMessage,
};
use crate::nets::{NetworkConfig, ParameterSet};
use crate::tensor::Tensor;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerPhase {
    WaitRegister,
    Broadcast,
    Collect,
    Aggregate,
    Finished,
}

impl ServerPhase {
    fn name(self) -> &'static str {
        match self {
            ServerPhase::WaitRegister => "WAIT_REGISTER",
            ServerPhase::Broadcast => "BROADCAST",
            ServerPhase::Collect => "COLLECT",
            ServerPhase::Aggregate => "AGGREGATE",
            ServerPhase::Finished => "FINISHED",
        }
    }
}

pub struct ServerState {
    pub phase: ServerPhase,
    pub expected_clients: BTreeSet<String>,
    pub received: BTreeMap<String, (ParameterSet, u64)>,
    pub global: ParameterSet,
    pub round: u32,
    pub total_rounds: u32,
}

pub struct FederatedServer<T: ServerTransport> {
    state: ServerState,
    transport: T,
    rule: AggregationRule,
    round_timeout: Duration,
}

impl<T: ServerTransport> FederatedServer<T> {
    pub fn new(
        transport: T,
        global: ParameterSet,
        expected_clients: BTreeSet<String>,
        total_rounds: u32,
        rule: AggregationRule,
        round_timeout: Duration,
    ) -> Self {
        FederatedServer {
            state: ServerState {
                phase: ServerPhase::WaitRegister,
                expected_clients,
                received: BTreeMap::new(),
                global,
                round: 0,
                total_rounds,
            },
            transport,
            rule,
            round_timeout,
        }
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn global(&self) -> &ParameterSet {
        &self.state.global
    }

    /// Block until every expected client has sent REGISTER.
    pub fn wait_for_registration(&mut self) -> Result<(), ProtocolError> {
        assert_eq!(self.state.phase, ServerPhase::WaitRegister);
        let deadline = Instant::now() + self.round_timeout;
        let mut registered: BTreeSet<String> = BTreeSet::new();
        while registered != self.state.expected_clients {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let missing = || {
                self.state
                    .expected_clients
                    .difference(&registered)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            if remaining.is_zero() {
                return Err(ProtocolError::RegistrationTimeout { missing: missing() });
            }
            let msg = match self.transport.recv_timeout(remaining) {
                Ok(msg) => msg,
                Err(ProtocolError::Timeout) => {
                    return Err(ProtocolError::RegistrationTimeout { missing: missing() })
                }
                Err(e) => return Err(e),
            };
            match msg.tag {
                MessageTag::Register => {
                    if !self.state.expected_clients.contains(&msg.client_id) {
                        return Err(ProtocolError::UnknownClient(msg.client_id));
                    }
                    registered.insert(msg.client_id);
                }
                tag => {
                    return Err(ProtocolError::UnexpectedMessage {
                        tag,
                        phase: self.state.phase.name(),
                    })
                }
            }
        }
        self.state.phase = ServerPhase::Broadcast;
        Ok(())
    }

    /// One full round: broadcast the global weights, collect one update per
    /// client, aggregate. Broadcasts DONE and finishes after the last round.
    pub fn run_round(&mut self) -> Result<(), ProtocolError> {
        assert_eq!(
            self.state.phase,
            ServerPhase::Broadcast,
            "run_round out of phase"
        );
        let round = self.state.round;
        self.transport
            .broadcast(&RoundMessage::global(round, self.state.global.clone()))?;
        self.state.phase = ServerPhase::Collect;
        self.state.received.clear();

        let deadline = Instant::now() + self.round_timeout;
        while self.state.received.len() < self.state.expected_clients.len() {
            let missing = || {
                self.state
                    .expected_clients
                    .iter()
                    .filter(|c| !self.state.received.contains_key(*c))
                    .cloned()
                    .collect::<Vec<_>>()
            };
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(ProtocolError::RoundTimeout {
                    round,
                    missing: missing(),
                });
            }
            let msg = match self.transport.recv_timeout(remaining) {
                Ok(msg) => msg,
                Err(ProtocolError::Timeout) => {
                    return Err(ProtocolError::RoundTimeout {
                        round,
                        missing: missing(),
                    })
                }
                Err(e) => return Err(e),
            };
            match msg.tag {
                MessageTag::Update => {
                    if !self.state.expected_clients.contains(&msg.client_id) {
                        return Err(ProtocolError::UnknownClient(msg.client_id));
                    }
                    if msg.round != round {
                        return Err(ProtocolError::StaleRound {
                            client: msg.client_id,
                            expected: round,
                            got: msg.round,
                        });
                    }
                    let payload = msg
                        .payload
                        .ok_or(ProtocolError::MissingPayload { tag: msg.tag })?;
                    if payload.layout_id() != self.state.global.layout_id() {
                        return Err(ProtocolError::LayoutMismatch {
                            expected: self.state.global.layout_id(),
                            got: payload.layout_id(),
                        });
                    }
                    if self
                        .state
                        .received
                        .insert(msg.client_id.clone(), (payload, msg.n_samples))
                        .is_some()
                    {
                        return Err(ProtocolError::DuplicateUpdate(msg.client_id));
                    }
                }
                tag => {
                    return Err(ProtocolError::UnexpectedMessage {
                        tag,
                        phase: self.state.phase.name(),
                    })
                }
            }
        }

        // synchronous barrier reached: every expected client reported
        self.state.phase = ServerPhase::Aggregate;
        debug_assert_eq!(self.state.received.len(), self.state.expected_clients.len());
        let updates: Vec<(String, ParameterSet, u64)> = self
            .state
            .received
            .iter()
            .map(|(id, (p, n))| (id.clone(), p.clone(), *n))
            .collect();
        self.state.global = aggregate(&updates, self.rule)?;
        self.state.received.clear();
        self.state.round += 1;
        if self.state.round >= self.state.total_rounds {
            self.transport
                .broadcast(&RoundMessage::done(self.state.round))?;
            self.state.phase = ServerPhase::Finished;
        } else {
            self.state.phase = ServerPhase::Broadcast;
        }
        Ok(())
    }

    /// Registration plus all configured rounds.
    pub fn run(&mut self) -> Result<ParameterSet, ProtocolError> {
        self.wait_for_registration()?;
        while self.state.phase != ServerPhase::Finished {
            self.run_round()?;
        }
        Ok(self.state.global.clone())
    }
}

/// Drive a complete federated training run over the simulated transport:
/// one thread per client, the server on the calling thread. Deterministic
/// regardless of scheduling because aggregation sorts by client id and each
/// client's optimizer state is isolated.
#[allow(clippy::too_many_arguments)]
pub fn run_federated_training(
    config: &NetworkConfig,
    client_windows: &BTreeMap<String, Vec<(Tensor, Tensor)>>,
    initial: ParameterSet,
    rounds: u32,
    epochs_per_round: usize,
    rule: AggregationRule,
    round_timeout: Duration,
    reset_optimizer_per_round: bool,
) -> Result<ParameterSet, FederationError> {
    let ids: Vec<String> = client_windows.keys().cloned().collect();
    let (server_transport, client_transports) = super::sim_network(&ids);
    let expected: BTreeSet<String> = ids.iter().cloned().collect();

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (transport, id) in client_transports.into_iter().zip(&ids) {
            let windows = &client_windows[id];
            let mut client = FederatedClient::new(
                id.clone(),
                transport,
                config.clone(),
                windows.clone(),
                epochs_per_round,
                round_timeout,
                reset_optimizer_per_round,
            );
            handles.push((id.clone(), scope.spawn(move || client.run())));
        }

        let mut server = FederatedServer::new(
            server_transport,
            initial,
            expected,
            rounds,
            rule,
            round_timeout,
        );
        let server_result = server.run();

        let mut client_error = None;
        for (id, handle) in handles {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    client_error.get_or_insert(FederationError::ClientFailed {
                        client_id: id,
                        message: e.to_string(),
                    });
                }
                Err(_) => {
                    client_error.get_or_insert(FederationError::ClientFailed {
                        client_id: id,
                        message: "client thread panicked".into(),
                    });
                }
            }
        }
        match server_result {
            Ok(global) => match client_error {
                None => Ok(global),
                Some(e) => Err(e),
            },
            Err(e) => Err(client_error.unwrap_or(FederationError::Protocol(e))),
        }
    })
}
