//! Synchronous federated training: clients train locally on their own
//! sequences, ship weights to a central server after every round, and the
//! server replaces the global model with the (optionally sample-weighted)
//! mean before broadcasting it back. Only weights ever cross the transport.

mod aggregate;
mod client;
mod server;
mod tcp;
mod transport;
mod wire;

pub use aggregate::{aggregate, AggregationRule};
pub use client::{local_train, ClientPhase, ClientState, FederatedClient};
pub use server::{run_federated_training, FederatedServer, ServerPhase, ServerState};
pub use tcp::{TcpClientTransport, TcpServerTransport};
pub use transport::{
    sim_network, ClientTransport, ServerTransport, SimClientTransport, SimServerTransport,
};
pub use wire::{
    decode_message, decode_parameter_set, encode_message, encode_parameter_set, read_frame,
    write_frame, WIRE_MAGIC,
};

use crate::nets::ParameterSet;
use crate::trainer::TrainError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("frame truncated while reading {0}")]
    Truncated(&'static str),
    #[error("message tag {tag:?} must not carry a payload")]
    UnexpectedPayload { tag: MessageTag },
    #[error("message tag {tag:?} requires a payload")]
    MissingPayload { tag: MessageTag },
    #[error("non-finite value in serialized weights")]
    NonFinitePayload,
    #[error(
        "client '{client}' sent an update for round {got}, server is collecting round {expected}"
    )]
    StaleRound {
        client: String,
        expected: u32,
        got: u32,
    },
    #[error("unexpected {tag:?} while in phase {phase}")]
    UnexpectedMessage {
        tag: MessageTag,
        phase: &'static str,
    },
    #[error("client '{0}' is not in the expected set")]
    UnknownClient(String),
    #[error("client '{0}' sent two updates in one round")]
    DuplicateUpdate(String),
    #[error("update layout {got:#x} does not match the global layout {expected:#x}")]
    LayoutMismatch { expected: u64, got: u64 },
    #[error("receive timed out")]
    Timeout,
    #[error("round {round} timed out waiting for clients: {missing:?}")]
    RoundTimeout { round: u32, missing: Vec<String> },
    #[error("registration timed out; missing {missing:?}")]
    RegistrationTimeout { missing: Vec<String> },
    #[error("transport closed")]
    Disconnected,
    #[error("empty update set")]
    EmptyAggregation,
    #[error("non-positive sample weight from client '{0}'")]
    NonPositiveWeight(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("utf-8 in client id: {0}")]
    BadClientId(#[from] std::string::FromUtf8Error),
}

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("client '{client_id}' failed: {message}")]
    ClientFailed { client_id: String, message: String },
}

/// Protocol message kinds, in wire-tag order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageTag {
    Register = 1,
    Global = 2,
    Update = 3,
    Done = 4,
}

impl MessageTag {
    pub fn to_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            1 => Ok(MessageTag::Register),
            2 => Ok(MessageTag::Global),
            3 => Ok(MessageTag::Update),
            4 => Ok(MessageTag::Done),
            other => Err(ProtocolError::UnknownTag(other)),
        }
    }

    pub fn carries_payload(self) -> bool {
        matches!(self, MessageTag::Global | MessageTag::Update)
    }
}

/// One protocol message. `payload` is present iff the tag is GLOBAL or
/// UPDATE; `client_id` is meaningful on REGISTER and UPDATE; `n_samples`
/// is the window count reported with an UPDATE.
#[derive(Debug, Clone)]
pub struct RoundMessage {
    pub tag: MessageTag,
    pub round: u32,
    pub client_id: String,
    pub n_samples: u64,
    pub payload: Option<ParameterSet>,
}

impl RoundMessage {
    pub fn register(client_id: &str) -> Self {
        RoundMessage {
            tag: MessageTag::Register,
            round: 0,
            client_id: client_id.to_string(),
            n_samples: 0,
            payload: None,
        }
    }

    pub fn global(round: u32, params: ParameterSet) -> Self {
        RoundMessage {
            tag: MessageTag::Global,
            round,
            client_id: String::new(),
            n_samples: 0,
            payload: Some(params),
        }
    }

    pub fn update(round: u32, client_id: &str, n_samples: u64, params: ParameterSet) -> Self {
        RoundMessage {
            tag: MessageTag::Update,
            round,
            client_id: client_id.to_string(),
            n_samples,
            payload: Some(params),
        }
    }

    pub fn done(round: u32) -> Self {
        RoundMessage {
            tag: MessageTag::Done,
            round,
            client_id: String::new(),
            n_samples: 0,
            payload: None,
        }
    }

    /// Structural invariant: payload present exactly when the tag says so.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match (self.tag.carries_payload(), self.payload.is_some()) {
            (true, false) => Err(ProtocolError::MissingPayload { tag: self.tag }),
            (false, true) => Err(ProtocolError::UnexpectedPayload { tag: self.tag }),
            _ => Ok(()),
        }
    }
}
