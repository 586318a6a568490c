//! Transport abstraction plus the in-process simulated transport.

use super::{ProtocolError, RoundMessage};
use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Duration;

/// Server side of a transport: broadcast to every client, receive from any.
pub trait ServerTransport: Send {
    /// Deliver to all clients in sorted client-id order.
    fn broadcast(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError>;
}

/// Client side of a transport.
pub trait ClientTransport: Send {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError>;
}

/// Simulated server endpoint: one shared inbox, one queue per client.
pub struct SimServerTransport {
    inbox: mpsc::Receiver<RoundMessage>,
    outboxes: BTreeMap<String, mpsc::Sender<RoundMessage>>,
}

/// Simulated client endpoint.
pub struct SimClientTransport {
    to_server: mpsc::Sender<RoundMessage>,
    from_server: mpsc::Receiver<RoundMessage>,
}

/// Build a star network between one server and the named clients. Returned
/// client endpoints are in the same order as `client_ids`.
pub fn sim_network(client_ids: &[String]) -> (SimServerTransport, Vec<SimClientTransport>) {
    let (to_server, inbox) = mpsc::channel();
    let mut outboxes = BTreeMap::new();
    let mut clients = Vec::with_capacity(client_ids.len());
    for id in client_ids {
        let (tx, rx) = mpsc::channel();
        outboxes.insert(id.clone(), tx);
        clients.push(SimClientTransport {
            to_server: to_server.clone(),
            from_server: rx,
        });
    }
    (SimServerTransport { inbox, outboxes }, clients)
}

fn map_recv(err: mpsc::RecvTimeoutError) -> ProtocolError {
    match err {
        mpsc::RecvTimeoutError::Timeout => ProtocolError::Timeout,
        mpsc::RecvTimeoutError::Disconnected => ProtocolError::Disconnected,
    }
}

impl ServerTransport for SimServerTransport {
    fn broadcast(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError> {
        msg.validate()?;
        for sender in self.outboxes.values() {
            sender
                .send(msg.clone())
                .map_err(|_| ProtocolError::Disconnected)?;
        }
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError> {
        self.inbox.recv_timeout(timeout).map_err(map_recv)
    }
}

impl ClientTransport for SimClientTransport {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError> {
        msg.validate()?;
        self.to_server
            .send(msg.clone())
            .map_err(|_| ProtocolError::Disconnected)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError> {
        self.from_server.recv_timeout(timeout).map_err(map_recv)
    }
}
