//! TCP transport speaking the framed wire format. The server accepts one
//! connection per expected client; every connection must open with a
//! REGISTER frame, which is forwarded to the server state machine through
//! the shared inbox so the protocol flow is identical to the simulated
//! transport.

use super::transport::{ClientTransport, ServerTransport};
use super::wire::{read_frame, write_frame};
use super::{MessageTag, ProtocolError, RoundMessage};
use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

pub struct TcpServerTransport {
    writers: BTreeMap<String, TcpStream>,
    inbox: mpsc::Receiver<Result<RoundMessage, ProtocolError>>,
}

impl TcpServerTransport {
    /// Bind `addr` and accept exactly `expected` client connections, each of
    /// which must send REGISTER as its first frame. Reader threads then pump
    /// all further frames into a shared inbox.
    pub fn accept<A: ToSocketAddrs>(
        addr: A,
        expected: usize,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        let (tx, inbox) = mpsc::channel();
        let mut writers = BTreeMap::new();
        let mut pending = Vec::new();

        while writers.len() < expected {
            if Instant::now() > deadline {
                return Err(ProtocolError::RegistrationTimeout {
                    missing: vec![format!("{} unidentified clients", expected - writers.len())],
                });
            }
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(timeout))?;
                    let first = read_frame(&mut stream)?;
                    if first.tag != MessageTag::Register {
                        return Err(ProtocolError::UnexpectedMessage {
                            tag: first.tag,
                            phase: "TCP accept",
                        });
                    }
                    let id = first.client_id.clone();
                    writers.insert(id, stream.try_clone()?);
                    pending.push((stream, first));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        for (mut stream, register) in pending {
            let tx = tx.clone();
            // forward the REGISTER, then pump frames until the peer closes
            let _ = tx.send(Ok(register));
            thread::spawn(move || loop {
                match read_frame(&mut stream) {
                    Ok(msg) => {
                        if tx.send(Ok(msg)).is_err() {
                            break;
                        }
                    }
                    Err(ProtocolError::Io(e))
                        if e.kind() == ErrorKind::UnexpectedEof
                            || e.kind() == ErrorKind::ConnectionReset =>
                    {
                        break;
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            });
        }

        Ok(TcpServerTransport { writers, inbox })
    }
}

impl ServerTransport for TcpServerTransport {
    fn broadcast(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError> {
        for stream in self.writers.values_mut() {
            write_frame(stream, msg)?;
        }
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError> {
        match self.inbox.recv_timeout(timeout) {
            Ok(result) => result,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(ProtocolError::Disconnected),
        }
    }
}

pub struct TcpClientTransport {
    stream: TcpStream,
}

impl TcpClientTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(TcpClientTransport { stream })
    }
}

impl ClientTransport for TcpClientTransport {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError> {
        write_frame(&mut self.stream, msg)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError> {
        self.stream.set_read_timeout(Some(timeout))?;
        match read_frame(&mut self.stream) {
            Ok(msg) => Ok(msg),
            Err(ProtocolError::Io(e))
                if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut =>
            {
                Err(ProtocolError::Timeout)
            }
            Err(e) => Err(e),
        }
    }
}
