//! End-to-end protocol tests over the simulated and TCP transports.

use fedseq_core::data::{generate_synthetic, window};
use fedseq_core::federation::{
    run_federated_training, sim_network, AggregationRule, ClientTransport, FederatedClient,
    FederatedServer, MessageTag, ProtocolError, RoundMessage, ServerPhase, ServerTransport,
    TcpClientTransport, TcpServerTransport,
};
use fedseq_core::nets::{init_network, CellKind, CellVariant, NetworkConfig, ParameterSet};
use fedseq_core::optim::AdamState;
use fedseq_core::tensor::{Rng, Tensor};
use fedseq_core::trainer::train_on_windows;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

fn small_net() -> NetworkConfig {
    NetworkConfig {
        cell: CellKind {
            variant: CellVariant::Gru,
            bidirectional: false,
        },
        input_size: 40,
        hidden_size: 8,
        num_layers: 1,
        fc_hidden: 10,
        outputs: 2,
        sequence_length: 25,
        learning_rate: 1e-3,
    }
}

fn participant_windows(seed: u64, n: usize) -> Vec<Vec<(Tensor, Tensor)>> {
    generate_synthetic(n, 100, seed)
        .iter()
        .map(|s| window(s, 25, 25).unwrap())
        .collect()
}

fn assert_bitwise_eq(a: &ParameterSet, b: &ParameterSet) {
    assert_eq!(a.layout_id(), b.layout_id());
    for ((name, ta), (_, tb)) in a.entries().iter().zip(b.entries()) {
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter {name} differs");
        }
    }
}

#[test]
fn single_client_federated_equals_centralized() {
    let config = small_net();
    let windows = participant_windows(3, 1).remove(0);
    let init = init_network(&config, &mut Rng::new(99)).unwrap();

    // centralized: 5 epochs straight through
    let mut central = init.clone();
    let mut adam = AdamState::new(&central, config.learning_rate);
    train_on_windows(&mut central, &mut adam, &config, &windows, 5).unwrap();

    // federated: 5 rounds x 1 epoch with a single client
    let mut client_windows = BTreeMap::new();
    client_windows.insert("solo".to_string(), windows);
    let global = run_federated_training(
        &config,
        &client_windows,
        init,
        5,
        1,
        AggregationRule::Mean,
        Duration::from_secs(30),
        false,
    )
    .unwrap();

    assert_bitwise_eq(&central, &global);
}

#[test]
fn identical_clients_match_solo_trajectory_every_round() {
    let config = small_net();
    let windows = participant_windows(11, 1).remove(0);
    let init = init_network(&config, &mut Rng::new(5)).unwrap();
    let rounds = 3u32;

    // solo trajectory, snapshotted after each epoch
    let mut solo = init.clone();
    let mut adam = AdamState::new(&solo, config.learning_rate);
    let mut snapshots = Vec::new();
    for _ in 0..rounds {
        train_on_windows(&mut solo, &mut adam, &config, &windows, 1).unwrap();
        snapshots.push(solo.clone());
    }

    // four clones driven round by round; inspect the global after each round
    let ids: Vec<String> = (0..4).map(|i| format!("clone{i}")).collect();
    let (server_transport, client_transports) = sim_network(&ids);
    std::thread::scope(|scope| {
        for (transport, id) in client_transports.into_iter().zip(&ids) {
            let mut client = FederatedClient::new(
                id.clone(),
                transport,
                config.clone(),
                windows.clone(),
                1,
                Duration::from_secs(30),
                false,
            );
            scope.spawn(move || client.run().unwrap());
        }
        let expected: BTreeSet<String> = ids.iter().cloned().collect();
        let mut server = FederatedServer::new(
            server_transport,
            init,
            expected,
            rounds,
            AggregationRule::Mean,
            Duration::from_secs(30),
        );
        server.wait_for_registration().unwrap();
        for snapshot in &snapshots {
            server.run_round().unwrap();
            assert_bitwise_eq(server.global(), snapshot);
        }
        assert_eq!(server.state().phase, ServerPhase::Finished);
    });
}

#[test]
fn stale_round_update_is_a_protocol_error() {
    let ids = vec!["a".to_string()];
    let (server_transport, mut client_transports) = sim_network(&ids);
    let config = small_net();
    let init = init_network(&config, &mut Rng::new(1)).unwrap();
    let mut server = FederatedServer::new(
        server_transport,
        init.clone(),
        ids.iter().cloned().collect(),
        2,
        AggregationRule::Mean,
        Duration::from_secs(2),
    );
    let mut client = client_transports.remove(0);
    client.send(&RoundMessage::register("a")).unwrap();
    server.wait_for_registration().unwrap();
    // respond to round 0 with a stale round number
    client.send(&RoundMessage::update(7, "a", 1, init)).unwrap();
    let err = server.run_round().unwrap_err();
    assert!(
        matches!(
            err,
            ProtocolError::StaleRound {
                expected: 0,
                got: 7,
                ..
            }
        ),
        "got {err:?}"
    );
}

#[test]
fn missing_client_aborts_round_after_timeout() {
    let ids = vec!["a".to_string(), "b".to_string()];
    let (server_transport, mut client_transports) = sim_network(&ids);
    let config = small_net();
    let init = init_network(&config, &mut Rng::new(1)).unwrap();
    let mut server = FederatedServer::new(
        server_transport,
        init.clone(),
        ids.iter().cloned().collect(),
        1,
        AggregationRule::Mean,
        Duration::from_millis(300),
    );
    let mut a = client_transports.remove(0);
    let mut b = client_transports.remove(0);
    a.send(&RoundMessage::register("a")).unwrap();
    b.send(&RoundMessage::register("b")).unwrap();
    server.wait_for_registration().unwrap();
    // only client a answers; b stays silent
    a.send(&RoundMessage::update(0, "a", 1, init)).unwrap();
    let err = server.run_round().unwrap_err();
    match err {
        ProtocolError::RoundTimeout { round: 0, missing } => {
            assert_eq!(missing, vec!["b".to_string()]);
        }
        other => panic!("expected RoundTimeout, got {other:?}"),
    }
}

#[test]
fn unknown_client_is_rejected_at_registration() {
    let ids = vec!["a".to_string()];
    let (server_transport, mut client_transports) = sim_network(&ids);
    let config = small_net();
    let init = init_network(&config, &mut Rng::new(1)).unwrap();
    let mut server = FederatedServer::new(
        server_transport,
        init,
        ["expected".to_string()].into_iter().collect(),
        1,
        AggregationRule::Mean,
        Duration::from_secs(1),
    );
    let mut c = client_transports.remove(0);
    c.send(&RoundMessage::register("a")).unwrap();
    assert!(matches!(
        server.wait_for_registration(),
        Err(ProtocolError::UnknownClient(_))
    ));
}

/// Transport wrapper that asserts every payload crossing the wire has the
/// model layout: weights travel, raw frames never do.
struct InspectingTransport<T> {
    inner: T,
    model_layout: u64,
    window_rows: usize,
}

impl<T> InspectingTransport<T> {
    fn check(&self, msg: &RoundMessage) {
        if let Some(payload) = &msg.payload {
            assert_eq!(
                payload.layout_id(),
                self.model_layout,
                "payload layout differs from the model layout"
            );
            for (name, tensor) in payload.entries() {
                assert_ne!(
                    tensor.shape().first().copied(),
                    Some(self.window_rows),
                    "{name} looks like a data window, not a weight"
                );
            }
        }
    }
}

impl<T: ServerTransport> ServerTransport for InspectingTransport<T> {
    fn broadcast(&mut self, msg: &RoundMessage) -> Result<(), ProtocolError> {
        self.check(msg);
        self.inner.broadcast(msg)
    }
    fn recv_timeout(&mut self, timeout: Duration) -> Result<RoundMessage, ProtocolError> {
        let msg = self.inner.recv_timeout(timeout)?;
        self.check(&msg);
        Ok(msg)
    }
}

#[test]
fn only_model_weights_cross_the_transport() {
    let config = small_net();
    let mut all = participant_windows(21, 2);
    let ids = vec!["p0".to_string(), "p1".to_string()];
    let (server_transport, client_transports) = sim_network(&ids);
    let init = init_network(&config, &mut Rng::new(2)).unwrap();
    let inspecting = InspectingTransport {
        model_layout: init.layout_id(),
        window_rows: 25,
        inner: server_transport,
    };
    std::thread::scope(|scope| {
        for (transport, id) in client_transports.into_iter().zip(&ids) {
            let windows = all.remove(0);
            let mut client = FederatedClient::new(
                id.clone(),
                transport,
                config.clone(),
                windows,
                1,
                Duration::from_secs(30),
                false,
            );
            scope.spawn(move || client.run().unwrap());
        }
        let mut server = FederatedServer::new(
            inspecting,
            init,
            ids.iter().cloned().collect(),
            2,
            AggregationRule::Mean,
            Duration::from_secs(30),
        );
        server.run().unwrap();
    });
}

#[test]
fn federated_run_is_deterministic_across_repeats() {
    let config = small_net();
    let participants = participant_windows(8, 3);
    let run = || {
        let mut client_windows = BTreeMap::new();
        for (i, w) in participants.iter().enumerate() {
            client_windows.insert(format!("p{i}"), w.clone());
        }
        let init = init_network(&config, &mut Rng::new(77)).unwrap();
        run_federated_training(
            &config,
            &client_windows,
            init,
            2,
            1,
            AggregationRule::Mean,
            Duration::from_secs(30),
            false,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_bitwise_eq(&a, &b);
}

/// Update arrival order must not matter: staggering client startup (so
/// registrations and updates arrive in a scrambled order) yields the same
/// global weights as the unstaggered run, to the bit.
#[test]
fn client_arrival_order_does_not_change_the_result() {
    let config = small_net();
    let participants = participant_windows(61, 3);
    let init = init_network(&config, &mut Rng::new(14)).unwrap();
    let run = |stagger: bool| {
        let ids: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let (server_transport, client_transports) = sim_network(&ids);
        std::thread::scope(|scope| {
            for (i, (transport, id)) in client_transports.into_iter().zip(&ids).enumerate() {
                let windows = participants[i].clone();
                let cfg = config.clone();
                let id = id.clone();
                scope.spawn(move || {
                    if stagger {
                        // reverse the natural startup order
                        std::thread::sleep(Duration::from_millis(60 * (3 - i as u64)));
                    }
                    let mut client = FederatedClient::new(
                        id,
                        transport,
                        cfg,
                        windows,
                        1,
                        Duration::from_secs(30),
                        false,
                    );
                    client.run().unwrap();
                });
            }
            let mut server = FederatedServer::new(
                server_transport,
                init.clone(),
                ids.iter().cloned().collect(),
                2,
                AggregationRule::Mean,
                Duration::from_secs(30),
            );
            server.run().unwrap()
        })
    };
    assert_bitwise_eq(&run(false), &run(true));
}

#[test]
fn weighted_mean_over_sim_transport() {
    let config = small_net();
    let mut all = participant_windows(31, 2);
    let mut client_windows = BTreeMap::new();
    client_windows.insert("p0".to_string(), all.remove(0));
    // second client has double the windows
    let mut doubled = all.remove(0);
    let extra = doubled.clone();
    doubled.extend(extra);
    client_windows.insert("p1".to_string(), doubled);
    let init = init_network(&config, &mut Rng::new(4)).unwrap();
    let global = run_federated_training(
        &config,
        &client_windows,
        init,
        1,
        1,
        AggregationRule::WeightedMean,
        Duration::from_secs(30),
        false,
    )
    .unwrap();
    assert!(global.is_finite());
}

#[test]
fn tcp_transport_runs_a_full_session() {
    let config = small_net();
    let mut all = participant_windows(44, 2);
    let init = init_network(&config, &mut Rng::new(3)).unwrap();

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener); // free the port for the transport to rebind

    let ids = vec!["alpha".to_string(), "beta".to_string()];
    let expected: BTreeSet<String> = ids.iter().cloned().collect();
    let init_for_server = init.clone();

    let server_handle = std::thread::spawn(move || {
        let transport = TcpServerTransport::accept(addr, 2, Duration::from_secs(20)).unwrap();
        let mut server = FederatedServer::new(
            transport,
            init_for_server,
            expected,
            2,
            AggregationRule::Mean,
            Duration::from_secs(20),
        );
        server.run().unwrap()
    });

    // give the listener a moment to bind
    std::thread::sleep(Duration::from_millis(200));
    let mut client_handles = Vec::new();
    for id in ids {
        let windows = all.remove(0);
        let cfg = config.clone();
        client_handles.push(std::thread::spawn(move || {
            let transport = TcpClientTransport::connect(addr, Duration::from_secs(20)).unwrap();
            let mut client = FederatedClient::new(
                id,
                transport,
                cfg,
                windows,
                1,
                Duration::from_secs(20),
                false,
            );
            client.run().unwrap();
        }));
    }
    let global = server_handle.join().unwrap();
    for handle in client_handles {
        handle.join().unwrap();
    }
    assert!(global.is_finite());
    assert_eq!(global.layout_id(), init.layout_id());
}

#[test]
fn tcp_matches_sim_transport_bitwise() {
    let config = small_net();
    let participants = participant_windows(55, 2);
    let init = init_network(&config, &mut Rng::new(6)).unwrap();

    // sim reference
    let mut client_windows = BTreeMap::new();
    client_windows.insert("a".to_string(), participants[0].clone());
    client_windows.insert("b".to_string(), participants[1].clone());
    let sim_global = run_federated_training(
        &config,
        &client_windows,
        init.clone(),
        3,
        1,
        AggregationRule::Mean,
        Duration::from_secs(30),
        false,
    )
    .unwrap();

    // same run over loopback TCP
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let expected: BTreeSet<String> = ["a".to_string(), "b".to_string()].into_iter().collect();
    let init_for_server = init.clone();
    let server_handle = std::thread::spawn(move || {
        let transport = TcpServerTransport::accept(addr, 2, Duration::from_secs(20)).unwrap();
        let mut server = FederatedServer::new(
            transport,
            init_for_server,
            expected,
            3,
            AggregationRule::Mean,
            Duration::from_secs(20),
        );
        server.run().unwrap()
    });
    std::thread::sleep(Duration::from_millis(200));
    let mut handles = Vec::new();
    for (id, windows) in [
        ("a", participants[0].clone()),
        ("b", participants[1].clone()),
    ] {
        let cfg = config.clone();
        handles.push(std::thread::spawn(move || {
            let transport = TcpClientTransport::connect(addr, Duration::from_secs(20)).unwrap();
            let mut client = FederatedClient::new(
                id.to_string(),
                transport,
                cfg,
                windows,
                1,
                Duration::from_secs(20),
                false,
            );
            client.run().unwrap();
        }));
    }
    let tcp_global = server_handle.join().unwrap();
    for h in handles {
        h.join().unwrap();
    }
    assert_bitwise_eq(&sim_global, &tcp_global);
}

#[test]
fn tcp_accept_rejects_garbage_bytes() {
    use std::io::Write;
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let handle =
        std::thread::spawn(move || TcpServerTransport::accept(addr, 1, Duration::from_secs(5)));
    std::thread::sleep(Duration::from_millis(200));
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    stream.write_all(b"GET / HTTP/1.1\r\n\r\n").unwrap();
    stream.flush().unwrap();
    match handle.join().unwrap() {
        Err(ProtocolError::BadMagic(_)) => {}
        Err(other) => panic!("expected BadMagic, got {other:?}"),
        Ok(_) => panic!("expected BadMagic, accept succeeded"),
    }
}

#[test]
fn client_rejects_global_with_different_layout() {
    let config = small_net();
    let windows = participant_windows(70, 1).remove(0);
    let ids = vec!["a".to_string()];
    let (mut server_transport, mut client_transports) = sim_network(&ids);
    let transport = client_transports.remove(0);
    let mut client = FederatedClient::new(
        "a".to_string(),
        transport,
        config.clone(),
        windows,
        1,
        Duration::from_secs(5),
        false,
    );
    let good = init_network(&config, &mut Rng::new(1)).unwrap();
    let mut other_cfg = config.clone();
    other_cfg.hidden_size = 16;
    let other = init_network(&other_cfg, &mut Rng::new(1)).unwrap();
    let handle = std::thread::spawn(move || {
        // first round trains fine, second global has a foreign layout
        let _ = client.run();
        client.state.round
    });
    let register = server_transport
        .recv_timeout(Duration::from_secs(5))
        .unwrap();
    assert_eq!(register.tag, MessageTag::Register);
    server_transport
        .broadcast(&RoundMessage::global(0, good))
        .unwrap();
    let update = server_transport
        .recv_timeout(Duration::from_secs(5))
        .unwrap();
    assert_eq!(update.tag, MessageTag::Update);
    server_transport
        .broadcast(&RoundMessage::global(1, other))
        .unwrap();
    // the client errors out instead of training on incompatible weights
    let last_round = handle.join().unwrap();
    assert_eq!(last_round, 0, "client should stop before adopting round 1");
}

#[test]
fn done_message_has_no_payload_and_tags_roundtrip() {
    for byte in 1..=4u8 {
        let tag = MessageTag::from_byte(byte).unwrap();
        assert_eq!(tag.to_byte(), byte);
    }
    assert!(MessageTag::from_byte(9).is_err());
    let done = RoundMessage::done(3);
    assert!(done.validate().is_ok());
    assert!(done.payload.is_none());
}
