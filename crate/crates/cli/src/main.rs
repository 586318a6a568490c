//! `fedseq` command line: central and federated training, a standalone TCP
//! client, model evaluation, synthetic data generation, and grid runs.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedseq_core::data::{
    generate_synthetic, load_dataset, load_participant, write_dataset, NormalizationStats,
};
use fedseq_core::federation::{
    FederatedClient, FederatedServer, TcpClientTransport, TcpServerTransport,
};
use fedseq_core::harness::{
    evaluate_model, load_checkpoint, load_config, participant_windows, render_report,
    run_cross_validation_on, save_checkpoint, time_inference, ExperimentConfig, Mode, ReportFormat,
    RunReport,
};
use fedseq_core::nets::{
    init_network, CellVariant, NetworkConfig, GRID_HIDDEN_SIZES, GRID_LEARNING_RATES,
};
use fedseq_core::tensor::Rng;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "fedseq",
    version,
    about = "Federated sequence regression for valence/arousal prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized k-fold cross validation on one machine.
    TrainCentral {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's data_dir.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the config's out_dir (reports and fold models).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text", value_parser = ["text", "csv", "jsonl"])]
        format: String,
    },
    /// Federated k-fold cross validation (sim) or a live TCP training run.
    TrainFederated {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text", value_parser = ["text", "csv", "jsonl"])]
        format: String,
        #[arg(long, default_value = "sim", value_parser = ["sim", "tcp"])]
        transport: String,
        /// Listen address for --transport tcp, e.g. 0.0.0.0:7878.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Join a TCP training run as one participant's local machine.
    Client {
        /// Server address, e.g. 127.0.0.1:7878.
        #[arg(long)]
        server: String,
        /// Participant id; data is read from <data>/features/<id>.csv.
        #[arg(long)]
        participant: String,
        #[arg(long)]
        data: PathBuf,
        /// Experiment config; must match the server's network settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a saved model checkpoint against a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "text", value_parser = ["text", "json"])]
        format: String,
    },
    /// Generate a synthetic dataset in the ingestion layout.
    GenSynthetic {
        #[arg(long)]
        participants: usize,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a hyper-parameter grid. By default runs the three published
    /// feature-branch optima; --paper-grid sweeps hidden size x learning
    /// rate for the configured cell instead.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        paper_grid: bool,
        /// Print the planned configurations without training.
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainCentral {
            config,
            data,
            out,
            format,
        } => train(&config, data, out, &format, Mode::Central, "sim", None),
        Command::TrainFederated {
            config,
            data,
            out,
            format,
            transport,
            listen,
        } => train(
            &config,
            data,
            out,
            &format,
            Mode::Federated,
            &transport,
            listen,
        ),
        Command::Client {
            server,
            participant,
            data,
            config,
        } => run_client(&server, &participant, &data, config.as_deref()),
        Command::Evaluate {
            model,
            data,
            format,
        } => evaluate(&model, &data, &format),
        Command::GenSynthetic {
            participants,
            frames,
            seed,
            out,
        } => {
            let seqs = generate_synthetic(participants, frames, seed);
            write_dataset(&out, &seqs)?;
            println!(
                "wrote {participants} participants x {frames} frames (seed {seed}) to {}",
                out.display()
            );
            Ok(())
        }
        Command::Grid {
            config,
            data,
            paper_grid,
            dry_run,
        } => run_grid(&config, data, paper_grid, dry_run),
    }
}

fn report_format(name: &str) -> ReportFormat {
    match name {
        "csv" => ReportFormat::Csv,
        "jsonl" => ReportFormat::JsonLines,
        _ => ReportFormat::TextTable,
    }
}

fn train(
    config_path: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    format: &str,
    mode: Mode,
    transport: &str,
    listen: Option<String>,
) -> Result<()> {
    let mut config = load_config(config_path)?;
    config.mode = mode;
    if let Some(dir) = data {
        config.data_dir = Some(dir);
    }
    if let Some(dir) = out {
        config.out_dir = Some(dir);
    }
    if mode == Mode::Federated && transport == "tcp" {
        let listen = listen.context("--transport tcp requires --listen <addr>")?;
        return serve_tcp(&config, &listen);
    }

    let data_dir = config
        .data_dir
        .clone()
        .context("data_dir required (config key data_dir or --data)")?;
    let dataset = load_dataset(&data_dir)?;
    let (mut report, outcomes) = run_cross_validation_on(&config, &dataset)?;

    if let Some(first) = outcomes.first() {
        report.inference_secs_100 = Some(time_inference(&first.model, &config.network, 100)?);
        report.inference_secs_500 = Some(time_inference(&first.model, &config.network, 500)?);
    }

    print!(
        "{}",
        String::from_utf8_lossy(&render_report(&report, report_format(format))?)
    );

    if let Some(out_dir) = &config.out_dir {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        std::fs::write(
            out_dir.join("report.jsonl"),
            render_report(&report, ReportFormat::JsonLines)?,
        )?;
        std::fs::write(
            out_dir.join("report.csv"),
            render_report(&report, ReportFormat::Csv)?,
        )?;
        for outcome in &outcomes {
            let path = out_dir.join(format!("model_fold{}.fsm", outcome.fold_index));
            save_checkpoint(&path, &config, &outcome.model, &outcome.stats)?;
        }
        println!("wrote reports and fold models to {}", out_dir.display());
    }
    Ok(())
}

/// One live federated training run: this process is the aggregation server,
/// each expected client connects with `fedseq client`.
fn serve_tcp(config: &ExperimentConfig, listen: &str) -> Result<()> {
    config.validate()?;
    if config.clients.is_empty() {
        bail!("TCP training needs the client roster (config key `clients = a,b,c`)");
    }
    let rounds = (config.epochs / config.epochs_per_round) as u32;
    let timeout = Duration::from_secs(config.round_timeout_secs);
    let mut rng = Rng::with_stream(config.seed, 0x494E_4954);
    let initial = init_network(&config.network, &mut rng)?;

    println!(
        "listening on {listen}; waiting for {} clients: {}",
        config.clients.len(),
        config.clients.join(", ")
    );
    let transport = TcpServerTransport::accept(listen, config.clients.len(), timeout)?;
    let expected: BTreeSet<String> = config.clients.iter().cloned().collect();
    let mut server = FederatedServer::new(
        transport,
        initial,
        expected,
        rounds,
        config.aggregation,
        timeout,
    );
    server.wait_for_registration()?;
    println!("all clients registered; running {rounds} rounds");
    use fedseq_core::federation::ServerPhase;
    while server.state().phase != ServerPhase::Finished {
        server.run_round()?;
        let round = server.state().round;
        if round % 10 == 0 || round as usize == rounds as usize {
            println!("  completed round {round}/{rounds}");
        }
    }
    let global = server.global().clone();

    let stats = NormalizationStats::identity(config.network.input_size);
    if let Some(out_dir) = &config.out_dir {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("model_tcp.fsm");
        save_checkpoint(&path, config, &global, &stats)?;
        println!("saved global model to {}", path.display());
    }
    if let Some(data_dir) = &config.data_dir {
        let dataset = load_dataset(data_dir)?;
        let refs: Vec<&_> = dataset.iter().collect();
        let metrics = evaluate_model(
            &global,
            &config.network,
            &refs,
            &stats,
            config.window_length(),
            config.stride(),
            config.ccc_per_participant,
        )?;
        println!(
            "evaluation on {}: valence CCC {:.4}, arousal CCC {:.4} ({} frames)",
            data_dir.display(),
            metrics.valence_ccc,
            metrics.arousal_ccc,
            metrics.n_frames
        );
    }
    Ok(())
}

fn run_client(
    server: &str,
    participant: &str,
    data: &Path,
    config_path: Option<&Path>,
) -> Result<()> {
    let config = match config_path {
        Some(path) => load_config(path)?,
        None => {
            println!("no --config given; using defaults (must match the server)");
            fedseq_core::harness::parse_config("")?
        }
    };
    let features = data.join("features").join(format!("{participant}.csv"));
    let labels = data.join("labels").join(participant);
    let seq = load_participant(&features, &labels)?;
    // TCP clients see only their own data, so no cross-participant
    // normalization is available; train on raw features.
    let stats = NormalizationStats::identity(seq.feature_width());
    let windows = participant_windows(&config, &seq, &stats)?;
    if windows.is_empty() {
        bail!(
            "participant {participant} has {} frames, shorter than one window of {}",
            seq.n_frames(),
            config.window_length()
        );
    }
    println!(
        "joining {server} as '{participant}' with {} windows of {} frames",
        windows.len(),
        config.window_length()
    );
    let timeout = Duration::from_secs(config.round_timeout_secs);
    let transport = TcpClientTransport::connect(server, timeout)?;
    let mut client = FederatedClient::new(
        participant.to_string(),
        transport,
        config.network.clone(),
        windows,
        config.epochs_per_round,
        timeout,
        config.reset_optimizer_per_round,
    );
    client.run()?;
    println!("server finished; client stopping");
    Ok(())
}

fn evaluate(model: &Path, data: &Path, format: &str) -> Result<()> {
    let (config, params, stats) = load_checkpoint(model)?;
    let dataset = load_dataset(data)?;
    let refs: Vec<&_> = dataset.iter().collect();
    let metrics = evaluate_model(
        &params,
        &config.network,
        &refs,
        &stats,
        config.window_length(),
        config.stride(),
        config.ccc_per_participant,
    )?;
    if format == "json" {
        println!("{}", serde_json::to_string(&metrics)?);
    } else {
        println!(
            "{} on {}: valence CCC {:.4} (r {:.4}), arousal CCC {:.4} (r {:.4}), {} frames",
            config.network.cell.label(),
            data.display(),
            metrics.valence_ccc,
            metrics.valence_pearson,
            metrics.arousal_ccc,
            metrics.arousal_pearson,
            metrics.n_frames
        );
    }
    Ok(())
}

fn run_grid(
    config_path: &Path,
    data: Option<PathBuf>,
    paper_grid: bool,
    dry_run: bool,
) -> Result<()> {
    let mut base = load_config(config_path)?;
    if let Some(dir) = data {
        base.data_dir = Some(dir);
    }
    let mut candidates: Vec<NetworkConfig> = Vec::new();
    if paper_grid {
        // sweep the admissible hidden sizes and learning rates for the
        // configured cell
        for &hidden in GRID_HIDDEN_SIZES {
            for &lr in GRID_LEARNING_RATES {
                let mut network = base.network.clone();
                network.hidden_size = hidden;
                network.learning_rate = lr;
                candidates.push(network);
            }
        }
    } else {
        // published feature-branch optima, one per network family
        let mut bigru = base.network.clone();
        bigru.cell.variant = CellVariant::Gru;
        bigru.cell.bidirectional = true;
        bigru.learning_rate = 1e-4;
        bigru.sequence_length = 600;
        bigru.hidden_size = 512;
        bigru.num_layers = 6;
        let mut bilstm = bigru.clone();
        bilstm.cell.variant = CellVariant::Lstm;
        bilstm.hidden_size = 128;
        let mut rnn = base.network.clone();
        rnn.cell.variant = CellVariant::SimpleRnn;
        rnn.cell.bidirectional = false;
        rnn.learning_rate = 1e-4;
        rnn.sequence_length = 2000;
        rnn.hidden_size = 128;
        rnn.num_layers = 2;
        candidates.extend([bigru, bilstm, rnn]);
    }

    println!(
        "{} configurations ({}):",
        candidates.len(),
        if paper_grid {
            "hidden x lr sweep"
        } else {
            "published optima"
        }
    );
    for network in &candidates {
        println!(
            "  {} hidden={} lr={} seq={} layers={}",
            network.cell.label(),
            network.hidden_size,
            network.learning_rate,
            network.sequence_length,
            network.num_layers
        );
    }
    if dry_run {
        return Ok(());
    }

    let data_dir = base
        .data_dir
        .clone()
        .context("data_dir required (config key data_dir or --data)")?;
    let dataset = load_dataset(&data_dir)?;
    let mut results: Vec<RunReport> = Vec::new();
    for network in candidates {
        let mut config = base.clone();
        config.network = network;
        let (report, _) = run_cross_validation_on(&config, &dataset)?;
        println!(
            "{:<8} hidden={:<4} lr={:<8} -> valence {:.4}, arousal {:.4} ({:.1}s train)",
            report.network,
            report.config.network.hidden_size,
            report.config.network.learning_rate,
            report.mean_valence_ccc,
            report.mean_arousal_ccc,
            report.total_train_secs
        );
        results.push(report);
    }
    if let Some(best) = results.iter().max_by(|a, b| {
        let ka = a.mean_valence_ccc + a.mean_arousal_ccc;
        let kb = b.mean_valence_ccc + b.mean_arousal_ccc;
        ka.partial_cmp(&kb).unwrap()
    }) {
        println!(
            "best: {} hidden={} lr={} (valence {:.4}, arousal {:.4})",
            best.network,
            best.config.network.hidden_size,
            best.config.network.learning_rate,
            best.mean_valence_ccc,
            best.mean_arousal_ccc
        );
    }
    Ok(())
}
