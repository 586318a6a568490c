//! Participant-wise k-fold cross validation over both training modes.
//!
//! Fold seeds derive from the experiment seed, so a central and a federated
//! run with the same config start every fold from identical weights; that is
//! what makes the one-client federated run reproduce the centralized run
//! bit for bit.

use super::report::RunReport;
use super::{ExperimentConfig, HarnessError, Mode};
use crate::data::{
    apply_normalizer, fit_normalizer, load_dataset, plan_folds, window, FeatureSequence, FoldPlan,
    NormalizationStats,
};
use crate::federation::run_federated_training;
use crate::metrics::{ccc, pearson, MetricReport};
use crate::nets::{forward, init_network, NetworkConfig, ParameterSet};
use crate::optim::AdamState;
use crate::tensor::{Rng, Tensor};
use crate::trainer::train_on_windows;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

const FOLD_PLAN_STREAM: u64 = 0x464F_4C44; // "FOLD"
const INIT_STREAM: u64 = 0x494E_4954; // "INIT"

/// Everything produced by one train/evaluate cycle.
#[derive(Debug)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub metrics: MetricReport,
    pub train_secs: f64,
    pub n_clients: usize,
    pub eval_participants: Vec<String>,
    pub train_participants: Vec<String>,
    pub model: ParameterSet,
    pub stats: NormalizationStats,
    /// Non-fatal issues, e.g. participants too short to yield any window.
    pub warnings: Vec<String>,
}

fn split_fold<'d>(
    data: &'d [FeatureSequence],
    plan: &FoldPlan,
    fold: usize,
) -> (Vec<&'d FeatureSequence>, Vec<&'d FeatureSequence>) {
    let eval_ids = plan.eval_participants(fold);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for seq in data {
        if eval_ids.contains(&seq.participant_id) {
            eval.push(seq);
        } else {
            train.push(seq);
        }
    }
    train.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    eval.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    (train, eval)
}

/// Prediction and label columns for one participant, in the order
/// (pred valence, pred arousal, label valence, label arousal).
type PredictionColumns = [Vec<f64>; 4];

/// Per-timestep predictions over all windows of the given sequences,
/// returned per dimension alongside the matching labels.
fn predict_windows(
    params: &ParameterSet,
    network: &NetworkConfig,
    seqs: &[&FeatureSequence],
    stats: &NormalizationStats,
    length: usize,
    stride: usize,
) -> Result<Vec<(String, PredictionColumns)>, HarnessError> {
    let mut out = Vec::new();
    for seq in seqs {
        let normalized = apply_normalizer(stats, seq);
        let mut pred_v = Vec::new();
        let mut pred_a = Vec::new();
        let mut label_v = Vec::new();
        let mut label_a = Vec::new();
        for (x, y) in window(&normalized, length, stride)? {
            let (y_hat, _) = forward(params, network, &x)?;
            for t in 0..x.shape()[0] {
                pred_v.push(y_hat.get2(t, 0));
                pred_a.push(y_hat.get2(t, 1));
                label_v.push(y.get2(t, 0));
                label_a.push(y.get2(t, 1));
            }
        }
        out.push((
            seq.participant_id.clone(),
            [pred_v, pred_a, label_v, label_a],
        ));
    }
    Ok(out)
}

/// Score a trained model on evaluation sequences. `per_participant` selects
/// between pooling all frames (default) and averaging per-participant CCC.
pub fn evaluate_model(
    params: &ParameterSet,
    network: &NetworkConfig,
    eval: &[&FeatureSequence],
    stats: &NormalizationStats,
    length: usize,
    stride: usize,
    per_participant: bool,
) -> Result<MetricReport, HarnessError> {
    let per_seq = predict_windows(params, network, eval, stats, length, stride)?;
    let total: usize = per_seq.iter().map(|(_, cols)| cols[0].len()).sum();
    if total < 2 {
        return Err(HarnessError::NoEvalFrames(format!(
            "{} frames across {} participants (window length {length})",
            total,
            eval.len()
        )));
    }
    if per_participant {
        let mut sums = [0.0; 4];
        let mut counted = 0usize;
        for (id, [pv, pa, lv, la]) in &per_seq {
            if pv.len() < 2 {
                return Err(HarnessError::NoEvalFrames(format!(
                    "participant {id} has {} evaluable frames",
                    pv.len()
                )));
            }
            sums[0] += ccc(pv, lv)?;
            sums[1] += ccc(pa, la)?;
            sums[2] += pearson(pv, lv)?;
            sums[3] += pearson(pa, la)?;
            counted += 1;
        }
        let n = counted as f64;
        Ok(MetricReport::new(
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n,
            total,
        )?)
    } else {
        let mut pooled: [Vec<f64>; 4] = Default::default();
        for (_, cols) in &per_seq {
            for (pool, col) in pooled.iter_mut().zip(cols) {
                pool.extend_from_slice(col);
            }
        }
        Ok(MetricReport::from_predictions(
            &pooled[0], &pooled[1], &pooled[2], &pooled[3],
        )?)
    }
}

/// Train and evaluate one fold in the configured mode.
pub fn run_single_fold(
    config: &ExperimentConfig,
    data: &[FeatureSequence],
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldOutcome, HarnessError> {
    config.validate()?;
    let (train, eval) = split_fold(data, plan, fold);
    if train.is_empty() || eval.is_empty() {
        return Err(HarnessError::TooFewParticipants {
            participants: data.len(),
            k: plan.k(),
        });
    }
    let train_ids: Vec<String> = train.iter().map(|s| s.participant_id.clone()).collect();
    let eval_ids: Vec<String> = eval.iter().map(|s| s.participant_id.clone()).collect();
    for id in &eval_ids {
        if train_ids.contains(id) {
            return Err(HarnessError::LeakageDetected(format!(
                "participant {id} appears in both train and eval sets"
            )));
        }
    }

    let stats = if config.normalize {
        fit_normalizer(&train)?
    } else {
        NormalizationStats::identity(train[0].feature_width())
    };
    // normalization must never see evaluation participants
    for id in &eval_ids {
        if stats.source_participants.contains(id) {
            return Err(HarnessError::LeakageDetected(format!(
                "normalization statistics include evaluation participant {id}"
            )));
        }
    }

    let length = config.window_length();
    let stride = config.stride();
    let mut init_rng = Rng::with_stream(config.seed, INIT_STREAM ^ fold as u64);
    let mut params = init_network(&config.network, &mut init_rng)?;

    let mut warnings = Vec::new();
    let mut note_short = |seq: &FeatureSequence, role: &str| {
        if seq.n_frames() < length {
            warnings.push(format!(
                "{role} participant {} has {} frames, shorter than one window of {length}",
                seq.participant_id,
                seq.n_frames()
            ));
        }
    };
    for seq in &train {
        note_short(seq, "training");
    }
    for seq in &eval {
        note_short(seq, "evaluation");
    }

    let started = Instant::now();
    let n_clients;
    match config.mode {
        Mode::Central => {
            let mut windows = Vec::new();
            for seq in &train {
                let normalized = apply_normalizer(&stats, seq);
                windows.extend(window(&normalized, length, stride)?);
            }
            let mut adam = AdamState::new(&params, config.network.learning_rate);
            train_on_windows(
                &mut params,
                &mut adam,
                &config.network,
                &windows,
                config.epochs,
            )?;
            n_clients = 1;
        }
        Mode::Federated => {
            let mut client_windows = BTreeMap::new();
            for seq in &train {
                let normalized = apply_normalizer(&stats, seq);
                client_windows.insert(
                    seq.participant_id.clone(),
                    window(&normalized, length, stride)?,
                );
            }
            n_clients = client_windows.len();
            let rounds = (config.epochs / config.epochs_per_round) as u32;
            params = run_federated_training(
                &config.network,
                &client_windows,
                params,
                rounds,
                config.epochs_per_round,
                config.aggregation,
                Duration::from_secs(config.round_timeout_secs),
                config.reset_optimizer_per_round,
            )?;
        }
    }
    let train_secs = started.elapsed().as_secs_f64();

    let metrics = evaluate_model(
        &params,
        &config.network,
        &eval,
        &stats,
        length,
        stride,
        config.ccc_per_participant,
    )?;

    Ok(FoldOutcome {
        fold_index: fold,
        metrics,
        train_secs,
        n_clients,
        eval_participants: eval_ids,
        train_participants: train_ids,
        model: params,
        stats,
        warnings,
    })
}

/// Run the full k-fold cross validation over in-memory data. Folds execute
/// on worker threads; per-fold determinism makes the schedule irrelevant.
pub fn run_cross_validation_on(
    config: &ExperimentConfig,
    data: &[FeatureSequence],
) -> Result<(RunReport, Vec<FoldOutcome>), HarnessError> {
    config.validate()?;
    let participants: Vec<String> = data.iter().map(|s| s.participant_id.clone()).collect();
    if config.k_folds < 2 || config.k_folds > participants.len() {
        return Err(HarnessError::TooFewParticipants {
            participants: participants.len(),
            k: config.k_folds,
        });
    }
    let wall_start = Instant::now();
    let mut plan_rng = Rng::with_stream(config.seed, FOLD_PLAN_STREAM);
    let plan = plan_folds(&participants, config.k_folds, &mut plan_rng)?;

    let mut outcomes: Vec<FoldOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.k_folds)
            .map(|fold| {
                let plan = &plan;
                scope.spawn(move || run_single_fold(config, data, plan, fold))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    outcomes.sort_by_key(|o| o.fold_index);

    let report = RunReport::new(
        config.clone(),
        &outcomes,
        wall_start.elapsed().as_secs_f64(),
    )?;
    Ok((report, outcomes))
}

/// Load the dataset named by the config and cross validate.
pub fn run_cross_validation(
    config: &ExperimentConfig,
) -> Result<(RunReport, Vec<FoldOutcome>), HarnessError> {
    let dir = config
        .data_dir
        .as_ref()
        .ok_or_else(|| HarnessError::Config("data_dir is required".into()))?;
    let data = load_dataset(dir)?;
    run_cross_validation_on(config, &data)
}

/// Build training windows for one participant the same way the harness does;
/// used by the standalone TCP client.
pub fn participant_windows(
    config: &ExperimentConfig,
    seq: &FeatureSequence,
    stats: &NormalizationStats,
) -> Result<Vec<(Tensor, Tensor)>, HarnessError> {
    let normalized = apply_normalizer(stats, seq);
    Ok(window(
        &normalized,
        config.window_length(),
        config.stride(),
    )?)
}
