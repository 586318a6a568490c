//! Participant feature sequences: CSV ingestion with six-annotator label
//! fusion, z-score normalization fitted on training folds only, windowing,
//! participant-wise fold planning, and a synthetic generator that emits the
//! same on-disk layout.
//!
//! On-disk layout:
//!   features/<participant>.csv      header `time_ms,au_1,...,au_F`
//!   labels/<participant>/<dim>_<k>.csv   header `time_ms,value`, k = 1..6,
//!                                        dim in {valence, arousal}
//! All files are frame-aligned; fused labels are the per-frame mean over the
//! six annotators.

use crate::tensor::{Rng, Tensor};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ANNOTATOR_COUNT: usize = 6;
pub const LABEL_DIMENSIONS: [&str; 2] = ["valence", "arousal"];
/// Default frame period for generated data (25 fps).
pub const DEFAULT_FRAME_PERIOD_MS: f64 = 40.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("frame count mismatch: {left_path} has {left} rows, {right_path} has {right}")]
    FrameCountMismatch {
        left_path: PathBuf,
        left: usize,
        right_path: PathBuf,
        right: usize,
    },
    #[error("participant {participant} frame {frame}: fused {dimension} {value} outside [-1, 1]")]
    LabelOutOfRange {
        participant: String,
        frame: usize,
        dimension: String,
        value: f64,
    },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("cannot split {participants} participants into {k} folds")]
    BadFoldCount { participants: usize, k: usize },
    #[error("window length and stride must be >= 1 (length {length}, stride {stride})")]
    BadWindow { length: usize, stride: usize },
    #[error("sequence for {participant} is invalid: {message}")]
    BadSequence {
        participant: String,
        message: String,
    },
}

/// One participant's frame-aligned features and fused labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub participant_id: String,
    /// N x F feature matrix.
    pub frames: Tensor,
    /// N x 2 (valence, arousal), each in [-1, 1].
    pub labels: Tensor,
    pub frame_period_ms: f64,
}

impl FeatureSequence {
    pub fn new(
        participant_id: String,
        frames: Tensor,
        labels: Tensor,
        frame_period_ms: f64,
    ) -> Result<Self, DataError> {
        let check = |ok: bool, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(DataError::BadSequence {
                    participant: participant_id.clone(),
                    message: message.to_string(),
                })
            }
        };
        check(frames.shape().len() == 2, "features must be rank 2")?;
        check(labels.shape().len() == 2, "labels must be rank 2")?;
        check(labels.shape()[1] == 2, "labels must have 2 columns")?;
        check(
            frames.shape()[0] == labels.shape()[0],
            "feature and label row counts differ",
        )?;
        check(
            frame_period_ms > 0.0 && frame_period_ms.is_finite(),
            "frame period must be positive",
        )?;
        for (i, &v) in labels.data().iter().enumerate() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(DataError::LabelOutOfRange {
                    participant: participant_id,
                    frame: i / 2,
                    dimension: LABEL_DIMENSIONS[i % 2].to_string(),
                    value: v,
                });
            }
        }
        Ok(FeatureSequence {
            participant_id,
            frames,
            labels,
            frame_period_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Partition of participant ids into k disjoint evaluation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<String>] {
        &self.folds
    }

    /// Participants held out for evaluation in fold `i`.
    pub fn eval_participants(&self, i: usize) -> &[String] {
        &self.folds[i]
    }

    /// All participants not in fold `i`, sorted.
    pub fn train_participants(&self, i: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        out.sort();
        out
    }
}

/// Seeded shuffle then round-robin assignment; deterministic for a fixed
/// seed stream.
pub fn plan_folds(participants: &[String], k: usize, rng: &mut Rng) -> Result<FoldPlan, DataError> {
    if k == 0 || k > participants.len() {
        return Err(DataError::BadFoldCount {
            participants: participants.len(),
            k,
        });
    }
    let mut order: Vec<String> = participants.to_vec();
    order.sort();
    rng.shuffle(&mut order);
    let mut folds = vec![Vec::new(); k];
    for (i, p) in order.into_iter().enumerate() {
        folds[i % k].push(p);
    }
    for fold in &mut folds {
        fold.sort();
    }
    Ok(FoldPlan { folds })
}

/// Per-feature mean/std fitted on training folds only. The participant list
/// records provenance so leakage can be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Sorted ids of the participants these moments were computed from.
    pub source_participants: Vec<String>,
}

impl NormalizationStats {
    /// Pass-through stats (mean 0, std 1) for runs without normalization.
    pub fn identity(feature_width: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; feature_width],
            std: vec![1.0; feature_width],
            source_participants: Vec::new(),
        }
    }
}

/// Fit per-feature z-score statistics over every frame of the training
/// sequences. Constant features (std < 1e-8) fall back to std 1.0.
pub fn fit_normalizer(train: &[&FeatureSequence]) -> Result<NormalizationStats, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyTrainingSet);
    }
    let f = train[0].feature_width();
    let mut mean = vec![0.0; f];
    let mut count = 0usize;
    for seq in train {
        for r in 0..seq.n_frames() {
            for (m, &v) in mean.iter_mut().zip(seq.frames.row(r)) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; f];
    for seq in train {
        for r in 0..seq.n_frames() {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(seq.frames.row(r)) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .into_iter()
        .map(|s| {
            let sd = (s / count as f64).sqrt();
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let mut source_participants: Vec<String> =
        train.iter().map(|s| s.participant_id.clone()).collect();
    source_participants.sort();
    Ok(NormalizationStats {
        mean,
        std,
        source_participants,
    })
}

/// Apply z-scoring to one sequence; labels are untouched.
pub fn apply_normalizer(stats: &NormalizationStats, seq: &FeatureSequence) -> FeatureSequence {
    let mut frames = seq.frames.clone();
    let f = seq.feature_width();
    assert_eq!(stats.mean.len(), f, "stats fitted on different width");
    for r in 0..seq.n_frames() {
        let row = frames.row_mut(r);
        for ((v, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    FeatureSequence {
        participant_id: seq.participant_id.clone(),
        frames,
        labels: seq.labels.clone(),
        frame_period_ms: seq.frame_period_ms,
    }
}

/// Slice a sequence into (features, labels) windows at offsets 0, stride,
/// 2*stride, ... A final shorter remainder is dropped; a sequence shorter
/// than one window yields no windows.
pub fn window(
    seq: &FeatureSequence,
    length: usize,
    stride: usize,
) -> Result<Vec<(Tensor, Tensor)>, DataError> {
    if length == 0 || stride == 0 {
        return Err(DataError::BadWindow { length, stride });
    }
    let n = seq.n_frames();
    let f = seq.feature_width();
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= n {
        let mut frames = Tensor::zeros(vec![length, f]);
        let mut labels = Tensor::zeros(vec![length, 2]);
        for r in 0..length {
            frames.row_mut(r).copy_from_slice(seq.frames.row(start + r));
            labels.row_mut(r).copy_from_slice(seq.labels.row(start + r));
        }
        out.push((frames, labels));
        start += stride;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64, DataError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| DataError::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse '{field}' as a number"),
        })
}

/// time_ms column plus per-row values of one annotator trace.
fn read_label_file(path: &Path) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    let mut reader = csv_reader(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if record.len() != 2 {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected 2 columns, got {}", record.len()),
            });
        }
        times.push(parse_float(path, line, &record[0])?);
        values.push(parse_float(path, line, &record[1])?);
    }
    Ok((times, values))
}

/// Load one participant: a feature CSV plus `labels_dir` holding the six
/// annotator files per dimension. Labels are fused by per-frame mean.
pub fn load_participant(
    features_path: &Path,
    labels_dir: &Path,
) -> Result<FeatureSequence, DataError> {
    let participant_id = features_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut reader = csv_reader(features_path)?;
    let width = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: features_path.to_path_buf(),
            source,
        })?
        .len()
        .saturating_sub(1);
    if width == 0 {
        return Err(DataError::Malformed {
            path: features_path.to_path_buf(),
            line: 1,
            message: "feature header needs time_ms plus at least one feature column".into(),
        });
    }
    let mut times = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|source| DataError::Csv {
            path: features_path.to_path_buf(),
            source,
        })?;
        if record.len() != width + 1 {
            return Err(DataError::Malformed {
                path: features_path.to_path_buf(),
                line,
                message: format!("expected {} columns, got {}", width + 1, record.len()),
            });
        }
        times.push(parse_float(features_path, line, &record[0])?);
        for field in record.iter().skip(1) {
            rows.push(parse_float(features_path, line, field)?);
        }
    }
    let n = times.len();
    if n == 0 {
        return Err(DataError::Malformed {
            path: features_path.to_path_buf(),
            line: 1,
            message: "no frames".into(),
        });
    }

    let mut fused = vec![0.0; n * 2];
    for (dim_idx, dim) in LABEL_DIMENSIONS.iter().enumerate() {
        let mut traces = Vec::with_capacity(ANNOTATOR_COUNT);
        for annotator in 1..=ANNOTATOR_COUNT {
            let path = labels_dir.join(format!("{dim}_{annotator}.csv"));
            let (_, values) = read_label_file(&path)?;
            if values.len() != n {
                return Err(DataError::FrameCountMismatch {
                    left_path: features_path.to_path_buf(),
                    left: n,
                    right_path: path,
                    right: values.len(),
                });
            }
            traces.push(values);
        }
        for frame in 0..n {
            // mean centered on the first annotator: exact when all agree
            let base = traces[0][frame];
            let mut devsum = 0.0;
            for trace in &traces {
                devsum += trace[frame] - base;
            }
            fused[frame * 2 + dim_idx] = base + devsum / ANNOTATOR_COUNT as f64;
        }
    }

    let frame_period_ms = if n >= 2 {
        times[1] - times[0]
    } else {
        DEFAULT_FRAME_PERIOD_MS
    };
    let frames = Tensor::new(vec![n, width], rows).expect("row count verified");
    let labels = Tensor::new(vec![n, 2], fused).expect("row count verified");
    FeatureSequence::new(participant_id, frames, labels, frame_period_ms)
}

/// Load every participant under `dir` (features/*.csv + labels/<id>/),
/// sorted by participant id.
pub fn load_dataset(dir: &Path) -> Result<Vec<FeatureSequence>, DataError> {
    let features_dir = dir.join("features");
    let mut paths: Vec<PathBuf> = fs::read_dir(&features_dir)
        .map_err(|source| DataError::Io {
            path: features_dir.clone(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push(load_participant(&path, &dir.join("labels").join(id))?);
    }
    Ok(out)
}

/// Write sequences in the ingestion layout. Each of the six annotator files
/// repeats the fused trace, so a round trip reproduces the labels exactly.
pub fn write_dataset(dir: &Path, seqs: &[FeatureSequence]) -> Result<(), DataError> {
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| io_err(&features_dir, e))?;
    for seq in seqs {
        let fpath = features_dir.join(format!("{}.csv", seq.participant_id));
        let mut out = String::new();
        out.push_str("time_ms");
        for j in 1..=seq.feature_width() {
            out.push_str(&format!(",au_{j}"));
        }
        out.push('\n');
        for r in 0..seq.n_frames() {
            out.push_str(&format!("{}", r as f64 * seq.frame_period_ms));
            for &v in seq.frames.row(r) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        let mut file = fs::File::create(&fpath).map_err(|e| io_err(&fpath, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| io_err(&fpath, e))?;

        let label_dir = dir.join("labels").join(&seq.participant_id);
        fs::create_dir_all(&label_dir).map_err(|e| io_err(&label_dir, e))?;
        for (dim_idx, dim) in LABEL_DIMENSIONS.iter().enumerate() {
            let mut trace = String::from("time_ms,value\n");
            for r in 0..seq.n_frames() {
                trace.push_str(&format!(
                    "{},{}\n",
                    r as f64 * seq.frame_period_ms,
                    seq.labels.get2(r, dim_idx)
                ));
            }
            for annotator in 1..=ANNOTATOR_COUNT {
                let lpath = label_dir.join(format!("{dim}_{annotator}.csv"));
                let mut file = fs::File::create(&lpath).map_err(|e| io_err(&lpath, e))?;
                file.write_all(trace.as_bytes())
                    .map_err(|e| io_err(&lpath, e))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Ground-truth functional behind a synthetic dataset: labels are
/// tanh(gain * <weights, trailing feature history>) plus small noise,
/// quantized to the 0.01 label grid.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub feature_width: usize,
    pub history_len: usize,
    /// history_len x F taps; row 0 weights the current frame.
    pub valence_weights: Tensor,
    pub arousal_weights: Tensor,
    pub valence_gain: f64,
    pub arousal_gain: f64,
    pub noise_amplitude: f64,
}

impl SyntheticOracle {
    /// Apply the noiseless generating functional to one sequence of frames.
    pub fn predict(&self, frames: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let n = frames.shape()[0];
        let mut valence = Vec::with_capacity(n);
        let mut arousal = Vec::with_capacity(n);
        for t in 0..n {
            let v = history_dot(frames, t, &self.valence_weights, self.history_len);
            let a = history_dot(frames, t, &self.arousal_weights, self.history_len);
            valence.push((self.valence_gain * v).tanh());
            arousal.push((self.arousal_gain * a).tanh());
        }
        (valence, arousal)
    }
}

fn history_dot(frames: &Tensor, t: usize, weights: &Tensor, history: usize) -> f64 {
    let f = frames.shape()[1];
    let mut acc = 0.0;
    for tau in 0..history {
        if tau > t {
            break; // history before the first frame is zero
        }
        let row = frames.row(t - tau);
        let w = weights.row(tau);
        for j in 0..f {
            acc += w[j] * row[j];
        }
    }
    acc
}

const SYNTH_FEATURES: usize = 40;
const SYNTH_LATENT: usize = 8;
const SYNTH_HISTORY: usize = 4;
const SYNTH_SMOOTHNESS: f64 = 0.97;
const SYNTH_NOISE: f64 = 0.015;
/// Target standard deviation of the pre-tanh activation.
const SYNTH_ACTIVATION_STD: f64 = 1.25;

/// Snap to the 0.01 label grid inside [-1, 1].
fn quantize_label(v: f64) -> f64 {
    (v.clamp(-1.0, 1.0) * 100.0).round() / 100.0
}

/// Generate format-compatible synthetic participants and expose the
/// generating functional for oracle checks.
///
/// Features are a smooth latent random walk pushed through a shared mixing
/// matrix; labels are a bounded functional of the trailing `SYNTH_HISTORY`
/// frames shared across participants, so held-out participants remain
/// predictable from features alone.
pub fn generate_synthetic_with_oracle(
    n_participants: usize,
    n_frames: usize,
    seed: u64,
) -> (Vec<FeatureSequence>, SyntheticOracle) {
    assert!(n_participants > 0 && n_frames > 0, "sizes must be positive");
    let mut rng = Rng::with_stream(seed, 0x53594E54); // "SYNT"
    let f = SYNTH_FEATURES;
    let l = SYNTH_LATENT;

    let mixing_scale = 1.0 / (l as f64).sqrt();
    let mut mixing = Tensor::zeros(vec![f, l]);
    for v in mixing.data_mut() {
        *v = rng.uniform(-1.0, 1.0) * mixing_scale;
    }
    let mut valence_weights = Tensor::zeros(vec![SYNTH_HISTORY, f]);
    let mut arousal_weights = Tensor::zeros(vec![SYNTH_HISTORY, f]);
    for v in valence_weights.data_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }
    for v in arousal_weights.data_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }

    // unit-variance AR(1) latent: var(u) = 1/3 for u ~ U[-1,1)
    let alpha = SYNTH_SMOOTHNESS;
    let beta = (3.0 * (1.0 - alpha * alpha)).sqrt();

    let mut all_frames = Vec::with_capacity(n_participants);
    for _ in 0..n_participants {
        let mut latent = vec![0.0; l];
        // burn-in toward the stationary distribution
        for _ in 0..50 {
            for s in latent.iter_mut() {
                *s = alpha * *s + beta * rng.uniform(-1.0, 1.0);
            }
        }
        let mut frames = Tensor::zeros(vec![n_frames, f]);
        for t in 0..n_frames {
            for s in latent.iter_mut() {
                *s = alpha * *s + beta * rng.uniform(-1.0, 1.0);
            }
            let row = frames.row_mut(t);
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                let mrow = mixing.row(j);
                for (&mw, &sv) in mrow.iter().zip(&latent) {
                    acc += mw * sv;
                }
                *v = acc + 0.02 * rng.uniform(-1.0, 1.0);
            }
        }
        all_frames.push(frames);
    }

    // calibrate gains so the tanh argument has a useful spread
    let gain_for = |weights: &Tensor| {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for frames in &all_frames {
            for t in 0..n_frames {
                let a = history_dot(frames, t, weights, SYNTH_HISTORY);
                sum += a;
                sum_sq += a * a;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        SYNTH_ACTIVATION_STD / var.sqrt().max(1e-12)
    };
    let valence_gain = gain_for(&valence_weights);
    let arousal_gain = gain_for(&arousal_weights);

    let oracle = SyntheticOracle {
        feature_width: f,
        history_len: SYNTH_HISTORY,
        valence_weights,
        arousal_weights,
        valence_gain,
        arousal_gain,
        noise_amplitude: SYNTH_NOISE,
    };

    let mut out = Vec::with_capacity(n_participants);
    for (p, frames) in all_frames.into_iter().enumerate() {
        let (valence, arousal) = oracle.predict(&frames);
        let mut labels = Tensor::zeros(vec![n_frames, 2]);
        for t in 0..n_frames {
            let row = labels.row_mut(t);
            row[0] = quantize_label(valence[t] + SYNTH_NOISE * rng.uniform(-1.0, 1.0));
            row[1] = quantize_label(arousal[t] + SYNTH_NOISE * rng.uniform(-1.0, 1.0));
        }
        out.push(
            FeatureSequence::new(format!("p{p:02}"), frames, labels, DEFAULT_FRAME_PERIOD_MS)
                .expect("generated labels are clamped"),
        );
    }
    (out, oracle)
}

/// Synthetic participants without the ground-truth oracle.
pub fn generate_synthetic(
    n_participants: usize,
    n_frames: usize,
    seed: u64,
) -> Vec<FeatureSequence> {
    generate_synthetic_with_oracle(n_participants, n_frames, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ccc;

    fn seq(id: &str, frames: Vec<Vec<f64>>, labels: Vec<Vec<f64>>) -> FeatureSequence {
        FeatureSequence::new(
            id.into(),
            Tensor::from_rows(frames).unwrap(),
            Tensor::from_rows(labels).unwrap(),
            40.0,
        )
        .unwrap()
    }

    #[test]
    fn sequence_rejects_out_of_range_labels() {
        let frames = Tensor::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let labels = Tensor::from_rows(vec![vec![0.0, 0.5], vec![1.2, 0.0]]).unwrap();
        let res = FeatureSequence::new("p".into(), frames, labels, 40.0);
        assert!(matches!(res, Err(DataError::LabelOutOfRange { .. })));
    }

    #[test]
    fn plan_folds_partitions_23_into_8() {
        let participants: Vec<String> = (0..23).map(|i| format!("p{i:02}")).collect();
        let plan = plan_folds(&participants, 8, &mut Rng::new(1)).unwrap();
        assert_eq!(plan.k(), 8);
        let mut all: Vec<String> = plan.folds().iter().flatten().cloned().collect();
        assert_eq!(all.len(), 23);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 23, "folds overlap");
        for fold in plan.folds() {
            assert!(
                fold.len() == 2 || fold.len() == 3,
                "fold size {} outside 2-3",
                fold.len()
            );
        }
    }

    #[test]
    fn plan_folds_singletons_and_determinism() {
        let participants: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
        let plan = plan_folds(&participants, 5, &mut Rng::new(3)).unwrap();
        assert!(plan.folds().iter().all(|f| f.len() == 1));
        let again = plan_folds(&participants, 5, &mut Rng::new(3)).unwrap();
        assert_eq!(plan, again);
        assert!(plan_folds(&participants, 6, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn train_participants_excludes_eval_fold() {
        let participants: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let plan = plan_folds(&participants, 3, &mut Rng::new(9)).unwrap();
        for i in 0..3 {
            let train = plan.train_participants(i);
            for p in plan.eval_participants(i) {
                assert!(!train.contains(p));
            }
            assert_eq!(train.len() + plan.eval_participants(i).len(), 6);
        }
    }

    #[test]
    fn normalizer_zscores_training_data() {
        let (seqs, _) = generate_synthetic_with_oracle(3, 200, 11);
        let refs: Vec<&FeatureSequence> = seqs.iter().collect();
        let stats = fit_normalizer(&refs).unwrap();
        let normalized: Vec<FeatureSequence> =
            seqs.iter().map(|s| apply_normalizer(&stats, s)).collect();
        let f = seqs[0].feature_width();
        let total: usize = seqs.iter().map(|s| s.n_frames()).sum();
        for j in 0..f {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for s in &normalized {
                for r in 0..s.n_frames() {
                    let v = s.frames.get2(r, j);
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / total as f64;
            let var = sum_sq / total as f64 - mean * mean;
            assert!(mean.abs() < 1e-10, "feature {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-10, "feature {j} std");
        }
    }

    #[test]
    fn normalizer_handles_constant_features() {
        let s = seq(
            "p",
            vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]],
            vec![vec![0.0, 0.0]; 3],
        );
        let stats = fit_normalizer(&[&s]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        let n = apply_normalizer(&stats, &s);
        for r in 0..3 {
            assert_eq!(n.frames.get2(r, 0), 0.0);
        }
    }

    #[test]
    fn normalizer_identity_on_standardized_data() {
        let (seqs, _) = generate_synthetic_with_oracle(2, 300, 4);
        let refs: Vec<&FeatureSequence> = seqs.iter().collect();
        let stats = fit_normalizer(&refs).unwrap();
        let normalized: Vec<FeatureSequence> =
            seqs.iter().map(|s| apply_normalizer(&stats, s)).collect();
        let refs2: Vec<&FeatureSequence> = normalized.iter().collect();
        let stats2 = fit_normalizer(&refs2).unwrap();
        let twice = apply_normalizer(&stats2, &normalized[0]);
        for (a, b) in twice.frames.data().iter().zip(normalized[0].frames.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fit_normalizer(&[]).is_err());
    }

    #[test]
    fn windowing_counts() {
        let s = seq(
            "p",
            (0..10).map(|i| vec![i as f64]).collect(),
            vec![vec![0.0, 0.0]; 10],
        );
        assert_eq!(window(&s, 10, 10).unwrap().len(), 1);
        let w = window(&s, 4, 4).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].0.get2(0, 0), 0.0);
        assert_eq!(w[1].0.get2(0, 0), 4.0);
        assert_eq!(w[1].0.get2(3, 0), 7.0);
        assert_eq!(window(&s, 11, 11).unwrap().len(), 0);
        assert!(window(&s, 0, 1).is_err());
        // total framed rows == count * length
        let w3 = window(&s, 3, 3).unwrap();
        assert_eq!(w3.len() * 3, 9);
    }

    #[test]
    fn window_count_for_long_sequences() {
        let n = 2000;
        let s = seq(
            "p",
            (0..n).map(|i| vec![i as f64]).collect(),
            vec![vec![0.0, 0.0]; n],
        );
        assert_eq!(window(&s, 600, 600).unwrap().len(), 3);
    }

    #[test]
    fn synthetic_labels_quantized_and_bounded() {
        let seqs = generate_synthetic(2, 150, 9);
        for s in &seqs {
            for &v in s.labels.data() {
                assert!((-1.0..=1.0).contains(&v));
                let snapped = (v * 100.0).round() / 100.0;
                assert_eq!(v, snapped, "label {v} off the 0.01 grid");
            }
        }
    }

    #[test]
    fn synthetic_is_seed_deterministic() {
        let a = generate_synthetic(3, 100, 21);
        let b = generate_synthetic(3, 100, 21);
        assert_eq!(a, b);
        let c = generate_synthetic(3, 100, 22);
        assert_ne!(a, c);
    }

    #[test]
    fn generating_functional_is_a_strong_oracle() {
        let (seqs, oracle) = generate_synthetic_with_oracle(4, 500, 7);
        for s in &seqs {
            let (pred_v, pred_a) = oracle.predict(&s.frames);
            let label_v: Vec<f64> = (0..s.n_frames()).map(|t| s.labels.get2(t, 0)).collect();
            let label_a: Vec<f64> = (0..s.n_frames()).map(|t| s.labels.get2(t, 1)).collect();
            let cv = ccc(&pred_v, &label_v).unwrap();
            let ca = ccc(&pred_a, &label_a).unwrap();
            assert!(cv > 0.95, "valence oracle ccc {cv}");
            assert!(ca > 0.95, "arousal oracle ccc {ca}");
        }
    }

    #[test]
    fn dataset_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = generate_synthetic(2, 80, 33);
        write_dataset(dir.path(), &seqs).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(seqs, loaded);
    }

    #[test]
    fn annotator_fusion_is_the_mean() {
        let dir = tempfile::tempdir().unwrap();
        let features = dir.path().join("features");
        fs::create_dir_all(&features).unwrap();
        fs::write(
            features.join("p.csv"),
            "time_ms,au_1,au_2\n0,1.0,2.0\n40,3.0,4.0\n",
        )
        .unwrap();
        let labels = dir.path().join("labels").join("p");
        fs::create_dir_all(&labels).unwrap();
        // six annotators; frame 0 values average to 0.35, frame 1 to -0.35
        let values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        for (k, v) in values.iter().enumerate() {
            fs::write(
                labels.join(format!("valence_{}.csv", k + 1)),
                format!("time_ms,value\n0,{v}\n40,{}\n", -v),
            )
            .unwrap();
            fs::write(
                labels.join(format!("arousal_{}.csv", k + 1)),
                "time_ms,value\n0,0.5\n40,0.5\n",
            )
            .unwrap();
        }
        let seq = load_participant(&features.join("p.csv"), &labels).unwrap();
        assert_eq!(seq.participant_id, "p");
        assert_eq!(seq.n_frames(), 2);
        assert!((seq.labels.get2(0, 0) - 0.35).abs() < 1e-12);
        assert!((seq.labels.get2(1, 0) + 0.35).abs() < 1e-12);
        assert_eq!(seq.labels.get2(0, 1), 0.5);
        assert_eq!(seq.frames.get2(1, 1), 4.0);
        assert_eq!(seq.frame_period_ms, 40.0);
    }

    #[test]
    fn identical_annotators_fuse_to_the_trace() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = generate_synthetic(1, 40, 2);
        write_dataset(dir.path(), &seqs).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded[0].labels, seqs[0].labels);
    }

    #[test]
    fn load_rejects_frame_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let features = dir.path().join("features");
        fs::create_dir_all(&features).unwrap();
        fs::write(features.join("p.csv"), "time_ms,au_1\n0,1.0\n40,2.0\n").unwrap();
        let labels = dir.path().join("labels").join("p");
        fs::create_dir_all(&labels).unwrap();
        for dim in LABEL_DIMENSIONS {
            for k in 1..=6 {
                // only one frame in the label files
                fs::write(
                    labels.join(format!("{dim}_{k}.csv")),
                    "time_ms,value\n0,0.1\n",
                )
                .unwrap();
            }
        }
        let res = load_participant(&features.join("p.csv"), &labels);
        assert!(matches!(res, Err(DataError::FrameCountMismatch { .. })));
    }

    #[test]
    fn load_rejects_malformed_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let features = dir.path().join("features");
        fs::create_dir_all(&features).unwrap();
        fs::write(features.join("p.csv"), "time_ms,au_1\n0,abc\n").unwrap();
        let res = load_participant(&features.join("p.csv"), &dir.path().join("labels/p"));
        assert!(matches!(res, Err(DataError::Malformed { .. })));
    }
}
