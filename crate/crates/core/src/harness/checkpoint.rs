//! Model checkpoints: a config header in the flat key-value schema, then
//! the trained weights and the normalization statistics, both in the wire
//! serialization so a round trip is bit-exact.
//!
//! Layout: [8B magic "FSMODEL1"] [u32 LE config length][config text]
//!         [u64 LE weights length][weights blob]
//!         [u64 LE stats length][stats blob]

use super::{parse_config, render_config, ExperimentConfig, HarnessError};
use crate::data::NormalizationStats;
use crate::federation::{decode_parameter_set, encode_parameter_set};
use crate::nets::ParameterSet;
use crate::tensor::Tensor;
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSMODEL1";

fn stats_to_params(stats: &NormalizationStats) -> ParameterSet {
    let f = stats.mean.len();
    ParameterSet::from_entries(vec![
        (
            "norm.mean".to_string(),
            Tensor::new(vec![f], stats.mean.clone()).expect("stats width"),
        ),
        (
            "norm.std".to_string(),
            Tensor::new(vec![f], stats.std.clone()).expect("stats width"),
        ),
    ])
    .expect("fixed names")
}

fn params_to_stats(params: &ParameterSet) -> Result<NormalizationStats, HarnessError> {
    let mean = params
        .get("norm.mean")
        .ok_or_else(|| HarnessError::BadCheckpoint("missing norm.mean".into()))?;
    let std = params
        .get("norm.std")
        .ok_or_else(|| HarnessError::BadCheckpoint("missing norm.std".into()))?;
    Ok(NormalizationStats {
        mean: mean.data().to_vec(),
        std: std.data().to_vec(),
        source_participants: Vec::new(),
    })
}

pub fn save_checkpoint(
    path: &Path,
    config: &ExperimentConfig,
    params: &ParameterSet,
    stats: &NormalizationStats,
) -> Result<(), HarnessError> {
    let config_text = render_config(config);
    let weights = encode_parameter_set(params)?;
    let stats_blob = encode_parameter_set(&stats_to_params(stats))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    out.extend_from_slice(&weights);
    out.extend_from_slice(&(stats_blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&stats_blob);
    std::fs::write(path, out).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(ExperimentConfig, ParameterSet, NormalizationStats), HarnessError> {
    let bytes = std::fs::read(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |msg: &str| HarnessError::BadCheckpoint(msg.to_string());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a fedseq model file"));
    }
    let mut pos = 8;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], HarnessError> {
        if *pos + n > bytes.len() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let config_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let config_text = std::str::from_utf8(take(&mut pos, config_len)?)
        .map_err(|_| bad("config header is not utf-8"))?
        .to_string();
    let weights_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let weights = decode_parameter_set(take(&mut pos, weights_len)?)?;
    let stats_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let stats = params_to_stats(&decode_parameter_set(take(&mut pos, stats_len)?)?)?;
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let config = parse_config(&config_text)?;
    Ok((config, weights, stats))
}
