//! Inference timing: wall time to run the forward pass over a number of
//! frames, reported as the median of five repetitions. Frames are processed
//! in windows of the configured sequence length.

use super::HarnessError;
use crate::nets::{forward, NetworkConfig, ParameterSet};
use crate::tensor::Rng;
use std::time::Instant;

pub fn time_inference(
    params: &ParameterSet,
    network: &NetworkConfig,
    n_frames: usize,
) -> Result<f64, HarnessError> {
    if n_frames == 0 {
        return Ok(0.0);
    }
    let mut rng = Rng::new(0x7131);
    let mut chunks = Vec::new();
    let mut remaining = n_frames;
    while remaining > 0 {
        let t = remaining.min(network.sequence_length);
        chunks.push(crate::tensor::uniform_init(
            &mut rng,
            vec![t, network.input_size],
            -1.0,
            1.0,
        )?);
        remaining -= t;
    }
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let start = Instant::now();
        for chunk in &chunks {
            let (y, _) = forward(params, network, chunk)?;
            std::hint::black_box(y.data()[0]);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(times[2])
}
