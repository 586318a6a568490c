//! Federated sequence regression on per-participant feature sequences.
//!
//! The crate trains recurrent networks (simple RNN, GRU, LSTM, optionally
//! bidirectional and stacked) to predict continuous valence/arousal traces
//! from fixed-width feature vectors, either centrally or through synchronous
//! federated rounds that average client weights on a parameter server. All
//! numerics are plain `f64` with hand-written BPTT and Adam, seeded for
//! bit-reproducible runs; evaluation uses the Concordance Correlation
//! Coefficient under participant-wise k-fold cross validation.

pub mod data;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod trainer;
