//! Experiment lab for conditionality-aware adversarial training.
//!
//! Builds on [`contrario_core`] with everything that needs `std`: a small
//! deterministic CPU tensor/NN engine (patch discriminators and U-Net
//! generators with hand-written backprop), the seeded training loop, the
//! discriminator conditionality probe, synthetic paired datasets, metric
//! evaluation, checkpoint/config file formats, and the `contrario` CLI.
//!
//! Determinism contract: every operation that draws randomness takes an
//! explicit seeded RNG (or derives one from the run seed by stream name),
//! reductions happen in a fixed order, and parallelism is only applied
//! across disjoint output slices. Two runs with the same config and seed
//! produce bitwise-identical weights, curves, and artifacts.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod nets;
pub mod nn;
pub mod plot;
pub mod probe;
pub mod rng;
pub mod synth;
pub mod trainer;

mod error;

pub use error::{Error, Result};
