//! Conditionality-aware adversarial training primitives.
//!
//! This crate holds the pure algorithmic pieces of the toolkit: the
//! a-contrario pairing engine, the adversarial loss family (BCE and hinge
//! variants, with analytic gradients w.r.t. raw discriminator scores), the
//! closed-form optimal-discriminator oracles, and the evaluation metrics
//! (segmentation scores, depth error family, response histograms, NDB).
//!
//! Everything here is `no_std` + `alloc`: no IO, no threads, no global
//! state. Randomness enters only through explicitly passed [`rand::Rng`]
//! sources, so every operation is reproducible given a seeded generator.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod depth;
pub mod histogram;
pub mod loss;
pub mod ndb;
pub mod oracle;
pub mod pairing;
pub mod seg;

mod error;
mod math;

pub use error::{Error, Result};
pub use pairing::{FourPairingsBatch, PairedSample, PairingKind, PerKind};
