//! Paired data and the a-contrario pairing engine.
//!
//! A conditional discriminator is trained on `(condition, target)` pairs.
//! The a-contrario construction manufactures adverse examples by deranging
//! the conditions within a batch: every target keeps its position while its
//! condition is replaced by another sample's condition, so each adverse pair
//! is mismatched by index and the condition multiset is conserved.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// One conditionally paired training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<X, Y> {
    pub condition: X,
    pub target: Y,
    pub sample_id: String,
}

impl<X, Y> PairedSample<X, Y> {
    pub fn new(condition: X, target: Y, sample_id: impl Into<String>) -> Self {
        Self { condition, target, sample_id: sample_id.into() }
    }
}

/// The four data pairings presented to the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PairingKind {
    /// `(x, y)` — a real target with its own condition.
    RealConditional,
    /// `(x, G(x))` — a generated target with the condition it was generated from.
    GeneratedConditional,
    /// `(x̃, y)` — a real target with a deranged condition.
    RealAContrario,
    /// `(x̃, G(x))` — a generated target with a deranged condition.
    GeneratedAContrario,
}

impl PairingKind {
    pub const ALL: [PairingKind; 4] = [
        PairingKind::RealConditional,
        PairingKind::GeneratedConditional,
        PairingKind::RealAContrario,
        PairingKind::GeneratedAContrario,
    ];

    /// Stable lowercase identifier used in file formats and reports.
    pub fn label(self) -> &'static str {
        match self {
            PairingKind::RealConditional => "real_conditional",
            PairingKind::GeneratedConditional => "generated_conditional",
            PairingKind::RealAContrario => "real_acontrario",
            PairingKind::GeneratedAContrario => "generated_acontrario",
        }
    }

    /// Only the real-conditional pairing is a "true" example for the discriminator.
    pub fn is_true_pairing(self) -> bool {
        matches!(self, PairingKind::RealConditional)
    }

    pub fn index(self) -> usize {
        match self {
            PairingKind::RealConditional => 0,
            PairingKind::GeneratedConditional => 1,
            PairingKind::RealAContrario => 2,
            PairingKind::GeneratedAContrario => 3,
        }
    }
}

/// A value per [`PairingKind`], indexed by kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerKind<T> {
    pub real_conditional: T,
    pub generated_conditional: T,
    pub real_acontrario: T,
    pub generated_acontrario: T,
}

impl<T> PerKind<T> {
    pub fn get(&self, kind: PairingKind) -> &T {
        match kind {
            PairingKind::RealConditional => &self.real_conditional,
            PairingKind::GeneratedConditional => &self.generated_conditional,
            PairingKind::RealAContrario => &self.real_acontrario,
            PairingKind::GeneratedAContrario => &self.generated_acontrario,
        }
    }

    pub fn get_mut(&mut self, kind: PairingKind) -> &mut T {
        match kind {
            PairingKind::RealConditional => &mut self.real_conditional,
            PairingKind::GeneratedConditional => &mut self.generated_conditional,
            PairingKind::RealAContrario => &mut self.real_acontrario,
            PairingKind::GeneratedAContrario => &mut self.generated_acontrario,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerKind<U> {
        PerKind {
            real_conditional: f(&self.real_conditional),
            generated_conditional: f(&self.generated_conditional),
            real_acontrario: f(&self.real_acontrario),
            generated_acontrario: f(&self.generated_acontrario),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PairingKind, &T)> {
        PairingKind::ALL.iter().map(move |&k| (k, self.get(k)))
    }
}

/// Fixed-point-free index permutation of length `n`.
///
/// The permutation is a uniformly drawn non-zero cyclic shift: `pi[i] =
/// (i + c) % n` with `c` uniform in `1..n`. Every such shift is a
/// derangement, which is all the a-contrario construction requires
/// (`x̃_i != x_i` by index for every position).
pub fn derange_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::NoDerangement { n });
    }
    let shift = rng.gen_range(1..n);
    Ok((0..n).map(|i| (i + shift) % n).collect())
}

/// An a-contrario batch: targets in original order, conditions deranged.
#[derive(Debug, Clone)]
pub struct AContrarioBatch<X, Y> {
    /// `(x̃_i, y_i)` pairs; `x̃_i` is the condition of sample `permutation[i]`.
    pub pairs: Vec<(X, Y)>,
    /// The derangement used, recorded for audit.
    pub permutation: Vec<usize>,
    /// `true` where the deranged condition is content-equal to the original
    /// one (duplicate conditions in the batch), so the pair is adverse by
    /// index but not by content.
    pub duplicate_flags: Vec<bool>,
}

/// Derange the conditions of a batch while keeping targets in place.
pub fn make_acontrario_batch<X, Y, R>(
    batch: &[PairedSample<X, Y>],
    rng: &mut R,
) -> Result<AContrarioBatch<X, Y>>
where
    X: Clone + PartialEq,
    Y: Clone,
    R: Rng + ?Sized,
{
    let permutation = derange_indices(batch.len(), rng)?;
    let duplicate_flags = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| batch[j].condition == batch[i].condition)
        .collect();
    let pairs = permutation
        .iter()
        .zip(batch)
        .map(|(&j, sample)| (batch[j].condition.clone(), sample.target.clone()))
        .collect();
    Ok(AContrarioBatch { pairs, permutation, duplicate_flags })
}

/// Aligned sub-batches for all four pairings, sharing one derangement.
#[derive(Debug, Clone)]
pub struct FourPairingsBatch<X, Y> {
    pub real_conditional: Vec<(X, Y)>,
    pub generated_conditional: Vec<(X, Y)>,
    pub real_acontrario: Vec<(X, Y)>,
    pub generated_acontrario: Vec<(X, Y)>,
    pub permutation: Vec<usize>,
    pub duplicate_flags: Vec<bool>,
}

impl<X, Y> FourPairingsBatch<X, Y> {
    pub fn batch_size(&self) -> usize {
        self.real_conditional.len()
    }

    pub fn kind(&self, kind: PairingKind) -> &[(X, Y)] {
        match kind {
            PairingKind::RealConditional => &self.real_conditional,
            PairingKind::GeneratedConditional => &self.generated_conditional,
            PairingKind::RealAContrario => &self.real_acontrario,
            PairingKind::GeneratedAContrario => &self.generated_acontrario,
        }
    }
}

/// Assemble the four pairings from a real batch and the generator outputs
/// for the same conditions (index-aligned). One derangement is drawn and
/// shared by both a-contrario sub-batches.
pub fn assemble_pairings<X, Y, R>(
    real_batch: &[PairedSample<X, Y>],
    generated_targets: &[Y],
    rng: &mut R,
) -> Result<FourPairingsBatch<X, Y>>
where
    X: Clone + PartialEq,
    Y: Clone,
    R: Rng + ?Sized,
{
    if real_batch.len() != generated_targets.len() {
        return Err(Error::LengthMismatch {
            what: "assemble_pairings",
            left: real_batch.len(),
            right: generated_targets.len(),
        });
    }
    let ac = make_acontrario_batch(real_batch, rng)?;
    let real_conditional = real_batch
        .iter()
        .map(|s| (s.condition.clone(), s.target.clone()))
        .collect();
    let generated_conditional = real_batch
        .iter()
        .zip(generated_targets)
        .map(|(s, g)| (s.condition.clone(), g.clone()))
        .collect();
    let generated_acontrario = ac
        .permutation
        .iter()
        .zip(generated_targets)
        .map(|(&j, g)| (real_batch[j].condition.clone(), g.clone()))
        .collect();
    Ok(FourPairingsBatch {
        real_conditional,
        generated_conditional,
        real_acontrario: ac.pairs,
        generated_acontrario,
        permutation: ac.permutation,
        duplicate_flags: ac.duplicate_flags,
    })
}
