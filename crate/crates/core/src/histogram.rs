//! Response-distribution analysis for the conditionality probe.
//!
//! The probe collects the discriminator's raw last-layer scores per pairing
//! kind; this module turns those samples into shared-edge histograms,
//! per-kind statistics, classification rates at a raw-score threshold, and
//! mode-separation statistics between kind pairs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{abs, mean, sample_var, sqrt};
use crate::pairing::PairingKind;

/// Flat raw-score samples for one pairing kind (one value per patch cell per
/// sample).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResponseSamples {
    pub kind: PairingKind,
    pub values: Vec<f64>,
    /// Identifier of the run/checkpoint the responses came from.
    pub source: String,
}

impl ResponseSamples {
    pub fn new(kind: PairingKind, values: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty(kind.label()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response sample"));
        }
        Ok(Self { kind, values, source: source.into() })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KindStats {
    pub kind: PairingKind,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Fraction of values strictly above the report threshold.
    pub rate_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KindHistogram {
    pub kind: PairingKind,
    pub counts: Vec<u64>,
    pub stats: KindStats,
}

/// Mode-separation statistic between two kinds:
/// `|mean_a - mean_b| / pooled_std`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeparationStat {
    pub a: PairingKind,
    pub b: PairingKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistogramReport {
    /// Shared strictly increasing bin edges (length `n_bins + 1`).
    pub edges: Vec<f64>,
    /// Raw-score threshold used for the classification rates.
    pub threshold: f64,
    pub kinds: Vec<KindHistogram>,
    pub separations: Vec<SeparationStat>,
    /// Set when all values were identical and the report fell back to a
    /// single bin.
    pub degenerate: bool,
}

fn check_samples(samples: &[ResponseSamples]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("response samples"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.values.is_empty() {
            return Err(Error::Empty(s.kind.label()));
        }
        if samples[..i].iter().any(|other| other.kind == s.kind) {
            return Err(Error::InvalidParameter("duplicate pairing kind in samples"));
        }
    }
    Ok(())
}

/// Fraction of values classified "true" (strictly above `threshold`) per kind.
pub fn classification_rates(
    samples: &[ResponseSamples],
    threshold: f64,
) -> Result<Vec<(PairingKind, f64)>> {
    check_samples(samples)?;
    Ok(samples
        .iter()
        .map(|s| {
            let above = s.values.iter().filter(|&&v| v > threshold).count();
            (s.kind, above as f64 / s.values.len() as f64)
        })
        .collect())
}

fn kind_stats(s: &ResponseSamples, threshold: f64) -> KindStats {
    let mu = mean(&s.values);
    let var = sample_var(&s.values, mu);
    let above = s.values.iter().filter(|&&v| v > threshold).count();
    KindStats {
        kind: s.kind,
        count: s.values.len(),
        mean: mu,
        std: sqrt(var),
        rate_true: above as f64 / s.values.len() as f64,
    }
}

fn pooled_separation(a: &KindStats, b: &KindStats) -> f64 {
    let (na, nb) = (a.count as f64, b.count as f64);
    let pooled_var = if a.count + b.count > 2 {
        ((na - 1.0) * a.std * a.std + (nb - 1.0) * b.std * b.std) / (na + nb - 2.0)
    } else {
        0.0
    };
    abs(a.mean - b.mean) / sqrt(pooled_var).max(1e-12)
}

/// Build shared-edge histograms spanning the pooled min/max of all kinds,
/// with per-kind statistics, rates, and pairwise separation statistics.
pub fn histogram_report(
    samples: &[ResponseSamples],
    n_bins: usize,
    threshold: f64,
) -> Result<HistogramReport> {
    if n_bins < 10 {
        return Err(Error::InvalidParameter("histogram needs at least 10 bins"));
    }
    check_samples(samples)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in samples {
        for &v in &s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    // Constant samples: single-bin fallback around the value.
    let degenerate = lo == hi;
    let (edges, n_bins) = if degenerate {
        (vec![lo - 0.5, lo + 0.5], 1)
    } else {
        let width = (hi - lo) / n_bins as f64;
        let edges = (0..=n_bins)
            .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
            .collect();
        (edges, n_bins)
    };
    let width = (hi - lo) / n_bins as f64;
    let mut kinds = Vec::with_capacity(samples.len());
    for s in samples {
        let mut counts = vec![0u64; n_bins];
        for &v in &s.values {
            let bin = if degenerate {
                0
            } else {
                (((v - lo) / width) as usize).min(n_bins - 1)
            };
            counts[bin] += 1;
        }
        kinds.push(KindHistogram { kind: s.kind, counts, stats: kind_stats(s, threshold) });
    }
    let mut separations = Vec::new();
    for i in 0..kinds.len() {
        for j in (i + 1)..kinds.len() {
            separations.push(SeparationStat {
                a: kinds[i].kind,
                b: kinds[j].kind,
                value: pooled_separation(&kinds[i].stats, &kinds[j].stats),
            });
        }
    }
    Ok(HistogramReport { edges, threshold, kinds, separations, degenerate })
}
