//! The discriminator conditionality audit: collect raw last-layer responses
//! over the four pairings on frozen snapshots, plus constant-condition
//! boundary probes.

use ndarray::{Array3, Array4};
use rand_chacha::ChaCha8Rng;

use contrario_core::histogram::ResponseSamples;
use contrario_core::pairing::{derange_indices, PairingKind};

use crate::data::{stack3, Sample};
use crate::nets::{PatchDiscriminator, UnetGenerator};
use crate::nn::{FwdCtx, Mode};
use crate::{Error, Result};

/// Probe forward mode. The default runs frozen snapshots in inference mode;
/// the training-behaviour option keeps dropout and batch statistics active
/// (without touching running stats) to reproduce the histogram protocol the
/// networks were trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    Inference,
    TrainingBehavior,
}

impl ProbeMode {
    fn net_mode(self) -> Mode {
        match self {
            ProbeMode::Inference => Mode::Eval,
            ProbeMode::TrainingBehavior => Mode::TrainFrozen,
        }
    }
}

/// Constant conditions for the boundary probes: one class everywhere, or no
/// class at all (all-zero one-hot planes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstCondition {
    UniformClass(usize),
    Empty,
}

/// Split `0..n` into contiguous chunks of at most `batch`, keeping every
/// chunk at least 2 long (a-contrario pairing needs a derangement).
fn balanced_chunks(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    assert!(n >= 2 && batch >= 2);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch).min(n);
        if n - end == 1 {
            end -= 1; // leave two for the final chunk
        }
        chunks.push(start..end);
        start = end;
    }
    chunks
}

/// Collect raw per-patch responses for the requested pairing kinds over `n`
/// validation samples (seeded subsample without replacement). One shared
/// derangement per batch feeds both a-contrario kinds.
#[allow(clippy::too_many_arguments)]
pub fn collect_responses(
    disc: &mut PatchDiscriminator,
    gen: &mut UnetGenerator,
    samples: &[Sample],
    kinds: &[PairingKind],
    n: usize,
    rng: &mut ChaCha8Rng,
    mode: ProbeMode,
    source: &str,
) -> Result<Vec<ResponseSamples>> {
    if kinds.is_empty() {
        return Err(contrario_core::Error::Empty("probe kinds").into());
    }
    for (i, k) in kinds.iter().enumerate() {
        if kinds[..i].contains(k) {
            return Err(Error::InvalidConfig(format!("duplicate probe kind {k:?}")));
        }
    }
    if n < 2 || n > samples.len() {
        return Err(Error::InvalidConfig(format!(
            "probe sample count {n} out of range 2..={}",
            samples.len()
        )));
    }
    // Seeded subsample without replacement (partial Fisher-Yates).
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    for i in 0..n {
        use rand::Rng;
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let idx = &idx[..n];

    let needs_generated = kinds.iter().any(|k| {
        matches!(k, PairingKind::GeneratedConditional | PairingKind::GeneratedAContrario)
    });
    let needs_derangement = kinds
        .iter()
        .any(|k| matches!(k, PairingKind::RealAContrario | PairingKind::GeneratedAContrario));

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for chunk in balanced_chunks(n, 16) {
        let batch_idx: Vec<usize> = idx[chunk].to_vec();
        let conds: Vec<Array3<f32>> =
            batch_idx.iter().map(|&i| samples[i].condition.to_tensor()).collect();
        let targets: Vec<Array3<f32>> =
            batch_idx.iter().map(|&i| samples[i].target.clone()).collect();
        let x = stack3(&conds);
        let y = stack3(&targets);
        let y_g = if needs_generated {
            let mut ctx = FwdCtx { mode: mode.net_mode(), rng: Some(rng) };
            Some(gen.forward(&x, &mut ctx)?.0)
        } else {
            None
        };
        let x_tilde = if needs_derangement {
            let perm = derange_indices(batch_idx.len(), rng).map_err(Error::Core)?;
            let views: Vec<_> = perm
                .iter()
                .map(|&j| x.index_axis(ndarray::Axis(0), j).insert_axis(ndarray::Axis(0)))
                .collect();
            Some(ndarray::concatenate(ndarray::Axis(0), &views).expect("permuted"))
        } else {
            None
        };
        for (slot, kind) in kinds.iter().enumerate() {
            let (cond, target): (&Array4<f32>, &Array4<f32>) = match kind {
                PairingKind::RealConditional => (&x, &y),
                PairingKind::GeneratedConditional => (&x, y_g.as_ref().expect("generated")),
                PairingKind::RealAContrario => (x_tilde.as_ref().expect("deranged"), &y),
                PairingKind::GeneratedAContrario => {
                    (x_tilde.as_ref().expect("deranged"), y_g.as_ref().expect("generated"))
                }
            };
            let mut ctx = FwdCtx { mode: mode.net_mode(), rng: None };
            let (resp, _) = disc.forward(cond, target, &mut ctx)?;
            values[slot].extend(resp.flat_f64());
        }
    }
    kinds
        .iter()
        .zip(values)
        .map(|(&kind, vals)| ResponseSamples::new(kind, vals, source).map_err(Error::Core))
        .collect()
}

/// Pair every target with a constant condition and return the fraction of
/// patch cells classified "true" (raw score above zero).
pub fn constant_condition_probe(
    disc: &mut PatchDiscriminator,
    samples: &[Sample],
    const_condition: ConstCondition,
    mode: ProbeMode,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("constant-condition probe needs samples".into()));
    }
    let c = disc.cond_channels;
    if let ConstCondition::UniformClass(k) = const_condition {
        if k >= c {
            return Err(contrario_core::Error::LabelOutOfRange { label: k, n_classes: c }.into());
        }
    }
    let (h, w) = (samples[0].target.shape()[1], samples[0].target.shape()[2]);
    let mut above = 0usize;
    let mut total = 0usize;
    for chunk in (0..samples.len()).collect::<Vec<_>>().chunks(16) {
        let targets: Vec<Array3<f32>> = chunk.iter().map(|&i| samples[i].target.clone()).collect();
        let y = stack3(&targets);
        let mut cond = Array4::zeros((chunk.len(), c, h, w));
        if let ConstCondition::UniformClass(k) = const_condition {
            for s in 0..chunk.len() {
                cond.index_axis_mut(ndarray::Axis(0), s).index_axis_move(ndarray::Axis(0), k).fill(1.0);
            }
        }
        let mut ctx = FwdCtx { mode: mode.net_mode(), rng: None };
        let (resp, _) = disc.forward(&cond, &y, &mut ctx)?;
        above += resp.raw.iter().filter(|&&v| v > 0.0).count();
        total += resp.raw.len();
    }
    Ok(above as f64 / total as f64)
}
