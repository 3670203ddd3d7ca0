//! The adversarial objective family.
//!
//! Two parameterizations are provided for every term:
//!
//! * probability-space values (`loss_d_baseline`, `loss_d_acontrario`, ...)
//!   operating on activated discriminator outputs `D = sigmoid(f)`, with
//!   logs clamped at [`LOG_EPS`];
//! * raw-score values with analytic gradients (`bce_true_scores`, ...)
//!   operating on the pre-activation scores `f(x, y)`, which is what the
//!   trainer backpropagates. The analytic gradients are verified against
//!   central finite differences in the test suite.
//!
//! All reductions are means over the given slice, so loss values are
//! invariant to batch and patch-grid size.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{abs, ln, sigmoid};
use crate::pairing::{PairingKind, PerKind};

/// Probabilities are clamped to `[LOG_EPS, 1]` before every logarithm, in
/// training and in evaluation alike.
pub const LOG_EPS: f64 = 1e-7;

/// Weighting strategies for the four adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum WeightStrategy {
    /// Every term contributes equally: `λ1 = λ2 = λ3 = λ4 = 1`.
    Equal,
    /// One true term balanced against three fake terms:
    /// `λ1 = 1`, `λ2 = λ3 = λ4 = 0.33`.
    BalancedTrueFake,
    /// Drop the generated-a-contrario term: `λ1 = λ2 = λ3 = 0.5`, `λ4 = 0`.
    NoGeneratedAContrario,
    Custom,
}

/// How the generator's adversarial term is formulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GeneratorMode {
    /// Maximize `log D(x, G(x))` (the standard trick; default).
    #[default]
    NonSaturating,
    /// Minimize `log(1 - D(x, G(x)))` (the literal minimax form).
    Saturating,
}

/// Weights `λ1..λ4` on the four discriminator terms plus the generator mode.
///
/// Term order matches [`PairingKind`]: real-conditional (true),
/// generated-conditional (fake), real-a-contrario (fake),
/// generated-a-contrario (fake).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub lambdas: [f64; 4],
    pub strategy: WeightStrategy,
    pub g_mode: GeneratorMode,
}

impl LossWeights {
    pub fn equal() -> Self {
        Self {
            lambdas: [1.0; 4],
            strategy: WeightStrategy::Equal,
            g_mode: GeneratorMode::NonSaturating,
        }
    }

    pub fn balanced_true_fake() -> Self {
        Self {
            lambdas: [1.0, 0.33, 0.33, 0.33],
            strategy: WeightStrategy::BalancedTrueFake,
            g_mode: GeneratorMode::NonSaturating,
        }
    }

    pub fn no_generated_acontrario() -> Self {
        Self {
            lambdas: [0.5, 0.5, 0.5, 0.0],
            strategy: WeightStrategy::NoGeneratedAContrario,
            g_mode: GeneratorMode::NonSaturating,
        }
    }

    /// The classic conditional objective: both a-contrario weights zero.
    pub fn baseline() -> Self {
        Self {
            lambdas: [1.0, 1.0, 0.0, 0.0],
            strategy: WeightStrategy::Custom,
            g_mode: GeneratorMode::NonSaturating,
        }
    }

    pub fn custom(lambdas: [f64; 4]) -> Result<Self> {
        let w = Self { lambdas, strategy: WeightStrategy::Custom, g_mode: GeneratorMode::NonSaturating };
        w.validate()?;
        Ok(w)
    }

    pub fn with_g_mode(mut self, g_mode: GeneratorMode) -> Self {
        self.g_mode = g_mode;
        self
    }

    pub fn lambda(&self, kind: PairingKind) -> f64 {
        self.lambdas[kind.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidParameter("loss weights must be finite and non-negative"));
        }
        let ok = match self.strategy {
            WeightStrategy::Equal => {
                self.lambdas.iter().all(|&l| l == self.lambdas[0])
            }
            WeightStrategy::BalancedTrueFake => {
                self.lambdas == [1.0, 0.33, 0.33, 0.33]
            }
            WeightStrategy::NoGeneratedAContrario => {
                self.lambdas == [0.5, 0.5, 0.5, 0.0]
            }
            WeightStrategy::Custom => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("weights inconsistent with declared strategy"))
        }
    }
}

/// Raw scores `f(x, y)` per pairing kind, one value per patch cell, with the
/// activated probabilities derived on demand so `D = sigmoid(f)` holds by
/// construction.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutputs {
    raw: PerKind<Vec<f64>>,
}

impl DiscriminatorOutputs {
    pub fn new(raw: PerKind<Vec<f64>>) -> Result<Self> {
        for (kind, values) in raw.iter() {
            if values.is_empty() {
                return Err(Error::Empty(kind.label()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("raw discriminator score"));
            }
        }
        Ok(Self { raw })
    }

    pub fn raw(&self, kind: PairingKind) -> &[f64] {
        self.raw.get(kind)
    }

    pub fn probabilities(&self, kind: PairingKind) -> Vec<f64> {
        self.raw.get(kind).iter().map(|&s| sigmoid(s)).collect()
    }
}

fn check_probs(what: &'static str, d: &[f64]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty(what));
    }
    for &v in d {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter("probability outside [0, 1]"));
        }
    }
    Ok(())
}

fn ln_clamped(x: f64) -> f64 {
    ln(x.max(LOG_EPS))
}

fn mean_neg_log(d: &[f64]) -> f64 {
    -d.iter().map(|&v| ln_clamped(v)).sum::<f64>() / d.len() as f64
}

fn mean_neg_log1m(d: &[f64]) -> f64 {
    -d.iter().map(|&v| ln_clamped(1.0 - v)).sum::<f64>() / d.len() as f64
}

/// Classic conditional discriminator loss:
/// `-mean(log D_rc) - mean(log(1 - D_gc))`.
pub fn loss_d_baseline(d_real_cond: &[f64], d_gen_cond: &[f64]) -> Result<f64> {
    check_probs("d_real_cond", d_real_cond)?;
    check_probs("d_gen_cond", d_gen_cond)?;
    Ok(mean_neg_log(d_real_cond) + mean_neg_log1m(d_gen_cond))
}

/// A-contrario discriminator loss: both adverse pairings classified fake,
/// `-mean(log(1 - D_rac)) - mean(log(1 - D_gac))`.
pub fn loss_d_acontrario(d_real_ac: &[f64], d_gen_ac: &[f64]) -> Result<f64> {
    check_probs("d_real_ac", d_real_ac)?;
    check_probs("d_gen_ac", d_gen_ac)?;
    Ok(mean_neg_log1m(d_real_ac) + mean_neg_log1m(d_gen_ac))
}

/// λ-weighted combination of all four terms.
pub fn loss_d_combined(outs: &DiscriminatorOutputs, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let mut total = 0.0;
    for kind in PairingKind::ALL {
        let d = outs.probabilities(kind);
        let term = if kind.is_true_pairing() { mean_neg_log(&d) } else { mean_neg_log1m(&d) };
        total += w.lambda(kind) * term;
    }
    Ok(total)
}

/// Generator adversarial loss on the generated-conditional probabilities.
pub fn loss_g_adversarial(d_gen_cond: &[f64], mode: GeneratorMode) -> Result<f64> {
    check_probs("d_gen_cond", d_gen_cond)?;
    Ok(match mode {
        GeneratorMode::NonSaturating => mean_neg_log(d_gen_cond),
        GeneratorMode::Saturating => -mean_neg_log1m(d_gen_cond),
    })
}

/// Hinge discriminator loss over raw scores, all four terms unweighted:
/// `mean(relu(1 - s_rc)) + mean(relu(1 + s_gc)) + mean(relu(1 + s_rac)) + mean(relu(1 + s_gac))`.
pub fn loss_d_hinge(outs: &DiscriminatorOutputs) -> Result<f64> {
    let mut total = 0.0;
    for kind in PairingKind::ALL {
        let s = outs.raw(kind);
        total += if kind.is_true_pairing() {
            s.iter().map(|&v| (1.0 - v).max(0.0)).sum::<f64>() / s.len() as f64
        } else {
            s.iter().map(|&v| (1.0 + v).max(0.0)).sum::<f64>() / s.len() as f64
        };
    }
    Ok(total)
}

/// Hinge generator loss: `-mean(s_gc)` on raw generated-conditional scores.
pub fn loss_g_hinge(raw_gen_cond: &[f64]) -> Result<f64> {
    if raw_gen_cond.is_empty() {
        return Err(Error::Empty("raw_gen_cond"));
    }
    Ok(-raw_gen_cond.iter().sum::<f64>() / raw_gen_cond.len() as f64)
}

/// Weighted mean absolute error, `weight * mean(|y_gen - y_real|)`.
pub fn loss_l1(y_gen: &[f64], y_real: &[f64], weight: f64) -> Result<f64> {
    Ok(l1_with_grad(y_gen, y_real, weight)?.value)
}

/// A scalar loss with its gradient w.r.t. the input slice.
#[derive(Debug, Clone)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_scores(what: &'static str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Empty(what));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// `-mean(log sigmoid(s))` with gradient `(sigmoid(s) - 1) / n`.
pub fn bce_true_scores(s: &[f64]) -> Result<ValueGrad> {
    check_scores("bce_true_scores", s)?;
    let n = s.len() as f64;
    let value = -s.iter().map(|&v| ln_clamped(sigmoid(v))).sum::<f64>() / n;
    let grad = s.iter().map(|&v| (sigmoid(v) - 1.0) / n).collect();
    Ok(ValueGrad { value, grad })
}

/// `-mean(log(1 - sigmoid(s)))` with gradient `sigmoid(s) / n`.
pub fn bce_fake_scores(s: &[f64]) -> Result<ValueGrad> {
    check_scores("bce_fake_scores", s)?;
    let n = s.len() as f64;
    let value = -s.iter().map(|&v| ln_clamped(1.0 - sigmoid(v))).sum::<f64>() / n;
    let grad = s.iter().map(|&v| sigmoid(v) / n).collect();
    Ok(ValueGrad { value, grad })
}

/// Generator adversarial term on raw generated-conditional scores. In both
/// modes the descent direction increases the scores (pushes `D_gc` toward 1).
pub fn g_adversarial_scores(s_gen_cond: &[f64], mode: GeneratorMode) -> Result<ValueGrad> {
    check_scores("g_adversarial_scores", s_gen_cond)?;
    let n = s_gen_cond.len() as f64;
    Ok(match mode {
        GeneratorMode::NonSaturating => bce_true_scores(s_gen_cond)?,
        GeneratorMode::Saturating => {
            let value = s_gen_cond.iter().map(|&v| ln_clamped(1.0 - sigmoid(v))).sum::<f64>() / n;
            let grad = s_gen_cond.iter().map(|&v| -sigmoid(v) / n).collect();
            ValueGrad { value, grad }
        }
    })
}

/// `mean(relu(1 - s))` with subgradient `-(s < 1) / n`.
pub fn hinge_true_scores(s: &[f64]) -> Result<ValueGrad> {
    check_scores("hinge_true_scores", s)?;
    let n = s.len() as f64;
    let value = s.iter().map(|&v| (1.0 - v).max(0.0)).sum::<f64>() / n;
    let grad = s.iter().map(|&v| if v < 1.0 { -1.0 / n } else { 0.0 }).collect();
    Ok(ValueGrad { value, grad })
}

/// `mean(relu(1 + s))` with subgradient `(s > -1) / n`.
pub fn hinge_fake_scores(s: &[f64]) -> Result<ValueGrad> {
    check_scores("hinge_fake_scores", s)?;
    let n = s.len() as f64;
    let value = s.iter().map(|&v| (1.0 + v).max(0.0)).sum::<f64>() / n;
    let grad = s.iter().map(|&v| if v > -1.0 { 1.0 / n } else { 0.0 }).collect();
    Ok(ValueGrad { value, grad })
}

/// `-mean(s)` with gradient `-1 / n`.
pub fn g_hinge_scores(s_gen_cond: &[f64]) -> Result<ValueGrad> {
    check_scores("g_hinge_scores", s_gen_cond)?;
    let n = s_gen_cond.len() as f64;
    let value = -s_gen_cond.iter().sum::<f64>() / n;
    let grad = s_gen_cond.iter().map(|_| -1.0 / n).collect();
    Ok(ValueGrad { value, grad })
}

/// `weight * mean(|y_gen - y_real|)` with gradient w.r.t. `y_gen`.
pub fn l1_with_grad(y_gen: &[f64], y_real: &[f64], weight: f64) -> Result<ValueGrad> {
    if y_gen.len() != y_real.len() {
        return Err(Error::LengthMismatch {
            what: "loss_l1",
            left: y_gen.len(),
            right: y_real.len(),
        });
    }
    if y_gen.is_empty() {
        return Err(Error::Empty("loss_l1"));
    }
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::InvalidParameter("l1 weight must be finite and non-negative"));
    }
    let n = y_gen.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(y_gen.len());
    for (&a, &b) in y_gen.iter().zip(y_real) {
        let diff = a - b;
        value += abs(diff);
        grad.push(weight * diff.signum() / n);
    }
    Ok(ValueGrad { value: weight * value / n, grad })
}

/// The adversarial formulation the discriminator is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AdversarialFamily {
    Bce,
    Hinge,
}

/// Per-kind discriminator loss values (unweighted, for monitoring), the
/// λ-weighted total, and λ-scaled gradients w.r.t. the raw scores.
#[derive(Debug, Clone)]
pub struct DLossBreakdown {
    pub per_kind: PerKind<f64>,
    pub weighted_total: f64,
    pub grads: PerKind<Vec<f64>>,
}

/// One-pass discriminator loss over all four pairings.
///
/// Kinds with `λ = 0` still have their monitored value computed, but their
/// gradient contribution is zero; the trainer skips backpropagation for
/// them entirely so that a zero-weighted run is computationally identical
/// to one that never had the term.
pub fn d_loss_scores(
    family: AdversarialFamily,
    scores: &PerKind<&[f64]>,
    w: &LossWeights,
) -> Result<DLossBreakdown> {
    w.validate()?;
    let mut per_kind = PerKind::default();
    let mut grads = PerKind::<Vec<f64>>::default();
    let mut weighted_total = 0.0;
    for kind in PairingKind::ALL {
        let s = *scores.get(kind);
        let vg = match (family, kind.is_true_pairing()) {
            (AdversarialFamily::Bce, true) => bce_true_scores(s)?,
            (AdversarialFamily::Bce, false) => bce_fake_scores(s)?,
            (AdversarialFamily::Hinge, true) => hinge_true_scores(s)?,
            (AdversarialFamily::Hinge, false) => hinge_fake_scores(s)?,
        };
        let lambda = w.lambda(kind);
        *per_kind.get_mut(kind) = vg.value;
        weighted_total += lambda * vg.value;
        *grads.get_mut(kind) = vg.grad.iter().map(|g| lambda * g).collect();
    }
    Ok(DLossBreakdown { per_kind, weighted_total, grads })
}

/// Generator adversarial loss for the configured family and mode.
pub fn g_loss_scores(
    family: AdversarialFamily,
    s_gen_cond: &[f64],
    mode: GeneratorMode,
) -> Result<ValueGrad> {
    match family {
        AdversarialFamily::Bce => g_adversarial_scores(s_gen_cond, mode),
        AdversarialFamily::Hinge => g_hinge_scores(s_gen_cond),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = core::f64::consts::LN_2;

    fn outputs_with_all_probs(p: f64, len: usize) -> DiscriminatorOutputs {
        // raw score whose sigmoid is p
        let s = ln(p / (1.0 - p));
        let v = vec![s; len];
        DiscriminatorOutputs::new(PerKind {
            real_conditional: v.clone(),
            generated_conditional: v.clone(),
            real_acontrario: v.clone(),
            generated_acontrario: v,
        })
        .unwrap()
    }

    #[test]
    fn baseline_at_half_is_two_ln2() {
        let d = vec![0.5; 8];
        assert_abs_diff_eq!(loss_d_baseline(&d, &d).unwrap(), 2.0 * LN2, epsilon = 1e-12);
    }

    #[test]
    fn baseline_perfect_discriminator_limit() {
        // d_rc -> 1, d_gc -> 0 drives the loss to 0.
        let rc = vec![1.0 - 1e-12; 4];
        let gc = vec![1e-12; 4];
        assert!(loss_d_baseline(&rc, &gc).unwrap() < 1e-9);
    }

    #[test]
    fn baseline_hand_value() {
        // Independent arithmetic oracle: -(ln 0.8 + ln 0.7).
        let expected = -(ln(0.8) + ln(0.7));
        assert_abs_diff_eq!(
            loss_d_baseline(&[0.8], &[0.3]).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 0.579_818_495_252_942, epsilon = 1e-12);
    }

    #[test]
    fn baseline_empty_errors() {
        assert!(matches!(loss_d_baseline(&[], &[0.5]), Err(Error::Empty(_))));
        assert!(matches!(loss_d_baseline(&[0.5], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn acontrario_at_half_is_two_ln2() {
        let d = vec![0.5; 3];
        assert_abs_diff_eq!(loss_d_acontrario(&d, &d).unwrap(), 2.0 * LN2, epsilon = 1e-12);
    }

    #[test]
    fn acontrario_correct_rejection_limit() {
        let d = vec![1e-12; 3];
        assert!(loss_d_acontrario(&d, &d).unwrap() < 1e-9);
    }

    #[test]
    fn acontrario_hand_value() {
        let expected = -(ln(0.7) + ln(0.8));
        assert_abs_diff_eq!(
            loss_d_acontrario(&[0.3], &[0.2]).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn combined_reduces_to_baseline_when_ac_weights_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..10);
            let raw: PerKind<Vec<f64>> = PerKind::default()
                .map(|_: &Vec<f64>| (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect());
            let outs = DiscriminatorOutputs::new(raw).unwrap();
            let w = LossWeights::baseline();
            let combined = loss_d_combined(&outs, &w).unwrap();
            let baseline = loss_d_baseline(
                &outs.probabilities(PairingKind::RealConditional),
                &outs.probabilities(PairingKind::GeneratedConditional),
            )
            .unwrap();
            assert_abs_diff_eq!(combined, baseline, epsilon = 1e-12);
        }
    }

    #[test]
    fn combined_equal_strategy_at_half() {
        let outs = outputs_with_all_probs(0.5, 6);
        let v = loss_d_combined(&outs, &LossWeights::equal()).unwrap();
        assert_abs_diff_eq!(v, 4.0 * LN2, epsilon = 1e-12);
    }

    #[test]
    fn combined_balanced_strategy_at_half() {
        // 1·ln2 + 3·0.33·ln2 = 1.99·ln2 (the balanced weights are 0.33, not 1/3).
        let outs = outputs_with_all_probs(0.5, 6);
        let v = loss_d_combined(&outs, &LossWeights::balanced_true_fake()).unwrap();
        assert_abs_diff_eq!(v, 1.99 * LN2, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.379_362_889, epsilon = 1e-6);
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(LossWeights::custom([1.0, -0.1, 0.0, 0.0]).is_err());
        let mut w = LossWeights::equal();
        w.lambdas[2] = -1.0;
        let outs = outputs_with_all_probs(0.5, 2);
        assert!(loss_d_combined(&outs, &w).is_err());
    }

    #[test]
    fn strategy_weight_consistency_is_enforced() {
        let mut w = LossWeights::balanced_true_fake();
        w.lambdas = [1.0, 0.5, 0.33, 0.33];
        assert!(w.validate().is_err());
        let mut w = LossWeights::equal();
        w.lambdas = [1.0, 1.0, 1.0, 0.5];
        assert!(w.validate().is_err());
        assert!(LossWeights::no_generated_acontrario().validate().is_ok());
        assert_eq!(LossWeights::no_generated_acontrario().lambdas, [0.5, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn generator_loss_values() {
        let d = vec![0.5; 4];
        assert_abs_diff_eq!(
            loss_g_adversarial(&d, GeneratorMode::NonSaturating).unwrap(),
            LN2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            loss_g_adversarial(&d, GeneratorMode::Saturating).unwrap(),
            -LN2,
            epsilon = 1e-12
        );
        let near_one = vec![1.0 - 1e-12; 4];
        assert!(loss_g_adversarial(&near_one, GeneratorMode::NonSaturating).unwrap() < 1e-9);
        assert!(matches!(
            loss_g_adversarial(&[], GeneratorMode::NonSaturating),
            Err(Error::Empty(_))
        ));
    }

    fn outputs_from_raw(rc: &[f64], gc: &[f64], rac: &[f64], gac: &[f64]) -> DiscriminatorOutputs {
        DiscriminatorOutputs::new(PerKind {
            real_conditional: rc.into(),
            generated_conditional: gc.into(),
            real_acontrario: rac.into(),
            generated_acontrario: gac.into(),
        })
        .unwrap()
    }

    #[test]
    fn hinge_all_zero_scores() {
        let z = [0.0; 5];
        let outs = outputs_from_raw(&z, &z, &z, &z);
        assert_abs_diff_eq!(loss_d_hinge(&outs).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn hinge_all_margins_satisfied() {
        let outs = outputs_from_raw(&[2.0], &[-2.0], &[-2.0], &[-2.0]);
        assert_abs_diff_eq!(loss_d_hinge(&outs).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hinge_hand_values() {
        let outs = outputs_from_raw(&[0.5], &[-0.5], &[-0.5], &[-0.5]);
        assert_abs_diff_eq!(loss_d_hinge(&outs).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_g_hinge(&[1.0, 2.0]).unwrap(), -1.5, epsilon = 1e-12);
    }

    #[test]
    fn l1_values() {
        let a = vec![1.0, 2.0, 3.0];
        assert_abs_diff_eq!(loss_l1(&a, &a, 100.0).unwrap(), 0.0, epsilon = 1e-12);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_abs_diff_eq!(loss_l1(&b, &a, 100.0).unwrap(), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_l1(&[0.0, 2.0], &[1.0, 0.0], 1.0).unwrap(), 1.5, epsilon = 1e-12);
        assert!(matches!(loss_l1(&[0.0], &[1.0, 2.0], 1.0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn discriminator_losses_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..300 {
            let n = rng.gen_range(1..6);
            let raw: PerKind<Vec<f64>> = PerKind::default()
                .map(|_: &Vec<f64>| (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect());
            let outs = DiscriminatorOutputs::new(raw).unwrap();
            assert!(loss_d_combined(&outs, &LossWeights::equal()).unwrap() >= 0.0);
            assert!(loss_d_hinge(&outs).unwrap() >= 0.0);
            let rc = outs.probabilities(PairingKind::RealConditional);
            let gc = outs.probabilities(PairingKind::GeneratedConditional);
            assert!(loss_d_baseline(&rc, &gc).unwrap() >= 0.0);
            assert!(loss_d_acontrario(&rc, &gc).unwrap() >= 0.0);
        }
    }

    #[test]
    fn hinge_zero_iff_all_margins_satisfied() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()
            };
            let (rc, gc, rac, gac) = (gen(&mut rng), gen(&mut rng), gen(&mut rng), gen(&mut rng));
            let outs = outputs_from_raw(&rc, &gc, &rac, &gac);
            let satisfied = rc.iter().all(|&v| v >= 1.0)
                && [&gc, &rac, &gac].iter().all(|s| s.iter().all(|&v| v <= -1.0));
            let loss = loss_d_hinge(&outs).unwrap();
            assert_eq!(loss == 0.0, satisfied, "loss={loss} satisfied={satisfied}");
        }
    }

    // --- gradient checks -------------------------------------------------

    /// Central finite difference of a scalar function of one slice element.
    fn central_diff(f: &dyn Fn(&[f64]) -> f64, s: &[f64], i: usize, h: f64) -> f64 {
        let mut plus = s.to_vec();
        let mut minus = s.to_vec();
        plus[i] += h;
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn assert_grad_matches(
        name: &str,
        f: &dyn Fn(&[f64]) -> f64,
        s: &[f64],
        grad: &[f64],
        skip: &dyn Fn(f64) -> bool,
    ) {
        let h = 1e-4;
        for i in 0..s.len() {
            if skip(s[i]) {
                continue;
            }
            let fd = central_diff(f, s, i, h);
            let an = grad[i];
            let tol = 1e-4 * fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() <= tol,
                "{name}: grad mismatch at {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let no_skip = |_: f64| false;
        for _ in 0..100 {
            let n = rng.gen_range(2..12);
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();

            let vg = bce_true_scores(&s).unwrap();
            assert_grad_matches(
                "bce_true",
                &|x| bce_true_scores(x).unwrap().value,
                &s,
                &vg.grad,
                &no_skip,
            );

            let vg = bce_fake_scores(&s).unwrap();
            assert_grad_matches(
                "bce_fake",
                &|x| bce_fake_scores(x).unwrap().value,
                &s,
                &vg.grad,
                &no_skip,
            );

            for mode in [GeneratorMode::NonSaturating, GeneratorMode::Saturating] {
                let vg = g_adversarial_scores(&s, mode).unwrap();
                assert_grad_matches(
                    "g_adversarial",
                    &|x| g_adversarial_scores(x, mode).unwrap().value,
                    &s,
                    &vg.grad,
                    &no_skip,
                );
            }

            // Hinge kinks at |1 -/+ s| = 0; skip points too close for a
            // finite difference to be meaningful.
            let vg = hinge_true_scores(&s).unwrap();
            assert_grad_matches(
                "hinge_true",
                &|x| hinge_true_scores(x).unwrap().value,
                &s,
                &vg.grad,
                &|v| (1.0 - v).abs() < 1e-3,
            );
            let vg = hinge_fake_scores(&s).unwrap();
            assert_grad_matches(
                "hinge_fake",
                &|x| hinge_fake_scores(x).unwrap().value,
                &s,
                &vg.grad,
                &|v| (1.0 + v).abs() < 1e-3,
            );
            let vg = g_hinge_scores(&s).unwrap();
            assert_grad_matches(
                "g_hinge",
                &|x| g_hinge_scores(x).unwrap().value,
                &s,
                &vg.grad,
                &no_skip,
            );
        }
    }

    #[test]
    fn combined_gradients_match_finite_differences_all_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let strategies = [
            LossWeights::equal(),
            LossWeights::balanced_true_fake(),
            LossWeights::no_generated_acontrario(),
            LossWeights::baseline(),
            LossWeights::custom([0.7, 1.3, 0.2, 2.0]).unwrap(),
        ];
        for w in strategies {
            for family in [AdversarialFamily::Bce, AdversarialFamily::Hinge] {
                let n = 4;
                let raw: PerKind<Vec<f64>> = PerKind::default()
                    .map(|_: &Vec<f64>| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect());
                let scores = PerKind {
                    real_conditional: raw.real_conditional.as_slice(),
                    generated_conditional: raw.generated_conditional.as_slice(),
                    real_acontrario: raw.real_acontrario.as_slice(),
                    generated_acontrario: raw.generated_acontrario.as_slice(),
                };
                let out = d_loss_scores(family, &scores, &w).unwrap();
                for kind in PairingKind::ALL {
                    let s = raw.get(kind);
                    let eval = |x: &[f64]| {
                        let mut r2 = raw.clone();
                        *r2.get_mut(kind) = x.to_vec();
                        let sc = PerKind {
                            real_conditional: r2.real_conditional.as_slice(),
                            generated_conditional: r2.generated_conditional.as_slice(),
                            real_acontrario: r2.real_acontrario.as_slice(),
                            generated_acontrario: r2.generated_acontrario.as_slice(),
                        };
                        d_loss_scores(family, &sc, &w).unwrap().weighted_total
                    };
                    assert_grad_matches(
                        "d_loss_scores",
                        &eval,
                        s,
                        out.grads.get(kind),
                        &|v| {
                            family == AdversarialFamily::Hinge
                                && ((1.0 - v).abs() < 1e-3 || (1.0 + v).abs() < 1e-3)
                        },
                    );
                }
            }
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 16;
        let y_gen: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y_real: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vg = l1_with_grad(&y_gen, &y_real, 7.5).unwrap();
        assert_grad_matches(
            "l1",
            &|x| loss_l1(x, &y_real, 7.5).unwrap(),
            &y_gen,
            &vg.grad,
            // |.| kink where gen == real
            &|v| y_real.iter().any(|&r| (v - r).abs() < 1e-3),
        );
    }

    #[test]
    fn raw_and_probability_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d: Vec<f64> = s.iter().map(|&v| sigmoid(v)).collect();
        let raw_true = bce_true_scores(&s).unwrap().value;
        let raw_fake = bce_fake_scores(&s).unwrap().value;
        assert_abs_diff_eq!(raw_true + raw_fake, loss_d_baseline(&d, &d).unwrap(), epsilon = 1e-12);
    }
}
