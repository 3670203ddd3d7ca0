//! Closed-form optimal-discriminator oracles on discrete densities.
//!
//! With the generator frozen, the optimal discriminator over a finite
//! outcome set is `D*[i] = p[i] / (p[i] + p_g[i])`, and the value of the
//! adversarial game at `D*` is `-ln 4 + 2 * JSD(p_g || p)`. Both routes are
//! implemented independently so each can check the other.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::ln;

const SUM_TOL: f64 = 1e-9;

/// A pair of discrete densities over the same finite outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    p: Vec<f64>,
    p_g: Vec<f64>,
}

impl DensityPair {
    pub fn new(p: Vec<f64>, p_g: Vec<f64>) -> Result<Self> {
        if p.len() != p_g.len() {
            return Err(Error::LengthMismatch { what: "DensityPair", left: p.len(), right: p_g.len() });
        }
        if p.is_empty() {
            return Err(Error::Empty("DensityPair"));
        }
        for v in [&p, &p_g] {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidDensity("negative or non-finite mass"));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidDensity("mass does not sum to 1"));
            }
        }
        Ok(Self { p, p_g })
    }

    pub fn real(&self) -> &[f64] {
        &self.p
    }

    pub fn generated(&self) -> &[f64] {
        &self.p_g
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// `D*[i] = p[i] / (p[i] + p_g[i])`, with `D* = 1` where only `p` has mass
/// and `D* = 0.5` where neither does.
pub fn optimal_d_value(dp: &DensityPair) -> Vec<f64> {
    dp.p.iter()
        .zip(&dp.p_g)
        .map(|(&p, &pg)| {
            if p == 0.0 && pg == 0.0 {
                0.5
            } else {
                p / (p + pg)
            }
        })
        .collect()
}

/// Jensen-Shannon divergence with natural logarithms; `0 * ln(0/q) = 0`.
pub fn jsd(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let kl_to_mid = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .filter(|(&xi, _)| xi > 0.0)
            .map(|(&xi, &yi)| xi * ln(xi / (0.5 * (xi + yi))))
            .sum::<f64>()
    };
    0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a)
}

/// Value of the adversarial game at the optimal discriminator:
/// `-ln 4 + 2 * JSD(p_g || p)`.
pub fn js_game_value(dp: &DensityPair) -> f64 {
    -ln(4.0) + 2.0 * jsd(&dp.p_g, &dp.p)
}

/// Pointwise game value `E_p[ln d] + E_pg[ln(1 - d)]` for an arbitrary
/// discriminator response `d` over the outcome set. Terms with zero
/// probability mass contribute nothing regardless of `d`.
pub fn game_value(dp: &DensityPair, d: &[f64]) -> Result<f64> {
    if d.len() != dp.len() {
        return Err(Error::LengthMismatch { what: "game_value", left: d.len(), right: dp.len() });
    }
    let mut v = 0.0;
    for ((&p, &pg), &di) in dp.p.iter().zip(&dp.p_g).zip(d) {
        if p > 0.0 {
            v += p * ln(di);
        }
        if pg > 0.0 {
            v += pg * ln(1.0 - di);
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const LN4: f64 = 1.386_294_361_119_890_6;

    #[test]
    fn matched_densities_give_half_and_minus_ln4() {
        let dp = DensityPair::new(vec![0.25; 4], vec![0.25; 4]).unwrap();
        for d in optimal_d_value(&dp) {
            assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(js_game_value(&dp), -LN4, epsilon = 1e-12);
    }

    #[test]
    fn direct_substitution() {
        let dp = DensityPair::new(vec![0.8, 0.2], vec![0.2, 0.8]).unwrap();
        let d = optimal_d_value(&dp);
        assert_abs_diff_eq!(d[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn disjoint_supports() {
        let dp = DensityPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(optimal_d_value(&dp), vec![1.0, 0.0]);
        // JSD of disjoint distributions is ln 2, so the game value is 0.
        assert_abs_diff_eq!(js_game_value(&dp), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn both_zero_convention() {
        let dp = DensityPair::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(optimal_d_value(&dp), vec![0.5, 0.5]);
    }

    #[test]
    fn half_half_vs_point_mass_matches_summation_oracle() {
        let p = vec![0.5, 0.5];
        let pg = vec![1.0, 0.0];
        let dp = DensityPair::new(p.clone(), pg.clone()).unwrap();
        // Brute-force JSD summation, written out term by term.
        let m: Vec<f64> = p.iter().zip(&pg).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut kl_pg_m = 0.0;
        let mut kl_p_m = 0.0;
        for i in 0..2 {
            if pg[i] > 0.0 {
                kl_pg_m += pg[i] * ln(pg[i] / m[i]);
            }
            if p[i] > 0.0 {
                kl_p_m += p[i] * ln(p[i] / m[i]);
            }
        }
        let expected = -LN4 + 2.0 * 0.5 * (kl_pg_m + kl_p_m);
        assert_abs_diff_eq!(js_game_value(&dp), expected, epsilon = 1e-12);
    }

    #[test]
    fn invalid_densities_are_rejected() {
        assert!(DensityPair::new(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(DensityPair::new(vec![-0.1, 1.1], vec![0.5, 0.5]).is_err());
        assert!(DensityPair::new(vec![1.0], vec![0.5, 0.5]).is_err());
        assert!(DensityPair::new(vec![], vec![]).is_err());
    }

    fn density_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
    }

    proptest! {
        #[test]
        fn plugging_optimal_d_reproduces_game_value(
            p in density_strategy(8),
            pg in density_strategy(8),
        ) {
            let dp = DensityPair::new(p, pg).unwrap();
            let d_star = optimal_d_value(&dp);
            let direct = game_value(&dp, &d_star).unwrap();
            prop_assert!((direct - js_game_value(&dp)).abs() < 1e-9);
        }

        #[test]
        fn game_value_is_bounded_below_by_minus_ln4(
            p in density_strategy(6),
            pg in density_strategy(6),
        ) {
            let dp = DensityPair::new(p.clone(), pg.clone()).unwrap();
            let v = js_game_value(&dp);
            prop_assert!(v >= -LN4 - 1e-12);
            let matched = p.iter().zip(&pg).all(|(a, b)| (a - b).abs() < 1e-12);
            if matched {
                prop_assert!((v + LN4).abs() < 1e-9);
            } else {
                prop_assert!(v > -LN4);
            }
        }
    }
}
