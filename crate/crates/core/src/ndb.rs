//! NDB: number of statistically-different bins.
//!
//! Bins are k-means clusters fitted on the real samples; every real and
//! generated sample is assigned to its nearest bin center and the per-bin
//! proportions are compared with a two-proportion z-test with pooled
//! variance. A bin is "different" when the test rejects at level alpha; the
//! score is the count of different bins (lower is better, 0 means the two
//! sample sets are statistically indistinguishable at this resolution).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{normal_two_sided_p, sqrt};

/// Clustering knobs; the defaults are used by [`ndb_score`].
#[derive(Debug, Clone, Copy)]
pub struct NdbOptions {
    /// Independent k-means runs; the one with the lowest inertia wins.
    pub restarts: usize,
    /// Lloyd iteration cap per run.
    pub max_iters: usize,
    /// Re-initialization budget when a run produces an empty cluster.
    pub reseed_retries: usize,
}

impl Default for NdbOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iters: 100, reseed_retries: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NdbReport {
    pub k: usize,
    pub alpha: f64,
    pub bin_centers: Vec<Vec<f64>>,
    pub real_proportions: Vec<f64>,
    pub gen_proportions: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub significant: Vec<bool>,
    pub ndb: usize,
    pub ndb_over_k: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// One k-means run; `Err(())` signals an empty cluster.
fn kmeans_once<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> core::result::Result<(Vec<Vec<f64>>, f64), ()> {
    let n = data.len();
    // Partial Fisher-Yates draw of k distinct sample indices.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut centers: Vec<Vec<f64>> = idx[..k].iter().map(|&i| data[i].clone()).collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let a = nearest_center(x, &centers);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        let dim = data[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(());
        }
        for (c, (sum, &count)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            for (cv, sv) in c.iter_mut().zip(sum) {
                *cv = sv / count as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = data.iter().zip(&assign).map(|(x, &a)| sq_dist(x, &centers[a])).sum();
    Ok((centers, inertia))
}

fn fit_bins<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    opts: &NdbOptions,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    let mut reseeds = 0usize;
    let mut completed = 0usize;
    while completed < opts.restarts {
        match kmeans_once(data, k, opts.max_iters, rng) {
            Ok((centers, inertia)) => {
                completed += 1;
                if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
                    best = Some((centers, inertia));
                }
            }
            Err(()) => {
                reseeds += 1;
                if reseeds > opts.reseed_retries {
                    if let Some((centers, _)) = best {
                        return Ok(centers);
                    }
                    return Err(Error::DegenerateClustering { k, retries: opts.reseed_retries });
                }
            }
        }
    }
    Ok(best.expect("at least one completed restart").0)
}

fn proportions(data: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let mut counts = vec![0usize; centers.len()];
    for x in data {
        counts[nearest_center(x, centers)] += 1;
    }
    let n = data.len() as f64;
    let props = counts.iter().map(|&c| c as f64 / n).collect();
    (counts, props)
}

/// NDB with default clustering options.
pub fn ndb_score<R: Rng + ?Sized>(
    real_samples: &[Vec<f64>],
    gen_samples: &[Vec<f64>],
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<NdbReport> {
    ndb_score_with(real_samples, gen_samples, k, alpha, &NdbOptions::default(), rng)
}

pub fn ndb_score_with<R: Rng + ?Sized>(
    real_samples: &[Vec<f64>],
    gen_samples: &[Vec<f64>],
    k: usize,
    alpha: f64,
    opts: &NdbOptions,
    rng: &mut R,
) -> Result<NdbReport> {
    if real_samples.is_empty() {
        return Err(Error::Empty("real samples"));
    }
    if gen_samples.is_empty() {
        return Err(Error::Empty("generated samples"));
    }
    if k == 0 || k > real_samples.len() {
        return Err(Error::InvalidParameter("k must be in 1..=#real"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must be in (0, 1)"));
    }
    let dim = real_samples[0].len();
    if real_samples.iter().chain(gen_samples).any(|x| x.len() != dim) {
        return Err(Error::LengthMismatch { what: "ndb feature dim", left: dim, right: 0 });
    }

    let centers = fit_bins(real_samples, k, opts, rng)?;
    let (real_counts, real_proportions) = proportions(real_samples, &centers);
    let (gen_counts, gen_proportions) = proportions(gen_samples, &centers);
    let n_r = real_samples.len() as f64;
    let n_g = gen_samples.len() as f64;
    let mut z_scores = Vec::with_capacity(k);
    let mut significant = Vec::with_capacity(k);
    let mut ndb = 0usize;
    for b in 0..k {
        let pooled = (real_counts[b] + gen_counts[b]) as f64 / (n_r + n_g);
        let se = sqrt(pooled * (1.0 - pooled) * (1.0 / n_r + 1.0 / n_g));
        let z = if se > 0.0 { (real_proportions[b] - gen_proportions[b]) / se } else { 0.0 };
        let sig = se > 0.0 && normal_two_sided_p(z) < alpha;
        if sig {
            ndb += 1;
        }
        z_scores.push(z);
        significant.push(sig);
    }
    Ok(NdbReport {
        k,
        alpha,
        bin_centers: centers,
        real_proportions,
        gen_proportions,
        z_scores,
        significant,
        ndb,
        ndb_over_k: ndb as f64 / k as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob<R: Rng>(rng: &mut R, center: &[f64], spread: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| c + rng.gen_range(-spread..spread))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_ndb() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = blob(&mut rng, &[0.0, 0.0], 3.0, 300);
        let gen = real.clone();
        let mut krng = ChaCha8Rng::seed_from_u64(2);
        let report = ndb_score(&real, &gen, 10, 0.05, &mut krng).unwrap();
        assert_eq!(report.ndb, 0);
        assert_eq!(report.ndb_over_k, 0.0);
        assert_eq!(report.real_proportions, report.gen_proportions);
    }

    #[test]
    fn disjoint_gaussians_flag_most_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let real = blob(&mut rng, &[0.0, 0.0], 1.0, 500);
        let gen = blob(&mut rng, &[50.0, 50.0], 1.0, 500);
        let mut krng = ChaCha8Rng::seed_from_u64(4);
        let report = ndb_score(&real, &gen, 10, 0.05, &mut krng).unwrap();
        assert!(report.ndb_over_k >= 0.9, "ndb/k = {}", report.ndb_over_k);
    }

    #[test]
    fn proportions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = blob(&mut rng, &[0.0], 2.0, 200);
        let gen = blob(&mut rng, &[0.5], 2.0, 150);
        let mut krng = ChaCha8Rng::seed_from_u64(6);
        let report = ndb_score(&real, &gen, 8, 0.05, &mut krng).unwrap();
        assert!((report.real_proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((report.gen_proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(report.ndb <= report.k);
    }

    #[test]
    fn ndb_is_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real = blob(&mut rng, &[0.0, 0.0], 2.0, 400);
        let gen = blob(&mut rng, &[0.8, -0.3], 2.0, 400);
        let mut last = 0usize;
        for &alpha in &[0.001, 0.01, 0.05, 0.1, 0.3, 0.6] {
            // Same clustering seed so only the test level varies.
            let mut krng = ChaCha8Rng::seed_from_u64(8);
            let report = ndb_score(&real, &gen, 12, alpha, &mut krng).unwrap();
            assert!(report.ndb >= last, "ndb decreased: {} -> {}", last, report.ndb);
            last = report.ndb;
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let real = blob(&mut rng, &[0.0, 1.0], 2.0, 120);
        let gen = blob(&mut rng, &[0.2, 0.7], 2.0, 120);
        let r1 = ndb_score(&real, &gen, 6, 0.05, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let r2 = ndb_score(&real, &gen, 6, 0.05, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn degenerate_data_errors_after_retries() {
        // All points identical: any k > 1 leaves empty clusters forever.
        let real = vec![vec![1.0, 1.0]; 50];
        let gen = vec![vec![1.0, 1.0]; 50];
        let mut krng = ChaCha8Rng::seed_from_u64(13);
        assert!(matches!(
            ndb_score(&real, &gen, 4, 0.05, &mut krng),
            Err(Error::DegenerateClustering { .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        let data = vec![vec![0.0]; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ndb_score(&[], &data, 2, 0.05, &mut rng).is_err());
        assert!(ndb_score(&data, &[], 2, 0.05, &mut rng).is_err());
        assert!(ndb_score(&data, &data, 11, 0.05, &mut rng).is_err());
        assert!(ndb_score(&data, &data, 0, 0.05, &mut rng).is_err());
        assert!(ndb_score(&data, &data, 2, 0.0, &mut rng).is_err());
        assert!(ndb_score(&data, &data, 2, 1.0, &mut rng).is_err());
        let mixed = vec![vec![0.0], vec![0.0, 1.0]];
        assert!(ndb_score(&mixed, &data, 1, 0.05, &mut rng).is_err());
    }
}
