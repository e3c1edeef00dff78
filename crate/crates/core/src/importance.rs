//! Rare-event estimators for `P{L^N_T ≥ ℓ}`.
//!
//! Independent pools: exponential tilting. Each name defaults with
//! probability `p`, the tilted probability is `p_θ = p·e^θ/(1 + p(e^θ−1))`,
//! and the estimator averages `1{L ≥ ℓ}·e^{N(−θL + Λ̄(θ))}` with
//! `Λ̄(θ) = ln(p(e^θ−1)+1)` over samples of `NL ~ Binomial(N, p_θ)`. The
//! optimal tilt `θ* = ln(ℓ(1−p)/(p(1−ℓ)))` makes the tilted default
//! probability equal ℓ and is asymptotically optimal: the second moment
//! decays at twice the large-deviations rate.
//!
//! Dependent pools (contagion and/or systematic coupling): the pool-level
//! default counter is twisted by a superimposed rate `βN` until the ⌈ℓN⌉-th
//! default, with likelihood ratio
//! `Z = exp(−Σ_k ln θ(S_k⁻) + ∫ (θ_s−1)Σλ ds)`, `θ_s = βN/Σλ + 1`,
//! accumulated by the simulation engine. β is chosen by pilot-run grid
//! search over the empirical second moment.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::affine::{survival_curve, ForcedPaths};
use crate::error::{Error, Result};
use crate::model::{expand_pool, FactorSpec, PoolSpec, SeedSpec, TimeGrid, TypeParams};
use crate::sim::{run_path, PathRngs, Twist};

/// Exponentially tilted per-name default probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedBernoulli {
    pub p: f64,
    pub theta: f64,
    /// `p_θ = p·e^θ / (1 + p(e^θ − 1))`.
    pub p_theta: f64,
    /// Scaled log-MGF `Λ̄(θ) = ln(p(e^θ − 1) + 1)`.
    pub log_mgf: f64,
}

impl TiltedBernoulli {
    pub fn new(p: f64, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "default probability must lie in [0, 1], got {p}"
            )));
        }
        let denom = p * (theta.exp() - 1.0) + 1.0;
        Ok(Self {
            p,
            theta,
            p_theta: p * theta.exp() / denom,
            log_mgf: denom.ln(),
        })
    }
}

/// The variance-optimal tilt: `ln(ℓ(1−p)/(p(1−ℓ)))` when `ℓ > p`, else 0.
pub fn theta_star(p: f64, ell: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "default probability must lie strictly in (0, 1), got {p}"
        )));
    }
    if !(ell > 0.0 && ell < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target loss must lie strictly in (0, 1), got {ell}"
        )));
    }
    if ell <= p {
        Ok(0.0)
    } else {
        Ok((ell * (1.0 - p) / (p * (1.0 - ell))).ln())
    }
}

/// Outcome of one importance-sampling run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IsEstimate {
    /// Sample mean of the weighted indicator — the tail probability.
    pub estimate: f64,
    /// Sample variance of a single weighted draw.
    pub sample_variance: f64,
    /// `stdev / (estimate·√M)`.
    pub relative_error: f64,
    pub n_samples: usize,
    /// Empirical second moment Q̂ of a single weighted draw.
    pub second_moment: f64,
    /// `−(1/N)·ln Q̂`, the decay diagnostic of the optimality theorem.
    pub decay: f64,
    /// Standard error of the second-moment estimate.
    pub second_moment_std_error: f64,
    /// θ for tilted estimators, β for the dependent twist.
    pub tilt_parameter: f64,
}

fn summarize(weights: &[f64], n_names: usize, tilt_parameter: f64) -> IsEstimate {
    let m = weights.len();
    let estimate = crate::stats::mean(weights);
    let sample_variance = crate::stats::variance(weights);
    let squared: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let second_moment = crate::stats::mean(&squared);
    let relative_error = if estimate > 0.0 {
        sample_variance.sqrt() / (estimate * (m as f64).sqrt())
    } else {
        f64::INFINITY
    };
    IsEstimate {
        estimate,
        sample_variance,
        relative_error,
        n_samples: m,
        second_moment,
        decay: -second_moment.ln() / n_names as f64,
        second_moment_std_error: crate::stats::std_error(&squared),
        tilt_parameter,
    }
}

/// Per-name default probability of an independent (β_C = β_S = 0) type over
/// the grid horizon.
pub fn default_probability(params: &TypeParams, grid: &TimeGrid, k_moments: usize) -> Result<f64> {
    Ok(survival_curve(params, &ForcedPaths::zero(*grid), k_moments)?.default_probability())
}

/// Tilted estimator of `P{L^N_T ≥ ℓ}` for a homogeneous independent pool,
/// at an explicit tilt θ (θ = 0 is plain Monte Carlo).
#[allow(clippy::too_many_arguments)]
pub fn estimate_independent_with_tilt(
    params: &TypeParams,
    grid: &TimeGrid,
    k_moments: usize,
    ell: f64,
    n_names: usize,
    n_samples: usize,
    theta: f64,
    seed: &SeedSpec,
    run: u64,
) -> Result<IsEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    if n_names == 0 {
        return Err(Error::InvalidArgument("n_names must be positive".into()));
    }
    let p = default_probability(params, grid, k_moments)?;
    let tilt = TiltedBernoulli::new(p, theta)?;
    let binom = Binomial::new(n_names as u64, tilt.p_theta)
        .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?;
    let n_f = n_names as f64;
    let threshold = (ell * n_f).ceil() as u64;

    let weights: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed.stream(run, j as u64);
            let defaults = binom.sample(&mut rng);
            if defaults >= threshold {
                (n_f * (-theta * defaults as f64 / n_f + tilt.log_mgf)).exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(summarize(&weights, n_names, theta))
}

/// [`estimate_independent_with_tilt`] at the optimal tilt θ*(p, ℓ).
pub fn estimate_independent(
    params: &TypeParams,
    grid: &TimeGrid,
    k_moments: usize,
    ell: f64,
    n_names: usize,
    n_samples: usize,
    seed: &SeedSpec,
    run: u64,
) -> Result<IsEstimate> {
    let p = default_probability(params, grid, k_moments)?;
    let theta = theta_star(p, ell)?;
    estimate_independent_with_tilt(params, grid, k_moments, ell, n_names, n_samples, theta, seed, run)
}

/// One row of the asymptotic-optimality table.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DecayPoint {
    pub n_names: usize,
    /// `−(1/N)·ln Q̂`.
    pub decay: f64,
    pub second_moment: f64,
    pub estimate: f64,
}

/// Empirical decay of the second moment at θ* across pool sizes. The
/// optimality theorem sends `−(1/N)ln Q` to twice the independent-case rate
/// from above as N grows.
#[allow(clippy::too_many_arguments)]
pub fn optimality_check(
    params: &TypeParams,
    grid: &TimeGrid,
    k_moments: usize,
    ell: f64,
    n_list: &[usize],
    n_samples: usize,
    seed: &SeedSpec,
    run_base: u64,
) -> Result<Vec<DecayPoint>> {
    n_list
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let est = estimate_independent(
                params,
                grid,
                k_moments,
                ell,
                n,
                n_samples,
                seed,
                run_base + idx as u64,
            )?;
            Ok(DecayPoint {
                n_names: n,
                decay: est.decay,
                second_moment: est.second_moment,
                estimate: est.estimate,
            })
        })
        .collect()
}

/// Root of `Σ_n p_{n,θ} = N·ℓ` in θ (monotone; bisection). Heterogeneous
/// tilts may be negative when ℓ sits below the pool-average default
/// probability.
fn common_tilt(groups: &[(f64, usize)], n_names: usize, ell: f64) -> Result<f64> {
    let target = ell * n_names as f64;
    let tilted_sum = |theta: f64| -> f64 {
        groups
            .iter()
            .map(|&(p, c)| {
                let denom = p * (theta.exp() - 1.0) + 1.0;
                c as f64 * p * theta.exp() / denom
            })
            .sum()
    };
    let attainable_max: f64 = groups
        .iter()
        .map(|&(p, c)| if p > 0.0 { c as f64 } else { 0.0 })
        .sum();
    let attainable_min: f64 = groups
        .iter()
        .map(|&(p, c)| if p >= 1.0 { c as f64 } else { 0.0 })
        .sum();
    if target >= attainable_max || target <= attainable_min {
        return Err(Error::InvalidArgument(format!(
            "no tilt reaches a mean loss of {ell}: attainable range is \
             ({}, {})",
            attainable_min / n_names as f64,
            attainable_max / n_names as f64
        )));
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while tilted_sum(lo) > target {
        lo *= 2.0;
        if lo < -700.0 {
            return Err(Error::Numerical("tilt bracketing failed (low)".into()));
        }
    }
    while tilted_sum(hi) < target {
        hi *= 2.0;
        if hi > 700.0 {
            return Err(Error::Numerical("tilt bracketing failed (high)".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tilted_sum(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tilted estimator for a heterogeneous but independent pool: one common
/// tilt θ with `Σ_n p_{n,θ} = Nℓ`, per-name likelihood ratios multiplied in
/// log space group by group.
pub fn estimate_heterogeneous_independent(
    pool: &PoolSpec,
    grid: &TimeGrid,
    k_moments: usize,
    ell: f64,
    n_samples: usize,
    seed: &SeedSpec,
    run: u64,
) -> Result<IsEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    pool.ensure_valid()?;
    let counts = crate::model::group_counts(pool)?;
    let mut groups: Vec<(f64, usize)> = Vec::with_capacity(pool.groups.len());
    for (g, &c) in pool.groups.iter().zip(&counts) {
        groups.push((default_probability(&g.params, grid, k_moments)?, c));
    }
    let n = pool.n_names;
    let theta = common_tilt(&groups, n, ell)?;

    struct GroupSampler {
        binom: Binomial,
        ln_ratio_hit: f64,  // ln(p / p_θ)
        ln_ratio_miss: f64, // ln((1−p) / (1−p_θ))
        count: usize,
    }
    let samplers: Vec<GroupSampler> = groups
        .iter()
        .map(|&(p, c)| {
            let tilt = TiltedBernoulli::new(p, theta)?;
            Ok(GroupSampler {
                binom: Binomial::new(c as u64, tilt.p_theta)
                    .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?,
                ln_ratio_hit: if p > 0.0 { (p / tilt.p_theta).ln() } else { 0.0 },
                ln_ratio_miss: if p < 1.0 {
                    ((1.0 - p) / (1.0 - tilt.p_theta)).ln()
                } else {
                    0.0
                },
                count: c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = (ell * n as f64).ceil() as u64;

    let weights: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed.stream(run, j as u64);
            let mut defaults = 0u64;
            let mut log_w = 0.0;
            for s in &samplers {
                let k = s.binom.sample(&mut rng);
                defaults += k;
                log_w += k as f64 * s.ln_ratio_hit + (s.count as u64 - k) as f64 * s.ln_ratio_miss;
            }
            if defaults >= threshold {
                log_w.exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(summarize(&weights, n, theta))
}

/// Intensity-twist estimator for the dependent case: simulates the full
/// system under the measure with superimposed pool default rate βN (active
/// until the ⌈ℓN⌉-th default) and averages `1{L ≥ ℓ}·Z`. β = 0 recovers
/// plain Monte Carlo with unit weights on the same paths.
#[allow(clippy::too_many_arguments)]
pub fn estimate_dependent(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    ell: f64,
    beta: f64,
    n_samples: usize,
    seed: &SeedSpec,
    run: u64,
) -> Result<IsEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    if !(ell > 0.0 && ell <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target loss must lie in (0, 1], got {ell}"
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "superimposed rate beta must be nonnegative, got {beta}"
        )));
    }
    pool.ensure_valid()?;
    factor.ensure_valid()?;
    grid.ensure_valid()?;
    let params = expand_pool(pool)?;
    let cap = (ell * pool.n_names as f64).ceil() as usize;
    let twist = Twist {
        beta,
        stop_after: cap,
    };

    let weights: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rngs = PathRngs::derive(seed, run, j as u64);
            let out = run_path(&params, factor, grid, &mut rngs, None, Some(twist))?;
            if out.path.default_times.len() >= cap {
                Ok(out.log_weight.exp())
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&weights, pool.n_names, beta))
}

/// One pilot row of the β grid search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BetaPilot {
    pub beta: f64,
    pub estimate: IsEstimate,
}

/// β grid search by pilot runs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BetaSelection {
    pub table: Vec<BetaPilot>,
    /// Argmin of the empirical second moment (ties → first grid entry).
    pub best_beta: f64,
}

/// Pilot-run grid search for the superimposed rate: runs
/// [`estimate_dependent`] with `n_pilot` samples at every β in the grid and
/// picks the empirical second-moment minimizer. Pilot run `i` uses run index
/// `pilot_run_base + i` of the same seed.
///
/// A pilot that never saw the event (estimate 0, hence Q̂ = 0) carries no
/// information about the second moment and is excluded from the argmin; it
/// still appears in the table. If no pilot saw the event the first grid
/// entry is returned.
#[allow(clippy::too_many_arguments)]
pub fn select_beta(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    ell: f64,
    betas: &[f64],
    n_pilot: usize,
    seed: &SeedSpec,
    pilot_run_base: u64,
) -> Result<BetaSelection> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("beta grid must be nonempty".into()));
    }
    let mut table = Vec::with_capacity(betas.len());
    for (i, &beta) in betas.iter().enumerate() {
        let estimate = estimate_dependent(
            pool,
            factor,
            grid,
            ell,
            beta,
            n_pilot,
            seed,
            pilot_run_base + i as u64,
        )?;
        table.push(BetaPilot { beta, estimate });
    }
    let best_beta = table
        .iter()
        .filter(|r| r.estimate.estimate > 0.0)
        .min_by(|a, b| {
            a.estimate
                .second_moment
                .partial_cmp(&b.estimate.second_moment)
                .unwrap()
        })
        .map(|r| r.beta)
        .unwrap_or(betas[0]);
    Ok(BetaSelection { table, best_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::binomial_rate;
    use crate::model::{PoolGroup, PoolSpec};
    use rand::SeedableRng;

    /// Constant-intensity type with exact default probability `p` by T=1.
    fn constant_p(p: f64) -> TypeParams {
        let lambda = -(1.0 - p).ln();
        TypeParams {
            lambda0: lambda,
            alpha: 1.0,
            lambda_bar: lambda,
            sigma: 0.0,
            beta_c: 0.0,
            beta_s: 0.0,
        }
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 400).unwrap()
    }

    fn binomial_tail(n: usize, p: f64, k_min: usize) -> f64 {
        let mut pmf = (1.0 - p).powi(n as i32);
        let mut cdf_below = 0.0;
        for k in 0..k_min {
            cdf_below += pmf;
            pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        }
        1.0 - cdf_below
    }

    #[test]
    fn theta_star_reference_values() {
        let t = theta_star(0.3, 0.5).unwrap();
        assert!((t - (7.0f64 / 3.0).ln()).abs() < 1e-14);
        assert_eq!(theta_star(0.5, 0.3).unwrap(), 0.0);
        assert!(theta_star(0.0, 0.5).is_err());
        assert!(theta_star(0.3, 1.0).is_err());
        // tilted probability hits the target
        let tilt = TiltedBernoulli::new(0.3, t).unwrap();
        assert!((tilt.p_theta - 0.5).abs() < 1e-14);
        assert!((TiltedBernoulli::new(0.3, 0.0).unwrap().p_theta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tilt_identity_matches_rate_on_random_pairs() {
        // θ*ℓ − Λ̄(θ*) = I^ind(ℓ), and the per-name product weight equals
        // exp(N(−θL + Λ̄)) — both to 1e−12.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let p: f64 = rand::Rng::random_range(&mut rng, 0.02..0.95);
            let ell: f64 = rand::Rng::random_range(&mut rng, p + 0.01..0.99);
            let theta = theta_star(p, ell).unwrap();
            let tilt = TiltedBernoulli::new(p, theta).unwrap();
            let lhs = theta * ell - tilt.log_mgf;
            let rhs = binomial_rate(p, ell);
            assert!((lhs - rhs).abs() < 1e-12, "p={p} ell={ell}: {lhs} vs {rhs}");

            let n = 37usize;
            let k = (ell * n as f64).round() as usize;
            let product = k as f64 * (p / tilt.p_theta).ln()
                + (n - k) as f64 * ((1.0 - p) / (1.0 - tilt.p_theta)).ln();
            let closed = n as f64 * (-theta * k as f64 / n as f64 + tilt.log_mgf);
            assert!((product - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_estimator_matches_binomial_tail() {
        let params = constant_p(0.3);
        let est =
            estimate_independent(&params, &grid(), 8, 0.5, 10, 20_000, &SeedSpec::new(7), 0)
                .unwrap();
        let exact = binomial_tail(10, 0.3, 5);
        assert!((exact - 0.15026833).abs() < 1e-6);
        let stderr = (est.sample_variance / 20_000.0).sqrt();
        assert!(
            (est.estimate - exact).abs() < 3.0 * stderr,
            "estimate {} vs exact {exact} (stderr {stderr})",
            est.estimate
        );
    }

    #[test]
    fn zero_tilt_is_plain_monte_carlo() {
        let params = constant_p(0.3);
        let est = estimate_independent_with_tilt(
            &params,
            &grid(),
            8,
            0.5,
            10,
            5_000,
            0.0,
            &SeedSpec::new(3),
            0,
        )
        .unwrap();
        // weights are exactly 0/1, so the sample mean is a hit-rate
        let hits = (est.estimate * 5_000.0).round();
        assert!((est.estimate * 5_000.0 - hits).abs() < 1e-9);
        assert!((est.second_moment - est.estimate).abs() < 1e-12);
    }

    #[test]
    fn tilting_beats_plain_monte_carlo_variance() {
        let params = constant_p(0.3);
        let g = grid();
        let seed = SeedSpec::new(17);
        let plain =
            estimate_independent_with_tilt(&params, &g, 8, 0.5, 100, 100_000, 0.0, &seed, 0)
                .unwrap();
        let tilted = estimate_independent(&params, &g, 8, 0.5, 100, 100_000, &seed, 1).unwrap();
        assert!(plain.sample_variance > 0.0, "plain MC saw no tail events");
        assert!(
            plain.sample_variance / tilted.sample_variance > 100.0,
            "variance ratio {}",
            plain.sample_variance / tilted.sample_variance
        );
    }

    #[test]
    fn heterogeneous_tilt_reaches_target_and_matches_poisson_binomial() {
        let pool = PoolSpec {
            groups: vec![
                PoolGroup {
                    params: constant_p(0.2),
                    weight: 0.5,
                },
                PoolGroup {
                    params: constant_p(0.4),
                    weight: 0.5,
                },
            ],
            n_names: 10,
        };
        let g = grid();
        let est =
            estimate_heterogeneous_independent(&pool, &g, 8, 0.6, 30_000, &SeedSpec::new(23), 0)
                .unwrap();
        // Poisson-binomial tail by DP convolution: 5 names at 0.2, 5 at 0.4.
        let mut dist = vec![1.0f64];
        for &p in [0.2f64; 5].iter().chain([0.4f64; 5].iter()) {
            let mut next = vec![0.0; dist.len() + 1];
            for (k, &w) in dist.iter().enumerate() {
                next[k] += w * (1.0 - p);
                next[k + 1] += w * p;
            }
            dist = next;
        }
        let exact: f64 = dist[6..].iter().sum();
        let stderr = (est.sample_variance / 30_000.0).sqrt();
        assert!(
            (est.estimate - exact).abs() < 3.0 * stderr,
            "estimate {} vs exact {exact} (stderr {stderr})",
            est.estimate
        );
        // the common tilt reaches the target mean loss for the default
        // probabilities the estimator actually used
        let theta = est.tilt_parameter;
        let p_theta = |p: f64| p * theta.exp() / (1.0 + p * (theta.exp() - 1.0));
        let p_a = default_probability(&constant_p(0.2), &g, 8).unwrap();
        let p_b = default_probability(&constant_p(0.4), &g, 8).unwrap();
        let reached = 5.0 * p_theta(p_a) + 5.0 * p_theta(p_b);
        assert!((reached - 6.0).abs() < 1e-10, "reached {reached}");
    }

    #[test]
    fn heterogeneous_with_equal_groups_reduces_to_independent() {
        let pool = PoolSpec::homogeneous(constant_p(0.3), 10);
        let g = grid();
        let seed = SeedSpec::new(5);
        let het = estimate_heterogeneous_independent(&pool, &g, 8, 0.5, 4_000, &seed, 0).unwrap();
        let ind = estimate_independent(&pool.groups[0].params, &g, 8, 0.5, 10, 4_000, &seed, 0)
            .unwrap();
        assert!((het.estimate - ind.estimate).abs() < 1e-12);
        assert!((het.tilt_parameter - ind.tilt_parameter).abs() < 1e-9);
    }

    #[test]
    fn infeasible_heterogeneous_targets_are_rejected() {
        let pool = PoolSpec::homogeneous(constant_p(0.3), 10);
        let g = grid();
        assert!(
            estimate_heterogeneous_independent(&pool, &g, 8, 1.0, 10, &SeedSpec::new(1), 0)
                .is_err()
        );
    }

    #[test]
    fn dependent_twist_at_zero_beta_reproduces_plain_paths() {
        let pool = crate::model::tests::table1_pool(20);
        let g = TimeGrid::new(1.0, 100).unwrap();
        let seed = SeedSpec::new(44);
        let params = expand_pool(&pool).unwrap();
        for j in 0..20 {
            let mut rngs = PathRngs::derive(&seed, 0, j);
            let plain = run_path(&params, &FactorSpec::none(), &g, &mut rngs, None, None).unwrap();
            let mut rngs = PathRngs::derive(&seed, 0, j);
            let twisted = run_path(
                &params,
                &FactorSpec::none(),
                &g,
                &mut rngs,
                None,
                Some(Twist {
                    beta: 0.0,
                    stop_after: 10,
                }),
            )
            .unwrap();
            assert_eq!(plain.path.losses, twisted.path.losses);
            assert_eq!(plain.path.default_times, twisted.path.default_times);
            assert_eq!(twisted.log_weight, 0.0);
        }
    }

    #[test]
    fn dependent_twist_is_unbiased_on_the_independent_subcase() {
        let pool = PoolSpec::homogeneous(constant_p(0.3), 10);
        let g = TimeGrid::new(1.0, 200).unwrap();
        let exact = binomial_tail(10, 0.3, 5);
        for (i, beta) in [0.5, 1.0].iter().enumerate() {
            let est = estimate_dependent(
                &pool,
                &FactorSpec::none(),
                &g,
                0.5,
                *beta,
                20_000,
                &SeedSpec::new(55),
                i as u64,
            )
            .unwrap();
            let stderr = (est.sample_variance / 20_000.0).sqrt();
            assert!(
                (est.estimate - exact).abs() < 3.0 * stderr,
                "beta {beta}: estimate {} vs exact {exact} (stderr {stderr})",
                est.estimate
            );
        }
    }

    #[test]
    fn beta_grid_search_reports_table_and_argmin() {
        let pool = crate::model::tests::table1_pool(60);
        let g = TimeGrid::new(1.0, 100).unwrap();
        let seed = SeedSpec::new(61);
        let selection = select_beta(
            &pool,
            &FactorSpec::none(),
            &g,
            0.9,
            &[0.0, 0.3],
            500,
            &seed,
            1_000,
        )
        .unwrap();
        assert_eq!(selection.table.len(), 2);
        // the event is far too rare for plain MC at this pilot size; only
        // the twisted pilot is informative
        assert_eq!(selection.table[0].estimate.estimate, 0.0);
        assert!(selection.table[1].estimate.estimate > 0.0);
        assert_eq!(selection.best_beta, 0.3);
        // degenerate single-point grid
        let only_zero = select_beta(
            &pool,
            &FactorSpec::none(),
            &g,
            0.9,
            &[0.0],
            100,
            &seed,
            2_000,
        )
        .unwrap();
        assert_eq!(only_zero.best_beta, 0.0);
        assert!(select_beta(&pool, &FactorSpec::none(), &g, 0.9, &[], 10, &seed, 0).is_err());
    }
}
