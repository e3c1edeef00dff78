//! Exact Monte Carlo of the finite pool.
//!
//! Each surviving intensity takes an Euler full-truncation step
//! `λ ← max(λ − α(λ−λ̄)dt + σ√λ⁺ ΔW + β_S λ (ε ΔX), 0)`, the compensator
//! `∫λ⁺` then advances at the post-update rate, and a name defaults the
//! moment its compensator crosses its unit-exponential threshold. Defaults
//! within a step are resolved in order of crossing fraction: every default
//! bumps each surviving intensity by `β_C/N` immediately, and crossings are
//! re-checked until the cascade stops. Default times are therefore resolved
//! sub-step, and the cascade ordering is deterministic (ties by name index).
//!
//! The same engine optionally runs under the tilted measure used by the
//! dependent-case importance sampler: a superimposed pool-wide default clock
//! of rate `βN` (active until the ⌈ℓN⌉-th default) whose firings are
//! attributed to survivors proportionally to their current intensities, and
//! whose log Radon-Nikodym weight is accumulated along the path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{simulate_factor, FactorPath};
use crate::model::{channel, expand_pool, FactorSpec, PoolSpec, SeedSpec, TimeGrid, TypeParams, Violation};

/// One simulated loss trajectory.
#[derive(Debug, Clone)]
pub struct LossPath {
    pub grid: TimeGrid,
    /// `L_{t_k}`, length `n_steps + 1`; nondecreasing, jumps of 1/N.
    pub losses: Vec<f64>,
    /// `(default time, name index)` sorted by time.
    pub default_times: Vec<(f64, usize)>,
    /// Factor trajectory that drove the path (when a factor was active).
    pub factor: Option<FactorPath>,
}

impl LossPath {
    pub fn terminal_loss(&self) -> f64 {
        *self.losses.last().expect("grid has at least one point")
    }
}

/// Per-path random channels. Keeping thresholds/diffusion, factor, and
/// auxiliary clocks on separate streams means optional machinery (an
/// injected factor path, a zero-rate twist clock) never perturbs the base
/// draws.
pub struct PathRngs {
    pub names: ChaCha8Rng,
    pub factor: ChaCha8Rng,
    pub aux: ChaCha8Rng,
}

impl PathRngs {
    pub fn derive(seed: &SeedSpec, run: u64, path: u64) -> Self {
        Self {
            names: seed.substream(run, path, channel::NAMES),
            factor: seed.substream(run, path, channel::FACTOR),
            aux: seed.substream(run, path, channel::AUX),
        }
    }
}

/// Superimposed pool default clock for the dependent-case twist.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Twist {
    /// Additional pool-wide default rate per name (total rate βN).
    pub beta: f64,
    /// The twist switches off after this many defaults (⌈ℓN⌉).
    pub stop_after: usize,
}

pub(crate) struct TwistedPath {
    pub path: LossPath,
    /// log of the Radon-Nikodym weight dP/dQ accumulated up to the
    /// ⌈ℓN⌉-th default (0 when no twist ran).
    pub log_weight: f64,
}

/// Warns when the step size is too coarse for the stiffest mean reversion.
pub fn check_step_size(pool: &PoolSpec, grid: &TimeGrid) -> Vec<Violation> {
    let mut out = Vec::new();
    let dt = grid.dt();
    for (i, group) in pool.groups.iter().enumerate() {
        if group.params.alpha * dt >= 1.0 {
            out.push(Violation::warning(
                format!("groups[{i}].params.alpha"),
                format!(
                    "alpha*dt = {:.3} >= 1; the Euler step is unreliable, refine the grid",
                    group.params.alpha * dt
                ),
            ));
        }
    }
    out
}

/// Simulates one loss path. `rngs` should come from [`PathRngs::derive`] so
/// that ensembles are reproducible; an injected factor path (if any)
/// replaces the simulated one without touching the name-level draws.
pub fn simulate_path(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    rngs: &mut PathRngs,
    injected_factor: Option<&FactorPath>,
) -> Result<LossPath> {
    pool.ensure_valid()?;
    factor.ensure_valid()?;
    grid.ensure_valid()?;
    let params = expand_pool(pool)?;
    run_path(&params, factor, grid, rngs, injected_factor, None).map(|t| t.path)
}

/// Engine shared by the plain simulator and the dependent-case importance
/// sampler. Inputs are assumed validated.
pub(crate) fn run_path(
    params: &[TypeParams],
    factor: &FactorSpec,
    grid: &TimeGrid,
    rngs: &mut PathRngs,
    injected_factor: Option<&FactorPath>,
    twist: Option<Twist>,
) -> Result<TwistedPath> {
    let n = params.len();
    let n_f = n as f64;
    let dt = grid.dt();
    let sq_dt = dt.sqrt();
    let factor_active = factor.is_active();

    // SoA layout for the inner loops.
    let alpha: Vec<f64> = params.iter().map(|p| p.alpha).collect();
    let lambda_bar: Vec<f64> = params.iter().map(|p| p.lambda_bar).collect();
    let sigma: Vec<f64> = params.iter().map(|p| p.sigma).collect();
    let beta_c: Vec<f64> = params.iter().map(|p| p.beta_c).collect();
    let beta_s: Vec<f64> = params.iter().map(|p| p.beta_s).collect();
    let mut lam: Vec<f64> = params.iter().map(|p| p.lambda0).collect();

    // Unit-exponential default thresholds, drawn in name order.
    let mut thr: Vec<f64> = vec![0.0; n];
    for t in thr.iter_mut() {
        *t = rngs.names.sample(Exp1);
    }
    let mut comp = vec![0.0; n];
    let mut alive_count = n;

    let factor_path: Option<FactorPath> = if let Some(fp) = injected_factor {
        if fp.x.len() != grid.n_steps + 1 {
            return Err(Error::InvalidArgument(format!(
                "injected factor path has {} points, grid needs {}",
                fp.x.len(),
                grid.n_steps + 1
            )));
        }
        Some(fp.clone())
    } else if factor_active {
        Some(simulate_factor(factor, grid, &mut rngs.factor))
    } else {
        None
    };

    // Twist clock state (lazily armed so beta = 0 consumes no draws).
    let twist_beta = twist.map(|t| t.beta).unwrap_or(0.0);
    let twist_rate = twist_beta * n_f;
    let twist_cap = twist.map(|t| t.stop_after).unwrap_or(usize::MAX);
    let mut twist_active = twist.is_some() && twist_rate > 0.0 && twist_cap > 0;
    let mut twist_thr = if twist_active {
        rngs.aux.sample::<f64, _>(Exp1)
    } else {
        0.0
    };
    let mut twist_comp = 0.0;
    let mut log_weight = 0.0;
    // Some(weight-tracking) only while the change of measure is in force.
    let mut weight_live = twist.is_some() && twist_cap > 0;

    let mut losses = Vec::with_capacity(grid.n_steps + 1);
    losses.push(0.0);
    let mut default_times: Vec<(f64, usize)> = Vec::new();
    let mut loss = 0.0;
    // Ascending list of surviving names; ascending order makes every
    // tie-break (equal crossing times, equal ratios) resolve to the lowest
    // index.
    let mut alive_idx: Vec<usize> = (0..n).collect();
    let mut rate_total;

    // Candidate for the next crossing, tracked as the (need, rate) pair that
    // minimises need/rate; strict `<` under an ascending scan resolves ties
    // to the lowest name index.
    struct Candidate {
        need: f64,
        rate: f64,
        victim: usize,
    }
    impl Candidate {
        fn none() -> Self {
            Self {
                need: f64::INFINITY,
                rate: 1.0,
                victim: usize::MAX,
            }
        }
        #[inline]
        fn offer(&mut self, need: f64, rate: f64, victim: usize) {
            if need * self.rate < self.need * rate {
                self.need = need;
                self.rate = rate;
                self.victim = victim;
            }
        }
    }

    for step in 0..grid.n_steps {
        let t0 = grid.time(step);
        let eps_dx = match (&factor_path, factor_active) {
            (Some(fp), true) => factor.epsilon * fp.dx(step),
            _ => 0.0,
        };

        // Diffusion update for survivors (dead intensities are frozen),
        // fused with the first crossing scan. Compensators are synced at the
        // step start.
        rate_total = 0.0;
        let mut cand = Candidate::none();
        for &m in &alive_idx {
            let l = lam[m];
            let z: f64 = rngs.names.sample(StandardNormal);
            let next = l - alpha[m] * (l - lambda_bar[m]) * dt
                + sigma[m] * l.max(0.0).sqrt() * sq_dt * z
                + beta_s[m] * l * eps_dx;
            if !next.is_finite() {
                return Err(Error::Numerical(format!(
                    "intensity of name {m} became non-finite at t = {t0}"
                )));
            }
            let r = next.max(0.0);
            lam[m] = r;
            rate_total += r;
            if r > 0.0 {
                cand.offer((thr[m] - comp[m]).max(0.0), r, m);
            }
        }

        // Resolve defaults in crossing order; each default bumps surviving
        // intensities immediately, so the scan repeats after every event.
        // `tau` is the elapsed time within the step; compensators of the
        // survivors are synced at `tau`.
        let mut tau = 0.0;
        while alive_count > 0 {
            let mut twist_fires = false;
            if twist_active {
                let need = (twist_thr - twist_comp).max(0.0);
                if need * cand.rate < cand.need * twist_rate {
                    twist_fires = true;
                }
            }

            let remaining = dt - tau;
            let crossing = if twist_fires {
                (twist_thr - twist_comp).max(0.0) <= twist_rate * remaining
            } else {
                cand.victim != usize::MAX && cand.need <= cand.rate * remaining
            };
            if !crossing {
                for &m in &alive_idx {
                    comp[m] += lam[m] * remaining;
                }
                if twist_active {
                    twist_comp += twist_rate * remaining;
                    log_weight += twist_rate * remaining;
                }
                break;
            }

            let advance = if twist_fires {
                (twist_thr - twist_comp).max(0.0) / twist_rate
            } else {
                cand.need / cand.rate
            };
            if twist_active {
                twist_comp += twist_rate * advance;
                log_weight += twist_rate * advance;
            }
            tau += advance;

            let dead = if twist_fires {
                // Attribute the superimposed default to a survivor drawn
                // proportionally to its current intensity. This keeps the
                // conditional mark kernel identical to the physical one, so
                // the pool-level likelihood ratio Z is the exact density of
                // the original measure with respect to the simulated one.
                if rate_total <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "twist fired at t = {} but surviving intensities sum to zero",
                        t0 + tau
                    )));
                }
                let u: f64 = rngs.aux.random::<f64>() * rate_total;
                let mut acc = 0.0;
                let mut pick = *alive_idx.last().expect("alive names remain");
                for &m in &alive_idx {
                    acc += lam[m];
                    if acc >= u {
                        pick = m;
                        break;
                    }
                }
                twist_thr = rngs.aux.sample(Exp1);
                twist_comp = 0.0;
                pick
            } else {
                cand.victim
            };

            if weight_live {
                if rate_total <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "twist rate undefined at t = {}: surviving intensities sum to zero",
                        t0 + tau
                    )));
                }
                log_weight -= (twist_rate / rate_total + 1.0).ln();
            }

            let pos = alive_idx.binary_search(&dead).expect("victim is alive");
            alive_idx.remove(pos);
            alive_count -= 1;
            comp[dead] = thr[dead];
            loss += 1.0 / n_f;
            default_times.push((t0 + tau, dead));

            if default_times.len() >= twist_cap {
                twist_active = false;
                weight_live = false;
            }
            if alive_count == 0 {
                break;
            }

            // One fused pass over the survivors: sync compensators to `tau`
            // at the pre-bump rates, apply this default's contagion jump,
            // and rebuild the crossing candidate at the new rates.
            let bump = 1.0 / n_f;
            cand = Candidate::none();
            rate_total = 0.0;
            for &m in &alive_idx {
                comp[m] += lam[m] * advance;
                let r = lam[m] + beta_c[m] * bump;
                lam[m] = r;
                rate_total += r;
                if r > 0.0 {
                    cand.offer((thr[m] - comp[m]).max(0.0), r, m);
                }
            }
        }

        losses.push(loss);
    }

    Ok(TwistedPath {
        path: LossPath {
            grid: *grid,
            losses,
            default_times,
            factor: factor_path,
        },
        log_weight,
    })
}

/// Ensemble knobs: whether to keep full paths (with their factor
/// trajectories) or just terminal losses.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnsembleOptions {
    pub keep_paths: bool,
}

/// Result of an independent-path ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Terminal losses `L^N_T`, indexed by path.
    pub terminal: Vec<f64>,
    /// Full paths when requested.
    pub paths: Option<Vec<LossPath>>,
}

/// Runs `n_paths` independent paths in parallel. Path `j` draws from the
/// `(run, j)` streams of `seed`, and results are assembled in path order, so
/// the output is identical however the work is scheduled.
pub fn simulate_ensemble(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: &SeedSpec,
    run: u64,
    opts: EnsembleOptions,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    pool.ensure_valid()?;
    factor.ensure_valid()?;
    grid.ensure_valid()?;
    let params = expand_pool(pool)?;

    let paths: Vec<LossPath> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rngs = PathRngs::derive(seed, run, j as u64);
            run_path(&params, factor, grid, &mut rngs, None, None).map(|t| {
                let mut p = t.path;
                if !opts.keep_paths {
                    p.factor = None;
                }
                p
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let terminal = paths.iter().map(|p| p.terminal_loss()).collect();
    Ok(Ensemble {
        terminal,
        paths: opts.keep_paths.then_some(paths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorKind, PoolGroup};
    use crate::stats;

    fn constant_pool(lambda: f64, n: usize) -> PoolSpec {
        PoolSpec::homogeneous(
            TypeParams {
                lambda0: lambda,
                alpha: 1.0,
                lambda_bar: lambda,
                sigma: 0.0,
                beta_c: 0.0,
                beta_s: 0.0,
            },
            n,
        )
    }

    #[test]
    fn constant_intensity_default_probability() {
        // lambda = 2 constant: P(default by 1) = 1 - e^-2
        let pool = constant_pool(2.0, 1);
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let seed = SeedSpec::new(11);
        let ens = simulate_ensemble(
            &pool,
            &FactorSpec::none(),
            &grid,
            20_000,
            &seed,
            0,
            EnsembleOptions::default(),
        )
        .unwrap();
        let p_hat = stats::mean(&ens.terminal);
        let p = 1.0 - (-2.0f64).exp();
        let stderr = (p * (1.0 - p) / 20_000.0).sqrt();
        assert!(
            (p_hat - p).abs() < 3.0 * stderr,
            "p_hat = {p_hat}, p = {p}, stderr = {stderr}"
        );
    }

    #[test]
    fn loss_paths_step_by_one_over_n() {
        let pool = PoolSpec {
            groups: vec![
                PoolGroup {
                    params: TypeParams {
                        lambda0: 1.0,
                        alpha: 2.0,
                        lambda_bar: 1.5,
                        sigma: 0.6,
                        beta_c: 2.0,
                        beta_s: 0.0,
                    },
                    weight: 0.5,
                },
                PoolGroup {
                    params: TypeParams {
                        lambda0: 0.5,
                        alpha: 1.0,
                        lambda_bar: 0.5,
                        sigma: 0.3,
                        beta_c: 0.5,
                        beta_s: 0.0,
                    },
                    weight: 0.5,
                },
            ],
            n_names: 8,
        };
        let grid = TimeGrid::new(2.0, 100).unwrap();
        let seed = SeedSpec::new(5);
        for j in 0..50 {
            let mut rngs = PathRngs::derive(&seed, 0, j);
            let path = simulate_path(&pool, &FactorSpec::none(), &grid, &mut rngs, None).unwrap();
            for w in path.losses.windows(2) {
                let jump = w[1] - w[0];
                assert!(jump >= -1e-15);
                let units = jump * 8.0;
                assert!(
                    (units - units.round()).abs() < 1e-9,
                    "loss jump {jump} is not a multiple of 1/N"
                );
            }
            assert!(
                (path.terminal_loss() - path.default_times.len() as f64 / 8.0).abs() < 1e-12
            );
            // default times sorted
            for w in path.default_times.windows(2) {
                assert!(w[0].0 <= w[1].0);
            }
        }
    }

    #[test]
    fn independent_names_are_uncorrelated() {
        let pool = constant_pool(0.7, 2);
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let ens = simulate_ensemble(
            &pool,
            &FactorSpec::none(),
            &grid,
            10_000,
            &SeedSpec::new(21),
            0,
            EnsembleOptions { keep_paths: true },
        )
        .unwrap();
        let paths = ens.paths.unwrap();
        let ind = |p: &LossPath, name: usize| -> f64 {
            p.default_times.iter().any(|&(_, n)| n == name) as u8 as f64
        };
        let a: Vec<f64> = paths.iter().map(|p| ind(p, 0)).collect();
        let b: Vec<f64> = paths.iter().map(|p| ind(p, 1)).collect();
        let ma = stats::mean(&a);
        let mb = stats::mean(&b);
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() as f64 - 1.0);
        // Var of the sample covariance of independent Bernoullis ~ pa(1-pa)pb(1-pb)/n
        let stderr = (ma * (1.0 - ma) * mb * (1.0 - mb) / a.len() as f64).sqrt();
        assert!(cov.abs() < 4.0 * stderr, "cov = {cov}, stderr = {stderr}");
    }

    #[test]
    fn halving_dt_moves_mean_less_than_mc_error() {
        let pool = PoolSpec::homogeneous(
            TypeParams {
                lambda0: 0.2,
                alpha: 4.0,
                lambda_bar: 0.2,
                sigma: 0.9,
                beta_c: 2.0,
                beta_s: 0.0,
            },
            50,
        );
        let seed = SeedSpec::new(123);
        let coarse = simulate_ensemble(
            &pool,
            &FactorSpec::none(),
            &TimeGrid::new(1.0, 100).unwrap(),
            4000,
            &seed,
            0,
            EnsembleOptions::default(),
        )
        .unwrap();
        let fine = simulate_ensemble(
            &pool,
            &FactorSpec::none(),
            &TimeGrid::new(1.0, 200).unwrap(),
            4000,
            &seed,
            1,
            EnsembleOptions::default(),
        )
        .unwrap();
        let diff = (stats::mean(&coarse.terminal) - stats::mean(&fine.terminal)).abs();
        let se = (stats::variance(&coarse.terminal) / 4000.0).sqrt()
            + (stats::variance(&fine.terminal) / 4000.0).sqrt();
        assert!(diff < se, "diff = {diff}, joint stderr = {se}");
    }

    #[test]
    fn ensembles_are_deterministic_and_scheduling_independent() {
        let pool = crate::model::tests::table1_pool(40);
        let factor = FactorSpec {
            kind: FactorKind::Ou {
                gamma: 1.0,
                vol: 1.0,
                mean: 0.0,
            },
            x0: 0.0,
            epsilon: 0.15,
        };
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let seed = SeedSpec::new(77);
        let a = simulate_ensemble(&pool, &factor, &grid, 64, &seed, 0, EnsembleOptions::default())
            .unwrap();
        let b = simulate_ensemble(&pool, &factor, &grid, 64, &seed, 0, EnsembleOptions::default())
            .unwrap();
        assert_eq!(a.terminal, b.terminal);
        // serial reference: same per-path streams, no rayon
        let params = expand_pool(&pool).unwrap();
        let serial: Vec<f64> = (0..64)
            .map(|j| {
                let mut rngs = PathRngs::derive(&seed, 0, j);
                run_path(&params, &factor, &grid, &mut rngs, None, None)
                    .unwrap()
                    .path
                    .terminal_loss()
            })
            .collect();
        assert_eq!(a.terminal, serial);
    }

    #[test]
    fn zero_paths_rejected() {
        let pool = constant_pool(1.0, 2);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let err = simulate_ensemble(
            &pool,
            &FactorSpec::none(),
            &grid,
            0,
            &SeedSpec::new(0),
            0,
            EnsembleOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn step_size_warning_fires() {
        let pool = PoolSpec::homogeneous(
            TypeParams {
                lambda0: 0.1,
                alpha: 600.0,
                lambda_bar: 0.1,
                sigma: 0.0,
                beta_c: 0.0,
                beta_s: 0.0,
            },
            2,
        );
        let grid = TimeGrid::new(1.0, 500).unwrap();
        assert_eq!(check_step_size(&pool, &grid).len(), 1);
    }
}
