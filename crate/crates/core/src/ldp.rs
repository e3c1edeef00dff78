//! Large-deviations rate functions and most-likely paths to atypically
//! large losses.
//!
//! For a pool of `K` homogeneous types with weights `wᵢ`, the decay rate of
//! `P{L^N_T ≥ ℓ}` in the small-factor regime `N ε_N² → c` is
//!
//! ```text
//! I′(ℓ) = inf { Σᵢ wᵢ g^{pᵢ}(φᵢ, φ̄, ψ) + J_X(ψ)/c :
//!               φ̄ = Σᵢ wᵢ φᵢ, φ̄(T) = ℓ, φᵢ(0) = ψ(0) = 0 },
//!
//! g^p(ξ, φ, ψ) = ∫₀ᵀ ln(ξ̇/f^p_{φ,ψ}) ξ̇ dt
//!              + ln((1−ξ(T))/(1−∫₀ᵀ f^p_{φ,ψ})) (1−ξ(T)),
//!
//! J_X(ψ) = 1/(2·vol²) ∫₀ᵀ |ψ̇ + γψ|² dt        (OU factor, mean 0),
//! ```
//!
//! where `f^p_{φ,ψ}` is the forced default density from [`crate::affine`].
//! Independent homogeneous pools admit the closed form
//! `I(ℓ) = ℓ·ln(ℓ/p) + (1−ℓ)·ln((1−ℓ)/(1−p))` with optimal path
//! `φ(t) = ℓ·μ₀[0,t]/p`.
//!
//! The infimum is taken over piecewise-linear paths on a grid: per-type
//! increments enter through their square roots (monotonicity for free), the
//! terminal constraint is enforced by proportional renormalization of the
//! aggregate, and the resulting unconstrained problem is minimized with BFGS
//! (finite-difference gradients, multi-start).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::affine::{exp_moments, survival_curve, ForcedPaths};
use crate::error::{Error, Result};
use crate::lln::solve_lln;
use crate::model::{FactorKind, FactorSpec, PoolSpec, TimeGrid, TypeParams};

/// Bernoulli relative entropy `ℓ·ln(ℓ/p) + (1−ℓ)·ln((1−ℓ)/(1−p))`, the
/// independent-case rate, with the `0·ln 0 = 0` convention at `ℓ = 1`.
pub fn binomial_rate(p: f64, ell: f64) -> f64 {
    let head = ell * (ell / p).ln();
    let tail = if ell >= 1.0 {
        0.0
    } else {
        (1.0 - ell) * ((1.0 - ell) / (1.0 - p)).ln()
    };
    head + tail
}

/// Closed-form independent-case result.
#[derive(Debug, Clone)]
pub struct IndependentRate {
    pub value: f64,
    /// Per-name default probability `p = μ₀[0,T]`.
    pub default_probability: f64,
    /// Optimal path `φ(t) = ℓ·μ₀[0,t]/p` on the grid.
    pub path: Vec<f64>,
    pub grid: TimeGrid,
}

/// Rate and extremal path for one independent homogeneous type.
pub fn rate_independent(
    params: &TypeParams,
    grid: &TimeGrid,
    k_moments: usize,
    ell: f64,
) -> Result<IndependentRate> {
    if !(0.0..1.0).contains(&ell) || ell <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "target loss must lie in (0, 1), got {ell}"
        )));
    }
    let curve = survival_curve(params, &ForcedPaths::zero(*grid), k_moments)?;
    let p = curve.default_probability();
    if !(1e-12..=1.0 - 1e-12).contains(&p) {
        return Err(Error::Numerical(format!(
            "default probability {p} is degenerate; the rate function is undefined"
        )));
    }
    let path = curve
        .default_cdf()
        .iter()
        .map(|m| ell * m / p)
        .collect();
    Ok(IndependentRate {
        value: binomial_rate(p, ell),
        default_probability: p,
        path,
        grid: *grid,
    })
}

/// Optimizer exit condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum OptimStatus {
    Converged,
    MaxIterations,
    LineSearchStalled,
}

/// Knobs for the BFGS search.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub value_tolerance: f64,
    pub fd_step: f64,
    /// Extra starting path (e.g. the argmin at a neighboring ℓ).
    pub warm_start: Option<RatePath>,
    /// Run the three default starts (unforced CDFs, typical trajectory,
    /// uniform ramp). Curve sweeps switch this off once a warm start from
    /// the previous target is available.
    pub include_default_starts: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            gradient_tolerance: 1e-7,
            value_tolerance: 1e-13,
            fd_step: 1e-6,
            warm_start: None,
            include_default_starts: true,
        }
    }
}

/// Discretized extremal paths.
#[derive(Debug, Clone)]
pub struct RatePath {
    pub grid: TimeGrid,
    /// Within-type cumulative loss fractions φ_{Aᵢ}(t_k), one row per type.
    pub per_type_phi: Vec<Vec<f64>>,
    /// Aggregate φ̄ = Σᵢ wᵢ φᵢ.
    pub aggregate: Vec<f64>,
    /// Systematic extremal ψ(t_k).
    pub psi: Vec<f64>,
}

/// Outcome of the variational problem at one ℓ.
#[derive(Debug, Clone)]
pub struct RateResult {
    pub ell: f64,
    pub value: f64,
    pub status: OptimStatus,
    pub path: RatePath,
    /// Unweighted entropy contribution g^{pᵢ} per type.
    pub per_type_entropy: Vec<f64>,
    /// Group weights (so the decomposition can be re-assembled).
    pub weights: Vec<f64>,
    /// Raw factor action J_X(ψ) (before division by c).
    pub factor_cost: f64,
    /// The scale constant c = lim N ε_N².
    pub scale_c: f64,
    /// Final objective of every start (diagnoses multiple minima).
    pub start_values: Vec<f64>,
    pub n_evaluations: usize,
}

impl RateResult {
    /// Bookkeeping identity `|I − (Σᵢ wᵢ gᵢ + J/c)|`.
    pub fn decomposition_residual(&self) -> f64 {
        let entropy: f64 = self
            .per_type_entropy
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * g)
            .sum();
        let j = if self.scale_c.is_finite() {
            self.factor_cost / self.scale_c
        } else {
            0.0
        };
        (self.value - (entropy + j)).abs()
    }
}

struct Objective {
    types: Vec<TypeParams>,
    weights: Vec<f64>,
    grid: TimeGrid,
    k_moments: usize,
    ell: f64,
    inv_c: f64,
    gamma: f64,
    inv_two_vol2: f64,
}

struct Breakdown {
    total: f64,
    per_type_entropy: Vec<f64>,
    factor_cost: f64,
    path: RatePath,
}

impl Objective {
    fn dim(&self) -> usize {
        (self.types.len() + 1) * self.grid.n_steps
    }

    /// Decodes variables into scaled per-type paths; `None` when infeasible.
    fn decode(&self, vars: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
        let m = self.grid.n_steps;
        let nt = self.types.len();
        let mut raw_total = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            for k in 0..m {
                let a = vars[i * m + k];
                raw_total += w * a * a;
            }
        }
        if raw_total < 1e-14 {
            return None;
        }
        let scale = self.ell / raw_total;
        let mut per_type = Vec::with_capacity(nt);
        let mut aggregate = vec![0.0; m + 1];
        for i in 0..nt {
            let mut path = Vec::with_capacity(m + 1);
            let mut acc = 0.0;
            path.push(0.0);
            for k in 0..m {
                let a = vars[i * m + k];
                acc += scale * a * a;
                path.push(acc);
            }
            if *path.last().unwrap() > 1.0 + 1e-12 {
                return None; // a type cannot lose more than all its names
            }
            for (agg, v) in aggregate.iter_mut().zip(&path) {
                *agg += self.weights[i] * v;
            }
            per_type.push(path);
        }
        let mut psi = Vec::with_capacity(m + 1);
        psi.push(0.0);
        psi.extend_from_slice(&vars[nt * m..]);
        Some((per_type, aggregate, psi))
    }

    fn eval(&self, vars: &[f64]) -> f64 {
        match self.breakdown(vars) {
            Some(b) => b.total,
            None => f64::INFINITY,
        }
    }

    fn breakdown(&self, vars: &[f64]) -> Option<Breakdown> {
        let (per_type, aggregate, psi) = self.decode(vars)?;
        let dt = self.grid.dt();
        let forcing = ForcedPaths::new(self.grid, aggregate.clone(), psi.clone()).ok()?;

        let mut per_type_entropy = Vec::with_capacity(self.types.len());
        let mut total = 0.0;
        for (i, params) in self.types.iter().enumerate() {
            let moments = exp_moments(params, &forcing, self.k_moments).ok()?;
            let survival_t = moments.at(self.grid.n_steps, 0).max(f64::MIN_POSITIVE);
            let xi = &per_type[i];
            let mut g = 0.0;
            for k in 0..self.grid.n_steps {
                let dxi = xi[k + 1] - xi[k];
                if dxi > 0.0 {
                    let f_mid =
                        (0.5 * (moments.at(k, 1) + moments.at(k + 1, 1))).max(f64::MIN_POSITIVE);
                    g += dxi * ((dxi / dt).ln() - f_mid.ln());
                }
            }
            let rem = 1.0 - xi[self.grid.n_steps];
            if rem > 1e-14 {
                g += rem * (rem / survival_t).ln();
            }
            if !g.is_finite() {
                return None;
            }
            per_type_entropy.push(g);
            total += self.weights[i] * g;
        }

        let mut factor_cost = 0.0;
        for k in 0..self.grid.n_steps {
            let rate = (psi[k + 1] - psi[k]) / dt + self.gamma * 0.5 * (psi[k] + psi[k + 1]);
            factor_cost += dt * rate * rate;
        }
        factor_cost *= self.inv_two_vol2;
        total += self.inv_c * factor_cost;
        if !total.is_finite() {
            return None;
        }
        Some(Breakdown {
            total,
            per_type_entropy,
            factor_cost,
            path: RatePath {
                grid: self.grid,
                per_type_phi: per_type,
                aggregate,
                psi,
            },
        })
    }

    /// Variables whose squares reproduce the increments of `paths` (shape
    /// only; the objective renormalizes scale).
    fn encode(&self, per_type_phi: &[Vec<f64>], psi: &[f64]) -> Vec<f64> {
        let m = self.grid.n_steps;
        let mut vars = Vec::with_capacity(self.dim());
        for path in per_type_phi {
            for k in 0..m {
                vars.push((path[k + 1] - path[k]).max(0.0).sqrt());
            }
        }
        vars.extend_from_slice(&psi[1..]);
        vars
    }
}

fn fd_gradient<F>(f: &F, x: &[f64], fx: f64, h0: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = h0 * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[i] += h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            if fp.is_finite() && fm.is_finite() {
                (fp - fm) / (2.0 * h)
            } else if fp.is_finite() {
                (fp - fx) / h
            } else if fm.is_finite() {
                (fx - fm) / h
            } else {
                0.0
            }
        })
        .collect()
}

struct BfgsOutcome {
    x: Vec<f64>,
    value: f64,
    status: OptimStatus,
    n_evals: usize,
}

fn bfgs<F>(f: &F, x0: Vec<f64>, cfg: &OptimizerConfig) -> BfgsOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut fx = f(x.as_slice());
    let mut n_evals = 1;
    if !fx.is_finite() {
        return BfgsOutcome {
            x: x.data.into(),
            value: fx,
            status: OptimStatus::LineSearchStalled,
            n_evals,
        };
    }
    let mut grad = DVector::from_vec(fd_gradient(f, x.as_slice(), fx, cfg.fd_step));
    n_evals += 2 * dim;
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut stall = 0;
    let mut status = OptimStatus::MaxIterations;

    for _ in 0..cfg.max_iterations {
        if grad.amax() < cfg.gradient_tolerance {
            status = OptimStatus::Converged;
            break;
        }
        let mut dir = -(&h_inv * &grad);
        let mut slope = dir.dot(&grad);
        if slope >= 0.0 {
            // curvature information went bad; restart from steepest descent
            h_inv = DMatrix::identity(dim, dim);
            dir = -grad.clone();
            slope = dir.dot(&grad);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + &dir * step;
            let fc = f(candidate.as_slice());
            n_evals += 1;
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((candidate, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, fx_new)) = accepted else {
            status = OptimStatus::LineSearchStalled;
            break;
        };

        let grad_new = DVector::from_vec(fd_gradient(f, x_new.as_slice(), fx_new, cfg.fd_step));
        n_evals += 2 * dim;
        let s = &x_new - &x;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let c1 = (sy + yhy) / (sy * sy);
            h_inv += c1 * (&s * s.transpose());
            let cross = (&hy * s.transpose() + &s * hy.transpose()) / sy;
            h_inv -= cross;
        }

        let improvement = fx - fx_new;
        if improvement.abs() <= cfg.value_tolerance * fx.abs().max(1.0) {
            stall += 1;
            if stall >= 3 {
                x = x_new;
                fx = fx_new;
                status = OptimStatus::Converged;
                break;
            }
        } else {
            stall = 0;
        }
        x = x_new;
        fx = fx_new;
        grad = grad_new;
    }

    BfgsOutcome {
        x: x.data.into(),
        value: fx,
        status,
        n_evals,
    }
}

fn ou_parameters(factor: &FactorSpec) -> Result<(f64, f64)> {
    match factor.kind {
        FactorKind::Ou { gamma, vol, mean } => {
            if mean != 0.0 {
                return Err(Error::InvalidArgument(
                    "the rate function is implemented for mean-zero OU factors".into(),
                ));
            }
            if vol <= 0.0 {
                return Err(Error::InvalidArgument(
                    "the OU factor must have positive volatility".into(),
                ));
            }
            Ok((gamma, vol))
        }
        FactorKind::None => Ok((0.0, 1.0)),
        FactorKind::Cir { .. } => Err(Error::InvalidArgument(
            "the factor action J_X is implemented for OU factors only".into(),
        )),
    }
}

/// Minimizes the heterogeneous rate functional at target loss `ell`.
///
/// `scale_c` is `c = lim N ε_N²`; pass `f64::INFINITY` to switch the factor
/// cost off. If `ell` does not exceed the typical (LLN) loss, the rate is 0
/// and the LLN trajectory is returned unmodified.
pub fn rate_heterogeneous(
    pool: &PoolSpec,
    factor: &FactorSpec,
    scale_c: f64,
    ell: f64,
    grid: &TimeGrid,
    k_moments: usize,
    cfg: &OptimizerConfig,
) -> Result<RateResult> {
    pool.ensure_valid()?;
    grid.ensure_valid()?;
    if !(ell > 0.0 && ell < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target loss must lie in (0, 1), got {ell}"
        )));
    }
    if !(scale_c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale constant c must be positive, got {scale_c}"
        )));
    }
    let (gamma, vol) = ou_parameters(factor)?;
    let weights: Vec<f64> = pool.groups.iter().map(|g| g.weight).collect();
    let types: Vec<TypeParams> = pool.groups.iter().map(|g| g.params).collect();

    // Typical behavior: the deterministic (ε = 0) limit.
    let lln_state = solve_lln(pool, &FactorSpec::none(), grid, k_moments, None)?;
    let lln_loss = lln_state.terminal_loss();
    let lln_per_type: Vec<Vec<f64>> = (0..types.len())
        .map(|i| {
            let w = weights[i];
            lln_state.moments[i]
                .iter()
                .map(|row| ((w - row[0]) / w).clamp(0.0, 1.0))
                .collect()
        })
        .collect();

    if ell <= lln_loss + 1e-9 {
        let aggregate = lln_state.loss.clone();
        return Ok(RateResult {
            ell,
            value: 0.0,
            status: OptimStatus::Converged,
            path: RatePath {
                grid: *grid,
                per_type_phi: lln_per_type,
                aggregate,
                psi: vec![0.0; grid.n_steps + 1],
            },
            per_type_entropy: vec![0.0; types.len()],
            weights,
            factor_cost: 0.0,
            scale_c,
            start_values: vec![0.0],
            n_evaluations: 0,
        });
    }

    let objective = Objective {
        types: types.clone(),
        weights: weights.clone(),
        grid: *grid,
        k_moments,
        ell,
        inv_c: if scale_c.is_finite() { 1.0 / scale_c } else { 0.0 },
        gamma,
        inv_two_vol2: 1.0 / (2.0 * vol * vol),
    };

    // Multi-start: unforced default CDFs, the LLN trajectory, a uniform
    // ramp, plus any warm start from the caller. Starts whose shape lands
    // outside the feasible set after terminal renormalization (a type
    // exceeding full loss) are blended toward the uniform ramp.
    let ramp: Vec<Vec<f64>> = (0..types.len())
        .map(|_| (0..=grid.n_steps).map(|k| k as f64 / grid.n_steps as f64).collect())
        .collect();
    let feasible_encode = |paths: &[Vec<f64>], psi: &[f64]| -> Vec<f64> {
        let mut blended = paths.to_vec();
        for _ in 0..6 {
            let vars = objective.encode(&blended, psi);
            if objective.eval(&vars).is_finite() {
                return vars;
            }
            for (path, flat) in blended.iter_mut().zip(&ramp) {
                for (v, r) in path.iter_mut().zip(flat) {
                    *v = 0.5 * *v + 0.5 * r;
                }
            }
        }
        objective.encode(&ramp, psi)
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let zero_psi = vec![0.0; grid.n_steps + 1];
    if cfg.include_default_starts {
        let zero = ForcedPaths::zero(*grid);
        let cdf_paths: Vec<Vec<f64>> = types
            .iter()
            .map(|p| survival_curve(p, &zero, k_moments).map(|c| c.default_cdf()))
            .collect::<Result<_>>()?;
        starts.push(feasible_encode(&cdf_paths, &zero_psi));
        starts.push(feasible_encode(&lln_per_type, &zero_psi));
        starts.push(feasible_encode(&ramp, &zero_psi));
    }
    if let Some(warm) = &cfg.warm_start {
        if warm.grid == *grid && warm.per_type_phi.len() == types.len() {
            starts.push(feasible_encode(&warm.per_type_phi, &warm.psi));
        }
    }
    if starts.is_empty() {
        starts.push(feasible_encode(&ramp, &zero_psi));
    }

    let eval = |vars: &[f64]| objective.eval(vars);
    let mut outcomes: Vec<BfgsOutcome> = Vec::with_capacity(starts.len());
    for start in starts {
        outcomes.push(bfgs(&eval, start, cfg));
    }
    let start_values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let n_evaluations: usize = outcomes.iter().map(|o| o.n_evals).sum();
    let best = outcomes
        .into_iter()
        .min_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        .expect("at least one start");
    let breakdown = objective.breakdown(&best.x).ok_or_else(|| {
        Error::Numerical("optimizer returned an infeasible point".into())
    })?;

    Ok(RateResult {
        ell,
        value: breakdown.total,
        status: best.status,
        path: breakdown.path,
        per_type_entropy: breakdown.per_type_entropy,
        weights,
        factor_cost: breakdown.factor_cost,
        scale_c,
        start_values,
        n_evaluations,
    })
}

/// Maps [`rate_heterogeneous`] over a set of target losses, warm-starting
/// each solve from the previous argmin.
pub fn rate_curve(
    pool: &PoolSpec,
    factor: &FactorSpec,
    scale_c: f64,
    ells: &[f64],
    grid: &TimeGrid,
    k_moments: usize,
    cfg: &OptimizerConfig,
) -> Result<Vec<RateResult>> {
    let mut results = Vec::with_capacity(ells.len());
    let mut warm: Option<RatePath> = cfg.warm_start.clone();
    for &ell in ells {
        let local = OptimizerConfig {
            warm_start: warm.clone(),
            include_default_starts: cfg.include_default_starts && warm.is_none(),
            ..cfg.clone()
        };
        let result = rate_heterogeneous(pool, factor, scale_c, ell, grid, k_moments, &local)?;
        if result.value > 0.0 {
            warm = Some(result.path.clone());
        }
        results.push(result);
    }
    Ok(results)
}
