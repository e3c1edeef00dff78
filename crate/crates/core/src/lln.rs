//! Large-pool limit of the loss via truncated moment systems.
//!
//! Writing `u_k^{(i)}(t)` for the k-th moment of the limiting survivor
//! measure restricted to type `i` (weighted so `u_0^{(i)}(0) = w_i`), the
//! truncated system reads
//!
//! ```text
//! du_k = { u_k(−αk + εβ_S b₀(X)k + ½ε²β_S²σ₀²(X)k(k−1))
//!        + u_{k−1}(½σ²k(k−1) + αλ̄k + β_C k ū₁)
//!        − u_{k+1} } dt + εβ_S σ₀(X) k u_k dV,     u_{K+1} := u_K,
//! ```
//!
//! with the contagion coupling through the pool-wide aggregate
//! `ū₁ = Σ_i u_1^{(i)}`. The limiting loss is `L_t = 1 − Σ_i u_0^{(i)}(t)`.
//! When the factor coupling is off (ε = 0 or no factor) the system is a
//! deterministic ODE and is integrated with RK4 (refining the internal step
//! if truncation artifacts drive a moment negative); otherwise it is stepped
//! with Euler–Maruyama on the increments of a supplied factor path.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{simulate_factor, FactorPath};
use crate::model::{channel, FactorSpec, PoolSpec, SeedSpec, TimeGrid};

/// Trajectories of the per-type moment vectors and the limiting loss.
#[derive(Debug, Clone)]
pub struct MomentState {
    pub grid: TimeGrid,
    pub k_trunc: usize,
    /// `moments[i][t][k]` for type `i`, grid index `t`, moment order `k`.
    pub moments: Vec<Vec<Vec<f64>>>,
    /// Limiting loss `L_t = 1 − Σ_i u_0^{(i)}(t)`.
    pub loss: Vec<f64>,
    /// Pool-wide first moment `ū₁(t)` (the limiting loss rate).
    pub pool_first_moment: Vec<f64>,
    /// The factor path that drove the system, when one was used.
    pub factor_path: Option<FactorPath>,
}

impl MomentState {
    pub fn terminal_loss(&self) -> f64 {
        *self.loss.last().expect("nonempty grid")
    }

    /// Moment `u_k` of type `i` at grid index `t`.
    pub fn at(&self, type_idx: usize, t_idx: usize, k: usize) -> f64 {
        self.moments[type_idx][t_idx][k]
    }
}

struct TypeCoeffs {
    alpha: f64,
    lambda_bar: f64,
    sigma2: f64,
    beta_c: f64,
    beta_s: f64,
}

fn rhs_all(
    types: &[TypeCoeffs],
    u: &[Vec<f64>],
    k_trunc: usize,
    eps: f64,
    b0: f64,
    s0: f64,
    out: &mut [Vec<f64>],
) {
    let ubar1: f64 = u.iter().map(|ui| ui[1]).sum();
    for (i, ty) in types.iter().enumerate() {
        let es = eps * ty.beta_s;
        for k in 0..=k_trunc {
            let kf = k as f64;
            let u_prev = if k >= 1 { u[i][k - 1] } else { 0.0 };
            let u_next = if k < k_trunc { u[i][k + 1] } else { u[i][k_trunc] };
            out[i][k] = u[i][k]
                * (-ty.alpha * kf + es * b0 * kf + 0.5 * es * es * s0 * s0 * kf * (kf - 1.0))
                + u_prev
                    * (0.5 * ty.sigma2 * kf * (kf - 1.0)
                        + ty.alpha * ty.lambda_bar * kf
                        + ty.beta_c * kf * ubar1)
                - u_next;
        }
    }
}

/// Solves the coupled per-type moment system.
///
/// A stochastic factor coupling (`factor.is_active()`) requires `path`;
/// deterministic systems ignore it. Initial condition: point mass at λ₀ per
/// group, `u_k^{(i)}(0) = w_i λ₀^k`.
pub fn solve_lln(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    k_trunc: usize,
    path: Option<&FactorPath>,
) -> Result<MomentState> {
    pool.ensure_valid()?;
    factor.ensure_valid()?;
    grid.ensure_valid()?;
    if k_trunc < 2 {
        return Err(Error::InvalidArgument(format!(
            "truncation order must be at least 2, got {k_trunc}"
        )));
    }
    let stochastic = factor.is_active();
    if stochastic && path.is_none() {
        return Err(Error::InvalidArgument(
            "an active factor requires a simulated factor path".into(),
        ));
    }

    let types: Vec<TypeCoeffs> = pool
        .groups
        .iter()
        .map(|g| TypeCoeffs {
            alpha: g.params.alpha,
            lambda_bar: g.params.lambda_bar,
            sigma2: g.params.sigma * g.params.sigma,
            beta_c: g.params.beta_c,
            beta_s: g.params.beta_s,
        })
        .collect();
    let n_types = types.len();
    let dim = k_trunc + 1;

    let mut u: Vec<Vec<f64>> = pool
        .groups
        .iter()
        .map(|g| {
            (0..dim)
                .map(|k| g.weight * g.params.lambda0.powi(k as i32))
                .collect()
        })
        .collect();

    let mut moments: Vec<Vec<Vec<f64>>> = (0..n_types)
        .map(|i| {
            let mut v = Vec::with_capacity(grid.n_steps + 1);
            v.push(u[i].clone());
            v
        })
        .collect();
    let mut loss = Vec::with_capacity(grid.n_steps + 1);
    let mut ubar1 = Vec::with_capacity(grid.n_steps + 1);
    let total_u0: f64 = u.iter().map(|ui| ui[0]).sum();
    loss.push(1.0 - total_u0);
    ubar1.push(u.iter().map(|ui| ui[1]).sum());

    let dt = grid.dt();
    let mut scratch: Vec<Vec<Vec<f64>>> =
        (0..5).map(|_| vec![vec![0.0; dim]; n_types]).collect();

    for step in 0..grid.n_steps {
        if stochastic {
            let fp = path.expect("checked above");
            let x = fp.x[step];
            let dv = fp.dv[step];
            let b0 = factor.kind.drift(x);
            let s0 = factor.kind.diffusion(x);
            let (drift, rest) = scratch.split_at_mut(1);
            let _ = rest;
            rhs_all(&types, &u, k_trunc, factor.epsilon, b0, s0, &mut drift[0]);
            for i in 0..n_types {
                let es = factor.epsilon * types[i].beta_s;
                for k in 0..dim {
                    u[i][k] += drift[0][i][k] * dt + es * s0 * k as f64 * u[i][k] * dv;
                }
            }
        } else {
            // Deterministic RK4, refining the internal step when truncation
            // artifacts push a moment negative.
            let mut refine = 1usize;
            'refine: loop {
                let h = dt / refine as f64;
                let mut trial = u.clone();
                for _ in 0..refine {
                    let (k1, rest) = scratch.split_at_mut(1);
                    let (k2, rest) = rest.split_at_mut(1);
                    let (k3, rest) = rest.split_at_mut(1);
                    let (k4, rest) = rest.split_at_mut(1);
                    let (tmp, _) = rest.split_at_mut(1);
                    rhs_all(&types, &trial, k_trunc, 0.0, 0.0, 0.0, &mut k1[0]);
                    stage(&trial, &k1[0], 0.5 * h, &mut tmp[0]);
                    rhs_all(&types, &tmp[0], k_trunc, 0.0, 0.0, 0.0, &mut k2[0]);
                    stage(&trial, &k2[0], 0.5 * h, &mut tmp[0]);
                    rhs_all(&types, &tmp[0], k_trunc, 0.0, 0.0, 0.0, &mut k3[0]);
                    stage(&trial, &k3[0], h, &mut tmp[0]);
                    rhs_all(&types, &tmp[0], k_trunc, 0.0, 0.0, 0.0, &mut k4[0]);
                    for i in 0..n_types {
                        for k in 0..dim {
                            trial[i][k] += h / 6.0
                                * (k1[0][i][k]
                                    + 2.0 * k2[0][i][k]
                                    + 2.0 * k3[0][i][k]
                                    + k4[0][i][k]);
                        }
                    }
                }
                let negative = trial
                    .iter()
                    .any(|ti| ti.iter().any(|&v| v < 0.0 || !v.is_finite()));
                if !negative {
                    u = trial;
                    break 'refine;
                }
                refine *= 2;
                if refine > 64 {
                    return Err(Error::Numerical(format!(
                        "moment vector stayed negative at t = {} even at dt/64; \
                         increase n_steps or lower the truncation order",
                        grid.time(step + 1)
                    )));
                }
            }
        }

        let total_u0: f64 = u.iter().map(|ui| ui[0]).sum();
        if !total_u0.is_finite() || total_u0 < -1e-9 {
            return Err(Error::Numerical(format!(
                "survivor mass became invalid ({total_u0}) at t = {}; the step \
                 size is too coarse for this parameter set",
                grid.time(step + 1)
            )));
        }
        for i in 0..n_types {
            moments[i].push(u[i].clone());
        }
        loss.push(1.0 - total_u0);
        ubar1.push(u.iter().map(|ui| ui[1]).sum());
    }

    Ok(MomentState {
        grid: *grid,
        k_trunc,
        moments,
        loss,
        pool_first_moment: ubar1,
        factor_path: path.cloned(),
    })
}

fn stage(base: &[Vec<f64>], deriv: &[Vec<f64>], h: f64, out: &mut [Vec<f64>]) {
    for i in 0..base.len() {
        for k in 0..base[i].len() {
            out[i][k] = base[i][k] + h * deriv[i][k];
        }
    }
}

/// Samples of the conditional-on-factor limiting loss `L_T`, one per factor
/// path. With ε = 0 the distribution is a point mass and all samples agree.
pub fn lln_loss_distribution(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    k_trunc: usize,
    n_paths: usize,
    seed: &SeedSpec,
    run: u64,
) -> Result<Vec<f64>> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    if !factor.is_active() {
        let state = solve_lln(pool, factor, grid, k_trunc, None)?;
        return Ok(vec![state.terminal_loss(); n_paths]);
    }
    (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed.substream(run, j as u64, channel::FACTOR);
            let path = simulate_factor(factor, grid, &mut rng);
            solve_lln(pool, factor, grid, k_trunc, Some(&path)).map(|s| s.terminal_loss())
        })
        .collect()
}
