//! Gaussian fluctuation correction to the large-pool limit (homogeneous
//! pools).
//!
//! The scaled discrepancy `Ξ^N = √N(μ^N − μ̄)` converges to a limit whose
//! monomial projections `ξ_k = ⟨λ^k, Ξ̄⟩` close (after truncation) into
//!
//! ```text
//! dξ_k = [ ½σ²k(k−1)ξ_{k−1} + αλ̄kξ_{k−1} − αkξ_k − ξ_{k+1}
//!        + εβ_S b₀(X)kξ_k + ½ε²β_S²σ₀²(X)k(k−1)ξ_k
//!        + β_C k u₁ ξ_{k−1} + β_C k u_{k−1} ξ₁ ] dt
//!        + εβ_S σ₀(X) k ξ_k dV + dm_k,        ξ_{K_f+1} := ξ_{K_f},
//! ```
//!
//! where `(m_k)` is, conditional on the factor, a Gaussian martingale with
//! covariance rate
//!
//! ```text
//! C_kj = σ²kj·u_{k+j−1} + u_{k+j+1} + β_C²kj·u_{k−1}u_{j−1}u₁
//!      − β_C(k·u_{k−1}u_{j+1} + j·u_{j−1}u_{k+1}).
//! ```
//!
//! The brackets consume limit moments up to order `2K_f + 1`, so the driving
//! [`MomentState`] must be solved at least that deep. The loss correction is
//! `L^N_t ≈ L_t − ξ₀(t)/√N`. All names start at λ₀ exactly, so `ξ_k(0) = 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::simulate_factor;
use crate::lln::{solve_lln, MomentState};
use crate::model::{channel, FactorSpec, PoolSpec, SeedSpec, TimeGrid, TypeParams};

/// Trajectory of the truncated fluctuation moments.
#[derive(Debug, Clone)]
pub struct FluctuationState {
    pub grid: TimeGrid,
    pub k_fluct: usize,
    /// `xi[t][k]`, `t = 0..=n_steps`, `k = 0..=k_fluct`.
    pub xi: Vec<Vec<f64>>,
    /// Steps on which the truncated covariance matrix needed projection to
    /// the PSD cone (negative eigenvalues clamped to zero).
    pub psd_projections: usize,
}

impl FluctuationState {
    /// `ξ₀(T)`: the fluctuation of the survivor mass at the horizon.
    pub fn terminal_mass_fluctuation(&self) -> f64 {
        self.xi.last().expect("nonempty grid")[0]
    }
}

/// Drift of the truncated system at one instant. `u` must expose orders
/// `0..=2k_fluct+1`; `xi` has orders `0..=k_fluct`.
pub(crate) fn fluctuation_drift(
    params: &TypeParams,
    eps: f64,
    b0: f64,
    s0: f64,
    u: &[f64],
    xi: &[f64],
    out: &mut [f64],
) {
    let k_fluct = xi.len() - 1;
    let es = eps * params.beta_s;
    for k in 0..=k_fluct {
        let kf = k as f64;
        let xi_prev = if k >= 1 { xi[k - 1] } else { 0.0 };
        let xi_next = if k < k_fluct { xi[k + 1] } else { xi[k_fluct] };
        let u_prev = if k >= 1 { u[k - 1] } else { 0.0 };
        out[k] = 0.5 * params.sigma * params.sigma * kf * (kf - 1.0) * xi_prev
            + params.alpha * params.lambda_bar * kf * xi_prev
            - params.alpha * kf * xi[k]
            - xi_next
            + es * b0 * kf * xi[k]
            + 0.5 * es * es * s0 * s0 * kf * (kf - 1.0) * xi[k]
            + params.beta_c * kf * u[1] * xi_prev
            + params.beta_c * kf * u_prev * xi[1];
    }
}

/// Covariance rate matrix of the martingale part at one instant.
pub(crate) fn martingale_covariance(
    params: &TypeParams,
    u: &[f64],
    k_fluct: usize,
) -> DMatrix<f64> {
    let bc = params.beta_c;
    let s2 = params.sigma * params.sigma;
    DMatrix::from_fn(k_fluct + 1, k_fluct + 1, |k, j| {
        let (kf, jf) = (k as f64, j as f64);
        let mut c = u[k + j + 1];
        if k >= 1 && j >= 1 {
            c += s2 * kf * jf * u[k + j - 1];
            c += bc * bc * kf * jf * u[k - 1] * u[j - 1] * u[1];
        }
        if k >= 1 {
            c -= bc * kf * u[k - 1] * u[j + 1];
        }
        if j >= 1 {
            c -= bc * jf * u[j - 1] * u[k + 1];
        }
        c
    })
}

/// Factorizes `C ≈ L·Lᵀ`, clamping negative eigenvalues (truncation
/// artifacts) to zero. Returns the factor and whether clamping occurred.
fn psd_factor(c: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eigen = SymmetricEigen::new(c);
    let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-12 * max_eig.max(1.0);
    let clamped = eigen.eigenvalues.iter().any(|&l| l < -tol);
    let sqrt_diag = DVector::from_iterator(
        eigen.eigenvalues.len(),
        eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let mut factor = eigen.eigenvectors;
    for (mut col, s) in factor.column_iter_mut().zip(sqrt_diag.iter()) {
        col *= *s;
    }
    (factor, clamped)
}

/// Integrates the fluctuation system along the factor path and limit moments
/// of `lln_state`, sharing its Brownian increments; `rng` supplies only the
/// conditionally Gaussian martingale increments.
pub fn solve_fluctuations<R: Rng + ?Sized>(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    k_fluct: usize,
    lln_state: &MomentState,
    rng: &mut R,
) -> Result<FluctuationState> {
    if !pool.is_homogeneous() {
        return Err(Error::InvalidArgument(
            "the fluctuation limit is implemented for homogeneous pools only".into(),
        ));
    }
    if k_fluct < 1 {
        return Err(Error::InvalidArgument(
            "fluctuation truncation must be at least 1".into(),
        ));
    }
    if lln_state.k_trunc < 2 * k_fluct + 1 {
        return Err(Error::InvalidArgument(format!(
            "martingale brackets need limit moments up to order {}, but the \
             moment state was solved at K = {}",
            2 * k_fluct + 1,
            lln_state.k_trunc
        )));
    }
    if lln_state.grid != *grid {
        return Err(Error::InvalidArgument(
            "fluctuations must be solved on the grid of the moment state".into(),
        ));
    }
    let params = pool.groups[0].params;
    let dt = grid.dt();
    let sq_dt = dt.sqrt();
    let dim = k_fluct + 1;

    let mut xi = vec![0.0; dim];
    let mut trajectory = Vec::with_capacity(grid.n_steps + 1);
    trajectory.push(xi.clone());
    let mut drift = vec![0.0; dim];
    let mut z = DVector::zeros(dim);
    let mut psd_projections = 0;

    for step in 0..grid.n_steps {
        let u = &lln_state.moments[0][step];
        let (x, dv) = match &lln_state.factor_path {
            Some(fp) => (fp.x[step], fp.dv[step]),
            None => (factor.x0, 0.0),
        };
        let (b0, s0) = if factor.is_active() {
            (factor.kind.drift(x), factor.kind.diffusion(x))
        } else {
            (0.0, 0.0)
        };

        fluctuation_drift(&params, factor.epsilon, b0, s0, u, &xi, &mut drift);
        let (factor_mat, clamped) = psd_factor(martingale_covariance(&params, u, k_fluct));
        if clamped {
            psd_projections += 1;
        }
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let dm = factor_mat * &z * sq_dt;

        let es = factor.epsilon * params.beta_s;
        for k in 0..dim {
            xi[k] += drift[k] * dt + es * s0 * k as f64 * xi[k] * dv + dm[k];
            if !xi[k].is_finite() {
                return Err(Error::Numerical(format!(
                    "fluctuation moment {k} became non-finite at t = {}",
                    grid.time(step + 1)
                )));
            }
        }
        trajectory.push(xi.clone());
    }

    Ok(FluctuationState {
        grid: *grid,
        k_fluct,
        xi: trajectory,
        psd_projections,
    })
}

/// Joint second-order samples: per factor path, the limit loss, the
/// fluctuation ξ₀, and the corrected loss `L_T − ξ₀(T)/√N`.
#[derive(Debug, Clone)]
pub struct SecondOrderSamples {
    /// `L_T − ξ₀(T)/√N` per path.
    pub corrected: Vec<f64>,
    /// Conditional limit loss `L_T` per path.
    pub lln_terminal: Vec<f64>,
    /// `ξ₀(T)` per path.
    pub xi0: Vec<f64>,
}

/// Simulates `n_paths` joint (factor, limit, fluctuation) paths. The limit
/// moments are solved at `K = 2k_fluct + 1`.
pub fn second_order_loss_samples(
    pool: &PoolSpec,
    factor: &FactorSpec,
    grid: &TimeGrid,
    k_fluct: usize,
    n_names: usize,
    n_paths: usize,
    seed: &SeedSpec,
    run: u64,
) -> Result<SecondOrderSamples> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    if n_names == 0 {
        return Err(Error::InvalidArgument("n_names must be positive".into()));
    }
    pool.ensure_valid()?;
    factor.ensure_valid()?;
    grid.ensure_valid()?;
    let k_trunc = 2 * k_fluct + 1;
    let sqrt_n = (n_names as f64).sqrt();

    let rows: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let path = if factor.is_active() {
                let mut frng = seed.substream(run, j as u64, channel::FACTOR);
                Some(simulate_factor(factor, grid, &mut frng))
            } else {
                None
            };
            let lln_state = solve_lln(pool, factor, grid, k_trunc, path.as_ref())?;
            let mut mrng = seed.substream(run, j as u64, channel::AUX);
            let fluct = solve_fluctuations(pool, factor, grid, k_fluct, &lln_state, &mut mrng)?;
            Ok((lln_state.terminal_loss(), fluct.terminal_mass_fluctuation()))
        })
        .collect::<Result<Vec<_>>>()?;

    let lln_terminal: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let xi0: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let corrected = rows.iter().map(|r| r.0 - r.1 / sqrt_n).collect();
    Ok(SecondOrderSamples {
        corrected,
        lln_terminal,
        xi0,
    })
}
