//! Survival function and default-time density of a single reference
//! intensity under deterministic forcing.
//!
//! For absolutely continuous paths (φ, ψ) the reference intensity solves
//! `dλ = −α(λ − λ̄)dt + σ√λ dW + β_C dφ(t) + β_S λ dψ(t)`. The exponential
//! moments `m_k(t) = E[λ_t^k · exp(−∫₀^t λ_s ds)]` close (after truncation)
//! into the ODE system
//!
//! ```text
//! dm_k/dt = (−αk + β_S ψ̇ k) m_k
//!         + (αλ̄k + β_C φ̇ k + ½σ²k(k−1)) m_{k−1}
//!         − m_{k+1},          m_{K+1} := m_K,
//! ```
//!
//! whose first two components are the survival function `S = m₀` and the
//! default-time density `f = m₁`.

use crate::error::{Error, Result};
use crate::model::{TimeGrid, TypeParams};

/// Deterministic forcing paths on a grid: cumulative contagion φ
/// (nondecreasing, φ(0)=0) and systematic forcing ψ (ψ(0)=0). Derivatives
/// are taken per-step constant (piecewise-linear paths).
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedPaths {
    grid: TimeGrid,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl ForcedPaths {
    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            phi: vec![0.0; grid.n_steps + 1],
            psi: vec![0.0; grid.n_steps + 1],
            grid,
        }
    }

    pub fn new(grid: TimeGrid, phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if phi.len() != grid.n_steps + 1 || psi.len() != grid.n_steps + 1 {
            return Err(Error::InvalidArgument(format!(
                "forcing paths must have {} values, got phi: {}, psi: {}",
                grid.n_steps + 1,
                phi.len(),
                psi.len()
            )));
        }
        if phi[0].abs() > 1e-12 || psi[0].abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "forcing paths must start at zero".into(),
            ));
        }
        if phi.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "phi must be nondecreasing".into(),
            ));
        }
        if phi.iter().chain(psi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("forcing paths must be finite".into()));
        }
        Ok(Self { grid, phi, psi })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn phi_rate(&self, step: usize) -> f64 {
        (self.phi[step + 1] - self.phi[step]) / self.grid.dt()
    }

    fn psi_rate(&self, step: usize) -> f64 {
        (self.psi[step + 1] - self.psi[step]) / self.grid.dt()
    }
}

/// Trajectories of the truncated exponential moments `m_0..=m_K`.
#[derive(Debug, Clone)]
pub struct ExpMoments {
    pub grid: TimeGrid,
    pub k_trunc: usize,
    /// `values[t][k]`, `t = 0..=n_steps`, `k = 0..=k_trunc`.
    pub values: Vec<Vec<f64>>,
}

impl ExpMoments {
    pub fn at(&self, t_idx: usize, k: usize) -> f64 {
        self.values[t_idx][k]
    }

    /// Survival trajectory `S(t) = m₀(t)`.
    pub fn survival(&self) -> Vec<f64> {
        self.values.iter().map(|row| row[0]).collect()
    }

    /// Default-time density trajectory `f(t) = m₁(t)`.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|row| row[1]).collect()
    }
}

fn moment_rhs(
    params: &TypeParams,
    m: &[f64],
    phi_rate: f64,
    psi_rate: f64,
    out: &mut [f64],
) {
    let k_trunc = m.len() - 1;
    for k in 0..=k_trunc {
        let kf = k as f64;
        let m_prev = if k >= 1 { m[k - 1] } else { 0.0 };
        let m_next = if k < k_trunc { m[k + 1] } else { m[k_trunc] };
        out[k] = m[k] * (-params.alpha * kf + params.beta_s * psi_rate * kf)
            + m_prev
                * (params.alpha * params.lambda_bar * kf
                    + params.beta_c * phi_rate * kf
                    + 0.5 * params.sigma * params.sigma * kf * (kf - 1.0))
            - m_next;
    }
}

/// Integrates the truncated moment system with classical RK4, one step per
/// grid interval, forcing rates held constant within each step.
pub fn exp_moments(
    params: &TypeParams,
    forcing: &ForcedPaths,
    k_trunc: usize,
) -> Result<ExpMoments> {
    if k_trunc < 2 {
        return Err(Error::InvalidArgument(format!(
            "truncation order must be at least 2, got {k_trunc}"
        )));
    }
    let grid = *forcing.grid();
    let dt = grid.dt();
    let dim = k_trunc + 1;
    let mut m: Vec<f64> = (0..dim).map(|k| params.lambda0.powi(k as i32)).collect();
    let mut values = Vec::with_capacity(grid.n_steps + 1);
    values.push(m.clone());

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    for step in 0..grid.n_steps {
        let pr = forcing.phi_rate(step);
        let sr = forcing.psi_rate(step);
        moment_rhs(params, &m, pr, sr, &mut k1);
        for i in 0..dim {
            tmp[i] = m[i] + 0.5 * dt * k1[i];
        }
        moment_rhs(params, &tmp, pr, sr, &mut k2);
        for i in 0..dim {
            tmp[i] = m[i] + 0.5 * dt * k2[i];
        }
        moment_rhs(params, &tmp, pr, sr, &mut k3);
        for i in 0..dim {
            tmp[i] = m[i] + dt * k3[i];
        }
        moment_rhs(params, &tmp, pr, sr, &mut k4);
        for i in 0..dim {
            m[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !m[0].is_finite() {
            return Err(Error::Numerical(format!(
                "moment system diverged at t = {}",
                grid.time(step + 1)
            )));
        }
        values.push(m.clone());
    }
    Ok(ExpMoments {
        grid,
        k_trunc,
        values,
    })
}

/// Survival function, default density, and the defective mass at the
/// never-defaults point.
#[derive(Debug, Clone)]
pub struct SurvivalCurve {
    pub grid: TimeGrid,
    /// `S(t_k) = E[exp(−∫₀^{t_k} λ)]`.
    pub survival: Vec<f64>,
    /// Density `f(t_k) = E[λ exp(−∫₀^{t_k} λ)]`.
    pub density: Vec<f64>,
}

impl SurvivalCurve {
    /// Default probability by the horizon, `p_T = 1 − S(T)`.
    pub fn default_probability(&self) -> f64 {
        1.0 - self.survival[self.survival.len() - 1]
    }

    /// Mass of the defective measure at the no-default point, `S(T)`.
    pub fn star_mass(&self) -> f64 {
        self.survival[self.survival.len() - 1]
    }

    /// Default-time CDF `μ₀[0, t_k] = 1 − S(t_k)`.
    pub fn default_cdf(&self) -> Vec<f64> {
        self.survival.iter().map(|s| 1.0 - s).collect()
    }
}

/// Wraps [`exp_moments`]: `S = m₀`, `f = m₁`.
pub fn survival_curve(
    params: &TypeParams,
    forcing: &ForcedPaths,
    k_trunc: usize,
) -> Result<SurvivalCurve> {
    let moments = exp_moments(params, forcing, k_trunc)?;
    Ok(SurvivalCurve {
        grid: moments.grid,
        survival: moments.survival(),
        density: moments.density(),
    })
}

/// Closed-form CIR survival `E[exp(−∫₀^t λ_s ds)] = A(t)·e^{−B(t)λ₀}` with
/// `γ̂ = √(α² + 2σ²)`. Requires σ > 0; contagion/systematic sensitivities are
/// ignored (zero forcing).
pub fn cir_survival(alpha: f64, lambda_bar: f64, sigma: f64, lambda0: f64, t: f64) -> f64 {
    assert!(sigma > 0.0, "closed form requires sigma > 0");
    let gamma_hat = (alpha * alpha + 2.0 * sigma * sigma).sqrt();
    let e = (gamma_hat * t).exp();
    let den = (gamma_hat + alpha) * (e - 1.0) + 2.0 * gamma_hat;
    let b = 2.0 * (e - 1.0) / den;
    let a = (2.0 * gamma_hat * ((alpha + gamma_hat) * t / 2.0).exp() / den)
        .powf(2.0 * alpha * lambda_bar / (sigma * sigma));
    a * (-b * lambda0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 500).unwrap()
    }

    fn constant_intensity(lambda: f64) -> TypeParams {
        TypeParams {
            lambda0: lambda,
            alpha: 1.0,
            lambda_bar: lambda,
            sigma: 0.0,
            beta_c: 0.0,
            beta_s: 0.0,
        }
    }

    fn betacone_params() -> TypeParams {
        TypeParams {
            lambda0: 0.2,
            alpha: 4.0,
            lambda_bar: 0.2,
            sigma: 0.9,
            beta_c: 0.0,
            beta_s: 0.0,
        }
    }

    #[test]
    fn constant_intensity_matches_exponential_clock() {
        // truncation deep enough that the closure error sits below 1e-10
        let params = constant_intensity(2.0);
        let moments = exp_moments(&params, &ForcedPaths::zero(grid()), 18).unwrap();
        for (idx, t) in grid().times().iter().enumerate() {
            let m0 = moments.at(idx, 0);
            let m1 = moments.at(idx, 1);
            assert!((m0 - (-2.0 * t).exp()).abs() < 1e-10, "m0 at t={t}");
            assert!((m1 - 2.0 * (-2.0 * t).exp()).abs() < 1e-10, "m1 at t={t}");
        }
    }

    #[test]
    fn cir_closed_form_matches_moment_system() {
        let params = betacone_params();
        let moments = exp_moments(&params, &ForcedPaths::zero(grid()), 12).unwrap();
        let closed = cir_survival(4.0, 0.2, 0.9, 0.2, 1.0);
        assert!(
            (moments.at(500, 0) - closed).abs() < 1e-4,
            "moment {} vs closed form {}",
            moments.at(500, 0),
            closed
        );
    }

    #[test]
    fn increasing_contagion_forcing_lowers_survival() {
        let params = TypeParams {
            beta_c: 2.0,
            ..betacone_params()
        };
        let g = grid();
        let ramp: Vec<f64> = g.times().iter().map(|t| 0.5 * t).collect();
        let zero = survival_curve(&params, &ForcedPaths::zero(g), 12).unwrap();
        let forced = survival_curve(
            &params,
            &ForcedPaths::new(g, ramp, vec![0.0; g.n_steps + 1]).unwrap(),
            12,
        )
        .unwrap();
        assert!(forced.star_mass() < zero.star_mass());
        assert!(forced.default_probability() > zero.default_probability());
        assert!(zero.default_probability() > 0.0 && zero.default_probability() < 1.0);
    }

    #[test]
    fn truncation_order_converges() {
        let params = TypeParams {
            lambda0: 0.2,
            alpha: 0.5,
            lambda_bar: 2.0,
            sigma: 0.5,
            beta_c: 1.0,
            beta_s: 1.0,
        };
        let zero = ForcedPaths::zero(grid());
        let m12 = exp_moments(&params, &zero, 12).unwrap().at(500, 0);
        let m20 = exp_moments(&params, &zero, 20).unwrap().at(500, 0);
        assert!((m12 - m20).abs() < 1e-6, "K=12 {} vs K=20 {}", m12, m20);
        // report the K at which successive refinements settle below 1e-8
        let mut prev = exp_moments(&params, &zero, 2).unwrap().at(500, 0);
        let mut settled = None;
        for k in 3..=24 {
            let cur = exp_moments(&params, &zero, k).unwrap().at(500, 0);
            if (cur - prev).abs() < 1e-8 {
                settled = Some(k);
                break;
            }
            prev = cur;
        }
        assert!(settled.is_some(), "m0(T) not Cauchy in K up to 24");
    }

    #[test]
    fn density_integrates_to_default_mass() {
        let params = betacone_params();
        let curve = survival_curve(&params, &ForcedPaths::zero(grid()), 12).unwrap();
        let dt = curve.grid.dt();
        let mut acc = 0.0;
        for k in 0..curve.grid.n_steps {
            acc += 0.5 * (curve.density[k] + curve.density[k + 1]) * dt;
            let lhs = 1.0 - curve.survival[k + 1];
            assert!(
                (acc - lhs).abs() < 1e-5,
                "identity off by {} at step {k}",
                (acc - lhs).abs()
            );
        }
    }

    #[test]
    fn rejects_bad_truncation_and_nonmonotone_phi() {
        let params = betacone_params();
        let g = grid();
        assert!(exp_moments(&params, &ForcedPaths::zero(g), 1).is_err());
        let mut phi = vec![0.0; g.n_steps + 1];
        phi[1] = 0.5;
        phi[2] = 0.2;
        assert!(ForcedPaths::new(g, phi, vec![0.0; g.n_steps + 1]).is_err());
    }
}
