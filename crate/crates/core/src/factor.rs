//! Simulation of the systematic factor on a time grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{FactorSpec, TimeGrid};

/// One realized factor trajectory together with the Brownian increments that
/// produced it. Keeping the increments lets downstream systems (moment SDEs,
/// fluctuation dynamics) ride the same noise as the path that generated a
/// simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPath {
    /// Factor values at grid points, length `n_steps + 1`.
    pub x: Vec<f64>,
    /// Brownian increments ΔV per step, length `n_steps`.
    pub dv: Vec<f64>,
}

impl FactorPath {
    /// Constant path with no noise; used when the factor is inactive.
    pub fn flat(x0: f64, n_steps: usize) -> Self {
        Self {
            x: vec![x0; n_steps + 1],
            dv: vec![0.0; n_steps],
        }
    }

    pub fn dx(&self, step: usize) -> f64 {
        self.x[step + 1] - self.x[step]
    }
}

/// Euler path of `dX = b₀(X)dt + σ₀(X)dV` (full truncation inside the CIR
/// diffusion coefficient). A `none` factor yields the flat path and draws
/// nothing from the stream.
pub fn simulate_factor<R: Rng + ?Sized>(
    spec: &FactorSpec,
    grid: &TimeGrid,
    rng: &mut R,
) -> FactorPath {
    if spec.kind == crate::model::FactorKind::None {
        return FactorPath::flat(spec.x0, grid.n_steps);
    }
    let dt = grid.dt();
    let sq_dt = dt.sqrt();
    let mut x = vec![0.0; grid.n_steps + 1];
    let mut dv = vec![0.0; grid.n_steps];
    x[0] = spec.x0;
    for k in 0..grid.n_steps {
        let z: f64 = rng.sample(StandardNormal);
        let d = sq_dt * z;
        dv[k] = d;
        x[k + 1] = x[k] + spec.kind.drift(x[k]) * dt + spec.kind.diffusion(x[k]) * d;
    }
    FactorPath { x, dv }
}
