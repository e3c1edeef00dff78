//! Domain types shared by every module: per-name parameters, pool
//! composition, the systematic factor, time grids, and the deterministic
//! random-number contract.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-name parameter vector of an intensity
/// `dλ = −α(λ − λ̄)dt + σ√λ dW + β_C dL + ε β_S λ dX`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeParams {
    /// Initial intensity λ₀ (1/time).
    pub lambda0: f64,
    /// Mean-reversion speed α (1/time).
    pub alpha: f64,
    /// Reversion level λ̄ (1/time).
    pub lambda_bar: f64,
    /// Square-root diffusion coefficient σ.
    pub sigma: f64,
    /// Contagion sensitivity β_C: jump size per unit of pool loss.
    pub beta_c: f64,
    /// Systematic sensitivity β_S: exposure to the factor increment.
    pub beta_s: f64,
}

impl TypeParams {
    /// Sign/finiteness checks. `beta_c` and `beta_s` may be any real, but a
    /// negative `beta_c` (defaults *lowering* surviving intensities) is
    /// flagged as a warning.
    pub fn validate(&self, path: &str, out: &mut Vec<Violation>) {
        let fields = [
            ("lambda0", self.lambda0),
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("sigma", self.sigma),
            ("beta_c", self.beta_c),
            ("beta_s", self.beta_s),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                out.push(Violation::error(
                    format!("{path}.{name}"),
                    format!("must be finite, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("sigma", self.sigma),
        ] {
            if v < 0.0 {
                out.push(Violation::error(
                    format!("{path}.{name}"),
                    format!("must be nonnegative, got {v}"),
                ));
            }
        }
        if self.beta_c < 0.0 {
            out.push(Violation::warning(
                format!("{path}.beta_c"),
                format!("negative contagion sensitivity {} is unusual", self.beta_c),
            ));
        }
    }
}

/// One homogeneous group of a pool: shared parameters and its weight in the
/// limiting type distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolGroup {
    pub params: TypeParams,
    /// Fraction of the pool in this group, in (0, 1]. Weights sum to 1.
    pub weight: f64,
}

/// A weighted finite mixture of types plus the pool size `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub groups: Vec<PoolGroup>,
    pub n_names: usize,
}

impl PoolSpec {
    /// Homogeneous pool: a single group of weight 1.
    pub fn homogeneous(params: TypeParams, n_names: usize) -> Self {
        Self {
            groups: vec![PoolGroup {
                params,
                weight: 1.0,
            }],
            n_names,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.groups.len() == 1
    }

    /// Errors out (with the full violation list) unless the spec is valid.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_pool(self);
        if violations.iter().any(|v| v.severity == Severity::Error) {
            Err(Error::InvalidSpec(violations))
        } else {
            Ok(())
        }
    }
}

/// Severity of a validation finding. Warnings do not invalidate a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding, addressed by field path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    pub severity: Severity,
}

impl Violation {
    pub fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
            severity: Severity::Error,
        }
    }

    pub fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
            severity: Severity::Warning,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {}: {}", tag, self.path, self.message)
    }
}

/// Collects every invariant violation of a pool spec; an empty list (or
/// warnings only) means the spec is usable. Validation never aborts.
pub fn validate_pool(spec: &PoolSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.groups.is_empty() {
        out.push(Violation::error("groups", "at least one group is required"));
    }
    if spec.n_names == 0 {
        out.push(Violation::error("n_names", "pool size must be positive"));
    }
    let mut weight_sum = 0.0;
    for (i, group) in spec.groups.iter().enumerate() {
        let path = format!("groups[{i}]");
        if !group.weight.is_finite() || group.weight <= 0.0 || group.weight > 1.0 {
            out.push(Violation::error(
                format!("{path}.weight"),
                format!("must lie in (0, 1], got {}", group.weight),
            ));
        } else {
            weight_sum += group.weight;
        }
        group.params.validate(&format!("{path}.params"), &mut out);
    }
    if !spec.groups.is_empty() && (weight_sum - 1.0).abs() > 1e-12 {
        out.push(Violation::error(
            "groups",
            format!("weights sum to {weight_sum}, expected 1 within 1e-12"),
        ));
    }
    out
}

/// Number of names each group receives. Groups take `round(wᵢ·N)` in index
/// order, capped so the running total never exceeds `N`; any remaining
/// shortfall goes to the group of largest weight (ties broken by lowest
/// index). The rule is purely arithmetic, hence deterministic.
pub fn group_counts(spec: &PoolSpec) -> Result<Vec<usize>> {
    spec.ensure_valid()?;
    let n = spec.n_names;
    let mut counts = Vec::with_capacity(spec.groups.len());
    let mut assigned = 0usize;
    for group in &spec.groups {
        let ideal = (group.weight * n as f64).round() as usize;
        let take = ideal.min(n - assigned);
        counts.push(take);
        assigned += take;
    }
    if assigned < n {
        let largest = spec
            .groups
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.weight
                    .partial_cmp(&b.weight)
                    .unwrap()
                    .then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .expect("validated pool has at least one group");
        counts[largest] += n - assigned;
    }
    Ok(counts)
}

/// Expands a pool into its per-name parameter vector, group-major then by
/// index within the group. Pure: identical specs yield identical vectors.
pub fn expand_pool(spec: &PoolSpec) -> Result<Vec<TypeParams>> {
    let counts = group_counts(spec)?;
    let mut out = Vec::with_capacity(spec.n_names);
    for (group, count) in spec.groups.iter().zip(counts) {
        out.extend(std::iter::repeat(group.params).take(count));
    }
    Ok(out)
}

/// Dynamics of the exogenous systematic factor `dX = b₀(X)dt + σ₀(X)dV`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FactorKind {
    /// Ornstein-Uhlenbeck: `b₀(x) = −gamma·(x − mean)`, `σ₀(x) = vol`.
    Ou { gamma: f64, vol: f64, mean: f64 },
    /// Square-root diffusion: `b₀(x) = speed·(level − x)`, `σ₀(x) = vol·√x⁺`.
    Cir { speed: f64, level: f64, vol: f64 },
    /// No factor; forces ε = 0.
    None,
}

impl FactorKind {
    pub fn drift(&self, x: f64) -> f64 {
        match *self {
            FactorKind::Ou { gamma, mean, .. } => -gamma * (x - mean),
            FactorKind::Cir { speed, level, .. } => speed * (level - x),
            FactorKind::None => 0.0,
        }
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        match *self {
            FactorKind::Ou { vol, .. } => vol,
            FactorKind::Cir { vol, .. } => vol * x.max(0.0).sqrt(),
            FactorKind::None => 0.0,
        }
    }
}

/// Systematic risk specification: factor dynamics, initial value, and the
/// coupling scale ε multiplying `β_S λ dX` in every intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub kind: FactorKind,
    pub x0: f64,
    pub epsilon: f64,
}

impl FactorSpec {
    /// No systematic factor at all.
    pub fn none() -> Self {
        Self {
            kind: FactorKind::None,
            x0: 0.0,
            epsilon: 0.0,
        }
    }

    /// True when the factor actually moves the intensities.
    pub fn is_active(&self) -> bool {
        self.epsilon != 0.0 && self.kind != FactorKind::None
    }

    pub fn validate(&self, out: &mut Vec<Violation>) {
        if !self.x0.is_finite() {
            out.push(Violation::error("factor.x0", "must be finite"));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            out.push(Violation::error(
                "factor.epsilon",
                format!("must be a nonnegative finite number, got {}", self.epsilon),
            ));
        }
        if self.kind == FactorKind::None && self.epsilon != 0.0 {
            out.push(Violation::error(
                "factor.epsilon",
                "kind \"none\" forces epsilon = 0",
            ));
        }
        match self.kind {
            FactorKind::Ou { gamma, vol, mean } => {
                for (name, v) in [("gamma", gamma), ("vol", vol), ("mean", mean)] {
                    if !v.is_finite() {
                        out.push(Violation::error(
                            format!("factor.kind.{name}"),
                            "must be finite",
                        ));
                    }
                }
                if vol < 0.0 {
                    out.push(Violation::error("factor.kind.vol", "must be nonnegative"));
                }
            }
            FactorKind::Cir { speed, level, vol } => {
                for (name, v) in [("speed", speed), ("level", level), ("vol", vol)] {
                    if !v.is_finite() || v < 0.0 {
                        out.push(Violation::error(
                            format!("factor.kind.{name}"),
                            format!("must be nonnegative and finite, got {v}"),
                        ));
                    }
                }
            }
            FactorKind::None => {}
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let mut out = Vec::new();
        self.validate(&mut out);
        if out.iter().any(|v| v.severity == Severity::Error) {
            Err(Error::InvalidSpec(out))
        } else {
            Ok(())
        }
    }
}

/// Uniform time grid `t_k = k·T/M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        let grid = Self { horizon, n_steps };
        grid.ensure_valid()?;
        Ok(grid)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let mut out = Vec::new();
        self.validate(&mut out);
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(out))
        }
    }

    pub fn validate(&self, out: &mut Vec<Violation>) {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            out.push(Violation::error(
                "grid.horizon",
                format!("must be positive and finite, got {}", self.horizon),
            ));
        }
        if self.n_steps == 0 {
            out.push(Violation::error("grid.n_steps", "must be positive"));
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_k` computed as `T·k/M` so that `t_M == T` exactly.
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// Master seed plus the stream-derivation rule.
///
/// Path `j` of run `r` draws from a ChaCha stream keyed by the injective
/// byte encoding of `(master_seed, r, j)`; independent sub-channels of the
/// same path (names / factor / auxiliary clocks) use the cipher's stream
/// counter. Work items can therefore run on any thread in any order and
/// still reproduce byte-identical ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub master_seed: u64,
}

/// Sub-channel constants; see [`SeedSpec::substream`].
pub mod channel {
    /// Name-level noise: default thresholds and intensity Brownian increments.
    pub const NAMES: u64 = 0;
    /// Systematic-factor Brownian increments.
    pub const FACTOR: u64 = 1;
    /// Auxiliary clocks: the superimposed default stream of the dependent
    /// twist, or the fluctuation-martingale increments.
    pub const AUX: u64 = 2;
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Primary stream of `(run, path)` — channel [`channel::NAMES`].
    pub fn stream(&self, run: u64, path: u64) -> ChaCha8Rng {
        self.substream(run, path, channel::NAMES)
    }

    /// Independent sub-channel of the `(run, path)` stream.
    pub fn substream(&self, run: u64, path: u64, channel: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&run.to_le_bytes());
        seed[16..24].copy_from_slice(&path.to_le_bytes());
        // Fixed domain tag so a SeedSpec stream never collides with a raw
        // ChaCha8Rng::seed_from_u64 stream.
        seed[24..32].copy_from_slice(&0x6c6f6f70_6b736972u64.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(channel);
        rng
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    fn table1_group(beta_c: f64, weight: f64) -> PoolGroup {
        PoolGroup {
            params: TypeParams {
                lambda0: 0.2,
                alpha: 0.5,
                lambda_bar: 2.0,
                sigma: 0.5,
                beta_c,
                beta_s: 1.0,
            },
            weight,
        }
    }

    pub(crate) fn table1_pool(n_names: usize) -> PoolSpec {
        PoolSpec {
            groups: vec![
                table1_group(10.0, 1.0 / 6.0),
                table1_group(3.0, 1.0 / 3.0),
                table1_group(1.0, 0.5),
            ],
            n_names,
        }
    }

    #[test]
    fn table1_pool_is_valid() {
        assert!(validate_pool(&table1_pool(200)).is_empty());
    }

    #[test]
    fn degenerate_single_group_is_valid() {
        let pool = PoolSpec::homogeneous(
            TypeParams {
                lambda0: 0.0,
                alpha: 1.0,
                lambda_bar: 0.0,
                sigma: 0.0,
                beta_c: 0.0,
                beta_s: 0.0,
            },
            1,
        );
        assert!(validate_pool(&pool).is_empty());
    }

    #[test]
    fn weight_sum_violation_is_reported() {
        let pool = PoolSpec {
            groups: vec![table1_group(0.0, 0.6), table1_group(0.0, 0.6)],
            n_names: 10,
        };
        let violations = validate_pool(&pool);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("1.2"));
    }

    #[test]
    fn negative_beta_c_warns_without_invalidating() {
        let mut pool = PoolSpec::homogeneous(
            TypeParams {
                lambda0: 0.1,
                alpha: 1.0,
                lambda_bar: 0.1,
                sigma: 0.1,
                beta_c: -1.0,
                beta_s: 0.0,
            },
            5,
        );
        let violations = validate_pool(&pool);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].severity, Severity::Warning);
        assert!(pool.ensure_valid().is_ok());
        pool.groups[0].params.sigma = f64::NAN;
        assert!(pool.ensure_valid().is_err());
    }

    #[test]
    fn table1_counts_follow_rounding_rule() {
        let counts = group_counts(&table1_pool(200)).unwrap();
        assert_eq!(counts, vec![33, 67, 100]);
    }

    #[test]
    fn single_group_expansion_repeats_params() {
        let pool = PoolSpec::homogeneous(table1_group(1.0, 1.0).params, 5);
        let expanded = expand_pool(&pool).unwrap();
        assert_eq!(expanded.len(), 5);
        assert!(expanded.iter().all(|p| *p == pool.groups[0].params));
    }

    #[test]
    fn equal_weights_shortfall_goes_to_first_group() {
        let pool = PoolSpec {
            groups: vec![table1_group(0.0, 0.5), table1_group(0.0, 0.5)],
            n_names: 3,
        };
        assert_eq!(group_counts(&pool).unwrap(), vec![2, 1]);
    }

    #[test]
    fn expansion_is_pure() {
        let pool = table1_pool(97);
        assert_eq!(expand_pool(&pool).unwrap(), expand_pool(&pool).unwrap());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let seed = SeedSpec::new(42);
        let a: Vec<u64> = seed.stream(0, 7).random_iter().take(4).collect();
        let b: Vec<u64> = seed.stream(0, 7).random_iter().take(4).collect();
        assert_eq!(a, b);
        let c: Vec<u64> = seed.stream(0, 8).random_iter().take(4).collect();
        let d: Vec<u64> = seed.stream(1, 7).random_iter().take(4).collect();
        let e: Vec<u64> = seed.substream(0, 7, channel::FACTOR).random_iter().take(4).collect();
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(a, e);
    }

    #[test]
    fn grid_times_hit_endpoints() {
        let grid = TimeGrid::new(1.0, 500).unwrap();
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(500), 1.0);
        assert!((grid.dt() - 0.002).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn factor_none_with_epsilon_rejected() {
        let f = FactorSpec {
            kind: FactorKind::None,
            x0: 0.0,
            epsilon: 0.5,
        };
        assert!(f.ensure_valid().is_err());
        assert!(FactorSpec::none().ensure_valid().is_ok());
    }

    #[test]
    fn rng_draw_smoke() {
        let mut rng = SeedSpec::new(1).stream(0, 0);
        let x: f64 = rng.random();
        assert!((0.0..1.0).contains(&x));
    }
}
