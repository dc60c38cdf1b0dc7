//! Underlying asset-price SDE simulation under the physical and risk-neutral
//! measures, plus discount factors from the risk-free rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;
use thiserror::Error;

pub type DriftFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// Row-major n x m diffusion matrix.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub const STATE_FLOOR: f64 = 1e-12;

#[derive(Error, Debug)]
pub enum SdeError {
    #[error("times must be strictly ascending (violated at index {0})")]
    NonAscendingTimes(usize),
    #[error("need at least one path, got {0}")]
    NoPaths(usize),
    #[error("initial state has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("numerical blow-up: non-finite state on path {path} at step {step}")]
    NumericalBlowup { path: usize, step: usize },
    #[error("discounting requires s >= t, got t = {t}, s = {s}")]
    TimeOrdering { t: f64, s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Physical,
    RiskNeutral,
}

/// Drift/diffusion/rate specification of the underlying price SDE.
#[derive(Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub driving_dim: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub rate: RateFn,
    /// Multiplicative models get their states clamped at a small positive floor.
    pub multiplicative: bool,
}

impl ModelSpec {
    pub fn new(
        dim: usize,
        driving_dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        rate: RateFn,
        multiplicative: bool,
    ) -> Self {
        Self { dim, driving_dim, drift, diffusion, rate, multiplicative }
    }

    /// Scalar geometric model: dX = mu X dt + sigma X dW.
    pub fn geometric(mu: f64, sigma: f64, rate: f64) -> Self {
        Self::new(
            1,
            1,
            Arc::new(move |_t, x| vec![mu * x[0]]),
            Arc::new(move |_t, x| vec![sigma * x[0]]),
            Arc::new(move |_t| rate),
            true,
        )
    }

    /// Scalar arithmetic model: dX = mu dt + sigma dW.
    pub fn arithmetic(mu: f64, sigma: f64, rate: f64) -> Self {
        Self::new(
            1,
            1,
            Arc::new(move |_t, _x| vec![mu]),
            Arc::new(move |_t, _x| vec![sigma]),
            Arc::new(move |_t| rate),
            false,
        )
    }

    /// Scalar mean-reverting (Ornstein-Uhlenbeck) model:
    /// dX = kappa (theta - X) dt + sigma dW.
    pub fn mean_reverting(kappa: f64, theta: f64, sigma: f64, rate: f64) -> Self {
        Self::new(
            1,
            1,
            Arc::new(move |_t, x| vec![kappa * (theta - x[0])]),
            Arc::new(move |_t, _x| vec![sigma]),
            Arc::new(move |_t| rate),
            false,
        )
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        (self.rate)(t)
    }
}

/// Simulated paths on a fixed time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    /// Flattened (path, step, component) tensor.
    pub states: Vec<f64>,
    pub seed: u64,
    pub measure: Measure,
    /// Number of floor clamps applied during stepping (multiplicative models).
    pub clamp_count: u64,
}

impl PathGrid {
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.times.len() + step) * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }
}

/// Euler-Maruyama simulation with per-path counter-based substreams: path `i`
/// is identical no matter how many paths are requested.
pub fn simulate_paths(
    model: &ModelSpec,
    measure: Measure,
    x0: &[f64],
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathGrid, SdeError> {
    if n_paths == 0 {
        return Err(SdeError::NoPaths(n_paths));
    }
    if x0.len() != model.dim {
        return Err(SdeError::DimensionMismatch { got: x0.len(), expected: model.dim });
    }
    for k in 1..times.len() {
        if times[k] <= times[k - 1] {
            return Err(SdeError::NonAscendingTimes(k));
        }
    }
    let n = model.dim;
    let m = model.driving_dim;
    let n_steps = times.len();
    let mut states = vec![0.0; n_paths * n_steps * n];
    let mut clamp_count = 0u64;

    for path in 0..n_paths {
        let mut rng = substream(seed, path as u64);
        let mut x = x0.to_vec();
        states[path * n_steps * n..path * n_steps * n + n].copy_from_slice(&x);
        for step in 1..n_steps {
            let t = times[step - 1];
            let dt = times[step] - t;
            let sqrt_dt = dt.sqrt();
            let drift = match measure {
                Measure::Physical => (model.drift)(t, &x),
                Measure::RiskNeutral => {
                    let r = (model.rate)(t);
                    x.iter().map(|xi| r * xi).collect()
                }
            };
            let sigma = (model.diffusion)(t, &x);
            debug_assert_eq!(drift.len(), n);
            debug_assert_eq!(sigma.len(), n * m);
            let dw: Vec<f64> = (0..m)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * sqrt_dt
                })
                .collect();
            for i in 0..n {
                let mut dx = drift[i] * dt;
                for j in 0..m {
                    dx += sigma[i * m + j] * dw[j];
                }
                x[i] += dx;
                if model.multiplicative && x[i] < STATE_FLOOR {
                    x[i] = STATE_FLOOR;
                    clamp_count += 1;
                }
                if !x[i].is_finite() {
                    return Err(SdeError::NumericalBlowup { path, step });
                }
            }
            let base = (path * n_steps + step) * n;
            states[base..base + n].copy_from_slice(&x);
        }
    }

    Ok(PathGrid {
        times: times.to_vec(),
        n_paths,
        dim: n,
        states,
        seed,
        measure,
        clamp_count,
    })
}

fn substream(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

pub const DEFAULT_QUAD_PANELS: usize = 128;

/// exp(-int_t^s r(u) du) by composite Simpson.
pub fn discount_factor<F: Fn(f64) -> f64>(rate: F, t: f64, s: f64) -> Result<f64, SdeError> {
    discount_factor_with_panels(rate, t, s, DEFAULT_QUAD_PANELS)
}

pub fn discount_factor_with_panels<F: Fn(f64) -> f64>(
    rate: F,
    t: f64,
    s: f64,
    panels: usize,
) -> Result<f64, SdeError> {
    Ok((-integrate_rate(&rate, t, s, panels)?).exp())
}

/// Discount over a piecewise-smooth rate: the quadrature panels are aligned to
/// the supplied breakpoints so jumps in r do not pollute the Simpson sum.
pub fn discount_factor_piecewise<F: Fn(f64) -> f64>(
    rate: F,
    t: f64,
    s: f64,
    breakpoints: &[f64],
    panels_per_piece: usize,
) -> Result<f64, SdeError> {
    if s < t {
        return Err(SdeError::TimeOrdering { t, s });
    }
    let mut cuts: Vec<f64> = std::iter::once(t)
        .chain(breakpoints.iter().copied().filter(|&b| b > t && b < s))
        .chain(std::iter::once(s))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for w in cuts.windows(2) {
        // Sample strictly inside the piece so edge values at a jump are harmless.
        total += integrate_open(&rate, w[0], w[1], panels_per_piece);
    }
    Ok((-total).exp())
}

fn integrate_rate<F: Fn(f64) -> f64>(
    rate: &F,
    t: f64,
    s: f64,
    panels: usize,
) -> Result<f64, SdeError> {
    if s < t {
        return Err(SdeError::TimeOrdering { t, s });
    }
    if s == t {
        return Ok(0.0);
    }
    let h = (s - t) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let a = t + k as f64 * h;
        acc += h / 6.0 * (rate(a) + 4.0 * rate(a + 0.5 * h) + rate(a + h));
    }
    Ok(acc)
}

fn integrate_open<F: Fn(f64) -> f64>(rate: &F, a: f64, b: f64, panels: usize) -> f64 {
    // Midpoint rule per panel, fourth-order via Simpson on interior samples is
    // unnecessary here; pieces are smooth so use Simpson with shrunk endpoints.
    let eps = (b - a) * 1e-9;
    let (a, b) = (a + eps, b - eps);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        acc += h / 6.0 * (rate(lo) + 4.0 * rate(lo + 0.5 * h) + rate(lo + h));
    }
    acc
}

/// Annuity factor int_t^s exp(-int_t^u r) du by composite Simpson.
pub fn annuity_factor<F: Fn(f64) -> f64 + Copy>(
    rate: F,
    t: f64,
    s: f64,
) -> Result<f64, SdeError> {
    if s < t {
        return Err(SdeError::TimeOrdering { t, s });
    }
    let panels = DEFAULT_QUAD_PANELS;
    let h = (s - t) / panels as f64;
    let df = |u: f64| discount_factor(rate, t, u).unwrap_or(f64::NAN);
    let mut acc = 0.0;
    for k in 0..panels {
        let a = t + k as f64 * h;
        acc += h / 6.0 * (df(a) + 4.0 * df(a + 0.5 * h) + df(a + h));
    }
    Ok(acc)
}
