//! Fair prices of yield tokens and yield futures: risk-neutral Monte Carlo,
//! a 1-D finite-difference solve of the pricing PDE as a cross-check, and
//! cross-maturity consistency reports.

use crate::stochastic::{
    self, discount_factor, Measure, ModelSpec, PathGrid, SdeError,
};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum PricingError {
    #[error("maturity must exceed valuation time: t = {t}, T = {maturity}")]
    Horizon { t: f64, maturity: f64 },
    #[error("pricing PDE requires a scalar model, got dimension {0}")]
    NonScalarModel(usize),
    #[error("PDE solve failed: {msg} (nx = {nx}, nt = {nt})")]
    Solver { msg: String, nx: usize, nt: usize },
    #[error("futures do not partition the token horizon: {0}")]
    Coverage(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

/// Per-unit-time yield fractions as a function of time and state.
#[derive(Clone)]
pub struct YieldFunctionSpec {
    pub evaluator: Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>,
}

impl YieldFunctionSpec {
    pub fn new(evaluator: Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>) -> Self {
        Self { evaluator }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(Arc::new(move |_, _| vec![0.0; dim]))
    }

    /// Constant yield fraction applied to every component.
    pub fn constant(fraction: f64, dim: usize) -> Self {
        Self::new(Arc::new(move |_, _| vec![fraction; dim]))
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.evaluator)(t, x)
    }
}

/// Monte Carlo price with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl PriceEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, n_paths: 0 }
    }

    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var =
                samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n_paths: n }
    }
}

fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| t0 + (t1 - t0) * k as f64 / steps as f64)
        .collect()
}

/// Discounted yield flow at one grid point: e^{-int r} Y(s, X_s) . X_s.
fn discounted_flow(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    t0: f64,
    s: f64,
    x: &[f64],
) -> f64 {
    let df = discount_factor(|u| model.rate_at(u), t0, s).unwrap_or(f64::NAN);
    let y = yieldfn.eval(s, x);
    df * y.iter().zip(x).map(|(yi, xi)| yi * xi).sum::<f64>()
}

/// Price of the yield token over (t, T]: discounted risk-neutral sample average
/// of the cumulative yield integral, trapezoidal along each path.
pub fn price_yield_token_mc(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    t: f64,
    x: &[f64],
    maturity: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PriceEstimate, PricingError> {
    if maturity <= t {
        return Err(PricingError::Horizon { t, maturity });
    }
    let times = uniform_grid(t, maturity, steps.max(1));
    let grid = stochastic::simulate_paths(model, Measure::RiskNeutral, x, &times, n_paths, seed)?;
    let samples = integrate_paths(model, yieldfn, &grid, t, 0, times.len() - 1);
    Ok(PriceEstimate::from_samples(&samples))
}

/// Per-path trapezoidal integral of the discounted yield flow between two grid
/// steps (inclusive endpoints).
fn integrate_paths(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    grid: &PathGrid,
    t0: f64,
    step_lo: usize,
    step_hi: usize,
) -> Vec<f64> {
    let times = &grid.times;
    // Discount factors depend only on the grid, not the path.
    let dfs: Vec<f64> = (step_lo..=step_hi)
        .map(|k| discount_factor(|u| model.rate_at(u), t0, times[k]).unwrap_or(f64::NAN))
        .collect();
    let flow = |p: usize, k: usize| -> f64 {
        let x = grid.state(p, k);
        let y = yieldfn.eval(times[k], x);
        dfs[k - step_lo] * y.iter().zip(x).map(|(yi, xi)| yi * xi).sum::<f64>()
    };
    (0..grid.n_paths)
        .map(|p| {
            let mut acc = 0.0;
            let mut prev = flow(p, step_lo);
            for k in (step_lo + 1)..=step_hi {
                let cur = flow(p, k);
                acc += 0.5 * (prev + cur) * (times[k] - times[k - 1]);
                prev = cur;
            }
            acc
        })
        .collect()
}

/// Price of the single-payment yield future paying Y(t_i, X) . X at t_i.
pub fn price_yield_future_mc(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    t_i: f64,
    x: &[f64],
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PriceEstimate, PricingError> {
    if t_i < 0.0 {
        return Err(PricingError::Horizon { t: 0.0, maturity: t_i });
    }
    if t_i == 0.0 {
        return Ok(PriceEstimate::exact(discounted_flow(model, yieldfn, 0.0, 0.0, x)
            / 1.0));
    }
    let times = uniform_grid(0.0, t_i, steps.max(1));
    let grid = stochastic::simulate_paths(model, Measure::RiskNeutral, x, &times, n_paths, seed)?;
    let last = times.len() - 1;
    let samples: Vec<f64> = (0..n_paths)
        .map(|p| discounted_flow(model, yieldfn, 0.0, t_i, grid.state(p, last)))
        .collect();
    Ok(PriceEstimate::from_samples(&samples))
}

/// Price of the accrual future over (a, b]: the slice of the yield-token
/// integral restricted to that interval. Sums of these over a partition equal
/// the token price by construction of the integral.
pub fn price_accrual_future_mc(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    t: f64,
    x: &[f64],
    a: f64,
    b: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PriceEstimate, PricingError> {
    if b <= a || a < t {
        return Err(PricingError::Horizon { t: a, maturity: b });
    }
    let times = uniform_grid(t, b, steps.max(1));
    let grid = stochastic::simulate_paths(model, Measure::RiskNeutral, x, &times, n_paths, seed)?;
    // Find the first step at or after `a`; the grid is uniform so this lands on
    // a node only when a is on the grid, otherwise we integrate from the next
    // node (the caller controls alignment via `steps`).
    let step_lo = times.iter().position(|&s| s >= a - 1e-12).unwrap();
    let samples = integrate_paths(model, yieldfn, &grid, t, step_lo, times.len() - 1);
    Ok(PriceEstimate::from_samples(&samples))
}

/// Token prices for several maturities plus accrual-future prices over the
/// partition boundaries, all on one common path grid (common random numbers).
pub fn price_token_strip_mc(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    t: f64,
    x: &[f64],
    boundaries: &[f64],
    maturities: &[f64],
    n_paths: usize,
    steps_per_interval: usize,
    seed: u64,
) -> Result<(Vec<(f64, PriceEstimate)>, Vec<((f64, f64), PriceEstimate)>), PricingError> {
    let mut cuts: Vec<f64> = std::iter::once(t).chain(boundaries.iter().copied()).collect();
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            return Err(PricingError::Coverage(format!(
                "boundaries not ascending at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    // Refined common grid with nodes on every boundary.
    let mut times = vec![];
    for w in cuts.windows(2) {
        let sub = uniform_grid(w[0], w[1], steps_per_interval.max(1));
        times.extend_from_slice(&sub[..sub.len() - 1]);
    }
    times.push(*cuts.last().unwrap());
    let grid = stochastic::simulate_paths(model, Measure::RiskNeutral, x, &times, n_paths, seed)?;

    let node_of = |b: f64| times.iter().position(|&s| (s - b).abs() < 1e-9).unwrap();
    let mut interval_samples: Vec<((f64, f64), Vec<f64>)> = vec![];
    for w in cuts.windows(2) {
        let lo = node_of(w[0]);
        let hi = node_of(w[1]);
        interval_samples.push(((w[0], w[1]), integrate_paths(model, yieldfn, &grid, t, lo, hi)));
    }

    let futures: Vec<((f64, f64), PriceEstimate)> = interval_samples
        .iter()
        .map(|(iv, s)| (*iv, PriceEstimate::from_samples(s)))
        .collect();

    let tokens: Vec<(f64, PriceEstimate)> = maturities
        .iter()
        .map(|&maturity| {
            let mut acc = vec![0.0; n_paths];
            for ((_, b), s) in &interval_samples {
                if *b <= maturity + 1e-12 {
                    for (ai, si) in acc.iter_mut().zip(s) {
                        *ai += si;
                    }
                }
            }
            (maturity, PriceEstimate::from_samples(&acc))
        })
        .collect();

    Ok((tokens, futures))
}

/// Solution of the scalar pricing PDE on a (time, spot) grid.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub times: Vec<f64>,
    pub spots: Vec<f64>,
    /// Time-major values, values[k * nx + j] = P(times[k], spots[j]).
    pub values: Vec<f64>,
}

impl PriceSurface {
    pub fn value(&self, t_idx: usize, x_idx: usize) -> f64 {
        self.values[t_idx * self.spots.len() + x_idx]
    }

    /// Linear interpolation in spot at the initial time slice.
    pub fn at_t0(&self, x: f64) -> f64 {
        let xs = &self.spots;
        if x <= xs[0] {
            return self.value(0, 0);
        }
        if x >= *xs.last().unwrap() {
            return self.value(0, xs.len() - 1);
        }
        let j = xs.partition_point(|&v| v <= x) - 1;
        let w = (x - xs[j]) / (xs[j + 1] - xs[j]);
        (1.0 - w) * self.value(0, j) + w * self.value(0, j + 1)
    }
}

/// Implicit (backward-Euler in time, central in space) march of
/// P_t + 1/2 sigma(t,x)^2 P_xx + x (Y(t,x) + r P_x) - r P = 0
/// from P(T, .) = 0 down to t = 0. Lower boundary Dirichlet 0, upper boundary
/// zero curvature. The source term is sampled at the step midpoint.
pub fn solve_pricing_pde_1d(
    model: &ModelSpec,
    yieldfn: &YieldFunctionSpec,
    maturity: f64,
    x_max: f64,
    nx: usize,
    nt: usize,
) -> Result<PriceSurface, PricingError> {
    if model.dim != 1 {
        return Err(PricingError::NonScalarModel(model.dim));
    }
    if nx < 8 || nt < 8 {
        return Err(PricingError::Solver {
            msg: "grid too coarse (need nx, nt >= 8)".into(),
            nx,
            nt,
        });
    }
    let dx = x_max / (nx - 1) as f64;
    let dt = maturity / nt as f64;
    let spots: Vec<f64> = (0..nx).map(|j| j as f64 * dx).collect();
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();

    let mut values = vec![0.0; (nt + 1) * nx];
    // Terminal slice is identically zero; march backward.
    let mut cur = vec![0.0; nx];
    for k in (0..nt).rev() {
        let t_new = times[k];
        let t_mid = t_new + 0.5 * dt;
        // Tridiagonal system over interior nodes j = 1..nx-2, with the top node
        // eliminated through the zero-curvature extrapolation.
        let n_int = nx - 2;
        let mut lower = vec![0.0; n_int];
        let mut diag = vec![0.0; n_int];
        let mut upper = vec![0.0; n_int];
        let mut rhs = vec![0.0; n_int];
        let r = model.rate_at(t_new);
        for (row, j) in (1..nx - 1).enumerate() {
            let xj = spots[j];
            let sig = (model.diffusion)(t_new, &[xj])[0];
            let a = 0.5 * sig * sig;
            let b = r * xj;
            let y = yieldfn.eval(t_mid, &[xj])[0];
            let source = xj * y;
            lower[row] = -dt * (a / (dx * dx) - b / (2.0 * dx));
            diag[row] = 1.0 + dt * (2.0 * a / (dx * dx) + r);
            upper[row] = -dt * (a / (dx * dx) + b / (2.0 * dx));
            rhs[row] = cur[j] + dt * source;
        }
        // Top node: P[nx-1] = 2 P[nx-2] - P[nx-3].
        let last = n_int - 1;
        diag[last] += 2.0 * upper[last];
        lower[last] -= upper[last];
        upper[last] = 0.0;

        let sol = thomas(&lower, &diag, &upper, &rhs).map_err(|msg| PricingError::Solver {
            msg,
            nx,
            nt,
        })?;
        cur[0] = 0.0;
        cur[1..nx - 1].copy_from_slice(&sol);
        cur[nx - 1] = 2.0 * cur[nx - 2] - cur[nx - 3];
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(PricingError::Solver {
                msg: format!("non-finite solution at time step {k}"),
                nx,
                nt,
            });
        }
        values[k * nx..(k + 1) * nx].copy_from_slice(&cur);
    }

    Ok(PriceSurface { times, spots, values })
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>, String> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < 1e-300 {
        return Err("zero pivot in tridiagonal solve".into());
    }
    c[0] = upper[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv.abs() < 1e-300 {
            return Err(format!("zero pivot at row {i}"));
        }
        c[i] = upper[i] / piv;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// One maturity-consistency check row.
#[derive(Debug, Clone)]
pub struct ConsistencyRow {
    pub lower_maturity: f64,
    pub upper_maturity: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub all_pass: bool,
}

impl ConsistencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower_maturity,upper_maturity,residual,tolerance,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt12(r.lower_maturity),
                fmt12(r.upper_maturity),
                fmt12(r.residual),
                fmt12(r.tolerance),
                r.pass
            );
        }
        out
    }
}

pub(crate) fn fmt12(v: f64) -> String {
    format!("{v:.12e}")
}

/// Checks that token prices at each maturity equal the sum of the accrual
/// futures covering (t, T], and that adjacent maturities differ by exactly the
/// futures between them, within 3x the combined standard error.
pub fn check_maturity_consistency(
    valuation_time: f64,
    token_prices: &[(f64, PriceEstimate)],
    future_prices: &[((f64, f64), PriceEstimate)],
    sigma_mult: f64,
    abs_floor: f64,
) -> Result<ConsistencyReport, PricingError> {
    let mut tokens = token_prices.to_vec();
    tokens.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut futures = future_prices.to_vec();
    futures.sort_by(|a, b| a.0 .0.partial_cmp(&b.0 .0).unwrap());
    if tokens.is_empty() || futures.is_empty() {
        return Err(PricingError::Coverage("empty token or future set".into()));
    }
    // Futures must tile (t, T_max] and every maturity must sit on a boundary.
    let t_max = tokens.last().unwrap().0;
    let mut cursor = valuation_time;
    for ((a, b), _) in &futures {
        if (a - cursor).abs() > 1e-9 {
            return Err(PricingError::Coverage(format!(
                "gap or overlap: expected interval starting at {cursor}, got {a}"
            )));
        }
        cursor = *b;
    }
    if (cursor - t_max).abs() > 1e-9 {
        return Err(PricingError::Coverage(format!(
            "futures end at {cursor}, longest token matures at {t_max}"
        )));
    }
    for (maturity, _) in &tokens {
        if !futures.iter().any(|((_, b), _)| (b - maturity).abs() < 1e-9) {
            return Err(PricingError::Coverage(format!(
                "maturity {maturity} is not a future boundary"
            )));
        }
    }

    let sum_between = |lo: f64, hi: f64| -> (f64, f64) {
        let mut total = 0.0;
        let mut var = 0.0;
        for ((a, b), est) in &futures {
            if *a >= lo - 1e-9 && *b <= hi + 1e-9 {
                total += est.mean;
                var += est.stderr * est.stderr;
            }
        }
        (total, var)
    };

    let mut rows = vec![];
    // Token vs its own strip of futures.
    for (maturity, est) in &tokens {
        let (total, var) = sum_between(valuation_time, *maturity);
        let residual = (est.mean - total).abs();
        let tolerance =
            (sigma_mult * (est.stderr * est.stderr + var).sqrt()).max(abs_floor);
        rows.push(ConsistencyRow {
            lower_maturity: valuation_time,
            upper_maturity: *maturity,
            residual,
            tolerance,
            pass: residual <= tolerance,
        });
    }
    // Adjacent maturity pairs.
    for w in tokens.windows(2) {
        let (t1, e1) = w[0];
        let (t2, e2) = w[1];
        let (total, var) = sum_between(t1, t2);
        let residual = (e2.mean - e1.mean - total).abs();
        let tolerance = (sigma_mult
            * (e1.stderr * e1.stderr + e2.stderr * e2.stderr + var).sqrt())
        .max(abs_floor);
        rows.push(ConsistencyRow {
            lower_maturity: t1,
            upper_maturity: t2,
            residual,
            tolerance,
            pass: residual <= tolerance,
        });
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(ConsistencyReport { rows, all_pass })
}

/// Flat per-unit-time yield amount c solving int_t^T e^{-int r} c ds = price.
pub fn implied_yield<F: Fn(f64) -> f64 + Copy>(
    token_price: f64,
    rate: F,
    t: f64,
    maturity: f64,
) -> Result<f64, PricingError> {
    if maturity <= t {
        return Err(PricingError::Horizon { t, maturity });
    }
    let annuity = stochastic::annuity_factor(rate, t, maturity)?;
    Ok(token_price / annuity)
}
