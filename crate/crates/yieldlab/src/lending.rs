//! Lending-pool analysis: utilization-driven interest rates, hedging premia
//! for risk-averse lenders and borrowers, arbitrage detection against a
//! tokenizer, the full-hedge equilibrium, welfare comparisons, and the
//! rate-manipulation scenario against an aggregated book.

use crate::aggregation::{AggError, OrderBookView, Side};
use crate::dist::{bracketed_root, DistError, YieldDistribution};
use crate::utility::UtilitySpec;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LendingError {
    #[error("pool has no lent assets; utilization undefined")]
    UndefinedUtilization,
    #[error("invalid pool parameters: {0}")]
    BadPool(&'static str),
    #[error("agent totals inconsistent with pool utilization: sum B = {sum_b}, u * sum L = {u_times_l}")]
    Consistency { sum_b: f64, u_times_l: f64 },
    #[error("expectation not computable for this utility/distribution pair")]
    Distribution,
    #[error("order book has no usable liquidity")]
    Liquidity,
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Agg(#[from] AggError),
}

/// Piecewise-linear rate curve with a kink at the target utilization.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCurve {
    pub r0: f64,
    pub slope1: f64,
    pub slope2: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolState {
    pub lent: f64,
    pub borrowed: f64,
    pub rate_curve: RateCurve,
    /// Borrowers pay gamma times the lender rate.
    pub gamma: f64,
}

impl PoolState {
    pub fn validate(&self) -> Result<(), LendingError> {
        if self.lent <= 0.0 {
            return Err(LendingError::UndefinedUtilization);
        }
        if self.borrowed < 0.0 || self.borrowed > self.lent {
            return Err(LendingError::BadPool("need 0 <= borrowed <= lent"));
        }
        let c = &self.rate_curve;
        if !(c.target > 0.0 && c.target <= 1.0) {
            return Err(LendingError::BadPool("target utilization must lie in (0, 1]"));
        }
        if c.slope1 < 0.0 || c.slope2 < 0.0 || c.r0 < 0.0 {
            return Err(LendingError::BadPool("rate curve params must be nonnegative"));
        }
        if self.gamma < 1.0 {
            return Err(LendingError::BadPool("gamma must be at least 1"));
        }
        Ok(())
    }

    pub fn utilization(&self) -> f64 {
        self.borrowed / self.lent
    }
}

/// Lender rate r(u) with the kink at the target utilization U*.
pub fn interest_rate(pool: &PoolState) -> Result<f64, LendingError> {
    pool.validate()?;
    let u = pool.utilization();
    let c = &pool.rate_curve;
    let below = c.slope1 * u.min(c.target) / c.target;
    let above = if c.target < 1.0 {
        c.slope2 * (u - c.target).max(0.0) / (1.0 - c.target)
    } else {
        0.0
    };
    Ok(c.r0 + below + above)
}

/// Rate paid by borrowers.
pub fn borrow_rate(pool: &PoolState) -> Result<f64, LendingError> {
    Ok(pool.gamma * interest_rate(pool)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Lender,
    Borrower,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub role: Role,
    pub notional: f64,
    pub utility: UtilitySpec,
}

const PREMIUM_TOL: f64 = 1e-10;

/// Hedging premium: the price concession that makes the agent indifferent
/// between the certain tokenized position and the risky pool position.
/// Lenders solve U(L + L(E[Y] - d)) = E[U(L + L Y)], borrowers
/// U(-B - (B/u)(E[Y] + d)) = E[U(-B - B Y / u)].
pub fn hedging_premium(
    agent: &AgentSpec,
    yield_dist: &YieldDistribution,
    utilization: f64,
) -> Result<f64, LendingError> {
    if agent.role == Role::Borrower && utilization <= 0.0 {
        return Err(LendingError::UndefinedUtilization);
    }
    if agent.utility.is_risk_neutral() {
        return Ok(0.0);
    }
    let mean = yield_dist.total_mean();
    let u = &agent.utility;
    let risky = match agent.role {
        Role::Lender => {
            let l = agent.notional;
            yield_dist.expect_joint(|ys| u.eval(l + l * ys.iter().sum::<f64>()))
        }
        Role::Borrower => {
            let b = agent.notional;
            yield_dist.expect_joint(|ys| u.eval(-b - b * ys.iter().sum::<f64>() / utilization))
        }
    };
    if !risky.is_finite() {
        return Err(LendingError::Distribution);
    }
    let certain = |d: f64| match agent.role {
        Role::Lender => u.eval(agent.notional + agent.notional * (mean - d)),
        Role::Borrower => {
            u.eval(-agent.notional - agent.notional / utilization * (mean + d))
        }
    };
    // g is decreasing in d and nonnegative at 0 by Jensen; a tiny negative
    // value there is quadrature round-off for a degenerate distribution.
    let g = |d: f64| certain(d) - risky;
    if g(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let root = bracketed_root(g, 0.0, 0.5, PREMIUM_TOL).map_err(|_| LendingError::Distribution)?;
    Ok(root)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arbitrage {
    None,
    /// Token trades rich: mint from the pool position and sell.
    MintAndSell { profit: f64 },
    /// Token trades cheap: buy it and collect the yield.
    BuyAndHold { profit: f64 },
}

pub fn detect_arbitrage(token_price: f64, yield_dist: &YieldDistribution, tol: f64) -> Arbitrage {
    let fair = yield_dist.total_mean();
    if token_price > fair + tol {
        Arbitrage::MintAndSell { profit: token_price - fair }
    } else if token_price < fair - tol {
        Arbitrage::BuyAndHold { profit: fair - token_price }
    } else {
        Arbitrage::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedgeStatus {
    Hedged,
    Unhedged,
    Indifferent,
}

#[derive(Debug, Clone)]
pub struct AgentHedge {
    pub role: Role,
    pub notional: f64,
    /// Lemma-4 threshold: E[Y] - d_L for lenders, E[Y] + d_B for borrowers.
    pub threshold: f64,
    pub status: HedgeStatus,
}

#[derive(Debug, Clone)]
pub struct HedgeReport {
    pub token_price: f64,
    pub offered: f64,
    pub demanded: f64,
    pub fully_hedged: bool,
    pub any_indifferent: bool,
    pub agents: Vec<AgentHedge>,
}

impl HedgeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("role,notional,threshold,status\n");
        for a in &self.agents {
            out.push_str(&format!(
                "{},{},{},{}\n",
                match a.role {
                    Role::Lender => "lender",
                    Role::Borrower => "borrower",
                },
                crate::pricing::fmt12(a.notional),
                crate::pricing::fmt12(a.threshold),
                match a.status {
                    HedgeStatus::Hedged => "hedged",
                    HedgeStatus::Unhedged => "unhedged",
                    HedgeStatus::Indifferent => "indifferent",
                }
            ));
        }
        out
    }
}

const PRICE_TOL: f64 = 1e-9;

/// Token supply/demand at a quoted price: lenders offer their full notional
/// when the price clears their threshold, borrowers demand B/u tokens when it
/// does; at price E[Y] with risk-averse agents both sides fully hedge.
pub fn equilibrium_hedge(
    pool: &PoolState,
    lenders: &[AgentSpec],
    borrowers: &[AgentSpec],
    token_price: f64,
    yield_dist: &YieldDistribution,
) -> Result<HedgeReport, LendingError> {
    pool.validate()?;
    let u = pool.utilization();
    let sum_l: f64 = lenders.iter().map(|a| a.notional).sum();
    let sum_b: f64 = borrowers.iter().map(|a| a.notional).sum();
    let expected = u * sum_l;
    if (sum_b - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
        return Err(LendingError::Consistency { sum_b, u_times_l: expected });
    }
    let mean = yield_dist.total_mean();
    let mut agents = Vec::new();
    let mut offered = 0.0;
    let mut demanded = 0.0;
    let mut any_indifferent = false;
    for a in lenders {
        let d = hedging_premium(a, yield_dist, u)?;
        let threshold = mean - d;
        let status = if (token_price - threshold).abs() <= PRICE_TOL {
            any_indifferent = true;
            HedgeStatus::Indifferent
        } else if token_price > threshold {
            offered += a.notional;
            HedgeStatus::Hedged
        } else {
            HedgeStatus::Unhedged
        };
        agents.push(AgentHedge { role: Role::Lender, notional: a.notional, threshold, status });
    }
    for a in borrowers {
        let d = hedging_premium(a, yield_dist, u)?;
        let threshold = mean + d;
        let status = if (token_price - threshold).abs() <= PRICE_TOL {
            any_indifferent = true;
            HedgeStatus::Indifferent
        } else if token_price < threshold {
            demanded += a.notional / u;
            HedgeStatus::Hedged
        } else {
            HedgeStatus::Unhedged
        };
        agents.push(AgentHedge { role: Role::Borrower, notional: a.notional, threshold, status });
    }
    let fully_hedged = agents.iter().all(|a| a.status == HedgeStatus::Hedged);
    Ok(HedgeReport {
        token_price,
        offered,
        demanded,
        fully_hedged,
        any_indifferent,
        agents,
    })
}

/// Aggregate expected utility of the participants. Without a tokenizer,
/// lenders carry L·Y and borrowers pay gamma·B·Y/u. With one, lenders lock
/// E[Y] per unit; borrowers buy min(1, 1/gamma) of the gamma-scaled hedge at
/// price E[Y], leaving the residual (gamma-1)·B·Y/u exposure when gamma > 1.
pub fn welfare(
    pool: &PoolState,
    agents: &[AgentSpec],
    yield_dist: &YieldDistribution,
    tokenizer_present: bool,
    gamma: f64,
) -> Result<f64, LendingError> {
    pool.validate()?;
    if gamma < 1.0 {
        return Err(LendingError::BadPool("gamma must be at least 1"));
    }
    let u_til = pool.utilization();
    let mean = yield_dist.total_mean();
    let mut total = 0.0;
    for a in agents {
        let u = &a.utility;
        let w = match (a.role, tokenizer_present) {
            (Role::Lender, false) => {
                let l = a.notional;
                yield_dist.expect_joint(|ys| u.eval(l + l * ys.iter().sum::<f64>()))
            }
            (Role::Lender, true) => u.eval(a.notional * (1.0 + mean)),
            (Role::Borrower, false) => {
                if u_til <= 0.0 {
                    return Err(LendingError::UndefinedUtilization);
                }
                let b = a.notional;
                yield_dist.expect_joint(|ys| {
                    u.eval(-b - gamma * b * ys.iter().sum::<f64>() / u_til)
                })
            }
            (Role::Borrower, true) => {
                if u_til <= 0.0 {
                    return Err(LendingError::UndefinedUtilization);
                }
                let b = a.notional;
                // Hedge tokens: fraction min(1, 1/gamma) of the full
                // gamma B / u requirement, bought at price E[Y].
                let hedge = gamma.recip().min(1.0) * gamma * b / u_til;
                yield_dist.expect_joint(|ys| {
                    let s: f64 = ys.iter().sum();
                    u.eval(-b - gamma * b * s / u_til + hedge * (s - mean))
                })
            }
        };
        if !w.is_finite() {
            return Err(LendingError::Distribution);
        }
        total += w;
    }
    Ok(total)
}

/// (gamma, welfare-with-tokenizer) rows over an ascending grid.
pub fn welfare_gamma_sweep(
    pool: &PoolState,
    agents: &[AgentSpec],
    yield_dist: &YieldDistribution,
    gammas: &[f64],
) -> Result<Vec<(f64, f64)>, LendingError> {
    gammas
        .iter()
        .map(|&g| welfare(pool, agents, yield_dist, true, g).map(|w| (g, w)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScenarioStep {
    pub step: usize,
    pub lent: f64,
    pub utilization: f64,
    pub rate: f64,
    pub sold: f64,
    pub proceeds: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioTrace {
    pub target_rate: f64,
    pub shifted_rate: f64,
    pub final_rate: f64,
    pub corrected: bool,
    pub pnl: f64,
    pub steps: Vec<ScenarioStep>,
}

impl ScenarioTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lent,utilization,rate,sold,proceeds\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.step,
                crate::pricing::fmt12(s.lent),
                crate::pricing::fmt12(s.utilization),
                crate::pricing::fmt12(s.rate),
                crate::pricing::fmt12(s.sold),
                crate::pricing::fmt12(s.proceeds)
            ));
        }
        out
    }
}

const SCENARIO_MAX_STEPS: usize = 500;
const RATE_BAND: f64 = 0.10;

/// Scripted manipulation/correction loop. An adversary pushes utilization up
/// by `adversary_shift` (withdrawing lent assets); the speculator then
/// repeatedly lends a small amount, mints yield tokens, and sells them into
/// the book, walking the rate back toward the pre-shift equilibrium. Stops
/// once the rate is within 10% of the original or the book runs dry.
pub fn manipulation_scenario(
    pool: &PoolState,
    adversary_shift: f64,
    yield_dist: &YieldDistribution,
    book: &OrderBookView,
) -> Result<ScenarioTrace, LendingError> {
    pool.validate()?;
    let target_rate = interest_rate(pool)?;
    if adversary_shift == 0.0 {
        return Ok(ScenarioTrace {
            target_rate,
            shifted_rate: target_rate,
            final_rate: target_rate,
            corrected: true,
            pnl: 0.0,
            steps: vec![],
        });
    }
    if adversary_shift < 0.0 {
        return Err(LendingError::BadPool("adversary shift must be nonnegative"));
    }
    let u0 = pool.utilization();
    let u_shifted = (u0 + adversary_shift).min(1.0);
    if book.support().is_none() {
        return Err(LendingError::Liquidity);
    }
    let mean = yield_dist.total_mean();
    // Adversary withdraws lending until utilization hits the shifted level.
    let mut lent = pool.borrowed / u_shifted;
    let shifted_pool = PoolState { lent, ..*pool };
    let shifted_rate = interest_rate(&shifted_pool)?;
    let step_size = 0.02 * lent;
    let mut cursor = book.anchor;
    let mut pnl = 0.0;
    let mut steps = Vec::new();
    let mut corrected = false;
    let mut final_rate = shifted_rate;
    for k in 0..SCENARIO_MAX_STEPS {
        if (final_rate - target_rate).abs() <= RATE_BAND * target_rate.abs() {
            corrected = true;
            break;
        }
        let fill = match book.cost_to_trade(Side::Sell, step_size, Some(cursor)) {
            Ok(f) => f,
            Err(AggError::Depth { .. }) => break, // book exhausted: rate stays shifted
            Err(e) => return Err(e.into()),
        };
        cursor = fill.p_end;
        lent += step_size;
        pnl += fill.notional - mean * step_size;
        let p = PoolState { lent, ..*pool };
        final_rate = interest_rate(&p)?;
        steps.push(ScenarioStep {
            step: k + 1,
            lent,
            utilization: p.utilization(),
            rate: final_rate,
            sold: step_size,
            proceeds: fill.notional,
        });
    }
    if (final_rate - target_rate).abs() <= RATE_BAND * target_rate.abs() {
        corrected = true;
    }
    Ok(ScenarioTrace {
        target_rate,
        shifted_rate,
        final_rate,
        corrected,
        pnl,
        steps,
    })
}
