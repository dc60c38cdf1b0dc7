//! Utility-based AMM construction for yield tokens: optimally efficient
//! bonding curves, per-payment curve menus, trader indifference menus, the
//! LP-trader equilibrium, and conversion of token menus to yield-future menus.

use crate::dist::{bracketed_root, DistError, YieldDistribution};
use crate::utility::UtilitySpec;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum AmmError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("delta grid must be positive ascending")]
    BadDeltaGrid,
    #[error("empty payment list")]
    EmptyPayments,
    #[error("menu has {menu} prices but distribution has {payments} payments")]
    MenuMismatch { menu: usize, payments: usize },
}

pub const ROOT_TOL: f64 = 1e-10;

fn sum_stats(payments: &YieldDistribution) -> (f64, f64) {
    let mean = payments.total_mean();
    let var: f64 = payments.payments.iter().map(|p| p.variance()).sum();
    (mean, var.sqrt())
}

/// One branch of a bonding curve: total prices tabulated over trade sizes,
/// with monotone cubic interpolation between nodes.
#[derive(Debug, Clone)]
pub struct CurveBranch {
    pub deltas: Vec<f64>,
    pub prices: Vec<f64>,
    /// First trade size at which the root bracket failed, if any; the branch
    /// is tabulated only below it.
    pub halted_at: Option<f64>,
}

impl CurveBranch {
    pub fn price_at(&self, delta: f64) -> f64 {
        pchip_eval(&self.deltas, &self.prices, delta)
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Optimally efficient bonding curve for an LP with reserves (x0, y0):
/// trading along either branch leaves the LP's expected utility unchanged.
#[derive(Debug, Clone)]
pub struct BondingCurve {
    pub x0: f64,
    pub y0: f64,
    pub sell: CurveBranch,
    pub buy: CurveBranch,
}

impl BondingCurve {
    /// Price quoted to a trader selling `delta` to the LP.
    pub fn sell_price(&self, delta: f64) -> f64 {
        self.sell.price_at(delta)
    }

    /// Price quoted to a trader buying `delta` from the LP.
    pub fn buy_price(&self, delta: f64) -> f64 {
        self.buy.price_at(delta)
    }

    /// Post-trade reserves on the sell branch: (x0 - delta p, y0 + delta).
    pub fn sell_reserves(&self, delta: f64) -> (f64, f64) {
        (self.x0 - delta * self.sell_price(delta), self.y0 + delta)
    }

    pub fn buy_reserves(&self, delta: f64) -> (f64, f64) {
        (self.x0 + delta * self.buy_price(delta), self.y0 - delta)
    }
}

/// Builds the efficient bonding curve of Thm-10 form: for each trade size the
/// price makes the LP indifferent between trading and not trading, where the
/// yield token pays the sum of `payments` at maturity.
pub fn efficient_curve(
    u_p: &UtilitySpec,
    x0: f64,
    y0: f64,
    payments: &YieldDistribution,
    delta_grid: &[f64],
) -> Result<BondingCurve, AmmError> {
    if payments.is_empty() {
        return Err(AmmError::EmptyPayments);
    }
    if delta_grid.is_empty()
        || delta_grid[0] <= 0.0
        || delta_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(AmmError::BadDeltaGrid);
    }
    let (mean, sd) = sum_stats(payments);
    let base = payments.expect_joint(|ys| u_p.eval(x0 + y0 * ys.iter().sum::<f64>()));

    let mut sell = CurveBranch { deltas: vec![], prices: vec![], halted_at: None };
    for &delta in delta_grid {
        if u_p.is_risk_neutral() {
            sell.deltas.push(delta);
            sell.prices.push(mean);
            continue;
        }
        // LP buys delta at price p; utility decreasing in p.
        let f = |p: f64| {
            payments.expect_joint(|ys| {
                let s = ys.iter().sum::<f64>();
                u_p.eval(x0 + y0 * s + delta * (s - p))
            }) - base
        };
        match bracketed_root(f, 0.0, mean + 10.0 * sd + 1.0, ROOT_TOL) {
            Ok(p) => {
                sell.deltas.push(delta);
                sell.prices.push(p);
            }
            Err(_) => {
                sell.halted_at = Some(delta);
                break;
            }
        }
    }

    let mut buy = CurveBranch { deltas: vec![], prices: vec![], halted_at: None };
    for &delta in delta_grid.iter().filter(|&&d| d <= y0 + 1e-15) {
        if u_p.is_risk_neutral() {
            buy.deltas.push(delta);
            buy.prices.push(mean);
            continue;
        }
        // LP sells delta at price p; utility increasing in p.
        let f = |p: f64| {
            payments.expect_joint(|ys| {
                let s = ys.iter().sum::<f64>();
                u_p.eval(x0 + y0 * s + delta * (p - s))
            }) - base
        };
        match bracketed_root(|p| -f(p), 0.0, mean + 10.0 * sd + 1.0, ROOT_TOL) {
            Ok(p) => {
                buy.deltas.push(delta);
                buy.prices.push(p);
            }
            Err(_) => {
                buy.halted_at = Some(delta);
                break;
            }
        }
    }

    Ok(BondingCurve { x0, y0, sell, buy })
}

/// Menu of bonding curves: curve j is efficient against the tail sum of
/// payments j..n, quoting trades scheduled just before payment j.
pub fn efficient_menu(
    u_p: &UtilitySpec,
    x0: f64,
    y0: f64,
    payments: &YieldDistribution,
    delta_grid: &[f64],
) -> Result<Vec<BondingCurve>, AmmError> {
    (0..payments.len())
        .map(|j| efficient_curve(u_p, x0, y0, &payments.tail(j), delta_grid))
        .collect()
}

/// Per-action price schedule for one trade size: selling after payments
/// 1..t-1 is quoted prices[t-1].
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMenu {
    pub delta: f64,
    pub prices: Vec<f64>,
}

impl PriceMenu {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("action,delta,price\n");
        for (i, p) in self.prices.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                i + 1,
                crate::pricing::fmt12(self.delta),
                crate::pricing::fmt12(*p)
            ));
        }
        out
    }
}

/// Expected trader utility of action t (1-based; t = n+1 never sells).
pub fn trader_action_utility(
    u_s: &UtilitySpec,
    delta: f64,
    menu: &PriceMenu,
    payments: &YieldDistribution,
    action: usize,
) -> f64 {
    let n = payments.len();
    if action == n + 1 {
        payments.expect_joint(|ys| u_s.eval(ys.iter().sum::<f64>() * delta))
    } else {
        let prefix = YieldDistribution { payments: payments.payments[..action - 1].to_vec() };
        let p = menu.prices[action - 1];
        prefix.expect_joint(|ys| u_s.eval((ys.iter().sum::<f64>() + p) * delta))
    }
}

/// The unique indifference menu: backward recursion, each step a bisection on
/// the trader's monotone certainty-equivalent equation.
pub fn indifference_menu(
    u_s: &UtilitySpec,
    delta: f64,
    payments: &YieldDistribution,
) -> Result<PriceMenu, AmmError> {
    indifference_menu_with_bracket(u_s, delta, payments, 10.0)
}

/// Same construction with a configurable initial bracket width (in standard
/// deviations); used to confirm the menu is independent of bracket choice.
pub fn indifference_menu_with_bracket(
    u_s: &UtilitySpec,
    delta: f64,
    payments: &YieldDistribution,
    bracket_sds: f64,
) -> Result<PriceMenu, AmmError> {
    let n = payments.len();
    if n == 0 {
        return Err(AmmError::EmptyPayments);
    }
    let (mean, sd) = sum_stats(payments);
    let hi0 = mean + bracket_sds * sd + 1.0;
    let mut prices = vec![0.0; n];
    let mut next_price = 0.0; // p_{n+1} = 0
    for t in (1..=n).rev() {
        let prefix = YieldDistribution { payments: payments.payments[..t - 1].to_vec() };
        let with_t = YieldDistribution { payments: payments.payments[..t].to_vec() };
        let rhs = with_t.expect_joint(|ys| u_s.eval((ys.iter().sum::<f64>() + next_price) * delta));
        if u_s.is_risk_neutral() {
            prices[t - 1] = next_price + payments.payments[t - 1].mean();
            next_price = prices[t - 1];
            continue;
        }
        // LHS increasing in p; root makes the trader indifferent between
        // selling just before payment t and just after it.
        let f = |p: f64| {
            prefix.expect_joint(|ys| {
                u_s.eval((ys.iter().sum::<f64>() + p + next_price) * delta)
            }) - rhs
        };
        let inc = bracketed_root(|p| -f(p), -hi0, hi0, ROOT_TOL)?;
        prices[t - 1] = next_price + inc;
        next_price = prices[t - 1];
    }
    Ok(PriceMenu { delta, prices })
}

/// Mirrored construction for a buyer hedging a short yield exposure: the
/// trader's wealth is the negative of the outstanding payments, and buying at
/// action t locks the tail at price p_t. Derived by symmetry, not in the
/// seller-side analysis.
pub fn indifference_menu_buy(
    u_s: &UtilitySpec,
    delta: f64,
    payments: &YieldDistribution,
) -> Result<PriceMenu, AmmError> {
    let negated = YieldDistribution {
        payments: payments
            .payments
            .iter()
            .map(|p| negate_payment(p))
            .collect(),
    };
    let menu = indifference_menu(u_s, delta, &negated)?;
    Ok(PriceMenu { delta, prices: menu.prices.iter().map(|p| -p).collect() })
}

fn negate_payment(p: &crate::dist::PaymentDist) -> crate::dist::PaymentDist {
    use crate::dist::PaymentDist::*;
    match p {
        Degenerate { value } => Degenerate { value: -value },
        Gaussian { mean, sd } => Gaussian { mean: -mean, sd: *sd },
        TruncatedGaussian { .. } => {
            // Fold through atoms of the quadrature; keep it simple with a
            // discrete approximation.
            let atoms = p.nodes(crate::dist::GH_NODES).iter().map(|&(v, w)| (-v, w)).collect();
            Discrete { atoms }
        }
        Discrete { atoms } => Discrete { atoms: atoms.iter().map(|&(v, w)| (-v, w)).collect() },
    }
}

/// argmax over the n+1 trader actions, ties broken toward the smallest index.
pub fn trader_best_action(
    u_s: &UtilitySpec,
    delta: f64,
    menu: &PriceMenu,
    payments: &YieldDistribution,
) -> Result<usize, AmmError> {
    let n = payments.len();
    if menu.len() != n {
        return Err(AmmError::MenuMismatch { menu: menu.len(), payments: n });
    }
    let utils: Vec<f64> = (1..=n + 1)
        .map(|t| trader_action_utility(u_s, delta, menu, payments, t))
        .collect();
    let best = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    const TIE_TOL: f64 = 1e-9;
    Ok(utils.iter().position(|&u| u >= best - TIE_TOL).unwrap() + 1)
}

/// LP expected utility when the trader takes `action` against `menu`.
pub fn lp_action_utility(
    u_p: &UtilitySpec,
    x0: f64,
    y0: f64,
    delta: f64,
    menu: &PriceMenu,
    payments: &YieldDistribution,
    action: usize,
) -> f64 {
    let n = payments.len();
    payments.expect_joint(|ys| {
        let total: f64 = ys.iter().sum();
        if action == n + 1 {
            u_p.eval(x0 + y0 * total)
        } else {
            let tail: f64 = ys[action - 1..].iter().sum();
            u_p.eval(x0 - menu.prices[action - 1] * delta + y0 * total + delta * tail)
        }
    })
}

/// LP utility of presenting `menu`: the trader best-responds, then the LP is
/// evaluated at that action.
pub fn lp_utility_for_menu(
    u_p: &UtilitySpec,
    u_s: &UtilitySpec,
    x0: f64,
    y0: f64,
    delta: f64,
    menu: &PriceMenu,
    payments: &YieldDistribution,
) -> Result<(usize, f64), AmmError> {
    let t = trader_best_action(u_s, delta, menu, payments)?;
    Ok((t, lp_action_utility(u_p, x0, y0, delta, menu, payments, t)))
}

/// The LP-optimal menu is the trader indifference menu; returns it with the
/// tie-broken trader action and the LP's expected utility there.
pub fn lp_optimal_menu(
    u_p: &UtilitySpec,
    u_s: &UtilitySpec,
    x0: f64,
    y0: f64,
    delta: f64,
    payments: &YieldDistribution,
) -> Result<(PriceMenu, usize, f64), AmmError> {
    let menu = indifference_menu(u_s, delta, payments)?;
    let (t, util) = lp_utility_for_menu(u_p, u_s, x0, y0, delta, &menu, payments)?;
    Ok((menu, t, util))
}

/// Per-future prices from a token menu: P_i = p_i - p_{i+1}, with p_{n+1} = 0.
/// The tail sums reconstruct the token menu exactly.
pub fn futures_menu_from_token_menu(menu: &PriceMenu) -> Vec<f64> {
    let n = menu.len();
    (0..n)
        .map(|i| {
            let next = if i + 1 < n { menu.prices[i + 1] } else { 0.0 };
            menu.prices[i] - next
        })
        .collect()
}

/// Monotone cubic (Fritsch-Carlson) interpolation; clamps outside the grid.
fn pchip_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    // Interval index.
    let i = xs.partition_point(|&v| v <= x) - 1;
    let h = xs[i + 1] - xs[i];
    let d_i = pchip_slope(xs, ys, i);
    let d_ip1 = pchip_slope(xs, ys, i + 1);
    let t = (x - xs[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    ys[i] * (2.0 * t3 - 3.0 * t2 + 1.0)
        + d_i * h * (t3 - 2.0 * t2 + t)
        + ys[i + 1] * (-2.0 * t3 + 3.0 * t2)
        + d_ip1 * h * (t3 - t2)
}

fn pchip_slope(xs: &[f64], ys: &[f64], i: usize) -> f64 {
    let n = xs.len();
    let sec = |k: usize| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
    if i == 0 {
        return sec(0);
    }
    if i == n - 1 {
        return sec(n - 2);
    }
    let s0 = sec(i - 1);
    let s1 = sec(i);
    if s0 * s1 <= 0.0 {
        0.0
    } else {
        // Harmonic mean keeps the interpolant monotone.
        let w1 = 2.0 * (xs[i + 1] - xs[i]) + (xs[i] - xs[i - 1]);
        let w2 = (xs[i + 1] - xs[i]) + 2.0 * (xs[i] - xs[i - 1]);
        (w1 + w2) / (w1 / s0 + w2 / s1)
    }
}
