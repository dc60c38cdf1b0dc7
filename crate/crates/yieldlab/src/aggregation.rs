//! Liquidity aggregation: conversions among bonding, demand, and liquidity
//! curves, concentrated-liquidity approximation, the aggregated order-book
//! view, and pro-rata fee allocation.

use crate::amm::CurveBranch;
use std::collections::BTreeMap;
use thiserror::Error;

/// Supports are restricted to prices at or above this floor; the basis
/// position 1/(2 p^{3/2}) is singular at zero.
pub const P_MIN: f64 = 1e-6;

#[derive(Error, Debug)]
pub enum AggError {
    #[error("demand curve is not nonincreasing (quasiconcavity violated)")]
    IncentiveCompatibility,
    #[error("curve support touches zero or lies below the price floor {P_MIN}")]
    Domain,
    #[error("segments must be positive, ordered, and non-overlapping")]
    BadSegments,
    #[error("anchor price {anchor} lies outside the book support [{lo}, {hi}]")]
    Alignment { anchor: f64, lo: f64, hi: f64 },
    #[error("requested {requested} exceeds available depth {available}")]
    Depth { requested: f64, available: f64 },
    #[error("book has no liquidity")]
    EmptyBook,
    #[error("branch too short to differentiate")]
    TooFewNodes,
}

/// One piece of a liquidity curve over [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    /// L(p) = level.
    Const { level: f64 },
    /// L(p) = coef / (2 p^{3/2}) — the concentrated-liquidity basis shape.
    InvP32 { coef: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub kind: SegmentKind,
}

impl Segment {
    // Half-open [lo, hi) so adjacent segments never double-count at a
    // shared breakpoint.
    fn value(&self, p: f64) -> f64 {
        if p < self.lo || p >= self.hi {
            return 0.0;
        }
        match self.kind {
            SegmentKind::Const { level } => level,
            SegmentKind::InvP32 { coef } => coef / (2.0 * p.powf(1.5)),
        }
    }

    /// ∫ L dp over [a, b] ∩ [lo, hi], in closed form.
    fn depth(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if b <= a {
            return 0.0;
        }
        match self.kind {
            SegmentKind::Const { level } => level * (b - a),
            SegmentKind::InvP32 { coef } => coef * (a.powf(-0.5) - b.powf(-0.5)),
        }
    }

    /// ∫ p L dp over [a, b] ∩ [lo, hi], in closed form.
    fn notional(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if b <= a {
            return 0.0;
        }
        match self.kind {
            SegmentKind::Const { level } => level * (b * b - a * a) / 2.0,
            SegmentKind::InvP32 { coef } => coef * (b.sqrt() - a.sqrt()),
        }
    }
}

/// Nonnegative liquidity density L(p) as ordered, non-overlapping segments.
#[derive(Debug, Clone, Default)]
pub struct LiquidityCurve {
    pub segments: Vec<Segment>,
}

impl LiquidityCurve {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self, AggError> {
        segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for s in &segments {
            if !(s.lo < s.hi) {
                return Err(AggError::BadSegments);
            }
            if s.lo < P_MIN {
                return Err(AggError::Domain);
            }
            let neg = match s.kind {
                SegmentKind::Const { level } => level < 0.0,
                SegmentKind::InvP32 { coef } => coef < 0.0,
            };
            if neg {
                return Err(AggError::BadSegments);
            }
        }
        if segments.windows(2).any(|w| w[1].lo < w[0].hi - 1e-15) {
            return Err(AggError::BadSegments);
        }
        Ok(LiquidityCurve { segments })
    }

    pub fn empty() -> Self {
        LiquidityCurve { segments: vec![] }
    }

    pub fn value(&self, p: f64) -> f64 {
        self.segments.iter().map(|s| s.value(p)).sum()
    }

    pub fn depth_between(&self, a: f64, b: f64) -> f64 {
        self.segments.iter().map(|s| s.depth(a, b)).sum()
    }

    pub fn notional_between(&self, a: f64, b: f64) -> f64 {
        self.segments.iter().map(|s| s.notional(a, b)).sum()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        let lo = self.segments.first()?.lo;
        let hi = self.segments.iter().map(|s| s.hi).fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    pub fn total_depth(&self) -> f64 {
        self.segments.iter().map(|s| s.depth(s.lo, s.hi)).sum()
    }

    /// The curve with all liquidity in [a, b] removed; segments straddling
    /// the range are split. Used to consume filled depth from a book.
    pub fn without_range(&self, a: f64, b: f64) -> LiquidityCurve {
        let mut segments = Vec::new();
        for s in &self.segments {
            if s.hi <= a || s.lo >= b {
                segments.push(*s);
                continue;
            }
            if s.lo < a {
                segments.push(Segment { lo: s.lo, hi: a, kind: s.kind });
            }
            if s.hi > b {
                segments.push(Segment { lo: b, hi: s.hi, kind: s.kind });
            }
        }
        LiquidityCurve { segments }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.segments.iter().flat_map(|s| [s.lo, s.hi]).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        pts
    }
}

/// Tabulated demand curve: minimum asset holdings x at each price, with x
/// nonincreasing in price.
#[derive(Debug, Clone)]
pub struct DemandCurve {
    pub prices: Vec<f64>,
    pub x: Vec<f64>,
    /// Set when the source had a flat price segment (a step in demand).
    pub degenerate: bool,
}

impl DemandCurve {
    pub fn new(prices: Vec<f64>, x: Vec<f64>) -> Result<Self, AggError> {
        if prices.len() != x.len() || prices.len() < 2 {
            return Err(AggError::TooFewNodes);
        }
        if prices[0] < P_MIN || prices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AggError::Domain);
        }
        if x.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            return Err(AggError::IncentiveCompatibility);
        }
        Ok(DemandCurve { prices, x, degenerate: false })
    }

    pub fn x_at(&self, p: f64) -> f64 {
        let n = self.prices.len();
        if p <= self.prices[0] {
            return self.x[0];
        }
        if p >= self.prices[n - 1] {
            return self.x[n - 1];
        }
        let i = self.prices.partition_point(|&v| v <= p) - 1;
        let t = (p - self.prices[i]) / (self.prices[i + 1] - self.prices[i]);
        self.x[i] + t * (self.x[i + 1] - self.x[i])
    }

    /// Implied numeraire holdings y(p) = -∫ π x'(π) dπ, anchored at the
    /// lowest tabulated price.
    pub fn y_at(&self, p: f64) -> f64 {
        let mut y = 0.0;
        for w in self.prices.windows(2).zip(self.x.windows(2)) {
            let (ps, xs) = w;
            let hi = ps[1].min(p);
            if hi <= ps[0] {
                break;
            }
            let slope = (xs[1] - xs[0]) / (ps[1] - ps[0]);
            // -∫ π slope dπ over [ps[0], hi]
            y -= slope * (hi * hi - ps[0] * ps[0]) / 2.0;
        }
        y
    }
}

/// Converts a tabulated bonding-curve branch into a demand curve for the
/// traded asset: marginal price from the derivative of trade cost Δ·p(Δ),
/// asset holdings y0 + Δ along the branch.
pub fn bonding_to_demand(branch: &CurveBranch, y0: f64) -> Result<DemandCurve, AggError> {
    let n = branch.deltas.len();
    if n < 3 {
        return Err(AggError::TooFewNodes);
    }
    let cost: Vec<f64> = branch
        .deltas
        .iter()
        .zip(&branch.prices)
        .map(|(&d, &p)| d * p)
        .collect();
    // Central differences inside, one-sided at the ends.
    let mut marginal = vec![0.0; n];
    for i in 0..n {
        let (j, k) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        marginal[i] = (cost[k] - cost[j]) / (branch.deltas[k] - branch.deltas[j]);
    }
    let mut degenerate = false;
    for w in marginal.windows(2) {
        if w[1] > w[0] + 1e-10 {
            return Err(AggError::IncentiveCompatibility);
        }
        if (w[1] - w[0]).abs() <= 1e-10 {
            degenerate = true;
        }
    }
    // Selling into the book walks the price down: ascending price order is
    // the reverse of the delta grid.
    let mut prices = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in (0..n).rev() {
        if let Some(&last) = prices.last() {
            if marginal[i] <= last + 1e-12 {
                continue; // collapse a flat step
            }
        }
        prices.push(marginal[i]);
        x.push(y0 + branch.deltas[i]);
    }
    if prices.len() < 2 {
        return Err(AggError::TooFewNodes);
    }
    let mut d = DemandCurve::new(prices, x)?;
    d.degenerate = degenerate;
    Ok(d)
}

/// L(p) = -x'(p): piecewise-constant derivative with the table's
/// breakpoints preserved.
pub fn demand_to_liquidity(d: &DemandCurve) -> Result<LiquidityCurve, AggError> {
    let mut segments = Vec::new();
    for (ps, xs) in d.prices.windows(2).zip(d.x.windows(2)) {
        let level = -(xs[1] - xs[0]) / (ps[1] - ps[0]);
        if level.abs() < 1e-15 {
            continue;
        }
        segments.push(Segment {
            lo: ps[0],
            hi: ps[1],
            kind: SegmentKind::Const { level },
        });
    }
    LiquidityCurve::new(segments)
}

/// Integrates a liquidity curve back into a demand curve on its breakpoints,
/// normalized so that x at the top of the support is `x_top`.
pub fn liquidity_to_demand(lc: &LiquidityCurve, x_top: f64) -> Result<DemandCurve, AggError> {
    let pts = lc.breakpoints();
    if pts.len() < 2 {
        return Err(AggError::TooFewNodes);
    }
    let top = *pts.last().unwrap();
    let x: Vec<f64> = pts.iter().map(|&p| x_top + lc.depth_between(p, top)).collect();
    DemandCurve::new(pts, x)
}

/// One Uniswap-v3 style basis position: level × 1/(2 p^{3/2}) on [lo, hi].
#[derive(Debug, Clone)]
pub struct ConcLiqPosition {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub owner: String,
}

impl ConcLiqPosition {
    pub fn as_curve(&self) -> LiquidityCurve {
        LiquidityCurve {
            segments: vec![Segment {
                lo: self.lo,
                hi: self.hi,
                kind: SegmentKind::InvP32 { coef: self.level },
            }],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConcLiqApprox {
    pub positions: Vec<ConcLiqPosition>,
    pub sup_error: f64,
}

/// Approximates any liquidity curve by basis positions on bins p_i = iδ,
/// with per-bin coefficient 2·L(p_i)·p_i^{3/2}; adjacent bins with equal
/// coefficients are merged. Returns the positions and a sampled sup-norm
/// error estimate.
pub fn approximate_concentrated(
    lc: &LiquidityCurve,
    delta: f64,
    owner: &str,
) -> Result<ConcLiqApprox, AggError> {
    if delta <= 0.0 {
        return Err(AggError::BadSegments);
    }
    let Some((lo, hi)) = lc.support() else {
        return Ok(ConcLiqApprox { positions: vec![], sup_error: 0.0 });
    };
    if lo < P_MIN {
        return Err(AggError::Domain);
    }
    let i0 = (lo / delta).floor().max(1.0) as u64;
    let mut positions: Vec<ConcLiqPosition> = Vec::new();
    let mut i = i0;
    while (i as f64) * delta < hi {
        let p_i = i as f64 * delta;
        let p_next = (i + 1) as f64 * delta;
        let level = 2.0 * lc.value(p_i.max(lo)) * p_i.powf(1.5);
        i += 1;
        if level <= 0.0 {
            continue;
        }
        if let Some(last) = positions.last_mut() {
            if (last.hi - p_i).abs() < 1e-12 && (last.level - level).abs() <= 1e-12 * level.abs() {
                last.hi = p_next.min(hi);
                continue;
            }
        }
        positions.push(ConcLiqPosition {
            level,
            lo: p_i.max(lo),
            hi: p_next.min(hi),
            owner: owner.to_string(),
        });
    }
    // Sampled sup-norm error over the support; the per-bin error peaks just
    // left of each bin's right edge, so probe there explicitly.
    let approx_at = |p: f64| -> f64 { positions.iter().map(|pos| pos.as_curve().value(p)).sum() };
    let mut sup = 0.0f64;
    let samples = 64.max(positions.len() * 16);
    let mut probes: Vec<f64> = (0..=samples)
        .map(|k| lo + (hi - lo) * k as f64 / samples as f64)
        .collect();
    probes.extend(positions.iter().map(|pos| pos.hi * (1.0 - 1e-12)));
    for p in probes {
        sup = sup.max((approx_at(p) - lc.value(p)).abs());
    }
    Ok(ConcLiqApprox { positions, sup_error: sup })
}

/// Aggregated one-sided book: per-owner liquidity curves summed pointwise,
/// with depth and trade-cost queries answered from the closed-form segment
/// integrals.
#[derive(Debug, Clone)]
pub struct OrderBookView {
    pub contributions: Vec<(String, LiquidityCurve)>,
    pub anchor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Fill upward from the anchor (taker buys, price rises).
    Buy,
    /// Fill downward from the anchor (taker sells, price falls).
    Sell,
}

/// Result of walking the book: amount filled, notional paid or received, and
/// the price interval consumed.
#[derive(Debug, Clone, Copy)]
pub struct TradeFill {
    pub amount: f64,
    pub notional: f64,
    pub p_start: f64,
    pub p_end: f64,
}

impl TradeFill {
    pub fn average_price(&self) -> f64 {
        self.notional / self.amount
    }
}

pub fn aggregate(
    contributions: Vec<(String, LiquidityCurve)>,
    anchor: Option<f64>,
) -> Result<OrderBookView, AggError> {
    let hull = contributions
        .iter()
        .filter_map(|(_, c)| c.support())
        .fold(None::<(f64, f64)>, |acc, (lo, hi)| match acc {
            None => Some((lo, hi)),
            Some((a, b)) => Some((a.min(lo), b.max(hi))),
        });
    let Some((lo, hi)) = hull else {
        return Err(AggError::EmptyBook);
    };
    let anchor = anchor.unwrap_or(0.5 * (lo + hi));
    if anchor < lo - 1e-12 || anchor > hi + 1e-12 {
        return Err(AggError::Alignment { anchor, lo, hi });
    }
    Ok(OrderBookView { contributions, anchor })
}

impl OrderBookView {
    pub fn depth_at(&self, p: f64) -> f64 {
        self.contributions.iter().map(|(_, c)| c.value(p)).sum()
    }

    pub fn depth_between(&self, a: f64, b: f64) -> f64 {
        self.contributions.iter().map(|(_, c)| c.depth_between(a, b)).sum()
    }

    pub fn notional_between(&self, a: f64, b: f64) -> f64 {
        self.contributions.iter().map(|(_, c)| c.notional_between(a, b)).sum()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.contributions
            .iter()
            .filter_map(|(_, c)| c.support())
            .fold(None, |acc, (lo, hi)| match acc {
                None => Some((lo, hi)),
                Some((a, b)) => Some((a.min(lo), b.max(hi))),
            })
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .contributions
            .iter()
            .flat_map(|(_, c)| c.breakpoints())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        pts
    }

    /// Walks depth from `from` in the given direction until `amount` is
    /// filled; the boundary price within the final slice is found by
    /// bisection on the monotone cumulative depth.
    pub fn cost_to_trade(&self, side: Side, amount: f64, from: Option<f64>) -> Result<TradeFill, AggError> {
        let start = from.unwrap_or(self.anchor);
        let (lo, hi) = self.support().ok_or(AggError::EmptyBook)?;
        let available = match side {
            Side::Buy => self.depth_between(start, hi),
            Side::Sell => self.depth_between(lo, start),
        };
        if amount > available + 1e-12 {
            return Err(AggError::Depth { requested: amount, available });
        }
        let mut pts = self.breakpoints();
        pts.push(start);
        pts.sort_by(f64::total_cmp);
        let mut filled = 0.0;
        let mut notional = 0.0;
        let mut cursor = start;
        let slices: Vec<(f64, f64)> = match side {
            Side::Buy => pts
                .windows(2)
                .filter(|w| w[0] >= start - 1e-15)
                .map(|w| (w[0], w[1]))
                .collect(),
            Side::Sell => pts
                .windows(2)
                .filter(|w| w[1] <= start + 1e-15)
                .map(|w| (w[0], w[1]))
                .rev()
                .collect(),
        };
        for (a, b) in slices {
            let d = self.depth_between(a, b);
            if filled + d < amount - 1e-15 {
                filled += d;
                notional += self.notional_between(a, b);
                cursor = if side == Side::Buy { b } else { a };
                continue;
            }
            // Final partial slice: bisection for the boundary price.
            let need = amount - filled;
            let (mut x0, mut x1) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (x0 + x1);
                let got = match side {
                    Side::Buy => self.depth_between(a, mid),
                    Side::Sell => self.depth_between(mid, b),
                };
                if got < need {
                    match side {
                        Side::Buy => x0 = mid,
                        Side::Sell => x1 = mid,
                    }
                } else {
                    match side {
                        Side::Buy => x1 = mid,
                        Side::Sell => x0 = mid,
                    }
                }
                if (x1 - x0) < 1e-15 * (1.0 + b.abs()) {
                    break;
                }
            }
            let boundary = 0.5 * (x0 + x1);
            match side {
                Side::Buy => notional += self.notional_between(a, boundary),
                Side::Sell => notional += self.notional_between(boundary, b),
            }
            cursor = boundary;
            filled = amount;
            break;
        }
        Ok(TradeFill {
            amount: filled,
            notional,
            p_start: start,
            p_end: cursor,
        })
    }

    /// Fee allocation for a fill: within each price slice the filled notional
    /// splits by each owner's share of L(p), which makes the owner fee
    /// fee_rate × the owner's own notional integral over the filled range.
    pub fn pro_rata_fees(&self, fill: &TradeFill, fee_rate: f64) -> Result<BTreeMap<String, f64>, AggError> {
        let (a, b) = if fill.p_start <= fill.p_end {
            (fill.p_start, fill.p_end)
        } else {
            (fill.p_end, fill.p_start)
        };
        let available = self.depth_between(a, b);
        if fill.amount > available + 1e-9 {
            return Err(AggError::Depth { requested: fill.amount, available });
        }
        let mut fees = BTreeMap::new();
        for (owner, curve) in &self.contributions {
            let share = fee_rate * curve.notional_between(a, b);
            *fees.entry(owner.clone()).or_insert(0.0) += share;
        }
        Ok(fees)
    }

    /// The book after a fill: liquidity in the filled price interval is
    /// removed from every contribution and the anchor moves to the fill's
    /// terminal price.
    pub fn consume(&self, fill: &TradeFill) -> OrderBookView {
        let (a, b) = if fill.p_start <= fill.p_end {
            (fill.p_start, fill.p_end)
        } else {
            (fill.p_end, fill.p_start)
        };
        OrderBookView {
            contributions: self
                .contributions
                .iter()
                .map(|(o, c)| (o.clone(), c.without_range(a, b)))
                .collect(),
            anchor: fill.p_end,
        }
    }

    /// Tabular export: rows of (price, depth, cumulative depth from the low
    /// end), sampled at breakpoints and interior points.
    pub fn to_csv(&self, samples_per_slice: usize) -> String {
        let mut out = String::from("price,depth,cumulative_depth\n");
        let Some((lo, _)) = self.support() else {
            return out;
        };
        let pts = self.breakpoints();
        for w in pts.windows(2) {
            let m = samples_per_slice.max(1);
            for k in 0..m {
                let p = w[0] + (w[1] - w[0]) * k as f64 / m as f64;
                out.push_str(&format!(
                    "{},{},{}\n",
                    crate::pricing::fmt12(p),
                    crate::pricing::fmt12(self.depth_at(p)),
                    crate::pricing::fmt12(self.depth_between(lo, p))
                ));
            }
        }
        if let Some(&last) = pts.last() {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::pricing::fmt12(last),
                crate::pricing::fmt12(self.depth_at(last)),
                crate::pricing::fmt12(self.depth_between(lo, last))
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amm::{efficient_curve, CurveBranch};
    use crate::dist::{PaymentDist, YieldDistribution};
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;

    fn const_curve(lo: f64, hi: f64, level: f64) -> LiquidityCurve {
        LiquidityCurve::new(vec![Segment { lo, hi, kind: SegmentKind::Const { level } }]).unwrap()
    }

    /// Constant-product branch: LP with asset reserve `xa` and numeraire
    /// reserve `xn`; trader sells delta of the asset, total price from the
    /// invariant.
    fn constant_product_branch(xa: f64, xn: f64, deltas: Vec<f64>) -> CurveBranch {
        let k = xa * xn;
        let prices = deltas
            .iter()
            .map(|&d| (xn - k / (xa + d)) / d)
            .collect();
        CurveBranch { deltas, prices, halted_at: None }
    }

    #[test]
    fn constant_product_demand_closed_form() {
        // x(p) = sqrt(k/p) with k = 100; marginal price 4 at asset reserve 5.
        let deltas: Vec<f64> = (1..=4000).map(|i| i as f64 * 1e-3).collect();
        let branch = constant_product_branch(5.0, 20.0, deltas);
        let d = bonding_to_demand(&branch, 5.0).unwrap();
        assert!(!d.degenerate);
        // Marginal prices along the branch span [k/(xa+max delta)^2, 4].
        for &p in &[1.3, 2.0, 3.0, 3.9] {
            assert_relative_eq!(d.x_at(p), (100.0 / p).sqrt(), epsilon = 1e-3);
        }
        assert_relative_eq!(d.x_at(3.999), 5.0, epsilon = 1e-2);
    }

    #[test]
    fn linear_demand_round_trips() {
        let prices: Vec<f64> = (1..=99).map(|i| i as f64 * 0.01).collect();
        let x: Vec<f64> = prices.iter().map(|p| 1.0 - p).collect();
        let d = DemandCurve::new(prices, x).unwrap();
        let lc = demand_to_liquidity(&d).unwrap();
        for &p in &[0.02, 0.5, 0.98] {
            assert_relative_eq!(lc.value(p), 1.0, epsilon = 1e-12);
        }
        let back = liquidity_to_demand(&lc, d.x[d.x.len() - 1]).unwrap();
        for (p, x) in d.prices.iter().zip(&d.x) {
            assert_relative_eq!(back.x_at(*p), *x, epsilon = 1e-6);
        }
    }

    #[test]
    fn flat_price_segment_flags_degenerate() {
        let deltas: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let branch = CurveBranch {
            deltas,
            prices: vec![2.0; 10],
            halted_at: None,
        };
        assert!(matches!(
            bonding_to_demand(&branch, 1.0),
            Err(AggError::TooFewNodes)
        ));
        // Partially flat: decreasing then flat.
        let deltas: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let mut prices: Vec<f64> = deltas.iter().map(|d| 3.0 - d).collect();
        prices[8] = prices[7];
        prices[9] = prices[7];
        // keep cost increasing but with a flat marginal stretch at the end
        let branch = CurveBranch { deltas, prices, halted_at: None };
        let d = bonding_to_demand(&branch, 1.0);
        if let Ok(d) = d {
            assert!(d.degenerate || !d.prices.is_empty());
        }
    }

    #[test]
    fn increasing_marginal_price_rejected() {
        let deltas: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let prices: Vec<f64> = deltas.iter().map(|d| 1.0 + d * d).collect();
        assert!(matches!(
            bonding_to_demand(&CurveBranch { deltas, prices, halted_at: None }, 1.0),
            Err(AggError::IncentiveCompatibility)
        ));
    }

    #[test]
    fn utility_curve_feeds_the_pipeline() {
        let u = UtilitySpec::Cara { a: 2.0 };
        let y = YieldDistribution::single(PaymentDist::Gaussian { mean: 0.05, sd: 0.1 }).unwrap();
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
        let curve = efficient_curve(&u, 1.0, 1.0, &y, &grid).unwrap();
        let d = bonding_to_demand(&curve.sell, 1.0).unwrap();
        let lc = demand_to_liquidity(&d).unwrap();
        assert!(lc.total_depth() > 0.0);
        let (lo, hi) = lc.support().unwrap();
        assert!(lo > 0.0 && hi > lo);
    }

    #[test]
    fn derivative_of_sqrt_demand() {
        // x(p) = sqrt(100/p) tabulated finely: L(1) = 5.
        let prices: Vec<f64> = (0..=4000).map(|i| 0.5 + i as f64 * 1e-3).collect();
        let x: Vec<f64> = prices.iter().map(|p| (100.0 / p).sqrt()).collect();
        let d = DemandCurve::new(prices, x).unwrap();
        let lc = demand_to_liquidity(&d).unwrap();
        assert_relative_eq!(lc.value(1.0), 5.0, epsilon = 5e-3);
        assert_relative_eq!(lc.value(4.0), 5.0 / 8.0, epsilon = 5e-3);
    }

    #[test]
    fn constant_demand_has_no_liquidity() {
        let d = DemandCurve::new(vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]).unwrap();
        let lc = demand_to_liquidity(&d).unwrap();
        assert!(lc.segments.is_empty());
        assert_eq!(lc.total_depth(), 0.0);
    }

    #[test]
    fn basis_element_is_reproduced_exactly() {
        let lc = LiquidityCurve::new(vec![Segment {
            lo: 1.0,
            hi: 4.0,
            kind: SegmentKind::InvP32 { coef: 1.0 },
        }])
        .unwrap();
        let approx = approximate_concentrated(&lc, 0.5, "lp").unwrap();
        assert_eq!(approx.positions.len(), 1);
        assert_relative_eq!(approx.positions[0].level, 1.0, epsilon = 1e-12);
        assert_relative_eq!(approx.positions[0].lo, 1.0, epsilon = 1e-12);
        assert_relative_eq!(approx.positions[0].hi, 4.0, epsilon = 1e-12);
        assert!(approx.sup_error < 1e-12);
    }

    #[test]
    fn constant_curve_error_halves_with_delta() {
        let lc = const_curve(1.0, 2.0, 1.0);
        let coarse = approximate_concentrated(&lc, 0.125, "lp").unwrap();
        let fine = approximate_concentrated(&lc, 0.0625, "lp").unwrap();
        assert!(coarse.sup_error > 0.0);
        assert!(
            coarse.sup_error / fine.sup_error >= 1.8,
            "coarse {} fine {}",
            coarse.sup_error,
            fine.sup_error
        );
    }

    #[test]
    fn empty_curve_empty_approximation() {
        let approx = approximate_concentrated(&LiquidityCurve::empty(), 0.1, "lp").unwrap();
        assert!(approx.positions.is_empty());
        assert_eq!(approx.sup_error, 0.0);
    }

    #[test]
    fn approximation_error_nonincreasing_under_halving() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let lo = 0.5 + rng.gen::<f64>();
            let hi = lo + 0.5 + rng.gen::<f64>();
            let level = 0.1 + rng.gen::<f64>();
            let lc = const_curve(lo, hi, level);
            let mut prev = f64::INFINITY;
            let mut delta = 0.2;
            for _ in 0..4 {
                let err = approximate_concentrated(&lc, delta, "lp").unwrap().sup_error;
                assert!(err <= prev + 1e-12);
                prev = err;
                delta /= 2.0;
            }
        }
    }

    #[test]
    fn aggregation_is_additive() {
        let a = const_curve(1.0, 2.0, 1.0);
        let b = const_curve(1.0, 2.0, 1.0);
        let book = aggregate(vec![("a".into(), a), ("b".into(), b)], None).unwrap();
        assert_relative_eq!(book.depth_at(1.5), 2.0, epsilon = 1e-12);
        assert_relative_eq!(book.depth_between(1.0, 2.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregation_order_independent() {
        let curves = vec![
            ("a".to_string(), const_curve(1.0, 1.5, 1.0)),
            ("b".to_string(), const_curve(1.2, 2.0, 0.5)),
            ("c".to_string(), const_curve(0.8, 1.1, 2.0)),
        ];
        let mut permuted = curves.clone();
        permuted.rotate_left(1);
        let b1 = aggregate(curves, Some(1.3)).unwrap();
        let b2 = aggregate(permuted, Some(1.3)).unwrap();
        for k in 0..50 {
            let p = 0.8 + 1.2 * k as f64 / 49.0;
            assert_relative_eq!(b1.depth_at(p), b2.depth_at(p), epsilon = 1e-15);
        }
        let f1 = b1.cost_to_trade(Side::Buy, 0.3, None).unwrap();
        let f2 = b2.cost_to_trade(Side::Buy, 0.3, None).unwrap();
        assert_relative_eq!(f1.notional, f2.notional, epsilon = 1e-12);
    }

    #[test]
    fn empty_plus_curve_is_identity() {
        let c = const_curve(1.0, 2.0, 1.0);
        let book = aggregate(
            vec![("a".into(), c.clone()), ("b".into(), LiquidityCurve::empty())],
            Some(1.5),
        )
        .unwrap();
        assert_relative_eq!(book.depth_between(1.0, 2.0), c.total_depth(), epsilon = 1e-15);
    }

    #[test]
    fn trade_cost_matches_merged_fills() {
        // Buy 0.75 upward from p=1 on combined depth: identical whether the
        // liquidity sits on one curve or is split across owners.
        let one = aggregate(vec![("a".into(), const_curve(1.0, 2.0, 2.0))], Some(1.0)).unwrap();
        let split = aggregate(
            vec![
                ("a".into(), const_curve(1.0, 2.0, 1.0)),
                ("b".into(), const_curve(1.0, 2.0, 1.0)),
            ],
            Some(1.0),
        )
        .unwrap();
        let f1 = one.cost_to_trade(Side::Buy, 0.75, None).unwrap();
        let f2 = split.cost_to_trade(Side::Buy, 0.75, None).unwrap();
        assert_relative_eq!(f1.notional, f2.notional, epsilon = 1e-10);
        assert_relative_eq!(f1.p_end, f2.p_end, epsilon = 1e-10);
        // Closed-form check: level 2 from p=1, fill 0.75 -> p_end = 1.375,
        // notional = 2 * (1.375^2 - 1)/2.
        assert_relative_eq!(f1.p_end, 1.375, epsilon = 1e-9);
        assert_relative_eq!(f1.notional, 1.375f64.powi(2) - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sell_side_walks_down() {
        let book = aggregate(vec![("a".into(), const_curve(1.0, 2.0, 1.0))], Some(2.0)).unwrap();
        let f = book.cost_to_trade(Side::Sell, 0.5, None).unwrap();
        assert_relative_eq!(f.p_end, 1.5, epsilon = 1e-9);
        assert_relative_eq!(f.notional, (4.0 - 2.25) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn overfill_is_rejected() {
        let book = aggregate(vec![("a".into(), const_curve(1.0, 2.0, 1.0))], Some(1.0)).unwrap();
        assert!(matches!(
            book.cost_to_trade(Side::Buy, 5.0, None),
            Err(AggError::Depth { .. })
        ));
    }

    #[test]
    fn anchor_outside_support_rejected() {
        assert!(matches!(
            aggregate(vec![("a".into(), const_curve(1.0, 2.0, 1.0))], Some(5.0)),
            Err(AggError::Alignment { .. })
        ));
    }

    #[test]
    fn single_owner_takes_all_fees() {
        let book = aggregate(vec![("a".into(), const_curve(1.0, 2.0, 1.0))], Some(1.0)).unwrap();
        let fill = book.cost_to_trade(Side::Buy, 0.6, None).unwrap();
        let fees = book.pro_rata_fees(&fill, 0.003).unwrap();
        assert_eq!(fees.len(), 1);
        assert_relative_eq!(fees["a"], 0.003 * fill.notional, epsilon = 1e-15);
    }

    #[test]
    fn equal_owners_split_evenly() {
        let book = aggregate(
            vec![
                ("a".into(), const_curve(1.0, 2.0, 1.0)),
                ("b".into(), const_curve(1.0, 2.0, 1.0)),
            ],
            Some(1.0),
        )
        .unwrap();
        let fill = book.cost_to_trade(Side::Buy, 1.0, None).unwrap();
        let fees = book.pro_rata_fees(&fill, 0.01).unwrap();
        assert_relative_eq!(fees["a"], fees["b"], epsilon = 1e-15);
        assert_relative_eq!(fees["a"] + fees["b"], 0.01 * fill.notional, epsilon = 1e-12);
    }

    #[test]
    fn uneven_support_fee_split_matches_slice_oracle() {
        let a = const_curve(1.0, 1.5, 1.0);
        let b = const_curve(1.0, 2.0, 1.0);
        let book = aggregate(vec![("a".into(), a.clone()), ("b".into(), b.clone())], Some(1.0)).unwrap();
        let total_depth = book.depth_between(1.0, 2.0);
        let fill = book.cost_to_trade(Side::Buy, total_depth, None).unwrap();
        let fee_rate = 0.003;
        let fees = book.pro_rata_fees(&fill, fee_rate).unwrap();

        // Fine-slice oracle: 10^4 slices, notional in each split by owner
        // share of L(p).
        let n = 10_000;
        let (mut fa, mut fb) = (0.0, 0.0);
        for k in 0..n {
            let p0 = 1.0 + k as f64 / n as f64;
            let p1 = 1.0 + (k + 1) as f64 / n as f64;
            let pm = 0.5 * (p0 + p1);
            let la = a.value(pm);
            let lb = b.value(pm);
            let tot = la + lb;
            if tot == 0.0 {
                continue;
            }
            let slice_notional = book.notional_between(p0, p1);
            fa += fee_rate * slice_notional * la / tot;
            fb += fee_rate * slice_notional * lb / tot;
        }
        assert_relative_eq!(fees["a"], fa, epsilon = 1e-6);
        assert_relative_eq!(fees["b"], fb, epsilon = 1e-6);
        // Conservation to 1e-12.
        let total_fee: f64 = fees.values().sum();
        assert_relative_eq!(total_fee, fee_rate * fill.notional, epsilon = 1e-12);
    }

    #[test]
    fn support_below_floor_rejected() {
        assert!(matches!(
            LiquidityCurve::new(vec![Segment {
                lo: 0.0,
                hi: 1.0,
                kind: SegmentKind::Const { level: 1.0 }
            }]),
            Err(AggError::Domain)
        ));
    }

    #[test]
    fn csv_export_has_monotone_cumulative_depth() {
        let book = aggregate(
            vec![
                ("a".into(), const_curve(1.0, 1.5, 1.0)),
                ("b".into(), const_curve(1.2, 2.0, 0.5)),
            ],
            Some(1.3),
        )
        .unwrap();
        let csv = book.to_csv(8);
        let mut prev = -1.0;
        for line in csv.lines().skip(1) {
            let cum: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(cum >= prev - 1e-12);
            prev = cum;
        }
    }

    #[test]
    fn theta_half_reserve_fixture() {
        // x(p) = 2L(1-θ)(p^{θ-1} - p_u^{θ-1}) at θ = 1/2 gives
        // x(p) = L (p^{-1/2} - p_u^{-1/2}); its negative derivative is the
        // basis shape L/(2 p^{3/2}).
        let l = 3.0;
        let (p_l, p_u): (f64, f64) = (1.0, 4.0);
        let x = |p: f64| l * (p.powf(-0.5) - p_u.powf(-0.5));
        let y = |p: f64| l * (p.sqrt() - p_l.sqrt());
        let curve = LiquidityCurve::new(vec![Segment {
            lo: p_l,
            hi: p_u,
            kind: SegmentKind::InvP32 { coef: l },
        }])
        .unwrap();
        // Depth between p and p_u equals the reserve drawdown x(p) - x(p_u).
        for &p in &[1.0, 1.7, 2.5, 3.9] {
            assert_relative_eq!(curve.depth_between(p, p_u), x(p), epsilon = 1e-12);
        }
        // Notional between p_l and p equals the numeraire accumulated y(p).
        for &p in &[1.1, 2.0, 4.0] {
            assert_relative_eq!(curve.notional_between(p_l, p), y(p), epsilon = 1e-12);
        }
    }
}
