//! Fixed-term, fixed-rate quoting: walk the per-future order books for every
//! block in the term, sum the fills into a total future price, and execute by
//! consuming book depth and opening the offsetting pool position.

use crate::aggregation::{AggError, OrderBookView, Side};
use crate::lending::{LendingError, PoolState};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FixedRateError {
    #[error("term must satisfy n2 > n1 >= 0")]
    BadTerm,
    #[error("notional must be positive")]
    ZeroNotional,
    #[error("books cover {available} futures but the term needs blocks up to {needed}")]
    MissingBooks { available: usize, needed: usize },
    #[error("insufficient depth; shortfall per future: {0:?}")]
    PartialQuote(Vec<(usize, f64)>),
    #[error("books moved since the quote: quoted {quoted}, now {current}")]
    StaleQuote { quoted: f64, current: f64 },
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    Lending(#[from] LendingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuoteSide {
    /// Depositor locking in a receive rate: sells the term's yield futures.
    Lend,
    /// Borrower locking in a pay rate: buys the term's yield futures.
    Borrow,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FutureFill {
    /// 1-based block index of the future.
    pub block: usize,
    pub quantity: f64,
    /// Per-unit price paid or received for this future.
    pub price: f64,
    /// Terminal book price after the walk, used to consume depth on execute.
    pub p_start: f64,
    pub p_end: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FixedQuote {
    pub side: QuoteSide,
    pub notional: f64,
    pub n1: usize,
    pub n2: usize,
    /// Sum of per-unit future prices over the term's blocks.
    pub p_delta: f64,
    pub fills: Vec<FutureFill>,
}

impl FixedQuote {
    pub fn per_block_rate(&self) -> f64 {
        self.p_delta / (self.n2 - self.n1) as f64
    }
}

/// Walks each future's book for the requested size: lender quotes sell the
/// futures (price walks down), borrower quotes buy them (price walks up).
/// Books are indexed so that `books[i]` quotes the future paying at block
/// i + 1; the term covers blocks n1+1 ..= n2. Read-only.
pub fn quote_fixed(
    side: QuoteSide,
    notional: f64,
    n1: usize,
    n2: usize,
    books: &[OrderBookView],
) -> Result<FixedQuote, FixedRateError> {
    if n2 <= n1 {
        return Err(FixedRateError::BadTerm);
    }
    if notional <= 0.0 {
        return Err(FixedRateError::ZeroNotional);
    }
    if books.len() < n2 {
        return Err(FixedRateError::MissingBooks { available: books.len(), needed: n2 });
    }
    let walk_side = match side {
        QuoteSide::Lend => Side::Sell,
        QuoteSide::Borrow => Side::Buy,
    };
    let mut fills = Vec::new();
    let mut shortfalls = Vec::new();
    let mut p_delta = 0.0;
    for block in (n1 + 1)..=n2 {
        let book = &books[block - 1];
        match book.cost_to_trade(walk_side, notional, None) {
            Ok(fill) => {
                let price = fill.notional / notional;
                p_delta += price;
                fills.push(FutureFill {
                    block,
                    quantity: notional,
                    price,
                    p_start: fill.p_start,
                    p_end: fill.p_end,
                });
            }
            Err(AggError::Depth { requested, available }) => {
                shortfalls.push((block, requested - available));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if !shortfalls.is_empty() {
        return Err(FixedRateError::PartialQuote(shortfalls));
    }
    Ok(FixedQuote { side, notional, n1, n2, p_delta, fills })
}

/// Open fixed-rate position: the pool leg plus the future fills that pin its
/// variable payments. When the pool charges borrowers gamma > 1, only the
/// lender-leg rate is hedged; the residual (gamma - 1) spread stays variable.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PositionRecord {
    pub side: QuoteSide,
    pub notional: f64,
    pub n1: usize,
    pub n2: usize,
    pub p_delta: f64,
    pub per_block_rate: f64,
    pub gamma: f64,
    /// Fraction of each block's yield that remains unhedged (gamma - 1).
    pub residual_spread: f64,
    pub fills: Vec<FutureFill>,
}

const REQUOTE_TOL: f64 = 1e-9;

/// Executes a quote atomically: re-validates against the current books,
/// consumes the filled depth, and opens the pool position. Returns the
/// position record, the post-trade books, and the updated pool.
pub fn execute_fixed(
    quote: &FixedQuote,
    pool: &PoolState,
    books: &[OrderBookView],
) -> Result<(PositionRecord, Vec<OrderBookView>, PoolState), FixedRateError> {
    if quote.notional <= 0.0 {
        return Err(FixedRateError::ZeroNotional);
    }
    let fresh = quote_fixed(quote.side, quote.notional, quote.n1, quote.n2, books)?;
    if (fresh.p_delta - quote.p_delta).abs() > REQUOTE_TOL * (1.0 + quote.p_delta.abs()) {
        return Err(FixedRateError::StaleQuote { quoted: quote.p_delta, current: fresh.p_delta });
    }
    let mut updated: Vec<OrderBookView> = books.to_vec();
    for fill in &fresh.fills {
        let book = &updated[fill.block - 1];
        let walk_side = match quote.side {
            QuoteSide::Lend => Side::Sell,
            QuoteSide::Borrow => Side::Buy,
        };
        let trade = book.cost_to_trade(walk_side, fill.quantity, None)?;
        updated[fill.block - 1] = book.consume(&trade);
    }
    let mut new_pool = *pool;
    match quote.side {
        QuoteSide::Lend => new_pool.lent += quote.notional,
        QuoteSide::Borrow => {
            new_pool.borrowed += quote.notional;
            new_pool.lent = new_pool.lent.max(new_pool.borrowed);
        }
    }
    new_pool.validate()?;
    let record = PositionRecord {
        side: quote.side,
        notional: quote.notional,
        n1: quote.n1,
        n2: quote.n2,
        p_delta: fresh.p_delta,
        per_block_rate: fresh.per_block_rate(),
        gamma: pool.gamma,
        residual_spread: pool.gamma - 1.0,
        fills: fresh.fills,
    };
    Ok((record, updated, new_pool))
}

/// Net cash flow per block for a realized per-block yield path, with the
/// future premium amortized into its own block. For a borrower the variable
/// pool payment gamma·y·Δ is offset by the future payoff y·Δ, leaving the
/// fixed premium plus any (gamma - 1) residual; the lender case mirrors it.
pub fn net_cashflows(record: &PositionRecord, yield_path: &[f64]) -> Vec<f64> {
    record
        .fills
        .iter()
        .map(|fill| {
            let y = yield_path[fill.block - record.n1 - 1];
            let d = record.notional;
            match record.side {
                QuoteSide::Borrow => {
                    -record.gamma * y * d + y * d - fill.price * d
                }
                QuoteSide::Lend => y * d - y * d + fill.price * d,
            }
        })
        .collect()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MaturityRow {
    pub maturity: usize,
    pub bid: f64,
    pub ask: f64,
    pub depth: f64,
}

/// Cross-maturity view: maturity M bundles futures 1..=M, so its bid/ask are
/// the sums of the per-future quotes at each book's anchor and its depth is
/// the tradeable size of the bundle (the thinnest constituent book).
pub fn maturity_orderbook(books: &[OrderBookView]) -> Vec<MaturityRow> {
    let mut rows = Vec::new();
    let mut bid_sum = 0.0;
    let mut ask_sum = 0.0;
    let mut min_depth = f64::INFINITY;
    for (i, book) in books.iter().enumerate() {
        let Some((lo, hi)) = book.support() else {
            break;
        };
        let below = book.depth_between(lo, book.anchor);
        let above = book.depth_between(book.anchor, hi);
        // Best executable prices for an infinitesimal trade at the anchor.
        bid_sum += if below > 0.0 { book.anchor } else { lo };
        ask_sum += if above > 0.0 { book.anchor } else { hi };
        min_depth = min_depth.min(below + above);
        rows.push(MaturityRow {
            maturity: i + 1,
            bid: bid_sum,
            ask: ask_sum,
            depth: min_depth,
        });
    }
    rows
}

pub fn maturity_orderbook_csv(rows: &[MaturityRow]) -> String {
    let mut out = String::from("maturity,bid,ask,depth\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.maturity,
            crate::pricing::fmt12(r.bid),
            crate::pricing::fmt12(r.ask),
            crate::pricing::fmt12(r.depth)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{aggregate, LiquidityCurve, Segment, SegmentKind};
    use crate::lending::RateCurve;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Deep flat book around price q: fills of moderate size execute at q to
    /// high accuracy.
    fn flat_book(q: f64, level: f64) -> OrderBookView {
        let curve = LiquidityCurve::new(vec![Segment {
            lo: q * 0.5,
            hi: q * 1.5,
            kind: SegmentKind::Const { level },
        }])
        .unwrap();
        aggregate(vec![("maker".into(), curve)], Some(q)).unwrap()
    }

    fn flat_books(qs: &[f64]) -> Vec<OrderBookView> {
        qs.iter().map(|&q| flat_book(q, 1e9)).collect()
    }

    fn test_pool() -> PoolState {
        PoolState {
            lent: 100.0,
            borrowed: 50.0,
            rate_curve: RateCurve { r0: 0.0, slope1: 0.04, slope2: 0.6, target: 0.8 },
            gamma: 1.0,
        }
    }

    #[test]
    fn per_block_rate_is_total_over_blocks() {
        let quote = FixedQuote {
            side: QuoteSide::Borrow,
            notional: 1.0,
            n1: 0,
            n2: 100,
            p_delta: 0.10,
            fills: vec![],
        };
        assert_relative_eq!(quote.per_block_rate(), 0.001, epsilon = 1e-15);
    }

    #[test]
    fn flat_books_quote_the_flat_price() {
        let books = flat_books(&[0.01; 5]);
        let quote = quote_fixed(QuoteSide::Borrow, 1.0, 1, 4, &books).unwrap();
        assert_relative_eq!(quote.p_delta, 0.03, epsilon = 1e-6);
        assert_relative_eq!(quote.per_block_rate(), 0.01, epsilon = 1e-6);
        assert_eq!(quote.fills.len(), 3);
    }

    #[test]
    fn borrow_quote_dominates_lend_quote() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let qs: Vec<f64> = (0..4).map(|_| 0.01 + 0.04 * rng.gen::<f64>()).collect();
            let books: Vec<OrderBookView> = qs
                .iter()
                .map(|&q| flat_book(q, 1e4 + 1e4 * rng.gen::<f64>()))
                .collect();
            let size = 0.5 + rng.gen::<f64>();
            let borrow = quote_fixed(QuoteSide::Borrow, size, 0, 4, &books).unwrap();
            let lend = quote_fixed(QuoteSide::Lend, size, 0, 4, &books).unwrap();
            assert!(borrow.p_delta >= lend.p_delta - 1e-12);
        }
    }

    #[test]
    fn quote_is_deterministic_and_read_only() {
        let books = flat_books(&[0.02, 0.03, 0.025]);
        let a = quote_fixed(QuoteSide::Lend, 1.0, 0, 3, &books).unwrap();
        let b = quote_fixed(QuoteSide::Lend, 1.0, 0, 3, &books).unwrap();
        assert_eq!(a.p_delta, b.p_delta);
        assert_eq!(a.fills.len(), b.fills.len());
    }

    #[test]
    fn shortfall_reported_per_future() {
        let mut books = flat_books(&[0.02, 0.02, 0.02]);
        // Make the middle book too thin for the trade.
        let thin = LiquidityCurve::new(vec![Segment {
            lo: 0.019,
            hi: 0.021,
            kind: SegmentKind::Const { level: 1.0 },
        }])
        .unwrap();
        books[1] = aggregate(vec![("maker".into(), thin)], Some(0.021)).unwrap();
        match quote_fixed(QuoteSide::Lend, 1.0, 0, 3, &books) {
            Err(FixedRateError::PartialQuote(shortfalls)) => {
                assert_eq!(shortfalls.len(), 1);
                assert_eq!(shortfalls[0].0, 2);
                assert!(shortfalls[0].1 > 0.0);
            }
            other => panic!("expected partial quote, got {other:?}"),
        }
    }

    #[test]
    fn bad_terms_rejected() {
        let books = flat_books(&[0.02, 0.02]);
        assert!(matches!(
            quote_fixed(QuoteSide::Lend, 1.0, 2, 2, &books),
            Err(FixedRateError::BadTerm)
        ));
        assert!(matches!(
            quote_fixed(QuoteSide::Lend, 0.0, 0, 2, &books),
            Err(FixedRateError::ZeroNotional)
        ));
        assert!(matches!(
            quote_fixed(QuoteSide::Lend, 1.0, 0, 5, &books),
            Err(FixedRateError::MissingBooks { .. })
        ));
    }

    #[test]
    fn execute_fills_at_quoted_price_and_updates_state() {
        let books = flat_books(&[0.02, 0.03]);
        let pool = test_pool();
        let quote = quote_fixed(QuoteSide::Borrow, 1.0, 0, 2, &books).unwrap();
        let (record, updated, new_pool) = execute_fixed(&quote, &pool, &books).unwrap();
        assert_relative_eq!(record.p_delta, quote.p_delta, epsilon = 1e-12);
        assert_eq!(new_pool.borrowed, pool.borrowed + 1.0);
        // Depth was consumed around each anchor.
        for (before, after) in books.iter().zip(&updated) {
            let (lo, hi) = before.support().unwrap();
            assert!(after.depth_between(lo, hi) < before.depth_between(lo, hi));
        }
    }

    #[test]
    fn stale_quote_rejected() {
        let books = flat_books(&[0.02, 0.03]);
        let pool = test_pool();
        let mut quote = quote_fixed(QuoteSide::Borrow, 1.0, 0, 2, &books).unwrap();
        quote.p_delta += 0.01; // books "moved"
        assert!(matches!(
            execute_fixed(&quote, &pool, &books),
            Err(FixedRateError::StaleQuote { .. })
        ));
    }

    #[test]
    fn borrower_cashflows_fixed_across_scenarios() {
        let books = flat_books(&[0.02, 0.03, 0.025, 0.021]);
        let pool = test_pool();
        let quote = quote_fixed(QuoteSide::Borrow, 1.0, 0, 4, &books).unwrap();
        let (record, _, _) = execute_fixed(&quote, &pool, &books).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut per_block: Vec<Vec<f64>> = vec![vec![]; 4];
        for _ in 0..100 {
            let path: Vec<f64> = (0..4).map(|_| 0.05 * rng.gen::<f64>()).collect();
            for (i, c) in net_cashflows(&record, &path).iter().enumerate() {
                per_block[i].push(*c);
            }
        }
        for flows in &per_block {
            let mean = flows.iter().sum::<f64>() / flows.len() as f64;
            let var = flows.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / flows.len() as f64;
            assert!(var < 1e-18, "variance {var}");
        }
    }

    #[test]
    fn lender_cashflows_fixed_across_scenarios() {
        let books = flat_books(&[0.02, 0.03]);
        let pool = test_pool();
        let quote = quote_fixed(QuoteSide::Lend, 2.0, 0, 2, &books).unwrap();
        let (record, _, _) = execute_fixed(&quote, &pool, &books).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut totals = Vec::new();
        for _ in 0..100 {
            let path: Vec<f64> = (0..2).map(|_| 0.05 * rng.gen::<f64>()).collect();
            totals.push(net_cashflows(&record, &path).iter().sum::<f64>());
        }
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let var = totals.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / totals.len() as f64;
        assert!(var < 1e-18, "variance {var}");
        assert_relative_eq!(mean, record.p_delta * 2.0, epsilon = 1e-6);
    }

    #[test]
    fn empty_books_empty_table() {
        assert!(maturity_orderbook(&[]).is_empty());
    }

    #[test]
    fn flat_books_maturity_mid() {
        let books = flat_books(&[0.01, 0.01, 0.01]);
        let rows = maturity_orderbook(&books);
        assert_eq!(rows.len(), 3);
        for (i, r) in rows.iter().enumerate() {
            let m = (i + 1) as f64;
            assert_relative_eq!(r.bid, 0.01 * m, epsilon = 1e-12);
            assert_relative_eq!(r.ask, 0.01 * m, epsilon = 1e-12);
        }
    }

    #[test]
    fn removing_liquidity_shrinks_all_containing_maturities() {
        let books = flat_books(&[0.01, 0.01, 0.01]);
        let before = maturity_orderbook(&books);
        let mut thinner = books.clone();
        let above = thinner[1].depth_between(thinner[1].anchor, 0.015);
        let fill = thinner[1]
            .cost_to_trade(Side::Buy, above * 0.9, None)
            .unwrap();
        thinner[1] = thinner[1].consume(&fill);
        let after = maturity_orderbook(&thinner);
        assert_relative_eq!(after[0].depth, before[0].depth, epsilon = 1e-6);
        for m in 1..3 {
            assert!(after[m].depth < before[m].depth);
        }
    }
}
