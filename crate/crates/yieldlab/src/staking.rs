//! Liquid-staking principal/yield pricing and slashing-insurance sizing.
//!
//! Pricing here assumes emitted yield is restaked each slot, which is what
//! produces the E[prod(1 + Y_i)] growth factor; the tokenizer module's
//! accounting deliberately does not reinvest.

use crate::dist::{bracketed_root, DistError, PaymentDist, YieldDistribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum StakingError {
    #[error("expected yield must exceed -1")]
    YieldTooNegative,
    #[error("payment distribution has negative support; staking yields must be positive")]
    NegativeSupport,
    #[error("slash parameters out of range: need p in [0,1), p_S in [0,1)")]
    BadSlashParams,
    #[error(
        "insurance bracket insolvent: need (1 - p) > p_S * E[prod(1+Y)] (got 1-p = {survivor}, p_S * E = {weighted_growth})"
    )]
    Insolvent { survivor: f64, weighted_growth: f64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone)]
pub struct StakingYieldModel {
    pub payments: YieldDistribution,
    /// Fraction of stake destroyed when a slashing event occurs.
    pub slash_fraction: f64,
    /// Probability the staker ascribes to a slashing event before maturity.
    pub slash_prob: f64,
}

impl StakingYieldModel {
    pub fn validate(&self) -> Result<(), StakingError> {
        if !(0.0..1.0).contains(&self.slash_fraction) || !(0.0..1.0).contains(&self.slash_prob) {
            return Err(StakingError::BadSlashParams);
        }
        for p in &self.payments.payments {
            let negative = match p {
                PaymentDist::Degenerate { value } => *value < 0.0,
                PaymentDist::Discrete { atoms } => atoms.iter().any(|&(v, _)| v < 0.0),
                // Gaussian tails dip below zero; tolerated, flagged in warnings.
                PaymentDist::Gaussian { .. } | PaymentDist::TruncatedGaussian { .. } => false,
            };
            if negative {
                return Err(StakingError::NegativeSupport);
            }
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.slash_prob > 0.1 {
            w.push(format!(
                "slash probability {} is outside the small-p_S regime the sizing assumes",
                self.slash_prob
            ));
        }
        if self
            .payments
            .payments
            .iter()
            .any(|p| matches!(p, PaymentDist::Gaussian { .. }))
        {
            w.push("Gaussian payment has mass below zero; consider the truncated form".into());
        }
        w
    }

    /// E[prod (1 + Y_i)] under independence: the product of (1 + E[Y_i]).
    pub fn growth_factor(&self) -> f64 {
        self.payments.means().iter().map(|m| 1.0 + m).product()
    }
}

/// Single-slot fair prices: p_P = 1/(1 + E[Y]), p_Y = E[Y]/(1 + E[Y]).
pub fn price_principal_single(y: &PaymentDist) -> Result<(f64, f64), StakingError> {
    y.validate()?;
    let m = y.mean();
    if m <= -1.0 {
        return Err(StakingError::YieldTooNegative);
    }
    let p_p = 1.0 / (1.0 + m);
    Ok((p_p, 1.0 - p_p))
}

/// Multi-slot fair prices: p_P = 1/E[prod(1 + Y_i)], p_Y = 1 - p_P.
pub fn price_principal_multi(model: &StakingYieldModel) -> Result<(f64, f64), StakingError> {
    model.validate()?;
    let growth = model.growth_factor();
    if growth <= 0.0 {
        return Err(StakingError::YieldTooNegative);
    }
    let p_p = 1.0 / growth;
    Ok((p_p, 1.0 - p_p))
}

/// Monte Carlo estimate of E[prod(1 + Y_i)]; returns (mean, standard error).
/// Used as an independence-factorization cross-check on `growth_factor`.
pub fn growth_factor_mc(dist: &YieldDistribution, n_samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let ys = dist.sample_joint(&mut rng);
        let g: f64 = ys.iter().map(|y| 1.0 + y).product();
        sum += g;
        sum_sq += g * g;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) / (n - 1.0);
    (mean, var.sqrt())
}

/// Expected profit of holding K extra principal tokens as slash insurance,
/// straight from the fairness argument: lose the premium K·p_P with
/// probability 1 - p_S; with probability p_S sell K + 1 tokens at the
/// post-slash value 1/(1-p).
pub fn insurance_expected_profit(model: &StakingYieldModel, k: f64) -> f64 {
    let e = model.growth_factor();
    let p = model.slash_fraction;
    let p_s = model.slash_prob;
    (1.0 - p_s) * (-k / e) + p_s * (k * (1.0 / (1.0 - p) - 1.0 / e) + 1.0 / (1.0 - p))
}

#[derive(Debug, Clone)]
pub struct InsuranceReport {
    /// Principal tokens to buy, from the zero-expected-profit root.
    pub k: f64,
    /// Numeraire spent: K times the principal price.
    pub p_i: f64,
    /// The displayed closed form p_S / (1 - p + p_S E[prod]), which differs
    /// from the root in the sign of the p_S E[prod] term.
    pub closed_form_p_i: f64,
    pub discrepancy: f64,
    pub expected_profit_at_k: f64,
}

const INSURANCE_TOL: f64 = 1e-12;

/// Sizes the slash-insurance position by solving the zero-expected-profit
/// equation for K by bisection. When the slash fraction is zero the event
/// does not change the redemption value, so no insurance is bought even
/// though the formal equation prices the event at 1/(1-p) unconditionally.
pub fn insurance_position(model: &StakingYieldModel) -> Result<InsuranceReport, StakingError> {
    model.validate()?;
    let e = model.growth_factor();
    let p = model.slash_fraction;
    let p_s = model.slash_prob;
    if p_s == 0.0 || p == 0.0 {
        return Ok(InsuranceReport {
            k: 0.0,
            p_i: 0.0,
            closed_form_p_i: if p_s == 0.0 { 0.0 } else { p_s / (1.0 - p + p_s * e) },
            discrepancy: 0.0,
            expected_profit_at_k: 0.0,
        });
    }
    let survivor = 1.0 - p;
    let weighted_growth = p_s * e;
    if survivor <= weighted_growth {
        return Err(StakingError::Insolvent { survivor, weighted_growth });
    }
    // Profit is decreasing in K (slope -1/E + p_S/(1-p) < 0 under the
    // solvency condition) and positive at K = 0.
    let k = bracketed_root(|k| insurance_expected_profit(model, k), 0.0, 1.0, INSURANCE_TOL)?;
    let p_i = k / e;
    let closed_form_p_i = p_s / (1.0 - p + p_s * e);
    Ok(InsuranceReport {
        k,
        p_i,
        closed_form_p_i,
        discrepancy: p_i - closed_form_p_i,
        expected_profit_at_k: insurance_expected_profit(model, k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(means: &[f64], p: f64, p_s: f64) -> StakingYieldModel {
        StakingYieldModel {
            payments: YieldDistribution::new(
                means.iter().map(|&m| PaymentDist::Degenerate { value: m }).collect(),
            )
            .unwrap(),
            slash_fraction: p,
            slash_prob: p_s,
        }
    }

    #[test]
    fn zero_yield_prices() {
        let (p_p, p_y) =
            price_principal_single(&PaymentDist::Degenerate { value: 0.0 }).unwrap();
        assert_eq!(p_p, 1.0);
        assert_eq!(p_y, 0.0);
    }

    #[test]
    fn single_slot_fixture() {
        let (p_p, p_y) =
            price_principal_single(&PaymentDist::Degenerate { value: 0.05 }).unwrap();
        assert_relative_eq!(p_p, 0.952381, epsilon = 1e-6);
        assert_relative_eq!(p_y, 0.047619, epsilon = 1e-6);
        assert_relative_eq!(p_p + p_y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn doubling_yield_lowers_principal_price() {
        let (p1, _) = price_principal_single(&PaymentDist::Degenerate { value: 0.05 }).unwrap();
        let (p2, _) = price_principal_single(&PaymentDist::Degenerate { value: 0.10 }).unwrap();
        assert!(p2 < p1);
    }

    #[test]
    fn two_slot_deterministic_fixture() {
        let m = model(&[0.01, 0.01], 0.0, 0.0);
        let (p_p, p_y) = price_principal_multi(&m).unwrap();
        assert_relative_eq!(p_p, 1.0 / 1.0201, epsilon = 1e-12);
        assert_relative_eq!(p_p + p_y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_slot_consistency() {
        let m = model(&[0.037], 0.0, 0.0);
        let (multi, _) = price_principal_multi(&m).unwrap();
        let (single, _) =
            price_principal_single(&PaymentDist::Degenerate { value: 0.037 }).unwrap();
        assert_relative_eq!(multi, single, epsilon = 1e-15);
    }

    #[test]
    fn principal_price_decreasing_in_each_mean() {
        let base = model(&[0.02, 0.03, 0.04], 0.0, 0.0);
        let (p0, _) = price_principal_multi(&base).unwrap();
        assert!(p0 > 0.0 && p0 <= 1.0);
        for i in 0..3 {
            let mut means = [0.02, 0.03, 0.04];
            means[i] += 0.01;
            let (p1, _) = price_principal_multi(&model(&means, 0.0, 0.0)).unwrap();
            assert!(p1 < p0);
        }
    }

    #[test]
    fn mc_growth_matches_product_of_means() {
        let dist = YieldDistribution::new(vec![
            PaymentDist::TruncatedGaussian { mean: 0.05, sd: 0.02 },
            PaymentDist::TruncatedGaussian { mean: 0.03, sd: 0.015 },
        ])
        .unwrap();
        let exact: f64 = dist.means().iter().map(|m| 1.0 + m).product();
        let (mc, stderr) = growth_factor_mc(&dist, 200_000, 42);
        assert!(
            (mc - exact).abs() < 3.0 * stderr,
            "mc {mc} exact {exact} stderr {stderr}"
        );
    }

    #[test]
    fn no_slash_risk_no_insurance() {
        let m = model(&[0.05], 0.5, 0.0);
        let rep = insurance_position(&m).unwrap();
        assert_eq!(rep.k, 0.0);
        assert_eq!(rep.p_i, 0.0);
    }

    #[test]
    fn harmless_slash_no_insurance() {
        let m = model(&[0.05], 0.0, 0.01);
        let rep = insurance_position(&m).unwrap();
        assert_eq!(rep.k, 0.0);
    }

    #[test]
    fn zero_profit_root_fixture() {
        // p_S = 0.01, p = 0.5, E[prod] = 1.05.
        let m = model(&[0.05], 0.5, 0.01);
        let rep = insurance_position(&m).unwrap();
        assert!(rep.k > 0.0);
        assert!(
            rep.expected_profit_at_k.abs() < 1e-10,
            "profit {}",
            rep.expected_profit_at_k
        );
        // Algebraic form of the root: K = p_S E / ((1-p) - p_S E).
        let e = 1.05;
        let k_expected = 0.01 * e / (0.5 - 0.01 * e);
        assert_relative_eq!(rep.k, k_expected, epsilon = 1e-9);
        // The displayed closed form disagrees; the report carries both.
        assert!(rep.discrepancy.abs() > 0.0);
        assert_relative_eq!(
            rep.closed_form_p_i,
            0.01 / (0.5 + 0.01 * e),
            epsilon = 1e-15
        );
    }

    #[test]
    fn insurance_grows_with_slash_probability() {
        let mut prev = -1.0;
        for p_s in [0.001, 0.005, 0.01, 0.05] {
            let rep = insurance_position(&model(&[0.05], 0.5, p_s)).unwrap();
            assert!(rep.k >= prev);
            prev = rep.k;
        }
    }

    #[test]
    fn insolvent_bracket_rejected() {
        // 1 - p = 0.05 <= p_S * E = 0.9 * 1.05.
        let m = model(&[0.05], 0.95, 0.9);
        assert!(matches!(
            insurance_position(&m),
            Err(StakingError::Insolvent { .. })
        ));
    }

    #[test]
    fn warnings_flag_large_slash_probability() {
        let m = model(&[0.05], 0.5, 0.2);
        assert!(!m.warnings().is_empty());
        let quiet = model(&[0.05], 0.5, 0.01);
        assert!(quiet.warnings().is_empty());
    }

    #[test]
    fn negative_support_rejected() {
        let m = StakingYieldModel {
            payments: YieldDistribution::new(vec![PaymentDist::Degenerate { value: -0.5 }])
                .unwrap(),
            slash_fraction: 0.1,
            slash_prob: 0.01,
        };
        assert!(matches!(m.validate(), Err(StakingError::NegativeSupport)));
    }
}
