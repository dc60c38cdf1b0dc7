//! Concave increasing utility families used by agents, traders, and LPs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum UtilityError {
    #[error("invalid utility parameter: {0}")]
    InvalidParameter(String),
}

/// A concave increasing utility family with parameters.
///
/// CRRA carries a wealth shift so it can be applied to positions (like a
/// borrower's) whose raw wealth is negative; utility is evaluated at
/// `shift + w`, which must stay positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilitySpec {
    RiskNeutral,
    Cara { a: f64 },
    Crra { eta: f64, #[serde(default)] shift: f64 },
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<(), UtilityError> {
        match self {
            UtilitySpec::RiskNeutral => Ok(()),
            UtilitySpec::Cara { a } => {
                if *a > 0.0 && a.is_finite() {
                    Ok(())
                } else {
                    Err(UtilityError::InvalidParameter(format!("CARA a = {a}")))
                }
            }
            UtilitySpec::Crra { eta, shift } => {
                if *eta > 0.0 && eta.is_finite() && shift.is_finite() {
                    Ok(())
                } else {
                    Err(UtilityError::InvalidParameter(format!("CRRA eta = {eta}")))
                }
            }
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self {
            UtilitySpec::RiskNeutral => w,
            UtilitySpec::Cara { a } => (1.0 - (-a * w).exp()) / a,
            UtilitySpec::Crra { eta, shift } => {
                let w = shift + w;
                if w <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                if (eta - 1.0).abs() < 1e-12 {
                    w.ln()
                } else {
                    (w.powf(1.0 - eta) - 1.0) / (1.0 - eta)
                }
            }
        }
    }

    pub fn is_risk_neutral(&self) -> bool {
        matches!(self, UtilitySpec::RiskNeutral)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cara_is_concave_increasing() {
        let u = UtilitySpec::Cara { a: 2.0 };
        assert!(u.eval(1.0) > u.eval(0.5));
        let mid = u.eval(0.75);
        assert!(mid > 0.5 * (u.eval(1.0) + u.eval(0.5)));
    }

    #[test]
    fn crra_log_limit() {
        let u = UtilitySpec::Crra { eta: 1.0, shift: 0.0 };
        assert!((u.eval(std::f64::consts::E) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crra_shift_extends_domain() {
        let u = UtilitySpec::Crra { eta: 2.0, shift: 10.0 };
        assert!(u.eval(-5.0).is_finite());
        assert_eq!(u.eval(-10.0), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_nonpositive_aversion() {
        assert!(UtilitySpec::Cara { a: 0.0 }.validate().is_err());
        assert!(UtilitySpec::Crra { eta: -1.0, shift: 0.0 }.validate().is_err());
    }
}
