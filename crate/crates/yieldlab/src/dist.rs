//! Yield payment distributions and the quadrature machinery used to take
//! expectations against them. Expectations are deterministic: Gauss-Hermite
//! for Gaussian payments, exact summation for discrete ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum DistError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("root bracketing failed on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
}

/// Default Gauss-Hermite node count for a single Gaussian factor.
pub const GH_NODES: usize = 64;

/// A single yield payment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaymentDist {
    Degenerate { value: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Pre-truncation Gaussian parameters, conditioned on the positive axis.
    TruncatedGaussian { mean: f64, sd: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
}

impl PaymentDist {
    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            PaymentDist::Degenerate { value } => {
                if !value.is_finite() {
                    return Err(DistError::Invalid("degenerate value not finite".into()));
                }
            }
            PaymentDist::Gaussian { mean, sd } | PaymentDist::TruncatedGaussian { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || *sd < 0.0 {
                    return Err(DistError::Invalid(format!(
                        "gaussian mean {mean}, sd {sd}"
                    )));
                }
            }
            PaymentDist::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(DistError::Invalid("discrete distribution has no atoms".into()));
                }
                let total: f64 = atoms.iter().map(|(_, p)| p).sum();
                if atoms.iter().any(|(v, p)| !v.is_finite() || *p < 0.0)
                    || (total - 1.0).abs() > 1e-9
                {
                    return Err(DistError::Invalid(format!(
                        "discrete atom probabilities sum to {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            PaymentDist::Degenerate { value } => *value,
            PaymentDist::Gaussian { mean, .. } => *mean,
            PaymentDist::TruncatedGaussian { mean, sd } => {
                if *sd == 0.0 {
                    return mean.max(0.0);
                }
                let alpha = -mean / sd;
                mean + sd * normal_pdf(alpha) / (1.0 - normal_cdf(alpha))
            }
            PaymentDist::Discrete { atoms } => atoms.iter().map(|(v, p)| v * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|y| (y - m) * (y - m))
    }

    /// Deterministic expectation E[f(Y)].
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes(GH_NODES)
            .iter()
            .map(|&(v, w)| w * f(v))
            .sum()
    }

    /// Quadrature nodes (value, weight) with weights summing to 1.
    pub fn nodes(&self, gh: usize) -> Vec<(f64, f64)> {
        match self {
            PaymentDist::Degenerate { value } => vec![(*value, 1.0)],
            PaymentDist::Gaussian { mean, sd } => {
                if *sd == 0.0 {
                    return vec![(*mean, 1.0)];
                }
                let sqrt_pi = std::f64::consts::PI.sqrt();
                gauss_hermite(gh)
                    .into_iter()
                    .map(|(x, w)| (mean + std::f64::consts::SQRT_2 * sd * x, w / sqrt_pi))
                    .collect()
            }
            PaymentDist::TruncatedGaussian { mean, sd } => {
                if *sd == 0.0 {
                    return vec![(mean.max(0.0), 1.0)];
                }
                // Gauss-Legendre against the renormalized density on [0, mean + 12 sd].
                let hi = mean + 12.0 * sd;
                let z = 1.0 - normal_cdf(-mean / sd);
                gauss_legendre(128, 0.0, hi.max(sd * 12.0))
                    .into_iter()
                    .map(|(x, w)| (x, w * normal_pdf((x - mean) / sd) / (sd * z)))
                    .collect()
            }
            PaymentDist::Discrete { atoms } => atoms.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PaymentDist::Degenerate { value } => *value,
            PaymentDist::Gaussian { mean, sd } => {
                Normal::new(*mean, *sd).unwrap().sample(rng)
            }
            PaymentDist::TruncatedGaussian { mean, sd } => {
                let n = Normal::new(*mean, *sd).unwrap();
                loop {
                    let x = n.sample(rng);
                    if x > 0.0 {
                        return x;
                    }
                }
            }
            PaymentDist::Discrete { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in atoms {
                    acc += p;
                    if u <= acc {
                        return *v;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }

    fn is_gaussian_like(&self) -> bool {
        matches!(
            self,
            PaymentDist::Gaussian { sd, .. } | PaymentDist::TruncatedGaussian { sd, .. } if *sd > 0.0
        )
    }
}

/// An ordered sequence of outstanding yield payments, independent by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldDistribution {
    pub payments: Vec<PaymentDist>,
}

impl YieldDistribution {
    pub fn new(payments: Vec<PaymentDist>) -> Result<Self, DistError> {
        for p in &payments {
            p.validate()?;
        }
        Ok(Self { payments })
    }

    pub fn single(p: PaymentDist) -> Result<Self, DistError> {
        Self::new(vec![p])
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    pub fn means(&self) -> Vec<f64> {
        self.payments.iter().map(|p| p.mean()).collect()
    }

    pub fn total_mean(&self) -> f64 {
        self.means().iter().sum()
    }

    /// E[f(Y_1, ..., Y_n)] by tensor-product quadrature over the independent
    /// payments. Node counts shrink as the number of continuous factors grows.
    pub fn expect_joint<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        let continuous = self
            .payments
            .iter()
            .filter(|p| p.is_gaussian_like())
            .count();
        let gh = match continuous {
            0 | 1 | 2 => GH_NODES,
            3 => 24,
            _ => 12,
        };
        let node_sets: Vec<Vec<(f64, f64)>> =
            self.payments.iter().map(|p| p.nodes(gh)).collect();
        let mut vals = vec![0.0; self.payments.len()];
        Self::tensor_sum(&node_sets, 0, 1.0, &mut vals, &f)
    }

    fn tensor_sum<F: Fn(&[f64]) -> f64>(
        node_sets: &[Vec<(f64, f64)>],
        idx: usize,
        weight: f64,
        vals: &mut Vec<f64>,
        f: &F,
    ) -> f64 {
        if idx == node_sets.len() {
            return weight * f(vals);
        }
        let mut acc = 0.0;
        for &(v, w) in &node_sets[idx] {
            vals[idx] = v;
            acc += Self::tensor_sum(node_sets, idx + 1, weight * w, vals, f);
        }
        acc
    }

    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.payments.iter().map(|p| p.sample(rng)).collect()
    }

    /// The distribution of the outstanding payments from index `from` on.
    pub fn tail(&self, from: usize) -> YieldDistribution {
        YieldDistribution {
            payments: self.payments[from..].to_vec(),
        }
    }
}

/// Bisection on a monotone function with a known sign change over [lo, hi].
pub fn bisect_root<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64, DistError> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(DistError::Bracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expand `hi` geometrically from `lo` until f changes sign, then bisect.
pub fn bracketed_root<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64, DistError> {
    let flo = f(lo);
    if flo == 0.0 {
        return Ok(lo);
    }
    let mut iters = 0;
    while f(hi).signum() == flo.signum() {
        hi = lo + 2.0 * (hi - lo);
        iters += 1;
        if iters > 80 {
            return Err(DistError::Bracket { lo, hi });
        }
    }
    bisect_root(f, lo, hi, tol)
}

/// Physicists' Gauss-Hermite nodes and weights for weight exp(-x^2).
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    // Newton iteration with the three-term recurrence (Numerical Recipes style).
    let mut nodes = vec![(0.0, 0.0); n];
    let pim4 = 0.751_125_544_464_943; // pi^{-1/4}
    let mut z = 0.0_f64;
    for i in 0..(n + 1) / 2 {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0].0,
            3 => 1.91 * z - 0.91 * nodes[1].0,
            _ => 2.0 * z - nodes[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / (pp * pp);
        nodes[i] = (z, w);
        nodes[n - 1 - i] = (-z, w);
    }
    nodes
}

/// Gauss-Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let m = (n + 1) / 2;
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    let mut out = vec![(0.0, 0.0); n];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        out[i] = (xm - xl * z, w);
        out[n - 1 - i] = (xm + xl * z, w);
    }
    out
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_integrates_moments() {
        // E[x^2] under N(0,1) via the exp(-x^2) weight transform.
        let g = PaymentDist::Gaussian { mean: 0.0, sd: 1.0 };
        assert_relative_eq!(g.expect(|x| x * x), 1.0, epsilon = 1e-10);
        assert_relative_eq!(g.expect(|x| x * x * x * x), 3.0, epsilon = 1e-8);
    }

    #[test]
    fn gaussian_exponential_moment() {
        // E[exp(Y)] = exp(m + s^2/2)
        let g = PaymentDist::Gaussian { mean: 0.05, sd: 0.1 };
        assert_relative_eq!(g.expect(f64::exp), (0.05_f64 + 0.005).exp(), epsilon = 1e-10);
    }

    #[test]
    fn legendre_integrates_polynomial() {
        let nodes = gauss_legendre(16, 0.0, 2.0);
        let integral: f64 = nodes.iter().map(|&(x, w)| w * x * x * x).sum();
        assert_relative_eq!(integral, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_gaussian_mean_matches_closed_form() {
        let g = PaymentDist::TruncatedGaussian { mean: 0.05, sd: 0.1 };
        let quad = g.expect(|x| x);
        assert_relative_eq!(quad, g.mean(), epsilon = 1e-6);
        assert!(g.mean() > 0.05);
    }

    #[test]
    fn discrete_rejects_bad_probs() {
        let d = PaymentDist::Discrete { atoms: vec![(1.0, 0.7), (2.0, 0.7)] };
        assert!(d.validate().is_err());
    }

    #[test]
    fn joint_expectation_factorizes() {
        let yd = YieldDistribution::new(vec![
            PaymentDist::Gaussian { mean: 0.05, sd: 0.1 },
            PaymentDist::Discrete { atoms: vec![(0.02, 0.5), (0.04, 0.5)] },
        ])
        .unwrap();
        let product = yd.expect_joint(|ys| ys[0] * ys[1]);
        assert_relative_eq!(product, 0.05 * 0.03, epsilon = 1e-12);
    }

    #[test]
    fn bisection_finds_monotone_root() {
        let r = bracketed_root(|p| 1.0 - p * p, 0.0, 0.1, 1e-12).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-10);
    }
}
