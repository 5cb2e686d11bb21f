//! Parametric demand families with closed-form CDF, density, quantile and
//! partial expectations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Demand {
    Uniform {
        a: f64,
        b: f64,
    },
    /// Exponential with the given rate conditioned on `[0, cap]`.
    TruncatedExponential {
        rate: f64,
        cap: f64,
    },
}

impl Demand {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Demand::Uniform { a, b } if !(a < b) || !a.is_finite() || !b.is_finite() => {
                Err(Error::InvalidEnv(format!("uniform demand needs a < b, got [{a}, {b}]")))
            }
            Demand::TruncatedExponential { rate, cap } if !(rate > 0.0 && cap > 0.0) || !cap.is_finite() => {
                Err(Error::InvalidEnv(format!("truncated exponential needs rate, cap > 0, got ({rate}, {cap})")))
            }
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Demand::Uniform { a, b } => (a, b),
            Demand::TruncatedExponential { cap, .. } => (0.0, cap),
        }
    }

    fn exp_norm(rate: f64, cap: f64) -> f64 {
        -(-rate * cap).exp_m1()
    }

    pub fn cdf(&self, u: f64) -> f64 {
        match *self {
            Demand::Uniform { a, b } => ((u - a) / (b - a)).clamp(0.0, 1.0),
            Demand::TruncatedExponential { rate, cap } => {
                if u <= 0.0 {
                    0.0
                } else if u >= cap {
                    1.0
                } else {
                    -(-rate * u).exp_m1() / Self::exp_norm(rate, cap)
                }
            }
        }
    }

    pub fn pdf(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        if u < lo || u > hi {
            return 0.0;
        }
        match *self {
            Demand::Uniform { a, b } => 1.0 / (b - a),
            Demand::TruncatedExponential { rate, cap } => rate * (-rate * u).exp() / Self::exp_norm(rate, cap),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match *self {
            Demand::Uniform { a, b } => a + p * (b - a),
            Demand::TruncatedExponential { rate, cap } => -(-p * Self::exp_norm(rate, cap)).ln_1p() / rate,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Demand::Uniform { a, b } => 0.5 * (a + b),
            Demand::TruncatedExponential { rate, cap } => {
                let z = Self::exp_norm(rate, cap);
                1.0 / rate - cap * (-rate * cap).exp() / z
            }
        }
    }

    /// `E[(y - D)^+] = int_{-inf}^{y} F(u) du`.
    pub fn shortfall_below(&self, y: f64) -> f64 {
        let (lo, hi) = self.support();
        if y <= lo {
            return 0.0;
        }
        if y >= hi {
            return y - self.mean();
        }
        match *self {
            Demand::Uniform { a, b } => (y - a).powi(2) / (2.0 * (b - a)),
            Demand::TruncatedExponential { rate, cap } => (y + (-rate * y).exp_m1() / rate) / Self::exp_norm(rate, cap),
        }
    }

    /// Newsvendor loss `L(y) = h E(y - D)^+ + b E(D - y)^+`.
    pub fn newsvendor_loss(&self, y: f64, h: f64, b: f64) -> f64 {
        let over = self.shortfall_below(y);
        let under = over - y + self.mean();
        h * over + b * under.max(0.0)
    }

    /// `L'(y) = h F(y) - b (1 - F(y))`.
    pub fn newsvendor_slope(&self, y: f64, h: f64, b: f64) -> f64 {
        let f = self.cdf(y);
        h * f - b * (1.0 - f)
    }

    /// Largest density value (Lipschitz constant of the CDF).
    pub fn max_density(&self) -> f64 {
        match *self {
            Demand::Uniform { a, b } => 1.0 / (b - a),
            Demand::TruncatedExponential { rate, cap } => rate / Self::exp_norm(rate, cap),
        }
    }

    /// Smallest density value on `[lo, hi]`; zero if the interval leaves
    /// the support.
    pub fn min_density_on(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.support();
        if lo < a || hi > b {
            return 0.0;
        }
        match *self {
            Demand::Uniform { .. } => self.max_density(),
            Demand::TruncatedExponential { .. } => self.pdf(hi),
        }
    }

    /// `K` midpoint quantile nodes, each carrying weight `1/K`.
    pub fn quadrature(&self, k: usize) -> Vec<f64> {
        (0..k).map(|j| self.quantile((j as f64 + 0.5) / k as f64)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<Demand> {
        vec![
            Demand::Uniform { a: 0.0, b: 1.0 },
            Demand::Uniform { a: -8.0, b: 8.0 },
            Demand::TruncatedExponential { rate: 0.3, cap: 12.0 },
        ]
    }

    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..n).map(|k| f(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn newsvendor_example() {
        let d = Demand::Uniform { a: 0.0, b: 1.0 };
        assert!((d.newsvendor_loss(0.5, 1.0, 1.0) - 0.25).abs() < 1e-15);
        assert!((d.newsvendor_slope(5.0, 2.0, 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for d in families() {
            let (lo, hi) = d.support();
            let mass = integrate(|u| d.pdf(u), lo, hi, 200_000);
            assert!((mass - 1.0).abs() < 1e-6, "{d:?}");
            let mean = integrate(|u| u * d.pdf(u), lo, hi, 200_000);
            assert!((mean - d.mean()).abs() < 1e-6, "{d:?}");
            for y in [lo - 1.0, lo + 0.3 * (hi - lo), 0.5 * (lo + hi), hi + 2.0] {
                let direct = integrate(|u| (y - u).max(0.0) * d.pdf(u), lo, hi, 200_000);
                assert!((d.shortfall_below(y) - direct).abs() < 1e-6, "{d:?} y={y}");
                let loss = integrate(|u| (2.0 * (y - u).max(0.0) + 3.0 * (u - y).max(0.0)) * d.pdf(u), lo, hi, 200_000);
                assert!((d.newsvendor_loss(y, 2.0, 3.0) - loss).abs() < 1e-5, "{d:?} y={y}");
            }
            for p in [0.01, 0.3, 0.77, 0.999] {
                assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_slope_is_derivative_and_monotone() {
        for d in families() {
            let (lo, hi) = d.support();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=200 {
                let y = lo - 1.0 + (hi - lo + 2.0) * k as f64 / 200.0;
                let s = d.newsvendor_slope(y, 1.5, 2.5);
                assert!(s >= prev - 1e-15);
                prev = s;
                let e = 1e-6;
                let fd = (d.newsvendor_loss(y + e, 1.5, 2.5) - d.newsvendor_loss(y - e, 1.5, 2.5)) / (2.0 * e);
                assert!((fd - s).abs() < 1e-5, "{d:?} y={y}");
            }
        }
    }
}
