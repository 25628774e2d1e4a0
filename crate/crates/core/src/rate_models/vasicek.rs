use serde::{Deserialize, Serialize};

use super::family::{DiscountedFamily, LawFamily};
use super::gaussian::GaussianMoments;
use crate::error::{Error, Result};

/// `dr = a (b - r) dt + sigma dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VasicekParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// `1 - exp(-x)` for `x >= 0`.
pub(crate) fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `exp(-x) - 1 + x`, accurate for small `x`.
pub(crate) fn exp_m1_plus(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..20 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

impl VasicekParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidModel(format!("Vasicek speed a must be positive, got {}", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::InvalidModel(format!("Vasicek level b must be finite, got {}", self.b)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidModel(format!("Vasicek sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn mean(&self, r0: f64, t: f64) -> f64 {
        self.b + (r0 - self.b) * (-self.a * t).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.sigma * self.sigma / (2.0 * self.a) * one_minus_exp(2.0 * self.a * t)
    }

    pub fn stationary(&self) -> (f64, f64) {
        (self.b, self.sigma * self.sigma / (2.0 * self.a))
    }

    pub fn integrated_mean(&self, r0: f64, t: f64) -> f64 {
        self.b * t + (r0 - self.b) / self.a * one_minus_exp(self.a * t)
    }

    pub fn integrated_variance(&self, t: f64) -> f64 {
        let (a, s2) = (self.a, self.sigma * self.sigma);
        let x = a * t;
        let e = one_minus_exp(x);
        (s2 / (a * a * a) * (exp_m1_plus(x) - 0.5 * e * e)).max(0.0)
    }

    pub(crate) fn moments(&self, t: f64) -> GaussianMoments {
        let (a, b, s2) = (self.a, self.b, self.sigma * self.sigma);
        let e = one_minus_exp(a * t);
        let int_decay = e / a;
        GaussianMoments {
            decay: (-a * t).exp(),
            drift: b * e,
            variance: self.variance(t),
            int_decay,
            int_drift: b * exp_m1_plus(a * t) / a,
            int_variance: self.integrated_variance(t),
            cross: s2 / (2.0 * a * a) * e * e,
        }
    }

    pub(crate) fn law_family(&self, t: f64) -> LawFamily {
        self.moments(t).law_family()
    }

    pub(crate) fn discounted_family(&self, t: f64, n: f64) -> DiscountedFamily {
        self.moments(t).discounted_family(n)
    }

    /// The bond moment in the expanded closed form obtained by substituting
    /// the integrated mean and variance, kept as an independent check of
    /// `exp(-n * mean + n^2 / 2 * variance)`.
    pub fn bond_laplace_expanded(&self, r0: f64, n: f64, t: f64) -> f64 {
        let (a, b, s2) = (self.a, self.b, self.sigma * self.sigma);
        let e = one_minus_exp(a * t);
        let exponent = (s2 * n * n / (2.0 * a * a) - n * b) * t
            - (s2 * n * n / (2.0 * a * a * a) + n * (r0 - b) / a) * e
            - s2 * n * n / (4.0 * a * a * a) * e * e;
        exponent.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    const P: VasicekParams = VasicekParams { a: 1.0, b: 0.05, sigma: 0.02 };

    #[test]
    fn mean_examples() {
        assert_eq!(P.mean(0.03, 0.0), 0.03);
        assert!((P.mean(0.03, 1.0) - (0.05 - 0.02 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((P.mean(0.03, 1.0) - 0.042642).abs() < 1e-6);
        assert!((P.mean(0.03, 60.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn variance_limit() {
        assert_eq!(P.variance(0.0), 0.0);
        assert!((P.variance(50.0) - 0.0002).abs() < 1e-15);
    }

    #[test]
    fn integrated_mean_matches_quadrature() {
        let v = P.integrated_mean(0.03, 2.0);
        assert!((v - (0.1 - 0.02 * (1.0 - (-2.0f64).exp()))).abs() < 1e-15);
        assert!((v - 0.082707).abs() < 1e-6);
        let q = integrate(|s| P.mean(0.03, s), 0.0, 2.0, &[]);
        assert!((q - v).abs() < 1e-14);
    }

    #[test]
    fn integrated_variance_matches_expanded_form() {
        let (a, s2) = (P.a, P.sigma * P.sigma);
        for t in [1e-3, 0.2, 1.0, 5.0] {
            let e = 1.0 - (-a * t).exp();
            let expanded = s2 * t / (a * a) - s2 / (a * a * a) * e - s2 / (2.0 * a * a * a) * e * e;
            let v = P.integrated_variance(t);
            assert!((v - expanded).abs() < 1e-15 + 1e-9 * v, "t={t}: {v} vs {expanded}");
        }
        // Small-time behaviour: sigma^2 t^3 / 3.
        let t = 1e-4;
        assert!((P.integrated_variance(t) / (s2 * t * t * t / 3.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn expanded_bond_form_agrees() {
        for n in [1.0, 2.0, 3.0] {
            for t in [0.5, 1.0, 4.0] {
                let direct = (-n * P.integrated_mean(0.03, t) + 0.5 * n * n * P.integrated_variance(t)).exp();
                assert!((P.bond_laplace_expanded(0.03, n, t) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn covariance_with_integral_by_quadrature() {
        // Cov(r(t), I(t)) = int_0^t exp(-a (t - u)) Var(u) du.
        let t = 1.7;
        let q = integrate(|u| (-P.a * (t - u)).exp() * P.variance(u), 0.0, t, &[]);
        assert!((P.moments(t).cross - q).abs() < 1e-16);
    }
}
