use serde::{Deserialize, Serialize};

use super::family::{DiscountedFamily, LawFamily};
use super::vasicek::{exp_m1_plus, one_minus_exp};
use crate::error::{Error, Result};

/// `dr = (a - b r) dt + sigma sqrt(r) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl CirParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(Error::InvalidModel(format!("CIR drift a must be >= 0, got {}", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::InvalidModel(format!("CIR reversion b must be finite, got {}", self.b)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidModel(format!("CIR sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `2a / sigma^2`; below one the origin is attainable.
    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.a / (self.sigma * self.sigma)
    }

    /// `(1 - exp(-b t)) / b`, equal to `t` when `b = 0`.
    fn h1(&self, t: f64) -> f64 {
        if self.b == 0.0 {
            t
        } else {
            -(-self.b * t).exp_m1() / self.b
        }
    }

    /// `int_0^t h1`.
    fn h2(&self, t: f64) -> f64 {
        if self.b == 0.0 {
            0.5 * t * t
        } else {
            exp_m1_plus(self.b * t) / (self.b * self.b)
        }
    }

    pub fn mean(&self, r0: f64, t: f64) -> f64 {
        r0 * (-self.b * t).exp() + self.a * self.h1(t)
    }

    pub fn variance(&self, r0: f64, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let h1 = self.h1(t);
        r0 * s2 * (-self.b * t).exp() * h1 + 0.5 * self.a * s2 * h1 * h1
    }

    pub fn stationary(&self) -> Option<(f64, f64)> {
        if self.b > 0.0 {
            let s2 = self.sigma * self.sigma;
            Some((self.a / self.b, self.a * s2 / (2.0 * self.b * self.b)))
        } else {
            None
        }
    }

    /// `(phi, psi)` with `E[exp(-lambda r(t) - mu int_0^t r)] = exp(-a phi - r0 psi)`.
    pub fn phi_psi(&self, lambda: f64, mu: f64, t: f64) -> (f64, f64) {
        if t == 0.0 {
            return (0.0, lambda);
        }
        if lambda == 0.0 && mu == 0.0 {
            return (0.0, 0.0);
        }
        let (b, s2) = (self.b, self.sigma * self.sigma);
        if s2 == 0.0 {
            let (h1, h2) = (self.h1(t), self.h2(t));
            return (lambda * h1 + mu * h2, lambda * (-b * t).exp() + mu * h1);
        }
        let gamma = (b * b + 2.0 * s2 * mu).sqrt();
        if gamma == 0.0 {
            let phi = 2.0 / s2 * (0.5 * s2 * lambda * t).ln_1p();
            let psi = 2.0 * lambda / (s2 * lambda * t + 2.0);
            return (phi, psi);
        }
        // gamma^2 - b^2 = 2 sigma^2 mu: form the smaller of gamma -/+ b by division.
        let (gm, gp) = if b >= 0.0 {
            let gp = gamma + b;
            (2.0 * s2 * mu / gp, gp)
        } else {
            let gm = gamma - b;
            (gm, 2.0 * s2 * mu / gm)
        };
        let q = (-gamma * t).exp();
        let omq = one_minus_exp(gamma * t);
        let d = s2 * lambda * omq + gm * q + gp;
        let log_ratio = (2.0 * gamma).ln() + 0.5 * t * (b - gamma) - d.ln();
        let phi = -2.0 / s2 * log_ratio;
        let psi = (lambda * (gp * q + gm) + 2.0 * mu * omq) / d;
        (phi, psi)
    }

    /// `ln E[exp(-lambda r(t) - mu int_0^t r)]` started at `r0`.
    pub fn log_joint_laplace(&self, r0: f64, lambda: f64, mu: f64, t: f64) -> f64 {
        let (phi, psi) = self.phi_psi(lambda, mu, t);
        -self.a * phi - r0 * psi
    }

    pub fn joint_laplace(&self, r0: f64, lambda: f64, mu: f64, t: f64) -> f64 {
        self.log_joint_laplace(r0, lambda, mu, t).exp()
    }

    /// `E[exp(-lambda r(t))]` from the marginal closed form.
    pub fn laplace_rate(&self, r0: f64, lambda: f64, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let decay = (-self.b * t).exp();
        if s2 == 0.0 {
            return (-lambda * self.mean(r0, t)).exp();
        }
        let den = s2 * lambda * self.h1(t) + 2.0;
        let log = -(2.0 * self.a / s2) * (den / 2.0).ln() - r0 * 2.0 * lambda * decay / den;
        log.exp()
    }

    pub(crate) fn law_family(&self, t: f64) -> LawFamily {
        let s2 = self.sigma * self.sigma;
        let decay = (-self.b * t).exp();
        let h1 = self.h1(t);
        if s2 == 0.0 || t == 0.0 {
            return LawFamily::Gaussian { decay, drift: self.a * h1, variance: 0.0 };
        }
        let scale = 0.25 * s2 * h1;
        LawFamily::ChiSquared { scale, dof: 4.0 * self.a / s2, noncentrality_per_rate: decay / scale }
    }

    /// Bond moment and the law of `r(t)` reweighted by `exp(-n int_0^t r)`.
    ///
    /// The reweighted Laplace transform is
    /// `exp(-a [phi(l, n) - phi(0, n)] - x [psi(l, n) - psi(0, n)])`, which is
    /// again a scaled noncentral chi-squared law with the same degrees of freedom.
    pub(crate) fn discounted_family(&self, t: f64, n: f64) -> DiscountedFamily {
        let (phi, psi) = self.phi_psi(0.0, n, t);
        let s2 = self.sigma * self.sigma;
        let base =
            DiscountedFamily { log_bond_constant: -self.a * phi, log_bond_per_rate: -psi, law: self.law_family(t) };
        if s2 == 0.0 || t == 0.0 || n == 0.0 {
            return base;
        }
        let b = self.b;
        let gamma = (b * b + 2.0 * s2 * n).sqrt();
        let (gm, gp) = if b >= 0.0 {
            let gp = gamma + b;
            (2.0 * s2 * n / gp, gp)
        } else {
            let gm = gamma - b;
            (gm, 2.0 * s2 * n / gm)
        };
        let q = (-gamma * t).exp();
        let omq = one_minus_exp(gamma * t);
        let d0 = gm * q + gp;
        let scale = s2 * omq / (2.0 * d0);
        let per_rate = 8.0 * gamma * gamma * q / (d0 * s2 * omq);
        DiscountedFamily {
            law: LawFamily::ChiSquared { scale, dof: 4.0 * self.a / s2, noncentrality_per_rate: per_rate },
            ..base
        }
    }
}
