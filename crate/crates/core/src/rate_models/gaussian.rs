use super::family::{DiscountedFamily, LawFamily};

/// Moments of a Gaussian regime over one segment of length `t`, as affine
/// functions of the starting rate `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GaussianMoments {
    /// `E[r(t)] = drift + decay * x`.
    pub decay: f64,
    pub drift: f64,
    pub variance: f64,
    /// `E[int_0^t r] = int_drift + int_decay * x`.
    pub int_decay: f64,
    pub int_drift: f64,
    pub int_variance: f64,
    /// `Cov(r(t), int_0^t r)`.
    pub cross: f64,
}

impl GaussianMoments {
    pub fn law_family(&self) -> LawFamily {
        LawFamily::Gaussian { decay: self.decay, drift: self.drift, variance: self.variance }
    }

    /// Reweighting by `exp(-n I)` shifts the Gaussian `r(t)` by `-n Cov(r(t), I)`
    /// and leaves its variance unchanged.
    pub fn discounted_family(&self, n: f64) -> DiscountedFamily {
        DiscountedFamily {
            log_bond_constant: -n * self.int_drift + 0.5 * n * n * self.int_variance,
            log_bond_per_rate: -n * self.int_decay,
            law: LawFamily::Gaussian { decay: self.decay, drift: self.drift - n * self.cross, variance: self.variance },
        }
    }
}
