use super::law::TransitionLaw;

/// Transition law of `r(t)` as a function of the starting rate `x`, for a
/// fixed regime and horizon. Both supported families are affine in `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LawFamily {
    /// Mean `drift + decay * x`, variance independent of `x`.
    Gaussian { decay: f64, drift: f64, variance: f64 },
    /// `scale * chi2'(dof, noncentrality_per_rate * x)`.
    ChiSquared { scale: f64, dof: f64, noncentrality_per_rate: f64 },
}

impl LawFamily {
    pub fn at(&self, x: f64) -> TransitionLaw {
        match *self {
            Self::Gaussian { decay, drift, variance } => {
                let mean = drift + decay * x;
                if variance > 0.0 {
                    TransitionLaw::Gaussian { mean, variance }
                } else {
                    TransitionLaw::PointMass { value: mean }
                }
            }
            Self::ChiSquared { scale, dof, noncentrality_per_rate } => TransitionLaw::ScaledNoncentralChiSquared {
                scale,
                dof,
                noncentrality: noncentrality_per_rate * x.max(0.0),
            },
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }
}

/// `E[exp(-n * int_0^t r) ; r(t) in dy] = exp(log_bond(x)) * law(x)(dy)`:
/// the discount factor moment together with the law of `r(t)` under the
/// measure reweighted by the discount factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountedFamily {
    pub log_bond_constant: f64,
    pub log_bond_per_rate: f64,
    pub law: LawFamily,
}

impl DiscountedFamily {
    pub fn log_bond(&self, x: f64) -> f64 {
        self.log_bond_constant + self.log_bond_per_rate * x
    }
}
