use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Law of the waiting time in a state given the next state. Times in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SojournDistribution {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    Uniform { lower: f64, upper: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("{name} must be positive and finite, got {v}")))
    }
}

impl SojournDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { rate } => positive("exponential rate", rate),
            Self::Weibull { shape, scale } | Self::Gamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            Self::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower >= 0.0 && upper > lower) {
                    return Err(Error::InvalidKernel(format!(
                        "uniform sojourn needs 0 <= lower < upper, got [{lower}, {upper}]"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => -(-rate * t).exp_m1(),
            Self::Weibull { shape, scale } => -(-(t / scale).powf(shape)).exp_m1(),
            Self::Gamma { shape, scale } => {
                if t.is_infinite() {
                    1.0
                } else {
                    gamma_lr(shape, t / scale)
                }
            }
            Self::Uniform { lower, upper } => ((t - lower) / (upper - lower)).clamp(0.0, 1.0),
        }
    }

    /// Survival function `1 - cdf(t)`, computed without cancellation.
    pub fn sf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::Exponential { rate } => (-rate * t).exp(),
            Self::Weibull { shape, scale } => (-(t / scale).powf(shape)).exp(),
            Self::Gamma { shape, scale } => {
                if t.is_infinite() {
                    0.0
                } else {
                    gamma_ur(shape, t / scale)
                }
            }
            Self::Uniform { lower, upper } => ((upper - t) / (upper - lower)).clamp(0.0, 1.0),
        }
    }

    /// Density; at `t = 0` the right limit (possibly `+inf`).
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 || t.is_infinite() {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Weibull { shape, scale } => {
                if t == 0.0 {
                    return power_law_limit(shape, shape / scale);
                }
                let z = t / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
            Self::Gamma { shape, scale } => {
                if t == 0.0 {
                    return power_law_limit(shape, 1.0 / scale);
                }
                let z = t / scale;
                ((shape - 1.0) * z.ln() - z - ln_gamma(shape)).exp() / scale
            }
            Self::Uniform { lower, upper } => {
                if t >= lower && t <= upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Weibull { shape, scale } => scale * ln_gamma(1.0 + 1.0 / shape).exp(),
            Self::Gamma { shape, scale } => shape * scale,
            Self::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    /// Smallest `t` with `sf(t) <= target`, for `target` in (0, 1].
    pub fn inverse_sf(&self, target: f64) -> Result<f64> {
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::invalid(format!("survival target {target} outside (0, 1]")));
        }
        match *self {
            Self::Exponential { rate } => Ok(-target.ln() / rate),
            Self::Weibull { shape, scale } => Ok(scale * (-target.ln()).powf(1.0 / shape)),
            Self::Uniform { lower, upper } => Ok(upper - target * (upper - lower)),
            Self::Gamma { .. } => invert_decreasing(|t| self.sf(t), target, 0.0, self.mean()),
        }
    }
}

// Density right-limit at 0 for laws behaving like c * t^(shape-1).
fn power_law_limit(shape: f64, at_one: f64) -> f64 {
    if shape < 1.0 {
        f64::INFINITY
    } else if shape == 1.0 {
        at_one
    } else {
        0.0
    }
}

/// Solves `f(t) = target` for a nonincreasing `f` on `[start, inf)` by
/// doubling then bisection.
pub(crate) fn invert_decreasing<F>(f: F, target: f64, start: f64, scale_hint: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if f(start) <= target {
        return Ok(start);
    }
    let mut lo = start;
    let mut width = scale_hint.max(1e-6);
    let mut hi = start + width;
    let mut doublings = 0;
    while f(hi) > target {
        lo = hi;
        width *= 2.0;
        hi = start + width;
        doublings += 1;
        if doublings > 200 || !hi.is_finite() {
            return Err(Error::NumericalRoot {
                target,
                lower: start,
                upper: hi,
                reason: "survival never falls below target".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}
