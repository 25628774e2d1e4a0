use serde::{Deserialize, Serialize};

use super::family::{DiscountedFamily, LawFamily};
use super::gaussian::GaussianMoments;
use crate::error::{Error, Result};
use crate::quadrature::integrate;

/// Piecewise-linear function of time through `(t, value)` points, constant
/// beyond the first and last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let f = Self { points };
        f.validate("table")?;
        Ok(f)
    }

    pub fn constant(value: f64) -> Self {
        Self { points: vec![(0.0, value)] }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidModel(format!("{name} table is empty")));
        }
        for (k, &(t, v)) in self.points.iter().enumerate() {
            if !(t.is_finite() && v.is_finite() && t >= 0.0) {
                return Err(Error::InvalidModel(format!("{name} table point {k} = ({t}, {v}) is invalid")));
            }
            if k > 0 && t <= self.points[k - 1].0 {
                return Err(Error::InvalidModel(format!("{name} table times must increase strictly")));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn value(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let last = p[p.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let k = p.partition_point(|q| q.0 <= t);
        let (t0, v0) = p[k - 1];
        let (t1, v1) = p[k];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// `int_{t_first}^t f` with constant extrapolation on both sides.
    fn integral_from_first(&self, t: f64) -> f64 {
        let p = &self.points;
        let (t0, v0) = p[0];
        if t <= t0 {
            return v0 * (t - t0);
        }
        let mut acc = 0.0;
        for w in p.windows(2) {
            let ((a, fa), (b, fb)) = (w[0], w[1]);
            if t <= b {
                let ft = fa + (fb - fa) * (t - a) / (b - a);
                return acc + 0.5 * (fa + ft) * (t - a);
            }
            acc += 0.5 * (fa + fb) * (b - a);
        }
        let (tl, vl) = p[p.len() - 1];
        acc + vl * (t - tl)
    }

    /// `int_0^t f`.
    pub fn integral(&self, t: f64) -> f64 {
        self.integral_from_first(t) - self.integral_from_first(0.0)
    }

    fn last_value(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }
}

/// `dr = (alpha(t) - beta(t) r) dt + sigma(t) dW`, time measured from the
/// start of the diffusion segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullWhiteParams {
    pub alpha: PiecewiseLinear,
    pub beta: PiecewiseLinear,
    pub sigma: PiecewiseLinear,
}

impl HullWhiteParams {
    pub fn constant(alpha: f64, beta: f64, sigma: f64) -> Self {
        Self {
            alpha: PiecewiseLinear::constant(alpha),
            beta: PiecewiseLinear::constant(beta),
            sigma: PiecewiseLinear::constant(sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.sigma.validate("sigma")?;
        if self.sigma.points.iter().any(|p| p.1 < 0.0) {
            return Err(Error::InvalidModel("Hull-White sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// `k(t) = int_0^t beta`.
    pub fn k(&self, t: f64) -> f64 {
        self.beta.integral(t)
    }

    fn breakpoints(&self, c0: f64, c1: f64) -> Vec<f64> {
        let mut b: Vec<f64> = [&self.alpha, &self.beta, &self.sigma]
            .iter()
            .flat_map(|f| f.points.iter().map(|p| p.0))
            .filter(|&t| t > c0 && t < c1)
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Mean coefficients and variance of `r(c1)` given `r(c0)`.
    pub(crate) fn transition_moments(&self, c0: f64, c1: f64) -> (f64, f64, f64) {
        let bps = self.breakpoints(c0, c1);
        let k1 = self.k(c1);
        let decay = (-(k1 - self.k(c0))).exp();
        let drift = integrate(|u| (self.k(u) - k1).exp() * self.alpha.value(u), c0, c1, &bps);
        let variance = integrate(
            |u| {
                let s = self.sigma.value(u);
                (2.0 * (self.k(u) - k1)).exp() * s * s
            },
            c0,
            c1,
            &bps,
        );
        (decay, drift, variance.max(0.0))
    }

    /// All segment moments between clock times `c0` and `c1`.
    pub(crate) fn moments_between(&self, c0: f64, c1: f64) -> GaussianMoments {
        let bps = self.breakpoints(c0, c1);
        let (decay, drift, variance) = self.transition_moments(c0, c1);
        let k1 = self.k(c1);
        // g(u) = int_u^c1 exp(-(k(s) - k(u))) ds
        let g = |u: f64| {
            let ku = self.k(u);
            let inner: Vec<f64> = bps.iter().copied().filter(|&b| b > u).collect();
            integrate(|s| (ku - self.k(s)).exp(), u, c1, &inner)
        };
        let int_decay = g(c0);
        let int_drift = integrate(|u| self.alpha.value(u) * g(u), c0, c1, &bps);
        let int_variance = integrate(
            |u| {
                let s = self.sigma.value(u);
                let gu = g(u);
                s * s * gu * gu
            },
            c0,
            c1,
            &bps,
        );
        let cross = integrate(
            |u| {
                let s = self.sigma.value(u);
                (self.k(u) - k1).exp() * s * s * g(u)
            },
            c0,
            c1,
            &bps,
        );
        GaussianMoments { decay, drift, variance, int_decay, int_drift, int_variance: int_variance.max(0.0), cross }
    }

    pub fn mean(&self, r0: f64, t: f64) -> f64 {
        let (decay, drift, _) = self.transition_moments(0.0, t);
        drift + decay * r0
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.transition_moments(0.0, t).2
    }

    pub fn integrated_mean(&self, r0: f64, t: f64) -> f64 {
        let m = self.moments_between(0.0, t);
        m.int_drift + m.int_decay * r0
    }

    pub fn integrated_variance(&self, t: f64) -> f64 {
        self.moments_between(0.0, t).int_variance
    }

    /// Stationary law of the coefficients frozen at their last table values.
    pub fn stationary(&self) -> Option<(f64, f64)> {
        let beta = self.beta.last_value();
        if beta > 0.0 {
            let s = self.sigma.last_value();
            Some((self.alpha.last_value() / beta, s * s / (2.0 * beta)))
        } else {
            None
        }
    }

    pub(crate) fn law_family(&self, t: f64) -> LawFamily {
        let (decay, drift, variance) = self.transition_moments(0.0, t);
        LawFamily::Gaussian { decay, drift, variance }
    }

    pub(crate) fn discounted_family(&self, t: f64, n: f64) -> DiscountedFamily {
        self.moments_between(0.0, t).discounted_family(n)
    }
}
