//! Regime-wise short-rate diffusions (Vasicek, Hull-White, CIR) behind one
//! interface: transition laws, bond Laplace transforms, product moments and
//! exact path steps.

mod cir;
mod family;
mod gaussian;
mod hull_white;
mod law;
mod vasicek;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cir::CirParams;
pub use family::{DiscountedFamily, LawFamily};
pub use hull_white::{HullWhiteParams, PiecewiseLinear};
pub use law::{sample_noncentral_chi_squared, standard_hermite, QuadratureMethod, RateQuadrature, TransitionLaw};
pub use vasicek::VasicekParams;

use crate::error::{Error, Result};
use crate::quadrature::reduce_discrete;

/// One diffusion per semi-Markov state, all of the same kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "states", rename_all = "snake_case")]
pub enum RegimeRateModel {
    Vasicek(Vec<VasicekParams>),
    HullWhite(Vec<HullWhiteParams>),
    Cir(Vec<CirParams>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub gaussian_transition: bool,
    pub closed_form_bond_laplace: bool,
    pub integrated_moments: bool,
}

fn check_time(name: &str, t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {t}")))
    }
}

fn check_order(n: u32) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::invalid("moment order n must be >= 1"))
    }
}

impl RegimeRateModel {
    pub fn validate(&self) -> Result<()> {
        if self.state_count() == 0 {
            return Err(Error::InvalidModel("rate model has no states".into()));
        }
        match self {
            Self::Vasicek(p) => p.iter().try_for_each(|p| p.validate()),
            Self::HullWhite(p) => p.iter().try_for_each(|p| p.validate()),
            Self::Cir(p) => p.iter().try_for_each(|p| p.validate()),
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            Self::Vasicek(p) => p.len(),
            Self::HullWhite(p) => p.len(),
            Self::Cir(p) => p.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Vasicek(_) => "Vasicek",
            Self::HullWhite(_) => "Hull-White",
            Self::Cir(_) => "CIR",
        }
    }

    pub fn capabilities(&self) -> Capabilities {
        let gaussian = !matches!(self, Self::Cir(_));
        Capabilities { gaussian_transition: gaussian, closed_form_bond_laplace: true, integrated_moments: gaussian }
    }

    pub fn is_gaussian(&self) -> bool {
        self.capabilities().gaussian_transition
    }

    /// Human-readable notes about parameter regimes that need care.
    pub fn warnings(&self) -> Vec<String> {
        match self {
            Self::Cir(p) => p
                .iter()
                .enumerate()
                .filter(|(_, p)| p.sigma > 0.0 && p.feller_ratio() < 1.0)
                .map(|(i, p)| format!("state {i}: CIR Feller ratio {:.3} < 1, zero is attainable", p.feller_ratio()))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn check_state(&self, i: usize) -> Result<()> {
        if i < self.state_count() {
            Ok(())
        } else {
            Err(Error::StateIndex { index: i, count: self.state_count() })
        }
    }

    /// Law of `r(t)` as an affine family in the starting rate.
    pub fn law_family(&self, i: usize, t: f64) -> Result<LawFamily> {
        self.check_state(i)?;
        check_time("time", t)?;
        Ok(match self {
            Self::Vasicek(p) => p[i].law_family(t),
            Self::HullWhite(p) => p[i].law_family(t),
            Self::Cir(p) => p[i].law_family(t),
        })
    }

    /// Bond moment of order `n` and the discount-reweighted law of `r(t)`.
    pub fn discounted_family(&self, i: usize, t: f64, n: u32) -> Result<DiscountedFamily> {
        self.check_state(i)?;
        check_time("time", t)?;
        check_order(n)?;
        let n = n as f64;
        Ok(match self {
            Self::Vasicek(p) => p[i].discounted_family(t, n),
            Self::HullWhite(p) => p[i].discounted_family(t, n),
            Self::Cir(p) => p[i].discounted_family(t, n),
        })
    }

    pub fn transition_mean(&self, i: usize, r0: f64, t: f64) -> Result<f64> {
        self.check_state(i)?;
        check_time("time", t)?;
        Ok(match self {
            Self::Vasicek(p) => p[i].mean(r0, t),
            Self::HullWhite(p) => p[i].mean(r0, t),
            Self::Cir(p) => p[i].mean(r0, t),
        })
    }

    pub fn transition_variance(&self, i: usize, r0: f64, t: f64) -> Result<f64> {
        self.check_state(i)?;
        check_time("time", t)?;
        Ok(match self {
            Self::Vasicek(p) => p[i].variance(t),
            Self::HullWhite(p) => p[i].variance(t),
            Self::Cir(p) => p[i].variance(r0, t),
        })
    }

    pub fn transition_law(&self, i: usize, r0: f64, t: f64) -> Result<TransitionLaw> {
        Ok(self.law_family(i, t)?.at(r0))
    }

    /// Law of `r` after `dt` given its value at diffusion clock `clock`.
    /// Only Hull-White depends on the clock.
    pub fn transition_law_between(&self, i: usize, r: f64, clock: f64, dt: f64) -> Result<TransitionLaw> {
        match self {
            Self::HullWhite(p) => {
                self.check_state(i)?;
                check_time("clock", clock)?;
                check_time("step", dt)?;
                let (decay, drift, variance) = p[i].transition_moments(clock, clock + dt);
                Ok(LawFamily::Gaussian { decay, drift, variance }.at(r))
            }
            _ => self.transition_law(i, r, dt),
        }
    }

    pub fn transition_quadrature(&self, i: usize, r0: f64, t: f64, order: usize) -> Result<RateQuadrature> {
        self.transition_law(i, r0, t)?.quadrature(order)
    }

    pub fn log_bond_laplace(&self, i: usize, r0: f64, n: u32, s: f64) -> Result<f64> {
        self.check_state(i)?;
        check_time("maturity", s)?;
        check_order(n)?;
        let v = match self {
            Self::Cir(p) => p[i].log_joint_laplace(r0, 0.0, n as f64, s),
            _ => self.discounted_family(i, s, n)?.log_bond(r0),
        };
        if v.is_nan() {
            return Err(Error::Numerical(format!("bond Laplace transform is NaN (state {i}, s {s}, n {n})")));
        }
        Ok(v)
    }

    /// `E[exp(-n int_0^s r)]` for the diffusion of state `i` started at `r0`.
    pub fn bond_laplace(&self, i: usize, r0: f64, n: u32, s: f64) -> Result<f64> {
        Ok(self.log_bond_laplace(i, r0, n, s)?.exp())
    }

    pub fn integrated_mean(&self, i: usize, r0: f64, s: f64) -> Result<f64> {
        self.check_state(i)?;
        check_time("time", s)?;
        match self {
            Self::Vasicek(p) => Ok(p[i].integrated_mean(r0, s)),
            Self::HullWhite(p) => Ok(p[i].integrated_mean(r0, s)),
            Self::Cir(_) => Err(Error::Unsupported { model: "CIR", operation: "integrated_mean" }),
        }
    }

    pub fn integrated_variance(&self, i: usize, r0: f64, s: f64) -> Result<f64> {
        let _ = r0;
        self.check_state(i)?;
        check_time("time", s)?;
        match self {
            Self::Vasicek(p) => Ok(p[i].integrated_variance(s)),
            Self::HullWhite(p) => Ok(p[i].integrated_variance(s)),
            Self::Cir(_) => Err(Error::Unsupported { model: "CIR", operation: "integrated_variance" }),
        }
    }

    /// Slope of `E[r(tau) | r(s)]` in `r(s)`, diffusion clock starting at 0.
    pub fn lag_decay(&self, i: usize, s: f64, tau: f64) -> Result<f64> {
        self.check_state(i)?;
        check_time("time", s)?;
        if tau < s {
            return Err(Error::invalid(format!("later time {tau} precedes {s}")));
        }
        Ok(match self {
            Self::Vasicek(p) => (-p[i].a * (tau - s)).exp(),
            Self::HullWhite(p) => (p[i].k(s) - p[i].k(tau)).exp(),
            Self::Cir(p) => (-p[i].b * (tau - s)).exp(),
        })
    }

    /// `Cov[r(s), r(s + h)] = decay(s, s + h) * Var[r(s)]`.
    pub fn lag_covariance(&self, i: usize, r0: f64, s: f64, h: f64) -> Result<f64> {
        check_time("lag", h)?;
        Ok(self.lag_decay(i, s, s + h)? * self.transition_variance(i, r0, s)?)
    }

    /// `E[r(s) r(s + h)]` within one regime.
    pub fn product_mean(&self, i: usize, r0: f64, s: f64, h: f64) -> Result<f64> {
        let m = self.transition_mean(i, r0, s)? * self.transition_mean(i, r0, s + h)?;
        Ok(m + self.lag_covariance(i, r0, s, h)?)
    }

    /// A rule `(coefficient, node)` with
    /// `E[r(s) g(r(tau))] ~ sum coefficient * g(node)` for `tau >= s`.
    ///
    /// Gaussian regimes use the linear regression of `r(s)` on `r(tau)`, which
    /// is exact; CIR nests the two transition quadratures and compresses the
    /// result back to `order` nodes.
    pub fn mid_window_rule(&self, i: usize, r0: f64, s: f64, tau: f64, order: usize) -> Result<Vec<(f64, f64)>> {
        let early = self.law_family(i, s)?.at(r0);
        let late_law = self.law_family(i, tau)?;
        if let LawFamily::Gaussian { .. } = late_law {
            let late = late_law.at(r0);
            let var_late = late.variance();
            let slope = if var_late > 0.0 { self.lag_decay(i, s, tau)? * early.variance() / var_late } else { 0.0 };
            let (mz, my) = (early.mean(), late.mean());
            let q = late.quadrature(order)?;
            return Ok(q.nodes.iter().zip(&q.weights).map(|(&y, &w)| (w * (mz + slope * (y - my)), y)).collect());
        }
        let outer = early.quadrature(order)?;
        let step = self.law_family(i, tau - s)?;
        let mut rule = Vec::with_capacity(order * order);
        for (&z, &wz) in outer.nodes.iter().zip(&outer.weights) {
            let inner = step.at(z).quadrature(order)?;
            for (&y, &wy) in inner.nodes.iter().zip(&inner.weights) {
                rule.push((wz * z * wy, y));
            }
        }
        Ok(reduce_discrete(&rule, order))
    }

    /// Stationary mean and variance of state `i`, if it has one.
    pub fn stationary(&self, i: usize) -> Result<Option<(f64, f64)>> {
        self.check_state(i)?;
        Ok(match self {
            Self::Vasicek(p) => Some(p[i].stationary()),
            Self::HullWhite(p) => p[i].stationary(),
            Self::Cir(p) => p[i].stationary(),
        })
    }

    /// Draws `r(t + dt)` given `r(t) = r` from the exact transition law.
    pub fn exact_step<R: Rng + ?Sized>(&self, i: usize, r: f64, dt: f64, rng: &mut R) -> Result<f64> {
        self.exact_step_at(i, r, 0.0, dt, rng)
    }

    /// As [`Self::exact_step`] with the diffusion clock at `clock`.
    pub fn exact_step_at<R: Rng + ?Sized>(&self, i: usize, r: f64, clock: f64, dt: f64, rng: &mut R) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("step must be positive, got {dt}")));
        }
        Ok(self.transition_law_between(i, r, clock, dt)?.sample(rng))
    }

    pub fn cir_params(&self, i: usize) -> Result<&CirParams> {
        self.check_state(i)?;
        match self {
            Self::Cir(p) => Ok(&p[i]),
            _ => Err(Error::Unsupported { model: self.kind_name(), operation: "CIR Laplace transform" }),
        }
    }
}

/// `E[exp(-lambda r(t) - mu int_0^t r)]` for a CIR diffusion started at `r0`.
pub fn cir_joint_laplace(params: &CirParams, r0: f64, lambda: f64, mu: f64, t: f64) -> Result<f64> {
    if !(lambda >= 0.0 && mu >= 0.0) {
        return Err(Error::invalid(format!("Laplace arguments must be >= 0, got ({lambda}, {mu})")));
    }
    check_time("time", t)?;
    Ok(params.joint_laplace(r0, lambda, mu, t))
}

/// `E[exp(-lambda r(t))]` for a CIR diffusion started at `r0`.
pub fn cir_laplace_rate(params: &CirParams, r0: f64, lambda: f64, t: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("Laplace argument must be >= 0, got {lambda}")));
    }
    check_time("time", t)?;
    Ok(params.laplace_rate(r0, lambda, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vasicek() -> RegimeRateModel {
        RegimeRateModel::Vasicek(vec![VasicekParams { a: 1.0, b: 0.05, sigma: 0.02 }])
    }

    #[test]
    fn bond_laplace_at_zero_is_one() {
        let models = [
            vasicek(),
            RegimeRateModel::HullWhite(vec![HullWhiteParams::constant(0.05, 1.0, 0.02)]),
            RegimeRateModel::Cir(vec![CirParams { a: 0.04, b: 1.0, sigma: 0.1 }]),
        ];
        for m in &models {
            for n in 1..4 {
                assert_eq!(m.bond_laplace(0, 0.03, n, 0.0).unwrap(), 1.0, "{}", m.kind_name());
            }
        }
    }

    #[test]
    fn gaussian_bond_matches_integral_moments() {
        let m = vasicek();
        for n in 1..4u32 {
            let nf = n as f64;
            for s in [0.3, 1.0, 5.0] {
                let direct = (-nf * m.integrated_mean(0, 0.03, s).unwrap()
                    + 0.5 * nf * nf * m.integrated_variance(0, 0.03, s).unwrap())
                .exp();
                assert!((m.bond_laplace(0, 0.03, n, s).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cir_bond_is_joint_transform_bit_for_bit() {
        let p = CirParams { a: 0.04, b: 1.0, sigma: 0.1 };
        let m = RegimeRateModel::Cir(vec![p]);
        for n in 1..4 {
            for s in [0.25, 1.0, 5.0] {
                let b = m.bond_laplace(0, 0.03, n, s).unwrap();
                let j = cir_joint_laplace(&p, 0.03, 0.0, n as f64, s).unwrap();
                assert_eq!(b.to_bits(), j.to_bits());
            }
        }
        assert!(matches!(m.integrated_mean(0, 0.03, 1.0), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn product_mean_identities() {
        let m = vasicek();
        let (s, r0) = (1.0, 0.03);
        let second = m.transition_mean(0, r0, s).unwrap().powi(2) + m.transition_variance(0, r0, s).unwrap();
        assert!((m.product_mean(0, r0, s, 0.0).unwrap() - second).abs() < 1e-16);
        let start = r0 * m.transition_mean(0, r0, 0.5).unwrap();
        assert!((m.product_mean(0, r0, 0.0, 0.5).unwrap() - start).abs() < 1e-16);
    }

    #[test]
    fn mid_window_rule_reproduces_product_mean() {
        // g(y) = y gives E[r(s) r(tau)].
        for m in [vasicek(), RegimeRateModel::Cir(vec![CirParams { a: 0.04, b: 1.0, sigma: 0.1 }])] {
            let rule = m.mid_window_rule(0, 0.03, 0.7, 1.1, 8).unwrap();
            let v: f64 = rule.iter().map(|(c, y)| c * y).sum();
            let exact = m.product_mean(0, 0.03, 0.7, 0.4).unwrap();
            assert!((v - exact).abs() < 1e-12 * exact, "{}: {v} vs {exact}", m.kind_name());
            let mean: f64 = rule.iter().map(|(c, _)| c).sum();
            assert!((mean - m.transition_mean(0, 0.03, 0.7).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn hull_white_reduces_to_vasicek_everywhere() {
        let v = VasicekParams { a: 1.0, b: 0.05, sigma: 0.02 };
        let vm = RegimeRateModel::Vasicek(vec![v]);
        let hw = RegimeRateModel::HullWhite(vec![HullWhiteParams::constant(v.a * v.b, v.a, v.sigma)]);
        for s in [0.0, 0.4, 1.0, 3.0] {
            let pairs = [
                (vm.transition_mean(0, 0.03, s), hw.transition_mean(0, 0.03, s)),
                (vm.transition_variance(0, 0.03, s), hw.transition_variance(0, 0.03, s)),
                (vm.bond_laplace(0, 0.03, 2, s), hw.bond_laplace(0, 0.03, 2, s)),
                (vm.integrated_mean(0, 0.03, s), hw.integrated_mean(0, 0.03, s)),
                (vm.integrated_variance(0, 0.03, s), hw.integrated_variance(0, 0.03, s)),
                (vm.product_mean(0, 0.03, s, 0.5), hw.product_mean(0, 0.03, s, 0.5)),
            ];
            for (a, b) in pairs {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn state_and_argument_errors() {
        let m = vasicek();
        assert!(matches!(m.transition_mean(1, 0.0, 1.0), Err(Error::StateIndex { .. })));
        assert!(m.transition_mean(0, 0.0, -1.0).is_err());
        assert!(m.bond_laplace(0, 0.0, 0, 1.0).is_err());
        let bad = RegimeRateModel::Vasicek(vec![VasicekParams { a: 0.0, b: 0.05, sigma: 0.02 }]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deserializes_tagged_config() {
        let m: RegimeRateModel =
            serde_json::from_str(r#"{"kind": "cir", "states": [{"a": 0.04, "b": 1.0, "sigma": 0.1}]}"#).unwrap();
        assert_eq!(m.kind_name(), "CIR");
        let hw: RegimeRateModel = serde_json::from_str(
            r#"{"kind": "hull_white", "states": [{"alpha": [[0, 0.05]], "beta": [[0, 1]], "sigma": [[0, 0.02], [2, 0.03]]}]}"#,
        )
        .unwrap();
        hw.validate().unwrap();
    }
}
