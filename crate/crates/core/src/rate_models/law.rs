use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::{chebyshev_recurrence, gauss_from_recurrence, gauss_hermite, moments_from_cumulants};

/// Distribution of the short rate at a future time given its present value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TransitionLaw {
    PointMass {
        value: f64,
    },
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// `scale * X` with `X` noncentral chi-squared.
    ScaledNoncentralChiSquared {
        scale: f64,
        dof: f64,
        noncentrality: f64,
    },
}

/// How a [`RateQuadrature`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    Exact,
    GaussHermite,
    /// Gauss rule from the moment sequence of the law.
    Moments,
    /// Equal-mass strata represented by their medians; used only when the
    /// moment recurrence breaks down.
    Stratified,
}

/// Discrete probability measure standing in for a transition law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub method: QuadratureMethod,
}

impl RateQuadrature {
    pub fn is_fallback(&self) -> bool {
        self.method == QuadratureMethod::Stratified
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|x| (x - m) * (x - m))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl TransitionLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::PointMass { value } => value,
            Self::Gaussian { mean, .. } => mean,
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => scale * (dof + noncentrality),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::PointMass { .. } => 0.0,
            Self::Gaussian { variance, .. } => variance,
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => {
                2.0 * scale * scale * (dof + 2.0 * noncentrality)
            }
        }
    }

    /// `E[exp(-lambda X)]`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        match *self {
            Self::PointMass { value } => (-lambda * value).exp(),
            Self::Gaussian { mean, variance } => (-lambda * mean + 0.5 * lambda * lambda * variance).exp(),
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => {
                let z = 2.0 * scale * lambda;
                (-0.5 * dof * z.ln_1p() - 0.5 * noncentrality * z / (1.0 + z)).exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Gaussian { mean, variance } => {
                if variance == 0.0 {
                    return if x >= mean { 1.0 } else { 0.0 };
                }
                0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * variance).sqrt())
            }
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => {
                noncentral_chi_squared_cdf(x / scale, dof, noncentrality)
            }
        }
    }

    /// A discrete measure of `order` nodes matching the law.
    ///
    /// Gaussian laws use Gauss-Hermite nodes, exact for polynomials of degree
    /// `2 * order - 1`. The chi-squared family goes through the moment
    /// recurrence; if that breaks down the order is lowered, and as a last
    /// resort the law is stratified into equal-mass cells.
    pub fn quadrature(&self, order: usize) -> Result<RateQuadrature> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be at least 1"));
        }
        match *self {
            Self::PointMass { value } => {
                Ok(RateQuadrature { nodes: vec![value], weights: vec![1.0], method: QuadratureMethod::Exact })
            }
            Self::Gaussian { mean, variance } => {
                if variance <= 0.0 {
                    return Self::PointMass { value: mean }.quadrature(order);
                }
                let sd = variance.sqrt();
                let (z, weights) = hermite_rule(order);
                Ok(RateQuadrature {
                    nodes: z.iter().map(|z| mean + sd * z).collect(),
                    weights: weights.to_vec(),
                    method: if order == 1 { QuadratureMethod::Exact } else { QuadratureMethod::GaussHermite },
                })
            }
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => {
                if scale == 0.0 {
                    return Self::PointMass { value: 0.0 }.quadrature(order);
                }
                let mean = self.mean();
                if order == 1 {
                    return Self::PointMass { value: mean }.quadrature(1);
                }
                let sd = self.variance().sqrt();
                for k in (2..=order).rev() {
                    if let Some(q) = chi_squared_moment_rule(scale, dof, noncentrality, mean, sd, k) {
                        return Ok(q);
                    }
                }
                Ok(self.stratified(order))
            }
        }
    }

    fn stratified(&self, order: usize) -> RateQuadrature {
        let mean = self.mean();
        let sd = self.variance().sqrt();
        let nodes = (0..order)
            .map(|k| {
                let p = (k as f64 + 0.5) / order as f64;
                quantile(|x| self.cdf(x), p, 0.0, mean + 10.0 * sd + 1e-12)
            })
            .collect();
        RateQuadrature { nodes, weights: vec![1.0 / order as f64; order], method: QuadratureMethod::Stratified }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::PointMass { value } => value,
            Self::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            Self::ScaledNoncentralChiSquared { scale, dof, noncentrality } => {
                scale * sample_noncentral_chi_squared(dof, noncentrality, rng)
            }
        }
    }
}

type Rule = (Vec<f64>, Vec<f64>);

fn hermite_rule(order: usize) -> Rule {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("hermite cache poisoned");
    guard.entry(order).or_insert_with(|| gauss_hermite(order)).clone()
}

/// Gauss-Hermite nodes and weights for the standard normal law.
pub fn standard_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    hermite_rule(order)
}

fn chi_squared_moment_rule(
    scale: f64,
    dof: f64,
    noncentrality: f64,
    mean: f64,
    sd: f64,
    order: usize,
) -> Option<RateQuadrature> {
    let count = 2 * order;
    // Cumulants of scale * X are scale^r 2^(r-1) (r-1)! (dof + r * noncentrality);
    // standardising divides the r-th by sd^r.
    let mut cumulants = vec![0.0; count];
    let mut factorial = 1.0;
    for r in 1..=count {
        if r > 1 {
            factorial *= (r - 1) as f64;
        }
        let ratio = (scale / sd).powi(r as i32);
        cumulants[r - 1] = ratio * 2f64.powi(r as i32 - 1) * factorial * (dof + r as f64 * noncentrality);
    }
    cumulants[0] = 0.0;
    cumulants[1] = 1.0;
    let moments = moments_from_cumulants(&cumulants, count);
    let (alpha, beta) = chebyshev_recurrence(&moments)?;
    let (z, w) = gauss_from_recurrence(&alpha, &beta, 1.0);
    let nodes: Vec<f64> = z.iter().map(|z| mean + sd * z).collect();
    let tiny = -1e-12 * mean.abs().max(sd);
    if nodes.iter().any(|&x| !x.is_finite() || x < tiny) || w.iter().any(|&w| !(w >= 0.0)) {
        return None;
    }
    let total: f64 = w.iter().sum();
    Some(RateQuadrature {
        nodes: nodes.into_iter().map(|x| x.max(0.0)).collect(),
        weights: w.into_iter().map(|w| w / total).collect(),
        method: QuadratureMethod::Moments,
    })
}

fn noncentral_chi_squared_cdf(x: f64, dof: f64, noncentrality: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * noncentrality;
    if half == 0.0 {
        return gamma_lr(0.5 * dof, 0.5 * x);
    }
    // Poisson mixture of central chi-squared laws, summed outward from the mode.
    let mode = half.floor();
    let log_pois = |k: f64| -half + k * half.ln() - ln_gamma(k + 1.0);
    let term = |k: f64| log_pois(k).exp() * gamma_lr(0.5 * dof + k, 0.5 * x);
    let mut total = term(mode);
    let mut k = mode + 1.0;
    loop {
        let p = log_pois(k).exp();
        total += p * gamma_lr(0.5 * dof + k, 0.5 * x);
        if p < 1e-17 && k > half {
            break;
        }
        k += 1.0;
    }
    let mut k = mode - 1.0;
    while k >= 0.0 {
        let p = log_pois(k).exp();
        total += p * gamma_lr(0.5 * dof + k, 0.5 * x);
        if p < 1e-17 {
            break;
        }
        k -= 1.0;
    }
    total.min(1.0)
}

fn quantile<F: Fn(f64) -> f64>(cdf: F, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    while cdf(hi) < p {
        hi = 2.0 * hi + 1e-12;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a noncentral chi-squared variate as a Poisson mixture of gamma laws.
pub fn sample_noncentral_chi_squared<R: Rng + ?Sized>(dof: f64, noncentrality: f64, rng: &mut R) -> f64 {
    let extra = if noncentrality > 0.0 {
        Poisson::new(0.5 * noncentrality).expect("positive Poisson mean").sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * dof + extra;
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, 2.0).expect("positive gamma shape").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_quadrature_matches_moments() {
        let law = TransitionLaw::Gaussian { mean: 0.04, variance: 1e-4 };
        let q = law.quadrature(8).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((q.mean() - 0.04).abs() < 1e-12 * 1.04);
        assert!((q.variance() - 1e-4).abs() < 1e-15);
        let single = law.quadrature(1).unwrap();
        assert_eq!(single.nodes, vec![0.04]);
        assert_eq!(single.weights, vec![1.0]);
    }

    #[test]
    fn chi_squared_quadrature_matches_moments_and_laplace() {
        let law = TransitionLaw::ScaledNoncentralChiSquared { scale: 0.002, dof: 16.0, noncentrality: 9.0 };
        let q = law.quadrature(8).unwrap();
        assert_eq!(q.method, QuadratureMethod::Moments);
        assert!((q.mean() - law.mean()).abs() < 1e-12);
        assert!((q.variance() - law.variance()).abs() < 1e-10 * law.variance().max(1e-12) + 1e-16);
        for lambda in [1.0, 10.0, 50.0] {
            let approx = q.expectation(|x| (-lambda * x).exp());
            assert!((approx - law.laplace(lambda)).abs() < 1e-8, "lambda {lambda}");
        }
        assert!(q.nodes.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn low_dof_chi_squared_still_yields_valid_rule() {
        let law = TransitionLaw::ScaledNoncentralChiSquared { scale: 0.01, dof: 0.4, noncentrality: 0.05 };
        let q = law.quadrature(8).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.nodes.iter().all(|&x| x >= 0.0 && x.is_finite()));
        if !q.is_fallback() {
            assert!((q.mean() - law.mean()).abs() < 1e-4);
        }
    }

    #[test]
    fn stratified_rule_is_close() {
        let law = TransitionLaw::ScaledNoncentralChiSquared { scale: 0.002, dof: 6.0, noncentrality: 4.0 };
        let q = law.stratified(64);
        assert!((q.mean() - law.mean()).abs() / law.mean() < 0.01);
    }

    #[test]
    fn noncentral_cdf_reduces_to_gamma() {
        let c = noncentral_chi_squared_cdf(3.0, 4.0, 0.0);
        assert!((c - gamma_lr(2.0, 1.5)).abs() < 1e-15);
        // P(X <= x) for dof 2 noncentrality 1 at x = 2, by numerical integration of the density.
        let dens = |y: f64| {
            let mut s = 0.0;
            for k in 0..60 {
                let kf = k as f64;
                let lp = -0.5 + kf * 0.5f64.ln() - ln_gamma(kf + 1.0);
                let a = 1.0 + kf;
                s += (lp + (a - 1.0) * (0.5 * y).ln() - 0.5 * y - ln_gamma(a)).exp() * 0.5;
            }
            s
        };
        let v = crate::quadrature::integrate(dens, 0.0, 2.0, &[]);
        assert!((noncentral_chi_squared_cdf(2.0, 2.0, 1.0) - v).abs() < 1e-10);
    }

    #[test]
    fn noncentral_sampler_moments() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let (dof, nc) = (3.0, 2.0);
        let xs: Vec<f64> = (0..n).map(|_| sample_noncentral_chi_squared(dof, nc, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (2.0 * (dof + 2.0 * nc) / n as f64).sqrt();
        assert!((mean - (dof + nc)).abs() < 4.0 * se);
        assert!((var - 2.0 * (dof + 2.0 * nc)).abs() / (2.0 * (dof + 2.0 * nc)) < 0.03);
    }
}
