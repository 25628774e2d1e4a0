use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rate_models::RegimeRateModel;

/// Uniform lattice of starting rates on which surfaces are tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateGrid {
    lower: f64,
    upper: f64,
    nodes: usize,
}

impl RateGrid {
    pub fn new(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::invalid(format!("rate grid needs lower < upper, got [{lower}, {upper}]")));
        }
        if nodes < 2 {
            return Err(Error::invalid("rate grid needs at least two nodes"));
        }
        Ok(Self { lower, upper, nodes })
    }

    /// Bounds from the stationary laws: `[min(mean - width * sd), max(mean + width * sd)]`
    /// over states. CIR lattices start at zero and end at the stationary gamma
    /// quantile with the upper tail mass of `width` Gaussian deviations.
    /// Explicit bounds in `spec` win.
    pub fn for_model(model: &RegimeRateModel, spec: &RateGridSpec) -> Result<Self> {
        let (lower, upper) = match (spec.lower, spec.upper) {
            (Some(l), Some(u)) => (l, u),
            (l, u) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..model.state_count() {
                    let (mean, var) = model.stationary(i)?.ok_or_else(|| {
                        Error::invalid(format!(
                            "state {i} of the {} model has no stationary law; give explicit rate grid bounds",
                            model.kind_name()
                        ))
                    })?;
                    let sd = var.sqrt();
                    lo = lo.min(mean - spec.width * sd);
                    hi = hi.max(match model {
                        RegimeRateModel::Cir(p) if var > 0.0 => {
                            let s2 = p[i].sigma * p[i].sigma;
                            let tail = 0.5 * erfc(spec.width / std::f64::consts::SQRT_2);
                            Gamma::new(2.0 * p[i].a / s2, 2.0 * p[i].b / s2)
                                .map_err(|e| Error::InvalidModel(format!("stationary law of state {i}: {e}")))?
                                .inverse_cdf(1.0 - tail)
                        }
                        _ => mean + spec.width * sd,
                    });
                }
                if hi - lo < 1e-8 {
                    let pad = 0.05 * hi.abs().max(lo.abs()) + 0.01;
                    lo -= pad;
                    hi += pad;
                }
                if matches!(model, RegimeRateModel::Cir(_)) {
                    lo = lo.max(0.0);
                }
                (l.unwrap_or(lo), u.unwrap_or(hi))
            }
        };
        Self::new(lower, upper, spec.nodes)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.nodes {
            self.upper
        } else {
            self.lower + j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes).map(|j| self.node(j))
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lower && r <= self.upper
    }

    /// Cell index and fractional position of `y`; the fraction leaves
    /// `[0, 1]` for points beyond the edges, giving linear extrapolation.
    #[inline]
    pub fn locate(&self, y: f64) -> (usize, f64) {
        let t = (y - self.lower) / self.spacing();
        let idx = (t.floor().max(0.0) as usize).min(self.nodes - 2);
        (idx, t - idx as f64)
    }

    /// Distance by which `y` falls outside the grid (zero inside).
    pub fn escape(&self, y: f64) -> f64 {
        (self.lower - y).max(y - self.upper).max(0.0)
    }
}

fn default_nodes() -> usize {
    241
}

fn default_width() -> f64 {
    6.0
}

/// How to lay out the rate lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGridSpec {
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Stationary standard deviations on each side when bounds are derived.
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Default for RateGridSpec {
    fn default() -> Self {
        Self { lower: None, upper: None, nodes: default_nodes(), width: default_width() }
    }
}

/// How the rate at the first renewal is coupled to the quantity carried
/// across it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Integrate against the joint law: the discount-reweighted law of the
    /// rate for bond moments, and the pair `(r(s), r(tau))` in the product
    /// moment window.
    #[default]
    Joint,
    /// Treat the discount factor (or `r(s)`) as independent of the rate at
    /// the renewal, multiplying expectations. Only exact without volatility.
    Independent,
}

fn default_order() -> usize {
    6
}

fn default_coverage() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Time step of the renewal march, in years.
    pub step: f64,
    /// Largest time to maturity tabulated.
    pub horizon: f64,
    #[serde(default)]
    pub rate_grid: RateGridSpec,
    /// Nodes per transition-law quadrature.
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    /// Largest tolerated escape of a quadrature node beyond the rate grid,
    /// as a fraction of the grid width.
    #[serde(default = "default_coverage")]
    pub coverage_tolerance: f64,
    #[serde(default)]
    pub coupling: Coupling,
}

impl SolverConfig {
    pub fn new(step: f64, horizon: f64) -> Self {
        Self {
            step,
            horizon,
            rate_grid: RateGridSpec::default(),
            quadrature_order: default_order(),
            coverage_tolerance: default_coverage(),
            coupling: Coupling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("solver step must be positive, got {}", self.step)));
        }
        if self.quadrature_order == 0 {
            return Err(Error::invalid("quadrature order must be at least 1"));
        }
        if !(self.coverage_tolerance >= 0.0) {
            return Err(Error::invalid("coverage tolerance must be >= 0"));
        }
        Ok(())
    }
}
