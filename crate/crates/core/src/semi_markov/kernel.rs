use serde::{Deserialize, Serialize};

use super::sojourn::SojournDistribution;
use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Markov renewal kernel `Q_ij(t) = p_ij * G_ij(t)`.
///
/// A row of `P` that is entirely zero marks an absorbing state (`H_i = 0`).
/// Self-transitions are only accepted in the single-state case, where a
/// renewal back into the same regime is the only way to give it a sojourn law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParts")]
pub struct SemiMarkovKernel {
    embedded: Vec<Vec<f64>>,
    sojourn: Vec<Vec<Option<SojournDistribution>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelParts {
    embedded: Vec<Vec<f64>>,
    sojourn: Vec<Vec<Option<SojournDistribution>>>,
}

impl TryFrom<KernelParts> for SemiMarkovKernel {
    type Error = Error;

    fn try_from(parts: KernelParts) -> Result<Self> {
        Self::new(parts.embedded, parts.sojourn)
    }
}

impl SemiMarkovKernel {
    pub fn new(embedded: Vec<Vec<f64>>, sojourn: Vec<Vec<Option<SojournDistribution>>>) -> Result<Self> {
        let m = embedded.len();
        if m == 0 {
            return Err(Error::InvalidKernel("kernel needs at least one state".into()));
        }
        if sojourn.len() != m {
            return Err(Error::InvalidKernel(format!("sojourn table has {} rows for {m} states", sojourn.len())));
        }
        for (i, (row, laws)) in embedded.iter().zip(&sojourn).enumerate() {
            if row.len() != m || laws.len() != m {
                return Err(Error::InvalidKernel(format!("row {i} does not have {m} entries")));
            }
            let mut sum = 0.0;
            for (j, (&p, law)) in row.iter().zip(laws).enumerate() {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidKernel(format!("p[{i}][{j}] = {p} is not a probability")));
                }
                if p > 0.0 {
                    if i == j && m > 1 {
                        return Err(Error::InvalidKernel(format!(
                            "self-transition p[{i}][{i}] = {p}; virtual transitions are not allowed"
                        )));
                    }
                    match law {
                        Some(law) => law.validate()?,
                        None => {
                            return Err(Error::InvalidKernel(format!(
                                "edge {i}->{j} has probability {p} but no sojourn law"
                            )))
                        }
                    }
                }
                sum += p;
            }
            if sum != 0.0 && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidKernel(format!("row {i} of P sums to {sum}, expected 1")));
            }
        }
        Ok(Self { embedded, sojourn })
    }

    /// A kernel where every state is left at once for `next[i]` after a
    /// sojourn drawn from `law[i]`.
    pub fn alternating(next: &[usize], law: &[SojournDistribution]) -> Result<Self> {
        let m = next.len();
        let mut p = vec![vec![0.0; m]; m];
        let mut g = vec![vec![None; m]; m];
        for i in 0..m {
            p[i][next[i]] = 1.0;
            g[i][next[i]] = Some(law[i]);
        }
        Self::new(p, g)
    }

    pub fn state_count(&self) -> usize {
        self.embedded.len()
    }

    pub fn check_state(&self, i: usize) -> Result<()> {
        if i < self.state_count() {
            Ok(())
        } else {
            Err(Error::StateIndex { index: i, count: self.state_count() })
        }
    }

    pub fn embedded(&self, i: usize, j: usize) -> f64 {
        self.embedded[i][j]
    }

    pub fn embedded_matrix(&self) -> &[Vec<f64>] {
        &self.embedded
    }

    pub fn sojourn(&self, i: usize, j: usize) -> Option<&SojournDistribution> {
        if self.embedded[i][j] > 0.0 {
            self.sojourn[i][j].as_ref()
        } else {
            None
        }
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.embedded[i].iter().all(|&p| p == 0.0)
    }

    fn edges(&self, i: usize) -> impl Iterator<Item = (usize, f64, &SojournDistribution)> {
        self.embedded[i].iter().zip(&self.sojourn[i]).enumerate().filter_map(|(j, (&p, g))| {
            if p > 0.0 {
                g.as_ref().map(|g| (j, p, g))
            } else {
                None
            }
        })
    }

    /// `Q_ij(t)`.
    pub fn kernel_cdf(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        self.check_state(i)?;
        self.check_state(j)?;
        Ok(self.q(i, j, t))
    }

    /// `dQ_ij/dt`; the right limit at `t = 0`.
    pub fn kernel_density(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        self.check_state(i)?;
        self.check_state(j)?;
        Ok(self.q_dot(i, j, t))
    }

    /// `H_i(t)`, the probability of leaving `i` within `t`.
    pub fn unconditional_sojourn(&self, i: usize, t: f64) -> Result<f64> {
        self.check_state(i)?;
        Ok(self.edges(i).map(|(_, p, g)| p * g.cdf(t)).sum())
    }

    pub(crate) fn q(&self, i: usize, j: usize, t: f64) -> f64 {
        match self.sojourn(i, j) {
            Some(g) => self.embedded[i][j] * g.cdf(t),
            None => 0.0,
        }
    }

    pub(crate) fn q_dot(&self, i: usize, j: usize, t: f64) -> f64 {
        match self.sojourn(i, j) {
            Some(g) => self.embedded[i][j] * g.pdf(t),
            None => 0.0,
        }
    }

    /// `1 - H_i(t)` without cancellation.
    pub(crate) fn survival(&self, i: usize, t: f64) -> f64 {
        if self.is_absorbing(i) {
            return 1.0;
        }
        self.edges(i).map(|(_, p, g)| p * g.sf(t)).sum()
    }

    /// `Q_ij(b) - Q_ij(a)` computed from survival differences.
    pub(crate) fn q_increment(&self, i: usize, j: usize, a: f64, b: f64) -> f64 {
        match self.sojourn(i, j) {
            Some(g) => self.embedded[i][j] * (g.sf(a) - g.sf(b)),
            None => 0.0,
        }
    }

    pub(crate) fn successors(&self, i: usize) -> impl Iterator<Item = (usize, f64, &SojournDistribution)> {
        self.edges(i)
    }

    pub(crate) fn mean_sojourn(&self, i: usize) -> f64 {
        self.edges(i).map(|(_, p, g)| p * g.mean()).sum()
    }
}

/// Present state of the regime process and the time since it was entered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardState {
    pub state: usize,
    pub backward: f64,
}

impl BackwardState {
    pub fn new(state: usize, backward: f64) -> Self {
        Self { state, backward }
    }

    pub fn fresh(state: usize) -> Self {
        Self { state, backward: 0.0 }
    }

    /// Checks the index and that `H_state(backward) < 1`; returns the survival
    /// `1 - H_state(backward)`.
    pub fn conditioning(&self, kernel: &SemiMarkovKernel) -> Result<f64> {
        kernel.check_state(self.state)?;
        if !(self.backward.is_finite() && self.backward >= 0.0) {
            return Err(Error::invalid(format!("backward time {} must be >= 0", self.backward)));
        }
        let survival = kernel.survival(self.state, self.backward);
        if survival <= 1e-12 {
            return Err(Error::DegenerateConditioning { state: self.state, backward: self.backward, survival });
        }
        Ok(survival)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(rate: f64) -> SemiMarkovKernel {
        let e = SojournDistribution::Exponential { rate };
        SemiMarkovKernel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![None, Some(e)], vec![Some(e), None]])
            .unwrap()
    }

    fn three_state() -> SemiMarkovKernel {
        let e = SojournDistribution::Exponential { rate: 2.0 };
        let w = SojournDistribution::Weibull { shape: 2.0, scale: 1.0 };
        SemiMarkovKernel::new(
            vec![vec![0.0, 0.4, 0.6], vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0]],
            vec![vec![None, Some(e), Some(w)], vec![Some(w), None, None], vec![Some(e), Some(e), None]],
        )
        .unwrap()
    }

    #[test]
    fn deserialization_validates() {
        let k = two_state(1.5);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<SemiMarkovKernel>(&json).unwrap(), k);
        let bad = json.replacen("1.0", "0.9", 1);
        let err = serde_json::from_str::<SemiMarkovKernel>(&bad).unwrap_err();
        assert!(err.to_string().contains("sums to 0.9"), "{err}");
    }

    #[test]
    fn kernel_cdf_examples() {
        let k = three_state();
        assert_eq!(k.kernel_cdf(0, 1, 0.0).unwrap(), 0.0);
        assert!((k.kernel_cdf(0, 1, f64::INFINITY).unwrap() - 0.4).abs() < 1e-15);
        let expected = 0.4 * (1.0 - (-2.0f64).exp());
        assert!((k.kernel_cdf(0, 1, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.34587).abs() < 1e-5);
        assert!(matches!(k.kernel_cdf(3, 0, 1.0), Err(Error::StateIndex { .. })));
    }

    #[test]
    fn kernel_density_examples() {
        let k = three_state();
        let v = k.kernel_density(0, 1, 0.5).unwrap();
        assert!((v - 0.4 * 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.29430).abs() < 1e-5);
        let eps = 1e-6;
        let fd = (k.q(0, 1, 0.5 + eps) - k.q(0, 1, 0.5 - eps)) / (2.0 * eps);
        assert!((fd - v).abs() < 1e-8);
        assert_eq!(k.kernel_density(1, 2, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn unconditional_sojourn_examples() {
        let law = SojournDistribution::Exponential { rate: 1.0 };
        let single = SemiMarkovKernel::new(vec![vec![1.0]], vec![vec![Some(law)]]).unwrap();
        assert_eq!(single.unconditional_sojourn(0, 0.0).unwrap(), 0.0);
        let v = single.unconditional_sojourn(0, 1.0).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let k = three_state();
        for i in 0..3 {
            assert!((k.unconditional_sojourn(i, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_on_grid() {
        let k = three_state();
        for i in 0..3 {
            let mut prev_h = 0.0;
            for step in 0..500 {
                let t = step as f64 * 0.01;
                let h = k.unconditional_sojourn(i, t).unwrap();
                assert!(h >= prev_h && h <= 1.0);
                prev_h = h;
                for j in 0..3 {
                    assert!(k.q(i, j, t + 0.01) >= k.q(i, j, t));
                }
            }
        }
    }

    #[test]
    fn validation_errors() {
        let e = Some(SojournDistribution::Exponential { rate: 1.0 });
        let bad_sum = SemiMarkovKernel::new(vec![vec![0.0, 0.9], vec![1.0, 0.0]], vec![vec![None, e], vec![e, None]]);
        assert!(matches!(bad_sum, Err(Error::InvalidKernel(_))));
        let self_jump = SemiMarkovKernel::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec![vec![e, e], vec![e, None]]);
        assert!(self_jump.is_err());
        let missing =
            SemiMarkovKernel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![None, None], vec![e, None]]);
        assert!(missing.is_err());
    }

    #[test]
    fn absorbing_state_never_leaves() {
        let e = Some(SojournDistribution::Exponential { rate: 1.0 });
        let k =
            SemiMarkovKernel::new(vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![vec![None, e], vec![None, None]]).unwrap();
        assert!(k.is_absorbing(1));
        assert_eq!(k.unconditional_sojourn(1, 10.0).unwrap(), 0.0);
        assert_eq!(k.survival(1, 10.0), 1.0);
    }

    #[test]
    fn backward_conditioning() {
        let u = SojournDistribution::Uniform { lower: 0.0, upper: 1.0 };
        let k =
            SemiMarkovKernel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![None, Some(u)], vec![Some(u), None]])
                .unwrap();
        assert!((BackwardState::new(0, 0.25).conditioning(&k).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(BackwardState::new(0, 1.0).conditioning(&k), Err(Error::DegenerateConditioning { .. })));
        assert!(two_state(1.0).check_state(2).is_err());
    }
}
