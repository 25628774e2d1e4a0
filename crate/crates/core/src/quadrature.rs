//! Gauss rules built from three-term recurrences.
//!
//! Every rule here comes out of the Golub-Welsch eigenproblem on the Jacobi
//! matrix of the weight function. The Hermite and Legendre recurrences are
//! known in closed form; arbitrary laws go through Gautschi's Chebyshev
//! algorithm on their moment sequence.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a Gauss rule for the measure with total mass `mass`.
pub fn gauss_from_recurrence(alpha: &[f64], beta: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let n = alpha.len();
    debug_assert_eq!(beta.len(), n);
    if n == 1 {
        return (vec![alpha[0]], vec![mass]);
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = alpha[k];
        if k + 1 < n {
            let off = beta[k + 1].sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss-Hermite rule for the standard normal law (weights sum to one).
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let alpha = vec![0.0; order];
    let beta: Vec<f64> = (0..order).map(|k| if k == 0 { 1.0 } else { k as f64 }).collect();
    let (mut nodes, mut weights) = gauss_from_recurrence(&alpha, &beta, 1.0);
    // Symmetrise: the eigen solver leaves ~1e-16 asymmetry.
    let n = nodes.len();
    for k in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        let w = 0.5 * (weights[k] + weights[n - 1 - k]);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let alpha = vec![0.0; order];
    let beta: Vec<f64> = (0..order)
        .map(|k| {
            if k == 0 {
                2.0
            } else {
                let k2 = (k * k) as f64;
                k2 / (4.0 * k2 - 1.0)
            }
        })
        .collect();
    gauss_from_recurrence(&alpha, &beta, 2.0)
}

const GL_ORDER: usize = 12;
const GL_MAX_PIECE: f64 = 0.25;

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Composite Gauss-Legendre integral of a function that is smooth between
/// the given breakpoints.
pub fn integrate<F>(f: F, lower: f64, upper: f64, breakpoints: &[f64]) -> f64
where
    F: Fn(f64) -> f64,
{
    if upper <= lower {
        return 0.0;
    }
    let (nodes, weights) = gl_rule();
    let mut edges = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(lower);
    edges.extend(breakpoints.iter().copied().filter(|&b| b > lower && b < upper));
    edges.push(upper);
    let mut total = 0.0;
    for piece in edges.windows(2) {
        let (a, b) = (piece[0], piece[1]);
        let chunks = ((b - a) / GL_MAX_PIECE).ceil().max(1.0) as usize;
        let width = (b - a) / chunks as f64;
        for c in 0..chunks {
            let lo = a + c as f64 * width;
            let half = 0.5 * width;
            let mid = lo + half;
            let mut s = 0.0;
            for (x, w) in nodes.iter().zip(weights) {
                s += w * f(mid + half * x);
            }
            total += half * s;
        }
    }
    total
}

/// Recurrence coefficients of the orthogonal polynomials of a measure given
/// its moments `m_0 .. m_{2n-1}` (Gautschi's Chebyshev algorithm).
///
/// Returns `None` when the moment sequence is numerically not positive
/// definite at the requested order.
pub fn chebyshev_recurrence(moments: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = moments.len() / 2;
    if n == 0 || moments[0] <= 0.0 {
        return None;
    }
    let width = 2 * n;
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut prev = vec![0.0; width];
    let mut cur: Vec<f64> = moments[..width].to_vec();
    alpha[0] = moments[1] / moments[0];
    beta[0] = moments[0];
    for k in 1..n {
        let mut next = vec![0.0; width];
        for l in k..(width - k) {
            next[l] = cur[l + 1] - alpha[k - 1] * cur[l] - beta[k - 1] * prev[l];
        }
        if !(next[k] > 0.0) || !next[k].is_finite() {
            return None;
        }
        alpha[k] = next[k + 1] / next[k] - cur[k] / cur[k - 1];
        beta[k] = next[k] / cur[k - 1];
        if !alpha[k].is_finite() || !(beta[k] > 0.0) {
            return None;
        }
        prev = cur;
        cur = next;
    }
    Some((alpha, beta))
}

/// Raw moments `E[Y^r]`, `r = 0..count`, from cumulants `kappa[r-1] = k_r`.
pub fn moments_from_cumulants(cumulants: &[f64], count: usize) -> Vec<f64> {
    let mut binom = vec![vec![1.0f64]];
    for r in 1..count {
        let prev = &binom[r - 1];
        let mut row = vec![1.0; r + 1];
        for j in 1..r {
            row[j] = prev[j - 1] + prev[j];
        }
        binom.push(row);
    }
    let mut mu = vec![0.0; count];
    mu[0] = 1.0;
    for r in 1..count {
        let mut s = 0.0;
        for j in 1..=r {
            s += binom[r - 1][j - 1] * cumulants[j - 1] * mu[r - j];
        }
        mu[r] = s;
    }
    mu
}

/// Gauss rule of at most `order` nodes for a discrete positive measure
/// `(weight, point)`, matching its moments up to degree `2 * order - 1`
/// (discretized Stieltjes procedure on the standardized points).
pub fn reduce_discrete(measure: &[(f64, f64)], order: usize) -> Vec<(f64, f64)> {
    let mass: f64 = measure.iter().map(|p| p.0).sum();
    if measure.len() <= order || !(mass > 0.0) {
        return measure.to_vec();
    }
    let center = measure.iter().map(|p| p.0 * p.1).sum::<f64>() / mass;
    let spread = (measure.iter().map(|p| p.0 * (p.1 - center).powi(2)).sum::<f64>() / mass).sqrt();
    if !(spread > 0.0) {
        return vec![(mass, center)];
    }
    let t: Vec<f64> = measure.iter().map(|p| (p.1 - center) / spread).collect();
    let mut prev = vec![0.0; t.len()];
    let mut cur = vec![1.0; t.len()];
    let (mut alpha, mut beta) = (Vec::with_capacity(order), Vec::with_capacity(order));
    let mut last_norm = mass;
    for k in 0..order {
        let norm: f64 = measure.iter().zip(&cur).map(|(p, q)| p.0 * q * q).sum();
        if !(norm > 1e-13 * mass) {
            break;
        }
        let a = measure.iter().zip(&cur).zip(&t).map(|((p, q), x)| p.0 * x * q * q).sum::<f64>() / norm;
        let b = if k == 0 { mass } else { norm / last_norm };
        alpha.push(a);
        beta.push(b);
        let next: Vec<f64> =
            (0..t.len()).map(|m| (t[m] - a) * cur[m] - if k == 0 { 0.0 } else { b * prev[m] }).collect();
        prev = std::mem::replace(&mut cur, next);
        last_norm = norm;
    }
    let (nodes, weights) = gauss_from_recurrence(&alpha, &beta, mass);
    weights.into_iter().zip(nodes).map(|(w, x)| (w, center + spread * x)).collect()
}
