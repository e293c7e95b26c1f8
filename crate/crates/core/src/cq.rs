//! BDF generating polynomials and convolution-quadrature weights.
//!
//! The k-step BDF generating polynomial is
//!
//! ```text
//! τ·δ_k(ξ) = Σ_{j=1}^{k} (1/j)(1 − ξ)^j = Σ_{i=0}^{k} c_i ξ^i
//! ```
//!
//! and the weights of a discrete fractional derivative of order γ are the
//! power-series coefficients of `(τ·δ_k(ξ))^γ`. Weights are stored without the
//! step size; `τ^{-γ}` is applied when the operator is evaluated.

use qd::Quad;

use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;

/// Largest supported BDF step number.
pub const MAX_STEPS: usize = 6;

/// Coefficients of `τ·δ_k(ξ)` in ascending powers of ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct BdfPolynomial {
    k: usize,
    coeffs: Vec<f64>,
}

impl BdfPolynomial {
    pub fn new(k: usize) -> Result<Self> {
        bdf_polynomial(k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients of `p(ξ) = τ·δ_k(ξ) / (1 − ξ) = Σ_{j=1}^{k} (1/j)(1 − ξ)^{j−1}`.
    ///
    /// `(τδ)^m = (1 − ξ)^m p(ξ)^m`; splitting off the pure difference factor is
    /// what lets integer-order derivatives be evaluated without cancellation.
    pub fn reduced_coeffs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for j in 1..=self.k {
            let inv = 1.0 / j as f64;
            // (1 − ξ)^{j−1}
            for i in 0..j {
                out[i] += inv * signed_binomial(j - 1, i);
            }
        }
        out
    }
}

/// Builds the BDF-k generating polynomial `Σ_{j=1}^{k} (1/j)(1 − ξ)^j`.
pub fn bdf_polynomial(k: usize) -> Result<BdfPolynomial> {
    if !(1..=MAX_STEPS).contains(&k) {
        return Err(Error::InvalidStepNumber(k));
    }
    let coeffs = (0..=k)
        .map(|i| {
            let mut acc = CompensatedSum::default();
            for j in i.max(1)..=k {
                acc.add(signed_binomial(j, i) / j as f64);
            }
            acc.value()
        })
        .collect();
    Ok(BdfPolynomial { k, coeffs })
}

/// `(−1)^i · C(n, i)` as a float.
fn signed_binomial(n: usize, i: usize) -> f64 {
    let mut c = 1.0;
    for r in 0..i {
        c = c * (n - r) as f64 / (r + 1) as f64;
    }
    if i % 2 == 1 {
        -c
    } else {
        c
    }
}

/// Power-series coefficients `ω_0..ω_{n_max}` of `(Σ_i c_i ξ^i)^order`.
///
/// Uses the classical recursion obtained by differentiating `P(ξ)^order`:
/// `n·c_0·ω_n = Σ_{j=1}^{min(n,deg)} (order·j − (n − j))·c_j·ω_{n−j}`.
/// Requires `c_0 > 0`.
pub fn power_series(coeffs: &[f64], order: f64, n_max: usize) -> Vec<f64> {
    let c0 = coeffs[0];
    debug_assert!(c0 > 0.0);
    let deg = coeffs.len() - 1;
    let mut w = Vec::with_capacity(n_max + 1);
    w.push(c0.powf(order));
    for n in 1..=n_max {
        let mut acc = CompensatedSum::default();
        for j in 1..=n.min(deg) {
            acc.add((order * j as f64 - (n - j) as f64) * coeffs[j] * w[n - j]);
        }
        w.push(acc.value() / (n as f64 * c0));
    }
    w
}

/// [`cq_weights`] in double-double. The BDF coefficients are rationals over 60
/// for `k ≤ 6` and enter exactly.
pub fn cq_weights_extended(order: f64, k: usize, n_max: usize) -> Result<Vec<Quad>> {
    bdf_polynomial(k)?;
    // 60·δ_i = Σ_j (60/j) C(j, i) (−1)^i
    let mut num = vec![0i64; k + 1];
    for j in 1..=k {
        let mut binom = 1i64;
        for (i, c) in num.iter_mut().enumerate().take(j + 1) {
            let sign = if i % 2 == 0 { 1 } else { -1 };
            *c += sign * (60 / j as i64) * binom;
            binom = binom * (j - i) as i64 / (i + 1) as i64;
        }
    }
    let c: Vec<Quad> = num.iter().map(|&v| Quad::from(v as f64) / Quad::from(60.0)).collect();
    let mut w = Vec::with_capacity(n_max + 1);
    w.push((Quad::from(order) * c[0].ln()).exp());
    for n in 1..=n_max {
        let mut acc = Quad::ZERO;
        for j in 1..=n.min(k) {
            let factor = Quad::from(order) * Quad::from(j as f64) - Quad::from((n - j) as f64);
            acc += factor * c[j] * w[n - j];
        }
        w.push(acc / (Quad::from(n as f64) * c[0]));
    }
    Ok(w)
}

/// Convolution-quadrature weights of `(τ·δ_k)^order`, stored τ-free.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    order: f64,
    k: usize,
    weights: Vec<f64>,
}

impl WeightSequence {
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_max(&self) -> usize {
        self.weights.len() - 1
    }

    /// Discrete convolution of two weight tables, truncated to the shorter one.
    pub fn convolve(&self, other: &WeightSequence) -> Vec<f64> {
        let n = self.n_max().min(other.n_max());
        (0..=n)
            .map(|i| {
                let mut acc = CompensatedSum::default();
                for j in 0..=i {
                    acc.add(self.weights[j] * other.weights[i - j]);
                }
                acc.value()
            })
            .collect()
    }
}

/// Weights `ω_0..ω_{n_max}` of the BDF-k convolution quadrature of the given order.
pub fn cq_weights(order: f64, k: usize, n_max: usize) -> Result<WeightSequence> {
    let poly = bdf_polynomial(k)?;
    if !order.is_finite() {
        return Err(Error::Domain(format!("non-finite CQ order {order}")));
    }
    let weights = power_series(poly.coeffs(), order, n_max);
    Ok(WeightSequence { order, k, weights })
}

/// Evaluates `∂^γ_{τ,k} V^n = τ^{−γ} Σ_{j=0}^{n} ω_j V^{n−j}` where `n = values.len() − 1`.
pub fn discrete_conv_derivative(
    w: &WeightSequence,
    values: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<f64>> {
    let Some(last) = values.last() else {
        return Err(Error::Dimension("no values supplied".into()));
    };
    let n = values.len() - 1;
    if w.n_max() < n {
        return Err(Error::Dimension(format!(
            "weight table holds {} entries, history needs {}",
            w.n_max() + 1,
            n + 1
        )));
    }
    let dim = last.len();
    if values.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("history vectors differ in length".into()));
    }
    let scale = tau.powf(-w.order);
    let out = (0..dim)
        .map(|d| {
            let mut acc = CompensatedSum::default();
            for (j, wj) in w.weights[..=n].iter().enumerate() {
                acc.add(wj * values[n - j][d]);
            }
            scale * acc.value()
        })
        .collect();
    Ok(out)
}
