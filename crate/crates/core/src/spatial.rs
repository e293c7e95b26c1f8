//! Chebyshev–Gauss–Lobatto collocation of the 1-D Dirichlet Laplacian on (−1, 1).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Resolution up to which the spectrum is checked when an operator is built.
const SPECTRUM_CHECK_LIMIT: usize = 64;

/// A real function on `[−1, 1]`.
#[derive(Clone)]
pub struct Profile {
    name: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Profile {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Profile { name: name.into(), func: Arc::new(f) }
    }

    pub fn zero() -> Self {
        Profile::new("0", |_| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Profile::new(format!("{c}"), move |_| c)
    }

    /// `sin(x)·√(1 − x²)`
    pub fn sine_bubble() -> Self {
        Profile::new("sin(x)sqrt(1-x^2)", |x: f64| x.sin() * (1.0 - x * x).max(0.0).sqrt())
    }

    /// `cos(x)·√(1 − x²)`
    pub fn cosine_bubble() -> Self {
        Profile::new("cos(x)sqrt(1-x^2)", |x: f64| x.cos() * (1.0 - x * x).max(0.0).sqrt())
    }

    /// `e^x·(1 + χ_{(0,1)}(x))`; the indicator is open, so `x = 0` gets factor 1.
    pub fn exp_with_indicator() -> Self {
        Profile::new("e^x(1+chi(0,1))", |x: f64| {
            let chi = if x > 0.0 && x < 1.0 { 1.0 } else { 0.0 };
            x.exp() * (1.0 + chi)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.func)(x)
    }

    pub fn is_named_zero(&self) -> bool {
        self.name == "0"
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Profile").field(&self.name).finish()
    }
}

/// `x_j = cos(jπ/M)`, `j = 0..=M`, descending from 1 to −1.
pub fn cgl_nodes(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidResolution(m));
    }
    Ok((0..=m)
        .map(|j| {
            // sin form is exactly antisymmetric about the midpoint
            (PI * (m as f64 - 2.0 * j as f64) / (2.0 * m as f64)).sin()
        })
        .collect())
}

/// First-derivative collocation matrix on the CGL nodes, with the diagonal
/// set by the negative-sum trick.
pub fn differentiation_matrix(m: usize) -> Result<DMatrix<f64>> {
    cgl_nodes(m)?;
    let n = m + 1;
    let c = |j: usize| {
        let base = if j == 0 || j == m { 2.0 } else { 1.0 };
        if j.is_multiple_of(2) {
            base
        } else {
            -base
        }
    };
    let mf = m as f64;
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // x_i − x_j via a product of sines avoids cancellation
                let dx = 2.0
                    * (PI * (i + j) as f64 / (2.0 * mf)).sin()
                    * (PI * (j as f64 - i as f64) / (2.0 * mf)).sin();
                d[(i, j)] = c(i) / c(j) / dx;
            }
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    Ok(d)
}

/// Clenshaw–Curtis weights on the CGL nodes (sum to 2).
pub fn clenshaw_curtis_weights(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidResolution(m));
    }
    let mf = m as f64;
    let theta = |j: usize| PI * j as f64 / mf;
    let mut w = vec![0.0; m + 1];
    if m.is_multiple_of(2) {
        w[0] = 1.0 / (mf * mf - 1.0);
        w[m] = w[0];
        for (j, wj) in w.iter_mut().enumerate().take(m).skip(1) {
            let mut v = 1.0;
            for k in 1..m / 2 {
                v -= 2.0 * (2.0 * k as f64 * theta(j)).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
            v -= (mf * theta(j)).cos() / (mf * mf - 1.0);
            *wj = 2.0 * v / mf;
        }
    } else {
        w[0] = 1.0 / (mf * mf);
        w[m] = w[0];
        for (j, wj) in w.iter_mut().enumerate().take(m).skip(1) {
            let mut v = 1.0;
            for k in 1..=(m - 1) / 2 {
                v -= 2.0 * (2.0 * k as f64 * theta(j)).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
            *wj = 2.0 * v / mf;
        }
    }
    Ok(w)
}

/// Dirichlet Laplacian restricted to interior CGL nodes.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    degree: usize,
    nodes: Vec<f64>,
    matrix: DMatrix<f64>,
    quad_weights: Vec<f64>,
}

impl SpatialOperator {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// All `M + 1` nodes, boundary included.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.degree]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.degree - 1
    }

    /// Clenshaw–Curtis weights at interior nodes.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Quadrature-weighted discrete L² norm of an interior-node vector.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        weighted_l2(&self.quad_weights, v)
    }

    pub fn sample(&self, profile: &Profile) -> DVector<f64> {
        sample(profile, self.interior_nodes())
    }
}

/// `sqrt(Σ w_i v_i²)`
pub fn weighted_l2(weights: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), v.len());
    weights.iter().zip(v).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

/// Square of the differentiation matrix with first and last rows/columns removed.
pub fn laplacian_dirichlet(m: usize) -> Result<SpatialOperator> {
    let d = differentiation_matrix(m)?;
    let d2 = &d * &d;
    let matrix = d2.view((1, 1), (m - 1, m - 1)).into_owned();
    if m <= SPECTRUM_CHECK_LIMIT {
        let max_re = matrix
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max_re < 0.0) {
            return Err(Error::Solver(format!(
                "collocation Laplacian has eigenvalue with real part {max_re}"
            )));
        }
    }
    let cc = clenshaw_curtis_weights(m)?;
    Ok(SpatialOperator {
        degree: m,
        nodes: cgl_nodes(m)?,
        matrix,
        quad_weights: cc[1..m].to_vec(),
    })
}

/// Pointwise evaluation of a profile at the given nodes.
pub fn sample(profile: &Profile, nodes: &[f64]) -> DVector<f64> {
    DVector::from_iterator(nodes.len(), nodes.iter().map(|&x| profile.eval(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn node_examples() {
        let n2 = cgl_nodes(2).unwrap();
        assert_eq!(n2, vec![1.0, 0.0, -1.0]);
        let n3 = cgl_nodes(3).unwrap();
        for (a, b) in n3.iter().zip([1.0, 0.5, -0.5, -1.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        let h = 0.5f64.sqrt();
        for (a, b) in cgl_nodes(4).unwrap().iter().zip([1.0, h, 0.0, -h, -1.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(cgl_nodes(1), Err(Error::InvalidResolution(1)));
    }

    #[test]
    fn nodes_strictly_decreasing() {
        for m in 2..70 {
            let x = cgl_nodes(m).unwrap();
            assert_eq!(x[0], 1.0);
            assert_eq!(x[m], -1.0);
            assert!(x.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn differentiation_examples() {
        for m in [2, 5, 8, 16, 32] {
            let d = differentiation_matrix(m).unwrap();
            let x = DVector::from_vec(cgl_nodes(m).unwrap());
            let ones = DVector::from_element(m + 1, 1.0);
            assert!((&d * &ones).amax() < 1e-13);
            let dx = &d * &x;
            assert!(dx.iter().all(|v| (v - 1.0).abs() < 1e-12), "m={m}");
        }
        let d = differentiation_matrix(8).unwrap();
        let x = cgl_nodes(8).unwrap();
        let f = DVector::from_iterator(9, x.iter().map(|v| v.powi(5)));
        let df = &d * f;
        for (v, xi) in df.iter().zip(&x) {
            assert!((v - 5.0 * xi.powi(4)).abs() < 1e-10);
        }
    }

    #[test]
    fn polynomial_exactness() {
        for m in [6, 12, 24] {
            let d = differentiation_matrix(m).unwrap();
            let x = cgl_nodes(m).unwrap();
            for p in 0..=m {
                let f = DVector::from_iterator(m + 1, x.iter().map(|v| v.powi(p as i32)));
                let df = &d * &f;
                let scale = f.amax().max(1.0) * (p as f64).max(1.0);
                for (v, xi) in df.iter().zip(&x) {
                    let exact = if p == 0 { 0.0 } else { p as f64 * xi.powi(p as i32 - 1) };
                    assert!((v - exact).abs() < 1e-10 * scale * m as f64, "m={m} p={p}");
                }
            }
        }
    }

    #[test]
    fn second_derivative_of_square() {
        for m in [2, 4, 9, 32] {
            let d = differentiation_matrix(m).unwrap();
            let x = cgl_nodes(m).unwrap();
            let f = DVector::from_iterator(m + 1, x.iter().map(|v| v * v));
            let d2f = &d * (&d * f);
            for v in d2f.iter().skip(1).take(m - 1) {
                assert!((v - 2.0).abs() < 1e-10);
            }
        }
        let a = laplacian_dirichlet(2).unwrap();
        assert_eq!(a.matrix().shape(), (1, 1));
        // 3-point stencil on (1, 0, −1): u'' = u(1) − 2u(0) + u(−1)
        assert_relative_eq!(a.matrix()[(0, 0)], -2.0, epsilon = 1e-14);
    }

    #[test]
    fn laplacian_eigenfunction() {
        let a = laplacian_dirichlet(32).unwrap();
        let s = sample(&Profile::new("sin(pi x)", |x| (PI * x).sin()), a.interior_nodes());
        let lap = a.matrix() * &s;
        for (l, v) in lap.iter().zip(s.iter()) {
            assert!((l + PI * PI * v).abs() < 1e-8);
        }
        let z = DVector::zeros(31);
        assert_eq!(a.matrix() * &z, z);
    }

    #[test]
    fn steady_reaction_diffusion_solve() {
        let a = laplacian_dirichlet(32).unwrap();
        let rhs = sample(
            &Profile::new("rhs", |x| (PI * x).sin() * (1.0 + PI * PI)),
            a.interior_nodes(),
        );
        let shifted = DMatrix::identity(31, 31) - a.matrix();
        let w = shifted.lu().solve(&rhs).unwrap();
        for (wi, x) in w.iter().zip(a.interior_nodes()) {
            assert!((wi - (PI * x).sin()).abs() < 1e-7);
        }
    }

    #[test]
    fn spectrum_is_stable() {
        for m in [8, 16, 32] {
            let a = laplacian_dirichlet(m).unwrap();
            let max_re = a
                .matrix()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max_re < 0.0);
        }
    }

    #[test]
    fn sampling_examples() {
        let v = Profile::sine_bubble();
        assert_eq!(v.eval(1.0), 0.0);
        assert_eq!(v.eval(-1.0).abs(), 0.0);
        let q = Profile::exp_with_indicator();
        assert_relative_eq!(q.eval(-0.5), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(q.eval(0.5), 2.0 * 0.5f64.exp(), epsilon = 1e-15);
        assert_eq!(q.eval(0.0), 1.0);
    }

    #[test]
    fn clenshaw_curtis_integrates() {
        for m in [4, 7, 16, 33] {
            let w = clenshaw_curtis_weights(m).unwrap();
            let x = cgl_nodes(m).unwrap();
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            let q: f64 = w.iter().zip(&x).map(|(w, x)| w * x * x).sum();
            assert_relative_eq!(q, 2.0 / 3.0, epsilon = 1e-13);
        }
    }
}
