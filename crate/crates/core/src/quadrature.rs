//! Gauss–Jacobi quadrature for weakly singular integrands, and a cardinal
//! B-spline rule used to evaluate high-order backward differences.

use nalgebra::{DMatrix, SymmetricEigen};
use qd::Quad;

use crate::error::{Error, Result};
use crate::numerics::{gamma, CompensatedSum};

/// Gauss–Jacobi rule for `∫_{-1}^{1} (1 − x)^α (1 + x)^β φ(x) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussJacobi {
    alpha: f64,
    beta: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussJacobi {
    pub fn new(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(Error::Domain(format!(
                "Jacobi exponents must exceed -1 (alpha={alpha}, beta={beta})"
            )));
        }
        let mut nodes = initial_nodes(n, alpha, beta);
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (p, dp, _) = jacobi_eval(n, alpha, beta, *x);
                let dx = p / dp;
                *x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // Weights ∝ 1/((1 − x²) P_n'(x)²); the constant is fixed by the exact mass
        // ∫ (1 − x)^α (1 + x)^β dx = 2^{α+β+1} Γ(α+1) Γ(β+1) / Γ(α+β+2).
        let raw: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (_, dp, _) = jacobi_eval(n, alpha, beta, x);
                1.0 / ((1.0 - x * x) * dp * dp)
            })
            .collect();
        let mass = ((alpha + beta + 1.0) * std::f64::consts::LN_2).exp() * gamma(alpha + 1.0)
            * gamma(beta + 1.0)
            / gamma(alpha + beta + 2.0);
        let total = raw.iter().copied().collect::<CompensatedSum>().value();
        let weights = raw.iter().map(|w| w * (mass / total)).collect();
        Ok(GaussJacobi { alpha, beta, nodes, weights })
    }

    /// Gauss–Legendre rule (unit weight).
    pub fn legendre(n: usize) -> Result<Self> {
        Self::new(n, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule on the reference interval.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .collect::<CompensatedSum>()
            .value()
    }

    /// Nodes and weights for `∫_0^1 (1 − y)^α y^β φ(y) dy`.
    pub fn unit_interval(&self) -> UnitRule {
        let scale = (-(self.alpha + self.beta + 1.0) * std::f64::consts::LN_2).exp();
        UnitRule {
            nodes: self.nodes.iter().map(|x| 0.5 * (1.0 + x)).collect(),
            weights: self.weights.iter().map(|w| w * scale).collect(),
        }
    }
}

/// A quadrature rule on `[0, 1]`, weight function implied by its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitRule {
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&y, &w)| w * f(y))
            .collect::<CompensatedSum>()
            .value()
    }
}

/// Golub–Welsch eigenvalues of the Jacobi matrix, used as Newton starting points.
fn initial_nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    let ab = a + b;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let k = i as f64;
        let diag = if i == 0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * k + ab) * (2.0 * k + ab + 2.0))
        };
        j[(i, i)] = diag;
        if i + 1 < n {
            let k = k + 1.0;
            let off = if i == 0 {
                // the factor (1 + a + b) cancels, which matters when a + b = −1
                (4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))).sqrt()
            } else {
                let num = 4.0 * k * (k + a) * (k + b) * (k + ab);
                let den = (2.0 * k + ab).powi(2) * (2.0 * k + ab + 1.0) * (2.0 * k + ab - 1.0);
                (num / den).sqrt()
            };
            j[(i, i + 1)] = off;
            j[(i + 1, i)] = off;
        }
    }
    SymmetricEigen::new(j).eigenvalues.iter().copied().collect()
}

/// Returns `(P_n(x), P_n'(x), P_{n−1}(x))` for the Jacobi polynomial `P_n^{(a,b)}`.
fn jacobi_eval(n: usize, a: f64, b: f64, x: f64) -> (f64, f64, f64) {
    let ab = a + b;
    let mut p_prev = 1.0;
    let mut p = 0.5 * (a - b) + 0.5 * (ab + 2.0) * x;
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let c = 2.0 * kf + ab;
        let a1 = 2.0 * kf * (kf + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (c * (c - 2.0) * x + a * a - b * b);
        let a3 = 2.0 * (kf + a - 1.0) * (kf + b - 1.0) * c;
        let next = (a2 * p - a3 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let c = 2.0 * nf + ab;
    let dp = (nf * (a - b - c * x) * p + 2.0 * (nf + a) * (nf + b) * p_prev) / (c * (1.0 - x * x));
    (p, dp, p_prev)
}

/// Which endpoint carries the algebraic singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularEndpoint {
    /// Weight `(s − a)^α`.
    Left,
    /// Weight `(b − s)^α`.
    Right,
}

/// `∫_a^b w(s) φ(s) ds` with `w(s) = (s − a)^α` or `(b − s)^α`, absorbing the
/// algebraic factor into a Gauss–Jacobi weight. Exact for polynomial `φ` of
/// degree `≤ 2·nodes − 1`.
pub fn singular_quadrature<F: FnMut(f64) -> f64>(
    alpha: f64,
    endpoint: SingularEndpoint,
    integrand: F,
    a: f64,
    b: f64,
    nodes: usize,
) -> Result<f64> {
    let rule = match endpoint {
        SingularEndpoint::Left => GaussJacobi::new(nodes, 0.0, alpha)?,
        SingularEndpoint::Right => GaussJacobi::new(nodes, alpha, 0.0)?,
    }
    .unit_interval();
    let len = b - a;
    let mut f = integrand;
    Ok(len.powf(alpha + 1.0) * rule.integrate(|y| f(a + len * y)))
}

/// Cardinal B-spline `M_m` (support `[0, m]`, unit mass) by the Cox–de Boor recursion.
pub fn cardinal_bspline(m: usize, s: f64) -> f64 {
    if m == 0 || s < 0.0 || s >= m as f64 {
        return 0.0;
    }
    // vals[i] = M_order(s − i) for the current order
    let mut vals: Vec<f64> = (0..m)
        .map(|i| if s >= i as f64 && s < (i + 1) as f64 { 1.0 } else { 0.0 })
        .collect();
    for order in 2..=m {
        let o = order as f64;
        for i in 0..=(m - order) {
            let x = s - i as f64;
            vals[i] = (x * vals[i] + (o - x) * vals[i + 1]) / (o - 1.0);
        }
    }
    vals[0]
}

/// Rule for `∫_0^m M_m(s) φ(s) ds`: Gauss–Legendre on each unit knot span with
/// the spline values folded into the weights.
#[derive(Debug, Clone)]
pub struct BSplineRule {
    order: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl BSplineRule {
    pub fn new(order: usize, nodes_per_span: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("B-spline order must be positive".into()));
        }
        let gl = GaussJacobi::legendre(nodes_per_span)?.unit_interval();
        let mut points = Vec::with_capacity(order * nodes_per_span);
        let mut weights = Vec::with_capacity(order * nodes_per_span);
        for span in 0..order {
            for (&y, &w) in gl.nodes.iter().zip(&gl.weights) {
                let s = span as f64 + y;
                points.push(s);
                weights.push(w * cardinal_bspline(order, s));
            }
        }
        Ok(BSplineRule { order, points, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .collect::<CompensatedSum>()
            .value()
    }
}

/// Gauss–Legendre rule on `[0, 1]` in double-double: the double nodes are
/// refined by Newton steps on `P_n` evaluated in extended precision.
pub fn legendre_unit_extended(n: usize) -> Result<(Vec<Quad>, Vec<Quad>)> {
    let seed = GaussJacobi::legendre(n)?;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &x0 in seed.nodes() {
        let mut x = Quad::from(x0);
        for _ in 0..3 {
            let (p, d) = legendre_with_derivative(n, x);
            x -= p / d;
        }
        let dp = legendre_with_derivative(n, x).1;
        let w = Quad::from(2.0) / ((Quad::ONE - x * x) * dp * dp);
        nodes.push((x + Quad::ONE) / Quad::from(2.0));
        weights.push(w / Quad::from(2.0));
    }
    Ok((nodes, weights))
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: Quad) -> (Quad, Quad) {
    let mut prev = Quad::ONE;
    let mut cur = x;
    for k in 1..n {
        let kf = k as f64;
        let next = (Quad::from(2.0 * kf + 1.0) * x * cur - Quad::from(kf) * prev) / Quad::from(kf + 1.0);
        prev = cur;
        cur = next;
    }
    let d = Quad::from(n as f64) * (x * cur - prev) / (x * x - Quad::ONE);
    (cur, d)
}

/// [`cardinal_bspline`] in double-double.
pub fn cardinal_bspline_extended(m: usize, s: Quad) -> Quad {
    if m == 0 || s.0 < 0.0 || s.0 >= m as f64 {
        return Quad::ZERO;
    }
    let mut vals: Vec<Quad> = (0..m)
        .map(|i| if s.0 >= i as f64 && s.0 < (i + 1) as f64 { Quad::ONE } else { Quad::ZERO })
        .collect();
    for order in 2..=m {
        let o = Quad::from(order as f64);
        for i in 0..=(m - order) {
            let x = s - Quad::from(i as f64);
            vals[i] = (x * vals[i] + (o - x) * vals[i + 1]) / (o - Quad::ONE);
        }
    }
    vals[0]
}

/// [`BSplineRule`] in double-double, laid out by knot span so that callers can
/// share integrand samples between neighbouring shifts.
#[derive(Debug, Clone)]
pub struct ExtendedBSplineRule {
    order: usize,
    offsets: Vec<Quad>,
    weights: Vec<Quad>,
}

impl ExtendedBSplineRule {
    pub fn new(order: usize, nodes_per_span: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("B-spline order must be positive".into()));
        }
        let (offsets, gl) = legendre_unit_extended(nodes_per_span)?;
        let mut weights = Vec::with_capacity(order * nodes_per_span);
        for span in 0..order {
            for (&y, &w) in offsets.iter().zip(&gl) {
                weights.push(w * cardinal_bspline_extended(order, Quad::from(span as f64) + y));
            }
        }
        Ok(ExtendedBSplineRule { order, offsets, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Nodes `y` on `[0, 1]`; span `j` uses `s = j + y`.
    pub fn offsets(&self) -> &[Quad] {
        &self.offsets
    }

    /// Weight of node `q` in knot span `span`.
    pub fn weight(&self, span: usize, q: usize) -> Quad {
        self.weights[span * self.offsets.len() + q]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = GaussJacobi::legendre(5).unwrap();
        assert_relative_eq!(rule.integrate(|_| 1.0), 2.0, epsilon = 1e-15);
        assert_relative_eq!(rule.integrate(|x| x.powi(8)), 2.0 / 9.0, epsilon = 1e-15);
        assert!(rule.integrate(|x| x.powi(9)).abs() < 1e-15);
    }

    #[test]
    fn jacobi_weight_mass() {
        // ∫_{-1}^{1} (1 − x)^a (1 + x)^b dx = 2^{a+b+1} B(a+1, b+1)
        for &(a, b) in &[(-0.5, 0.0), (0.0, -0.8), (2.0, 0.2), (-0.3, -0.7), (5.0, 0.8)] {
            let rule = GaussJacobi::new(12, a, b).unwrap();
            let exact = ((a + b + 1.0) * std::f64::consts::LN_2
                + crate::numerics::ln_gamma(a + 1.0)
                + crate::numerics::ln_gamma(b + 1.0)
                - crate::numerics::ln_gamma(a + b + 2.0))
            .exp();
            assert_relative_eq!(rule.integrate(|_| 1.0), exact, max_relative = 1e-14);
        }
    }

    #[test]
    fn singular_examples() {
        for n in 1..6 {
            let v = singular_quadrature(-0.5, SingularEndpoint::Left, |_| 1.0, 0.0, 1.0, n).unwrap();
            assert_relative_eq!(v, 2.0, max_relative = 1e-14);
            let v = singular_quadrature(-0.5, SingularEndpoint::Left, |s| s, 0.0, 1.0, n).unwrap();
            assert_relative_eq!(v, 2.0 / 3.0, max_relative = 1e-14);
        }
        assert!(matches!(
            singular_quadrature(-0.5, SingularEndpoint::Left, |s| s, 0.0, 1.0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn right_endpoint_matches_reflection() {
        let l = singular_quadrature(-0.3, SingularEndpoint::Left, |s| (2.0 - s).exp(), 0.5, 2.0, 16)
            .unwrap();
        let r = singular_quadrature(-0.3, SingularEndpoint::Right, |s| (s - 0.5).exp(), 0.5, 2.0, 16)
            .unwrap();
        assert_relative_eq!(l, r, max_relative = 1e-14);
    }

    #[test]
    fn weakly_singular_exponential_against_series() {
        // ∫_0^1 s^{-0.2} e^s ds = Σ_n 1/(n! (n + 0.8))
        let mut series = 0.0;
        let mut fact = 1.0;
        for n in 0..40 {
            if n > 0 {
                fact *= n as f64;
            }
            series += 1.0 / (fact * (n as f64 + 0.8));
        }
        let q = singular_quadrature(-0.2, SingularEndpoint::Left, f64::exp, 0.0, 1.0, 32).unwrap();
        assert!((q - series).abs() < 1e-12 * series);
    }

    #[test]
    fn bspline_partition_of_unity() {
        for m in 1..=7 {
            for i in 0..50 {
                let s = 0.013 + i as f64 * 0.1;
                let total: f64 = (-10..10).map(|j| cardinal_bspline(m, s + j as f64)).sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-13);
            }
            let rule = BSplineRule::new(m, 10).unwrap();
            assert_relative_eq!(rule.integrate(|_| 1.0), 1.0, epsilon = 1e-14);
            assert_relative_eq!(rule.integrate(|s| s), m as f64 / 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn bspline_rule_reproduces_backward_difference() {
        // ∇^m f(x) = ∫ M_m(s) f^{(m)}(x − s) ds, checked on f = e^x.
        for m in 1..=7usize {
            let rule = BSplineRule::new(m, 16).unwrap();
            let x = 9.3_f64;
            let quad = rule.integrate(|s| (x - s).exp());
            let mut diff = 0.0;
            let mut c = 1.0;
            for l in 0..=m {
                diff += c * (x - l as f64).exp();
                c *= -((m - l) as f64) / (l + 1) as f64;
            }
            assert_relative_eq!(quad, diff, max_relative = 1e-12);
        }
    }

    #[test]
    fn extended_legendre_exact_on_monomials() {
        for n in [4, 12, 24] {
            let (x, w) = legendre_unit_extended(n).unwrap();
            for p in 0..2 * n {
                let mut sum = Quad::ZERO;
                for (&xi, &wi) in x.iter().zip(&w) {
                    let mut v = wi;
                    for _ in 0..p {
                        v *= xi;
                    }
                    sum += v;
                }
                let err = sum - Quad::ONE / Quad::from((p + 1) as f64);
                assert!(err.0.abs() < 1e-28, "n={n} p={p}: {}", err.0);
            }
        }
    }

    #[test]
    fn extended_bspline_matches_double() {
        for m in 1..=8 {
            for i in 0..=40 {
                let s = i as f64 * m as f64 / 40.0;
                let a = cardinal_bspline_extended(m, Quad::from(s)).0;
                assert_relative_eq!(a, cardinal_bspline(m, s), epsilon = 1e-15, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn extended_bspline_rule_has_unit_mass() {
        for order in 2..=7 {
            let rule = ExtendedBSplineRule::new(order, 24).unwrap();
            let mut mass = Quad::ZERO;
            for span in 0..order {
                for q in 0..rule.offsets().len() {
                    mass += rule.weight(span, q);
                }
            }
            assert!((mass - Quad::ONE).0.abs() < 1e-28, "order {order}");
        }
    }
}
