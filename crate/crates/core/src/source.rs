//! Hyper-singular source terms `g(t) = t^μ ∘ f(t)` and their m-fold smoothing.
//!
//! For `−2 < μ < −1` the source is not locally integrable, so every integral
//! of `t^μ` is taken as a Hadamard finite part. One integration by parts turns
//! the hyper-singular exponent `μ` into the weakly singular `μ + 1`, after which
//! Gauss–Jacobi quadrature absorbs the remaining algebraic factor:
//!
//! ```text
//! FP ∫_0^t s^μ f(s) ds = (t^{μ+1} f(t) − ∫_0^t s^{μ+1} f'(s) ds) / (μ + 1)
//! ```
//!
//! The smoothed source `G = J^m g` then vanishes at `t = 0` for `m ≥ 2`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use qd::Quad;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{factorial, gamma};
use crate::quadrature::{cardinal_bspline, ExtendedBSplineRule, GaussJacobi, UnitRule};
use crate::spatial::{sample, Profile};

/// Gauss–Jacobi nodes per evaluation unless configured otherwise.
pub const DEFAULT_QUADRATURE_NODES: usize = 32;

/// Gauss–Legendre nodes per knot span of the B-spline difference rule.
const BSPLINE_NODES_PER_SPAN: usize = 24;

/// Cap on Taylor terms for double-double evaluation of `e^t` based series.
const SERIES_TERMS: usize = 400;

/// Largest supported smoothing order.
pub const MAX_SMOOTHING: usize = 7;

/// Relative disagreement between two rule sizes tolerated by the point evaluators.
const POINT_QUADRATURE_TOL: f64 = 1e-10;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The smooth temporal factor `f(t)` of a source, with its derivative.
#[derive(Clone)]
pub enum TemporalFactor {
    /// `e^t`
    Exp,
    /// `Σ_i c_i t^i`
    Polynomial(Vec<f64>),
    /// User-supplied `f`; singular kinds require the derivative.
    Custom {
        name: String,
        value: ScalarFn,
        derivative: Option<ScalarFn>,
    },
}

impl TemporalFactor {
    pub fn one() -> Self {
        TemporalFactor::Polynomial(vec![1.0])
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: Option<ScalarFn>,
    ) -> Self {
        TemporalFactor::Custom { name: name.into(), value: Arc::new(value), derivative }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TemporalFactor::Exp => t.exp(),
            TemporalFactor::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ci| acc * t + ci),
            TemporalFactor::Custom { value, .. } => value(t),
        }
    }

    /// `Σ_k a_k t^k w_k` in double-double, where `a_k` are the Taylor coefficients
    /// of `f`. `None` for custom factors, whose coefficients are unknown.
    fn series<W: FnMut(usize) -> Quad>(&self, t: Quad, mut w: W) -> Option<Quad> {
        match self {
            TemporalFactor::Exp => {
                let mut sum = Quad::ZERO;
                let mut a = Quad::ONE;
                for k in 0..SERIES_TERMS {
                    let term = a * w(k);
                    sum += term;
                    if k as f64 > t.0 && term.0.abs() <= 1e-34 * sum.0.abs() {
                        return Some(sum);
                    }
                    a = a * t / Quad::from((k + 1) as f64);
                }
                None
            }
            TemporalFactor::Polynomial(c) => {
                let mut sum = Quad::ZERO;
                let mut tk = Quad::ONE;
                for (k, &ck) in c.iter().enumerate() {
                    sum += Quad::from(ck) * tk * w(k);
                    tk *= t;
                }
                Some(sum)
            }
            TemporalFactor::Custom { .. } => None,
        }
    }

    pub fn has_derivative(&self) -> bool {
        !matches!(self, TemporalFactor::Custom { derivative: None, .. })
    }

    /// `f'(t)`; callers check [`has_derivative`](Self::has_derivative) first.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TemporalFactor::Exp => t.exp(),
            TemporalFactor::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, ci)| acc * t + i as f64 * ci),
            TemporalFactor::Custom { derivative, .. } => {
                derivative.as_ref().map_or(f64::NAN, |d| d(t))
            }
        }
    }
}

impl fmt::Debug for TemporalFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalFactor::Exp => write!(f, "Exp"),
            TemporalFactor::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            TemporalFactor::Custom { name, derivative, .. } => f
                .debug_struct("Custom")
                .field("name", name)
                .field("has_derivative", &derivative.is_some())
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// `g = 0`
    Zero,
    /// `g = t^μ q(x)`
    Power,
    /// `g = (t^μ ⊛ f)(t) q(x)`, Hadamard finite-part convolution
    Convolution,
    /// `g = t^μ f(t) q(x)`
    Product,
    /// `g = f(t) q(x)`, no singular part
    Regular,
}

/// A separable source `g(x, t)` in terms of its temporal and spatial factors.
#[derive(Debug, Clone)]
pub struct SourceDescriptor {
    pub kind: SourceKind,
    pub mu: f64,
    pub temporal: TemporalFactor,
    pub profile: Profile,
    /// Adds the regular summand of `(1 + t^μ) ∘ f`: `1 ⊛ f` for convolution
    /// sources and `f` itself for product sources.
    pub regular_summand: bool,
}

impl SourceDescriptor {
    pub fn zero() -> Self {
        SourceDescriptor {
            kind: SourceKind::Zero,
            mu: f64::NAN,
            temporal: TemporalFactor::one(),
            profile: Profile::zero(),
            regular_summand: false,
        }
    }

    pub fn power(mu: f64, profile: Profile) -> Self {
        SourceDescriptor {
            kind: SourceKind::Power,
            mu,
            temporal: TemporalFactor::one(),
            profile,
            regular_summand: false,
        }
    }

    pub fn convolution(mu: f64, temporal: TemporalFactor, profile: Profile) -> Self {
        SourceDescriptor { kind: SourceKind::Convolution, mu, temporal, profile, regular_summand: false }
    }

    pub fn product(mu: f64, temporal: TemporalFactor, profile: Profile) -> Self {
        SourceDescriptor { kind: SourceKind::Product, mu, temporal, profile, regular_summand: false }
    }

    pub fn regular(temporal: TemporalFactor, profile: Profile) -> Self {
        SourceDescriptor {
            kind: SourceKind::Regular,
            mu: f64::NAN,
            temporal,
            profile,
            regular_summand: false,
        }
    }

    /// Turns `t^μ ∘ f` into `(1 + t^μ) ∘ f`.
    pub fn with_regular_summand(mut self) -> Self {
        self.regular_summand = true;
        self
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.kind, SourceKind::Power | SourceKind::Convolution | SourceKind::Product)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_singular() {
            if !(self.mu > -2.0 && self.mu < -1.0) {
                return Err(Error::Domain(format!(
                    "singular sources need mu in (-2, -1), got {}",
                    self.mu
                )));
            }
            if !self.temporal.has_derivative() {
                return Err(Error::InvalidArgument(
                    "singular sources need an analytic derivative of f".into(),
                ));
            }
        }
        if self.regular_summand
            && !matches!(self.kind, SourceKind::Convolution | SourceKind::Product)
        {
            return Err(Error::InvalidArgument(
                "a regular summand is only defined for convolution or product sources".into(),
            ));
        }
        Ok(())
    }

    /// Temporal factor of `g` at `t > 0`.
    pub fn temporal_value(&self, t: f64) -> Result<f64> {
        let f = &self.temporal;
        let singular = match self.kind {
            SourceKind::Zero => 0.0,
            SourceKind::Regular => f.value(t),
            SourceKind::Power => t.powf(self.mu),
            SourceKind::Product => t.powf(self.mu) * f.value(t),
            SourceKind::Convolution => {
                finite_part_convolution(self.mu, |s| f.value(s), |s| f.derivative(s), t)?
            }
        };
        let regular = match (self.regular_summand, self.kind) {
            (true, SourceKind::Product) => f.value(t),
            (true, SourceKind::Convolution) => integrate_factor(f, t),
            _ => 0.0,
        };
        Ok(singular + regular)
    }
}

/// `∫_0^t f(s) ds` by Gauss–Legendre.
fn integrate_factor(f: &TemporalFactor, t: f64) -> f64 {
    let rule = GaussJacobi::legendre(DEFAULT_QUADRATURE_NODES)
        .expect("positive node count")
        .unit_interval();
    t * rule.integrate(|y| f.value(t * y))
}

/// Weights `B(k+1, a) = k! / (a (a+1) ⋯ (a+k))` in order `k = 0, 1, …`,
/// continued analytically to negative non-integer `a`.
fn beta_weights(a: f64) -> impl FnMut(usize) -> Quad {
    let mut w = Quad::ONE / Quad::from(a);
    move |k| {
        if k > 0 {
            w = w * Quad::from(k as f64) / Quad::from(a + k as f64);
        }
        w
    }
}

/// Hadamard finite part `FP ∫_0^t s^{−β} ds = t^{1−β} / (1 − β)` for `β > 1`.
pub fn hadamard_power_integral(beta: f64, t: f64) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::Domain(format!(
            "finite-part power integral needs beta > 1, got {beta}; use an ordinary integral"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("upper limit must be positive, got {t}")));
    }
    Ok(t.powf(1.0 - beta) / (1.0 - beta))
}

/// `J^m t^μ = Γ(μ+1) t^{μ+m} / Γ(μ+m+1)`, zero at `t = 0`.
pub fn smooth_power_source(mu: f64, m: usize, t: f64) -> Result<f64> {
    if !(mu > -2.0 && mu < -1.0) {
        return Err(Error::Domain(format!("mu must lie in (-2, -1), got {mu}")));
    }
    if m < 2 || mu + m as f64 <= 0.0 {
        return Err(Error::SmoothingInsufficient { mu, m });
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let p = mu + m as f64;
    Ok(gamma(mu + 1.0) / gamma(p + 1.0) * t.powf(p))
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > -2.0 && mu < -1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("mu must lie in (-2, -1), got {mu}")))
    }
}

/// Evaluates with two rule sizes and reports a quadrature failure if they disagree.
fn checked<F: Fn(usize) -> Result<f64>>(eval: F) -> Result<f64> {
    let fine = eval(DEFAULT_QUADRATURE_NODES)?;
    let coarse = eval(DEFAULT_QUADRATURE_NODES * 2 / 3)?;
    if !fine.is_finite() {
        return Err(Error::Quadrature(format!("non-finite result {fine}")));
    }
    let err = (fine - coarse).abs();
    if err > POINT_QUADRATURE_TOL * fine.abs().max(1.0) {
        return Err(Error::Quadrature(format!("estimated error {err:e} exceeds tolerance")));
    }
    Ok(fine)
}

/// `FP ∫_0^t s^μ f(s) ds` by integration by parts:
/// `(t^{μ+1} f(t) − ∫_0^t s^{μ+1} f'(s) ds) / (μ + 1)`.
pub fn finite_part_primitive<F, D>(mu: f64, f: F, df: D, t: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    check_mu(mu)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("upper limit must be positive, got {t}")));
    }
    checked(|n| {
        let rule = GaussJacobi::new(n, 0.0, mu + 1.0)?.unit_interval();
        Ok(t.powf(mu + 1.0) * primitive_factor(mu, &rule, &f, &df, t))
    })
}

/// `FP ∫_0^t s^μ f(s) ds / t^{μ+1}`, smooth in `t`.
fn primitive_factor<F, D>(mu: f64, rule: &UnitRule, f: &F, df: &D, t: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    // ∫_0^t s^{μ+1} f'(s) ds = t^{μ+2} ∫_0^1 y^{μ+1} f'(ty) dy
    let tail = rule.integrate(|y| df(t * y));
    (f(t) - t * tail) / (mu + 1.0)
}

/// Finite-part convolution `FP ∫_0^t (t − s)^μ f(s) ds`
/// `= t^{μ+1} f(0)/(μ+1) + (1/(μ+1)) ∫_0^t (t − s)^{μ+1} f'(s) ds`.
pub fn finite_part_convolution<F, D>(mu: f64, f: F, df: D, t: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    check_mu(mu)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("upper limit must be positive, got {t}")));
    }
    checked(|n| {
        let rule = GaussJacobi::new(n, mu + 1.0, 0.0)?.unit_interval();
        let tail = t.powf(mu + 2.0) * rule.integrate(|y| df(t * y));
        Ok((t.powf(mu + 1.0) * f(0.0) + tail) / (mu + 1.0))
    })
}

/// Quadrature controls for [`smoothed_grid_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureConfig {
    /// Nodes per Gauss–Jacobi rule.
    pub nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { nodes: DEFAULT_QUADRATURE_NODES }
    }
}

/// Precomputed rules for evaluating `g(t)` and `(J^m g)(t)` at arbitrary `t`.
#[derive(Debug, Clone)]
pub struct SmoothingEvaluator {
    descriptor: SourceDescriptor,
    m: usize,
    /// Inner rule producing the smooth factor of `J^1 g` (singular part).
    inner: Option<UnitRule>,
    /// Outer rule with weight `(1−y)^{m−2} y^β`.
    outer: Option<UnitRule>,
    /// Exponent `β` of `J^1 g ∼ t^β` near zero.
    beta: f64,
    /// Rule for the regular part `J^p f` with weight `(1−y)^{p−1}`.
    regular: Option<(usize, UnitRule)>,
    /// Rule with weight `(1−y)^{μ+1}` for pointwise finite-part convolutions.
    convolution: Option<UnitRule>,
    /// Exponent `β₁` and rule with weight `y^{β₁}` for `J^1 g_sing(s) = s^{β₁} ψ(s)`.
    first: Option<(f64, UnitRule)>,
    legendre: UnitRule,
}

impl SmoothingEvaluator {
    pub fn new(descriptor: &SourceDescriptor, m: usize, config: QuadratureConfig) -> Result<Self> {
        descriptor.validate()?;
        if !(2..=MAX_SMOOTHING).contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "smoothing order m must lie in 2..={MAX_SMOOTHING}, got {m}"
            )));
        }
        if config.nodes < 1 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        let mu = descriptor.mu;
        if descriptor.is_singular() && mu + m as f64 <= 0.0 {
            return Err(Error::SmoothingInsufficient { mu, m });
        }
        let n = config.nodes;
        let (inner, beta) = match descriptor.kind {
            SourceKind::Product => (Some(GaussJacobi::new(n, 0.0, mu + 1.0)?.unit_interval()), mu + 1.0),
            SourceKind::Convolution => {
                (Some(GaussJacobi::new(n, mu + 1.0, 0.0)?.unit_interval()), mu + 2.0)
            }
            _ => (None, 0.0),
        };
        let outer = match inner {
            Some(_) => Some(GaussJacobi::new(n, (m - 2) as f64, beta)?.unit_interval()),
            None => None,
        };
        let regular_order = match (descriptor.kind, descriptor.regular_summand) {
            (SourceKind::Regular, _) | (SourceKind::Product, true) => Some(m),
            (SourceKind::Convolution, true) => Some(m + 1),
            _ => None,
        };
        let regular = match regular_order {
            Some(p) => Some((p, GaussJacobi::new(n, (p - 1) as f64, 0.0)?.unit_interval())),
            None => None,
        };
        let convolution = match descriptor.kind {
            SourceKind::Convolution => Some(GaussJacobi::new(n, mu + 1.0, 0.0)?.unit_interval()),
            _ => None,
        };
        let first = match descriptor.kind {
            SourceKind::Power | SourceKind::Product => Some(mu + 1.0),
            SourceKind::Convolution => Some(mu + 2.0),
            _ => None,
        };
        let first = match first {
            Some(b) => Some((b, GaussJacobi::new(n, 0.0, b)?.unit_interval())),
            None => None,
        };
        Ok(SmoothingEvaluator {
            descriptor: descriptor.clone(),
            m,
            inner,
            outer,
            beta,
            regular,
            convolution,
            first,
            legendre: GaussJacobi::legendre(n)?.unit_interval(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Smooth factor `φ` with `J^1 g_sing(s) = s^β φ(s)`.
    fn primitive_smooth(&self, s: f64) -> f64 {
        let d = &self.descriptor;
        let mu = d.mu;
        let inner = self.inner.as_ref().expect("singular kinds carry an inner rule");
        match d.kind {
            SourceKind::Product => {
                primitive_factor(mu, inner, &|x| d.temporal.value(x), &|x| d.temporal.derivative(x), s)
            }
            SourceKind::Convolution => {
                // J^1 (t^μ ⊛ f) = (t^{μ+1}/(μ+1)) ∗ f
                inner.integrate(|y| d.temporal.value(s * y)) / (mu + 1.0)
            }
            _ => unreachable!(),
        }
    }

    /// Temporal factor of the source `g(t)` itself, `t > 0`.
    pub fn source_value(&self, t: f64) -> f64 {
        let d = &self.descriptor;
        let f = &d.temporal;
        let mu = d.mu;
        let singular = match d.kind {
            SourceKind::Zero => 0.0,
            SourceKind::Regular => f.value(t),
            SourceKind::Power => t.powf(mu),
            SourceKind::Product => t.powf(mu) * f.value(t),
            SourceKind::Convolution => {
                let rule = self.convolution.as_ref().expect("convolution rule");
                let tail = t.powf(mu + 2.0) * rule.integrate(|y| f.derivative(t * y));
                (t.powf(mu + 1.0) * f.value(0.0) + tail) / (mu + 1.0)
            }
        };
        let regular = match (d.regular_summand, d.kind) {
            (true, SourceKind::Product) => f.value(t),
            (true, SourceKind::Convolution) => t * self.legendre.integrate(|y| f.value(t * y)),
            _ => 0.0,
        };
        singular + regular
    }

    /// `x^e` in double-double, `x > 0`.
    fn qpow(x: Quad, e: f64) -> Quad {
        (Quad::from(e) * x.ln()).exp()
    }

    /// `g(t)` in double-double for `t > 0`. Built-in temporal factors go through
    /// their Taylor series; custom ones fall back to [`source_value`](Self::source_value).
    pub fn source_value_extended(&self, t: Quad) -> Quad {
        let d = &self.descriptor;
        let mu = d.mu;
        let f = &d.temporal;
        let fallback = || Quad::from(self.source_value(t.0));
        let singular = match d.kind {
            SourceKind::Zero => Some(Quad::ZERO),
            SourceKind::Regular => f.series(t, |_| Quad::ONE),
            SourceKind::Power => Some(Self::qpow(t, mu)),
            SourceKind::Product => f.series(t, |_| Quad::ONE).map(|v| v * Self::qpow(t, mu)),
            // FP ∫_0^t (t−s)^μ s^k ds = t^{μ+1+k} B(k+1, μ+1)
            SourceKind::Convolution => {
                f.series(t, beta_weights(mu + 1.0)).map(|v| v * Self::qpow(t, mu + 1.0))
            }
        };
        let regular = match (d.regular_summand, d.kind) {
            (true, SourceKind::Product) => f.series(t, |_| Quad::ONE),
            (true, SourceKind::Convolution) => f.series(t, |k| t / Quad::from((k + 1) as f64)),
            _ => Some(Quad::ZERO),
        };
        match (singular, regular) {
            (Some(a), Some(b)) => a + b,
            _ => fallback(),
        }
    }

    /// `(J^m g)(t)` in double-double from the Taylor series of the temporal
    /// factor; `None` for custom factors.
    pub(crate) fn smoothed_value_extended(&self, t: Quad) -> Option<Quad> {
        if t.0 <= 0.0 {
            return Some(Quad::ZERO);
        }
        let d = &self.descriptor;
        let f = &d.temporal;
        let mu = d.mu;
        let m = self.m;
        // J^m t^a = t^{a+m} / ((a+1)(a+2)⋯(a+m)), continued to negative non-integer a
        let lift = |a: f64, r: usize| (1..=r).fold(Quad::ONE, |acc, j| acc * Quad::from(a + j as f64));
        let tpow = |e: f64| Self::qpow(t, e);
        let singular = match d.kind {
            SourceKind::Zero => Some(Quad::ZERO),
            SourceKind::Regular => f.series(t, |k| Quad::ONE / lift(k as f64, m)).map(|v| v * tpow(m as f64)),
            SourceKind::Power => Some(tpow(mu + m as f64) / lift(mu, m)),
            SourceKind::Product => {
                f.series(t, |k| Quad::ONE / lift(mu + k as f64, m)).map(|v| v * tpow(mu + m as f64))
            }
            SourceKind::Convolution => {
                let mut w = beta_weights(mu + 1.0);
                f.series(t, |k| w(k) / lift(mu + 1.0 + k as f64, m)).map(|v| v * tpow(mu + 1.0 + m as f64))
            }
        };
        let regular = match (d.regular_summand, d.kind) {
            (true, SourceKind::Product) => {
                f.series(t, |k| Quad::ONE / lift(k as f64, m)).map(|v| v * tpow(m as f64))
            }
            (true, SourceKind::Convolution) => {
                f.series(t, |k| Quad::ONE / lift(k as f64, m + 1)).map(|v| v * tpow((m + 1) as f64))
            }
            _ => Some(Quad::ZERO),
        };
        Some(singular? + regular?)
    }

    /// `ψ(s)` with `J^1 g_sing(s) = s^{β₁} ψ(s)`.
    fn first_singular_factor(&self, s: Quad) -> Quad {
        let d = &self.descriptor;
        let mu = d.mu;
        let series = match d.kind {
            SourceKind::Power => Some(Quad::ONE / Quad::from(mu + 1.0)),
            SourceKind::Product => d.temporal.series(s, |k| Quad::ONE / Quad::from(mu + 1.0 + k as f64)),
            SourceKind::Convolution => {
                let mut w = beta_weights(mu + 1.0);
                d.temporal.series(s, |k| w(k) / Quad::from(mu + 2.0 + k as f64))
            }
            _ => Some(Quad::ZERO),
        };
        series.unwrap_or_else(|| Quad::from(self.primitive_smooth(s.0)))
    }

    /// Smooth part of `J^1 g`.
    fn first_regular(&self, t: Quad) -> Quad {
        let d = &self.descriptor;
        let f = &d.temporal;
        let order = match (d.kind, d.regular_summand) {
            (SourceKind::Regular, _) | (SourceKind::Product, true) => 1,
            (SourceKind::Convolution, true) => 2,
            _ => return Quad::ZERO,
        };
        // J^r t^k = k! t^{k+r} / (k+r)!
        let series = f.series(t, |k| {
            (1..=order).fold(Quad::ONE, |acc, r| acc * t / Quad::from((k + r) as f64))
        });
        series.unwrap_or_else(|| {
            let x = t.0;
            let v = match order {
                1 => x * self.legendre.integrate(|y| f.value(x * y)),
                _ => x * x * self.legendre.integrate(|y| (1.0 - y) * f.value(x * y)),
            };
            Quad::from(v)
        })
    }

    /// `∫_0^{m−1} M_{m−1}(s) (J^1 g)((i − s)τ) ds` with `J^1 g` zero for negative times.
    fn spline_average(&self, i: usize, tau: Quad) -> Quad {
        let order = self.m - 1;
        let mut acc = Quad::ZERO;
        // knot span [j, j+1] of s maps to x = i − s in [i−j−1, i−j]; the spline
        // argument j + 1 − y does not depend on i
        for j in 0..order.min(i) {
            let lo = (i - j - 1) as f64;
            let spline = |y: f64| cardinal_bspline(order, (j + 1) as f64 - y);
            if lo > 0.0 {
                for (&y, &w) in self.legendre.nodes.iter().zip(&self.legendre.weights) {
                    let t = tau * (Quad::from(lo) + Quad::from(y));
                    let sing = match &self.first {
                        Some((b, _)) => Self::qpow(t, *b) * self.first_singular_factor(t),
                        None => Quad::ZERO,
                    };
                    acc += Quad::from(w * spline(y)) * (sing + self.first_regular(t));
                }
            } else {
                if let Some((b, rule)) = &self.first {
                    let mut part = Quad::ZERO;
                    for (&y, &w) in rule.nodes.iter().zip(&rule.weights) {
                        part += Quad::from(w * spline(y)) * self.first_singular_factor(tau * Quad::from(y));
                    }
                    acc += Self::qpow(tau, *b) * part;
                }
                for (&y, &w) in self.legendre.nodes.iter().zip(&self.legendre.weights) {
                    acc += Quad::from(w * spline(y)) * self.first_regular(tau * Quad::from(y));
                }
            }
        }
        acc
    }

    /// `τ^{−m} ∇^m (J^m g)(t_i)` written as one first difference of B-spline
    /// averages of `J^1 g`. This avoids differencing `m + 1` nearly equal samples.
    pub fn scaled_difference(&self, i: usize, tau: Quad) -> Quad {
        if i == 0 {
            return Quad::ZERO;
        }
        (self.spline_average(i, tau) - self.spline_average(i - 1, tau)) / tau
    }

    /// `(J^m g)(t)` (temporal factor only).
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let d = &self.descriptor;
        let m = self.m;
        let singular = match d.kind {
            SourceKind::Zero | SourceKind::Regular => 0.0,
            SourceKind::Power => {
                let p = d.mu + m as f64;
                gamma(d.mu + 1.0) / gamma(p + 1.0) * t.powf(p)
            }
            SourceKind::Product | SourceKind::Convolution => {
                // (1/Γ(m−1)) ∫_0^t (t − s)^{m−2} s^β φ(s) ds
                let rule = self.outer.as_ref().expect("singular kinds carry an outer rule");
                t.powf(m as f64 - 1.0 + self.beta) / factorial(m - 2)
                    * rule.integrate(|y| self.primitive_smooth(t * y))
            }
        };
        let regular = match &self.regular {
            Some((p, rule)) => {
                t.powi(*p as i32) / factorial(p - 1) * rule.integrate(|y| d.temporal.value(t * y))
            }
            None => 0.0,
        };
        singular + regular
    }
}

/// Grid samples `G^n = (J^m g)(t_n) q` for `n = 0..=N`.
#[derive(Debug, Clone)]
pub struct SmoothedSource {
    m: usize,
    tau: f64,
    descriptor: SourceDescriptor,
    evaluator: SmoothingEvaluator,
    temporal: Vec<f64>,
    spatial: DVector<f64>,
    samples: Vec<DVector<f64>>,
}

impl SmoothedSource {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.temporal.len() - 1
    }

    pub fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    /// Temporal factor of `G^n`.
    pub fn temporal(&self) -> &[f64] {
        &self.temporal
    }

    /// Sampled spatial profile `q`.
    pub fn spatial(&self) -> &DVector<f64> {
        &self.spatial
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    /// `Z^i = τ^{−m} ∇^m G^i` for `i = 0..=N` (temporal factor, `G^{<0} = 0`),
    /// rounded from [`scaled_differences_extended`](Self::scaled_differences_extended).
    pub fn scaled_differences(&self) -> Result<Vec<f64>> {
        Ok(self.scaled_differences_extended()?.iter().map(|z| z.0).collect())
    }

    /// `Z^i` in double-double.
    ///
    /// For `i > m` the stencil stays away from the singular point and the
    /// difference is evaluated as `∫_0^m M_m(s) g(t_i − sτ) ds` with the cardinal
    /// B-spline `M_m`, which avoids the `τ^{−m}` cancellation of differencing
    /// samples directly. The first `m` entries reach the singular point and go
    /// through [`SmoothingEvaluator::scaled_difference`] instead.
    ///
    /// The discrete derivative later multiplies `Z` by weights whose absolute sum
    /// reaches `1e8` for `m = 7`, so per-sample rounding must sit well below
    /// double precision. Fixed quadrature errors are harmless there: they vary
    /// smoothly with `t` and the weights sum to one.
    pub fn scaled_differences_extended(&self) -> Result<Vec<Quad>> {
        let m = self.m;
        let n = self.n_steps();
        if self.descriptor.kind == SourceKind::Zero {
            return Ok(vec![Quad::ZERO; n + 1]);
        }
        let rule = ExtendedBSplineRule::new(m, BSPLINE_NODES_PER_SPAN)?;
        let offsets = rule.offsets();
        let tau = Quad::from(self.tau);
        let early = self.early_differences(tau);
        // node q of span j at step i samples g(τ(i − j − y_q)); tabulate by l = i − j
        let table: Vec<Vec<Quad>> = (0..=n)
            .into_par_iter()
            .map(|l| {
                if l == 0 {
                    return Vec::new();
                }
                offsets
                    .iter()
                    .map(|&y| self.evaluator.source_value_extended(tau * (Quad::from(l as f64) - y)))
                    .collect()
            })
            .collect();
        let z: Vec<Quad> = (0..=n)
            .into_par_iter()
            .map(|i| {
                if i <= m {
                    return early[i.min(early.len() - 1)];
                }
                let mut acc = Quad::ZERO;
                for j in 0..m {
                    for (q, g) in table[i - j].iter().enumerate() {
                        acc += rule.weight(j, q) * *g;
                    }
                }
                acc
            })
            .collect();
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::Quadrature(format!("non-finite scaled difference {:e}", bad.0)));
        }
        Ok(z)
    }

    /// `Z^0..=Z^m`. Built-in temporal factors difference the closed-form `J^m g`
    /// directly; the double-double margin absorbs the cancellation. Custom ones
    /// use [`SmoothingEvaluator::scaled_difference`].
    fn early_differences(&self, tau: Quad) -> Vec<Quad> {
        let m = self.m;
        let ev = &self.evaluator;
        let samples: Option<Vec<Quad>> =
            (0..=m).map(|i| ev.smoothed_value_extended(tau * Quad::from(i as f64))).collect();
        match samples {
            Some(g) => {
                let scale = (0..m).fold(Quad::ONE, |acc, _| acc / tau);
                (0..=m)
                    .map(|i| {
                        let mut acc = Quad::ZERO;
                        let mut c = 1.0;
                        for l in 0..=i {
                            acc += Quad::from(c) * g[i - l];
                            c *= -((m - l) as f64) / (l + 1) as f64;
                        }
                        acc * scale
                    })
                    .collect()
            }
            None => (0..=m).map(|i| ev.scaled_difference(i, tau)).collect(),
        }
    }
}

/// Computes `G^n` on the uniform grid `t_n = nτ`, `n = 0..=N`, with default quadrature.
pub fn smoothed_grid(
    descriptor: &SourceDescriptor,
    m: usize,
    tau: f64,
    n: usize,
    spatial_nodes: &[f64],
) -> Result<SmoothedSource> {
    smoothed_grid_with(descriptor, m, tau, n, spatial_nodes, QuadratureConfig::default())
}

pub fn smoothed_grid_with(
    descriptor: &SourceDescriptor,
    m: usize,
    tau: f64,
    n: usize,
    spatial_nodes: &[f64],
    config: QuadratureConfig,
) -> Result<SmoothedSource> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    let eval = SmoothingEvaluator::new(descriptor, m, config)?;
    let mut temporal: Vec<f64> =
        (0..=n).into_par_iter().map(|i| eval.value(i as f64 * tau)).collect();
    temporal[0] = 0.0;
    if let Some(bad) = temporal.iter().find(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite smoothed sample {bad}")));
    }
    let spatial = if descriptor.kind == SourceKind::Zero {
        DVector::zeros(spatial_nodes.len())
    } else {
        sample(&descriptor.profile, spatial_nodes)
    };
    let samples = temporal.iter().map(|&g| &spatial * g).collect();
    Ok(SmoothedSource {
        m,
        tau,
        descriptor: descriptor.clone(),
        evaluator: eval,
        temporal,
        spatial,
        samples,
    })
}
