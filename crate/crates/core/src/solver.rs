//! Time stepping for `∂_t^γ V − A V = ∂_t^m (t^m/m! Aυ + t^{m+1}/(m+1)! Ab + G)`.
//!
//! `V = u − υ − t b` (diffusion-wave, `1 < γ < 2`) or `V = u − υ`
//! (subdiffusion, `0 < γ < 1`). The fractional derivative on the left and the
//! integer derivative on the right are both discretized by BDF-k convolution
//! quadrature.

use std::time::{Duration, Instant};

use qd::Quad;
use nalgebra::{DMatrix, DVector};

use crate::cq::{bdf_polynomial, cq_weights, cq_weights_extended, MAX_STEPS};
use crate::error::{Error, Result};
use crate::numerics::factorial;
use crate::source::{smoothed_grid_with, QuadratureConfig, SmoothedSource, SourceDescriptor, MAX_SMOOTHING};
use crate::spatial::{laplacian_dirichlet, sample, Profile, SpatialOperator};

/// Growth of `‖V^n‖` beyond this multiple of the data scale marks a run unstable.
pub const INSTABILITY_FACTOR: f64 = 1e8;

/// How the scheme is evaluated.
///
/// Both variants define the same `V^n` in exact arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    /// Double precision throughout, both convolution sums as written.
    Direct,
    /// Right-hand side, weights, history and states in double-double.
    ///
    /// Near `t = 0` the discrete `m`-th derivative of the singular data is many
    /// orders of magnitude above the solution (about `1e9` for `m = 7`, `N = 200`)
    /// and `V^n` swings accordingly before settling. In double precision the
    /// rounding of those early steps leaves a floor of `1e-12` to `1e-8` on the
    /// final state. On the right the factor `(1 − ξ)^m` of `(τδ(ξ))^m` is applied
    /// analytically, so the polynomial parts are exact rationals and the source
    /// enters through `τ^{−m} ∇^m G`.
    #[default]
    Extended,
}

/// Problem data for one run.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub gamma: f64,
    pub k: usize,
    pub m: usize,
    pub t_final: f64,
    pub n_steps: usize,
    /// `υ`
    pub initial: Profile,
    /// `b`, present exactly when `γ > 1`.
    pub velocity: Option<Profile>,
    pub source: SourceDescriptor,
    /// Spectral degree `M`.
    pub degree: usize,
    pub evaluation: Evaluation,
    pub quadrature: QuadratureConfig,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma: f64,
        k: usize,
        m: usize,
        t_final: f64,
        n_steps: usize,
        initial: Profile,
        velocity: Option<Profile>,
        source: SourceDescriptor,
        degree: usize,
    ) -> Self {
        ProblemSpec {
            gamma,
            k,
            m,
            t_final,
            n_steps,
            initial,
            velocity,
            source,
            degree,
            evaluation: Evaluation::default(),
            quadrature: QuadratureConfig::default(),
        }
    }

    pub fn with_evaluation(mut self, mode: Evaluation) -> Self {
        self.evaluation = mode;
        self
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn is_diffusion_wave(&self) -> bool {
        self.gamma > 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma;
        if !(g > 0.0 && g < 2.0) || g == 1.0 {
            return Err(Error::InvalidProblem(format!("gamma must lie in (0,1)∪(1,2), got {g}")));
        }
        if !(1..=MAX_STEPS).contains(&self.k) {
            return Err(Error::InvalidStepNumber(self.k));
        }
        if !(2..=MAX_SMOOTHING).contains(&self.m) {
            return Err(Error::InvalidProblem(format!(
                "smoothing order m must lie in 2..={MAX_SMOOTHING}, got {}",
                self.m
            )));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidProblem(format!("horizon must be positive, got {}", self.t_final)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidResolution(0));
        }
        match (g > 1.0, self.velocity.is_some()) {
            (true, false) => {
                return Err(Error::InvalidProblem("an initial velocity is required for gamma > 1".into()))
            }
            (false, true) => {
                return Err(Error::InvalidProblem("no initial velocity may be given for gamma < 1".into()))
            }
            _ => {}
        }
        self.source.validate()
    }
}

/// The linear operator `A` together with the points where data are sampled and
/// the weights of the norm used to compare states.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub matrix: DMatrix<f64>,
    pub nodes: Vec<f64>,
    pub norm_weights: Vec<f64>,
}

impl Discretization {
    /// Chebyshev collocation of the Dirichlet Laplacian on `(−1, 1)`.
    pub fn spectral(degree: usize) -> Result<Self> {
        Ok(Self::from(&laplacian_dirichlet(degree)?))
    }

    /// A single mode `A = λ`; profiles are read at `x = 0`.
    pub fn scalar(lambda: f64) -> Self {
        Discretization {
            matrix: DMatrix::from_element(1, 1, lambda),
            nodes: vec![0.0],
            norm_weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        crate::spatial::weighted_l2(&self.norm_weights, v)
    }
}

impl From<&SpatialOperator> for Discretization {
    fn from(op: &SpatialOperator) -> Self {
        Discretization {
            matrix: op.matrix().clone(),
            nodes: op.interior_nodes().to_vec(),
            norm_weights: op.quad_weights().to_vec(),
        }
    }
}

/// Stability class of BDF-k convolution quadrature for `∂^γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Unconditional,
    Conditional,
}

/// `γ*(k)`; the method is only conditionally stable for `γ ≥ γ*(k)`.
pub fn stability_threshold(k: usize) -> Result<f64> {
    match k {
        1 | 2 => Ok(2.0),
        3 => Ok(1.91),
        4 => Ok(1.68),
        5 => Ok(1.40),
        6 => Ok(1.11),
        _ => Err(Error::InvalidStepNumber(k)),
    }
}

pub fn stability_check(gamma: f64, k: usize) -> Result<Stability> {
    if gamma >= stability_threshold(k)? {
        Ok(Stability::Conditional)
    } else {
        Ok(Stability::Unconditional)
    }
}

#[derive(Debug, Clone)]
pub struct RunMetadata {
    pub spec: ProblemSpec,
    pub wall_time: Duration,
    pub stability: Stability,
    /// Set when the state norm grew beyond [`INSTABILITY_FACTOR`] times the data scale;
    /// the states after that step are NaN.
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states_v: Vec<DVector<f64>>,
    pub states_u: Vec<DVector<f64>>,
    /// Right-hand sides `τ^{−m} Σ_j ω_j^{(m)} F^{n−j}` used at each step.
    pub rhs: Vec<DVector<f64>>,
    pub metadata: RunMetadata,
}

impl Trajectory {
    pub fn terminal_u(&self) -> &DVector<f64> {
        self.states_u.last().expect("trajectory holds at least u^0")
    }
}

/// Sampled data on a discretization.
struct Data {
    upsilon: DVector<f64>,
    velocity: Option<DVector<f64>>,
    a_upsilon: DVector<f64>,
    a_velocity: Option<DVector<f64>>,
}

impl Data {
    fn new(spec: &ProblemSpec, disc: &Discretization) -> Self {
        let upsilon = sample(&spec.initial, &disc.nodes);
        let velocity = spec.velocity.as_ref().map(|b| sample(b, &disc.nodes));
        let a_upsilon = &disc.matrix * &upsilon;
        let a_velocity = velocity.as_ref().map(|b| &disc.matrix * b);
        Data { upsilon, velocity, a_upsilon, a_velocity }
    }
}

fn smoothed_source(spec: &ProblemSpec, disc: &Discretization) -> Result<SmoothedSource> {
    smoothed_grid_with(&spec.source, spec.m, spec.tau(), spec.n_steps, &disc.nodes, spec.quadrature)
}

fn check_source(spec: &ProblemSpec, disc: &Discretization, g: &SmoothedSource) -> Result<()> {
    if g.m() != spec.m || g.n_steps() != spec.n_steps || (g.tau() - spec.tau()).abs() > 1e-15 * spec.tau()
    {
        return Err(Error::Dimension(format!(
            "smoothed source built for m={}, N={}, tau={} but the problem has m={}, N={}, tau={}",
            g.m(),
            g.n_steps(),
            g.tau(),
            spec.m,
            spec.n_steps,
            spec.tau()
        )));
    }
    if g.spatial().len() != disc.dim() {
        return Err(Error::Dimension(format!(
            "source sampled at {} nodes, operator acts on {}",
            g.spatial().len(),
            disc.dim()
        )));
    }
    Ok(())
}

fn assemble_f(spec: &ProblemSpec, data: &Data, g: &SmoothedSource) -> Vec<DVector<f64>> {
    let m = spec.m;
    let tau = spec.tau();
    let cm = factorial(m);
    let cm1 = factorial(m + 1);
    let mut out = Vec::with_capacity(spec.n_steps + 1);
    out.push(DVector::zeros(data.upsilon.len()));
    for (i, gi) in g.samples().iter().enumerate().skip(1) {
        let t = i as f64 * tau;
        let mut f = gi.clone();
        f.axpy(t.powi(m as i32) / cm, &data.a_upsilon, 1.0);
        if let Some(ab) = &data.a_velocity {
            f.axpy(t.powi(m as i32 + 1) / cm1, ab, 1.0);
        }
        out.push(f);
    }
    out
}

/// `F^i`, `i = 0..=N`, on the collocation grid.
pub fn rhs_grid(spec: &ProblemSpec, op: &SpatialOperator, g: &SmoothedSource) -> Result<Vec<DVector<f64>>> {
    spec.validate()?;
    let disc = Discretization::from(op);
    check_source(spec, &disc, g)?;
    Ok(assemble_f(spec, &Data::new(spec, &disc), g))
}

/// `∇^m [n^p]` at `n = i` with the sequence extended by zero to negative indices.
fn backward_difference_of_power(m: usize, p: u32, i: usize) -> i128 {
    let mut acc: i128 = 0;
    let mut c: i128 = 1;
    for l in 0..=m.min(i) {
        acc += c * ((i - l) as i128).pow(p);
        c = -c * (m - l) as i128 / (l + 1) as i128;
    }
    acc
}

/// Common denominator of the coefficients of `p(ξ) = τδ(ξ)/(1 − ξ)` for `k ≤ 6`.
const REDUCED_DENOMINATOR: i128 = 60;

/// Coefficients of `p(ξ)^m` where `τδ(ξ) = (1 − ξ) p(ξ)`, as exact integers
/// over the returned denominator `60^m`.
fn reduced_power_exact(k: usize, m: usize) -> Result<(Vec<i128>, i128)> {
    bdf_polynomial(k)?;
    // 60·p has integer coefficients: Σ_j (60/j) C(j−1, i) (−1)^i
    let mut p = vec![0i128; k];
    for j in 1..=k {
        let mut binom: i128 = 1;
        for (i, pi) in p.iter_mut().enumerate().take(j) {
            let sign = if i % 2 == 0 { 1 } else { -1 };
            *pi += sign * (REDUCED_DENOMINATOR / j as i128) * binom;
            binom = binom * (j - 1 - i) as i128 / (i + 1) as i128;
        }
    }
    let mut out = vec![1i128];
    for _ in 0..m {
        let mut next = vec![0i128; out.len() + p.len() - 1];
        for (i, a) in out.iter().enumerate() {
            for (j, b) in p.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        out = next;
    }
    Ok((out, REDUCED_DENOMINATOR.pow(m as u32)))
}

fn derivative_direct(spec: &ProblemSpec, f: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let n = spec.n_steps;
    let w = cq_weights(spec.m as f64, spec.k, n)?;
    let w = w.weights();
    let scale = spec.tau().powi(-(spec.m as i32));
    let dim = f[0].len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mut acc = DVector::zeros(dim);
        for j in 0..=i {
            acc.axpy(w[j], &f[i - j], 1.0);
        }
        out.push(acc * scale);
    }
    Ok(out)
}

fn derivative_extended(spec: &ProblemSpec, data: &Data, g: &SmoothedSource) -> Result<Vec<Vec<Quad>>> {
    let n = spec.n_steps;
    let m = spec.m;
    let tau = spec.tau();
    let z = g.scaled_differences_extended()?;
    let (p, den) = reduced_power_exact(spec.k, m)?;
    let p_ext: Vec<Quad> = p.iter().map(|&pj| exact_quad(pj)).collect();
    let cm = (1..=m as i128).product::<i128>();
    let cm1 = cm * (m as i128 + 1);
    // τ^{−m} ∇^m F^i = a_i Aυ + τ b_i Ab + Z^i q with integer-valued m!·a_i and (m+1)!·b_i,
    // so the polynomial parts of Σ_j P_j τ^{−m} ∇^m F^{n−j} are exact rationals.
    let a: Vec<i128> = (0..=n).map(|i| backward_difference_of_power(m, m as u32, i)).collect();
    let b: Vec<i128> = (0..=n).map(|i| backward_difference_of_power(m, m as u32 + 1, i)).collect();
    let q = g.spatial();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let taps = p.iter().enumerate().take(i + 1);
        let alpha: i128 = taps.clone().map(|(j, pj)| pj * a[i - j]).sum();
        let alpha = exact_quad(alpha) / exact_quad(den * cm);
        let beta = match &data.a_velocity {
            Some(_) => {
                let beta: i128 = taps.map(|(j, pj)| pj * b[i - j]).sum();
                Quad::from(tau) * exact_quad(beta) / exact_quad(den * cm1)
            }
            None => Quad::ZERO,
        };
        let mut zeta = Quad::ZERO;
        for (j, pj) in p_ext.iter().enumerate().take(i + 1) {
            zeta += *pj * z[i - j];
        }
        zeta /= exact_quad(den);
        let r = (0..q.len())
            .map(|x| {
                let mut v = alpha * Quad::from(data.a_upsilon[x]) + zeta * Quad::from(q[x]);
                if let Some(ab) = &data.a_velocity {
                    v += beta * Quad::from(ab[x]);
                }
                v
            })
            .collect();
        out.push(r);
    }
    Ok(out)
}

fn round_vectors(v: &[Vec<Quad>]) -> Vec<DVector<f64>> {
    v.iter().map(|x| DVector::from_iterator(x.len(), x.iter().map(|q| q.0))).collect()
}

/// Right-hand sides `τ^{−m} Σ_j ω_j^{(m)} F^{n−j}` for `n = 0..=N`.
pub fn differentiated_rhs(spec: &ProblemSpec, disc: &Discretization) -> Result<Vec<DVector<f64>>> {
    spec.validate()?;
    let data = Data::new(spec, disc);
    let g = smoothed_source(spec, disc)?;
    check_source(spec, disc, &g)?;
    rhs_from(spec, &data, &g)
}

fn rhs_from(spec: &ProblemSpec, data: &Data, g: &SmoothedSource) -> Result<Vec<DVector<f64>>> {
    match spec.evaluation {
        Evaluation::Direct => derivative_direct(spec, &assemble_f(spec, data, g)),
        Evaluation::Extended => Ok(round_vectors(&derivative_extended(spec, data, g)?)),
    }
}

struct GrowthMonitor {
    reference: f64,
    unstable: bool,
}

impl GrowthMonitor {
    fn observe(&mut self, step: usize, norm: f64) {
        if step == 1 {
            self.reference = self.reference.max(norm);
        }
        if !norm.is_finite() || norm > INSTABILITY_FACTOR * self.reference {
            self.unstable = true;
        }
    }
}

/// Refinement sweeps of [`refined_solve`]; each gains roughly `eps · cond`.
const REFINEMENT_STEPS: usize = 3;

/// Solves `(w_0 I − τ^γ A) x = b` in double-double. The double LU supplies the
/// corrections and the residual is formed in extended precision.
fn refined_solve(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a: &DMatrix<f64>,
    w0: Quad,
    tg: f64,
    b: &[Quad],
    step: usize,
) -> Result<Vec<Quad>> {
    let dim = b.len();
    let tg = Quad::from(tg);
    let mut x = vec![Quad::ZERO; dim];
    let mut r = b.to_vec();
    for _ in 0..REFINEMENT_STEPS {
        let rhs = DVector::from_iterator(dim, r.iter().map(|v| v.0));
        let dx = lu.solve(&rhs).ok_or_else(|| Error::Solver(format!("linear solve failed at step {step}")))?;
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi += Quad::from(*d);
        }
        for (row, ri) in r.iter_mut().enumerate() {
            let mut ax = Quad::ZERO;
            for (col, xc) in x.iter().enumerate() {
                ax += Quad::from(a[(row, col)]) * *xc;
            }
            *ri = b[row] - (w0 * x[row] - tg * ax);
        }
    }
    Ok(x)
}

/// Integers up to `2^106` in magnitude, exactly.
fn exact_quad(v: i128) -> Quad {
    let hi = v as f64;
    Quad(hi, (v - hi as i128) as f64)
}

/// Runs the scheme on the Chebyshev discretization of degree `spec.degree`.
pub fn advance(spec: &ProblemSpec) -> Result<Trajectory> {
    spec.validate()?;
    advance_with(spec, &Discretization::spectral(spec.degree)?)
}

/// Runs the scheme with an arbitrary operator.
pub fn advance_with(spec: &ProblemSpec, disc: &Discretization) -> Result<Trajectory> {
    spec.validate()?;
    let start = Instant::now();
    let n = spec.n_steps;
    let tau = spec.tau();
    let dim = disc.dim();
    if disc.matrix.nrows() != dim || disc.matrix.ncols() != dim || disc.norm_weights.len() != dim {
        return Err(Error::Dimension(format!(
            "operator is {}x{} with {} nodes and {} norm weights",
            disc.matrix.nrows(),
            disc.matrix.ncols(),
            dim,
            disc.norm_weights.len()
        )));
    }
    let data = Data::new(spec, disc);
    let g = smoothed_source(spec, disc)?;
    let rhs_ext = match spec.evaluation {
        Evaluation::Extended => derivative_extended(spec, &data, &g)?,
        Evaluation::Direct => Vec::new(),
    };
    let rhs = match spec.evaluation {
        Evaluation::Extended => round_vectors(&rhs_ext),
        Evaluation::Direct => rhs_from(spec, &data, &g)?,
    };

    // Everything is multiplied through by τ^γ: (ω_0 I − τ^γ A) V^n = −Σ_{j≥1} ω_j V^{n−j} + τ^γ R^n.
    let tg = tau.powf(spec.gamma);
    let w0 = bdf_polynomial(spec.k)?.coeffs()[0].powf(spec.gamma);
    let shifted = DMatrix::identity(dim, dim) * w0 - &disc.matrix * tg;
    let lu = shifted.lu();
    if !lu.is_invertible() {
        return Err(Error::Solver("shifted operator is singular".into()));
    }
    let solve = |b: &DVector<f64>, i: usize| {
        lu.solve(b).ok_or_else(|| Error::Solver(format!("linear solve failed at step {i}")))
    };

    let data_scale = [
        disc.norm(data.upsilon.as_slice()),
        data.velocity.as_ref().map_or(0.0, |b| disc.norm(b.as_slice())),
        disc.norm(g.spatial().as_slice()),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let mut monitor = GrowthMonitor { reference: data_scale, unstable: false };

    let states_v = match spec.evaluation {
        Evaluation::Direct => {
            let w = cq_weights(spec.gamma, spec.k, n)?;
            let w = w.weights();
            let mut states_v: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
            states_v.push(DVector::zeros(dim));
            for i in 1..=n {
                let mut b = &rhs[i] * tg;
                for j in 1..=i {
                    b.axpy(-w[j], &states_v[i - j], 1.0);
                }
                let v = solve(&b, i)?;
                monitor.observe(i, disc.norm(v.as_slice()));
                states_v.push(v);
                if monitor.unstable {
                    break;
                }
            }
            abandon(states_v, n, dim)
        }
        Evaluation::Extended => {
            let w = cq_weights_extended(spec.gamma, spec.k, n)?;
            let tgq = Quad::from(tg);
            let mut states: Vec<Vec<Quad>> = Vec::with_capacity(n + 1);
            states.push(vec![Quad::ZERO; dim]);
            let mut states_v = Vec::with_capacity(n + 1);
            states_v.push(DVector::zeros(dim));
            for i in 1..=n {
                let mut b: Vec<Quad> = rhs_ext[i].iter().map(|&r| tgq * r).collect();
                for j in 1..=i {
                    let wj = w[j];
                    for (bx, vx) in b.iter_mut().zip(&states[i - j]) {
                        *bx -= wj * *vx;
                    }
                }
                let v = refined_solve(&lu, &disc.matrix, w[0], tg, &b, i)?;
                let rounded = DVector::from_iterator(dim, v.iter().map(|x| x.0));
                monitor.observe(i, disc.norm(rounded.as_slice()));
                states.push(v);
                states_v.push(rounded);
                if monitor.unstable {
                    break;
                }
            }
            abandon(states_v, n, dim)
        }
    };
    let unstable = monitor.unstable;

    let times: Vec<f64> = (0..=n).map(|i| i as f64 * tau).collect();
    let states_u = states_v
        .iter()
        .zip(&times)
        .map(|(v, &t)| {
            let mut u = v + &data.upsilon;
            if let Some(b) = &data.velocity {
                u.axpy(t, b, 1.0);
            }
            u
        })
        .collect();
    Ok(Trajectory {
        times,
        states_v,
        states_u,
        rhs,
        metadata: RunMetadata {
            spec: spec.clone(),
            wall_time: start.elapsed(),
            stability: stability_check(spec.gamma, spec.k)?,
            unstable,
        },
    })
}

/// Stepping stops once growth is flagged; the steps never taken are NaN.
fn abandon(mut states: Vec<DVector<f64>>, n: usize, dim: usize) -> Vec<DVector<f64>> {
    states.resize(n + 1, DVector::from_element(dim, f64::NAN));
    states
}

/// Relative residual of the scheme at each step `n = 1..=N`, measured against
/// the largest of the three terms it balances.
pub fn scheme_residuals(traj: &Trajectory, disc: &Discretization) -> Result<Vec<f64>> {
    let spec = &traj.metadata.spec;
    let n = spec.n_steps;
    let w = cq_weights(spec.gamma, spec.k, n)?;
    let w = w.weights();
    let tg_inv = spec.tau().powf(-spec.gamma);
    let v = &traj.states_v;
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut history = DVector::zeros(disc.dim());
        for j in 0..=i {
            history.axpy(w[j] * tg_inv, &v[i - j], 1.0);
        }
        let av = &disc.matrix * &v[i];
        let r = &history - &av - &traj.rhs[i];
        let scale = [&history, &av, &traj.rhs[i]]
            .iter()
            .map(|x| disc.norm(x.as_slice()))
            .fold(f64::MIN_POSITIVE, f64::max);
        out.push(disc.norm(r.as_slice()) / scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::TemporalFactor;
    use approx::assert_relative_eq;

    fn wave_spec(m: usize, n: usize) -> ProblemSpec {
        ProblemSpec::new(
            1.3,
            6,
            m,
            1.0,
            n,
            Profile::sine_bubble(),
            Some(Profile::cosine_bubble()),
            SourceDescriptor::zero(),
            16,
        )
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability_check(1.7, 6).unwrap(), Stability::Conditional);
        assert_eq!(stability_check(0.7, 6).unwrap(), Stability::Unconditional);
        assert_eq!(stability_check(1.3, 3).unwrap(), Stability::Unconditional);
        assert_eq!(stability_check(1.99, 2).unwrap(), Stability::Unconditional);
        assert_eq!(stability_check(1.40, 5).unwrap(), Stability::Conditional);
        assert!(stability_check(1.5, 7).is_err());
    }

    #[test]
    fn validation() {
        let ok = wave_spec(3, 10);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.gamma = 1.0;
        assert!(matches!(bad.validate(), Err(Error::InvalidProblem(_))));
        let mut bad = ok.clone();
        bad.velocity = None;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.gamma = 0.5;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.m = 8;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.k = 0;
        assert!(matches!(bad.validate(), Err(Error::InvalidStepNumber(0))));
        assert!(matches!(ok.with_steps(0).validate(), Err(Error::InvalidResolution(0))));
    }

    #[test]
    fn rhs_grid_examples() {
        let op = laplacian_dirichlet(12).unwrap();
        let tau = 0.1;
        let zero = ProblemSpec::new(
            1.5,
            3,
            2,
            1.0,
            10,
            Profile::zero(),
            Some(Profile::zero()),
            SourceDescriptor::zero(),
            12,
        );
        let g = smoothed_grid_with(&zero.source, 2, tau, 10, op.interior_nodes(), zero.quadrature).unwrap();
        assert!(rhs_grid(&zero, &op, &g).unwrap().iter().all(|f| f.iter().all(|&x| x == 0.0)));

        let sub = ProblemSpec::new(0.5, 3, 3, 1.0, 10, Profile::sine_bubble(), None, SourceDescriptor::zero(), 12);
        let g = smoothed_grid_with(&sub.source, 3, tau, 10, op.interior_nodes(), sub.quadrature).unwrap();
        let f = rhs_grid(&sub, &op, &g).unwrap();
        let expected = op.matrix() * op.sample(&Profile::sine_bubble()) * (tau.powi(3) / 6.0);
        assert!(f[0].iter().all(|&x| x == 0.0));
        assert!((&f[1] - &expected).amax() <= 1e-15 * expected.amax());

        let wave = ProblemSpec::new(
            1.5,
            3,
            2,
            1.0,
            10,
            Profile::zero(),
            Some(Profile::cosine_bubble()),
            SourceDescriptor::zero(),
            12,
        );
        let g = smoothed_grid_with(&wave.source, 2, tau, 10, op.interior_nodes(), wave.quadrature).unwrap();
        let f = rhs_grid(&wave, &op, &g).unwrap();
        let expected = op.matrix() * op.sample(&Profile::cosine_bubble()) * ((2.0 * tau).powi(3) / 6.0);
        assert!((&f[2] - &expected).amax() <= 1e-15 * expected.amax());

        let mismatched = smoothed_grid_with(&wave.source, 3, tau, 10, op.interior_nodes(), wave.quadrature).unwrap();
        assert!(matches!(rhs_grid(&wave, &op, &mismatched), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_differences_of_powers() {
        // ∇^m n^m = m! once the stencil sees no negative indices.
        for m in 2..=7 {
            for i in m..m + 5 {
                assert_eq!(backward_difference_of_power(m, m as u32, i) as f64, factorial(m));
            }
            assert_eq!(backward_difference_of_power(m, m as u32, 0), 0);
            assert_eq!(backward_difference_of_power(m, m as u32, 1), 1);
        }
        // ∇^2 n^3 = 6n − 6 for n ≥ 2
        assert_eq!(backward_difference_of_power(2, 3, 5), 24);
    }

    #[test]
    fn reduced_power_reassembles_weights() {
        // (1 − ξ)^m p(ξ)^m = (τδ(ξ))^m
        for k in 1..=6 {
            for m in 2..=7 {
                let (p, den) = reduced_power_exact(k, m).unwrap();
                let p: Vec<f64> = p.iter().map(|&x| x as f64 / den as f64).collect();
                let w = cq_weights(m as f64, k, p.len() + m).unwrap();
                let mut c = vec![0.0; p.len() + m + 1];
                let mut binom = 1.0;
                for l in 0..=m {
                    for (j, pj) in p.iter().enumerate() {
                        c[l + j] += binom * pj;
                    }
                    binom *= -((m - l) as f64) / (l + 1) as f64;
                }
                let size = w.weights().iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
                for (a, b) in c.iter().zip(w.weights()) {
                    assert!((a - b).abs() <= 1e-14 * size, "k={k} m={m}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn refined_solve_reaches_double_double_residual() {
        let op = laplacian_dirichlet(12).unwrap();
        let a = op.matrix();
        let (w0, tg) = (Quad::from(1.7), 0.01);
        let shifted = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| if i == j { 1.7 } else { 0.0 } - tg * a[(i, j)]);
        let lu = shifted.lu();
        let b: Vec<Quad> = (0..a.nrows()).map(|i| Quad::from(1.0 + i as f64) / Quad::from(3.0)).collect();
        let x = refined_solve(&lu, a, w0, tg, &b, 0).unwrap();
        for i in 0..a.nrows() {
            let mut r = b[i] - w0 * x[i];
            for j in 0..a.ncols() {
                r += Quad::from(tg) * Quad::from(a[(i, j)]) * x[j];
            }
            assert!(r.0.abs() < 1e-26, "row {i}: residual {}", r.0);
        }
    }

    #[test]
    fn evaluations_agree_on_coarse_grids() {
        let source = SourceDescriptor::convolution(-1.5, TemporalFactor::Exp, Profile::exp_with_indicator())
            .with_regular_summand();
        for (gamma, velocity) in [(1.5, Some(Profile::cosine_bubble())), (0.6, None)] {
            let spec = ProblemSpec::new(gamma, 3, 3, 1.0, 50, Profile::sine_bubble(), velocity, source.clone(), 10);
            let a = advance(&spec.clone().with_evaluation(Evaluation::Direct)).unwrap();
            let b = advance(&spec.with_evaluation(Evaluation::Extended)).unwrap();
            for (x, y) in a.states_u.iter().zip(&b.states_u) {
                assert!((x - y).amax() <= 1e-9 * y.amax().max(1.0), "gamma={gamma}");
            }
        }
    }

    #[test]
    fn zero_data_fixed_point() {
        let spec = ProblemSpec::new(0.5, 1, 2, 1.0, 20, Profile::zero(), None, SourceDescriptor::zero(), 8);
        for mode in [Evaluation::Direct, Evaluation::Extended] {
            let traj = advance(&spec.clone().with_evaluation(mode)).unwrap();
            assert_eq!(traj.states_v.len(), 21);
            assert!(traj.states_u.iter().all(|u| u.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn initial_state() {
        let spec = wave_spec(3, 8);
        let traj = advance(&spec).unwrap();
        let op = laplacian_dirichlet(16).unwrap();
        assert!(traj.states_v[0].iter().all(|&x| x == 0.0));
        assert_eq!(traj.states_u[0], op.sample(&Profile::sine_bubble()));
        assert_eq!(traj.times.len(), 9);
        assert_relative_eq!(traj.times[8], 1.0, epsilon = 1e-15);
        assert_eq!(traj.metadata.stability, Stability::Conditional);
        assert!(!traj.metadata.unstable);
    }

    #[test]
    fn derivative_modes_agree_on_coarse_grids() {
        let source = SourceDescriptor::product(-1.8, TemporalFactor::Exp, Profile::exp_with_indicator())
            .with_regular_summand();
        for m in 2..=5 {
            let spec = wave_spec(m, 24);
            let spec = ProblemSpec { source: source.clone(), ..spec };
            let disc = Discretization::spectral(16).unwrap();
            let a = differentiated_rhs(&spec.clone().with_evaluation(Evaluation::Direct), &disc).unwrap();
            let b = differentiated_rhs(&spec.clone().with_evaluation(Evaluation::Extended), &disc).unwrap();
            // roundoff of the literal sum: ε τ^{−m} Σ|ω_j| max|F|
            let op = laplacian_dirichlet(16).unwrap();
            let g = smoothed_grid_with(&spec.source, m, spec.tau(), 24, op.interior_nodes(), spec.quadrature)
                .unwrap();
            let fmax = rhs_grid(&spec, &op, &g).unwrap().iter().fold(0.0f64, |acc, f| acc.max(f.amax()));
            let wsum: f64 = cq_weights(m as f64, 6, 24).unwrap().weights().iter().map(|x| x.abs()).sum();
            let tol = 100.0 * f64::EPSILON * spec.tau().powi(-(m as i32)) * wsum * fmax;
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).amax() <= tol, "m={m}: {} vs {} (tol {tol})", x.amax(), y.amax());
            }
        }
    }

    #[test]
    fn scheme_residual_is_small() {
        let source = SourceDescriptor::convolution(-1.2, TemporalFactor::Exp, Profile::exp_with_indicator());
        for (gamma, velocity) in [(1.7, Some(Profile::cosine_bubble())), (0.3, None)] {
            for mode in [Evaluation::Direct, Evaluation::Extended] {
                let spec =
                    ProblemSpec::new(gamma, 6, 4, 1.0, 40, Profile::sine_bubble(), velocity.clone(), source.clone(), 16)
                        .with_evaluation(mode);
                let disc = Discretization::spectral(16).unwrap();
                let traj = advance_with(&spec, &disc).unwrap();
                let worst = scheme_residuals(&traj, &disc).unwrap().into_iter().fold(0.0, f64::max);
                assert!(worst < 1e-10, "gamma={gamma} {mode:?}: {worst}");
            }
        }
    }

    #[test]
    fn linear_in_data() {
        let q = SourceDescriptor::product(-1.8, TemporalFactor::Exp, Profile::exp_with_indicator());
        let base = |initial: Profile, velocity: Profile, source: SourceDescriptor| {
            ProblemSpec::new(1.3, 4, 3, 1.0, 30, initial, Some(velocity), source, 12)
        };
        let u1 = advance(&base(Profile::sine_bubble(), Profile::zero(), SourceDescriptor::zero())).unwrap();
        let u2 = advance(&base(Profile::zero(), Profile::cosine_bubble(), SourceDescriptor::zero())).unwrap();
        let u3 = advance(&base(Profile::zero(), Profile::zero(), q.clone())).unwrap();
        let all = advance(&base(Profile::sine_bubble(), Profile::cosine_bubble(), q)).unwrap();
        for n in 0..=30 {
            let sum = &u1.states_u[n] + &u2.states_u[n] + &u3.states_u[n];
            let diff = (&sum - &all.states_u[n]).amax();
            assert!(diff <= 1e-12 * all.states_u[n].amax().max(1e-300), "n={n}: {diff}");
        }
    }

    #[test]
    fn scalar_mode_runs() {
        let spec = ProblemSpec::new(
            0.7,
            2,
            2,
            1.0,
            16,
            Profile::constant(1.0),
            None,
            SourceDescriptor::power(-1.2, Profile::constant(1.0)),
            1,
        );
        let traj = advance_with(&spec, &Discretization::scalar(-1.0)).unwrap();
        assert_eq!(traj.terminal_u().len(), 1);
        assert!(traj.terminal_u()[0].is_finite());
    }
}
