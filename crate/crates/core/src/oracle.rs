//! Exact single-mode solutions and the self-convergence order estimator.

use crate::error::{Error, Result};
use crate::numerics::{gamma, recip_gamma, CompensatedSum};
use crate::solver::{Discretization, ProblemSpec};
use crate::source::SourceDescriptor;
use crate::spatial::Profile;

/// Largest `|z|` accepted by [`mittag_leffler`].
pub const SERIES_RADIUS: f64 = 8.0;
const SERIES_CAP: usize = 200;
const SERIES_TOL: f64 = 1e-16;

/// `E_{a,b}(z) = Σ_n z^n / Γ(an + b)` by direct summation.
pub fn mittag_leffler(a: f64, b: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::OracleDomain(format!("Mittag-Leffler parameter a must be positive, got {a}")));
    }
    if !(z.abs() <= SERIES_RADIUS) {
        return Err(Error::OracleDomain(format!("|z| = {} exceeds the series radius {SERIES_RADIUS}", z.abs())));
    }
    let mut acc = CompensatedSum::default();
    let mut zn = 1.0;
    // The terms are not monotone for small n when Γ(an + b) dips below one, so
    // the stopping test waits until the Gamma function is past its minimum.
    for n in 0..SERIES_CAP {
        let x = a * n as f64 + b;
        let term = zn * recip_gamma(x);
        acc.add(term);
        if x > 2.0 && term.abs() <= SERIES_TOL * acc.value().abs() {
            return Ok(acc.value());
        }
        zn *= z;
    }
    Err(Error::OracleDomain(format!(
        "Mittag-Leffler series for a={a}, b={b}, z={z} did not converge in {SERIES_CAP} terms"
    )))
}

/// One eigenmode of the evolution problem: `A` replaced by `λ`, data `υ₀`, `b₀`
/// and a power source `q₀ t^μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarModeProblem {
    pub gamma: f64,
    pub lambda: f64,
    pub upsilon: f64,
    pub velocity: f64,
    pub source: f64,
    pub mu: f64,
    pub t_final: f64,
}

impl ScalarModeProblem {
    pub fn validate(&self) -> Result<()> {
        let g = self.gamma;
        if !(g > 0.0 && g < 2.0) || g == 1.0 {
            return Err(Error::OracleDomain(format!("gamma must lie in (0,1)∪(1,2), got {g}")));
        }
        if !(self.lambda < 0.0 && self.lambda >= -4.0) {
            return Err(Error::OracleDomain(format!("lambda must lie in [-4, 0), got {}", self.lambda)));
        }
        if !(self.mu > -2.0 && self.mu < -1.0) {
            return Err(Error::OracleDomain(format!("mu must lie in (-2, -1), got {}", self.mu)));
        }
        if !(self.t_final > 0.0) || self.lambda.abs() * self.t_final.powf(g) > SERIES_RADIUS {
            return Err(Error::OracleDomain(format!(
                "|lambda| T^gamma = {} exceeds {SERIES_RADIUS}",
                self.lambda.abs() * self.t_final.powf(g)
            )));
        }
        if g < 1.0 && self.velocity != 0.0 {
            return Err(Error::OracleDomain("no initial velocity for gamma < 1".into()));
        }
        Ok(())
    }

    /// The same problem posed for the stepper with `A = λ` (see
    /// [`Discretization::scalar`]).
    pub fn to_spec(&self, k: usize, m: usize, n_steps: usize) -> (ProblemSpec, Discretization) {
        let velocity = (self.gamma > 1.0).then(|| Profile::constant(self.velocity));
        let source = if self.source == 0.0 {
            SourceDescriptor::zero()
        } else {
            SourceDescriptor::power(self.mu, Profile::constant(self.source))
        };
        let spec = ProblemSpec::new(
            self.gamma,
            k,
            m,
            self.t_final,
            n_steps,
            Profile::constant(self.upsilon),
            velocity,
            source,
            1,
        );
        (spec, Discretization::scalar(self.lambda))
    }
}

/// `V(t) = u(t) − υ₀ − t b₀` for the scalar problem.
///
/// Each term follows from `L{t^{β−1} E_{α,β}(λ t^α)}(z) = z^{α−β} / (z^α − λ)`:
/// the transformed equation `(z^γ − λ) V̂ = λυ₀/z + λb₀/z² + q₀ Γ(μ+1) z^{−μ−1}`
/// gives `β = γ + 1`, `γ + 2` and `γ + μ + 1` respectively.
pub fn scalar_exact_solution(p: &ScalarModeProblem, t: f64) -> Result<f64> {
    p.validate()?;
    if !(0.0..=p.t_final).contains(&t) {
        return Err(Error::OracleDomain(format!("t = {t} outside [0, {}]", p.t_final)));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let g = p.gamma;
    let z = p.lambda * t.powf(g);
    let mut v = 0.0;
    if p.upsilon != 0.0 {
        v += p.lambda * p.upsilon * t.powf(g) * mittag_leffler(g, g + 1.0, z)?;
    }
    if p.velocity != 0.0 && g > 1.0 {
        v += p.lambda * p.velocity * t.powf(g + 1.0) * mittag_leffler(g, g + 2.0, z)?;
    }
    if p.source != 0.0 {
        v += p.source * gamma(p.mu + 1.0) * t.powf(g + p.mu) * mittag_leffler(g, g + p.mu + 1.0, z)?;
    }
    Ok(v)
}

/// `u(t) = V(t) + υ₀ + t b₀`.
pub fn scalar_exact_u(p: &ScalarModeProblem, t: f64) -> Result<f64> {
    let b = if p.gamma > 1.0 { p.velocity } else { 0.0 };
    Ok(scalar_exact_solution(p, t)? + p.upsilon + t * b)
}

/// `log2(e_i / e_{i+1})` for errors at successive halvings of the step.
pub fn convergence_order(errs: &[f64]) -> Result<Vec<f64>> {
    if errs.len() < 2 {
        return Err(Error::UndefinedOrder(format!("need at least two errors, got {}", errs.len())));
    }
    if let Some(bad) = errs.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::UndefinedOrder(format!("errors must be positive and finite, got {bad}")));
    }
    Ok(errs.windows(2).map(|w| (w[0] / w[1]).ln() / std::f64::consts::LN_2).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussJacobi;
    use crate::solver::advance_with;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn elementary_cases() {
        let e = std::f64::consts::E;
        assert_relative_eq!(mittag_leffler(1.0, 1.0, 1.0).unwrap(), e, max_relative = 1e-15);
        assert_relative_eq!(mittag_leffler(1.0, 2.0, 1.0).unwrap(), e - 1.0, max_relative = 1e-15);
        // E_{2,1}(−x²) = cos x
        assert_relative_eq!(mittag_leffler(2.0, 1.0, -4.0).unwrap(), 2f64.cos(), max_relative = 1e-13);
        for i in 0..=80 {
            let z = -4.0 + 0.1 * i as f64;
            assert_relative_eq!(mittag_leffler(1.0, 1.0, z).unwrap(), z.exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn half_order_against_laplace_inversion() {
        // E_{1/2,1}(−1) = (1/π) ∫_0^∞ e^{−r} r^{−1/2} / (1 + r) dr  (Hankel contour collapsed
        // onto the branch cut); substituting r = s² gives (2/π) ∫_0^∞ e^{−s²}/(1+s²) ds.
        let rule = GaussJacobi::legendre(200).unwrap();
        let cut = 12.0;
        let panels = 48;
        let h = cut / panels as f64;
        let mut integral = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            integral += 0.5 * h * rule.integrate(|x| {
                let s = a + 0.5 * h * (1.0 + x);
                (-s * s).exp() / (1.0 + s * s)
            });
        }
        let reference = 2.0 / std::f64::consts::PI * integral;
        assert_relative_eq!(mittag_leffler(0.5, 1.0, -1.0).unwrap(), reference, max_relative = 1e-13);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(mittag_leffler(0.5, 1.0, 9.0), Err(Error::OracleDomain(_))));
        assert!(matches!(mittag_leffler(0.0, 1.0, 1.0), Err(Error::OracleDomain(_))));
        let p = ScalarModeProblem {
            gamma: 0.7,
            lambda: -1.0,
            upsilon: 0.0,
            velocity: 0.0,
            source: 1.0,
            mu: -1.2,
            t_final: 1.0,
        };
        assert!(scalar_exact_solution(&p, 1.5).is_err());
        assert!(scalar_exact_solution(&ScalarModeProblem { lambda: -5.0, ..p }, 0.5).is_err());
    }

    #[test]
    fn scalar_examples() {
        let zero = ScalarModeProblem {
            gamma: 1.3,
            lambda: -2.0,
            upsilon: 0.0,
            velocity: 0.0,
            source: 0.0,
            mu: -1.5,
            t_final: 1.0,
        };
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(scalar_exact_solution(&zero, t).unwrap(), 0.0);
        }
        let p = ScalarModeProblem { gamma: 0.7, lambda: -1.0, source: 1.0, mu: -1.2, ..zero };
        let v = scalar_exact_solution(&p, 1.0).unwrap();
        assert_relative_eq!(v, gamma(-0.2) * mittag_leffler(0.7, 0.5, -1.0).unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn subdiffusion_mode_solves_volterra_equation() {
        // For 0 < γ < 1, u = υ₀ + V satisfies u(t) = υ₀ + λ J^γ u(t) + q₀ Γ(μ+1) t^{γ+μ}/Γ(γ+μ+1),
        // where the last term is the fractional integral of t^μ.
        let p = ScalarModeProblem {
            gamma: 0.6,
            lambda: -1.5,
            upsilon: 0.8,
            velocity: 0.0,
            source: 0.0,
            mu: -1.5,
            t_final: 1.0,
        };
        let t = 0.9f64;
        let g = p.gamma;
        // J^γ u(t) = t^γ/Γ(γ) ∫_0^1 (1−y)^{γ−1} u(ty) dy. u is a series in (ty)^γ, so on
        // [0, 1/2] the substitution y = w^{1/γ}/2 leaves a Jacobi weight and a smooth integrand.
        let u = |y: f64| scalar_exact_u(&p, t * y).unwrap();
        let left = GaussJacobi::new(120, 0.0, 1.0 / g - 1.0).unwrap().unit_interval();
        let right = GaussJacobi::new(40, g - 1.0, 0.0).unwrap().unit_interval();
        let head = left.integrate(|w| {
            let y = 0.5 * w.powf(1.0 / g);
            (1.0 - y).powf(g - 1.0) * u(y)
        }) * 0.5
            / g;
        let tail = 0.5f64.powf(g) * right.integrate(|x| u(0.5 + 0.5 * x));
        let ju = t.powf(g) / gamma(g) * (head + tail);
        let lhs = scalar_exact_u(&p, t).unwrap();
        assert_relative_eq!(lhs, p.upsilon + p.lambda * ju, max_relative = 1e-12);
    }

    #[test]
    fn stepper_converges_to_oracle() {
        let p = ScalarModeProblem {
            gamma: 0.7,
            lambda: -1.0,
            upsilon: 1.0,
            velocity: 0.0,
            source: 1.0,
            mu: -1.2,
            t_final: 1.0,
        };
        let exact = scalar_exact_u(&p, 1.0).unwrap();
        let errs: Vec<f64> = [1 << 12, 1 << 13, 1 << 14, 1 << 15, 1 << 16]
            .iter()
            .map(|&n| {
                let (spec, disc) = p.to_spec(1, 2, n);
                let traj = advance_with(&spec, &disc).unwrap();
                (traj.terminal_u()[0] - exact).abs()
            })
            .collect();
        assert!(errs[2] > errs[3] && errs[3] > errs[4], "{errs:?}");
        let rates = convergence_order(&errs).unwrap();
        assert!(rates[3] > 0.8, "{rates:?}");
    }

    #[test]
    fn order_examples() {
        assert_relative_eq!(convergence_order(&[1e-2, 2.5e-3]).unwrap()[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(convergence_order(&[1.0904e-8, 1.5662e-9]).unwrap()[0], 2.7995, epsilon = 1e-3);
        assert_relative_eq!(convergence_order(&[6.4e-2, 1e-3]).unwrap()[0], 6.0, epsilon = 1e-14);
        assert!(matches!(convergence_order(&[1.0, 0.0]), Err(Error::UndefinedOrder(_))));
        assert!(matches!(convergence_order(&[1.0]), Err(Error::UndefinedOrder(_))));
        assert!(matches!(convergence_order(&[-1.0, 0.5]), Err(Error::UndefinedOrder(_))));
    }

    proptest! {
        #[test]
        fn geometric_errors_give_their_exponent(p in 0.5f64..8.0, e0 in 1e-6f64..1.0, len in 2usize..7) {
            let errs: Vec<f64> = (0..len).map(|i| e0 * 2f64.powf(-p * i as f64)).collect();
            for r in convergence_order(&errs).unwrap() {
                prop_assert!((r - p).abs() < 1e-12);
            }
        }
    }
}
