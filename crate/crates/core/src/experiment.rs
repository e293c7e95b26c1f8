//! Convergence studies: the six benchmark cases, self-convergence tables and
//! their CSV/Markdown forms.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{convergence_order, scalar_exact_u, ScalarModeProblem};
use crate::solver::{advance, advance_with, Discretization, ProblemSpec, Stability};
use crate::source::{SourceDescriptor, TemporalFactor};
use crate::spatial::{laplacian_dirichlet, Profile};

/// Difference norms below this are dominated by roundoff and excluded from rates.
pub const ROUNDOFF_THRESHOLD: f64 = 1e-12;

pub const DEFAULT_NS: [usize; 5] = [200, 400, 800, 1600, 3200];
pub const DEFAULT_MS: [usize; 6] = [2, 3, 4, 5, 6, 7];
pub const DEFAULT_K: usize = 6;
pub const DEFAULT_DEGREE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum CaseId {
    #[value(name = "a")]
    A,
    #[value(name = "b-conv")]
    BConv,
    #[value(name = "b-prod")]
    BProd,
    #[value(name = "c-power")]
    CPower,
    #[value(name = "c-conv")]
    CConv,
    #[value(name = "c-prod")]
    CProd,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [CaseId::A, CaseId::BConv, CaseId::BProd, CaseId::CPower, CaseId::CConv, CaseId::CProd];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::A => "a",
            CaseId::BConv => "b-conv",
            CaseId::BProd => "b-prod",
            CaseId::CPower => "c-power",
            CaseId::CConv => "c-conv",
            CaseId::CProd => "c-prod",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            CaseId::A => "Case (a): diffusion-wave, no source",
            CaseId::BConv => "Case (b): diffusion-wave, convolution source",
            CaseId::BProd => "Case (b): diffusion-wave, product source",
            CaseId::CPower => "Case (c): subdiffusion, power source",
            CaseId::CConv => "Case (c): subdiffusion, convolution source",
            CaseId::CProd => "Case (c): subdiffusion, product source",
        }
    }

    pub fn is_subdiffusion(self) -> bool {
        matches!(self, CaseId::CPower | CaseId::CConv | CaseId::CProd)
    }

    pub fn has_singular_source(self) -> bool {
        self != CaseId::A
    }

    /// `(γ, μ)` pairs of the benchmark tables.
    pub fn default_pairs(self) -> Vec<(f64, Option<f64>)> {
        match self {
            CaseId::A => vec![(1.3, None), (1.7, None)],
            CaseId::BConv | CaseId::BProd => vec![(1.3, Some(-1.8)), (1.7, Some(-1.2))],
            _ => vec![(0.3, Some(-1.8)), (0.7, Some(-1.2))],
        }
    }

    pub fn source(self, mu: Option<f64>) -> SourceDescriptor {
        let q = Profile::exp_with_indicator;
        let mu = mu.unwrap_or(f64::NAN);
        match self {
            CaseId::A => SourceDescriptor::zero(),
            CaseId::BConv | CaseId::CConv => {
                SourceDescriptor::convolution(mu, TemporalFactor::Exp, q()).with_regular_summand()
            }
            CaseId::BProd | CaseId::CProd => {
                SourceDescriptor::product(mu, TemporalFactor::Exp, q()).with_regular_summand()
            }
            CaseId::CPower => SourceDescriptor::power(mu, q()),
        }
    }

    /// Problem at `(γ, μ, m)` with `N` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn problem(
        self,
        gamma: f64,
        mu: Option<f64>,
        k: usize,
        m: usize,
        n: usize,
        degree: usize,
        t_final: f64,
    ) -> ProblemSpec {
        let velocity = (!self.is_subdiffusion()).then(Profile::cosine_bubble);
        ProblemSpec::new(gamma, k, m, t_final, n, Profile::sine_bubble(), velocity, self.source(mu), degree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    #[value(name = "md")]
    Markdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub case: CaseId,
    /// `(γ, μ)` pairs; `μ` is `None` for case (a).
    pub pairs: Vec<(f64, Option<f64>)>,
    pub k: usize,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub degree: usize,
    pub t_final: f64,
}

impl ExperimentPlan {
    /// The benchmark table for `case`.
    pub fn table(case: CaseId) -> Self {
        ExperimentPlan {
            case,
            pairs: case.default_pairs(),
            k: DEFAULT_K,
            ms: DEFAULT_MS.to_vec(),
            ns: DEFAULT_NS.to_vec(),
            degree: DEFAULT_DEGREE,
            t_final: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.pairs.is_empty() {
            return bad("at least one gamma is required".into());
        }
        for &(gamma, mu) in &self.pairs {
            if gamma == 1.0 {
                return bad("gamma = 1 is excluded".into());
            }
            if self.case.is_subdiffusion() && !(gamma > 0.0 && gamma < 1.0) {
                return bad(format!("case {} needs gamma in (0,1), got {gamma}", self.case.name()));
            }
            if !self.case.is_subdiffusion() && !(gamma > 1.0 && gamma < 2.0) {
                return bad(format!("case {} needs gamma in (1,2), got {gamma}", self.case.name()));
            }
            match mu {
                Some(mu) if self.case.has_singular_source() && !(mu > -2.0 && mu < -1.0) => {
                    return bad(format!("mu must lie in (-2,-1) for singular sources, got {mu}"));
                }
                None if self.case.has_singular_source() => {
                    return bad(format!("case {} needs a mu for every gamma", self.case.name()));
                }
                _ => {}
            }
        }
        if !(1..=crate::cq::MAX_STEPS).contains(&self.k) {
            return bad(format!("k must lie in 1..=6, got {}", self.k));
        }
        if self.ms.is_empty() || self.ms.iter().any(|m| !(2..=crate::source::MAX_SMOOTHING).contains(m)) {
            return bad(format!("every m must lie in 2..=7, got {:?}", self.ms));
        }
        if self.ns.is_empty() || self.ns[0] < 2 || !self.ns[0].is_multiple_of(2) {
            return bad(format!("N values must be even and at least 2, got {:?}", self.ns));
        }
        if self.ns.windows(2).any(|w| w[1] != 2 * w[0]) {
            return bad(format!("each N must double the previous one, got {:?}", self.ns));
        }
        if self.degree < 2 {
            return bad(format!("M must be at least 2, got {}", self.degree));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_final));
        }
        Ok(())
    }

    /// Step counts actually run: every `N`, then `2N` for the last column.
    pub fn run_steps(&self) -> Vec<usize> {
        let last = 2 * self.ns[self.ns.len() - 1];
        self.ns.iter().copied().chain(std::iter::once(last)).collect()
    }

    /// `(γ, μ, m)` in table order.
    pub fn rows(&self) -> Vec<(f64, Option<f64>, usize)> {
        self.pairs
            .iter()
            .flat_map(|&(g, mu)| self.ms.iter().map(move |&m| (g, mu, m)))
            .collect()
    }
}

/// One `(γ, μ, m)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub gamma: f64,
    pub mu: Option<f64>,
    pub m: usize,
    /// `‖u^N(T) − u^{2N}(T)‖` for each `N` of the plan.
    pub diffs: Vec<f64>,
    /// Order between consecutive columns; `orders[0]` is always `None`.
    pub orders: Vec<Option<f64>>,
    /// Order of the finest pair whose differences both exceed [`ROUNDOFF_THRESHOLD`]
    /// and come from runs that stayed bounded.
    pub rate: Option<f64>,
    /// Index of the column `rate` was read from.
    pub rate_column: Option<usize>,
    pub roundoff: bool,
    /// Per column: one of the two runs behind the difference grew without bound.
    pub unstable: Vec<bool>,
    pub error: Option<String>,
}

impl TableRow {
    pub fn from_diffs(gamma: f64, mu: Option<f64>, m: usize, diffs: Vec<f64>, unstable: Vec<bool>) -> Self {
        assert_eq!(diffs.len(), unstable.len());
        let mut orders = vec![None];
        for w in diffs.windows(2) {
            orders.push(convergence_order(w).ok().map(|o| o[0]));
        }
        let usable = |i: usize| diffs[i] >= ROUNDOFF_THRESHOLD && !unstable[i];
        let rate_column = (1..diffs.len()).rev().find(|&i| usable(i) && usable(i - 1) && orders[i].is_some());
        TableRow {
            gamma,
            mu,
            m,
            rate: rate_column.and_then(|i| orders[i]),
            rate_column,
            roundoff: diffs.iter().any(|&d| d < ROUNDOFF_THRESHOLD),
            diffs,
            orders,
            unstable,
            error: None,
        }
    }

    pub fn any_unstable(&self) -> bool {
        self.unstable.iter().any(|&u| u)
    }

    fn failed(gamma: f64, mu: Option<f64>, m: usize, error: String) -> Self {
        TableRow {
            gamma,
            mu,
            m,
            diffs: Vec::new(),
            orders: Vec::new(),
            rate: None,
            rate_column: None,
            roundoff: false,
            unstable: Vec::new(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub case: CaseId,
    pub k: usize,
    pub ns: Vec<usize>,
    pub rows: Vec<TableRow>,
}

impl ConvergenceTable {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn row(&self, gamma: f64, m: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.gamma == gamma && r.m == m)
    }
}

struct RunOutcome {
    terminal: Vec<f64>,
    unstable: bool,
}

/// Runs every `(γ, μ, m, N)` of the plan in parallel and assembles the table in plan order.
pub fn run_case(plan: &ExperimentPlan) -> Result<ConvergenceTable> {
    plan.validate()?;
    let op = laplacian_dirichlet(plan.degree)?;
    let steps = plan.run_steps();
    let rows = plan.rows();
    let jobs: Vec<(usize, usize)> = (0..rows.len()).flat_map(|r| (0..steps.len()).map(move |s| (r, s))).collect();
    let outcomes: Vec<std::result::Result<RunOutcome, String>> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let (gamma, mu, m) = rows[r];
            let spec = plan.case.problem(gamma, mu, plan.k, m, steps[s], plan.degree, plan.t_final);
            advance(&spec)
                .map(|traj| RunOutcome {
                    terminal: traj.terminal_u().as_slice().to_vec(),
                    unstable: traj.metadata.unstable,
                })
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut table_rows = Vec::with_capacity(rows.len());
    for (r, &(gamma, mu, m)) in rows.iter().enumerate() {
        let runs = &outcomes[r * steps.len()..(r + 1) * steps.len()];
        if let Some(Err(e)) = runs.iter().find(|o| o.is_err()) {
            table_rows.push(TableRow::failed(gamma, mu, m, e.clone()));
            continue;
        }
        let runs: Vec<&RunOutcome> = runs.iter().map(|o| o.as_ref().ok().unwrap()).collect();
        let diffs = runs
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[0].terminal.iter().zip(&w[1].terminal).map(|(a, b)| a - b).collect();
                op.l2_norm(&d)
            })
            .collect();
        let unstable = runs.windows(2).map(|w| w[0].unstable || w[1].unstable).collect();
        table_rows.push(TableRow::from_diffs(gamma, mu, m, diffs, unstable));
    }
    Ok(ConvergenceTable { case: plan.case, k: plan.k, ns: plan.ns.clone(), rows: table_rows })
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_sci(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_default()
}

pub const CSV_HEADER: [&str; 7] = ["gamma", "mu", "m", "N", "diff_norm", "order", "roundoff_flag"];

/// CSV with one record per `(γ, μ, m, N)`; floats carry 17 significant digits.
pub fn write_csv<W: Write>(table: &ConvergenceTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("CSV output failed: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in &table.rows {
        for (i, n) in table.ns.iter().enumerate() {
            let diff = row.diffs.get(i).copied();
            let order = row.orders.get(i).copied().flatten();
            let flag = diff.map(|d| (d < ROUNDOFF_THRESHOLD).to_string()).unwrap_or_default();
            w.write_record([
                sci(row.gamma),
                opt_sci(row.mu),
                row.m.to_string(),
                n.to_string(),
                opt_sci(diff),
                opt_sci(order),
                flag,
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("CSV output failed: {e}")))?;
    Ok(())
}

/// One parsed CSV record.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub gamma: f64,
    pub mu: Option<f64>,
    pub m: usize,
    pub n: usize,
    pub diff_norm: Option<f64>,
    pub order: Option<f64>,
    pub roundoff_flag: Option<bool>,
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CsvRecord>> {
    let parse_err = |what: &str, v: &str| Error::InvalidArgument(format!("cannot parse {what} from {v:?}"));
    let opt = |v: &str| -> Result<Option<f64>> {
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| parse_err("number", v))
        }
    };
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.push(CsvRecord {
            gamma: rec[0].parse().map_err(|_| parse_err("gamma", &rec[0]))?,
            mu: opt(&rec[1])?,
            m: rec[2].parse().map_err(|_| parse_err("m", &rec[2]))?,
            n: rec[3].parse().map_err(|_| parse_err("N", &rec[3]))?,
            diff_norm: opt(&rec[4])?,
            order: opt(&rec[5])?,
            roundoff_flag: match &rec[6] {
                "" => None,
                v => Some(v.parse().map_err(|_| parse_err("roundoff flag", v))?),
            },
        });
    }
    Ok(out)
}

/// Table in the layout of the benchmark tables: one line per `m`, one column
/// per `N`, then the rate.
pub fn to_markdown(table: &ConvergenceTable) -> String {
    let mut s = String::new();
    let singular = table.case.has_singular_source();
    let _ = writeln!(s, "### {} (BDF{})\n", table.case.title(), table.k);
    let first = if singular { "(gamma, mu)" } else { "gamma" };
    let _ = write!(s, "| {first} | m |");
    for n in &table.ns {
        let _ = write!(s, " N={n} |");
    }
    let _ = writeln!(s, " Rate |");
    let _ = write!(s, "|---|---|");
    for _ in &table.ns {
        let _ = write!(s, "---|");
    }
    let _ = writeln!(s, "---|");
    let mut any_roundoff = false;
    let mut any_unstable = false;
    for row in &table.rows {
        let label = match row.mu {
            Some(mu) if singular => format!("({}, {})", row.gamma, mu),
            _ => format!("{}", row.gamma),
        };
        let _ = write!(s, "| {label} | {} |", row.m);
        if let Some(err) = &row.error {
            for _ in &table.ns {
                let _ = write!(s, " - |");
            }
            let _ = writeln!(s, " failed: {} |", err.replace('|', "/"));
            continue;
        }
        for (d, &unstable) in row.diffs.iter().zip(&row.unstable) {
            let mark = if unstable {
                any_unstable = true;
                "!"
            } else if *d < ROUNDOFF_THRESHOLD {
                any_roundoff = true;
                "*"
            } else {
                ""
            };
            let _ = write!(s, " {d:.4e}{mark} |");
        }
        let rate = row.rate.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, " {rate} |");
    }
    if any_roundoff {
        let _ = writeln!(
            s,
            "\n\\* below {ROUNDOFF_THRESHOLD:e}: dominated by roundoff and excluded from the rate, which is \
             then taken from the finest pair above the threshold."
        );
    }
    if any_unstable {
        let _ = writeln!(
            s,
            "\n! at least one of the two runs grew without bound (the step size lies outside the \
             stability region for some eigenvalue of the spatial operator); excluded from the rate."
        );
    }
    s
}

pub fn write_markdown<W: Write>(table: &ConvergenceTable, mut out: W) -> Result<()> {
    out.write_all(to_markdown(table).as_bytes())
        .map_err(|e| Error::InvalidArgument(format!("Markdown output failed: {e}")))
}

pub fn emit<W: Write>(table: &ConvergenceTable, format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(table, out),
        Format::Markdown => write_markdown(table, out),
    }
}

/// Errors of the scalar-mode stepper against the exact solution at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStudy {
    pub gamma: f64,
    pub k: usize,
    pub m: usize,
    pub ns: Vec<usize>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
}

pub const ORACLE_NS: [usize; 5] = [64, 128, 256, 512, 1024];

/// `λ = −1`, `υ₀ = b₀ = q₀ = 1`, `μ = −1.2` on `[0, 1]`.
pub fn oracle_problem(gamma: f64) -> ScalarModeProblem {
    ScalarModeProblem {
        gamma,
        lambda: -1.0,
        upsilon: 1.0,
        velocity: if gamma > 1.0 { 1.0 } else { 0.0 },
        source: 1.0,
        mu: -1.2,
        t_final: 1.0,
    }
}

pub fn oracle_study(p: &ScalarModeProblem, k: usize, m: usize, ns: &[usize]) -> Result<OracleStudy> {
    let exact = scalar_exact_u(p, p.t_final)?;
    let errors = ns
        .par_iter()
        .map(|&n| {
            let (spec, disc) = p.to_spec(k, m, n);
            advance_with(&spec, &disc).map(|t| (t.terminal_u()[0] - exact).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let orders = convergence_order(&errors)?;
    Ok(OracleStudy { gamma: p.gamma, k, m, ns: ns.to_vec(), errors, orders })
}

/// Outcome of one runtime property check.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> PropertyCheck {
    PropertyCheck { name, passed: worst <= tol, detail: format!("worst {worst:.3e} (tolerance {tol:.0e})") }
}

/// Algebraic invariants of the building blocks, checked at run time.
pub fn property_suite() -> Result<Vec<PropertyCheck>> {
    use crate::cq::cq_weights;
    use crate::source::smoothed_grid;
    use crate::solver::scheme_residuals;

    let mut out = Vec::new();

    // ω^{(a)} ∗ ω^{(b)} = ω^{(a+b)}
    let mut worst = 0.0f64;
    for k in 1..=6 {
        for &(a, b) in &[(0.3, 0.9), (1.3, 0.4), (-0.5, 1.7)] {
            let wa = cq_weights(a, k, 64)?;
            let wb = cq_weights(b, k, 64)?;
            let wab = cq_weights(a + b, k, 64)?;
            for (x, y) in wa.convolve(&wb).iter().zip(wab.weights()) {
                worst = worst.max((x - y).abs() / y.abs().max(1.0));
            }
        }
    }
    out.push(check("CQ weight group property", worst, 1e-12));

    // integer orders reproduce the powers of the generating polynomial
    let mut worst = 0.0f64;
    for k in 1..=6 {
        let delta = crate::cq::bdf_polynomial(k)?;
        let w1 = cq_weights(1.0, k, 16)?;
        for (j, w) in w1.weights().iter().enumerate() {
            let c = delta.coeffs().get(j).copied().unwrap_or(0.0);
            worst = worst.max((w - c).abs());
        }
    }
    out.push(check("CQ integer-order consistency", worst, 1e-14));

    // J^m t^μ in closed form, and G^0 = 0
    let mut worst = 0.0f64;
    let mut g0 = 0.0f64;
    for &mu in &[-1.8, -1.5, -1.2] {
        for m in 2..=7 {
            let g = smoothed_grid(&SourceDescriptor::power(mu, Profile::constant(1.0)), m, 0.1, 10, &[0.0])?;
            for (i, v) in g.temporal().iter().enumerate().skip(1) {
                let exact = crate::source::smooth_power_source(mu, m, 0.1 * i as f64)?;
                worst = worst.max((v - exact).abs() / exact.abs());
            }
            for case in [CaseId::BConv, CaseId::BProd] {
                let g = smoothed_grid(&case.source(Some(mu)), m, 0.1, 4, &[0.0, 0.5])?;
                g0 = g0.max(g.samples()[0].amax());
            }
            g0 = g0.max(g.samples()[0].amax());
        }
    }
    out.push(check("smoothed power source closed form", worst, 1e-13));
    out.push(check("smoothed source vanishes at t = 0", g0, 0.0));

    // the collocated Laplacian differentiates polynomials exactly
    let op = laplacian_dirichlet(16)?;
    let p = Profile::new("poly", |x: f64| (1.0 - x * x) * x.powi(5));
    let d2 = Profile::new("poly''", |x: f64| 20.0 * x.powi(3) - 42.0 * x.powi(5));
    let err = (op.matrix() * op.sample(&p) - op.sample(&d2)).amax();
    out.push(check("spectral exactness on polynomials", err, 1e-10));

    // zero data stay zero
    let zero = CaseId::A.problem(1.5, None, 6, 3, 40, 12, 1.0);
    let zero = ProblemSpec { initial: Profile::zero(), velocity: Some(Profile::zero()), ..zero };
    let traj = advance(&zero)?;
    let max = traj.states_u.iter().map(|u| u.amax()).fold(0.0, f64::max);
    out.push(check("zero data fixed point", max, 0.0));

    // superposition
    let base = CaseId::BProd.problem(1.3, Some(-1.5), 6, 4, 60, 12, 1.0);
    let only_initial = ProblemSpec {
        velocity: Some(Profile::zero()),
        source: SourceDescriptor::zero(),
        ..base.clone()
    };
    let only_velocity = ProblemSpec { initial: Profile::zero(), source: SourceDescriptor::zero(), ..base.clone() };
    let only_source = ProblemSpec { initial: Profile::zero(), velocity: Some(Profile::zero()), ..base.clone() };
    let parts = [&only_initial, &only_velocity, &only_source]
        .par_iter()
        .map(|s| advance(s))
        .collect::<Result<Vec<_>>>()?;
    let all = advance(&base)?;
    let mut worst = 0.0f64;
    for n in 0..=base.n_steps {
        let sum = &parts[0].states_u[n] + &parts[1].states_u[n] + &parts[2].states_u[n];
        worst = worst.max((&sum - &all.states_u[n]).amax() / all.states_u[n].amax().max(f64::MIN_POSITIVE));
    }
    out.push(check("solver linearity", worst, 1e-12));

    // every step satisfies the scheme
    let mut worst = 0.0f64;
    for case in [CaseId::BConv, CaseId::CProd] {
        let (gamma, mu) = case.default_pairs()[1];
        let spec = case.problem(gamma, mu, 6, 5, 80, 16, 1.0);
        let disc = Discretization::spectral(16)?;
        let traj = advance_with(&spec, &disc)?;
        worst = worst.max(scheme_residuals(&traj, &disc)?.into_iter().fold(0.0, f64::max));
    }
    out.push(check("per-step scheme residual", worst, 1e-10));
    Ok(out)
}

/// Command-line interface of the `fracsmooth` binary.
#[derive(Debug, Parser)]
#[command(name = "fracsmooth", about = "Self-convergence studies for smoothed BDF convolution quadrature")]
pub struct Cli {
    /// Benchmark case; all six tables when omitted.
    #[arg(long, value_enum)]
    pub case: Option<CaseId>,
    /// Fractional orders.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gamma: Vec<f64>,
    /// Source exponents, paired with --gamma.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Vec<f64>,
    /// BDF step number.
    #[arg(long)]
    pub k: Option<usize>,
    /// Smoothing orders.
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Step counts, each double the previous.
    #[arg(long = "N", value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Chebyshev degree.
    #[arg(long = "M", default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Final time.
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_final: f64,
    /// Output file (or directory when several tables are produced); stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Compare the scalar-mode stepper with the exact solution instead.
    #[arg(long, conflicts_with = "seed_check")]
    pub oracle: bool,
    /// Run the property suite instead.
    #[arg(long)]
    pub seed_check: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Tables { plans: Vec<ExperimentPlan>, format: Format, out: Option<PathBuf> },
    Oracle { gammas: Vec<f64>, ks: Vec<usize>, m: usize, ns: Vec<usize> },
    SeedCheck,
}

/// Parses arguments (program name first) into a validated command.
pub fn parse_cli<I, T>(args: I) -> Result<Command>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    command_from(cli)
}

pub fn command_from(cli: Cli) -> Result<Command> {
    if cli.seed_check {
        return Ok(Command::SeedCheck);
    }
    if cli.oracle {
        let gammas = if cli.gamma.is_empty() { vec![0.7, 1.3] } else { cli.gamma.clone() };
        for &g in &gammas {
            oracle_problem(g).validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let ks = cli.k.map(|k| vec![k]).unwrap_or_else(|| vec![1, 2]);
        if ks.iter().any(|k| !(1..=crate::cq::MAX_STEPS).contains(k)) {
            return Err(Error::InvalidArgument(format!("k must lie in 1..=6, got {ks:?}")));
        }
        let m = match cli.m.as_slice() {
            [] => 2,
            [m] => *m,
            _ => return Err(Error::InvalidArgument("--oracle takes a single m".into())),
        };
        let ns = if cli.n.is_empty() { ORACLE_NS.to_vec() } else { cli.n.clone() };
        if ns.windows(2).any(|w| w[1] != 2 * w[0]) || ns.len() < 2 {
            return Err(Error::InvalidArgument(format!("each N must double the previous one, got {ns:?}")));
        }
        return Ok(Command::Oracle { gammas, ks, m, ns });
    }
    let cases = match cli.case {
        Some(c) => vec![c],
        None => CaseId::ALL.to_vec(),
    };
    let mut plans = Vec::new();
    for case in cases {
        let mut plan = ExperimentPlan::table(case);
        if !cli.gamma.is_empty() {
            plan.pairs = pair_up(case, &cli.gamma, &cli.mu)?;
        } else if !cli.mu.is_empty() {
            return Err(Error::InvalidArgument("--mu needs matching --gamma values".into()));
        }
        if let Some(k) = cli.k {
            plan.k = k;
        }
        if !cli.m.is_empty() {
            plan.ms = cli.m.clone();
        }
        if !cli.n.is_empty() {
            plan.ns = cli.n.clone();
        }
        plan.degree = cli.degree;
        plan.t_final = cli.t_final;
        plan.validate()?;
        plans.push(plan);
    }
    Ok(Command::Tables { plans, format: cli.format, out: cli.out })
}

fn pair_up(case: CaseId, gammas: &[f64], mus: &[f64]) -> Result<Vec<(f64, Option<f64>)>> {
    if !case.has_singular_source() {
        if !mus.is_empty() {
            return Err(Error::InvalidArgument("case a has no source exponent; drop --mu".into()));
        }
        return Ok(gammas.iter().map(|&g| (g, None)).collect());
    }
    match mus.len() {
        0 => Err(Error::InvalidArgument(format!("case {} needs --mu", case.name()))),
        1 => Ok(gammas.iter().map(|&g| (g, Some(mus[0]))).collect()),
        n if n == gammas.len() => Ok(gammas.iter().zip(mus).map(|(&g, &mu)| (g, Some(mu))).collect()),
        n => Err(Error::InvalidArgument(format!(
            "--mu has {n} values but --gamma has {}; give one mu or one per gamma",
            gammas.len()
        ))),
    }
}

/// Warnings worth printing before a table run.
pub fn plan_warnings(plan: &ExperimentPlan) -> Vec<String> {
    plan.pairs
        .iter()
        .filter(|(g, _)| matches!(crate::solver::stability_check(*g, plan.k), Ok(Stability::Conditional)))
        .map(|(g, _)| format!("warning: BDF{} is only conditionally stable for gamma = {g}", plan.k))
        .collect()
}
