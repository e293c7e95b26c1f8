use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use fracsmooth::experiment::{
    command_from, emit, oracle_problem, oracle_study, plan_warnings, property_suite, run_case, Cli, Command,
    ConvergenceTable, Format,
};

const USAGE_ERROR: u8 = 1;
const SOLVER_FAILURE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let command = match command_from(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    match command {
        Command::SeedCheck => seed_check(),
        Command::Oracle { gammas, ks, m, ns } => oracle(&gammas, &ks, m, &ns),
        Command::Tables { plans, format, out } => tables(&plans, format, out.as_deref()),
    }
}

fn seed_check() -> ExitCode {
    match property_suite() {
        Ok(checks) => {
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(SOLVER_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(SOLVER_FAILURE)
        }
    }
}

fn oracle(gammas: &[f64], ks: &[usize], m: usize, ns: &[usize]) -> ExitCode {
    println!("gamma,k,m,N,error,order");
    for &gamma in gammas {
        for &k in ks {
            match oracle_study(&oracle_problem(gamma), k, m, ns) {
                Ok(study) => {
                    for (i, (n, err)) in study.ns.iter().zip(&study.errors).enumerate() {
                        let order = if i == 0 { String::new() } else { format!("{:.6}", study.orders[i - 1]) };
                        println!("{gamma},{k},{m},{n},{err:.6e},{order}");
                    }
                }
                Err(e) => {
                    eprintln!("error: gamma={gamma} k={k}: {e}");
                    return ExitCode::from(SOLVER_FAILURE);
                }
            }
        }
    }
    ExitCode::SUCCESS
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Markdown => "md",
    }
}

fn write_table(table: &ConvergenceTable, format: Format, path: Option<&Path>) -> io::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            emit(table, format, &mut w).map_err(io::Error::other)?;
            w.flush()
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            emit(table, format, &mut lock).map_err(io::Error::other)?;
            writeln!(lock)
        }
    }
}

fn tables(plans: &[fracsmooth::experiment::ExperimentPlan], format: Format, out: Option<&Path>) -> ExitCode {
    let several = plans.len() > 1;
    if let (true, Some(dir)) = (several, out) {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return ExitCode::from(USAGE_ERROR);
        }
    }
    let mut failed = false;
    for plan in plans {
        for w in plan_warnings(plan) {
            eprintln!("{w}");
        }
        let table = match run_case(plan) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: case {}: {e}", plan.case.name());
                failed = true;
                continue;
            }
        };
        for row in &table.rows {
            if let Some(e) = &row.error {
                eprintln!("error: case {} gamma={} m={}: {e}", plan.case.name(), row.gamma, row.m);
            }
            if row.any_unstable() {
                eprintln!("warning: case {} gamma={} m={}: growth suggests instability", plan.case.name(), row.gamma, row.m);
            }
        }
        failed |= table.has_failures();
        let path = match (several, out) {
            (true, Some(dir)) => Some(dir.join(format!("case_{}.{}", plan.case.name(), extension(format)))),
            (false, Some(p)) => Some(p.to_path_buf()),
            (_, None) => None,
        };
        if let Err(e) = write_table(&table, format, path.as_deref()) {
            eprintln!("error: writing case {}: {e}", plan.case.name());
            return ExitCode::from(SOLVER_FAILURE);
        }
    }
    if failed {
        ExitCode::from(SOLVER_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}
