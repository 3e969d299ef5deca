//! Front end for the `cayley-qmc` binary: run configuration, the five
//! subcommands, and CSV/JSON report emission.

pub mod config;
pub mod output;

use std::path::Path;

use anyhow::{Context, Result};
use cayley_qmc::boundary::{
    closed_form_solutions, identify, random_seeds, solve_numeric, symmetric_solution, SeedOutcome, SolutionSummary,
    SolutionTag,
};
use cayley_qmc::finite_volume::MarkovChain;
use cayley_qmc::model::{discriminant, ModelParams};
use cayley_qmc::observables::{expectation_reports, resolved_discrepancies, Discrepancy, ExpectationReport, WitnessReport};
use cayley_qmc::phase::{scan, PhasePoint, Region, ScanOptions};
use serde::Serialize;

pub use config::{Command, Format, RunConfig, Tolerances};
use output::{num, Csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;

/// Rendered report plus whether every check in it passed.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub body: String,
    pub pass: bool,
    /// Extra lines for stderr.
    pub notes: Vec<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_VERIFICATION
        }
    }
}

/// Runs the configured command and writes its report to `config.out`, or
/// stdout when unset.
pub fn run(config: &RunConfig) -> Result<i32> {
    let report = render(config)?;
    for note in &report.notes {
        eprintln!("{note}");
    }
    match &config.out {
        Some(path) => write_file(path, &report.body)?,
        None => print!("{}", report.body),
    }
    Ok(report.exit_code())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing --out {}", path.display()))
}

/// Builds the report without writing it.
pub fn render(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let format = config.format();
    match config.command {
        Command::PhaseScan => phase_scan(config, format),
        Command::SolveBoundary => solve_boundary(config, format),
        Command::Verify => verify(config, format),
        Command::Expectation => expectation(config, format),
        Command::Witness => witness(config, format),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn phase_scan(config: &RunConfig, format: Format) -> Result<Report> {
    let betas = config.beta.context("phase-scan needs --beta lo:hi:count")?;
    let options = ScanOptions { numeric_seeds: config.seeds, seed: config.seed, newton: config.newton };
    let points = scan(&betas, &config.j, &options)?;
    let pass = points.iter().all(PhasePoint::counts_agree);
    let provenance = if config.seeds > 0 { "both" } else { "closed_form" };
    let mut notes = Vec::new();
    if points.iter().any(|p| p.competing_free) {
        notes.push("note: rows with J = 0 have no sibling coupling (plain Ising case)".to_string());
    }
    for p in points.iter().filter(|p| !p.counts_agree()) {
        notes.push(format!(
            "mismatch: beta={} J={} region={} numeric solutions={:?}",
            p.beta,
            p.j,
            p.region.as_str(),
            p.numeric_solutions
        ));
    }
    let body = match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                provenance: &'a str,
                points: &'a [PhasePoint],
            }
            json(&Out { provenance, points: &points })?
        }
        Format::Csv => {
            let mut csv = Csv::new(&["beta", "J", "theta", "Delta", "region", "solutions", "provenance"]);
            for p in &points {
                csv.row(&[
                    num(p.beta),
                    num(p.j),
                    num(p.theta),
                    num(p.delta),
                    p.region.as_str().into(),
                    p.solutions.to_string(),
                    provenance.into(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, pass, notes })
}

#[derive(Serialize)]
struct ClosedFormEntry {
    #[serde(flatten)]
    solution: SolutionSummary,
    eq1_residual: f64,
    eq2_residual: f64,
    pass: bool,
}

#[derive(Serialize)]
struct NumericEntry {
    #[serde(flatten)]
    solution: SolutionSummary,
    matches: Option<SolutionTag>,
}

#[derive(Serialize)]
struct SeedCounts {
    converged: usize,
    rejected: usize,
    non_convergence: usize,
}

#[derive(Serialize)]
struct BoundaryOut {
    beta: f64,
    #[serde(rename = "J")]
    j: f64,
    theta: f64,
    #[serde(rename = "Delta")]
    delta: f64,
    region: Region,
    provenance: &'static str,
    closed_form: Vec<ClosedFormEntry>,
    seeds: usize,
    seed: u64,
    numeric: Vec<NumericEntry>,
    seed_outcomes: SeedCounts,
    pass: bool,
}

fn solve_boundary(config: &RunConfig, format: Format) -> Result<Report> {
    let params = config.params()?;
    let theta = params.theta();
    let delta = discriminant(theta, params.j);
    let region = Region::of(delta);
    let closed = closed_form_solutions(&params)?;
    let mut closed_entries = Vec::with_capacity(closed.len());
    for sol in &closed {
        let r = sol.residuals(&params, config.tolerances.boundary)?;
        closed_entries.push(ClosedFormEntry { solution: sol.summary(), eq1_residual: r.eq1_residual, eq2_residual: r.eq2_residual, pass: r.pass });
    }
    let seeds = random_seeds(config.seeds, config.seed);
    let solve = solve_numeric(&params, &seeds, &config.newton)?;
    let numeric: Vec<NumericEntry> = solve
        .solutions
        .iter()
        .map(|s| NumericEntry { solution: s.summary(), matches: identify(s, &closed, 1e-6) })
        .collect();
    let mut counts = SeedCounts { converged: 0, rejected: 0, non_convergence: 0 };
    for o in &solve.outcomes {
        match o {
            SeedOutcome::Converged { .. } => counts.converged += 1,
            SeedOutcome::Rejected { .. } => counts.rejected += 1,
            SeedOutcome::NonConvergence { .. } => counts.non_convergence += 1,
        }
    }
    let pass = closed_entries.iter().all(|c| c.pass)
        && closed.len() == region.expected_solutions()
        && (config.seeds == 0 || numeric.len() == region.expected_solutions())
        && numeric.iter().all(|n| n.matches.is_some());
    let out = BoundaryOut {
        beta: params.beta,
        j: params.j,
        theta,
        delta,
        region,
        provenance: "both",
        closed_form: closed_entries,
        seeds: config.seeds,
        seed: config.seed,
        numeric,
        seed_outcomes: counts,
        pass,
    };
    let body = match format {
        Format::Json => json(&out)?,
        Format::Csv => {
            let mut csv = Csv::new(&[
                "beta", "J", "theta", "Delta", "source", "solution", "omega0_11", "omega0_22", "h_11", "h_22", "eq1_residual",
                "eq2_residual", "provenance",
            ]);
            let head = [num(out.beta), num(out.j), num(out.theta), num(out.delta)];
            for c in &out.closed_form {
                let s = &c.solution;
                let mut row = head.to_vec();
                row.extend([
                    "closed_form".into(),
                    tag_name(Some(s.tag)),
                    num(s.omega0[0]),
                    num(s.omega0[1]),
                    num(s.h[0]),
                    num(s.h[1]),
                    num(c.eq1_residual),
                    num(c.eq2_residual),
                    "closed_form".into(),
                ]);
                csv.row(&row);
            }
            for n in &out.numeric {
                let s = &n.solution;
                let mut row = head.to_vec();
                row.extend([
                    "numeric".into(),
                    tag_name(n.matches),
                    num(s.omega0[0]),
                    num(s.omega0[1]),
                    num(s.h[0]),
                    num(s.h[1]),
                    String::new(),
                    String::new(),
                    "oracle".into(),
                ]);
                csv.row(&row);
            }
            csv.finish()
        }
    };
    Ok(Report { body, pass, notes: Vec::new() })
}

fn tag_name(tag: Option<SolutionTag>) -> String {
    match tag {
        Some(SolutionTag::Symmetric) => "symmetric",
        Some(SolutionTag::Plus) => "plus",
        Some(SolutionTag::Minus) => "minus",
        Some(SolutionTag::Numeric) => "numeric",
        None => "unmatched",
    }
    .into()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub n: usize,
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub solution: String,
    pub residual: f64,
    pub pass: bool,
    pub provenance: &'static str,
}

/// Boundary-equation, normalization and projectivity residuals for each
/// selected solution and every level `1..=n`.
pub fn verify_rows(params: &ModelParams, n: usize, all_solutions: bool, tol: &Tolerances, caps: cayley_qmc::finite_volume::Caps) -> Result<Vec<CheckRow>> {
    let solutions = if all_solutions { closed_form_solutions(params)? } else { vec![symmetric_solution(params)?] };
    let mut rows = Vec::new();
    for sol in &solutions {
        let name = tag_name(Some(sol.tag));
        let row = |check, n, residual: f64, pass| CheckRow {
            check,
            n,
            beta: params.beta,
            j: params.j,
            solution: name.clone(),
            residual,
            pass,
            provenance: "both",
        };
        let b = sol.residuals(params, tol.boundary)?;
        rows.push(row("boundary_eq1", 0, b.eq1_residual, b.eq1_residual <= tol.boundary));
        rows.push(row("boundary_eq2", 0, b.eq2_residual, b.eq2_residual <= tol.boundary));
        let chain = MarkovChain::ising(params, sol.boundary()?)?.with_caps(caps)?;
        for m in 1..=n {
            let p = chain.check_projectivity(m, tol.projectivity)?;
            rows.push(row("normalization", m, p.trace_deviation, p.trace_deviation <= tol.projectivity));
            rows.push(row("projectivity", m, p.deviation, p.deviation <= tol.projectivity));
        }
    }
    Ok(rows)
}

fn verify(config: &RunConfig, format: Format) -> Result<Report> {
    let params = config.params()?;
    let rows = verify_rows(&params, config.n, config.all_solutions, &config.tolerances, config.caps)?;
    let pass = rows.iter().all(|r| r.pass);
    let body = match format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let mut csv = Csv::new(&["check", "n", "beta", "J", "solution", "residual", "pass", "provenance"]);
            for r in &rows {
                csv.row(&[
                    r.check.into(),
                    r.n.to_string(),
                    num(r.beta),
                    num(r.j),
                    r.solution.clone(),
                    num(r.residual),
                    r.pass.to_string(),
                    r.provenance.into(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, pass, notes: Vec::new() })
}

fn expectation(config: &RunConfig, format: Format) -> Result<Report> {
    let params = config.params()?;
    let c = params.coefficients()?;
    let rows = expectation_reports(&params, config.n, config.sigma_level, config.tolerances.expectation, &config.caps)?;
    let discrepancies =
        if c.has_broken_phase() { resolved_discrepancies(&params, config.n, &config.caps)? } else { Vec::new() };
    let pass = rows.iter().all(|r| r.pass);
    let mut notes = Vec::new();
    for d in &discrepancies {
        notes.push(format!(
            "resolved {}: shipped [{}] = {} ; rejected [{}] = {} ; {} = {}",
            d.name,
            d.shipped,
            num(d.shipped_value),
            d.rejected,
            num(d.rejected_value),
            d.reference_kind,
            num(d.reference)
        ));
    }
    let body = match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                beta: f64,
                #[serde(rename = "J")]
                j: f64,
                theta: f64,
                #[serde(rename = "Delta")]
                delta: f64,
                provenance: &'static str,
                rows: &'a [ExpectationReport],
                resolved_discrepancies: &'a [Discrepancy],
            }
            notes.clear();
            json(&Out {
                beta: params.beta,
                j: params.j,
                theta: c.theta,
                delta: c.discriminant,
                provenance: "both",
                rows: &rows,
                resolved_discrepancies: &discrepancies,
            })?
        }
        Format::Csv => {
            let mut csv = Csv::new(&[
                "beta", "J", "theta", "Delta", "n", "observable", "state", "closed_form", "oracle", "abs_gap", "provenance",
            ]);
            for r in &rows {
                csv.row(&[
                    num(params.beta),
                    num(params.j),
                    num(c.theta),
                    num(c.discriminant),
                    r.n.to_string(),
                    r.observable.clone(),
                    r.state.as_str().into(),
                    num(r.closed_form),
                    num(r.oracle),
                    num(r.abs_gap),
                    "both".into(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, pass, notes })
}

fn witness(config: &RunConfig, format: Format) -> Result<Report> {
    let params = config.params()?;
    let report = cayley_qmc::observables::witness_report(&params, config.n_max)?;
    let pass = report.lower_bound_holds && report.above_half_beyond_crossover;
    let body = match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                provenance: &'static str,
                #[serde(flatten)]
                report: &'a WitnessReport,
            }
            json(&Out { provenance: "closed_form", report: &report })?
        }
        Format::Csv => {
            let mut csv = Csv::new(&[
                "beta",
                "J",
                "theta",
                "Delta",
                "n",
                "edge_gap",
                "edge_lower_bound",
                "disorder_gap",
                "disorder_lower_bound",
                "I1",
                "I2",
                "epsilon0",
                "provenance",
            ]);
            for (e, d) in report.edge_gap.iter().zip(&report.disorder_gap) {
                csv.row(&[
                    num(report.beta),
                    num(report.j),
                    num(report.theta),
                    num(report.discriminant),
                    e.n.to_string(),
                    num(e.gap),
                    num(e.lower_bound),
                    num(d.gap),
                    num(d.lower_bound),
                    num(report.i1),
                    num(report.i2),
                    num(report.epsilon0),
                    "closed_form".into(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, pass, notes: Vec::new() })
}
