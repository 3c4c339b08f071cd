//! Subcommand implementations. Each returns the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use rayon::prelude::*;
use wsteer_core::problem::{assemble, BlockOperators};
use wsteer_core::simulate::{self, RolloutReport, Sampler};
use wsteer_core::solver::{self, LineScanGrid, ScanPoint, Solution, SolverOptions};
use wsteer_core::{Matrix, Policy, SteeringProblem, Vector};

use crate::check;
use crate::config::{rows_from_matrix, ProblemConfig};
use crate::solution::SolutionFile;

/// Exit code contract.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const INPUT_ERROR: u8 = 1;
    pub const NOT_CONVERGED: u8 = 2;
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solve_problem(problem: &SteeringProblem, options: &SolverOptions) -> anyhow::Result<(BlockOperators, Solution)> {
    let ops = assemble(problem)?;
    let sol = solver::solve_with(&ops, problem.lambda, options)?;
    Ok((ops, sol))
}

pub fn cmd_solve(config: &Path, out: Option<&Path>) -> anyhow::Result<u8> {
    let cfg = ProblemConfig::load(config)?;
    let problem = cfg.to_problem()?;
    let options = cfg.solver_options()?;
    let (_, sol) = solve_problem(&problem, &options)?;
    let file = SolutionFile::from_solution(&sol, problem.lambda, &options);
    write_output(out, &file.to_json())?;
    eprintln!(
        "J = {}  (J1 {}, J2 {}, J3 {}, J4 {})",
        file.j, file.j1, file.j2, file.j3, file.j4
    );
    eprintln!(
        "termination: {}, {} CCP + {} Newton iterations, residual {:.3e}, certificate {}",
        file.trace.termination,
        file.trace.ccp_iterations,
        file.trace.newton_iterations,
        file.stationarity_residual,
        file.certificate.kind
    );
    if file.converged {
        Ok(exit::SUCCESS)
    } else {
        eprintln!("not converged: stationarity residual above {:e}", options.stationarity_tol);
        Ok(exit::NOT_CONVERGED)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanObjective {
    /// Evaluate `J` with the first config's target.
    A,
    /// Evaluate `J` with the second config's target.
    B,
}

#[derive(Debug, Clone)]
pub struct ScanArgs {
    pub grid: LineScanGrid,
    pub lambdas: Option<Vec<f64>>,
    pub objective: ScanObjective,
}

#[derive(Debug, Clone)]
pub struct ScanCurve {
    pub lambda: f64,
    pub points: Vec<ScanPoint>,
    pub converged: bool,
}

impl ScanCurve {
    pub fn local_minima(&self) -> Vec<f64> {
        self.points
            .windows(3)
            .filter(|w| w[1].j < w[0].j && w[1].j < w[2].j)
            .map(|w| w[1].gamma)
            .collect()
    }
}

fn same_plant(a: &SteeringProblem, b: &SteeringProblem) -> anyhow::Result<()> {
    if a.dims() != b.dims() {
        bail!("dimension mismatch between configs: {:?} vs {:?}", a.dims(), b.dims());
    }
    if a.system != b.system || a.initial != b.initial || a.noise_cov != b.noise_cov {
        bail!("configs describe different systems (A, B, G, mu0, S0 and Sw must match)");
    }
    Ok(())
}

/// Solve both configs at `λ` and scan the segment between the two policies.
pub fn scan_at(
    a: &SteeringProblem,
    b: &SteeringProblem,
    opts_a: &SolverOptions,
    opts_b: &SolverOptions,
    lambda: f64,
    args: &ScanArgs,
) -> anyhow::Result<ScanCurve> {
    let (pa, pb) = (
        SteeringProblem { lambda, ..a.clone() },
        SteeringProblem { lambda, ..b.clone() },
    );
    let (ops_a, sol_a) = solve_problem(&pa, opts_a).with_context(|| format!("solving first config at lambda {lambda}"))?;
    let (ops_b, sol_b) = solve_problem(&pb, opts_b).with_context(|| format!("solving second config at lambda {lambda}"))?;
    let ops = match args.objective {
        ScanObjective::A => &ops_a,
        ScanObjective::B => &ops_b,
    };
    let points = solver::line_scan(ops, lambda, &sol_a.policy(), &sol_b.policy(), &args.grid.gammas())?;
    Ok(ScanCurve {
        lambda,
        points,
        converged: sol_a.converged(opts_a) && sol_b.converged(opts_b),
    })
}

pub fn scan_csv(curves: &[ScanCurve], with_lambda: bool) -> String {
    let mut s = String::new();
    if with_lambda {
        s.push_str("lambda,");
    }
    s.push_str("gamma,J,J1,J2,J3,J4\n");
    for c in curves {
        for p in &c.points {
            if with_lambda {
                let _ = write!(s, "{},", c.lambda);
            }
            let t = &p.terms;
            let _ = writeln!(s, "{},{},{},{},{},{}", p.gamma, p.j, t.j1, t.j2, t.j3, t.j4);
        }
    }
    s
}

pub fn cmd_scan(config_a: &Path, config_b: &Path, args: &ScanArgs, out: Option<&Path>) -> anyhow::Result<u8> {
    args.grid.validate()?;
    let (ca, cb) = (ProblemConfig::load(config_a)?, ProblemConfig::load(config_b)?);
    let (a, b) = (
        ca.to_problem().context("first config")?,
        cb.to_problem().context("second config")?,
    );
    same_plant(&a, &b)?;
    let (oa, ob) = (ca.solver_options()?, cb.solver_options()?);
    let lambdas = match &args.lambdas {
        Some(l) if l.is_empty() => bail!("empty lambda sweep"),
        Some(l) => l.clone(),
        None => {
            if a.lambda != b.lambda {
                bail!("configs use different lambda ({} vs {}); pass --lambda-sweep", a.lambda, b.lambda);
            }
            vec![a.lambda]
        }
    };
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        bail!("lambda must be positive and finite, got {bad}");
    }
    let curves = lambdas
        .par_iter()
        .map(|&l| scan_at(&a, &b, &oa, &ob, l, args))
        .collect::<anyhow::Result<Vec<_>>>()?;

    write_output(out, &scan_csv(&curves, args.lambdas.is_some()))?;
    let mut all_converged = true;
    for c in &curves {
        let minima = c.local_minima();
        let at: Vec<String> = minima.iter().map(|g| format!("{g}")).collect();
        eprintln!(
            "lambda {}: {} strict local minima{}{}",
            c.lambda,
            minima.len(),
            if at.is_empty() { String::new() } else { format!(" at gamma = {}", at.join(", ")) },
            if c.converged { "" } else { " (a solve did not converge)" }
        );
        all_converged &= c.converged;
    }
    Ok(if all_converged { exit::SUCCESS } else { exit::NOT_CONVERGED })
}

pub fn cmd_check(config: &Path) -> anyhow::Result<u8> {
    let cfg = ProblemConfig::load(config)?;
    let problem = cfg.to_problem_unchecked()?;
    let options = cfg.solver_options()?;
    let rows = check::run_checks(&problem, &options);
    print!("{}", check::render(&rows));
    match rows.iter().find(|r| r.status == check::Status::Fail) {
        Some(r) => {
            eprintln!("check failed: {}", r.name);
            Ok(exit::INPUT_ERROR)
        }
        None => Ok(exit::SUCCESS),
    }
}

/// Rollout with samples spread over the rayon pool; identical to the serial result.
pub fn parallel_rollout(
    problem: &SteeringProblem,
    ops: &BlockOperators,
    policy: &Policy,
    samples: usize,
    seed: u64,
) -> wsteer_core::Result<RolloutReport> {
    if samples < 2 {
        return Err(wsteer_core::Error::InsufficientSamples { samples });
    }
    let sampler = Sampler::new(problem, ops, policy, seed)?;
    let terminals: Vec<Vector> = (0..samples as u64)
        .into_par_iter()
        .map(|i| sampler.terminal_state(i))
        .collect();
    simulate::report(ops, policy, &terminals, seed)
}

#[derive(Debug, Clone, serde::Serialize)]
struct RolloutJson {
    samples: usize,
    seed: u64,
    within_band: bool,
    empirical_mean: Vec<f64>,
    empirical_cov: Vec<Vec<f64>>,
    predicted_mean: Vec<f64>,
    predicted_cov: Vec<Vec<f64>>,
    mean_err: f64,
    mean_band: f64,
    cov_err: f64,
    cov_band: f64,
    w2_sq_empirical_vs_desired: f64,
}

fn vector_list(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rollout_text(r: &RolloutReport) -> String {
    let mut s = String::new();
    let fmt_m = |m: &Matrix| format!("{:?}", rows_from_matrix(m));
    let _ = writeln!(s, "samples          {}", r.samples);
    let _ = writeln!(s, "seed             {}", r.seed);
    let _ = writeln!(s, "empirical mean   {:?}", vector_list(&r.empirical_mean));
    let _ = writeln!(s, "predicted mean   {:?}", vector_list(&r.predicted.mean));
    let _ = writeln!(s, "empirical cov    {}", fmt_m(&r.empirical_cov));
    let _ = writeln!(s, "predicted cov    {}", fmt_m(&r.predicted.cov));
    let _ = writeln!(s, "mean error       {:.4e}  (band {:.4e})", r.mean_err, r.mean_band);
    let _ = writeln!(s, "cov error        {:.4e}  (band {:.4e})", r.cov_err, r.cov_band);
    let _ = writeln!(s, "W2^2 to target   {:.6e}", r.w2_sq_empirical_vs_desired);
    let _ = writeln!(s, "within band      {}", r.within_band());
    s
}

pub fn cmd_simulate(
    config: &Path,
    solution: &Path,
    samples: Option<usize>,
    seed: Option<u64>,
    json_out: Option<&Path>,
) -> anyhow::Result<u8> {
    let cfg = ProblemConfig::load(config)?;
    let problem = cfg.to_problem()?;
    let file = SolutionFile::load(solution)?;
    let policy = file.policy()?;
    let ops = assemble(&problem)?;
    let (rows, cols) = ops.dims().theta_shape();
    if policy.theta.shape() != (rows, cols) || policy.u_ff.len() != rows {
        bail!(
            "solution does not match config: theta is {:?}, expected {:?}",
            policy.theta.shape(),
            (rows, cols)
        );
    }
    let samples = samples.unwrap_or(cfg.simulation.samples);
    let seed = seed.unwrap_or(cfg.simulation.seed);
    let report = parallel_rollout(&problem, &ops, &policy, samples, seed)?;
    print!("{}", rollout_text(&report));
    if let Some(path) = json_out {
        let j = RolloutJson {
            samples: report.samples,
            seed: report.seed,
            within_band: report.within_band(),
            empirical_mean: vector_list(&report.empirical_mean),
            empirical_cov: rows_from_matrix(&report.empirical_cov),
            predicted_mean: vector_list(&report.predicted.mean),
            predicted_cov: rows_from_matrix(&report.predicted.cov),
            mean_err: report.mean_err,
            mean_band: report.mean_band,
            cov_err: report.cov_err,
            cov_band: report.cov_band,
            w2_sq_empirical_vs_desired: report.w2_sq_empirical_vs_desired,
        };
        let mut text = serde_json::to_string_pretty(&j)?;
        text.push('\n');
        write_output(Some(path), &text)?;
    }
    Ok(if report.within_band() { exit::SUCCESS } else { exit::INPUT_ERROR })
}
