//! Instance diagnostics for `wsteer check`.

use std::fmt;

use wsteer_core::matops;
use wsteer_core::objective::{self, CertificateMode};
use wsteer_core::problem::{assemble, BlockOperators, Violation};
use wsteer_core::solver::{solve_with, SolverOptions};
use wsteer_core::{CausalityMask, Matrix, Policy, SteeringProblem, Vector};

/// Relative error allowed for the analytic gradient against central differences.
pub const GRAD_REL_TOL: f64 = 1e-6;
/// Relative error allowed for the analytic Hessian against differences of the gradient.
pub const HESS_REL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

fn row(name: &'static str, ok: bool, detail: String) -> CheckRow {
    CheckRow {
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

/// Finite-difference step for a coordinate of size `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

fn rel_err(analytic: &Matrix, reference: &Matrix) -> f64 {
    (analytic - reference).norm() / reference.norm().max(1e-300)
}

/// Central differences of `J` over every entry of `Θ`.
pub fn fd_grad_theta(ops: &BlockOperators, lambda: f64, policy: &Policy) -> wsteer_core::Result<Matrix> {
    let mut out = Matrix::zeros(policy.theta.nrows(), policy.theta.ncols());
    let mut p = policy.clone();
    for i in 0..policy.theta.len() {
        let x = policy.theta[i];
        let h = fd_step(x);
        p.theta[i] = x + h;
        let up = objective::objective(ops, lambda, &p)?;
        p.theta[i] = x - h;
        let down = objective::objective(ops, lambda, &p)?;
        p.theta[i] = x;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Central differences of `J` over `u_ff`.
pub fn fd_grad_uff(ops: &BlockOperators, lambda: f64, policy: &Policy) -> wsteer_core::Result<Vector> {
    let mut out = Vector::zeros(policy.u_ff.len());
    let mut p = policy.clone();
    for i in 0..policy.u_ff.len() {
        let x = policy.u_ff[i];
        let h = fd_step(x);
        p.u_ff[i] = x + h;
        let up = objective::objective(ops, lambda, &p)?;
        p.u_ff[i] = x - h;
        let down = objective::objective(ops, lambda, &p)?;
        p.u_ff[i] = x;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Central differences of the analytic gradient, one column per entry of `vec(Θ)`.
pub fn fd_hessian_theta(ops: &BlockOperators, lambda: f64, theta: &Matrix) -> wsteer_core::Result<Matrix> {
    let n = theta.len();
    let mut out = Matrix::zeros(n, n);
    let mut t = theta.clone();
    for i in 0..n {
        let x = theta[i];
        let h = fd_step(x);
        t[i] = x + h;
        let up = objective::grad_theta(ops, lambda, &t)?;
        t[i] = x - h;
        let down = objective::grad_theta(ops, lambda, &t)?;
        t[i] = x;
        let col = (up - down) / (2.0 * h);
        out.column_mut(i).copy_from_slice(col.as_slice());
    }
    Ok(out)
}

/// A fixed, nonzero causal test point scaled to the problem.
pub fn probe_policy(ops: &BlockOperators, mask: &CausalityMask) -> Policy {
    let reduced = Vector::from_fn(mask.len(), |i, _| 0.05 * (1.7 * i as f64 + 0.3).sin());
    let m = ops.dims().lifted_input();
    Policy {
        u_ff: Vector::from_fn(m, |i, _| (0.9 * i as f64 + 0.1).cos()),
        theta: mask.expand(&reduced),
    }
}

fn gradient_rows(ops: &BlockOperators, lambda: f64, policy: &Policy, out: &mut Vec<CheckRow>) {
    let g_u = objective::grad_uff(ops, lambda, &policy.u_ff);
    match fd_grad_uff(ops, lambda, policy) {
        Ok(fd) => {
            let e = rel_err(&Matrix::from_column_slice(g_u.len(), 1, g_u.as_slice()), &Matrix::from_column_slice(fd.len(), 1, fd.as_slice()));
            out.push(row("gradient u_ff vs finite differences", e <= GRAD_REL_TOL, format!("rel err {e:.2e} (tol {GRAD_REL_TOL:e})")));
        }
        Err(e) => out.push(row("gradient u_ff vs finite differences", false, e.to_string())),
    }
    let analytic = objective::grad_theta(ops, lambda, &policy.theta);
    let fd = fd_grad_theta(ops, lambda, policy);
    match (analytic, fd) {
        (Ok(a), Ok(f)) => {
            let e = rel_err(&a, &f);
            out.push(row("gradient Theta vs finite differences", e <= GRAD_REL_TOL, format!("rel err {e:.2e} (tol {GRAD_REL_TOL:e})")));
        }
        (Err(e), _) | (_, Err(e)) => out.push(row("gradient Theta vs finite differences", false, e.to_string())),
    }
    let analytic = objective::hessian_theta(ops, lambda, &policy.theta);
    let fd = fd_hessian_theta(ops, lambda, &policy.theta);
    match (analytic, fd) {
        (Ok(a), Ok(f)) => {
            let e = rel_err(&a, &f);
            out.push(row("Hessian Theta vs finite differences", e <= HESS_REL_TOL, format!("rel err {e:.2e} (tol {HESS_REL_TOL:e})")));
        }
        (Err(e), _) | (_, Err(e)) => out.push(row("Hessian Theta vs finite differences", false, e.to_string())),
    }
}

fn dominance_row(ops: &BlockOperators, lambda: f64, theta: &Matrix, name: &'static str) -> CheckRow {
    match objective::convexity_certificate(ops, lambda, theta, CertificateMode::Spectral) {
        Ok(c) => {
            let hmin = c.hessian_min_eigenvalue.unwrap_or(f64::NAN);
            let dominated = c.dominance_gap >= -wsteer_core::tol::DOMINANCE_REL * matops::max_abs(ops.target().cov.as_matrix());
            let detail = format!("dominance gap {:.3e}, Hessian min eigenvalue {hmin:.3e}", c.dominance_gap);
            if dominated {
                row(name, hmin > 0.0, detail)
            } else {
                CheckRow {
                    name,
                    status: Status::Skip,
                    detail: format!("{detail} (no dominance, certificate not applicable)"),
                }
            }
        }
        Err(e) => row(name, false, e.to_string()),
    }
}

/// Run every check that applies to the instance. `λ = 0` is accepted here.
pub fn run_checks(problem: &SteeringProblem, options: &SolverOptions) -> Vec<CheckRow> {
    let mut out = Vec::new();
    let lambda = problem.lambda;
    let blocking: Vec<Violation> = problem
        .validate()
        .into_iter()
        .filter(|v| !(lambda == 0.0 && matches!(v, Violation::NonPositiveLambda { .. })))
        .collect();
    if !blocking.is_empty() {
        for v in &blocking {
            out.push(row("problem data", false, format!("{}: {v}", v.field())));
        }
        return out;
    }
    out.push(row("problem data", true, "all fields valid".into()));

    // the lifted operators do not depend on λ
    let mut assembled = problem.clone();
    if lambda == 0.0 {
        assembled.lambda = 1.0;
    }
    let ops = match assemble(&assembled) {
        Ok(ops) => ops,
        Err(e) => {
            out.push(row("lifted covariance S~ PD", false, e.to_string()));
            return out;
        }
    };
    let smin = ops.stilde().min_eigenvalue();
    out.push(row("lifted covariance S~ PD", smin > 0.0, format!("min eigenvalue {smin:.3e}")));

    let mask = CausalityMask::for_dims(ops.dims());
    let probe = probe_policy(&ops, &mask);
    gradient_rows(&ops, lambda, &probe, &mut out);

    let zero = Matrix::zeros(mask.theta_shape().0, mask.theta_shape().1);
    match objective::hessian_theta(&ops, lambda, &zero) {
        Ok(h) => {
            let hmin = matops::min_eigenvalue(&h);
            out.push(CheckRow {
                name: "Hessian at Theta=0",
                status: if hmin > 0.0 || lambda > 0.0 { Status::Pass } else { Status::Fail },
                detail: format!("min eigenvalue {hmin:.3e} ({})", if hmin > 0.0 { "PD" } else { "not PD" }),
            });
        }
        Err(e) => out.push(row("Hessian at Theta=0", false, e.to_string())),
    }
    out.push(dominance_row(&ops, lambda, &zero, "dominance certificate at Theta=0"));

    match solve_with(&ops, lambda, options) {
        Ok(sol) => {
            let res = sol.report.stationarity_residual;
            out.push(row(
                "solver stationarity",
                res <= options.stationarity_tol,
                format!("residual {res:.3e} (tol {:e})", options.stationarity_tol),
            ));
            out.push(dominance_row(&ops, lambda, &sol.theta, "dominance certificate at Theta*"));
        }
        Err(e) => out.push(row("solver stationarity", false, e.to_string())),
    }
    out
}

pub fn render(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| format!("{:<4}  {:<width$}  {}\n", r.status, r.name, r.detail))
        .collect()
}
