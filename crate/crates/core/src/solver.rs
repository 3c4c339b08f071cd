//! Optimal policy computation.
//!
//! The feedforward has a closed form. The feedback `Θ` is found by the
//! convex-concave procedure: `J₄` is linearized at the current iterate and the
//! remaining quadratic is minimized exactly on the causal subspace. Its
//! curvature does not depend on the iterate, so the reduced system is factored
//! once per solve.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result, ResultExt};
use crate::matops;
use crate::objective::{self, Certificate, ObjectiveReport, Policy, Terms};
use crate::problem::{assemble, BlockOperators, CausalityMask, SteeringProblem};
use crate::simulate::theta_to_k;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaInit {
    Zero,
    Given(Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonMode {
    Off,
    /// Refine the CCP output whenever the reduced Hessian there is PD.
    WhenCertified,
}

/// Uniform grid `γ_min … γ_max` with `points` samples, both ends included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineScanGrid {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub points: usize,
}

impl LineScanGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::InvalidOptions("line scan grid needs at least 2 points"));
        }
        if !(self.gamma_min.is_finite() && self.gamma_max.is_finite()) {
            return Err(Error::InvalidOptions("line scan bounds must be finite"));
        }
        if self.gamma_min >= self.gamma_max {
            return Err(Error::InvalidOptions("line scan needs gamma_min < gamma_max"));
        }
        Ok(())
    }

    /// Grid values; the endpoints are reproduced exactly.
    pub fn gammas(&self) -> Vec<f64> {
        let n = self.points;
        if n == 1 {
            return alloc::vec![self.gamma_min];
        }
        let d = (n - 1) as f64;
        (0..n)
            .map(|i| (self.gamma_min * (n - 1 - i) as f64 + self.gamma_max * i as f64) / d)
            .collect()
    }
}

/// Window, in CCP iterations, over which a stall is judged.
pub const STALL_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_ccp_iters: usize,
    /// Declare a stall when, over the last [`STALL_WINDOW`] CCP iterations,
    /// `J` fell by less than this fraction of `|J|` and the stationarity
    /// residual set no new minimum.
    pub obj_rel_tol: f64,
    /// Stop when the projected gradient norm falls to this value.
    pub stationarity_tol: f64,
    pub theta_init: ThetaInit,
    pub newton: NewtonMode,
    pub newton_max_iters: usize,
    pub line_scan_grid: Option<LineScanGrid>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_ccp_iters: 200,
            obj_rel_tol: 1e-12,
            stationarity_tol: 1e-6,
            theta_init: ThetaInit::Zero,
            newton: NewtonMode::Off,
            newton_max_iters: 20,
            line_scan_grid: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.obj_rel_tol > 0.0 && self.obj_rel_tol.is_finite()) {
            return Err(Error::InvalidOptions("obj_rel_tol must be positive"));
        }
        if !(self.stationarity_tol > 0.0 && self.stationarity_tol.is_finite()) {
            return Err(Error::InvalidOptions("stationarity_tol must be positive"));
        }
        if let Some(grid) = &self.line_scan_grid {
            grid.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Initial,
    Ccp,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub j: f64,
    pub terms: Terms,
    pub residual: f64,
    pub step: StepKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Projected gradient at or below `stationarity_tol`.
    Stationary,
    /// No progress in `J` or in the residual over a full window.
    Stalled,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl SolveTrace {
    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.residual)
    }

    pub fn ccp_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.step == StepKind::Ccp).count()
    }

    pub fn newton_iterations(&self) -> usize {
        self.records.iter().filter(|r| r.step == StepKind::Newton).count()
    }

    /// Largest increase of `J` between consecutive records (≤ 0 for a descent run).
    pub fn max_ascent(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].j - w[0].j)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub u_ff: Vector,
    pub theta: Matrix,
    pub k: Matrix,
    pub report: ObjectiveReport,
    pub certificate: Certificate,
    pub trace: SolveTrace,
}

impl Solution {
    pub fn policy(&self) -> Policy {
        Policy {
            u_ff: self.u_ff.clone(),
            theta: self.theta.clone(),
        }
    }

    pub fn converged(&self, options: &SolverOptions) -> bool {
        self.report.stationarity_residual <= options.stationarity_tol
    }
}

/// `u_ff* = (I + λ(FH_u)ᵀFH_u)⁻¹ λ(FH_u)ᵀ(μ_d − FΓμ₀)`, by Cholesky.
pub fn solve_feedforward(ops: &BlockOperators, lambda: f64) -> Result<Vector> {
    check_lambda(lambda)?;
    let fh = ops.fh();
    let n = fh.ncols();
    let a = Matrix::identity(n, n) + fh.tr_mul(fh) * lambda;
    let rhs = fh.tr_mul(&(&ops.target().mean - ops.free_terminal_mean())) * lambda;
    let chol = matops::cholesky(&a, "feedforward system")?;
    Ok(chol.solve(&rhs))
}

/// Same minimizer through the Woodbury identity, inverting only an `n_x × n_x` system.
pub fn solve_feedforward_woodbury(ops: &BlockOperators, lambda: f64) -> Result<Vector> {
    check_lambda(lambda)?;
    let fh = ops.fh();
    let nx = fh.nrows();
    let b = fh.tr_mul(&(&ops.target().mean - ops.free_terminal_mean())) * lambda;
    let small = Matrix::identity(nx, nx) + fh * fh.transpose() * lambda;
    let chol = matops::cholesky(&small, "feedforward Woodbury system")?;
    let correction = fh.tr_mul(&chol.solve(&(fh * &b))) * lambda;
    Ok(b - correction)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidOptions("lambda must be finite and nonnegative"))
    }
}

/// Reduced normal equations of the convex part `J₂ + J₃` on the causal subspace.
pub struct CcpSystem<'a> {
    ops: &'a BlockOperators,
    mask: &'a CausalityMask,
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    /// Free entries of `vec(2λ(FH_u)ᵀ F S̃)`, the constant part of `∂J₃/∂Θ`.
    constant: Vector,
}

impl<'a> CcpSystem<'a> {
    pub fn new(ops: &'a BlockOperators, lambda: f64, mask: &'a CausalityMask) -> Result<Self> {
        check_lambda(lambda)?;
        if mask.theta_shape() != ops.dims().theta_shape() {
            return Err(Error::DimensionMismatch {
                what: "causality mask",
                expected: ops.dims().theta_shape(),
                found: mask.theta_shape(),
            });
        }
        let fh = ops.fh();
        let rows = fh.ncols();
        let s = ops.stilde().as_matrix();
        let p = Matrix::identity(rows, rows) * 2.0 + fh.tr_mul(fh) * (2.0 * lambda);
        let free = mask.free_entries();
        // entry (a, b) of S̃ ⊗ P at vec indices a = ca·rows + ra
        let q = Matrix::from_fn(free.len(), free.len(), |i, j| {
            let (a, b) = (free[i], free[j]);
            s[(a / rows, b / rows)] * p[(a % rows, b % rows)]
        });
        let chol = matops::cholesky(&q, "CCP normal equations")?;
        let c = fh.tr_mul(ops.f()) * s * (2.0 * lambda);
        Ok(CcpSystem {
            ops,
            mask,
            lambda,
            chol,
            constant: mask.restrict(&c),
        })
    }

    /// Minimizer of `J₂ + J₃ − ⟨∂J₄(Θ_k), Θ⟩` over causal `Θ`.
    pub fn step(&self, theta_k: &Matrix) -> Result<Matrix> {
        let g4 = self.mask.restrict(&objective::grad_j4(self.ops, self.lambda, theta_k)?);
        let x = self.chol.solve(&(g4 - &self.constant));
        Ok(self.mask.expand(&x))
    }
}

/// One CCP step from `Θ_k`. Factors the system on every call; loops should use [`CcpSystem`].
pub fn ccp_subproblem(
    ops: &BlockOperators,
    lambda: f64,
    theta_k: &Matrix,
    mask: &CausalityMask,
) -> Result<Matrix> {
    CcpSystem::new(ops, lambda, mask)?.step(theta_k)
}

fn record(
    ops: &BlockOperators,
    lambda: f64,
    theta: &Matrix,
    mask: &CausalityMask,
    step: StepKind,
) -> Result<IterationRecord> {
    let policy = Policy {
        u_ff: Vector::zeros(ops.dims().lifted_input()),
        theta: theta.clone(),
    };
    let terms = objective::terms(ops, lambda, &policy)?;
    let residual = mask.restrict(&objective::grad_theta(ops, lambda, theta)?).norm();
    Ok(IterationRecord {
        j: terms.total(),
        terms,
        residual,
        step,
    })
}

fn initial_theta(ops: &BlockOperators, mask: &CausalityMask, init: &ThetaInit) -> Result<Matrix> {
    match init {
        ThetaInit::Zero => {
            let (r, c) = ops.dims().theta_shape();
            Ok(Matrix::zeros(r, c))
        }
        ThetaInit::Given(theta) => {
            matops::ensure_shape(theta, mask.theta_shape(), "initial Theta")?;
            let v = mask.max_violation(theta);
            if v != 0.0 {
                return Err(Error::NonCausal { max_violation: v });
            }
            Ok(theta.clone())
        }
    }
}

/// Convex-concave iteration for `Θ`.
///
/// Records carry `J` evaluated at `u_ff = 0`; the feedforward only shifts
/// `J₁`, which no `Θ` step touches.
pub fn ccp_solve(
    ops: &BlockOperators,
    lambda: f64,
    mask: &CausalityMask,
    options: &SolverOptions,
) -> Result<(Matrix, SolveTrace)> {
    options.validate()?;
    let system = CcpSystem::new(ops, lambda, mask)?;
    let mut theta = initial_theta(ops, mask, &options.theta_init)?;
    let mut current = record(ops, lambda, &theta, mask, StepKind::Initial)
        .context_with(|| "at the initial iterate".into())?;
    let mut records = alloc::vec![current];
    let mut best = (current.j, theta.clone());
    let mut best_residual = (current.residual, 0);

    let termination = 'outer: {
        for it in 1..=options.max_ccp_iters {
            if current.residual <= options.stationarity_tol {
                break 'outer Termination::Stationary;
            }
            let next = system
                .step(&theta)
                .context_with(|| format!("in CCP iteration {it}"))?;
            let rec = record(ops, lambda, &next, mask, StepKind::Ccp)
                .context_with(|| format!("in CCP iteration {it}"))?;
            theta = next;
            current = rec;
            records.push(rec);
            if rec.j < best.0 {
                best = (rec.j, theta.clone());
            }
            if rec.residual <= options.stationarity_tol {
                break 'outer Termination::Stationary;
            }
            if rec.residual < best_residual.0 {
                best_residual = (rec.residual, it);
            }
            if it - best_residual.1 >= STALL_WINDOW {
                let decrease = records[it - STALL_WINDOW].j - rec.j;
                if decrease < options.obj_rel_tol * rec.j.abs() {
                    break 'outer Termination::Stalled;
                }
            }
        }
        if current.residual <= options.stationarity_tol {
            Termination::Stationary
        } else {
            Termination::MaxIters
        }
    };

    let theta = if termination == Termination::MaxIters { best.1 } else { theta };
    Ok((theta, SolveTrace { records, termination }))
}

/// Damped Newton on the free entries of `Θ`, halving the step until `J` decreases.
///
/// Fails with [`Error::HessianNotPd`] if the reduced Hessian at any iterate is
/// not positive definite. Never returns a point with larger `J`.
pub fn newton_refine(
    ops: &BlockOperators,
    lambda: f64,
    theta: &Matrix,
    mask: &CausalityMask,
    options: &SolverOptions,
) -> Result<(Matrix, Vec<IterationRecord>)> {
    options.validate()?;
    let mut theta = initial_theta(ops, mask, &ThetaInit::Given(theta.clone()))?;
    let mut current = record(ops, lambda, &theta, mask, StepKind::Newton)?;
    let mut records = Vec::new();
    for _ in 0..options.newton_max_iters {
        if current.residual <= options.stationarity_tol {
            break;
        }
        let h = mask.restrict_square(&objective::hessian_theta(ops, lambda, &theta)?);
        let chol = Cholesky::new(h).ok_or(Error::HessianNotPd)?;
        let g = mask.restrict(&objective::grad_theta(ops, lambda, &theta)?);
        let dir = mask.expand(&-chol.solve(&g));

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &theta + &dir * t;
            if let Ok(rec) = record(ops, lambda, &cand, mask, StepKind::Newton) {
                if rec.j < current.j {
                    accepted = Some((cand, rec));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, rec)) => {
                theta = cand;
                current = rec;
                records.push(rec);
            }
            None => break,
        }
    }
    Ok((theta, records))
}

/// Feedforward, CCP, optional Newton refinement, and the final report.
pub fn solve(problem: &SteeringProblem, options: &SolverOptions) -> Result<Solution> {
    let ops = assemble(problem)?;
    solve_with(&ops, problem.lambda, options)
}

/// [`solve`] on already assembled operators.
pub fn solve_with(ops: &BlockOperators, lambda: f64, options: &SolverOptions) -> Result<Solution> {
    options.validate()?;
    let mask = CausalityMask::for_dims(ops.dims());
    let u_ff = solve_feedforward(ops, lambda).context_with(|| "feedforward".into())?;
    let (mut theta, mut trace) = ccp_solve(ops, lambda, &mask, options)?;

    if options.newton == NewtonMode::WhenCertified
        && trace.final_residual() > options.stationarity_tol
    {
        match newton_refine(ops, lambda, &theta, &mask, options) {
            Ok((refined, records)) => {
                theta = refined;
                trace.records.extend(records);
                if trace.final_residual() <= options.stationarity_tol {
                    trace.termination = Termination::Stationary;
                }
            }
            Err(Error::HessianNotPd) => {}
            Err(e) => return Err(e.context("Newton refinement")),
        }
    }

    let k = theta_to_k(&theta, ops.hu())?;
    let policy = Policy {
        u_ff: u_ff.clone(),
        theta: theta.clone(),
    };
    let report = objective::evaluate(ops, lambda, &policy, &mask, false)
        .context_with(|| "final evaluation".into())?;
    Ok(Solution {
        u_ff,
        theta,
        k,
        certificate: report.certificate,
        report,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub gamma: f64,
    pub j: f64,
    pub terms: Terms,
}

/// `J` along `g(γ) = (1 − γ)·a + γ·b` at each `γ`.
pub fn line_scan(
    ops: &BlockOperators,
    lambda: f64,
    a: &Policy,
    b: &Policy,
    gammas: &[f64],
) -> Result<Vec<ScanPoint>> {
    if a.theta.shape() != b.theta.shape() || a.u_ff.len() != b.u_ff.len() {
        return Err(Error::DimensionMismatch {
            what: "line scan endpoints",
            expected: a.theta.shape(),
            found: b.theta.shape(),
        });
    }
    let mask = CausalityMask::for_dims(ops.dims());
    a.ensure_causal(&mask)?;
    b.ensure_causal(&mask)?;
    gammas
        .iter()
        .map(|&gamma| {
            let p = Policy {
                u_ff: &a.u_ff * (1.0 - gamma) + &b.u_ff * gamma,
                theta: &a.theta * (1.0 - gamma) + &b.theta * gamma,
            };
            let terms = objective::terms(ops, lambda, &p)
                .context_with(|| format!("at gamma = {gamma}"))?;
            Ok(ScanPoint {
                gamma,
                j: terms.total(),
                terms,
            })
        })
        .collect()
}

/// Number of interior samples strictly below both neighbours.
pub fn count_strict_local_minima(values: &[f64]) -> usize {
    values
        .windows(3)
        .filter(|w| w[1] < w[0] && w[1] < w[2])
        .count()
}
