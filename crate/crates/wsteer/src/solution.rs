//! Solution files written by `wsteer solve` and read back by `wsteer simulate`.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the in-memory policy bit for bit.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use wsteer_core::solver::{Solution, SolverOptions};
use wsteer_core::{CertificateKind, Policy, Termination, Vector};

use crate::config::{matrix_from_rows, rows_from_matrix, Rows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub lambda: f64,
    pub converged: bool,
    pub u_ff: Vec<f64>,
    pub theta: Rows,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J2")]
    pub j2: f64,
    #[serde(rename = "J3")]
    pub j3: f64,
    #[serde(rename = "J4")]
    pub j4: f64,
    pub w2_sq: f64,
    pub cost_to_go: f64,
    pub terminal_mean: Vec<f64>,
    pub terminal_cov: Rows,
    pub stationarity_residual: f64,
    pub certificate: CertificateFile,
    pub trace: TraceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub kind: String,
    pub dominance_gap: f64,
    pub hessian_min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub termination: String,
    pub ccp_iterations: usize,
    pub newton_iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub max_ascent: f64,
}

pub fn certificate_name(kind: CertificateKind) -> &'static str {
    match kind {
        CertificateKind::DominatedCovariance => "dominated_covariance",
        CertificateKind::HessianPd => "hessian_pd",
        CertificateKind::None => "none",
    }
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Stationary => "stationary",
        Termination::Stalled => "stalled",
        Termination::MaxIters => "max_iters",
    }
}

impl SolutionFile {
    pub fn from_solution(sol: &Solution, lambda: f64, options: &SolverOptions) -> Self {
        let r = &sol.report;
        let records = &sol.trace.records;
        SolutionFile {
            lambda,
            converged: sol.converged(options),
            u_ff: sol.u_ff.iter().copied().collect(),
            theta: rows_from_matrix(&sol.theta),
            k: rows_from_matrix(&sol.k),
            j: r.j,
            j1: r.terms.j1,
            j2: r.terms.j2,
            j3: r.terms.j3,
            j4: r.terms.j4,
            w2_sq: r.w2_sq,
            cost_to_go: r.cost_to_go,
            terminal_mean: r.terminal.mean.iter().copied().collect(),
            terminal_cov: rows_from_matrix(&r.terminal.cov),
            stationarity_residual: r.stationarity_residual,
            certificate: CertificateFile {
                kind: certificate_name(sol.certificate.kind).into(),
                dominance_gap: sol.certificate.dominance_gap,
                hessian_min_eigenvalue: sol.certificate.hessian_min_eigenvalue,
            },
            trace: TraceSummary {
                termination: termination_name(sol.trace.termination).into(),
                ccp_iterations: sol.trace.ccp_iterations(),
                newton_iterations: sol.trace.newton_iterations(),
                initial_objective: records.first().map_or(f64::NAN, |r| r.j),
                final_objective: records.last().map_or(f64::NAN, |r| r.j),
                max_ascent: if records.len() < 2 { 0.0 } else { sol.trace.max_ascent() },
            },
        }
    }

    pub fn policy(&self) -> anyhow::Result<Policy> {
        Ok(Policy {
            u_ff: Vector::from_vec(self.u_ff.clone()),
            theta: matrix_from_rows(&self.theta, "theta")?,
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading solution {}", path.display()))?;
        let s: SolutionFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing solution {}", path.display()))?;
        if s.theta.len() != s.u_ff.len() {
            bail!("solution: theta has {} rows but u_ff has {} entries", s.theta.len(), s.u_ff.len());
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solution serializes");
        s.push('\n');
        s
    }
}
