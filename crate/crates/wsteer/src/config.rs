//! JSON problem configuration.
//!
//! Matrices are row-major nested arrays. With `"time_invariant": true`, `A`,
//! `B` and `G` are single matrices broadcast over the horizon; otherwise each
//! is an array of `horizon` matrices.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use wsteer_core::problem::Violation;
use wsteer_core::solver::{LineScanGrid, NewtonMode, SolverOptions, ThetaInit};
use wsteer_core::{Gaussian, Matrix, SteeringProblem, TimeVaryingLinearSystem, Vector};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Single(Rows),
    PerStep(Vec<Rows>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: usize,
    #[serde(default)]
    pub time_invariant: bool,
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "G")]
    pub g: MatrixSpec,
    pub mu0: Vec<f64>,
    #[serde(rename = "S0")]
    pub s0: Rows,
    #[serde(rename = "Sw")]
    pub sw: Rows,
    pub mud: Vec<f64>,
    #[serde(rename = "Sd")]
    pub sd: Rows,
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_ccp_iters: usize,
    pub obj_rel_tol: f64,
    pub stationarity_tol: f64,
    /// `"zero"` or a row-major `Θ₀`.
    pub theta_init: ThetaInitSpec,
    pub newton: NewtonSpec,
    pub newton_max_iters: usize,
    pub line_scan: Option<GridSpec>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            max_ccp_iters: d.max_ccp_iters,
            obj_rel_tol: d.obj_rel_tol,
            stationarity_tol: d.stationarity_tol,
            theta_init: ThetaInitSpec::Named(InitName::Zero),
            newton: NewtonSpec::Off,
            newton_max_iters: d.newton_max_iters,
            line_scan: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaInitSpec {
    Named(InitName),
    Given(Rows),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonSpec {
    Off,
    WhenCertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            samples: 100_000,
            seed: 42,
        }
    }
}

pub fn matrix_from_rows(rows: &Rows, field: &str) -> anyhow::Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        bail!("{field}: row {i} has {} entries, expected {ncols}", r.len());
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn rows_from_matrix(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn per_step(spec: &MatrixSpec, field: &str, horizon: usize, ti: bool) -> anyhow::Result<Vec<Matrix>> {
    match (spec, ti) {
        (MatrixSpec::Single(rows), true) => {
            let m = matrix_from_rows(rows, field)?;
            Ok(vec![m; horizon])
        }
        (MatrixSpec::PerStep(steps), false) => {
            if steps.len() != horizon {
                bail!("{field}: {} matrices given for horizon {horizon}", steps.len());
            }
            steps
                .iter()
                .enumerate()
                .map(|(k, rows)| matrix_from_rows(rows, &format!("{field}[{k}]")))
                .collect()
        }
        (MatrixSpec::Single(_), false) => {
            bail!("{field}: single matrix given but time_invariant is false")
        }
        (MatrixSpec::PerStep(_), true) => {
            bail!("{field}: per-step matrices given but time_invariant is true")
        }
    }
}

impl ProblemConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The problem as written, without validation.
    pub fn to_problem_unchecked(&self) -> anyhow::Result<SteeringProblem> {
        if self.horizon == 0 {
            bail!("horizon: must be at least 1");
        }
        let n = self.horizon;
        let ti = self.time_invariant;
        let system = TimeVaryingLinearSystem::new(
            per_step(&self.a, "A", n, ti)?,
            per_step(&self.b, "B", n, ti)?,
            per_step(&self.g, "G", n, ti)?,
        )
        .context("system matrices")?;
        Ok(SteeringProblem {
            system,
            initial: Gaussian::new(Vector::from_vec(self.mu0.clone()), matrix_from_rows(&self.s0, "S0")?),
            noise_cov: matrix_from_rows(&self.sw, "Sw")?,
            desired: Gaussian::new(Vector::from_vec(self.mud.clone()), matrix_from_rows(&self.sd, "Sd")?),
            lambda: self.lambda,
        })
    }

    /// The problem, rejected with every violation listed if invalid.
    pub fn to_problem(&self) -> anyhow::Result<SteeringProblem> {
        let p = self.to_problem_unchecked()?;
        ensure_valid(&p.validate())?;
        Ok(p)
    }

    pub fn solver_options(&self) -> anyhow::Result<SolverOptions> {
        let s = &self.solver;
        let opts = SolverOptions {
            max_ccp_iters: s.max_ccp_iters,
            obj_rel_tol: s.obj_rel_tol,
            stationarity_tol: s.stationarity_tol,
            theta_init: match &s.theta_init {
                ThetaInitSpec::Named(InitName::Zero) => ThetaInit::Zero,
                ThetaInitSpec::Given(rows) => ThetaInit::Given(matrix_from_rows(rows, "solver.theta_init")?),
            },
            newton: match s.newton {
                NewtonSpec::Off => NewtonMode::Off,
                NewtonSpec::WhenCertified => NewtonMode::WhenCertified,
            },
            newton_max_iters: s.newton_max_iters,
            line_scan_grid: s.line_scan.map(|g| LineScanGrid {
                gamma_min: g.gamma_min,
                gamma_max: g.gamma_max,
                points: g.points,
            }),
        };
        opts.validate().context("solver options")?;
        Ok(opts)
    }
}

pub fn ensure_valid(violations: &[Violation]) -> anyhow::Result<()> {
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| format!("  {}: {v}", v.field())).collect();
    bail!("invalid problem:\n{}", list.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "horizon": 2, "time_invariant": true,
        "A": [[1.0]], "B": [[1.0]], "G": [[1.0]],
        "mu0": [0.0], "S0": [[1.0]], "Sw": [[1.0]],
        "mud": [1.0], "Sd": [[1.0]], "lambda": 2.0
    }"#;

    #[test]
    fn parses_time_invariant() {
        let c: ProblemConfig = serde_json::from_str(SMALL).unwrap();
        let p = c.to_problem().unwrap();
        assert_eq!(p.system.horizon(), 2);
        assert_eq!(c.solver_options().unwrap(), SolverOptions::default());
        assert_eq!(c.simulation, SimulationConfig::default());
    }

    #[test]
    fn parses_per_step() {
        let text = SMALL
            .replace(r#""time_invariant": true"#, r#""time_invariant": false"#)
            .replace(r#""A": [[1.0]]"#, r#""A": [[[1.0]], [[0.5]]]"#)
            .replace(r#""B": [[1.0]]"#, r#""B": [[[1.0]], [[2.0]]]"#)
            .replace(r#""G": [[1.0]]"#, r#""G": [[[1.0]], [[1.0]]]"#);
        let c: ProblemConfig = serde_json::from_str(&text).unwrap();
        let p = c.to_problem().unwrap();
        assert_eq!(p.system.a(1)[(0, 0)], 0.5);
        assert_eq!(p.system.b(1)[(0, 0)], 2.0);
    }

    #[test]
    fn flag_and_shape_must_agree() {
        let text = SMALL.replace(r#""time_invariant": true"#, r#""time_invariant": false"#);
        let c: ProblemConfig = serde_json::from_str(&text).unwrap();
        assert!(c.to_problem().is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matrix_from_rows(&vec![vec![1.0, 2.0], vec![3.0]], "S0").is_err());
    }

    #[test]
    fn invalid_s0_names_field() {
        let text = SMALL.replace(r#""S0": [[1.0]]"#, r#""S0": [[-1.0]]"#);
        let c: ProblemConfig = serde_json::from_str(&text).unwrap();
        let msg = format!("{:#}", c.to_problem().unwrap_err());
        assert!(msg.contains("S0"), "{msg}");
    }

    #[test]
    fn rows_roundtrip() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matrix_from_rows(&rows_from_matrix(&m), "m").unwrap(), m);
    }
}
