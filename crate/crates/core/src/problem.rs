//! Problem data, validation, and the lifted block operators.
//!
//! Stacking `x = [x₀; …; x_N]`, `u = [u₀; …; u_{N−1}]`, `w = [w₀; …; w_{N−1}]`
//! gives `x = Γ x₀ + H_u u + H_w w`, and the terminal state is `x_N = F x`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::matops::{self, SymmetricPd};
use crate::tol;
use crate::{Matrix, Vector};

/// `x_{k+1} = A_k x_k + B_k u_k + G_k w_k` for `k = 0, …, N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingLinearSystem {
    a: Vec<Matrix>,
    b: Vec<Matrix>,
    g: Vec<Matrix>,
}

impl TimeVaryingLinearSystem {
    pub fn new(a: Vec<Matrix>, b: Vec<Matrix>, g: Vec<Matrix>) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::InvalidProblem("horizon must be at least 1".into()));
        }
        if b.len() != horizon || g.len() != horizon {
            return Err(Error::InvalidProblem(format!(
                "sequence lengths differ: {} A, {} B, {} G",
                horizon,
                b.len(),
                g.len()
            )));
        }
        let nx = a[0].nrows();
        let nu = b[0].ncols();
        let nw = g[0].ncols();
        if nx == 0 || nu == 0 || nw == 0 {
            return Err(Error::InvalidProblem("empty state, input, or noise dimension".into()));
        }
        for k in 0..horizon {
            matops::ensure_shape(&a[k], (nx, nx), "A_k")?;
            matops::ensure_shape(&b[k], (nx, nu), "B_k")?;
            matops::ensure_shape(&g[k], (nx, nw), "G_k")?;
            matops::ensure_finite(&a[k], "A_k")?;
            matops::ensure_finite(&b[k], "B_k")?;
            matops::ensure_finite(&g[k], "G_k")?;
        }
        Ok(TimeVaryingLinearSystem { a, b, g })
    }

    /// Broadcast a single `(A, B, G)` over the horizon.
    pub fn time_invariant(a: Matrix, b: Matrix, g: Matrix, horizon: usize) -> Result<Self> {
        Self::new(
            alloc::vec![a; horizon],
            alloc::vec![b; horizon],
            alloc::vec![g; horizon],
        )
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }
    pub fn nx(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn nu(&self) -> usize {
        self.b[0].ncols()
    }
    pub fn nw(&self) -> usize {
        self.g[0].ncols()
    }
    pub fn a(&self, k: usize) -> &Matrix {
        &self.a[k]
    }
    pub fn b(&self, k: usize) -> &Matrix {
        &self.b[k]
    }
    pub fn g(&self, k: usize) -> &Matrix {
        &self.g[k]
    }

    pub fn dims(&self) -> Dims {
        Dims {
            horizon: self.horizon(),
            nx: self.nx(),
            nu: self.nu(),
            nw: self.nw(),
        }
    }

    /// `Φ(k, n) = A_{k−1} ⋯ A_n`, with `Φ(n, n) = I`.
    pub fn state_transition(&self, k: usize, n: usize) -> Result<Matrix> {
        if k < n {
            return Err(Error::IndexOrder { k, n });
        }
        if k > self.horizon() {
            return Err(Error::OutOfHorizon {
                index: k,
                horizon: self.horizon(),
            });
        }
        let nx = self.nx();
        Ok((n..k).fold(Matrix::identity(nx, nx), |acc, j| &self.a[j] * acc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub nw: usize,
}

impl Dims {
    /// Shape of `Θ`: `N·n_u x (N+1)·n_x`.
    pub fn theta_shape(&self) -> (usize, usize) {
        (self.horizon * self.nu, (self.horizon + 1) * self.nx)
    }

    pub fn theta_len(&self) -> usize {
        let (r, c) = self.theta_shape();
        r * c
    }

    pub fn lifted_state(&self) -> usize {
        (self.horizon + 1) * self.nx
    }

    pub fn lifted_input(&self) -> usize {
        self.horizon * self.nu
    }

    pub fn lifted_noise(&self) -> usize {
        self.horizon * self.nw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        Gaussian { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringProblem {
    pub system: TimeVaryingLinearSystem,
    /// `x₀ ~ N(μ₀, S₀)`.
    pub initial: Gaussian,
    /// `w_k ~ N(0, S_w)`.
    pub noise_cov: Matrix,
    /// Target terminal law `N(μ_d, S_d)`.
    pub desired: Gaussian,
    /// Weight `λ` on the Wasserstein terminal cost.
    pub lambda: f64,
}

/// A single reason a [`SteeringProblem`] is unusable.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension {
        field: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite {
        field: &'static str,
    },
    NotSymmetric {
        field: &'static str,
    },
    NotPositiveDefinite {
        field: &'static str,
        min_eigenvalue: f64,
    },
    RankDeficientNoiseInput {
        step: usize,
        sigma_ratio: f64,
    },
    NonPositiveLambda(f64),
}

impl Violation {
    /// Name of the offending input field (`"S0"`, `"G[3]"`, …).
    pub fn field(&self) -> String {
        match self {
            Violation::Dimension { field, .. }
            | Violation::NonFinite { field }
            | Violation::NotSymmetric { field }
            | Violation::NotPositiveDefinite { field, .. } => String::from(*field),
            Violation::RankDeficientNoiseInput { step, .. } => format!("G[{step}]"),
            Violation::NonPositiveLambda(_) => String::from("lambda"),
        }
    }
}

fn describe(field: &str) -> &'static str {
    match field {
        "S0" => "initial covariance",
        "Sw" => "noise covariance",
        "Sd" => "desired covariance",
        "mu0" => "initial mean",
        "mud" => "desired mean",
        _ => "field",
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension {
                field,
                expected,
                found,
            } => write!(
                f,
                "{} ({field}) has shape {}x{}, expected {}x{}",
                describe(field),
                found.0,
                found.1,
                expected.0,
                expected.1
            ),
            Violation::NonFinite { field } => {
                write!(f, "{} ({field}) contains non-finite entries", describe(field))
            }
            Violation::NotSymmetric { field } => {
                write!(f, "{} ({field}) not symmetric", describe(field))
            }
            Violation::NotPositiveDefinite {
                field,
                min_eigenvalue,
            } => write!(
                f,
                "{} ({field}) not PD (min eigenvalue {min_eigenvalue:e})",
                describe(field)
            ),
            Violation::RankDeficientNoiseInput { step, sigma_ratio } => write!(
                f,
                "noise input G[{step}] is rank deficient (sigma_min/sigma_max = {sigma_ratio:e})"
            ),
            Violation::NonPositiveLambda(l) => write!(f, "lambda must be positive, got {l}"),
        }
    }
}

impl SteeringProblem {
    pub fn dims(&self) -> Dims {
        self.system.dims()
    }

    /// Every violated assumption; empty iff the problem is well posed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let Dims { nx, nw, .. } = self.dims();

        check_vector(&self.initial.mean, nx, "mu0", &mut out);
        check_vector(&self.desired.mean, nx, "mud", &mut out);
        check_pd(&self.initial.cov, nx, "S0", &mut out);
        check_pd(&self.noise_cov, nw, "Sw", &mut out);
        check_pd(&self.desired.cov, nx, "Sd", &mut out);

        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            out.push(Violation::NonPositiveLambda(self.lambda));
        }

        for k in 0..self.system.horizon() {
            let ratio = sigma_ratio(self.system.g(k));
            if !(ratio > tol::RANK_REL) {
                out.push(Violation::RankDeficientNoiseInput {
                    step: k,
                    sigma_ratio: ratio,
                });
            }
        }
        out
    }
}

fn check_vector(v: &Vector, n: usize, field: &'static str, out: &mut Vec<Violation>) {
    if v.len() != n {
        out.push(Violation::Dimension {
            field,
            expected: (n, 1),
            found: (v.len(), 1),
        });
    } else if !v.iter().all(|x| x.is_finite()) {
        out.push(Violation::NonFinite { field });
    }
}

fn check_pd(m: &Matrix, n: usize, field: &'static str, out: &mut Vec<Violation>) {
    if m.shape() != (n, n) {
        out.push(Violation::Dimension {
            field,
            expected: (n, n),
            found: m.shape(),
        });
        return;
    }
    match SymmetricPd::new(m.clone(), field) {
        Ok(_) => {}
        Err(Error::NonFinite { .. }) => out.push(Violation::NonFinite { field }),
        Err(Error::NotSymmetric { .. }) => out.push(Violation::NotSymmetric { field }),
        Err(Error::NotPositiveDefinite { min_eigenvalue, .. }) => {
            out.push(Violation::NotPositiveDefinite {
                field,
                min_eigenvalue,
            })
        }
        Err(_) => out.push(Violation::NotSymmetric { field }),
    }
}

/// `σ_min / σ_max`, the full-rank measure for a possibly rectangular matrix.
fn sigma_ratio(g: &Matrix) -> f64 {
    let sv = SVD::new(g.clone(), false, false).singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Target terminal law with the factors the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub mean: Vector,
    pub cov: SymmetricPd,
    pub cov_sqrt: Matrix,
    pub cov_inv_sqrt: Matrix,
}

/// Lifted operators of a validated [`SteeringProblem`], plus derived caches.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperators {
    dims: Dims,
    gamma: Matrix,
    hu: Matrix,
    hw: Matrix,
    w: Matrix,
    stilde: SymmetricPd,
    f: Matrix,
    fh: Matrix,
    mu0: Vector,
    free_terminal_mean: Vector,
    target: Target,
}

impl BlockOperators {
    pub fn dims(&self) -> Dims {
        self.dims
    }
    /// `Γ = [I; Φ(1,0); …; Φ(N,0)]`.
    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }
    pub fn hu(&self) -> &Matrix {
        &self.hu
    }
    pub fn hw(&self) -> &Matrix {
        &self.hw
    }
    /// `blkdiag(S_w, …, S_w)`.
    pub fn w(&self) -> &Matrix {
        &self.w
    }
    /// `S̃ = Γ S₀ Γᵀ + H_w W H_wᵀ`.
    pub fn stilde(&self) -> &SymmetricPd {
        &self.stilde
    }
    /// Terminal selector `F = [0 … 0 I]`.
    pub fn f(&self) -> &Matrix {
        &self.f
    }
    /// `F H_u`, the terminal rows of `H_u`.
    pub fn fh(&self) -> &Matrix {
        &self.fh
    }
    pub fn mu0(&self) -> &Vector {
        &self.mu0
    }
    /// `F Γ μ₀ = Φ(N,0) μ₀`, the terminal mean with zero input.
    pub fn free_terminal_mean(&self) -> &Vector {
        &self.free_terminal_mean
    }
    pub fn target(&self) -> &Target {
        &self.target
    }

    /// Same operators with a different target law (same dimensions).
    pub fn with_target(&self, mean: Vector, cov: Matrix) -> Result<Self> {
        if mean.len() != self.dims.nx {
            return Err(Error::DimensionMismatch {
                what: "target mean",
                expected: (self.dims.nx, 1),
                found: (mean.len(), 1),
            });
        }
        let mut out = self.clone();
        out.target = make_target(mean, cov)?;
        Ok(out)
    }
}

fn make_target(mean: Vector, cov: Matrix) -> Result<Target> {
    let cov = SymmetricPd::new(cov, "desired covariance")?;
    let cov_sqrt = cov.sqrt();
    let cov_inv_sqrt = cov.inv_sqrt();
    Ok(Target {
        mean,
        cov,
        cov_sqrt,
        cov_inv_sqrt,
    })
}

/// Build `Γ`, `H_u`, `H_w`, `W`, `S̃`, `F` for a validated problem.
pub fn assemble(problem: &SteeringProblem) -> Result<BlockOperators> {
    let violations = problem.validate();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidProblem(format!("{v}")));
    }
    let sys = &problem.system;
    let dims = sys.dims();
    let Dims { horizon, nx, nu, nw } = dims;

    let mut gamma = Matrix::zeros((horizon + 1) * nx, nx);
    let mut phi = Matrix::identity(nx, nx);
    gamma.view_mut((0, 0), (nx, nx)).copy_from(&phi);
    for k in 1..=horizon {
        phi = sys.a(k - 1) * phi;
        gamma.view_mut((k * nx, 0), (nx, nx)).copy_from(&phi);
    }

    let hu = lower_block_toeplitz(sys, |j| sys.b(j), nu);
    let hw = lower_block_toeplitz(sys, |j| sys.g(j), nw);

    let mut w = Matrix::zeros(horizon * nw, horizon * nw);
    for k in 0..horizon {
        w.view_mut((k * nw, k * nw), (nw, nw))
            .copy_from(&problem.noise_cov);
    }

    let stilde = &gamma * &problem.initial.cov * gamma.transpose() + &hw * &w * hw.transpose();
    let stilde = SymmetricPd::new(matops::symmetrize(&stilde), "lifted covariance S~")?;

    let mut f = Matrix::zeros(nx, (horizon + 1) * nx);
    f.view_mut((0, horizon * nx), (nx, nx))
        .copy_from(&Matrix::identity(nx, nx));
    let fh = hu.rows(horizon * nx, nx).into_owned();
    let free_terminal_mean = gamma.rows(horizon * nx, nx) * &problem.initial.mean;

    Ok(BlockOperators {
        dims,
        gamma,
        hu,
        hw,
        w,
        stilde,
        f,
        fh,
        mu0: problem.initial.mean.clone(),
        free_terminal_mean,
        target: make_target(problem.desired.mean.clone(), problem.desired.cov.clone())?,
    })
}

/// Block `(k, j)` for `j < k` is `Φ(k, j+1) M_j`; the rest is zero.
fn lower_block_toeplitz<'a>(
    sys: &'a TimeVaryingLinearSystem,
    input: impl Fn(usize) -> &'a Matrix,
    width: usize,
) -> Matrix {
    let horizon = sys.horizon();
    let nx = sys.nx();
    let mut h = Matrix::zeros((horizon + 1) * nx, horizon * width);
    for j in 0..horizon {
        // column block j: rows k = j+1 .. N
        let mut block = input(j).clone();
        h.view_mut(((j + 1) * nx, j * width), (nx, width))
            .copy_from(&block);
        for k in (j + 2)..=horizon {
            block = sys.a(k - 1) * block;
            h.view_mut((k * nx, j * width), (nx, width))
                .copy_from(&block);
        }
    }
    h
}

/// Free (unconstrained) entries of `vec(Θ)` under the causality pattern.
///
/// Block `θ_{i,j}` (`n_u x n_x`) is free iff `j ≤ i`; the last block column
/// is always zero. Entries are ordered block row-major over `(i, j)` and
/// column-major inside each block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalityMask {
    dims: Dims,
    free: Vec<usize>,
    is_free: Vec<bool>,
}

pub fn causality_mask(horizon: usize, nu: usize, nx: usize) -> CausalityMask {
    let dims = Dims {
        horizon,
        nx,
        nu,
        nw: 0,
    };
    let rows = horizon * nu;
    let mut free = Vec::with_capacity(nu * nx * horizon * (horizon + 1) / 2);
    let mut is_free = alloc::vec![false; dims.theta_len()];
    for i in 0..horizon {
        for j in 0..=i {
            for c in 0..nx {
                for r in 0..nu {
                    let idx = (j * nx + c) * rows + i * nu + r;
                    free.push(idx);
                    is_free[idx] = true;
                }
            }
        }
    }
    CausalityMask {
        dims,
        free,
        is_free,
    }
}

impl CausalityMask {
    pub fn for_dims(dims: Dims) -> Self {
        causality_mask(dims.horizon, dims.nu, dims.nx)
    }

    pub fn theta_shape(&self) -> (usize, usize) {
        self.dims.theta_shape()
    }

    /// Indices into `vec(Θ)` of the free entries, in canonical order.
    pub fn free_entries(&self) -> &[usize] {
        &self.free
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn is_free(&self, vec_index: usize) -> bool {
        self.is_free[vec_index]
    }

    /// Reduced coordinates of `Θ` (free entries only).
    pub fn restrict(&self, theta: &Matrix) -> Vector {
        let s = theta.as_slice();
        Vector::from_iterator(self.free.len(), self.free.iter().map(|&i| s[i]))
    }

    /// Full `Θ` from reduced coordinates, zero on the complement.
    pub fn expand(&self, reduced: &Vector) -> Matrix {
        let (r, c) = self.theta_shape();
        let mut theta = Matrix::zeros(r, c);
        let s = theta.as_mut_slice();
        for (k, &i) in self.free.iter().enumerate() {
            s[i] = reduced[k];
        }
        theta
    }

    /// Rows and columns of a `vec(Θ)`-indexed square matrix on the free set.
    pub fn restrict_square(&self, h: &Matrix) -> Matrix {
        let n = self.free.len();
        Matrix::from_fn(n, n, |a, b| h[(self.free[a], self.free[b])])
    }

    /// `Θ` with the complement entries set to zero.
    pub fn project(&self, theta: &Matrix) -> Matrix {
        let mut out = theta.clone();
        for (i, x) in out.as_mut_slice().iter_mut().enumerate() {
            if !self.is_free[i] {
                *x = 0.0;
            }
        }
        out
    }

    /// Largest absolute entry outside the pattern.
    pub fn max_violation(&self, theta: &Matrix) -> f64 {
        theta
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_free[*i])
            .fold(0.0_f64, |m, (_, x)| m.max(x.abs()))
    }

    pub fn is_causal(&self, theta: &Matrix) -> bool {
        theta.shape() == self.theta_shape() && self.max_violation(theta) == 0.0
    }
}
