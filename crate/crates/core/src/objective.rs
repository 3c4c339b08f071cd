//! The steering objective, its derivatives, and the convexity certificate.
//!
//! With `Ω = F(I + H_u Θ)` and terminal covariance `C = Ω S̃ Ωᵀ`:
//!
//! ```text
//! J₁(u_ff) = ‖u_ff‖² + λ ‖F(Γμ₀ + H_u u_ff) − μ_d‖²
//! J₂(Θ)    = tr(Θ S̃ Θᵀ)
//! J₃(Θ)    = λ tr(C + S_d)
//! J₄(Θ)    = 2λ tr((S_d^½ C S_d^½)^½)
//! ```
//!
//! `J₃ − J₄` is λ times the covariance part of W₂², and is nonnegative.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::matops::{self, SymmetricPd};
use crate::problem::{BlockOperators, CausalityMask, Dims, Gaussian};
use crate::tol;
use crate::{Matrix, Vector};

/// Feedforward `u_ff` and reparametrized feedback gain `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub u_ff: Vector,
    pub theta: Matrix,
}

impl Policy {
    pub fn zero(dims: Dims) -> Self {
        let (r, c) = dims.theta_shape();
        Policy {
            u_ff: Vector::zeros(dims.lifted_input()),
            theta: Matrix::zeros(r, c),
        }
    }

    /// Checked constructor: shapes must match and `Θ` must be exactly causal.
    pub fn new(u_ff: Vector, theta: Matrix, mask: &CausalityMask) -> Result<Self> {
        let (r, c) = mask.theta_shape();
        matops::ensure_shape(&theta, (r, c), "Theta")?;
        if u_ff.len() != r {
            return Err(Error::DimensionMismatch {
                what: "u_ff",
                expected: (r, 1),
                found: (u_ff.len(), 1),
            });
        }
        let p = Policy { u_ff, theta };
        p.ensure_causal(mask)?;
        Ok(p)
    }

    pub fn ensure_causal(&self, mask: &CausalityMask) -> Result<()> {
        matops::ensure_shape(&self.theta, mask.theta_shape(), "Theta")?;
        let v = mask.max_violation(&self.theta);
        if v != 0.0 {
            return Err(Error::NonCausal { max_violation: v });
        }
        Ok(())
    }
}

/// The four pieces of `J = J₁ + J₂ + J₃ − J₄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.j1 + self.j2 + self.j3 - self.j4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateMode {
    /// Check `Ω S̃ Ωᵀ ⪰ S_d`.
    Dominance,
    /// Assemble the Hessian and check its smallest eigenvalue.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    DominatedCovariance,
    HessianPd,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub kind: CertificateKind,
    /// `λ_min(Ω S̃ Ωᵀ − S_d)`.
    pub dominance_gap: f64,
    pub hessian_min_eigenvalue: Option<f64>,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.kind != CertificateKind::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub j: f64,
    pub terms: Terms,
    pub w2_sq: f64,
    pub cost_to_go: f64,
    pub terminal: Gaussian,
    pub grad_uff: Vector,
    pub grad_theta: Matrix,
    pub hessian_theta: Option<Matrix>,
    pub stationarity_residual: f64,
    pub certificate: Certificate,
}

/// `Ω = F(I + H_u Θ) = F + (F H_u) Θ`.
pub fn omega(ops: &BlockOperators, theta: &Matrix) -> Result<Matrix> {
    matops::ensure_shape(theta, ops.dims().theta_shape(), "Theta")?;
    Ok(ops.f() + ops.fh() * theta)
}

/// Terminal covariance `Ω S̃ Ωᵀ`, symmetrized.
pub fn terminal_covariance(ops: &BlockOperators, theta: &Matrix) -> Result<Matrix> {
    let om = omega(ops, theta)?;
    Ok(matops::symmetrize(&(&om * ops.stilde().as_matrix() * om.transpose())))
}

/// Terminal mean `F(Γμ₀ + H_u u_ff)`.
pub fn terminal_mean(ops: &BlockOperators, u_ff: &Vector) -> Vector {
    ops.free_terminal_mean() + ops.fh() * u_ff
}

pub fn terminal_gaussian(ops: &BlockOperators, policy: &Policy) -> Result<Gaussian> {
    Ok(Gaussian::new(
        terminal_mean(ops, &policy.u_ff),
        terminal_covariance(ops, &policy.theta)?,
    ))
}

/// `W₂²(N(μ₁,Σ₁), N(μ₂,Σ₂)) = ‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^½ Σ₁ Σ₂^½)^½)`.
pub fn wasserstein_sq_gaussian(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    let n = g1.dim();
    if g2.dim() != n || g1.cov.shape() != (n, n) || g2.cov.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "wasserstein_sq_gaussian",
            expected: (n, n),
            found: g2.cov.shape(),
        });
    }
    let r2 = matops::sqrtm_psd_named(&g2.cov, "second covariance")?;
    // validates the first covariance as PSD too
    matops::sqrtm_psd_named(&g1.cov, "first covariance")?;
    let cross = matops::sqrtm_psd_named(
        &matops::symmetrize(&(&r2 * &g1.cov * &r2)),
        "covariance cross term",
    )?;
    let mean_part = (&g1.mean - &g2.mean).norm_squared();
    let cov_part = g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    clamp_distance(mean_part + cov_part, g1.cov.trace() + g2.cov.trace())
}

fn clamp_distance(value: f64, scale: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -tol::W2_CLAMP * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeDistance { value })
    }
}

/// `tr((S_d^½ C S_d^½)^½)`.
fn root_trace(ops: &BlockOperators, cov: &Matrix) -> Result<f64> {
    let l = &ops.target().cov_sqrt;
    let inner = matops::symmetrize(&(l * cov * l));
    Ok(matops::sqrtm_psd_named(&inner, "S_d^1/2 C S_d^1/2")?.trace())
}

/// `J₁ … J₄` at `(u_ff, Θ)`.
pub fn terms(ops: &BlockOperators, lambda: f64, policy: &Policy) -> Result<Terms> {
    let u = &policy.u_ff;
    let theta = &policy.theta;
    let mean_err = terminal_mean(ops, u) - &ops.target().mean;
    let cov = terminal_covariance(ops, theta)?;
    let j2 = (theta * ops.stilde().as_matrix()).dot(theta);
    Ok(Terms {
        j1: u.norm_squared() + lambda * mean_err.norm_squared(),
        j2,
        j3: lambda * (cov.trace() + ops.target().cov.as_matrix().trace()),
        j4: 2.0 * lambda * root_trace(ops, &cov)?,
    })
}

pub fn objective(ops: &BlockOperators, lambda: f64, policy: &Policy) -> Result<f64> {
    Ok(terms(ops, lambda, policy)?.total())
}

/// `∂J/∂u_ff = 2u_ff + 2λ (FH_u)ᵀ (F(Γμ₀ + H_u u_ff) − μ_d)`.
pub fn grad_uff(ops: &BlockOperators, lambda: f64, u_ff: &Vector) -> Vector {
    let resid = terminal_mean(ops, u_ff) - &ops.target().mean;
    u_ff * 2.0 + ops.fh().tr_mul(&resid) * (2.0 * lambda)
}

/// Quantities at `Θ` shared by the gradient and Hessian of `J₄`.
struct TerminalFactors {
    omega: Matrix,
    cov_inv: Matrix,
    /// `M = (S_d^-½ C⁻¹ S_d^-½)^½`
    m: Matrix,
    /// `M̃ = S_d^½ M S_d^½ = S_d # C⁻¹`
    m_tilde: Matrix,
}

fn terminal_factors(ops: &BlockOperators, theta: &Matrix) -> Result<TerminalFactors> {
    let om = omega(ops, theta)?;
    let cov = matops::symmetrize(&(&om * ops.stilde().as_matrix() * om.transpose()));
    let rcond = matops::spd_rcond(&cov);
    if !(rcond >= tol::RCOND_MIN) {
        return Err(Error::SingularTerminalCovariance { rcond });
    }
    let cov_inv = SymmetricPd::new(cov, "terminal covariance")?.inverse();
    let t = ops.target();
    let inner = matops::symmetrize(&(&t.cov_inv_sqrt * &cov_inv * &t.cov_inv_sqrt));
    let m = matops::sqrtm_psd_named(&inner, "S_d^-1/2 C^-1 S_d^-1/2")?;
    let m_tilde = matops::symmetrize(&(&t.cov_sqrt * &m * &t.cov_sqrt));
    Ok(TerminalFactors {
        omega: om,
        cov_inv,
        m,
        m_tilde,
    })
}

/// `∂J₄/∂Θ = 2λ (FH_u)ᵀ (S_d # C⁻¹) Ω S̃`.
pub fn grad_j4(ops: &BlockOperators, lambda: f64, theta: &Matrix) -> Result<Matrix> {
    let tf = terminal_factors(ops, theta)?;
    Ok(ops.fh().tr_mul(&tf.m_tilde) * &tf.omega * ops.stilde().as_matrix() * (2.0 * lambda))
}

/// `∂J/∂Θ = 2ΘS̃ + 2λ (FH_u)ᵀ (I − S_d # C⁻¹) Ω S̃`, not projected on the causal pattern.
pub fn grad_theta(ops: &BlockOperators, lambda: f64, theta: &Matrix) -> Result<Matrix> {
    let tf = terminal_factors(ops, theta)?;
    Ok(grad_from_factors(ops, lambda, theta, &tf))
}

fn grad_from_factors(
    ops: &BlockOperators,
    lambda: f64,
    theta: &Matrix,
    tf: &TerminalFactors,
) -> Matrix {
    let s = ops.stilde().as_matrix();
    let nx = ops.dims().nx;
    let reduce = Matrix::identity(nx, nx) - &tf.m_tilde;
    theta * s * 2.0 + ops.fh().tr_mul(&reduce) * &tf.omega * s * (2.0 * lambda)
}

/// Hessian of `J` with respect to `vec(Θ)`.
///
/// ```text
/// S̃ ⊗ (2I + 2λ (FH_u)ᵀ (I − M̃) FH_u)
///   + 2λ Vᵀ (X ⊕ X)⁻¹ (C⁻¹ ⊗ C⁻¹) (I + K₀) V
/// ```
///
/// with `V = Ω S̃ ⊗ FH_u` and `X = S_d^½ M S_d^-½`. The Kronecker sum enters
/// inverted: it comes from the Jacobian of the matrix square root.
pub fn hessian_theta(ops: &BlockOperators, lambda: f64, theta: &Matrix) -> Result<Matrix> {
    let tf = terminal_factors(ops, theta)?;
    hessian_from_factors(ops, lambda, &tf)
}

fn hessian_from_factors(
    ops: &BlockOperators,
    lambda: f64,
    tf: &TerminalFactors,
) -> Result<Matrix> {
    let dims = ops.dims();
    let nx = dims.nx;
    let rows = dims.lifted_input();
    let s = ops.stilde().as_matrix();
    let fh = ops.fh();
    let t = ops.target();

    let inner = Matrix::identity(rows, rows) * 2.0
        + fh.tr_mul(&(Matrix::identity(nx, nx) - &tf.m_tilde)) * fh * (2.0 * lambda);
    let mut h = matops::kron(s, &inner);

    if lambda != 0.0 {
        let v = matops::kron(&(&tf.omega * s), fh);
        let x = &t.cov_sqrt * &tf.m * &t.cov_inv_sqrt;
        let ksum_inv = matops::inverse(&matops::kron_sum(&x, &x)?, "Kronecker sum in Hessian")?;
        let z = ksum_inv * matops::kron(&tf.cov_inv, &tf.cov_inv);
        let pv = matops::sym_commute_rows(nx, &v)?;
        h += v.tr_mul(&(z * pv)) * (2.0 * lambda);
    }

    let scale = matops::max_abs(&h);
    let asym = matops::max_abs(&(&h - h.transpose()));
    let allowed = tol::HESSIAN_ASYMMETRY_REL * scale;
    if asym > allowed {
        return Err(Error::AsymmetricHessian {
            asymmetry: asym,
            tolerance: allowed,
        });
    }
    Ok(matops::symmetrize(&h))
}

/// Norm of `∂J/∂Θ` restricted to the free entries.
///
/// The multiplier terms of the causality constraints live exactly on the
/// complement, so this vanishes iff the Lagrangian is stationary in `Θ`.
pub fn stationarity_residual(
    ops: &BlockOperators,
    lambda: f64,
    policy: &Policy,
    mask: &CausalityMask,
) -> Result<f64> {
    let g = grad_theta(ops, lambda, &policy.theta)?;
    Ok(mask.restrict(&g).norm())
}

/// Convexity certificate at `Θ`.
///
/// `Ω S̃ Ωᵀ ⪰ S_d` implies `Hess(J) ≻ 0`.
pub fn convexity_certificate(
    ops: &BlockOperators,
    lambda: f64,
    theta: &Matrix,
    mode: CertificateMode,
) -> Result<Certificate> {
    let cov = terminal_covariance(ops, theta)?;
    let sd = ops.target().cov.as_matrix();
    let gap = matops::min_eigenvalue(&(&cov - sd));
    let dominated = gap >= -tol::DOMINANCE_REL * matops::max_abs(sd);
    match mode {
        CertificateMode::Dominance => Ok(Certificate {
            kind: if dominated {
                CertificateKind::DominatedCovariance
            } else {
                CertificateKind::None
            },
            dominance_gap: gap,
            hessian_min_eigenvalue: None,
        }),
        CertificateMode::Spectral => {
            let h = hessian_theta(ops, lambda, theta)?;
            Ok(spectral_certificate(&h, gap))
        }
    }
}

fn spectral_certificate(h: &Matrix, gap: f64) -> Certificate {
    let lmin = SymmetricEigen::new(h.clone()).eigenvalues.min();
    Certificate {
        kind: if lmin > 0.0 {
            CertificateKind::HessianPd
        } else {
            CertificateKind::None
        },
        dominance_gap: gap,
        hessian_min_eigenvalue: Some(lmin),
    }
}

/// Full evaluation: value, decomposition, gradients, certificate, and
/// optionally the Hessian (which also upgrades the certificate to spectral).
pub fn evaluate(
    ops: &BlockOperators,
    lambda: f64,
    policy: &Policy,
    mask: &CausalityMask,
    with_hessian: bool,
) -> Result<ObjectiveReport> {
    policy.ensure_causal(mask)?;
    let terms = terms(ops, lambda, policy)?;
    let terminal = terminal_gaussian(ops, policy)?;
    let t = ops.target();

    let mean_part = (&terminal.mean - &t.mean).norm_squared();
    let cov_part =
        terminal.cov.trace() + t.cov.as_matrix().trace() - 2.0 * root_trace(ops, &terminal.cov)?;
    let w2_sq = clamp_distance(
        mean_part + cov_part,
        terminal.cov.trace() + t.cov.as_matrix().trace(),
    )?;

    let tf = terminal_factors(ops, &policy.theta)?;
    let grad_theta = grad_from_factors(ops, lambda, &policy.theta, &tf);
    let hessian_theta = if with_hessian {
        Some(hessian_from_factors(ops, lambda, &tf)?)
    } else {
        None
    };
    let gap = matops::min_eigenvalue(&(&terminal.cov - t.cov.as_matrix()));
    let certificate = match &hessian_theta {
        Some(h) => spectral_certificate(h, gap),
        None => Certificate {
            kind: if gap >= -tol::DOMINANCE_REL * matops::max_abs(t.cov.as_matrix()) {
                CertificateKind::DominatedCovariance
            } else {
                CertificateKind::None
            },
            dominance_gap: gap,
            hessian_min_eigenvalue: None,
        },
    };

    Ok(ObjectiveReport {
        j: terms.total(),
        terms,
        w2_sq,
        cost_to_go: terms.j2 + policy.u_ff.norm_squared(),
        terminal,
        grad_uff: grad_uff(ops, lambda, &policy.u_ff),
        stationarity_residual: mask.restrict(&grad_theta).norm(),
        grad_theta,
        hessian_theta,
        certificate,
    })
}
