mod common;

use common::*;
use rand::Rng;
use wsteer_core::matops;
use wsteer_core::objective::{self, CertificateKind, CertificateMode};
use wsteer_core::problem::assemble;
use wsteer_core::{CausalityMask, Gaussian, Matrix, Policy, Vector};

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(11);
    for case in 0..25 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let theta = random_causal(&mut r, &mask, 0.3);
        let u = randn_vec(&mut r, ops.dims().lifted_input());
        let lam = p.lambda;

        let j_theta = |t: &Matrix| {
            objective::objective(&ops, lam, &Policy { u_ff: u.clone(), theta: t.clone() }).unwrap()
        };
        let fd = fd_gradient(j_theta, &theta);
        let g = objective::grad_theta(&ops, lam, &theta).unwrap();
        assert!(rel_err(&g, &fd) <= 1e-6, "case {case}: theta gradient {}", rel_err(&g, &fd));

        let u_mat = Matrix::from_column_slice(u.len(), 1, u.as_slice());
        let j_u = |x: &Matrix| {
            objective::objective(&ops, lam, &Policy { u_ff: x.column(0).into_owned(), theta: theta.clone() }).unwrap()
        };
        let fd_u = fd_gradient(j_u, &u_mat);
        let gu = objective::grad_uff(&ops, lam, &u);
        assert!(vec_rel_err(&gu, &fd_u.column(0).into_owned()) <= 1e-7, "case {case}: u gradient");

        let j4 = |t: &Matrix| {
            objective::terms(&ops, lam, &Policy { u_ff: u.clone(), theta: t.clone() }).unwrap().j4
        };
        let fd4 = fd_gradient(j4, &theta);
        let g4 = objective::grad_j4(&ops, lam, &theta).unwrap();
        assert!(rel_err(&g4, &fd4) <= 1e-6, "case {case}: J4 gradient");
    }
}

#[test]
fn hessian_matches_finite_differences_of_gradient() {
    let mut r = rng(12);
    for case in 0..25 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let theta = random_causal(&mut r, &mask, 0.3);
        let fd = fd_jacobian(|t| {
            let g = objective::grad_theta(&ops, p.lambda, t).unwrap();
            Matrix::from_column_slice(g.len(), 1, g.as_slice())
        }, &theta);
        let h = objective::hessian_theta(&ops, p.lambda, &theta).unwrap();
        assert!(rel_err(&h, &fd) <= 1e-5, "case {case}: {}", rel_err(&h, &fd));
        assert_eq!(h, h.transpose());
    }
}

#[test]
fn mixed_second_derivatives_vanish() {
    let mut r = rng(13);
    for _ in 0..5 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let theta = random_causal(&mut r, &mask, 0.3);
        let u = randn_vec(&mut r, ops.dims().lifted_input());
        // ∂J/∂Θ must not move with u_ff
        let g0 = objective::grad_theta(&ops, p.lambda, &theta).unwrap();
        let mut pol = Policy { u_ff: u.clone(), theta: theta.clone() };
        let base = objective::evaluate(&ops, p.lambda, &pol, &mask, false).unwrap();
        pol.u_ff += randn_vec(&mut r, u.len());
        let moved = objective::evaluate(&ops, p.lambda, &pol, &mask, false).unwrap();
        assert_eq!(base.grad_theta, moved.grad_theta);
        assert_eq!(base.grad_theta, g0);
        assert_eq!(base.terms.j2, moved.terms.j2);
        assert_eq!(base.terms.j4, moved.terms.j4);
    }
}

#[test]
fn decomposition_and_wasserstein_cross_check() {
    let mut r = rng(14);
    for _ in 0..30 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let pol = Policy {
            u_ff: randn_vec(&mut r, ops.dims().lifted_input()),
            theta: random_causal(&mut r, &mask, 0.5),
        };
        let rep = objective::evaluate(&ops, p.lambda, &pol, &mask, false).unwrap();
        let t = rep.terms;
        assert!((rep.j - (t.j1 + t.j2 + t.j3 - t.j4)).abs() <= 1e-12 * rep.j.abs());
        let w2 = objective::wasserstein_sq_gaussian(&p.desired, &rep.terminal).unwrap();
        assert!((rep.w2_sq - w2).abs() <= 1e-10 * w2.max(1.0));
        assert!((rep.j - (p.lambda * rep.w2_sq + rep.cost_to_go)).abs() <= 1e-10 * rep.j.abs());
        assert!(rep.w2_sq >= 0.0);
        assert!(t.j3 - t.j4 >= -1e-10 * t.j3);
    }
}

#[test]
fn j2_equals_vectorized_quadratic_form() {
    let mut r = rng(15);
    for _ in 0..10 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let theta = random_causal(&mut r, &mask, 1.0);
        let rows = theta.nrows();
        let v = matops::vec(&theta);
        let quad = (v.transpose() * matops::kron(ops.stilde().as_matrix(), &Matrix::identity(rows, rows)) * &v)[0];
        let pol = Policy { u_ff: Vector::zeros(rows), theta };
        let j2 = objective::terms(&ops, p.lambda, &pol).unwrap().j2;
        assert!((j2 - quad).abs() <= 1e-12 * quad.abs());
    }
}

#[test]
fn wasserstein_closed_forms() {
    let mut r = rng(16);
    for _ in 0..20 {
        // scalar: (m1 − m2)² + (s1 − s2)²
        let (m1, m2) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let (s1, s2): (f64, f64) = (r.random_range(0.1..3.0), r.random_range(0.1..3.0));
        let g1 = Gaussian::new(Vector::from_vec(vec![m1]), Matrix::from_element(1, 1, s1 * s1));
        let g2 = Gaussian::new(Vector::from_vec(vec![m2]), Matrix::from_element(1, 1, s2 * s2));
        let w = objective::wasserstein_sq_gaussian(&g1, &g2).unwrap();
        let expected = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        assert!((w - expected).abs() <= 1e-12 * expected.max(1.0));

        // commuting covariances: ‖Σ1^½ − Σ2^½‖_F²
        let n = r.random_range(2..=4);
        let q = randn(&mut r, n, n).qr().q();
        let d1 = Vector::from_fn(n, |_, _| r.random_range(0.1..4.0));
        let d2 = Vector::from_fn(n, |_, _| r.random_range(0.1..4.0));
        let c1 = &q * Matrix::from_diagonal(&d1) * q.transpose();
        let c2 = &q * Matrix::from_diagonal(&d2) * q.transpose();
        let mu = randn_vec(&mut r, n);
        let a = Gaussian::new(mu.clone(), matops::symmetrize(&c1));
        let b = Gaussian::new(mu, matops::symmetrize(&c2));
        let expected: f64 = d1.iter().zip(d2.iter()).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
        let w = objective::wasserstein_sq_gaussian(&a, &b).unwrap();
        assert!((w - expected).abs() <= 1e-10 * expected.max(1.0));
        let back = objective::wasserstein_sq_gaussian(&b, &a).unwrap();
        assert!((w - back).abs() <= 1e-10 * w.max(1.0));
    }
}

#[test]
fn coercive_along_rays() {
    let mut r = rng(17);
    for _ in 0..10 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let dir = Policy {
            u_ff: randn_vec(&mut r, ops.dims().lifted_input()),
            theta: random_causal(&mut r, &mask, 1.0),
        };
        let js: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|t| {
                let pol = Policy { u_ff: &dir.u_ff * *t, theta: &dir.theta * *t };
                objective::objective(&ops, p.lambda, &pol).unwrap()
            })
            .collect();
        assert!(js[3] > js[2] && js[2] > js[1], "{js:?}");
    }
}

#[test]
fn dominance_implies_positive_hessian() {
    let mut r = rng(18);
    for _ in 0..15 {
        let p = random_small_problem(&mut r);
        let ops = assemble(&p).unwrap();
        let mask = CausalityMask::for_dims(ops.dims());
        let theta = random_causal(&mut r, &mask, 0.3);
        let c = objective::terminal_covariance(&ops, &theta).unwrap();
        let scale = r.random_range(0.1..=1.0);
        let ops = ops.with_target(p.desired.mean.clone(), &c * scale).unwrap();
        let cert = objective::convexity_certificate(&ops, p.lambda, &theta, CertificateMode::Spectral).unwrap();
        assert!(cert.dominance_gap >= -1e-10 * c.amax());
        assert_eq!(cert.kind, CertificateKind::HessianPd);
        assert!(cert.hessian_min_eigenvalue.unwrap() > 0.0);
    }
}

#[test]
fn target_equal_to_uncontrolled_law() {
    let mut r = rng(19);
    let p = random_problem(&mut r, 2, 1, 3, 4.0);
    let ops = assemble(&p).unwrap();
    let mask = CausalityMask::for_dims(ops.dims());
    let zero = Policy::zero(ops.dims());
    let free = objective::terminal_gaussian(&ops, &zero).unwrap();
    assert_eq!(free.mean, ops.free_terminal_mean().clone());
    let s = ops.stilde().as_matrix();
    let n = s.nrows();
    let fsf = s.view((n - 2, n - 2), (2, 2)).into_owned();
    assert!(rel_err(&free.cov, &fsf) < 1e-14);
    let ops = ops.with_target(free.mean, free.cov).unwrap();
    let rep = objective::evaluate(&ops, 4.0, &zero, &mask, false).unwrap();
    assert!(rep.j.abs() < 1e-10);
}

#[test]
fn ill_conditioned_terminal_covariance_is_reported() {
    // one huge gain makes C numerically rank one
    let p = double_integrator(SD2, 1.0, DI_NOISE);
    let ops = assemble(&p).unwrap();
    let mask = CausalityMask::for_dims(ops.dims());
    let mut theta = Matrix::zeros(mask.theta_shape().0, mask.theta_shape().1);
    theta[(9, 0)] = 1e9;
    assert!(matches!(
        objective::grad_theta(&ops, 1.0, &theta),
        Err(wsteer_core::Error::SingularTerminalCovariance { .. })
    ));
    assert!(objective::objective(&ops, 1.0, &Policy { u_ff: Vector::zeros(10), theta }).is_ok());
}
