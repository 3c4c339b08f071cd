#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wsteer_core::{CausalityMask, Gaussian, Matrix, SteeringProblem, TimeVaryingLinearSystem, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `X Xᵀ / n + floor·I`, comfortably PD.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let x = randn(rng, n, n);
    &x * x.transpose() / n as f64 + Matrix::identity(n, n) * floor
}

pub fn random_problem(rng: &mut ChaCha8Rng, nx: usize, nu: usize, horizon: usize, lambda: f64) -> SteeringProblem {
    let a = (0..horizon)
        .map(|_| Matrix::identity(nx, nx) + randn(rng, nx, nx) * 0.2)
        .collect();
    let b = (0..horizon).map(|_| randn(rng, nx, nu) * 0.5).collect();
    let g = (0..horizon)
        .map(|_| Matrix::identity(nx, nx) + randn(rng, nx, nx) * 0.1)
        .collect();
    SteeringProblem {
        system: TimeVaryingLinearSystem::new(a, b, g).unwrap(),
        initial: Gaussian::new(randn_vec(rng, nx), random_spd(rng, nx, 0.3)),
        noise_cov: random_spd(rng, nx, 0.05) * 0.2,
        desired: Gaussian::new(randn_vec(rng, nx) * 2.0, random_spd(rng, nx, 0.2)),
        lambda,
    }
}

/// `n_x ≤ 3`, `n_u ≤ 2`, `N ≤ 4`, `λ ∈ [0.1, 10]`.
pub fn random_small_problem(rng: &mut ChaCha8Rng) -> SteeringProblem {
    let nx = rng.random_range(1..=3);
    let nu = rng.random_range(1..=2);
    let horizon = rng.random_range(1..=4);
    let lambda = 10f64.powf(rng.random_range(-1.0..=1.0));
    random_problem(rng, nx, nu, horizon, lambda)
}

pub fn random_causal(rng: &mut ChaCha8Rng, mask: &CausalityMask, scale: f64) -> Matrix {
    mask.expand(&(randn_vec(rng, mask.len()) * scale))
}

pub fn double_integrator(sd: [[f64; 2]; 2], lambda: f64, sw: f64) -> SteeringProblem {
    let m2 = |a: [[f64; 2]; 2]| Matrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
    SteeringProblem {
        system: TimeVaryingLinearSystem::time_invariant(
            m2([[1.0, 0.1], [0.0, 1.0]]),
            Matrix::from_row_slice(2, 1, &[0.0, 0.1]),
            Matrix::identity(2, 2),
            10,
        )
        .unwrap(),
        initial: Gaussian::new(Vector::from_vec(vec![0.0, 0.0]), Matrix::identity(2, 2)),
        noise_cov: Matrix::identity(2, 2) * sw,
        desired: Gaussian::new(Vector::from_vec(vec![10.0, 5.0]), m2(sd)),
        lambda,
    }
}

pub const SD1: [[f64; 2]; 2] = [[4.0, -2.0], [-2.0, 2.0]];
pub const SD2: [[f64; 2]; 2] = [[0.2, 0.0], [0.0, 0.1]];
pub const DI_NOISE: f64 = 0.01;

pub fn fd_step(x: f64) -> f64 {
    1e-6_f64.max(1e-6 * x.abs())
}

/// Central differences of a scalar function over every entry of `x`.
pub fn fd_gradient(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.nrows(), x.ncols());
    let mut p = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Central-difference Jacobian `d vec f / d vec x`.
pub fn fd_jacobian(f: impl Fn(&Matrix) -> Matrix, x: &Matrix) -> Matrix {
    let mut cols = Vec::with_capacity(x.len());
    let mut p = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        cols.push((up - down) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Matrix::from_fn(rows, x.len(), |r, c| cols[c][r])
}

/// Central-difference directional derivative of `f` at `x` along `d`.
pub fn fd_directional(f: impl Fn(&Matrix) -> Matrix, x: &Matrix, d: &Matrix) -> Matrix {
    let h = 1e-6 * x.amax().max(1.0);
    (f(&(x + d * h)) - f(&(x - d * h))) / (2.0 * h)
}

pub fn rel_err(a: &Matrix, reference: &Matrix) -> f64 {
    (a - reference).norm() / reference.norm().max(1e-300)
}

pub fn vec_rel_err(a: &Vector, reference: &Vector) -> f64 {
    (a - reference).norm() / reference.norm().max(1e-300)
}

/// Kronecker product by its entrywise definition.
pub fn kron_by_definition(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = b.shape();
    Matrix::from_fn(a.nrows() * p, a.ncols() * q, |r, c| a[(r / p, c / q)] * b[(r % p, c % q)])
}

/// `K_{m,n}` from its defining property `K vec(E_ij) = vec(E_ijᵀ)`.
pub fn commutation_by_definition(m: usize, n: usize) -> Matrix {
    let mut k = Matrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            // E_ij (m x n) sits at column-major index j*m + i; its transpose at i*n + j
            k[(i * n + j, j * m + i)] = 1.0;
        }
    }
    k
}

/// Square root by Denman–Beavers iteration, independent of any eigensolver.
pub fn sqrtm_denman_beavers(s: &Matrix) -> Matrix {
    let n = s.nrows();
    let mut y = s.clone();
    let mut z = Matrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let done = (&y_next - &y).norm() <= 1e-15 * y_next.norm();
        y = y_next;
        z = z_next;
        if done {
            break;
        }
    }
    y
}

pub fn lifted_state_dim(p: &SteeringProblem) -> usize {
    (p.system.horizon() + 1) * p.system.nx()
}
