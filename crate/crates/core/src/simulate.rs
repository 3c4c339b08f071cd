//! Feedback gain transforms and seeded Monte Carlo rollouts.
//!
//! Sample `i` of a rollout with seed `s` draws from ChaCha8 keyed by `s` on
//! stream `i`, so any partition of the samples across threads reproduces the
//! serial result exactly once [`aggregate`] is applied to them in index order.

use alloc::vec::Vec;

use nalgebra::{Cholesky, Dyn};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matops;
use crate::objective::{self, Policy};
use crate::problem::{BlockOperators, CausalityMask, Gaussian, SteeringProblem};
use crate::{Matrix, Vector};

/// `K = (I + ΘH_u)⁻¹ Θ`.
pub fn theta_to_k(theta: &Matrix, hu: &Matrix) -> Result<Matrix> {
    check_pair(theta, hu)?;
    let n = theta.nrows();
    let lhs = Matrix::identity(n, n) + theta * hu;
    transform_solve(&lhs, theta)
}

/// `Θ = K (I − H_u K)⁻¹`.
pub fn k_to_theta(k: &Matrix, hu: &Matrix) -> Result<Matrix> {
    check_pair(k, hu)?;
    let n = hu.nrows();
    let right = Matrix::identity(n, n) - hu * k;
    // Θ (I − H_u K) = K, solved in transposed form
    Ok(transform_solve(&right.transpose(), &k.transpose())?.transpose())
}

fn check_pair(gain: &Matrix, hu: &Matrix) -> Result<()> {
    if gain.ncols() != hu.nrows() || gain.nrows() != hu.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feedback gain against H_u",
            expected: (hu.ncols(), hu.nrows()),
            found: gain.shape(),
        });
    }
    Ok(())
}

fn transform_solve(lhs: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    matops::solve(lhs, rhs, "gain transform").map_err(|e| match e {
        Error::SingularMatrix { rcond, .. } => Error::SingularTransform { rcond },
        other => other,
    })
}

/// Closed-loop sampler for one problem and policy.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    problem: &'a SteeringProblem,
    k: Matrix,
    u_ff: Vector,
    /// Noiseless lifted mean `Γμ₀ + H_u u_ff`.
    xbar: Vector,
    init_factor: Matrix,
    noise_factor: Matrix,
    seed: u64,
}

impl<'a> Sampler<'a> {
    pub fn new(
        problem: &'a SteeringProblem,
        ops: &BlockOperators,
        policy: &Policy,
        seed: u64,
    ) -> Result<Self> {
        let dims = ops.dims();
        if problem.dims() != dims {
            return Err(Error::InvalidProblem("operators do not match the problem".into()));
        }
        let mask = CausalityMask::for_dims(dims);
        policy.ensure_causal(&mask)?;
        if policy.u_ff.len() != dims.lifted_input() {
            return Err(Error::DimensionMismatch {
                what: "u_ff",
                expected: (dims.lifted_input(), 1),
                found: (policy.u_ff.len(), 1),
            });
        }
        let lower = |c: Cholesky<f64, Dyn>| c.l();
        Ok(Sampler {
            problem,
            k: theta_to_k(&policy.theta, ops.hu())?,
            u_ff: policy.u_ff.clone(),
            xbar: ops.gamma() * ops.mu0() + ops.hu() * &policy.u_ff,
            init_factor: lower(matops::cholesky(&problem.initial.cov, "S0")?),
            noise_factor: lower(matops::cholesky(&problem.noise_cov, "Sw")?),
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(x₀, w)` for sample `index`, with `w` stacked over the horizon.
    pub fn draw(&self, index: u64) -> (Vector, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let dims = self.problem.dims();
        let mut normal = |n: usize| -> Vector {
            Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
        };
        let x0 = &self.problem.initial.mean + &self.init_factor * normal(dims.nx);
        let mut w = Vector::zeros(dims.lifted_noise());
        for t in 0..dims.horizon {
            let z = normal(dims.nw);
            w.rows_mut(t * dims.nw, dims.nw)
                .copy_from(&(&self.noise_factor * z));
        }
        (x0, w)
    }

    /// Lifted closed-loop trajectory driven by `(x₀, w)`.
    pub fn propagate(&self, x0: &Vector, w: &Vector) -> Vector {
        let sys = &self.problem.system;
        let dims = sys.dims();
        let (nx, nu, nw) = (dims.nx, dims.nu, dims.nw);
        let mut x = Vector::zeros(dims.lifted_state());
        let mut dev = Vector::zeros(dims.lifted_state());
        x.rows_mut(0, nx).copy_from(x0);
        for t in 0..dims.horizon {
            let xt = x.rows(t * nx, nx).into_owned();
            dev.rows_mut(t * nx, nx)
                .copy_from(&(&xt - self.xbar.rows(t * nx, nx)));
            let width = (t + 1) * nx;
            let u = self.u_ff.rows(t * nu, nu)
                + self.k.view((t * nu, 0), (nu, width)) * dev.rows(0, width);
            let next = sys.a(t) * &xt + sys.b(t) * u + sys.g(t) * w.rows(t * nw, nw);
            x.rows_mut((t + 1) * nx, nx).copy_from(&next);
        }
        x
    }

    pub fn terminal_state(&self, index: u64) -> Vector {
        let (x0, w) = self.draw(index);
        let x = self.propagate(&x0, &w);
        let nx = self.problem.system.nx();
        x.rows(x.len() - nx, nx).into_owned()
    }
}

/// Sum in fixed pairwise order; independent of how the inputs were produced.
pub fn pairwise_sum(items: &[Vector], dim: usize) -> Vector {
    match items.len() {
        0 => Vector::zeros(dim),
        1 => items[0].clone(),
        n => {
            let (l, r) = items.split_at(n / 2);
            pairwise_sum(l, dim) + pairwise_sum(r, dim)
        }
    }
}

fn pairwise_outer(items: &[Vector], mean: &Vector) -> Matrix {
    let d = mean.len();
    match items.len() {
        0 => Matrix::zeros(d, d),
        1 => {
            let c = &items[0] - mean;
            &c * c.transpose()
        }
        n => {
            let (l, r) = items.split_at(n / 2);
            pairwise_outer(l, mean) + pairwise_outer(r, mean)
        }
    }
}

/// Empirical mean and unbiased covariance, in index order.
pub fn aggregate(samples: &[Vector], dim: usize) -> Result<(Vector, Matrix)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { samples: n });
    }
    let mean = pairwise_sum(samples, dim) / n as f64;
    let cov = matops::symmetrize(&(pairwise_outer(samples, &mean) / (n - 1) as f64));
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub samples: usize,
    pub seed: u64,
    pub empirical_mean: Vector,
    pub empirical_cov: Matrix,
    pub predicted: Gaussian,
    pub w2_sq_empirical_vs_desired: f64,
    /// `‖m̂ − m‖₂`.
    pub mean_err: f64,
    /// `‖Ĉ − C‖_F`.
    pub cov_err: f64,
    /// `5·√(tr C / n)`.
    pub mean_band: f64,
    /// `5·√(2/n)·‖C‖_F`.
    pub cov_band: f64,
}

impl RolloutReport {
    pub fn within_band(&self) -> bool {
        self.mean_err <= self.mean_band && self.cov_err <= self.cov_band
    }
}

/// Compare terminal samples (in index order) against the predicted law.
pub fn report(
    ops: &BlockOperators,
    policy: &Policy,
    terminals: &[Vector],
    seed: u64,
) -> Result<RolloutReport> {
    let nx = ops.dims().nx;
    let (mean, cov) = aggregate(terminals, nx)?;
    let predicted = objective::terminal_gaussian(ops, policy)?;
    let t = ops.target();
    let desired = Gaussian::new(t.mean.clone(), t.cov.as_matrix().clone());
    let n = terminals.len() as f64;
    let w2 = objective::wasserstein_sq_gaussian(&Gaussian::new(mean.clone(), cov.clone()), &desired)?;
    Ok(RolloutReport {
        samples: terminals.len(),
        seed,
        mean_err: (&mean - &predicted.mean).norm(),
        cov_err: (&cov - &predicted.cov).norm(),
        mean_band: 5.0 * libm::sqrt(predicted.cov.trace().max(0.0) / n),
        cov_band: 5.0 * libm::sqrt(2.0 / n) * predicted.cov.norm(),
        empirical_mean: mean,
        empirical_cov: cov,
        predicted,
        w2_sq_empirical_vs_desired: w2,
    })
}

/// Serial rollout of `samples` closed-loop trajectories.
pub fn rollout(
    problem: &SteeringProblem,
    ops: &BlockOperators,
    policy: &Policy,
    samples: usize,
    seed: u64,
) -> Result<RolloutReport> {
    if samples < 2 {
        return Err(Error::InsufficientSamples { samples });
    }
    let sampler = Sampler::new(problem, ops, policy, seed)?;
    let terminals: Vec<Vector> = (0..samples as u64).map(|i| sampler.terminal_state(i)).collect();
    report(ops, policy, &terminals, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{assemble, causality_mask, TimeVaryingLinearSystem};
    use nalgebra::{dmatrix, dvector};

    fn two_step() -> SteeringProblem {
        SteeringProblem {
            system: TimeVaryingLinearSystem::time_invariant(
                dmatrix![1.0, 0.1; 0.0, 1.0],
                dmatrix![0.0; 0.1],
                Matrix::identity(2, 2),
                2,
            )
            .unwrap(),
            initial: Gaussian::new(dvector![1.0, -1.0], Matrix::identity(2, 2)),
            noise_cov: Matrix::identity(2, 2) * 0.1,
            desired: Gaussian::new(dvector![0.0, 0.0], Matrix::identity(2, 2)),
            lambda: 1.0,
        }
    }

    #[test]
    fn zero_gain_maps_to_zero() {
        let hu = dmatrix![0.0; 1.0];
        assert_eq!(theta_to_k(&dmatrix![0.0, 0.0], &hu).unwrap(), dmatrix![0.0, 0.0]);
        assert_eq!(k_to_theta(&dmatrix![0.0, 0.0], &hu).unwrap(), dmatrix![0.0, 0.0]);
    }

    #[test]
    fn scalar_one_step_hand_value() {
        // N = 1, H_u = [0; b], Θ = [θ, 0]: ΘH_u = 0 so K = Θ.
        let hu = dmatrix![0.0; 2.0];
        let theta = dmatrix![0.3, 0.0];
        assert_eq!(theta_to_k(&theta, &hu).unwrap(), theta);
        assert_eq!(k_to_theta(&theta, &hu).unwrap(), theta);
    }

    #[test]
    fn scalar_two_step_hand_value() {
        // N = 2 scalar, a = b = 1: H_u = [[0,0],[1,0],[1,1]].
        // Θ = [[p,0,0],[q,r,0]] gives ΘH_u = [[0,0],[r,0]] and
        // K = [[p,0,0],[q − r p, r, 0]].
        let hu = dmatrix![0.0, 0.0; 1.0, 0.0; 1.0, 1.0];
        let (p, q, r) = (0.5, -0.25, 2.0);
        let theta = dmatrix![p, 0.0, 0.0; q, r, 0.0];
        let k = theta_to_k(&theta, &hu).unwrap();
        let expected = dmatrix![p, 0.0, 0.0; q - r * p, r, 0.0];
        assert!((k - expected).amax() < 1e-15);
    }

    #[test]
    fn transform_rejects_bad_shapes() {
        let hu = dmatrix![0.0; 1.0];
        assert!(theta_to_k(&dmatrix![1.0, 2.0, 3.0], &hu).is_err());
    }

    #[test]
    fn aggregate_needs_two_samples() {
        assert!(matches!(
            aggregate(&[dvector![1.0]], 1),
            Err(Error::InsufficientSamples { samples: 1 })
        ));
        let (m, c) = aggregate(&[dvector![1.0], dvector![3.0]], 1).unwrap();
        assert_eq!(m, dvector![2.0]);
        assert_eq!(c, dmatrix![2.0]);
    }

    #[test]
    fn same_seed_same_report() {
        let p = two_step();
        let ops = assemble(&p).unwrap();
        let policy = Policy::zero(ops.dims());
        let a = rollout(&p, &ops, &policy, 500, 9).unwrap();
        let b = rollout(&p, &ops, &policy, 500, 9).unwrap();
        let c = rollout(&p, &ops, &policy, 500, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.empirical_mean, c.empirical_mean);
    }

    #[test]
    fn vanishing_noise_gives_mean_trajectory() {
        let mut p = two_step();
        p.initial.cov = Matrix::identity(2, 2) * 1e-12;
        p.noise_cov = Matrix::identity(2, 2) * 1e-12;
        let ops = assemble(&p).unwrap();
        let mask = causality_mask(2, 1, 2);
        let policy = Policy::new(dvector![0.5, -2.0], Matrix::zeros(2, 6), &mask).unwrap();
        let r = rollout(&p, &ops, &policy, 50, 1).unwrap();
        let expected = ops.free_terminal_mean() + ops.fh() * &policy.u_ff;
        assert!((r.empirical_mean - expected).norm() < 1e-5);
    }
}
