//! Planar n-link pendulum chains with closed-form Euler-Lagrange terms.
//!
//! Each link `i` carries a point mass `m_i` at its far end and makes angle
//! `θ_i` with the downward vertical. Positions use image-style axes (x right,
//! y down), so gravity acts along +y and the chain hangs at `θ = 0`.
//!
//! The equations of motion are written as `M(q) q̈ = J(q, q̇) − C(q, q̇)`:
//! `J = −∂V/∂q` holds gravity, `C` holds the Coriolis/centrifugal terms.

mod synth;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use synth::{chain_joint_path, synth_pose_dataset, ChainEmbedding, SynthConfig, SynthSample};

/// State magnitude beyond which [`simulate`] reports a blow-up.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSystem {
    masses: Vec<f64>,
    lengths: Vec<f64>,
    gravity: f64,
}

impl AnalyticSystem {
    pub fn new(masses: Vec<f64>, lengths: Vec<f64>, gravity: f64) -> Result<Self> {
        if masses.is_empty() || masses.len() != lengths.len() {
            return Err(Error::Value(format!(
                "need matching nonempty masses and lengths, got {} and {}",
                masses.len(),
                lengths.len()
            )));
        }
        if masses.iter().chain(&lengths).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Value("masses and lengths must be positive".into()));
        }
        if !gravity.is_finite() {
            return Err(Error::Value("gravity must be finite".into()));
        }
        Ok(Self {
            masses,
            lengths,
            gravity,
        })
    }

    pub fn uniform(n_links: usize, mass: f64, length: f64, gravity: f64) -> Result<Self> {
        Self::new(vec![mass; n_links], vec![length; n_links], gravity)
    }

    pub fn n_links(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// Mass carried at or beyond link `k`.
    fn tail_mass(&self, k: usize) -> f64 {
        self.masses[k..].iter().sum()
    }

    /// Cartesian positions of the link end points (the pivot is the origin).
    pub fn link_endpoints(&self, q: &[f64]) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(q.len());
        let (mut x, mut y) = (0.0, 0.0);
        for (l, th) in self.lengths.iter().zip(q) {
            x += l * th.sin();
            y += l * th.cos();
            out.push([x, y]);
        }
        out
    }

    pub fn kinetic_energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        let m = self.mass_matrix(q);
        let v = DVector::from_column_slice(qdot);
        0.5 * v.dot(&(&m * &v))
    }

    /// Gravitational potential with y pointing down.
    pub fn potential_energy(&self, q: &[f64]) -> f64 {
        self.link_endpoints(q)
            .iter()
            .zip(&self.masses)
            .map(|(p, m)| -m * self.gravity * p[1])
            .sum()
    }

    pub fn total_energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        self.kinetic_energy(q, qdot) + self.potential_energy(q)
    }

    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.n_links();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            self.tail_mass(b) * self.lengths[a] * self.lengths[b] * (q[a] - q[b]).cos()
        })
    }
}

/// `M(q)`, `J(q, q̇)` and `C(q, q̇)` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianTerms {
    pub mass_matrix: DMatrix<f64>,
    pub forces: DVector<f64>,
    pub coriolis: DVector<f64>,
}

impl LagrangianTerms {
    /// `J − C`.
    pub fn rhs(&self) -> DVector<f64> {
        &self.forces - &self.coriolis
    }
}

fn check_state(sys: &AnalyticSystem, v: &[f64], what: &str) {
    assert_eq!(v.len(), sys.n_links(), "{what} has wrong dimension");
}

pub fn lagrangian_terms(sys: &AnalyticSystem, q: &[f64], qdot: &[f64]) -> LagrangianTerms {
    check_state(sys, q, "q");
    check_state(sys, qdot, "qdot");
    let n = sys.n_links();
    let mass_matrix = sys.mass_matrix(q);
    let forces = DVector::from_fn(n, |i, _| -sys.gravity * sys.lengths[i] * q[i].sin() * sys.tail_mass(i));
    let coriolis = DVector::from_fn(n, |i, _| {
        (0..n)
            .map(|j| {
                sys.tail_mass(i.max(j)) * sys.lengths[i] * sys.lengths[j] * (q[i] - q[j]).sin() * qdot[j] * qdot[j]
            })
            .sum()
    });
    LagrangianTerms {
        mass_matrix,
        forces,
        coriolis,
    }
}

/// Solves `M q̈ = J − C` for the accelerations.
pub fn solve_acceleration(sys: &AnalyticSystem, q: &[f64], qdot: &[f64]) -> Vec<f64> {
    let terms = lagrangian_terms(sys, q, qdot);
    let chol = terms
        .mass_matrix
        .clone()
        .cholesky()
        .expect("pendulum mass matrix is positive definite");
    chol.solve(&terms.rhs()).as_slice().to_vec()
}

/// Max-norm of `M(q) q̈ − (J − C)`.
pub fn verify_el_identity(sys: &AnalyticSystem, q: &[f64], qdot: &[f64], qddot: &[f64]) -> f64 {
    check_state(sys, qddot, "qddot");
    let terms = lagrangian_terms(sys, q, qdot);
    let lhs = &terms.mass_matrix * DVector::from_column_slice(qddot);
    (lhs - terms.rhs()).amax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qdot: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn derivative(sys: &AnalyticSystem, q: &[f64], qdot: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (qdot.to_vec(), solve_acceleration(sys, q, qdot))
}

fn axpy(base: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    base.iter().zip(d).map(|(b, x)| b + h * x).collect()
}

/// Classical fourth-order Runge-Kutta integration of the equations of
/// motion. The trajectory holds `steps + 1` samples starting at `t = 0`.
pub fn simulate(sys: &AnalyticSystem, q0: &[f64], qdot0: &[f64], dt: f64, steps: usize) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Value(format!("dt must be positive, got {dt}")));
    }
    if q0.len() != sys.n_links() || qdot0.len() != sys.n_links() {
        return Err(Error::Dim(format!("initial state must have {} entries", sys.n_links())));
    }
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        qdot: Vec::with_capacity(steps + 1),
    };
    let mut q = q0.to_vec();
    let mut v = qdot0.to_vec();
    traj.times.push(0.0);
    traj.q.push(q.clone());
    traj.qdot.push(v.clone());
    for step in 1..=steps {
        let (k1q, k1v) = derivative(sys, &q, &v);
        let (k2q, k2v) = derivative(sys, &axpy(&q, dt / 2.0, &k1q), &axpy(&v, dt / 2.0, &k1v));
        let (k3q, k3v) = derivative(sys, &axpy(&q, dt / 2.0, &k2q), &axpy(&v, dt / 2.0, &k2v));
        let (k4q, k4v) = derivative(sys, &axpy(&q, dt, &k3q), &axpy(&v, dt, &k3v));
        for i in 0..q.len() {
            q[i] += dt / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            v[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        if q.iter().chain(&v).any(|x| !x.is_finite() || x.abs() > BLOWUP_LIMIT) {
            return Err(Error::Blowup { step });
        }
        traj.times.push(step as f64 * dt);
        traj.q.push(q.clone());
        traj.qdot.push(v.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_state(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let q = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (q, v)
    }

    fn random_system(rng: &mut impl Rng, n: usize) -> AnalyticSystem {
        AnalyticSystem::new(
            (0..n).map(|_| rng.gen_range(0.3..2.0)).collect(),
            (0..n).map(|_| rng.gen_range(0.2..1.5)).collect(),
            9.81,
        )
        .unwrap()
    }

    #[test]
    fn horizontal_single_pendulum() {
        let sys = AnalyticSystem::uniform(1, 1.0, 1.0, 9.8).unwrap();
        let terms = lagrangian_terms(&sys, &[FRAC_PI_2], &[0.0]);
        assert!((terms.mass_matrix[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((terms.rhs()[0] + 9.8).abs() < 1e-12);
        let acc = solve_acceleration(&sys, &[FRAC_PI_2], &[0.0]);
        assert!((acc[0] + 9.8).abs() < 1e-12);
    }

    #[test]
    fn hanging_equilibrium_has_zero_rhs() {
        for n in 1..=4 {
            let sys = AnalyticSystem::uniform(n, 1.3, 0.7, 9.81).unwrap();
            let terms = lagrangian_terms(&sys, &vec![0.0; n], &vec![0.0; n]);
            assert!(terms.rhs().amax() == 0.0);
            assert_eq!(
                verify_el_identity(&sys, &vec![0.0; n], &vec![0.0; n], &vec![0.0; n]),
                0.0
            );
        }
    }

    #[test]
    fn mass_matrix_is_spd_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=4 {
            let sys = random_system(&mut rng, n);
            for _ in 0..1000 {
                let (q, _) = random_state(&mut rng, n);
                let m = sys.mass_matrix(&q);
                assert_eq!(m, m.transpose());
                let min = m.clone().symmetric_eigen().eigenvalues.min();
                assert!(min > 0.0, "n = {n}, min eigenvalue {min}");
            }
        }
    }

    /// Terms rebuilt from the Lagrangian `½ q̇ᵀ M q̇ − V` with numerical
    /// derivatives: `J = −∂V/∂q`, and
    /// `C_i = Σ_jk (∂M_ij/∂q_k − ½ ∂M_jk/∂q_i) q̇_j q̇_k`.
    fn numeric_terms(sys: &AnalyticSystem, q: &[f64], qdot: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let n = q.len();
        let h = 1e-6;
        let shifted = |k: usize, d: f64| {
            let mut p = q.to_vec();
            p[k] += d;
            p
        };
        let forces = DVector::from_fn(n, |i, _| {
            -(sys.potential_energy(&shifted(i, h)) - sys.potential_energy(&shifted(i, -h))) / (2.0 * h)
        });
        let dm: Vec<DMatrix<f64>> = (0..n)
            .map(|k| (sys.mass_matrix(&shifted(k, h)) - sys.mass_matrix(&shifted(k, -h))) / (2.0 * h))
            .collect();
        let coriolis = DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += (dm[k][(i, j)] - 0.5 * dm[i][(j, k)]) * qdot[j] * qdot[k];
                }
            }
            s
        });
        (forces, coriolis)
    }

    #[test]
    fn closed_form_terms_match_lagrangian_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=4 {
            let sys = random_system(&mut rng, n);
            for _ in 0..50 {
                let (q, v) = random_state(&mut rng, n);
                let terms = lagrangian_terms(&sys, &q, &v);
                let (jf, cf) = numeric_terms(&sys, &q, &v);
                assert!((&terms.forces - jf).amax() < 1e-7);
                assert!((&terms.coriolis - cf).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn solved_acceleration_satisfies_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for n in 1..=4 {
            let sys = random_system(&mut rng, n);
            let (q, v) = random_state(&mut rng, n);
            let a = solve_acceleration(&sys, &q, &v);
            assert!(verify_el_identity(&sys, &q, &v, &a) < 1e-10);
        }
    }

    #[test]
    fn perturbed_acceleration_residual_is_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..=4 {
            let sys = random_system(&mut rng, n);
            let (q, v) = random_state(&mut rng, n);
            let mut a = solve_acceleration(&sys, &q, &v);
            let k = rng.gen_range(0..n);
            a[k] += 1.0;
            let min_eig = sys.mass_matrix(&q).symmetric_eigen().eigenvalues.min();
            // ‖M e_k‖∞ ≥ M_kk ≥ λ_min
            assert!(verify_el_identity(&sys, &q, &v, &a) >= min_eig - 1e-12);
        }
    }

    #[test]
    fn free_rotation_without_gravity() {
        let sys = AnalyticSystem::uniform(1, 1.0, 1.0, 0.0).unwrap();
        let traj = simulate(&sys, &[0.3], &[1.0], 0.01, 500).unwrap();
        for (t, q) in traj.times.iter().zip(&traj.q) {
            assert!((q[0] - (0.3 + t)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_pendulum_conserves_energy() {
        let sys = AnalyticSystem::uniform(1, 1.0, 1.0, 9.81).unwrap();
        let traj = simulate(&sys, &[1.0], &[0.0], 1e-3, 10_000).unwrap();
        let e0 = sys.total_energy(&traj.q[0], &traj.qdot[0]);
        let drift = traj
            .q
            .iter()
            .zip(&traj.qdot)
            .map(|(q, v)| ((sys.total_energy(q, v) - e0) / e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn runge_kutta_is_fourth_order() {
        let sys = AnalyticSystem::new(vec![1.0, 0.8], vec![1.0, 0.7], 9.81).unwrap();
        let (q0, v0) = ([1.2, -0.4], [0.0, 0.5]);
        let horizon = 1.0;
        let end = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            simulate(&sys, &q0, &v0, dt, steps).unwrap().q[steps].clone()
        };
        let dt = 0.01;
        let reference = end(dt / 8.0);
        let err = |q: Vec<f64>| q.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ratio = err(end(dt)) / err(end(dt / 2.0));
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn simulator_states_satisfy_identity_with_differenced_acceleration() {
        for n in 1..=3 {
            let sys = AnalyticSystem::uniform(n, 1.0, 0.5, 9.81).unwrap();
            let dt = 1e-3;
            let traj = simulate(&sys, &vec![0.8; n], &vec![0.2; n], dt, 400).unwrap();
            for k in (1..traj.len() - 1).step_by(37) {
                let qdd: Vec<f64> = (0..n)
                    .map(|i| (traj.q[k + 1][i] - 2.0 * traj.q[k][i] + traj.q[k - 1][i]) / (dt * dt))
                    .collect();
                assert!(verify_el_identity(&sys, &traj.q[k], &traj.qdot[k], &qdd) < 1e-4);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(AnalyticSystem::new(vec![], vec![], 9.8).is_err());
        assert!(AnalyticSystem::new(vec![1.0], vec![-1.0], 9.8).is_err());
        let sys = AnalyticSystem::uniform(2, 1.0, 1.0, 9.8).unwrap();
        assert!(simulate(&sys, &[0.0, 0.0], &[0.0, 0.0], 0.0, 3).is_err());
        assert!(simulate(&sys, &[0.0], &[0.0], 0.1, 3).is_err());
    }

    #[test]
    fn runaway_state_reports_blowup() {
        // huge gravity on a tiny pendulum drives angular velocity past the limit
        let sys = AnalyticSystem::new(vec![1.0], vec![1e-9], 1e9).unwrap();
        let err = simulate(&sys, &[1.0], &[0.0], 0.5, 50).unwrap_err();
        assert!(matches!(err, Error::Blowup { .. }));
    }
}
