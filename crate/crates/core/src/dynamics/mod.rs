//! Rigid-body dynamics of the testbed plants and the closed-form nominal
//! models, all exposed through one evaluation contract.
//!
//! A robot with `n` actuated and `m` unactuated coordinates is described by
//! `D(q) q̈ + C(q, q̇) q̇ + G(q) = B u` with `B = [I_n; 0]`. Plants provide
//! ground truth for the simulator; nominal models are the deliberately
//! simple surrogates the learning-based controllers linearize against.

mod furuta;
mod leg3;
mod nominal;

pub use furuta::{FurutaParams, FurutaPlant};
pub use leg3::{Leg3Params, Leg3Plant};
pub use nominal::{ConstantNominal, LegNominal, Sn1Nominal, Sn2Nominal};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Degrees-of-freedom split: `n` actuated, `m` unactuated coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn total(&self) -> usize {
        self.n + self.m
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in joint state")]
    NonFinite,
    #[error("inertia matrix near singular (condition number {cond:.3e})")]
    SingularInertia { cond: f64 },
    #[error("invalid partition: {0}")]
    BadPartition(String),
}

/// Generalized coordinates, velocities and (optionally) accelerations.
///
/// Layout convention: the first `n` entries are the actuated coordinates
/// `q_a`, the last `m` the unactuated coordinates `q_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub qddot: Option<DVector<f64>>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Result<Self, DynamicsError> {
        let state = Self { q, qdot, qddot: None };
        state.validate()?;
        Ok(state)
    }

    pub fn with_accel(
        q: DVector<f64>,
        qdot: DVector<f64>,
        qddot: DVector<f64>,
    ) -> Result<Self, DynamicsError> {
        let state = Self { q, qdot, qddot: Some(qddot) };
        state.validate()?;
        Ok(state)
    }

    pub fn zero(dof: usize) -> Self {
        Self {
            q: DVector::zeros(dof),
            qdot: DVector::zeros(dof),
            qddot: None,
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if self.qdot.len() != self.q.len() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.q.len(),
                got: self.qdot.len(),
            });
        }
        if let Some(a) = &self.qddot {
            if a.len() != self.q.len() {
                return Err(DynamicsError::DimensionMismatch {
                    expected: self.q.len(),
                    got: a.len(),
                });
            }
        }
        let finite = self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
            && self
                .qddot
                .as_ref()
                .map_or(true, |a| a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }
}

/// Assignment of actuated coordinates to balance duty.
///
/// `au_indices` are the `m` actuated coordinates (0-based, within `0..n`)
/// whose tracking is sacrificed to stabilize the unactuated subsystem; the
/// remaining `n - m` form `aa_indices`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub n: usize,
    pub m: usize,
    pub au_indices: Vec<usize>,
    pub aa_indices: Vec<usize>,
}

impl Partition {
    pub fn new(n: usize, m: usize, au_indices: Vec<usize>) -> Result<Self, DynamicsError> {
        if m < 1 || n < m {
            return Err(DynamicsError::BadPartition(format!(
                "need n >= m >= 1, got n={n}, m={m}"
            )));
        }
        if au_indices.len() != m {
            return Err(DynamicsError::BadPartition(format!(
                "au_indices must pick exactly m={m} coordinates, got {}",
                au_indices.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &au_indices {
            if i >= n {
                return Err(DynamicsError::BadPartition(format!(
                    "au index {i} out of range 0..{n}"
                )));
            }
            if seen[i] {
                return Err(DynamicsError::BadPartition(format!("duplicate au index {i}")));
            }
            seen[i] = true;
        }
        let aa_indices = (0..n).filter(|i| !seen[*i]).collect();
        Ok(Self { n, m, au_indices, aa_indices })
    }

    /// Trivial partition for `n == m` systems (every actuated coordinate
    /// carries balance duty).
    pub fn degenerate(n: usize) -> Self {
        Self {
            n,
            m: n,
            au_indices: (0..n).collect(),
            aa_indices: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { n: self.n, m: self.m }
    }
}

/// Dynamics matrices evaluated at one state.
///
/// `h = C q̇ + G` is kept as a convenience field; block accessors slice by
/// the actuated/unactuated layout.
#[derive(Debug, Clone)]
pub struct DynamicsEval {
    pub dims: Dims,
    pub d: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl DynamicsEval {
    pub fn from_parts(dims: Dims, d: DMatrix<f64>, c: DMatrix<f64>, g: DVector<f64>, qdot: &DVector<f64>) -> Self {
        let h = &c * qdot + &g;
        let b = input_matrix(dims);
        Self { dims, d, c, g, h, b }
    }

    pub fn d_aa(&self) -> DMatrix<f64> {
        self.d.view((0, 0), (self.dims.n, self.dims.n)).into_owned()
    }

    pub fn d_au(&self) -> DMatrix<f64> {
        self.d.view((0, self.dims.n), (self.dims.n, self.dims.m)).into_owned()
    }

    pub fn d_ua(&self) -> DMatrix<f64> {
        self.d.view((self.dims.n, 0), (self.dims.m, self.dims.n)).into_owned()
    }

    pub fn d_uu(&self) -> DMatrix<f64> {
        self.d
            .view((self.dims.n, self.dims.n), (self.dims.m, self.dims.m))
            .into_owned()
    }

    pub fn h_a(&self) -> DVector<f64> {
        self.h.rows(0, self.dims.n).into_owned()
    }

    pub fn h_u(&self) -> DVector<f64> {
        self.h.rows(self.dims.n, self.dims.m).into_owned()
    }
}

/// `B = [I_n; 0]`.
pub fn input_matrix(dims: Dims) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dims.total(), dims.n);
    for i in 0..dims.n {
        b[(i, i)] = 1.0;
    }
    b
}

/// Evaluation contract shared by physical plants and nominal models.
pub trait RobotModel {
    fn dims(&self) -> Dims;

    /// Evaluate `D`, `C`, `G` (and derived `H`, `B`) at a state.
    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError>;

    fn check_state(&self, state: &JointState) -> Result<(), DynamicsError> {
        state.validate()?;
        let expected = self.dims().total();
        if state.dof() != expected {
            return Err(DynamicsError::DimensionMismatch { expected, got: state.dof() });
        }
        Ok(())
    }
}

/// Physical plants additionally expose mechanical energy (used by the
/// integration-accuracy checks) and a friction toggle.
pub trait PhysicalPlant: RobotModel {
    /// Kinetic + potential energy at a state.
    fn energy(&self, state: &JointState) -> f64;
}

/// Condition number estimate via singular values.
pub fn condition_number(mat: &DMatrix<f64>) -> f64 {
    let svd = mat.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Forward dynamics: solve `D q̈ = B u - H` for `q̈`.
pub fn forward_accel(eval: &DynamicsEval, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    if u.len() != eval.dims.n {
        return Err(DynamicsError::DimensionMismatch { expected: eval.dims.n, got: u.len() });
    }
    let cond = condition_number(&eval.d);
    if !(cond < 1e12) {
        return Err(DynamicsError::SingularInertia { cond });
    }
    let rhs = &eval.b * u - &eval.h;
    eval.d
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(DynamicsError::SingularInertia { cond })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, dof: usize, q_range: f64, v_range: f64) -> JointState {
        let q = DVector::from_fn(dof, |_, _| rng.gen_range(-q_range..q_range));
        let qdot = DVector::from_fn(dof, |_, _| rng.gen_range(-v_range..v_range));
        JointState::new(q, qdot).unwrap()
    }

    #[test]
    fn partition_rejects_bad_indices() {
        assert!(Partition::new(2, 1, vec![2]).is_err());
        assert!(Partition::new(2, 1, vec![0, 1]).is_err());
        assert!(Partition::new(1, 2, vec![0, 0]).is_err());
        let p = Partition::new(2, 1, vec![1]).unwrap();
        assert_eq!(p.aa_indices, vec![0]);
    }

    #[test]
    fn joint_state_validation() {
        assert!(JointState::new(DVector::zeros(2), DVector::zeros(3)).is_err());
        let mut q = DVector::zeros(2);
        q[0] = f64::NAN;
        assert!(JointState::new(q, DVector::zeros(2)).is_err());
    }

    #[test]
    fn furuta_equilibrium_rest_has_zero_accel() {
        let plant = FurutaPlant::default();
        let state = JointState::zero(2);
        let eval = plant.eval(&state).unwrap();
        assert_relative_eq!(eval.g.norm(), 0.0, epsilon = 1e-14);
        let acc = forward_accel(&eval, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(acc.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn leg_inertia_symmetric_positive_definite() {
        let plant = Leg3Plant::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let state = random_state(&mut rng, 3, std::f64::consts::PI, 5.0);
            let eval = plant.eval(&state).unwrap();
            let sym_defect = (&eval.d - eval.d.transpose()).abs().max();
            assert!(sym_defect < 1e-10, "symmetry defect {sym_defect}");
            let eigs = eval.d.clone().symmetric_eigen().eigenvalues;
            assert!(eigs.min() > 0.0, "non-PD inertia, min eig {}", eigs.min());
        }
    }

    #[test]
    fn leg_zero_velocity_h_equals_g() {
        let plant = Leg3Plant::default();
        let state = JointState::zero(3);
        let eval = plant.eval(&state).unwrap();
        assert_relative_eq!((&eval.c * &state.qdot).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!((&eval.h - &eval.g).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn h_consistency_and_block_reassembly() {
        let plant = Leg3Plant::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let state = random_state(&mut rng, 3, 2.0, 4.0);
            let eval = plant.eval(&state).unwrap();
            let h = &eval.c * &state.qdot + &eval.g;
            assert!((h - &eval.h).abs().max() < 1e-12);

            let dims = eval.dims;
            let mut rebuilt = DMatrix::zeros(dims.total(), dims.total());
            rebuilt.view_mut((0, 0), (dims.n, dims.n)).copy_from(&eval.d_aa());
            rebuilt.view_mut((0, dims.n), (dims.n, dims.m)).copy_from(&eval.d_au());
            rebuilt.view_mut((dims.n, 0), (dims.m, dims.n)).copy_from(&eval.d_ua());
            rebuilt
                .view_mut((dims.n, dims.n), (dims.m, dims.m))
                .copy_from(&eval.d_uu());
            assert_eq!(rebuilt, eval.d);
        }
    }

    #[test]
    fn sn2_forward_accel_matches_hand_inversion() {
        // D = (1/100)[[2,1],[1,2]], H = 0, u = 1:
        // D^{-1} = (100/3)[[2,-1],[-1,2]], accel = (100/3)[2,-1].
        let nominal = Sn2Nominal;
        let state = JointState::zero(2);
        let eval = nominal.eval(&state).unwrap();
        let acc = forward_accel(&eval, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(acc[0], 200.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(acc[1], -100.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn forward_accel_round_trip_residual() {
        let plant = FurutaPlant::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let state = random_state(&mut rng, 2, 3.0, 8.0);
            let u = DVector::from_fn(1, |_, _| rng.gen_range(-5.0..5.0));
            let eval = plant.eval(&state).unwrap();
            let acc = forward_accel(&eval, &u).unwrap();
            let residual = (&eval.d * acc + &eval.h - &eval.b * &u).norm();
            assert!(residual < 1e-9, "residual {residual}");
        }
    }

    #[test]
    fn sn1_matches_closed_form_at_zero() {
        let state = JointState::zero(2);
        let eval = Sn1Nominal.eval(&state).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.05, -0.02, -0.02, 0.02]);
        assert!((eval.d - expected).abs().max() < 1e-15);
        assert!(eval.h.norm() < 1e-15);
    }

    #[test]
    fn leg_nominal_matches_closed_form_at_zero() {
        let state = JointState::zero(3);
        let eval = LegNominal.eval(&state).unwrap();
        let row = eval.d_ua();
        assert_relative_eq!(row[(0, 0)], 0.025, epsilon = 1e-15);
        assert_relative_eq!(row[(0, 1)], 0.05, epsilon = 1e-15);
        assert_relative_eq!(eval.h[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(eval.h[1], 0.2, epsilon = 1e-15);
        assert_relative_eq!(eval.h[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn near_singular_inertia_rejected() {
        let dims = Dims { n: 1, m: 1 };
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-16]);
        let eval = DynamicsEval {
            dims,
            d,
            c: DMatrix::zeros(2, 2),
            g: DVector::zeros(2),
            h: DVector::zeros(2),
            b: input_matrix(dims),
        };
        match forward_accel(&eval, &DVector::zeros(1)) {
            Err(DynamicsError::SingularInertia { .. }) => {}
            other => panic!("expected singularity error, got {other:?}"),
        }
    }
}
