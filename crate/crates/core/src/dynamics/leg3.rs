use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dims, DynamicsError, DynamicsEval, JointState, PhysicalPlant, RobotModel};

/// Three-link balance leg parameters.
///
/// Geometry: joint 1 yaws about the vertical axis (a base arm of length
/// `lengths[0]`, gravity-free); joints 2 and 3 share horizontal axes
/// aligned with the arm direction, so links 2 and 3 swing in the vertical
/// plane that rotates with the yaw. `q2` and `q3` are absolute link angles
/// measured from the upright vertical. Links 1 and 2 are actuated, link 3
/// is the unactuated balance link. Hub terms are reflected rotor inertias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Leg3Params {
    /// Masses (kg): base arm, link 2, link 3 (uniform rods).
    pub masses: [f64; 3],
    /// Lengths (m): arm radius, link 2, link 3.
    pub lengths: [f64; 3],
    /// Reflected actuator/hub inertia per joint (kg·m²).
    pub hub_inertias: [f64; 3],
    /// Counterweight on link 2, mounted opposite the link at
    /// `counterweight_arm` from the joint-2 axis. Nearly cancels the
    /// static gravity moment of the link-2 assembly.
    pub counterweight_mass: f64,
    pub counterweight_arm: f64,
    /// Viscous friction per joint (N·m·s/rad).
    pub friction: [f64; 3],
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl Default for Leg3Params {
    fn default() -> Self {
        Self {
            masses: [0.5, 0.3, 0.3],
            lengths: [0.25, 0.4, 0.35],
            hub_inertias: [0.06, 0.12, 0.35],
            counterweight_mass: 0.6,
            counterweight_arm: 0.28,
            friction: [0.01, 0.01, 0.01],
            gravity: 9.81,
        }
    }
}

impl Leg3Params {
    pub fn frictionless(mut self) -> Self {
        self.friction = [0.0; 3];
        self
    }

    fn l2(&self) -> f64 {
        self.lengths[1] / 2.0
    }

    fn l3(&self) -> f64 {
        self.lengths[2] / 2.0
    }

    /// First moment of the link-2 assembly (link 2 rod, link 3's weight at
    /// the tip, counterweight behind the pivot).
    fn mu2(&self) -> f64 {
        self.masses[1] * self.l2() + self.masses[2] * self.lengths[1]
            - self.counterweight_mass * self.counterweight_arm
    }

    /// Pivot inertia of the link-2 assembly.
    fn a2(&self) -> f64 {
        let rod = self.masses[1] * self.lengths[1] * self.lengths[1] / 3.0;
        rod + self.masses[2] * self.lengths[1] * self.lengths[1]
            + self.counterweight_mass * self.counterweight_arm * self.counterweight_arm
    }

    /// Pivot inertia of link 3.
    fn a3(&self) -> f64 {
        self.masses[2] * self.lengths[2] * self.lengths[2] / 3.0
    }

    /// Yaw inertia of the base arm assembly.
    fn j1(&self) -> f64 {
        self.hub_inertias[0]
            + self.masses[0] * self.lengths[0] * self.lengths[0] / 3.0
            + (self.masses[1] + self.masses[2] + self.counterweight_mass)
                * self.lengths[0]
                * self.lengths[0]
    }

    /// Yaw-to-link-2 coupling coefficient (first moment times arm radius).
    fn alpha12(&self) -> f64 {
        self.mu2() * self.lengths[0]
    }

    /// Yaw-to-link-3 coupling coefficient.
    fn alpha13(&self) -> f64 {
        self.masses[2] * self.l3() * self.lengths[0]
    }

    /// Link-2-to-link-3 coupling coefficient.
    fn beta(&self) -> f64 {
        self.masses[2] * self.l3() * self.lengths[1]
    }

    fn gamma2(&self) -> f64 {
        self.mu2() * self.gravity
    }

    fn gamma3(&self) -> f64 {
        self.masses[2] * self.l3() * self.gravity
    }
}

/// Three-link balance leg plant (n = 2, m = 1).
#[derive(Debug, Clone, Default)]
pub struct Leg3Plant {
    pub params: Leg3Params,
}

impl Leg3Plant {
    pub fn new(params: Leg3Params) -> Self {
        Self { params }
    }
}

impl RobotModel for Leg3Plant {
    fn dims(&self) -> Dims {
        Dims { n: 2, m: 1 }
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        let p = &self.params;
        let (s2, c2) = state.q[1].sin_cos();
        let (s3, c3) = state.q[2].sin_cos();
        let (s23, c23) = (state.q[1] - state.q[2]).sin_cos();
        let (w1, w2, w3) = (state.qdot[0], state.qdot[1], state.qdot[2]);

        let (a2, a3, beta) = (p.a2(), p.a3(), p.beta());
        let (al12, al13) = (p.alpha12(), p.alpha13());

        let d11 = p.j1() + a2 * s2 * s2 + a3 * s3 * s3 + 2.0 * beta * s2 * s3;
        let mut d = DMatrix::zeros(3, 3);
        d[(0, 0)] = d11;
        d[(1, 1)] = p.hub_inertias[1] + a2;
        d[(2, 2)] = p.hub_inertias[2] + a3;
        d[(0, 1)] = al12 * c2;
        d[(1, 0)] = d[(0, 1)];
        d[(0, 2)] = al13 * c3;
        d[(2, 0)] = d[(0, 2)];
        d[(1, 2)] = beta * c23;
        d[(2, 1)] = d[(1, 2)];

        // Christoffel terms of the yaw + planar-pair geometry.
        let p2 = c2 * (a2 * s2 + beta * s3);
        let p3 = c3 * (a3 * s3 + beta * s2);
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 0)] = p2 * w2 + p3 * w3;
        c[(0, 1)] = p2 * w1 - al12 * s2 * w2;
        c[(0, 2)] = p3 * w1 - al13 * s3 * w3;
        c[(1, 0)] = -p2 * w1;
        c[(1, 2)] = beta * s23 * w3;
        c[(2, 0)] = -p3 * w1;
        c[(2, 1)] = -beta * s23 * w2;
        for j in 0..3 {
            c[(j, j)] += p.friction[j];
        }

        let g = DVector::from_vec(vec![0.0, -p.gamma2() * s2, -p.gamma3() * s3]);
        Ok(DynamicsEval::from_parts(self.dims(), d, c, g, &state.qdot))
    }
}

impl PhysicalPlant for Leg3Plant {
    fn energy(&self, state: &JointState) -> f64 {
        let eval = self.eval(state).expect("state validated");
        let kinetic = 0.5 * (state.qdot.transpose() * &eval.d * &state.qdot)[(0, 0)];
        let potential =
            self.params.gamma2() * state.q[1].cos() + self.params.gamma3() * state.q[2].cos();
        kinetic + potential
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn gravity_vanishes_upright_and_yaw_is_gravity_free() {
        let plant = Leg3Plant::default();
        let eval = plant.eval(&JointState::zero(3)).unwrap();
        assert!(eval.g.norm() < 1e-15);
        let tilted = JointState::new(
            DVector::from_vec(vec![1.2, 0.4, -0.3]),
            DVector::zeros(3),
        )
        .unwrap();
        let eval = plant.eval(&tilted).unwrap();
        assert_eq!(eval.g[0], 0.0);
        assert!(eval.g[1] < 0.0); // positive tilt falls further
        assert!(eval.g[2] > 0.0);
    }

    #[test]
    fn coupling_row_structure_matches_surrogate() {
        // D_ua entries follow [alpha13 cos q3, beta cos(q2 - q3)].
        let plant = Leg3Plant::default();
        let q = DVector::from_vec(vec![0.7, 0.5, -0.2]);
        let state = JointState::new(q, DVector::zeros(3)).unwrap();
        let eval = plant.eval(&state).unwrap();
        let row = eval.d_ua();
        assert_relative_eq!(row[(0, 0)], plant.params.alpha13() * 0.2f64.cos() * 1.0, epsilon = 1e-12);
        let c23 = (0.5f64 + 0.2).cos();
        assert_relative_eq!(row[(0, 1)], plant.params.beta() * c23, epsilon = 1e-12);
        // Yaw angle never enters the inertia matrix.
        let mut q2 = state.q.clone();
        q2[0] = -2.0;
        let eval2 = plant
            .eval(&JointState::new(q2, DVector::zeros(3)).unwrap())
            .unwrap();
        assert!((eval.d - eval2.d).abs().max() < 1e-14);
    }

    #[test]
    fn energy_conserved_without_friction() {
        let plant = Leg3Plant::new(Leg3Params::default().frictionless());
        let mut state = JointState::new(
            DVector::from_vec(vec![0.0, 0.4, 0.2]),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        let e0 = plant.energy(&state);
        for _ in 0..4000 {
            state = crate::sim::rk4_step(&plant, &state, &DVector::zeros(2), 2.5e-4).unwrap();
        }
        let drift = (plant.energy(&state) - e0).abs() / e0.abs().max(1.0);
        assert!(drift < 1e-6, "energy drift {drift}");
    }
}
