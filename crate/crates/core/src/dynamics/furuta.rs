use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dims, DynamicsError, DynamicsEval, JointState, PhysicalPlant, RobotModel};

/// Rotary inverted pendulum parameters.
///
/// Coordinates: `q1` arm azimuth about the vertical axis (actuated), `q2`
/// pendulum angle measured from the upright vertical (unactuated). The
/// input is a joint torque on the arm. Viscous friction acts at both
/// joints; set the coefficients to zero for the conservative variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FurutaParams {
    /// Arm mass (kg), modeled as a uniform rod pivoting about one end.
    pub arm_mass: f64,
    /// Arm length from pivot to pendulum joint (m).
    pub arm_length: f64,
    /// Pendulum mass (kg), uniform rod.
    pub pend_mass: f64,
    /// Pendulum length (m); center of mass at half length.
    pub pend_length: f64,
    /// Motor rotor inertia reflected at the arm joint (kg·m²).
    pub rotor_inertia: f64,
    /// Viscous friction at [arm, pendulum] joints (N·m·s/rad).
    pub friction: [f64; 2],
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl Default for FurutaParams {
    fn default() -> Self {
        Self {
            arm_mass: 1.3,
            arm_length: 0.22,
            pend_mass: 0.6,
            pend_length: 0.3,
            rotor_inertia: 1e-4,
            friction: [2e-3, 2e-3],
            gravity: 9.81,
        }
    }
}

impl FurutaParams {
    pub fn frictionless(mut self) -> Self {
        self.friction = [0.0, 0.0];
        self
    }
}

/// Furuta pendulum plant (n = m = 1).
#[derive(Debug, Clone, Default)]
pub struct FurutaPlant {
    pub params: FurutaParams,
}

impl FurutaPlant {
    pub fn new(params: FurutaParams) -> Self {
        Self { params }
    }

    /// Arm inertia about its pivot plus the reflected rotor inertia.
    fn arm_inertia(&self) -> f64 {
        let p = &self.params;
        p.rotor_inertia + p.arm_mass * p.arm_length * p.arm_length / 3.0
    }

    /// Pendulum inertia about its own pivot.
    fn pend_inertia(&self) -> f64 {
        let p = &self.params;
        let l = p.pend_length / 2.0;
        p.pend_mass * p.pend_length * p.pend_length / 12.0 + p.pend_mass * l * l
    }

    /// Coupling coefficient `m_p * l_p * L_arm`.
    fn coupling(&self) -> f64 {
        let p = &self.params;
        p.pend_mass * (p.pend_length / 2.0) * p.arm_length
    }
}

impl RobotModel for FurutaPlant {
    fn dims(&self) -> Dims {
        Dims { n: 1, m: 1 }
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        let p = &self.params;
        let (s2, c2) = state.q[1].sin_cos();
        let (w1, w2) = (state.qdot[0], state.qdot[1]);

        let j1 = self.arm_inertia();
        let sigma = self.pend_inertia();
        let a = self.coupling();
        let ml = p.pend_mass * (p.pend_length / 2.0);

        let d = DMatrix::from_row_slice(
            2,
            2,
            &[
                j1 + p.pend_mass * p.arm_length * p.arm_length + sigma * s2 * s2,
                -a * c2,
                -a * c2,
                sigma,
            ],
        );
        let mut c = DMatrix::from_row_slice(
            2,
            2,
            &[
                sigma * s2 * c2 * w2,
                sigma * s2 * c2 * w1 + a * s2 * w2,
                -sigma * s2 * c2 * w1,
                0.0,
            ],
        );
        c[(0, 0)] += p.friction[0];
        c[(1, 1)] += p.friction[1];
        let g = DVector::from_vec(vec![0.0, -ml * p.gravity * s2]);
        Ok(DynamicsEval::from_parts(self.dims(), d, c, g, &state.qdot))
    }
}

impl PhysicalPlant for FurutaPlant {
    fn energy(&self, state: &JointState) -> f64 {
        let p = &self.params;
        let s2 = state.q[1].sin();
        let c2 = state.q[1].cos();
        let (w1, w2) = (state.qdot[0], state.qdot[1]);
        let j1 = self.arm_inertia();
        let sigma = self.pend_inertia();
        let a = self.coupling();
        let d11 = j1 + p.pend_mass * p.arm_length * p.arm_length + sigma * s2 * s2;
        let kinetic = 0.5 * d11 * w1 * w1 - a * c2 * w1 * w2 + 0.5 * sigma * w2 * w2;
        let potential = p.pend_mass * p.gravity * (p.pend_length / 2.0) * c2;
        kinetic + potential
    }
}
