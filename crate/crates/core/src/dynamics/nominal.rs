use nalgebra::{DMatrix, DVector};

use super::{Dims, DynamicsError, DynamicsEval, JointState, RobotModel};

fn assemble(dims: Dims, d: DMatrix<f64>, h: DVector<f64>, qdot: &DVector<f64>) -> DynamicsEval {
    // Nominal models carry their nonlinear terms directly in H, so C = 0
    // and G = H keeps the H = C qdot + G identity intact.
    DynamicsEval::from_parts(dims, d, DMatrix::zeros(h.len(), h.len()), h, qdot)
}

/// Time-varying nominal model for the rotary pendulum:
/// `D = (1/100) [[5, -2 c2], [-2 c2, 2]]`, `H = [0, -s2]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sn1Nominal;

impl RobotModel for Sn1Nominal {
    fn dims(&self) -> Dims {
        Dims { n: 1, m: 1 }
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        let (s2, c2) = state.q[1].sin_cos();
        let d = DMatrix::from_row_slice(2, 2, &[0.05, -0.02 * c2, -0.02 * c2, 0.02]);
        let h = DVector::from_vec(vec![0.0, -s2]);
        Ok(assemble(self.dims(), d, h, &state.qdot))
    }
}

/// Constant nominal model for the rotary pendulum:
/// `D = (1/100) [[2, 1], [1, 2]]`, `H = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sn2Nominal;

impl RobotModel for Sn2Nominal {
    fn dims(&self) -> Dims {
        Dims { n: 1, m: 1 }
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        let d = DMatrix::from_row_slice(2, 2, &[0.02, 0.01, 0.01, 0.02]);
        let h = DVector::zeros(2);
        Ok(assemble(self.dims(), d, h, &state.qdot))
    }
}

/// Default nominal model for the three-link balance leg.
#[derive(Debug, Clone, Copy, Default)]
pub struct LegNominal;

impl RobotModel for LegNominal {
    fn dims(&self) -> Dims {
        Dims { n: 2, m: 1 }
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        let c2 = state.q[1].cos();
        let c3 = state.q[2].cos();
        let c23 = (state.q[1] - state.q[2]).cos();
        let d = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.15, 0.025 * c2, 0.025 * c3, //
                0.025 * c2, 0.15, 0.05 * c23, //
                0.025 * c3, 0.05 * c23, 0.1,
            ],
        );
        let h = DVector::from_vec(vec![0.0, 0.2 * c2, 0.1 * state.q[2].sin()]);
        Ok(assemble(self.dims(), d, h, &state.qdot))
    }
}

/// State-independent nominal model built from user-supplied matrices.
#[derive(Debug, Clone)]
pub struct ConstantNominal {
    pub dims: Dims,
    pub d: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ConstantNominal {
    pub fn new(dims: Dims, d: DMatrix<f64>, h: DVector<f64>) -> Result<Self, DynamicsError> {
        let total = dims.total();
        if d.nrows() != total || d.ncols() != total {
            return Err(DynamicsError::DimensionMismatch { expected: total, got: d.nrows() });
        }
        if h.len() != total {
            return Err(DynamicsError::DimensionMismatch { expected: total, got: h.len() });
        }
        Ok(Self { dims, d, h })
    }
}

impl RobotModel for ConstantNominal {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn eval(&self, state: &JointState) -> Result<DynamicsEval, DynamicsError> {
        self.check_state(state)?;
        Ok(assemble(self.dims, self.d.clone(), self.h.clone(), &state.qdot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn sn1_at_tilt() {
        let q = DVector::from_vec(vec![0.0, 0.5]);
        let state = JointState::new(q, DVector::zeros(2)).unwrap();
        let eval = Sn1Nominal.eval(&state).unwrap();
        assert_relative_eq!(eval.d[(0, 1)], -0.02 * 0.5f64.cos(), epsilon = 1e-15);
        assert_relative_eq!(eval.h[1], -0.5f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn sn2_constant_everywhere() {
        let a = Sn2Nominal.eval(&JointState::zero(2)).unwrap();
        let q = DVector::from_vec(vec![1.0, -2.0]);
        let state = JointState::new(q, DVector::from_vec(vec![3.0, 4.0])).unwrap();
        let b = Sn2Nominal.eval(&state).unwrap();
        assert_eq!(a.d, b.d);
        assert_eq!(b.h.norm(), 0.0);
    }

    #[test]
    fn leg_nominal_row_at_offset() {
        let q = DVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_PI_3]);
        let state = JointState::new(q, DVector::zeros(3)).unwrap();
        let eval = LegNominal.eval(&state).unwrap();
        let row = eval.d_ua();
        assert_relative_eq!(row[(0, 0)], 0.0125, epsilon = 1e-12);
        assert_relative_eq!(row[(0, 1)], 0.025, epsilon = 1e-12);
    }
}
