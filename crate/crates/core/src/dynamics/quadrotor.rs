use nalgebra::{DVector, Matrix3, Vector3};

use super::{rk4, SystemModel};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Index layout of the 12-dimensional quadrotor state.
pub struct QuadrotorState;

impl QuadrotorState {
    pub const POS: usize = 0;
    /// roll, pitch, yaw (Z-Y-X Euler angles)
    pub const ATT: usize = 3;
    /// world-frame linear velocity
    pub const VEL: usize = 6;
    /// body-frame angular rates
    pub const RATE: usize = 9;
}

/// Rigid-body quadrotor in plus configuration.
///
/// Rotor 0 sits on the body +x arm, rotor 1 on +y, rotor 2 on -x and rotor 3
/// on -y. Rotors 0 and 2 spin so that their drag torque is +z. Controls are
/// the four rotor thrusts in newtons, clamped to `[0, max_thrust]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrotor<T: Real> {
    pub mass: T,
    /// Center-to-rotor distance (m).
    pub arm_length: T,
    /// Diagonal body inertia (kg·m²).
    pub inertia: [T; 3],
    /// Yaw drag torque per newton of thrust (m).
    pub drag_coefficient: T,
    pub max_thrust: T,
    pub gravity: T,
    pub dt: T,
}

impl<T: Real> Default for Quadrotor<T> {
    fn default() -> Self {
        Self {
            mass: T::lit(0.5),
            arm_length: T::lit(0.1725),
            inertia: [T::lit(2.3e-3), T::lit(2.3e-3), T::lit(4.0e-3)],
            drag_coefficient: T::lit(0.01),
            max_thrust: T::lit(6.0),
            gravity: T::lit(9.81),
            dt: T::lit(0.01),
        }
    }
}

impl<T: Real> Quadrotor<T> {
    pub const STATE_DIM: usize = 12;
    pub const CONTROL_DIM: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let params = [
            ("mass", self.mass),
            ("arm length", self.arm_length),
            ("inertia xx", self.inertia[0]),
            ("inertia yy", self.inertia[1]),
            ("inertia zz", self.inertia[2]),
            ("max thrust", self.max_thrust),
            ("gravity", self.gravity),
            ("dt", self.dt),
        ];
        for (name, v) in params {
            if !(v > T::zero()) || !v.is_finite_value() {
                return Err(Error::InvalidInput(format!(
                    "quadrotor {name} must be positive"
                )));
            }
        }
        if !(self.drag_coefficient >= T::zero()) {
            return Err(Error::InvalidInput(
                "quadrotor drag coefficient must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Per-rotor thrust that balances gravity.
    pub fn hover_thrust(&self) -> T {
        self.mass * self.gravity / T::lit(4.0)
    }

    pub fn hover_control(&self) -> DVector<T> {
        DVector::from_element(Self::CONTROL_DIM, self.hover_thrust())
    }

    /// Body-to-world rotation `Rz(ψ) Ry(θ) Rx(φ)`.
    pub fn rotation(roll: T, pitch: T, yaw: T) -> Matrix3<T> {
        let (sr, cr) = (roll.sin(), roll.cos());
        let (sp, cp) = (pitch.sin(), pitch.cos());
        let (sy, cy) = (yaw.sin(), yaw.cos());
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let att = QuadrotorState::ATT;
        let (roll, pitch, yaw) = (x[att], x[att + 1], x[att + 2]);
        let vel = QuadrotorState::VEL;
        let w = QuadrotorState::RATE;
        let omega = Vector3::new(x[w], x[w + 1], x[w + 2]);

        let thrust: [T; 4] = std::array::from_fn(|i| u[i].max(T::zero()).min(self.max_thrust));
        let total = thrust[0] + thrust[1] + thrust[2] + thrust[3];
        let torque = Vector3::new(
            self.arm_length * (thrust[1] - thrust[3]),
            self.arm_length * (thrust[2] - thrust[0]),
            self.drag_coefficient * (thrust[0] - thrust[1] + thrust[2] - thrust[3]),
        );

        let (sr, cr) = (roll.sin(), roll.cos());
        let (tp, cp) = (pitch.tan(), pitch.cos());
        let euler_rates = Vector3::new(
            omega.x + sr * tp * omega.y + cr * tp * omega.z,
            cr * omega.y - sr * omega.z,
            (sr * omega.y + cr * omega.z) / cp,
        );

        let lift = Self::rotation(roll, pitch, yaw)
            * Vector3::new(T::zero(), T::zero(), total / self.mass);
        let accel = lift - Vector3::new(T::zero(), T::zero(), self.gravity);

        let inertia = Vector3::new(self.inertia[0], self.inertia[1], self.inertia[2]);
        let momentum = omega.component_mul(&inertia);
        let omega_dot = (torque - omega.cross(&momentum)).component_div(&inertia);

        let mut dx = DVector::zeros(Self::STATE_DIM);
        for i in 0..3 {
            dx[QuadrotorState::POS + i] = x[vel + i];
            dx[att + i] = euler_rates[i];
            dx[vel + i] = accel[i];
            dx[w + i] = omega_dot[i];
        }
        dx
    }
}

impl<T: Real> SystemModel<T> for Quadrotor<T> {
    fn state_dim(&self) -> usize {
        Self::STATE_DIM
    }

    fn control_dim(&self) -> usize {
        Self::CONTROL_DIM
    }

    fn dt(&self) -> T {
        self.dt
    }

    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        rk4(x, self.dt, |s| self.derivative(s, u))
    }
}
