use nalgebra::DVector;

use super::{rk4, SystemModel};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cart-pole with a point-mass pole on a massless rod.
///
/// State `(x, θ, ẋ, θ̇)` with `θ = 0` upright; the single control is the
/// horizontal force on the cart in newtons.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole<T: Real> {
    /// Cart mass (kg).
    pub cart_mass: T,
    /// Pole mass (kg).
    pub pole_mass: T,
    /// Pole half-length (m).
    pub half_length: T,
    pub gravity: T,
    pub dt: T,
}

impl<T: Real> Default for CartPole<T> {
    fn default() -> Self {
        Self {
            cart_mass: T::lit(1.0),
            pole_mass: T::lit(0.1),
            half_length: T::lit(0.5),
            gravity: T::lit(9.81),
            dt: T::lit(0.01),
        }
    }
}

impl<T: Real> CartPole<T> {
    pub const STATE_DIM: usize = 4;
    pub const CONTROL_DIM: usize = 1;

    pub fn new(cart_mass: T, pole_mass: T, half_length: T, gravity: T, dt: T) -> Result<Self> {
        let model = Self {
            cart_mass,
            pole_mass,
            half_length,
            gravity,
            dt,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let params = [
            ("cart mass", self.cart_mass),
            ("pole mass", self.pole_mass),
            ("half length", self.half_length),
            ("gravity", self.gravity),
            ("dt", self.dt),
        ];
        for (name, v) in params {
            if !(v > T::zero()) || !v.is_finite_value() {
                return Err(Error::InvalidInput(format!(
                    "cart-pole {name} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let (theta, x_dot, theta_dot) = (x[1], x[2], x[3]);
        let force = u[0];
        let total = self.cart_mass + self.pole_mass;
        let ml = self.pole_mass * self.half_length;
        let (s, c) = (theta.sin(), theta.cos());

        let temp = (force + ml * theta_dot * theta_dot * s) / total;
        let denom = self.half_length * (T::lit(4.0 / 3.0) - self.pole_mass * c * c / total);
        let theta_acc = (self.gravity * s - c * temp) / denom;
        let x_acc = temp - ml * theta_acc * c / total;

        DVector::from_vec(vec![x_dot, theta_dot, x_acc, theta_acc])
    }
}

impl<T: Real> SystemModel<T> for CartPole<T> {
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
