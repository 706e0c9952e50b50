//! Discrete-time system models `x_{i+1} = f(x_i, u_i)`.
//!
//! Continuous models are advanced with a single classical RK4 step per `dt`.
//! Jacobians of the discrete map are taken by central finite differences so
//! every model shares one linearization path.

mod cartpole;
mod linear;
mod quadrotor;

pub use cartpole::CartPole;
pub use linear::LinearModel;
pub use quadrotor::{Quadrotor, QuadrotorState};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Jacobians of the discrete step map around a nominal point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStep<T: Real> {
    /// `∂f/∂x`, `n_x × n_x`
    pub a: DMatrix<T>,
    /// `∂f/∂u`, `n_x × n_u`
    pub b: DMatrix<T>,
}

pub trait SystemModel<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Seconds per discrete step.
    fn dt(&self) -> T;

    /// Raw discrete map. Callers should go through [`SystemModel::step`],
    /// which validates dimensions and finiteness first.
    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T>;

    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.check_point(x, u)?;
        Ok(self.propagate(x, u))
    }

    fn linearize(&self, x: &DVector<T>, u: &DVector<T>) -> Result<LinearizedStep<T>> {
        self.check_point(x, u)?;
        let (n_x, n_u) = (self.state_dim(), self.control_dim());
        let mut a = DMatrix::zeros(n_x, n_x);
        let mut b = DMatrix::zeros(n_x, n_u);
        let two = T::lit(2.0);

        let mut xp = x.clone();
        for j in 0..n_x {
            let h = fd_perturbation(x[j]);
            xp[j] = x[j] + h;
            let fp = self.propagate(&xp, u);
            xp[j] = x[j] - h;
            let fm = self.propagate(&xp, u);
            xp[j] = x[j];
            a.set_column(j, &((fp - fm) / (two * h)));
        }

        let mut up = u.clone();
        for j in 0..n_u {
            let h = fd_perturbation(u[j]);
            up[j] = u[j] + h;
            let fp = self.propagate(x, &up);
            up[j] = u[j] - h;
            let fm = self.propagate(x, &up);
            up[j] = u[j];
            b.set_column(j, &((fp - fm) / (two * h)));
        }

        if !a.iter().chain(b.iter()).all(|v| v.is_finite_value()) {
            return Err(Error::LinearizationFailure {
                state: x.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        Ok(LinearizedStep { a, b })
    }

    /// Validates `(x, u)` against the model dimensions.
    fn check_point(&self, x: &DVector<T>, u: &DVector<T>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        if !x.iter().chain(u.iter()).all(|v| v.is_finite_value()) {
            return Err(Error::InvalidInput("non-finite state or control".into()));
        }
        Ok(())
    }
}

impl<T: Real, M: SystemModel<T> + ?Sized> SystemModel<T> for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn dt(&self) -> T {
        (**self).dt()
    }
    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        (**self).propagate(x, u)
    }
    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        (**self).step(x, u)
    }
    fn linearize(&self, x: &DVector<T>, u: &DVector<T>) -> Result<LinearizedStep<T>> {
        (**self).linearize(x, u)
    }
}

#[inline]
fn fd_perturbation<T: Real>(c: T) -> T {
    T::fd_step() * c.abs().max(T::one())
}

/// One classical fourth-order Runge-Kutta step of `ẋ = f(x)` over `dt`.
pub fn rk4<T, F>(x: &DVector<T>, dt: T, mut f: F) -> DVector<T>
where
    T: Real,
    F: FnMut(&DVector<T>) -> DVector<T>,
{
    let half = dt * T::lit(0.5);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * half));
    let k3 = f(&(x + &k2 * half));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (dt / T::lit(6.0))
}
