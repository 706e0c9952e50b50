use nalgebra::{DMatrix, DVector};

use super::SystemModel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear time-invariant discrete model `x' = A x + B u`.
///
/// Mostly useful as a test plant: iLQR on it reduces to the finite-horizon
/// Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    dt: T,
}

impl<T: Real> LinearModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, dt: T) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidInput("A must be square and non-empty".into()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "B rows",
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        if dt <= T::zero() {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        Ok(Self { a, b, dt })
    }

    /// Exact zero-order-hold discretization of `p̈ = u`.
    pub fn double_integrator(dt: T) -> Self {
        let half = T::lit(0.5);
        let a = DMatrix::from_row_slice(2, 2, &[T::one(), dt, T::zero(), T::one()]);
        let b = DMatrix::from_row_slice(2, 1, &[half * dt * dt, dt]);
        Self::new(a, b, dt).expect("valid double integrator")
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
}

impl<T: Real> SystemModel<T> for LinearModel<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dt(&self) -> T {
        self.dt
    }

    fn propagate(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u
    }
}
