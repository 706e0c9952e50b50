//! Quadratic tracking cost and its (exact) local expansions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// State reference: a fixed set point or a per-step trajectory of `T + 1` states.
#[derive(Debug, Clone, PartialEq)]
pub enum StateReference<T: Real> {
    Constant(DVector<T>),
    Trajectory(Vec<DVector<T>>),
}

impl<T: Real> StateReference<T> {
    /// Reference at step `i`; trajectories hold their last entry past the end.
    pub fn at(&self, i: usize) -> &DVector<T> {
        match self {
            StateReference::Constant(x) => x,
            StateReference::Trajectory(xs) => &xs[i.min(xs.len() - 1)],
        }
    }
}

/// `l(x, u) = ½ (x − x_ref)ᵀ Q (x − x_ref) + ½ (u − u_ref)ᵀ R (u − u_ref)`,
/// terminal `l_N(x) = ½ (x − x_ref)ᵀ Q_f (x − x_ref)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
    qf: DMatrix<T>,
    x_ref: StateReference<T>,
    u_ref: DVector<T>,
}

/// Second-order expansion of the running cost around a point.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion<T: Real> {
    pub l_x: DVector<T>,
    pub l_u: DVector<T>,
    pub l_xx: DMatrix<T>,
    pub l_uu: DMatrix<T>,
    pub l_ux: DMatrix<T>,
}

impl<T: Real> CostModel<T> {
    pub fn new(
        q: DMatrix<T>,
        r: DMatrix<T>,
        qf: DMatrix<T>,
        x_ref: StateReference<T>,
        u_ref: DVector<T>,
    ) -> Result<Self> {
        let n_x = q.nrows();
        let n_u = r.nrows();
        check_square("Q", &q, n_x)?;
        check_square("Q_f", &qf, n_x)?;
        check_square("R", &r, n_u)?;
        if u_ref.len() != n_u {
            return Err(Error::DimensionMismatch {
                what: "u_ref",
                expected: n_u,
                got: u_ref.len(),
            });
        }
        match &x_ref {
            StateReference::Constant(x) => check_len("x_ref", x, n_x)?,
            StateReference::Trajectory(xs) => {
                if xs.is_empty() {
                    return Err(Error::InvalidInput("x_ref trajectory is empty".into()));
                }
                for x in xs {
                    check_len("x_ref", x, n_x)?;
                }
            }
        }
        check_psd("Q", &q, false)?;
        check_psd("Q_f", &qf, false)?;
        check_psd("R", &r, true)?;
        Ok(Self {
            q,
            r,
            qf,
            x_ref,
            u_ref,
        })
    }

    /// Diagonal weights, `Q_f = qf_scale · Q`, constant reference.
    pub fn diagonal(
        q: &[T],
        r: &[T],
        qf_scale: T,
        x_ref: DVector<T>,
        u_ref: DVector<T>,
    ) -> Result<Self> {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(q));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(r));
        let qf = &q * qf_scale;
        Self::new(q, r, qf, StateReference::Constant(x_ref), u_ref)
    }

    /// Cart-pole upright regulation: `Q = diag(1, 10, 0.1, 0.1)`, `R = 0.1`, `Q_f = 10 Q`.
    pub fn cartpole_default() -> Self {
        let q = [1.0, 10.0, 0.1, 0.1].map(T::lit);
        Self::diagonal(
            &q,
            &[T::lit(0.1)],
            T::lit(10.0),
            DVector::zeros(4),
            DVector::zeros(1),
        )
        .expect("valid default cost")
    }

    /// Quadrotor hover regulation around the origin with `u_ref` = hover thrust.
    pub fn quadrotor_default(hover_thrust: T) -> Self {
        let mut q = [T::lit(0.1); 12];
        q[..3].fill(T::lit(10.0));
        q[3..6].fill(T::one());
        Self::diagonal(
            &q,
            &[T::lit(0.1); 4],
            T::lit(10.0),
            DVector::zeros(12),
            DVector::from_element(4, hover_thrust),
        )
        .expect("valid default cost")
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn qf(&self) -> &DMatrix<T> {
        &self.qf
    }

    pub fn x_ref(&self, i: usize) -> &DVector<T> {
        self.x_ref.at(i)
    }

    pub fn u_ref(&self) -> &DVector<T> {
        &self.u_ref
    }

    /// Same weights scaled by `factor` (the optimal gains are invariant to this).
    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(
            &self.q * factor,
            &self.r * factor,
            &self.qf * factor,
            self.x_ref.clone(),
            self.u_ref.clone(),
        )
    }

    pub fn with_terminal_weight(&self, qf: DMatrix<T>) -> Result<Self> {
        Self::new(
            self.q.clone(),
            self.r.clone(),
            qf,
            self.x_ref.clone(),
            self.u_ref.clone(),
        )
    }

    pub fn running_cost(&self, x: &DVector<T>, u: &DVector<T>, i: usize) -> T {
        let dx = x - self.x_ref(i);
        let du = u - &self.u_ref;
        T::lit(0.5) * (dx.dot(&(&self.q * &dx)) + du.dot(&(&self.r * &du)))
    }

    pub fn terminal_cost(&self, x: &DVector<T>, n: usize) -> T {
        let dx = x - self.x_ref(n);
        T::lit(0.5) * dx.dot(&(&self.qf * &dx))
    }

    /// Total cost of a trajectory with `states.len() == controls.len() + 1`.
    pub fn trajectory_cost(&self, states: &[DVector<T>], controls: &[DVector<T>]) -> T {
        let n = controls.len();
        let running = controls
            .iter()
            .zip(states)
            .enumerate()
            .fold(T::zero(), |acc, (i, (u, x))| {
                acc + self.running_cost(x, u, i)
            });
        running + self.terminal_cost(&states[n], n)
    }

    pub fn quadratize(&self, x: &DVector<T>, u: &DVector<T>, i: usize) -> CostExpansion<T> {
        CostExpansion {
            l_x: &self.q * (x - self.x_ref(i)),
            l_u: &self.r * (u - &self.u_ref),
            l_xx: self.q.clone(),
            l_uu: self.r.clone(),
            l_ux: DMatrix::zeros(self.control_dim(), self.state_dim()),
        }
    }

    /// Gradient and Hessian of the terminal cost.
    pub fn terminal_expansion(&self, x: &DVector<T>, n: usize) -> (DVector<T>, DMatrix<T>) {
        (&self.qf * (x - self.x_ref(n)), self.qf.clone())
    }
}

fn check_square<T: Real>(name: &'static str, m: &DMatrix<T>, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput(format!("{name} is empty")));
    }
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: name,
            expected: n,
            got: if m.nrows() != n { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

fn check_len<T: Real>(name: &'static str, v: &DVector<T>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            what: name,
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_psd<T: Real>(name: &str, m: &DMatrix<T>, strict: bool) -> Result<()> {
    if !m.iter().all(|v| v.is_finite_value()) {
        return Err(Error::InvalidInput(format!(
            "{name} has non-finite entries"
        )));
    }
    let scale = m.amax().max(T::one());
    let tol = T::default_epsilon() * T::lit(100.0) * scale;
    if (m - m.transpose()).amax() > tol {
        return Err(Error::InvalidInput(format!("{name} is not symmetric")));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if strict && min_eig <= T::zero() {
        return Err(Error::InvalidInput(format!(
            "{name} is not positive definite"
        )));
    }
    if !strict && min_eig < -tol {
        return Err(Error::InvalidInput(format!(
            "{name} is not positive semidefinite"
        )));
    }
    Ok(())
}
