//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quattro_core::cost::CostModel;
use quattro_core::dynamics::{CartPole, LinearModel, Quadrotor, SystemModel};
use quattro_core::ilqr::{rollout, Trajectory};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn vector(&mut self, n: usize, lo: f64, hi: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.uniform(lo, hi))
    }

    /// Uniform direction scaled to a norm uniform in `(0, max_norm]`.
    pub fn small_step(&mut self, n: usize, max_norm: f64) -> DVector<f64> {
        let dir = self.vector(n, -1.0, 1.0);
        let norm = self.uniform(0.1, 1.0) * max_norm;
        dir.normalize() * norm
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Max elementwise relative error with an absolute floor of 1 on the scale.
pub fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    got.iter()
        .zip(want.iter())
        .map(|(g, w)| (g - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Continuous cart-pole Jacobian `[∂ẋ/∂x | ∂ẋ/∂u]`, differentiated by hand.
pub fn cartpole_continuous_jacobian(p: &CartPole<f64>, x: &DVector<f64>, u: f64) -> DMatrix<f64> {
    let (m, l, g) = (p.pole_mass, p.half_length, p.gravity);
    let mt = p.cart_mass + m;
    let (th, om) = (x[1], x[3]);
    let (s, c) = (th.sin(), th.cos());

    let temp = (u + m * l * om * om * s) / mt;
    let d_temp = [
        m * l * om * om * c / mt,
        2.0 * m * l * om * s / mt,
        1.0 / mt,
    ]; // θ, ω, F
    let den = l * (4.0 / 3.0 - m * c * c / mt);
    let d_den = [2.0 * l * m * c * s / mt, 0.0, 0.0];
    let num = g * s - c * temp;
    let d_num = [
        g * c + s * temp - c * d_temp[0],
        -c * d_temp[1],
        -c * d_temp[2],
    ];
    let alpha = num / den;
    let d_alpha: Vec<f64> = (0..3)
        .map(|i| (d_num[i] * den - num * d_den[i]) / (den * den))
        .collect();
    let k = m * l / mt;
    let d_acc = [
        d_temp[0] - k * (d_alpha[0] * c - alpha * s),
        d_temp[1] - k * d_alpha[1] * c,
        d_temp[2] - k * d_alpha[2] * c,
    ];

    // columns: x, θ, ẋ, ω, F
    let mut j = DMatrix::zeros(4, 5);
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    for (col, idx) in [(1usize, 0usize), (3, 1), (4, 2)] {
        j[(2, col)] = d_acc[idx];
        j[(3, col)] = d_alpha[idx];
    }
    j
}

/// Exact Jacobian of one RK4 step, by the chain rule through the stages.
pub fn rk4_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    jac: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    x: &DVector<f64>,
    n_u: usize,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    // dz/d(x,u) for the stage argument z
    let mut dz0 = DMatrix::zeros(n, n + n_u);
    dz0.view_mut((0, 0), (n, n)).fill_with_identity();
    let stage = |z: &DVector<f64>, dz: &DMatrix<f64>| -> DMatrix<f64> {
        let jz = jac(z);
        let jx = jz.columns(0, n).into_owned();
        let mut out = &jx * dz;
        let ju = jz.columns(n, n_u).into_owned();
        let mut tail = out.columns_mut(n, n_u);
        tail += ju;
        out
    };
    let k1 = f(x);
    let dk1 = stage(x, &dz0);
    let z2 = x + &k1 * (dt / 2.0);
    let dk2 = stage(&z2, &(&dz0 + &dk1 * (dt / 2.0)));
    let k2 = f(&z2);
    let z3 = x + &k2 * (dt / 2.0);
    let dk3 = stage(&z3, &(&dz0 + &dk2 * (dt / 2.0)));
    let k3 = f(&z3);
    let z4 = x + &k3 * dt;
    let dk4 = stage(&z4, &(&dz0 + &dk3 * dt));
    let total = &dz0 + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0);
    (
        total.columns(0, n).into_owned(),
        total.columns(n, n_u).into_owned(),
    )
}

pub fn cartpole_analytic_ab(
    p: &CartPole<f64>,
    x: &DVector<f64>,
    u: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let uv = DVector::from_element(1, u);
    rk4_jacobian(
        |z| p.derivative(z, &uv),
        |z| cartpole_continuous_jacobian(p, z, u),
        x,
        1,
        p.dt,
    )
}

/// Truncated Taylor series; only used on small-norm arguments.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * m / k as f64;
        out += &term;
    }
    out
}

/// Zero-order-hold discretization via the augmented exponential.
pub fn zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (ac.nrows(), bc.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Gains `u_t = −K_t x_t` and cost-to-go matrices of the finite-horizon LQR
/// problem by the textbook time-varying Riccati recursion.
pub fn riccati_recursion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    horizon: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut p = qf.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    let mut values = vec![DMatrix::zeros(a.nrows(), a.nrows()); horizon + 1];
    values[horizon] = p.clone();
    for t in (0..horizon).rev() {
        let btp = b.transpose() * &p;
        let k = (r + &btp * b).try_inverse().expect("invertible") * &btp * a;
        p = q + a.transpose() * &p * (a - b * &k);
        gains[t] = k;
        values[t] = p.clone();
    }
    (gains, values)
}

/// Optimal LQ cost by solving the condensed problem over the stacked
/// controls: `X = Φ x0 + Γ U`, `J(U)` quadratic, `U* = −H⁻¹ g`.
pub fn batch_lq_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let (n, m) = (a.nrows(), b.ncols());
    let mut phi = DMatrix::zeros(n * (horizon + 1), n);
    let mut gamma = DMatrix::zeros(n * (horizon + 1), m * horizon);
    let mut power = DMatrix::identity(n, n);
    for t in 0..=horizon {
        phi.view_mut((t * n, 0), (n, n)).copy_from(&power);
        for j in 0..t {
            let mut blk = b.clone();
            for _ in 0..(t - 1 - j) {
                blk = a * blk;
            }
            gamma.view_mut((t * n, j * m), (n, m)).copy_from(&blk);
        }
        power = a * power;
    }
    let mut qbar = DMatrix::zeros(n * (horizon + 1), n * (horizon + 1));
    for t in 0..horizon {
        qbar.view_mut((t * n, t * n), (n, n)).copy_from(q);
    }
    qbar.view_mut((horizon * n, horizon * n), (n, n))
        .copy_from(qf);
    let mut rbar = DMatrix::zeros(m * horizon, m * horizon);
    for t in 0..horizon {
        rbar.view_mut((t * m, t * m), (m, m)).copy_from(r);
    }
    let h = gamma.transpose() * &qbar * &gamma + &rbar;
    let free = &phi * x0;
    let g = gamma.transpose() * &qbar * &free;
    let u = -h.clone().cholesky().expect("PD").solve(&g);
    let xs = &free + &gamma * &u;
    0.5 * (xs.dot(&(&qbar * &xs)) + u.dot(&(&rbar * &u)))
}

/// Infinite-horizon LQR by Hewer's policy iteration, each policy evaluated
/// with a Kronecker-product Lyapunov solve.
pub fn hewer_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut k = k0;
    for _ in 0..100 {
        let acl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let lhs = DMatrix::identity(n * n, n * n) - acl.transpose().kronecker(&acl.transpose());
        let vec_p = lhs
            .lu()
            .solve(&DVector::from_column_slice(rhs.as_slice()))
            .expect("solvable");
        let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
        let next = (r + b.transpose() * &p * b)
            .try_inverse()
            .expect("invertible")
            * b.transpose()
            * &p
            * a;
        let delta = max_abs(&(&next - &k));
        k = next;
        if delta < 1e-14 {
            break;
        }
    }
    k
}

pub fn double_integrator_problem(dt: f64) -> (LinearModel<f64>, CostModel<f64>) {
    let model = LinearModel::double_integrator(dt);
    let cost = CostModel::diagonal(
        &[1.0, 1.0],
        &[1.0],
        1.0,
        DVector::zeros(2),
        DVector::zeros(1),
    )
    .unwrap();
    (model, cost)
}

pub fn cartpole_trajectory(horizon: usize) -> (CartPole<f64>, CostModel<f64>, Trajectory<f64>) {
    let model = CartPole::default();
    let cost = CostModel::cartpole_default();
    let x0 = DVector::from_vec(vec![0.3, 0.3, 0.0, 0.0]);
    // a nonzero nominal so every recursion step sees distinct linearizations
    let controls: Vec<_> = (0..horizon)
        .map(|i| DVector::from_element(1, 0.5 * (i as f64 * 0.3).sin()))
        .collect();
    let traj = rollout(&model, &cost, &x0, &controls).unwrap();
    (model, cost, traj)
}

pub fn quadrotor_trajectory(horizon: usize) -> (Quadrotor<f64>, CostModel<f64>, Trajectory<f64>) {
    let model = Quadrotor::default();
    let cost = CostModel::quadrotor_default(model.hover_thrust());
    let mut x0 = DVector::zeros(12);
    x0.rows_mut(0, 6)
        .copy_from_slice(&[0.2, -0.1, 0.35, 0.1, -0.15, 0.3]);
    let hover = model.hover_thrust();
    let controls: Vec<_> = (0..horizon)
        .map(|i| {
            let t = i as f64 * 0.2;
            DVector::from_vec(vec![
                hover + 0.05 * t.sin(),
                hover - 0.03 * t.cos(),
                hover + 0.02,
                hover - 0.04 * t.sin(),
            ])
        })
        .collect();
    let traj = rollout(&model, &cost, &x0, &controls).unwrap();
    (model, cost, traj)
}

pub fn linearize_model<M: SystemModel<f64>>(
    m: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let lin = m.linearize(x, u).unwrap();
    (lin.a, lin.b)
}
