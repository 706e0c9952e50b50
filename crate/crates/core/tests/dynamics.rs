mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use quattro_core::dynamics::{rk4, CartPole, LinearModel, Quadrotor, QuadrotorState, SystemModel};

#[test]
fn cartpole_step_matches_fine_integration() {
    let model = CartPole::<f64>::default();
    let x = DVector::from_vec(vec![0.0, 0.1, 0.0, 0.0]);
    let u = DVector::zeros(1);
    let next = model.step(&x, &u).unwrap();

    let mut fine = x.clone();
    for _ in 0..1000 {
        fine = rk4(&fine, 1e-5, |s| model.derivative(s, &u));
    }
    assert!(next[3] > 0.0, "pole should start falling away");
    let err = (&next - &fine).amax();
    assert!(err < 1e-8, "coarse vs fine RK4 differ by {err:e}");
}

#[test]
fn step_is_deterministic() {
    let model = Quadrotor::<f64>::default();
    let mut x = DVector::zeros(12);
    x[3] = 0.1;
    x[10] = -0.3;
    let u = DVector::from_vec(vec![1.0, 1.5, 1.1, 0.9]);
    let a = model.step(&x, &u).unwrap();
    let b = model.step(&x, &u).unwrap();
    assert!(a
        .iter()
        .zip(b.iter())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn cartpole_fd_jacobian_matches_analytic_chain_rule() {
    let model = CartPole::<f64>::default();
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = DVector::from_vec(vec![
            rng.uniform(-1.0, 1.0),
            rng.uniform(-0.8, 0.8),
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
        ]);
        let u = rng.uniform(-10.0, 10.0);
        let (a_fd, b_fd) = linearize_model(&model, &x, &DVector::from_element(1, u));
        let (a, b) = cartpole_analytic_ab(&model, &x, u);
        worst = worst.max(rel_err(&a_fd, &a)).max(rel_err(&b_fd, &b));
    }
    assert!(worst <= 1e-4, "relative error {worst:e}");
}

#[test]
fn cartpole_upright_linearization_matches_matrix_exponential() {
    let model = CartPole::<f64>::default();
    let x = DVector::zeros(4);
    let jc = cartpole_continuous_jacobian(&model, &x, 0.0);
    let ac = jc.columns(0, 4).into_owned();
    let bc = jc.columns(4, 1).into_owned();
    let (a_exact, b_exact) = zoh(&ac, &bc, model.dt);

    // hand-derived upright entries: θ̈ = g/(l(4/3 − m/Mt)) θ + ...
    let (m, l, g, mt) = (0.1, 0.5, 9.81, 1.1);
    let den = l * (4.0 / 3.0 - m / mt);
    assert!((ac[(3, 1)] - g / den).abs() < 1e-12);
    assert!((bc[(3, 0)] + 1.0 / (mt * den)).abs() < 1e-12);

    let (a, b) = linearize_model(&model, &x, &DVector::zeros(1));
    assert!(rel_err(&a, &a_exact) < 1e-4);
    assert!(rel_err(&b, &b_exact) < 1e-4);
}

#[test]
fn linear_model_linearization_is_exact() {
    let model = LinearModel::double_integrator(0.1);
    let (a, b) = linearize_model(
        &model,
        &DVector::from_vec(vec![3.0, -2.0]),
        &DVector::from_element(1, 5.0),
    );
    assert!(max_abs(&(&a - model.a())) <= 1e-9);
    assert!(max_abs(&(&b - model.b())) <= 1e-9);
}

#[test]
fn quadrotor_hover_input_matrix_structure() {
    let model = Quadrotor::<f64>::default();
    let x = DVector::zeros(12);
    let u = model.hover_control();
    let (_, b) = linearize_model(&model, &x, &u);
    let dt = model.dt;

    let row_max = |r: usize| b.row(r).amax();
    let (vel, att, rate) = (
        QuadrotorState::VEL,
        QuadrotorState::ATT,
        QuadrotorState::RATE,
    );

    // collective thrust: dt/m on vertical velocity, dt²/2m on altitude
    for j in 0..4 {
        let want = dt / model.mass;
        assert!(
            (b[(vel + 2, j)] - want).abs() < 10.0 * dt * want,
            "vz column {j}"
        );
        let want = 0.5 * dt * dt / model.mass;
        assert!((b[(2, j)] - want).abs() < 1e-2 * want, "z column {j}");
    }
    // differential thrust reaches rates in O(dt), attitude in O(dt²), and
    // horizontal motion only through tilt, one and two orders later
    for k in 0..3 {
        assert!(row_max(rate + k) > 0.1 * dt);
        assert!(row_max(att + k) < dt * row_max(rate + k));
    }
    for k in 0..2 {
        assert!(row_max(vel + k) < row_max(att + k));
        assert!(row_max(k) < 1e-2 * row_max(vel + k));
    }
    // roll from rotors 1/3, pitch from 0/2, yaw from all four
    assert_eq!(b[(rate, 0)], 0.0);
    assert_eq!(b[(rate + 1, 1)], 0.0);
    assert!(b[(rate + 2, 0)] > 0.0 && b[(rate + 2, 1)] < 0.0);
}

fn first_order_ratio<M: SystemModel<f64>>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut Rng,
    norm: f64,
) -> f64 {
    let (a, b) = linearize_model(model, x, u);
    let dx = rng.small_step(x.len(), norm);
    let du = rng.small_step(u.len(), norm);
    let base = model.step(x, u).unwrap();
    let moved = model.step(&(x + &dx), &(u + &du)).unwrap();
    let residual = (moved - base - &a * &dx - &b * &du).norm();
    residual / (dx.norm() + du.norm())
}

fn cartpole_points(rng: &mut Rng) -> (DVector<f64>, DVector<f64>) {
    let x = DVector::from_vec(vec![
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5),
        rng.uniform(-1.0, 1.0),
        rng.uniform(-1.0, 1.0),
    ]);
    (x, DVector::from_element(1, rng.uniform(-5.0, 5.0)))
}

fn quadrotor_points(rng: &mut Rng, hover: f64) -> (DVector<f64>, DVector<f64>) {
    let mut x = DVector::zeros(12);
    x.rows_mut(0, 6).copy_from(&rng.vector(6, -0.3, 0.3));
    x.rows_mut(6, 6).copy_from(&rng.vector(6, -0.5, 0.5));
    (
        x,
        DVector::from_fn(4, |_, _| hover + rng.uniform(-0.3, 0.3)),
    )
}

/// Worst linearization residual ratio over 100 points at perturbation size `norm`.
fn worst_ratio<M: SystemModel<f64>>(
    model: &M,
    seed: u64,
    norm: f64,
    mut point: impl FnMut(&mut Rng) -> (DVector<f64>, DVector<f64>),
) -> f64 {
    let mut rng = Rng::new(seed);
    (0..100)
        .map(|_| {
            let (x, u) = point(&mut rng);
            first_order_ratio(model, &x, &u, &mut rng, norm)
        })
        .fold(0.0, f64::max)
}

// The residual over |δ| must shrink in proportion to |δ| (a pure
// second-order remainder) and stay small in absolute terms.
#[test]
fn linearization_residual_is_second_order_cartpole() {
    let model = CartPole::<f64>::default();
    let coarse = worst_ratio(&model, 5, 1e-4, cartpole_points);
    let fine = worst_ratio(&model, 5, 1e-5, cartpole_points);
    assert!(coarse < 5e-6, "{coarse:e}");
    assert!((coarse / fine - 10.0).abs() < 0.5, "{coarse:e} vs {fine:e}");
    assert!(fine <= 1e-6);
}

#[test]
fn linearization_residual_is_second_order_quadrotor() {
    let model = Quadrotor::<f64>::default();
    let hover = model.hover_thrust();
    let coarse = worst_ratio(&model, 6, 1e-4, |r| quadrotor_points(r, hover));
    let fine = worst_ratio(&model, 6, 1e-5, |r| quadrotor_points(r, hover));
    assert!(coarse < 5e-6, "{coarse:e}");
    assert!((coarse / fine - 10.0).abs() < 0.5, "{coarse:e} vs {fine:e}");
    assert!(fine <= 1e-6);
}

#[test]
fn non_finite_inputs_are_rejected() {
    let model = CartPole::<f64>::default();
    let x = DVector::from_vec(vec![0.0, f64::NAN, 0.0, 0.0]);
    assert!(model.step(&x, &DVector::zeros(1)).is_err());
    assert!(model.linearize(&x, &DVector::zeros(1)).is_err());
    assert!(model.step(&DVector::zeros(3), &DVector::zeros(1)).is_err());
}

#[test]
fn rk4_jacobian_oracle_is_exact_on_linear_dynamics() {
    let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
    let bc = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let x = DVector::from_vec(vec![0.4, -0.2]);
    let u = 0.7;
    let (a, b) = rk4_jacobian(
        |z| &ac * z + &bc * u,
        |_| {
            let mut j = DMatrix::zeros(2, 3);
            j.view_mut((0, 0), (2, 2)).copy_from(&ac);
            j.view_mut((0, 2), (2, 1)).copy_from(&bc);
            j
        },
        &x,
        1,
        0.01,
    );
    let (a_exact, b_exact) = zoh(&ac, &bc, 0.01);
    assert!(max_abs(&(&a - &a_exact)) < 1e-10);
    assert!(max_abs(&(&b - &b_exact)) < 1e-10);
}
