mod common;

use common::*;
use nalgebra::DVector;
use quattro_core::ilqr::{
    backward_pass, forward_pass, rollout, solve, GainSequence, SolverOptions,
};

fn di_setup() -> (
    quattro_core::dynamics::LinearModel<f64>,
    quattro_core::cost::CostModel<f64>,
    DVector<f64>,
) {
    let (model, cost) = double_integrator_problem(0.1);
    (model, cost, DVector::from_vec(vec![1.0, -0.5]))
}

#[test]
fn double_integrator_gains_match_riccati_recursion() {
    let (model, cost, x0) = di_setup();
    let horizon = 50;
    let traj = rollout(&model, &cost, &x0, &vec![DVector::zeros(1); horizon]).unwrap();
    let pass = backward_pass(&model, &cost, &traj, 0, 0.0).unwrap();
    let (gains, values) =
        riccati_recursion(model.a(), model.b(), cost.q(), cost.r(), cost.qf(), horizon);

    for t in 0..horizon {
        // the solver's feedback enters with a plus sign
        let err = max_abs(&(&pass.gains.feedback[t] + &gains[t]));
        assert!(err <= 1e-8, "step {t}: {err:e}");
        let err = max_abs(&(&pass.values[t].hessian - &values[t])) / max_abs(&values[t]);
        assert!(err <= 1e-8, "value {t}: {err:e}");
    }
    // feedforward on a zero-control nominal is the feedback applied to the state
    for t in [0, 17, 49] {
        let want = -&gains[t] * &traj.states[t];
        assert!((&pass.gains.feedforward[t] - want).amax() <= 1e-8);
    }
}

#[test]
fn double_integrator_one_iteration_reaches_batch_optimum() {
    let (model, cost, x0) = di_setup();
    let horizon = 50;
    let init = vec![DVector::zeros(1); horizon];
    let traj = rollout(&model, &cost, &x0, &init).unwrap();
    let pass = backward_pass(&model, &cost, &traj, 0, 0.0).unwrap();
    let next = forward_pass(&model, &cost, &traj, &pass.gains, 1.0).unwrap();

    let optimum = batch_lq_cost(
        model.a(),
        model.b(),
        cost.q(),
        cost.r(),
        cost.qf(),
        &x0,
        horizon,
    );
    assert!(
        (next.cost - optimum).abs() <= 1e-8,
        "{} vs {optimum}",
        next.cost
    );
    // the quadratic model is exact for LQ problems
    assert!((next.cost - traj.cost - pass.expected.at(1.0)).abs() <= 1e-9);

    let solution = solve(&model, &cost, &x0, &init, &SolverOptions::default()).unwrap();
    assert!(solution.report.converged);
    assert!(
        solution.report.iterations <= 2,
        "{} iterations",
        solution.report.iterations
    );
    assert!((solution.trajectory.cost - optimum).abs() <= 1e-8);
}

#[test]
fn feedforward_vanishes_at_the_optimum() {
    let (model, cost, x0) = di_setup();
    let solution = solve(
        &model,
        &cost,
        &x0,
        &vec![DVector::zeros(1); 50],
        &SolverOptions::default(),
    )
    .unwrap();
    let pass = backward_pass(&model, &cost, &solution.trajectory, 0, 0.0).unwrap();
    let worst = pass
        .gains
        .feedforward
        .iter()
        .map(|k| k.amax())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst:e}");
}

fn assert_suffix_exact(
    pass: &quattro_core::ilqr::BackwardPass<f64>,
    full: &quattro_core::ilqr::BackwardPass<f64>,
) {
    let s = pass.start;
    assert_eq!(pass.steps, full.steps - s);
    assert_eq!(pass.gains, full.gains.tail(s));
    assert_eq!(pass.values[..], full.values[s..]);
}

#[test]
fn partial_pass_is_bitwise_suffix_of_full_pass() {
    let horizon = 30;
    let (model, cost, traj) = cartpole_trajectory(horizon);
    let full = backward_pass(&model, &cost, &traj, 0, 1e-6).unwrap();
    for s in [1, horizon / 2, horizon - 1] {
        assert_suffix_exact(
            &backward_pass(&model, &cost, &traj, s, 1e-6).unwrap(),
            &full,
        );
    }

    let horizon = 50;
    let (model, cost, traj) = quadrotor_trajectory(horizon);
    let full = backward_pass(&model, &cost, &traj, 0, 1e-6).unwrap();
    for s in [1, horizon / 2, horizon - 1] {
        assert_suffix_exact(
            &backward_pass(&model, &cost, &traj, s, 1e-6).unwrap(),
            &full,
        );
    }
}

#[test]
fn backward_pass_rejects_start_at_horizon() {
    let (model, cost, traj) = cartpole_trajectory(10);
    assert!(backward_pass(&model, &cost, &traj, 10, 1e-6).is_err());
}

#[test]
fn zero_gains_reproduce_the_nominal() {
    let (model, cost, traj) = quadrotor_trajectory(20);
    let zero = GainSequence::zeros(20, 4, 12);
    let again = forward_pass(&model, &cost, &traj, &zero, 1.0).unwrap();
    assert_eq!(again, traj);
    // a wrong-length gain sequence is refused
    assert!(forward_pass(&model, &cost, &traj, &GainSequence::zeros(19, 4, 12), 1.0).is_err());
}

#[test]
fn zero_step_keeps_the_nominal() {
    // with α = 0 the state never deviates, so feedback never acts
    let (model, cost, traj) = cartpole_trajectory(30);
    let pass = backward_pass(&model, &cost, &traj, 0, 1e-6).unwrap();
    let same = forward_pass(&model, &cost, &traj, &pass.gains, 0.0).unwrap();
    for (a, b) in same.states.iter().zip(&traj.states) {
        assert!((a - b).amax() == 0.0);
    }
}

#[test]
fn cartpole_solve_descends_monotonically() {
    let (model, cost, traj) = cartpole_trajectory(30);
    let solution = solve(
        &model,
        &cost,
        &traj.states[0],
        &traj.controls,
        &SolverOptions::default(),
    )
    .unwrap();
    let costs = solution.report.accepted_costs();
    assert!(costs.len() >= 2);
    assert!(costs.windows(2).all(|w| w[1] < w[0]), "{costs:?}");
    assert!(solution.report.converged);
    assert!(pass_expected_is_descent(&model, &cost, &traj));
}

fn pass_expected_is_descent(
    model: &quattro_core::dynamics::CartPole<f64>,
    cost: &quattro_core::cost::CostModel<f64>,
    traj: &quattro_core::ilqr::Trajectory<f64>,
) -> bool {
    let pass = backward_pass(model, cost, traj, 0, 1e-6).unwrap();
    pass.expected.at(1.0) < 0.0 && pass.expected.at(0.5) < 0.0
}

#[test]
fn solve_is_deterministic() {
    let (model, cost, traj) = quadrotor_trajectory(50);
    let opts = SolverOptions::default();
    let a = solve(&model, &cost, &traj.states[0], &traj.controls, &opts).unwrap();
    let b = solve(&model, &cost, &traj.states[0], &traj.controls, &opts).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.gains, b.gains);
    assert_eq!(a.report.accepted_costs(), b.report.accepted_costs());
}

#[test]
fn invalid_options_are_rejected() {
    let (model, cost, x0) = di_setup();
    let init = vec![DVector::zeros(1); 5];
    let opts = SolverOptions {
        line_search: vec![0.5, 1.0],
        ..SolverOptions::default()
    };
    assert!(solve(&model, &cost, &x0, &init, &opts).is_err());
    let opts = SolverOptions {
        tolerance: 0.0,
        ..SolverOptions::default()
    };
    assert!(solve(&model, &cost, &x0, &init, &opts).is_err());
    assert!(solve(
        &model,
        &cost,
        &DVector::zeros(3),
        &init,
        &SolverOptions::default()
    )
    .is_err());
}

#[test]
fn regularization_shrinks_the_step() {
    let (model, cost, x0) = di_setup();
    let traj = rollout(&model, &cost, &x0, &vec![DVector::zeros(1); 20]).unwrap();
    let plain = backward_pass(&model, &cost, &traj, 0, 0.0).unwrap();
    let heavy = backward_pass(&model, &cost, &traj, 0, 1e3).unwrap();
    let norm = |g: &GainSequence<f64>| g.feedforward.iter().map(|k| k.norm_squared()).sum::<f64>();
    assert!(norm(&heavy.gains) < 1e-3 * norm(&plain.gains));
}
