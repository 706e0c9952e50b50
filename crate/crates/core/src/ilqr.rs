//! Gauss-Newton iLQR: rollout, (partial) backward pass, line-searched forward
//! pass and the outer convergence loop.
//!
//! The backward recursion can be started at any step `s`; the gains it returns
//! for steps `s..T` are bit-identical to the tail of a full pass, which is what
//! lets the hybrid solver splice predicted gains in front of them.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cost::CostModel;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Nominal state/control trajectory with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// `T + 1` states.
    pub states: Vec<DVector<T>>,
    /// `T` controls.
    pub controls: Vec<DVector<T>>,
    pub cost: T,
}

impl<T: Real> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Feedforward vectors `k_i` and feedback matrices `K_i` for a contiguous
/// range of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSequence<T: Real> {
    pub feedforward: Vec<DVector<T>>,
    pub feedback: Vec<DMatrix<T>>,
}

impl<T: Real> GainSequence<T> {
    pub fn zeros(len: usize, n_u: usize, n_x: usize) -> Self {
        Self {
            feedforward: vec![DVector::zeros(n_u); len],
            feedback: vec![DMatrix::zeros(n_u, n_x); len],
        }
    }

    pub fn len(&self) -> usize {
        self.feedforward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedforward.is_empty()
    }

    /// Gains for `prefix` steps followed by `suffix` steps.
    pub fn concat(prefix: &GainSequence<T>, suffix: &GainSequence<T>) -> Self {
        let mut out = prefix.clone();
        out.feedforward.extend(suffix.feedforward.iter().cloned());
        out.feedback.extend(suffix.feedback.iter().cloned());
        out
    }

    /// Entries `start..`.
    pub fn tail(&self, start: usize) -> Self {
        Self {
            feedforward: self.feedforward[start..].to_vec(),
            feedback: self.feedback[start..].to_vec(),
        }
    }

    /// Entries `..end`.
    pub fn head(&self, end: usize) -> Self {
        Self {
            feedforward: self.feedforward[..end].to_vec(),
            feedback: self.feedback[..end].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.feedforward
            .iter()
            .all(|k| k.iter().all(|v| v.is_finite_value()))
            && self
                .feedback
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite_value()))
    }

    /// Checks `len` entries of shapes `n_u` / `n_u × n_x`.
    pub fn check_shape(&self, len: usize, n_u: usize, n_x: usize) -> Result<()> {
        if self.feedforward.len() != len || self.feedback.len() != len {
            return Err(Error::DimensionMismatch {
                what: "gain sequence length",
                expected: len,
                got: self.feedforward.len().min(self.feedback.len()),
            });
        }
        for (k, m) in self.feedforward.iter().zip(&self.feedback) {
            if k.len() != n_u || m.nrows() != n_u || m.ncols() != n_x {
                return Err(Error::DimensionMismatch {
                    what: "gain entry",
                    expected: n_u * (n_x + 1),
                    got: k.len() + m.len(),
                });
            }
        }
        Ok(())
    }
}

/// Local quadratic model of the cost-to-go, `δV = sᵀδx + ½ δxᵀ S δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueExpansion<T: Real> {
    pub gradient: DVector<T>,
    pub hessian: DMatrix<T>,
}

/// Local quadratic model of the state-action cost.
#[derive(Debug, Clone, PartialEq)]
pub struct QExpansion<T: Real> {
    pub q_x: DVector<T>,
    pub q_u: DVector<T>,
    pub q_xx: DMatrix<T>,
    pub q_uu: DMatrix<T>,
    pub q_ux: DMatrix<T>,
}

/// Predicted cost change of a step of size `α`: `α·linear + α²·quadratic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedImprovement<T: Real> {
    /// `Σ k_iᵀ Q_u`
    pub linear: T,
    /// `½ Σ k_iᵀ Q_uu k_i`
    pub quadratic: T,
}

impl<T: Real> ExpectedImprovement<T> {
    pub fn zero() -> Self {
        Self {
            linear: T::zero(),
            quadratic: T::zero(),
        }
    }

    pub fn at(&self, alpha: T) -> T {
        alpha * self.linear + alpha * alpha * self.quadratic
    }
}

/// Output of a (possibly partial) backward pass started at step `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass<T: Real> {
    pub start: usize,
    /// Gains for steps `start..T`.
    pub gains: GainSequence<T>,
    /// Value expansions for steps `start..=T`; the last entry is the terminal condition.
    pub values: Vec<ValueExpansion<T>>,
    pub expected: ExpectedImprovement<T>,
    /// Number of recursion steps executed (`T − start`).
    pub steps: usize,
}

/// Builds the Q-expansion at step `i` from the next step's value expansion.
pub fn q_expansion<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    i: usize,
    next: &ValueExpansion<T>,
) -> Result<QExpansion<T>> {
    let (x, u) = (&traj.states[i], &traj.controls[i]);
    let lin = model.linearize(x, u)?;
    let l = cost.quadratize(x, u, i);
    let at_s = lin.a.transpose() * &next.hessian;
    let bt_s = lin.b.transpose() * &next.hessian;
    Ok(QExpansion {
        q_x: l.l_x + lin.a.transpose() * &next.gradient,
        q_u: l.l_u + lin.b.transpose() * &next.gradient,
        q_xx: l.l_xx + &at_s * &lin.a,
        q_uu: l.l_uu + &bt_s * &lin.b,
        q_ux: l.l_ux + &bt_s * &lin.a,
    })
}

/// Simulates `controls` from `x0` and evaluates the total cost.
pub fn rollout<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    controls: &[DVector<T>],
) -> Result<Trajectory<T>> {
    if controls.is_empty() {
        return Err(Error::InvalidInput(
            "control sequence must cover at least one step".into(),
        ));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (i, u) in controls.iter().enumerate() {
        let next = model.step(&states[i], u).map_err(|e| match e {
            Error::InvalidInput(_) => Error::Divergence { step: i },
            other => other,
        })?;
        if !next.iter().all(|v| v.is_finite_value()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        states.push(next);
    }
    let cost_value = cost.trajectory_cost(&states, controls);
    if !cost_value.is_finite_value() {
        return Err(Error::Divergence {
            step: controls.len(),
        });
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
        cost: cost_value,
    })
}

/// Backward recursion from the terminal condition down to step `start`,
/// regularizing `Q_uu` with `mu·I` for the gain solve.
pub fn backward_pass<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    start: usize,
    mu: T,
) -> Result<BackwardPass<T>> {
    let horizon = traj.horizon();
    if start >= horizon {
        return Err(Error::InvalidInput(format!(
            "backward pass start {start} outside horizon {horizon}"
        )));
    }
    let n_u = model.control_dim();
    let steps = horizon - start;

    let (s_t, hess_t) = cost.terminal_expansion(&traj.states[horizon], horizon);
    let mut values = vec![ValueExpansion {
        gradient: s_t,
        hessian: hess_t,
    }];
    let mut feedforward = Vec::with_capacity(steps);
    let mut feedback = Vec::with_capacity(steps);
    let mut expected = ExpectedImprovement::zero();
    let half = T::lit(0.5);

    for i in (start..horizon).rev() {
        let next = values.last().expect("terminal value present");
        let q = q_expansion(model, cost, traj, i, next)?;

        let regularized = &q.q_uu + DMatrix::identity(n_u, n_u) * mu;
        let chol = Cholesky::new(regularized).ok_or(Error::NotPositiveDefinite {
            step: i,
            mu: mu.to_f64_lossy(),
        })?;
        let k = -chol.solve(&q.q_u);
        let gain = -chol.solve(&q.q_ux);

        let kt_quu = gain.transpose() * &q.q_uu;
        let gradient = &q.q_x + &kt_quu * &k + gain.transpose() * &q.q_u + q.q_ux.transpose() * &k;
        let hessian =
            &q.q_xx + &kt_quu * &gain + gain.transpose() * &q.q_ux + q.q_ux.transpose() * &gain;
        let hessian = (&hessian + hessian.transpose()) * half;

        expected.linear += k.dot(&q.q_u);
        expected.quadratic += half * k.dot(&(&q.q_uu * &k));

        feedforward.push(k);
        feedback.push(gain);
        values.push(ValueExpansion { gradient, hessian });
    }

    feedforward.reverse();
    feedback.reverse();
    values.reverse();
    Ok(BackwardPass {
        start,
        gains: GainSequence {
            feedforward,
            feedback,
        },
        values,
        expected,
        steps,
    })
}

/// Closed-loop rollout `u_new = u + α k + K (x_new − x)`.
pub fn forward_pass<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    gains: &GainSequence<T>,
    alpha: T,
) -> Result<Trajectory<T>> {
    let horizon = traj.horizon();
    gains.check_shape(horizon, model.control_dim(), model.state_dim())?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(traj.states[0].clone());
    for i in 0..horizon {
        let dx = &states[i] - &traj.states[i];
        let u = &traj.controls[i] + &gains.feedforward[i] * alpha + &gains.feedback[i] * dx;
        let next = model.step(&states[i], &u).map_err(|e| match e {
            Error::InvalidInput(_) => Error::Divergence { step: i },
            other => other,
        })?;
        if !next.iter().all(|v| v.is_finite_value()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        controls.push(u);
        states.push(next);
    }
    let cost_value = cost.trajectory_cost(&states, &controls);
    if !cost_value.is_finite_value() {
        return Err(Error::Divergence { step: horizon });
    }
    Ok(Trajectory {
        states,
        controls,
        cost: cost_value,
    })
}

/// Tries the step sizes in schedule order and returns the first candidate
/// that strictly lowers the cost.
pub fn line_search<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    gains: &GainSequence<T>,
    schedule: &[T],
) -> Option<(T, Trajectory<T>)> {
    schedule.iter().find_map(
        |&alpha| match forward_pass(model, cost, traj, gains, alpha) {
            Ok(candidate) if candidate.cost < traj.cost => Some((alpha, candidate)),
            _ => None,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<T: Real> {
    pub max_iters: usize,
    /// Stop once an accepted step changes the cost by less than this.
    pub tolerance: T,
    /// Step sizes tried in order.
    pub line_search: Vec<T>,
    pub mu_init: T,
    pub mu_min: T,
    pub mu_max: T,
    pub mu_increase: T,
    pub mu_decrease: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tolerance: T::lit(1e-6),
            line_search: (0..10).map(|j| T::lit(0.5f64.powi(j))).collect(),
            mu_init: T::lit(1e-6),
            mu_min: T::lit(1e-9),
            mu_max: T::lit(1e10),
            mu_increase: T::lit(10.0),
            mu_decrease: T::lit(0.5),
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.line_search.is_empty() {
            return Err(Error::Config("line-search schedule is empty".into()));
        }
        if self.line_search.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config(
                "line-search schedule must be strictly decreasing".into(),
            ));
        }
        if self
            .line_search
            .iter()
            .any(|&a| !(a > T::zero() && a <= T::one()))
        {
            return Err(Error::Config(
                "line-search step sizes must lie in (0, 1]".into(),
            ));
        }
        if !(self.mu_min >= T::zero() && self.mu_min <= self.mu_init && self.mu_init <= self.mu_max)
        {
            return Err(Error::Config(
                "regularization bounds must satisfy min <= init <= max".into(),
            ));
        }
        if !(self.mu_increase > T::one())
            || !(self.mu_decrease > T::zero() && self.mu_decrease < T::one())
        {
            return Err(Error::Config(
                "regularization factors must grow above 1 and decay below 1".into(),
            ));
        }
        Ok(())
    }
}

/// Gains produced for one iteration plus the bookkeeping the report needs.
#[derive(Debug, Clone)]
pub struct GainComputation<T: Real> {
    pub gains: GainSequence<T>,
    pub expected: ExpectedImprovement<T>,
    /// Backward recursion steps actually executed.
    pub backward_steps: usize,
    /// Steps supplied by a predictor instead of the recursion.
    pub predicted_steps: usize,
    pub backward_time: Duration,
    pub predict_time: Duration,
}

/// Source of the full-horizon gain sequence for one iteration.
pub trait GainStrategy<T: Real> {
    fn compute<M: SystemModel<T> + ?Sized>(
        &self,
        model: &M,
        cost: &CostModel<T>,
        traj: &Trajectory<T>,
        mu: T,
    ) -> Result<GainComputation<T>>;
}

/// The vanilla strategy: one full backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullBackward;

impl<T: Real> GainStrategy<T> for FullBackward {
    fn compute<M: SystemModel<T> + ?Sized>(
        &self,
        model: &M,
        cost: &CostModel<T>,
        traj: &Trajectory<T>,
        mu: T,
    ) -> Result<GainComputation<T>> {
        let started = Instant::now();
        let pass = backward_pass(model, cost, traj, 0, mu)?;
        Ok(GainComputation {
            gains: pass.gains,
            expected: pass.expected,
            backward_steps: pass.steps,
            predicted_steps: 0,
            backward_time: started.elapsed(),
            predict_time: Duration::ZERO,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Real> {
    /// Cost after the iteration (unchanged when no step was accepted).
    pub cost: T,
    /// Accepted step size, `None` when the line search failed.
    pub alpha: Option<T>,
    pub mu: T,
    pub backward_steps: usize,
    pub predicted_steps: usize,
    pub backward_time: Duration,
    pub predict_time: Duration,
    pub forward_time: Duration,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T: Real> {
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord<T>>,
}

impl<T: Real> SolveReport<T> {
    /// Costs after each accepted iteration, starting with the initial rollout.
    pub fn accepted_costs(&self) -> Vec<T> {
        std::iter::once(self.initial_cost)
            .chain(
                self.history
                    .iter()
                    .filter(|r| r.alpha.is_some())
                    .map(|r| r.cost),
            )
            .collect()
    }

    pub fn mean_iteration_time(&self) -> Duration {
        if self.history.is_empty() {
            return Duration::ZERO;
        }
        self.history.iter().map(|r| r.wall_time).sum::<Duration>() / self.history.len() as u32
    }
}

#[derive(Debug, Clone)]
pub struct Solution<T: Real> {
    pub trajectory: Trajectory<T>,
    /// Gains of the last iteration (zeros when no iteration ran).
    pub gains: GainSequence<T>,
    pub report: SolveReport<T>,
}

/// Solver failure with the best trajectory found so far, when one exists.
#[derive(Debug)]
pub struct SolveError<T: Real> {
    pub error: Error,
    pub best: Option<Box<Solution<T>>>,
}

impl<T: Real> fmt::Display for SolveError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iLQR solve failed: {}", self.error)
    }
}

impl<T: Real> std::error::Error for SolveError<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<T: Real> From<Error> for SolveError<T> {
    fn from(error: Error) -> Self {
        Self { error, best: None }
    }
}

/// Called once per iteration with the nominal trajectory the gains were
/// computed on, the gains, and the iteration index.
pub type IterationObserver<'a, T> = dyn FnMut(&Trajectory<T>, &GainSequence<T>, usize) + 'a;

/// Vanilla iLQR.
pub fn solve<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    initial_controls: &[DVector<T>],
    opts: &SolverOptions<T>,
) -> Result<Solution<T>, SolveError<T>> {
    solve_with(model, cost, x0, initial_controls, opts, &FullBackward, None)
}

/// iLQR loop with a pluggable gain source.
pub fn solve_with<T, M, G>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    initial_controls: &[DVector<T>],
    opts: &SolverOptions<T>,
    strategy: &G,
    mut observer: Option<&mut IterationObserver<'_, T>>,
) -> Result<Solution<T>, SolveError<T>>
where
    T: Real,
    M: SystemModel<T> + ?Sized,
    G: GainStrategy<T> + ?Sized,
{
    opts.validate()?;
    let (n_x, n_u) = (model.state_dim(), model.control_dim());
    if cost.state_dim() != n_x || cost.control_dim() != n_u {
        return Err(Error::DimensionMismatch {
            what: "cost weights",
            expected: n_x,
            got: cost.state_dim(),
        }
        .into());
    }
    let mut traj = rollout(model, cost, x0, initial_controls)?;
    let horizon = traj.horizon();
    let mut gains = GainSequence::zeros(horizon, n_u, n_x);
    let mut report = SolveReport {
        initial_cost: traj.cost,
        final_cost: traj.cost,
        iterations: 0,
        converged: false,
        history: Vec::new(),
    };
    let mut mu = opts.mu_init;

    let fail =
        |error: Error, traj: Trajectory<T>, gains: GainSequence<T>, mut report: SolveReport<T>| {
            report.final_cost = traj.cost;
            SolveError {
                error,
                best: Some(Box::new(Solution {
                    trajectory: traj,
                    gains,
                    report,
                })),
            }
        };

    while report.iterations < opts.max_iters {
        let iter_start = Instant::now();
        let computed = loop {
            match strategy.compute(model, cost, &traj, mu) {
                Ok(c) => break c,
                Err(Error::NotPositiveDefinite { .. }) => {
                    mu *= opts.mu_increase;
                    if mu > opts.mu_max {
                        return Err(fail(
                            Error::RegularizationOverflow {
                                mu: mu.to_f64_lossy(),
                            },
                            traj,
                            gains,
                            report,
                        ));
                    }
                }
                Err(e) => return Err(fail(e, traj, gains, report)),
            }
        };
        let iteration = report.iterations;
        report.iterations += 1;
        if let Some(obs) = observer.as_mut() {
            obs(&traj, &computed.gains, iteration);
        }

        let forward_start = Instant::now();
        let accepted = line_search(model, cost, &traj, &computed.gains, &opts.line_search);
        let forward_time = forward_start.elapsed();
        let mut record = IterationRecord {
            cost: traj.cost,
            alpha: None,
            mu,
            backward_steps: computed.backward_steps,
            predicted_steps: computed.predicted_steps,
            backward_time: computed.backward_time,
            predict_time: computed.predict_time,
            forward_time,
            wall_time: Duration::ZERO,
        };
        let expected_change = computed.expected.at(T::one()).abs();
        gains = computed.gains;

        match accepted {
            Some((alpha, candidate)) => {
                let change = (traj.cost - candidate.cost).abs();
                traj = candidate;
                record.cost = traj.cost;
                record.alpha = Some(alpha);
                mu = (mu * opts.mu_decrease).max(opts.mu_min);
                record.wall_time = iter_start.elapsed();
                report.history.push(record);
                if change < opts.tolerance {
                    report.converged = true;
                    break;
                }
            }
            None => {
                record.wall_time = iter_start.elapsed();
                report.history.push(record);
                if expected_change < opts.tolerance {
                    // no descent direction left at this regularization
                    report.converged = true;
                    break;
                }
                mu *= opts.mu_increase;
                if mu > opts.mu_max {
                    return Err(fail(
                        Error::RegularizationOverflow {
                            mu: mu.to_f64_lossy(),
                        },
                        traj,
                        gains,
                        report,
                    ));
                }
            }
        }
    }

    report.final_cost = traj.cost;
    Ok(Solution {
        trajectory: traj,
        gains,
        report,
    })
}
