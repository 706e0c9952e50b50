//! Receding-horizon simulation against the plant model.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use nalgebra::DVector;

use crate::cost::CostModel;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::ilqr::{
    backward_pass, forward_pass, rollout, solve_with, FullBackward, GainSequence, GainStrategy,
    SolveReport, SolverOptions, Trajectory,
};
use crate::quattro::{
    blend_weight, blended_control, BlendConfig, GainPredictor, LqrController, QuattroBackward,
    SplitSpec,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Ilqr,
    Quattro,
    Blended,
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ilqr" => Ok(Self::Ilqr),
            "quattro" => Ok(Self::Quattro),
            "blended" => Ok(Self::Blended),
            other => Err(Error::Config(format!("unknown controller {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig<T: Real> {
    pub horizon: usize,
    /// Plant steps between solves.
    pub control_interval: usize,
    pub sim_steps: usize,
    pub controller: ControllerKind,
    pub split: SplitSpec,
    pub blend: BlendConfig<T>,
    pub solver: SolverOptions<T>,
}

impl<T: Real> MpcConfig<T> {
    pub fn cartpole() -> Self {
        Self {
            horizon: 30,
            control_interval: 1,
            sim_steps: 1500,
            controller: ControllerKind::Ilqr,
            split: SplitSpec::new(5, 30).expect("valid split"),
            blend: BlendConfig::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn quadrotor() -> Self {
        Self {
            horizon: 50,
            control_interval: 20,
            sim_steps: 10_000,
            controller: ControllerKind::Ilqr,
            split: SplitSpec::new(1, 50).expect("valid split"),
            blend: BlendConfig::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.control_interval == 0 {
            return Err(Error::Config("control interval must be at least 1".into()));
        }
        if self.controller != ControllerKind::Ilqr && self.split.horizon() != self.horizon {
            return Err(Error::Config(format!(
                "split {} does not cover horizon {}",
                self.split, self.horizon
            )));
        }
        self.blend.validate()?;
        self.solver.validate()
    }
}

/// One solver iteration as a training sample: the nominal trajectory and
/// the gains the backward pass produced on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T: Real> {
    pub mpc_step: usize,
    pub iter: usize,
    /// Whether the solve this iteration belongs to converged.
    pub converged: bool,
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
    pub gains: GainSequence<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T: Real> {
    pub time: T,
    pub state: DVector<T>,
    pub control: DVector<T>,
    pub cost: T,
    pub blend_w: T,
}

#[derive(Debug, Clone)]
pub struct SolveSummary<T: Real> {
    pub plant_step: usize,
    pub report: SolveReport<T>,
    pub blend_w: T,
}

#[derive(Debug, Clone)]
pub struct SimTrace<T: Real> {
    pub state_dim: usize,
    pub control_dim: usize,
    /// One row per plant step, state taken before the control is applied.
    pub rows: Vec<TraceRow<T>>,
    pub solves: Vec<SolveSummary<T>>,
    pub final_state: DVector<T>,
    /// Set when the loop stopped early.
    pub failure: Option<String>,
}

impl<T: Real> SimTrace<T> {
    pub fn total_iterations(&self) -> usize {
        self.solves.iter().map(|s| s.report.iterations).sum()
    }

    pub fn mean_iteration_time(&self) -> Duration {
        let iters = self.total_iterations();
        if iters == 0 {
            return Duration::ZERO;
        }
        let total: Duration = self
            .solves
            .iter()
            .flat_map(|s| s.report.history.iter().map(|r| r.wall_time))
            .sum();
        total / iters as u32
    }

    pub fn final_cost(&self) -> Option<T> {
        self.solves.last().map(|s| s.report.final_cost)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for i in 0..self.state_dim {
            let _ = write!(out, ",x_{i}");
        }
        for i in 0..self.control_dim {
            let _ = write!(out, ",u_{i}");
        }
        out.push_str(",cost,blend_w\n");
        for row in &self.rows {
            out.push_str(&sig9(row.time));
            for v in row.state.iter().chain(row.control.iter()) {
                out.push(',');
                out.push_str(&sig9(*v));
            }
            let _ = writeln!(out, ",{},{}", sig9(row.cost), sig9(row.blend_w));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::binio::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Nine significant digits.
fn sig9<T: Real>(v: T) -> String {
    format!("{:.8e}", v.to_f64_lossy())
}

/// Receives each recorded episode in solve order.
pub type Recorder<'a, T> = dyn FnMut(Episode<T>) + 'a;

/// Runs the closed loop from `x0` for `config.sim_steps` plant steps.
///
/// `Quattro` needs a predictor. `Blended` uses the hybrid solver when a
/// predictor is given and the vanilla one otherwise.
pub fn run_mpc<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    config: &MpcConfig<T>,
    x0: &DVector<T>,
    predictor: Option<&dyn GainPredictor<T>>,
    mut recorder: Option<&mut Recorder<'_, T>>,
) -> Result<SimTrace<T>> {
    config.validate()?;
    model.check_point(x0, cost.u_ref())?;
    let quattro = match (config.controller, predictor) {
        (ControllerKind::Quattro, None) => {
            return Err(Error::Config(
                "the quattro controller needs a gain predictor".into(),
            ))
        }
        (ControllerKind::Ilqr, _) | (ControllerKind::Blended, None) => None,
        (_, Some(p)) => Some(QuattroBackward {
            predictor: p,
            split: config.split,
        }),
    };
    let lqr = match config.controller {
        ControllerKind::Blended => Some(LqrController::new(model, cost)?),
        _ => None,
    };

    let mut trace = SimTrace {
        state_dim: model.state_dim(),
        control_dim: model.control_dim(),
        rows: Vec::with_capacity(config.sim_steps),
        solves: Vec::new(),
        final_state: x0.clone(),
        failure: None,
    };
    let mut x = x0.clone();
    let mut plan = vec![cost.u_ref().clone(); config.horizon];
    let mut step = 0;
    let dt = model.dt();

    while step < config.sim_steps {
        let mpc_step = trace.solves.len();
        let solve_step = step;
        let mut pending = Vec::new();
        let mut observe = |traj: &Trajectory<T>, gains: &GainSequence<T>, iter: usize| {
            pending.push(Episode {
                mpc_step,
                iter,
                converged: false,
                states: traj.states.clone(),
                controls: traj.controls.clone(),
                gains: gains.clone(),
            });
        };
        let observer: Option<&mut crate::ilqr::IterationObserver<'_, T>> = if recorder.is_some() {
            Some(&mut observe)
        } else {
            None
        };
        let outcome = match &quattro {
            Some(strategy) => {
                solve_with(model, cost, &x, &plan, &config.solver, strategy, observer)
            }
            None => solve_with(
                model,
                cost,
                &x,
                &plan,
                &config.solver,
                &FullBackward,
                observer,
            ),
        };
        let solution = match outcome {
            Ok(s) => s,
            Err(e) => {
                trace.failure = Some(format!("solve at plant step {step} failed: {}", e.error));
                break;
            }
        };
        if let Some(rec) = recorder.as_mut() {
            for mut ep in pending.drain(..) {
                ep.converged = solution.report.converged;
                rec(ep);
            }
        }

        let blend_w = match lqr {
            Some(_) => blend_weight(solution.trajectory.cost, &config.blend),
            None => T::one(),
        };
        let controls = &solution.trajectory.controls;
        let applied = config.control_interval.min(config.sim_steps - step);
        for j in 0..applied {
            let u_plan = &controls[j.min(controls.len() - 1)];
            let u = match &lqr {
                Some(l) => blended_control(u_plan, &l.control(&x), blend_w),
                None => u_plan.clone(),
            };
            let stage = cost.running_cost(&x, &u, 0);
            let next = match model.step(&x, &u) {
                Ok(n) if n.iter().all(|v| v.is_finite_value()) => n,
                _ => {
                    trace.failure = Some(format!("plant diverged at step {step}"));
                    break;
                }
            };
            trace.rows.push(TraceRow {
                time: T::lit(step as f64) * dt,
                state: x.clone(),
                control: u,
                cost: stage,
                blend_w,
            });
            x = next;
            step += 1;
        }
        trace.solves.push(SolveSummary {
            plant_step: solve_step,
            report: solution.report,
            blend_w,
        });
        if trace.failure.is_some() {
            break;
        }
        plan = shift_controls(controls, config.control_interval);
    }
    trace.final_state = x;
    Ok(trace)
}

/// Drops the first `by` controls and repeats the last one to refill.
pub fn shift_controls<T: Real>(controls: &[DVector<T>], by: usize) -> Vec<DVector<T>> {
    let last = controls.last().expect("non-empty plan").clone();
    let mut out: Vec<DVector<T>> = controls.iter().skip(by).cloned().collect();
    out.resize(controls.len(), last);
    out
}

/// Mean squared elementwise difference between two control sequences.
pub fn evaluate_mse<T: Real>(full: &[DVector<T>], hybrid: &[DVector<T>]) -> Result<T> {
    if full.len() != hybrid.len() {
        return Err(Error::DimensionMismatch {
            what: "control sequence length",
            expected: full.len(),
            got: hybrid.len(),
        });
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for (a, b) in full.iter().zip(hybrid) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: a.len(),
                got: b.len(),
            });
        }
        total += (a - b).norm_squared();
        count += a.len();
    }
    if count == 0 {
        return Ok(T::zero());
    }
    Ok(total / T::lit(count as f64))
}

/// Controls after one full-step (`α = 1`) update from a stored iteration
/// state, once with the full backward pass and once with the hybrid one.
#[derive(Debug, Clone)]
pub struct IterationComparison<T: Real> {
    pub full: Vec<DVector<T>>,
    pub hybrid: Vec<DVector<T>>,
    pub full_gains: GainSequence<T>,
}

/// The states are re-rolled from `states[0]` under `controls` so both
/// updates start from a consistent nominal trajectory.
pub fn compare_iteration<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    controls: &[DVector<T>],
    predictor: &dyn GainPredictor<T>,
    split: SplitSpec,
    mu: T,
) -> Result<IterationComparison<T>> {
    let traj = rollout(model, cost, x0, controls)?;
    let full_gains = backward_pass(model, cost, &traj, 0, mu)?.gains;
    let full = forward_pass(model, cost, &traj, &full_gains, T::one())?;
    let hybrid_gains = QuattroBackward { predictor, split }
        .compute(model, cost, &traj, mu)?
        .gains;
    let hybrid = forward_pass(model, cost, &traj, &hybrid_gains, T::one())?;
    Ok(IterationComparison {
        full: full.controls,
        hybrid: hybrid.controls,
        full_gains,
    })
}
