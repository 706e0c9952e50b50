//! The hybrid iteration: a partial backward pass for the last `s` steps,
//! a learned predictor for the rest, and the LQR output blender.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::cost::CostModel;
use crate::dynamics::{LinearizedStep, SystemModel};
use crate::error::{Error, Result};
use crate::ilqr::{
    backward_pass, line_search, GainComputation, GainSequence, GainStrategy, Trajectory,
};
use crate::scalar::Real;
use crate::transformer::{load_weights, Transformer, TransformerWeights};

/// Supplies the gain prefix (times `0..T−s`) given the nominal states and the
/// exactly computed suffix.
pub trait GainPredictor<T: Real>: Send + Sync {
    fn predict(&self, states: &[DVector<T>], suffix: &GainSequence<T>) -> Result<GainSequence<T>>;
}

/// Runs the transformer in `f32` regardless of the solver scalar.
#[derive(Debug, Clone)]
pub struct TransformerPredictor {
    model: Transformer<f32>,
}

impl TransformerPredictor {
    pub fn new(weights: TransformerWeights<f32>) -> Result<Self> {
        Ok(Self {
            model: Transformer::new(weights)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(load_weights(path)?)
    }

    pub fn transformer(&self) -> &Transformer<f32> {
        &self.model
    }
}

fn cast_vec<A: Real, B: Real>(v: &DVector<A>) -> DVector<B> {
    v.map(|x| B::lit(x.to_f64_lossy()))
}

fn cast_gains<A: Real, B: Real>(g: &GainSequence<A>) -> GainSequence<B> {
    GainSequence {
        feedforward: g.feedforward.iter().map(cast_vec).collect(),
        feedback: g
            .feedback
            .iter()
            .map(|m| m.map(|x| B::lit(x.to_f64_lossy())))
            .collect(),
    }
}

impl<T: Real> GainPredictor<T> for TransformerPredictor {
    fn predict(&self, states: &[DVector<T>], suffix: &GainSequence<T>) -> Result<GainSequence<T>> {
        let states: Vec<DVector<f32>> = states.iter().map(cast_vec).collect();
        let prefix = self.model.predict_gains(&states, &cast_gains(suffix))?;
        Ok(cast_gains(&prefix))
    }
}

/// Replays the gains of a stored full backward pass; a perfect predictor
/// for the trajectory it was built from.
#[derive(Debug, Clone)]
pub struct OraclePredictor<T: Real> {
    gains: GainSequence<T>,
}

impl<T: Real> OraclePredictor<T> {
    pub fn new(gains: GainSequence<T>) -> Self {
        Self { gains }
    }

    /// Runs the full backward pass on `traj` and keeps its gains.
    pub fn from_backward_pass<M: SystemModel<T> + ?Sized>(
        model: &M,
        cost: &CostModel<T>,
        traj: &Trajectory<T>,
        mu: T,
    ) -> Result<Self> {
        Ok(Self::new(backward_pass(model, cost, traj, 0, mu)?.gains))
    }
}

impl<T: Real> GainPredictor<T> for OraclePredictor<T> {
    fn predict(&self, states: &[DVector<T>], suffix: &GainSequence<T>) -> Result<GainSequence<T>> {
        let horizon = self.gains.len();
        if suffix.len() > horizon || states.len() < horizon {
            return Err(Error::Predictor(format!(
                "oracle holds {horizon} steps, asked for suffix {} with {} states",
                suffix.len(),
                states.len()
            )));
        }
        Ok(self.gains.head(horizon - suffix.len()))
    }
}

/// Steps computed by the backward recursion; the remaining `T − s` are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    ilqr_steps: usize,
    horizon: usize,
}

impl SplitSpec {
    pub fn new(ilqr_steps: usize, horizon: usize) -> Result<Self> {
        if ilqr_steps == 0 || ilqr_steps > horizon {
            return Err(Error::Config(format!(
                "split must compute between 1 and {horizon} backward steps, got {ilqr_steps}"
            )));
        }
        Ok(Self {
            ilqr_steps,
            horizon,
        })
    }

    /// Parses `"S:P"` (computed : predicted).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("split {text:?} is not of the form S:P"));
        let (s, p) = text.split_once(':').ok_or_else(bad)?;
        let s: usize = s.trim().parse().map_err(|_| bad())?;
        let p: usize = p.trim().parse().map_err(|_| bad())?;
        Self::new(s, s + p)
    }

    /// Split that computes everything.
    pub fn full(horizon: usize) -> Result<Self> {
        Self::new(horizon, horizon)
    }

    pub fn ilqr_steps(&self) -> usize {
        self.ilqr_steps
    }

    pub fn tf_steps(&self) -> usize {
        self.horizon - self.ilqr_steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.ilqr_steps, self.tf_steps())
    }
}

/// Gain strategy that computes the last `s` steps and predicts the rest.
///
/// The expected-improvement pair only covers the computed suffix, since the
/// predictor supplies no Q-expansions.
pub struct QuattroBackward<'p, T: Real> {
    pub predictor: &'p dyn GainPredictor<T>,
    pub split: SplitSpec,
}

impl<T: Real> GainStrategy<T> for QuattroBackward<'_, T> {
    fn compute<M: SystemModel<T> + ?Sized>(
        &self,
        model: &M,
        cost: &CostModel<T>,
        traj: &Trajectory<T>,
        mu: T,
    ) -> Result<GainComputation<T>> {
        let horizon = traj.horizon();
        if self.split.horizon() != horizon {
            return Err(Error::Config(format!(
                "split {} does not cover horizon {horizon}",
                self.split
            )));
        }
        let started = Instant::now();
        let start = horizon - self.split.ilqr_steps();
        let partial = backward_pass(model, cost, traj, start, mu)?;
        let backward_time = started.elapsed();
        if start == 0 {
            return Ok(GainComputation {
                gains: partial.gains,
                expected: partial.expected,
                backward_steps: partial.steps,
                predicted_steps: 0,
                backward_time,
                predict_time: Duration::ZERO,
            });
        }

        let predict_started = Instant::now();
        let predicted = self
            .predictor
            .predict(&traj.states[..horizon], &partial.gains)
            .and_then(|prefix| {
                prefix.check_shape(start, model.control_dim(), model.state_dim())?;
                if !prefix.is_finite() {
                    return Err(Error::Predictor("non-finite predicted gains".into()));
                }
                Ok(prefix)
            });
        let predict_time = predict_started.elapsed();

        match predicted {
            Ok(prefix) => Ok(GainComputation {
                gains: GainSequence::concat(&prefix, &partial.gains),
                expected: partial.expected,
                backward_steps: partial.steps,
                predicted_steps: start,
                backward_time,
                predict_time,
            }),
            Err(e) => {
                log::warn!("gain predictor failed ({e}); falling back to a full backward pass");
                let fallback_started = Instant::now();
                let full = backward_pass(model, cost, traj, 0, mu)?;
                Ok(GainComputation {
                    gains: full.gains,
                    expected: full.expected,
                    backward_steps: partial.steps + full.steps,
                    predicted_steps: 0,
                    backward_time: backward_time + fallback_started.elapsed(),
                    predict_time,
                })
            }
        }
    }
}

/// Result of a single gain computation plus line search.
#[derive(Debug, Clone)]
pub struct IterationOutcome<T: Real> {
    /// The accepted trajectory, or the nominal one when no step was accepted.
    pub trajectory: Trajectory<T>,
    pub alpha: Option<T>,
    pub computation: GainComputation<T>,
}

/// One iteration with an arbitrary gain strategy.
pub fn iterate<T, M, G>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    strategy: &G,
    mu: T,
    schedule: &[T],
) -> Result<IterationOutcome<T>>
where
    T: Real,
    M: SystemModel<T> + ?Sized,
    G: GainStrategy<T> + ?Sized,
{
    let computation = strategy.compute(model, cost, traj, mu)?;
    let (alpha, trajectory) = match line_search(model, cost, traj, &computation.gains, schedule) {
        Some((alpha, candidate)) => (Some(alpha), candidate),
        None => (None, traj.clone()),
    };
    Ok(IterationOutcome {
        trajectory,
        alpha,
        computation,
    })
}

/// Partial backward pass, prediction, concatenation, forward pass with line search.
#[allow(clippy::too_many_arguments)]
pub fn quattro_iteration<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    traj: &Trajectory<T>,
    predictor: &dyn GainPredictor<T>,
    split: SplitSpec,
    mu: T,
    schedule: &[T],
) -> Result<IterationOutcome<T>> {
    iterate(
        model,
        cost,
        traj,
        &QuattroBackward { predictor, split },
        mu,
        schedule,
    )
}

const RICCATI_MAX_ITERS: usize = 10_000;
const RICCATI_TOL: f64 = 1e-10;
const EQUILIBRIUM_TOL: f64 = 1e-6;

/// Infinite-horizon discrete LQR gain at an equilibrium, by fixed-point
/// iteration of the Riccati map on the linearization. The returned `K` acts
/// as `u = u_ref − K (x − x_ref)`.
pub fn lqr_gain<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x_ref: &DVector<T>,
    u_ref: &DVector<T>,
) -> Result<DMatrix<T>> {
    let lin = equilibrium_linearization(model, x_ref, u_ref)?;
    Ok(discrete_riccati(&lin.a, &lin.b, cost.q(), cost.r())?.1)
}

fn equilibrium_linearization<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    x_ref: &DVector<T>,
    u_ref: &DVector<T>,
) -> Result<LinearizedStep<T>> {
    let next = model.step(x_ref, u_ref)?;
    let offset = (&next - x_ref).amax().to_f64_lossy();
    if offset >= EQUILIBRIUM_TOL {
        return Err(Error::InvalidInput(format!(
            "LQR reference is not an equilibrium (drift {offset:e} per step)"
        )));
    }
    model.linearize(x_ref, u_ref)
}

/// Replaces the terminal weight with the infinite-horizon cost-to-go
/// matrix of the LQR problem at the cost's reference point.
pub fn with_lqr_terminal<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
) -> Result<CostModel<T>> {
    let lin = equilibrium_linearization(model, cost.x_ref(0), cost.u_ref())?;
    let (s, _) = discrete_riccati(&lin.a, &lin.b, cost.q(), cost.r())?;
    cost.with_terminal_weight(s)
}

/// Fixed-point iteration `S ← Q + AᵀSA − AᵀSB (R + BᵀSB)⁻¹ BᵀSA` from `S = Q`;
/// returns the stationary `S` and its gain `K = (R + BᵀSB)⁻¹ BᵀSA`.
pub fn discrete_riccati<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let half = T::lit(0.5);
    let gain_of = |s: &DMatrix<T>| -> Result<DMatrix<T>> {
        let bt_s = b.transpose() * s;
        let chol = (r + &bt_s * b).cholesky().ok_or_else(|| {
            Error::InvalidInput("Riccati iteration lost positive definiteness".into())
        })?;
        Ok(chol.solve(&(&bt_s * a)))
    };
    let mut s = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let gain = gain_of(&s)?;
        let at_s = a.transpose() * &s;
        let updated = q + &at_s * a - &at_s * b * &gain;
        let updated = (&updated + updated.transpose()) * half;
        if !updated.iter().all(|v| v.is_finite_value()) {
            return Err(Error::InvalidInput("Riccati iteration diverged".into()));
        }
        let change = (&updated - &s).amax().to_f64_lossy();
        let scale = updated.amax().to_f64_lossy().max(1.0);
        s = updated;
        if change < RICCATI_TOL.max(T::default_epsilon().to_f64_lossy() * 16.0 * scale) {
            let gain = gain_of(&s)?;
            return Ok((s, gain));
        }
    }
    Err(Error::InvalidInput(format!(
        "Riccati iteration did not converge in {RICCATI_MAX_ITERS} iterations"
    )))
}

/// Linear state feedback around a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrController<T: Real> {
    pub gain: DMatrix<T>,
    pub x_ref: DVector<T>,
    pub u_ref: DVector<T>,
}

impl<T: Real> LqrController<T> {
    pub fn new<M: SystemModel<T> + ?Sized>(model: &M, cost: &CostModel<T>) -> Result<Self> {
        let x_ref = cost.x_ref(0).clone();
        let u_ref = cost.u_ref().clone();
        let gain = lqr_gain(model, cost, &x_ref, &u_ref)?;
        Ok(Self { gain, x_ref, u_ref })
    }

    pub fn control(&self, x: &DVector<T>) -> DVector<T> {
        &self.u_ref - &self.gain * (x - &self.x_ref)
    }
}

/// Cost thresholds of the blender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendConfig<T> {
    pub low: T,
    pub high: T,
}

impl<T: Real> Default for BlendConfig<T> {
    fn default() -> Self {
        Self {
            low: T::lit(0.5),
            high: T::lit(5.0),
        }
    }
}

impl<T: Real> BlendConfig<T> {
    pub fn new(low: T, high: T) -> Result<Self> {
        let cfg = Self { low, high };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low > T::zero() && self.low < self.high) || !self.high.is_finite_value() {
            return Err(Error::Config(format!(
                "blend thresholds need 0 < low < high, got {} and {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// 0 below `low`, 1 above `high`, linear in `|J|` in between.
pub fn blend_weight<T: Real>(cost: T, cfg: &BlendConfig<T>) -> T {
    let j = cost.abs();
    if j <= cfg.low {
        T::zero()
    } else if j >= cfg.high {
        T::one()
    } else {
        (j - cfg.low) / (cfg.high - cfg.low)
    }
}

/// `w·u_tf + (1 − w)·u_lqr`.
pub fn blended_control<T: Real>(u_tf: &DVector<T>, u_lqr: &DVector<T>, w: T) -> DVector<T> {
    u_tf * w + u_lqr * (T::one() - w)
}
