//! Per-phase timing of vanilla and hybrid iterations.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;

use crate::cost::CostModel;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::ilqr::{backward_pass, forward_pass, rollout, GainSequence, Trajectory};
use crate::quattro::{GainPredictor, SplitSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStats {
    pub phase: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Backward recursion steps per repetition (0 for other phases).
    pub steps: usize,
}

impl PhaseStats {
    fn from_samples(phase: impl Into<String>, samples: &[f64], steps: usize) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            phase: phase.into(),
            mean_ms: mean,
            std_ms: std,
            steps,
        }
    }
}

pub fn stats_to_csv(stats: &[PhaseStats]) -> String {
    let mut out = String::from("phase,mean_ms,std_ms,steps\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            s.phase, s.mean_ms, s.std_ms, s.steps
        );
    }
    out
}

fn time_ms<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed().as_secs_f64() * 1e3)
}

fn nominal<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    horizon: usize,
) -> Result<Trajectory<T>> {
    rollout(model, cost, x0, &vec![cost.u_ref().clone(); horizon])
}

/// Times each phase of one vanilla and one hybrid iteration on the nominal
/// trajectory from `x0` under `u_ref`, `repetitions` times. The predict
/// phase is only measured when a predictor is supplied; without one the
/// hybrid forward pass uses the vanilla prefix.
pub fn bench_phases<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    split: SplitSpec,
    predictor: Option<&dyn GainPredictor<T>>,
    repetitions: usize,
) -> Result<Vec<PhaseStats>> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let horizon = split.horizon();
    let traj = nominal(model, cost, x0, horizon)?;
    let mu = T::lit(1e-6);
    let start = horizon - split.ilqr_steps();

    let mut samples: [Vec<f64>; 5] = Default::default();
    let mut steps = [0usize; 2];
    for _ in 0..repetitions {
        let (full, t) = time_ms(|| backward_pass(model, cost, &traj, 0, mu));
        let full = full?;
        samples[0].push(t);
        steps[0] = full.steps;
        let (fwd, t) = time_ms(|| forward_pass(model, cost, &traj, &full.gains, T::one()));
        fwd?;
        samples[1].push(t);

        let (partial, t) = time_ms(|| backward_pass(model, cost, &traj, start, mu));
        let partial = partial?;
        samples[2].push(t);
        steps[1] = partial.steps;
        let prefix = match predictor {
            Some(p) if start > 0 => {
                let (prefix, t) = time_ms(|| p.predict(&traj.states[..horizon], &partial.gains));
                samples[3].push(t);
                prefix?
            }
            _ => full.gains.head(start),
        };
        let gains = GainSequence::concat(&prefix, &partial.gains);
        let (fwd, t) = time_ms(|| forward_pass(model, cost, &traj, &gains, T::one()));
        fwd?;
        samples[4].push(t);
    }

    let mut out = vec![
        PhaseStats::from_samples("vanilla_backward", &samples[0], steps[0]),
        PhaseStats::from_samples("vanilla_forward", &samples[1], 0),
        PhaseStats::from_samples("quattro_backward", &samples[2], steps[1]),
    ];
    if !samples[3].is_empty() {
        out.push(PhaseStats::from_samples("quattro_predict", &samples[3], 0));
    }
    out.push(PhaseStats::from_samples("quattro_forward", &samples[4], 0));
    Ok(out)
}

/// Full backward-pass timing for each horizon in `horizons`.
pub fn bench_backward_sweep<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    x0: &DVector<T>,
    horizons: &[usize],
    repetitions: usize,
) -> Result<Vec<PhaseStats>> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    horizons
        .iter()
        .map(|&horizon| {
            let traj = nominal(model, cost, x0, horizon)?;
            let mut samples = Vec::with_capacity(repetitions);
            let mut steps = 0;
            for _ in 0..repetitions {
                let (pass, t) = time_ms(|| backward_pass(model, cost, &traj, 0, T::lit(1e-6)));
                steps = pass?.steps;
                samples.push(t);
            }
            Ok(PhaseStats::from_samples(
                format!("vanilla_backward_T{horizon}"),
                &samples,
                steps,
            ))
        })
        .collect()
}
