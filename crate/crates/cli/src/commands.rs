use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DVector;
use quattro_core::bench::{bench_backward_sweep, bench_phases, stats_to_csv};
use quattro_core::cost::CostModel;
use quattro_core::datagen::{generate_dataset, read_dataset, SamplingMode, SamplingSpec, SystemId};
use quattro_core::ilqr::{rollout, SolverOptions};
use quattro_core::mpc::{compare_iteration, evaluate_mse, run_mpc, ControllerKind, MpcConfig};
use quattro_core::quattro::{
    BlendConfig, GainPredictor, OraclePredictor, SplitSpec, TransformerPredictor,
};
use quattro_core::write_atomic;

use crate::config::{steps_for, FileConfig, Plant, SystemKind};
use crate::{BenchArgs, EvalArgs, GenDataArgs, Problem, RunArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// The problem definition after merging flags with the config file.
struct Resolved {
    kind: SystemKind,
    plant: Plant,
    cost: CostModel<f64>,
    mpc: MpcConfig<f64>,
    seed: u64,
}

fn resolve(p: Problem, file: &FileConfig, fallback_system: Option<SystemKind>) -> Result<Resolved> {
    let kind = match file.pick(p.system, "system")?.or(fallback_system) {
        Some(k) => k,
        None => return Err(usage("missing required option --system")),
    };
    let plant = Plant::new(kind);
    let cost = plant.cost(
        file.pick(p.q, "q")?,
        file.pick(p.r, "r")?,
        file.pick(p.qf_scale, "qf_scale")?,
    )?;
    let mut mpc = match kind {
        SystemKind::CartPole => MpcConfig::cartpole(),
        SystemKind::Quadrotor => MpcConfig::quadrotor(),
    };
    if let Some(h) = file.pick(p.horizon, "horizon")? {
        if h == 0 {
            return Err(usage("horizon must be at least 1"));
        }
        mpc.horizon = h;
        // keep the default prompt length, clipped to the new horizon
        let s = mpc.split.ilqr_steps().min(h);
        mpc.split = SplitSpec::new(s, h).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(text) = file.pick(p.split, "split")? {
        let split = SplitSpec::parse(&text).map_err(|e| usage(e.to_string()))?;
        if split.horizon() != mpc.horizon {
            return Err(usage(format!(
                "split {split} covers {} steps but the horizon is {}",
                split.horizon(),
                mpc.horizon
            )));
        }
        mpc.split = split;
    }
    let mut solver = SolverOptions::default();
    if let Some(n) = file.pick(p.max_iters, "max_iters")? {
        solver.max_iters = n;
    }
    if let Some(t) = file.pick(p.tolerance, "tolerance")? {
        solver.tolerance = t;
    }
    solver.validate().map_err(|e| usage(e.to_string()))?;
    mpc.solver = solver;
    Ok(Resolved {
        kind,
        plant,
        cost,
        mpc,
        seed: file.pick(p.seed, "seed")?.unwrap_or(0),
    })
}

fn load_predictor(path: &Path, horizon: usize, state_dim: usize) -> Result<TransformerPredictor> {
    let predictor =
        TransformerPredictor::load(path).with_context(|| format!("loading {}", path.display()))?;
    let c = predictor.transformer().config();
    if c.horizon != horizon || c.state_dim != state_dim {
        return Err(usage(format!(
            "weights are for horizon {} and state dimension {}, the problem has {horizon} and {state_dim}",
            c.horizon, c.state_dim
        )));
    }
    Ok(predictor)
}

fn x0_for(plant: &Plant, given: Option<crate::config::FloatList>) -> Result<DVector<f64>> {
    match given {
        None => Ok(plant.default_x0()),
        Some(list) => {
            let n = plant.model().state_dim();
            if list.0.len() != n {
                return Err(usage(format!("x0 needs {n} entries, got {}", list.0.len())));
            }
            Ok(DVector::from_vec(list.0))
        }
    }
}

pub fn gen_data(args: GenDataArgs, file: &FileConfig) -> Result<()> {
    let out: PathBuf = required(file.pick(args.out, "out")?, "out")?;
    let mut r = resolve(args.problem, file, None)?;
    let sampling: String = file
        .pick(args.sampling, "sampling")?
        .unwrap_or_else(|| "grid".into());
    let mut spec = match r.kind {
        SystemKind::CartPole => SamplingSpec::cartpole_grid(),
        SystemKind::Quadrotor => SamplingSpec::quadrotor_lhs(2000, r.seed),
    };
    let count = file.pick(args.count, "count")?;
    spec.mode = match sampling.as_str() {
        "grid" => SamplingMode::Grid { step: 0.05 },
        "lhs" => SamplingMode::Lhs {
            count: count.unwrap_or(2000),
            seed: r.seed,
        },
        other => return Err(usage(format!("unknown sampling {other:?} (grid | lhs)"))),
    };
    let states = spec.states().map_err(|e| usage(e.to_string()))?;

    let dt = r.plant.model().dt();
    if let Some(s) = file.pick(args.sim_seconds, "sim_seconds")? {
        r.mpc.sim_steps = steps_for(s, dt)?;
    }
    if let Some(i) = file.pick(args.control_interval, "control_interval")? {
        r.mpc.control_interval = i;
    }
    r.mpc.validate().map_err(|e| usage(e.to_string()))?;
    let system = match r.kind {
        SystemKind::CartPole => SystemId::CartPole,
        SystemKind::Quadrotor => SystemId::Quadrotor,
    };
    let written = generate_dataset(r.plant.model(), &r.cost, system, &states, &r.mpc, &out)
        .with_context(|| format!("generating {}", out.display()))?;
    println!(
        "records={written} initial_states={} out={}",
        states.len(),
        out.display()
    );
    Ok(())
}

pub fn run(args: RunArgs, file: &FileConfig) -> Result<()> {
    let mut r = resolve(args.problem, file, None)?;
    let controller: ControllerKind = file
        .pick(args.controller, "controller")?
        .unwrap_or_else(|| "ilqr".into())
        .parse()
        .map_err(|e: quattro_core::Error| usage(e.to_string()))?;
    r.mpc.controller = controller;
    let weights: Option<PathBuf> = file.pick(args.weights, "weights")?;
    if controller == ControllerKind::Quattro && weights.is_none() {
        return Err(usage("--controller quattro requires --weights"));
    }
    let n_x = r.plant.model().state_dim();
    let predictor = weights
        .as_deref()
        .map(|p| load_predictor(p, r.mpc.horizon, n_x))
        .transpose()?;
    let dt = r.plant.model().dt();
    r.mpc.sim_steps = steps_for(
        file.pick(args.sim_seconds, "sim_seconds")?.unwrap_or(15.0),
        dt,
    )?;
    if let Some(i) = file.pick(args.control_interval, "control_interval")? {
        r.mpc.control_interval = i;
    }
    let defaults = BlendConfig::<f64>::default();
    r.mpc.blend = BlendConfig::new(
        file.pick(args.blend_low, "blend_low")?
            .unwrap_or(defaults.low),
        file.pick(args.blend_high, "blend_high")?
            .unwrap_or(defaults.high),
    )
    .map_err(|e| usage(e.to_string()))?;
    r.mpc.validate().map_err(|e| usage(e.to_string()))?;
    let x0 = x0_for(&r.plant, file.pick(args.x0, "x0")?)?;

    let predictor_ref = predictor.as_ref().map(|p| p as &dyn GainPredictor<f64>);
    let trace = run_mpc(r.plant.model(), &r.cost, &r.mpc, &x0, predictor_ref, None)?;
    if let Some(path) = file.pick::<PathBuf>(args.trace, "trace")? {
        trace
            .write_csv(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let final_state: Vec<String> = trace
        .final_state
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect();
    println!(
        "final_cost={} iterations={} mean_iter_ms={:.4} steps={} final_state={}",
        trace
            .final_cost()
            .map_or("nan".into(), |c| format!("{c:.6e}")),
        trace.total_iterations(),
        trace.mean_iteration_time().as_secs_f64() * 1e3,
        trace.rows.len(),
        final_state.join(",")
    );
    if let Some(reason) = trace.failure {
        anyhow::bail!("simulation stopped early: {reason}");
    }
    Ok(())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn eval(args: EvalArgs, file: &FileConfig) -> Result<()> {
    let data_path: PathBuf = required(file.pick(args.data, "data")?, "data")?;
    let report: PathBuf = required(file.pick(args.report, "report")?, "report")?;
    let oracle = args.oracle || file.pick::<bool>(None, "oracle")?.unwrap_or(false);
    let weights: Option<PathBuf> = file.pick(args.weights, "weights")?;
    if !oracle && weights.is_none() {
        return Err(usage("eval needs --weights or --oracle"));
    }
    let dataset =
        read_dataset(&data_path).with_context(|| format!("reading {}", data_path.display()))?;
    let header = dataset.header;
    let data_kind = match header.system {
        SystemId::CartPole => SystemKind::CartPole,
        SystemId::Quadrotor => SystemKind::Quadrotor,
    };
    let mut problem = args.problem;
    problem.horizon = problem.horizon.or(Some(header.horizon));
    let r = resolve(problem, file, Some(data_kind))?;
    if r.kind != data_kind || r.mpc.horizon != header.horizon {
        return Err(usage("--system/--horizon disagree with the dataset header"));
    }
    let model = r.plant.model();
    let predictor = match (&weights, oracle) {
        (Some(p), false) => Some(load_predictor(p, header.horizon, header.state_dim)?),
        _ => None,
    };
    let mu = r.mpc.solver.mu_init;

    let mut csv = String::from("record,mpc_step,iter,mse\n");
    let mut values = Vec::with_capacity(dataset.records.len());
    for (i, record) in dataset.records.iter().enumerate() {
        let ep = record.to_episode::<f64>(&header);
        let x0 = &ep.states[0];
        let cmp = if oracle {
            let traj = rollout(model, &r.cost, x0, &ep.controls)?;
            let oracle = OraclePredictor::from_backward_pass(model, &r.cost, &traj, mu)?;
            compare_iteration(model, &r.cost, x0, &ep.controls, &oracle, r.mpc.split, mu)
        } else {
            let p = predictor.as_ref().expect("predictor loaded");
            compare_iteration(model, &r.cost, x0, &ep.controls, p, r.mpc.split, mu)
        }
        .with_context(|| format!("record {i}"))?;
        let mse = evaluate_mse(&cmp.full, &cmp.hybrid)?;
        values.push(mse);
        let _ = writeln!(csv, "{i},{},{},{mse:.9e}", record.mpc_step, record.iter);
    }
    write_atomic(&report, csv.as_bytes())
        .with_context(|| format!("writing {}", report.display()))?;

    if values.is_empty() {
        println!("records=0");
        return Ok(());
    }
    values.sort_by(f64::total_cmp);
    println!(
        "records={} min={:.6e} q1={:.6e} median={:.6e} q3={:.6e} max={:.6e}",
        values.len(),
        values[0],
        quantile(&values, 0.25),
        quantile(&values, 0.5),
        quantile(&values, 0.75),
        values[values.len() - 1]
    );
    Ok(())
}

pub fn bench(args: BenchArgs, file: &FileConfig) -> Result<()> {
    let r = resolve(args.problem, file, None)?;
    let repetitions = file.pick(args.repetitions, "repetitions")?.unwrap_or(100);
    if repetitions == 0 {
        return Err(usage("--repetitions must be at least 1"));
    }
    let n_x = r.plant.model().state_dim();
    let predictor = file
        .pick::<PathBuf>(args.weights, "weights")?
        .map(|p| load_predictor(&p, r.mpc.horizon, n_x))
        .transpose()?;
    let x0 = x0_for(&r.plant, file.pick(args.x0, "x0")?)?;
    let model = r.plant.model();
    let predictor_ref = predictor.as_ref().map(|p| p as &dyn GainPredictor<f64>);
    let mut stats = bench_phases(model, &r.cost, &x0, r.mpc.split, predictor_ref, repetitions)?;
    if let Some(sweep) = file.pick(args.sweep, "sweep")? {
        stats.extend(bench_backward_sweep(
            model,
            &r.cost,
            &x0,
            &sweep.0,
            repetitions,
        )?);
    }
    let csv = stats_to_csv(&stats);
    match file.pick::<PathBuf>(args.out, "out")? {
        Some(path) => {
            write_atomic(&path, csv.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
        }
        None => print!("{csv}"),
    }
    Ok(())
}
