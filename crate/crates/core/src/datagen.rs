//! Initial-state sampling and QDTA training datasets.
//!
//! # Sampling
//!
//! Grid mode takes the Cartesian product of `low + j·step` per free
//! dimension (last value snapped to `high`), first dimension slowest.
//!
//! LHS mode uses SplitMix64 seeded with the given seed. For each free
//! dimension in order it draws a Fisher-Yates permutation of `0..N`
//! (`i` from `N−1` down to 1, swap with `j = (next_u64 · (i+1)) >> 64`),
//! then one uniform per sample, `(next_u64 >> 11) · 2⁻⁵³`. Sample `n`
//! lands at `low + (perm[n] + uniform) / N · (high − low)`.
//!
//! # QDTA layout
//!
//! ```text
//! "QDTA"  u32 version (= 1)  u32 system_id (1 cart-pole, 2 quadrotor)
//! u32 n_x  u32 n_u  u32 T  u64 record_count
//! per record:
//!     u32 mpc_step  u32 iter  u8 status (1 = the solve converged)
//!     f32 X[(T+1)·n_x]  f32 k[T·n_u]  f32 K[T·n_u·n_x]  f32 U[T·n_u]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;

use crate::binio::{self, put_f32s, put_u32, put_u64, to_u32, AtomicWriter, Reader};
use crate::cost::CostModel;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::ilqr::GainSequence;
use crate::mpc::{run_mpc, ControllerKind, Episode, MpcConfig};
use crate::scalar::Real;

pub const QDTA_MAGIC: &[u8; 4] = b"QDTA";
pub const QDTA_VERSION: u32 = 1;
const COUNT_OFFSET: u64 = 24;

/// Sampled coordinate of the state vector and its range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimRange {
    pub index: usize,
    pub low: f64,
    pub high: f64,
}

impl DimRange {
    pub fn new(index: usize, low: f64, high: f64) -> Self {
        Self { index, low, high }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMode {
    Grid { step: f64 },
    Lhs { count: usize, seed: u64 },
}

/// Which coordinates vary and how; all others stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    pub state_dim: usize,
    pub dims: Vec<DimRange>,
    pub mode: SamplingMode,
}

impl SamplingSpec {
    /// Cart position and pole angle on `[−0.5, 0.5]` in steps of 0.05.
    pub fn cartpole_grid() -> Self {
        Self {
            state_dim: 4,
            dims: vec![DimRange::new(0, -0.5, 0.5), DimRange::new(1, -0.5, 0.5)],
            mode: SamplingMode::Grid { step: 0.05 },
        }
    }

    /// Position and attitude ranges for quadrotor starts; velocities zero.
    pub fn quadrotor_lhs(count: usize, seed: u64) -> Self {
        Self {
            state_dim: 12,
            dims: vec![
                DimRange::new(0, -0.3, 0.3),
                DimRange::new(1, -0.3, 0.3),
                DimRange::new(2, 0.2, 0.5),
                DimRange::new(3, -0.2, 0.2),
                DimRange::new(4, -0.2, 0.2),
                DimRange::new(5, -0.5, 0.5),
            ],
            mode: SamplingMode::Lhs { count, seed },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.dims {
            if d.index >= self.state_dim {
                return Err(Error::Config(format!(
                    "sampled index {} outside state dimension {}",
                    d.index, self.state_dim
                )));
            }
            if !(d.low.is_finite() && d.high.is_finite() && d.low <= d.high) {
                return Err(Error::Config(format!(
                    "bounds for index {} need low <= high, got [{}, {}]",
                    d.index, d.low, d.high
                )));
            }
        }
        match self.mode {
            SamplingMode::Grid { step } if !(step > 0.0 && step.is_finite()) => Err(Error::Config(
                format!("grid step must be positive, got {step}"),
            )),
            SamplingMode::Lhs { count: 0, .. } => {
                Err(Error::Config("LHS count must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn states(&self) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        Ok(match self.mode {
            SamplingMode::Grid { step } => grid_states(self.state_dim, &self.dims, step),
            SamplingMode::Lhs { count, seed } => {
                lhs_states(self.state_dim, &self.dims, count, seed)
            }
        })
    }
}

/// Inclusive grid values on `[low, high]`.
pub fn grid_axis(low: f64, high: f64, step: f64) -> Vec<f64> {
    let span = (high - low) / step;
    let n = (span + 1e-9).floor() as usize + 1;
    let mut values: Vec<f64> = (0..n).map(|j| low + j as f64 * step).collect();
    let last = values.last_mut().expect("at least one value");
    if (high - *last).abs() <= 1e-9 * step {
        *last = high;
    }
    values
}

pub fn grid_states(state_dim: usize, dims: &[DimRange], step: f64) -> Vec<DVector<f64>> {
    let axes: Vec<Vec<f64>> = dims
        .iter()
        .map(|d| grid_axis(d.low, d.high, step))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut x = DVector::zeros(state_dim);
        let mut rest = flat;
        for (d, axis) in dims.iter().zip(&axes).rev() {
            x[d.index] = axis[rest % axis.len()];
            rest /= axis.len();
        }
        out.push(x);
    }
    out
}

fn bounded(rng: &mut SplitMix64, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn lhs_states(
    state_dim: usize,
    dims: &[DimRange],
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut out = vec![DVector::zeros(state_dim); count];
    let n = count as f64;
    for d in dims {
        let mut perm: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let j = bounded(&mut rng, i + 1);
            perm.swap(i, j);
        }
        for (x, &stratum) in out.iter_mut().zip(&perm) {
            let offset = (stratum as f64 + unit(&mut rng)) / n;
            x[d.index] = d.low + offset * (d.high - d.low);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemId {
    CartPole = 1,
    Quadrotor = 2,
}

impl SystemId {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Self::CartPole),
            2 => Ok(Self::Quadrotor),
            other => Err(Error::format(format!("unknown system id {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub system: SystemId,
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: usize,
}

impl DatasetHeader {
    fn record_floats(&self) -> [(usize, &'static str); 4] {
        let (n_x, n_u, t) = (self.state_dim, self.control_dim, self.horizon);
        [
            ((t + 1) * n_x, "X"),
            (t * n_u, "k"),
            (t * n_u * n_x, "K"),
            (t * n_u, "U"),
        ]
    }

    fn encode(&self, count: u64) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32);
        out.extend_from_slice(QDTA_MAGIC);
        put_u32(&mut out, QDTA_VERSION);
        put_u32(&mut out, self.system as u32);
        put_u32(&mut out, to_u32(self.state_dim, "n_x")?);
        put_u32(&mut out, to_u32(self.control_dim, "n_u")?);
        put_u32(&mut out, to_u32(self.horizon, "T")?);
        put_u64(&mut out, count);
        Ok(out)
    }
}

/// One stored iteration, kept in file precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub mpc_step: u32,
    pub iter: u32,
    pub converged: bool,
    pub states: Vec<f32>,
    pub feedforward: Vec<f32>,
    pub feedback: Vec<f32>,
    pub controls: Vec<f32>,
}

impl DatasetRecord {
    pub fn from_episode<T: Real>(ep: &Episode<T>) -> Result<Self> {
        let flat = |vs: &[DVector<T>]| {
            vs.iter()
                .flat_map(|v| v.iter().map(|x| x.to_f32_lossy()))
                .collect()
        };
        let feedback = ep
            .gains
            .feedback
            .iter()
            .flat_map(|m| {
                (0..m.nrows())
                    .flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)].to_f32_lossy()))
            })
            .collect();
        Ok(Self {
            mpc_step: to_u32(ep.mpc_step, "mpc_step")?,
            iter: to_u32(ep.iter, "iter")?,
            converged: ep.converged,
            states: flat(&ep.states),
            feedforward: flat(&ep.gains.feedforward),
            feedback,
            controls: flat(&ep.controls),
        })
    }

    /// Rebuilds the trajectory and gains at scalar `T`.
    pub fn to_episode<T: Real>(&self, header: &DatasetHeader) -> Episode<T> {
        let (n_x, n_u) = (header.state_dim, header.control_dim);
        let vecs = |data: &[f32], width: usize| -> Vec<DVector<T>> {
            data.chunks_exact(width)
                .map(|c| DVector::from_iterator(width, c.iter().map(|&v| T::lit(v as f64))))
                .collect()
        };
        let feedback = self
            .feedback
            .chunks_exact(n_u * n_x)
            .map(|c| DMatrix::from_row_iterator(n_u, n_x, c.iter().map(|&v| T::lit(v as f64))))
            .collect();
        Episode {
            mpc_step: self.mpc_step as usize,
            iter: self.iter as usize,
            converged: self.converged,
            states: vecs(&self.states, n_x),
            controls: vecs(&self.controls, n_u),
            gains: GainSequence {
                feedforward: vecs(&self.feedforward, n_u),
                feedback,
            },
        }
    }

    fn check(&self, header: &DatasetHeader) -> Result<()> {
        let lens = [
            self.states.len(),
            self.feedforward.len(),
            self.feedback.len(),
            self.controls.len(),
        ];
        for ((expected, name), got) in header.record_floats().into_iter().zip(lens) {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    what: name,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, self.mpc_step);
        put_u32(out, self.iter);
        out.push(u8::from(self.converged));
        for part in [
            &self.states,
            &self.feedforward,
            &self.feedback,
            &self.controls,
        ] {
            put_f32s(out, part.iter().copied());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = dataset.header.encode(dataset.records.len() as u64)?;
    for r in &dataset.records {
        r.check(&dataset.header)?;
        r.encode_into(&mut out);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(QDTA_MAGIC)?;
    let version = r.u32("version")?;
    if version != QDTA_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let system = SystemId::from_code(r.u32("system_id")?)?;
    let mut dim = |field: &str| -> Result<usize> {
        let v = r.u32(field)? as usize;
        if v == 0 {
            return Err(Error::format(format!(
                "header field {field} must be positive"
            )));
        }
        Ok(v)
    };
    let header = DatasetHeader {
        system,
        state_dim: dim("n_x")?,
        control_dim: dim("n_u")?,
        horizon: dim("T")?,
    };
    let count = r.u64("record_count")?;
    let sizes = header.record_floats();
    let record_bytes = 9 + sizes.iter().map(|(n, _)| 4 * n).sum::<usize>();
    let mut records = Vec::with_capacity((count as usize).min(r.remaining() / record_bytes + 1));
    for i in 0..count {
        let field = |name: &str| format!("record {i} {name}");
        let mpc_step = r.u32(&field("mpc_step"))?;
        let iter = r.u32(&field("iter"))?;
        let converged = match r.u8(&field("status"))? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::format(format!(
                    "record {i} has invalid status {other}"
                )))
            }
        };
        let mut parts = sizes.iter().map(|&(n, name)| r.f32s(n, &field(name)));
        let states = parts.next().expect("X")?;
        let feedforward = parts.next().expect("k")?;
        let feedback = parts.next().expect("K")?;
        let controls = parts.next().expect("U")?;
        records.push(DatasetRecord {
            mpc_step,
            iter,
            converged,
            states,
            feedforward,
            feedback,
            controls,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!(
            "{} trailing bytes after last record",
            r.remaining()
        )));
    }
    Ok(Dataset { header, records })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    binio::write_atomic(path, &encode_dataset(dataset)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&binio::read_file(path)?)
}

/// Streams records to a QDTA file and patches the count on `finish`.
pub struct DatasetWriter {
    header: DatasetHeader,
    file: AtomicWriter,
    count: u64,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        let mut file = AtomicWriter::create(path)?;
        file.write(&header.encode(0)?)?;
        Ok(Self {
            header,
            file,
            count: 0,
            buf: Vec::new(),
        })
    }

    pub fn push(&mut self, record: &DatasetRecord) -> Result<()> {
        record.check(&self.header)?;
        self.buf.clear();
        record.encode_into(&mut self.buf);
        self.file.write(&self.buf)?;
        self.count += 1;
        Ok(())
    }

    /// Returns the number of records written.
    pub fn finish(self) -> Result<u64> {
        let count = self.count;
        self.file
            .commit_with_patch(COUNT_OFFSET, &count.to_le_bytes())?;
        Ok(count)
    }
}

/// Initial states simulated concurrently per batch; output order is fixed.
const BATCH: usize = 64;

/// Runs vanilla iLQR MPC from every initial state, recording each solver
/// iteration, and writes the records in initial-state order.
pub fn generate_dataset<T: Real, M: SystemModel<T> + ?Sized>(
    model: &M,
    cost: &CostModel<T>,
    system: SystemId,
    initial_states: &[DVector<T>],
    config: &MpcConfig<T>,
    path: &Path,
) -> Result<u64> {
    if config.controller != ControllerKind::Ilqr {
        return Err(Error::Config(
            "datasets are generated with the vanilla iLQR controller".into(),
        ));
    }
    config.validate()?;
    let header = DatasetHeader {
        system,
        state_dim: model.state_dim(),
        control_dim: model.control_dim(),
        horizon: config.horizon,
    };
    let mut writer = DatasetWriter::create(path, header)?;
    for (batch_index, batch) in initial_states.chunks(BATCH).enumerate() {
        let results: Vec<Result<Vec<DatasetRecord>>> = batch
            .par_iter()
            .enumerate()
            .map(|(offset, x0)| {
                let mut records = Vec::new();
                let mut failure = None;
                let mut record = |ep: Episode<T>| match DatasetRecord::from_episode(&ep) {
                    Ok(r) => records.push(r),
                    Err(e) => failure = Some(e),
                };
                let trace = run_mpc(model, cost, config, x0, None, Some(&mut record))?;
                if let Some(e) = failure {
                    return Err(e);
                }
                if let Some(reason) = trace.failure {
                    log::warn!("initial state {}: {reason}", batch_index * BATCH + offset);
                }
                Ok(records)
            })
            .collect();
        for records in results {
            for r in records? {
                writer.push(&r)?;
            }
        }
    }
    writer.finish()
}
