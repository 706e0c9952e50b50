//! QTGV golden-vector files: one predictor input with the output the
//! exporting trainer computed for it.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "QTGV"  u32 version (= 1)
//! u32 state_dim, gain_dim, horizon, suffix_len
//! f32 states[horizon][state_dim]                  time order
//! f32 suffix[suffix_len][gain_dim]                stacked gains, times T−s..T−1
//! f32 expected[horizon − suffix_len][gain_dim]    stacked gains, times 0..T−s−1
//! ```

use std::path::Path;

use nalgebra::DVector;

use super::model::{stack_gains, unstack_gains};
use crate::binio::{self, put_f32s, put_u32, to_u32, Reader};
use crate::error::{Error, Result};
use crate::ilqr::GainSequence;

pub const QTGV_MAGIC: &[u8; 4] = b"QTGV";
pub const QTGV_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenVectors {
    pub states: Vec<DVector<f32>>,
    pub suffix: GainSequence<f32>,
    pub expected: GainSequence<f32>,
}

impl GoldenVectors {
    fn dims(&self) -> Result<(usize, usize, usize)> {
        let horizon = self.states.len();
        let state_dim = self.states.first().map_or(0, |x| x.len());
        let control_dim = self.suffix.feedforward.first().map_or(0, |k| k.len());
        if horizon == 0 || state_dim == 0 || control_dim == 0 || self.suffix.is_empty() {
            return Err(Error::InvalidInput(
                "golden vectors need states and a non-empty suffix".into(),
            ));
        }
        if self.states.iter().any(|x| x.len() != state_dim) {
            return Err(Error::InvalidInput("golden states differ in length".into()));
        }
        if self.suffix.len() + self.expected.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "golden suffix plus expected length",
                expected: horizon,
                got: self.suffix.len() + self.expected.len(),
            });
        }
        self.suffix
            .check_shape(self.suffix.len(), control_dim, state_dim)?;
        self.expected
            .check_shape(self.expected.len(), control_dim, state_dim)?;
        Ok((state_dim, control_dim, horizon))
    }
}

fn put_gains(out: &mut Vec<u8>, gains: &GainSequence<f32>) {
    for (k, m) in gains.feedforward.iter().zip(&gains.feedback) {
        put_f32s(out, stack_gains(k, m));
    }
}

fn read_gains(
    r: &mut Reader<'_>,
    len: usize,
    n_u: usize,
    n_x: usize,
    name: &str,
) -> Result<GainSequence<f32>> {
    let flat = r.f32s(len * n_u * (n_x + 1), name)?;
    let mut gains = GainSequence::zeros(0, n_u, n_x);
    for chunk in flat.chunks_exact(n_u * (n_x + 1)) {
        let (k, m) = unstack_gains(chunk, n_u, n_x)?;
        gains.feedforward.push(k);
        gains.feedback.push(m);
    }
    Ok(gains)
}

pub fn encode_golden(golden: &GoldenVectors) -> Result<Vec<u8>> {
    let (n_x, n_u, horizon) = golden.dims()?;
    let mut out = Vec::new();
    out.extend_from_slice(QTGV_MAGIC);
    put_u32(&mut out, QTGV_VERSION);
    put_u32(&mut out, to_u32(n_x, "state_dim")?);
    put_u32(&mut out, to_u32(n_u * (n_x + 1), "gain_dim")?);
    put_u32(&mut out, to_u32(horizon, "horizon")?);
    put_u32(&mut out, to_u32(golden.suffix.len(), "suffix_len")?);
    for x in &golden.states {
        put_f32s(&mut out, x.iter().copied());
    }
    put_gains(&mut out, &golden.suffix);
    put_gains(&mut out, &golden.expected);
    Ok(out)
}

pub fn decode_golden(bytes: &[u8]) -> Result<GoldenVectors> {
    let mut r = Reader::new(bytes);
    r.magic(QTGV_MAGIC)?;
    let version = r.u32("version")?;
    if version != QTGV_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let n_x = r.u32("state_dim")? as usize;
    let gain_dim = r.u32("gain_dim")? as usize;
    let horizon = r.u32("horizon")? as usize;
    let suffix_len = r.u32("suffix_len")? as usize;
    if n_x == 0 || gain_dim == 0 || !gain_dim.is_multiple_of(n_x + 1) {
        return Err(Error::format(format!(
            "header field gain_dim {gain_dim} does not fit state_dim {n_x}"
        )));
    }
    if suffix_len == 0 || suffix_len > horizon {
        return Err(Error::format(format!(
            "header field suffix_len {suffix_len} outside [1, {horizon}]"
        )));
    }
    let n_u = gain_dim / (n_x + 1);
    let states = r
        .f32s(horizon * n_x, "states")?
        .chunks_exact(n_x)
        .map(DVector::from_column_slice)
        .collect();
    let suffix = read_gains(&mut r, suffix_len, n_u, n_x, "suffix")?;
    let expected = read_gains(&mut r, horizon - suffix_len, n_u, n_x, "expected")?;
    if r.remaining() != 0 {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor expected",
            r.remaining()
        )));
    }
    Ok(GoldenVectors {
        states,
        suffix,
        expected,
    })
}

pub fn save_golden(path: impl AsRef<Path>, golden: &GoldenVectors) -> Result<()> {
    binio::write_atomic(path.as_ref(), &encode_golden(golden)?)
}

pub fn load_golden(path: impl AsRef<Path>) -> Result<GoldenVectors> {
    decode_golden(&binio::read_file(path.as_ref())?)
}
