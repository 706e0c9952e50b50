//! QTFW weight files.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "QTFW"  u32 version (= 1)
//! u32 state_dim, gain_dim, horizon, prompt_len, d_model, n_head, n_layers, d_ff
//! f32 state_mean[state_dim] state_std[state_dim] gain_mean[gain_dim] gain_std[gain_dim]
//! f32 tensors, row-major, in `TransformerWeights::tensors` order:
//!     state_embed W,b  gain_embed W,b
//!     per layer: ln1 γ,β  W_q,b_q  W_k,b_k  W_v,b_v  W_o,b_o  ln2 γ,β  W_ff1,b_ff1  W_ff2,b_ff2
//!     final norm γ,β  head W,b
//! ```

use std::path::Path;

use super::{TransformerConfig, TransformerWeights};
use crate::binio::{self, put_f32s, put_u32, to_u32, Reader};
use crate::error::{Error, Result};

pub const QTFW_MAGIC: &[u8; 4] = b"QTFW";
pub const QTFW_VERSION: u32 = 1;

const HEADER_FIELDS: [&str; 8] = [
    "state_dim",
    "gain_dim",
    "horizon",
    "prompt_len",
    "d_model",
    "n_head",
    "n_layers",
    "d_ff",
];

pub fn encode_weights(weights: &TransformerWeights<f32>) -> Result<Vec<u8>> {
    weights.validate()?;
    let c = &weights.config;
    let mut out = Vec::new();
    out.extend_from_slice(QTFW_MAGIC);
    put_u32(&mut out, QTFW_VERSION);
    let dims = [
        c.state_dim,
        c.gain_dim,
        c.horizon,
        c.prompt_len,
        c.d_model,
        c.n_head,
        c.n_layers,
        c.d_ff,
    ];
    for (field, v) in HEADER_FIELDS.iter().zip(dims) {
        put_u32(&mut out, to_u32(v, field)?);
    }
    for (_, tensor) in weights.tensors() {
        put_f32s(&mut out, tensor.iter().copied());
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<TransformerWeights<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(QTFW_MAGIC)?;
    let version = r.u32("version")?;
    if version != QTFW_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 8];
    for (field, slot) in HEADER_FIELDS.iter().zip(dims.iter_mut()) {
        *slot = r.u32(field)? as usize;
    }
    let config = TransformerConfig {
        state_dim: dims[0],
        gain_dim: dims[1],
        horizon: dims[2],
        prompt_len: dims[3],
        d_model: dims[4],
        n_head: dims[5],
        n_layers: dims[6],
        d_ff: dims[7],
    };
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Format(msg),
        other => other,
    })?;

    let mut weights = TransformerWeights::zeros(config)?;
    for (name, (tensor, _)) in weights.tensors_mut() {
        *tensor = r.f32s(tensor.len(), &name)?;
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor head.bias",
            r.remaining()
        )));
    }
    for (name, std) in [
        ("state_std", &weights.normalization.state_std),
        ("gain_std", &weights.normalization.gain_std),
    ] {
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::format(format!(
                "tensor {name} has non-positive entries"
            )));
        }
    }
    Ok(weights)
}

pub fn save_weights(path: impl AsRef<Path>, weights: &TransformerWeights<f32>) -> Result<()> {
    binio::write_atomic(path.as_ref(), &encode_weights(weights)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<TransformerWeights<f32>> {
    decode_weights(&binio::read_file(path.as_ref())?)
}
