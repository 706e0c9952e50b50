use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::TransformerConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Affine map `y = x W + b` with `W` stored row-major as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Applies the map to one row vector. Each output accumulates
    /// `b_j + Σ_i x_i W_ij` in increasing `i`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }

    fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: vec![T::one(); width],
            beta: vec![T::zero(); width],
        }
    }

    fn cast<U: Real>(&self) -> LayerNorm<U> {
        LayerNorm {
            gamma: cast_vec(&self.gamma),
            beta: cast_vec(&self.beta),
        }
    }
}

/// One pre-norm decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub w_q: Linear<T>,
    pub w_k: Linear<T>,
    pub w_v: Linear<T>,
    pub w_o: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub ff_up: Linear<T>,
    pub ff_down: Linear<T>,
}

/// Dataset statistics used to standardize inputs and de-standardize outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T> {
    pub state_mean: Vec<T>,
    pub state_std: Vec<T>,
    pub gain_mean: Vec<T>,
    pub gain_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<T> {
    pub config: TransformerConfig,
    pub normalization: Normalization<T>,
    /// `n_x → d_model / 2`
    pub state_embed: Linear<T>,
    /// `(g + 1) → d_model / 2`; the extra input is the known-gain indicator.
    pub gain_embed: Linear<T>,
    pub layers: Vec<DecoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
    /// `d_model → g`
    pub head: Linear<T>,
}

impl<T: Real> TransformerWeights<T> {
    /// All-zero linear maps, identity layer norms and unit statistics.
    pub fn zeros(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let layer = DecoderLayer {
            ln1: LayerNorm::identity(d),
            w_q: Linear::zeros(d, d),
            w_k: Linear::zeros(d, d),
            w_v: Linear::zeros(d, d),
            w_o: Linear::zeros(d, d),
            ln2: LayerNorm::identity(d),
            ff_up: Linear::zeros(d, config.d_ff),
            ff_down: Linear::zeros(config.d_ff, d),
        };
        Ok(Self {
            config,
            normalization: Normalization {
                state_mean: vec![T::zero(); config.state_dim],
                state_std: vec![T::one(); config.state_dim],
                gain_mean: vec![T::zero(); config.gain_dim],
                gain_std: vec![T::one(); config.gain_dim],
            },
            state_embed: Linear::zeros(config.state_dim, config.half_model()),
            gain_embed: Linear::zeros(config.gain_dim + 1, config.half_model()),
            layers: vec![layer; config.n_layers],
            final_norm: LayerNorm::identity(d),
            head: Linear::zeros(d, config.gain_dim),
        })
    }

    /// Deterministic pseudo-random parameters: linear weights uniform in
    /// `±1/√fan_in`, layer-norm scales in `1 ± 0.1`, shifts and biases in `±0.1`.
    /// Statistics stay at zero mean and unit deviation.
    pub fn seeded(config: TransformerConfig, seed: u64) -> Result<Self> {
        let mut weights = Self::zeros(config)?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        for (name, (tensor, fan_in_scale)) in weights.tensors_mut().into_iter().skip(4) {
            let (center, spread) = if name.ends_with(".gamma") {
                (1.0, 0.1)
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                (0.0, 0.1)
            } else {
                (0.0, fan_in_scale)
            };
            for v in tensor.iter_mut() {
                let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                *v = T::lit(center + (2.0 * unit - 1.0) * spread);
            }
        }
        Ok(weights)
    }

    /// Every parameter tensor in file order, with its name.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("state_mean".into(), &self.normalization.state_mean),
            ("state_std".into(), &self.normalization.state_std),
            ("gain_mean".into(), &self.normalization.gain_mean),
            ("gain_std".into(), &self.normalization.gain_std),
        ];
        push_linear(&mut out, "state_embed", &self.state_embed);
        push_linear(&mut out, "gain_embed", &self.gain_embed);
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push_norm(&mut out, &format!("{p}.ln1"), &layer.ln1);
            push_linear(&mut out, &format!("{p}.attn.q"), &layer.w_q);
            push_linear(&mut out, &format!("{p}.attn.k"), &layer.w_k);
            push_linear(&mut out, &format!("{p}.attn.v"), &layer.w_v);
            push_linear(&mut out, &format!("{p}.attn.o"), &layer.w_o);
            push_norm(&mut out, &format!("{p}.ln2"), &layer.ln2);
            push_linear(&mut out, &format!("{p}.ffn.up"), &layer.ff_up);
            push_linear(&mut out, &format!("{p}.ffn.down"), &layer.ff_down);
        }
        push_norm(&mut out, "final_norm", &self.final_norm);
        push_linear(&mut out, "head", &self.head);
        out
    }

    /// Mutable view of [`Self::tensors`]; the second tuple field is the
    /// `1/√fan_in` init scale for weight matrices and 1 otherwise.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, (&mut Vec<T>, f64))> {
        fn linear<'a, T>(
            out: &mut Vec<(String, (&'a mut Vec<T>, f64))>,
            name: &str,
            l: &'a mut Linear<T>,
        ) {
            let scale = 1.0 / (l.inputs as f64).sqrt();
            out.push((format!("{name}.weight"), (&mut l.weight, scale)));
            out.push((format!("{name}.bias"), (&mut l.bias, 1.0)));
        }
        fn norm<'a, T>(
            out: &mut Vec<(String, (&'a mut Vec<T>, f64))>,
            name: &str,
            n: &'a mut LayerNorm<T>,
        ) {
            out.push((format!("{name}.gamma"), (&mut n.gamma, 1.0)));
            out.push((format!("{name}.beta"), (&mut n.beta, 1.0)));
        }
        let mut out = vec![
            (
                "state_mean".to_string(),
                (&mut self.normalization.state_mean, 1.0),
            ),
            (
                "state_std".to_string(),
                (&mut self.normalization.state_std, 1.0),
            ),
            (
                "gain_mean".to_string(),
                (&mut self.normalization.gain_mean, 1.0),
            ),
            (
                "gain_std".to_string(),
                (&mut self.normalization.gain_std, 1.0),
            ),
        ];
        linear(&mut out, "state_embed", &mut self.state_embed);
        linear(&mut out, "gain_embed", &mut self.gain_embed);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            norm(&mut out, &format!("{p}.ln1"), &mut layer.ln1);
            linear(&mut out, &format!("{p}.attn.q"), &mut layer.w_q);
            linear(&mut out, &format!("{p}.attn.k"), &mut layer.w_k);
            linear(&mut out, &format!("{p}.attn.v"), &mut layer.w_v);
            linear(&mut out, &format!("{p}.attn.o"), &mut layer.w_o);
            norm(&mut out, &format!("{p}.ln2"), &mut layer.ln2);
            linear(&mut out, &format!("{p}.ffn.up"), &mut layer.ff_up);
            linear(&mut out, &format!("{p}.ffn.down"), &mut layer.ff_down);
        }
        norm(&mut out, "final_norm", &mut self.final_norm);
        linear(&mut out, "head", &mut self.head);
        out
    }

    /// Checks tensor sizes against the config and that deviations are positive.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::zeros(self.config)?;
        for ((name, have), (_, want)) in self.tensors().into_iter().zip(expected.tensors()) {
            if have.len() != want.len() {
                return Err(Error::Config(format!(
                    "tensor {name} has {} entries, expected {}",
                    have.len(),
                    want.len()
                )));
            }
            if !have.iter().all(|v| v.is_finite_value()) {
                return Err(Error::Config(format!(
                    "tensor {name} has non-finite entries"
                )));
            }
        }
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Config(format!(
                "{} decoder layers, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let n = &self.normalization;
        for (name, std) in [("state_std", &n.state_std), ("gain_std", &n.gain_std)] {
            if std.iter().any(|s| !(*s > T::zero())) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        Ok(())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> TransformerWeights<U> {
        TransformerWeights {
            config: self.config,
            normalization: Normalization {
                state_mean: cast_vec(&self.normalization.state_mean),
                state_std: cast_vec(&self.normalization.state_std),
                gain_mean: cast_vec(&self.normalization.gain_mean),
                gain_std: cast_vec(&self.normalization.gain_std),
            },
            state_embed: self.state_embed.cast(),
            gain_embed: self.gain_embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| DecoderLayer {
                    ln1: l.ln1.cast(),
                    w_q: l.w_q.cast(),
                    w_k: l.w_k.cast(),
                    w_v: l.w_v.cast(),
                    w_o: l.w_o.cast(),
                    ln2: l.ln2.cast(),
                    ff_up: l.ff_up.cast(),
                    ff_down: l.ff_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            head: self.head.cast(),
        }
    }
}

fn push_linear<'a, T>(out: &mut Vec<(String, &'a [T])>, name: &str, l: &'a Linear<T>) {
    out.push((format!("{name}.weight"), &l.weight));
    out.push((format!("{name}.bias"), &l.bias));
}

fn push_norm<'a, T>(out: &mut Vec<(String, &'a [T])>, name: &str, n: &'a LayerNorm<T>) {
    out.push((format!("{name}.gamma"), &n.gamma));
    out.push((format!("{name}.beta"), &n.beta));
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::lit(x.to_f64_lossy())).collect()
}
