use nalgebra::{DMatrix, DVector};

use super::{DecoderLayer, LayerNorm, TransformerConfig, TransformerWeights};
use crate::error::{Error, Result};
use crate::ilqr::GainSequence;
use crate::scalar::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `[k, K row-major]`, length `n_u · (n_x + 1)`.
pub fn stack_gains<T: Real>(k: &DVector<T>, gain: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(k.len() + gain.len());
    out.extend(k.iter().copied());
    for r in 0..gain.nrows() {
        out.extend(gain.row(r).iter().copied());
    }
    out
}

/// Inverse of [`stack_gains`].
pub fn unstack_gains<T: Real>(
    stacked: &[T],
    n_u: usize,
    n_x: usize,
) -> Result<(DVector<T>, DMatrix<T>)> {
    if stacked.len() != n_u * (n_x + 1) {
        return Err(Error::DimensionMismatch {
            what: "stacked gain",
            expected: n_u * (n_x + 1),
            got: stacked.len(),
        });
    }
    let k = DVector::from_column_slice(&stacked[..n_u]);
    let gain = DMatrix::from_row_slice(n_u, n_x, &stacked[n_u..]);
    Ok((k, gain))
}

/// Sinusoidal encoding: entry `2i` is `sin(pos / 10000^(2i/d))`, entry `2i+1` the cosine.
pub fn positional_encoding<T: Real>(position: usize, d: usize) -> Vec<T> {
    let pos = position as f64;
    (0..d)
        .map(|j| {
            let pair = (j / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * pair / d as f64);
            T::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let v = x.to_f64_lossy();
    T::lit(0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}

/// Standardizes `x` over its entries, then applies the affine scale/shift.
pub fn layer_norm<T: Real>(x: &[T], norm: &LayerNorm<T>) -> Vec<T> {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = x
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / n;
    let inv = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
    x.iter()
        .zip(norm.gamma.iter().zip(&norm.beta))
        .map(|(&v, (&g, &b))| (v - mean) * inv * g + b)
        .collect()
}

/// `len × width` row-major token activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> TokenSequence<T> {
    pub fn new(width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len() % width, 0, "token data not a multiple of width");
        Self { width, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn token(&self, j: usize) -> &[T] {
        &self.data[j * self.width..(j + 1) * self.width]
    }

    pub fn token_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.width..(j + 1) * self.width]
    }

    fn map_tokens(&self, width: usize, mut f: impl FnMut(&[T]) -> Vec<T>) -> Self {
        let mut data = Vec::with_capacity(self.len() * width);
        for j in 0..self.len() {
            data.extend(f(self.token(j)));
        }
        Self { width, data }
    }
}

/// Attention probabilities, `[head][query][key]` flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps<T> {
    pub n_head: usize,
    pub len: usize,
    pub probs: Vec<T>,
}

impl<T: Real> AttentionMaps<T> {
    pub fn row(&self, head: usize, query: usize) -> &[T] {
        let start = (head * self.len + query) * self.len;
        &self.probs[start..start + self.len]
    }
}

/// Causal multi-head self-attention on already-normalized tokens; query `j`
/// sees keys `0..=j`. Returns the projected output and the probabilities.
pub fn causal_self_attention<T: Real>(
    x: &TokenSequence<T>,
    layer: &DecoderLayer<T>,
    n_head: usize,
) -> (TokenSequence<T>, AttentionMaps<T>) {
    let d = x.width;
    let len = x.len();
    let head_dim = d / n_head;
    let q = x.map_tokens(d, |t| layer.w_q.apply(t));
    let k = x.map_tokens(d, |t| layer.w_k.apply(t));
    let v = x.map_tokens(d, |t| layer.w_v.apply(t));
    let scale = T::one() / T::lit(head_dim as f64).sqrt();

    let mut probs = vec![T::zero(); n_head * len * len];
    let mut mixed = vec![T::zero(); len * d];
    let mut scores = vec![T::zero(); len];
    for h in 0..n_head {
        let cols = h * head_dim..(h + 1) * head_dim;
        for i in 0..len {
            let qi = &q.token(i)[cols.clone()];
            let mut max = T::min_value().expect("bounded scalar");
            for (j, slot) in scores.iter_mut().enumerate().take(i + 1) {
                let kj = &k.token(j)[cols.clone()];
                let s = qi.iter().zip(kj).fold(T::zero(), |a, (&p, &r)| a + p * r) * scale;
                *slot = s;
                max = max.max(s);
            }
            // masked keys j > i keep probability zero
            let mut total = T::zero();
            for s in scores.iter_mut().take(i + 1) {
                *s = (*s - max).exp();
                total += *s;
            }
            let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
            for (p, &s) in row.iter_mut().zip(&scores).take(i + 1) {
                *p = s / total;
            }
            let out = &mut mixed[i * d + h * head_dim..i * d + (h + 1) * head_dim];
            for (j, &p) in row.iter().enumerate().take(i + 1) {
                for (o, &vj) in out.iter_mut().zip(&v.token(j)[cols.clone()]) {
                    *o += p * vj;
                }
            }
        }
    }
    let mixed = TokenSequence::new(d, mixed);
    let out = mixed.map_tokens(d, |t| layer.w_o.apply(t));
    (out, AttentionMaps { n_head, len, probs })
}

/// Inference engine around a weight set.
#[derive(Debug, Clone)]
pub struct Transformer<T: Real> {
    weights: TransformerWeights<T>,
}

impl<T: Real> Transformer<T> {
    pub fn new(weights: TransformerWeights<T>) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.weights.config
    }

    pub fn weights(&self) -> &TransformerWeights<T> {
        &self.weights
    }

    /// Builds the backward-time token sequence. `states` supplies at least
    /// `T` states (only the first `T` are used); `suffix` holds the known
    /// gains for times `T − suffix.len() .. T` in time order.
    pub fn embed(
        &self,
        states: &[DVector<T>],
        suffix: &GainSequence<T>,
    ) -> Result<TokenSequence<T>> {
        let c = &self.weights.config;
        let horizon = c.horizon;
        if states.len() < horizon {
            return Err(Error::DimensionMismatch {
                what: "state trajectory length",
                expected: horizon,
                got: states.len(),
            });
        }
        if suffix.is_empty() || suffix.len() > horizon {
            return Err(Error::InvalidInput(format!(
                "known gain suffix length {} outside [1, {horizon}]",
                suffix.len()
            )));
        }
        let (n_x, n_u) = (c.state_dim, c.control_dim());
        suffix.check_shape(suffix.len(), n_u, n_x)?;
        let first_known = horizon - suffix.len();
        let norm = &self.weights.normalization;

        let mut data = Vec::with_capacity(horizon * c.d_model);
        let mut gain_features = vec![T::zero(); c.gain_dim + 1];
        for j in 0..horizon {
            let t = horizon - 1 - j;
            let x = &states[t];
            if x.len() != n_x {
                return Err(Error::DimensionMismatch {
                    what: "state",
                    expected: n_x,
                    got: x.len(),
                });
            }
            let xn: Vec<T> = x
                .iter()
                .zip(norm.state_mean.iter().zip(&norm.state_std))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect();

            gain_features.iter_mut().for_each(|f| *f = T::zero());
            if t >= first_known {
                let idx = t - first_known;
                let stacked = stack_gains(&suffix.feedforward[idx], &suffix.feedback[idx]);
                for (f, (&g, (&m, &s))) in gain_features.iter_mut().zip(
                    stacked
                        .iter()
                        .zip(norm.gain_mean.iter().zip(&norm.gain_std)),
                ) {
                    *f = (g - m) / s;
                }
                gain_features[c.gain_dim] = T::one();
            }

            let pe = positional_encoding::<T>(j, c.d_model);
            let state_part = self.weights.state_embed.apply(&xn);
            let gain_part = self.weights.gain_embed.apply(&gain_features);
            data.extend(
                state_part
                    .into_iter()
                    .chain(gain_part)
                    .zip(pe)
                    .map(|(e, p)| e + p),
            );
        }
        Ok(TokenSequence::new(c.d_model, data))
    }

    /// Decoder stack followed by the final layer norm.
    pub fn decoder_forward(&self, tokens: &TokenSequence<T>) -> TokenSequence<T> {
        let c = &self.weights.config;
        let mut x = tokens.clone();
        for layer in &self.weights.layers {
            let normed = x.map_tokens(c.d_model, |t| layer_norm(t, &layer.ln1));
            let (attn, _) = causal_self_attention(&normed, layer, c.n_head);
            for (a, b) in x.data.iter_mut().zip(&attn.data) {
                *a += *b;
            }
            let ff = x.map_tokens(c.d_model, |t| {
                let h: Vec<T> = layer
                    .ff_up
                    .apply(&layer_norm(t, &layer.ln2))
                    .into_iter()
                    .map(gelu)
                    .collect();
                layer.ff_down.apply(&h)
            });
            for (a, b) in x.data.iter_mut().zip(&ff.data) {
                *a += *b;
            }
        }
        x.map_tokens(c.d_model, |t| layer_norm(t, &self.weights.final_norm))
    }

    /// One-shot prediction of the gains for times `0 .. T − suffix.len()`,
    /// returned in time order.
    pub fn predict_gains(
        &self,
        states: &[DVector<T>],
        suffix: &GainSequence<T>,
    ) -> Result<GainSequence<T>> {
        let c = &self.weights.config;
        if suffix.len() >= c.horizon {
            return Err(Error::InvalidInput(format!(
                "nothing to predict: suffix covers the whole horizon {}",
                c.horizon
            )));
        }
        let tokens = self.embed(states, suffix)?;
        let hidden = self.decoder_forward(&tokens);
        let (n_x, n_u) = (c.state_dim, c.control_dim());
        let norm = &self.weights.normalization;
        let predicted = c.horizon - suffix.len();

        let mut feedforward = vec![DVector::zeros(n_u); predicted];
        let mut feedback = vec![DMatrix::zeros(n_u, n_x); predicted];
        for j in suffix.len()..c.horizon {
            let t = c.horizon - 1 - j;
            let out: Vec<T> = self
                .weights
                .head
                .apply(hidden.token(j))
                .into_iter()
                .zip(norm.gain_mean.iter().zip(&norm.gain_std))
                .map(|(o, (&m, &s))| o * s + m)
                .collect();
            let (k, gain) = unstack_gains(&out, n_u, n_x)?;
            feedforward[t] = k;
            feedback[t] = gain;
        }
        Ok(GainSequence {
            feedforward,
            feedback,
        })
    }
}
