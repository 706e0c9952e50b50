use crate::error::{Error, Result};

/// Architecture and problem dimensions of the gain predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub state_dim: usize,
    /// Stacked gain width `n_u · (n_x + 1)`.
    pub gain_dim: usize,
    pub horizon: usize,
    /// Default number of exactly computed gain steps.
    pub prompt_len: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub n_layers: usize,
    pub d_ff: usize,
}

impl TransformerConfig {
    pub fn cartpole() -> Self {
        Self {
            state_dim: 4,
            gain_dim: 5,
            horizon: 30,
            prompt_len: 5,
            d_model: 128,
            n_head: 4,
            n_layers: 3,
            d_ff: 256,
        }
    }

    pub fn quadrotor() -> Self {
        Self {
            state_dim: 12,
            gain_dim: 52,
            horizon: 50,
            prompt_len: 1,
            d_model: 128,
            n_head: 4,
            n_layers: 3,
            d_ff: 512,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.gain_dim / (self.state_dim + 1)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    /// Width of each of the two embedding halves.
    pub fn half_model(&self) -> usize {
        self.d_model / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad =
            |field: &str, why: String| Err(Error::Config(format!("invalid field {field}: {why}")));
        let positive = [
            ("state_dim", self.state_dim),
            ("gain_dim", self.gain_dim),
            ("horizon", self.horizon),
            ("prompt_len", self.prompt_len),
            ("d_model", self.d_model),
            ("n_head", self.n_head),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
        ];
        for (field, v) in positive {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        if !self.gain_dim.is_multiple_of(self.state_dim + 1) {
            return bad(
                "gain_dim",
                format!(
                    "{} is not a multiple of state_dim + 1 = {}",
                    self.gain_dim,
                    self.state_dim + 1
                ),
            );
        }
        if self.prompt_len > self.horizon {
            return bad(
                "prompt_len",
                format!("{} exceeds horizon {}", self.prompt_len, self.horizon),
            );
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return bad(
                "n_head",
                format!("d_model {} not divisible by {}", self.d_model, self.n_head),
            );
        }
        if !self.d_model.is_multiple_of(2) {
            return bad("d_model", format!("{} must be even", self.d_model));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let cp = TransformerConfig::cartpole();
        cp.validate().unwrap();
        assert_eq!(cp.control_dim(), 1);
        let quad = TransformerConfig::quadrotor();
        quad.validate().unwrap();
        assert_eq!(quad.control_dim(), 4);
        assert_eq!(quad.head_dim(), 32);
    }

    #[test]
    fn rejects_inconsistent_dims() {
        let mut c = TransformerConfig::cartpole();
        c.n_head = 3;
        assert!(c.validate().unwrap_err().to_string().contains("n_head"));
        let mut c = TransformerConfig::cartpole();
        c.gain_dim = 6;
        assert!(c.validate().unwrap_err().to_string().contains("gain_dim"));
        let mut c = TransformerConfig::cartpole();
        c.prompt_len = 31;
        assert!(c.validate().is_err());
    }
}
