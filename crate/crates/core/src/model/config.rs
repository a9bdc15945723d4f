use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// LSTM encoder, multi-head self-attention, LSTM decoder, linear head.
    #[default]
    Seq2seqAttention,
    /// Encoder stack followed by a linear head on the last hidden state.
    PlainLstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    /// Input history length M.
    pub history: usize,
    /// Prediction horizon H.
    pub horizon: usize,
}

impl ModelConfig {
    /// Defaults used for the reported horizons: two LSTM levels with dropout
    /// 0.1 up to 5 s, three levels with dropout 0.2 beyond.
    pub fn for_horizon(input_dim: usize, horizon: usize) -> Self {
        let (levels, dropout) = if horizon <= 5 { (2, 0.1) } else { (3, 0.2) };
        Self {
            kind: ModelKind::Seq2seqAttention,
            input_dim,
            hidden_dim: 128,
            encoder_layers: levels,
            decoder_layers: levels,
            num_heads: 4,
            dropout,
            history: horizon,
            horizon,
        }
    }

    pub fn with_hidden(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ModelConfig(m));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return fail("input and hidden dimensions must be positive".into());
        }
        if self.encoder_layers == 0 {
            return fail("at least one encoder level is required".into());
        }
        if self.kind == ModelKind::Seq2seqAttention {
            if self.decoder_layers == 0 {
                return fail("at least one decoder level is required".into());
            }
            if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
                return fail(format!(
                    "hidden_dim {} is not divisible by num_heads {}",
                    self.hidden_dim, self.num_heads
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if self.history != self.horizon {
            return fail(format!(
                "history length {} must equal horizon {}",
                self.history, self.horizon
            ));
        }
        Ok(())
    }

    /// Number of aggregation layers `L`.
    pub fn layer_count(&self) -> usize {
        match self.kind {
            ModelKind::Seq2seqAttention => self.encoder_layers + 1 + self.decoder_layers + 1,
            ModelKind::PlainLstm => self.encoder_layers + 1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_defaults() {
        let five = ModelConfig::for_horizon(14, 5);
        assert_eq!((five.encoder_layers, five.dropout, five.hidden_dim), (2, 0.1, 128));
        assert_eq!(five.layer_count(), 6);
        let ten = ModelConfig::for_horizon(14, 10);
        assert_eq!((ten.encoder_layers, ten.dropout), (3, 0.2));
        assert_eq!(ten.layer_count(), 8);
    }

    #[test]
    fn validation() {
        let ok = ModelConfig::for_horizon(12, 5);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.num_heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.history = 4;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
    }
}
