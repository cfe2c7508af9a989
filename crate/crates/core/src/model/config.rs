use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ParameterLayout, VariantKind};

/// Architecture and generator settings shared by every language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Word embedding size W.
    pub word_dim: usize,
    /// LSTM hidden size H (encoder per direction and decoder).
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub decoder_layers: usize,
    /// Language embedding size M.
    pub lang_dim: usize,
    /// Projection width M' for grouped generation.
    pub group_rank: usize,
    pub variant: VariantKind,
    pub label_smoothing: f64,
    pub max_sentence_len: usize,
    /// Whether the per-language output projection carries a bias.
    pub output_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 512,
            hidden_dim: 512,
            attention_dim: 512,
            decoder_layers: 2,
            lang_dim: 8,
            group_rank: 4,
            variant: VariantKind::CpgPlain,
            label_smoothing: 0.1,
            max_sentence_len: 50,
            output_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("decoder_layers", self.decoder_layers),
            ("lang_dim", self.lang_dim),
            ("max_sentence_len", self.max_sentence_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "model.label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.variant == VariantKind::CpgGrouped && (self.group_rank == 0 || self.group_rank > self.lang_dim) {
            return Err(Error::Config(format!(
                "model.group_rank must lie in [1, lang_dim = {}], got {}",
                self.lang_dim, self.group_rank
            )));
        }
        Ok(())
    }

    fn lstm_group(
        b: crate::generator::LayoutBuilder,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> crate::generator::LayoutBuilder {
        b.group(
            name,
            &[
                ("w_ih", &[input, 4 * hidden]),
                ("w_hh", &[hidden, 4 * hidden]),
                ("b", &[4 * hidden]),
            ],
        )
    }

    /// Bidirectional single-layer encoder: groups `fwd` and `bwd`.
    pub fn encoder_layout(&self) -> Result<ParameterLayout> {
        let (w, h) = (self.word_dim, self.hidden_dim);
        let b = Self::lstm_group(ParameterLayout::builder(), "fwd", w, h);
        Self::lstm_group(b, "bwd", w, h).build()
    }

    /// Decoder: initial-state bridge, additive attention, then one group per
    /// stacked LSTM layer. Attention belongs to the decoder.
    pub fn decoder_layout(&self) -> Result<ParameterLayout> {
        let (w, h, a, n) = (self.word_dim, self.hidden_dim, self.attention_dim, self.decoder_layers);
        let mut b = ParameterLayout::builder()
            .group("bridge", &[("w", &[2 * h, n * h]), ("b", &[n * h])])
            .group(
                "attention",
                &[("w_query", &[h, a]), ("w_key", &[2 * h, a]), ("v", &[a, 1])],
            );
        for layer in 0..n {
            let input = if layer == 0 { w + 2 * h } else { h };
            b = Self::lstm_group(b, &format!("layer{layer}"), input, h);
        }
        b.build()
    }

    /// Scalars of one language's plain layers for vocabulary size `vocab`.
    pub fn per_language_size(&self, vocab: usize) -> u64 {
        let bias = if self.output_bias { vocab } else { 0 };
        (vocab * self.word_dim + self.hidden_dim * vocab + bias) as u64
    }
}
