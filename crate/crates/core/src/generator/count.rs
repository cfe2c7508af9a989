//! Closed-form trainable-parameter counts.

use super::layout::ParameterLayout;
use super::variant::VariantKind;
use crate::error::{Error, Result};

/// Inputs to [`count_trainable_parameters`].
#[derive(Debug, Clone, Copy)]
pub struct CountInputs<'a> {
    pub variant: VariantKind,
    pub languages: usize,
    pub encoder: &'a ParameterLayout,
    pub decoder: &'a ParameterLayout,
    /// Scalars of the plain per-language layers (word embeddings plus output
    /// projection) for one language, as measured on the model.
    pub per_language: u64,
    pub lang_dim: usize,
    pub group_rank: usize,
    pub word_dim: usize,
}

/// Exact count of optimizer-visible scalars for a variant.
///
/// Per-language word embeddings and output projections are plain
/// parameters: every variant pays `L · per_language` for them.
pub fn count_trainable_parameters(c: &CountInputs<'_>) -> Result<u64> {
    let l = c.languages as u64;
    let m = c.lang_dim as u64;
    let p = (c.encoder.total() + c.decoder.total()) as u64;
    if l == 0 {
        return Err(Error::contract("language count must be positive"));
    }
    let per_language = l * c.per_language;
    let generated = match c.variant {
        VariantKind::Pairwise => l * (l - 1) * p,
        VariantKind::PerLanguage => l * p,
        // One target-language token per language in every source vocabulary.
        VariantKind::Universal => p + l * l * c.word_dim as u64,
        VariantKind::CpgPlain => p * m + l * m,
        VariantKind::CpgCoupled => 2 * p * m + l * m,
        VariantKind::CpgGrouped => {
            if c.group_rank == 0 || c.group_rank > c.lang_dim {
                return Err(Error::contract(format!(
                    "M' = {} must lie in [1, M = {}]",
                    c.group_rank, c.lang_dim
                )));
            }
            let r = c.group_rank as u64;
            let groups = (c.encoder.groups().len() + c.decoder.groups().len()) as u64;
            p * r + groups * r * m + l * m
        }
    };
    Ok(generated + per_language)
}

/// `L(L−1)(P + 2WV)`: pairwise models each owning embeddings and projection.
pub fn pairwise_formula(languages: u64, p: u64, word_dim: u64, vocab: u64) -> u64 {
    languages * (languages - 1) * (p + 2 * word_dim * vocab)
}

/// `PM + LM + 2LWV`: one linear generator, language embeddings, and
/// per-language embeddings/projections.
pub fn cpg_formula(languages: u64, p: u64, word_dim: u64, vocab: u64, lang_dim: u64) -> u64 {
    p * lang_dim + languages * lang_dim + 2 * languages * word_dim * vocab
}
