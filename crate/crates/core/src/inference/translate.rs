use crate::error::Result;
use crate::inference::decode::{beam_search, DecodeOptions, Hypothesis};
use crate::model::TranslationModel;
use crate::tensor::Element;
use crate::text::tokenize;

/// Decodes source ids into target ids (EOS included).
pub fn translate_ids<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    source: &[usize],
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    beam_search(model, src, tgt, source, opts)
}

/// Raw text in, raw text out. Works for any pair of registered languages,
/// including pairs never seen together in training.
pub fn translate<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    text: &str,
    opts: &DecodeOptions,
) -> Result<String> {
    model.generator().language_index(src)?;
    model.generator().language_index(tgt)?;
    if tokenize(text).is_empty() {
        return Ok(String::new());
    }
    let ids = model.encode_text(src, text)?;
    let hyp = translate_ids(model, src, tgt, &ids, opts)?;
    model.decode_text(tgt, &hyp.tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotTranslation {
    pub output: String,
    pub intermediate: String,
    /// Directions taken, in order, as `src-tgt`.
    pub legs: Vec<String>,
}

/// Translates `src → pivot` with `first`, then `pivot → tgt` with `second`.
pub fn pivot_translate<T: Element>(
    first: &TranslationModel<T>,
    second: &TranslationModel<T>,
    src: &str,
    pivot: &str,
    tgt: &str,
    text: &str,
    opts: &DecodeOptions,
) -> Result<PivotTranslation> {
    let intermediate = translate(first, src, pivot, text, opts)?;
    log::debug!("pivot {src}->{pivot}: {intermediate}");
    let output = translate(second, pivot, tgt, &intermediate, opts)?;
    Ok(PivotTranslation {
        output,
        intermediate,
        legs: vec![format!("{src}-{pivot}"), format!("{pivot}-{tgt}")],
    })
}
