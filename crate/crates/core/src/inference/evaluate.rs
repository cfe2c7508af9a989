use crate::error::{Error, Result};
use crate::inference::bleu::{corpus_bleu, token_accuracy};
use crate::inference::decode::{beam_search, greedy_decode_batch, DecodeOptions, Hypothesis};
use crate::model::TranslationModel;
use crate::tensor::Element;

const GREEDY_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct IdScores {
    pub bleu: f64,
    pub token_accuracy: f64,
    /// Decoded content ids (EOS stripped), one per example.
    pub hypotheses: Vec<Vec<usize>>,
}

/// Decodes every source sequence with `opts` (greedy runs batched).
pub fn decode_all<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    sources: &[Vec<usize>],
    opts: &DecodeOptions,
) -> Result<Vec<Hypothesis>> {
    opts.validate()?;
    if opts.beam_size == 1 {
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(GREEDY_CHUNK) {
            out.extend(greedy_decode_batch(model, src, tgt, chunk, opts.max_len)?);
        }
        Ok(out)
    } else {
        sources.iter().map(|s| beam_search(model, src, tgt, s, opts)).collect()
    }
}

fn strip_eos(ids: &[usize]) -> Vec<usize> {
    match ids.split_last() {
        Some((&crate::text::EOS, rest)) => rest.to_vec(),
        _ => ids.to_vec(),
    }
}

/// BLEU-4 and token accuracy of decoded ids against reference ids.
pub fn score_ids<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    examples: &[(Vec<usize>, Vec<usize>)],
    opts: &DecodeOptions,
) -> Result<IdScores> {
    if examples.is_empty() {
        return Err(Error::contract(format!("no examples to score for {src}-{tgt}")));
    }
    let sources: Vec<Vec<usize>> = examples.iter().map(|e| e.0.clone()).collect();
    let refs: Vec<Vec<usize>> = examples.iter().map(|e| strip_eos(&e.1)).collect();
    let hypotheses: Vec<Vec<usize>> = decode_all(model, src, tgt, &sources, opts)?
        .iter()
        .map(|h| h.content().to_vec())
        .collect();
    Ok(IdScores {
        bleu: corpus_bleu(&hypotheses, &refs, 4)?,
        token_accuracy: token_accuracy(&hypotheses, &refs)?,
        hypotheses,
    })
}
