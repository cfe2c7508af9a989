use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax, Tape};
use crate::error::{Error, Result};
use crate::generator::ParamScope;
use crate::model::{decode_step, TranslationModel};
use crate::tensor::Element;
use crate::text::{BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub beam_size: usize,
    /// Length-penalty exponent α.
    pub alpha: f64,
    /// Output cap in tokens (EOS included); `None` means `2·|source| + 5`.
    pub max_len: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam_size: 10,
            alpha: 0.6,
            max_len: None,
        }
    }
}

impl DecodeOptions {
    pub fn greedy() -> Self {
        DecodeOptions {
            beam_size: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be a nonnegative number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 5)
    }
}

/// `((5 + len) / 6)^α`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output ids, ending in EOS once finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn finish(tokens: Vec<usize>, log_prob: f64, alpha: f64) -> Self {
        let score = log_prob / length_penalty(tokens.len(), alpha);
        Hypothesis {
            tokens,
            log_prob,
            score,
            finished: true,
        }
    }

    /// Output ids without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Best first: higher score, then shorter, then smaller ids.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn row_log_probs<T: Element>(tape: &Tape<T>, logits: crate::autodiff::Var) -> Vec<Vec<f64>> {
    let z = tape.value(logits);
    let (rows, cols) = z.dims2().expect("logits are a matrix");
    (0..rows)
        .map(|r| {
            log_softmax(
                &z.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|x| x.as_f64())
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

/// Highest `base + lp[j]`, smallest `j` on ties.
fn best_token(base: f64, lp: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &l) in lp.iter().enumerate() {
        let s = base + l;
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Greedy decoding of a batch of source id sequences. Row `i` stops at EOS
/// or is forced to EOS at its length cap.
pub fn greedy_decode_batch<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    sources: &[Vec<usize>],
    max_len: Option<usize>,
) -> Result<Vec<Hypothesis>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let tape = Tape::new();
    let scope = ParamScope::new(&tape, model.params());
    let net = model.bind(&scope, src, tgt)?;
    let (memory, mut state) = model.start_decoding(&scope, &net, tgt, sources)?;
    let caps: Vec<usize> = sources.iter().map(|s| max_len.unwrap_or(2 * s.len() + 5)).collect();
    let mut out: Vec<(Vec<usize>, f64, bool)> = vec![(Vec::new(), 0.0, false); sources.len()];
    let steps = *caps.iter().max().expect("nonempty");
    for t in 0..steps {
        if out.iter().all(|o| o.2) {
            break;
        }
        let prev: Vec<usize> = out.iter().map(|o| *o.0.last().unwrap_or(&BOS)).collect();
        let (logits, next) = decode_step(&tape, &net.decoder, &net.output, &prev, &state, &memory)?;
        for (i, lp) in row_log_probs(&tape, logits).into_iter().enumerate() {
            let (tokens, log_prob, done) = &mut out[i];
            if *done {
                continue;
            }
            let (tok, total) = if t + 1 == caps[i] {
                (EOS, *log_prob + lp[EOS])
            } else {
                best_token(*log_prob, &lp)
            };
            tokens.push(tok);
            *log_prob = total;
            *done = tok == EOS;
        }
        state = next;
    }
    Ok(out
        .into_iter()
        .map(|(tokens, lp, _)| Hypothesis::finish(tokens, lp, 0.0))
        .collect())
}

/// Greedy decoding of one sentence.
pub fn greedy_decode<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    source: &[usize],
    max_len: Option<usize>,
) -> Result<Hypothesis> {
    Ok(greedy_decode_batch(model, src, tgt, &[source.to_vec()], max_len)?.remove(0))
}

/// Beam search keeping `beam − finished` live hypotheses per step and
/// returning the finished one with the best length-normalized score.
pub fn beam_search<T: Element>(
    model: &TranslationModel<T>,
    src: &str,
    tgt: &str,
    source: &[usize],
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    opts.validate()?;
    let cap = opts.max_len_for(source.len());
    let tape = Tape::new();
    let scope = ParamScope::new(&tape, model.params());
    let net = model.bind(&scope, src, tgt)?;
    let (memory, mut state) = model.start_decoding(&scope, &net, tgt, &[source.to_vec()])?;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut memory_rows = (1, memory.clone());
    for t in 0..cap {
        if memory_rows.0 != live.len() {
            memory_rows = (live.len(), memory.select(&tape, &vec![0; live.len()])?);
        }
        let prev: Vec<usize> = live.iter().map(|h| *h.0.last().unwrap_or(&BOS)).collect();
        let (logits, next) = decode_step(&tape, &net.decoder, &net.output, &prev, &state, &memory_rows.1)?;
        let forced = t + 1 == cap;
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (i, lp) in row_log_probs(&tape, logits).into_iter().enumerate() {
            if forced {
                candidates.push((live[i].1 + lp[EOS], i, EOS));
            } else {
                candidates.extend(lp.iter().enumerate().map(|(j, &l)| (live[i].1 + l, i, j)));
            }
        }
        let want = opts.beam_size - finished.len();
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        };
        if candidates.len() > want {
            candidates.select_nth_unstable_by(want - 1, order);
            candidates.truncate(want);
        }
        candidates.sort_by(order);
        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        for (score, i, j) in candidates {
            let mut tokens = live[i].0.clone();
            tokens.push(j);
            if j == EOS {
                finished.push(Hypothesis::finish(tokens, score, opts.alpha));
            } else {
                next_live.push((tokens, score));
                parents.push(i);
            }
        }
        if finished.len() >= opts.beam_size || next_live.is_empty() {
            break;
        }
        state = next.select(&tape, &parents)?;
        live = next_live;
    }
    finished.sort_by(rank);
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::contract("beam search finished no hypothesis"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::VariantKind;
    use crate::model::ModelConfig;
    use crate::text::Vocabulary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> TranslationModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig {
            word_dim: 4,
            hidden_dim: 3,
            attention_dim: 3,
            lang_dim: 2,
            variant: VariantKind::CpgPlain,
            ..ModelConfig::default()
        };
        let vocab = |c: &str| Vocabulary::from_tokens(c, (0..5).map(|i| format!("{c}{i}")).collect()).unwrap();
        let mut m = TranslationModel::new(config, vec![vocab("a"), vocab("b")], &mut rng).unwrap();
        // Inflate the weights so the output distribution is peaked.
        for (_, t) in m.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= 3.0);
        }
        m
    }

    #[test]
    fn length_penalty_closed_form() {
        assert!((length_penalty(7, 0.6) - 2f64.powf(0.6)).abs() < 1e-12);
        assert!((length_penalty(7, 0.6) - 1.51572).abs() < 1e-5);
        assert_eq!(length_penalty(13, 0.0), 1.0);
    }

    #[test]
    fn alpha_zero_scores_raw_log_probability() {
        let m = random_model(1);
        let opts = DecodeOptions {
            beam_size: 3,
            alpha: 0.0,
            max_len: Some(6),
        };
        let h = beam_search(&m, "a", "b", &[4, 5, EOS], &opts).unwrap();
        assert_eq!(h.score, h.log_prob);
        assert!(h.finished);
        assert_eq!(*h.tokens.last().unwrap(), EOS);
    }

    #[test]
    fn beam_one_matches_greedy() {
        let m = random_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(1..6);
            let mut src: Vec<usize> = (0..n).map(|_| rng.gen_range(4..9)).collect();
            src.push(EOS);
            let g = greedy_decode(&m, "a", "b", &src, None).unwrap();
            let b = beam_search(&m, "a", "b", &src, &DecodeOptions::greedy()).unwrap();
            assert_eq!(g.tokens, b.tokens);
            assert_eq!(g.log_prob, b.log_prob);
        }
    }

    #[test]
    fn batched_greedy_matches_single() {
        let m = random_model(3);
        let srcs = vec![vec![4, 5, 6, EOS], vec![7, EOS], vec![8, 8, EOS]];
        let batch = greedy_decode_batch(&m, "a", "b", &srcs, None).unwrap();
        for (s, h) in srcs.iter().zip(&batch) {
            assert_eq!(greedy_decode(&m, "a", "b", s, None).unwrap().tokens, h.tokens);
        }
    }

    #[test]
    fn output_respects_the_length_cap() {
        let m = random_model(4);
        for beam in [1, 4] {
            let opts = DecodeOptions {
                beam_size: beam,
                alpha: 0.6,
                max_len: Some(2),
            };
            let h = beam_search(&m, "a", "b", &[4, EOS], &opts).unwrap();
            assert!(h.tokens.len() <= 2);
            assert_eq!(*h.tokens.last().unwrap(), EOS);
        }
    }

    #[test]
    fn wider_beams_score_at_least_as_well_on_random_models() {
        for seed in 0..8 {
            let m = random_model(100 + seed);
            let src = vec![4, 6, 5, EOS];
            let mut last = f64::NEG_INFINITY;
            for beam in [1, 2, 4, 8] {
                let opts = DecodeOptions {
                    beam_size: beam,
                    alpha: 0.6,
                    max_len: Some(8),
                };
                let h = beam_search(&m, "a", "b", &src, &opts).unwrap();
                assert!(h.score >= last - 1e-12, "seed {seed} beam {beam}: {} < {last}", h.score);
                last = h.score;
            }
        }
    }

    #[test]
    fn invalid_options_are_rejected() {
        let m = random_model(5);
        let opts = DecodeOptions {
            beam_size: 0,
            ..DecodeOptions::default()
        };
        assert!(beam_search(&m, "a", "b", &[4, EOS], &opts).is_err());
        assert!(matches!(
            beam_search(&m, "a", "zz", &[4, EOS], &DecodeOptions::default()),
            Err(Error::UnknownLanguage(_))
        ));
    }
}
