use std::collections::BTreeMap;

use rand::Rng;

use super::config::ModelConfig;
use super::network::{
    encode, AttentionMemory, DecoderState, DecoderWeights, EncoderOutput, EncoderWeights, OutputLayer,
};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::generator::{reference_std, ParamGenerator, ParamScope, ParamStore, VariantKind};
use crate::tensor::{Element, Tensor};
use crate::text::{
    apply_bpe, decode_sentence, detokenize, encode_sentence, reconstruct_word, tokenize, BpeModel, Vocabulary, BOS,
    END_OF_WORD, PAD,
};

pub fn words_name(code: &str) -> String {
    format!("lang.{code}.words")
}

pub fn proj_name(code: &str) -> String {
    format!("lang.{code}.proj")
}

pub fn proj_bias_name(code: &str) -> String {
    format!("lang.{code}.proj_bias")
}

/// Target-language marker embeddings of a source language (universal model).
pub fn target_tokens_name(code: &str) -> String {
    format!("lang.{code}.target_tokens")
}

/// Shared encoder/decoder, parameter generator, per-language layers and the
/// vocabularies that go with them.
#[derive(Debug, Clone)]
pub struct TranslationModel<T: Element> {
    config: ModelConfig,
    generator: ParamGenerator,
    vocabs: BTreeMap<String, Vocabulary>,
    bpe: BTreeMap<String, BpeModel>,
    params: ParamStore<T>,
}

/// Tensors bound for one translation direction.
#[derive(Debug, Clone)]
pub struct PairNetwork {
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
    pub source_words: Var,
    pub output: OutputLayer,
    /// Prepended source embedding for the universal model.
    pub target_marker: Option<Var>,
}

impl<T: Element> TranslationModel<T> {
    /// Fresh model over the given languages, one vocabulary each, in order.
    pub fn new<R: Rng>(config: ModelConfig, vocabs: Vec<Vocabulary>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let languages: Vec<String> = vocabs.iter().map(|v| v.language().to_string()).collect();
        let generator = ParamGenerator::new(
            config.variant,
            config.encoder_layout()?,
            config.decoder_layout()?,
            languages,
            config.lang_dim,
            config.group_rank,
        )?;
        let mut params = ParamStore::new();
        generator.initialize(&mut params, rng)?;
        let mut model = TranslationModel {
            config,
            generator,
            vocabs: vocabs.into_iter().map(|v| (v.language().to_string(), v)).collect(),
            bpe: BTreeMap::new(),
            params,
        };
        for code in model.generator.languages().to_vec() {
            model.initialize_language_layers(&code, rng)?;
        }
        Ok(model)
    }

    /// Reassembles a model from stored parts, checking that every expected
    /// tensor is present with the right shape and nothing else is.
    pub fn from_parts(
        config: ModelConfig,
        languages: Vec<String>,
        vocabs: Vec<Vocabulary>,
        bpe: BTreeMap<String, BpeModel>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        let generator = ParamGenerator::new(
            config.variant,
            config.encoder_layout()?,
            config.decoder_layout()?,
            languages,
            config.lang_dim,
            config.group_rank,
        )?;
        let vocabs: BTreeMap<String, Vocabulary> = vocabs.into_iter().map(|v| (v.language().to_string(), v)).collect();
        for code in generator.languages() {
            if !vocabs.contains_key(code) {
                return Err(Error::Corrupt(format!("no vocabulary for language `{code}`")));
            }
        }
        let model = TranslationModel {
            config,
            generator,
            vocabs,
            bpe,
            params,
        };
        let mut fresh = ParamStore::<T>::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        model.generator.initialize(&mut fresh, &mut rng)?;
        for code in model.generator.languages() {
            model.language_layer_shapes(code)?.into_iter().for_each(|(n, s)| {
                fresh.insert(n, Tensor::zeros(&s));
            });
        }
        for (name, t) in fresh.iter() {
            let got = model
                .params
                .get(name)
                .map_err(|_| Error::Corrupt(format!("missing tensor `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Corrupt(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = model.params.names().find(|n| !fresh.contains(n)) {
            return Err(Error::Corrupt(format!("unexpected tensor `{extra}`")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn generator(&self) -> &ParamGenerator {
        &self.generator
    }

    pub fn languages(&self) -> &[String] {
        self.generator.languages()
    }

    pub fn vocab(&self, code: &str) -> Result<&Vocabulary> {
        self.vocabs
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn vocabs(&self) -> impl Iterator<Item = &Vocabulary> {
        self.vocabs.values()
    }

    pub fn bpe(&self, code: &str) -> Option<&BpeModel> {
        self.bpe.get(code)
    }

    pub fn bpe_models(&self) -> &BTreeMap<String, BpeModel> {
        &self.bpe
    }

    pub fn set_bpe(&mut self, code: &str, model: BpeModel) {
        self.bpe.insert(code.to_string(), model);
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Number of trainable scalars.
    pub fn scalar_count(&self) -> u64 {
        self.params.scalar_count()
    }

    fn language_layer_shapes(&self, code: &str) -> Result<Vec<(String, Vec<usize>)>> {
        let v = self.vocab(code)?.len();
        let (w, h) = (self.config.word_dim, self.config.hidden_dim);
        let mut out = vec![(words_name(code), vec![v, w]), (proj_name(code), vec![h, v])];
        if self.config.output_bias {
            out.push((proj_bias_name(code), vec![v]));
        }
        if self.config.variant == VariantKind::Universal {
            out.push((target_tokens_name(code), vec![self.languages().len(), w]));
        }
        Ok(out)
    }

    /// Every tensor that belongs to one language alone.
    pub fn language_tensor_names(&self, code: &str) -> Result<Vec<String>> {
        self.generator.language_index(code)?;
        let mut names: Vec<String> = self.language_layer_shapes(code)?.into_iter().map(|(n, _)| n).collect();
        names.extend(self.generator.language_tensor_names(code));
        Ok(names)
    }

    fn initialize_language_layers<R: Rng>(&mut self, code: &str, rng: &mut R) -> Result<()> {
        for (name, shape) in self.language_layer_shapes(code)? {
            let std = reference_std(&shape);
            let n: usize = shape.iter().product();
            let data = if std == 0.0 {
                vec![T::zero(); n]
            } else {
                let d = rand_distr::Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
                (0..n).map(|_| T::lit(rng.sample(d))).collect()
            };
            self.params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(())
    }

    /// Registers a new language with its vocabulary, drawing its embedding
    /// and per-language layers. Only generator-based models support this.
    pub fn add_language<R: Rng>(&mut self, vocab: Vocabulary, rng: &mut R) -> Result<()> {
        let code = vocab.language().to_string();
        self.generator.add_language(&code, &mut self.params, rng)?;
        self.vocabs.insert(code.clone(), vocab);
        self.initialize_language_layers(&code, rng)
    }

    /// Binds the tensors used to translate `src → tgt`.
    pub fn bind(&self, scope: &ParamScope<'_, T>, src: &str, tgt: &str) -> Result<PairNetwork> {
        let enc = self.generator.encoder_params(scope, src, tgt)?;
        let dec = self.generator.decoder_params(scope, src, tgt)?;
        let target_marker = if self.config.variant == VariantKind::Universal {
            Some(scope.get(&target_tokens_name(src))?)
        } else {
            None
        };
        Ok(PairNetwork {
            encoder: EncoderWeights::from_generated(scope, &enc)?,
            decoder: DecoderWeights::from_generated(scope, &dec, self.config.decoder_layers)?,
            source_words: scope.get(&words_name(src))?,
            output: OutputLayer {
                words: scope.get(&words_name(tgt))?,
                proj: scope.get(&proj_name(tgt))?,
                bias: if self.config.output_bias {
                    Some(scope.get(&proj_bias_name(tgt))?)
                } else {
                    None
                },
            },
            target_marker,
        })
    }

    /// Embeds and encodes a batch of source id sequences.
    pub fn encode_source(
        &self,
        scope: &ParamScope<'_, T>,
        net: &PairNetwork,
        tgt: &str,
        sources: &[Vec<usize>],
    ) -> Result<EncoderOutput> {
        let tape = scope.tape();
        if sources.iter().any(|s| s.is_empty()) {
            return Err(Error::contract("cannot encode an empty sentence"));
        }
        let width = sources.iter().map(Vec::len).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(width + 1);
        let mut lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
        if let Some(marker) = net.target_marker {
            let idx = self.generator.language_index(tgt)?;
            inputs.push(tape.gather_rows(marker, &vec![idx; sources.len()])?);
            lengths.iter_mut().for_each(|n| *n += 1);
        }
        for t in 0..width {
            let ids: Vec<usize> = sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            inputs.push(tape.gather_rows(net.source_words, &ids)?);
        }
        encode(tape, &net.encoder, &inputs, &lengths)
    }

    /// Encoder output plus the decoder's starting point.
    pub fn start_decoding(
        &self,
        scope: &ParamScope<'_, T>,
        net: &PairNetwork,
        tgt: &str,
        sources: &[Vec<usize>],
    ) -> Result<(AttentionMemory, DecoderState)> {
        let tape = scope.tape();
        let enc = self.encode_source(scope, net, tgt, sources)?;
        let memory = AttentionMemory::new(tape, &net.decoder, &enc)?;
        let state = DecoderState::initial(tape, &net.decoder, &enc)?;
        Ok((memory, state))
    }

    /// Teacher-forced mean smoothed loss of `targets` (each ending in EOS)
    /// given `sources`.
    pub fn pair_loss(
        &self,
        scope: &ParamScope<'_, T>,
        src: &str,
        tgt: &str,
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
    ) -> Result<Var> {
        if sources.len() != targets.len() || sources.is_empty() {
            return Err(Error::shape("source and target batches must be nonempty and aligned"));
        }
        let tape = scope.tape();
        let net = self.bind(scope, src, tgt)?;
        let (memory, mut state) = self.start_decoding(scope, &net, tgt, sources)?;
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut logits = Vec::with_capacity(steps);
        let mut gold = Vec::with_capacity(steps);
        let mut mask = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|y| {
                    if t == 0 {
                        BOS
                    } else {
                        y.get(t - 1).copied().unwrap_or(PAD)
                    }
                })
                .collect();
            let (z, next) = super::network::decode_step(tape, &net.decoder, &net.output, &prev, &state, &memory)?;
            logits.push(z);
            gold.push(targets.iter().map(|y| y.get(t).copied().unwrap_or(PAD)).collect());
            mask.push(targets.iter().map(|y| t < y.len()).collect());
            state = next;
        }
        super::network::sequence_loss(tape, &logits, &gold, &mask, T::lit(self.config.label_smoothing))
    }

    /// Tokenizes, segments and maps a raw sentence to ids ending in EOS.
    pub fn encode_text(&self, code: &str, text: &str) -> Result<Vec<usize>> {
        let vocab = self.vocab(code)?;
        let words = tokenize(text);
        let units: Vec<String> = match self.bpe.get(code) {
            Some(bpe) => words.iter().flat_map(|w| apply_bpe(bpe, w)).collect(),
            None => words,
        };
        Ok(encode_sentence(vocab, &units))
    }

    /// Maps ids back to a detokenized sentence, undoing segmentation.
    pub fn decode_text(&self, code: &str, ids: &[usize]) -> Result<String> {
        let units = decode_sentence(self.vocab(code)?, ids)?;
        let words = if self.bpe.contains_key(code) {
            join_subwords(&units)
        } else {
            units
        };
        Ok(detokenize(&words))
    }
}

/// Regroups subword units into words at each end-of-word marker.
fn join_subwords(units: &[String]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for u in units {
        current.push(u);
        if u == END_OF_WORD {
            words.push(reconstruct_word(&current));
            current.clear();
        }
    }
    if !current.is_empty() {
        words.push(reconstruct_word(&current));
    }
    words.retain(|w| !w.is_empty());
    words
}
