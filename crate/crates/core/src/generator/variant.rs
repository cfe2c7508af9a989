//! Generator variants: how the encoder/decoder parameter vectors for a
//! language pair are produced.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layout::ParameterLayout;
use super::store::{ParamScope, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// Independent parameters per ordered language pair.
    Pairwise,
    /// Encoder parameters per source, decoder parameters per target language.
    PerLanguage,
    /// One shared parameter set; the target language is a prepended token.
    Universal,
    /// `θ = W · l`, decoupled encoder/decoder generators.
    #[serde(rename = "cpg")]
    CpgPlain,
    /// Generators read the concatenated `[l_s; l_t]`.
    #[serde(rename = "cpg-coupled")]
    CpgCoupled,
    /// Per-group low-rank generation `θ_j = W_j · P_j · l`.
    #[serde(rename = "cpg-grouped")]
    CpgGrouped,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Pairwise,
        VariantKind::PerLanguage,
        VariantKind::Universal,
        VariantKind::CpgPlain,
        VariantKind::CpgCoupled,
        VariantKind::CpgGrouped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Pairwise => "pairwise",
            VariantKind::PerLanguage => "per-language",
            VariantKind::Universal => "universal",
            VariantKind::CpgPlain => "cpg",
            VariantKind::CpgCoupled => "cpg-coupled",
            VariantKind::CpgGrouped => "cpg-grouped",
        }
    }

    pub fn is_cpg(self) -> bool {
        matches!(
            self,
            VariantKind::CpgPlain | VariantKind::CpgCoupled | VariantKind::CpgGrouped
        )
    }

    /// Encoder parameters depend on the source language only.
    pub fn is_decoupled(self) -> bool {
        matches!(
            self,
            VariantKind::CpgPlain | VariantKind::CpgGrouped | VariantKind::PerLanguage
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        }
    }
}

/// A generated flat parameter vector plus its layout.
#[derive(Debug, Clone, Copy)]
pub struct GeneratedParams<'a> {
    flat: Var,
    layout: &'a ParameterLayout,
}

impl<'a> GeneratedParams<'a> {
    pub fn flat(&self) -> Var {
        self.flat
    }

    pub fn layout(&self) -> &'a ParameterLayout {
        self.layout
    }

    /// Structured view of one layout entry.
    pub fn view<T: Element>(&self, scope: &ParamScope<'_, T>, name: &str) -> Result<Var> {
        let e = self.layout.entry(name)?;
        scope.tape().slice(self.flat, e.offset, &e.shape)
    }
}

/// Name of the language embedding `l` for `code`.
pub fn language_embedding_name(code: &str) -> String {
    format!("lang.{code}.embedding")
}

/// Fan-based reference std of a directly parameterized tensor: Glorot normal
/// for matrices, zero for biases.
pub fn reference_std(shape: &[usize]) -> f64 {
    match shape {
        [fan_in, fan_out] => (2.0 / (*fan_in + *fan_out) as f64).sqrt(),
        _ => 0.0,
    }
}

/// Produces encoder/decoder parameters for language pairs and owns the
/// trainable weights that do so.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGenerator {
    variant: VariantKind,
    encoder: ParameterLayout,
    decoder: ParameterLayout,
    languages: Vec<String>,
    lang_dim: usize,
    group_rank: usize,
}

impl ParamGenerator {
    pub fn new(
        variant: VariantKind,
        encoder: ParameterLayout,
        decoder: ParameterLayout,
        languages: Vec<String>,
        lang_dim: usize,
        group_rank: usize,
    ) -> Result<Self> {
        if languages.is_empty() {
            return Err(Error::contract("no languages registered"));
        }
        let mut sorted = languages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != languages.len() {
            return Err(Error::contract("duplicate language code"));
        }
        if variant.is_cpg() && lang_dim == 0 {
            return Err(Error::contract("language embedding size must be positive"));
        }
        if variant == VariantKind::CpgGrouped && (group_rank == 0 || group_rank > lang_dim) {
            return Err(Error::contract(format!(
                "grouped generation needs 1 <= M' <= M, got M'={group_rank}, M={lang_dim}"
            )));
        }
        Ok(ParamGenerator {
            variant,
            encoder,
            decoder,
            languages,
            lang_dim,
            group_rank,
        })
    }

    pub fn variant(&self) -> VariantKind {
        self.variant
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn lang_dim(&self) -> usize {
        self.lang_dim
    }

    pub fn group_rank(&self) -> usize {
        self.group_rank
    }

    pub fn layout(&self, side: Side) -> &ParameterLayout {
        match side {
            Side::Encoder => &self.encoder,
            Side::Decoder => &self.decoder,
        }
    }

    pub fn language_index(&self, code: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    fn direct_name(&self, side: Side, src: &str, tgt: &str) -> String {
        match self.variant {
            VariantKind::Pairwise => format!("pair.{src}-{tgt}.{}", side.tag()),
            VariantKind::PerLanguage => {
                let code = if side == Side::Encoder { src } else { tgt };
                format!("lang.{code}.{}", side.tag())
            }
            _ => format!("shared.{}", side.tag()),
        }
    }

    fn generator_name(side: Side) -> String {
        format!("gen.{}", side.tag())
    }

    fn group_names(side: Side, group: &str) -> (String, String) {
        let base = format!("gen.{}.{group}", side.tag());
        (format!("{base}.weight"), format!("{base}.projector"))
    }

    /// Names of the generator-owned tensors that are shared across languages.
    pub fn shared_tensor_names(&self) -> Vec<String> {
        match self.variant {
            VariantKind::CpgPlain | VariantKind::CpgCoupled => {
                vec![Self::generator_name(Side::Encoder), Self::generator_name(Side::Decoder)]
            }
            VariantKind::CpgGrouped => [Side::Encoder, Side::Decoder]
                .into_iter()
                .flat_map(|side| {
                    self.layout(side).groups().iter().flat_map(move |g| {
                        let (w, p) = Self::group_names(side, &g.name);
                        [w, p]
                    })
                })
                .collect(),
            VariantKind::Universal => vec!["shared.enc".into(), "shared.dec".into()],
            VariantKind::Pairwise | VariantKind::PerLanguage => Vec::new(),
        }
    }

    /// Tensors owned by the generator for one language.
    pub fn language_tensor_names(&self, code: &str) -> Vec<String> {
        match self.variant {
            v if v.is_cpg() => vec![language_embedding_name(code)],
            VariantKind::PerLanguage => vec![format!("lang.{code}.enc"), format!("lang.{code}.dec")],
            _ => Vec::new(),
        }
    }

    /// Draws every generator-owned tensor into `store`.
    pub fn initialize<T: Element, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        match self.variant {
            VariantKind::Pairwise => {
                for s in &self.languages {
                    for t in &self.languages {
                        if s != t {
                            for side in [Side::Encoder, Side::Decoder] {
                                store.insert(self.direct_name(side, s, t), direct_init(self.layout(side), rng)?);
                            }
                        }
                    }
                }
            }
            VariantKind::PerLanguage => {
                for code in &self.languages {
                    for side in [Side::Encoder, Side::Decoder] {
                        store.insert(self.direct_name(side, code, code), direct_init(self.layout(side), rng)?);
                    }
                }
            }
            VariantKind::Universal => {
                for side in [Side::Encoder, Side::Decoder] {
                    store.insert(self.direct_name(side, "", ""), direct_init(self.layout(side), rng)?);
                }
            }
            VariantKind::CpgPlain | VariantKind::CpgCoupled => {
                let (width, scale) = if self.variant == VariantKind::CpgCoupled {
                    (2 * self.lang_dim, 0.5f64.sqrt())
                } else {
                    (self.lang_dim, 1.0)
                };
                for side in [Side::Encoder, Side::Decoder] {
                    let layout = self.layout(side);
                    let mut data = Vec::with_capacity(layout.total() * width);
                    for e in layout.entries() {
                        let std = reference_std(&e.shape) * scale;
                        for _ in 0..e.size() * width {
                            data.push(T::lit(normal(rng, std)?));
                        }
                    }
                    store.insert(
                        Self::generator_name(side),
                        Tensor::new(vec![layout.total(), width], data)?,
                    );
                }
                for code in &self.languages {
                    self.initialize_language(code, store, rng)?;
                }
            }
            VariantKind::CpgGrouped => {
                let rank = self.group_rank;
                for side in [Side::Encoder, Side::Decoder] {
                    for g in self.layout(side).groups() {
                        let (wname, pname) = Self::group_names(side, &g.name);
                        let mut data = Vec::with_capacity(g.size() * rank);
                        for e in &g.entries {
                            let std = reference_std(&e.shape);
                            for _ in 0..e.size() * rank {
                                data.push(T::lit(normal(rng, std)?));
                            }
                        }
                        store.insert(wname, Tensor::new(vec![g.size(), rank], data)?);
                        let pstd = (1.0 / rank as f64).sqrt();
                        let proj = (0..rank * self.lang_dim)
                            .map(|_| normal(rng, pstd).map(T::lit))
                            .collect::<Result<Vec<_>>>()?;
                        store.insert(pname, Tensor::new(vec![rank, self.lang_dim], proj)?);
                    }
                }
                for code in &self.languages {
                    self.initialize_language(code, store, rng)?;
                }
            }
        }
        Ok(())
    }

    /// Draws the language embedding `l ~ N(0, 1/M)` for `code`.
    pub fn initialize_language<T: Element, R: Rng>(
        &self,
        code: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        let std = (1.0 / self.lang_dim as f64).sqrt();
        let data = (0..self.lang_dim)
            .map(|_| normal(rng, std).map(T::lit))
            .collect::<Result<Vec<_>>>()?;
        store.insert(language_embedding_name(code), Tensor::new(vec![self.lang_dim], data)?);
        Ok(())
    }

    /// Registers a new language (CPG variants only) and draws its embedding.
    pub fn add_language<T: Element, R: Rng>(
        &mut self,
        code: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        if !self.variant.is_cpg() {
            return Err(Error::contract(format!(
                "cannot add a language to a {} model",
                self.variant
            )));
        }
        if self.languages.iter().any(|l| l == code) {
            return Err(Error::contract(format!("language `{code}` already registered")));
        }
        self.languages.push(code.to_string());
        self.initialize_language(code, store, rng)
    }

    /// θ^(enc) for translating `src → tgt`.
    pub fn encoder_params<'g, T: Element>(
        &'g self,
        scope: &ParamScope<'_, T>,
        src: &str,
        tgt: &str,
    ) -> Result<GeneratedParams<'g>> {
        self.generate(scope, Side::Encoder, src, tgt)
    }

    /// θ^(dec) for translating `src → tgt`.
    pub fn decoder_params<'g, T: Element>(
        &'g self,
        scope: &ParamScope<'_, T>,
        src: &str,
        tgt: &str,
    ) -> Result<GeneratedParams<'g>> {
        self.generate(scope, Side::Decoder, src, tgt)
    }

    fn embedding_column<T: Element>(&self, scope: &ParamScope<'_, T>, code: &str) -> Result<Var> {
        let l = scope.get(&language_embedding_name(code))?;
        scope.tape().reshape(l, &[self.lang_dim, 1])
    }

    pub fn generate<'g, T: Element>(
        &'g self,
        scope: &ParamScope<'_, T>,
        side: Side,
        src: &str,
        tgt: &str,
    ) -> Result<GeneratedParams<'g>> {
        self.language_index(src)?;
        self.language_index(tgt)?;
        let tape = scope.tape();
        let layout = self.layout(side);
        let context = if side == Side::Encoder { src } else { tgt };
        let flat = match self.variant {
            VariantKind::Pairwise if src == tgt => {
                return Err(Error::contract(format!(
                    "pairwise models have no parameters for {src} -> {tgt}"
                )))
            }
            VariantKind::Pairwise | VariantKind::PerLanguage | VariantKind::Universal => {
                scope.get(&self.direct_name(side, src, tgt))?
            }
            VariantKind::CpgPlain => {
                let w = scope.get(&Self::generator_name(side))?;
                let l = self.embedding_column(scope, context)?;
                tape.reshape(tape.matmul(w, l)?, &[layout.total()])?
            }
            VariantKind::CpgCoupled => {
                let w = scope.get(&Self::generator_name(side))?;
                let ls = scope.get(&language_embedding_name(src))?;
                let lt = scope.get(&language_embedding_name(tgt))?;
                let both = tape.concat(&[ls, lt])?;
                let col = tape.reshape(both, &[2 * self.lang_dim, 1])?;
                tape.reshape(tape.matmul(w, col)?, &[layout.total()])?
            }
            VariantKind::CpgGrouped => {
                let l = self.embedding_column(scope, context)?;
                let mut parts = Vec::with_capacity(layout.groups().len());
                for g in layout.groups() {
                    let (wname, pname) = Self::group_names(side, &g.name);
                    let reduced = tape.matmul(scope.get(&pname)?, l)?;
                    let theta = tape.matmul(scope.get(&wname)?, reduced)?;
                    parts.push(theta);
                }
                tape.concat(&parts)?
            }
        };
        Ok(GeneratedParams { flat, layout })
    }
}

fn normal<R: Rng>(rng: &mut R, std: f64) -> Result<f64> {
    if std == 0.0 {
        return Ok(0.0);
    }
    let d = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
    Ok(d.sample(rng))
}

fn direct_init<T: Element, R: Rng>(layout: &ParameterLayout, rng: &mut R) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(layout.total());
    for e in layout.entries() {
        let std = reference_std(&e.shape);
        for _ in 0..e.size() {
            data.push(T::lit(normal(rng, std)?));
        }
    }
    Tensor::new(vec![layout.total()], data)
}
