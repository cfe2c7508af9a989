//! Synthetic multilingual corpora. Every "language" renders a shared
//! sequence of concepts through its own lexicon and a fixed word-order
//! rule, so translation between any two of them is deterministic.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{count_tokens, encode_sentence, tokenize, Vocabulary};
use crate::training::{DevSet, LanguagePair, ParallelCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordOrder {
    Identity,
    /// Swap positions (0,1), (2,3), …
    SwapPairs,
    Reverse,
}

impl WordOrder {
    pub fn apply<X: Clone>(self, xs: &[X]) -> Vec<X> {
        match self {
            WordOrder::Identity => xs.to_vec(),
            WordOrder::Reverse => xs.iter().rev().cloned().collect(),
            WordOrder::SwapPairs => {
                let mut v = xs.to_vec();
                for pair in v.chunks_mut(2) {
                    pair.reverse();
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguage {
    pub code: String,
    /// Word for each concept.
    pub lexicon: Vec<String>,
    pub order: WordOrder,
}

impl ToyLanguage {
    /// A language whose words are `{code}{k}` for a seeded permutation `k`.
    pub fn new(code: &str, concepts: usize, order: WordOrder, seed: u64) -> Self {
        let mut ids: Vec<usize> = (0..concepts).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ToyLanguage {
            code: code.to_string(),
            lexicon: ids.into_iter().map(|k| format!("{code}{k}")).collect(),
            order,
        }
    }

    pub fn render(&self, concepts: &[usize]) -> String {
        let words: Vec<&str> = concepts.iter().map(|&c| self.lexicon[c].as_str()).collect();
        self.order.apply(&words).join(" ")
    }
}

/// Sentence-aligned text of one direction, split three ways.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParallel {
    pub pair: LanguagePair,
    pub train: Vec<(String, String)>,
    pub dev: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub languages: Vec<ToyLanguage>,
    pub parallel: Vec<ToyParallel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub concepts: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            concepts: 26,
            min_len: 3,
            max_len: 8,
            train: 500,
            dev: 50,
            test: 50,
            seed: 0,
        }
    }
}

impl ToySpec {
    fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let n = rng.gen_range(self.min_len..=self.max_len);
        (0..n).map(|_| rng.gen_range(0..self.concepts)).collect()
    }

    /// Renders every listed direction. Both directions of an unordered pair
    /// share the same concept sequences.
    pub fn generate(&self, languages: &[ToyLanguage], pairs: &[(String, String)]) -> Result<ToyCorpus> {
        if self.concepts == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(
                "toy spec needs concepts > 0 and 1 <= min_len <= max_len".into(),
            ));
        }
        let lang = |c: &str| {
            languages
                .iter()
                .find(|l| l.code == c)
                .ok_or_else(|| Error::UnknownLanguage(c.to_string()))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut shared: BTreeMap<(String, String), Vec<Vec<usize>>> = BTreeMap::new();
        let mut parallel = Vec::new();
        for (s, t) in pairs {
            let (ls, lt) = (lang(s)?, lang(t)?);
            let key = if s <= t {
                (s.clone(), t.clone())
            } else {
                (t.clone(), s.clone())
            };
            let total = self.train + self.dev + self.test;
            let sents = shared
                .entry(key)
                .or_insert_with(|| (0..total).map(|_| self.sentence(&mut rng)).collect());
            let rendered: Vec<(String, String)> = sents.iter().map(|c| (ls.render(c), lt.render(c))).collect();
            let (train, rest) = rendered.split_at(self.train);
            let (dev, test) = rest.split_at(self.dev);
            parallel.push(ToyParallel {
                pair: LanguagePair::new(s.clone(), t.clone()),
                train: train.to_vec(),
                dev: dev.to_vec(),
                test: test.to_vec(),
            });
        }
        Ok(ToyCorpus {
            languages: languages.to_vec(),
            parallel,
        })
    }
}

/// Both directions of every unordered pair in `pairs`.
pub fn both_directions(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .flat_map(|&(a, b)| [(a.to_string(), b.to_string()), (b.to_string(), a.to_string())])
        .collect()
}

/// Three pure token-mapping languages: same word order, independent lexicons.
pub fn standard_languages(concepts: usize, seed: u64) -> Vec<ToyLanguage> {
    vec![
        ToyLanguage::new("a", concepts, WordOrder::Identity, seed),
        ToyLanguage::new("b", concepts, WordOrder::Identity, seed + 1),
        ToyLanguage::new("c", concepts, WordOrder::Identity, seed + 2),
    ]
}

/// `a` and `b` share lexicon permutation and word order; `c` has its own
/// lexicon and reversed order.
pub fn related_languages(concepts: usize, seed: u64) -> Vec<ToyLanguage> {
    vec![
        ToyLanguage::new("a", concepts, WordOrder::Identity, seed),
        ToyLanguage::new("b", concepts, WordOrder::Identity, seed),
        ToyLanguage::new("c", concepts, WordOrder::Reverse, seed + 1),
    ]
}

impl ToyCorpus {
    /// Word vocabularies from the training side of every corpus, in the
    /// order of `self.languages`.
    pub fn vocabularies(&self) -> Result<Vec<Vocabulary>> {
        let mut texts: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in &self.parallel {
            for (s, t) in &p.train {
                texts.entry(&p.pair.src).or_default().push(s);
                texts.entry(&p.pair.tgt).or_default().push(t);
            }
        }
        self.languages
            .iter()
            .map(|l| {
                let lines = texts.get(l.code.as_str()).cloned().unwrap_or_default();
                let counts = count_tokens(lines.iter().flat_map(|s| tokenize(s)));
                Ok(Vocabulary::build(l.code.clone(), &counts, 1, usize::MAX))
            })
            .collect()
    }

    fn encode(
        vocabs: &[Vocabulary],
        pair: &LanguagePair,
        lines: &[(String, String)],
    ) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        let v = |c: &str| {
            vocabs
                .iter()
                .find(|v| v.language() == c)
                .ok_or_else(|| Error::UnknownLanguage(c.to_string()))
        };
        let (vs, vt) = (v(&pair.src)?, v(&pair.tgt)?);
        Ok(lines
            .iter()
            .map(|(s, t)| (encode_sentence(vs, &tokenize(s)), encode_sentence(vt, &tokenize(t))))
            .collect())
    }

    pub fn train_corpora(&self, vocabs: &[Vocabulary]) -> Result<Vec<ParallelCorpus>> {
        self.parallel
            .iter()
            .map(|p| {
                Ok(ParallelCorpus {
                    pair: p.pair.clone(),
                    examples: Self::encode(vocabs, &p.pair, &p.train)?,
                })
            })
            .collect()
    }

    pub fn dev_sets(&self, vocabs: &[Vocabulary]) -> Result<Vec<DevSet>> {
        self.parallel
            .iter()
            .map(|p| {
                Ok(DevSet {
                    pair: p.pair.clone(),
                    examples: Self::encode(vocabs, &p.pair, &p.dev)?,
                })
            })
            .collect()
    }

    pub fn test_sets(&self, vocabs: &[Vocabulary]) -> Result<Vec<DevSet>> {
        self.parallel
            .iter()
            .map(|p| {
                Ok(DevSet {
                    pair: p.pair.clone(),
                    examples: Self::encode(vocabs, &p.pair, &p.test)?,
                })
            })
            .collect()
    }
}
