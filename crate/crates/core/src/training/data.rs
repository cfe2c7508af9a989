use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A translation direction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguagePair {
    pub src: String,
    pub tgt: String,
}

impl LanguagePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        LanguagePair {
            src: src.into(),
            tgt: tgt.into(),
        }
    }

    pub fn is_autoencode(&self) -> bool {
        self.src == self.tgt
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

/// Sentence-aligned id sequences (each ending in EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pair: LanguagePair,
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub pair: LanguagePair,
    pub examples: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Uniform draw from the pair list.
pub fn sample_language_pair<'a, R: Rng>(pairs: &'a [LanguagePair], rng: &mut R) -> Result<&'a LanguagePair> {
    pairs
        .choose(rng)
        .ok_or_else(|| Error::contract("no language pairs to sample from"))
}

/// Source and target are the same sentences in language `lang`.
pub fn make_autoencode_batch(sentences: &[Vec<usize>], lang: &str) -> Batch {
    Batch {
        pair: LanguagePair::new(lang, lang),
        sources: sentences.to_vec(),
        targets: sentences.to_vec(),
    }
}

/// Sorted indices of a seeded random `⌊fraction·n⌋`-subset of `0..n`.
pub fn low_resource_subset(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "parallel fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = (fraction * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Parallel examples per direction plus a monolingual pool per language.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    parallel: BTreeMap<LanguagePair, Vec<(Vec<usize>, Vec<usize>)>>,
    monolingual: BTreeMap<String, Vec<Vec<usize>>>,
}

impl TrainingData {
    /// Keeps a `parallel_fraction` subset of every parallel corpus as
    /// parallel data. Every sentence of every corpus, kept or not, also joins
    /// its language's monolingual pool, after the explicit monolingual data.
    pub fn new(
        corpora: Vec<ParallelCorpus>,
        monolingual: BTreeMap<String, Vec<Vec<usize>>>,
        parallel_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut data = TrainingData {
            parallel: BTreeMap::new(),
            monolingual,
        };
        for (i, corpus) in corpora.into_iter().enumerate() {
            let keep = low_resource_subset(corpus.examples.len(), parallel_fraction, seed.wrapping_add(i as u64))?;
            let pair = corpus.pair.clone();
            for (s, t) in &corpus.examples {
                data.monolingual.entry(pair.src.clone()).or_default().push(s.clone());
                data.monolingual.entry(pair.tgt.clone()).or_default().push(t.clone());
            }
            let kept: Vec<_> = keep.into_iter().map(|j| corpus.examples[j].clone()).collect();
            if !kept.is_empty() {
                data.parallel.entry(pair).or_default().extend(kept);
            }
        }
        data.monolingual.retain(|_, v| !v.is_empty());
        Ok(data)
    }

    pub fn parallel(&self, pair: &LanguagePair) -> &[(Vec<usize>, Vec<usize>)] {
        self.parallel.get(pair).map_or(&[], Vec::as_slice)
    }

    pub fn monolingual(&self, lang: &str) -> &[Vec<usize>] {
        self.monolingual.get(lang).map_or(&[], Vec::as_slice)
    }

    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self
            .parallel
            .keys()
            .flat_map(|p| [p.src.clone(), p.tgt.clone()])
            .chain(self.monolingual.keys().cloned())
            .collect();
        langs.sort();
        langs.dedup();
        langs
    }

    /// Supervised directions, plus `(ℓ, ℓ)` for every language with
    /// monolingual data when auto-encoding is on.
    pub fn pairs(&self, autoencode: bool) -> Vec<LanguagePair> {
        let mut pairs: Vec<LanguagePair> = self.parallel.keys().cloned().collect();
        if autoencode {
            for lang in self.monolingual.keys() {
                let p = LanguagePair::new(lang.clone(), lang.clone());
                if !pairs.contains(&p) {
                    pairs.push(p);
                }
            }
        }
        pairs.sort();
        pairs
    }

    /// Up to `size` distinct examples of `pair`, drawn uniformly.
    pub fn sample_batch<R: Rng>(&self, pair: &LanguagePair, size: usize, rng: &mut R) -> Result<Batch> {
        if pair.is_autoencode() && !self.parallel.contains_key(pair) {
            let pool = self.monolingual(&pair.src);
            if pool.is_empty() {
                return Err(Error::contract(format!("no monolingual data for `{}`", pair.src)));
            }
            let picked: Vec<Vec<usize>> = index::sample(rng, pool.len(), size.min(pool.len()))
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            return Ok(make_autoencode_batch(&picked, &pair.src));
        }
        let pool = self.parallel(pair);
        if pool.is_empty() {
            return Err(Error::contract(format!("no parallel data for `{pair}`")));
        }
        let (sources, targets) = index::sample(rng, pool.len(), size.min(pool.len()))
            .into_iter()
            .map(|i| pool[i].clone())
            .unzip();
        Ok(Batch {
            pair: pair.clone(),
            sources,
            targets,
        })
    }

    /// Data restricted to directions and pools touching `lang`.
    pub fn involving(&self, lang: &str) -> TrainingData {
        TrainingData {
            parallel: self
                .parallel
                .iter()
                .filter(|(p, _)| p.src == lang || p.tgt == lang)
                .map(|(p, v)| (p.clone(), v.clone()))
                .collect(),
            monolingual: self
                .monolingual
                .iter()
                .filter(|(l, _)| l.as_str() == lang)
                .map(|(l, v)| (l.clone(), v.clone()))
                .collect(),
        }
    }
}
