//! Byte-pair encoding: merge learning and application.
//!
//! Words are split into characters followed by a separate [`END_OF_WORD`]
//! symbol. Learning repeatedly merges the most frequent adjacent pair, with
//! ties broken by ascending `(left, right)`; only words containing the merged
//! pair are revisited, and candidate pairs live in an ordered set so the best
//! pair is found without rescanning the corpus.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
const FILE_MAGIC: &str = "#cpg-bpe";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    marker: String,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate merge {pair:?}")));
            }
        }
        Ok(BpeModel {
            merges,
            marker: END_OF_WORD.to_string(),
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{FILE_MAGIC} v{FILE_VERSION} {}", self.marker)?;
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}")?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Corrupt("empty BPE file".into()))??;
        let fields: Vec<&str> = header.split(' ').collect();
        match fields.as_slice() {
            [FILE_MAGIC, v, marker] if *marker == END_OF_WORD => {
                let found: u32 = v
                    .strip_prefix('v')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::Corrupt(format!("bad BPE header `{header}`")))?;
                if found != FILE_VERSION {
                    return Err(Error::Version {
                        found,
                        expected: FILE_VERSION,
                    });
                }
            }
            _ => return Err(Error::Corrupt(format!("bad BPE header `{header}`"))),
        }
        let mut merges = Vec::new();
        for line in lines {
            let line = line?;
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::Corrupt(format!("bad merge line `{line}`")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        Self::new(merges)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

/// Merges every non-overlapping occurrence of `(left, right)`, left to right.
fn merge_word<S: AsRef<str> + From<String>>(symbols: &[S], left: &str, right: &str) -> Vec<S> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i].as_ref() == left && symbols[i + 1].as_ref() == right {
            out.push(S::from(format!("{left}{right}")));
            i += 2;
        } else {
            out.push(S::from(symbols[i].as_ref().to_string()));
            i += 1;
        }
    }
    out
}

type Pair = (u32, u32);

struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }
}

/// Learns up to `num_merges` merges from word frequencies.
pub fn learn_bpe(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> BpeModel {
    let mut table = SymbolTable {
        names: Vec::new(),
        ids: HashMap::new(),
    };
    let mut words: Vec<(Vec<u32>, i64)> = word_counts
        .iter()
        .map(|(w, &c)| {
            let syms = initial_symbols(w).iter().map(|s| table.intern(s)).collect();
            (syms, c as i64)
        })
        .collect();

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_insert(0) += c;
            where_.entry(pair).or_default().insert(wi);
        }
    }
    // Ordered by descending count, then ascending (left, right) strings.
    let mut queue: BTreeSet<(Reverse<i64>, String, String, Pair)> =
        counts.iter().map(|(&p, &c)| key(&table, p, c)).collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some(best) = queue.pop_first() else { break };
        let (Reverse(count), left, right, pair) = best;
        if count < 2 {
            break;
        }
        let merged = table.intern(&format!("{left}{right}"));
        let mut deltas: HashMap<Pair, i64> = HashMap::new();
        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            if !syms.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in syms.windows(2) {
                *deltas.entry((p[0], p[1])).or_insert(0) -= *c;
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            *syms = next;
            for p in syms.windows(2) {
                let np = (p[0], p[1]);
                *deltas.entry(np).or_insert(0) += *c;
                where_.entry(np).or_default().insert(wi);
            }
        }
        for (p, d) in deltas {
            if d == 0 {
                continue;
            }
            let old = counts.get(&p).copied().unwrap_or(0);
            if old > 0 && p != pair {
                queue.remove(&key(&table, p, old));
            }
            let new = old + d;
            if new > 0 {
                counts.insert(p, new);
                queue.insert(key(&table, p, new));
            } else {
                counts.remove(&p);
            }
        }
        counts.remove(&pair);
        merges.push((left, right));
    }
    BpeModel::new(merges).expect("each pair is merged at most once")
}

fn key(table: &SymbolTable, p: Pair, c: i64) -> (Reverse<i64>, String, String, Pair) {
    (
        Reverse(c),
        table.names[p.0 as usize].clone(),
        table.names[p.1 as usize].clone(),
        p,
    )
}

/// Segments `word` by applying the learned merges in order.
pub fn apply_bpe(model: &BpeModel, word: &str) -> Vec<String> {
    let mut symbols = initial_symbols(word);
    loop {
        let best = symbols
            .windows(2)
            .filter_map(|p| model.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p)))
            .min_by_key(|(r, _)| *r)
            .map(|(_, p)| (p[0].clone(), p[1].clone()));
        let Some((l, r)) = best else { break };
        symbols = merge_word(&symbols, &l, &r);
    }
    symbols
}

/// Concatenates subword units and strips the trailing end-of-word marker.
pub fn reconstruct_word<S: AsRef<str>>(units: &[S]) -> String {
    let joined: String = units.iter().map(|u| u.as_ref()).collect();
    joined.strip_suffix(END_OF_WORD).map(str::to_string).unwrap_or(joined)
}

#[cfg(test)]
pub(crate) mod reference {
    //! Naive learner used as an oracle: recounts every pair on each merge.
    use super::*;

    pub fn naive_learn_bpe(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> Vec<(String, String)> {
        let mut words: Vec<(Vec<String>, u64)> = word_counts.iter().map(|(w, &c)| (initial_symbols(w), c)).collect();
        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
            for (syms, c) in &words {
                for p in syms.windows(2) {
                    *counts.entry((p[0].clone(), p[1].clone())).or_insert(0) += c;
                }
            }
            let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
            let Some((pair, &c)) = best else { break };
            if c < 2 {
                break;
            }
            let pair = pair.clone();
            for (syms, _) in &mut words {
                *syms = merge_word(syms, &pair.0, &pair.1);
            }
            merges.push(pair);
        }
        merges
    }
}

#[cfg(test)]
mod tests {
    use super::reference::naive_learn_bpe;
    use super::*;
    use proptest::prelude::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn classic_corpus_first_merge() {
        let c = counts(&[("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]);
        let m = learn_bpe(&c, 1);
        assert_eq!(m.merges(), [pair("e", "s")]);
        assert_eq!(naive_learn_bpe(&c, 1), m.merges());
    }

    #[test]
    fn zero_merges() {
        let c = counts(&[("low", 5)]);
        assert!(learn_bpe(&c, 0).merges().is_empty());
    }

    #[test]
    fn single_word_aa() {
        let c = counts(&[("aa", 1)]);
        // Each of (a,a) and (a,</w>) occurs once: nothing reaches frequency 2.
        assert!(learn_bpe(&c, 1).merges().is_empty());
        let c = counts(&[("aa", 2)]);
        assert_eq!(learn_bpe(&c, 1).merges(), [pair("a", "</w>")]);
        assert_eq!(naive_learn_bpe(&c, 1), [pair("a", "</w>")]);
        let c = counts(&[("aaa", 1)]);
        assert_eq!(learn_bpe(&c, 1).merges(), [pair("a", "a")]);
    }

    #[test]
    fn apply_in_order() {
        let m = BpeModel::new(vec![pair("e", "s"), pair("es", "t")]).unwrap();
        assert_eq!(apply_bpe(&m, "west"), ["w", "est", "</w>"]);
        let empty = BpeModel::new(vec![]).unwrap();
        assert_eq!(apply_bpe(&empty, "ab"), ["a", "b", "</w>"]);
    }

    #[test]
    fn training_segmentation_is_reproduced() {
        let c = counts(&[("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]);
        let m = learn_bpe(&c, 10);
        assert_eq!(apply_bpe(&m, "newest"), ["newest</w>"]);
        assert_eq!(apply_bpe(&m, "low"), ["low</w>"]);
    }

    #[test]
    fn duplicate_merges_rejected() {
        assert!(BpeModel::new(vec![pair("a", "b"), pair("a", "b")]).is_err());
    }

    #[test]
    fn file_roundtrip_and_version() {
        let c = counts(&[("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]);
        let m = learn_bpe(&c, 6);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("#cpg-bpe v1 </w>\n"));
        assert_eq!(BpeModel::read_from(&buf[..]).unwrap(), m);
        let bad = b"#cpg-bpe v9 </w>\n";
        assert!(matches!(
            BpeModel::read_from(&bad[..]),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }

    proptest! {
        #[test]
        fn matches_naive_reference(
            raw in proptest::collection::btree_map("[abc]{1,6}", 1u64..6, 1..12),
            merges in 0usize..15
        ) {
            let fast = learn_bpe(&raw, merges);
            let naive = naive_learn_bpe(&raw, merges);
            prop_assert_eq!(fast.merges(), naive.as_slice());
        }

        #[test]
        fn reconstruction_identity(word in "[ -~]{0,12}", merges in 0usize..30) {
            let corpus = counts(&[("banana", 4), ("bandana", 3), ("an</w>a", 2), ("<>/w", 2)]);
            let m = learn_bpe(&corpus, merges);
            prop_assert_eq!(reconstruct_word(&apply_bpe(&m, &word)), word);
        }
    }
}
