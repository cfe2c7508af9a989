use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Per-language token ↔ index map. Indices below [`NUM_SPECIALS`] are the
/// special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    language: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Frequency table of a token stream, ordered for determinism.
pub fn count_tokens<I, S>(corpus: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = BTreeMap::new();
    for tok in corpus {
        *counts.entry(tok.as_ref().to_string()).or_insert(0) += 1;
    }
    counts
}

impl Vocabulary {
    /// Builds from non-special tokens in index order.
    pub fn from_tokens(language: impl Into<String>, content: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(content);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{tok}`")));
            }
        }
        Ok(Vocabulary {
            language: language.into(),
            tokens,
            index,
        })
    }

    /// Keeps tokens seen at least `min_count` times, ranked by descending
    /// frequency then ascending token, truncated to `cap` (specials excluded).
    pub fn build(language: impl Into<String>, counts: &BTreeMap<String, u64>, min_count: u64, cap: usize) -> Self {
        let mut ranked: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(tok, &c)| c >= min_count && !SPECIAL_TOKENS.contains(&tok.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let content = ranked.into_iter().map(|(t, _)| t.clone()).collect();
        Self::from_tokens(language, content).expect("counts keys are unique")
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::Lookup {
            index: id,
            size: self.tokens.len(),
        })
    }

    /// Non-special tokens in index order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    /// One token per line; line `i` holds index `i + NUM_SPECIALS`.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        for tok in self.content_tokens() {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn read_from(language: impl Into<String>, input: impl BufRead) -> Result<Self> {
        let content = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(language, content)
    }
}

/// Maps tokens to ids (unknowns to UNK) and appends EOS.
pub fn encode_sentence<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK))
        .chain(std::iter::once(EOS))
        .collect()
}

/// Maps ids back to tokens, stopping at the first EOS and dropping PAD/BOS.
pub fn decode_sentence(vocab: &Vocabulary, ids: &[usize]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for &id in ids {
        if id == EOS {
            break;
        }
        let tok = vocab.token(id)?;
        if id != PAD && id != BOS {
            out.push(tok.to_string());
        }
    }
    Ok(out)
}
