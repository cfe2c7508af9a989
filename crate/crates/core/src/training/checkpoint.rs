//! Binary checkpoint container:
//!
//! ```text
//! "CPGC" | u32 version | u64 n | n bytes of TOML metadata | u64 count |
//! count × (u32 n | name | u8 dtype | u32 rank | rank × u64 extent | data)
//! ```
//!
//! All integers and tensor data are little-endian. Optimizer moments are
//! stored as ordinary records named `opt.m/…`, `opt.v/…` and `opt.vhat/…`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optimizer::{AmsGrad, AmsGradConfig, Moments};
use crate::error::{Error, Result};
use crate::generator::ParamStore;
use crate::model::{ModelConfig, TranslationModel};
use crate::tensor::{DType, Element, Tensor};
use crate::text::{BpeModel, Vocabulary};

pub const MAGIC: &[u8; 4] = b"CPGC";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENT_PREFIXES: [&str; 3] = ["opt.m/", "opt.v/", "opt.vhat/"];

/// Everything needed to translate with, or resume training of, a model.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Element> {
    pub model: TranslationModel<T>,
    pub optimizer: Option<AmsGrad<T>>,
    /// Training steps taken so far.
    pub step: u64,
    /// Free-form provenance, e.g. the experiment configuration.
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AmsGradConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    step: u64,
    languages: Vec<String>,
    model: ModelConfig,
    optimizer: Option<OptimizerMeta>,
    vocabularies: BTreeMap<String, Vec<String>>,
    bpe: BTreeMap<String, Vec<[String; 2]>>,
    notes: BTreeMap<String, String>,
}

impl<T: Element> Checkpoint<T> {
    pub fn new(model: TranslationModel<T>) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            step: 0,
            notes: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            step: self.step,
            languages: self.model.languages().to_vec(),
            model: self.model.config().clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                config: o.config,
                step: o.step,
            }),
            vocabularies: self
                .model
                .vocabs()
                .map(|v| (v.language().to_string(), v.content_tokens().to_vec()))
                .collect(),
            bpe: self
                .model
                .bpe_models()
                .iter()
                .map(|(k, b)| {
                    (
                        k.clone(),
                        b.merges().iter().map(|(l, r)| [l.clone(), r.clone()]).collect(),
                    )
                })
                .collect(),
            notes: self.notes.clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Corrupt(format!("cannot encode metadata: {e}")))?;

        let mut records: Vec<(String, &Tensor<T>)> = self.model.params().iter().map(|(k, v)| (k.clone(), v)).collect();
        if let Some(opt) = &self.optimizer {
            for (name, st) in &opt.moments {
                for (prefix, t) in MOMENT_PREFIXES.iter().zip([&st.m, &st.v, &st.vhat]) {
                    records.push((format!("{prefix}{name}"), t));
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.len_u64()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Corrupt("metadata is not UTF-8".into()))?;
        let meta: Metadata = toml::from_str(text).map_err(|e| Error::Corrupt(format!("bad metadata: {e}")))?;

        let count = r.len_u64()?;
        let mut params = ParamStore::new();
        let mut moments: [BTreeMap<String, Tensor<T>>; 3] = Default::default();
        for _ in 0..count {
            let (name, t) = r.tensor::<T>()?;
            match MOMENT_PREFIXES.iter().position(|p| name.starts_with(p)) {
                Some(k) => {
                    moments[k].insert(name[MOMENT_PREFIXES[k].len()..].to_string(), t);
                }
                None => {
                    if params.contains(&name) {
                        return Err(Error::Corrupt(format!("duplicate tensor `{name}`")));
                    }
                    params.insert(name, t);
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes after last tensor".into()));
        }

        let optimizer = match meta.optimizer {
            None => None,
            Some(o) => {
                let [mut m, mut v, mut vhat] = moments;
                let mut state = BTreeMap::new();
                for (name, mt) in std::mem::take(&mut m) {
                    let (Some(vt), Some(ht)) = (v.remove(&name), vhat.remove(&name)) else {
                        return Err(Error::Corrupt(format!("incomplete optimizer state for `{name}`")));
                    };
                    let p = params
                        .get(&name)
                        .map_err(|_| Error::Corrupt(format!("optimizer state for unknown tensor `{name}`")))?;
                    if mt.shape() != p.shape() || vt.shape() != p.shape() || ht.shape() != p.shape() {
                        return Err(Error::Corrupt(format!("optimizer state shape mismatch for `{name}`")));
                    }
                    state.insert(name, Moments { m: mt, v: vt, vhat: ht });
                }
                if !v.is_empty() || !vhat.is_empty() {
                    return Err(Error::Corrupt("incomplete optimizer state".into()));
                }
                Some(AmsGrad {
                    config: o.config,
                    step: o.step,
                    moments: state,
                })
            }
        };

        let vocabs = meta
            .vocabularies
            .into_iter()
            .map(|(lang, tokens)| Vocabulary::from_tokens(lang, tokens))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Corrupt(format!("bad vocabulary: {e}")))?;
        let bpe = meta
            .bpe
            .into_iter()
            .map(|(lang, merges)| Ok((lang, BpeModel::new(merges.into_iter().map(|[l, r]| (l, r)).collect())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let model = TranslationModel::from_parts(meta.model, meta.languages, vocabs, bpe, params)?;
        Ok(Checkpoint {
            model,
            optimizer,
            step: meta.step,
            notes: meta.notes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A length that must fit in what is left of the buffer.
    fn len_u64(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("implausible length {n}")))
    }

    fn tensor<T: Element>(&mut self) -> Result<(String, Tensor<T>)> {
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype =
            DType::from_tag(self.take(1)?[0]).ok_or_else(|| Error::Corrupt(format!("unknown dtype for `{name}`")))?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Corrupt(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = self.len_u64()?;
            count = count
                .checked_mul(d)
                .filter(|&c| c <= self.bytes.len())
                .ok_or_else(|| Error::Corrupt(format!("tensor `{name}` is too large")))?;
            shape.push(d);
        }
        let raw = self.take(count * dtype.size())?;
        let data: Vec<T> = if dtype == T::DTYPE {
            raw.chunks_exact(dtype.size()).map(T::read_le).collect()
        } else {
            match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            }
        };
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}
