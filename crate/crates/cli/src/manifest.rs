//! Dataset manifests: which files hold which languages.
//!
//! ```toml
//! languages = ["en", "de", "it"]      # optional, checked when present
//!
//! [[parallel]]
//! src = "en"
//! tgt = "de"
//! src_file = "train.en-de.en"
//! tgt_file = "train.en-de.de"
//! split = "train"                     # train | dev | test
//!
//! [[monolingual]]
//! lang = "it"
//! file = "mono.it"
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelResource {
    pub src: String,
    pub tgt: String,
    pub src_file: PathBuf,
    pub tgt_file: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonolingualResource {
    pub lang: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    languages: Option<Vec<String>>,
    #[serde(default)]
    parallel: Vec<ParallelResource>,
    #[serde(default)]
    monolingual: Vec<MonolingualResource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Sorted union of every language mentioned by a resource.
    pub languages: Vec<String>,
    pub parallel: Vec<ParallelResource>,
    pub monolingual: Vec<MonolingualResource>,
}

pub fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

impl DatasetManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates; every file must exist and paired files must
    /// have equal line counts.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| CliError::Data(format!("manifest syntax: {e}")))?;
        let mut parallel = raw.parallel;
        let mut monolingual = raw.monolingual;
        for p in &mut parallel {
            p.src_file = base.join(&p.src_file);
            p.tgt_file = base.join(&p.tgt_file);
        }
        for m in &mut monolingual {
            m.file = base.join(&m.file);
        }

        let mut used = BTreeSet::new();
        for p in &parallel {
            if p.src == p.tgt {
                return Err(CliError::Data(format!(
                    "manifest: parallel resource {} pairs `{}` with itself",
                    p.src_file.display(),
                    p.src
                )));
            }
            used.insert(p.src.clone());
            used.insert(p.tgt.clone());
        }
        used.extend(monolingual.iter().map(|m| m.lang.clone()));
        if used.is_empty() {
            return Err(CliError::Data("manifest lists no resources".into()));
        }
        if let Some(declared) = raw.languages {
            let declared: BTreeSet<String> = declared.into_iter().collect();
            if declared != used {
                return Err(CliError::Data(format!(
                    "manifest languages {:?} do not match the languages of its resources {:?}",
                    declared, used
                )));
            }
        }

        for p in &parallel {
            let (s, t) = (count_lines(&p.src_file)?, count_lines(&p.tgt_file)?);
            if s != t {
                return Err(CliError::Data(format!(
                    "data integrity error: {} has {s} lines but {} has {t}",
                    p.src_file.display(),
                    p.tgt_file.display()
                )));
            }
        }
        for m in &monolingual {
            count_lines(&m.file)?;
        }
        Ok(DatasetManifest {
            languages: used.into_iter().collect(),
            parallel,
            monolingual,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ParallelResource> {
        self.parallel.iter().filter(move |p| p.split == split)
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.parallel.iter().map(|p| p.src.as_str()).collect()
    }

    pub fn targets(&self) -> BTreeSet<&str> {
        self.parallel.iter().map(|p| p.tgt.as_str()).collect()
    }

    /// Number of distinct training directions.
    pub fn corpus_count(&self) -> usize {
        self.split(Split::Train)
            .map(|p| (&p.src, &p.tgt))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Every training sentence available in `lang`: its side of each training
    /// corpus plus its monolingual files.
    pub fn training_text(&self, lang: &str) -> CliResult<Vec<String>> {
        let mut out = Vec::new();
        for p in self.split(Split::Train) {
            if p.src == lang {
                out.extend(read_lines(&p.src_file)?);
            }
            if p.tgt == lang {
                out.extend(read_lines(&p.tgt_file)?);
            }
        }
        for m in self.monolingual.iter().filter(|m| m.lang == lang) {
            out.extend(read_lines(&m.file)?);
        }
        Ok(out)
    }
}

fn count_lines(path: &Path) -> CliResult<usize> {
    Ok(read_lines(path)?.len())
}
