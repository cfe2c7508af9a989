use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a generated parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A named subset of a network's parameters, the unit of low-rank generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub entries: Vec<LayoutEntry>,
}

impl ParamGroup {
    pub fn size(&self) -> usize {
        self.entries.iter().map(LayoutEntry::size).sum()
    }

    pub fn offset(&self) -> usize {
        self.entries.first().map_or(0, |e| e.offset)
    }
}

/// Ordered grouping of a network's parameters into one flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    groups: Vec<ParamGroup>,
    total: usize,
}

impl ParameterLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Total scalar count (P^(enc) or P^(dec)).
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> impl Iterator<Item = &LayoutEntry> {
        self.groups.iter().flat_map(|g| g.entries.iter())
    }

    pub fn entry(&self, name: &str) -> Result<&LayoutEntry> {
        self.entries()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::contract(format!("no layout entry `{name}`")))
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    groups: Vec<ParamGroup>,
    offset: usize,
}

impl LayoutBuilder {
    pub fn group(mut self, name: &str, entries: &[(&str, &[usize])]) -> Self {
        let mut out = Vec::with_capacity(entries.len());
        for (entry, shape) in entries {
            let e = LayoutEntry {
                name: format!("{name}.{entry}"),
                shape: shape.to_vec(),
                offset: self.offset,
            };
            self.offset += e.size();
            out.push(e);
        }
        self.groups.push(ParamGroup {
            name: name.to_string(),
            entries: out,
        });
        self
    }

    pub fn build(self) -> Result<ParameterLayout> {
        let mut seen = std::collections::HashSet::new();
        for g in &self.groups {
            if !seen.insert(g.name.clone()) {
                return Err(Error::contract(format!("duplicate group `{}`", g.name)));
            }
            for e in &g.entries {
                if e.size() == 0 {
                    return Err(Error::contract(format!("empty layout entry `{}`", e.name)));
                }
            }
        }
        if self.groups.is_empty() || self.offset == 0 {
            return Err(Error::contract("empty parameter layout"));
        }
        Ok(ParameterLayout {
            groups: self.groups,
            total: self.offset,
        })
    }
}
