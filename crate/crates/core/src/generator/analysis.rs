use std::io::Write;

use super::store::ParamStore;
use super::variant::{language_embedding_name, ParamGenerator};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// The L×M matrix of language embeddings, one row per registered language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageEmbeddingTable {
    languages: Vec<String>,
    matrix: Tensor<f64>,
}

impl LanguageEmbeddingTable {
    pub fn new(languages: Vec<String>, matrix: Tensor<f64>) -> Result<Self> {
        let (rows, _) = matrix.dims2()?;
        if matrix.rank() != 2 || rows != languages.len() {
            return Err(Error::shape("embedding table needs one row per language"));
        }
        Ok(LanguageEmbeddingTable { languages, matrix })
    }

    pub fn from_store<T: Element>(generator: &ParamGenerator, store: &ParamStore<T>) -> Result<Self> {
        if !generator.variant().is_cpg() {
            return Err(Error::contract(format!(
                "{} models have no language embeddings",
                generator.variant()
            )));
        }
        let m = generator.lang_dim();
        let mut data = Vec::with_capacity(generator.languages().len() * m);
        for code in generator.languages() {
            data.extend(store.get(&language_embedding_name(code))?.to_f64_vec());
        }
        Self::new(
            generator.languages().to_vec(),
            Tensor::new(vec![generator.languages().len(), m], data)?,
        )
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn matrix(&self) -> &Tensor<f64> {
        &self.matrix
    }
}

/// `d(i, j) = 1 − cos(l_i, l_j)`; symmetric with an exact zero diagonal.
pub fn cosine_distance_matrix(table: &LanguageEmbeddingTable) -> Result<Tensor<f64>> {
    let m = &table.matrix;
    let n = table.languages.len();
    let norms: Vec<f64> = (0..n)
        .map(|i| m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateEmbedding(table.languages[i].clone()));
    }
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
            let d = 1.0 - dot / (norms[i] * norms[j]);
            out.data_mut()[i * n + j] = d;
            out.data_mut()[j * n + i] = d;
        }
    }
    Ok(out)
}

/// TSV with a header row and column of language codes, 5-decimal cells.
pub fn write_distance_tsv(languages: &[String], distances: &Tensor<f64>, mut out: impl Write) -> Result<()> {
    write!(out, "lang")?;
    for l in languages {
        write!(out, "\t{l}")?;
    }
    writeln!(out)?;
    for (i, l) in languages.iter().enumerate() {
        write!(out, "{l}")?;
        for v in distances.row(i) {
            write!(out, "\t{v:.5}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
