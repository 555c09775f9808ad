//! Exact cosine top-k search over sentence embeddings.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::textindex::rank_hits;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),
    #[error("non-finite entry at row {0}")]
    NonFinite(usize),
    #[error("embedding dimension must be at least 1")]
    EmptyDim,
    #[error("unknown row {0}")]
    UnknownRow(usize),
    #[error("top-k must be at least 1")]
    ZeroK,
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 {
        return Err(EmbedError::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(EmbedError::ZeroNorm(1));
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Row-major embeddings, one row per sentence in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EmbedError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 && !rows.is_empty() {
            return Err(EmbedError::EmptyDim);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(EmbedError::DimMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite(i));
            }
            if row.iter().all(|&x| x == 0.0) {
                return Err(EmbedError::ZeroNorm(i));
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        (i < self.len()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Exact top-`k` rows by cosine similarity to row `query`, self excluded.
    pub fn top_k(&self, query: usize, k: usize) -> Result<Vec<(usize, f64)>, EmbedError> {
        if k == 0 {
            return Err(EmbedError::ZeroK);
        }
        let q = self.row(query).ok_or(EmbedError::UnknownRow(query))?;
        let mut hits = Vec::with_capacity(self.len().saturating_sub(1));
        for (i, row) in self.rows().enumerate() {
            if i != query {
                hits.push((i, cosine(q, row)?));
            }
        }
        rank_hits(&mut hits, k);
        Ok(hits)
    }

    /// `top_k` for every row, computed in parallel.
    pub fn top_k_all(&self, k: usize) -> Result<Vec<Vec<(usize, f64)>>, EmbedError> {
        (0..self.len())
            .into_par_iter()
            .map(|q| self.top_k(q, k))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
    dim: usize,
    rows: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    id: u32,
    vector: Vec<f64>,
}

const CACHE_FORMAT: &str = "silverforge-embeddings";
const CACHE_VERSION: u32 = 1;

/// Writes a JSONL embedding cache: a header line, then one `{id, vector}` per row.
pub fn save_cache<W: Write>(mut out: W, matrix: &EmbeddingMatrix) -> Result<(), EmbedError> {
    let header = CacheHeader {
        format: CACHE_FORMAT.into(),
        version: CACHE_VERSION,
        dim: matrix.dim(),
        rows: matrix.len(),
    };
    let to_io = |e: serde_json::Error| EmbedError::Io(e.into());
    serde_json::to_writer(&mut out, &header).map_err(to_io)?;
    out.write_all(b"\n")?;
    for (id, row) in matrix.rows().enumerate() {
        let row = CacheRow {
            id: id as u32,
            vector: row.to_vec(),
        };
        serde_json::to_writer(&mut out, &row).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<EmbeddingMatrix, EmbedError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| EmbedError::Cache("empty file".into()))??;
    let header: CacheHeader =
        serde_json::from_str(&header_line).map_err(|e| EmbedError::Cache(e.to_string()))?;
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(EmbedError::Cache(format!(
            "unsupported header {}/{}",
            header.format, header.version
        )));
    }
    let mut rows = Vec::with_capacity(header.rows);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CacheRow =
            serde_json::from_str(&line).map_err(|e| EmbedError::Cache(e.to_string()))?;
        if row.id as usize != rows.len() {
            return Err(EmbedError::Cache(format!(
                "expected id {}, found {}",
                rows.len(),
                row.id
            )));
        }
        if row.vector.len() != header.dim {
            return Err(EmbedError::DimMismatch {
                left: header.dim,
                right: row.vector.len(),
            });
        }
        rows.push(row.vector);
    }
    if rows.len() != header.rows {
        return Err(EmbedError::Cache(format!(
            "header declares {} rows, found {}",
            header.rows,
            rows.len()
        )));
    }
    EmbeddingMatrix::from_rows(rows)
}
