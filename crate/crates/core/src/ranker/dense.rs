use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RankerError;
use crate::corpus::DocKind;
use crate::encoder::Embedding;
use crate::numerics::dot;

pub const INDEX_MAGIC: &[u8] = b"CFIDX1";

/// Flat row-major matrix of embeddings searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    kind: Option<DocKind>,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    n: usize,
    d: usize,
    kind: Option<DocKind>,
    ids: Vec<String>,
}

impl DenseIndex {
    /// Builds an index; all embeddings must share dimension and kind.
    pub fn build(embeddings: &[Embedding]) -> Result<Self, RankerError> {
        let dim = embeddings.first().map_or(0, Embedding::dim);
        let kind = embeddings.first().map(|e| e.kind);
        let mut seen = HashSet::with_capacity(embeddings.len());
        let mut data = Vec::with_capacity(embeddings.len() * dim);
        for e in embeddings {
            if e.dim() != dim {
                return Err(RankerError::DimMismatch { expected: dim, got: e.dim() });
            }
            if let Some(k) = kind {
                if e.kind != k {
                    return Err(RankerError::MixedKinds(k, e.kind));
                }
            }
            if !seen.insert(e.id.as_str()) {
                return Err(RankerError::DuplicateId(e.id.clone()));
            }
            data.extend_from_slice(&e.vector);
        }
        Ok(Self { kind, dim, ids: embeddings.iter().map(|e| e.id.clone()).collect(), data })
    }

    /// Builds from raw rows, for benchmarks and tests.
    pub fn from_rows(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, RankerError> {
        if data.len() != ids.len() * dim {
            return Err(RankerError::DimMismatch { expected: ids.len() * dim, got: data.len() });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(RankerError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { kind: None, dim, ids, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> Option<DocKind> {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// The `k` highest inner products, ties broken by ascending id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<(String, f32)>, RankerError> {
        self.top_k_range(query, k, 0..self.len())
    }

    /// [`Self::top_k`] restricted to rows in `rows`.
    pub fn top_k_range(&self, query: &[f32], k: usize, rows: Range<usize>) -> Result<Vec<(String, f32)>, RankerError> {
        if k == 0 {
            return Err(RankerError::ZeroK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(RankerError::DimMismatch { expected: self.dim, got: query.len() });
        }
        if rows.end > self.len() {
            return Err(RankerError::PoolTooLarge { pool: rows.end, n: self.len() });
        }
        let mut scored: Vec<(f32, usize)> = rows.map(|i| (dot(self.row(i), query), i)).collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| match b.0.total_cmp(&a.0) {
            Ordering::Equal => self.ids[a.1].cmp(&self.ids[b.1]),
            o => o,
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored.into_iter().map(|(s, i)| (self.ids[i].clone(), s)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader { n: self.len(), d: self.dim, kind: self.kind, ids: self.ids.clone() };
        let mut out = Vec::with_capacity(self.data.len() * 4 + 64);
        out.extend_from_slice(INDEX_MAGIC);
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serialises").as_bytes());
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RankerError> {
        let bad = |m: &str| RankerError::Format(m.to_string());
        let rest = bytes
            .strip_prefix(INDEX_MAGIC)
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| bad("bad magic"))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
        let header: IndexHeader = serde_json::from_slice(&rest[..nl]).map_err(|e| RankerError::Format(e.to_string()))?;
        let body = &rest[nl + 1..];
        if header.ids.len() != header.n {
            return Err(bad("id table length differs from n"));
        }
        if body.len() != header.n * header.d * 4 {
            return Err(bad("matrix size differs from n*d"));
        }
        let data = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let mut index = Self::from_rows(header.ids, header.d, data)?;
        index.kind = header.kind;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), RankerError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RankerError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
