//! Exact inner-product search over embeddings, plus BM25L and TF-IDF
//! baselines and a latency benchmark.

mod bench;
mod bm25;
mod dense;
mod tfidf;

pub use bench::{bench_rank, write_bench_csv, BenchRow};
pub use bm25::{Bm25Index, Bm25Params};
pub use dense::{DenseIndex, INDEX_MAGIC};
pub use tfidf::{SparseVector, TfidfVectorizer};

use crate::corpus::DocKind;

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("duplicate id `{0}` in index")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embeddings of mixed kinds: {0} and {1}")]
    MixedKinds(DocKind, DocKind),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("pool size {pool} exceeds index size {n}")]
    PoolTooLarge { pool: usize, n: usize },
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
