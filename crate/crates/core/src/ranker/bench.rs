use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{DenseIndex, RankerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pool_size: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub runs: usize,
}

/// Times `top_k` over the first `pool_size` rows for every query, `runs`
/// times per pool size, on the calling thread. Embeddings are taken as
/// given, so only the search is timed.
pub fn bench_rank(
    index: &DenseIndex,
    queries: &[Vec<f32>],
    pool_sizes: &[usize],
    k: usize,
    runs: usize,
) -> Result<Vec<BenchRow>, RankerError> {
    let runs = runs.max(1);
    let mut rows = Vec::with_capacity(pool_sizes.len());
    for &pool in pool_sizes {
        if pool > index.len() {
            return Err(RankerError::PoolTooLarge { pool, n: index.len() });
        }
        let mut times = Vec::with_capacity(runs * queries.len());
        for _ in 0..runs {
            for q in queries {
                let t = Instant::now();
                let out = index.top_k_range(q, k, 0..pool)?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(out);
            }
        }
        rows.push(summarise(pool, runs, times));
    }
    Ok(rows)
}

fn summarise(pool_size: usize, runs: usize, mut times: Vec<f64>) -> BenchRow {
    if times.is_empty() {
        return BenchRow { pool_size, mean_ms: 0.0, p95_ms: 0.0, runs };
    }
    times.sort_by(f64::total_cmp);
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    let idx = ((times.len() as f64 * 0.95).ceil() as usize).clamp(1, times.len()) - 1;
    BenchRow { pool_size, mean_ms, p95_ms: times[idx], runs }
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "pool_size,mean_ms,p95_ms,runs")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6},{}", r.pool_size, r.mean_ms, r.p95_ms, r.runs)?;
    }
    Ok(())
}
