mod support;

use jobmatch_core::ranker::bench_rank;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracles::{check_bm25_tf_monotone, check_bm25_toy, check_mips_exact, gaussian_rows, random_index};

#[test]
fn top_k_matches_brute_force() {
    check_mips_exact(10_000, 128, 100, 10, 1).unwrap();
    check_mips_exact(500, 7, 50, 500, 2).unwrap();
}

#[test]
fn latency_grows_with_pool_size() {
    let (index, _, _) = random_index(10_000, 128, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries: Vec<Vec<f32>> = (0..50).map(|_| gaussian_rows(&mut rng, 1, 128)).collect();
    let rows = bench_rank(&index, &queries, &[100, 1_000, 10_000], 10, 2).unwrap();
    assert!(rows.windows(2).all(|w| w[0].mean_ms <= w[1].mean_ms), "{rows:?}");
    assert!(rows[2].mean_ms < 50.0, "{rows:?}");
}

#[test]
fn bm25l_hand_computed_scores() {
    check_bm25_toy(1e-6).unwrap();
}

#[test]
fn bm25l_tf_monotone_on_random_corpora() {
    check_bm25_tf_monotone(500, 0).unwrap();
}
