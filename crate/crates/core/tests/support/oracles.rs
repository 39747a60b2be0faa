//! Brute-force oracles and the randomized checks built on them. Each check
//! returns a short summary on success and a description of the first
//! mismatch otherwise, so both the test suites and the acceptance runner can
//! use them.

#![allow(dead_code)]

use jobmatch_core::augment::{augment_graph, AugmentPlan, EdaProvider, ParaphraseProvider, StubProvider};
use jobmatch_core::corpus::{DocKind, Document, FieldEntry, InteractionGraph, InteractionLabel, Label, RankSide, RankingTask};
use jobmatch_core::eval::{classify_metrics, evaluate_ranking, select_threshold};
use jobmatch_core::ranker::{Bm25Index, Bm25Params, DenseIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = ["data", "care", "sales", "weld", "rust", "night", "team", "lead", "audit", "cloud", "cook", "build"];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..7);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ") + "."
}

/// Random bipartite graph with two fields per kind and each pair labeled
/// with probability `density`, accepts and rejects equally likely.
pub fn random_graph(rng: &mut ChaCha8Rng, n_resumes: usize, n_jobs: usize, density: f64) -> InteractionGraph {
    let mut docs = Vec::new();
    for i in 0..n_resumes {
        let fields = vec![FieldEntry::new("summary", sentence(rng)), FieldEntry::new("skills", sentence(rng))];
        docs.push(Document::new(format!("r{i}"), DocKind::Resume, fields));
    }
    for i in 0..n_jobs {
        let fields = vec![FieldEntry::new("title", sentence(rng)), FieldEntry::new("description", sentence(rng))];
        docs.push(Document::new(format!("j{i}"), DocKind::Job, fields));
    }
    let mut labels = Vec::new();
    for r in 0..n_resumes {
        for j in 0..n_jobs {
            if rng.random_bool(density) {
                labels.push(InteractionLabel::new(format!("r{r}"), format!("j{j}"), Label::from_bool(rng.random_bool(0.5))));
            }
        }
    }
    InteractionGraph::new(docs, labels).unwrap()
}

fn source_of(id: &str) -> &str {
    id.split("#aug").next().unwrap()
}

/// Labels the two-phase procedure must add, counted from the original edge
/// list: each augmented resume copies its source's edges; each augmented job
/// copies its source's original edges plus one per augmented resume whose
/// source was linked to that job.
pub fn two_phase_degree_sum(edges: &[InteractionLabel], aug_resumes: &[String], aug_jobs: &[String]) -> usize {
    let mut total = 0;
    for r in aug_resumes {
        total += edges.iter().filter(|e| e.resume_id == source_of(r)).count();
    }
    for j in aug_jobs {
        let j = source_of(j);
        total += edges.iter().filter(|e| e.job_id == j).count();
        for r in aug_resumes {
            total += edges.iter().filter(|e| e.job_id == j && e.resume_id == source_of(r)).count();
        }
    }
    total
}

/// Augments `trials` random graphs with random plans and seeds, and checks
/// the reported and actual label growth against the brute-force count.
pub fn check_edge_law(trials: u64, seed: u64) -> Result<String, String> {
    let providers: [&dyn ParaphraseProvider; 2] = [&StubProvider, &EdaProvider::default()];
    let mut total = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t));
        let n_r = rng.random_range(1..25);
        let n_j = rng.random_range(1..15);
        let density = rng.random_range(0.02..0.5);
        let g = random_graph(&mut rng, n_r, n_j, density);
        let eligible = |kind: DocKind| g.documents(kind).keys().filter(|id| g.degree(kind, id) > 0).count();
        let plan = AugmentPlan {
            n_aug_resumes: rng.random_range(0..=eligible(DocKind::Resume)),
            n_aug_jobs: rng.random_range(0..=eligible(DocKind::Job)),
            target_fields_resume: vec!["summary".into()],
            target_fields_job: vec!["title".into(), "description".into()],
        };
        let (out, report) = augment_graph(&g, &plan, &providers, rng.random()).map_err(|e| format!("trial {t}: {e}"))?;
        let expected = two_phase_degree_sum(g.edges(), &report.augmented_resumes, &report.augmented_jobs);
        let grew = out.num_edges() - g.num_edges();
        if report.new_labels() != expected || grew != expected {
            return Err(format!("trial {t}: reported {}, graph grew by {grew}, expected {expected}", report.new_labels()));
        }
        if report.augmented_resumes.len() != plan.n_aug_resumes || report.augmented_jobs.len() != plan.n_aug_jobs {
            return Err(format!("trial {t}: wrong number of augmented documents"));
        }
        total += expected;
    }
    Ok(format!("{trials} graphs, {total} inherited labels"))
}

/// True when candidate `a` is ranked above `b`: higher score, or equal score
/// and smaller id.
fn above(scores: &[f64], ids: &[String], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && ids[a] < ids[b])
}

fn rank_of(scores: &[f64], ids: &[String], i: usize) -> usize {
    1 + (0..scores.len()).filter(|&j| j != i && above(scores, ids, j, i)).count()
}

/// Average precision from per-item ranks, without sorting.
pub fn brute_average_precision(scores: &[f64], ids: &[String], rel: &[bool]) -> f64 {
    let relevant: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &i in &relevant {
        let rank = rank_of(scores, ids, i);
        let hits = relevant.iter().filter(|&&j| j == i || above(scores, ids, j, i)).count();
        sum += hits as f64 / rank as f64;
    }
    sum / relevant.len() as f64
}

/// nDCG@10 from per-item ranks, without sorting.
pub fn brute_ndcg_at_10(scores: &[f64], ids: &[String], rel: &[bool]) -> f64 {
    let gain = |rank: usize| 1.0 / (rank as f64 + 1.0).log2();
    let dcg: f64 = (0..rel.len()).filter(|&i| rel[i]).map(|i| rank_of(scores, ids, i)).filter(|&r| r <= 10).map(gain).sum();
    let n_rel = rel.iter().filter(|r| **r).count();
    let ideal: f64 = (1..=n_rel.min(10)).map(gain).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Random task with coarse scores so ties are common.
fn random_task(rng: &mut ChaCha8Rng, i: usize) -> (RankingTask, Vec<f64>) {
    let q = rng.random_range(1..=120);
    let p = rng.random_range(0.02..0.6);
    let mut ids: Vec<String> = (0..q).map(|c| format!("c{c:03}")).collect();
    ids.shuffle(rng);
    let mut relevance: Vec<bool> = (0..q).map(|_| rng.random_bool(p)).collect();
    relevance[rng.random_range(0..q)] = true;
    let levels = rng.random_range(2..40);
    let scores = (0..q).map(|_| rng.random_range(0..levels) as f64 / levels as f64 - 0.3).collect();
    let task = RankingTask { query_id: format!("q{i}"), side: RankSide::RankResume, candidates: ids, relevance };
    (task, scores)
}

/// Largest per-task AP and nDCG@10 difference from the brute-force oracles
/// over `n` random tasks.
pub fn check_rank_metrics(n: usize, seed: u64, tol: f64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tasks, scores): (Vec<_>, Vec<_>) = (0..n).map(|i| random_task(&mut rng, i)).unzip();
    let mut it = scores.iter();
    let report = evaluate_ranking(RankSide::RankResume, &tasks, |_| Ok(it.next().unwrap().clone())).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for ((task, s), m) in tasks.iter().zip(&scores).zip(&report.per_task) {
        let ap = brute_average_precision(s, &task.candidates, &task.relevance);
        let nd = brute_ndcg_at_10(s, &task.candidates, &task.relevance);
        let err = (ap - m.average_precision).abs().max((nd - m.ndcg_at_10).abs());
        if err > tol {
            return Err(format!("{}: AP {} vs {ap}, nDCG {} vs {nd}", task.query_id, m.average_precision, m.ndcg_at_10));
        }
        worst = worst.max(err);
    }
    Ok(format!("{n} tasks, max |diff| {worst:.1e}"))
}

/// Support-weighted F1 of predicting `score >= t`, counted from scratch.
pub fn weighted_f1_at(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let class_f1 = |class: bool| {
        let pred = |i: usize| (scores[i] >= t) == class;
        let tp = (0..scores.len()).filter(|&i| pred(i) && labels[i] == class).count() as f64;
        let predicted = (0..scores.len()).filter(|&i| pred(i)).count() as f64;
        let actual = labels.iter().filter(|&&y| y == class).count() as f64;
        if predicted + actual == 0.0 {
            0.0
        } else {
            2.0 * tp / (predicted + actual)
        }
    };
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    (pos * class_f1(true) + (n - pos) * class_f1(false)) / n
}

/// Best weighted F1 over every achievable split: each observed score as a
/// threshold, plus one above all of them.
pub fn exhaustive_best_f1(scores: &[f64], labels: &[bool]) -> f64 {
    scores.iter().copied().chain([f64::INFINITY]).map(|t| weighted_f1_at(scores, labels, t)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn check_threshold_selection(n: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for set in 0..n {
        let len = rng.random_range(2..80);
        let levels = rng.random_range(2..30);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 * 0.37 - 2.0).collect();
        let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let (decision, reported) = select_threshold(&scores, &labels).map_err(|e| e.to_string())?;
        let achieved = classify_metrics(&scores, &labels, decision).map_err(|e| e.to_string())?.weighted_f1;
        let best = 100.0 * exhaustive_best_f1(&scores, &labels);
        if (achieved - best).abs() > 1e-9 || (reported - best).abs() > 1e-9 {
            return Err(format!("set {set}: selected {achieved} (reported {reported}), exhaustive {best}"));
        }
    }
    Ok(format!("{n} score/label sets"))
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f32> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n * d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Top `k` by exhaustive f64 scoring and a full sort, ties by id.
pub fn brute_top_k(ids: &[String], data: &[f32], d: usize, query: &[f32], k: usize) -> Vec<String> {
    let mut all: Vec<(f64, &String)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (data[i * d..(i + 1) * d].iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum(), id))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    all.into_iter().take(k).map(|(_, id)| id.clone()).collect()
}

pub fn random_index(n: usize, d: usize, seed: u64) -> (DenseIndex, Vec<String>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = (0..n).map(|i| format!("j{i:05}")).collect();
    ids.shuffle(&mut rng);
    let data = gaussian_rows(&mut rng, n, d);
    (DenseIndex::from_rows(ids.clone(), d, data.clone()).unwrap(), ids, data)
}

pub fn check_mips_exact(n: usize, d: usize, queries: usize, k: usize, seed: u64) -> Result<String, String> {
    let (index, ids, data) = random_index(n, d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for q in 0..queries {
        let query = gaussian_rows(&mut rng, 1, d);
        let got: Vec<String> = index.top_k(&query, k).map_err(|e| e.to_string())?.into_iter().map(|x| x.0).collect();
        let want = brute_top_k(&ids, &data, d, &query, k);
        if got != want {
            return Err(format!("query {q}: {got:?} vs {want:?}"));
        }
    }
    Ok(format!("{queries} queries over n={n}, d={d}"))
}

/// Toy corpus whose scores were worked out by hand (k1 = 1.5, b = 0.75,
/// delta = 0.5, average length 2.5).
pub fn bm25_toy() -> Bm25Index {
    let docs: Vec<(String, Vec<String>)> = [("d1", "rust rust python"), ("d2", "python java"), ("d3", "go"), ("d4", "rust go go java")]
        .iter()
        .map(|(id, text)| (id.to_string(), text.split_whitespace().map(String::from).collect()))
        .collect();
    Bm25Index::build(&docs, Bm25Params::default()).unwrap()
}

pub const BM25_TOY_EXPECTED: [(&str, [f64; 4]); 3] = [
    ("rust", [1.037705808106, 0.0, 0.0, 0.766460824658]),
    ("go java", [0.0, 0.914569196572, 1.052098399064, 1.730147593548]),
    ("rust python go", [1.864756421274, 0.914569196572, 1.052098399064, 1.730147593548]),
];

pub fn check_bm25_toy(tol: f64) -> Result<String, String> {
    let idx = bm25_toy();
    for (query, expected) in BM25_TOY_EXPECTED {
        let q: Vec<String> = query.split_whitespace().map(String::from).collect();
        for (d, want) in expected.iter().enumerate() {
            let id = format!("d{}", d + 1);
            let got = idx.score(&q, &id).map_err(|e| e.to_string())?;
            if (got - want).abs() > tol {
                return Err(format!("{query:?} on {id}: {got} vs {want}"));
            }
        }
    }
    Ok("12 hand-computed scores".into())
}

/// Raising one term's count at fixed document length and fixed document
/// frequency must raise that term's score, on `trials` random corpora.
pub fn check_bm25_tf_monotone(trials: u64, seed: u64) -> Result<String, String> {
    let mut checked = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t));
        let n_docs = rng.random_range(2..10);
        let mut docs: Vec<(String, Vec<String>)> = (0..n_docs)
            .map(|i| {
                let len = rng.random_range(2..12);
                (format!("d{i}"), (0..len).map(|_| WORDS[rng.random_range(0..6)].to_string()).collect())
            })
            .collect();
        let term = docs[0].1[0].clone();
        let Some(p) = docs[0].1.iter().position(|w| *w != term) else { continue };
        let q = vec![term.clone()];
        let before = Bm25Index::build(&docs, Bm25Params::default()).unwrap().score(&q, "d0").unwrap();
        docs[0].1[p] = term;
        let after = Bm25Index::build(&docs, Bm25Params::default()).unwrap().score(&q, "d0").unwrap();
        if after <= before {
            return Err(format!("corpus {t}: {before} -> {after}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} randomized corpora"))
}
