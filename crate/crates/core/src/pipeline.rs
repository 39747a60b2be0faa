//! Scoring back-ends and end-to-end evaluation of a held-out graph.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_classification_tasks, build_ranking_tasks_with_known, CorpusError, DocKind, Document, InteractionGraph,
    Label, RankSide, RankingTask,
};
use crate::encoder::{embed_documents, fnv1a64, word_tokens, Embedding, EncoderError, ModelParams};
use crate::eval::{
    classify_metrics, evaluate_ranking, select_threshold, ClassificationReport, ClassifierDecision, EvalError,
    RankingReport,
};
use crate::numerics::dot;
use crate::ranker::{Bm25Index, Bm25Params, RankerError, SparseVector, TfidfVectorizer};
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{kind} `{id}` is not in the graph")]
    MissingDocument { kind: DocKind, id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores candidates of the opposite kind against one query document.
pub trait PairScorer: Sync {
    fn name(&self) -> &str;
    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String>;
}

/// Inner product of precomputed embeddings, optionally L2-normalised first.
#[derive(Debug, Clone)]
pub struct EmbeddingScorer {
    name: String,
    vectors: HashMap<(DocKind, String), Vec<f32>>,
}

impl EmbeddingScorer {
    pub fn from_embeddings(name: &str, embeddings: Vec<Embedding>, normalize: bool) -> Self {
        let vectors = embeddings
            .into_iter()
            .map(|e| {
                let e = if normalize { e.normalized() } else { e };
                ((e.kind, e.id), e.vector)
            })
            .collect();
        Self { name: name.to_string(), vectors }
    }

    /// Embeds every document of `graph` with `params`.
    pub fn new(name: &str, params: &ModelParams, graph: &InteractionGraph, normalize: bool) -> Result<Self, EncoderError> {
        Ok(Self::from_embeddings(name, embed_documents(graph.all_documents(), params)?, normalize))
    }

    pub fn vector(&self, kind: DocKind, id: &str) -> Option<&[f32]> {
        self.vectors.get(&(kind, id.to_string())).map(Vec::as_slice)
    }
}

impl PairScorer for EmbeddingScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String> {
        let q = self.vector(query.kind, &query.id).ok_or_else(|| format!("no embedding for `{}`", query.id))?;
        candidates
            .iter()
            .map(|c| {
                let v = self.vector(c.kind, &c.id).ok_or_else(|| format!("no embedding for `{}`", c.id))?;
                Ok(dot(q, v) as f64)
            })
            .collect()
    }
}

/// Tokens of a document's `name: value` text.
pub fn document_tokens(doc: &Document) -> Vec<String> {
    word_tokens(&doc.full_text())
}

/// BM25L with one index per document kind.
#[derive(Debug, Clone)]
pub struct Bm25Scorer {
    resumes: Bm25Index,
    jobs: Bm25Index,
}

impl Bm25Scorer {
    pub fn new(graph: &InteractionGraph, params: Bm25Params) -> Result<Self, RankerError> {
        let corpus = |kind| -> Vec<(String, Vec<String>)> {
            graph.documents(kind).values().map(|d| (d.id.clone(), document_tokens(d))).collect()
        };
        Ok(Self {
            resumes: Bm25Index::build(&corpus(DocKind::Resume), params)?,
            jobs: Bm25Index::build(&corpus(DocKind::Job), params)?,
        })
    }
}

impl PairScorer for Bm25Scorer {
    fn name(&self) -> &str {
        "bm25"
    }

    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String> {
        let tokens = document_tokens(query);
        candidates
            .iter()
            .map(|c| {
                let index = match c.kind {
                    DocKind::Resume => &self.resumes,
                    DocKind::Job => &self.jobs,
                };
                index.score(&tokens, &c.id).map_err(|e| e.to_string())
            })
            .collect()
    }
}

/// Cosine similarity of TF-IDF vectors fitted on every document.
#[derive(Debug, Clone)]
pub struct TfidfScorer {
    vectors: HashMap<(DocKind, String), SparseVector>,
}

impl TfidfScorer {
    pub fn new(graph: &InteractionGraph) -> Self {
        let tokens: Vec<(DocKind, String, Vec<String>)> =
            graph.all_documents().map(|d| (d.kind, d.id.clone(), document_tokens(d))).collect();
        let vectorizer = TfidfVectorizer::fit(tokens.iter().map(|t| t.2.as_slice()));
        let vectors = tokens.into_iter().map(|(k, id, t)| ((k, id), vectorizer.transform(&t))).collect();
        Self { vectors }
    }
}

impl PairScorer for TfidfScorer {
    fn name(&self) -> &str {
        "tfidf"
    }

    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String> {
        let get = |d: &Document| {
            self.vectors.get(&(d.kind, d.id.clone())).ok_or_else(|| format!("no vector for `{}`", d.id))
        };
        let q = get(query)?;
        candidates.iter().map(|c| Ok(TfidfVectorizer::cosine(q, get(c)?))).collect()
    }
}

/// Scores 1 for accepted pairs of `graph` and 0 otherwise.
#[derive(Debug, Clone, Copy)]
pub struct OracleScorer<'a> {
    pub graph: &'a InteractionGraph,
}

impl PairScorer for OracleScorer<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String> {
        Ok(candidates
            .iter()
            .map(|c| {
                let (r, j) = match query.kind {
                    DocKind::Resume => (&query.id, &c.id),
                    DocKind::Job => (&c.id, &query.id),
                };
                (self.graph.label(r, j) == Some(Label::Accept)) as u8 as f64
            })
            .collect())
    }
}

/// Seeded pseudo-random score per pair.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl PairScorer for RandomScorer {
    fn name(&self) -> &str {
        "random"
    }

    fn score_candidates(&self, query: &Document, candidates: &[&Document]) -> Result<Vec<f64>, String> {
        let qs = derive_seed(self.seed, fnv1a64(query.id.as_bytes()));
        Ok(candidates
            .iter()
            .map(|c| (derive_seed(qs, fnv1a64(c.id.as_bytes())) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub q: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { q: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scorer: String,
    pub rank_resume: RankingReport,
    pub rank_job: RankingReport,
    pub classification: Option<ClassificationReport>,
    /// Where the threshold came from: `validation`, `self`, or `none`.
    pub threshold_source: String,
}

fn resolve<'g>(graph: &'g InteractionGraph, kind: DocKind, id: &str) -> Result<&'g Document, PipelineError> {
    graph.document(kind, id).ok_or_else(|| PipelineError::MissingDocument { kind, id: id.to_string() })
}

/// Scores every task's pool, in parallel across tasks.
pub fn score_tasks(
    graph: &InteractionGraph,
    tasks: &[RankingTask],
    scorer: &dyn PairScorer,
) -> Result<Vec<Result<Vec<f64>, String>>, PipelineError> {
    tasks
        .par_iter()
        .map(|t| {
            let query = resolve(graph, t.side.query_kind(), &t.query_id)?;
            let cands = t
                .candidates
                .iter()
                .map(|c| resolve(graph, t.side.candidate_kind(), c))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(scorer.score_candidates(query, &cands))
        })
        .collect()
}

fn rank_side(
    graph: &InteractionGraph,
    side: RankSide,
    scorer: &dyn PairScorer,
    config: &EvalConfig,
    known: Option<&InteractionGraph>,
) -> Result<RankingReport, PipelineError> {
    let seed = derive_seed(config.seed, side as u64);
    let tasks = build_ranking_tasks_with_known(graph, side, config.q, seed, known)?;
    let mut scores = score_tasks(graph, &tasks, scorer)?.into_iter();
    Ok(evaluate_ranking(side, &tasks, |_| scores.next().expect("one score list per task"))?)
}

/// Scores of every labeled pair of `graph`, with their labels.
pub fn pair_scores(graph: &InteractionGraph, scorer: &dyn PairScorer) -> Result<(Vec<f64>, Vec<bool>), PipelineError> {
    let tasks = build_classification_tasks(graph);
    let scores = tasks
        .par_iter()
        .map(|t| {
            let r = resolve(graph, DocKind::Resume, &t.resume_id)?;
            let j = resolve(graph, DocKind::Job, &t.job_id)?;
            scorer
                .score_candidates(r, &[j])
                .map(|v| v[0])
                .map_err(|message| PipelineError::Eval(EvalError::Scorer { query: t.resume_id.clone(), message }))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok((scores, tasks.iter().map(|t| t.label.is_accept()).collect()))
}

/// Rank-Resume, Rank-Job and classification metrics on `eval_graph`.
///
/// Fillers avoid candidates labeled for the query in `known` where possible.
/// The classification threshold is chosen on `val_graph` when it has both
/// classes, otherwise on `eval_graph` itself.
pub fn evaluate_graph(
    eval_graph: &InteractionGraph,
    val_graph: Option<&InteractionGraph>,
    known: Option<&InteractionGraph>,
    scorer: &dyn PairScorer,
    config: &EvalConfig,
) -> Result<EvaluationReport, PipelineError> {
    let rank_resume = rank_side(eval_graph, RankSide::RankResume, scorer, config, known)?;
    let rank_job = rank_side(eval_graph, RankSide::RankJob, scorer, config, known)?;

    let (scores, labels) = pair_scores(eval_graph, scorer)?;
    let mut threshold_source = "none";
    let mut decision: Option<ClassifierDecision> = None;
    if let Some(val) = val_graph {
        let (vs, vl) = pair_scores(val, scorer)?;
        if let Ok((d, _)) = select_threshold(&vs, &vl) {
            decision = Some(d);
            threshold_source = "validation";
        }
    }
    if decision.is_none() {
        if let Ok((d, _)) = select_threshold(&scores, &labels) {
            decision = Some(d);
            threshold_source = "self";
        }
    }
    let classification = match decision {
        Some(d) if !scores.is_empty() => Some(classify_metrics(&scores, &labels, d)?),
        _ => None,
    };
    Ok(EvaluationReport {
        scorer: scorer.name().to_string(),
        rank_resume,
        rank_job,
        classification,
        threshold_source: threshold_source.to_string(),
    })
}

pub const SUMMARY_HEADER: &str =
    "scorer,rank_resume_map,rank_resume_ndcg10,rank_job_map,rank_job_ndcg10,weighted_f1,precision_pos,recall_pos";

/// One CSV row per report, percentages to two decimals.
pub fn write_summary_csv<W: Write>(mut w: W, reports: &[EvaluationReport]) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in reports {
        let cls = match &r.classification {
            Some(c) => format!("{:.2},{:.2},{:.2}", c.weighted_f1, c.precision_pos, c.recall_pos),
            None => ",,".to_string(),
        };
        writeln!(
            w,
            "{},{:.2},{:.2},{:.2},{:.2},{}",
            r.scorer, r.rank_resume.map, r.rank_resume.ndcg_at_10, r.rank_job.map, r.rank_job.ndcg_at_10, cls
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_dataset;
    use crate::synth::{generate, SyntheticSpec};

    fn small() -> InteractionGraph {
        generate(&SyntheticSpec { n_industries: 3, resumes_per_industry: 20, jobs_per_industry: 5, seed: 2, ..Default::default() })
            .unwrap()
            .graph()
    }

    #[test]
    fn oracle_is_perfect() {
        let g = small();
        let split = split_dataset(&g, 1, 10, 20).unwrap();
        let cfg = EvalConfig { q: 10, seed: 3 };
        let r = evaluate_graph(&split.test, Some(&split.val), Some(&split.source), &OracleScorer { graph: &split.test }, &cfg)
            .unwrap();
        assert_eq!(r.rank_resume.map, 100.0);
        assert_eq!(r.rank_job.ndcg_at_10, 100.0);
        let mut out = Vec::new();
        write_summary_csv(&mut out, &[r]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("oracle,100.00,100.00,100.00,100.00"));
    }

    #[test]
    fn baselines_run_and_are_deterministic() {
        let g = small();
        let split = split_dataset(&g, 1, 10, 20).unwrap();
        let cfg = EvalConfig { q: 10, seed: 3 };
        let bm25 = Bm25Scorer::new(&split.source, Bm25Params::default()).unwrap();
        let tfidf = TfidfScorer::new(&split.source);
        for s in [&bm25 as &dyn PairScorer, &tfidf, &RandomScorer { seed: 1 }] {
            let a = evaluate_graph(&split.test, Some(&split.val), Some(&split.source), s, &cfg).unwrap();
            let b = evaluate_graph(&split.test, Some(&split.val), Some(&split.source), s, &cfg).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=100.0).contains(&a.rank_job.map));
        }
    }

    #[test]
    fn embedding_scorer_is_inner_product() {
        let e = vec![
            Embedding { id: "r".into(), kind: DocKind::Resume, vector: vec![1.0, 2.0] },
            Embedding { id: "j".into(), kind: DocKind::Job, vector: vec![3.0, -1.0] },
        ];
        let s = EmbeddingScorer::from_embeddings("m", e.clone(), false);
        let r = Document::new("r", DocKind::Resume, vec![]);
        let j = Document::new("j", DocKind::Job, vec![]);
        assert_eq!(s.score_candidates(&r, &[&j]).unwrap(), vec![1.0]);
        let n = EmbeddingScorer::from_embeddings("m", e, true);
        let expect = 1.0 / (5f64.sqrt() * 10f64.sqrt());
        assert!((n.score_candidates(&r, &[&j]).unwrap()[0] - expect).abs() < 1e-6);
    }
}
