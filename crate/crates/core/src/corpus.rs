//! Dataset records, the bipartite resume/job interaction graph, train/val/test
//! splitting, and construction of ranking and classification tasks.
//!
//! Datasets are line-delimited JSON. A document line looks like
//! `{"id":"r1","kind":"resume","fields":[{"name":"skills","value":"rust"}]}`
//! and a label line like `{"resume_id":"r1","job_id":"j1","label":1}`. Both
//! kinds of line may share one stream; field order is significant.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateDocument { kind: DocKind, id: String },
    #[error("line {line}: label references unknown {kind} `{id}`")]
    UnknownReference { line: usize, kind: DocKind, id: String },
    #[error("duplicate label for pair ({resume_id}, {job_id})")]
    DuplicateLabel { resume_id: String, job_id: String },
    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },
    #[error("split needs {requested} held-out labels but the graph has {available}")]
    NotEnoughLabels { requested: usize, available: usize },
    #[error("no training labels left after excluding held-out documents ({dropped} dropped)")]
    EmptyTrainSplit { dropped: usize },
    #[error("query `{query}` has {labeled} labeled candidates, more than q = {q}")]
    PoolTooSmall { query: String, labeled: usize, q: usize },
    #[error("query `{query}`: only {available} candidates available to fill q = {q}")]
    NotEnoughCandidates { query: String, available: usize, q: usize },
    #[error("q must be at least 1")]
    ZeroSlots,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Resume,
    Job,
}

impl DocKind {
    pub fn opposite(self) -> Self {
        match self {
            DocKind::Resume => DocKind::Job,
            DocKind::Job => DocKind::Resume,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Resume => "resume",
            DocKind::Job => "job",
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub value: String,
}

impl FieldEntry {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self { name: name.into(), value: value.into() }
    }
}

/// A resume or job post: an ordered list of named text fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub kind: DocKind,
    pub fields: Vec<FieldEntry>,
}

impl Document {
    pub fn new(id: impl Into<String>, kind: DocKind, fields: Vec<FieldEntry>) -> Self {
        Self { id: id.into(), kind, fields }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.value.as_str())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidDocument {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.fields.is_empty() {
            return Err(invalid("no fields"));
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if f.name.is_empty() {
                return Err(invalid("empty field name"));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(invalid(&format!("field `{}` repeated", f.name)));
            }
        }
        Ok(())
    }

    /// All fields as `name: value` joined by newlines.
    pub fn full_text(&self) -> String {
        self.fields
            .iter()
            .map(|f| format!("{}: {}", f.name, f.value))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Binary interview outcome; serialised as `0`/`1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Reject,
    Accept,
}

impl Label {
    pub fn from_bool(accepted: bool) -> Self {
        if accepted {
            Label::Accept
        } else {
            Label::Reject
        }
    }

    pub fn is_accept(self) -> bool {
        self == Label::Accept
    }

    pub fn as_u8(self) -> u8 {
        self.is_accept() as u8
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Reject),
            1 => Ok(Label::Accept),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionLabel {
    pub resume_id: String,
    pub job_id: String,
    pub label: Label,
}

impl InteractionLabel {
    pub fn new(resume_id: impl Into<String>, job_id: impl Into<String>, label: Label) -> Self {
        Self { resume_id: resume_id.into(), job_id: job_id.into(), label }
    }
}

/// One line of a dataset stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Document(Document),
    Label(InteractionLabel),
}

/// Parses one stream into documents and labels, preserving order, then checks
/// id uniqueness and label references.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<(Vec<Document>, Vec<InteractionLabel>), CorpusError> {
    let records = parse_records(reader)?;
    resolve_records(records)
}

/// Line-numbered records, with no cross-record checks.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<(usize, Record)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, reason: e.to_string() })?;
        if let Record::Document(doc) = &record {
            doc.validate().map_err(|e| CorpusError::Malformed { line: line_no, reason: e.to_string() })?;
        }
        out.push((line_no, record));
    }
    Ok(out)
}

/// Splits records into documents and labels and runs the referential checks.
pub fn resolve_records(
    records: Vec<(usize, Record)>,
) -> Result<(Vec<Document>, Vec<InteractionLabel>), CorpusError> {
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    let mut resume_ids = HashSet::new();
    let mut job_ids = HashSet::new();
    for (_, record) in &records {
        if let Record::Document(doc) = record {
            let ids = match doc.kind {
                DocKind::Resume => &mut resume_ids,
                DocKind::Job => &mut job_ids,
            };
            if !ids.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateDocument { kind: doc.kind, id: doc.id.clone() });
            }
        }
    }
    let mut pairs = HashSet::new();
    for (line, record) in records {
        match record {
            Record::Document(doc) => docs.push(doc),
            Record::Label(label) => {
                if !resume_ids.contains(&label.resume_id) {
                    return Err(CorpusError::UnknownReference {
                        line,
                        kind: DocKind::Resume,
                        id: label.resume_id,
                    });
                }
                if !job_ids.contains(&label.job_id) {
                    return Err(CorpusError::UnknownReference { line, kind: DocKind::Job, id: label.job_id });
                }
                if !pairs.insert((label.resume_id.clone(), label.job_id.clone())) {
                    return Err(CorpusError::DuplicateLabel {
                        resume_id: label.resume_id,
                        job_id: label.job_id,
                    });
                }
                labels.push(label);
            }
        }
    }
    Ok((docs, labels))
}

/// Reads a document file and a label file as one dataset.
pub fn load_dataset(
    docs_path: &std::path::Path,
    labels_path: &std::path::Path,
) -> Result<(Vec<Document>, Vec<InteractionLabel>), CorpusError> {
    let open = |p: &std::path::Path| std::fs::File::open(p).map(std::io::BufReader::new);
    let mut records = parse_records(open(docs_path)?)?;
    records.extend(parse_records(open(labels_path)?)?);
    resolve_records(records)
}

/// One compact JSON object per line, in the given order.
pub fn serialize_records<'a, I>(records: I) -> String
where
    I: IntoIterator<Item = &'a Record>,
{
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialise"));
        out.push('\n');
    }
    out
}

pub fn serialize_documents<'a, I: IntoIterator<Item = &'a Document>>(docs: I) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents always serialise"));
        out.push('\n');
    }
    out
}

pub fn serialize_labels<'a, I: IntoIterator<Item = &'a InteractionLabel>>(labels: I) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&serde_json::to_string(l).expect("labels always serialise"));
        out.push('\n');
    }
    out
}

/// Accepted and rejected neighbours of one node, in edge insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
}

impl Adjacency {
    pub fn degree(&self) -> usize {
        self.accepted.len() + self.rejected.len()
    }

    fn push(&mut self, other: String, label: Label) {
        match label {
            Label::Accept => self.accepted.push(other),
            Label::Reject => self.rejected.push(other),
        }
    }
}

/// Bipartite graph of resumes and jobs with accept/reject edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionGraph {
    resumes: BTreeMap<String, Document>,
    jobs: BTreeMap<String, Document>,
    edges: Vec<InteractionLabel>,
    pair_index: BTreeMap<(String, String), Label>,
    resume_adj: BTreeMap<String, Adjacency>,
    job_adj: BTreeMap<String, Adjacency>,
}

/// Builds a graph from parsed documents and labels.
pub fn build_graph(
    documents: Vec<Document>,
    labels: Vec<InteractionLabel>,
) -> Result<InteractionGraph, CorpusError> {
    InteractionGraph::new(documents, labels)
}

impl InteractionGraph {
    pub fn new(documents: Vec<Document>, labels: Vec<InteractionLabel>) -> Result<Self, CorpusError> {
        let mut graph = Self::default();
        for doc in documents {
            graph.add_document(doc)?;
        }
        for label in labels {
            graph.add_label(label)?;
        }
        Ok(graph)
    }

    pub fn add_document(&mut self, doc: Document) -> Result<(), CorpusError> {
        doc.validate()?;
        let (docs, adj) = match doc.kind {
            DocKind::Resume => (&mut self.resumes, &mut self.resume_adj),
            DocKind::Job => (&mut self.jobs, &mut self.job_adj),
        };
        if docs.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateDocument { kind: doc.kind, id: doc.id });
        }
        adj.insert(doc.id.clone(), Adjacency::default());
        docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn add_label(&mut self, label: InteractionLabel) -> Result<(), CorpusError> {
        if !self.resumes.contains_key(&label.resume_id) {
            return Err(CorpusError::UnknownReference { line: 0, kind: DocKind::Resume, id: label.resume_id });
        }
        if !self.jobs.contains_key(&label.job_id) {
            return Err(CorpusError::UnknownReference { line: 0, kind: DocKind::Job, id: label.job_id });
        }
        let key = (label.resume_id.clone(), label.job_id.clone());
        if self.pair_index.contains_key(&key) {
            return Err(CorpusError::DuplicateLabel { resume_id: key.0, job_id: key.1 });
        }
        self.pair_index.insert(key, label.label);
        self.resume_adj
            .get_mut(&label.resume_id)
            .expect("adjacency exists for every document")
            .push(label.job_id.clone(), label.label);
        self.job_adj
            .get_mut(&label.job_id)
            .expect("adjacency exists for every document")
            .push(label.resume_id.clone(), label.label);
        self.edges.push(label);
        Ok(())
    }

    pub fn documents(&self, kind: DocKind) -> &BTreeMap<String, Document> {
        match kind {
            DocKind::Resume => &self.resumes,
            DocKind::Job => &self.jobs,
        }
    }

    pub fn resumes(&self) -> &BTreeMap<String, Document> {
        &self.resumes
    }

    pub fn jobs(&self) -> &BTreeMap<String, Document> {
        &self.jobs
    }

    pub fn document(&self, kind: DocKind, id: &str) -> Option<&Document> {
        self.documents(kind).get(id)
    }

    pub fn all_documents(&self) -> impl Iterator<Item = &Document> {
        self.resumes.values().chain(self.jobs.values())
    }

    pub fn edges(&self) -> &[InteractionLabel] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_documents(&self) -> usize {
        self.resumes.len() + self.jobs.len()
    }

    pub fn label(&self, resume_id: &str, job_id: &str) -> Option<Label> {
        self.pair_index.get(&(resume_id.to_string(), job_id.to_string())).copied()
    }

    pub fn adjacency(&self, kind: DocKind, id: &str) -> Option<&Adjacency> {
        match kind {
            DocKind::Resume => self.resume_adj.get(id),
            DocKind::Job => self.job_adj.get(id),
        }
    }

    pub fn degree(&self, kind: DocKind, id: &str) -> usize {
        self.adjacency(kind, id).map_or(0, Adjacency::degree)
    }

    /// Accepted pairs `(resume_id, job_id)` in edge order.
    pub fn positive_pairs(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .filter(|e| e.label.is_accept())
            .map(|e| (e.resume_id.clone(), e.job_id.clone()))
            .collect()
    }

    pub fn count_labels(&self, label: Label) -> usize {
        self.edges.iter().filter(|e| e.label == label).count()
    }

    /// Rebuilds adjacency from the edge list and compares it with the
    /// incrementally maintained indices.
    pub fn check_consistency(&self) -> bool {
        let mut rebuilt = InteractionGraph::default();
        for doc in self.all_documents() {
            if rebuilt.add_document(doc.clone()).is_err() {
                return false;
            }
        }
        for e in &self.edges {
            if rebuilt.add_label(e.clone()).is_err() {
                return false;
            }
        }
        rebuilt.resume_adj == self.resume_adj
            && rebuilt.job_adj == self.job_adj
            && rebuilt.pair_index == self.pair_index
    }

    /// Graph holding the given documents and only those labels whose
    /// endpoints are both present.
    fn restricted(&self, keep: impl Fn(&Document) -> bool, labels: &[InteractionLabel]) -> InteractionGraph {
        let mut g = InteractionGraph::default();
        for doc in self.all_documents().filter(|d| keep(d)) {
            g.add_document(doc.clone()).expect("source documents are valid and unique");
        }
        for l in labels {
            g.add_label(l.clone()).expect("held-out labels reference kept documents");
        }
        g
    }
}

/// Train / validation / test partition of one graph.
///
/// The train graph holds every document not touched by a held-out label. The
/// validation and test graphs hold every document of the source (so ranking
/// pools can be filled from the whole collection) but only their own labels.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: InteractionGraph,
    pub val: InteractionGraph,
    pub test: InteractionGraph,
    /// Train labels removed because an endpoint is held out.
    pub dropped: usize,
    /// The unsplit graph.
    pub source: InteractionGraph,
}

impl DatasetSplit {
    /// Ids (per kind) that are endpoints of a validation or test label.
    pub fn held_out_ids(&self) -> BTreeSet<(DocKind, String)> {
        self.val
            .edges()
            .iter()
            .chain(self.test.edges())
            .flat_map(|e| [(DocKind::Resume, e.resume_id.clone()), (DocKind::Job, e.job_id.clone())])
            .collect()
    }
}

/// Samples validation and test labels uniformly at label level, then drops
/// every remaining label that touches a held-out document.
pub fn split_dataset(
    graph: &InteractionGraph,
    seed: u64,
    n_val_labels: usize,
    n_test_labels: usize,
) -> Result<DatasetSplit, CorpusError> {
    let requested = n_val_labels + n_test_labels;
    if requested > graph.num_edges() {
        return Err(CorpusError::NotEnoughLabels { requested, available: graph.num_edges() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..graph.num_edges()).collect();
    order.shuffle(&mut rng);

    let pick = |range: std::ops::Range<usize>| -> Vec<InteractionLabel> {
        let mut idx: Vec<usize> = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| graph.edges()[i].clone()).collect()
    };
    let val_labels = pick(0..n_val_labels);
    let test_labels = pick(n_val_labels..requested);

    let mut held_resumes = HashSet::new();
    let mut held_jobs = HashSet::new();
    for l in val_labels.iter().chain(&test_labels) {
        held_resumes.insert(l.resume_id.clone());
        held_jobs.insert(l.job_id.clone());
    }
    let mut rest: Vec<usize> = order[requested..].to_vec();
    rest.sort_unstable();
    let mut train_labels = Vec::new();
    let mut dropped = 0;
    for i in rest {
        let l = &graph.edges()[i];
        if held_resumes.contains(&l.resume_id) || held_jobs.contains(&l.job_id) {
            dropped += 1;
        } else {
            train_labels.push(l.clone());
        }
    }
    if train_labels.is_empty() {
        return Err(CorpusError::EmptyTrainSplit { dropped });
    }
    let is_held = |d: &Document| match d.kind {
        DocKind::Resume => held_resumes.contains(&d.id),
        DocKind::Job => held_jobs.contains(&d.id),
    };
    Ok(DatasetSplit {
        train: graph.restricted(|d| !is_held(d), &train_labels),
        val: graph.restricted(|_| true, &val_labels),
        test: graph.restricted(|_| true, &test_labels),
        dropped,
        source: graph.clone(),
    })
}

/// Which side is ranked: `RankResume` queries with a job and ranks resumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSide {
    RankResume,
    RankJob,
}

impl RankSide {
    pub fn query_kind(self) -> DocKind {
        match self {
            RankSide::RankResume => DocKind::Job,
            RankSide::RankJob => DocKind::Resume,
        }
    }

    pub fn candidate_kind(self) -> DocKind {
        self.query_kind().opposite()
    }
}

/// One query with a pool of exactly `q` candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingTask {
    pub query_id: String,
    pub side: RankSide,
    pub candidates: Vec<String>,
    pub relevance: Vec<bool>,
}

impl RankingTask {
    pub fn q(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_relevant(&self) -> usize {
        self.relevance.iter().filter(|r| **r).count()
    }
}

/// One ranking task per query document with at least one accept edge. The
/// pool holds the query's labeled candidates (accepts relevant, rejects not)
/// padded with uniformly drawn unlabeled fillers up to `q`.
pub fn build_ranking_tasks(
    graph: &InteractionGraph,
    side: RankSide,
    q: usize,
    seed: u64,
) -> Result<Vec<RankingTask>, CorpusError> {
    build_ranking_tasks_with_known(graph, side, q, seed, None)
}

/// Like [`build_ranking_tasks`], but fillers are first drawn from candidates
/// with no label to the query in `known`; labeled-elsewhere candidates are
/// used only when the unlabeled ones run out.
pub fn build_ranking_tasks_with_known(
    graph: &InteractionGraph,
    side: RankSide,
    q: usize,
    seed: u64,
    known: Option<&InteractionGraph>,
) -> Result<Vec<RankingTask>, CorpusError> {
    if q == 0 {
        return Err(CorpusError::ZeroSlots);
    }
    let qkind = side.query_kind();
    let ckind = side.candidate_kind();
    let universe: Vec<&String> = graph.documents(ckind).keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();

    for query_id in graph.documents(qkind).keys() {
        let adj = graph.adjacency(qkind, query_id).expect("adjacency exists for every document");
        if adj.accepted.is_empty() {
            continue;
        }
        let labeled = adj.degree();
        if labeled > q {
            return Err(CorpusError::PoolTooSmall { query: query_id.clone(), labeled, q });
        }
        let mut candidates: Vec<String> = adj.accepted.iter().chain(&adj.rejected).cloned().collect();
        let mut relevance: Vec<bool> = adj
            .accepted
            .iter()
            .map(|_| true)
            .chain(adj.rejected.iter().map(|_| false))
            .collect();
        let in_pool: HashSet<&str> = candidates.iter().map(String::as_str).collect();
        let known_label = |c: &str| {
            known.is_some_and(|k| {
                let (r, j) = match qkind {
                    DocKind::Job => (c, query_id.as_str()),
                    DocKind::Resume => (query_id.as_str(), c),
                };
                k.label(r, j).is_some()
            })
        };
        let (preferred, fallback): (Vec<&String>, Vec<&String>) = universe
            .iter()
            .copied()
            .filter(|c| !in_pool.contains(c.as_str()))
            .partition(|c| !known_label(c));
        let need = q - labeled;
        if preferred.len() + fallback.len() < need {
            return Err(CorpusError::NotEnoughCandidates {
                query: query_id.clone(),
                available: preferred.len() + fallback.len(),
                q,
            });
        }
        let from_preferred = need.min(preferred.len());
        for i in index::sample(&mut rng, preferred.len(), from_preferred).into_vec() {
            candidates.push(preferred[i].clone());
            relevance.push(false);
        }
        let rest = need - from_preferred;
        if rest > 0 {
            for i in index::sample(&mut rng, fallback.len(), rest).into_vec() {
                candidates.push(fallback[i].clone());
                relevance.push(false);
            }
        }
        tasks.push(RankingTask { query_id: query_id.clone(), side, candidates, relevance });
    }
    Ok(tasks)
}

/// A labeled resume-job pair to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationTask {
    pub resume_id: String,
    pub job_id: String,
    pub label: Label,
}

/// Exactly one task per edge, in edge order.
pub fn build_classification_tasks(graph: &InteractionGraph) -> Vec<ClassificationTask> {
    graph
        .edges()
        .iter()
        .map(|e| ClassificationTask { resume_id: e.resume_id.clone(), job_id: e.job_id.clone(), label: e.label })
        .collect()
}
