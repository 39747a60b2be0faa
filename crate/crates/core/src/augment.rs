//! Paraphrase-based augmentation with edge inheritance.
//!
//! An augmented document copies its source, rewrites a chosen subset of
//! fields through a [`ParaphraseProvider`], and inherits every edge of the
//! source with the same label. Resumes are augmented before jobs, so an
//! augmented job also inherits edges to augmented resumes.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, DocKind, Document, InteractionGraph, InteractionLabel};
use crate::encoder::Schema;
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("cannot paraphrase empty text")]
    EmptyText,
    #[error("invalid EDA parameters: {0}")]
    InvalidParams(String),
    #[error("synonym table line {line}: {reason}")]
    SynonymTable { line: usize, reason: String },
    #[error("field `{field}`: {message}")]
    Provider { field: String, message: String },
    #[error("remote provider: {0}")]
    Remote(String),
    #[error("target field `{field}` is not in the {kind} schema")]
    UnknownTargetField { kind: DocKind, field: String },
    #[error("plan asks for {requested} {kind} sources but only {eligible} have at least one edge")]
    PlanExceedsEligible { kind: DocKind, requested: usize, eligible: usize },
    #[error("no paraphrase providers given")]
    NoProviders,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-word operation rates for easy data augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdaParams {
    pub alpha_replace: f64,
    pub alpha_insert: f64,
    pub alpha_swap: f64,
    pub alpha_delete: f64,
    pub num_variants: usize,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self { alpha_replace: 0.1, alpha_insert: 0.1, alpha_swap: 0.1, alpha_delete: 0.1, num_variants: 1 }
    }
}

impl EdaParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, a) in [
            ("alpha_replace", self.alpha_replace),
            ("alpha_insert", self.alpha_insert),
            ("alpha_swap", self.alpha_swap),
            ("alpha_delete", self.alpha_delete),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return Err(AugmentError::InvalidParams(format!("{name} = {a} is outside [0, 1]")));
            }
        }
        if self.num_variants == 0 {
            return Err(AugmentError::InvalidParams("num_variants must be at least 1".into()));
        }
        Ok(())
    }
}

/// Word to synonyms, read from `word<TAB>syn1,syn2,...` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, AugmentError> {
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| AugmentError::SynonymTable {
                line: i + 1,
                reason: "expected word<TAB>synonyms".into(),
            })?;
            let syns: Vec<String> =
                syns.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            if word.trim().is_empty() || syns.is_empty() {
                return Err(AugmentError::SynonymTable { line: i + 1, reason: "empty word or synonym list".into() });
            }
            entries.insert(word.trim().to_lowercase(), syns);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn insert(&mut self, word: &str, synonyms: Vec<String>) {
        self.entries.insert(word.to_lowercase(), synonyms);
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice).filter(|s| !s.is_empty())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn op_count(alpha: f64, n: usize) -> usize {
    (alpha * n as f64).ceil() as usize
}

/// Applies replace, insert, swap and delete (in that order) to the
/// whitespace-separated words of `text`. Each operator touches
/// `ceil(alpha * n)` positions, where `n` is the original word count.
/// Words without a synonym are kept by replace and duplicated by insert.
/// Delete always leaves at least one word.
pub fn eda_paraphrase(text: &str, params: &EdaParams, synonyms: &SynonymTable, seed: u64) -> Result<String, AugmentError> {
    params.validate()?;
    let mut words: Vec<String> = text.split_whitespace().map(String::from).collect();
    if words.is_empty() {
        return Err(AugmentError::EmptyText);
    }
    if params.alpha_replace == 0.0 && params.alpha_insert == 0.0 && params.alpha_swap == 0.0 && params.alpha_delete == 0.0 {
        return Ok(text.to_string());
    }
    let n = words.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let k = op_count(params.alpha_replace, n).min(words.len());
    if k > 0 {
        for pos in index::sample(&mut rng, words.len(), k).into_vec() {
            if let Some(syns) = synonyms.get(&words[pos]) {
                words[pos] = syns[rng.random_range(0..syns.len())].clone();
            }
        }
    }

    for _ in 0..op_count(params.alpha_insert, n) {
        let src = rng.random_range(0..words.len());
        let new_word = match synonyms.get(&words[src]) {
            Some(syns) => syns[rng.random_range(0..syns.len())].clone(),
            None => words[src].clone(),
        };
        let at = rng.random_range(0..=words.len());
        words.insert(at, new_word);
    }

    for _ in 0..op_count(params.alpha_swap, n) {
        let i = rng.random_range(0..words.len());
        let j = rng.random_range(0..words.len());
        words.swap(i, j);
    }

    let k = op_count(params.alpha_delete, n).min(words.len() - 1);
    if k > 0 {
        let mut doomed = index::sample(&mut rng, words.len(), k).into_vec();
        doomed.sort_unstable_by(|a, b| b.cmp(a));
        for pos in doomed {
            words.remove(pos);
        }
    }
    Ok(words.join(" "))
}

/// `params.num_variants` independent paraphrases of `text`.
pub fn eda_variants(text: &str, params: &EdaParams, synonyms: &SynonymTable, seed: u64) -> Result<Vec<String>, AugmentError> {
    params.validate()?;
    (0..params.num_variants)
        .map(|v| eda_paraphrase(text, params, synonyms, derive_seed(seed, v as u64)))
        .collect()
}

/// Text-to-text rewriting backend.
pub trait ParaphraseProvider: Send + Sync {
    fn name(&self) -> &str;
    fn paraphrase(&self, text: &str, seed: u64) -> Result<String, AugmentError>;
}

#[derive(Debug, Clone, Default)]
pub struct EdaProvider {
    pub params: EdaParams,
    pub synonyms: SynonymTable,
}

impl EdaProvider {
    pub fn new(params: EdaParams, synonyms: SynonymTable) -> Result<Self, AugmentError> {
        params.validate()?;
        Ok(Self { params, synonyms })
    }
}

impl ParaphraseProvider for EdaProvider {
    fn name(&self) -> &str {
        "eda"
    }

    fn paraphrase(&self, text: &str, seed: u64) -> Result<String, AugmentError> {
        eda_paraphrase(text, &self.params, &self.synonyms, seed)
    }
}

/// Deterministic provider that reverses sentence order.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubProvider;

/// Sentences end at `.`, `!` or `?`; a trailing fragment counts as one.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let s = text[start..i + c.len_utf8()].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

impl ParaphraseProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn paraphrase(&self, text: &str, _seed: u64) -> Result<String, AugmentError> {
        let mut sentences = split_sentences(text);
        if sentences.is_empty() {
            return Err(AugmentError::EmptyText);
        }
        sentences.reverse();
        Ok(sentences.join(" "))
    }
}

/// HTTP client that POSTs `{"prompt": ...}` and reads `{"text": ...}` back.
/// The prompt is the template with `{{TEXT}}` replaced by the input.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub endpoint: String,
    pub template: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, template: impl Into<String>, api_key: Option<String>) -> Result<Self, AugmentError> {
        let template = template.into();
        if !template.contains("{{TEXT}}") {
            return Err(AugmentError::Remote("prompt template has no {{TEXT}} placeholder".into()));
        }
        Ok(Self { endpoint: endpoint.into(), template, api_key, timeout: Duration::from_secs(60) })
    }

    /// Reads the template from a file and the key from `key_env`, if set.
    pub fn from_files(endpoint: &str, template_path: &Path, key_env: &str) -> Result<Self, AugmentError> {
        let template = std::fs::read_to_string(template_path)?;
        Self::new(endpoint, template, std::env::var(key_env).ok())
    }

    pub fn prompt(&self, text: &str) -> String {
        self.template.replace("{{TEXT}}", text)
    }
}

impl ParaphraseProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn paraphrase(&self, text: &str, _seed: u64) -> Result<String, AugmentError> {
        if text.trim().is_empty() {
            return Err(AugmentError::EmptyText);
        }
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let prompt = self.prompt(text);
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(RemoteRequest { prompt: &prompt })
            .map_err(|e| AugmentError::Remote(e.to_string()))?;
        let body: RemoteResponse = resp.body_mut().read_json().map_err(|e| AugmentError::Remote(e.to_string()))?;
        if body.text.trim().is_empty() {
            return Err(AugmentError::Remote("empty paraphrase returned".into()));
        }
        Ok(body.text)
    }
}

pub fn augmented_id(source_id: &str, k: usize) -> String {
    format!("{source_id}#aug{k}")
}

/// Copy of `doc` with id `new_id` and each listed field rewritten by
/// `provider`. Listed fields the document lacks, and empty values, are left
/// alone.
pub fn paraphrase_document_as(
    doc: &Document,
    new_id: String,
    target_fields: &[String],
    provider: &dyn ParaphraseProvider,
    seed: u64,
) -> Result<Document, AugmentError> {
    doc.validate()?;
    let mut out = doc.clone();
    out.id = new_id;
    for (i, field) in out.fields.iter_mut().enumerate() {
        if !target_fields.contains(&field.name) || field.value.trim().is_empty() {
            continue;
        }
        field.value = provider
            .paraphrase(&field.value, derive_seed(seed, i as u64))
            .map_err(|e| AugmentError::Provider { field: field.name.clone(), message: e.to_string() })?;
    }
    Ok(out)
}

/// [`paraphrase_document_as`] with the id `<source>#aug0`.
pub fn paraphrase_document(
    doc: &Document,
    target_fields: &[String],
    provider: &dyn ParaphraseProvider,
    seed: u64,
) -> Result<Document, AugmentError> {
    paraphrase_document_as(doc, augmented_id(&doc.id, 0), target_fields, provider, seed)
}

/// How many sources of each kind to augment and which fields to rewrite.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub n_aug_resumes: usize,
    pub n_aug_jobs: usize,
    pub target_fields_resume: Vec<String>,
    pub target_fields_job: Vec<String>,
}

impl AugmentPlan {
    pub fn targets(&self, kind: DocKind) -> &[String] {
        match kind {
            DocKind::Resume => &self.target_fields_resume,
            DocKind::Job => &self.target_fields_job,
        }
    }

    pub fn count(&self, kind: DocKind) -> usize {
        match kind {
            DocKind::Resume => self.n_aug_resumes,
            DocKind::Job => self.n_aug_jobs,
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), AugmentError> {
        for kind in [DocKind::Resume, DocKind::Job] {
            for field in self.targets(kind) {
                if !schema.fields(kind).contains(field) {
                    return Err(AugmentError::UnknownTargetField { kind, field: field.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Summary of one augmentation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub augmented_resumes: Vec<String>,
    pub augmented_jobs: Vec<String>,
    pub new_labels_resume_phase: usize,
    pub new_labels_job_phase: usize,
}

impl AugmentReport {
    pub fn new_labels(&self) -> usize {
        self.new_labels_resume_phase + self.new_labels_job_phase
    }
}

/// Augments `plan.n_aug_resumes` resumes, then `plan.n_aug_jobs` jobs,
/// sampled uniformly without replacement among documents with at least one
/// edge. Sources are assigned to `providers` round-robin.
pub fn augment_graph(
    graph: &InteractionGraph,
    plan: &AugmentPlan,
    providers: &[&dyn ParaphraseProvider],
    seed: u64,
) -> Result<(InteractionGraph, AugmentReport), AugmentError> {
    if providers.is_empty() {
        return Err(AugmentError::NoProviders);
    }
    plan.validate(&Schema::from_documents(graph.all_documents()))?;
    let mut out = graph.clone();
    let mut report = AugmentReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in [DocKind::Resume, DocKind::Job] {
        let (ids, added) = augment_phase(&mut out, kind, plan, providers, &mut rng)?;
        match kind {
            DocKind::Resume => {
                report.augmented_resumes = ids;
                report.new_labels_resume_phase = added;
            }
            DocKind::Job => {
                report.augmented_jobs = ids;
                report.new_labels_job_phase = added;
            }
        }
    }
    Ok((out, report))
}

fn augment_phase(
    graph: &mut InteractionGraph,
    kind: DocKind,
    plan: &AugmentPlan,
    providers: &[&dyn ParaphraseProvider],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, usize), AugmentError> {
    let requested = plan.count(kind);
    if requested == 0 {
        return Ok((Vec::new(), 0));
    }
    let eligible: Vec<&Document> =
        graph.documents(kind).values().filter(|d| graph.degree(kind, &d.id) > 0).collect();
    if requested > eligible.len() {
        return Err(AugmentError::PlanExceedsEligible { kind, requested, eligible: eligible.len() });
    }
    let mut picks = index::sample(rng, eligible.len(), requested).into_vec();
    picks.sort_unstable();
    let phase_seed: u64 = rng.random();
    let targets = plan.targets(kind);

    let rewritten: Vec<Document> = picks
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let src = eligible[i];
            let provider = providers[slot % providers.len()];
            paraphrase_document_as(src, src.id.clone(), targets, provider, derive_seed(phase_seed, i as u64))
        })
        .collect::<Result<_, _>>()?;

    // Commit phase: ids and inherited edges are assigned in source order.
    let mut new_ids = Vec::with_capacity(rewritten.len());
    let mut added = 0;
    for mut doc in rewritten {
        let source_id = doc.id.clone();
        let mut k = 0;
        while graph.document(kind, &augmented_id(&source_id, k)).is_some() {
            k += 1;
        }
        doc.id = augmented_id(&source_id, k);
        let adj = graph.adjacency(kind, &source_id).cloned().unwrap_or_default();
        let new_id = doc.id.clone();
        graph.add_document(doc)?;
        let edges = adj
            .accepted
            .iter()
            .map(|o| (o, crate::corpus::Label::Accept))
            .chain(adj.rejected.iter().map(|o| (o, crate::corpus::Label::Reject)));
        for (other, label) in edges {
            let edge = match kind {
                DocKind::Resume => InteractionLabel::new(new_id.clone(), other.clone(), label),
                DocKind::Job => InteractionLabel::new(other.clone(), new_id.clone(), label),
            };
            graph.add_label(edge)?;
            added += 1;
        }
        new_ids.push(new_id);
    }
    Ok((new_ids, added))
}
