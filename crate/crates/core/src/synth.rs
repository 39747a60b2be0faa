//! Synthetic industry-clustered datasets.
//!
//! Every industry draws on the same pool of specialties. A job's profile is a
//! set of `specialties_per_document` specialties, assigned to the jobs of an
//! industry in lexicographic order; each resume copies the profile of one
//! job. Text mixes generic words, industry words and the words of each
//! profile specialty. A resume applies to every job of its industry with the
//! same profile (accepted with `accept_rate_within_industry`), is rejected by
//! `rejected_applications` other jobs of its industry and by
//! `cross_industry_rejections` jobs with its profile elsewhere, and with
//! probability `cross_industry_noise` is also accepted by a random job of
//! another industry.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocKind, Document, FieldEntry, InteractionGraph, InteractionLabel, Label};
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_industries: usize,
    pub resumes_per_industry: usize,
    pub jobs_per_industry: usize,
    /// Specialties shared by all industries.
    pub specialty_pool: usize,
    pub specialties_per_document: usize,
    /// Probability that a resume is also accepted by a job of another industry.
    pub cross_industry_noise: f64,
    /// Probability that a resume's application to a matching job is accepted.
    pub accept_rate_within_industry: f64,
    /// Rejected applications per resume to jobs of its industry with another
    /// profile.
    pub rejected_applications: usize,
    /// Rejected applications per resume to jobs of other industries with its
    /// profile.
    pub cross_industry_rejections: usize,
    /// Vocabulary seed per industry; derived from `seed` when empty.
    pub vocab_seeds: Vec<u64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_industries: 5,
            resumes_per_industry: 100,
            jobs_per_industry: 20,
            specialty_pool: 7,
            specialties_per_document: 2,
            cross_industry_noise: 0.02,
            accept_rate_within_industry: 0.9,
            rejected_applications: 2,
            cross_industry_rejections: 1,
            vocab_seeds: Vec::new(),
            seed: 0,
        }
    }
}

const GENERIC_WORDS: usize = 80;
const INDUSTRY_WORDS: usize = 8;
const SPECIALTY_WORDS: usize = 4;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_industries == 0 || self.resumes_per_industry == 0 || self.jobs_per_industry == 0 {
            return bad("counts must be at least 1".into());
        }
        for (name, p) in [
            ("cross_industry_noise", self.cross_industry_noise),
            ("accept_rate_within_industry", self.accept_rate_within_industry),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.specialties_per_document == 0 || self.specialties_per_document > self.specialty_pool {
            return bad(format!(
                "specialties_per_document = {} must be between 1 and specialty_pool = {}",
                self.specialties_per_document, self.specialty_pool
            ));
        }
        let n_profiles = self.profiles().len();
        // The first profile has the most jobs, the last the fewest.
        let others = self.jobs_per_industry - self.jobs_per_industry.div_ceil(n_profiles);
        if self.rejected_applications > others {
            return bad(format!(
                "rejected_applications = {} but a profile has only {others} jobs outside it",
                self.rejected_applications
            ));
        }
        let elsewhere = (self.n_industries - 1) * (self.jobs_per_industry / n_profiles);
        if self.cross_industry_rejections > elsewhere {
            return bad(format!(
                "cross_industry_rejections = {} but only {elsewhere} jobs share a profile across industries",
                self.cross_industry_rejections
            ));
        }
        if !self.vocab_seeds.is_empty() && self.vocab_seeds.len() != self.n_industries {
            return bad(format!("{} vocab seeds for {} industries", self.vocab_seeds.len(), self.n_industries));
        }
        Ok(())
    }

    pub fn industry_seed(&self, industry: usize) -> u64 {
        self.vocab_seeds.get(industry).copied().unwrap_or_else(|| derive_seed(self.seed, 1_000 + industry as u64))
    }

    /// The profiles in use: the first `jobs_per_industry` subsets of the
    /// pool in lexicographic order (fewer when the pool has fewer subsets).
    pub fn profiles(&self) -> Vec<Vec<usize>> {
        let (n, m) = (self.specialty_pool, self.specialties_per_document);
        let mut out = Vec::new();
        if m == 0 || m > n {
            return out;
        }
        let mut cur: Vec<usize> = (0..m).collect();
        loop {
            out.push(cur.clone());
            if out.len() == self.jobs_per_industry {
                return out;
            }
            let Some(i) = (0..m).rev().find(|&i| cur[i] < n - m + i) else { return out };
            cur[i] += 1;
            for k in i + 1..m {
                cur[k] = cur[k - 1] + 1;
            }
        }
    }
}

/// Industry and profile index of a generated document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthMeta {
    pub industry: usize,
    pub profile: usize,
}

/// Generated documents, labels, and the ground-truth assignment of each
/// document (same order as `documents`).
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub documents: Vec<Document>,
    pub labels: Vec<InteractionLabel>,
    pub meta: Vec<SynthMeta>,
    /// Specialties of each profile index.
    pub profiles: Vec<Vec<usize>>,
}

impl SyntheticDataset {
    pub fn graph(&self) -> InteractionGraph {
        InteractionGraph::new(self.documents.clone(), self.labels.clone()).expect("generated data is consistent")
    }

    pub fn meta_of(&self, kind: DocKind, id: &str) -> Option<SynthMeta> {
        self.documents.iter().position(|d| d.kind == kind && d.id == id).map(|i| self.meta[i])
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "sa", "do", "fu", "ga", "hi", "jo", "be", "ci", "xu",
    "wa", "ye", "qo", "ni", "mu", "te",
];

fn pseudo_word(seed: u64, i: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
    let n = rng.random_range(2..=4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

fn vocabulary(seed: u64, n: usize) -> Vec<String> {
    (0..n as u64).map(|i| pseudo_word(seed, i)).collect()
}

struct Vocab {
    generic: Vec<String>,
    industry: Vec<Vec<String>>,
    specialty: Vec<Vec<String>>,
}

impl Vocab {
    /// `(generic, industry, per-specialty)` word counts for one field.
    fn field(&self, rng: &mut ChaCha8Rng, m: SynthMeta, profile: &[usize], counts: (usize, usize, usize)) -> String {
        let mut parts: Vec<(&[String], usize)> =
            vec![(&self.generic[..], counts.0), (&self.industry[m.industry][..], counts.1)];
        parts.extend(profile.iter().map(|&s| (&self.specialty[s][..], counts.2)));
        words(rng, &parts)
    }
}

fn words(rng: &mut ChaCha8Rng, parts: &[(&[String], usize)]) -> String {
    let mut out: Vec<&str> = Vec::new();
    for (pool, n) in parts {
        for _ in 0..*n {
            out.push(&pool[rng.random_range(0..pool.len())]);
        }
    }
    // Shuffle so the stub paraphraser has something to reorder.
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i);
        out.swap(i, j);
    }
    let mid = out.len() / 2;
    format!("{}. {}.", out[..mid].join(" "), out[mid..].join(" "))
}

fn resume_fields(v: &Vocab, m: SynthMeta, profile: &[usize], rng: &mut ChaCha8Rng) -> Vec<FieldEntry> {
    vec![
        FieldEntry::new("summary", v.field(rng, m, profile, (1, 3, 0))),
        FieldEntry::new("experiences", v.field(rng, m, profile, (2, 2, 1))),
        FieldEntry::new("skills", v.field(rng, m, profile, (1, 0, 2))),
        FieldEntry::new("education", v.field(rng, m, profile, (2, 1, 0))),
    ]
}

fn job_fields(v: &Vocab, m: SynthMeta, profile: &[usize], rng: &mut ChaCha8Rng) -> Vec<FieldEntry> {
    vec![
        FieldEntry::new("title", v.field(rng, m, profile, (0, 1, 1))),
        FieldEntry::new("description", v.field(rng, m, profile, (2, 3, 0))),
        FieldEntry::new("requirements", v.field(rng, m, profile, (1, 0, 2))),
    ]
}

pub fn resume_id(i: usize) -> String {
    format!("r{i:05}")
}

pub fn job_id(i: usize) -> String {
    format!("j{i:04}")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let profiles = spec.profiles();
    let n_prof = profiles.len();
    let vocab = Vocab {
        generic: vocabulary(derive_seed(spec.seed, 1), GENERIC_WORDS),
        industry: (0..spec.n_industries).map(|k| vocabulary(spec.industry_seed(k), INDUSTRY_WORDS)).collect(),
        specialty: (0..spec.specialty_pool)
            .map(|s| vocabulary(derive_seed(spec.seed, 2_000_000 + s as u64), SPECIALTY_WORDS))
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut documents = Vec::new();
    let mut meta = Vec::new();

    let job_index = |industry: usize, k: usize| industry * spec.jobs_per_industry + k;
    for industry in 0..spec.n_industries {
        for k in 0..spec.jobs_per_industry {
            let m = SynthMeta { industry, profile: k % n_prof };
            let fields = job_fields(&vocab, m, &profiles[m.profile], &mut rng);
            documents.push(Document::new(job_id(job_index(industry, k)), DocKind::Job, fields));
            meta.push(m);
        }
    }

    let mut labels = Vec::new();
    for industry in 0..spec.n_industries {
        for k in 0..spec.resumes_per_industry {
            let m = SynthMeta { industry, profile: (k % spec.jobs_per_industry) % n_prof };
            let rid = resume_id(industry * spec.resumes_per_industry + k);
            documents.push(Document::new(rid.clone(), DocKind::Resume, resume_fields(&vocab, m, &profiles[m.profile], &mut rng)));
            meta.push(m);

            let (own, others): (Vec<usize>, Vec<usize>) =
                (0..spec.jobs_per_industry).partition(|j| j % n_prof == m.profile);
            for j in own {
                let accepted = rng.random_bool(spec.accept_rate_within_industry);
                labels.push(InteractionLabel::new(rid.clone(), job_id(job_index(industry, j)), Label::from_bool(accepted)));
            }
            let mut picked = index::sample(&mut rng, others.len(), spec.rejected_applications).into_vec();
            picked.sort_unstable();
            for o in picked {
                labels.push(InteractionLabel::new(rid.clone(), job_id(job_index(industry, others[o])), Label::Reject));
            }
            let elsewhere: Vec<usize> = (0..spec.n_industries)
                .filter(|&i| i != industry)
                .flat_map(|i| (0..spec.jobs_per_industry).filter(|j| j % n_prof == m.profile).map(move |j| job_index(i, j)))
                .collect();
            let mut picked = index::sample(&mut rng, elsewhere.len(), spec.cross_industry_rejections).into_vec();
            picked.sort_unstable();
            let rejected_elsewhere: Vec<usize> = picked.iter().map(|&o| elsewhere[o]).collect();
            for &j in &rejected_elsewhere {
                labels.push(InteractionLabel::new(rid.clone(), job_id(j), Label::Reject));
            }

            if spec.n_industries > 1 && rng.random_bool(spec.cross_industry_noise) {
                let pool: Vec<usize> = (0..spec.n_industries * spec.jobs_per_industry)
                    .filter(|j| j / spec.jobs_per_industry != industry && !rejected_elsewhere.contains(j))
                    .collect();
                if !pool.is_empty() {
                    let j = pool[rng.random_range(0..pool.len())];
                    labels.push(InteractionLabel::new(rid.clone(), job_id(j), Label::Accept));
                }
            }
        }
    }
    Ok(SyntheticDataset { documents, labels, meta, profiles })
}
