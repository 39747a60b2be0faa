//! Contrastive training of the bi-encoder.
//!
//! A batch holds `B` accepted pairs plus up to `B_hard` rejected resumes and
//! `B_hard` rejected jobs drawn from the reject-neighbourhood of the batch.
//! All resumes are scored against all jobs; each positive pair is a softmax
//! row (resume side) and a softmax column (job side) whose denominators span
//! every other in-batch and hard-negative candidate. Candidates that are
//! themselves accepted for the anchor are masked out of the denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocKind, InteractionGraph, Label};
use crate::encoder::{encode_on_tape, EncoderError, ModelParams, ParamVars};
use crate::numerics::{lr_at, AdamW, AdamWConfig, Array2, NumericsError, Tape, Var};
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("need at least {needed} positive labels for one batch, found {found}")]
    NotEnoughPositives { needed: usize, found: usize },
    #[error("document `{0}` is not in the graph")]
    MissingDocument(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; batch positives {positives:?}")]
    NonFiniteLoss { epoch: usize, step: usize, positives: Vec<(String, String)> },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub epochs: usize,
    pub base_lr: f32,
    pub warmup_frac: f64,
    pub weight_decay: f32,
    pub grad_accumulation: usize,
    pub seed: u64,
    /// Drop in-batch candidates that are also accepted for the anchor.
    pub mask_collisions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            hard_negatives: 8,
            epochs: 10,
            base_lr: 5e-3,
            warmup_frac: 0.05,
            weight_decay: 1e-2,
            grad_accumulation: 2,
            seed: 0,
            mask_collisions: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.grad_accumulation == 0 {
            return bad("grad_accumulation must be at least 1");
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad("base_lr must be positive");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must be in (0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Scored resume-job pairs in a full batch: `(B + B_hard)^2 - B_hard^2`.
pub fn pair_count(batch_size: usize, hard_negatives: usize) -> usize {
    (batch_size + hard_negatives).pow(2) - hard_negatives.pow(2)
}

/// One training batch. Resumes are `positives[..].0` followed by
/// `hard_neg_resumes`; jobs likewise. `collision_mask[a][b]` is true when
/// resume `a` and job `b` are an accepted pair other than a positive's own
/// diagonal entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    pub positives: Vec<(String, String)>,
    pub hard_neg_resumes: Vec<String>,
    pub hard_neg_jobs: Vec<String>,
    pub collision_mask: Vec<Vec<bool>>,
}

impl ContrastiveBatch {
    pub fn resumes(&self) -> impl Iterator<Item = &str> {
        self.positives.iter().map(|p| p.0.as_str()).chain(self.hard_neg_resumes.iter().map(String::as_str))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &str> {
        self.positives.iter().map(|p| p.1.as_str()).chain(self.hard_neg_jobs.iter().map(String::as_str))
    }

    pub fn num_resumes(&self) -> usize {
        self.positives.len() + self.hard_neg_resumes.len()
    }

    pub fn num_jobs(&self) -> usize {
        self.positives.len() + self.hard_neg_jobs.len()
    }

    /// Cells that enter at least one softmax, before masking.
    pub fn scored_pairs(&self) -> usize {
        self.num_resumes() * self.num_jobs() - self.hard_neg_resumes.len() * self.hard_neg_jobs.len()
    }

    /// Scored cells removed by the collision mask.
    pub fn masked_pairs(&self) -> usize {
        let b = self.positives.len();
        let mut n = 0;
        for (a, row) in self.collision_mask.iter().enumerate() {
            for (c, &m) in row.iter().enumerate() {
                if m && (a < b || c < b) {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Assembles a batch around `positives`, sampling hard negatives from the
/// rejected neighbours of the batch. With `mask_collisions` off the mask is
/// all false.
pub fn build_batch(
    graph: &InteractionGraph,
    positives: Vec<(String, String)>,
    hard_negatives: usize,
    mask_collisions: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ContrastiveBatch, TrainError> {
    let pos_resumes: BTreeSet<&str> = positives.iter().map(|p| p.0.as_str()).collect();
    let pos_jobs: BTreeSet<&str> = positives.iter().map(|p| p.1.as_str()).collect();

    let mut resume_pool = BTreeSet::new();
    for j in &pos_jobs {
        let adj = graph.adjacency(DocKind::Job, j).ok_or_else(|| TrainError::MissingDocument(j.to_string()))?;
        resume_pool.extend(adj.rejected.iter().map(String::as_str).filter(|r| !pos_resumes.contains(r)));
    }
    let mut job_pool = BTreeSet::new();
    for r in &pos_resumes {
        let adj = graph.adjacency(DocKind::Resume, r).ok_or_else(|| TrainError::MissingDocument(r.to_string()))?;
        job_pool.extend(adj.rejected.iter().map(String::as_str).filter(|j| !pos_jobs.contains(j)));
    }
    let hard_neg_resumes = sample_sorted(resume_pool, hard_negatives, rng);
    let hard_neg_jobs = sample_sorted(job_pool, hard_negatives, rng);

    let mut batch = ContrastiveBatch { positives, hard_neg_resumes, hard_neg_jobs, collision_mask: Vec::new() };
    let jobs: Vec<String> = batch.jobs().map(String::from).collect();
    let b = batch.positives.len();
    batch.collision_mask = batch
        .resumes()
        .enumerate()
        .map(|(a, r)| {
            jobs.iter()
                .enumerate()
                .map(|(c, j)| mask_collisions && !(a == c && a < b) && graph.label(r, j) == Some(Label::Accept))
                .collect()
        })
        .collect();
    Ok(batch)
}

/// Draws `B` positives uniformly without replacement and builds a batch.
pub fn sample_batch(graph: &InteractionGraph, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<ContrastiveBatch, TrainError> {
    let all = graph.positive_pairs();
    if all.len() < config.batch_size {
        return Err(TrainError::NotEnoughPositives { needed: config.batch_size, found: all.len() });
    }
    let positives = index::sample(rng, all.len(), config.batch_size).into_iter().map(|i| all[i].clone()).collect();
    build_batch(graph, positives, config.hard_negatives, config.mask_collisions, rng)
}

fn sample_sorted(pool: BTreeSet<&str>, k: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let pool: Vec<&str> = pool.into_iter().collect();
    let k = k.min(pool.len());
    if k == 0 {
        return Vec::new();
    }
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i].to_string()).collect()
}

/// `L_R + L_J` over a `(B + h_r) × (B + h_j)` score matrix whose first `B`
/// rows and columns are the positive pairs, in order.
pub fn contrastive_loss(
    tape: &mut Tape<'_>,
    scores: Var,
    num_positives: usize,
    collision_mask: &[Vec<bool>],
) -> Result<Var, NumericsError> {
    let (rows, cols) = tape.value(scores).shape();
    let b = num_positives;
    if b == 0 || b > rows || b > cols {
        return Err(NumericsError::Shape(format!("{b} positives in a {rows}x{cols} score matrix")));
    }
    if collision_mask.len() != rows || collision_mask.iter().any(|r| r.len() != cols) {
        return Err(NumericsError::Shape("collision mask does not match score matrix".into()));
    }
    let diag: Vec<(usize, usize)> = (0..b).map(|i| (i, i)).collect();

    let resume_rows = tape.slice_rows(scores, 0, b)?;
    let mask_r: Vec<bool> = collision_mask[..b].iter().flatten().copied().collect();
    let logp_r = tape.masked_row_log_softmax(resume_rows, mask_r)?;
    let picked_r = tape.pick(logp_r, &diag)?;
    let loss_r = tape.mean_rows(picked_r)?;

    let transposed = tape.transpose(scores)?;
    let job_rows = tape.slice_rows(transposed, 0, b)?;
    let mask_j: Vec<bool> = (0..b).flat_map(|c| (0..rows).map(move |a| (a, c))).map(|(a, c)| collision_mask[a][c]).collect();
    let logp_j = tape.masked_row_log_softmax(job_rows, mask_j)?;
    let picked_j = tape.pick(logp_j, &diag)?;
    let loss_j = tape.mean_rows(picked_j)?;

    let total = tape.add(loss_r, loss_j)?;
    tape.scale(total, -1.0)
}

/// Encodes every document of `batch` once and returns the loss node.
pub fn batch_loss(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    params: &ModelParams,
    graph: &InteractionGraph,
    batch: &ContrastiveBatch,
) -> Result<Var, TrainError> {
    let mut cache: BTreeMap<(DocKind, &str), Var> = BTreeMap::new();
    let mut encode = |tape: &mut Tape<'_>, kind: DocKind, id: &'_ str| -> Result<Var, TrainError> {
        let doc = graph.document(kind, id).ok_or_else(|| TrainError::MissingDocument(id.to_string()))?;
        if let Some(v) = cache.get(&(kind, doc.id.as_str())) {
            return Ok(*v);
        }
        let v = encode_on_tape(tape, vars, &params.config, &params.schema, doc)?;
        cache.insert((kind, doc.id.as_str()), v);
        Ok(v)
    };
    let mut rs = Vec::with_capacity(batch.num_resumes());
    for id in batch.resumes() {
        rs.push(encode(tape, DocKind::Resume, id)?);
    }
    let mut js = Vec::with_capacity(batch.num_jobs());
    for id in batch.jobs() {
        js.push(encode(tape, DocKind::Job, id)?);
    }
    let r_all = tape.concat_rows(&rs)?;
    let j_all = tape.concat_rows(&js)?;
    let scores = tape.matmul_nt(r_all, j_all)?;
    Ok(contrastive_loss(tape, scores, batch.positives.len(), &batch.collision_mask)?)
}

/// Loss value and gradients (in parameter order) of one batch.
pub fn batch_gradients(
    params: &ModelParams,
    graph: &InteractionGraph,
    batch: &ContrastiveBatch,
) -> Result<(f64, Vec<Array2>), TrainError> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let loss = batch_loss(&mut tape, &vars, params, graph, batch)?;
    let value = tape.value(loss).get(0, 0) as f64;
    let mut grads = tape.backward(loss)?;
    let out = vars
        .as_array()
        .iter()
        .zip(params.arrays())
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Array2::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, out))
}

pub fn batch_loss_value(params: &ModelParams, graph: &InteractionGraph, batch: &ContrastiveBatch) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let loss = batch_loss(&mut tape, &vars, params, graph, batch)?;
    Ok(tape.value(loss).get(0, 0) as f64)
}

/// Splits shuffled positives into full batches; the short tail is dropped.
fn epoch_batches(
    graph: &InteractionGraph,
    positives: &[(String, String)],
    batch_size: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ContrastiveBatch>, TrainError> {
    let mut order = positives.to_vec();
    order.shuffle(rng);
    order
        .chunks_exact(batch_size)
        .map(|chunk| build_batch(graph, chunk.to_vec(), config.hard_negatives, config.mask_collisions, rng))
        .collect()
}

/// Mean per-positive contrastive loss over batches of `graph`'s positives
/// built from a fixed seed. Unlike training, a trailing batch of two or more
/// positives is kept, so small validation sets use all their positives.
/// `None` when there are fewer than two positives.
pub fn evaluation_loss(
    params: &ModelParams,
    graph: &InteractionGraph,
    config: &TrainConfig,
    seed: u64,
) -> Result<Option<f64>, TrainError> {
    let mut positives = graph.positive_pairs();
    // A single positive with no negatives always scores zero loss.
    if positives.len() < 2 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    let batches = positives
        .chunks(config.batch_size)
        .filter(|c| c.len() >= 2)
        .map(|chunk| build_batch(graph, chunk.to_vec(), config.hard_negatives, config.mask_collisions, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let losses: Vec<(f64, usize)> = batches
        .par_iter()
        .map(|batch| batch_loss_value(params, graph, batch).map(|l| (l, batch.positives.len())))
        .collect::<Result<_, _>>()?;
    let n: usize = losses.iter().map(|l| l.1).sum();
    Ok(Some(losses.iter().map(|(l, k)| l * *k as f64).sum::<f64>() / n as f64 + 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Entry 0 holds the validation loss of the initial parameters.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub steps: usize,
    pub batches_per_epoch: usize,
    pub pairs_per_full_batch: usize,
    pub scored_pairs: usize,
    pub masked_pairs: usize,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.train_loss)
    }
}

/// Trains on `train`'s accepted pairs and keeps the parameters of the epoch
/// with the lowest loss on `val` (epoch 0 being the initial parameters).
/// Without validation positives the last epoch is kept. One line of JSON
/// per epoch goes to `log` when given.
pub fn train(
    train_graph: &InteractionGraph,
    val_graph: &InteractionGraph,
    initial: ModelParams,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(ModelParams, TrainReport), TrainError> {
    config.validate()?;
    initial.validate()?;
    let positives = train_graph.positive_pairs();
    let per_epoch = positives.len() / config.batch_size;
    if per_epoch == 0 {
        return Err(TrainError::NotEnoughPositives { needed: config.batch_size, found: positives.len() });
    }
    let steps_per_epoch = per_epoch.div_ceil(config.grad_accumulation);
    let total_steps = steps_per_epoch * config.epochs;
    let val_seed = derive_seed(config.seed, 0x7661_6c);

    let mut params = initial;
    let mut opt = AdamW::new(
        AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::default() },
        &params.shapes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs + 1),
        best_epoch: 0,
        best_val_loss: None,
        steps: 0,
        batches_per_epoch: per_epoch,
        pairs_per_full_batch: pair_count(config.batch_size, config.hard_negatives),
        scored_pairs: 0,
        masked_pairs: 0,
    };

    let val0 = evaluation_loss(&params, val_graph, config, val_seed)?;
    let mut best = params.clone();
    report.best_val_loss = val0;
    report.epochs.push(EpochRecord { epoch: 0, train_loss: None, val_loss: val0 });
    write_log(&mut log, &report.epochs[0])?;

    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train_graph, &positives, config.batch_size, config, &mut rng)?;
        let mut loss_sum = 0.0;
        for group in batches.chunks(config.grad_accumulation) {
            let results: Vec<(f64, Vec<Array2>)> = group
                .par_iter()
                .map(|b| batch_gradients(&params, train_graph, b))
                .collect::<Result<_, _>>()?;
            let mut summed: Option<Vec<Array2>> = None;
            for ((loss, grads), batch) in results.into_iter().zip(group) {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step: report.steps,
                        positives: batch.positives.clone(),
                    });
                }
                loss_sum += loss;
                report.scored_pairs += batch.scored_pairs();
                report.masked_pairs += batch.masked_pairs();
                match summed.as_mut() {
                    None => summed = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_scaled(g, 1.0)),
                }
            }
            let mut grads = summed.expect("group is non-empty");
            let inv = 1.0 / group.len() as f32;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            let lr = lr_at(report.steps, total_steps, config.warmup_frac, config.base_lr);
            let mut slots = params.arrays_mut();
            let mut refs: Vec<&mut Array2> = slots.iter_mut().map(|a| &mut **a).collect();
            opt.step(&mut refs, &grads, lr)?;
            report.steps += 1;
        }
        let train_loss = loss_sum / batches.len() as f64;
        let val_loss = evaluation_loss(&params, val_graph, config, val_seed)?;
        let improved = match (val_loss, report.best_val_loss) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            best = params.clone();
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
        }
        let record = EpochRecord { epoch, train_loss: Some(train_loss), val_loss };
        write_log(&mut log, &record)?;
        report.epochs.push(record);
    }
    Ok((best, report))
}

fn write_log(log: &mut Option<&mut dyn Write>, record: &EpochRecord) -> Result<(), TrainError> {
    if let Some(w) = log.as_mut() {
        let line = serde_json::json!({
            "epoch": record.epoch,
            "train_loss": record.train_loss,
            "val_loss": record.val_loss,
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}
