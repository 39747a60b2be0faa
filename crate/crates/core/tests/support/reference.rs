//! Plain f64 re-implementation of the encoder forward pass and the
//! contrastive loss, written from the definitions with nested loops. Used as
//! the objective for finite-difference checks so roundoff in the reference
//! does not swamp the f32 gradients being checked.

#![allow(dead_code)]

use jobmatch_core::corpus::{DocKind, Document};
use jobmatch_core::encoder::{field_token_ids, ModelParams};
use jobmatch_core::numerics::Array2;

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &Array2) -> Mat {
    (0..a.rows()).map(|r| a.row(r).iter().map(|&v| v as f64).collect()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

/// The nine parameter arrays in checkpoint order, as f64.
pub struct RefParams {
    pub embed: Mat,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub fusion_resume: Mat,
    pub fusion_resume_bias: Vec<f64>,
    pub fusion_job: Mat,
    pub fusion_job_bias: Vec<f64>,
}

impl RefParams {
    pub fn from_arrays(a: &[Array2]) -> Self {
        Self {
            embed: to_mat(&a[0]),
            wq: to_mat(&a[1]),
            wk: to_mat(&a[2]),
            wv: to_mat(&a[3]),
            wo: to_mat(&a[4]),
            fusion_resume: to_mat(&a[5]),
            fusion_resume_bias: to_mat(&a[6]).remove(0),
            fusion_job: to_mat(&a[7]),
            fusion_job_bias: to_mat(&a[8]).remove(0),
        }
    }
}

/// Embedding of `doc` under `arrays` (shapes as in `model`).
pub fn encode(model: &ModelParams, arrays: &RefParams, doc: &Document) -> Vec<f64> {
    let cfg = &model.config;
    let ids = field_token_ids(doc, cfg, &model.schema).unwrap();
    let de = cfg.embed_dim;
    let x: Mat = ids
        .iter()
        .map(|ids| {
            let mut row = vec![0.0; de];
            for &t in ids {
                for c in 0..de {
                    row[c] += arrays.embed[t][c];
                }
            }
            if !ids.is_empty() {
                row.iter_mut().for_each(|v| *v /= ids.len() as f64);
            }
            row
        })
        .collect();
    let p = x.len();
    let q = matmul(&x, &arrays.wq);
    let k = matmul(&x, &arrays.wk);
    let v = matmul(&x, &arrays.wv);
    let dh = de / cfg.heads;
    let mut merged = vec![vec![0.0; de]; p];
    for h in 0..cfg.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..p {
            let logits: Vec<f64> = (0..p)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = (0..p).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let attn = matmul(&merged, &arrays.wo);
    let mut flat = Vec::with_capacity(p * de);
    for i in 0..p {
        let r: Vec<f64> = (0..de).map(|c| x[i][c] + attn[i][c]).collect();
        let mean = r.iter().sum::<f64>() / de as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / de as f64;
        let inv = 1.0 / (var + cfg.layer_norm_eps as f64).sqrt();
        flat.extend(r.iter().map(|v| (v - mean) * inv));
    }
    let (w, b) = match doc.kind {
        DocKind::Resume => (&arrays.fusion_resume, &arrays.fusion_resume_bias),
        DocKind::Job => (&arrays.fusion_job, &arrays.fusion_job_bias),
    };
    (0..b.len()).map(|o| b[o] + (0..flat.len()).map(|i| flat[i] * w[i][o]).sum::<f64>()).collect()
}

/// `-(1/B) Σ_i log softmax over unmasked cells` taken along resume rows and
/// then along job columns, for `scores[a][c]` with positives on the first
/// `b` diagonal cells.
pub fn contrastive_loss(scores: &Mat, b: usize, mask: &[Vec<bool>]) -> f64 {
    let (rows, cols) = (scores.len(), scores[0].len());
    let log_softmax_pick = |cells: Vec<(f64, bool)>, pick: usize| {
        let live: Vec<f64> = cells.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let m = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + live.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        cells[pick].0 - lse
    };
    let mut total = 0.0;
    for i in 0..b {
        total -= log_softmax_pick((0..cols).map(|c| (scores[i][c], mask[i][c])).collect(), i) / b as f64;
    }
    for i in 0..b {
        total -= log_softmax_pick((0..rows).map(|a| (scores[a][i], mask[a][i])).collect(), i) / b as f64;
    }
    total
}

/// Full batch loss from documents: encode, score all pairs, apply the loss.
pub fn batch_loss(model: &ModelParams, arrays: &[Array2], resumes: &[&Document], jobs: &[&Document], b: usize, mask: &[Vec<bool>]) -> f64 {
    let p = RefParams::from_arrays(arrays);
    let r: Vec<Vec<f64>> = resumes.iter().map(|d| encode(model, &p, d)).collect();
    let j: Vec<Vec<f64>> = jobs.iter().map(|d| encode(model, &p, d)).collect();
    let scores: Mat = r.iter().map(|ri| j.iter().map(|jj| ri.iter().zip(jj).map(|(a, b)| a * b).sum()).collect()).collect();
    contrastive_loss(&scores, b, mask)
}

/// A six-document graph with every field filled, two positives, one
/// rejected neighbour on each side and one extra accept that the collision
/// mask has to remove.
pub fn toy_graph() -> jobmatch_core::corpus::InteractionGraph {
    use jobmatch_core::corpus::{FieldEntry, InteractionGraph, InteractionLabel, Label};
    let resume = |id: &str, a: &str, b: &str, c: &str| {
        Document::new(id, DocKind::Resume, vec![FieldEntry::new("summary", a), FieldEntry::new("skills", b), FieldEntry::new("education", c)])
    };
    let job = |id: &str, a: &str, b: &str, c: &str| {
        Document::new(id, DocKind::Job, vec![FieldEntry::new("title", a), FieldEntry::new("description", b), FieldEntry::new("requirements", c)])
    };
    let docs = vec![
        resume("r0", "welder with ten years", "tig mig arc", "trade school"),
        resume("r1", "nurse on night shifts", "triage icu care", "bsn degree"),
        resume("r2", "line cook", "grill prep sauces", "culinary diploma"),
        job("j0", "welder", "fabrication shop floor", "tig certification"),
        job("j1", "icu nurse", "hospital ward nights", "licensed rn"),
        job("j2", "sous chef", "busy kitchen", "five years cooking"),
    ];
    let labels = vec![
        InteractionLabel::new("r0", "j0", Label::Accept),
        InteractionLabel::new("r1", "j1", Label::Accept),
        InteractionLabel::new("r1", "j0", Label::Accept),
        InteractionLabel::new("r2", "j0", Label::Reject),
        InteractionLabel::new("r0", "j2", Label::Reject),
    ];
    InteractionGraph::new(docs, labels).unwrap()
}

/// Autodiff gradients of the f32 trainer against central differences of the
/// f64 reference, at d_e = 8, d = 16, three fields, B = 2, one hard negative.
pub fn toy_gradient_check(seed: u64) -> jobmatch_core::numerics::GradCheckReport {
    use jobmatch_core::encoder::{ModelConfig, Schema, TokenizerConfig};
    use jobmatch_core::numerics::compare_with_finite_differences;
    use jobmatch_core::trainer::{batch_gradients, build_batch};
    use rand::SeedableRng;

    let graph = toy_graph();
    let config = ModelConfig {
        embed_dim: 8,
        output_dim: 16,
        heads: 4,
        tokenizer: TokenizerConfig { hash_buckets: 32, max_tokens_per_field: 64 },
        layer_norm_eps: 1e-5,
    };
    let schema = Schema::from_documents(graph.all_documents());
    let mut model = ModelParams::init(config, schema, seed).unwrap();
    // Give the biases something to do.
    for (i, v) in model.fusion_resume_bias.data_mut().iter_mut().enumerate() {
        *v = 0.05 * (i as f32 - 8.0);
    }
    for (i, v) in model.fusion_job_bias.data_mut().iter_mut().enumerate() {
        *v = -0.03 * (i as f32 - 5.0);
    }
    let positives = vec![("r0".to_string(), "j0".to_string()), ("r1".to_string(), "j1".to_string())];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let batch = build_batch(&graph, positives, 1, true, &mut rng).unwrap();
    assert_eq!(batch.hard_neg_resumes, ["r2"]);
    assert_eq!(batch.hard_neg_jobs, ["j2"]);
    assert!(batch.collision_mask[1][0]);

    let (_, analytic) = batch_gradients(&model, &graph, &batch).unwrap();
    let resumes: Vec<&Document> = batch.resumes().map(|id| graph.document(DocKind::Resume, id).unwrap()).collect();
    let jobs: Vec<&Document> = batch.jobs().map(|id| graph.document(DocKind::Job, id).unwrap()).collect();
    let params: Vec<Array2> = model.arrays().into_iter().cloned().collect();
    compare_with_finite_differences(&params, &analytic, 1e-4, |probe| {
        Ok(batch_loss(&model, probe, &resumes, &jobs, 2, &batch.collision_mask))
    })
    .unwrap()
}
