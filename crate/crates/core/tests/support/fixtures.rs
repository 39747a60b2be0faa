//! Small fixed datasets shared by the integration tests.

#![allow(dead_code)]

use jobmatch_core::corpus::{DocKind, Document, FieldEntry, InteractionGraph, InteractionLabel, Label};
use jobmatch_core::encoder::{ModelConfig, ModelParams, Schema};
use jobmatch_core::trainer::{train, TrainConfig, TrainReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| format!("w{}", rng.random_range(0..300))).collect::<Vec<_>>().join(" ")
}

/// `n` resume-job pairs with random three-field text, each resume accepted
/// by its own job and nothing else.
pub fn positive_pairs_graph(n: usize, seed: u64) -> InteractionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let r = vec![
            FieldEntry::new("summary", words(&mut rng, 8)),
            FieldEntry::new("skills", words(&mut rng, 6)),
            FieldEntry::new("education", words(&mut rng, 4)),
        ];
        let j = vec![
            FieldEntry::new("title", words(&mut rng, 3)),
            FieldEntry::new("description", words(&mut rng, 8)),
            FieldEntry::new("requirements", words(&mut rng, 6)),
        ];
        docs.push(Document::new(format!("r{i:02}"), DocKind::Resume, r));
        docs.push(Document::new(format!("j{i:02}"), DocKind::Job, j));
        labels.push(InteractionLabel::new(format!("r{i:02}"), format!("j{i:02}"), Label::Accept));
    }
    InteractionGraph::new(docs, labels).unwrap()
}

/// Trains default-configured models on 16 pairs for `steps` optimiser steps
/// and returns the report.
pub fn overfit_sixteen_pairs(steps: usize) -> TrainReport {
    let graph = positive_pairs_graph(16, 11);
    let base = TrainConfig::default();
    // 16 positives make 16 / B batches per epoch and one step per
    // `grad_accumulation` batches.
    let steps_per_epoch = (16 / base.batch_size).div_ceil(base.grad_accumulation);
    let config = TrainConfig { epochs: steps.div_ceil(steps_per_epoch), ..base };
    let schema = Schema::from_documents(graph.all_documents());
    let init = ModelParams::init(ModelConfig::default(), schema, 0).unwrap();
    let (_, report) = train(&graph, &graph, init, &config, None).unwrap();
    assert_eq!(report.steps, steps);
    report
}
