mod common;

use pathe_core::eval::{rank_of, EvalMode, EvalReport, Evaluator, Negatives};
use pathe_core::kg::{KnowledgeGraph, Triple};
use pathe_core::model::{AggregatorKind, ModelConfig, PathE, Task};
use pathe_core::paths::{eval_paths, mine_all, MiningParams, PathCorpus};
use pathe_core::synthetic::class_graph;
use pathe_tensor::{ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 21;

fn setup(task: Task) -> (KnowledgeGraph, PathCorpus, PathE, ParamStore<f32>) {
    let kg = class_graph(5, 10, (2, 4), 3);
    let corpus = mine_all(
        &kg,
        MiningParams {
            num_paths: 6,
            max_len: 4,
            seed: 2,
        },
    );
    let config = ModelConfig {
        dim: 16,
        ppe: 3,
        max_len: 4,
        ff_dim: 32,
        heads: 2,
        aggregator: AggregatorKind::Transformer,
        projector_hidden: 16,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let model = PathE::new(
        config,
        task,
        kg.num_relations(),
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(9),
    )
    .unwrap();
    (kg, corpus, model, store)
}

/// One forward pass for one `(head, tail)` pair, nothing shared.
fn direct_scores(
    model: &PathE,
    store: &ParamStore<f32>,
    kg: &KnowledgeGraph,
    corpus: &PathCorpus,
    t: Triple,
) -> Vec<f32> {
    let ppe = model.config().ppe;
    let paths = vec![
        eval_paths(corpus, t.head, ppe, SEED),
        eval_paths(corpus, t.tail, ppe, SEED),
    ];
    let mut tape = Tape::new(0);
    let a = model
        .encode_instances(&mut tape, store, &paths, kg.contexts(), false)
        .unwrap();
    let (h, x) = model
        .aggregate(&mut tape, store, a, &[(0, 1)], false)
        .unwrap();
    let out = match model.task() {
        Task::LinkPrediction => model.lp_logits(&mut tape, store, h, &[t.rel], x).unwrap(),
        Task::RelationPrediction => model.rp_logits(&mut tape, store, h, x).unwrap(),
    };
    tape.value(out).data().to_vec()
}

#[test]
fn filtered_link_prediction_matches_exhaustive_oracle() {
    let (kg, corpus, model, store) = setup(Task::LinkPrediction);
    let triples = kg.test();
    assert!(!triples.is_empty());
    let score = |t: Triple| direct_scores(&model, &store, &kg, &corpus, t)[0] as f64;
    let mut oracle = Vec::new();
    for &t in triples {
        let truth = score(t);
        let heads: Vec<f64> = (0..kg.num_entities())
            .filter(|&e| e != t.head && !kg.is_true(Triple::new(e, t.rel, t.tail)))
            .map(|e| score(Triple::new(e, t.rel, t.tail)))
            .collect();
        let tails: Vec<f64> = (0..kg.num_entities())
            .filter(|&e| e != t.tail && !kg.is_true(Triple::new(t.head, t.rel, e)))
            .map(|e| score(Triple::new(t.head, t.rel, e)))
            .collect();
        oracle.push(common::sort_rank(truth, &heads));
        oracle.push(common::sort_rank(truth, &tails));
    }
    let evaluator = Evaluator::new(&model, &store, &kg, &corpus, SEED).unwrap();
    let ranks = evaluator.lp_ranks(triples, Negatives::Full).unwrap();
    assert_eq!(ranks, oracle);
    let params = store.num_elements();
    let expected = EvalReport::from_ranks(
        &oracle,
        Task::LinkPrediction,
        EvalMode::Transductive,
        Negatives::Full,
        params,
    );
    let report = evaluator
        .evaluate(triples, EvalMode::Transductive, Negatives::Full)
        .unwrap();
    assert_eq!(report, expected);
}

#[test]
fn filtered_relation_prediction_matches_exhaustive_oracle() {
    let (kg, corpus, model, store) = setup(Task::RelationPrediction);
    let triples = kg.test();
    let oracle: Vec<f64> = triples
        .iter()
        .map(|&t| {
            let row = direct_scores(&model, &store, &kg, &corpus, t);
            let known = kg.known_relations(t.head, t.tail);
            let others: Vec<f64> = (0..kg.num_relations())
                .filter(|&r| r != t.rel && !known.contains(&r))
                .map(|r| row[r] as f64)
                .collect();
            common::sort_rank(row[t.rel] as f64, &others)
        })
        .collect();
    let evaluator = Evaluator::new(&model, &store, &kg, &corpus, SEED).unwrap();
    assert_eq!(evaluator.rp_ranks(triples).unwrap(), oracle);
}

#[test]
fn rank_of_matches_sort_oracle_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut mrr_fast, mut mrr_sort, mut hits_fast, mut hits_sort) = (0.0, 0.0, 0, 0);
    for _ in 0..100_000 {
        let n = rng.gen_range(0..40);
        // few distinct values so ties are common
        let others: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let truth = rng.gen_range(0..8) as f64;
        let (a, b) = (
            rank_of(truth, others.iter().copied()),
            common::sort_rank(truth, &others),
        );
        assert_eq!(a, b, "truth {truth} others {others:?}");
        mrr_fast += 1.0 / a;
        mrr_sort += 1.0 / b;
        hits_fast += (a <= 10.0) as usize;
        hits_sort += (b <= 10.0) as usize;
    }
    assert_eq!(mrr_fast, mrr_sort);
    assert_eq!(hits_fast, hits_sort);
}

#[test]
fn uniform_relation_scores_give_harmonic_mrr() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 20_000;
    let mut ranks = Vec::with_capacity(trials);
    for _ in 0..trials {
        let scores: Vec<f64> = (0..11).map(|_| rng.gen()).collect();
        ranks.push(rank_of(scores[0], scores[1..].iter().copied()));
    }
    let r = EvalReport::from_ranks(
        &ranks,
        Task::RelationPrediction,
        EvalMode::Transductive,
        Negatives::Full,
        1,
    );
    let expected = (1..=11).map(|k| 1.0 / k as f64).sum::<f64>() / 11.0;
    assert!((expected - 0.2745).abs() < 1e-3);
    assert!((r.mrr - expected).abs() < 0.02, "{} vs {expected}", r.mrr);
}
