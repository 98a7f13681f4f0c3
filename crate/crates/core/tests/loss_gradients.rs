mod common;

use pathe_core::heads::LossKind;
use pathe_core::model::{AggregatorKind, CountTransform, PathE, PositionalKind, Task};
use pathe_core::paths::{mine_all, MiningParams};
use pathe_core::train::{batch_loss, Batch};
use pathe_tensor::{grad_check, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check(task: Task, aggregator: AggregatorKind, loss: LossKind, positional: PositionalKind) {
    let kg = common::toy_graph();
    let corpus = mine_all(
        &kg,
        MiningParams {
            num_paths: 4,
            max_len: 3,
            seed: 11,
        },
    );
    let mut config = common::tiny_config(aggregator);
    config.positional = positional;
    config.count_transform = CountTransform::Log1p;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let model = PathE::new(
        config.clone(),
        task,
        kg.num_relations(),
        &mut store,
        &mut rng,
    )
    .unwrap();
    let batch = match task {
        Task::RelationPrediction => {
            Batch::relation_prediction(kg.train(), &corpus, config.ppe, &mut rng)
        }
        Task::LinkPrediction => {
            Batch::link_prediction(&kg.train()[..3], &kg, &corpus, config.ppe, 2, &mut rng)
        }
    };
    let report = grad_check(&mut store, &[], EPS, |tape, store| {
        Ok(batch_loss(&model, tape, store, kg.contexts(), &batch, loss, 0.1, true).unwrap())
    })
    .unwrap();
    assert!(report.checked > 300);
    assert!(
        report.max_rel_error < TOL,
        "{task:?} {aggregator:?} {loss:?}: {report:?}"
    );
}

#[test]
fn rp_loss_transformer_aggregator() {
    check(
        Task::RelationPrediction,
        AggregatorKind::Transformer,
        LossKind::CrossEntropy,
        PositionalKind::EntityFocused,
    );
}

#[test]
fn rp_loss_average_aggregator() {
    check(
        Task::RelationPrediction,
        AggregatorKind::Average,
        LossKind::CrossEntropy,
        PositionalKind::Standard,
    );
}

#[test]
fn lp_cross_entropy_loss() {
    check(
        Task::LinkPrediction,
        AggregatorKind::Transformer,
        LossKind::CrossEntropy,
        PositionalKind::EntityFocused,
    );
}

#[test]
fn lp_binary_cross_entropy_loss() {
    check(
        Task::LinkPrediction,
        AggregatorKind::Transformer,
        LossKind::BinaryCrossEntropy,
        PositionalKind::EntityFocused,
    );
}
