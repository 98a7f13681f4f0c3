//! Batch assembly, the optimisation loop and early stopping.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use pathe_tensor::{Adam, AdamConfig, ParamStore, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::eval::{EvalMode, Evaluator, Negatives};
use crate::heads::{lp_loss, rp_loss, LossKind};
use crate::kg::{KnowledgeGraph, RelationalContext, Triple};
use crate::model::{AggregatorKind, ModelConfig, PathE, PositionalKind, Task};
use crate::negatives::sample_negatives;
use crate::paths::{sample_for_entity, Path, PathCorpus};

/// Switches for the component ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Average anchors instead of the transformer aggregator.
    pub no_aggregator: bool,
    /// One path per entity per triple.
    pub single_path: bool,
    /// Slot-index positions instead of distance-to-anchor.
    pub standard_positionals: bool,
}

impl Ablations {
    pub fn apply(&self, mut config: ModelConfig) -> ModelConfig {
        if self.no_aggregator {
            config.aggregator = AggregatorKind::Average;
        }
        if self.single_path {
            config.ppe = 1;
        }
        if self.standard_positionals {
            config.positional = PositionalKind::Standard;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub loss: LossKind,
    pub label_smoothing: f64,
    /// Corruptions per side for each LP positive.
    pub negatives: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub accumulate: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Sampled corruptions per side for LP validation.
    pub valid_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::LinkPrediction,
            loss: LossKind::CrossEntropy,
            label_smoothing: 0.01,
            negatives: 99,
            lr: 1e-3,
            batch_size: 4096,
            accumulate: 8,
            max_epochs: 200,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
            valid_negatives: 99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.patience == 0 || self.batch_size == 0 || self.accumulate == 0 {
            return bad("patience, batch_size and accumulate must be at least 1");
        }
        if self.task == Task::LinkPrediction && (self.negatives == 0 || self.valid_negatives == 0) {
            return bad("link prediction needs at least one negative per side");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 1)");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops once the monitored value (higher is better) has failed to beat the
/// best by more than `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        match self.best {
            Some(b) if value <= b + self.min_delta => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some(value);
                self.bad_epochs = 0;
                StopDecision::Improved
            }
        }
    }
}

/// Entity instances with their sampled paths, the scored pairs and the
/// relation of each pair.
///
/// For link prediction each positive contributes `2n + 1` consecutive pairs:
/// the positive, `n` head corruptions, `n` tail corruptions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub instances: Vec<Vec<Path>>,
    pub pairs: Vec<(usize, usize)>,
    pub relations: Vec<usize>,
    /// `Some(n)` for link prediction.
    pub negatives: Option<usize>,
    /// Negative slots filled by repetition or from the other side.
    pub shortfall: usize,
    /// Positives dropped because neither side had a valid corruption.
    pub skipped: usize,
}

impl Batch {
    fn push_instance<R: Rng>(
        &mut self,
        corpus: &PathCorpus,
        entity: usize,
        ppe: usize,
        rng: &mut R,
    ) -> usize {
        self.instances
            .push(sample_for_entity(corpus, entity, ppe, rng));
        self.instances.len() - 1
    }

    pub fn relation_prediction<R: Rng>(
        triples: &[Triple],
        corpus: &PathCorpus,
        ppe: usize,
        rng: &mut R,
    ) -> Self {
        let mut b = Batch::empty(None);
        for t in triples {
            let h = b.push_instance(corpus, t.head, ppe, rng);
            let x = b.push_instance(corpus, t.tail, ppe, rng);
            b.pairs.push((h, x));
            b.relations.push(t.rel);
        }
        b
    }

    /// Positives share their head/tail instances with their corruptions;
    /// each corrupting entity gets its own path sample.
    pub fn link_prediction<R: Rng>(
        triples: &[Triple],
        kg: &KnowledgeGraph,
        corpus: &PathCorpus,
        ppe: usize,
        n: usize,
        rng: &mut R,
    ) -> Self {
        let mut b = Batch::empty(Some(n));
        for &t in triples {
            let neg = sample_negatives(t, n, kg, rng);
            let Some((heads, tails, filled)) = fill_negatives(neg.heads, neg.tails, n) else {
                b.skipped += 1;
                continue;
            };
            b.shortfall += filled;
            let h = b.push_instance(corpus, t.head, ppe, rng);
            let x = b.push_instance(corpus, t.tail, ppe, rng);
            b.pairs.push((h, x));
            for e in heads {
                let c = b.push_instance(corpus, e, ppe, rng);
                b.pairs.push((c, x));
            }
            for e in tails {
                let c = b.push_instance(corpus, e, ppe, rng);
                b.pairs.push((h, c));
            }
            b.relations.extend(std::iter::repeat_n(t.rel, 2 * n + 1));
        }
        b
    }

    fn empty(negatives: Option<usize>) -> Self {
        Batch {
            instances: Vec::new(),
            pairs: Vec::new(),
            relations: Vec::new(),
            negatives,
            shortfall: 0,
            skipped: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pads both sides to exactly `n` with valid corruptions: first by cycling a
/// side's own negatives, otherwise by borrowing the other side's. `None` if
/// neither side has any.
fn fill_negatives(
    heads: Vec<usize>,
    tails: Vec<usize>,
    n: usize,
) -> Option<(Vec<usize>, Vec<usize>, usize)> {
    if heads.is_empty() && tails.is_empty() {
        return None;
    }
    let filled = 2 * n - heads.len() - tails.len();
    let pad = |own: &[usize], other: &[usize]| -> Vec<usize> {
        let src = if own.is_empty() { other } else { own };
        (0..n).map(|i| src[i % src.len()]).collect()
    };
    Some((pad(&heads, &tails), pad(&tails, &heads), filled))
}

/// Mean loss of `batch` recorded on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Scalar>(
    model: &PathE,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    contexts: &[RelationalContext],
    batch: &Batch,
    loss: LossKind,
    label_smoothing: f64,
    train: bool,
) -> Result<Var> {
    let anchors = model.encode_instances(tape, store, &batch.instances, contexts, train)?;
    let (e_h, e_t) = model.aggregate(tape, store, anchors, &batch.pairs, train)?;
    match batch.negatives {
        None => {
            let logits = model.rp_logits(tape, store, e_h, e_t)?;
            rp_loss(tape, logits, &batch.relations, label_smoothing)
        }
        Some(n) => {
            let logits = model.lp_logits(tape, store, e_h, &batch.relations, e_t)?;
            lp_loss(tape, logits, n, loss, label_smoothing)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the valid split is empty.
    pub valid_mrr: f64,
    pub valid_hits10: f64,
    pub elapsed_s: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,valid_mrr,valid_hits10,elapsed_s";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{:.8},{:.6},{:.6},{:.3}",
            e.epoch, e.train_loss, e.valid_mrr, e.valid_hits10, e.elapsed_s
        );
    }
    s
}

pub struct TrainOutcome {
    pub model: PathE,
    /// Parameters from the best epoch.
    pub store: ParamStore<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub negative_shortfall: usize,
}

/// Seed used for validation path samples and sampled negatives.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x5EED_E7A1)
}

pub fn train(
    kg: &KnowledgeGraph,
    corpus: &PathCorpus,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let model = PathE::new(
        model_config.clone(),
        cfg.task,
        kg.num_relations(),
        &mut store,
        &mut rng,
    )?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &store,
    );
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let ppe = model_config.ppe;
    let mut order: Vec<usize> = (0..kg.train().len()).collect();
    let mut best_store = store.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut shortfall = 0;
    let mut stopped_early = false;
    let started = Instant::now();
    if kg.valid().is_empty() {
        warn!("valid split is empty; early stopping monitors the training loss");
    }
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut pending) = (0.0f64, 0usize, 0usize);
        let scale = 1.0 / cfg.accumulate as f32;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let triples: Vec<Triple> = idx.iter().map(|&i| kg.train()[i]).collect();
            let batch = match cfg.task {
                Task::RelationPrediction => {
                    Batch::relation_prediction(&triples, corpus, ppe, &mut rng)
                }
                Task::LinkPrediction => {
                    Batch::link_prediction(&triples, kg, corpus, ppe, cfg.negatives, &mut rng)
                }
            };
            shortfall += batch.shortfall;
            if batch.is_empty() {
                continue;
            }
            let mut tape = Tape::new(rng.gen());
            let loss = batch_loss(
                &model,
                &mut tape,
                &store,
                kg.contexts(),
                &batch,
                cfg.loss,
                cfg.label_smoothing,
                true,
            )?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "loss is {value} at epoch {epoch}, batch {b}"
                )));
            }
            let scaled = tape.scale(loss, scale);
            tape.backward(scaled, &mut store)?;
            loss_sum += value as f64;
            batches += 1;
            pending += 1;
            if pending == cfg.accumulate {
                adam.step(&mut store)?;
                store.zero_grad();
                pending = 0;
            }
        }
        if pending > 0 {
            // Rescale so a short final group is averaged like a full one.
            store.scale_grads(cfg.accumulate as f32 / pending as f32);
            adam.step(&mut store)?;
            store.zero_grad();
        }
        let train_loss = if batches == 0 {
            0.0
        } else {
            loss_sum / batches as f64
        };
        let (valid_mrr, valid_hits10, monitored) = if kg.valid().is_empty() {
            (f64::NAN, f64::NAN, -train_loss)
        } else {
            let evaluator = Evaluator::new(&model, &store, kg, corpus, eval_seed(cfg.seed))?;
            let r = evaluator.evaluate(
                kg.valid(),
                EvalMode::Transductive,
                Negatives::Sampled(cfg.valid_negatives),
            )?;
            (r.mrr, r.hits_at_10, r.mrr)
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            valid_mrr,
            valid_hits10,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        info!("epoch {epoch}: loss {train_loss:.5} valid mrr {valid_mrr:.4} hits@10 {valid_hits10:.4}");
        on_epoch(&entry);
        log.push(entry);
        match stopper.observe(monitored) {
            StopDecision::Improved => {
                best_store = store.clone();
                best_epoch = epoch;
            }
            StopDecision::NoImprovement => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    if shortfall > 0 {
        warn!("{shortfall} negative slots were filled by repetition");
    }
    Ok(TrainOutcome {
        model,
        store: best_store,
        log,
        best_epoch,
        stopped_early,
        negative_shortfall: shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{mine_all, MiningParams};

    #[test]
    fn stopping_rule_keeps_plateau_start() {
        let mut s = EarlyStopping::new(10, 0.0);
        let seq = [0.2, 0.3].into_iter().chain(std::iter::repeat_n(0.3, 10));
        let decisions: Vec<_> = seq.map(|v| s.observe(v)).collect();
        assert_eq!(decisions[1], StopDecision::Improved);
        assert!(decisions[2..11]
            .iter()
            .all(|&d| d == StopDecision::NoImprovement));
        assert_eq!(decisions[11], StopDecision::Stop);
        assert_eq!(s.best(), Some(0.3));
    }

    #[test]
    fn single_path_ablation_sets_ppe() {
        let cfg = Ablations {
            single_path: true,
            ..Default::default()
        }
        .apply(ModelConfig::default());
        assert_eq!(cfg.ppe, 1);
        assert_eq!(cfg.aggregator, AggregatorKind::Transformer);
    }

    #[test]
    fn fill_prefers_own_side() {
        assert_eq!(
            fill_negatives(vec![1], vec![2, 3], 2),
            Some((vec![1, 1], vec![2, 3], 1))
        );
        assert_eq!(
            fill_negatives(vec![], vec![4], 2),
            Some((vec![4, 4], vec![4, 4], 3))
        );
        assert_eq!(fill_negatives(vec![], vec![], 2), None);
    }

    fn toy() -> (KnowledgeGraph, PathCorpus) {
        let t = Triple::new;
        let train = vec![
            t(0, 0, 1),
            t(1, 1, 2),
            t(2, 0, 3),
            t(3, 2, 4),
            t(4, 1, 0),
            t(0, 2, 2),
        ];
        let kg = KnowledgeGraph::from_triples(5, 3, train, vec![], vec![]).unwrap();
        let corpus = mine_all(
            &kg,
            MiningParams {
                num_paths: 3,
                max_len: 3,
                seed: 1,
            },
        );
        (kg, corpus)
    }

    #[test]
    fn accumulation_matches_one_large_batch() {
        let (kg, corpus) = toy();
        let cfg = ModelConfig {
            dim: 8,
            ppe: 2,
            max_len: 3,
            heads: 2,
            ff_dim: 8,
            dropout: 0.0,
            projector_hidden: 8,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let model = PathE::new(
            cfg,
            Task::RelationPrediction,
            3,
            &mut store,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = Batch::relation_prediction(kg.train(), &corpus, 2, &mut rng);
        let half = |range: std::ops::Range<usize>| Batch {
            instances: full.instances[2 * range.start..2 * range.end].to_vec(),
            pairs: range
                .clone()
                .map(|i| (2 * (i - range.start), 2 * (i - range.start) + 1))
                .collect(),
            relations: full.relations[range].to_vec(),
            ..Batch::empty(None)
        };
        let grads = |batches: &[Batch], store: &mut ParamStore<f64>| {
            store.zero_grad();
            for b in batches {
                let mut tape = Tape::new(0);
                let l = batch_loss(
                    &model,
                    &mut tape,
                    store,
                    kg.contexts(),
                    b,
                    LossKind::CrossEntropy,
                    0.0,
                    false,
                )
                .unwrap();
                let l = tape.scale(l, 1.0 / batches.len() as f64);
                tape.backward(l, store).unwrap();
            }
            store
                .ids()
                .flat_map(|id| store.grad(id).data().to_vec())
                .collect::<Vec<_>>()
        };
        let one = grads(std::slice::from_ref(&full), &mut store);
        let two = grads(&[half(0..3), half(3..6)], &mut store);
        let worst = one
            .iter()
            .zip(&two)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn link_batches_share_positive_instances() {
        let (kg, corpus) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Batch::link_prediction(&kg.train()[..2], &kg, &corpus, 1, 2, &mut rng);
        assert_eq!(b.pairs.len(), 2 * 5);
        let (h, t) = b.pairs[0];
        assert!(b.pairs[1..3].iter().all(|p| p.1 == t && p.0 != h));
        assert!(b.pairs[3..5].iter().all(|p| p.0 == h && p.1 != t));
        for (i, &(ph, pt)) in b.pairs.iter().enumerate() {
            if i % 5 == 0 {
                continue;
            }
            let tr = Triple::new(
                b.instances[ph][0].anchor(),
                b.relations[i],
                b.instances[pt][0].anchor(),
            );
            assert!(!kg.is_true(tr), "{tr:?}");
        }
    }
}
