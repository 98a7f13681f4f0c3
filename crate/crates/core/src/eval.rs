//! Filtered ranking evaluation for both heads.

use std::fmt;

use pathe_tensor::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::kg::{KnowledgeGraph, Triple};
use crate::model::{PathE, Task};
use crate::negatives::sample_negatives;
use crate::paths::{entity_seed, eval_paths, PathCorpus};

/// Entities encoded per tape when precomputing anchors.
const ENCODE_CHUNK: usize = 256;
/// Candidate triples scored per tape.
const SCORE_CHUNK: usize = 512;

/// Realistic rank: `1 + #{s > true} + #{s == true} / 2`.
pub fn rank_of(true_score: f64, others: impl IntoIterator<Item = f64>) -> f64 {
    let (mut greater, mut equal) = (0usize, 0usize);
    for s in others {
        if s > true_score {
            greater += 1;
        } else if s == true_score {
            equal += 1;
        }
    }
    1.0 + greater as f64 + equal as f64 / 2.0
}

pub fn effi(mrr: f64, param_millions: f64) -> f64 {
    if mrr == 0.0 {
        0.0
    } else {
        mrr / param_millions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Negatives {
    /// Every filtered entity (LP) or relation (RP).
    Full,
    /// `k` filtered corruptions sampled per side.
    Sampled(usize),
}

impl fmt::Display for Negatives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Negatives::Full => write!(f, "full"),
            Negatives::Sampled(k) => write!(f, "sampled({k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub mode: EvalMode,
    pub negatives: String,
    pub n_evaluated: usize,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_5: f64,
    pub hits_at_10: f64,
    pub parameter_count: usize,
    pub parameter_count_millions: f64,
    pub effi: f64,
}

impl EvalReport {
    pub fn from_ranks(
        ranks: &[f64],
        task: Task,
        mode: EvalMode,
        negatives: Negatives,
        params: usize,
    ) -> Self {
        let n = ranks.len();
        let mean = |f: &dyn Fn(f64) -> f64| {
            if n == 0 {
                0.0
            } else {
                ranks.iter().map(|&r| f(r)).sum::<f64>() / n as f64
            }
        };
        let hits = |k: f64| mean(&|r| if r <= k { 1.0 } else { 0.0 });
        let mrr = mean(&|r| 1.0 / r);
        let millions = params as f64 / 1e6;
        EvalReport {
            task: task.as_str().to_string(),
            mode,
            negatives: negatives.to_string(),
            n_evaluated: n,
            mrr,
            hits_at_1: hits(1.0),
            hits_at_3: hits(3.0),
            hits_at_5: hits(5.0),
            hits_at_10: hits(10.0),
            parameter_count: params,
            parameter_count_millions: millions,
            effi: effi(mrr, millions),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let rows = [
            ("task", self.task.clone()),
            ("mode", format!("{:?}", self.mode).to_lowercase()),
            ("negatives", self.negatives.clone()),
            ("evaluated", self.n_evaluated.to_string()),
            ("MRR", format!("{:.4}", self.mrr)),
            ("Hits@1", format!("{:.4}", self.hits_at_1)),
            ("Hits@3", format!("{:.4}", self.hits_at_3)),
            ("Hits@5", format!("{:.4}", self.hits_at_5)),
            ("Hits@10", format!("{:.4}", self.hits_at_10)),
            ("#P(M)", format!("{:.4}", self.parameter_count_millions)),
            ("Effi", format!("{:.4}", self.effi)),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<10} {v:>12}\n"))
            .collect()
    }
}

/// Scores triples with a trained model. Anchor outputs for every entity are
/// encoded once from a fixed per-entity path sample.
pub struct Evaluator<'a> {
    model: &'a PathE,
    store: &'a ParamStore<f32>,
    kg: &'a KnowledgeGraph,
    seed: u64,
    anchors: Vec<f32>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a PathE,
        store: &'a ParamStore<f32>,
        kg: &'a KnowledgeGraph,
        corpus: &PathCorpus,
        seed: u64,
    ) -> Result<Self> {
        let ppe = model.config().ppe;
        let chunks: Vec<Vec<usize>> = (0..kg.num_entities())
            .collect::<Vec<_>>()
            .chunks(ENCODE_CHUNK)
            .map(<[usize]>::to_vec)
            .collect();
        let encoded = chunks
            .par_iter()
            .map(|chunk| {
                let paths: Vec<_> = chunk
                    .iter()
                    .map(|&e| eval_paths(corpus, e, ppe, seed))
                    .collect();
                let mut tape = Tape::new(0);
                let a = model.encode_instances(&mut tape, store, &paths, kg.contexts(), false)?;
                Ok(tape.value(a).data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator {
            model,
            store,
            kg,
            seed,
            anchors: encoded.concat(),
        })
    }

    fn block(&self) -> usize {
        self.model.config().ppe * self.model.config().dim
    }

    /// Anchor outputs of one entity, `ppe × dim` values.
    pub fn entity_anchors(&self, e: usize) -> &[f32] {
        &self.anchors[e * self.block()..(e + 1) * self.block()]
    }

    /// Runs the aggregator on `(head, tail)` entity pairs, gathering only the
    /// anchors they need. Returns the tape and `(e_h, e_t)`.
    fn embed_pairs(
        &self,
        pairs: &[(usize, usize)],
    ) -> Result<(Tape<f32>, pathe_tensor::Var, pathe_tensor::Var)> {
        let mut local = std::collections::HashMap::new();
        let mut order = Vec::new();
        let mut idx = |e: usize| {
            *local.entry(e).or_insert_with(|| {
                order.push(e);
                order.len() - 1
            })
        };
        let local_pairs: Vec<(usize, usize)> =
            pairs.iter().map(|&(h, t)| (idx(h), idx(t))).collect();
        let c = self.model.config();
        let data: Vec<f32> = order
            .iter()
            .flat_map(|&e| self.entity_anchors(e).iter().copied())
            .collect();
        let mut tape = Tape::new(0);
        let anchors = tape.constant(Tensor::new(vec![order.len(), c.ppe, c.dim], data)?);
        let (e_h, e_t) =
            self.model
                .aggregate(&mut tape, self.store, anchors, &local_pairs, false)?;
        Ok((tape, e_h, e_t))
    }

    /// Link-prediction logits, one per triple.
    pub fn score_lp(&self, triples: &[Triple]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(triples.len());
        for chunk in triples.chunks(SCORE_CHUNK) {
            let pairs: Vec<_> = chunk.iter().map(|t| (t.head, t.tail)).collect();
            let rels: Vec<_> = chunk.iter().map(|t| t.rel).collect();
            let (mut tape, e_h, e_t) = self.embed_pairs(&pairs)?;
            let logits = self
                .model
                .lp_logits(&mut tape, self.store, e_h, &rels, e_t)?;
            out.extend_from_slice(tape.value(logits).data());
        }
        Ok(out)
    }

    /// Relation scores, `|R|` per pair.
    pub fn score_rp(&self, pairs: &[(usize, usize)]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(pairs.len() * self.model.num_relations());
        for chunk in pairs.chunks(SCORE_CHUNK) {
            let (mut tape, e_h, e_t) = self.embed_pairs(chunk)?;
            let logits = self.model.rp_logits(&mut tape, self.store, e_h, e_t)?;
            out.extend_from_slice(tape.value(logits).data());
        }
        Ok(out)
    }

    /// Head-side and tail-side rank per triple, in that order.
    pub fn lp_ranks(&self, triples: &[Triple], negatives: Negatives) -> Result<Vec<f64>> {
        let per_triple = triples
            .par_iter()
            .enumerate()
            .map(|(i, &t)| self.lp_triple_ranks(i, t, negatives))
            .collect::<Result<Vec<_>>>()?;
        Ok(per_triple.into_iter().flat_map(|(h, t)| [h, t]).collect())
    }

    fn lp_triple_ranks(&self, index: usize, t: Triple, negatives: Negatives) -> Result<(f64, f64)> {
        let (heads, tails) = match negatives {
            Negatives::Full => {
                let all = 0..self.kg.num_entities();
                let heads = all
                    .clone()
                    .filter(|&e| e != t.head && !self.kg.is_true(Triple::new(e, t.rel, t.tail)));
                let tails =
                    all.filter(|&e| e != t.tail && !self.kg.is_true(Triple::new(t.head, t.rel, e)));
                (heads.collect::<Vec<_>>(), tails.collect::<Vec<_>>())
            }
            Negatives::Sampled(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(entity_seed(self.seed, index));
                let neg = sample_negatives(t, k, self.kg, &mut rng);
                (neg.heads, neg.tails)
            }
        };
        let mut triples = vec![t];
        triples.extend(heads.iter().map(|&h| Triple::new(h, t.rel, t.tail)));
        triples.extend(tails.iter().map(|&x| Triple::new(t.head, t.rel, x)));
        let scores = self.score_lp(&triples)?;
        let truth = scores[0] as f64;
        let (h_scores, t_scores) = scores[1..].split_at(heads.len());
        let head_rank = rank_of(truth, h_scores.iter().map(|&s| s as f64));
        let tail_rank = rank_of(truth, t_scores.iter().map(|&s| s as f64));
        Ok((head_rank, tail_rank))
    }

    /// Rank of the true relation among relations not known to link the pair.
    pub fn rp_ranks(&self, triples: &[Triple]) -> Result<Vec<f64>> {
        let r = self.model.num_relations();
        triples
            .par_chunks(SCORE_CHUNK)
            .map(|chunk| {
                let pairs: Vec<_> = chunk.iter().map(|t| (t.head, t.tail)).collect();
                let scores = self.score_rp(&pairs)?;
                Ok(chunk
                    .iter()
                    .zip(scores.chunks(r))
                    .map(|(t, row)| {
                        let known = self.kg.known_relations(t.head, t.tail);
                        let others = (0..r)
                            .filter(|&c| c != t.rel && !known.contains(&c))
                            .map(|c| row[c] as f64);
                        rank_of(row[t.rel] as f64, others)
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.concat())
    }

    pub fn evaluate(
        &self,
        triples: &[Triple],
        mode: EvalMode,
        negatives: Negatives,
    ) -> Result<EvalReport> {
        let task = self.model.task();
        let ranks = match task {
            Task::RelationPrediction => self.rp_ranks(triples)?,
            Task::LinkPrediction => self.lp_ranks(triples, negatives)?,
        };
        let negatives = if task == Task::RelationPrediction {
            Negatives::Full
        } else {
            negatives
        };
        Ok(EvalReport::from_ranks(
            &ranks,
            task,
            mode,
            negatives,
            self.store.num_elements(),
        ))
    }
}
