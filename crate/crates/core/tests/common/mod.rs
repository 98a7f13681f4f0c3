#![allow(dead_code)]

use std::collections::HashSet;

use pathe_core::kg::{KnowledgeGraph, Triple};
use pathe_core::model::{AggregatorKind, ModelConfig};
use pathe_core::paths::{Direction, Path};

/// 5 entities, 3 relations; every entity has at least one edge.
pub fn toy_graph() -> KnowledgeGraph {
    let t = |h, r, x| Triple::new(h, r, x);
    let train = vec![
        t(0, 0, 1),
        t(1, 1, 2),
        t(2, 2, 3),
        t(3, 0, 4),
        t(4, 1, 0),
        t(0, 2, 2),
        t(1, 0, 3),
    ];
    let test = vec![t(2, 1, 4), t(3, 2, 1)];
    KnowledgeGraph::from_triples(5, 3, train, vec![], test).unwrap()
}

pub fn tiny_config(aggregator: AggregatorKind) -> ModelConfig {
    ModelConfig {
        dim: 4,
        ppe: 2,
        max_len: 3,
        layers: 1,
        heads: 2,
        ff_dim: 8,
        dropout: 0.1,
        aggregator,
        aggregator_layers: 1,
        projector_hidden: 5,
        ..ModelConfig::default()
    }
}

/// Every walk the miner can produce from `start`: self-avoiding, stopped at
/// `max_len` relations or at a node with no unvisited neighbour.
pub fn enumerate_walks(
    kg: &KnowledgeGraph,
    start: usize,
    dir: Direction,
    max_len: usize,
) -> HashSet<Path> {
    fn dfs(
        kg: &KnowledgeGraph,
        dir: Direction,
        max_len: usize,
        ents: &mut Vec<usize>,
        rels: &mut Vec<usize>,
        out: &mut HashSet<Path>,
    ) {
        let cur = *ents.last().unwrap();
        let edges = match dir {
            Direction::Outgoing => kg.out_edges(cur),
            Direction::Incoming => kg.in_edges(cur),
        };
        let next: Vec<_> = edges
            .iter()
            .filter(|(_, nb)| !ents.contains(nb))
            .copied()
            .collect();
        if rels.len() == max_len || next.is_empty() {
            if !rels.is_empty() {
                let (mut e, mut r) = (ents.clone(), rels.clone());
                if dir == Direction::Incoming {
                    e.reverse();
                    r.reverse();
                }
                out.insert(Path {
                    direction: dir,
                    entities: e,
                    relations: r,
                });
            }
            return;
        }
        for (r, nb) in next {
            ents.push(nb);
            rels.push(r);
            dfs(kg, dir, max_len, ents, rels, out);
            ents.pop();
            rels.pop();
        }
    }
    let mut out = HashSet::new();
    dfs(
        kg,
        dir,
        max_len,
        &mut vec![start],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Realistic rank by sorting: position of the first equal score plus half the ties.
pub fn sort_rank(truth: f64, others: &[f64]) -> f64 {
    let mut all = others.to_vec();
    all.push(truth);
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = all.iter().position(|&s| s == truth).unwrap();
    let last = all.iter().rposition(|&s| s == truth).unwrap();
    1.0 + first as f64 + (last - first) as f64 / 2.0
}
