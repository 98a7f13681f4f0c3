//! Generated graphs for tests and benchmarks.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{KnowledgeGraph, Triple};

/// Splits `triples` after shuffling into train/valid/test by fractions.
pub fn split(
    mut triples: Vec<Triple>,
    valid: f64,
    test: f64,
    rng: &mut impl Rng,
) -> (Vec<Triple>, Vec<Triple>, Vec<Triple>) {
    triples.shuffle(rng);
    let n = triples.len();
    let n_test = (n as f64 * test).round() as usize;
    let n_valid = (n as f64 * valid).round() as usize;
    let test_part = triples.split_off(n - n_test);
    let valid_part = triples.split_off(n - n_test - n_valid);
    (triples, valid_part, test_part)
}

/// Entities fall into `classes` classes of `per_class`. A head of class `c`
/// links to tails of class `c` or `c + 1 (mod classes)` through relation
/// `2c + [tail class != c]`, so the relation is a function of the two
/// endpoint classes, and each class has its own in/out relation signature.
/// Split 90/5/5.
pub fn class_graph(
    classes: usize,
    per_class: usize,
    out_degree: (usize, usize),
    seed: u64,
) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let head = c * per_class + i;
            let degree = rng.gen_range(out_degree.0..=out_degree.1);
            let mut added = 0;
            while added < degree {
                let cross = rng.gen_bool(0.5);
                let tc = if cross { (c + 1) % classes } else { c };
                let tail = tc * per_class + rng.gen_range(0..per_class);
                let t = Triple::new(head, 2 * c + cross as usize, tail);
                if tail != head && seen.insert(t) {
                    triples.push(t);
                    added += 1;
                }
            }
        }
    }
    let (train, valid, test) = split(triples, 0.05, 0.05, &mut rng);
    KnowledgeGraph::from_triples(classes * per_class, 2 * classes, train, valid, test)
        .expect("ids in range")
}

/// Uniform random multigraph without self-loops or duplicate triples; every
/// triple in train.
pub fn random_graph(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = num_entities * (num_entities - 1) * num_relations;
    let target = num_triples.min(max);
    let mut seen = HashSet::new();
    while seen.len() < target {
        let h = rng.gen_range(0..num_entities);
        let t = rng.gen_range(0..num_entities);
        if h != t {
            seen.insert(Triple::new(h, rng.gen_range(0..num_relations), t));
        }
    }
    let mut train: Vec<Triple> = seen.into_iter().collect();
    train.sort_unstable();
    KnowledgeGraph::from_triples(num_entities, num_relations, train, vec![], vec![])
        .expect("ids in range")
}

/// A directed ring plus `extra` random edges: every entity has at least one
/// incoming and one outgoing edge.
pub fn ring_graph(
    num_entities: usize,
    num_relations: usize,
    extra: usize,
    seed: u64,
) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Triple> = (0..num_entities)
        .map(|e| Triple::new(e, e % num_relations, (e + 1) % num_entities))
        .collect();
    let target = seen.len() + extra;
    while seen.len() < target {
        let h = rng.gen_range(0..num_entities);
        let t = rng.gen_range(0..num_entities);
        if h != t {
            seen.insert(Triple::new(h, rng.gen_range(0..num_relations), t));
        }
    }
    let mut train: Vec<Triple> = seen.into_iter().collect();
    train.sort_unstable();
    KnowledgeGraph::from_triples(num_entities, num_relations, train, vec![], vec![])
        .expect("ids in range")
}
