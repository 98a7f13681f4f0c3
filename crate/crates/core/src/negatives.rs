//! Filtered head/tail corruption.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegativeSet {
    /// Replacement heads `h'` with `(h', r, t)` absent from every split.
    pub heads: Vec<usize>,
    /// Replacement tails `t'` with `(h, r, t')` absent from every split.
    pub tails: Vec<usize>,
    /// How many of the requested `n` per side could not be found.
    pub head_shortfall: usize,
    pub tail_shortfall: usize,
}

/// Up to `n` distinct entities uniformly drawn from `0..num_entities`
/// excluding `known` (which must contain the original entity).
fn sample_side<R: Rng>(
    num_entities: usize,
    known: &[usize],
    n: usize,
    rng: &mut R,
) -> (Vec<usize>, usize) {
    let known: HashSet<usize> = known.iter().copied().collect();
    let valid = num_entities - known.len();
    if valid <= 2 * n {
        let pool: Vec<usize> = (0..num_entities).filter(|e| !known.contains(e)).collect();
        let take = n.min(pool.len());
        let picked = index::sample(rng, pool.len(), take)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        return (picked, n - take);
    }
    let mut chosen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = rng.gen_range(0..num_entities);
        if !known.contains(&e) && chosen.insert(e) {
            out.push(e);
        }
    }
    (out, 0)
}

pub fn sample_negatives<R: Rng>(
    triple: Triple,
    n: usize,
    kg: &KnowledgeGraph,
    rng: &mut R,
) -> NegativeSet {
    let e = kg.num_entities();
    let (heads, head_shortfall) =
        with_original(kg.known_heads(triple.rel, triple.tail), triple.head, |k| {
            sample_side(e, k, n, rng)
        });
    let (tails, tail_shortfall) =
        with_original(kg.known_tails(triple.head, triple.rel), triple.tail, |k| {
            sample_side(e, k, n, rng)
        });
    NegativeSet {
        heads,
        tails,
        head_shortfall,
        tail_shortfall,
    }
}

/// Calls `f` with `known` plus `original`, so the original is excluded even
/// for triples that are not in the graph.
fn with_original<T>(known: &[usize], original: usize, f: impl FnOnce(&[usize]) -> T) -> T {
    if known.contains(&original) {
        f(known)
    } else {
        let mut k = known.to_vec();
        k.push(original);
        f(&k)
    }
}
