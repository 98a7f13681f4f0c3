//! Triple storage, vocabularies, adjacency and relational contexts.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Triple { head, rel, tail }
    }
}

/// Dense string <-> id mapping in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose names are the decimal ids `0..n`.
    pub fn numbered(n: usize) -> Self {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern(&i.to_string());
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Sparse in/out relation counts of one entity, sorted by relation id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct RelationalContext {
    pub in_counts: Vec<(usize, u32)>,
    pub out_counts: Vec<(usize, u32)>,
}

impl RelationalContext {
    pub fn dense_in(&self, num_relations: usize) -> Vec<u32> {
        densify(&self.in_counts, num_relations)
    }

    pub fn dense_out(&self, num_relations: usize) -> Vec<u32> {
        densify(&self.out_counts, num_relations)
    }

    pub fn in_degree(&self) -> u32 {
        self.in_counts.iter().map(|&(_, c)| c).sum()
    }

    pub fn out_degree(&self) -> u32 {
        self.out_counts.iter().map(|&(_, c)| c).sum()
    }
}

fn densify(sparse: &[(usize, u32)], n: usize) -> Vec<u32> {
    let mut v = vec![0; n];
    for &(r, c) in sparse {
        v[r] = c;
    }
    v
}

fn sparse_counts(rels: impl Iterator<Item = usize>) -> Vec<(usize, u32)> {
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for r in rels {
        *counts.entry(r).or_default() += 1;
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Immutable after construction. Adjacency and contexts come from the
/// train split only; `true_set` covers every split.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    out_adj: Vec<Vec<(usize, usize)>>,
    in_adj: Vec<Vec<(usize, usize)>>,
    contexts: Vec<RelationalContext>,
    true_set: HashSet<Triple>,
    tails_of: HashMap<(usize, usize), Vec<usize>>,
    heads_of: HashMap<(usize, usize), Vec<usize>>,
    rels_of: HashMap<(usize, usize), Vec<usize>>,
}

type NamedTriple = (String, String, String);

fn read_named(path: &Path) -> Result<Vec<NamedTriple>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CoreError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

impl KnowledgeGraph {
    /// Loads three TSV splits. Ids follow first appearance over train, valid, test.
    pub fn load_tsv(train: &Path, valid: &Path, test: &Path) -> Result<Self> {
        let splits = [read_named(train)?, read_named(valid)?, read_named(test)?];
        Self::from_named(&splits, Vocab::new(), true)
    }

    /// Loads splits against a fixed relation vocabulary; an unknown relation
    /// is an error. Used for inference graphs that must share relation ids
    /// with the training graph.
    pub fn load_tsv_with_relations(
        train: &Path,
        valid: &Path,
        test: &Path,
        relations: &Vocab,
    ) -> Result<Self> {
        let splits = [read_named(train)?, read_named(valid)?, read_named(test)?];
        Self::from_named(&splits, relations.clone(), false)
    }

    fn from_named(
        splits: &[Vec<NamedTriple>; 3],
        mut relations: Vocab,
        grow: bool,
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut ids: [Vec<Triple>; 3] = Default::default();
        for (named, out) in splits.iter().zip(ids.iter_mut()) {
            for (h, r, t) in named {
                let head = entities.intern(h);
                let rel = match relations.id(r) {
                    Some(id) => id,
                    None if grow => relations.intern(r),
                    None => {
                        return Err(CoreError::Data(format!(
                            "relation `{r}` is not in the training vocabulary"
                        )))
                    }
                };
                let tail = entities.intern(t);
                out.push(Triple { head, rel, tail });
            }
        }
        let [train, valid, test] = ids;
        Self::build(entities, relations, train, valid, test)
    }

    /// Builds a graph directly from integer triples with numbered vocabularies.
    pub fn from_triples(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= num_entities || t.tail >= num_entities || t.rel >= num_relations {
                return Err(CoreError::Data(format!(
                    "triple {t:?} out of range for {num_entities} entities, {num_relations} relations"
                )));
            }
        }
        Self::build(
            Vocab::numbered(num_entities),
            Vocab::numbered(num_relations),
            train,
            valid,
            test,
        )
    }

    fn build(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(CoreError::Data("train split is empty".into()));
        }
        let n = entities.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for t in &train {
            out_adj[t.head].push((t.rel, t.tail));
            in_adj[t.tail].push((t.rel, t.head));
        }
        let contexts = (0..n)
            .map(|e| RelationalContext {
                in_counts: sparse_counts(in_adj[e].iter().map(|&(r, _)| r)),
                out_counts: sparse_counts(out_adj[e].iter().map(|&(r, _)| r)),
            })
            .collect();
        let mut true_set = HashSet::new();
        let mut tails_of: HashMap<_, Vec<usize>> = HashMap::new();
        let mut heads_of: HashMap<_, Vec<usize>> = HashMap::new();
        let mut rels_of: HashMap<_, Vec<usize>> = HashMap::new();
        for &t in train.iter().chain(&valid).chain(&test) {
            if true_set.insert(t) {
                tails_of.entry((t.head, t.rel)).or_default().push(t.tail);
                heads_of.entry((t.rel, t.tail)).or_default().push(t.head);
                rels_of.entry((t.head, t.tail)).or_default().push(t.rel);
            }
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            out_adj,
            in_adj,
            contexts,
            true_set,
            tails_of,
            heads_of,
            rels_of,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// Outgoing train edges of `e` as `(rel, tail)`.
    pub fn out_edges(&self, e: usize) -> &[(usize, usize)] {
        &self.out_adj[e]
    }

    /// Incoming train edges of `e` as `(rel, head)`.
    pub fn in_edges(&self, e: usize) -> &[(usize, usize)] {
        &self.in_adj[e]
    }

    pub fn relational_context(&self, e: usize) -> &RelationalContext {
        &self.contexts[e]
    }

    pub fn contexts(&self) -> &[RelationalContext] {
        &self.contexts
    }

    /// Membership over all loaded splits.
    pub fn is_true(&self, t: Triple) -> bool {
        self.true_set.contains(&t)
    }

    /// Known tails for `(head, rel)` over all splits.
    pub fn known_tails(&self, head: usize, rel: usize) -> &[usize] {
        self.tails_of.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    /// Known heads for `(rel, tail)` over all splits.
    pub fn known_heads(&self, rel: usize, tail: usize) -> &[usize] {
        self.heads_of.get(&(rel, tail)).map_or(&[], Vec::as_slice)
    }

    /// Known relations linking `head` to `tail` over all splits.
    pub fn known_relations(&self, head: usize, tail: usize) -> &[usize] {
        self.rels_of.get(&(head, tail)).map_or(&[], Vec::as_slice)
    }
}
