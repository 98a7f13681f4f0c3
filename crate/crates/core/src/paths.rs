//! Random-walk path mining, per-triple path sampling and the corpus file format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::kg::{KnowledgeGraph, Triple};

pub const CORPUS_HEADER: &str = "pathe-corpus v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// Loop-free alternating entity/relation sequence, always stored head-to-tail.
/// Outgoing paths start at their anchor, incoming paths end at it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub direction: Direction,
    pub entities: Vec<usize>,
    pub relations: Vec<usize>,
}

impl Path {
    /// Zero-relation path standing in for an entity without mined paths.
    pub fn singleton(entity: usize) -> Self {
        Path {
            direction: Direction::Outgoing,
            entities: vec![entity],
            relations: Vec::new(),
        }
    }

    pub fn anchor_pos(&self) -> usize {
        match self.direction {
            Direction::Outgoing => 0,
            Direction::Incoming => self.entities.len() - 1,
        }
    }

    pub fn anchor(&self) -> usize {
        self.entities[self.anchor_pos()]
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Length of the interleaved `e r e ... e` layout.
    pub fn num_slots(&self) -> usize {
        2 * self.relations.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningParams {
    pub num_paths: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Seed for the RNG stream of one entity; independent of scheduling.
pub fn entity_seed(seed: u64, entity: usize) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed
        ^ (entity as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn walk<R: Rng>(
    kg: &KnowledgeGraph,
    start: usize,
    dir: Direction,
    max_len: usize,
    rng: &mut R,
) -> Path {
    let mut entities = vec![start];
    let mut relations = Vec::new();
    let mut cur = start;
    let mut options = Vec::new();
    while relations.len() < max_len {
        let edges = match dir {
            Direction::Outgoing => kg.out_edges(cur),
            Direction::Incoming => kg.in_edges(cur),
        };
        options.clear();
        options.extend(edges.iter().filter(|(_, nb)| !entities.contains(nb)));
        if options.is_empty() {
            break;
        }
        let (r, next) = options[rng.gen_range(0..options.len())];
        relations.push(r);
        entities.push(next);
        cur = next;
    }
    if dir == Direction::Incoming {
        entities.reverse();
        relations.reverse();
    }
    Path {
        direction: dir,
        entities,
        relations,
    }
}

/// Up to `n` distinct loop-free paths anchored at `entity`, with at most
/// `10 n` walk attempts.
pub fn mine_entity<R: Rng>(
    kg: &KnowledgeGraph,
    entity: usize,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<Path> {
    let mut seen = HashSet::new();
    let mut paths = Vec::new();
    for _ in 0..10 * n {
        if paths.len() == n {
            break;
        }
        let dir = if rng.gen_bool(0.5) {
            Direction::Outgoing
        } else {
            Direction::Incoming
        };
        let path = walk(kg, entity, dir, max_len, rng);
        if path.relations.is_empty() {
            continue;
        }
        if seen.insert(path.clone()) {
            paths.push(path);
        }
    }
    paths
}

/// Mines every entity in parallel on the current rayon pool. The result
/// depends only on `(kg, params)`.
pub fn mine_all(kg: &KnowledgeGraph, params: MiningParams) -> PathCorpus {
    let paths = (0..kg.num_entities())
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(entity_seed(params.seed, e));
            mine_entity(kg, e, params.num_paths, params.max_len, &mut rng)
        })
        .collect();
    PathCorpus::new(params, paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathCorpus {
    pub params: MiningParams,
    paths: Vec<Vec<Path>>,
}

impl PathCorpus {
    /// Trailing entities without paths are dropped so that the in-memory
    /// form matches what the file format can express.
    pub fn new(params: MiningParams, mut paths: Vec<Vec<Path>>) -> Self {
        while paths.last().is_some_and(Vec::is_empty) {
            paths.pop();
        }
        PathCorpus { params, paths }
    }

    pub fn paths(&self, entity: usize) -> &[Path] {
        self.paths.get(entity).map_or(&[], Vec::as_slice)
    }

    pub fn total_paths(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }

    /// Number of entities among `0..num_entities` with at least one path.
    pub fn covered(&self, num_entities: usize) -> usize {
        (0..num_entities)
            .filter(|&e| !self.paths(e).is_empty())
            .count()
    }

    pub fn to_text(&self) -> String {
        let p = self.params;
        let mut s = format!(
            "{CORPUS_HEADER} n={} max_len={} seed={}\n",
            p.num_paths, p.max_len, p.seed
        );
        for (anchor, list) in self.paths.iter().enumerate() {
            for path in list {
                let dir = match path.direction {
                    Direction::Outgoing => 'O',
                    Direction::Incoming => 'I',
                };
                let _ = write!(s, "{anchor} {dir} {}", path.entities[0]);
                for (r, e) in path.relations.iter().zip(&path.entities[1..]) {
                    let _ = write!(s, " {r} {e}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn save(&self, file: &FsPath) -> Result<()> {
        fs::write(file, self.to_text()).map_err(|e| CoreError::io(file, e))
    }

    pub fn load(file: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(file).map_err(|e| CoreError::io(file, e))?;
        Self::parse(&text, file)
    }

    pub fn parse(text: &str, file: &FsPath) -> Result<Self> {
        let err = |line: usize, msg: String| CoreError::Parse {
            path: file.to_path_buf(),
            line,
            msg,
        };
        if !text.ends_with('\n') {
            return Err(err(
                text.lines().count().max(1),
                "truncated file (missing final newline)".into(),
            ));
        }
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let params =
            parse_header(header).ok_or_else(|| err(1, format!("unsupported header `{header}`")))?;
        let mut paths: Vec<Vec<Path>> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let path_err = |msg: &str| err(lineno, msg.to_string());
            let mut tok = line.split(' ');
            let anchor: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| path_err("bad anchor"))?;
            let direction = match tok.next() {
                Some("O") => Direction::Outgoing,
                Some("I") => Direction::Incoming,
                _ => return Err(path_err("direction must be O or I")),
            };
            let ids: Vec<usize> = tok
                .map(|t| t.parse().map_err(|_| path_err("bad id")))
                .collect::<Result<_>>()?;
            if ids.len().is_multiple_of(2) {
                return Err(path_err(
                    "path must alternate entity and relation ids and end on an entity",
                ));
            }
            let entities: Vec<usize> = ids.iter().step_by(2).copied().collect();
            let relations: Vec<usize> = ids.iter().skip(1).step_by(2).copied().collect();
            let path = Path {
                direction,
                entities,
                relations,
            };
            if path.anchor() != anchor {
                return Err(path_err("anchor entity is not at the anchor position"));
            }
            if paths.len() <= anchor {
                paths.resize_with(anchor + 1, Vec::new);
            }
            paths[anchor].push(path);
        }
        Ok(PathCorpus::new(params, paths))
    }
}

fn parse_header(line: &str) -> Option<MiningParams> {
    let rest = line.strip_prefix(CORPUS_HEADER)?.strip_prefix(' ')?;
    let mut fields = rest.split(' ');
    let mut get = |key: &str| {
        fields
            .next()?
            .strip_prefix(key)?
            .strip_prefix('=')?
            .parse::<u64>()
            .ok()
    };
    let num_paths = get("n")? as usize;
    let max_len = get("max_len")? as usize;
    let seed = get("seed")?;
    fields.next().is_none().then_some(MiningParams {
        num_paths,
        max_len,
        seed,
    })
}

/// `ppe` paths for one entity: without replacement when enough exist, with
/// replacement when fewer do, singleton copies when none do.
pub fn sample_for_entity<R: Rng>(
    corpus: &PathCorpus,
    entity: usize,
    ppe: usize,
    rng: &mut R,
) -> Vec<Path> {
    let own = corpus.paths(entity);
    if own.is_empty() {
        vec![Path::singleton(entity); ppe]
    } else if own.len() >= ppe {
        index::sample(rng, own.len(), ppe)
            .into_iter()
            .map(|i| own[i].clone())
            .collect()
    } else {
        (0..ppe)
            .map(|_| own[rng.gen_range(0..own.len())].clone())
            .collect()
    }
}

pub fn sample_for_triple<R: Rng>(
    corpus: &PathCorpus,
    triple: Triple,
    ppe: usize,
    rng: &mut R,
) -> (Vec<Path>, Vec<Path>) {
    let head = sample_for_entity(corpus, triple.head, ppe, rng);
    let tail = sample_for_entity(corpus, triple.tail, ppe, rng);
    (head, tail)
}

/// Fixed per-entity sample used at evaluation time, so every scorer sees
/// the same paths for an entity.
pub fn eval_paths(corpus: &PathCorpus, entity: usize, ppe: usize, seed: u64) -> Vec<Path> {
    let mut rng = ChaCha8Rng::seed_from_u64(entity_seed(seed ^ 0xE7A1_5EED, entity));
    sample_for_entity(corpus, entity, ppe, &mut rng)
}
