//! The path-based entity encoder and its prediction heads.
//!
//! Entities have no parameters of their own. An entity's vector comes from
//! projecting its relation counts; a path is encoded by a transformer over
//! interleaved entity and relation slots; an entity instance (one entity with
//! `ppe` sampled paths) is represented by the encoder outputs at each path's
//! anchor slot; and an aggregator merges those per triple.

pub mod batch;
pub mod config;
pub mod layers;
pub mod positional;

use pathe_tensor::{uniform, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::kg::RelationalContext;
use crate::paths::Path;
pub use batch::{PathBatch, SlotKind};
pub use config::{AggregatorKind, CountTransform, ModelConfig, PositionalKind, Task};
use layers::{encoder_parameters, Encoder, Linear, Mlp};
pub use positional::positional_indices;

pub const RELATION_TABLE: &str = "relation_embeddings";
pub const POSITIONAL_TABLE: &str = "positional_embeddings";

#[derive(Debug, Clone)]
struct TransformerAggregator {
    /// Row 0 reads out the head, row 1 the tail.
    tokens: ParamId,
    /// Rows: token, head anchor, tail anchor.
    roles: ParamId,
    encoder: Encoder,
}

#[derive(Debug, Clone)]
enum Head {
    Relation(Linear),
    Link(Mlp),
}

#[derive(Debug, Clone)]
pub struct PathE {
    config: ModelConfig,
    task: Task,
    num_relations: usize,
    relations: ParamId,
    positions: ParamId,
    proj_in: Mlp,
    proj_out: Mlp,
    fusion: Mlp,
    encoder: Encoder,
    aggregator: Option<TransformerAggregator>,
    head: Head,
}

impl PathE {
    /// Registers all parameters in `store` (which should be empty) and
    /// returns the handles.
    pub fn new<T: Scalar, R: Rng>(
        config: ModelConfig,
        task: Task,
        num_relations: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if num_relations == 0 {
            return Err(CoreError::Config("graph has no relations".into()));
        }
        let c = &config;
        let d = c.dim;
        let emb_bound = 1.0 / (d as f64).sqrt();
        let relations = store.add(
            RELATION_TABLE,
            uniform(&[num_relations + 1, d], emb_bound, rng),
        );
        let positions = store.add(
            POSITIONAL_TABLE,
            uniform(&[c.positional_rows(), d], emb_bound, rng),
        );
        let h = c.projector_hidden;
        let proj_in = Mlp::new(store, "projector.in", num_relations, h, d, rng);
        let proj_out = Mlp::new(store, "projector.out", num_relations, h, d, rng);
        let fusion = Mlp::new(store, "projector.fusion", 2 * d, h, d, rng);
        let encoder = Encoder::new(
            store,
            "path_encoder",
            c.layers,
            d,
            c.heads,
            c.ff_dim,
            c.dropout,
            rng,
        );
        let aggregator = match c.aggregator {
            AggregatorKind::Average => None,
            AggregatorKind::Transformer => Some(TransformerAggregator {
                tokens: store.add("aggregator.tokens", uniform(&[2, d], emb_bound, rng)),
                roles: store.add("aggregator.roles", uniform(&[3, d], emb_bound, rng)),
                encoder: Encoder::new(
                    store,
                    "aggregator.encoder",
                    c.aggregator_layers,
                    d,
                    c.heads,
                    c.ff_dim,
                    c.dropout,
                    rng,
                ),
            }),
        };
        let head = match task {
            Task::RelationPrediction => {
                Head::Relation(Linear::new(store, "rp_head", 2 * d, num_relations, rng))
            }
            Task::LinkPrediction => Head::Link(Mlp::new(store, "lp_head", 3 * d, d, 1, rng)),
        };
        Ok(PathE {
            config,
            task,
            num_relations,
            relations,
            positions,
            proj_in,
            proj_out,
            fusion,
            encoder,
            aggregator,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn positional_table(&self) -> ParamId {
        self.positions
    }

    fn count_matrix<T: Scalar>(&self, rows: &[Vec<u32>]) -> Result<Tensor<T>> {
        let data = rows
            .iter()
            .flatten()
            .map(|&c| match self.config.count_transform {
                CountTransform::Raw => c as f64,
                CountTransform::Log1p => (c as f64).ln_1p(),
            })
            .collect::<Vec<_>>();
        Ok(Tensor::from_f64(&[rows.len(), self.num_relations], &data)?)
    }

    /// Projects the relational contexts of `entities` to `[entities.len(), dim]`.
    pub fn project<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        contexts: &[RelationalContext],
        entities: &[usize],
    ) -> Result<Var> {
        let ctx = |e: usize| {
            contexts
                .get(e)
                .ok_or_else(|| CoreError::Data(format!("entity {e} has no relational context")))
        };
        let ins = entities
            .iter()
            .map(|&e| Ok(ctx(e)?.dense_in(self.num_relations)))
            .collect::<Result<Vec<_>>>()?;
        let outs = entities
            .iter()
            .map(|&e| Ok(ctx(e)?.dense_out(self.num_relations)))
            .collect::<Result<Vec<_>>>()?;
        let ins = tape.constant(self.count_matrix(&ins)?);
        let outs = tape.constant(self.count_matrix(&outs)?);
        let p_in = self.proj_in.forward(tape, store, ins)?;
        let p_out = self.proj_out.forward(tape, store, outs)?;
        let both = tape.concat(&[p_in, p_out], 1)?;
        self.fusion.forward(tape, store, both)
    }

    /// Contextualised slot embeddings `[paths, slots, dim]`.
    pub fn encode_paths<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &PathBatch,
        contexts: &[RelationalContext],
        train: bool,
    ) -> Result<Var> {
        let shape = [batch.num_paths(), batch.slots];
        let projected = self.project(tape, store, contexts, &batch.entities)?;
        let rel = tape.param(store, self.relations);
        let table = tape.concat(&[projected, rel], 0)?;
        let x = tape.embedding_lookup(table, &batch.ids, &shape)?;
        let pos_table = tape.param(store, self.positions);
        let pos = tape.embedding_lookup(pos_table, &batch.positions, &shape)?;
        let x = tape.add(x, pos)?;
        let x = tape.dropout(x, self.config.dropout, train)?;
        self.encoder
            .forward(tape, store, x, Some(&batch.mask), train)
    }

    /// Anchor-slot outputs `[instances, ppe, dim]`.
    pub fn anchors<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        batch: &PathBatch,
        encoded: Var,
    ) -> Result<Var> {
        let d = self.config.dim;
        let flat = tape.reshape(encoded, &[batch.num_paths() * batch.slots, d])?;
        Ok(tape.embedding_lookup(flat, &batch.anchors, &[batch.instances, batch.ppe])?)
    }

    /// Builds the batch for `instance_paths` and returns anchor outputs `[instances, ppe, dim]`.
    pub fn encode_instances<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        instance_paths: &[Vec<Path>],
        contexts: &[RelationalContext],
        train: bool,
    ) -> Result<Var> {
        let batch = PathBatch::new(
            instance_paths,
            self.config.ppe,
            self.num_relations,
            self.config.positional,
            self.config.max_len,
        )?;
        let encoded = self.encode_paths(tape, store, &batch, contexts, train)?;
        self.anchors(tape, &batch, encoded)
    }

    /// Head and tail embeddings `[pairs, dim]` for `(head_instance, tail_instance)` pairs
    /// over anchors `[instances, ppe, dim]`.
    pub fn aggregate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        anchors: Var,
        pairs: &[(usize, usize)],
        train: bool,
    ) -> Result<(Var, Var)> {
        let heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let tails: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let z = pairs.len();
        let Some(agg) = &self.aggregator else {
            let mean = tape.mean(anchors, 1)?;
            let e_h = tape.embedding_lookup(mean, &heads, &[z])?;
            let e_t = tape.embedding_lookup(mean, &tails, &[z])?;
            return Ok((e_h, e_t));
        };
        let shape = tape.shape(anchors).to_vec();
        let (instances, ppe, d) = (shape[0], shape[1], shape[2]);
        let flat = tape.reshape(anchors, &[instances * ppe, d])?;
        let tokens = tape.param(store, agg.tokens);
        let table = tape.concat(&[tokens, flat], 0)?;
        let len = 2 + 2 * ppe;
        let mut ids = Vec::with_capacity(z * len);
        for &(h, t) in pairs {
            ids.extend([0, 1]);
            ids.extend((0..ppe).map(|j| 2 + h * ppe + j));
            ids.extend((0..ppe).map(|j| 2 + t * ppe + j));
        }
        let x = tape.embedding_lookup(table, &ids, &[z, len])?;
        let role_ids: Vec<usize> = (0..z)
            .flat_map(|_| {
                [0, 0]
                    .into_iter()
                    .chain([1].repeat(ppe))
                    .chain([2].repeat(ppe))
            })
            .collect();
        let roles = tape.param(store, agg.roles);
        let roles = tape.embedding_lookup(roles, &role_ids, &[z, len])?;
        let x = tape.add(x, roles)?;
        let y = agg.encoder.forward(tape, store, x, None, train)?;
        let y = tape.reshape(y, &[z * len, d])?;
        let head_rows: Vec<usize> = (0..z).map(|i| i * len).collect();
        let tail_rows: Vec<usize> = (0..z).map(|i| i * len + 1).collect();
        let e_h = tape.embedding_lookup(y, &head_rows, &[z])?;
        let e_t = tape.embedding_lookup(y, &tail_rows, &[z])?;
        Ok((e_h, e_t))
    }

    /// Relation scores `[pairs, num_relations]`.
    pub fn rp_logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        e_h: Var,
        e_t: Var,
    ) -> Result<Var> {
        let Head::Relation(head) = &self.head else {
            return Err(CoreError::Config(
                "model was built for link prediction".into(),
            ));
        };
        let f = tape.concat(&[e_h, e_t], 1)?;
        head.forward(tape, store, f)
    }

    /// One logit per `(e_h[i], rels[i], e_t[i])`, shape `[n]`.
    pub fn lp_logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        e_h: Var,
        rels: &[usize],
        e_t: Var,
    ) -> Result<Var> {
        let Head::Link(head) = &self.head else {
            return Err(CoreError::Config(
                "model was built for relation prediction".into(),
            ));
        };
        if let Some(&r) = rels.iter().find(|&&r| r >= self.num_relations) {
            return Err(CoreError::Data(format!(
                "relation id {r} out of range ({})",
                self.num_relations
            )));
        }
        let table = tape.param(store, self.relations);
        let r = tape.embedding_lookup(table, rels, &[rels.len()])?;
        let f = tape.concat(&[e_h, r, e_t], 1)?;
        let logit = head.forward(tape, store, f)?;
        Ok(tape.reshape(logit, &[rels.len()])?)
    }
}

/// Trainable parameter count as a function of the architecture and `|R|` only.
pub fn parameter_count(config: &ModelConfig, task: Task, num_relations: usize) -> usize {
    let (d, h, r) = (config.dim, config.projector_hidden, num_relations);
    let mlp = |i: usize, hidden: usize, o: usize| i * hidden + hidden + hidden * o + o;
    let tables = (r + 1) * d + config.positional_rows() * d;
    let projector = 2 * mlp(r, h, d) + mlp(2 * d, h, d);
    let encoder = encoder_parameters(config.layers, d, config.ff_dim);
    let aggregator = match config.aggregator {
        AggregatorKind::Average => 0,
        AggregatorKind::Transformer => {
            5 * d + encoder_parameters(config.aggregator_layers, d, config.ff_dim)
        }
    };
    let head = match task {
        Task::RelationPrediction => 2 * d * r + r,
        Task::LinkPrediction => mlp(3 * d, d, 1),
    };
    tables + projector + encoder + aggregator + head
}
