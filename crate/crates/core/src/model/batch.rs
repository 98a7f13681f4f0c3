//! Padded, interleaved path grids.

use std::collections::HashMap;

use super::config::PositionalKind;
use super::positional::positional_indices;
use crate::error::{CoreError, Result};
use crate::paths::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Entity,
    Relation,
    Pad,
}

/// `instances × ppe` paths laid out as a `[paths, slots]` grid.
///
/// `ids` index a combined table whose first `entities.len()` rows are the
/// projected entities of this batch, followed by the relation table
/// (`num_relations` rows plus one pad row).
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub instances: usize,
    pub ppe: usize,
    pub slots: usize,
    pub entities: Vec<usize>,
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub kinds: Vec<SlotKind>,
    /// `true` where a slot holds content.
    pub mask: Vec<bool>,
    /// Flat `path * slots + anchor_slot` per path.
    pub anchors: Vec<usize>,
}

impl PathBatch {
    /// `instance_paths[i]` must hold exactly `ppe` paths. `max_len` caps
    /// position ids at `2 max_len + 1`.
    pub fn new(
        instance_paths: &[Vec<Path>],
        ppe: usize,
        num_relations: usize,
        positional: PositionalKind,
        max_len: usize,
    ) -> Result<Self> {
        Self::with_min_slots(instance_paths, ppe, num_relations, positional, max_len, 0)
    }

    /// As [`PathBatch::new`], padding every path to at least `min_slots`.
    pub fn with_min_slots(
        instance_paths: &[Vec<Path>],
        ppe: usize,
        num_relations: usize,
        positional: PositionalKind,
        max_len: usize,
        min_slots: usize,
    ) -> Result<Self> {
        if let Some(bad) = instance_paths.iter().find(|p| p.len() != ppe) {
            return Err(CoreError::Data(format!(
                "instance has {} paths, expected {ppe}",
                bad.len()
            )));
        }
        let slots = instance_paths
            .iter()
            .flatten()
            .map(Path::num_slots)
            .max()
            .unwrap_or(1)
            .max(min_slots);
        let num_paths = instance_paths.len() * ppe;
        let max_pos = 2 * max_len + 1;
        let mut entities = Vec::new();
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut b = PathBatch {
            instances: instance_paths.len(),
            ppe,
            slots,
            entities: Vec::new(),
            ids: Vec::with_capacity(num_paths * slots),
            positions: Vec::with_capacity(num_paths * slots),
            kinds: Vec::with_capacity(num_paths * slots),
            mask: Vec::with_capacity(num_paths * slots),
            anchors: Vec::with_capacity(num_paths),
        };
        // Relation slot r -> row u + r, pad -> u + num_relations; u is only
        // known at the end, so store relation ids and offset them afterwards.
        let mut relation_slots = Vec::new();
        for (p, path) in instance_paths.iter().flatten().enumerate() {
            let n = path.num_slots();
            let anchor_slot = 2 * path.anchor_pos();
            let pos = positional_indices(n, anchor_slot, positional);
            #[allow(clippy::needless_range_loop)] // s also indexes past the path end
            for s in 0..slots {
                if s >= n {
                    relation_slots.push(b.ids.len());
                    b.ids.push(num_relations);
                    b.positions.push(0);
                    b.kinds.push(SlotKind::Pad);
                    b.mask.push(false);
                    continue;
                }
                if s % 2 == 0 {
                    let e = path.entities[s / 2];
                    let next = local.len();
                    let row = *local.entry(e).or_insert_with(|| {
                        entities.push(e);
                        next
                    });
                    b.ids.push(row);
                    b.kinds.push(SlotKind::Entity);
                } else {
                    let r = path.relations[s / 2];
                    if r >= num_relations {
                        return Err(CoreError::Data(format!(
                            "relation id {r} out of range ({num_relations})"
                        )));
                    }
                    relation_slots.push(b.ids.len());
                    b.ids.push(r);
                    b.kinds.push(SlotKind::Relation);
                }
                b.positions.push(pos[s].min(max_pos));
                b.mask.push(true);
            }
            b.anchors.push(p * slots + anchor_slot);
        }
        let u = entities.len();
        for i in relation_slots {
            b.ids[i] += u;
        }
        b.entities = entities;
        Ok(b)
    }

    pub fn num_paths(&self) -> usize {
        self.instances * self.ppe
    }
}
