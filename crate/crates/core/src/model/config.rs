use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    RelationPrediction,
    LinkPrediction,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::RelationPrediction => "rp",
            Task::LinkPrediction => "lp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rp" => Some(Task::RelationPrediction),
            "lp" => Some(Task::LinkPrediction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Average,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalKind {
    /// Distance from the anchor plus one.
    EntityFocused,
    /// Slot index plus one.
    Standard,
}

/// Preprocessing applied to relation counts before the projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountTransform {
    Raw,
    Log1p,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub ppe: usize,
    /// Longest path in relations; sizes the positional table.
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub aggregator: AggregatorKind,
    pub aggregator_layers: usize,
    pub positional: PositionalKind,
    pub projector_hidden: usize,
    pub count_transform: CountTransform,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            ppe: 4,
            max_len: 20,
            layers: 1,
            heads: 2,
            ff_dim: 256,
            dropout: 0.1,
            aggregator: AggregatorKind::Transformer,
            aggregator_layers: 1,
            positional: PositionalKind::EntityFocused,
            projector_hidden: 64,
            count_transform: CountTransform::Raw,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.ppe == 0 {
            return bad("ppe must be at least 1".into());
        }
        if self.max_len == 0 || self.ff_dim == 0 || self.projector_hidden == 0 {
            return bad("max_len, ff_dim and projector_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.aggregator == AggregatorKind::Transformer && self.aggregator_layers == 0 {
            return bad("transformer aggregator needs at least one layer".into());
        }
        Ok(())
    }

    /// Rows in the positional table: pad row 0 plus ids `1..=2 max_len + 1`.
    pub fn positional_rows(&self) -> usize {
        2 * self.max_len + 2
    }
}
