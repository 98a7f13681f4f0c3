//! Structural diagnostics: relation skew, degree, unique relational contexts.

use std::collections::HashSet;
use std::fmt::Write;

use crate::kg::KnowledgeGraph;

/// Number of distinct (in, out) relation-count pairs divided by |E|.
pub fn unique_context_ratio(kg: &KnowledgeGraph) -> f64 {
    if kg.num_entities() == 0 {
        return 0.0;
    }
    let distinct: HashSet<_> = kg.contexts().iter().collect();
    distinct.len() as f64 / kg.num_entities() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationFrequency {
    pub relation: usize,
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_train: usize,
    pub num_valid: usize,
    pub num_test: usize,
    /// Sorted by count, descending; ties by relation id.
    pub relations: Vec<RelationFrequency>,
    pub average_degree: f64,
    pub unique_context_ratio: f64,
}

pub fn structural_report(kg: &KnowledgeGraph) -> StructuralReport {
    let mut counts = vec![0usize; kg.num_relations()];
    for t in kg.train() {
        counts[t.rel] += 1;
    }
    let total = kg.train().len() as f64;
    let mut relations: Vec<RelationFrequency> = counts
        .iter()
        .enumerate()
        .map(|(r, &count)| RelationFrequency {
            relation: r,
            name: kg.relations().name(r).to_string(),
            count,
            percent: 100.0 * count as f64 / total,
        })
        .collect();
    relations.sort_by(|a, b| b.count.cmp(&a.count).then(a.relation.cmp(&b.relation)));
    StructuralReport {
        num_entities: kg.num_entities(),
        num_relations: kg.num_relations(),
        num_train: kg.train().len(),
        num_valid: kg.valid().len(),
        num_test: kg.test().len(),
        relations,
        average_degree: 2.0 * total / kg.num_entities() as f64,
        unique_context_ratio: unique_context_ratio(kg),
    }
}

impl StructuralReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#Ent {}", self.num_entities);
        let _ = writeln!(s, "#Rel {}", self.num_relations);
        let _ = writeln!(s, "#Train {}", self.num_train);
        let _ = writeln!(s, "#Valid {}", self.num_valid);
        let _ = writeln!(s, "#Test {}", self.num_test);
        let _ = writeln!(s, "average degree {:.3}", self.average_degree);
        let _ = writeln!(s, "unique context ratio {:.4}", self.unique_context_ratio);
        let _ = writeln!(
            s,
            "{:>8}  {:>10}  {:>7}  name",
            "rel_id", "count", "percent"
        );
        for r in &self.relations {
            let _ = writeln!(
                s,
                "{:>8}  {:>10}  {:>7.2}  {}",
                r.relation, r.count, r.percent, r.name
            );
        }
        s
    }

    /// `relation_id,count,percent` rows in report order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("relation_id,count,percent\n");
        for r in &self.relations {
            let _ = writeln!(s, "{},{},{:.6}", r.relation, r.count, r.percent);
        }
        s
    }
}
