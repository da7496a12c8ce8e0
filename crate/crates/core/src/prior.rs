//! Frequency prior over relations conditioned on the (subject, object)
//! entity-class pair, in log space.

use crate::error::{contract, Error, Result};
use crate::types::{Label, SceneSample};

/// Stand-in for `ln 0` when a cell has zero count and no smoothing.
pub const LOG_ZERO_FLOOR: f64 = -50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPrior {
    num_entity_classes: usize,
    /// |R|, including `no-relation`.
    num_classes: usize,
    alpha: f64,
    counts: Vec<u64>,
    table: Vec<f64>,
}

impl FrequencyPrior {
    /// Tallies every pair of `train`: its annotated relation, or
    /// `no-relation` when unannotated.
    pub fn build(
        train: &[SceneSample],
        alpha: f64,
        num_entity_classes: usize,
        num_relations: usize,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(contract(format!("smoothing {alpha} must be finite and >= 0")));
        }
        if train.iter().all(|s| s.pairs.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let k = num_relations + 1;
        let mut counts = vec![0u64; num_entity_classes * num_entity_classes * k];
        for pair in train.iter().flat_map(|s| &s.pairs) {
            if pair.subject_class >= num_entity_classes || pair.object_class >= num_entity_classes {
                return Err(contract(format!(
                    "entity class pair ({}, {}) outside |O| = {num_entity_classes}",
                    pair.subject_class, pair.object_class
                )));
            }
            let r = match pair.label {
                Label::Annotated(r) if r < num_relations => r,
                Label::Annotated(r) => return Err(contract(format!("relation {r} outside R'"))),
                Label::Unannotated => num_relations,
            };
            counts[(pair.subject_class * num_entity_classes + pair.object_class) * k + r] += 1;
        }
        Self::from_counts(counts, alpha, num_entity_classes, k)
    }

    /// Derives the log table from raw counts laid out `[a][b][r]`.
    pub fn from_counts(
        counts: Vec<u64>,
        alpha: f64,
        num_entity_classes: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if counts.len() != num_entity_classes * num_entity_classes * num_classes {
            return Err(contract("count table has the wrong size"));
        }
        let mut table = vec![0.0; counts.len()];
        for (cell, out) in counts
            .chunks_exact(num_classes)
            .zip(table.chunks_exact_mut(num_classes))
        {
            let total: f64 = cell.iter().map(|&c| c as f64 + alpha).sum();
            if total <= 0.0 {
                out.fill(-(num_classes as f64).ln());
                continue;
            }
            for (o, &c) in out.iter_mut().zip(cell) {
                let mass = c as f64 + alpha;
                *o = if mass > 0.0 {
                    (mass / total).ln()
                } else {
                    LOG_ZERO_FLOOR
                };
            }
        }
        Ok(Self {
            num_entity_classes,
            num_classes,
            alpha,
            counts,
            table,
        })
    }

    /// Log prior scores over R for subject class `a` and object class `b`.
    pub fn lookup(&self, a: usize, b: usize) -> Result<&[f64]> {
        if a >= self.num_entity_classes || b >= self.num_entity_classes {
            return Err(contract(format!(
                "prior lookup ({a}, {b}) outside |O| = {}",
                self.num_entity_classes
            )));
        }
        let start = (a * self.num_entity_classes + b) * self.num_classes;
        Ok(&self.table[start..start + self.num_classes])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_entity_classes(&self) -> usize {
        self.num_entity_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Rebuilds a prior from stored parts, checking the table agrees with the counts.
    pub fn from_parts(
        counts: Vec<u64>,
        table: Vec<f64>,
        alpha: f64,
        num_entity_classes: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let rebuilt = Self::from_counts(counts, alpha, num_entity_classes, num_classes)?;
        if rebuilt.table.len() != table.len()
            || rebuilt
                .table
                .iter()
                .zip(&table)
                .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(contract("stored prior table disagrees with its counts"));
        }
        Ok(rebuilt)
    }
}
