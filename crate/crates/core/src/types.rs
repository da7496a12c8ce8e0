//! Vocabularies, pair examples and scene samples.

use std::collections::HashSet;

use crate::error::{contract, Result};

/// The real relation classes R'. The full space R appends one implicit
/// `no-relation` class at index `len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationVocabulary {
    names: Vec<String>,
}

pub const NO_RELATION: &str = "no-relation";

fn check_names(names: &[String], kind: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if n.is_empty() {
            return Err(contract(format!("empty {kind} name")));
        }
        if !seen.insert(n.as_str()) {
            return Err(contract(format!("duplicate {kind} name {n:?}")));
        }
    }
    Ok(())
}

impl RelationVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        check_names(&names, "relation")?;
        if names.iter().any(|n| n == NO_RELATION) {
            return Err(contract("`no-relation` is implicit and cannot be listed"));
        }
        if names.is_empty() {
            return Err(contract("relation vocabulary is empty"));
        }
        Ok(Self { names })
    }

    /// `rel_00`, `rel_01`, ... for generated corpora.
    pub fn synthetic(n: usize) -> Self {
        Self {
            names: (0..n).map(|i| format!("rel_{i:02}")).collect(),
        }
    }

    /// |R'|.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// |R| = |R'| + 1.
    pub fn full_len(&self) -> usize {
        self.names.len() + 1
    }

    pub fn no_relation(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, r: usize) -> &str {
        self.names.get(r).map_or(NO_RELATION, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityVocabulary {
    names: Vec<String>,
}

impl EntityVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        check_names(&names, "entity")?;
        if names.len() < 2 {
            return Err(contract("entity vocabulary needs at least two classes"));
        }
        Ok(Self { names })
    }

    pub fn synthetic(n: usize) -> Self {
        Self {
            names: (0..n).map(|i| format!("ent_{i:02}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, o: usize) -> &str {
        &self.names[o]
    }
}

/// Annotation state of an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Annotated(usize),
    Unannotated,
}

impl Label {
    /// Target index in the full space R; unannotated pairs map to `no-relation`.
    pub fn full_target(self, no_relation: usize) -> usize {
        match self {
            Label::Annotated(r) => r,
            Label::Unannotated => no_relation,
        }
    }

    pub fn annotated(self) -> Option<usize> {
        match self {
            Label::Annotated(r) => Some(r),
            Label::Unannotated => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub subject: usize,
    pub object: usize,
    pub subject_class: usize,
    pub object_class: usize,
    pub context_subject: Vec<f64>,
    pub context_object: Vec<f64>,
    pub union_feature: Vec<f64>,
    pub label: Label,
    /// Every valid relation of the pair; only known for generated data.
    /// `Some(empty)` marks a truly unrelated pair.
    pub true_relations: Option<Vec<usize>>,
}

impl PairExample {
    pub fn validate(&self, num_entity_classes: usize, num_relations: usize) -> Result<()> {
        if self.subject == self.object {
            return Err(contract(format!("pair ({0}, {0}) relates an entity to itself", self.subject)));
        }
        if self.subject_class >= num_entity_classes || self.object_class >= num_entity_classes {
            return Err(contract(format!(
                "entity class out of range in pair ({}, {})",
                self.subject, self.object
            )));
        }
        if let Label::Annotated(r) = self.label {
            if r >= num_relations {
                return Err(contract(format!("relation {r} outside R'")));
            }
            if let Some(set) = &self.true_relations {
                if !set.contains(&r) {
                    return Err(contract(format!(
                        "annotated relation {r} missing from the true relation set"
                    )));
                }
            }
        }
        if let Some(set) = &self.true_relations {
            if set.iter().any(|&r| r >= num_relations) {
                return Err(contract("true relation outside R'"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub image_id: u64,
    pub entity_classes: Vec<usize>,
    pub pairs: Vec<PairExample>,
}

impl SceneSample {
    pub fn validate(&self, num_entity_classes: usize, num_relations: usize) -> Result<()> {
        let m = self.entity_classes.len();
        let mut seen = HashSet::new();
        for p in &self.pairs {
            if p.subject >= m || p.object >= m {
                return Err(contract(format!(
                    "image {}: pair ({}, {}) references a missing entity",
                    self.image_id, p.subject, p.object
                )));
            }
            if self.entity_classes[p.subject] != p.subject_class
                || self.entity_classes[p.object] != p.object_class
            {
                return Err(contract(format!(
                    "image {}: pair ({}, {}) disagrees with the entity class list",
                    self.image_id, p.subject, p.object
                )));
            }
            if !seen.insert((p.subject, p.object)) {
                return Err(contract(format!(
                    "image {}: duplicate pair ({}, {})",
                    self.image_id, p.subject, p.object
                )));
            }
            p.validate(num_entity_classes, num_relations)?;
        }
        Ok(())
    }

    pub fn has_oracle(&self) -> bool {
        !self.pairs.is_empty() && self.pairs.iter().all(|p| p.true_relations.is_some())
    }
}

/// A split of scene samples with the sizes every sample conforms to.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_entity_classes: usize,
    /// |R'|.
    pub num_relations: usize,
    pub d_ctx: usize,
    pub d_feat: usize,
    pub images: Vec<SceneSample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            img.validate(self.num_entity_classes, self.num_relations)?;
            for p in &img.pairs {
                if p.context_subject.len() != self.d_ctx
                    || p.context_object.len() != self.d_ctx
                    || p.union_feature.len() != self.d_feat
                {
                    return Err(contract(format!(
                        "image {}: pair ({}, {}) has feature sizes {}/{}/{}, expected {}/{}/{}",
                        img.image_id,
                        p.subject,
                        p.object,
                        p.context_subject.len(),
                        p.context_object.len(),
                        p.union_feature.len(),
                        self.d_ctx,
                        self.d_ctx,
                        self.d_feat
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.images.iter().map(|i| i.pairs.len()).sum()
    }

    pub fn has_oracle(&self) -> bool {
        !self.images.is_empty() && self.images.iter().all(SceneSample::has_oracle)
    }
}
