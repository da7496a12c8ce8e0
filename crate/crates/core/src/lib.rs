//! Relation classification for scene graphs with two co-trained learners.
//!
//! A supervised hyperspherical classifier (F) scores every relation class
//! plus `no-relation` with a frequency prior added to its logits. A
//! semi-supervised classifier (G) scores only real relations, is pushed
//! toward high-entropy predictions on unannotated pairs, and distills its
//! tempered predictions into F. The crate also ships a generator for
//! corpora with missing and collapsed annotations and the R@K / mR@K
//! evaluation protocol.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod format;
pub mod loss;
pub mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod prior;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use math::{entropy, kl_divergence, l2_normalize, softmax, Matrix, RelationDistribution};
pub use model::{forward_f, forward_g, forward_g_tempered, fuse_pair, HypersphereConfig, L2Mode};
pub use params::{GradientSet, LearnerParameters};
pub use prior::FrequencyPrior;
pub use types::{
    Dataset, EntityVocabulary, Label, PairExample, RelationVocabulary, SceneSample,
};
