//! R@K and mR@K over scored relation triplets, with or without the graph
//! constraint, against annotated or oracle ground truth.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::math::{argmax, softmax};
use crate::model::{HypersphereConfig, Learner};
use crate::params::LearnerParameters;
use crate::prior::FrequencyPrior;
use crate::types::{Dataset, RelationVocabulary, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// One relation per pair: the best real relation.
    Constrained,
    /// Every real relation of every pair competes for the top K.
    Unconstrained,
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Self::Constrained),
            "unconstrained" => Ok(Self::Unconstrained),
            other => Err(contract(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Constrained => "constrained",
            Self::Unconstrained => "unconstrained",
        })
    }
}

/// How per-image recalls are pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-image recalls.
    #[default]
    Image,
    /// Total hits over total ground-truth triplets.
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTriplet {
    pub image_id: u64,
    pub pair_index: usize,
    pub subject: usize,
    pub object: usize,
    pub relation: usize,
    pub score: f64,
}

/// `(subject, object, relation)`.
pub type Triplet = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub triplets: Vec<ScoredTriplet>,
    pub ground_truth: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub mean_recall: Vec<f64>,
    /// `per_class[k][r]`: recall of class `r` at `ks[k]`, `None` without ground truth.
    pub per_class: Vec<Vec<Option<f64>>>,
    pub gt_counts: Vec<usize>,
}

/// Triplets from F's distribution over R' for every pair of `sample`.
pub fn score_triplets(
    sample: &SceneSample,
    params_f: &LearnerParameters,
    prior: &FrequencyPrior,
    cfg: &HypersphereConfig,
    mode: ConstraintMode,
) -> Result<Vec<ScoredTriplet>> {
    let learner = Learner::new(params_f, cfg)?;
    score_with(&learner, sample, prior, mode)
}

fn score_with(
    learner: &Learner<'_>,
    sample: &SceneSample,
    prior: &FrequencyPrior,
    mode: ConstraintMode,
) -> Result<Vec<ScoredTriplet>> {
    let trace = learner.run_image(sample)?;
    let num_relations = learner.classes() - 1;
    let mut out = Vec::new();
    for (k, pair) in sample.pairs.iter().enumerate() {
        let prior_row = prior.lookup(pair.subject_class, pair.object_class)?;
        let z: Vec<f64> = trace.logits(k).iter().zip(prior_row).map(|(a, b)| a + b).collect();
        let dist = softmax(&z);
        let real = &dist.probs()[..num_relations];
        let triplet = |r: usize| ScoredTriplet {
            image_id: sample.image_id,
            pair_index: k,
            subject: pair.subject,
            object: pair.object,
            relation: r,
            score: real[r],
        };
        match mode {
            ConstraintMode::Constrained => out.push(triplet(argmax(real))),
            ConstraintMode::Unconstrained => out.extend((0..num_relations).map(triplet)),
        }
    }
    Ok(out)
}

/// Annotated triplets of `sample`; unannotated pairs contribute none.
pub fn annotated_ground_truth(sample: &SceneSample) -> Vec<Triplet> {
    sample
        .pairs
        .iter()
        .filter_map(|p| p.label.annotated().map(|r| (p.subject, p.object, r)))
        .collect()
}

/// Every `(i, j, r)` with `r` in the pair's true relation set.
pub fn oracle_ground_truth(sample: &SceneSample) -> Result<Vec<Triplet>> {
    let mut gt = Vec::new();
    for p in &sample.pairs {
        let set = p.true_relations.as_ref().ok_or(Error::NoOracle)?;
        gt.extend(set.iter().map(|&r| (p.subject, p.object, r)));
    }
    Ok(gt)
}

/// Total order: score descending, then pair index, then relation.
pub fn rank_order(a: &ScoredTriplet, b: &ScoredTriplet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.pair_index.cmp(&b.pair_index))
        .then(a.relation.cmp(&b.relation))
}

pub fn recall_at_k(
    images: &[ImageResult],
    num_relations: usize,
    ks: &[usize],
    averaging: Averaging,
) -> Result<RecallReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(contract("every K must be positive"));
    }
    let nk = ks.len();
    let mut gt_counts = vec![0usize; num_relations];
    // Pooled sums: (numerator, denominator) per K, and per K per class.
    let mut overall = vec![(0.0f64, 0.0f64); nk];
    let mut by_class = vec![vec![(0.0f64, 0.0f64); num_relations]; nk];

    for img in images {
        let gt: HashSet<Triplet> = img.ground_truth.iter().copied().collect();
        if gt.is_empty() {
            continue;
        }
        let mut per_class_gt = vec![0usize; num_relations];
        for &(_, _, r) in &gt {
            if r >= num_relations {
                return Err(contract(format!("ground-truth relation {r} outside R'")));
            }
            per_class_gt[r] += 1;
            gt_counts[r] += 1;
        }
        let mut ranked = img.triplets.clone();
        ranked.sort_by(rank_order);
        for (ki, &k) in ks.iter().enumerate() {
            let mut hits = vec![0usize; num_relations];
            let mut seen = HashSet::new();
            for t in ranked.iter().take(k) {
                let key = (t.subject, t.object, t.relation);
                if gt.contains(&key) && seen.insert(key) {
                    hits[t.relation] += 1;
                }
            }
            let total_hits: usize = hits.iter().sum();
            match averaging {
                Averaging::Image => {
                    overall[ki].0 += total_hits as f64 / gt.len() as f64;
                    overall[ki].1 += 1.0;
                }
                Averaging::Triplet => {
                    overall[ki].0 += total_hits as f64;
                    overall[ki].1 += gt.len() as f64;
                }
            }
            for r in 0..num_relations {
                if per_class_gt[r] == 0 {
                    continue;
                }
                let acc = &mut by_class[ki][r];
                match averaging {
                    Averaging::Image => {
                        acc.0 += hits[r] as f64 / per_class_gt[r] as f64;
                        acc.1 += 1.0;
                    }
                    Averaging::Triplet => {
                        acc.0 += hits[r] as f64;
                        acc.1 += per_class_gt[r] as f64;
                    }
                }
            }
        }
    }

    let ratio = |(n, d): (f64, f64)| if d > 0.0 { Some(n / d) } else { None };
    let recall = overall.iter().map(|&a| ratio(a).unwrap_or(0.0)).collect();
    let per_class: Vec<Vec<Option<f64>>> = by_class
        .iter()
        .map(|row| row.iter().map(|&a| ratio(a)).collect())
        .collect();
    let mean_recall = per_class
        .iter()
        .map(|row| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            }
        })
        .collect();
    Ok(RecallReport {
        ks: ks.to_vec(),
        recall,
        mean_recall,
        per_class,
        gt_counts,
    })
}

/// Recall against every true relation of every pair, not only the annotated one.
pub fn oracle_multilabel_recall(
    triplets: &[Vec<ScoredTriplet>],
    samples: &[SceneSample],
    num_relations: usize,
    ks: &[usize],
    averaging: Averaging,
) -> Result<RecallReport> {
    if triplets.len() != samples.len() {
        return Err(contract("one triplet list per sample is required"));
    }
    let images = triplets
        .iter()
        .zip(samples)
        .map(|(t, s)| {
            Ok(ImageResult {
                triplets: t.clone(),
                ground_truth: oracle_ground_truth(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    recall_at_k(&images, num_relations, ks, averaging)
}

/// Which ground truth to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    Annotated,
    Oracle,
}

/// Scores every image of `data` with F and computes recall.
pub fn evaluate(
    data: &Dataset,
    params_f: &LearnerParameters,
    prior: &FrequencyPrior,
    cfg: &HypersphereConfig,
    mode: ConstraintMode,
    ks: &[usize],
    truth: GroundTruth,
    averaging: Averaging,
) -> Result<RecallReport> {
    if truth == GroundTruth::Oracle && !data.has_oracle() {
        return Err(Error::NoOracle);
    }
    let learner = Learner::new(params_f, cfg)?;
    let images = data
        .images
        .iter()
        .map(|s| {
            Ok(ImageResult {
                triplets: score_with(&learner, s, prior, mode)?,
                ground_truth: match truth {
                    GroundTruth::Annotated => annotated_ground_truth(s),
                    GroundTruth::Oracle => oracle_ground_truth(s)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    recall_at_k(&images, data.num_relations, ks, averaging)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class: usize,
    pub name: String,
    pub gt_count: usize,
    pub recall: Vec<f64>,
}

/// Per-class recall table, most frequent classes first. Classes without
/// ground truth are left out.
pub fn per_class_report(report: &RecallReport, vocab: &RelationVocabulary) -> Vec<ClassRow> {
    let mut rows: Vec<ClassRow> = (0..report.gt_counts.len())
        .filter(|&r| report.gt_counts[r] > 0)
        .map(|r| ClassRow {
            class: r,
            name: vocab.name(r).to_string(),
            gt_count: report.gt_counts[r],
            recall: report.per_class.iter().map(|row| row[r].unwrap_or(0.0)).collect(),
        })
        .collect();
    rows.sort_by(|a, b| b.gt_count.cmp(&a.gt_count).then(a.class.cmp(&b.class)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use crate::model::L2Mode;
    use crate::types::{Label, PairExample};

    fn t(pair_index: usize, relation: usize, score: f64) -> ScoredTriplet {
        ScoredTriplet {
            image_id: 0,
            pair_index,
            subject: pair_index,
            object: pair_index + 1,
            relation,
            score,
        }
    }

    #[test]
    fn perfect_and_missed() {
        let img = ImageResult {
            triplets: vec![t(0, 1, 0.9), t(1, 0, 0.8)],
            ground_truth: vec![(0, 1, 1), (1, 2, 0)],
        };
        let r = recall_at_k(&[img], 3, &[2], Averaging::Image).unwrap();
        assert_eq!(r.recall, vec![1.0]);
        assert_eq!(r.mean_recall, vec![1.0]);

        let miss = ImageResult {
            triplets: vec![t(0, 2, 0.9)],
            ground_truth: vec![(0, 1, 1)],
        };
        let r = recall_at_k(&[miss], 3, &[5], Averaging::Image).unwrap();
        assert_eq!(r.recall, vec![0.0]);
    }

    #[test]
    fn zero_k_is_rejected() {
        assert!(recall_at_k(&[], 3, &[0], Averaging::Image).is_err());
    }

    #[test]
    fn empty_gt_images_and_classes_are_skipped() {
        let a = ImageResult {
            triplets: vec![t(0, 0, 0.9), t(1, 1, 0.1)],
            ground_truth: vec![(0, 1, 0), (1, 2, 1)],
        };
        let empty = ImageResult {
            triplets: vec![t(0, 0, 0.9)],
            ground_truth: vec![],
        };
        let r = recall_at_k(&[a, empty], 4, &[1], Averaging::Image).unwrap();
        assert_eq!(r.recall, vec![0.5]);
        // Classes 2 and 3 have no ground truth; mR averages classes 0 and 1.
        assert_eq!(r.mean_recall, vec![0.5]);
        assert_eq!(r.per_class[0], vec![Some(1.0), Some(0.0), None, None]);
        let vocab = RelationVocabulary::synthetic(4);
        let rows = per_class_report(&r, &vocab);
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn single_class_mr_equals_r() {
        let img = ImageResult {
            triplets: vec![t(0, 2, 0.3), t(1, 2, 0.6), t(2, 2, 0.1)],
            ground_truth: vec![(0, 1, 2), (2, 3, 2)],
        };
        let r = recall_at_k(&[img], 3, &[1, 2, 3], Averaging::Image).unwrap();
        assert_eq!(r.recall, r.mean_recall);
        assert_eq!(r.recall, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn micro_and_macro_differ() {
        let a = ImageResult {
            triplets: vec![t(0, 0, 0.9)],
            ground_truth: vec![(0, 1, 0)],
        };
        let b = ImageResult {
            triplets: vec![t(0, 0, 0.9)],
            ground_truth: vec![(0, 1, 1), (1, 2, 1), (2, 3, 1)],
        };
        let macro_r = recall_at_k(&[a.clone(), b.clone()], 2, &[1], Averaging::Image).unwrap();
        let micro_r = recall_at_k(&[a, b], 2, &[1], Averaging::Triplet).unwrap();
        assert_eq!(macro_r.recall, vec![0.5]);
        assert_eq!(micro_r.recall, vec![0.25]);
    }

    /// One class pair whose prior over R is `counts / sum(counts)`; γ = 0
    /// makes F's distribution equal to the prior.
    fn prior_only_setup(counts: [u64; 4]) -> (SceneSample, LearnerParameters, FrequencyPrior, HypersphereConfig) {
        let prior = FrequencyPrior::from_counts(counts.to_vec(), 0.0, 1, 4).unwrap();
        let params = LearnerParameters {
            w_subject: Matrix::identity(1),
            w_object: Matrix::identity(1),
            w_fuse: Matrix::identity(2),
            w_relation: Matrix::zeros(4, 2),
        };
        let cfg = HypersphereConfig {
            gamma: 0.0,
            d_ctx: 1,
            d_feat: 2,
            l2_mode: L2Mode::Normalized,
        };
        let pairs = (0..5)
            .map(|k| PairExample {
                subject: k,
                object: k + 1,
                subject_class: 0,
                object_class: 0,
                context_subject: vec![1.0],
                context_object: vec![1.0],
                union_feature: vec![1.0, 1.0],
                label: Label::Unannotated,
                true_relations: None,
            })
            .collect();
        let sample = SceneSample {
            image_id: 9,
            entity_classes: vec![0; 6],
            pairs,
        };
        (sample, params, prior, cfg)
    }

    #[test]
    fn triplet_cardinality_and_argmax_prefix() {
        let (sample, params, prior, cfg) = prior_only_setup([1, 2, 3, 4]);
        let c = score_triplets(&sample, &params, &prior, &cfg, ConstraintMode::Constrained).unwrap();
        assert_eq!(c.len(), 5);
        // no-relation (0.4) is ignored; best real relation is index 2 at 0.3.
        assert!(c.iter().all(|t| t.relation == 2 && (t.score - 0.3).abs() < 1e-12));
        let u = score_triplets(&sample, &params, &prior, &cfg, ConstraintMode::Unconstrained).unwrap();
        assert_eq!(u.len(), 5 * 3);
    }

    #[test]
    fn oracle_requires_truth() {
        let (sample, ..) = prior_only_setup([1, 2, 3, 4]);
        assert!(matches!(oracle_ground_truth(&sample), Err(Error::NoOracle)));
    }
}
