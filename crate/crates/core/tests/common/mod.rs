//! Independent reference implementations used as test oracles. Nothing
//! here calls the crate's loss, model or metric code.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgkd::loss::{KdConfig, KdScheme};
use sgkd::math::Matrix;
use sgkd::model::{HypersphereConfig, L2Mode};
use sgkd::{FrequencyPrior, Label, LearnerParameters, PairExample, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Labels {
    Mixed,
    AllAnnotated,
    AllUnannotated,
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols, scale)).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, d_ctx: usize, d_feat: usize, classes: usize) -> LearnerParameters {
    LearnerParameters {
        w_subject: random_matrix(rng, d_ctx, d_ctx, 1.0),
        w_object: random_matrix(rng, d_ctx, d_ctx, 1.0),
        w_fuse: random_matrix(rng, d_feat, 2 * d_ctx, 1.0),
        w_relation: random_matrix(rng, classes, d_feat, 1.0),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn random_sample(
    rng: &mut ChaCha8Rng,
    image_id: u64,
    entities: usize,
    n_pairs: usize,
    n_o: usize,
    n_r: usize,
    d_ctx: usize,
    d_feat: usize,
    labels: Labels,
) -> SceneSample {
    let classes: Vec<usize> = (0..entities).map(|_| rng.random_range(0..n_o)).collect();
    let contexts: Vec<Vec<f64>> = (0..entities).map(|_| random_vec(rng, d_ctx, 1.0)).collect();
    let mut all: Vec<(usize, usize)> = (0..entities)
        .flat_map(|i| (0..entities).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    // Partial Fisher-Yates keeps the chosen pairs in random order.
    for k in 0..n_pairs.min(all.len()) {
        let m = rng.random_range(k..all.len());
        all.swap(k, m);
    }
    all.truncate(n_pairs);
    let pairs = all
        .into_iter()
        .enumerate()
        .map(|(k, (i, j))| {
            let annotated = match labels {
                Labels::AllAnnotated => true,
                Labels::AllUnannotated => false,
                Labels::Mixed => k % 2 == 0,
            };
            let mut truth: Vec<usize> = (0..n_r).filter(|_| rng.random::<f64>() < 0.35).collect();
            let label = if annotated {
                let r = rng.random_range(0..n_r);
                if !truth.contains(&r) {
                    truth.push(r);
                    truth.sort_unstable();
                }
                Label::Annotated(r)
            } else {
                Label::Unannotated
            };
            PairExample {
                subject: i,
                object: j,
                subject_class: classes[i],
                object_class: classes[j],
                context_subject: contexts[i].clone(),
                context_object: contexts[j].clone(),
                union_feature: random_vec(rng, d_feat, 1.0),
                label,
                true_relations: Some(truth),
            }
        })
        .collect();
    SceneSample {
        image_id,
        entity_classes: classes,
        pairs,
    }
}

pub fn random_prior(rng: &mut ChaCha8Rng, n_o: usize, n_r: usize) -> FrequencyPrior {
    let counts = (0..n_o * n_o * (n_r + 1)).map(|_| rng.random_range(0..6u64)).collect();
    FrequencyPrior::from_counts(counts, 1.0, n_o, n_r + 1).unwrap()
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

/// Logits of one pair before the prior, straight from the definitions.
pub fn naive_logits(p: &LearnerParameters, pair: &PairExample, normalized: bool, gamma: f64) -> Vec<f64> {
    let mut h = matvec(&p.w_subject, &pair.context_subject);
    h.extend(matvec(&p.w_object, &pair.context_object));
    let u = matvec(&p.w_fuse, &h);
    let g: Vec<f64> = u.iter().zip(&pair.union_feature).map(|(a, b)| a * b).collect();
    let raw = matvec(&p.w_relation, &g);
    if !normalized {
        return raw;
    }
    let g_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..p.w_relation.rows())
        .map(|k| {
            let w_norm = p.w_relation.row(k).iter().map(|x| x * x).sum::<f64>().sqrt();
            gamma * raw[k] / (w_norm * g_norm)
        })
        .collect()
}

pub fn naive_log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    naive_log_softmax(z).into_iter().map(f64::exp).collect()
}

pub fn naive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Teacher outputs held fixed while differencing: tempered distribution and
/// distillation weight for every pair of every image.
pub struct FrozenTeacher {
    pub tempered: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<Vec<f64>>,
}

pub fn freeze_teacher(batch: &[SceneSample], pg: &LearnerParameters, model: &HypersphereConfig, kd: &KdConfig) -> FrozenTeacher {
    let mut tempered = Vec::new();
    let mut weights = Vec::new();
    for img in batch {
        let logits: Vec<Vec<f64>> = img.pairs.iter().map(|p| naive_logits(pg, p, true, model.gamma)).collect();
        tempered.push(
            logits
                .iter()
                .map(|z| naive_softmax(&z.iter().map(|x| x / kd.temperature).collect::<Vec<_>>()))
                .collect(),
        );
        let h: Vec<f64> = logits.iter().map(|z| naive_entropy(&naive_softmax(z)).max(kd.entropy_floor)).collect();
        let mut w = vec![0.0; img.pairs.len()];
        for annotated in [true, false] {
            let set: Vec<usize> = (0..img.pairs.len())
                .filter(|&k| (img.pairs[k].label != Label::Unannotated) == annotated)
                .collect();
            let total: f64 = set.iter().map(|&k| h[k]).sum();
            for &k in &set {
                w[k] = match kd.scheme {
                    KdScheme::Ukd => 1.0 / set.len() as f64,
                    KdScheme::Ckd => total / h[k],
                };
            }
        }
        weights.push(w);
    }
    FrozenTeacher { tempered, weights }
}

/// The combined objective averaged over images, with the teacher side of
/// the distillation term read from `teacher`.
#[allow(clippy::too_many_arguments)]
pub fn naive_total_loss(
    batch: &[SceneSample],
    pf: &LearnerParameters,
    pg: &LearnerParameters,
    prior: &FrequencyPrior,
    model: &HypersphereConfig,
    kd: &KdConfig,
    iteration: u64,
    teacher: &FrozenTeacher,
) -> f64 {
    let n_r = pg.w_relation.rows();
    let normalized = model.l2_mode == L2Mode::Normalized;
    let kd_on = kd.train_teacher && iteration >= kd.kd_start_iteration;
    let mut total = 0.0;
    for (b, img) in batch.iter().enumerate() {
        let n = img.pairs.len() as f64;
        let mut loss_f = 0.0;
        let mut sup = (0.0, 0usize);
        let mut ent = (0.0, 0usize);
        let mut distill = 0.0;
        for (k, pair) in img.pairs.iter().enumerate() {
            let prior_row = prior.lookup(pair.subject_class, pair.object_class).unwrap();
            let zf: Vec<f64> = naive_logits(pf, pair, normalized, model.gamma)
                .iter()
                .zip(prior_row)
                .map(|(a, b)| a + b)
                .collect();
            let target = match pair.label {
                Label::Annotated(r) => r,
                Label::Unannotated => n_r,
            };
            loss_f -= naive_log_softmax(&zf)[target];
            if !kd.train_teacher {
                continue;
            }
            let q = naive_softmax(&naive_logits(pg, pair, true, model.gamma));
            match pair.label {
                Label::Annotated(r) => {
                    sup.0 -= q[r].ln();
                    sup.1 += 1;
                }
                Label::Unannotated => {
                    ent.0 += naive_entropy(&q);
                    ent.1 += 1;
                }
            }
            if kd_on {
                let st = if kd.temper_student { kd.temperature } else { 1.0 };
                let zs: Vec<f64> = zf.iter().map(|x| x / st).collect();
                let student: Vec<f64> = if kd.renormalize_student {
                    naive_softmax(&zs[..n_r])
                } else {
                    naive_softmax(&zs)[..n_r].to_vec()
                };
                let qt = &teacher.tempered[b][k];
                let kl: f64 = (0..n_r).map(|m| qt[m] * (qt[m].ln() - student[m].ln())).sum();
                let t2 = if kd.t_squared { kd.temperature * kd.temperature } else { 1.0 };
                distill += t2 * teacher.weights[b][k] * kl;
            }
        }
        let mut image = loss_f / n;
        if sup.1 > 0 {
            image += sup.0 / sup.1 as f64;
        }
        if ent.1 > 0 {
            image -= kd.lambda_g * ent.0 / ent.1 as f64;
        }
        image += kd.lambda_gf * distill;
        total += image;
    }
    total / batch.len() as f64
}

/// One pair's probabilities over R' and the pair's position.
pub struct BrutePair {
    pub subject: usize,
    pub object: usize,
    pub probs: Vec<f64>,
}

/// Candidate triplets `(pair index, relation, score)` per the prediction mode.
fn candidates(pairs: &[BrutePair], constrained: bool) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (k, p) in pairs.iter().enumerate() {
        for r in 0..p.probs.len() {
            // r is the constrained choice iff no other relation beats it.
            let best = (0..p.probs.len()).all(|s| p.probs[r] > p.probs[s] || (p.probs[r] == p.probs[s] && r <= s));
            if !constrained || best {
                out.push((k, r, p.probs[r]));
            }
        }
    }
    out
}

fn ranked_before(a: &(usize, usize, f64), b: &(usize, usize, f64)) -> bool {
    a.2 > b.2 || (a.2 == b.2 && (a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)))
}

/// `(R@K, per-class recall, mR@K)` by direct enumeration: a candidate is in
/// the top K when fewer than K candidates rank strictly before it.
pub fn brute_force_recall(
    images: &[(Vec<BrutePair>, Vec<(usize, usize, usize)>)],
    num_relations: usize,
    k: usize,
    constrained: bool,
) -> (f64, Vec<Option<f64>>, f64) {
    let mut image_recalls = Vec::new();
    let mut class_recalls: Vec<Vec<f64>> = vec![Vec::new(); num_relations];
    for (pairs, gt) in images {
        let gt: HashSet<(usize, usize, usize)> = gt.iter().copied().collect();
        if gt.is_empty() {
            continue;
        }
        let cands = candidates(pairs, constrained);
        let top: HashSet<(usize, usize, usize)> = cands
            .iter()
            .filter(|c| cands.iter().filter(|d| ranked_before(d, c)).count() < k)
            .map(|&(p, r, _)| (pairs[p].subject, pairs[p].object, r))
            .collect();
        let hits = gt.intersection(&top).count();
        image_recalls.push(hits as f64 / gt.len() as f64);
        for (r, acc) in class_recalls.iter_mut().enumerate() {
            let gt_r: Vec<_> = gt.iter().filter(|t| t.2 == r).collect();
            if !gt_r.is_empty() {
                let h = gt_r.iter().filter(|t| top.contains(t)).count();
                acc.push(h as f64 / gt_r.len() as f64);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let recall = if image_recalls.is_empty() { 0.0 } else { mean(&image_recalls) };
    let per_class: Vec<Option<f64>> = class_recalls
        .iter()
        .map(|v| if v.is_empty() { None } else { Some(mean(v)) })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mr = if present.is_empty() { 0.0 } else { mean(&present) };
    (recall, per_class, mr)
}
