//! Relation losses of both learners, the distillation term and their
//! analytic gradients.
//!
//! Per image, with pairs split into annotated (`R^L`) and unannotated
//! (`R^U`) sets:
//!
//! ```text
//! L_F  = −mean_k ln p_k[r_k]                       (unannotated → no-relation)
//! L_G  = −mean_{R^L} ln q_k[r_k]  −  λ_G · mean_{R^U} H(q_k)
//! L_KD = λ_GF · Σ_{* ∈ {L,U}} Σ_{k ∈ R^*} w_k · KL(q̃_k ‖ p'_k)
//! ```
//!
//! `q̃ = softmax(z_G / T)` and the KD weights are treated as constants, so
//! the distillation term only moves F. The batch loss is the mean of the
//! per-image losses.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::math::{entropy, kl_divergence, log_softmax, RelationDistribution};
use crate::model::{check_temperature, HypersphereConfig, L2Mode, Learner, LearnerGrad};
use crate::params::{GradientSet, LearnerParameters};
use crate::prior::FrequencyPrior;
use crate::types::{Label, PairExample, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdScheme {
    /// `w = 1 / |R^*|`.
    Ukd,
    /// `w_k = Σ_m H(q_m) / H(q_k)`: confident teacher outputs weigh more.
    Ckd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    pub scheme: KdScheme,
    pub temperature: f64,
    pub lambda_gf: f64,
    pub lambda_g: f64,
    pub kd_start_iteration: u64,
    pub entropy_floor: f64,
    /// Co-train G at all. Off for the `baseline` and `L2` variants.
    pub train_teacher: bool,
    /// Rescale F's first |R'| probabilities to sum to one before the KL.
    pub renormalize_student: bool,
    /// Divide F's logits by T on the student side as well.
    pub temper_student: bool,
    /// Multiply the distillation term by T².
    pub t_squared: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            scheme: KdScheme::Ckd,
            temperature: 1.5,
            lambda_gf: 0.1,
            lambda_g: 0.1,
            kd_start_iteration: 10_000,
            entropy_floor: 1e-6,
            train_teacher: true,
            renormalize_student: true,
            temper_student: false,
            t_squared: false,
        }
    }
}

impl KdConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            v.push(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.lambda_gf >= 0.0 && self.lambda_gf.is_finite()) {
            v.push(format!("lambda_gf {} must be >= 0", self.lambda_gf));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            v.push(format!("lambda_g {} must be >= 0", self.lambda_g));
        }
        if !(self.entropy_floor > 0.0 && self.entropy_floor.is_finite()) {
            v.push(format!("entropy_floor {} must be > 0", self.entropy_floor));
        }
        v
    }

    /// Whether the distillation terms are evaluated at `iteration`.
    pub fn kd_active(&self, iteration: u64) -> bool {
        self.train_teacher && iteration >= self.kd_start_iteration
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_f: f64,
    pub loss_g_supervised: f64,
    pub loss_g_entropy: f64,
    /// `Σ w · KL` over annotated pairs, before `λ_GF`.
    pub loss_kd_labeled: f64,
    /// `Σ w · KL` over unannotated pairs, before `λ_GF`.
    pub loss_kd_unlabeled: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(&mut self, kd: &KdConfig) {
        self.total = self.loss_f + self.loss_g_supervised - kd.lambda_g * self.loss_g_entropy
            + kd.lambda_gf * (self.loss_kd_labeled + self.loss_kd_unlabeled);
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.loss_f += s * other.loss_f;
        self.loss_g_supervised += s * other.loss_g_supervised;
        self.loss_g_entropy += s * other.loss_g_entropy;
        self.loss_kd_labeled += s * other.loss_kd_labeled;
        self.loss_kd_unlabeled += s * other.loss_kd_unlabeled;
        self.total += s * other.total;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.loss_f,
            self.loss_g_supervised,
            self.loss_g_entropy,
            self.loss_kd_labeled,
            self.loss_kd_unlabeled,
            self.total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn ln_prob(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Mean negative log-likelihood of F over one image's pairs. Unannotated
/// pairs target the last (`no-relation`) class.
pub fn loss_f(predictions: &[(&PairExample, &RelationDistribution)]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::NoPairs);
    }
    let mut sum = 0.0;
    for (pair, dist) in predictions {
        let target = pair.label.full_target(dist.arity() - 1);
        if target >= dist.arity() {
            return Err(contract(format!("target {target} outside a {}-way distribution", dist.arity())));
        }
        sum -= ln_prob(dist.probs()[target]);
    }
    Ok(sum / predictions.len() as f64)
}

/// `(supervised, entropy_term)` of G for one image. The caller combines
/// them as `supervised − λ_G · entropy_term`.
pub fn loss_g(
    labeled: &[(&PairExample, &RelationDistribution)],
    unlabeled: &[&RelationDistribution],
) -> Result<(f64, f64)> {
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(Error::NoPairs);
    }
    let mut supervised = 0.0;
    for (pair, dist) in labeled {
        let r = pair
            .label
            .annotated()
            .ok_or_else(|| contract("unannotated pair in the labeled set"))?;
        if r >= dist.arity() {
            return Err(contract(format!("relation {r} outside R'")));
        }
        supervised -= ln_prob(dist.probs()[r]);
    }
    if !labeled.is_empty() {
        supervised /= labeled.len() as f64;
    }
    let entropy_term = if unlabeled.is_empty() {
        0.0
    } else {
        unlabeled.iter().map(|d| entropy(d)).sum::<f64>() / unlabeled.len() as f64
    };
    Ok((supervised, entropy_term))
}

/// Per-pair distillation weights over one set of teacher distributions.
pub fn kd_weights(distributions: &[RelationDistribution], scheme: KdScheme, entropy_floor: f64) -> Vec<f64> {
    let n = distributions.len();
    match scheme {
        KdScheme::Ukd => vec![1.0 / n as f64; n],
        KdScheme::Ckd => {
            let h: Vec<f64> = distributions.iter().map(|d| entropy(d).max(entropy_floor)).collect();
            ckd_from_entropies(&h)
        }
    }
}

fn ckd_from_entropies(floored: &[f64]) -> Vec<f64> {
    let total: f64 = floored.iter().sum();
    floored.iter().map(|h| total / h).collect()
}

/// One distillation pair: teacher `q̃`, student `p'` and its weight.
#[derive(Debug, Clone, Copy)]
pub struct KdTerm<'a> {
    pub teacher: &'a RelationDistribution,
    pub student: &'a RelationDistribution,
    pub weight: f64,
}

/// `(λ_GF · Σ_L w KL, λ_GF · Σ_U w KL)`.
pub fn loss_kd(labeled: &[KdTerm<'_>], unlabeled: &[KdTerm<'_>], lambda_gf: f64) -> Result<(f64, f64)> {
    let sum = |terms: &[KdTerm<'_>]| -> Result<f64> {
        let mut s = 0.0;
        for t in terms {
            s += t.weight * kl_divergence(t.teacher, t.student)?;
        }
        Ok(lambda_gf * s)
    };
    Ok((sum(labeled)?, sum(unlabeled)?))
}

/// Per-pair quantities of the teacher needed by the distillation term.
struct Teacher {
    /// `ln q̃`, tempered.
    log_tempered: Vec<f64>,
    /// `H(q)`, untempered.
    entropy: f64,
}

/// Combined loss over `batch` and its gradient with respect to all eight
/// parameter matrices. `cfg.l2_mode` applies to F; G is always normalized.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_and_gradients(
    batch: &[SceneSample],
    params_f: &LearnerParameters,
    params_g: &LearnerParameters,
    prior: &FrequencyPrior,
    cfg: &HypersphereConfig,
    kd: &KdConfig,
    iteration: u64,
) -> Result<(LossBreakdown, GradientSet)> {
    check_temperature(kd.temperature)?;
    let images: Vec<&SceneSample> = batch.iter().filter(|s| !s.pairs.is_empty()).collect();
    if images.is_empty() {
        return Err(Error::NoPairs);
    }
    let num_relations = params_g.classes();
    if params_f.classes() != num_relations + 1 {
        return Err(contract(format!(
            "F has {} classes but G has {num_relations}; F needs exactly one more",
            params_f.classes()
        )));
    }
    if prior.num_classes() != params_f.classes() {
        return Err(contract("prior arity differs from F"));
    }
    let g_cfg = HypersphereConfig {
        l2_mode: L2Mode::Normalized,
        ..cfg.clone()
    };
    let learner_f = Learner::new(params_f, cfg)?;
    let learner_g = Learner::new(params_g, &g_cfg)?;
    let mut grad_f = LearnerGrad::new(params_f);
    let mut grad_g = LearnerGrad::new(params_g);
    let image_scale = 1.0 / images.len() as f64;
    let kd_on = kd.kd_active(iteration);
    let t = kd.temperature;
    let student_t = if kd.temper_student { t } else { 1.0 };
    let kd_scale = if kd.t_squared { t * t } else { 1.0 };
    let mut total = LossBreakdown::default();

    for img in images {
        let n = img.pairs.len();
        let mut part = LossBreakdown::default();

        let trace_f = learner_f.run_image(img)?;
        let mut d_f: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut f_logits: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (k, pair) in img.pairs.iter().enumerate() {
            let prior_row = prior.lookup(pair.subject_class, pair.object_class)?;
            let z: Vec<f64> = trace_f.logits(k).iter().zip(prior_row).map(|(a, b)| a + b).collect();
            let logp = log_softmax(&z);
            let target = pair.label.full_target(num_relations);
            part.loss_f -= logp[target];
            let mut dz: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            dz[target] -= 1.0;
            dz.iter_mut().for_each(|x| *x *= image_scale / n as f64);
            d_f.push(dz);
            f_logits.push(z);
        }
        part.loss_f /= n as f64;

        if kd.train_teacher {
            let trace_g = learner_g.run_image(img)?;
            let labeled: Vec<usize> = (0..n).filter(|&k| img.pairs[k].label != Label::Unannotated).collect();
            let unlabeled: Vec<usize> = (0..n).filter(|&k| img.pairs[k].label == Label::Unannotated).collect();
            let mut d_g: Vec<Vec<f64>> = vec![vec![0.0; num_relations]; n];
            let mut teachers: Vec<Teacher> = Vec::with_capacity(n);
            for k in 0..n {
                let z = trace_g.logits(k);
                let logq = log_softmax(z);
                let h = -logq.iter().map(|l| l.exp() * l).sum::<f64>();
                let log_tempered = if kd_on { log_softmax(&scale(z, 1.0 / t)) } else { Vec::new() };
                teachers.push(Teacher {
                    log_tempered,
                    entropy: h.max(0.0),
                });
                let dz = &mut d_g[k];
                match img.pairs[k].label {
                    Label::Annotated(r) => {
                        if r >= num_relations {
                            return Err(contract(format!("relation {r} outside R'")));
                        }
                        let w = image_scale / labeled.len() as f64;
                        part.loss_g_supervised -= logq[r] / labeled.len() as f64;
                        for (d, l) in dz.iter_mut().zip(&logq) {
                            *d += w * l.exp();
                        }
                        dz[r] -= w;
                    }
                    Label::Unannotated => {
                        let w = image_scale / unlabeled.len() as f64;
                        part.loss_g_entropy += h / unlabeled.len() as f64;
                        // d(−λ_G H)/dz_m = λ_G q_m (ln q_m + H)
                        for (d, l) in dz.iter_mut().zip(&logq) {
                            *d += kd.lambda_g * w * l.exp() * (l + h);
                        }
                    }
                }
            }
            learner_g.backward_image(img, &trace_g, &d_g, &mut grad_g);

            if kd_on {
                for (set, slot) in [(&labeled, &mut part.loss_kd_labeled), (&unlabeled, &mut part.loss_kd_unlabeled)] {
                    if set.is_empty() {
                        continue;
                    }
                    let weights = match kd.scheme {
                        KdScheme::Ukd => vec![1.0 / set.len() as f64; set.len()],
                        KdScheme::Ckd => ckd_from_entropies(
                            &set.iter().map(|&k| teachers[k].entropy.max(kd.entropy_floor)).collect::<Vec<_>>(),
                        ),
                    };
                    for (&k, &w) in set.iter().zip(&weights) {
                        let (kl, dkl) = student_kl(
                            &teachers[k].log_tempered,
                            &f_logits[k],
                            student_t,
                            kd.renormalize_student,
                        );
                        *slot += kd_scale * w * kl;
                        let coef = image_scale * kd.lambda_gf * kd_scale * w;
                        for (d, g) in d_f[k].iter_mut().zip(&dkl) {
                            *d += coef * g;
                        }
                    }
                }
            }
        }
        learner_f.backward_image(img, &trace_f, &d_f, &mut grad_f);
        part.combine(kd);
        total.add_scaled(&part, image_scale);
    }
    total.combine(kd);
    let grads = GradientSet {
        f: learner_f.finish(grad_f),
        g: if kd.train_teacher {
            learner_g.finish(grad_g)
        } else {
            params_g.zeros_like()
        },
    };
    Ok((total, grads))
}

fn scale(z: &[f64], s: f64) -> Vec<f64> {
    if s == 1.0 {
        return z.to_vec();
    }
    z.iter().map(|x| x * s).collect()
}

/// `KL(q̃ ‖ p')` and its gradient with respect to F's full logit vector.
/// The teacher has |R'| entries, the student logits |R'| + 1.
fn student_kl(log_teacher: &[f64], f_logits: &[f64], student_t: f64, renormalize: bool) -> (f64, Vec<f64>) {
    let k = log_teacher.len();
    let zs = scale(f_logits, 1.0 / student_t);
    let log_student = if renormalize {
        log_softmax(&zs[..k])
    } else {
        log_softmax(&zs)
    };
    let mut kl = 0.0;
    let mut grad = vec![0.0; f_logits.len()];
    for m in 0..k {
        let lq = log_teacher[m];
        let q = lq.exp();
        if q > 0.0 {
            kl += q * (lq - log_student[m]);
        }
        grad[m] = (log_student[m].exp() - q) / student_t;
    }
    if !renormalize {
        // Σ q̃ = 1, so the no-relation logit only enters through the normalizer.
        grad[k] = log_student[k].exp() / student_t;
    }
    (kl.max(0.0), grad)
}
