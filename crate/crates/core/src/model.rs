//! Forward passes of the two relation learners on the hypersphere, and the
//! matching backward pass.
//!
//! The supervised learner F scores all of R and adds the frequency prior to
//! its logits. The semi-supervised learner G scores R' only and never sees
//! the prior. Both fuse a pair as
//! `g = W_c · [W_s c_i, W_o c_j] ⊙ f_ij` and, in normalized mode, score it
//! by `γ · cos(W_k, g)`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::math::{dot, l2_normalize, norm, softmax, Matrix, RelationDistribution, EPS_NORM};
use crate::params::LearnerParameters;
use crate::types::SceneSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Mode {
    /// Cosine logits scaled by γ.
    Normalized,
    /// Plain `W · g`, the un-normalized baseline.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypersphereConfig {
    pub gamma: f64,
    pub d_ctx: usize,
    pub d_feat: usize,
    pub l2_mode: L2Mode,
}

impl Default for HypersphereConfig {
    fn default() -> Self {
        Self {
            gamma: 12.0,
            d_ctx: 16,
            d_feat: 32,
            l2_mode: L2Mode::Normalized,
        }
    }
}

impl HypersphereConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            v.push(format!("gamma {} must be finite and >= 0", self.gamma));
        }
        if self.d_ctx == 0 {
            v.push("d_ctx must be positive".into());
        }
        if self.d_feat == 0 {
            v.push("d_feat must be positive".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairActivation {
    pub g: Vec<f64>,
    pub logits: Vec<f64>,
    pub distribution: RelationDistribution,
}

fn check_inputs(
    params: &LearnerParameters,
    c_i: &[f64],
    c_j: &[f64],
    f_ij: &[f64],
) -> Result<()> {
    let (d_ctx, d_feat) = (params.d_ctx(), params.d_feat());
    if c_i.len() != d_ctx || c_j.len() != d_ctx || f_ij.len() != d_feat {
        return Err(contract(format!(
            "inputs of sizes {}/{}/{} do not match d_ctx = {d_ctx}, d_feat = {d_feat}",
            c_i.len(),
            c_j.len(),
            f_ij.len()
        )));
    }
    if params.w_fuse.cols() != 2 * d_ctx {
        return Err(contract("W_c must have 2·d_ctx columns"));
    }
    if c_i.iter().chain(c_j).chain(f_ij).any(|x| !x.is_finite()) {
        return Err(contract("non-finite pair input"));
    }
    Ok(())
}

/// `g = (W_c · [W_s c_i, W_o c_j]) ⊙ f_ij`.
pub fn fuse_pair(
    params: &LearnerParameters,
    c_i: &[f64],
    c_j: &[f64],
    f_ij: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(params, c_i, c_j, f_ij)?;
    let mut h = params.w_subject.matvec(c_i);
    h.extend(params.w_object.matvec(c_j));
    let u = params.w_fuse.matvec(&h);
    Ok(u.iter().zip(f_ij).map(|(a, b)| a * b).collect())
}

/// Logits before any prior: `γ · σ(W) σ(g)` or `W g`.
fn head_logits(w: &Matrix, g: &[f64], cfg: &HypersphereConfig) -> Vec<f64> {
    match cfg.l2_mode {
        L2Mode::Raw => w.matvec(g),
        L2Mode::Normalized => {
            let g_hat = l2_normalize(g);
            (0..w.rows())
                .map(|k| cfg.gamma * dot(&l2_normalize(w.row(k)), &g_hat))
                .collect()
        }
    }
}

/// Supervised learner: distribution over R with the prior row added.
pub fn forward_f(
    params: &LearnerParameters,
    prior_row: &[f64],
    c_i: &[f64],
    c_j: &[f64],
    f_ij: &[f64],
    cfg: &HypersphereConfig,
) -> Result<PairActivation> {
    if prior_row.len() != params.classes() {
        return Err(contract(format!(
            "prior row of length {} for a {}-way learner",
            prior_row.len(),
            params.classes()
        )));
    }
    if prior_row.iter().any(|x| !x.is_finite()) {
        return Err(contract("non-finite prior row"));
    }
    let g = fuse_pair(params, c_i, c_j, f_ij)?;
    let mut logits = head_logits(&params.w_relation, &g, cfg);
    for (z, s) in logits.iter_mut().zip(prior_row) {
        *z += s;
    }
    finish(g, logits)
}

/// Semi-supervised learner: distribution over R', no prior.
pub fn forward_g(
    params: &LearnerParameters,
    c_i: &[f64],
    c_j: &[f64],
    f_ij: &[f64],
    cfg: &HypersphereConfig,
) -> Result<PairActivation> {
    let g = fuse_pair(params, c_i, c_j, f_ij)?;
    let logits = head_logits(&params.w_relation, &g, cfg);
    finish(g, logits)
}

/// `softmax(logits_G / T)`; identical to [`forward_g`] at `T = 1`.
pub fn forward_g_tempered(
    params: &LearnerParameters,
    c_i: &[f64],
    c_j: &[f64],
    f_ij: &[f64],
    cfg: &HypersphereConfig,
    temperature: f64,
) -> Result<RelationDistribution> {
    check_temperature(temperature)?;
    let act = forward_g(params, c_i, c_j, f_ij, cfg)?;
    Ok(tempered(&act.logits, temperature))
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(contract(format!("temperature {t} must be finite and > 0")));
    }
    Ok(())
}

pub fn tempered(logits: &[f64], temperature: f64) -> RelationDistribution {
    if temperature == 1.0 {
        return softmax(logits);
    }
    let z: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    softmax(&z)
}

fn finish(g: Vec<f64>, logits: Vec<f64>) -> Result<PairActivation> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(contract("non-finite logits"));
    }
    let distribution = softmax(&logits);
    Ok(PairActivation {
        g,
        logits,
        distribution,
    })
}

/// One learner prepared for a batch: class rows are normalized once and
/// reused for every pair.
pub struct Learner<'a> {
    params: &'a LearnerParameters,
    cfg: &'a HypersphereConfig,
    head: Matrix,
    head_norms: Vec<f64>,
}

/// A context vector seen in one role (subject or object) within an image,
/// with its projections.
struct Slot {
    entity: usize,
    pair: usize,
    projected: Vec<f64>,
    fused: Vec<f64>,
}

struct PairTrace {
    subject_slot: usize,
    object_slot: usize,
    g_norm: f64,
    /// σ(g) in normalized mode, g itself in raw mode.
    g_dir: Vec<f64>,
    logits: Vec<f64>,
}

/// Forward state of every pair of one image, kept for the backward pass.
pub struct ImageTrace {
    subjects: Vec<Slot>,
    objects: Vec<Slot>,
    pairs: Vec<PairTrace>,
}

impl ImageTrace {
    /// Logits of pair `k` without any prior.
    pub fn logits(&self, k: usize) -> &[f64] {
        &self.pairs[k].logits
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Gradient accumulator for one learner. The class-weight gradient is held
/// with respect to the normalized rows until [`Learner::finish`].
pub struct LearnerGrad {
    params: LearnerParameters,
}

impl LearnerGrad {
    pub fn new(like: &LearnerParameters) -> Self {
        Self {
            params: like.zeros_like(),
        }
    }
}

fn slot_for(
    slots: &mut Vec<Slot>,
    entity: usize,
    pair: usize,
    context: &[f64],
    sample: &SceneSample,
    subject_role: bool,
    project: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
) -> usize {
    let ctx_of = |s: &Slot| {
        let p = &sample.pairs[s.pair];
        if subject_role {
            &p.context_subject
        } else {
            &p.context_object
        }
    };
    if let Some(k) = slots
        .iter()
        .position(|s| s.entity == entity && ctx_of(s).as_slice() == context)
    {
        return k;
    }
    let (projected, fused) = project(context);
    slots.push(Slot {
        entity,
        pair,
        projected,
        fused,
    });
    slots.len() - 1
}

impl<'a> Learner<'a> {
    pub fn new(params: &'a LearnerParameters, cfg: &'a HypersphereConfig) -> Result<Self> {
        params.check_shapes(cfg.d_ctx, cfg.d_feat, params.classes())?;
        let (head, head_norms) = match cfg.l2_mode {
            L2Mode::Raw => (params.w_relation.clone(), vec![1.0; params.classes()]),
            L2Mode::Normalized => {
                let w = &params.w_relation;
                let norms: Vec<f64> = (0..w.rows()).map(|k| norm(w.row(k))).collect();
                let head = Matrix::from_fn(w.rows(), w.cols(), |r, c| {
                    if norms[r] > EPS_NORM {
                        w.get(r, c) / norms[r]
                    } else {
                        w.get(r, c)
                    }
                });
                (head, norms)
            }
        };
        Ok(Self {
            params,
            cfg,
            head,
            head_norms,
        })
    }

    pub fn classes(&self) -> usize {
        self.params.classes()
    }

    /// Runs every pair of `sample`. Logits exclude any prior.
    pub fn run_image(&self, sample: &SceneSample) -> Result<ImageTrace> {
        let d = self.cfg.d_ctx;
        let w_c = &self.params.w_fuse;
        let mut subjects = Vec::new();
        let mut objects = Vec::new();
        let mut pairs = Vec::with_capacity(sample.pairs.len());
        for (k, p) in sample.pairs.iter().enumerate() {
            check_inputs(self.params, &p.context_subject, &p.context_object, &p.union_feature)?;
            let s = slot_for(&mut subjects, p.subject, k, &p.context_subject, sample, true, |c| {
                let a = self.params.w_subject.matvec(c);
                let fused = w_c.matvec_block(0, &a);
                (a, fused)
            });
            let o = slot_for(&mut objects, p.object, k, &p.context_object, sample, false, |c| {
                let b = self.params.w_object.matvec(c);
                let fused = w_c.matvec_block(d, &b);
                (b, fused)
            });
            let g: Vec<f64> = subjects[s]
                .fused
                .iter()
                .zip(&objects[o].fused)
                .zip(&p.union_feature)
                .map(|((x, y), f)| (x + y) * f)
                .collect();
            let (g_norm, g_dir, logits) = match self.cfg.l2_mode {
                L2Mode::Raw => {
                    let z = self.head.matvec(&g);
                    (1.0, g, z)
                }
                L2Mode::Normalized => {
                    let n = norm(&g);
                    let dir = if n > EPS_NORM {
                        g.iter().map(|x| x / n).collect()
                    } else {
                        g
                    };
                    let mut z = self.head.matvec(&dir);
                    z.iter_mut().for_each(|x| *x *= self.cfg.gamma);
                    (n, dir, z)
                }
            };
            if logits.iter().any(|x| !x.is_finite()) {
                return Err(contract(format!(
                    "image {}: non-finite logits for pair ({}, {})",
                    sample.image_id, p.subject, p.object
                )));
            }
            pairs.push(PairTrace {
                subject_slot: s,
                object_slot: o,
                g_norm,
                g_dir,
                logits,
            });
        }
        Ok(ImageTrace {
            subjects,
            objects,
            pairs,
        })
    }

    /// Accumulates the gradient for upstream logit gradients `dlogits[k]`
    /// of each pair `k` (entries for pairs outside the loss may be empty).
    pub fn backward_image(
        &self,
        sample: &SceneSample,
        trace: &ImageTrace,
        dlogits: &[Vec<f64>],
        grad: &mut LearnerGrad,
    ) {
        let d = self.cfg.d_ctx;
        let d_feat = self.cfg.d_feat;
        let w_c = &self.params.w_fuse;
        let g_acc = &mut grad.params;
        let mut d_subject = vec![vec![0.0; d_feat]; trace.subjects.len()];
        let mut d_object = vec![vec![0.0; d_feat]; trace.objects.len()];
        for ((p, pt), delta) in sample.pairs.iter().zip(&trace.pairs).zip(dlogits) {
            if delta.is_empty() || delta.iter().all(|&x| x == 0.0) {
                continue;
            }
            let mut dg = vec![0.0; d_feat];
            match self.cfg.l2_mode {
                L2Mode::Raw => {
                    g_acc.w_relation.add_outer(1.0, delta, &pt.g_dir);
                    self.head.matvec_t_block_into(0, delta, &mut dg);
                }
                L2Mode::Normalized => {
                    let gamma = self.cfg.gamma;
                    g_acc.w_relation.add_outer(gamma, delta, &pt.g_dir);
                    let mut d_dir = vec![0.0; d_feat];
                    self.head.matvec_t_block_into(0, delta, &mut d_dir);
                    if pt.g_norm > EPS_NORM {
                        let radial = dot(&d_dir, &pt.g_dir);
                        for ((o, &dd), &gd) in dg.iter_mut().zip(&d_dir).zip(&pt.g_dir) {
                            *o = gamma * (dd - radial * gd) / pt.g_norm;
                        }
                    } else {
                        // Below the normalization threshold g passes through unchanged.
                        for (o, &dd) in dg.iter_mut().zip(&d_dir) {
                            *o = gamma * dd;
                        }
                    }
                }
            }
            for (((ds, dob), &dgk), &f) in d_subject[pt.subject_slot]
                .iter_mut()
                .zip(d_object[pt.object_slot].iter_mut())
                .zip(&dg)
                .zip(&p.union_feature)
            {
                let du = dgk * f;
                *ds += du;
                *dob += du;
            }
        }
        for (slot, du) in trace.subjects.iter().zip(&d_subject) {
            let c = &sample.pairs[slot.pair].context_subject;
            g_acc.w_fuse.add_outer_block(0, 1.0, du, &slot.projected);
            let mut da = vec![0.0; d];
            w_c.matvec_t_block_into(0, du, &mut da);
            g_acc.w_subject.add_outer(1.0, &da, c);
        }
        for (slot, du) in trace.objects.iter().zip(&d_object) {
            let c = &sample.pairs[slot.pair].context_object;
            g_acc.w_fuse.add_outer_block(d, 1.0, du, &slot.projected);
            let mut db = vec![0.0; d];
            w_c.matvec_t_block_into(d, du, &mut db);
            g_acc.w_object.add_outer(1.0, &db, c);
        }
    }

    /// Converts the accumulated class-row gradient to the raw parameters.
    pub fn finish(&self, grad: LearnerGrad) -> LearnerParameters {
        let mut out = grad.params;
        if self.cfg.l2_mode == L2Mode::Normalized {
            for k in 0..self.head.rows() {
                let n = self.head_norms[k];
                let row = out.w_relation.row_mut(k);
                if n > EPS_NORM {
                    let w_hat = self.head.row(k);
                    let radial = dot(row, w_hat);
                    for (x, &wh) in row.iter_mut().zip(w_hat) {
                        *x = (*x - radial * wh) / n;
                    }
                } else {
                    row.fill(0.0);
                }
            }
        }
        out
    }
}
