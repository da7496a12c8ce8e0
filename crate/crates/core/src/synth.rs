//! Synthetic scene-graph corpora with a long-tailed relation distribution,
//! missing annotations (truly related pairs left unannotated) and collapsed
//! multi-relation annotations (only one of several valid relations kept,
//! biased toward frequent classes).
//!
//! Relation index `r` is also its frequency rank: index 0 is the head class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, substream, StreamRng};
use crate::types::{Dataset, Label, PairExample, SceneSample};

/// Probability that a related pair's primary relation is its class pair's
/// preferred relation rather than a fresh Zipf draw.
const PAIR_AFFINITY: f64 = 0.6;
/// Compatible relations per relation, drawn from ranks within distance 2.
const COMPAT_PER_RELATION: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_images: usize,
    pub entities_min: usize,
    pub entities_max: usize,
    pub num_entity_classes: usize,
    /// |R'|.
    pub num_relations: usize,
    pub zipf_s: f64,
    /// Ordered pairs kept per image; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_per_image: Option<usize>,
    pub afn_rate: f64,
    pub aptp_multi_rate: f64,
    pub majority_bias: f64,
    pub noise_sigma: f64,
    pub d_ctx: usize,
    pub d_feat: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl GeneratorConfig {
    /// The desk-scale reference corpus.
    pub fn reference() -> Self {
        Self {
            num_images: 500,
            entities_min: 6,
            entities_max: 10,
            num_entity_classes: 20,
            num_relations: 10,
            zipf_s: 1.5,
            pairs_per_image: None,
            afn_rate: 0.5,
            aptp_multi_rate: 0.4,
            majority_bias: 2.0,
            noise_sigma: 0.3,
            d_ctx: 16,
            d_feat: 32,
        }
    }

    /// Annotations equal the oracle: no dropping, single relations, no bias.
    pub fn bias_free() -> Self {
        Self {
            afn_rate: 0.0,
            aptp_multi_rate: 0.0,
            majority_bias: 0.0,
            ..Self::reference()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, rate) in [("afn_rate", self.afn_rate), ("aptp_multi_rate", self.aptp_multi_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                v.push(format!("{name} out of [0,1]"));
            }
        }
        for (name, x) in [
            ("zipf_s", self.zipf_s),
            ("majority_bias", self.majority_bias),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} must be finite and >= 0"));
            }
        }
        if self.num_relations < 2 {
            v.push("num_relations must be at least 2".into());
        }
        if self.num_entity_classes < 2 {
            v.push("num_entity_classes must be at least 2".into());
        }
        if self.entities_min < 2 || self.entities_max < self.entities_min {
            v.push("entity range needs 2 <= entities_min <= entities_max".into());
        }
        if self.num_images == 0 {
            v.push("num_images must be positive".into());
        }
        if self.pairs_per_image == Some(0) {
            v.push("pairs_per_image must be positive".into());
        }
        if self.d_ctx == 0 || self.d_feat == 0 {
            v.push("d_ctx and d_feat must be positive".into());
        }
        v
    }
}

/// `P(r) ∝ (r + 1)^(−s)` over `n` relations.
pub fn zipf_pmf(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|r| ((r + 1) as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn sample_index(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn gaussian(rng: &mut StreamRng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Everything fixed per seed: embeddings, prototypes and the class-pair tables.
struct World {
    class_embeddings: Vec<Vec<f64>>,
    prototypes: Vec<Vec<f64>>,
    background: Vec<f64>,
    related_prob: Vec<f64>,
    preferred: Vec<usize>,
    compatible: Vec<Vec<usize>>,
    zipf: Vec<f64>,
}

impl World {
    fn new(cfg: &GeneratorConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "synth.world");
        let n_o = cfg.num_entity_classes;
        let n_r = cfg.num_relations;
        let shared = gaussian(&mut rng, cfg.d_ctx, 1.0);
        let class_embeddings = (0..n_o)
            .map(|_| {
                gaussian(&mut rng, cfg.d_ctx, 0.8)
                    .into_iter()
                    .zip(&shared)
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();
        let prototypes = (0..n_r).map(|_| gaussian(&mut rng, cfg.d_feat, 1.0)).collect();
        let background = gaussian(&mut rng, cfg.d_feat, 1.0);
        let related_prob = (0..n_o * n_o).map(|_| rng.random_range(0.2..0.8)).collect();

        // Preferred relations are handed out to class pairs in Zipf
        // proportions (largest remainder), so the marginal stays Zipf.
        let zipf = zipf_pmf(n_r, cfg.zipf_s);
        let cells = n_o * n_o;
        let exact: Vec<f64> = zipf.iter().map(|p| p * cells as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut by_remainder: Vec<usize> = (0..n_r).collect();
        by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = cells - quota.iter().sum::<usize>();
        for &r in by_remainder.iter().take(short) {
            quota[r] += 1;
        }
        let mut preferred: Vec<usize> = quota.iter().enumerate().flat_map(|(r, &q)| std::iter::repeat_n(r, q)).collect();
        preferred.shuffle(&mut rng);

        let compatible = (0..n_r)
            .map(|r| {
                let mut near: Vec<usize> = (r.saturating_sub(2)..=(r + 2).min(n_r - 1)).filter(|&x| x != r).collect();
                near.shuffle(&mut rng);
                near.truncate(COMPAT_PER_RELATION);
                near.sort_unstable();
                near
            })
            .collect();
        Self {
            class_embeddings,
            prototypes,
            background,
            related_prob,
            preferred,
            compatible,
            zipf,
        }
    }
}

fn generate_image(cfg: &GeneratorConfig, world: &World, seed: u64, image: u64) -> SceneSample {
    let mut rng = substream(seed, "synth.image", image);
    let n_o = cfg.num_entity_classes;
    let m = rng.random_range(cfg.entities_min..=cfg.entities_max);
    let classes: Vec<usize> = (0..m).map(|_| rng.random_range(0..n_o)).collect();
    let contexts: Vec<Vec<f64>> = classes
        .iter()
        .map(|&a| {
            world.class_embeddings[a]
                .iter()
                .zip(gaussian(&mut rng, cfg.d_ctx, cfg.noise_sigma))
                .map(|(e, n)| e + n)
                .collect()
        })
        .collect();
    let mut ordered: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    if let Some(n) = cfg.pairs_per_image {
        if n < ordered.len() {
            ordered.shuffle(&mut rng);
            ordered.truncate(n);
            ordered.sort_unstable();
        }
    }
    let annotation_weights: Vec<f64> = (0..cfg.num_relations)
        .map(|r| ((r + 1) as f64).powf(-cfg.majority_bias))
        .collect();

    let pairs = ordered
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (classes[i], classes[j]);
            let cell = a * n_o + b;
            let related = rng.random::<f64>() < world.related_prob[cell];
            let mut truth = Vec::new();
            if related {
                let primary = if rng.random::<f64>() < PAIR_AFFINITY {
                    world.preferred[cell]
                } else {
                    sample_index(&mut rng, &world.zipf)
                };
                truth.push(primary);
                if rng.random::<f64>() < cfg.aptp_multi_rate {
                    let extras = if rng.random::<bool>() { 2 } else { 1 };
                    let mut pool = world.compatible[primary].clone();
                    pool.shuffle(&mut rng);
                    truth.extend(pool.into_iter().take(extras));
                }
                truth.sort_unstable();
            }
            let noise = gaussian(&mut rng, cfg.d_feat, cfg.noise_sigma);
            let union_feature: Vec<f64> = if truth.is_empty() {
                world.background.iter().zip(&noise).map(|(x, n)| x + n).collect()
            } else {
                (0..cfg.d_feat)
                    .map(|d| truth.iter().map(|&r| world.prototypes[r][d]).sum::<f64>() / truth.len() as f64 + noise[d])
                    .collect()
            };
            let label = if truth.is_empty() || rng.random::<f64>() < cfg.afn_rate {
                Label::Unannotated
            } else {
                let w: Vec<f64> = truth.iter().map(|&r| annotation_weights[r]).collect();
                Label::Annotated(truth[sample_index(&mut rng, &w)])
            };
            PairExample {
                subject: i,
                object: j,
                subject_class: a,
                object_class: b,
                context_subject: contexts[i].clone(),
                context_object: contexts[j].clone(),
                union_feature,
                label,
                true_relations: Some(truth),
            }
        })
        .collect();
    SceneSample {
        image_id: image,
        entity_classes: classes,
        pairs,
    }
}

/// All images with their oracle relation sets attached.
pub fn generate_images(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<SceneSample>> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v));
    }
    let world = World::new(cfg, seed);
    Ok((0..cfg.num_images as u64).map(|i| generate_image(cfg, &world, seed, i)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits images 70/10/20 in id order. Train pairs lose their oracle sets.
pub fn split_corpus(cfg: &GeneratorConfig, images: Vec<SceneSample>) -> Corpus {
    let n = images.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let dataset = |images: Vec<SceneSample>| Dataset {
        num_entity_classes: cfg.num_entity_classes,
        num_relations: cfg.num_relations,
        d_ctx: cfg.d_ctx,
        d_feat: cfg.d_feat,
        images,
    };
    let mut it = images.into_iter();
    let mut train: Vec<SceneSample> = it.by_ref().take(n_train).collect();
    for p in train.iter_mut().flat_map(|s| s.pairs.iter_mut()) {
        p.true_relations = None;
    }
    let val: Vec<SceneSample> = it.by_ref().take(n_val).collect();
    let test: Vec<SceneSample> = it.collect();
    Corpus {
        train: dataset(train),
        val: dataset(val),
        test: dataset(test),
    }
}

pub fn generate_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    Ok(split_corpus(cfg, generate_images(cfg, seed)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStatistics {
    pub num_images: usize,
    pub num_pairs: usize,
    pub annotated_pairs: usize,
    pub unannotated_pairs: usize,
    /// Annotated relation counts per class.
    pub annotated_histogram: Vec<usize>,
    /// Oracle relation counts per class (pairs with oracle data only).
    pub true_histogram: Vec<usize>,
    pub related_pairs: usize,
    pub unannotated_related: usize,
    pub fraction_unannotated_related: f64,
    pub mean_true_set_size: f64,
}

pub fn corpus_statistics(images: &[SceneSample], num_relations: usize) -> CorpusStatistics {
    let mut s = CorpusStatistics {
        num_images: images.len(),
        num_pairs: 0,
        annotated_pairs: 0,
        unannotated_pairs: 0,
        annotated_histogram: vec![0; num_relations],
        true_histogram: vec![0; num_relations],
        related_pairs: 0,
        unannotated_related: 0,
        fraction_unannotated_related: 0.0,
        mean_true_set_size: 0.0,
    };
    let mut set_sizes = 0usize;
    for p in images.iter().flat_map(|i| &i.pairs) {
        s.num_pairs += 1;
        match p.label {
            Label::Annotated(r) => {
                s.annotated_pairs += 1;
                if r < num_relations {
                    s.annotated_histogram[r] += 1;
                }
            }
            Label::Unannotated => s.unannotated_pairs += 1,
        }
        if let Some(set) = p.true_relations.as_ref().filter(|set| !set.is_empty()) {
            s.related_pairs += 1;
            set_sizes += set.len();
            if p.label == Label::Unannotated {
                s.unannotated_related += 1;
            }
            for &r in set.iter().filter(|&&r| r < num_relations) {
                s.true_histogram[r] += 1;
            }
        }
    }
    if s.related_pairs > 0 {
        s.fraction_unannotated_related = s.unannotated_related as f64 / s.related_pairs as f64;
        s.mean_true_set_size = set_sizes as f64 / s.related_pairs as f64;
    }
    s
}
