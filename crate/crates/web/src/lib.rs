//! Browser bindings for three small views of the library: temperature
//! softening of a teacher distribution, distillation weights over a batch
//! of teacher outputs, and label statistics of a generated corpus.

use sgkd::loss::{kd_weights, KdScheme};
use sgkd::synth::{corpus_statistics, generate_images, GeneratorConfig};
use sgkd::{entropy, softmax, Error, RelationDistribution};
use wasm_bindgen::prelude::*;

fn check_temperature(t: f64) -> Result<(), Error> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(vec![format!("temperature must be positive, got {t}")]))
    }
}

pub fn soften(logits: &[f64], temperature: f64) -> Result<RelationDistribution, Error> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::InvalidConfig(vec!["no logits".into()]));
    }
    Ok(softmax(&logits.iter().map(|z| z / temperature).collect::<Vec<_>>()))
}

/// Weights for `rows` teacher outputs stored row-major in `logits`.
pub fn batch_weights(logits: &[f64], classes: usize, temperature: f64, scheme: KdScheme) -> Result<Vec<f64>, Error> {
    if classes == 0 || !logits.len().is_multiple_of(classes) {
        return Err(Error::InvalidConfig(vec![format!(
            "{} logits do not split into rows of {classes}",
            logits.len()
        )]));
    }
    let teachers = logits
        .chunks(classes)
        .map(|row| soften(row, temperature))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(kd_weights(&teachers, scheme, 1e-6))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub annotated: Vec<f64>,
    pub truth: Vec<f64>,
    pub unannotated_related: f64,
    pub pairs: usize,
}

pub fn label_stats(seed: u64, num_images: usize, zipf_s: f64, afn_rate: f64) -> Result<LabelStats, Error> {
    let cfg = GeneratorConfig {
        num_images,
        zipf_s,
        afn_rate,
        ..GeneratorConfig::reference()
    };
    let images = generate_images(&cfg, seed)?;
    let stats = corpus_statistics(&images, cfg.num_relations);
    let share = |h: &[usize]| {
        let total = h.iter().sum::<usize>().max(1) as f64;
        h.iter().map(|&c| c as f64 / total).collect()
    };
    Ok(LabelStats {
        annotated: share(&stats.annotated_histogram),
        truth: share(&stats.true_histogram),
        unannotated_related: stats.fraction_unannotated_related,
        pairs: stats.num_pairs,
    })
}

fn js(err: Error) -> JsError {
    JsError::new(&err.to_string())
}

/// Tempered probabilities followed by their entropy as the last element.
#[wasm_bindgen(js_name = temperedDistribution)]
pub fn tempered_distribution(logits: &[f64], temperature: f64) -> Result<Vec<f64>, JsError> {
    let d = soften(logits, temperature).map_err(js)?;
    let mut out = d.probs().to_vec();
    out.push(entropy(&d));
    Ok(out)
}

/// `scheme` is "ukd" or "ckd".
#[wasm_bindgen(js_name = distillationWeights)]
pub fn distillation_weights(logits: &[f64], classes: usize, temperature: f64, scheme: &str) -> Result<Vec<f64>, JsError> {
    let scheme = match scheme {
        "ukd" => KdScheme::Ukd,
        "ckd" => KdScheme::Ckd,
        other => return Err(JsError::new(&format!("unknown scheme {other:?}"))),
    };
    batch_weights(logits, classes, temperature, scheme).map_err(js)
}

#[wasm_bindgen]
pub struct CorpusView(LabelStats);

#[wasm_bindgen]
impl CorpusView {
    #[wasm_bindgen(getter)]
    pub fn annotated(&self) -> Vec<f64> {
        self.0.annotated.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.0.truth.clone()
    }

    #[wasm_bindgen(getter, js_name = unannotatedRelated)]
    pub fn unannotated_related(&self) -> f64 {
        self.0.unannotated_related
    }

    #[wasm_bindgen(getter)]
    pub fn pairs(&self) -> usize {
        self.0.pairs
    }
}

#[wasm_bindgen(js_name = generateCorpus)]
pub fn generate_corpus_view(seed: u32, num_images: usize, zipf_s: f64, afn_rate: f64) -> Result<CorpusView, JsError> {
    label_stats(u64::from(seed), num_images, zipf_s, afn_rate).map(CorpusView).map_err(js)
}
