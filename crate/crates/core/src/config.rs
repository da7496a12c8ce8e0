//! Run configuration: one TOML file drives generation, training and
//! evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{KdConfig, KdScheme};
use crate::model::{HypersphereConfig, L2Mode};
use crate::optim::{ScheduleConfig, TrainConfig};
use crate::synth::GeneratorConfig;

/// The four ablation models. The variant decides the normalization mode,
/// whether G is trained and which KD scheme is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "L2")]
    L2,
    #[serde(rename = "L2+uKD")]
    L2Ukd,
    #[serde(rename = "L2+cKD")]
    L2Ckd,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [Self::Baseline, Self::L2, Self::L2Ukd, Self::L2Ckd];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::L2 => "L2",
            Self::L2Ukd => "L2+uKD",
            Self::L2Ckd => "L2+cKD",
        }
    }

    pub fn kd_scheme(self) -> Option<KdScheme> {
        match self {
            Self::L2Ukd => Some(KdScheme::Ukd),
            Self::L2Ckd => Some(KdScheme::Ckd),
            _ => None,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(vec![format!("unknown variant {s:?}")]))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding train/val/test datasets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Directory for checkpoints, metrics logs and reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub prior_alpha: f64,
    /// Checkpoint every this many validation rounds; 0 keeps only the final one.
    pub checkpoint_every_rounds: u32,
    pub generator: GeneratorConfig,
    pub model: HypersphereConfig,
    pub kd: KdConfig,
    pub schedule: ScheduleConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::reference(ModelVariant::L2Ckd)
    }
}

impl RunConfig {
    /// Desk-scale run on the reference synthetic corpus.
    pub fn reference(variant: ModelVariant) -> Self {
        let mut cfg = Self {
            variant,
            seed: 0,
            ks: vec![20, 50, 100],
            prior_alpha: 1.0,
            checkpoint_every_rounds: 5,
            generator: GeneratorConfig::reference(),
            model: HypersphereConfig::default(),
            kd: KdConfig {
                kd_start_iteration: 1000,
                ..KdConfig::default()
            },
            schedule: ScheduleConfig::desk(),
            paths: PathsConfig::default(),
        };
        cfg.apply_variant();
        cfg
    }

    /// Forces the fields the variant owns.
    pub fn apply_variant(&mut self) {
        self.model.l2_mode = match self.variant {
            ModelVariant::Baseline => L2Mode::Raw,
            _ => L2Mode::Normalized,
        };
        match self.variant.kd_scheme() {
            Some(scheme) => {
                self.kd.scheme = scheme;
                self.kd.train_teacher = true;
            }
            None => {
                self.kd.lambda_gf = 0.0;
                self.kd.train_teacher = false;
            }
        }
    }

    pub fn with_variant(mut self, variant: ModelVariant) -> Self {
        self.variant = variant;
        if variant.kd_scheme().is_some() && self.kd.lambda_gf == 0.0 {
            self.kd.lambda_gf = KdConfig::default().lambda_gf;
        }
        self.apply_variant();
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.generator.violations();
        v.extend(self.model.violations());
        v.extend(self.kd.violations());
        v.extend(self.schedule.violations());
        if !(self.prior_alpha >= 0.0 && self.prior_alpha.is_finite()) {
            v.push(format!("prior_alpha {} must be >= 0", self.prior_alpha));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            v.push("ks must be a nonempty list of positive integers".into());
        }
        if self.generator.d_ctx != self.model.d_ctx {
            v.push(format!(
                "generator.d_ctx ({}) differs from model.d_ctx ({})",
                self.generator.d_ctx, self.model.d_ctx
            ));
        }
        if self.generator.d_feat != self.model.d_feat {
            v.push(format!(
                "generator.d_feat ({}) differs from model.d_feat ({})",
                self.generator.d_feat, self.model.d_feat
            ));
        }
        let normalized = self.model.l2_mode == L2Mode::Normalized;
        match self.variant.kd_scheme() {
            None => {
                if normalized != (self.variant == ModelVariant::L2) {
                    v.push(format!("variant {} requires l2_mode = {}", self.variant, if normalized { "raw" } else { "normalized" }));
                }
                if self.kd.lambda_gf != 0.0 {
                    v.push(format!("variant {} requires kd.lambda_gf = 0", self.variant));
                }
            }
            Some(scheme) => {
                if !normalized {
                    v.push(format!("variant {} requires l2_mode = normalized", self.variant));
                }
                if self.kd.lambda_gf <= 0.0 {
                    v.push(format!("variant {} requires kd.lambda_gf > 0", self.variant));
                }
                if self.kd.scheme != scheme || !self.kd.train_teacher {
                    v.push(format!("variant {} requires kd.scheme = {scheme:?} with a trained teacher", self.variant));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Parses, applies the variant and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(vec![e.message().to_string()]))?;
        cfg.apply_variant();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            kd: self.kd.clone(),
            schedule: self.schedule.clone(),
            prior_alpha: self.prior_alpha,
            ks: self.ks.clone(),
        }
    }
}
