//! SGD with momentum, the warmup / plateau-decay schedule and the
//! training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::eval::{evaluate, Averaging, ConstraintMode, GroundTruth};
use crate::loss::{total_loss_and_gradients, KdConfig, LossBreakdown};
use crate::model::HypersphereConfig;
use crate::params::{named, GradientSet, LearnerParameters};
use crate::prior::FrequencyPrior;
use crate::rng::{stream, substream};
use crate::types::{Dataset, SceneSample};

/// Improvements in validation R@100 smaller than this do not count.
pub const IMPROVEMENT_EPS: f64 = 1e-6;
/// K used to judge validation improvement.
pub const SCHEDULE_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub peak_lr: f64,
    pub warmup_iterations: u64,
    pub decay_factor: f64,
    pub validation_interval: u64,
    pub patience_rounds: u32,
    pub max_decays: u32,
    pub max_iterations: u64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            peak_lr: 0.12,
            warmup_iterations: 500,
            decay_factor: 0.1,
            validation_interval: 2000,
            patience_rounds: 2,
            max_decays: 3,
            max_iterations: 50_000,
            batch_size: 12,
            momentum: 0.9,
        }
    }
}

impl ScheduleConfig {
    /// The same recipe shrunk to run in minutes on the reference corpus.
    /// Patience is raised because validation recall saturates within a few
    /// hundred iterations on the small synthetic validation split.
    pub fn desk() -> Self {
        Self {
            validation_interval: 200,
            patience_rounds: 6,
            max_iterations: 5000,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.base_lr > 0.0 && self.base_lr <= self.peak_lr && self.peak_lr.is_finite()) {
            v.push(format!(
                "learning rates need 0 < base_lr ({}) <= peak_lr ({})",
                self.base_lr, self.peak_lr
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            v.push(format!("decay_factor {} out of (0,1)", self.decay_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            v.push(format!("momentum {} out of [0,1)", self.momentum));
        }
        for (name, value) in [
            ("warmup_iterations", self.warmup_iterations),
            ("validation_interval", self.validation_interval),
            ("patience_rounds", u64::from(self.patience_rounds)),
            ("max_iterations", self.max_iterations),
            ("batch_size", self.batch_size as u64),
        ] {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        v
    }
}

/// Linear warmup from `base_lr` to `peak_lr`, then `peak_lr · decay^count`.
pub fn lr_at(iteration: u64, decay_count: u32, cfg: &ScheduleConfig) -> f64 {
    if iteration < cfg.warmup_iterations {
        cfg.base_lr
            + (cfg.peak_lr - cfg.base_lr) * iteration as f64 / cfg.warmup_iterations as f64
    } else {
        cfg.peak_lr * cfg.decay_factor.powi(decay_count as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params_f: LearnerParameters,
    pub params_g: LearnerParameters,
    pub momentum_f: LearnerParameters,
    pub momentum_g: LearnerParameters,
    pub lr: f64,
    pub iteration: u64,
    pub decay_count: u32,
    pub best_validation_r: f64,
    pub rounds_since_improvement: u32,
    pub rng_seed: u64,
}

impl TrainState {
    pub fn new(params_f: LearnerParameters, params_g: LearnerParameters, seed: u64, cfg: &ScheduleConfig) -> Self {
        Self {
            momentum_f: params_f.zeros_like(),
            momentum_g: params_g.zeros_like(),
            params_f,
            params_g,
            lr: lr_at(0, 0, cfg),
            iteration: 0,
            decay_count: 0,
            best_validation_r: f64::NEG_INFINITY,
            rounds_since_improvement: 0,
            rng_seed: seed,
        }
    }

    /// Fresh parameters drawn from the `init.F` / `init.G` streams.
    pub fn initialize(
        model: &HypersphereConfig,
        num_relations: usize,
        seed: u64,
        schedule: &ScheduleConfig,
    ) -> Self {
        let f = LearnerParameters::init(model.d_ctx, model.d_feat, num_relations + 1, &mut stream(seed, "init.F"));
        let g = LearnerParameters::init(model.d_ctx, model.d_feat, num_relations, &mut stream(seed, "init.G"));
        Self::new(f, g, seed, schedule)
    }
}

/// `buffer ← μ·buffer + grad; param ← param − lr·buffer` for both learners,
/// then advances the iteration counter.
pub fn sgd_step(state: &mut TrainState, grads: &GradientSet, momentum: f64) -> Result<()> {
    for (name, m) in grads.named() {
        if !m.is_finite() {
            return Err(Error::GradientBlowup(name));
        }
    }
    let lr = state.lr;
    for (params, buffer, grad) in [
        (&mut state.params_f, &mut state.momentum_f, &grads.f),
        (&mut state.params_g, &mut state.momentum_g, &grads.g),
    ] {
        for ((p, b), g) in params
            .matrices_mut()
            .into_iter()
            .zip(buffer.matrices_mut())
            .zip(grad.matrices())
        {
            for ((x, v), d) in p.as_mut_slice().iter_mut().zip(b.as_mut_slice()).zip(g.as_slice()) {
                *v = momentum * *v + d;
                *x -= lr * *v;
            }
        }
    }
    for (name, m) in named("F", &state.params_f).into_iter().chain(named("G", &state.params_g)) {
        if !m.is_finite() {
            return Err(Error::GradientBlowup(name));
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Records one validation round. Returns whether training should stop.
pub fn maybe_decay_and_stop(state: &mut TrainState, validation_r: f64, cfg: &ScheduleConfig) -> bool {
    if validation_r > state.best_validation_r + IMPROVEMENT_EPS {
        state.best_validation_r = validation_r;
        state.rounds_since_improvement = 0;
    } else {
        state.rounds_since_improvement += 1;
        if state.rounds_since_improvement >= cfg.patience_rounds {
            state.decay_count += 1;
            state.rounds_since_improvement = 0;
        }
    }
    state.decay_count > cfg.max_decays || state.iteration >= cfg.max_iterations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: HypersphereConfig,
    pub kd: KdConfig,
    pub schedule: ScheduleConfig,
    pub prior_alpha: f64,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: HypersphereConfig::default(),
            kd: KdConfig::default(),
            schedule: ScheduleConfig::default(),
            prior_alpha: 1.0,
            ks: vec![20, 50, 100],
        }
    }
}

/// One row of the metrics log, written at every validation round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f64,
    /// Means over the steps since the previous row.
    pub losses: LossBreakdown,
    /// Constrained validation R@K, one per configured K.
    pub recall: Vec<f64>,
    pub mean_recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub ks: Vec<usize>,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub iteration: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub validation: Option<MetricsRow>,
    pub stop: bool,
}

/// Step-by-step driver. Batches are a pure function of the seed and the
/// iteration counter, so a run resumed from a validation-round checkpoint
/// continues exactly where it left off.
pub struct Trainer<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    cfg: &'a TrainConfig,
    prior: FrequencyPrior,
    state: TrainState,
    epoch_order: Option<(u64, Vec<usize>)>,
    round: (LossBreakdown, u64),
    log: MetricsLog,
    stopped: bool,
}

fn check_compatible(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<()> {
    for data in [train, val] {
        if data.d_ctx != cfg.model.d_ctx {
            return Err(Error::DimensionMismatch { what: "d_ctx", expected: cfg.model.d_ctx, found: data.d_ctx });
        }
        if data.d_feat != cfg.model.d_feat {
            return Err(Error::DimensionMismatch { what: "d_feat", expected: cfg.model.d_feat, found: data.d_feat });
        }
    }
    if val.num_relations != train.num_relations {
        return Err(Error::DimensionMismatch { what: "|R'|", expected: train.num_relations, found: val.num_relations });
    }
    if val.num_entity_classes != train.num_entity_classes {
        return Err(Error::DimensionMismatch {
            what: "|O|",
            expected: train.num_entity_classes,
            found: val.num_entity_classes,
        });
    }
    if train.images.is_empty() || val.images.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Dataset, val: &'a Dataset, cfg: &'a TrainConfig, seed: u64) -> Result<Self> {
        let state = TrainState::initialize(&cfg.model, train.num_relations, seed, &cfg.schedule);
        Self::resume(train, val, cfg, state)
    }

    pub fn resume(train: &'a Dataset, val: &'a Dataset, cfg: &'a TrainConfig, state: TrainState) -> Result<Self> {
        check_compatible(train, val, cfg)?;
        state.params_f.check_shapes(cfg.model.d_ctx, cfg.model.d_feat, train.num_relations + 1)?;
        state.params_g.check_shapes(cfg.model.d_ctx, cfg.model.d_feat, train.num_relations)?;
        let prior = FrequencyPrior::build(&train.images, cfg.prior_alpha, train.num_entity_classes, train.num_relations)?;
        Ok(Self {
            train,
            val,
            cfg,
            prior,
            state,
            epoch_order: None,
            round: (LossBreakdown::default(), 0),
            log: MetricsLog {
                ks: cfg.ks.clone(),
                rows: Vec::new(),
            },
            stopped: false,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn prior(&self) -> &FrequencyPrior {
        &self.prior
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    fn image_at(&mut self, position: u64) -> usize {
        let n = self.train.images.len() as u64;
        let epoch = position / n;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..n as usize).collect();
            order.shuffle(&mut substream(self.state.rng_seed, "shuffle", epoch));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().map(|(_, o)| o[(position % n) as usize]).unwrap_or(0)
    }

    /// Images of the batch used at `iteration`.
    pub fn batch_indices(&mut self, iteration: u64) -> Vec<usize> {
        let b = self.cfg.schedule.batch_size as u64;
        (iteration * b..(iteration + 1) * b).map(|p| self.image_at(p)).collect()
    }

    pub fn step(&mut self) -> Result<StepReport> {
        if self.stopped {
            return Err(contract("training already stopped"));
        }
        let sched = &self.cfg.schedule;
        let iteration = self.state.iteration;
        self.state.lr = lr_at(iteration, self.state.decay_count, sched);
        let batch: Vec<SceneSample> = self
            .batch_indices(iteration)
            .into_iter()
            .map(|i| self.train.images[i].clone())
            .collect();
        let (losses, grads) = total_loss_and_gradients(
            &batch,
            &self.state.params_f,
            &self.state.params_g,
            &self.prior,
            &self.cfg.model,
            &self.cfg.kd,
            iteration,
        )?;
        sgd_step(&mut self.state, &grads, sched.momentum)?;
        self.round.0.add_scaled(&losses, 1.0);
        self.round.1 += 1;

        let mut validation = None;
        let mut stop = false;
        if self.state.iteration.is_multiple_of(sched.validation_interval) {
            let (row, r_sched) = self.validate()?;
            stop = maybe_decay_and_stop(&mut self.state, r_sched, sched);
            validation = Some(row);
        }
        if self.state.iteration >= sched.max_iterations {
            if validation.is_none() {
                validation = Some(self.validate()?.0);
            }
            stop = true;
        }
        self.stopped = stop;
        Ok(StepReport {
            iteration,
            lr: self.state.lr,
            losses,
            validation,
            stop,
        })
    }

    /// Constrained validation recall; logs a row and resets the round means.
    fn validate(&mut self) -> Result<(MetricsRow, f64)> {
        let mut ks = self.cfg.ks.clone();
        if !ks.contains(&SCHEDULE_K) {
            ks.push(SCHEDULE_K);
        }
        let report = evaluate(
            self.val,
            &self.state.params_f,
            &self.prior,
            &self.cfg.model,
            ConstraintMode::Constrained,
            &ks,
            GroundTruth::Annotated,
            Averaging::Image,
        )?;
        let sched_idx = ks.iter().position(|&k| k == SCHEDULE_K).unwrap_or(0);
        let n = self.cfg.ks.len();
        let mut losses = LossBreakdown::default();
        if self.round.1 > 0 {
            losses.add_scaled(&self.round.0, 1.0 / self.round.1 as f64);
        }
        let row = MetricsRow {
            iteration: self.state.iteration,
            lr: self.state.lr,
            losses,
            recall: report.recall[..n].to_vec(),
            mean_recall: report.mean_recall[..n].to_vec(),
        };
        self.round = (LossBreakdown::default(), 0);
        self.log.rows.push(row.clone());
        Ok((row, report.recall[sched_idx]))
    }

    /// Steps until the schedule stops, calling `on_round` after every
    /// validation round.
    pub fn run(mut self, mut on_round: impl FnMut(&TrainState, &FrequencyPrior, &MetricsRow) -> Result<()>) -> Result<(TrainState, MetricsLog)> {
        while !self.stopped {
            let report = self.step()?;
            if let Some(row) = &report.validation {
                on_round(&self.state, &self.prior, row)?;
            }
        }
        Ok((self.state, self.log))
    }
}

/// Trains both learners from scratch.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(TrainState, MetricsLog)> {
    Trainer::new(train, val, cfg, seed)?.run(|_, _, _| Ok(()))
}
