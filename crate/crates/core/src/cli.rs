//! Command implementations behind the `sgkd` binary. Each returns the text
//! to print on success; the binary turns errors into a one-line
//! diagnostic and a nonzero exit status.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, per_class_report, Averaging, ConstraintMode, GroundTruth, RecallReport};
use crate::format::{
    dataset_to_string, metrics_header, metrics_row, parse_metrics, per_class_to_string, read_checkpoint, read_dataset,
    read_file, report_rows, report_to_string, summary_to_string, write_checkpoint, write_file, Checkpoint,
};
use crate::optim::{MetricsLog, TrainState, Trainer};
use crate::synth::{corpus_statistics, generate_corpus};
use crate::types::{Dataset, RelationVocabulary};

pub const TRAIN_FILE: &str = "train.sgkd";
pub const VAL_FILE: &str = "val.sgkd";
pub const TEST_FILE: &str = "test.sgkd";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation_temperature.csv";

/// Loads a config and applies a `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{iteration:06}.ckpt"))
}

/// Writes train/val/test datasets and a statistics summary.
pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.generator, cfg.seed)?;
    create_dir(out_dir)?;
    let n_r = cfg.generator.num_relations;
    let splits = [("train", &corpus.train, TRAIN_FILE), ("val", &corpus.val, VAL_FILE), ("test", &corpus.test, TEST_FILE)];
    let mut stats = Vec::new();
    for (name, data, file) in splits {
        write_file(&out_dir.join(file), &dataset_to_string(data))?;
        stats.push((name, corpus_statistics(&data.images, n_r)));
    }
    let refs: Vec<(&str, &_)> = stats.iter().map(|(n, s)| (*n, s)).collect();
    write_file(&out_dir.join(SUMMARY_FILE), &summary_to_string(&refs))?;
    Ok(format!(
        "wrote {} train / {} val / {} test images to {}",
        corpus.train.images.len(),
        corpus.val.images.len(),
        corpus.test.images.len(),
        out_dir.display()
    ))
}

fn check_vocabulary(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let g = &cfg.generator;
    for (what, expected, found) in [
        ("|O|", g.num_entity_classes, data.num_entity_classes),
        ("|R'|", g.num_relations, data.num_relations),
        ("d_ctx", cfg.model.d_ctx, data.d_ctx),
        ("d_feat", cfg.model.d_feat, data.d_feat),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch { what, expected, found });
        }
    }
    Ok(())
}

pub fn load_split(cfg: &RunConfig, data_dir: &Path, file: &str) -> Result<Dataset> {
    let data = read_dataset(&data_dir.join(file))?;
    check_vocabulary(cfg, &data)?;
    Ok(data)
}

fn format_recall(ks: &[usize], recall: &[f64], mean_recall: &[f64]) -> String {
    let mut out = String::new();
    for (k, r) in ks.iter().zip(recall) {
        let _ = write!(out, "R@{k}={r:.2} ");
    }
    for (k, r) in ks.iter().zip(mean_recall) {
        let _ = write!(out, "mR@{k}={r:.2} ");
    }
    out.trim_end().to_string()
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: MetricsLog,
    pub message: String,
}

/// Trains F (and G for KD variants). Writes `metrics.csv`, a checkpoint
/// every `checkpoint_every_rounds` validation rounds and `final.ckpt`.
/// With `resume`, continues from a checkpoint and keeps the metrics rows
/// logged up to it.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = load_split(cfg, data_dir, TRAIN_FILE)?;
    let val = load_split(cfg, data_dir, VAL_FILE)?;
    create_dir(out_dir)?;
    let tcfg = cfg.train_config();
    let metrics_path = out_dir.join(METRICS_FILE);

    let (trainer, mut csv) = match resume {
        None => (Trainer::new(&train, &val, &tcfg, cfg.seed)?, metrics_header(&cfg.ks) + "\n"),
        Some(path) => {
            let ck = read_checkpoint(path)?;
            let mut csv = metrics_header(&cfg.ks) + "\n";
            if metrics_path.exists() {
                let earlier = parse_metrics(&read_file(&metrics_path)?)?;
                for row in earlier.rows.iter().filter(|r| r.iteration <= ck.state.iteration) {
                    csv.push_str(&metrics_row(row));
                    csv.push('\n');
                }
            }
            (Trainer::resume(&train, &val, &tcfg, ck.state)?, csv)
        }
    };
    write_file(&metrics_path, &csv)?;

    let mut rounds = 0u32;
    let mut last_prior = None;
    let (state, log) = trainer.run(|state, prior, row| {
        csv.push_str(&metrics_row(row));
        csv.push('\n');
        write_file(&metrics_path, &csv)?;
        rounds += 1;
        if cfg.checkpoint_every_rounds > 0 && rounds.is_multiple_of(cfg.checkpoint_every_rounds) {
            let ck = Checkpoint {
                config: cfg.clone(),
                prior: prior.clone(),
                state: state.clone(),
            };
            write_checkpoint(&checkpoint_path(out_dir, state.iteration), &ck)?;
        }
        last_prior = Some(prior.clone());
        Ok(())
    })?;
    let prior = match last_prior {
        Some(p) => p,
        None => crate::prior::FrequencyPrior::build(&train.images, cfg.prior_alpha, train.num_entity_classes, train.num_relations)?,
    };
    write_checkpoint(
        &out_dir.join(FINAL_CHECKPOINT),
        &Checkpoint {
            config: cfg.clone(),
            prior,
            state: state.clone(),
        },
    )?;
    let message = match log.rows.last() {
        Some(row) => format!(
            "{} stopped at iteration {}; validation {}",
            cfg.variant,
            state.iteration,
            format_recall(&log.ks, &row.recall, &row.mean_recall)
        ),
        None => format!("{} stopped at iteration {}", cfg.variant, state.iteration),
    };
    Ok(TrainOutcome { state, log, message })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub mode: ConstraintMode,
    pub oracle: bool,
    pub averaging: Averaging,
}

pub struct EvalOutcome {
    pub annotated: RecallReport,
    pub oracle: Option<RecallReport>,
    pub message: String,
}

/// Scores `data_path` with a checkpoint's F. Writes `report.csv` and
/// `per_class.csv` (plus `per_class_oracle.csv` with `oracle`).
pub fn cmd_eval(checkpoint: &Path, data_path: &Path, opts: &EvalOptions, out_dir: &Path) -> Result<EvalOutcome> {
    let ck = read_checkpoint(checkpoint)?;
    let data = read_dataset(data_path)?;
    check_vocabulary(&ck.config, &data)?;
    if opts.oracle && !data.has_oracle() {
        return Err(Error::NoOracle);
    }
    if opts.ks.is_empty() {
        return Err(Error::InvalidConfig(vec!["--k needs at least one value".into()]));
    }
    let run = |truth| {
        evaluate(&data, &ck.state.params_f, &ck.prior, &ck.config.model, opts.mode, &opts.ks, truth, opts.averaging)
    };
    let annotated = run(GroundTruth::Annotated)?;
    let oracle = if opts.oracle { Some(run(GroundTruth::Oracle)?) } else { None };

    create_dir(out_dir)?;
    let mode = opts.mode.to_string();
    let mut rows = report_rows(&annotated, &mode, "annotated");
    let vocab = RelationVocabulary::synthetic(data.num_relations);
    write_file(
        &out_dir.join("per_class.csv"),
        &per_class_to_string(&opts.ks, &per_class_report(&annotated, &vocab)),
    )?;
    let mut message = format!("{mode} annotated: {}", format_recall(&opts.ks, &annotated.recall, &annotated.mean_recall));
    if let Some(o) = &oracle {
        rows.extend(report_rows(o, &mode, "oracle"));
        write_file(&out_dir.join("per_class_oracle.csv"), &per_class_to_string(&opts.ks, &per_class_report(o, &vocab)))?;
        let _ = write!(message, "\n{mode} oracle: {}", format_recall(&opts.ks, &o.recall, &o.mean_recall));
    }
    write_file(&out_dir.join(REPORT_FILE), &report_to_string(&rows))?;
    Ok(EvalOutcome {
        annotated,
        oracle,
        message,
    })
}

/// Column layout of the temperature sweep: constrained R@{20,50,100} and
/// mR@{20,50,100}, then unconstrained R@{50,100} and mR@{50,100}.
pub const ABLATION_COLUMNS: [(ConstraintMode, &str, usize); 10] = [
    (ConstraintMode::Constrained, "R", 20),
    (ConstraintMode::Constrained, "R", 50),
    (ConstraintMode::Constrained, "R", 100),
    (ConstraintMode::Constrained, "mR", 20),
    (ConstraintMode::Constrained, "mR", 50),
    (ConstraintMode::Constrained, "mR", 100),
    (ConstraintMode::Unconstrained, "R", 50),
    (ConstraintMode::Unconstrained, "R", 100),
    (ConstraintMode::Unconstrained, "mR", 50),
    (ConstraintMode::Unconstrained, "mR", 100),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub temperature: f64,
    pub values: [f64; 10],
}

pub fn ablation_header() -> String {
    let mut cols = vec!["T".to_string()];
    cols.extend(ABLATION_COLUMNS.iter().map(|(mode, metric, k)| format!("{mode} {metric}@{k}")));
    cols.join(",")
}

pub fn ablation_to_string(rows: &[AblationRow]) -> String {
    let mut out = ablation_header() + "\n";
    for row in rows {
        let _ = write!(out, "T={:?}", row.temperature);
        for v in row.values {
            let _ = write!(out, ",{v:.4}");
        }
        out.push('\n');
    }
    out
}

/// Trains one model per temperature with the config's seed and scores the
/// test split against its annotations.
pub fn cmd_ablate_temperature(
    cfg: &RunConfig,
    data_dir: &Path,
    temperatures: &[f64],
    out_dir: &Path,
) -> Result<(Vec<AblationRow>, String)> {
    if cfg.variant.kd_scheme().is_none() {
        return Err(Error::InvalidConfig(vec![format!(
            "variant {} is not a KD variant; the temperature sweep needs L2+uKD or L2+cKD",
            cfg.variant
        )]));
    }
    if temperatures.is_empty() {
        return Err(Error::InvalidConfig(vec!["temperature list is empty".into()]));
    }
    cfg.validate()?;
    let train = load_split(cfg, data_dir, TRAIN_FILE)?;
    let val = load_split(cfg, data_dir, VAL_FILE)?;
    let test = load_split(cfg, data_dir, TEST_FILE)?;
    let mut rows = Vec::new();
    for &t in temperatures {
        let mut run = cfg.clone();
        run.kd.temperature = t;
        run.validate()?;
        let tcfg = run.train_config();
        let (state, _) = crate::optim::train(&train, &val, &tcfg, run.seed)?;
        let prior = crate::prior::FrequencyPrior::build(&train.images, run.prior_alpha, train.num_entity_classes, train.num_relations)?;
        let mut values = [0.0; 10];
        for mode in [ConstraintMode::Constrained, ConstraintMode::Unconstrained] {
            let report = evaluate(
                &test,
                &state.params_f,
                &prior,
                &run.model,
                mode,
                &[20, 50, 100],
                GroundTruth::Annotated,
                Averaging::Image,
            )?;
            for (slot, &(m, metric, k)) in values.iter_mut().zip(&ABLATION_COLUMNS) {
                if m == mode {
                    let i = report.ks.iter().position(|&x| x == k).unwrap_or(0);
                    *slot = if metric == "R" { report.recall[i] } else { report.mean_recall[i] };
                }
            }
        }
        rows.push(AblationRow { temperature: t, values });
    }
    let table = ablation_to_string(&rows);
    create_dir(out_dir)?;
    write_file(&out_dir.join(ABLATION_FILE), &table)?;
    Ok((rows, table))
}
