//! Plain-text persistence: datasets, checkpoints, metrics logs and reports.
//!
//! Floats in datasets and checkpoints are written with 17 significant
//! digits, which round-trips every `f64` exactly. CSV files use Rust's
//! shortest round-trip representation.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{ClassRow, RecallReport};
use crate::loss::LossBreakdown;
use crate::math::Matrix;
use crate::optim::{MetricsLog, MetricsRow, TrainState};
use crate::params::LearnerParameters;
use crate::prior::FrequencyPrior;
use crate::synth::CorpusStatistics;
use crate::types::{Dataset, Label, PairExample, SceneSample};

const DATASET_MAGIC: &str = "SGKD";
const DATASET_VERSION: &str = "v1";

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn push_float(out: &mut String, x: f64) {
    let _ = write!(out, " {x:.16e}");
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Numbered, trimmed, non-empty lines.
struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
                .filter(|(_, l)| !l.trim().is_empty()),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.inner.next();
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.last;
        self.next().ok_or_else(|| parse_err(last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner.peek().and_then(|(_, l)| l.split_whitespace().next())
    }
}

fn parse<T: std::str::FromStr>(line: usize, token: Option<&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} {token:?}")))
}

fn parse_floats<'a>(line: usize, tokens: impl Iterator<Item = &'a str>, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = tokens.map(|t| parse(line, Some(t), what)).collect::<Result<_>>()?;
    if v.len() != n {
        return Err(parse_err(line, format!("expected {n} {what} values, found {}", v.len())));
    }
    Ok(v)
}

pub fn dataset_to_string(data: &Dataset) -> String {
    let mut out = format!(
        "{DATASET_MAGIC} {DATASET_VERSION} {} {} {} {}\n",
        data.num_entity_classes, data.num_relations, data.d_ctx, data.d_feat
    );
    for img in &data.images {
        let _ = writeln!(out, "image {} {}", img.image_id, img.entity_classes.len());
        let classes: Vec<String> = img.entity_classes.iter().map(|c| c.to_string()).collect();
        out.push_str(&classes.join(" "));
        out.push('\n');
        for p in &img.pairs {
            let label = match p.label {
                Label::Annotated(r) => r as i64,
                Label::Unannotated => -1,
            };
            let _ = write!(out, "pair {} {} {label}", p.subject, p.object);
            for &x in p.context_subject.iter().chain(&p.context_object).chain(&p.union_feature) {
                push_float(&mut out, x);
            }
            out.push('\n');
            if let Some(set) = &p.true_relations {
                let _ = write!(out, "oracle {} {}", p.subject, p.object);
                for r in set {
                    let _ = write!(out, " {r}");
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.expect("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(DATASET_MAGIC) || tok.next() != Some(DATASET_VERSION) {
        return Err(parse_err(n, format!("expected header \"{DATASET_MAGIC} {DATASET_VERSION} ...\"")));
    }
    let num_entity_classes: usize = parse(n, tok.next(), "|O|")?;
    let num_relations: usize = parse(n, tok.next(), "|R'|")?;
    let d_ctx: usize = parse(n, tok.next(), "d_ctx")?;
    let d_feat: usize = parse(n, tok.next(), "d_feat")?;

    let mut images = Vec::new();
    while let Some((n, line)) = lines.next() {
        let mut tok = line.split_whitespace();
        if tok.next() != Some("image") {
            return Err(parse_err(n, "expected an image line"));
        }
        let image_id: u64 = parse(n, tok.next(), "image id")?;
        let m: usize = parse(n, tok.next(), "entity count")?;
        let (n, classes_line) = lines.expect("entity classes")?;
        let entity_classes: Vec<usize> = classes_line
            .split_whitespace()
            .map(|t| parse(n, Some(t), "entity class"))
            .collect::<Result<_>>()?;
        if entity_classes.len() != m {
            return Err(parse_err(n, format!("expected {m} entity classes, found {}", entity_classes.len())));
        }
        let mut pairs = Vec::new();
        while lines.peek_keyword() == Some("pair") {
            let (n, line) = lines.expect("pair")?;
            let mut tok = line.split_whitespace().skip(1);
            let subject: usize = parse(n, tok.next(), "subject index")?;
            let object: usize = parse(n, tok.next(), "object index")?;
            let label: i64 = parse(n, tok.next(), "label")?;
            let label = match label {
                -1 => Label::Unannotated,
                r if r >= 0 => Label::Annotated(r as usize),
                r => return Err(parse_err(n, format!("bad label {r}"))),
            };
            let mut floats = parse_floats(n, tok, 2 * d_ctx + d_feat, "feature")?;
            let union_feature = floats.split_off(2 * d_ctx);
            let context_object = floats.split_off(d_ctx);
            let (subject_class, object_class) = match (entity_classes.get(subject), entity_classes.get(object)) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(parse_err(n, format!("pair ({subject}, {object}) outside {m} entities"))),
            };
            let mut true_relations = None;
            if lines.peek_keyword() == Some("oracle") {
                let (n, line) = lines.expect("oracle")?;
                let mut tok = line.split_whitespace().skip(1);
                let (i, j): (usize, usize) = (parse(n, tok.next(), "subject index")?, parse(n, tok.next(), "object index")?);
                if (i, j) != (subject, object) {
                    return Err(parse_err(n, format!("oracle ({i}, {j}) does not follow its pair")));
                }
                true_relations = Some(tok.map(|t| parse(n, Some(t), "relation id")).collect::<Result<Vec<usize>>>()?);
            }
            pairs.push(PairExample {
                subject,
                object,
                subject_class,
                object_class,
                context_subject: floats,
                context_object,
                union_feature,
                label,
                true_relations,
            });
        }
        images.push(SceneSample {
            image_id,
            entity_classes,
            pairs,
        });
    }
    let data = Dataset {
        num_entity_classes,
        num_relations,
        d_ctx,
        d_feat,
        images,
    };
    data.validate()?;
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, &dataset_to_string(data))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_file(path)?)
}

/// Everything needed to resume training or evaluate F.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub prior: FrequencyPrior,
    pub state: TrainState,
}

fn push_section(out: &mut String, name: &str, rows: usize, cols: usize, values: impl IntoIterator<Item = f64>) {
    let _ = writeln!(out, "section {name} {rows} {cols}");
    let mut it = values.into_iter();
    for _ in 0..rows {
        for (c, x) in it.by_ref().take(cols).enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{x:.16e}");
        }
        out.push('\n');
    }
}

fn push_matrix(out: &mut String, name: &str, m: &Matrix) {
    let (rows, cols) = m.shape();
    push_section(out, name, rows, cols, m.as_slice().iter().copied());
}

const STATE_FIELDS: usize = 8;

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let mut out = String::new();
    let config = ck.config.to_toml_string();
    let _ = writeln!(out, "section config {} 0", config.lines().count());
    for line in config.lines() {
        let _ = writeln!(out, "{line}");
    }
    let p = &ck.prior;
    let cells = p.num_entity_classes() * p.num_entity_classes();
    push_section(&mut out, "frequency_prior", cells, p.num_classes(), p.table().iter().copied());
    let _ = writeln!(out, "section frequency_prior.counts {cells} {}", p.num_classes());
    for row in p.counts().chunks(p.num_classes().max(1)) {
        let row: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    push_section(&mut out, "frequency_prior.alpha", 1, 1, [p.alpha()]);
    let s = &ck.state;
    for (prefix, params) in [
        ("", &s.params_f),
        ("", &s.params_g),
        ("momentum.", &s.momentum_f),
        ("momentum.", &s.momentum_g),
    ]
    .into_iter()
    .zip(["F", "G", "F", "G"])
    .map(|((pre, p), l)| ((pre, l), p))
    {
        let (pre, learner) = prefix;
        for (name, m) in crate::params::named(learner, params) {
            push_matrix(&mut out, &format!("{pre}{name}"), m);
        }
    }
    push_section(
        &mut out,
        "state",
        1,
        STATE_FIELDS,
        [
            s.lr,
            s.iteration as f64,
            f64::from(s.decay_count),
            s.best_validation_r,
            f64::from(s.rounds_since_improvement),
            (s.rng_seed >> 32) as f64,
            (s.rng_seed & 0xffff_ffff) as f64,
            0.0,
        ],
    );
    out
}

struct Section<'a> {
    line: usize,
    name: &'a str,
    rows: usize,
    cols: usize,
    lines: Vec<&'a str>,
}

impl Section<'_> {
    fn floats(&self) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.rows * self.cols);
        for (k, l) in self.lines.iter().enumerate() {
            v.extend(parse_floats(self.line + k + 1, l.split_whitespace(), self.cols, self.name)?);
        }
        Ok(v)
    }

    fn matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.rows, self.cols, self.floats()?)
    }
}

fn split_sections(text: &str) -> Result<Vec<Section<'_>>> {
    let mut out = Vec::new();
    let mut it = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    while let Some((n, line)) = it.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("section") {
            return Err(parse_err(n, "expected a section header"));
        }
        let name = tok.next().ok_or_else(|| parse_err(n, "missing section name"))?;
        let rows: usize = parse(n, tok.next(), "row count")?;
        let cols: usize = parse(n, tok.next(), "column count")?;
        let lines: Vec<&str> = it.by_ref().take(rows).map(|(_, l)| l).collect();
        if lines.len() != rows {
            return Err(parse_err(n, format!("section {name} is truncated")));
        }
        out.push(Section {
            line: n,
            name,
            rows,
            cols,
            lines,
        });
    }
    Ok(out)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let sections = split_sections(text)?;
    let find = |name: &str| {
        sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| parse_err(0, format!("missing section {name}")))
    };
    let config = RunConfig::from_toml_str(&find("config")?.lines.join("\n"))?;

    let table = find("frequency_prior")?;
    let counts_section = find("frequency_prior.counts")?;
    let mut counts = Vec::new();
    for (k, l) in counts_section.lines.iter().enumerate() {
        for t in l.split_whitespace() {
            counts.push(parse(counts_section.line + k + 1, Some(t), "count")?);
        }
    }
    let alpha = find("frequency_prior.alpha")?.floats()?[0];
    let n_o = (table.rows as f64).sqrt().round() as usize;
    if n_o * n_o != table.rows {
        return Err(parse_err(table.line, "prior row count is not a square"));
    }
    let prior = FrequencyPrior::from_parts(counts, table.floats()?, alpha, n_o, table.cols)?;

    let learner = |prefix: &str| -> Result<LearnerParameters> {
        let m = |name: &str| find(&format!("{prefix}{name}"))?.matrix();
        LearnerParameters::from_matrices([m("W_s")?, m("W_o")?, m("W_c")?, m("W")?])
    };
    let st = find("state")?;
    let v = st.floats()?;
    if v.len() != STATE_FIELDS {
        return Err(parse_err(st.line, format!("state needs {STATE_FIELDS} values")));
    }
    let state = TrainState {
        params_f: learner("F.")?,
        params_g: learner("G.")?,
        momentum_f: learner("momentum.F.")?,
        momentum_g: learner("momentum.G.")?,
        lr: v[0],
        iteration: v[1] as u64,
        decay_count: v[2] as u32,
        best_validation_r: v[3],
        rounds_since_improvement: v[4] as u32,
        rng_seed: ((v[5] as u64) << 32) | v[6] as u64,
    };
    Ok(Checkpoint {
        config,
        prior,
        state,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint_to_string(ck))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&read_file(path)?)
}

const LOSS_COLUMNS: [&str; 6] = [
    "loss_f",
    "loss_g_supervised",
    "loss_g_entropy",
    "loss_kd_labeled",
    "loss_kd_unlabeled",
    "total",
];

pub fn metrics_header(ks: &[usize]) -> String {
    let mut cols = vec!["iteration".to_string(), "lr".to_string()];
    cols.extend(LOSS_COLUMNS.iter().map(|c| c.to_string()));
    cols.extend(ks.iter().map(|k| format!("R@{k}")));
    cols.extend(ks.iter().map(|k| format!("mR@{k}")));
    cols.join(",")
}

pub fn metrics_row(row: &MetricsRow) -> String {
    let l = &row.losses;
    let mut cols = vec![row.iteration.to_string(), row.lr.to_string()];
    cols.extend(
        [l.loss_f, l.loss_g_supervised, l.loss_g_entropy, l.loss_kd_labeled, l.loss_kd_unlabeled, l.total]
            .iter()
            .map(|x| x.to_string()),
    );
    cols.extend(row.recall.iter().chain(&row.mean_recall).map(|x| x.to_string()));
    cols.join(",")
}

pub fn metrics_to_string(log: &MetricsLog) -> String {
    let mut out = metrics_header(&log.ks);
    out.push('\n');
    for row in &log.rows {
        out.push_str(&metrics_row(row));
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<MetricsLog> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.expect("metrics header")?;
    let ks: Vec<usize> = header
        .split(',')
        .filter_map(|c| c.strip_prefix("R@"))
        .map(|k| parse(n, Some(k), "K"))
        .collect::<Result<_>>()?;
    if header != metrics_header(&ks) {
        return Err(parse_err(n, "unexpected metrics columns"));
    }
    let mut rows = Vec::new();
    while let Some((n, line)) = lines.next() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 + 2 * ks.len() {
            return Err(parse_err(n, format!("expected {} columns, found {}", 8 + 2 * ks.len(), cols.len())));
        }
        let f = |i: usize| parse::<f64>(n, Some(cols[i]), "value");
        let rest: Vec<f64> = (8..cols.len()).map(f).collect::<Result<_>>()?;
        rows.push(MetricsRow {
            iteration: parse(n, Some(cols[0]), "iteration")?,
            lr: f(1)?,
            losses: LossBreakdown {
                loss_f: f(2)?,
                loss_g_supervised: f(3)?,
                loss_g_entropy: f(4)?,
                loss_kd_labeled: f(5)?,
                loss_kd_unlabeled: f(6)?,
                total: f(7)?,
            },
            recall: rest[..ks.len()].to_vec(),
            mean_recall: rest[ks.len()..].to_vec(),
        });
    }
    Ok(MetricsLog { ks, rows })
}

/// One line of a recall report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// `constrained` or `unconstrained`.
    pub mode: String,
    /// `annotated` or `oracle`.
    pub truth: String,
    /// `R` or `mR`.
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

pub fn report_rows(report: &RecallReport, mode: &str, truth: &str) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for (metric, values) in [("R", &report.recall), ("mR", &report.mean_recall)] {
        for (&k, &value) in report.ks.iter().zip(values) {
            rows.push(ReportRow {
                mode: mode.into(),
                truth: truth.into(),
                metric: metric.into(),
                k,
                value,
            });
        }
    }
    rows
}

pub fn report_to_string(rows: &[ReportRow]) -> String {
    let mut out = String::from("mode,truth,metric,k,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.mode, r.truth, r.metric, r.k, r.value);
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.expect("report header")?;
    if header != "mode,truth,metric,k,value" {
        return Err(parse_err(n, "unexpected report columns"));
    }
    let mut rows = Vec::new();
    while let Some((n, line)) = lines.next() {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(parse_err(n, "expected 5 columns"));
        }
        rows.push(ReportRow {
            mode: c[0].into(),
            truth: c[1].into(),
            metric: c[2].into(),
            k: parse(n, Some(c[3]), "K")?,
            value: parse(n, Some(c[4]), "value")?,
        });
    }
    Ok(rows)
}

pub fn per_class_to_string(ks: &[usize], rows: &[ClassRow]) -> String {
    let mut out = String::from("class,name,gt_count");
    for k in ks {
        let _ = write!(out, ",R@{k}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.class, r.name, r.gt_count);
        for x in &r.recall {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_per_class(text: &str) -> Result<(Vec<usize>, Vec<ClassRow>)> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.expect("per-class header")?;
    let ks: Vec<usize> = header
        .split(',')
        .skip(3)
        .map(|c| parse(n, c.strip_prefix("R@"), "K column"))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    while let Some((n, line)) = lines.next() {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 3 + ks.len() {
            return Err(parse_err(n, format!("expected {} columns", 3 + ks.len())));
        }
        rows.push(ClassRow {
            class: parse(n, Some(c[0]), "class")?,
            name: c[1].into(),
            gt_count: parse(n, Some(c[2]), "count")?,
            recall: c[3..].iter().map(|t| parse(n, Some(t), "recall")).collect::<Result<_>>()?,
        });
    }
    Ok((ks, rows))
}

/// Human-readable corpus summary, one block per split.
pub fn summary_to_string(splits: &[(&str, &CorpusStatistics)]) -> String {
    let mut out = String::new();
    for (name, s) in splits {
        let _ = writeln!(out, "[{name}]");
        let _ = writeln!(out, "images {}", s.num_images);
        let _ = writeln!(out, "pairs {}", s.num_pairs);
        let _ = writeln!(out, "annotated_pairs {}", s.annotated_pairs);
        let _ = writeln!(out, "unannotated_pairs {}", s.unannotated_pairs);
        if s.related_pairs > 0 {
            let _ = writeln!(out, "related_pairs {}", s.related_pairs);
            let _ = writeln!(out, "fraction_unannotated_related {:.4}", s.fraction_unannotated_related);
            let _ = writeln!(out, "mean_true_set_size {:.4}", s.mean_true_set_size);
        }
        let hist = |h: &[usize]| h.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "annotated_histogram {}", hist(&s.annotated_histogram));
        if s.related_pairs > 0 {
            let _ = writeln!(out, "true_histogram {}", hist(&s.true_histogram));
        }
        out.push('\n');
    }
    out
}
