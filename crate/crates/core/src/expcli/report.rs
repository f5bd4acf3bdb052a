use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Arm;
use crate::advtrain::History;
use crate::balance::PlanReport;
use crate::corpus::ClassStats;
use crate::error::{Error, Result};
use crate::sentclass::{ClassifierKind, ClsMetrics, Family};

/// Scores of one (model, arm, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ClassifierKind,
    pub family: Family,
    pub dataset: String,
    pub arm: Arm,
    pub seed: u64,
    /// Epochs trained (neural models only).
    pub epochs: usize,
    pub metrics: ClsMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmBalance {
    pub seed: u64,
    pub arm: Arm,
    pub added: usize,
    pub report: Option<PlanReport>,
}

/// Last metric snapshot of a GAN run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub seed: u64,
    pub rounds: usize,
    pub aborted_rounds: usize,
    pub bleu: Option<f64>,
    pub nll_gen: Option<f64>,
    pub nll_div: Option<f64>,
}

impl GanSummary {
    pub fn from_history(seed: u64, h: &History) -> Self {
        let last = h.rounds.iter().rev().find(|r| r.bleu.is_some());
        GanSummary {
            seed,
            rounds: h.rounds.len(),
            aborted_rounds: h.rounds.iter().filter(|r| r.aborted).count(),
            bleu: last.and_then(|r| r.bleu),
            nll_gen: last.and_then(|r| r.nll_gen),
            nll_div: last.and_then(|r| r.nll_div),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMean {
    pub model: ClassifierKind,
    pub family: Family,
    pub arm: Arm,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub runs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
}

impl Metric {
    fn of(self, m: &ClsMetrics) -> f64 {
        match self {
            Metric::Accuracy => m.accuracy,
            Metric::F1 => m.macro_f1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::F1 => "F1",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    DeepLearning,
    MachineLearning,
    Overall,
}

impl Group {
    fn label(self) -> &'static str {
        match self {
            Group::DeepLearning => "Deep learning",
            Group::MachineLearning => "Machine Learning",
            Group::Overall => "Overall average",
        }
    }
}

/// Mean difference `arm - baseline` in percentage points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub metric: Metric,
    pub group: Group,
    pub value: f64,
    pub models: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffBlock {
    pub arm: Arm,
    pub baseline: Arm,
    pub rows: Vec<DiffRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub label_names: Vec<String>,
    /// Real training counts of the first seed.
    pub train_counts: Vec<usize>,
    pub imbalance_ratio: f64,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub runs: Vec<RunRecord>,
    pub means: Vec<ModelMean>,
    pub differences: Vec<DiffBlock>,
    pub balance: Vec<ArmBalance>,
    pub gan: Vec<GanSummary>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Models in first-appearance order.
fn models_of(runs: &[RunRecord]) -> Vec<ClassifierKind> {
    let mut out: Vec<ClassifierKind> = Vec::new();
    for r in runs {
        if !out.contains(&r.model) {
            out.push(r.model);
        }
    }
    out
}

fn compute_means(runs: &[RunRecord], arms: &[Arm]) -> Vec<ModelMean> {
    let mut out = Vec::new();
    for model in models_of(runs) {
        for &arm in arms {
            let sel: Vec<&RunRecord> = runs.iter().filter(|r| r.model == model && r.arm == arm).collect();
            if sel.is_empty() {
                continue;
            }
            out.push(ModelMean {
                model,
                family: model.family(),
                arm,
                accuracy: mean(&sel.iter().map(|r| r.metrics.accuracy).collect::<Vec<_>>()),
                macro_f1: mean(&sel.iter().map(|r| r.metrics.macro_f1).collect::<Vec<_>>()),
                runs: sel.len(),
            });
        }
    }
    out
}

/// Per model: mean over seeds of `100 * (arm - baseline)`. Family rows
/// average their models; the overall row weights families by model count.
fn compute_diff(runs: &[RunRecord], arm: Arm, baseline: Arm) -> DiffBlock {
    let mut rows = Vec::new();
    for metric in [Metric::Accuracy, Metric::F1] {
        let mut per_family: BTreeMap<Family, Vec<f64>> = BTreeMap::new();
        for model in models_of(runs) {
            let base: BTreeMap<u64, f64> = runs
                .iter()
                .filter(|r| r.model == model && r.arm == baseline)
                .map(|r| (r.seed, metric.of(&r.metrics)))
                .collect();
            let diffs: Vec<f64> = runs
                .iter()
                .filter(|r| r.model == model && r.arm == arm)
                .filter_map(|r| base.get(&r.seed).map(|b| 100.0 * (metric.of(&r.metrics) - b)))
                .collect();
            if !diffs.is_empty() {
                per_family.entry(model.family()).or_default().push(mean(&diffs));
            }
        }
        let mut weighted = 0.0;
        let mut total = 0;
        for (family, group) in [(Family::DeepLearning, Group::DeepLearning), (Family::MachineLearning, Group::MachineLearning)] {
            if let Some(ds) = per_family.get(&family) {
                let v = mean(ds);
                weighted += v * ds.len() as f64;
                total += ds.len();
                rows.push(DiffRow { metric, group, value: v, models: ds.len() });
            }
        }
        if total > 0 {
            rows.push(DiffRow { metric, group: Group::Overall, value: weighted / total as f64, models: total });
        }
    }
    DiffBlock { arm, baseline, rows }
}

pub fn build_report(
    dataset: &str,
    label_names: Vec<String>,
    train_counts: Vec<usize>,
    runs: Vec<RunRecord>,
    balance: Vec<ArmBalance>,
    gan: Vec<GanSummary>,
) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(Error::Report("no runs".into()));
    }
    let mut arms: Vec<Arm> = runs.iter().map(|r| r.arm).collect();
    arms.sort();
    arms.dedup();
    if !arms.contains(&Arm::Imbalanced) || arms.len() < 2 {
        return Err(Error::Report(format!("need the imbalanced arm and one other, found {arms:?}")));
    }
    let mut seeds: Vec<u64> = Vec::new();
    for r in &runs {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let imbalance_ratio = ClassStats::from_counts(label_names.clone(), train_counts.clone()).imbalance_ratio;
    let means = compute_means(&runs, &arms);
    let differences =
        arms.iter().filter(|&&a| a != Arm::Imbalanced).map(|&a| compute_diff(&runs, a, Arm::Imbalanced)).collect();
    Ok(ExperimentReport {
        dataset: dataset.to_string(),
        label_names,
        train_counts,
        imbalance_ratio,
        seeds,
        arms,
        runs,
        means,
        differences,
        balance,
        gan,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Recomputes means and differences from the per-run records.
pub fn check_consistency(report: &ExperimentReport) -> Result<()> {
    if report.runs.is_empty() {
        return Err(Error::Report("no runs".into()));
    }
    let means = compute_means(&report.runs, &report.arms);
    if means.len() != report.means.len() {
        return Err(Error::Report("mean table size differs from the runs".into()));
    }
    for (a, b) in means.iter().zip(&report.means) {
        if a.model != b.model || a.arm != b.arm || a.runs != b.runs || !close(a.accuracy, b.accuracy) || !close(a.macro_f1, b.macro_f1) {
            return Err(Error::Report(format!("mean of {} / {} disagrees with its runs", a.model.name(), a.arm.name())));
        }
    }
    for block in &report.differences {
        let fresh = compute_diff(&report.runs, block.arm, block.baseline);
        if fresh.rows.len() != block.rows.len() {
            return Err(Error::Report(format!("difference block {} has the wrong rows", block.arm.name())));
        }
        for (a, b) in fresh.rows.iter().zip(&block.rows) {
            if a.metric != b.metric || a.group != b.group || a.models != b.models || !close(a.value, b.value) {
                return Err(Error::Report(format!(
                    "difference {:?}/{:?} for {} is {} but the runs give {}",
                    b.metric,
                    b.group,
                    block.arm.name(),
                    b.value,
                    a.value
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

/// Renders one report after re-checking it against its runs.
pub fn render_report(report: &ExperimentReport, format: Format) -> Result<String> {
    check_consistency(report)?;
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => render_csv(report),
        Format::Markdown => render_comparison(std::slice::from_ref(report)),
    }
}

/// Summary table with one column per dataset, then per-model means.
pub fn render_comparison(reports: &[ExperimentReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Report("nothing to render".into()));
    }
    for r in reports {
        check_consistency(r)?;
    }
    let mut arms: Vec<Arm> = reports.iter().flat_map(|r| r.differences.iter().map(|d| d.arm)).collect();
    arms.sort();
    arms.dedup();
    let mut md = String::new();
    for arm in arms {
        let _ = writeln!(md, "## Degree of difference: {} minus imbalanced (percentage points)\n", arm.name());
        let mut head = String::from("| Metric | Model family |");
        let mut rule = String::from("|---|---|");
        for r in reports {
            let _ = write!(head, " {} |", r.dataset);
            rule.push_str("---:|");
        }
        let _ = writeln!(md, "{head}\n{rule}");
        for metric in [Metric::Accuracy, Metric::F1] {
            for group in [Group::DeepLearning, Group::MachineLearning, Group::Overall] {
                let _ = write!(md, "| {} | {} |", metric.label(), group.label());
                for r in reports {
                    let v = r
                        .differences
                        .iter()
                        .find(|d| d.arm == arm)
                        .and_then(|d| d.rows.iter().find(|x| x.metric == metric && x.group == group));
                    match v {
                        Some(x) => {
                            let _ = write!(md, " {:.2} |", x.value);
                        }
                        None => md.push_str(" n/a |"),
                    }
                }
                md.push('\n');
            }
        }
        md.push('\n');
    }
    for r in reports {
        let _ = writeln!(
            md,
            "## {}: per-model means over {} seed(s), train imbalance ratio {:.2}\n",
            r.dataset,
            r.seeds.len(),
            r.imbalance_ratio
        );
        md.push_str("| Model | Family | Arm | Accuracy | Macro-F1 | Runs |\n|---|---|---|---:|---:|---:|\n");
        for m in &r.means {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.4} | {:.4} | {} |",
                m.model.name(),
                m.family.name(),
                m.arm.name(),
                m.accuracy,
                m.macro_f1,
                m.runs
            );
        }
        md.push('\n');
    }
    Ok(md)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    section: &'a str,
    dataset: &'a str,
    model: &'a str,
    arm: &'a str,
    seed: String,
    metric: String,
    value: String,
}

/// Long format: one row per number in the report.
fn render_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ds = report.dataset.as_str();
    for r in &report.runs {
        let m = &r.metrics;
        let mut cells: Vec<(String, String)> = vec![
            ("epochs".into(), r.epochs.to_string()),
            ("accuracy".into(), m.accuracy.to_string()),
            ("macro_precision".into(), m.macro_precision.to_string()),
            ("macro_recall".into(), m.macro_recall.to_string()),
            ("macro_f1".into(), m.macro_f1.to_string()),
        ];
        for (c, name) in report.label_names.iter().enumerate() {
            cells.push((format!("precision.{name}"), m.precision[c].to_string()));
            cells.push((format!("recall.{name}"), m.recall[c].to_string()));
            cells.push((format!("f1.{name}"), m.f1[c].to_string()));
            cells.push((format!("support.{name}"), m.support[c].to_string()));
            for (p, pred) in report.label_names.iter().enumerate() {
                cells.push((format!("confusion.{name}.{pred}"), m.confusion[c][p].to_string()));
            }
        }
        for (metric, value) in cells {
            w.serialize(CsvRow {
                section: "run",
                dataset: ds,
                model: r.model.name(),
                arm: r.arm.name(),
                seed: r.seed.to_string(),
                metric,
                value,
            })?;
        }
    }
    for m in &report.means {
        for (metric, value) in [("accuracy", m.accuracy), ("macro_f1", m.macro_f1)] {
            w.serialize(CsvRow {
                section: "mean",
                dataset: ds,
                model: m.model.name(),
                arm: m.arm.name(),
                seed: String::new(),
                metric: metric.into(),
                value: value.to_string(),
            })?;
        }
    }
    for d in &report.differences {
        for row in &d.rows {
            w.serialize(CsvRow {
                section: "difference",
                dataset: ds,
                model: match row.group {
                    Group::DeepLearning => "deep_learning",
                    Group::MachineLearning => "machine_learning",
                    Group::Overall => "overall",
                },
                arm: d.arm.name(),
                seed: String::new(),
                metric: match row.metric {
                    Metric::Accuracy => "accuracy".into(),
                    Metric::F1 => "macro_f1".into(),
                },
                value: row.value.to_string(),
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}
