//! Experiment configuration and the full imbalanced-vs-balanced pipeline.

pub mod cli;
mod report;

pub use report::{
    build_report, check_consistency, render_comparison, render_report, ArmBalance, DiffBlock, DiffRow, ExperimentReport,
    Format, GanSummary, Group, Metric, ModelMean, RunRecord,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advtrain::{self, stream_seed, GanBundle, GanData, GanKind, GanModelConfig, TrainConfig};
use crate::balance::{
    assert_hygiene, compute_plan, duplicate_minority, generate_minority, merge_balanced, GenFilters, PlanReport,
    TargetPolicy,
};
use crate::corpus::{
    assign_splits, build_vocab, canonical_labels, class_stats, load_dataset, synth_corpus, FixtureSpec, LabeledCorpus,
    RatingRule, Record, Schema, Split, SplitRatios, Vocab, DEFAULT_MAX_LEN,
};
use crate::error::{in_stage, Error, Result};
use crate::sentclass::{evaluate, Classifier, ClassifierHyper, ClassifierKind};
use crate::textprep::{preprocess_all, DropCounts, PrepConfig, PrepResources, RawRecord};

/// Where the raw reviews come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: Schema,
        #[serde(default)]
        rating_rule: RatingRule,
    },
    /// Seeded template corpus; the run seed drives generation.
    Synthetic { fixture: FixtureSpec },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Imbalanced,
    Balanced,
    Duplicated,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Imbalanced => "imbalanced",
            Arm::Balanced => "balanced",
            Arm::Duplicated => "duplicated",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Counts the four reserved ids.
    pub max_size: usize,
    pub min_freq: usize,
    /// Encoded length cap, EOS included.
    pub max_len: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { max_size: 20_000, min_freq: 1, max_len: DEFAULT_MAX_LEN }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub policy: TargetPolicy,
    pub filters: GenFilters,
    pub oversample_cap: Option<f64>,
    /// Generation budget per category, as a multiple of its deficit.
    pub attempt_factor: usize,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            policy: TargetPolicy::MajorityMatch,
            filters: GenFilters::default(),
            oversample_cap: None,
            attempt_factor: 4,
        }
    }
}

/// One file fully determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_id: String,
    pub dataset: DatasetSource,
    pub prep: PrepConfig,
    pub vocab: VocabConfig,
    pub split: SplitRatios,
    pub stratified: bool,
    pub gan: GanKind,
    pub gan_model: GanModelConfig,
    /// Its `seed` field is replaced by each run seed.
    pub train: TrainConfig,
    /// Reuse a trained bundle instead of training one per seed.
    pub gan_checkpoint: Option<PathBuf>,
    pub balance: BalanceConfig,
    pub classifiers: Vec<ClassifierKind>,
    pub classifier_hyper: ClassifierHyper,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_id: "synthetic".into(),
            dataset: DatasetSource::Synthetic { fixture: FixtureSpec::default() },
            prep: PrepConfig::default(),
            vocab: VocabConfig::default(),
            split: SplitRatios::default(),
            stratified: true,
            gan: GanKind::CatGan,
            gan_model: GanModelConfig::default(),
            train: TrainConfig::default(),
            gan_checkpoint: None,
            balance: BalanceConfig::default(),
            classifiers: ClassifierKind::SUITE.to_vec(),
            classifier_hyper: ClassifierHyper::default(),
            arms: vec![Arm::Imbalanced, Arm::Balanced],
            seeds: vec![0],
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_slice(&std::fs::read(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for need in [Arm::Imbalanced, Arm::Balanced] {
            if !self.arms.contains(&need) {
                return Err(Error::Config(format!("arms must include {}", need.name())));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.classifiers.is_empty() {
            return Err(Error::Config("classifier list is empty".into()));
        }
        if self.vocab.max_len < 2 {
            return Err(Error::Config("vocab.max_len must leave room for content and EOS".into()));
        }
        self.split.check()?;
        self.train.validate()
    }
}

/// Log line: `ts=<unix seconds> stage=<stage> event=<event> k=v ...` on stderr.
pub fn log_kv(stage: &str, event: &str, fields: &[(&str, String)]) {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let mut line = format!("ts={ts:.3} stage={stage} event={event}");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

/// Cleaned, encoded and split corpus for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub corpus: LabeledCorpus,
    pub drops: DropCounts,
    pub load_errors: usize,
}

pub fn load_raw(source: &DatasetSource, seed: u64) -> Result<(Vec<RawRecord>, usize)> {
    match source {
        DatasetSource::Csv { path, schema, rating_rule } => {
            let rep = load_dataset(path, *schema, *rating_rule)?;
            Ok((rep.records, rep.errors.len()))
        }
        DatasetSource::Synthetic { fixture } => Ok((synth_corpus(&fixture.build()?, seed)?, 0)),
    }
}

/// Cleans raw records, builds the vocabulary and assigns splits.
pub fn prepare_records(raw: &[RawRecord], config: &ExperimentConfig, seed: u64) -> Result<(Vocab, LabeledCorpus, DropCounts)> {
    let (kept, drops) = preprocess_all(raw, &config.prep, &PrepResources::default());
    if kept.is_empty() {
        return Err(Error::Empty("no record survived cleaning"));
    }
    let rows: Vec<(String, Vec<String>)> = kept.into_iter().map(|(i, t)| (raw[i].label.clone(), t)).collect();
    let labels = canonical_labels(rows.iter().map(|(l, _)| l.as_str()));
    let vocab = build_vocab(rows.iter().map(|(_, t)| t.as_slice()), config.vocab.max_size, config.vocab.min_freq);
    let mut corpus = LabeledCorpus::from_tokens(&rows, labels, &vocab, config.vocab.max_len)?;
    assign_splits(&mut corpus, config.split, seed, config.stratified)?;
    Ok((vocab, corpus, drops))
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (raw, load_errors) = in_stage("load", load_raw(&config.dataset, seed))?;
    let (vocab, corpus, drops) = in_stage("preprocess", prepare_records(&raw, config, seed))?;
    Ok(Prepared { vocab, corpus, drops, load_errors })
}

/// Trains (or loads) the GAN bundle for one seed.
pub fn train_gan(
    config: &ExperimentConfig,
    corpus: &LabeledCorpus,
    vocab_size: usize,
    seed: u64,
) -> Result<(GanBundle, advtrain::History)> {
    if let Some(path) = &config.gan_checkpoint {
        let b = GanBundle::load(path)?;
        if b.vocab_size != vocab_size || b.num_categories != corpus.num_categories() {
            return Err(Error::Config(format!(
                "checkpoint {} has vocab {} / {} categories, corpus has {vocab_size} / {}",
                path.display(),
                b.vocab_size,
                b.num_categories,
                corpus.num_categories()
            )));
        }
        return Ok((b, advtrain::History::default()));
    }
    let train = TrainConfig { seed, ..config.train.clone() };
    let mut bundle = GanBundle::new(config.gan, config.gan_model.clone(), vocab_size, corpus.num_categories(), &train)?;
    let data = GanData::from_corpus(corpus, config.gan_model.max_len)?;
    let history = advtrain::train(&mut bundle, &data, &train)?;
    Ok((bundle, history))
}

/// Training set of every arm for one seed, plus what balancing did.
pub struct ArmCorpora {
    pub arms: Vec<(Arm, LabeledCorpus)>,
    pub balance: Vec<ArmBalance>,
    pub gan: Option<GanSummary>,
}

pub fn build_arms(config: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<ArmCorpora> {
    let corpus = &prepared.corpus;
    let stats = class_stats(corpus, Some(Split::Train));
    let plan = compute_plan(&stats, &config.balance.policy, config.balance.filters, config.balance.oversample_cap);
    let mut out = ArmCorpora { arms: Vec::new(), balance: Vec::new(), gan: None };
    for &arm in &config.arms {
        let merge_seed = stream_seed(seed, 0xa7, arm as u64);
        let merged = match arm {
            Arm::Imbalanced => corpus.clone(),
            Arm::Duplicated => {
                let dup = in_stage("balance", duplicate_minority(&plan, corpus, seed))?;
                out.balance.push(ArmBalance { seed, arm, added: dup.len(), report: None });
                in_stage("balance", merge_balanced(corpus, dup, merge_seed))?
            }
            Arm::Balanced => {
                log_kv("gan", "start", &[("seed", seed.to_string()), ("kind", format!("{:?}", config.gan))]);
                let (bundle, history) = in_stage("gan", train_gan(config, corpus, prepared.vocab.len(), seed))?;
                out.gan = Some(GanSummary::from_history(seed, &history));
                let (synthetic, report): (Vec<Record>, PlanReport) = in_stage(
                    "balance",
                    generate_minority(&bundle, &plan, corpus, seed, config.balance.attempt_factor),
                )?;
                log_kv(
                    "balance",
                    "generated",
                    &[("seed", seed.to_string()), ("added", synthetic.len().to_string()), ("shortfall", report.shortfall().to_string())],
                );
                out.balance.push(ArmBalance { seed, arm, added: synthetic.len(), report: Some(report) });
                in_stage("balance", merge_balanced(corpus, synthetic, merge_seed))?
            }
        };
        in_stage("balance", assert_hygiene(&merged))?;
        out.arms.push((arm, merged));
    }
    Ok(out)
}

/// Trains and scores every classifier on every arm for one seed.
pub fn evaluate_arms(
    config: &ExperimentConfig,
    arms: &[(Arm, LabeledCorpus)],
    vocab_size: usize,
    dataset: &str,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    let mut test_ref: Option<Vec<Record>> = None;
    let mut runs = Vec::new();
    for (arm, corpus) in arms {
        let train = corpus.split_vec(Split::Train);
        let val = corpus.split_vec(Split::Val);
        let test = corpus.split_vec(Split::Test);
        match &test_ref {
            None => test_ref = Some(test.clone()),
            Some(t) if *t != test => {
                return Err(Error::Hygiene(format!("arm {} evaluates on a different test slice", arm.name())));
            }
            Some(_) => {}
        }
        for (i, &kind) in config.classifiers.iter().enumerate() {
            let clf_seed = stream_seed(seed, 0xc1f, i as u64);
            let k = corpus.num_categories();
            let model = in_stage(
                "classify",
                Classifier::fit(kind, &train, &val, vocab_size, k, &config.classifier_hyper, clf_seed),
            )?;
            let metrics = in_stage("evaluate", evaluate(&model, &test))?;
            log_kv(
                "evaluate",
                "scored",
                &[
                    ("seed", seed.to_string()),
                    ("arm", arm.name().into()),
                    ("model", kind.name().into()),
                    ("accuracy", format!("{:.4}", metrics.accuracy)),
                    ("macro_f1", format!("{:.4}", metrics.macro_f1)),
                ],
            );
            runs.push(RunRecord {
                model: kind,
                family: kind.family(),
                dataset: dataset.to_string(),
                arm: *arm,
                seed,
                epochs: model.curve().len(),
                metrics,
            });
        }
    }
    Ok(runs)
}

/// load, preprocess, split, stats, GAN, balance, classify and aggregate,
/// once per seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    in_stage("config", config.validate())?;
    let mut runs = Vec::new();
    let mut balance = Vec::new();
    let mut gan = Vec::new();
    let mut first: Option<(Vec<String>, Vec<usize>)> = None;
    for &seed in &config.seeds {
        log_kv("run", "seed_start", &[("seed", seed.to_string())]);
        let prepared = prepare(config, seed)?;
        let stats = class_stats(&prepared.corpus, Some(Split::Train));
        log_kv(
            "stats",
            "train_counts",
            &[("seed", seed.to_string()), ("counts", format!("{:?}", stats.counts)), ("ratio", format!("{:.3}", stats.imbalance_ratio))],
        );
        first.get_or_insert((stats.label_names.clone(), stats.counts.clone()));
        let arms = build_arms(config, &prepared, seed)?;
        runs.extend(evaluate_arms(config, &arms.arms, prepared.vocab.len(), &config.dataset_id, seed)?);
        balance.extend(arms.balance);
        gan.extend(arms.gan);
    }
    let (label_names, train_counts) = first.expect("at least one seed");
    let report = build_report(&config.dataset_id, label_names, train_counts, runs, balance, gan)?;
    in_stage("report", check_consistency(&report))?;
    Ok(report)
}

#[cfg(test)]
mod tests;
