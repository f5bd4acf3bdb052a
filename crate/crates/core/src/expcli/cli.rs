//! Command-line front end. Every stage reads its inputs from `--data`
//! (default: the output directory) and writes to `--out`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    load_raw, log_kv, prepare, render_comparison, render_report, run_experiment, train_gan,
    DatasetSource, ExperimentConfig, ExperimentReport, Format,
};
use crate::advtrain::{snapshot, GanBundle, GanData, GanKind};
use crate::balance::{compute_plan, duplicate_minority, generate_minority, merge_balanced};
use crate::corpus::{
    canonical_labels, class_stats, corpus_from_json, read_jsonl, ClassStats, JsonRecord, LabeledCorpus, Provenance,
    RatingRule, Schema, Split, Vocab,
};
use crate::error::{in_stage, Error, Result};
use crate::sentclass::{evaluate, Classifier, ClassifierKind};
use crate::textprep::DropCounts;

#[derive(Parser, Debug)]
#[command(name = "textbalance", version, about = "Rebalance sentiment corpora with category-aware GAN text and measure the effect")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed list with one seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean, encode and split a dataset into corpus.jsonl + meta.json.
    Prep {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<Schema>,
    },
    /// Per-label counts and imbalance ratio of a CSV file or a prepared corpus.
    Stats {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<Schema>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a GAN bundle on the prepared corpus.
    TrainGan {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kind: Option<GanKind>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Emit generated records as JSON lines on stdout.
    Sample {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        category: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// BLEU, NLL_gen and NLL_div of a trained bundle.
    Metrics {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write balanced.jsonl from GAN samples (or minority duplicates).
    Balance {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Duplicate real minority records instead of generating.
        #[arg(long)]
        duplicate: bool,
    },
    /// Train one classifier on the train split of a corpus file.
    TrainClf {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Corpus file (default: <data>/corpus.jsonl).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        model: ClassifierKind,
    },
    /// Score a saved classifier on the test split.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
    },
    /// Run the full experiment described by --config.
    Run,
    /// Render saved report JSON files.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

/// Side data of a prepared corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrepMeta {
    pub dataset_id: String,
    pub label_names: Vec<String>,
    pub max_len: usize,
    pub seed: u64,
    pub vocab: Vocab,
    pub drops: DropCounts,
    pub load_errors: usize,
}

struct Ctx {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn data(&self, d: &Option<PathBuf>) -> PathBuf {
        d.clone().unwrap_or_else(|| self.out.clone())
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn load_meta(dir: &Path) -> Result<PrepMeta> {
    let mut m: PrepMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    m.vocab.reindex();
    Ok(m)
}

fn load_corpus(path: &Path, meta: &PrepMeta) -> Result<LabeledCorpus> {
    let rows = read_jsonl(BufReader::new(File::open(path)?))?;
    corpus_from_json(&rows, meta.label_names.clone(), &meta.vocab, meta.max_len)
}

fn print_stats(stats: &ClassStats) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for (name, count) in stats.label_names.iter().zip(&stats.counts) {
        writeln!(out, "{name}\t{count}")?;
    }
    writeln!(out, "total\t{}", stats.total())?;
    writeln!(out, "imbalance_ratio\t{:.4}", stats.imbalance_ratio)?;
    Ok(())
}

fn checkpoint_path(data: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| data.join("gan.ckpt"))
}

fn dispatch(cli: Cli, ctx: Ctx) -> Result<()> {
    fs::create_dir_all(&ctx.out)?;
    match cli.command {
        Command::Prep { input, schema } => {
            let mut config = ctx.config.clone();
            if let Some(path) = input {
                let schema = schema.ok_or_else(|| Error::Config("--input needs --schema".into()))?;
                config.dataset = DatasetSource::Csv { path, schema, rating_rule: RatingRule::default() };
            }
            let p = prepare(&config, ctx.seed)?;
            let mut w = BufWriter::new(File::create(ctx.out.join("corpus.jsonl"))?);
            p.corpus.write_jsonl(&p.vocab, &mut w)?;
            w.flush()?;
            let meta = PrepMeta {
                dataset_id: config.dataset_id.clone(),
                label_names: p.corpus.label_names.clone(),
                max_len: config.vocab.max_len,
                seed: ctx.seed,
                vocab: p.vocab,
                drops: p.drops.clone(),
                load_errors: p.load_errors,
            };
            write_json(&ctx.out.join("meta.json"), &meta)?;
            log_kv(
                "prep",
                "done",
                &[
                    ("records", p.corpus.len().to_string()),
                    ("vocab", meta.vocab.len().to_string()),
                    ("dropped", p.drops.total().to_string()),
                    ("load_errors", p.load_errors.to_string()),
                ],
            );
        }
        Command::Stats { input, schema, data } => {
            let stats = match input {
                Some(path) => {
                    let schema = schema.ok_or_else(|| Error::Config("--input needs --schema".into()))?;
                    let (raw, _) = load_raw(&DatasetSource::Csv { path, schema, rating_rule: RatingRule::default() }, 0)?;
                    let labels = canonical_labels(raw.iter().map(|r| r.label.as_str()));
                    let counts = labels.iter().map(|l| raw.iter().filter(|r| &r.label == l).count()).collect();
                    ClassStats::from_counts(labels, counts)
                }
                None => {
                    let dir = ctx.data(&data);
                    let meta = load_meta(&dir)?;
                    class_stats(&load_corpus(&dir.join("corpus.jsonl"), &meta)?, None)
                }
            };
            print_stats(&stats)?;
        }
        Command::TrainGan { data, kind, rounds } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let corpus = load_corpus(&dir.join("corpus.jsonl"), &meta)?;
            let mut config = ctx.config.clone();
            config.gan_checkpoint = None;
            if let Some(k) = kind {
                config.gan = k;
            }
            if let Some(r) = rounds {
                config.train.adversarial_rounds = r;
            }
            config.train.validate()?;
            let (bundle, history) = in_stage("gan", train_gan(&config, &corpus, meta.vocab.len(), ctx.seed))?;
            bundle.save(&ctx.out.join("gan.ckpt"))?;
            history.write_rounds_csv(File::create(ctx.out.join("gan_rounds.csv"))?)?;
            history.write_candidates_csv(File::create(ctx.out.join("gan_candidates.csv"))?)?;
            write_json(&ctx.out.join("gan_pretrain.json"), &history.pretrain)?;
            log_kv("gan", "done", &[("rounds", history.rounds.len().to_string())]);
        }
        Command::Sample { data, checkpoint, category, n, temperature } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let bundle = GanBundle::load(&checkpoint_path(&dir, &checkpoint))?;
            let c = meta
                .label_names
                .iter()
                .position(|l| *l == category)
                .ok_or_else(|| Error::Config(format!("unknown category {category:?}; have {:?}", meta.label_names)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let mut out = std::io::stdout().lock();
            for s in bundle.sample(c, n, temperature, &mut rng)? {
                let rec = JsonRecord {
                    label: category.clone(),
                    tokens: meta.vocab.decode(s.content()),
                    provenance: Provenance::Synthetic,
                    split: Split::Train,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        Command::Metrics { data, checkpoint } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let corpus = load_corpus(&dir.join("corpus.jsonl"), &meta)?;
            let bundle = GanBundle::load(&checkpoint_path(&dir, &checkpoint))?;
            let gd = GanData::from_corpus(&corpus, bundle.model.max_len)?;
            let snap = snapshot(&bundle, &gd, &ctx.config.train, ctx.seed)?;
            println!("{}", serde_json::to_string(&snap)?);
        }
        Command::Balance { data, checkpoint, duplicate } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let corpus = load_corpus(&dir.join("corpus.jsonl"), &meta)?;
            let b = &ctx.config.balance;
            let plan = compute_plan(&class_stats(&corpus, Some(Split::Train)), &b.policy, b.filters, b.oversample_cap);
            let synthetic = if duplicate {
                write_json(&ctx.out.join("balance_report.json"), &plan)?;
                duplicate_minority(&plan, &corpus, ctx.seed)?
            } else {
                let bundle = GanBundle::load(&checkpoint_path(&dir, &checkpoint))?;
                let (recs, report) = generate_minority(&bundle, &plan, &corpus, ctx.seed, b.attempt_factor)?;
                write_json(&ctx.out.join("balance_report.json"), &report)?;
                recs
            };
            let added = synthetic.len();
            let merged = merge_balanced(&corpus, synthetic, ctx.seed)?;
            let mut w = BufWriter::new(File::create(ctx.out.join("balanced.jsonl"))?);
            merged.write_jsonl(&meta.vocab, &mut w)?;
            w.flush()?;
            log_kv("balance", "done", &[("added", added.to_string()), ("duplicate", duplicate.to_string())]);
        }
        Command::TrainClf { data, corpus, model } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let corpus = load_corpus(&corpus.unwrap_or_else(|| dir.join("corpus.jsonl")), &meta)?;
            let clf = Classifier::fit(
                model,
                &corpus.split_vec(Split::Train),
                &corpus.split_vec(Split::Val),
                meta.vocab.len(),
                corpus.num_categories(),
                &ctx.config.classifier_hyper,
                ctx.seed,
            )?;
            let path = ctx.out.join(format!("clf_{}.json", model.name()));
            clf.save(&path)?;
            log_kv("classify", "saved", &[("model", model.name().into()), ("path", path.display().to_string())]);
        }
        Command::Evaluate { data, classifier } => {
            let dir = ctx.data(&data);
            let meta = load_meta(&dir)?;
            let corpus = load_corpus(&dir.join("corpus.jsonl"), &meta)?;
            let clf = Classifier::load(&classifier)?;
            let metrics = evaluate(&clf, &corpus.split_vec(Split::Test))?;
            let record = serde_json::json!({
                "model": clf.kind(),
                "dataset": meta.dataset_id,
                "seed": ctx.seed,
                "metrics": metrics,
            });
            println!("{record}");
        }
        Command::Run => {
            let report = run_experiment(&ctx.config)?;
            for (format, ext) in [(Format::Json, "json"), (Format::Markdown, "md"), (Format::Csv, "csv")] {
                fs::write(ctx.out.join(format!("report.{ext}")), render_report(&report, format)?)?;
            }
            log_kv("report", "written", &[("dir", ctx.out.display().to_string())]);
        }
        Command::Report { input, format } => {
            let reports = input
                .iter()
                .map(|p| Ok(serde_json::from_slice::<ExperimentReport>(&fs::read(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            let text = match (format, reports.as_slice()) {
                (Format::Markdown, rs) => render_comparison(rs)?,
                (f, [one]) => render_report(one, f)?,
                _ => return Err(Error::Config("csv and json render one report at a time".into())),
            };
            print!("{text}");
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a usage error, 2 when a stage fails.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let mut config = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => return fail("config", &e),
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seeds = vec![s];
    }
    let seed = config.seeds.first().copied().unwrap_or(0);
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match dispatch(cli, Ctx { config, seed, out }) {
        Ok(()) => 0,
        Err(e) => fail("command", &e),
    }
}

fn fail(stage: &str, e: &Error) -> i32 {
    let stage: &str = match e {
        Error::Stage { stage, .. } => stage,
        _ => stage,
    };
    let record = serde_json::json!({ "stage": stage, "kind": e.kind(), "error": e.to_string() });
    eprintln!("{record}");
    2
}
