//! Labeled corpora: loading, vocabularies, class statistics, splits,
//! TF-IDF features and synthetic fixtures.

mod load;
mod split;
mod stats;
pub mod synth;
mod tfidf;
mod vocab;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{load_dataset, LoadReport, RatingRule, RowError, Schema};
pub use split::{assign_splits, SplitRatios};
pub use stats::{class_stats, ClassStats};
pub use synth::{encode_fixture, synth_corpus, CategorySpec, FixtureSpec, SynthSpec};
pub use tfidf::{count_matrix, SparseMatrix, TfIdf};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, UNK};

/// Default cap on encoded sequence length, EOS included.
pub const DEFAULT_MAX_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One encoded record. `tokens` holds content ids only; EOS is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub label: usize,
    pub tokens: Vec<u32>,
    pub provenance: Provenance,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub records: Vec<Record>,
    pub label_names: Vec<String>,
}

impl LabeledCorpus {
    pub fn new(label_names: Vec<String>) -> Self {
        LabeledCorpus { records: Vec::new(), label_names }
    }

    /// Encodes `(label, tokens)` pairs as real training records, truncating
    /// each to `max_len - 1` content tokens.
    pub fn from_tokens(
        rows: &[(String, Vec<String>)],
        label_names: Vec<String>,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Self> {
        let mut corpus = LabeledCorpus::new(label_names);
        for (label, toks) in rows {
            let id = corpus.label_id(label).ok_or_else(|| Error::Config(format!("unknown label {label:?}")))?;
            corpus.records.push(Record {
                label: id,
                tokens: vocab.encode_truncated(toks, max_len),
                provenance: Provenance::Real,
                split: Split::Train,
            });
        }
        Ok(corpus)
    }

    pub fn num_categories(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_vec(&self, split: Split) -> Vec<Record> {
        self.split_records(split).cloned().collect()
    }

    /// A corpus holding only records of `split`.
    pub fn subset(&self, split: Split) -> LabeledCorpus {
        LabeledCorpus { records: self.split_vec(split), label_names: self.label_names.clone() }
    }

    pub fn counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut c = vec![0; self.num_categories()];
        for r in self.records.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            c[r.label] += 1;
        }
        c
    }

    /// Checks the corpus invariants against a vocabulary size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.label >= self.num_categories() {
                return Err(Error::UnknownCategory { category: r.label, num_categories: self.num_categories() });
            }
            if let Some(&t) = r.tokens.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Config(format!("record {i}: token id {t} >= vocab size {vocab_size}")));
            }
            if r.provenance == Provenance::Synthetic && r.split != Split::Train {
                return Err(Error::Hygiene(format!("record {i} is synthetic but assigned to {:?}", r.split)));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, vocab: &Vocab, mut w: W) -> Result<()> {
        for r in &self.records {
            let line = JsonRecord {
                label: self.label_names[r.label].clone(),
                tokens: vocab.decode(&r.tokens),
                provenance: r.provenance,
                split: r.split,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Line format of cleaned corpora on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonRecord {
    pub label: String,
    pub tokens: Vec<String>,
    pub provenance: Provenance,
    pub split: Split,
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<JsonRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Orders label names: polarity labels as positive, neutral, negative;
/// anything else by first appearance.
pub fn canonical_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for l in labels {
        if !seen.iter().any(|s| s == l) {
            seen.push(l.to_string());
        }
    }
    const POLARITY: [&str; 3] = ["positive", "neutral", "negative"];
    if seen.iter().all(|s| POLARITY.contains(&s.as_str())) {
        POLARITY.iter().filter(|p| seen.iter().any(|s| s == *p)).map(|p| p.to_string()).collect()
    } else {
        seen
    }
}

/// Encodes on-disk records with `vocab`, keeping their splits and provenance.
pub fn corpus_from_json(
    rows: &[JsonRecord],
    label_names: Vec<String>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<LabeledCorpus> {
    let mut corpus = LabeledCorpus::new(label_names);
    for r in rows {
        let label = corpus.label_id(&r.label).ok_or_else(|| Error::Config(format!("unknown label {:?}", r.label)))?;
        corpus.records.push(Record {
            label,
            tokens: vocab.encode_truncated(&r.tokens, max_len),
            provenance: r.provenance,
            split: r.split,
        });
    }
    corpus.validate(vocab.len())?;
    Ok(corpus)
}
