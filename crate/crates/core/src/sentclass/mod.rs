//! Downstream classifier bank: conventional learners over TF-IDF features,
//! neural learners over learned embeddings, and classification metrics.

mod metrics;
mod ml;
mod nn;

pub use metrics::{compute_metrics, ClsMetrics};
pub use ml::{train_ml, AdaBoost, Linear, MlHyper, MlKind, MlModel, NaiveBayes, Tree, TreeNode};
pub use nn::{train_nn, EpochRecord, NnArch, NnHyper, NnModel, RecurrentNet};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Provenance, Record, TfIdf};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MachineLearning,
    DeepLearning,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::MachineLearning => "machine_learning",
            Family::DeepLearning => "deep_learning",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    NaiveBayes,
    Logistic,
    Svm,
    Tree,
    AdaBoost,
    Rnn,
    Gru,
    BiLstm,
    Cnn,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s).ok_or_else(|| Error::Config(format!("unknown classifier {s:?}")))
    }
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 9] = [
        ClassifierKind::NaiveBayes,
        ClassifierKind::Logistic,
        ClassifierKind::Svm,
        ClassifierKind::Tree,
        ClassifierKind::AdaBoost,
        ClassifierKind::Rnn,
        ClassifierKind::Gru,
        ClassifierKind::BiLstm,
        ClassifierKind::Cnn,
    ];

    /// Four conventional plus four neural learners.
    pub const SUITE: [ClassifierKind; 8] = [
        ClassifierKind::Tree,
        ClassifierKind::AdaBoost,
        ClassifierKind::Svm,
        ClassifierKind::NaiveBayes,
        ClassifierKind::Rnn,
        ClassifierKind::BiLstm,
        ClassifierKind::Cnn,
        ClassifierKind::Gru,
    ];

    pub fn family(self) -> Family {
        match self {
            ClassifierKind::NaiveBayes
            | ClassifierKind::Logistic
            | ClassifierKind::Svm
            | ClassifierKind::Tree
            | ClassifierKind::AdaBoost => Family::MachineLearning,
            _ => Family::DeepLearning,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::NaiveBayes => "naive_bayes",
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::Svm => "svm",
            ClassifierKind::Tree => "tree",
            ClassifierKind::AdaBoost => "ada_boost",
            ClassifierKind::Rnn => "rnn",
            ClassifierKind::Gru => "gru",
            ClassifierKind::BiLstm => "bi_lstm",
            ClassifierKind::Cnn => "cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn ml(self) -> Option<MlKind> {
        Some(match self {
            ClassifierKind::NaiveBayes => MlKind::NaiveBayes,
            ClassifierKind::Logistic => MlKind::Logistic,
            ClassifierKind::Svm => MlKind::Svm,
            ClassifierKind::Tree => MlKind::Tree,
            ClassifierKind::AdaBoost => MlKind::AdaBoost,
            _ => return None,
        })
    }

    pub fn nn(self) -> Option<NnArch> {
        Some(match self {
            ClassifierKind::Rnn => NnArch::Rnn,
            ClassifierKind::Gru => NnArch::Gru,
            ClassifierKind::BiLstm => NnArch::BiLstm,
            ClassifierKind::Cnn => NnArch::Cnn,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub ml: MlHyper,
    pub nn: NnHyper,
}

/// A trained classifier with whatever featurizer it needs.
#[derive(Clone, Debug)]
pub enum Classifier {
    Ml { kind: ClassifierKind, tfidf: TfIdf, model: MlModel, num_categories: usize },
    Nn { model: NnModel, hyper: NnHyper, vocab_size: usize, num_categories: usize, curve: Vec<EpochRecord> },
}

#[derive(Serialize, Deserialize)]
struct SavedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk form of a trained classifier.
#[derive(Serialize, Deserialize)]
struct SavedClassifier {
    kind: ClassifierKind,
    num_categories: usize,
    ml: Option<(TfIdf, MlModel)>,
    nn: Option<(NnHyper, usize, Vec<SavedTensor>)>,
    curve: Vec<EpochRecord>,
}

impl Classifier {
    /// Trains on `train`. Neural models early-stop on `val`, which must be
    /// real-only; conventional models ignore it.
    pub fn fit(
        kind: ClassifierKind,
        train: &[Record],
        val: &[Record],
        vocab_size: usize,
        num_categories: usize,
        hyper: &ClassifierHyper,
        seed: u64,
    ) -> Result<Self> {
        if let Some(m) = kind.ml() {
            let tfidf = TfIdf::fit_records(train, vocab_size);
            let x = tfidf.transform_records(train);
            let labels: Vec<usize> = train.iter().map(|r| r.label).collect();
            let model = train_ml(m, &x, &labels, num_categories, &hyper.ml, seed)?;
            return Ok(Classifier::Ml { kind, tfidf, model, num_categories });
        }
        let arch = kind.nn().expect("every kind is ML or NN");
        let (model, curve) = train_nn(arch, train, val, vocab_size, num_categories, &hyper.nn, seed)?;
        Ok(Classifier::Nn { model, hyper: hyper.nn.clone(), vocab_size, num_categories, curve })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let saved = match self {
            Classifier::Ml { kind, tfidf, model, num_categories } => SavedClassifier {
                kind: *kind,
                num_categories: *num_categories,
                ml: Some((tfidf.clone(), model.clone())),
                nn: None,
                curve: Vec::new(),
            },
            Classifier::Nn { model, hyper, vocab_size, num_categories, curve } => {
                let params = model
                    .params()
                    .records()
                    .into_iter()
                    .map(|(name, t)| SavedTensor { name, shape: t.shape().to_vec(), data: t.into_data() })
                    .collect();
                SavedClassifier {
                    kind: self.kind(),
                    num_categories: *num_categories,
                    ml: None,
                    nn: Some((hyper.clone(), *vocab_size, params)),
                    curve: curve.clone(),
                }
            }
        };
        std::fs::write(path, serde_json::to_vec(&saved)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let saved: SavedClassifier = serde_json::from_slice(&std::fs::read(path)?)?;
        let k = saved.num_categories;
        match (saved.ml, saved.nn, saved.kind.nn()) {
            (Some((tfidf, model)), None, None) => {
                Ok(Classifier::Ml { kind: saved.kind, tfidf, model, num_categories: k })
            }
            (None, Some((hyper, vocab_size, params)), Some(arch)) => {
                let records = params
                    .into_iter()
                    .map(|p| Ok((p.name, Tensor::new(p.shape, p.data)?)))
                    .collect::<Result<Vec<_>>>()?;
                let model = NnModel::from_records(arch, &hyper, vocab_size, k, &records)?;
                Ok(Classifier::Nn { model, hyper, vocab_size, num_categories: k, curve: saved.curve })
            }
            _ => Err(Error::Schema { path: path.to_path_buf(), detail: "classifier file does not match its kind".into() }),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Ml { kind, .. } => *kind,
            Classifier::Nn { model, .. } => match model.arch() {
                NnArch::Rnn => ClassifierKind::Rnn,
                NnArch::Gru => ClassifierKind::Gru,
                NnArch::BiLstm => ClassifierKind::BiLstm,
                NnArch::Cnn => ClassifierKind::Cnn,
            },
        }
    }

    pub fn num_categories(&self) -> usize {
        match self {
            Classifier::Ml { num_categories, .. } | Classifier::Nn { num_categories, .. } => *num_categories,
        }
    }

    /// Learning curve of a neural model (empty for conventional ones).
    pub fn curve(&self) -> &[EpochRecord] {
        match self {
            Classifier::Ml { .. } => &[],
            Classifier::Nn { curve, .. } => curve,
        }
    }

    pub fn predict(&self, records: &[Record]) -> Result<Vec<usize>> {
        match self {
            Classifier::Ml { tfidf, model, .. } => Ok(model.predict(&tfidf.transform_records(records))),
            Classifier::Nn { model, .. } => {
                let seqs: Vec<&[u32]> = records.iter().map(|r| r.tokens.as_slice()).collect();
                model.predict(&seqs)
            }
        }
    }
}

/// Scores `model` on a real-only, nonempty test slice.
pub fn evaluate(model: &Classifier, test: &[Record]) -> Result<ClsMetrics> {
    if test.is_empty() {
        return Err(Error::Empty("test slice"));
    }
    if let Some(i) = test.iter().position(|r| r.provenance == Provenance::Synthetic) {
        return Err(Error::Hygiene(format!("test record {i} is synthetic")));
    }
    let truth: Vec<usize> = test.iter().map(|r| r.label).collect();
    compute_metrics(&truth, &model.predict(test)?, model.num_categories())
}
