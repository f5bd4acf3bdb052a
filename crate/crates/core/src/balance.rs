//! Training-split rebalancing with generated minority text.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advtrain::{stream_seed, GanBundle};
use crate::corpus::{ClassStats, LabeledCorpus, Provenance, Record, Split, DEFAULT_MAX_LEN, UNK};
use crate::error::{Error, Result};

const S_GENERATE: u64 = 0xba1;
const S_DUPLICATE: u64 = 0xba2;
const S_MERGE: u64 = 0xba3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Every category is raised to the majority count.
    #[default]
    MajorityMatch,
    /// Every category is raised to a fixed count.
    Count { target: usize },
}

/// Acceptance filters applied to generated content (EOS excluded).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenFilters {
    pub min_len: usize,
    pub max_len: usize,
    pub max_unk_frac: f64,
    pub dedup: bool,
}

impl Default for GenFilters {
    fn default() -> Self {
        GenFilters { min_len: 1, max_len: DEFAULT_MAX_LEN - 1, max_unk_frac: 0.2, dedup: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub label_names: Vec<String>,
    pub real_counts: Vec<usize>,
    pub targets: Vec<usize>,
    pub deficits: Vec<usize>,
    pub filters: GenFilters,
    /// Largest synthetic-to-real ratio allowed per category.
    pub oversample_cap: Option<f64>,
}

/// Deficits from train-split statistics: `max(0, target - real)`, clipped by
/// `oversample_cap * real` when a cap is set.
pub fn compute_plan(stats: &ClassStats, policy: &TargetPolicy, filters: GenFilters, oversample_cap: Option<f64>) -> BalancePlan {
    let target = match policy {
        TargetPolicy::MajorityMatch => stats.counts.iter().copied().max().unwrap_or(0),
        TargetPolicy::Count { target } => *target,
    };
    let deficits = stats
        .counts
        .iter()
        .map(|&c| {
            let d = target.saturating_sub(c);
            match oversample_cap {
                Some(cap) => d.min((cap.max(0.0) * c as f64).floor() as usize),
                None => d,
            }
        })
        .collect();
    BalancePlan {
        label_names: stats.label_names.clone(),
        real_counts: stats.counts.clone(),
        targets: vec![target; stats.counts.len()],
        deficits,
        filters,
        oversample_cap,
    }
}

/// Why a generated candidate failed the content filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    TooShort,
    TooLong,
    Unknown,
}

impl GenFilters {
    pub fn check(&self, content: &[u32]) -> Option<Rejection> {
        if content.len() < self.min_len {
            return Some(Rejection::TooShort);
        }
        if content.len() > self.max_len {
            return Some(Rejection::TooLong);
        }
        let unk = content.iter().filter(|&&t| t == UNK).count();
        if unk as f64 > self.max_unk_frac * content.len() as f64 {
            return Some(Rejection::Unknown);
        }
        None
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub label: String,
    pub deficit: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub rejected_short: usize,
    pub rejected_long: usize,
    pub rejected_unk: usize,
    pub rejected_duplicate: usize,
    pub shortfall: usize,
}

impl CategoryReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: BalancePlan,
    pub categories: Vec<CategoryReport>,
}

impl PlanReport {
    pub fn shortfall(&self) -> usize {
        self.categories.iter().map(|c| c.shortfall).sum()
    }
}

/// Anything that can propose content sequences for a category.
pub trait TextSource {
    fn propose(&self, category: usize, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<u32>>>;
}

impl TextSource for GanBundle {
    fn propose(&self, category: usize, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<u32>>> {
        Ok(self.sample(category, n, 1.0, rng)?.into_iter().map(|s| s.content().to_vec()).collect())
    }
}

/// Draws until each category's deficit is met or `attempt_factor * deficit`
/// (plus a small floor) candidates have been tried. Categories are
/// independent: each draws from its own seed stream.
pub fn generate_minority(
    source: &dyn TextSource,
    plan: &BalancePlan,
    train: &LabeledCorpus,
    seed: u64,
    attempt_factor: usize,
) -> Result<(Vec<Record>, PlanReport)> {
    if train.num_categories() != plan.deficits.len() {
        return Err(Error::Config("plan and corpus disagree on the category count".into()));
    }
    let mut seen: HashSet<Vec<u32>> = if plan.filters.dedup {
        train.split_records(Split::Train).map(|r| r.tokens.clone()).collect()
    } else {
        HashSet::new()
    };
    let mut records = Vec::new();
    let mut reports = Vec::with_capacity(plan.deficits.len());
    for (c, &deficit) in plan.deficits.iter().enumerate() {
        let mut rep = CategoryReport { label: plan.label_names[c].clone(), deficit, ..CategoryReport::default() };
        let budget = attempt_factor.max(1) * deficit + if deficit > 0 { 64 } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, S_GENERATE, c as u64));
        while rep.accepted < deficit && rep.attempts < budget {
            let want = (2 * (deficit - rep.accepted)).clamp(16, 256).min(budget - rep.attempts);
            for content in source.propose(c, want, &mut rng)? {
                if rep.accepted == deficit {
                    break;
                }
                rep.attempts += 1;
                match plan.filters.check(&content) {
                    Some(Rejection::TooShort) => rep.rejected_short += 1,
                    Some(Rejection::TooLong) => rep.rejected_long += 1,
                    Some(Rejection::Unknown) => rep.rejected_unk += 1,
                    None if plan.filters.dedup && !seen.insert(content.clone()) => rep.rejected_duplicate += 1,
                    None => {
                        rep.accepted += 1;
                        records.push(Record { label: c, tokens: content, provenance: Provenance::Synthetic, split: Split::Train });
                    }
                }
            }
        }
        rep.shortfall = deficit - rep.accepted;
        reports.push(rep);
    }
    Ok((records, PlanReport { plan: plan.clone(), categories: reports }))
}

/// Baseline arm: minority records duplicated at random (with replacement)
/// up to each deficit, marked synthetic.
pub fn duplicate_minority(plan: &BalancePlan, train: &LabeledCorpus, seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (c, &deficit) in plan.deficits.iter().enumerate() {
        if deficit == 0 {
            continue;
        }
        let pool: Vec<&Record> =
            train.split_records(Split::Train).filter(|r| r.label == c && r.provenance == Provenance::Real).collect();
        if pool.is_empty() {
            return Err(Error::SmallCategory { category: plan.label_names[c].clone(), count: 0, needed: 1 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, S_DUPLICATE, c as u64));
        for _ in 0..deficit {
            let r = pool[rng.random_range(0..pool.len())];
            out.push(Record { provenance: Provenance::Synthetic, split: Split::Train, ..r.clone() });
        }
    }
    Ok(out)
}

/// Adds synthetic records to the training split. Train records are shuffled
/// by `seed`; val and test keep their records and relative order.
pub fn merge_balanced(corpus: &LabeledCorpus, synthetic: Vec<Record>, seed: u64) -> Result<LabeledCorpus> {
    for (i, r) in synthetic.iter().enumerate() {
        if r.provenance != Provenance::Synthetic || r.split != Split::Train {
            return Err(Error::Hygiene(format!(
                "merge record {i} is {:?}/{:?}; only synthetic train records may be merged",
                r.provenance, r.split
            )));
        }
        if r.label >= corpus.num_categories() {
            return Err(Error::UnknownCategory { category: r.label, num_categories: corpus.num_categories() });
        }
    }
    if synthetic.is_empty() {
        return Ok(corpus.clone());
    }
    let mut train: Vec<Record> = corpus.split_vec(Split::Train);
    train.extend(synthetic);
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, S_MERGE, 0)));
    train.extend(corpus.records.iter().filter(|r| r.split != Split::Train).cloned());
    let merged = LabeledCorpus { records: train, label_names: corpus.label_names.clone() };
    assert_hygiene(&merged)?;
    Ok(merged)
}

/// Fails if any synthetic record sits outside the training split.
pub fn assert_hygiene(corpus: &LabeledCorpus) -> Result<()> {
    match corpus.records.iter().position(|r| r.provenance == Provenance::Synthetic && r.split != Split::Train) {
        Some(i) => Err(Error::Hygiene(format!("synthetic record {i} assigned to {:?}", corpus.records[i].split))),
        None => Ok(()),
    }
}
