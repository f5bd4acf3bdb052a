//! Seeded synthetic corpora built from per-category lexicons and templates.
//!
//! Templates are whitespace-separated; `{c}` is filled from the record's
//! category lexicon (or, with probability `1 - own_prob`, from another
//! category's), `{s}` from the shared lexicon, anything else is literal.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_vocab, LabeledCorpus, Vocab};
use crate::error::{Error, Result};
use crate::textprep::{RawRecord, STOPWORDS_DE, STOPWORDS_EN, STOPWORDS_ES, STOPWORDS_FR, WordList};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub count: usize,
    pub lexicon: Vec<String>,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub categories: Vec<CategorySpec>,
    #[serde(default)]
    pub shared: Vec<String>,
    /// Chance that a `{c}` slot draws from the record's own lexicon.
    #[serde(default = "one")]
    pub own_prob: f64,
    /// Exponent of the rank-frequency law used inside each lexicon; 0 is uniform.
    #[serde(default = "one")]
    pub zipf: f64,
}

fn one() -> f64 {
    1.0
}

/// Compact description of a generated fixture: lexicons and templates are
/// derived from the sizes below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    /// `(name, count)` per category.
    pub categories: Vec<(String, usize)>,
    pub lexicon_size: usize,
    pub shared_size: usize,
    pub templates_per_category: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of template slots that are category slots.
    pub content_frac: f64,
    pub own_prob: f64,
    pub zipf: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            categories: vec![("positive".into(), 1000), ("negative".into(), 200)],
            lexicon_size: 40,
            shared_size: 40,
            templates_per_category: 12,
            min_len: 4,
            max_len: 12,
            content_frac: 0.5,
            own_prob: 1.0,
            zipf: 1.0,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aou";

/// Deterministic pronounceable pseudo-words ending in a vowel, none of which
/// is a shipped stopword, so cleaning leaves them untouched.
pub fn pseudo_words(n: usize, skip: usize) -> Vec<String> {
    let stop = [STOPWORDS_EN, STOPWORDS_ES, STOPWORDS_FR, STOPWORDS_DE].map(WordList::parse);
    let syl = CONSONANTS.len() * VOWELS.len();
    let space = syl * syl * syl;
    let mut out = Vec::with_capacity(n);
    let mut k = skip;
    while out.len() < n {
        assert!(k < space, "pseudo-word space exhausted");
        let mut code = (k * 7919) % space;
        k += 1;
        let mut w = String::with_capacity(6);
        for _ in 0..3 {
            let s = code % syl;
            code /= syl;
            w.push(CONSONANTS[s / VOWELS.len()] as char);
            w.push(VOWELS[s % VOWELS.len()] as char);
        }
        if !stop.iter().any(|l| l.contains(&w)) {
            out.push(w);
        }
    }
    out
}

impl FixtureSpec {
    pub fn with_counts(counts: &[(&str, usize)]) -> Self {
        FixtureSpec { categories: counts.iter().map(|(n, c)| (n.to_string(), *c)).collect(), ..Self::default() }
    }

    pub fn build(&self) -> Result<SynthSpec> {
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config(format!("bad fixture length range {}..={}", self.min_len, self.max_len)));
        }
        let k = self.categories.len();
        let words = pseudo_words(k * self.lexicon_size + self.shared_size, 0);
        let shared = words[k * self.lexicon_size..].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e3a_1a7e);
        let mut categories = Vec::with_capacity(k);
        for (i, (name, count)) in self.categories.iter().enumerate() {
            let lexicon = words[i * self.lexicon_size..(i + 1) * self.lexicon_size].to_vec();
            let templates = (0..self.templates_per_category.max(1))
                .map(|_| {
                    let len = rng.random_range(self.min_len..=self.max_len);
                    let mut slots: Vec<&str> = (0..len)
                        .map(|_| if shared.is_empty() || rng.random_bool(self.content_frac) { "{c}" } else { "{s}" })
                        .collect();
                    if !slots.contains(&"{c}") {
                        let at = rng.random_range(0..len);
                        slots[at] = "{c}";
                    }
                    slots.join(" ")
                })
                .collect();
            categories.push(CategorySpec { name: name.clone(), count: *count, lexicon, templates });
        }
        Ok(SynthSpec { categories, shared, own_prob: self.own_prob, zipf: self.zipf })
    }
}

fn zipf_index(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-s))).expect("nonempty lexicon")
}

/// Draws every category's records, categories in spec order.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<RawRecord>> {
    if spec.categories.is_empty() {
        return Err(Error::Empty("synthetic spec has no categories"));
    }
    for c in &spec.categories {
        if c.lexicon.is_empty() {
            return Err(Error::Config(format!("category {:?} has an empty lexicon", c.name)));
        }
        if c.templates.is_empty() {
            return Err(Error::Config(format!("category {:?} has no templates", c.name)));
        }
        if c.templates.iter().any(|t| t.contains("{s}")) && spec.shared.is_empty() {
            return Err(Error::Config(format!("category {:?} uses {{s}} but the shared lexicon is empty", c.name)));
        }
    }
    if !(0.0..=1.0).contains(&spec.own_prob) {
        return Err(Error::Config(format!("own_prob {} outside [0, 1]", spec.own_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex_dists: Vec<_> = spec.categories.iter().map(|c| zipf_index(c.lexicon.len(), spec.zipf)).collect();
    let shared_dist = (!spec.shared.is_empty()).then(|| zipf_index(spec.shared.len(), spec.zipf));
    let k = spec.categories.len();
    let mut out = Vec::with_capacity(spec.categories.iter().map(|c| c.count).sum());
    for (ci, cat) in spec.categories.iter().enumerate() {
        for _ in 0..cat.count {
            let template = &cat.templates[rng.random_range(0..cat.templates.len())];
            let mut words: Vec<&str> = Vec::new();
            for slot in template.split_whitespace() {
                match slot {
                    "{c}" => {
                        let src = if k > 1 && !rng.random_bool(spec.own_prob) {
                            let other = rng.random_range(0..k - 1);
                            if other >= ci {
                                other + 1
                            } else {
                                other
                            }
                        } else {
                            ci
                        };
                        let lex = &spec.categories[src].lexicon;
                        words.push(&lex[lex_dists[src].sample(&mut rng)]);
                    }
                    "{s}" => {
                        let d = shared_dist.as_ref().expect("checked above");
                        words.push(&spec.shared[d.sample(&mut rng)]);
                    }
                    lit => words.push(lit),
                }
            }
            out.push(RawRecord::new(cat.name.clone(), words.join(" ")));
        }
    }
    Ok(out)
}

/// Whitespace-tokenizes generated records and encodes them with a
/// vocabulary built from all of them. Every record starts as real/train.
pub fn encode_fixture(
    records: &[RawRecord],
    label_names: Vec<String>,
    max_vocab: usize,
    max_len: usize,
) -> Result<(Vocab, LabeledCorpus)> {
    let rows: Vec<(String, Vec<String>)> = records
        .iter()
        .map(|r| (r.label.clone(), r.text.split_whitespace().map(str::to_string).collect()))
        .collect();
    let vocab = build_vocab(rows.iter().map(|(_, t)| t.as_slice()), max_vocab, 1);
    let corpus = LabeledCorpus::from_tokens(&rows, label_names, &vocab, max_len)?;
    Ok((vocab, corpus))
}

/// Word-overlap oracle: the category whose lexicon shares the most tokens
/// with `tokens`, or `None` on a tie or no overlap.
pub fn overlap_category(tokens: &[String], lexicons: &[HashSet<String>]) -> Option<usize> {
    let scores: Vec<usize> = lexicons.iter().map(|l| tokens.iter().filter(|t| l.contains(*t)).count()).collect();
    let best = *scores.iter().max()?;
    if best == 0 || scores.iter().filter(|&&s| s == best).count() > 1 {
        return None;
    }
    scores.iter().position(|&s| s == best)
}

impl SynthSpec {
    pub fn lexicon_sets(&self) -> Vec<HashSet<String>> {
        self.categories.iter().map(|c| c.lexicon.iter().cloned().collect()).collect()
    }

    pub fn label_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }
}
