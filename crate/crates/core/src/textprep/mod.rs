//! Review text cleaning: tokenization, lower-casing, stopword removal,
//! suffix-rule lemmatization and stopword-overlap language detection.

mod lang;
mod lemma;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use lang::{detect_language, detect_language_tokens, Lexicons, UNDETERMINED};
pub use lemma::lemmatize_token;

/// Stopword data shipped with the crate.
pub const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");
pub const STOPWORDS_ES: &str = include_str!("../../data/stopwords_es.txt");
pub const STOPWORDS_FR: &str = include_str!("../../data/stopwords_fr.txt");
pub const STOPWORDS_DE: &str = include_str!("../../data/stopwords_de.txt");

/// Word set parsed from a one-token-per-line file with `#` comments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordList {
    words: HashSet<String>,
}

impl WordList {
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        WordList { words }
    }

    pub fn english() -> Self {
        Self::parse(STOPWORDS_EN)
    }

    pub fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub lowercase: bool,
    pub remove_stopwords: bool,
    pub lemmatize: bool,
    pub keep_punct: bool,
    pub language_filter: Option<String>,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            lowercase: true,
            remove_stopwords: true,
            lemmatize: true,
            keep_punct: true,
            language_filter: Some("en".to_string()),
            min_tokens: 1,
            max_tokens: 512,
        }
    }
}

/// One review as read from disk, before cleaning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub label: String,
    pub text: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl RawRecord {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        RawRecord { label: label.into(), text: text.into(), extra: BTreeMap::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    EmptyText,
    Language,
    TooShort,
    TooLong,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropReason::EmptyText => "empty_text",
            DropReason::Language => "language",
            DropReason::TooShort => "too_short",
            DropReason::TooLong => "too_long",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub empty_text: usize,
    pub language: usize,
    pub too_short: usize,
    pub too_long: usize,
}

impl DropCounts {
    pub fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::EmptyText => self.empty_text += 1,
            DropReason::Language => self.language += 1,
            DropReason::TooShort => self.too_short += 1,
            DropReason::TooLong => self.too_long += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.empty_text + self.language + self.too_short + self.too_long
    }
}

/// Splits text into maximal alphanumeric runs and single punctuation marks.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub fn is_punct(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Stopword list plus language lexicons used by [`preprocess`].
#[derive(Clone, Debug)]
pub struct PrepResources {
    pub stopwords: WordList,
    pub lexicons: Lexicons,
}

impl Default for PrepResources {
    fn default() -> Self {
        PrepResources { stopwords: WordList::english(), lexicons: Lexicons::shipped() }
    }
}

/// Cleans one record, or says why it was dropped.
///
/// Stages run in a fixed order: tokenize, lowercase, stopword removal,
/// lemmatization. Lemmas that land on a stopword are removed as well so the
/// pipeline is idempotent on its own output.
pub fn preprocess(
    record: &RawRecord,
    config: &PrepConfig,
    res: &PrepResources,
) -> Result<Vec<String>, DropReason> {
    if record.text.trim().is_empty() {
        return Err(DropReason::EmptyText);
    }
    let mut tokens = tokenize(&record.text);
    if config.lowercase {
        tokens = tokens.into_iter().map(|t| t.to_lowercase()).collect();
    }
    if let Some(want) = &config.language_filter {
        let (lang, _) = detect_language_tokens(&tokens, &res.lexicons);
        if lang != *want && lang != UNDETERMINED {
            return Err(DropReason::Language);
        }
    }
    if !config.keep_punct {
        tokens.retain(|t| !is_punct(t));
    }
    if config.remove_stopwords {
        tokens.retain(|t| !res.stopwords.contains(t));
    }
    if config.lemmatize {
        tokens = tokens.iter().map(|t| lemmatize_token(t)).collect();
        if config.remove_stopwords {
            tokens.retain(|t| !res.stopwords.contains(t));
        }
    }
    if tokens.len() < config.min_tokens {
        return Err(DropReason::TooShort);
    }
    if tokens.len() > config.max_tokens {
        return Err(DropReason::TooLong);
    }
    Ok(tokens)
}

/// Cleans a batch, keeping `(record index, tokens)` for survivors.
pub fn preprocess_all(
    records: &[RawRecord],
    config: &PrepConfig,
    res: &PrepResources,
) -> (Vec<(usize, Vec<String>)>, DropCounts) {
    let mut kept = Vec::new();
    let mut drops = DropCounts::default();
    for (i, r) in records.iter().enumerate() {
        match preprocess(r, config, res) {
            Ok(t) => kept.push((i, t)),
            Err(reason) => drops.record(reason),
        }
    }
    (kept, drops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_on() -> PrepConfig {
        PrepConfig::default()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Great course!"), vec!["Great", "course", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("end of course project was challenging and fun."),
            vec!["end", "of", "course", "project", "was", "challenging", "and", "fun", "."]
        );
        assert_eq!(tokenize("didn't  go..."), vec!["didn", "'", "t", "go", ".", ".", "."]);
    }

    #[test]
    fn shipped_list_is_about_150_words() {
        let n = WordList::english().len();
        assert!((140..=170).contains(&n), "{n}");
    }

    #[test]
    fn really_nice_teacher() {
        // None of these four tokens is on the shipped list; lemma rules leave them alone.
        let res = PrepResources::default();
        for t in ["really", "nice", "teacher", "!"] {
            assert!(!res.stopwords.contains(t));
        }
        let out = preprocess(&RawRecord::new("positive", "Really nice teacher!"), &all_on(), &res).unwrap();
        assert_eq!(out, vec!["really", "nice", "teacher", "!"]);
    }

    #[test]
    fn stopwords_are_removed_then_lemmatized() {
        let res = PrepResources::default();
        let out = preprocess(&RawRecord::new("p", "The studies were challenging"), &all_on(), &res).unwrap();
        assert_eq!(out, vec!["study", "challeng"]);
    }

    #[test]
    fn language_filter_drops_foreign_text() {
        let res = PrepResources::default();
        let rec = RawRecord::new("positive", "el curso es muy bueno y la profesora es excelente");
        assert_eq!(preprocess(&rec, &all_on(), &res), Err(DropReason::Language));
        let (kept, drops) = preprocess_all(&[rec, RawRecord::new("p", "the course was great")], &all_on(), &res);
        assert_eq!(kept.len(), 1);
        assert_eq!(drops.language, 1);
    }

    #[test]
    fn length_gate() {
        let res = PrepResources::default();
        let cfg = PrepConfig { min_tokens: 2, ..all_on() };
        assert_eq!(preprocess(&RawRecord::new("p", "ok"), &cfg, &res), Err(DropReason::TooShort));
        let cfg = PrepConfig { max_tokens: 2, ..all_on() };
        assert_eq!(
            preprocess(&RawRecord::new("p", "great useful practical labs"), &cfg, &res),
            Err(DropReason::TooLong)
        );
        assert_eq!(preprocess(&RawRecord::new("p", "  "), &cfg, &res), Err(DropReason::EmptyText));
    }

    #[test]
    fn punctuation_flag() {
        let res = PrepResources::default();
        let cfg = PrepConfig { keep_punct: false, ..all_on() };
        assert_eq!(preprocess(&RawRecord::new("p", "Great course!"), &cfg, &res).unwrap(), vec!["great", "course"]);
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("the".to_string()),
            Just("studies".to_string()),
            Just("Running".to_string()),
            Just("teachings".to_string()),
            Just("was".to_string()),
            Just("!".to_string()),
            Just("doing".to_string()),
            "[a-zA-Zé]{1,9}",
            "[0-9]{1,3}",
            "[.,;?']",
        ]
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(words in prop::collection::vec(word(), 1..14)) {
            let res = PrepResources::default();
            let cfg = PrepConfig { language_filter: None, ..all_on() };
            let text = words.join(" ");
            if let Ok(first) = preprocess(&RawRecord::new("x", text), &cfg, &res) {
                let again = preprocess(&RawRecord::new("x", first.join(" ")), &cfg, &res);
                prop_assert_eq!(again, Ok(first));
            }
        }

        // Stopword removal deletes the evidence the language filter reads, so
        // with the filter on a second pass may only differ by a language drop.
        #[test]
        fn filtered_second_pass_keeps_tokens(words in prop::collection::vec(word(), 1..14)) {
            let res = PrepResources::default();
            let cfg = all_on();
            if let Ok(first) = preprocess(&RawRecord::new("x", words.join(" ")), &cfg, &res) {
                match preprocess(&RawRecord::new("x", first.join(" ")), &cfg, &res) {
                    Ok(again) => prop_assert_eq!(again, first),
                    Err(r) => prop_assert_eq!(r, DropReason::Language),
                }
            }
        }

        #[test]
        fn stopword_removal_only_removes_listed_tokens(words in prop::collection::vec(word(), 1..14)) {
            let res = PrepResources::default();
            let cfg = PrepConfig { lemmatize: false, language_filter: None, min_tokens: 0, ..all_on() };
            let text = words.join(" ");
            let lowered: Vec<String> = tokenize(&text).into_iter().map(|t| t.to_lowercase()).collect();
            let out = preprocess(&RawRecord::new("x", text), &cfg, &res).unwrap();
            let expected: Vec<String> = lowered.into_iter().filter(|t| !res.stopwords.contains(t)).collect();
            prop_assert_eq!(out, expected);
        }

        #[test]
        fn tokens_never_contain_whitespace(text in "\\PC{0,60}") {
            for t in tokenize(&text) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }
    }
}
