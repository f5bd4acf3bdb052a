use std::collections::BTreeMap;

use super::{tokenize, WordList, STOPWORDS_DE, STOPWORDS_EN, STOPWORDS_ES, STOPWORDS_FR};

/// Code returned when no lexicon matches anything.
pub const UNDETERMINED: &str = "und";

/// Language code -> stopword lexicon. Ordered so ties resolve to the
/// lexicographically smallest code.
#[derive(Clone, Debug, Default)]
pub struct Lexicons {
    by_lang: BTreeMap<String, WordList>,
}

impl Lexicons {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shipped() -> Self {
        let mut l = Lexicons::new();
        l.register("de", WordList::parse(STOPWORDS_DE));
        l.register("en", WordList::parse(STOPWORDS_EN));
        l.register("es", WordList::parse(STOPWORDS_ES));
        l.register("fr", WordList::parse(STOPWORDS_FR));
        l
    }

    pub fn register(&mut self, code: impl Into<String>, words: WordList) {
        self.by_lang.insert(code.into(), words);
    }

    pub fn len(&self) -> usize {
        self.by_lang.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_lang.is_empty()
    }
}

/// Language with the highest share of tokens found in its lexicon.
pub fn detect_language(text: &str, lexicons: &Lexicons) -> (String, f64) {
    let tokens: Vec<String> = tokenize(text).into_iter().map(|t| t.to_lowercase()).collect();
    detect_language_tokens(&tokens, lexicons)
}

pub fn detect_language_tokens(tokens: &[String], lexicons: &Lexicons) -> (String, f64) {
    if tokens.is_empty() {
        return (UNDETERMINED.to_string(), 0.0);
    }
    let mut best: Option<(&str, usize)> = None;
    for (code, words) in &lexicons.by_lang {
        let hits = tokens.iter().filter(|t| words.contains(t)).count();
        if best.is_none_or(|(_, h)| hits > h) {
            best = Some((code, hits));
        }
    }
    match best {
        Some((code, hits)) if hits > 0 => (code.to_string(), hits as f64 / tokens.len() as f64),
        _ => (UNDETERMINED.to_string(), 0.0),
    }
}
