use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token <-> id mapping with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Vocabulary holding only the reserved entries.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::new())
    }

    /// Builds from non-reserved tokens in id order (ids start at 4).
    pub fn from_tokens(words: Vec<String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut v = Vocab { tokens, index: HashMap::new() };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table; needed after deserializing.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Encodes, keeping at most `max_len - 1` tokens so EOS still fits.
    pub fn encode_truncated(&self, tokens: &[String], max_len: usize) -> Vec<u32> {
        let keep = max_len.saturating_sub(1).min(tokens.len());
        self.encode(&tokens[..keep])
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

/// Frequency-ordered vocabulary; ties keep first-occurrence order.
///
/// `max_size` counts the four reserved ids.
pub fn build_vocab<'a, I>(streams: I, max_size: usize, min_freq: usize) -> Vocab
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&'a str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for stream in streams {
        for tok in stream {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            let e = counts.entry(tok.as_str()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().filter(|(_, (c, _))| *c >= min_freq).map(|(t, (c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size.saturating_sub(RESERVED.len()));
    Vocab::from_tokens(ranked.into_iter().map(|(t, _, _)| t.to_string()).collect())
}
