use serde::{Deserialize, Serialize};

use super::{LabeledCorpus, Split};

/// Per-category counts and imbalance figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label_names: Vec<String>,
    pub counts: Vec<usize>,
    pub majority: usize,
    /// `ratios[i][j] = counts[i] / counts[j]` (infinite when `counts[j] == 0`).
    pub ratios: Vec<Vec<f64>>,
    /// Largest count over smallest nonzero count.
    pub imbalance_ratio: f64,
}

impl ClassStats {
    pub fn from_counts(label_names: Vec<String>, counts: Vec<usize>) -> Self {
        let majority = counts
            .iter()
            .enumerate()
            .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
        let ratios = counts
            .iter()
            .map(|&a| counts.iter().map(|&b| if b == 0 { f64::INFINITY } else { a as f64 / b as f64 }).collect())
            .collect();
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
        let imbalance_ratio = if min == 0 { 1.0 } else { max as f64 / min as f64 };
        ClassStats { label_names, counts, majority, ratios, imbalance_ratio }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn ratio(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.label_names.iter().position(|n| n == a)?;
        let j = self.label_names.iter().position(|n| n == b)?;
        Some(self.ratios[i][j])
    }
}

/// Statistics over the whole corpus, or over one split.
pub fn class_stats(corpus: &LabeledCorpus, split: Option<Split>) -> ClassStats {
    ClassStats::from_counts(corpus.label_names.clone(), corpus.counts(split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reported_ratios() {
        let s = ClassStats::from_counts(names(&["positive", "negative", "neutral"]), vec![18746, 2316, 1145]);
        assert!((s.ratio("positive", "negative").unwrap() - 8.094).abs() < 5e-4);
        assert_eq!(s.majority, 0);
        assert_eq!(s.total(), 18746 + 2316 + 1145);
        let s = ClassStats::from_counts(names(&["positive", "minority"]), vec![74191, 2602]);
        assert!((s.imbalance_ratio - 28.51).abs() < 5e-3);
        let s = ClassStats::from_counts(names(&["a", "b"]), vec![100000, 100000]);
        assert_eq!(s.imbalance_ratio, 1.0);
    }
}
