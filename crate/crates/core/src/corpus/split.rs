use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledCorpus, Provenance, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Splits `n` items by largest remainder, giving every split at least one.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3)
                .filter(|&j| sizes[j] > 1)
                .max_by(|&a, &b| (sizes[a] as f64 - exact[a]).total_cmp(&(sizes[b] as f64 - exact[b])).then(b.cmp(&a)))
                .expect("n >= 3");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// Assigns train/val/test to every real record; synthetic records stay in train.
///
/// With `stratified`, each category is apportioned separately so per-split
/// proportions match the ratios within one record.
pub fn assign_splits(corpus: &mut LabeledCorpus, ratios: SplitRatios, seed: u64, stratified: bool) -> Result<()> {
    ratios.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real: Vec<usize> =
        (0..corpus.records.len()).filter(|&i| corpus.records[i].provenance == Provenance::Real).collect();
    let groups: Vec<Vec<usize>> = if stratified {
        (0..corpus.num_categories())
            .map(|c| real.iter().copied().filter(|&i| corpus.records[i].label == c).collect())
            .collect()
    } else {
        vec![real]
    };
    for (g, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            let category = if stratified { corpus.label_names[g].clone() } else { "<all>".to_string() };
            return Err(Error::SmallCategory { category, count: members.len(), needed: 3 });
        }
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(members.len(), ratios.as_array());
        for (k, &i) in members.iter().enumerate() {
            corpus.records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    for r in corpus.records.iter_mut().filter(|r| r.provenance == Provenance::Synthetic) {
        r.split = Split::Train;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Record;
    use proptest::prelude::*;

    fn corpus(counts: &[usize]) -> LabeledCorpus {
        let mut c = LabeledCorpus::new((0..counts.len()).map(|i| format!("c{i}")).collect());
        for (label, &n) in counts.iter().enumerate() {
            for k in 0..n {
                c.records.push(Record {
                    label,
                    tokens: vec![4 + k as u32],
                    provenance: Provenance::Real,
                    split: Split::Train,
                });
            }
        }
        c
    }

    fn sizes(c: &LabeledCorpus, label: Option<usize>) -> [usize; 3] {
        let mut s = [0; 3];
        for r in c.records.iter().filter(|r| label.is_none_or(|l| r.label == l)) {
            s[r.split as usize] += 1;
        }
        s
    }

    #[test]
    fn plain_sizes() {
        let mut c = corpus(&[100]);
        assign_splits(&mut c, SplitRatios::default(), 1, false).unwrap();
        assert_eq!(sizes(&c, None), [80, 10, 10]);
    }

    #[test]
    fn stratified_keeps_proportions() {
        let mut c = corpus(&[90, 10]);
        assign_splits(&mut c, SplitRatios::default(), 1, true).unwrap();
        assert_eq!(sizes(&c, Some(0))[0], 72);
        assert_eq!(sizes(&c, Some(1))[0], 8);
    }

    #[test]
    fn deterministic_and_small_category_error() {
        let mut a = corpus(&[50, 20]);
        let mut b = a.clone();
        assign_splits(&mut a, SplitRatios::default(), 9, true).unwrap();
        assign_splits(&mut b, SplitRatios::default(), 9, true).unwrap();
        assert_eq!(a, b);
        let mut c = corpus(&[50, 2]);
        let err = assign_splits(&mut c, SplitRatios::default(), 9, true).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitRatios::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn stratified_within_one(a in 3usize..200, b in 3usize..200, t in 0.5f64..0.8, v in 0.05f64..0.2) {
            let ratios = SplitRatios { train: t, val: v, test: 1.0 - t - v };
            let mut c = corpus(&[a, b]);
            assign_splits(&mut c, ratios, 3, true).unwrap();
            for (label, n) in [(0usize, a), (1, b)] {
                let s = sizes(&c, Some(label));
                prop_assert_eq!(s.iter().sum::<usize>(), n);
                for (k, r) in ratios.as_array().iter().enumerate() {
                    prop_assert!((s[k] as f64 - r * n as f64).abs() <= 1.0 + 1e-9 || s[k] == 1, "{:?} {}", s, n);
                }
            }
        }
    }
}
