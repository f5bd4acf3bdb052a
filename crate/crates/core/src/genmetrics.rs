//! Quality and diversity metrics for generated text: corpus BLEU and
//! per-token NLL on real (NLL_gen) and self-generated (NLL_div) text.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::EOS;
use crate::error::{Error, Result};
use crate::gantext::{GeneratorNet, SampleMode};

/// Floor applied to zero n-gram match counts.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub epsilon: f64,
    pub brevity_penalty: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig { max_n: 4, epsilon: BLEU_EPSILON, brevity_penalty: true }
    }
}

impl BleuConfig {
    pub fn with_n(max_n: usize) -> Self {
        BleuConfig { max_n, ..Self::default() }
    }
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Reference-side statistics shared by every hypothesis.
pub struct BleuReferences<'a, T> {
    max_counts: Vec<HashMap<&'a [T], usize>>,
    lengths: Vec<usize>,
}

impl<'a, T: Eq + Hash> BleuReferences<'a, T> {
    pub fn new(references: &'a [Vec<T>], max_n: usize) -> Self {
        let mut max_counts: Vec<HashMap<&'a [T], usize>> = vec![HashMap::new(); max_n];
        for r in references {
            for (n, slot) in max_counts.iter_mut().enumerate() {
                for (g, c) in ngram_counts(r, n + 1) {
                    let e = slot.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        let mut lengths: Vec<usize> = references.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        BleuReferences { max_counts, lengths }
    }

    /// Reference length closest to `len`; ties go to the shorter one.
    fn closest_len(&self, len: usize) -> usize {
        let mut best = self.lengths[0];
        for &l in &self.lengths {
            if l.abs_diff(len) < best.abs_diff(len) {
                best = l;
            }
        }
        best
    }
}

/// Corpus-level BLEU of `hypotheses` against the whole reference set.
pub fn bleu<T: Eq + Hash>(references: &[Vec<T>], hypotheses: &[Vec<T>], config: &BleuConfig) -> Result<f64> {
    if config.max_n == 0 {
        return Err(Error::Config("BLEU max_n must be at least 1".into()));
    }
    if references.is_empty() {
        return Err(Error::Empty("BLEU references"));
    }
    let refs = BleuReferences::new(references, config.max_n);
    bleu_with(&refs, hypotheses, config)
}

pub fn bleu_with<T: Eq + Hash>(refs: &BleuReferences<'_, T>, hypotheses: &[Vec<T>], config: &BleuConfig) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("BLEU hypotheses"));
    }
    let max_n = config.max_n.min(refs.max_counts.len());
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut ref_len, mut hyp_len) = (0usize, 0usize);
    for h in hypotheses {
        hyp_len += h.len();
        ref_len += refs.closest_len(h.len());
        for n in 0..max_n {
            for (g, c) in ngram_counts(h, n + 1) {
                matched[n] += c.min(refs.max_counts[n].get(g).copied().unwrap_or(0));
            }
            total[n] += h.len().saturating_sub(n);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..max_n)
        .map(|n| {
            let num = if matched[n] == 0 { config.epsilon } else { matched[n] as f64 };
            (num / total[n].max(1) as f64).ln()
        })
        .sum::<f64>()
        / max_n as f64;
    let bp = if config.brevity_penalty { (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp() } else { 1.0 };
    Ok((bp * log_p.exp()).clamp(0.0, 1.0))
}

/// Appends EOS to content ids, giving the sequence the generator models.
pub fn with_eos(content: &[u32]) -> Vec<u32> {
    let mut s = content.to_vec();
    s.push(EOS);
    s
}

/// Mean per-token teacher-forced NLL of real `(category, content)` pairs.
/// Noise for noise-initialized generators comes from `seed`.
pub fn nll_gen(gen: &GeneratorNet, data: &[(usize, &[u32])], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("NLL_gen slice"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = gen.config.max_len;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.chunks(128) {
        let seqs: Vec<Vec<u32>> = chunk
            .iter()
            .map(|(_, c)| with_eos(&c[..c.len().min(max_len.saturating_sub(1))]))
            .collect();
        let cats: Vec<usize> = chunk.iter().map(|(c, _)| *c).collect();
        let noise = gen.config.noise_init.then(|| {
            (0..chunk.len() * gen.config.hidden).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
        });
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        for lp in gen.log_probs(&cats, &refs, noise)? {
            total -= lp.iter().sum::<f64>();
            count += lp.len();
        }
    }
    Ok(total / count as f64)
}

/// Mean per-token NLL of the generator on `n_samples` of its own
/// multinomial samples, categories taken round-robin.
pub fn nll_div(gen: &GeneratorNet, categories: &[usize], n_samples: usize, seed: u64) -> Result<f64> {
    if categories.is_empty() || n_samples == 0 {
        return Err(Error::Empty("NLL_div samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    self_nll(gen, categories, n_samples, &mut rng)
}

pub(crate) fn self_nll(gen: &GeneratorNet, categories: &[usize], n: usize, rng: &mut dyn RngCore) -> Result<f64> {
    let cats: Vec<usize> = (0..n).map(|i| categories[i % categories.len()]).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in cats.chunks(256) {
        for s in gen.sample(chunk, SampleMode::Multinomial { temperature: 1.0 }, rng)? {
            total -= s.log_prob();
            count += s.log_probs.len();
        }
    }
    Ok(total / count.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gantext::{Conditioning, GenConfig};

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn hand_case_brevity() {
        let b = bleu(&[words("the cat sat")], &[words("the cat")], &BleuConfig::with_n(1)).unwrap();
        assert!((b - (-0.5f64).exp()).abs() < 1e-12);
        assert!((b - 0.607).abs() < 1e-3);
    }

    #[test]
    fn identical_is_one_and_disjoint_is_floor() {
        let refs = vec![words("a b c d"), words("e f g h i")];
        assert!((bleu(&refs, &refs, &BleuConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        let b = bleu(&refs, &[words("x y z w")], &BleuConfig::with_n(1)).unwrap();
        assert!(b <= BLEU_EPSILON);
        assert!(bleu(&refs, &[], &BleuConfig::default()).is_err());
    }

    #[test]
    fn order_invariant() {
        let refs = vec![words("a b c a"), words("b c d")];
        let h1 = vec![words("a b c"), words("c d d b")];
        let h2 = vec![h1[1].clone(), h1[0].clone()];
        let cfg = BleuConfig::with_n(2);
        assert_eq!(bleu(&refs, &h1, &cfg).unwrap(), bleu(&refs, &h2, &cfg).unwrap());
    }

    fn tiny_gen() -> GeneratorNet {
        let mut cfg = GenConfig::new(9, Conditioning::Embedded { num_categories: 2, dim: 3 });
        cfg.emb_dim = 4;
        cfg.hidden = 5;
        cfg.max_len = 6;
        GeneratorNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn uniform_generator_scores_log_v() {
        let mut g = tiny_gen();
        for id in g.params.ids().collect::<Vec<_>>() {
            g.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let data: Vec<(usize, &[u32])> = vec![(0, &[4, 5]), (1, &[6])];
        assert!((nll_gen(&g, &data, 0).unwrap() - 9f64.ln()).abs() < 1e-12);
        assert!((nll_div(&g, &[0, 1], 200, 0).unwrap() - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_div_reproducible() {
        let g = tiny_gen();
        assert_eq!(nll_div(&g, &[0, 1], 100, 7).unwrap(), nll_div(&g, &[0, 1], 100, 7).unwrap());
    }
}
