use serde::{Deserialize, Serialize};

use super::{Record, BOS, EOS, PAD};

/// Compressed sparse rows with `f64` values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(n_cols: usize) -> Self {
        SparseMatrix { n_cols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row given as `(column, value)` pairs sorted by column.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (u32, f64)>) {
        for (c, v) in entries {
            self.indices.push(c);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// Value at `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: u32) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Dot product of row `i` with a dense vector.
    pub fn row_dot(&self, i: usize, dense: &[f64]) -> f64 {
        let (idx, vals) = self.row(i);
        idx.iter().zip(vals).map(|(&c, &v)| v * dense[c as usize]).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|i| {
                let mut d = vec![0.0; self.n_cols];
                let (idx, vals) = self.row(i);
                for (&c, &v) in idx.iter().zip(vals) {
                    d[c as usize] = v;
                }
                d
            })
            .collect()
    }
}

impl SparseMatrix {
    /// Copy with every nonzero row scaled to unit L2 norm.
    pub fn l2_normalized(&self) -> SparseMatrix {
        let mut values = self.values.clone();
        for i in 0..self.n_rows() {
            let span = self.indptr[i]..self.indptr[i + 1];
            let norm = values[span.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                values[span].iter_mut().for_each(|v| *v /= norm);
            }
        }
        SparseMatrix { values, ..self.clone() }
    }
}

/// Raw term counts as a sparse matrix, columns limited to `vocab_size`.
pub fn count_matrix<'a>(docs: impl IntoIterator<Item = &'a [u32]>, vocab_size: usize) -> SparseMatrix {
    let mut m = SparseMatrix::new(vocab_size);
    for d in docs {
        m.push_row(term_counts(d).into_iter().filter(|&(t, _)| (t as usize) < vocab_size).map(|(t, n)| (t, n as f64)));
    }
    m
}

/// Term counts of one document over content ids, sorted by id.
pub(crate) fn term_counts(tokens: &[u32]) -> Vec<(u32, usize)> {
    let mut ids: Vec<u32> = tokens.iter().copied().filter(|&t| t != PAD && t != BOS && t != EOS).collect();
    ids.sort_unstable();
    let mut out: Vec<(u32, usize)> = Vec::new();
    for t in ids {
        match out.last_mut() {
            Some((last, n)) if *last == t => *n += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

/// `tf(t, d) * ln(N / df(t))` weights, with the idf fitted on one set of
/// documents (normally the training split) and applied to any other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    pub n_docs: usize,
    /// Zero for terms absent from the fitting documents.
    pub idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a [u32]>, vocab_size: usize) -> Self {
        let mut df = vec![0usize; vocab_size];
        let mut n_docs = 0;
        for d in docs {
            n_docs += 1;
            for (t, _) in term_counts(d) {
                df[t as usize] += 1;
            }
        }
        let idf = df.iter().map(|&f| if f == 0 { 0.0 } else { (n_docs as f64 / f as f64).ln() }).collect();
        TfIdf { n_docs, idf }
    }

    pub fn fit_records(records: &[Record], vocab_size: usize) -> Self {
        Self::fit(records.iter().map(|r| r.tokens.as_slice()), vocab_size)
    }

    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }

    /// Weights for each document; zero-weight terms are not stored.
    pub fn transform<'a>(&self, docs: impl IntoIterator<Item = &'a [u32]>) -> SparseMatrix {
        let mut m = SparseMatrix::new(self.idf.len());
        for d in docs {
            m.push_row(
                term_counts(d)
                    .into_iter()
                    .filter(|&(t, _)| (t as usize) < self.idf.len())
                    .map(|(t, n)| (t, n as f64 * self.idf[t as usize]))
                    .filter(|&(_, w)| w != 0.0),
            );
        }
        m
    }

    pub fn transform_records(&self, records: &[Record]) -> SparseMatrix {
        self.transform(records.iter().map(|r| r.tokens.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_weights() {
        // a=4, b=5, c=6
        let d1 = [4u32, 4, 5];
        let d2 = [4u32, 6];
        let t = TfIdf::fit([&d1[..], &d2[..]], 7);
        let m = t.transform([&d1[..], &d2[..]]);
        assert_eq!(m.get(0, 4), 0.0);
        assert!((m.get(0, 5) - 2f64.ln()).abs() < 1e-12);
        assert!((m.get(1, 6) - 0.693_147).abs() < 1e-6);
        assert_eq!(m.get(1, 5), 0.0);
    }

    #[test]
    fn unseen_terms_weigh_zero() {
        let t = TfIdf::fit([&[4u32, 5][..]], 10);
        let m = t.transform([&[9u32, 9][..]]);
        assert_eq!(m.row(0).0.len(), 0);
    }

    proptest! {
        #[test]
        fn weights_nonnegative(docs in prop::collection::vec(prop::collection::vec(4u32..12, 1..8), 1..10)) {
            let t = TfIdf::fit(docs.iter().map(|d| d.as_slice()), 12);
            let m = t.transform(docs.iter().map(|d| d.as_slice()));
            prop_assert!(m.values.iter().all(|&w| w > 0.0));
            for term in 4u32..12 {
                if docs.iter().all(|d| d.contains(&term)) {
                    for i in 0..docs.len() {
                        prop_assert_eq!(m.get(i, term), 0.0);
                    }
                }
            }
        }
    }
}
