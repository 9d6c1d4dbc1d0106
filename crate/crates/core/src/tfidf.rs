//! Sparse TF-IDF vectors with smoothed idf and L2 normalization.
//!
//! Weights are `tf * (ln((1 + N) / (1 + df)) + 1)` with raw counts for `tf`.
//! Term ids follow lexicographic token order, and every sum runs in ascending
//! term id, so scores are reproducible bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::text::tokenize_metric;

pub type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct TfidfIndex {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
    vectors: Vec<SparseVector>,
}

impl TfidfIndex {
    pub fn build<S: AsRef<str>>(docs: &[S]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput(
                "cannot build a TF-IDF index over zero documents".into(),
            ));
        }
        let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize_metric(d.as_ref())).collect();
        if tokenized.iter().all(Vec::is_empty) {
            return Err(Error::InvalidInput("every document is empty after tokenization".into()));
        }

        let terms: BTreeSet<&str> = tokenized.iter().flatten().map(String::as_str).collect();
        let vocab: BTreeMap<String, usize> = terms.into_iter().enumerate().map(|(i, t)| (t.to_owned(), i)).collect();

        let counts: Vec<BTreeMap<usize, usize>> = tokenized
            .iter()
            .map(|toks| {
                let mut tf = BTreeMap::new();
                for t in toks {
                    *tf.entry(vocab[t]).or_insert(0) += 1;
                }
                tf
            })
            .collect();

        let mut df = vec![0usize; vocab.len()];
        for tf in &counts {
            for &term in tf.keys() {
                df[term] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();

        let vectors = counts
            .iter()
            .map(|tf| {
                let weights: SparseVector = tf.iter().map(|(&t, &c)| (t, c as f64 * idf[t])).collect();
                let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                if norm == 0.0 {
                    Vec::new()
                } else {
                    weights.into_iter().map(|(t, w)| (t, w / norm)).collect()
                }
            })
            .collect();

        Ok(Self { vocab, idf, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, doc: usize) -> &[(usize, f64)] {
        &self.vectors[doc]
    }

    pub fn term_id(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.term_id(token).map(|t| self.idf[t])
    }

    /// Weight of `token` in document `doc`, zero when absent.
    pub fn weight(&self, doc: usize, token: &str) -> f64 {
        let Some(term) = self.term_id(token) else {
            return 0.0;
        };
        let v = &self.vectors[doc];
        v.binary_search_by_key(&term, |&(t, _)| t).map_or(0.0, |i| v[i].1)
    }

    /// Cosine similarity of two indexed documents, in `[0, 1]`.
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        sparse_dot(&self.vectors[a], &self.vectors[b]).clamp(0.0, 1.0)
    }
}

pub(crate) fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}
