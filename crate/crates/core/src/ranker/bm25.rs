use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RankerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75, delta: 0.5 }
    }
}

/// BM25L over pre-tokenised documents.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    avg_len: f64,
    doc_freq: HashMap<String, usize>,
}

impl Bm25Index {
    pub fn build(docs: &[(String, Vec<String>)], params: Bm25Params) -> Result<Self, RankerError> {
        let mut positions = HashMap::with_capacity(docs.len());
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut lengths = Vec::with_capacity(docs.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for (i, (id, tokens)) in docs.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(RankerError::DuplicateId(id.clone()));
            }
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
            lengths.push(tokens.len());
        }
        let avg_len = if docs.is_empty() { 0.0 } else { lengths.iter().sum::<usize>() as f64 / docs.len() as f64 };
        Ok(Self {
            params,
            ids: docs.iter().map(|d| d.0.clone()).collect(),
            positions,
            term_freqs,
            lengths,
            avg_len,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// `ln((n + 1) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        ((self.len() as f64 + 1.0) / (self.doc_freq(term) as f64 + 0.5)).ln()
    }

    /// Sum over query tokens (repeats included) that occur in the document.
    pub fn score_at(&self, query: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b, delta } = self.params;
        let tf = &self.term_freqs[doc];
        let norm = if self.avg_len > 0.0 { 1.0 - b + b * self.lengths[doc] as f64 / self.avg_len } else { 1.0 };
        query
            .iter()
            .filter_map(|t| tf.get(t).map(|&c| (t, c)))
            .map(|(t, c)| {
                let c_prime = c as f64 / norm + delta;
                self.idf(t) * (k1 + 1.0) * c_prime / (k1 + c_prime)
            })
            .sum()
    }

    pub fn score(&self, query: &[String], doc_id: &str) -> Result<f64, RankerError> {
        let i = *self.positions.get(doc_id).ok_or_else(|| RankerError::UnknownId(doc_id.to_string()))?;
        Ok(self.score_at(query, i))
    }

    /// The top `k` documents by score, ties by ascending id.
    pub fn rank(&self, query: &[String], k: usize) -> Result<Vec<(String, f64)>, RankerError> {
        if k == 0 {
            return Err(RankerError::ZeroK);
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len()).map(|i| (self.score_at(query, i), i)).collect();
        scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => self.ids[a.1].cmp(&self.ids[b.1]),
            o => o,
        });
        Ok(scored.into_iter().take(k).map(|(s, i)| (self.ids[i].clone(), s)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn toy() -> Bm25Index {
        let docs = vec![
            ("d1".to_string(), toks("rust rust python")),
            ("d2".to_string(), toks("python java")),
            ("d3".to_string(), toks("go")),
        ];
        Bm25Index::build(&docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn hand_computed_single_term() {
        let idx = toy();
        // n = 3, avglen = 2, df(rust) = 1, tf = 2 in d1 of length 3.
        let idf = (4.0f64 / 1.5).ln();
        let norm = 1.0 - 0.75 + 0.75 * 3.0 / 2.0;
        let c = 2.0 / norm + 0.5;
        let expect = idf * 2.5 * c / (1.5 + c);
        assert!((idx.score(&toks("rust"), "d1").unwrap() - expect).abs() < 1e-6);
        assert_eq!(idx.score(&toks("rust"), "d2").unwrap(), 0.0);
        // python: df = 2, tf = 1 in d2 of length 2.
        let idf = (4.0f64 / 2.5).ln();
        let c = 1.0 / 1.0 + 0.5;
        let expect = idf * 2.5 * c / (1.5 + c);
        assert!((idx.score(&toks("python"), "d2").unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn unknown_terms_score_zero() {
        let idx = toy();
        for d in ["d1", "d2", "d3"] {
            assert_eq!(idx.score(&toks("haskell cobol"), d).unwrap(), 0.0);
        }
        let ranked = idx.rank(&toks("haskell"), 3).unwrap();
        assert_eq!(ranked.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["d1", "d2", "d3"]);
    }

    #[test]
    fn rank_orders_by_score() {
        let ranked = toy().rank(&toks("python"), 2).unwrap();
        assert_eq!(ranked[0].0, "d2");
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn duplicating_a_matching_term_raises_the_score() {
        let before = toy().score(&toks("python"), "d2").unwrap();
        let docs = vec![
            ("d1".to_string(), toks("rust rust python")),
            ("d2".to_string(), toks("python python java")),
            ("d3".to_string(), toks("go")),
        ];
        let after = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
        assert!(after.score(&toks("python"), "d2").unwrap() > before);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
        proptest::collection::vec(proptest::collection::vec(0u8..6, 1..10), 2..8).prop_map(|c| {
            c.into_iter()
                .enumerate()
                .map(|(i, d)| (format!("d{i}"), d.into_iter().map(|t| format!("t{t}")).collect()))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tf_monotone_at_fixed_length_and_df(docs in corpus_strategy(), term in 0u8..6) {
            let q = vec![format!("t{term}")];
            let d0 = &docs[0].1;
            prop_assume!(d0.contains(&q[0]));
            let Some(p) = d0.iter().position(|t| t != &q[0]) else { return Ok(()) };
            // Replacing another token keeps the length; df(term) is unchanged
            // because the term already occurs in d0.
            let mut bumped = docs.clone();
            bumped[0].1[p] = q[0].clone();
            let s0 = Bm25Index::build(&docs, Bm25Params::default()).unwrap().score(&q, "d0").unwrap();
            let s1 = Bm25Index::build(&bumped, Bm25Params::default()).unwrap().score(&q, "d0").unwrap();
            prop_assert!(s1 > s0);
        }

        #[test]
        fn zero_iff_no_query_term(docs in corpus_strategy(), term in 0u8..8) {
            let q = vec![format!("t{term}")];
            let idx = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
            for (id, toks) in &docs {
                let s = idx.score(&q, id).unwrap();
                prop_assert_eq!(s > 0.0, toks.contains(&q[0]));
                prop_assert!(s >= 0.0);
            }
        }
    }
}
