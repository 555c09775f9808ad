//! Tokenizer and an in-memory Okapi BM25 index.

use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("unknown document {0}")]
    UnknownDoc(usize),
    #[error("top-k must be at least 1")]
    ZeroK,
    #[error("invalid BM25 parameters: k1={k1}, b={b}")]
    BadParams { k1: f64, b: f64 },
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1 > 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(IndexError::BadParams { k1, b });
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

/// Inverted index over documents identified by insertion ordinal.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    doc_terms: Vec<Vec<String>>,
    doc_lengths: Vec<u32>,
    total_len: u64,
}

impl Bm25Index {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn build<'a, I>(params: Bm25Params, docs: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut index = Self::new(params);
        for doc in docs {
            index.add_document(doc);
        }
        index
    }

    /// Appends a document and returns its id.
    pub fn add_document(&mut self, text: &str) -> usize {
        let doc = self.doc_lengths.len();
        let terms = tokenize(text);
        let mut counts: HashMap<&str, u32> = HashMap::new();
        for t in &terms {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        for (term, tf) in counts {
            // doc ids only grow, so pushing keeps every posting list sorted
            self.postings
                .entry(term.to_string())
                .or_default()
                .push(Posting { doc, tf });
        }
        self.doc_lengths.push(terms.len() as u32);
        self.total_len += terms.len() as u64;
        self.doc_terms.push(terms);
        doc
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_lengths.len() as f64
        }
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_terms(&self, doc: usize) -> Result<&[String], IndexError> {
        self.doc_terms
            .get(doc)
            .map(Vec::as_slice)
            .ok_or(IndexError::UnknownDoc(doc))
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let nt = self.doc_freq(term) as f64;
        ((n - nt + 0.5) / (nt + 0.5) + 1.0).ln()
    }

    fn tf(&self, term: &str, doc: usize) -> u32 {
        let list = self.postings(term);
        match list.binary_search_by_key(&doc, |p| p.doc) {
            Ok(i) => list[i].tf,
            Err(_) => 0,
        }
    }

    /// BM25 score of `doc` for a bag of query terms.
    pub fn score(&self, query: &[String], doc: usize) -> Result<f64, IndexError> {
        let len = *self
            .doc_lengths
            .get(doc)
            .ok_or(IndexError::UnknownDoc(doc))? as f64;
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * len / self.avg_doc_len());
        let mut score = 0.0;
        for term in query {
            let tf = self.tf(term, doc) as f64;
            if tf == 0.0 {
                continue;
            }
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + norm);
        }
        Ok(score)
    }

    /// Top-`k` documents for the text of document `query_doc`, excluding itself.
    ///
    /// Only documents sharing at least one term are scored; results are ordered
    /// by score descending then doc id ascending.
    pub fn top_k(&self, query_doc: usize, k: usize) -> Result<Vec<(usize, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let query = self.doc_terms(query_doc)?;
        let mut candidates = HashSet::new();
        for term in query {
            candidates.extend(self.postings(term).iter().map(|p| p.doc));
        }
        candidates.remove(&query_doc);
        let mut hits = Vec::with_capacity(candidates.len());
        for doc in candidates {
            let s = self.score(query, doc)?;
            if s > 0.0 {
                hits.push((doc, s));
            }
        }
        rank_hits(&mut hits, k);
        Ok(hits)
    }
}

/// Sorts by (score desc, id asc) and truncates to `k`.
pub(crate) fn rank_hits(hits: &mut Vec<(usize, f64)>, k: usize) {
    let cmp = |x: &(usize, f64), y: &(usize, f64)| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0));
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, cmp);
        hits.truncate(k);
    }
    hits.sort_unstable_by(cmp);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn terms(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("How does one cook broccoli?"),
            terms(&["how", "does", "one", "cook", "broccoli"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("DVD-CCA appealed"),
            terms(&["dvd", "cca", "appealed"])
        );
        assert_eq!(tokenize("Größe ÜBER 3x"), terms(&["größe", "über", "3x"]));
    }

    // Hand-evaluated: N=3, lengths 5, 3, 4 (avg 4), k1=1.5, b=0.75.
    // "cook" appears in docs 0 and 2, "broccoli" in docs 0 and 1.
    #[test]
    fn toy_corpus_matches_hand_evaluation() {
        let docs = [
            "how does one cook broccoli",
            "broccoli is green",
            "cook the pasta now",
        ];
        let index = Bm25Index::build(Bm25Params::default(), docs);
        let query = terms(&["cook", "broccoli"]);
        let idf2 = ((3.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln();
        let term = |tf: f64, len: f64| idf2 * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * len / 4.0));
        let expected = [
            term(1.0, 5.0) + term(1.0, 5.0),
            term(1.0, 3.0),
            term(1.0, 4.0),
        ];
        for (doc, want) in expected.iter().enumerate() {
            assert_relative_eq!(index.score(&query, doc).unwrap(), *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn absent_terms_score_zero() {
        let index = Bm25Index::build(Bm25Params::default(), ["a b", "c d"]);
        assert_eq!(index.score(&terms(&["zzz"]), 0).unwrap(), 0.0);
        assert_eq!(index.score(&terms(&["a"]), 1).unwrap(), 0.0);
        assert!(matches!(
            index.score(&[], 7),
            Err(IndexError::UnknownDoc(7))
        ));
    }

    #[test]
    fn single_doc_corpus_scores_positive() {
        let index = Bm25Index::build(Bm25Params::default(), ["only doc here"]);
        assert!(index.score(&terms(&["doc"]), 0).unwrap() > 0.0);
    }

    #[test]
    fn top_k_excludes_self_and_zero_scores() {
        let index = Bm25Index::build(
            Bm25Params::default(),
            ["red apple", "green apple", "blue sky", "grey sky"],
        );
        let hits = index.top_k(0, 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 1);
        assert_eq!(index.top_k(0, 0), Err(IndexError::ZeroK));
    }

    #[test]
    fn postings_sorted_and_lengths_stable() {
        let mut index = Bm25Index::new(Bm25Params::default());
        index.add_document("a b a");
        index.add_document("b c");
        let before = index.doc_lengths().to_vec();
        index.add_document("a a a a c");
        assert_eq!(&index.doc_lengths()[..2], before.as_slice());
        assert_relative_eq!(index.avg_doc_len(), 10.0 / 3.0);
        for term in ["a", "b", "c"] {
            let docs: Vec<usize> = index.postings(term).iter().map(|p| p.doc).collect();
            assert!(docs.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(index.postings("a")[1].tf, 4);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(1.2, 0.0).is_ok());
    }
}
