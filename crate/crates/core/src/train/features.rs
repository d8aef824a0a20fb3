//! Per-document features for the extractive policy.
//!
//! Sentence features: `[bias, overlap, idf_overlap, 1/(1+position), min(1, len/30)]`
//! where `overlap` is the share of distinct query terms in the sentence and
//! `idf_overlap` the same share weighted by idf. Gate features:
//! `[bias, max overlap, mean overlap]` over the sentences.

use crate::corpus::{Document, Query};
use crate::retrieval::{tokenize, InvertedIndex};

use super::text::sentence_split;

pub const GATE_DIM: usize = 3;
pub const SENTENCE_DIM: usize = 5;

/// A document split into sentences with its features precomputed. Features
/// do not depend on the policy, so one preparation serves every decode.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub doc_id: String,
    pub sentences: Vec<String>,
    pub gate: Vec<f64>,
    pub sentence_features: Vec<Vec<f64>>,
}

impl PreparedDoc {
    pub fn new(query: &Query, doc: &Document, index: Option<&InvertedIndex>) -> Self {
        let sentences = sentence_split(&doc.full_text());
        let (gate, sentence_features) = features(query, &sentences, index);
        Self {
            doc_id: doc.doc_id.clone(),
            sentences,
            gate,
            sentence_features,
        }
    }

    /// Overlap share of sentence `i`.
    pub fn overlap(&self, i: usize) -> f64 {
        self.sentence_features[i][1]
    }
}

pub fn features(query: &Query, sentences: &[String], index: Option<&InvertedIndex>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut q = tokenize(&query.text);
    q.sort_unstable();
    q.dedup();
    let idf = |t: &str| index.map_or(1.0, |ix| ix.idf(t));
    let idf_total: f64 = q.iter().map(|t| idf(t)).sum();

    let per_sentence: Vec<Vec<f64>> = sentences
        .iter()
        .enumerate()
        .map(|(pos, s)| {
            let toks = tokenize(s);
            let len = toks.len();
            let mut uniq = toks;
            uniq.sort_unstable();
            uniq.dedup();
            let matched: Vec<&String> = q.iter().filter(|t| uniq.binary_search(t).is_ok()).collect();
            let overlap = if q.is_empty() { 0.0 } else { matched.len() as f64 / q.len() as f64 };
            let idf_overlap = if idf_total > 0.0 {
                matched.iter().map(|t| idf(t)).sum::<f64>() / idf_total
            } else {
                0.0
            };
            vec![1.0, overlap, idf_overlap, 1.0 / (1.0 + pos as f64), (len as f64 / 30.0).min(1.0)]
        })
        .collect();

    let max = per_sentence.iter().map(|f| f[1]).fold(0.0, f64::max);
    let mean = if per_sentence.is_empty() {
        0.0
    } else {
        per_sentence.iter().map(|f| f[1]).sum::<f64>() / per_sentence.len() as f64
    };
    (vec![1.0, max, mean], per_sentence)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_overlap_sentence() {
        let (_, f) = features(&Query::new("q", "tide"), &["Nothing relevant at all.".to_string()], None);
        assert_eq!(f[0][1], 0.0);
        assert_eq!(f[0][2], 0.0);
        assert_eq!(f[0][3], 1.0);
    }

    #[test]
    fn hand_computed_two_sentence_doc() {
        // corpus of 4 docs: "tide" in 1 doc, "tables" in 3 docs
        let docs = vec![
            Document::new("1", "", "tide tables"),
            Document::new("2", "", "tables"),
            Document::new("3", "", "tables"),
            Document::new("4", "", "other"),
        ];
        let ix = InvertedIndex::build(&docs).unwrap();
        let idf_tide = (1.0f64 + (4.0 - 1.0 + 0.5) / 1.5).ln();
        let idf_tables = (1.0f64 + (4.0 - 3.0 + 0.5) / 3.5).ln();
        let sents = vec![
            "The tables were printed early.".to_string(),
            "Tide tables list high water times for every harbor along the whole coast line this year.".to_string(),
        ];
        let (gate, f) = features(&Query::new("q", "tide tables"), &sents, Some(&ix));
        let want0 = [1.0, 0.5, idf_tables / (idf_tide + idf_tables), 1.0, 5.0 / 30.0];
        let want1 = [1.0, 1.0, 1.0, 0.5, 16.0 / 30.0];
        for (a, b) in f[0].iter().zip(want0) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (a, b) in f[1].iter().zip(want1) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(gate, vec![1.0, 1.0, 0.75]);
    }

    #[test]
    fn length_feature_saturates() {
        let long = vec!["w ".repeat(45)];
        let (_, f) = features(&Query::new("q", "x"), &long, None);
        assert_eq!(f[0][4], 1.0);
    }

    #[test]
    fn empty_document() {
        let p = PreparedDoc::new(&Query::new("q", "x"), &Document::new("d", "", ""), None);
        assert!(p.sentences.is_empty());
        assert_eq!(p.gate, vec![1.0, 0.0, 0.0]);
    }
}
