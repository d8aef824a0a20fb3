//! BM25 first-stage retrieval over an in-memory inverted index.
//!
//! score(q, d) = Σ_t idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)     = ln(1 + (N − df + 0.5) / (df + 0.5))
//!
//! The `+1` inside the logarithm keeps every idf positive, so scores are never
//! negative and documents without any query term score exactly zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query, RankedList};
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_file};

const INDEX_FORMAT: &str = "strank-index v1";

/// Lowercased maximal runs of Unicode alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The first `k` whitespace tokens of title and body, joined by single spaces.
pub fn first_p(doc: &Document, k: usize) -> String {
    let k = k.max(1);
    let text = doc.full_text();
    text.split_whitespace().take(k).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidConfig(format!("bm25 k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!("bm25 b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<String>,
    internal: HashMap<String, u32>,
    avg_len: f64,
}

impl InvertedIndex {
    /// Indexes `tokenize(title + " " + body)` of every document, in corpus order.
    pub fn build(corpus: &[Document]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut internal = HashMap::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            let id = i as u32;
            if internal.insert(doc.doc_id.clone(), id).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
            doc_ids.push(doc.doc_id.clone());
            let tokens = tokenize(&format!("{} {}", doc.title, doc.body));
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, n) in tf {
                // ids are assigned in increasing order, so pushes keep postings sorted
                postings.entry(term).or_default().push(Posting { doc: id, tf: n });
            }
        }
        let avg_len = mean_len(&doc_lengths);
        Ok(Self {
            postings,
            doc_lengths,
            doc_ids,
            internal,
            avg_len,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.internal.get(doc_id).map(|&i| self.doc_lengths[i as usize])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.internal.contains_key(doc_id)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_freq(&self, term: &str, doc_id: &str) -> u32 {
        let Some(&id) = self.internal.get(doc_id) else {
            return 0;
        };
        let list = self.postings(term);
        list.binary_search_by_key(&id, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    /// Robertson idf with `+1` inside the log. Terms absent from the index
    /// get the maximal value (df = 0).
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// At most `n` documents with positive BM25 score, best first, ties by ascending doc id.
    pub fn retrieve_top_n(&self, query: &Query, n: usize, params: Bm25Params) -> RankedList {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let mut terms = tokenize(&query.text);
        terms.sort();
        terms.dedup();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let len = self.doc_lengths[p.doc as usize] as f64;
                *acc.entry(p.doc).or_insert(0.0) += term_score(idf, p.tf as f64, len, self.avg_len, params);
            }
        }
        let mut scored: Vec<(&str, f64)> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (self.doc_ids[d as usize].as_str(), s))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored.truncate(n);
        RankedList::from_ordered(
            query.query_id.clone(),
            scored.into_iter().map(|(d, s)| (d.to_string(), s)),
            "bm25",
        )
    }

    /// Writes the index as plain text: a header file, document lengths, and
    /// one line of postings per term sorted by term.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut meta = String::new();
        let _ = writeln!(meta, "{INDEX_FORMAT}");
        let _ = writeln!(meta, "docs {}", self.doc_count());
        let _ = writeln!(meta, "terms {}", self.postings.len());
        write_file(&dir.join("index.meta"), meta.as_bytes())?;

        let mut lens = String::new();
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            let _ = writeln!(lens, "{id}\t{len}");
        }
        write_file(&dir.join("doclens.tsv"), lens.as_bytes())?;

        let sorted: BTreeMap<&String, &Vec<Posting>> = self.postings.iter().collect();
        let mut post = String::new();
        for (term, list) in sorted {
            post.push_str(term);
            post.push('\t');
            for (i, p) in list.iter().enumerate() {
                if i > 0 {
                    post.push(' ');
                }
                let _ = write!(post, "{}:{}", p.doc, p.tf);
            }
            post.push('\n');
        }
        write_file(&dir.join("postings.txt"), post.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("index.meta");
        let meta = read_to_string(&meta_path)?;
        let bad = |path: &Path, line: usize, reason: &str| Error::MalformedRecord {
            path: path.display().to_string(),
            line,
            reason: reason.to_string(),
            excerpt: String::new(),
        };
        if meta.lines().next() != Some(INDEX_FORMAT) {
            return Err(bad(&meta_path, 1, "unsupported index format"));
        }

        let lens_path = dir.join("doclens.tsv");
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut internal = HashMap::new();
        for (i, line) in read_to_string(&lens_path)?.lines().enumerate() {
            let (id, len) = line.split_once('\t').ok_or_else(|| bad(&lens_path, i + 1, "expected `docid<TAB>len`"))?;
            let len: u32 = len.parse().map_err(|_| bad(&lens_path, i + 1, "bad length"))?;
            if internal.insert(id.to_string(), doc_ids.len() as u32).is_some() {
                return Err(Error::DuplicateDocId(id.to_string()));
            }
            doc_ids.push(id.to_string());
            doc_lengths.push(len);
        }
        if doc_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }

        let post_path = dir.join("postings.txt");
        let mut postings = HashMap::new();
        for (i, line) in read_to_string(&post_path)?.lines().enumerate() {
            let (term, rest) = line.split_once('\t').ok_or_else(|| bad(&post_path, i + 1, "expected `term<TAB>postings`"))?;
            let mut list = Vec::new();
            for item in rest.split(' ') {
                let (d, tf) = item.split_once(':').ok_or_else(|| bad(&post_path, i + 1, "expected `doc:tf`"))?;
                let doc: u32 = d.parse().map_err(|_| bad(&post_path, i + 1, "bad doc id"))?;
                let tf: u32 = tf.parse().map_err(|_| bad(&post_path, i + 1, "bad tf"))?;
                if doc as usize >= doc_ids.len() || list.last().is_some_and(|p: &Posting| p.doc >= doc) {
                    return Err(bad(&post_path, i + 1, "postings out of order or out of range"));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term.to_string(), list);
        }
        let avg_len = mean_len(&doc_lengths);
        Ok(Self {
            postings,
            doc_lengths,
            doc_ids,
            internal,
            avg_len,
        })
    }
}

fn mean_len(lengths: &[u32]) -> f64 {
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

fn term_score(idf: f64, tf: f64, len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    let rel_len = if avg_len > 0.0 { len / avg_len } else { 0.0 };
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * rel_len))
}
