//! Corpus, query, qrels and run files.
//!
//! Formats:
//!
//! - corpus: one JSON object per line with keys `docid`, `title`, `body`
//! - queries: `qid<TAB>text`
//! - qrels: `qid 0 docid grade`, whitespace separated
//! - run: `qid Q0 docid rank score tag`, single-space separated, scores with
//!   six decimal places

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{excerpt, read_to_string, write_file};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "docid")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// Title and body joined by a single space; the body alone when there is no title.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
        }
    }
}

/// Documents in file order with lookup by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(Error::MalformedRecord {
                    path: "<memory>".into(),
                    line: i + 1,
                    reason: "empty docid".into(),
                    excerpt: String::new(),
                });
            }
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(d.doc_id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    parse_corpus(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: origin.to_string(),
            line: i + 1,
            reason,
            excerpt: excerpt(line),
        };
        let doc: Document = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if doc.doc_id.is_empty() {
            return Err(malformed("empty docid".into()));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Corpus::from_documents(docs)
}

pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_queries(text: &str, origin: &str) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((qid, qtext)) = line.split_once('\t') else {
            return Err(Error::MalformedRecord {
                path: origin.to_string(),
                line: i + 1,
                reason: "expected `qid<TAB>text`".into(),
                excerpt: excerpt(line),
            });
        };
        let qid = qid.trim();
        if qid.is_empty() {
            return Err(Error::MalformedRecord {
                path: origin.to_string(),
                line: i + 1,
                reason: "empty query id".into(),
                excerpt: excerpt(line),
            });
        }
        if !seen.insert(qid.to_string()) {
            return Err(Error::DuplicateQueryId(qid.to_string()));
        }
        out.push(Query::new(qid, qtext.trim()));
    }
    Ok(out)
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        let _ = writeln!(out, "{}\t{}", q.query_id, q.text);
    }
    write_file(path.as_ref(), out.as_bytes())
}

/// Graded judgments. Pairs without a judgment have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelsTable {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelsTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade, returning the previous one if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.grades
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_judged(&self, query_id: &str, doc_id: &str) -> bool {
        self.grades
            .get(query_id)
            .is_some_and(|m| m.contains_key(doc_id))
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.grades.get(query_id).is_some_and(|m| !m.is_empty())
    }

    /// Judged documents of one query, ordered by doc id.
    pub fn judged(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelsTable> {
    let path = path.as_ref();
    parse_qrels(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_qrels(text: &str, origin: &str) -> Result<QrelsTable> {
    let mut table = QrelsTable::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let malformed = |reason: &str| Error::MalformedRecord {
            path: origin.to_string(),
            line: i + 1,
            reason: reason.to_string(),
            excerpt: excerpt(line),
        };
        if fields.len() != 4 {
            return Err(malformed("expected `qid 0 docid grade`"));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| malformed("grade is not an integer"))?;
        if grade < 0 {
            return Err(Error::NegativeGrade {
                path: origin.to_string(),
                line: i + 1,
                grade,
            });
        }
        let grade = u32::try_from(grade).map_err(|_| malformed("grade out of range"))?;
        if let Some(prev) = table.insert(fields[0], fields[2], grade) {
            log::warn!(
                "{origin}:{}: repeated judgment for ({}, {}); grade {prev} replaced by {grade}",
                i + 1,
                fields[0],
                fields[2]
            );
        }
    }
    Ok(table)
}

pub fn write_qrels(qrels: &QrelsTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (q, docs) in &qrels.grades {
        for (d, g) in docs {
            let _ = writeln!(out, "{q} 0 {d} {g}");
        }
    }
    write_file(path.as_ref(), out.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordered results for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RunEntry>,
    pub tag: String,
}

impl RankedList {
    /// Builds a list from `(doc_id, score)` pairs that are already in rank order.
    pub fn from_ordered(
        query_id: impl Into<String>,
        scored: impl IntoIterator<Item = (String, f64)>,
        tag: impl Into<String>,
    ) -> Self {
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        Self {
            query_id: query_id.into(),
            entries,
            tag: tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRankedList {
            query_id: self.query_id.clone(),
            reason,
        };
        if self.query_id.is_empty() || self.query_id.contains(char::is_whitespace) {
            return Err(bad("query id must be non-empty without whitespace".into()));
        }
        if self.tag.is_empty() || self.tag.contains(char::is_whitespace) {
            return Err(bad(format!("tag `{}` must be non-empty without whitespace", self.tag)));
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(bad(format!("rank {} at position {} (ranks must be 1..n)", e.rank, i + 1)));
            }
            if e.doc_id.is_empty() || e.doc_id.contains(char::is_whitespace) {
                return Err(bad(format!("invalid doc id `{}`", e.doc_id)));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(bad(format!("doc `{}` appears twice", e.doc_id)));
            }
            if !e.score.is_finite() {
                return Err(bad(format!("non-finite score for `{}`", e.doc_id)));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(bad(format!("score increases at rank {}", e.rank)));
            }
        }
        Ok(())
    }
}

/// Renders run lines; every list is validated before anything is produced.
pub fn format_run(lists: &[RankedList]) -> Result<String> {
    for l in lists {
        l.validate()?;
    }
    let mut out = String::new();
    for l in lists {
        for e in &l.entries {
            let _ = writeln!(out, "{} Q0 {} {} {:.6} {}", l.query_id, e.doc_id, e.rank, e.score, l.tag);
        }
    }
    Ok(out)
}

pub fn write_run(lists: &[RankedList], path: impl AsRef<Path>) -> Result<()> {
    let text = format_run(lists)?;
    write_file(path.as_ref(), text.as_bytes())
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    parse_run(&read_to_string(path)?, &path.display().to_string())
}

/// Parses run lines, grouping by query in order of first appearance and
/// ordering each group by rank.
pub fn parse_run(text: &str, origin: &str) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedRecord {
            path: origin.to_string(),
            line: i + 1,
            reason: reason.to_string(),
            excerpt: excerpt(line),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(malformed("expected `qid Q0 docid rank score tag`"));
        }
        let rank: usize = f[3].parse().map_err(|_| malformed("rank is not a positive integer"))?;
        let score: f64 = f[4].parse().map_err(|_| malformed("score is not a number"))?;
        let idx = *pos.entry(f[0].to_string()).or_insert_with(|| {
            lists.push(RankedList {
                query_id: f[0].to_string(),
                entries: Vec::new(),
                tag: f[5].to_string(),
            });
            lists.len() - 1
        });
        lists[idx].entries.push(RunEntry {
            doc_id: f[2].to_string(),
            score,
            rank,
        });
    }
    for l in &mut lists {
        l.entries.sort_by_key(|e| e.rank);
        l.validate()?;
    }
    Ok(lists)
}
