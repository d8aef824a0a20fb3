//! Pointwise query-grounded summarization.
//!
//! Each document is compressed independently of the others. Backends:
//! FirstP truncation, the trainable extractive policy
//! ([`crate::train::PolicySummarizer`]) and a remote chat model prompted with
//! the bundled instruction template. A summary that contains the safeguard
//! phrase marks the document as irrelevant.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::retrieval::first_p;
use crate::util::{read_to_string, write_file};

pub const SAFEGUARD_PHRASE: &str = "No relevant information found.";
const SAFEGUARD_NORMALIZED: &str = "no relevant information found";
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/summarize_v1.txt");
pub const DEFAULT_TEMPLATE_VERSION: &str = "summarize-v1";
/// Truncation used when a backend fails on a document.
pub const FALLBACK_FIRSTP_TOKENS: usize = 128;

/// True iff the lowercased, whitespace-collapsed text contains the safeguard phrase.
pub fn detect_safeguard(text: &str) -> bool {
    let normalized = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    normalized.contains(SAFEGUARD_NORMALIZED)
}

/// Substitutes `{name}` placeholders in one left-to-right pass. Substituted
/// values are never rescanned; unknown `{...}` spans are kept verbatim.
pub(crate) fn render_placeholders(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(name, _)| {
            tail.len() > name.len() + 1
                && tail[1..].starts_with(name)
                && tail[1 + name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    version: String,
}

impl PromptTemplate {
    /// Both `{query}` and `{document}` must appear exactly once.
    pub fn new(text: impl Into<String>, version: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for ph in ["{query}", "{document}"] {
            if text.matches(ph).count() != 1 {
                return Err(Error::MissingPlaceholder(ph));
            }
        }
        Ok(Self {
            text,
            version: version.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let version = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(read_to_string(path)?, version)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, query: &Query, doc_text: &str) -> String {
        render_placeholders(&self.text, &[("query", &query.text), ("document", doc_text)])
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_VERSION).expect("bundled template is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub query_id: String,
    pub doc_id: String,
    pub text: String,
    pub is_safeguard: bool,
    pub backend: String,
}

impl Summary {
    pub fn new(query_id: &str, doc_id: &str, text: String, backend: impl Into<String>) -> Self {
        let is_safeguard = detect_safeguard(&text);
        Self {
            query_id: query_id.to_string(),
            doc_id: doc_id.to_string(),
            text,
            is_safeguard,
            backend: backend.into(),
        }
    }
}

pub trait Summarizer: Send + Sync {
    fn name(&self) -> String;

    fn summarize(&self, query: &Query, doc: &Document) -> Result<String>;

    /// Upper bound on concurrent `summarize` calls.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// Checks that the backend can serve requests.
    fn probe(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FirstPSummarizer {
    pub k: usize,
}

impl Summarizer for FirstPSummarizer {
    fn name(&self) -> String {
        format!("firstp-{}", self.k)
    }

    fn summarize(&self, _query: &Query, doc: &Document) -> Result<String> {
        Ok(first_p(doc, self.k))
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}

#[derive(Debug)]
pub struct RemoteSummarizer {
    client: Arc<LlmClient>,
    template: PromptTemplate,
}

impl RemoteSummarizer {
    pub fn new(client: Arc<LlmClient>, template: PromptTemplate) -> Self {
        Self { client, template }
    }
}

impl Summarizer for RemoteSummarizer {
    fn name(&self) -> String {
        format!("remote:{}:{}", self.client.config().model, self.template.version())
    }

    fn summarize(&self, query: &Query, doc: &Document) -> Result<String> {
        let prompt = self.template.render(query, &doc.full_text());
        let text = self.client.complete(&prompt)?;
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(Error::BackendUnavailable("remote returned an empty summary".into()));
        }
        Ok(text)
    }

    fn max_in_flight(&self) -> usize {
        self.client.config().max_in_flight.max(1)
    }

    fn probe(&self) -> Result<()> {
        self.client.probe()
    }
}

/// Summarizes every document, falling back to FirstP-128 for documents the
/// backend fails on. Output order follows `docs` regardless of completion order.
pub fn summarize_pointwise(backend: &dyn Summarizer, query: &Query, docs: &[&Document]) -> Vec<Summary> {
    let name = backend.name();
    let run = |doc: &&Document| match backend.summarize(query, doc) {
        Ok(text) => Summary::new(&query.query_id, &doc.doc_id, text, name.clone()),
        Err(e) => {
            log::warn!(
                "summarizer `{name}` failed on ({}, {}): {e}; using FirstP-{FALLBACK_FIRSTP_TOKENS}",
                query.query_id,
                doc.doc_id
            );
            let text = first_p(doc, FALLBACK_FIRSTP_TOKENS);
            Summary::new(&query.query_id, &doc.doc_id, text, format!("{name}+fallback-firstp-{FALLBACK_FIRSTP_TOKENS}"))
        }
    };
    let parallel = backend.max_in_flight().max(1);
    if parallel == 1 || docs.len() <= 1 {
        return docs.iter().map(run).collect();
    }
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(parallel).build() {
        Ok(pool) => pool.install(|| docs.par_iter().map(run).collect()),
        Err(_) => docs.iter().map(run).collect(),
    }
}

/// Summaries keyed by `(query_id, doc_id)`.
pub type SummaryMap = BTreeMap<(String, String), Summary>;

pub fn write_summaries(summaries: &[Summary], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for s in summaries {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn read_summaries(path: impl AsRef<Path>) -> Result<Vec<Summary>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Summary = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
            excerpt: crate::util::excerpt(line),
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn summary_map(summaries: impl IntoIterator<Item = Summary>) -> SummaryMap {
    summaries
        .into_iter()
        .map(|s| ((s.query_id.clone(), s.doc_id.clone()), s))
        .collect()
}
