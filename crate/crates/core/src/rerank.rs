//! Listwise reranking with a sliding window.
//!
//! Windows are visited from the tail of the list to the head: the first window
//! covers the last `w` items, each later window starts `sz` positions earlier,
//! and the last one starts at 0. Every window is reordered in place before the
//! next is taken, so strong items move toward the top.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, QrelsTable, RankedList};
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::retrieval::{tokenize, InvertedIndex};
use crate::summarize::{detect_safeguard, render_placeholders};

pub const DEFAULT_RERANK_TEMPLATE: &str = include_str!("../templates/rerank_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowPlan {
    pub window: usize,
    pub step: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        Self { window: 20, step: 10 }
    }
}

impl WindowPlan {
    pub fn new(window: usize, step: usize) -> Result<Self> {
        let plan = Self { window, step };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.window {
            return Err(Error::InvalidConfig(format!(
                "window plan needs 1 <= step <= window, got window={} step={}",
                self.window, self.step
            )));
        }
        Ok(())
    }

    /// Half-open `[start, end)` ranges in visiting order for a list of `n` items.
    pub fn windows(&self, n: usize) -> Vec<(usize, usize)> {
        if n == 0 {
            return Vec::new();
        }
        if n <= self.window {
            return vec![(0, n)];
        }
        let mut out = Vec::new();
        let mut start = n - self.window;
        loop {
            out.push((start, start + self.window));
            if start == 0 {
                break;
            }
            start = start.saturating_sub(self.step);
        }
        out
    }
}

/// A parsed reranker answer: a 1-based permutation plus the number of repairs applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub order: Vec<usize>,
    pub repairs: usize,
}

/// Extracts `[i]` identifiers in order and repairs them into a permutation of
/// `1..=window_len`: out-of-range ids and repeats are dropped, and missing ids
/// are appended in their original order.
pub fn parse_permutation(raw: &str, window_len: usize) -> Permutation {
    let mut seen = vec![false; window_len + 1];
    let mut order = Vec::with_capacity(window_len);
    let mut repairs = 0;
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > i + 1 && j < bytes.len() && bytes[j] == b']' {
            let id = raw[i + 1..j].parse::<usize>().ok();
            match id {
                Some(id) if (1..=window_len).contains(&id) && !seen[id] => {
                    seen[id] = true;
                    order.push(id);
                }
                _ => repairs += 1,
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    for (id, &present) in seen.iter().enumerate().skip(1) {
        if !present {
            order.push(id);
            repairs += 1;
        }
    }
    Permutation { order, repairs }
}

pub fn render_permutation(order: &[usize]) -> String {
    order.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ")
}

/// One candidate in a window.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub doc_id: &'a str,
    pub text: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankItem {
    pub doc_id: String,
    pub text: String,
}

impl RerankItem {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

/// A listwise ranker over one window.
pub trait Reranker: Send + Sync {
    fn name(&self) -> String;

    /// Returns a 1-based permutation of `candidates`, best first.
    fn rank_window(&self, query: &Query, candidates: &[Candidate<'_>]) -> Result<Vec<usize>>;

    /// False when outputs may differ between identical calls.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn probe(&self) -> Result<()> {
        Ok(())
    }
}

/// Sorts by judged grade, descending; ties keep their incoming order.
#[derive(Debug, Clone)]
pub struct OracleReranker {
    qrels: Arc<QrelsTable>,
}

impl OracleReranker {
    pub fn new(qrels: Arc<QrelsTable>) -> Self {
        Self { qrels }
    }
}

impl Reranker for OracleReranker {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn rank_window(&self, query: &Query, candidates: &[Candidate<'_>]) -> Result<Vec<usize>> {
        let mut idx: Vec<usize> = (1..=candidates.len()).collect();
        idx.sort_by_key(|&i| std::cmp::Reverse(self.qrels.grade(&query.query_id, candidates[i - 1].doc_id)));
        Ok(idx)
    }
}

/// Orders candidates by the idf-weighted share of query terms their text
/// contains. Safeguard texts always go last.
#[derive(Debug, Clone, Default)]
pub struct LexicalReranker {
    index: Option<Arc<InvertedIndex>>,
}

impl LexicalReranker {
    pub fn new(index: Arc<InvertedIndex>) -> Self {
        Self { index: Some(index) }
    }

    /// Every query term weighs the same.
    pub fn uniform() -> Self {
        Self { index: None }
    }

    fn idf(&self, term: &str) -> f64 {
        self.index.as_ref().map_or(1.0, |ix| ix.idf(term))
    }

    /// Coverage in [0, 1]; 0 for an empty query.
    pub fn coverage(&self, query_terms: &[String], text: &str) -> f64 {
        let total: f64 = query_terms.iter().map(|t| self.idf(t)).sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut toks = tokenize(text);
        toks.sort_unstable();
        toks.dedup();
        let hit: f64 = query_terms
            .iter()
            .filter(|t| toks.binary_search(t).is_ok())
            .map(|t| self.idf(t))
            .sum();
        hit / total
    }
}

impl Reranker for LexicalReranker {
    fn name(&self) -> String {
        "lexical".into()
    }

    fn rank_window(&self, query: &Query, candidates: &[Candidate<'_>]) -> Result<Vec<usize>> {
        let mut terms = tokenize(&query.text);
        terms.sort_unstable();
        terms.dedup();
        let keyed: Vec<(bool, f64)> = candidates
            .iter()
            .map(|c| {
                let safeguard = detect_safeguard(c.text);
                let cov = if safeguard { 0.0 } else { self.coverage(&terms, c.text) };
                (safeguard, cov)
            })
            .collect();
        let mut idx: Vec<usize> = (1..=candidates.len()).collect();
        idx.sort_by(|&a, &b| {
            let (sa, ca) = keyed[a - 1];
            let (sb, cb) = keyed[b - 1];
            sa.cmp(&sb).then_with(|| cb.total_cmp(&ca))
        });
        Ok(idx)
    }
}

/// Prompts a chat model with the candidates as `[i] text` lines and parses
/// the bracketed ordering it returns.
#[derive(Debug)]
pub struct RemoteReranker {
    client: Arc<LlmClient>,
    template: String,
    repairs: AtomicUsize,
}

impl RemoteReranker {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self::with_template(client, DEFAULT_RERANK_TEMPLATE.to_string())
    }

    pub fn with_template(client: Arc<LlmClient>, template: String) -> Self {
        Self {
            client,
            template,
            repairs: AtomicUsize::new(0),
        }
    }

    pub fn render_prompt(&self, query: &Query, candidates: &[Candidate<'_>]) -> String {
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] {}", i + 1, c.text.split_whitespace().collect::<Vec<_>>().join(" ")))
            .collect::<Vec<_>>()
            .join("\n");
        let num = candidates.len().to_string();
        render_placeholders(
            &self.template,
            &[("num", &num), ("query", &query.text), ("candidates", &listing)],
        )
    }

    /// Total repairs applied to model answers so far.
    pub fn repair_count(&self) -> usize {
        self.repairs.load(Ordering::Relaxed)
    }
}

impl Reranker for RemoteReranker {
    fn name(&self) -> String {
        format!("remote:{}", self.client.config().model)
    }

    fn rank_window(&self, query: &Query, candidates: &[Candidate<'_>]) -> Result<Vec<usize>> {
        let raw = self.client.complete(&self.render_prompt(query, candidates))?;
        let perm = parse_permutation(&raw, candidates.len());
        if perm.repairs > 0 {
            log::warn!("query `{}`: repaired reranker output ({} fixes)", query.query_id, perm.repairs);
            self.repairs.fetch_add(perm.repairs, Ordering::Relaxed);
        }
        Ok(perm.order)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn probe(&self) -> Result<()> {
        self.client.probe()
    }
}

/// Reranks one window, invoking the backend once. Any ordering the backend
/// returns is passed through the permutation repair rule.
pub fn rerank_window(backend: &dyn Reranker, query: &Query, candidates: &[Candidate<'_>]) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let order = backend.rank_window(query, candidates)?;
    let perm = parse_permutation(&render_permutation(&order), candidates.len());
    if perm.repairs > 0 {
        log::warn!("backend `{}` returned an invalid ordering; repaired", backend.name());
    }
    Ok(perm.order)
}

/// Reranks `items` (in their incoming order) with back-to-front windows.
/// Output ranks are 1..n with scores n..1.
pub fn sliding_window_rerank(
    backend: &dyn Reranker,
    query: &Query,
    items: &[RerankItem],
    plan: WindowPlan,
    tag: &str,
) -> Result<RankedList> {
    plan.validate()?;
    let mut current: Vec<usize> = (0..items.len()).collect();
    for (start, end) in plan.windows(items.len()) {
        let slice = &current[start..end];
        let cands: Vec<Candidate<'_>> = slice
            .iter()
            .map(|&i| Candidate {
                doc_id: &items[i].doc_id,
                text: &items[i].text,
            })
            .collect();
        let order = rerank_window(backend, query, &cands)?;
        let reordered: Vec<usize> = order.iter().map(|&o| slice[o - 1]).collect();
        current[start..end].copy_from_slice(&reordered);
    }
    let n = items.len();
    Ok(RankedList::from_ordered(
        query.query_id.clone(),
        current
            .into_iter()
            .enumerate()
            .map(|(pos, i)| (items[i].doc_id.clone(), (n - pos) as f64)),
        tag,
    ))
}

/// Reranks several queries, up to `parallelism` at a time. Results are in
/// input order and equal a serial run for deterministic backends.
pub fn rerank_queries(
    backend: &dyn Reranker,
    jobs: &[(Query, Vec<RerankItem>)],
    plan: WindowPlan,
    tag: &str,
    parallelism: usize,
) -> Result<Vec<RankedList>> {
    let run = |(q, items): &(Query, Vec<RerankItem>)| sliding_window_rerank(backend, q, items, plan, tag);
    if parallelism <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(run).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(n: usize) -> Vec<RerankItem> {
        (0..n).map(|i| RerankItem::new(format!("d{i}"), format!("text {i}"))).collect()
    }

    #[test]
    fn parse_well_formed() {
        let p = parse_permutation("[5] > [1] > [3] > [2] > [4]", 5);
        assert_eq!(p.order, vec![5, 1, 3, 2, 4]);
        assert_eq!(p.repairs, 0);
    }

    #[test]
    fn parse_repairs_duplicates_and_range() {
        let p = parse_permutation("[2] > [2] > [9]", 3);
        assert_eq!(p.order, vec![2, 1, 3]);
        assert_eq!(p.repairs, 4);
    }

    #[test]
    fn parse_empty_is_identity() {
        assert_eq!(parse_permutation("", 4).order, vec![1, 2, 3, 4]);
        assert_eq!(parse_permutation("I cannot rank these.", 2).order, vec![1, 2]);
        assert_eq!(parse_permutation("[0] [99999999999999999999999] [x] [", 2).order, vec![1, 2]);
    }

    proptest! {
        #[test]
        fn parse_always_yields_permutation(raw in ".{0,80}", n in 1usize..25) {
            let mut p = parse_permutation(&raw, n).order;
            p.sort_unstable();
            prop_assert_eq!(p, (1..=n).collect::<Vec<_>>());
        }

        #[test]
        fn parse_idempotent_on_rendered(raw in "(\\[[0-9]{1,2}\\] ?>? ?){0,12}", n in 1usize..12) {
            let once = parse_permutation(&raw, n).order;
            let twice = parse_permutation(&render_permutation(&once), n);
            prop_assert_eq!(&twice.order, &once);
            prop_assert_eq!(twice.repairs, 0);
        }
    }

    #[test]
    fn window_traversal() {
        let plan = WindowPlan::default();
        assert_eq!(plan.windows(30), vec![(10, 30), (0, 20)]);
        assert_eq!(plan.windows(20), vec![(0, 20)]);
        assert_eq!(plan.windows(7), vec![(0, 7)]);
        assert_eq!(plan.windows(100).len(), 9);
        assert_eq!(plan.windows(35), vec![(15, 35), (5, 25), (0, 20)]);
        assert!(WindowPlan::new(10, 11).is_err());
        assert!(WindowPlan::new(10, 0).is_err());
    }

    #[test]
    fn oracle_window_sorts_by_grade_stably() {
        let mut q = QrelsTable::new();
        q.insert("q", "a", 0);
        q.insert("q", "b", 3);
        q.insert("q", "c", 1);
        let r = OracleReranker::new(Arc::new(q));
        let c = [
            Candidate { doc_id: "a", text: "" },
            Candidate { doc_id: "b", text: "" },
            Candidate { doc_id: "c", text: "" },
        ];
        assert_eq!(rerank_window(&r, &Query::new("q", ""), &c).unwrap(), vec![2, 3, 1]);
        let single = [Candidate { doc_id: "x", text: "" }];
        assert_eq!(rerank_window(&r, &Query::new("q", ""), &single).unwrap(), vec![1]);
    }

    #[test]
    fn lexical_forces_safeguard_last() {
        let r = LexicalReranker::uniform();
        let q = Query::new("q", "tide tables");
        let c = [
            Candidate { doc_id: "a", text: "tide" },
            Candidate { doc_id: "b", text: "No relevant information found. tide tables" },
            Candidate { doc_id: "c", text: "nothing here" },
            Candidate { doc_id: "d", text: "tide tables" },
        ];
        assert_eq!(rerank_window(&r, &q, &c).unwrap(), vec![4, 1, 3, 2]);
    }

    #[test]
    fn lexical_weights_by_idf() {
        let docs = vec![
            crate::Document::new("1", "", "common rare"),
            crate::Document::new("2", "", "common"),
            crate::Document::new("3", "", "common"),
        ];
        let r = LexicalReranker::new(Arc::new(InvertedIndex::build(&docs).unwrap()));
        let q = Query::new("q", "common rare");
        let c = [Candidate { doc_id: "a", text: "common" }, Candidate { doc_id: "b", text: "rare" }];
        assert_eq!(rerank_window(&r, &q, &c).unwrap(), vec![2, 1]);
    }

    #[test]
    fn single_window_when_short() {
        let r = LexicalReranker::uniform();
        let its = vec![RerankItem::new("x", "foo"), RerankItem::new("y", "bar foo")];
        let out = sliding_window_rerank(&r, &Query::new("q", "bar"), &its, WindowPlan::default(), "t").unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), vec!["y", "x"]);
        assert_eq!(out.entries[0].score, 2.0);
        out.validate().unwrap();
    }

    struct Recording(std::sync::Mutex<Vec<Vec<String>>>);
    impl Reranker for Recording {
        fn name(&self) -> String {
            "rec".into()
        }
        fn rank_window(&self, _q: &Query, c: &[Candidate<'_>]) -> Result<Vec<usize>> {
            self.0.lock().unwrap().push(c.iter().map(|c| c.doc_id.to_string()).collect());
            Ok((1..=c.len()).rev().collect())
        }
    }

    #[test]
    fn windows_see_in_place_updates() {
        let rec = Recording(Default::default());
        let out = sliding_window_rerank(&rec, &Query::new("q", ""), &items(30), WindowPlan::default(), "t").unwrap();
        let calls = rec.0.lock().unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0][0], "d10");
        assert_eq!(calls[0][19], "d29");
        // second window: d0..d9 followed by the first ten of the reversed tail
        assert_eq!(calls[1][10], "d29");
        assert_eq!(out.entries[0].doc_id, "d20");
    }

    fn oracle_for(grades: &[u32]) -> (OracleReranker, Vec<RerankItem>) {
        let mut q = QrelsTable::new();
        for (i, g) in grades.iter().enumerate() {
            q.insert("q", &format!("d{i}"), *g);
        }
        (OracleReranker::new(Arc::new(q)), items(grades.len()))
    }

    proptest! {
        #[test]
        fn output_is_permutation_of_input(n in 1usize..120, window in 1usize..25, step_frac in 0.0f64..1.0) {
            let step = ((window as f64 * step_frac) as usize).clamp(1, window);
            let plan = WindowPlan::new(window, step).unwrap();
            let out = sliding_window_rerank(&LexicalReranker::uniform(), &Query::new("q", "text 3"), &items(n), plan, "t").unwrap();
            let mut ids: Vec<String> = out.doc_ids().map(String::from).collect();
            ids.sort();
            let mut want: Vec<String> = items(n).into_iter().map(|i| i.doc_id).collect();
            want.sort();
            prop_assert_eq!(ids, want);
        }

        #[test]
        fn unique_max_bubbles_to_top(n in 1usize..=200, pos in 0usize..200, window in 2usize..30, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let step = (window / 2).max(1);
            let pos = pos % n;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut grades: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
            grades[pos] = 9;
            let (r, its) = oracle_for(&grades);
            let out = sliding_window_rerank(&r, &Query::new("q", ""), &its, WindowPlan::new(window, step).unwrap(), "t").unwrap();
            prop_assert_eq!(&out.entries[0].doc_id, &format!("d{pos}"));
        }
    }

    #[test]
    fn parallel_queries_match_serial() {
        let jobs: Vec<(Query, Vec<RerankItem>)> = (0..12)
            .map(|i| (Query::new(format!("q{i}"), format!("text {}", i % 5)), items(45)))
            .collect();
        let r = LexicalReranker::uniform();
        let serial = rerank_queries(&r, &jobs, WindowPlan::default(), "t", 1).unwrap();
        let parallel = rerank_queries(&r, &jobs, WindowPlan::default(), "t", 4).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn remote_reranker_parses_and_repairs() {
        use crate::llm::{mock, RemoteConfig};
        let server = mock::start(|_, _| (200, "[3] > [1] > [3]".into()));
        let client = Arc::new(LlmClient::new(RemoteConfig {
            url: server.url.clone(),
            backoff_ms: 1,
            ..RemoteConfig::default()
        }));
        let r = RemoteReranker::new(client);
        let q = Query::new("q", "tides");
        let c = [
            Candidate { doc_id: "a", text: "alpha  text" },
            Candidate { doc_id: "b", text: "beta" },
            Candidate { doc_id: "c", text: "gamma {query}" },
        ];
        assert_eq!(rerank_window(&r, &q, &c).unwrap(), vec![3, 1, 2]);
        assert_eq!(r.repair_count(), 2);
        let prompt = server.requests.lock().unwrap()[0]["messages"][1]["content"].as_str().unwrap().to_string();
        assert!(prompt.contains("[1] alpha text\n[2] beta\n[3] gamma {query}"));
        assert!(prompt.contains("search query: tides"));
        assert!(prompt.contains("Rank the 3 passages"));
    }
}
