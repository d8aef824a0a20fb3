//! Training instances for the summarization policy.
//!
//! Each instance holds `N` BM25 candidates that are guaranteed to contain
//! both a positive and a negative document, shuffled with a per-query seed,
//! plus one frozen background summary per candidate.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QrelsTable, Query};
use crate::error::{Error, Result};
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::summarize::{summarize_pointwise, Summarizer, Summary};
use crate::util::{derive_seed, read_to_string, sha256_hex, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    pub doc_id: String,
    pub label: Label,
    pub grade: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlDataConfig {
    pub n: usize,
    pub k: usize,
    pub positive_threshold: u32,
    pub seed: u64,
}

impl Default for RlDataConfig {
    fn default() -> Self {
        Self {
            n: 10,
            k: 1,
            positive_threshold: 1,
            seed: 7,
        }
    }
}

impl RlDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("rl-data n must be at least 2, got {}", self.n)));
        }
        if self.k == 0 || self.k >= self.n {
            return Err(Error::InvalidConfig(format!(
                "rl-data k must satisfy 0 < k < n, got k={} n={}",
                self.k, self.n
            )));
        }
        Ok(())
    }

    pub fn label(&self, grade: u32) -> Label {
        if grade >= self.positive_threshold {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlInstance {
    pub query: Query,
    pub candidates: Vec<LabeledCandidate>,
    /// Positionally aligned with `candidates`; empty until filled.
    #[serde(default)]
    pub background: Vec<Summary>,
    pub injected_count: usize,
    pub seed: u64,
}

impl RlInstance {
    pub fn positions(&self, label: Label) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_background(&self) -> bool {
        self.background.len() == self.candidates.len()
    }

    /// SHA-256 over the background texts in order.
    pub fn background_checksum(&self) -> String {
        let mut buf = Vec::new();
        for s in &self.background {
            buf.extend_from_slice(s.text.as_bytes());
            buf.push(0);
        }
        sha256_hex(&buf)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InsufficientJudgments {
            query_id: self.query.query_id.clone(),
            reason,
        };
        if self.positions(Label::Positive).is_empty() || self.positions(Label::Negative).is_empty() {
            return Err(bad("instance lacks a positive or a negative candidate".into()));
        }
        if !self.background.is_empty() {
            if self.background.len() != self.candidates.len() {
                return Err(bad(format!(
                    "{} background summaries for {} candidates",
                    self.background.len(),
                    self.candidates.len()
                )));
            }
            for (s, c) in self.background.iter().zip(&self.candidates) {
                if s.doc_id != c.doc_id {
                    return Err(bad(format!("background for `{}` found at the slot of `{}`", s.doc_id, c.doc_id)));
                }
            }
        }
        Ok(())
    }
}

/// Builds the shuffled candidate list for one query. Returns the list, the
/// number of injected documents and the query's derived seed.
pub fn build_candidate_list(
    query: &Query,
    index: &InvertedIndex,
    qrels: &QrelsTable,
    cfg: &RlDataConfig,
) -> Result<(Vec<LabeledCandidate>, usize, u64)> {
    cfg.validate()?;
    let qid = &query.query_id;
    let insufficient = |reason: &str| Error::InsufficientJudgments {
        query_id: qid.clone(),
        reason: reason.to_string(),
    };
    let mut pos_pool = Vec::new();
    let mut neg_pool = Vec::new();
    for (doc, grade) in qrels.judged(qid) {
        if !index.contains(doc) {
            continue;
        }
        match cfg.label(grade) {
            Label::Positive => pos_pool.push(doc.to_string()),
            Label::Negative => neg_pool.push(doc.to_string()),
        }
    }
    if pos_pool.is_empty() {
        return Err(insufficient("no judged positive document in the corpus"));
    }
    if neg_pool.is_empty() {
        return Err(insufficient("no judged negative document in the corpus"));
    }

    let seed = derive_seed(cfg.seed, qid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |doc_id: String| {
        let grade = qrels.grade(qid, &doc_id);
        LabeledCandidate {
            label: cfg.label(grade),
            grade,
            doc_id,
        }
    };
    let mut list: Vec<LabeledCandidate> = index
        .retrieve_top_n(query, cfg.n, Bm25Params::default())
        .entries
        .into_iter()
        .map(|e| make(e.doc_id))
        .collect();

    let mut injected = 0;
    let eligible = |pool: &[String], list: &[LabeledCandidate]| -> Vec<String> {
        pool.iter()
            .filter(|d| !list.iter().any(|c| &c.doc_id == *d))
            .cloned()
            .collect()
    };
    for label in [Label::Positive, Label::Negative] {
        if list.iter().any(|c| c.label == label) {
            continue;
        }
        let pool = if label == Label::Positive { &pos_pool } else { &neg_pool };
        let picks: Vec<String> = eligible(pool, &list)
            .choose_multiple(&mut rng, cfg.k)
            .cloned()
            .collect();
        let free = cfg.n.saturating_sub(list.len());
        let drop = picks.len().saturating_sub(free);
        list.truncate(list.len() - drop);
        injected += picks.len();
        list.extend(picks.into_iter().map(make));
    }
    if list.len() < cfg.n {
        let mut both = eligible(&pos_pool, &list);
        both.extend(eligible(&neg_pool, &list));
        let picks: Vec<String> = both.choose_multiple(&mut rng, cfg.n - list.len()).cloned().collect();
        injected += picks.len();
        list.extend(picks.into_iter().map(make));
    }
    if list.len() < cfg.n {
        return Err(insufficient(&format!(
            "only {} retrieved or judged documents available for a list of {}",
            list.len(),
            cfg.n
        )));
    }
    list.shuffle(&mut rng);
    Ok((list, injected, seed))
}

/// Summarizes every candidate once, in list order.
pub fn build_background_summaries(
    candidates: &[LabeledCandidate],
    summarizer: &dyn Summarizer,
    query: &Query,
    corpus: &Corpus,
) -> Result<Vec<Summary>> {
    let docs = candidates
        .iter()
        .map(|c| {
            corpus.get(&c.doc_id).ok_or_else(|| Error::InsufficientJudgments {
                query_id: query.query_id.clone(),
                reason: format!("candidate `{}` missing from the corpus", c.doc_id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_pointwise(summarizer, query, &docs))
}

/// Outcome of building instances for a query set.
#[derive(Debug, Default)]
pub struct RlBuild {
    pub instances: Vec<RlInstance>,
    /// Queries that could not be used, with the reason.
    pub skipped: Vec<(String, Error)>,
}

/// Builds one instance per usable query. Instances are independent and built
/// in parallel; output order follows `queries`. Backgrounds are filled only
/// when a summarizer is given.
pub fn build_rl_data(
    queries: &[Query],
    corpus: &Corpus,
    index: &InvertedIndex,
    qrels: &QrelsTable,
    cfg: &RlDataConfig,
    summarizer: Option<&dyn Summarizer>,
) -> Result<RlBuild> {
    use rayon::prelude::*;
    cfg.validate()?;
    let results: Vec<Result<RlInstance>> = queries
        .par_iter()
        .map(|q| {
            let (candidates, injected_count, seed) = build_candidate_list(q, index, qrels, cfg)?;
            let background = match summarizer {
                Some(s) => build_background_summaries(&candidates, s, q, corpus)?,
                None => Vec::new(),
            };
            Ok(RlInstance {
                query: q.clone(),
                candidates,
                background,
                injected_count,
                seed,
            })
        })
        .collect();
    let mut out = RlBuild::default();
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(inst) => out.instances.push(inst),
            Err(e @ Error::InsufficientJudgments { .. }) => {
                log::warn!("skipping query `{}`: {e}", q.query_id);
                out.skipped.push((q.query_id.clone(), e));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn write_rl_data(instances: &[RlInstance], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst)?);
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn read_rl_data(path: impl AsRef<Path>) -> Result<Vec<RlInstance>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.display().to_string(),
            line: i + 1,
            reason,
            excerpt: crate::util::excerpt(line),
        };
        let inst: RlInstance = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        inst.validate().map_err(|e| malformed(e.to_string()))?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::summarize::FirstPSummarizer;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    /// 20 docs mentioning "tide" with decreasing frequency, plus 5 unrelated ones.
    fn setup() -> (Corpus, InvertedIndex) {
        let mut docs: Vec<Document> = (0..20)
            .map(|i| Document::new(format!("d{i:02}"), "", format!("{} harbor notes {i}", "tide ".repeat(20 - i))))
            .collect();
        docs.extend((0..5).map(|i| Document::new(format!("x{i}"), "", format!("nothing about water {i}"))));
        let ix = InvertedIndex::build(&docs).unwrap();
        (Corpus::from_documents(docs).unwrap(), ix)
    }

    fn q() -> Query {
        Query::new("q1", "tide")
    }

    #[test]
    fn mixed_top_list_used_directly() {
        let (_, ix) = setup();
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "d00", 2);
        qrels.insert("q1", "d01", 0);
        let cfg = RlDataConfig::default();
        let (list, injected, _) = build_candidate_list(&q(), &ix, &qrels, &cfg).unwrap();
        assert_eq!(injected, 0);
        let got: BTreeSet<_> = list.iter().map(|c| c.doc_id.clone()).collect();
        let want: BTreeSet<_> = (0..10).map(|i| format!("d{i:02}")).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn all_negative_top_list_gets_one_positive() {
        let (_, ix) = setup();
        let mut qrels = QrelsTable::new();
        for i in 0..10 {
            qrels.insert("q1", &format!("d{i:02}"), 0);
        }
        qrels.insert("q1", "d15", 1);
        qrels.insert("q1", "d16", 3);
        let (list, injected, _) = build_candidate_list(&q(), &ix, &qrels, &RlDataConfig::default()).unwrap();
        assert_eq!(injected, 1);
        assert_eq!(list.len(), 10);
        let ids: BTreeSet<_> = list.iter().map(|c| c.doc_id.as_str()).collect();
        // the lowest-ranked retrieved doc is the one removed
        assert!(!ids.contains("d09"));
        assert!((0..9).all(|i| ids.contains(format!("d{i:02}").as_str())));
        assert_eq!(list.iter().filter(|c| c.label == Label::Positive).count(), 1);
        assert!(ids.contains("d15") || ids.contains("d16"));
    }

    #[test]
    fn short_retrieval_is_padded() {
        let (_, ix) = setup();
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "d00", 1);
        for i in 0..5 {
            qrels.insert("q1", &format!("x{i}"), 0);
        }
        let cfg = RlDataConfig { n: 24, ..Default::default() };
        let (list, injected, _) = build_candidate_list(&q(), &ix, &qrels, &cfg).unwrap();
        assert_eq!(list.len(), 24);
        assert_eq!(injected, 4);
    }

    #[test]
    fn insufficient_judgments() {
        let (_, ix) = setup();
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "d00", 1);
        assert!(matches!(
            build_candidate_list(&q(), &ix, &qrels, &RlDataConfig::default()),
            Err(Error::InsufficientJudgments { .. })
        ));
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "d00", 1);
        qrels.insert("q1", "gone", 0);
        assert!(build_candidate_list(&q(), &ix, &qrels, &RlDataConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RlDataConfig { k: 10, ..Default::default() }.validate().is_err());
        assert!(RlDataConfig { k: 0, ..Default::default() }.validate().is_err());
        RlDataConfig::default().validate().unwrap();
    }

    #[test]
    fn backgrounds_align_and_round_trip() {
        let (corpus, ix) = setup();
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "d03", 2);
        qrels.insert("q1", "d04", 0);
        qrels.insert("q2", "d04", 1);
        let queries = vec![q(), Query::new("q2", "tide"), Query::new("q3", "tide")];
        let s = FirstPSummarizer { k: 4 };
        let build = build_rl_data(&queries, &corpus, &ix, &qrels, &RlDataConfig::default(), Some(&s)).unwrap();
        assert_eq!(build.instances.len(), 1);
        assert_eq!(build.skipped.len(), 2);
        let inst = &build.instances[0];
        assert!(inst.has_background());
        for (b, c) in inst.background.iter().zip(&inst.candidates) {
            assert_eq!(b.doc_id, c.doc_id);
        }
        let again = build_rl_data(&queries, &corpus, &ix, &qrels, &RlDataConfig::default(), Some(&s)).unwrap();
        assert_eq!(again.instances[0].background_checksum(), inst.background_checksum());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rl.jsonl");
        write_rl_data(&build.instances, &path).unwrap();
        assert_eq!(read_rl_data(&path).unwrap(), build.instances);
    }

    proptest! {
        #[test]
        fn composition_and_multiset(
            grades in prop::collection::vec(0u32..3, 25),
            seed in any::<u64>(),
            k in 1usize..4,
        ) {
            let (_, ix) = setup();
            let mut qrels = QrelsTable::new();
            let ids: Vec<String> = (0..20).map(|i| format!("d{i:02}")).chain((0..5).map(|i| format!("x{i}"))).collect();
            for (id, g) in ids.iter().zip(&grades) {
                qrels.insert("q1", id, *g);
            }
            let cfg = RlDataConfig { seed, k, ..Default::default() };
            let has_pos = grades.iter().any(|g| *g >= 1);
            let has_neg = grades.contains(&0);
            let r = build_candidate_list(&q(), &ix, &qrels, &cfg);
            if !(has_pos && has_neg) {
                prop_assert!(r.is_err());
                return Ok(());
            }
            let (list, injected, _) = r.unwrap();
            prop_assert_eq!(list.len(), 10);
            prop_assert!(list.iter().any(|c| c.label == Label::Positive));
            prop_assert!(list.iter().any(|c| c.label == Label::Negative));
            for c in &list {
                prop_assert_eq!(c.label == Label::Positive, qrels.grade("q1", &c.doc_id) >= 1);
            }
            let unique: BTreeSet<_> = list.iter().map(|c| &c.doc_id).collect();
            prop_assert_eq!(unique.len(), 10);

            // shuffle preserves the multiset of the pre-shuffle list, which is
            // the top-10 minus the `injected` lowest plus the injected docs
            let top: Vec<String> = ix.retrieve_top_n(&q(), 10, Bm25Params::default()).doc_ids().map(String::from).collect();
            let kept: BTreeSet<_> = top[..10 - injected].iter().collect();
            prop_assert!(kept.iter().all(|d| unique.contains(d)));
            let again = build_candidate_list(&q(), &ix, &qrels, &cfg).unwrap();
            prop_assert_eq!(again.0, list);
        }
    }
}
