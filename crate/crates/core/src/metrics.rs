//! Graded ranking metrics: NDCG@k and MAP@k.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{QrelsTable, RankedList};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// g(r) = r
    #[default]
    Linear,
    /// g(r) = 2^r - 1
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

impl std::str::FromStr for Gain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Gain::Linear),
            "exponential" | "exp" => Ok(Gain::Exponential),
            other => Err(Error::InvalidConfig(format!("unknown gain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub ndcg_k: usize,
    pub map_k: usize,
    pub gain: Gain,
    /// Grades at or above this count as relevant for MAP.
    pub map_binarize_threshold: u32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ndcg_k: 10,
            map_k: 100,
            gain: Gain::Linear,
            map_binarize_threshold: 1,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ndcg_k == 0 || self.map_k == 0 {
            return Err(Error::InvalidConfig("metric cutoffs must be >= 1".into()));
        }
        if self.map_binarize_threshold == 0 {
            return Err(Error::InvalidConfig("map binarization threshold must be >= 1".into()));
        }
        Ok(())
    }
}

/// DCG of the first `k` grades with a log2(i + 1) discount (i is 1-based).
pub fn dcg(grades: &[u32], k: usize, gain: Gain) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `ranked` grades against the ideal ordering of `judged` grades.
/// Zero when the ideal DCG is zero.
pub fn ndcg_from_grades(ranked: &[u32], judged: &[u32], k: usize, gain: Gain) -> f64 {
    let mut ideal = judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg <= 0.0 {
        return 0.0;
    }
    dcg(ranked, k, gain) / idcg
}

pub fn ndcg_at_k(ranked: &RankedList, qrels: &QrelsTable, k: usize, gain: Gain) -> f64 {
    let grades: Vec<u32> = ranked.doc_ids().map(|d| qrels.grade(&ranked.query_id, d)).collect();
    let judged: Vec<u32> = qrels.judged(&ranked.query_id).map(|(_, g)| g).collect();
    ndcg_from_grades(&grades, &judged, k.max(1), gain)
}

/// Average precision over the top `k` with `total_relevant` in the denominator.
pub fn average_precision(relevant: &[bool], total_relevant: usize, k: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevant.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

pub fn map_at_k(ranked: &RankedList, qrels: &QrelsTable, k: usize, threshold: u32) -> f64 {
    let rel: Vec<bool> = ranked
        .doc_ids()
        .map(|d| qrels.grade(&ranked.query_id, d) >= threshold)
        .collect();
    let total = qrels.judged(&ranked.query_id).filter(|&(_, g)| g >= threshold).count();
    average_precision(&rel, total, k.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query_id: String,
    pub ndcg: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: MetricConfig,
    pub per_query: Vec<QueryScores>,
    pub mean_ndcg: f64,
    pub mean_map: f64,
    /// Run queries without any judgment, excluded from the means.
    pub skipped: Vec<String>,
}

pub fn evaluate_run(run: &[RankedList], qrels: &QrelsTable, cfg: &MetricConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for list in run {
        if !qrels.has_query(&list.query_id) {
            log::warn!("query `{}` has no judgments; excluded from evaluation", list.query_id);
            skipped.push(list.query_id.clone());
            continue;
        }
        per_query.push(QueryScores {
            query_id: list.query_id.clone(),
            ndcg: ndcg_at_k(list, qrels, cfg.ndcg_k, cfg.gain),
            map: map_at_k(list, qrels, cfg.map_k, cfg.map_binarize_threshold),
        });
    }
    if per_query.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let n = per_query.len() as f64;
    let mean_ndcg = per_query.iter().map(|q| q.ndcg).sum::<f64>() / n;
    let mean_map = per_query.iter().map(|q| q.map).sum::<f64>() / n;
    Ok(EvalReport {
        config: *cfg,
        per_query,
        mean_ndcg,
        mean_map,
        skipped,
    })
}

impl EvalReport {
    fn headers(&self) -> (String, String) {
        (
            format!("ndcg@{}", self.config.ndcg_k),
            format!("map@{}", self.config.map_k),
        )
    }

    /// Tab-separated per-query scores followed by an `all` row with the means.
    pub fn to_tsv(&self) -> String {
        let (nh, mh) = self.headers();
        let mut out = format!("query_id\t{nh}\t{mh}\n");
        for q in &self.per_query {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", q.query_id, q.ndcg, q.map);
        }
        let _ = writeln!(out, "all\t{:.6}\t{:.6}", self.mean_ndcg, self.mean_map);
        out
    }

    /// Human-readable table with aligned columns.
    pub fn to_table(&self) -> String {
        let (nh, mh) = self.headers();
        let width = self
            .per_query
            .iter()
            .map(|q| q.query_id.len())
            .chain(["query".len(), "mean".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}", "query", nh, mh);
        let _ = writeln!(out, "{}", "-".repeat(width + 22));
        for q in &self.per_query {
            let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>9.4}", q.query_id, q.ndcg, q.map);
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 22));
        let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>9.4}", "mean", self.mean_ndcg, self.mean_map);
        let _ = writeln!(out, "evaluated {} queries, skipped {}", self.per_query.len(), self.skipped.len());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(qid: &str, docs: &[&str]) -> RankedList {
        RankedList::from_ordered(
            qid,
            docs.iter().enumerate().map(|(i, d)| (d.to_string(), (docs.len() - i) as f64)),
            "t",
        )
    }

    fn qrels(rows: &[(&str, &str, u32)]) -> QrelsTable {
        let mut q = QrelsTable::new();
        for (a, b, g) in rows {
            q.insert(a, b, *g);
        }
        q
    }

    /// Max DCG over every ordering of the judged grades, by exhaustive enumeration.
    fn brute_ideal(judged: &[u32], k: usize, gain: Gain) -> f64 {
        fn rec(rest: &mut Vec<u32>, prefix: &mut Vec<u32>, k: usize, gain: Gain, best: &mut f64) {
            if rest.is_empty() {
                *best = best.max(dcg(prefix, k, gain));
                return;
            }
            for i in 0..rest.len() {
                let g = rest.remove(i);
                prefix.push(g);
                rec(rest, prefix, k, gain, best);
                prefix.pop();
                rest.insert(i, g);
            }
        }
        let mut best = 0.0;
        rec(&mut judged.to_vec(), &mut Vec::new(), k, gain, &mut best);
        best
    }

    #[test]
    fn ideal_ranking_scores_one() {
        let q = qrels(&[("q", "a", 3), ("q", "b", 2), ("q", "c", 0)]);
        assert!((ndcg_at_k(&list("q", &["a", "b", "c"]), &q, 3, Gain::Linear) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_ndcg() {
        let q = qrels(&[("q", "b", 3)]);
        let v = ndcg_at_k(&list("q", &["a", "b"]), &q, 2, Gain::Linear);
        // (3 / log2 3) / 3
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);
    }

    #[test]
    fn all_zero_grades_give_zero() {
        let q = qrels(&[("q", "a", 0), ("q", "b", 0)]);
        assert_eq!(ndcg_at_k(&list("q", &["a", "b"]), &q, 10, Gain::Linear), 0.0);
    }

    #[test]
    fn exponential_gain() {
        assert_eq!(Gain::Exponential.apply(3), 7.0);
        let q = qrels(&[("q", "a", 1), ("q", "b", 2)]);
        let v = ndcg_at_k(&list("q", &["a", "b"]), &q, 2, Gain::Exponential);
        let want = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn map_cases() {
        let q = qrels(&[("q", "a", 1)]);
        assert_eq!(map_at_k(&list("q", &["a", "x"]), &q, 100, 1), 1.0);

        let q = qrels(&[("q", "b", 1), ("q", "d", 2)]);
        assert_eq!(map_at_k(&list("q", &["a", "b", "c", "d"]), &q, 100, 1), 0.5);
        // relevant docs only beyond the cutoff
        assert_eq!(map_at_k(&list("q", &["a", "b", "c", "d"]), &q, 1, 1), 0.0);
        // binarization threshold 2 keeps only `d`: precision 1/4 at rank 4
        assert_eq!(map_at_k(&list("q", &["a", "b", "c", "d"]), &q, 100, 2), 0.25);
    }

    #[test]
    fn evaluate_run_means_and_skip() {
        let q = qrels(&[("q1", "a", 1), ("q2", "a", 1), ("q2", "b", 1)]);
        let run = vec![list("q1", &["a"]), list("q2", &["a", "x"]), list("q3", &["a"])];
        let r = evaluate_run(&run, &q, &MetricConfig::default()).unwrap();
        assert_eq!(r.per_query.len(), 2);
        assert_eq!(r.skipped, vec!["q3".to_string()]);
        assert_eq!(r.per_query[0].ndcg, 1.0);
        let ndcg_q2 = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((r.mean_ndcg - (1.0 + ndcg_q2) / 2.0).abs() < 1e-12);
        assert!((r.mean_map - 0.75).abs() < 1e-12);

        let perfect = evaluate_run(&[list("q1", &["a"])], &q, &MetricConfig::default()).unwrap();
        assert_eq!((perfect.mean_ndcg, perfect.mean_map), (1.0, 1.0));
        assert!(matches!(
            evaluate_run(&[list("zz", &["a"])], &q, &MetricConfig::default()),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn mean_of_two_queries() {
        // q1 perfect, q2 ndcg exactly 0.5 by construction of grades
        let q = qrels(&[("q1", "a", 1), ("q2", "a", 0), ("q2", "b", 1)]);
        let a = ndcg_at_k(&list("q2", &["a", "b"]), &q, 10, Gain::Linear);
        let r = evaluate_run(&[list("q1", &["a"]), list("q2", &["a", "b"])], &q, &MetricConfig::default()).unwrap();
        assert!((r.mean_ndcg - (1.0 + a) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_formats() {
        let q = qrels(&[("q1", "a", 1)]);
        let r = evaluate_run(&[list("q1", &["a"])], &q, &MetricConfig::default()).unwrap();
        assert_eq!(r.to_tsv(), "query_id\tndcg@10\tmap@100\nq1\t1.000000\t1.000000\nall\t1.000000\t1.000000\n");
        assert!(r.to_table().contains("mean"));
    }

    proptest! {
        #[test]
        fn ndcg_matches_permutation_oracle(grades in prop::collection::vec(0u32..4, 1..=6), k in 1usize..8) {
            let brute = brute_ideal(&grades, k, Gain::Linear);
            let got = ndcg_from_grades(&grades, &grades, k, Gain::Linear);
            let want = if brute > 0.0 { dcg(&grades, k, Gain::Linear) / brute } else { 0.0 };
            prop_assert!((got - want).abs() < 1e-9);
        }

        #[test]
        fn swapping_better_doc_up_never_hurts(grades in prop::collection::vec(0u32..4, 2..10), i in 0usize..9, k in 1usize..10) {
            let i = i % (grades.len() - 1);
            let mut swapped = grades.clone();
            if swapped[i + 1] > swapped[i] {
                swapped.swap(i, i + 1);
                prop_assert!(ndcg_from_grades(&swapped, &grades, k, Gain::Linear) + 1e-12 >= ndcg_from_grades(&grades, &grades, k, Gain::Linear));
            }
        }

        #[test]
        fn metrics_ignore_score_scale(scale in 0.001f64..1000.0, grades in prop::collection::vec(0u32..3, 1..8)) {
            let mut q = QrelsTable::new();
            let docs: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
            for (d, g) in docs.iter().zip(&grades) { q.insert("q", d, *g); }
            let a = RankedList::from_ordered("q", docs.iter().enumerate().map(|(i, d)| (d.clone(), 10.0 - i as f64)), "t");
            let mut b = a.clone();
            for e in &mut b.entries { e.score *= scale; }
            prop_assert_eq!(ndcg_at_k(&a, &q, 10, Gain::Linear), ndcg_at_k(&b, &q, 10, Gain::Linear));
            prop_assert_eq!(map_at_k(&a, &q, 100, 1), map_at_k(&b, &q, 100, 1));
        }
    }
}
