//! End-to-end runs: retrieve, summarize, rerank, evaluate.
//!
//! Each stage writes one artifact under the output directory and records the
//! checksums of its inputs and output in `manifest.json`. A stage whose
//! inputs are unchanged and whose artifact is intact is skipped on rerun.
//!
//! | stage     | artifact                               |
//! |-----------|----------------------------------------|
//! | retrieve  | `run.bm25.txt`                         |
//! | summarize | `summaries.jsonl`                      |
//! | rerank    | `run.rerank.txt`                       |
//! | eval      | `metrics.tsv`, `metrics.txt`           |

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    format_run, load_corpus, load_qrels, load_queries, parse_run, write_corpus, Corpus, QrelsTable, Query, RankedList,
};
use crate::error::{Error, Result};
use crate::llm::{LlmClient, RemoteConfig};
use crate::metrics::{evaluate_run, EvalReport, MetricConfig};
use crate::rerank::{rerank_queries, LexicalReranker, OracleReranker, RemoteReranker, RerankItem, Reranker, WindowPlan};
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::rl_data::RlDataConfig;
use crate::summarize::{
    read_summaries, summarize_pointwise, summary_map, write_summaries, FirstPSummarizer, PromptTemplate,
    RemoteSummarizer, Summarizer, Summary,
};
use crate::train::{load_checkpoint, GrpoConfig, PolicySummarizer};
use crate::util::{read_to_string, sha256_hex, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub topk: usize,
    #[serde(flatten)]
    pub bm25: Bm25Params,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            topk: 100,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SummarizerSpec {
    /// First `k` whitespace tokens of title and body.
    Firstp { k: usize },
    /// Greedy decoding of a trained policy checkpoint.
    Policy {
        checkpoint: PathBuf,
        #[serde(default = "default_budget")]
        budget: usize,
    },
    /// A chat completion endpoint configured under `[remote]`.
    Remote {
        #[serde(default)]
        template: Option<PathBuf>,
    },
}

fn default_budget() -> usize {
    3
}

impl Default for SummarizerSpec {
    fn default() -> Self {
        SummarizerSpec::Firstp { k: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RerankerSpec {
    /// Sorts by judged grade; needs qrels.
    Oracle,
    /// Idf-weighted query-term coverage of each summary.
    #[default]
    Lexical,
    Remote {
        #[serde(default)]
        template: Option<PathBuf>,
    },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Queries reranked concurrently.
    pub parallelism: usize,
    pub retrieval: RetrievalConfig,
    pub summarizer: SummarizerSpec,
    pub reranker: RerankerSpec,
    pub window: WindowPlan,
    pub metrics: MetricConfig,
    pub rl_data: RlDataConfig,
    pub grpo: GrpoConfig,
    pub remote: RemoteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            queries: PathBuf::from("queries.tsv"),
            qrels: None,
            output_dir: PathBuf::from("out"),
            seed: 7,
            parallelism: 4,
            retrieval: RetrievalConfig::default(),
            summarizer: SummarizerSpec::default(),
            reranker: RerankerSpec::default(),
            window: WindowPlan::default(),
            metrics: MetricConfig::default(),
            rl_data: RlDataConfig::default(),
            grpo: GrpoConfig::default(),
            remote: RemoteConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads a TOML file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&read_to_string(path)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.queries);
        fix(&mut self.output_dir);
        if let Some(q) = &mut self.qrels {
            fix(q);
        }
        match &mut self.summarizer {
            SummarizerSpec::Policy { checkpoint, .. } => fix(checkpoint),
            SummarizerSpec::Remote { template: Some(t) } => fix(t),
            _ => {}
        }
        if let RerankerSpec::Remote { template: Some(t) } = &mut self.reranker {
            fix(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} `{}` does not exist", p.display())))
            }
        };
        must_exist(&self.corpus, "corpus")?;
        must_exist(&self.queries, "queries")?;
        if let Some(q) = &self.qrels {
            must_exist(q, "qrels")?;
        }
        match &self.summarizer {
            SummarizerSpec::Firstp { k } if *k == 0 => {
                return Err(Error::InvalidConfig("firstp k must be positive".into()));
            }
            SummarizerSpec::Policy { checkpoint, budget } => {
                must_exist(checkpoint, "policy checkpoint")?;
                if *budget == 0 {
                    return Err(Error::InvalidConfig("policy budget must be positive".into()));
                }
            }
            SummarizerSpec::Remote { template: Some(t) } => must_exist(t, "summarize template")?,
            _ => {}
        }
        match &self.reranker {
            RerankerSpec::Oracle if self.qrels.is_none() => {
                return Err(Error::InvalidConfig("the oracle reranker needs qrels".into()));
            }
            RerankerSpec::Remote { template: Some(t) } => must_exist(t, "rerank template")?,
            _ => {}
        }
        if self.retrieval.topk == 0 {
            return Err(Error::InvalidConfig("retrieval topk must be positive".into()));
        }
        self.retrieval.bm25.validate()?;
        self.window.validate()?;
        self.metrics.validate()?;
        self.rl_data.validate()?;
        self.grpo.validate()?;
        Ok(())
    }
}

/// Shared resources for constructing backends.
#[derive(Clone, Default)]
pub struct BackendContext {
    pub index: Option<Arc<InvertedIndex>>,
    pub qrels: Option<Arc<QrelsTable>>,
    pub remote: RemoteConfig,
}

pub fn build_summarizer(spec: &SummarizerSpec, ctx: &BackendContext) -> Result<Box<dyn Summarizer>> {
    Ok(match spec {
        SummarizerSpec::Firstp { k } => Box::new(FirstPSummarizer { k: *k }),
        SummarizerSpec::Policy { checkpoint, budget } => {
            let params = load_checkpoint(checkpoint)?;
            Box::new(PolicySummarizer::new(Arc::new(params), ctx.index.clone(), *budget))
        }
        SummarizerSpec::Remote { template } => {
            let template = match template {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::default(),
            };
            Box::new(RemoteSummarizer::new(Arc::new(LlmClient::new(ctx.remote.clone())), template))
        }
    })
}

pub fn build_reranker(spec: &RerankerSpec, ctx: &BackendContext) -> Result<Box<dyn Reranker>> {
    Ok(match spec {
        RerankerSpec::Oracle => {
            let qrels = ctx
                .qrels
                .clone()
                .ok_or_else(|| Error::InvalidConfig("the oracle reranker needs qrels".into()))?;
            Box::new(OracleReranker::new(qrels))
        }
        RerankerSpec::Lexical => match &ctx.index {
            Some(ix) => Box::new(LexicalReranker::new(ix.clone())),
            None => Box::new(LexicalReranker::uniform()),
        },
        RerankerSpec::Remote { template } => {
            let client = Arc::new(LlmClient::new(ctx.remote.clone()));
            match template {
                Some(p) => Box::new(RemoteReranker::with_template(client, read_to_string(p)?)),
                None => Box::new(RemoteReranker::new(client)),
            }
        }
    })
}

/// Saves the index together with a copy of the corpus it was built from.
pub fn save_index_bundle(index: &InvertedIndex, corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    index.save(dir)?;
    write_corpus(corpus.documents(), dir.join("corpus.jsonl"))
}

pub fn load_index_bundle(dir: impl AsRef<Path>) -> Result<(Corpus, InvertedIndex)> {
    let dir = dir.as_ref();
    let corpus = load_corpus(dir.join("corpus.jsonl"))?;
    let index = InvertedIndex::load(dir)?;
    Ok((corpus, index))
}

/// Reranker inputs: each query's retrieved documents, in retrieval order,
/// carrying their summary text.
pub fn rerank_jobs(queries: &[Query], run: &[RankedList], summaries: &[Summary]) -> Result<Vec<(Query, Vec<RerankItem>)>> {
    let by_id: BTreeMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let map = summary_map(summaries.iter().cloned());
    run.iter()
        .map(|list| {
            let query = by_id.get(list.query_id.as_str()).ok_or_else(|| Error::InvalidRankedList {
                query_id: list.query_id.clone(),
                reason: "query not in the query file".into(),
            })?;
            let items = list
                .doc_ids()
                .map(|d| {
                    map.get(&(list.query_id.clone(), d.to_string()))
                        .map(|s| RerankItem::new(d, s.text.clone()))
                        .ok_or_else(|| Error::InvalidRankedList {
                            query_id: list.query_id.clone(),
                            reason: format!("no summary for `{d}`"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(((*query).clone(), items))
        })
        .collect()
}

/// Fails unless every reranked list holds exactly the documents of its input list.
pub fn check_cardinality(before: &[RankedList], after: &[RankedList]) -> Result<()> {
    for (b, a) in before.iter().zip(after) {
        let x: BTreeSet<&str> = b.doc_ids().collect();
        let y: BTreeSet<&str> = a.doc_ids().collect();
        if b.query_id != a.query_id || x != y || a.len() != b.len() {
            return Err(Error::InvalidRankedList {
                query_id: b.query_id.clone(),
                reason: "reranked list does not hold the retrieved documents".into(),
            });
        }
    }
    if before.len() != after.len() {
        return Err(Error::InvalidConfig("reranked run has a different number of queries".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct StageRecord {
    inputs: String,
    outputs: BTreeMap<String, String>,
}

type Manifest = BTreeMap<String, StageRecord>;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stages: Vec<StageStatus>,
    /// Evaluation of the reranked run; absent without qrels.
    pub eval: Option<EvalReport>,
    /// Evaluation of the first-stage run.
    pub baseline: Option<EvalReport>,
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn key(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1f}").as_bytes())
}

struct Runner<'a> {
    dir: &'a Path,
    manifest: Manifest,
    stages: Vec<StageStatus>,
}

impl Runner<'_> {
    fn reusable(&self, stage: &str, inputs: &str) -> bool {
        let Some(rec) = self.manifest.get(stage) else {
            return false;
        };
        rec.inputs == inputs
            && rec
                .outputs
                .iter()
                .all(|(name, sha)| file_sha(&self.dir.join(name)).is_ok_and(|s| &s == sha))
    }

    /// Runs `produce` unless the stage can be reused; `produce` returns the
    /// artifact files it wrote.
    fn stage(
        &mut self,
        stage: &'static str,
        inputs: String,
        produce: impl FnOnce() -> Result<Vec<&'static str>>,
    ) -> Result<()> {
        if self.reusable(stage, &inputs) {
            log::info!("stage `{stage}`: inputs unchanged, reusing artifacts");
            self.stages.push(StageStatus {
                stage: stage.into(),
                reused: true,
            });
            return Ok(());
        }
        log::info!("stage `{stage}`: running");
        let files = produce().map_err(|e| e.in_stage(stage))?;
        let mut outputs = BTreeMap::new();
        for f in files {
            outputs.insert(f.to_string(), file_sha(&self.dir.join(f)).map_err(|e| e.in_stage(stage))?);
        }
        self.manifest.insert(stage.into(), StageRecord { inputs, outputs });
        self.save().map_err(|e| e.in_stage(stage))?;
        self.stages.push(StageStatus {
            stage: stage.into(),
            reused: false,
        });
        Ok(())
    }

    fn output(&self, stage: &str, name: &str) -> String {
        self.manifest
            .get(stage)
            .and_then(|r| r.outputs.get(name))
            .cloned()
            .unwrap_or_default()
    }

    fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write_file(&self.dir.join(MANIFEST), text.as_bytes())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

/// Runs every stage in order, reusing stages whose inputs are unchanged.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest: Manifest = std::fs::read_to_string(dir.join(MANIFEST))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let mut runner = Runner {
        dir,
        manifest,
        stages: Vec::new(),
    };

    let corpus_sha = file_sha(&cfg.corpus)?;
    let queries_sha = file_sha(&cfg.queries)?;
    let qrels_sha = match &cfg.qrels {
        Some(p) => file_sha(p)?,
        None => String::new(),
    };
    let queries = load_queries(&cfg.queries)?;

    // the corpus and index are only loaded when some stage needs them
    let loaded: OnceLock<(Arc<Corpus>, Arc<InvertedIndex>)> = OnceLock::new();
    let load = || -> Result<(Arc<Corpus>, Arc<InvertedIndex>)> {
        if let Some(v) = loaded.get() {
            return Ok(v.clone());
        }
        let corpus = load_corpus(&cfg.corpus)?;
        let index = InvertedIndex::build(corpus.documents())?;
        Ok(loaded.get_or_init(|| (Arc::new(corpus), Arc::new(index))).clone())
    };
    let qrels = match &cfg.qrels {
        Some(p) => Some(Arc::new(load_qrels(p)?)),
        None => None,
    };

    let bm25_path = dir.join("run.bm25.txt");
    runner.stage(
        "retrieve",
        key(&["retrieve", &corpus_sha, &queries_sha, &json(&cfg.retrieval)]),
        || {
            let (_, index) = load()?;
            let lists: Vec<RankedList> = queries
                .iter()
                .map(|q| index.retrieve_top_n(q, cfg.retrieval.topk, cfg.retrieval.bm25))
                .collect();
            write_file(&bm25_path, format_run(&lists)?.as_bytes())?;
            Ok(vec!["run.bm25.txt"])
        },
    )?;
    let bm25_sha = runner.output("retrieve", "run.bm25.txt");
    let read_run = |p: &Path| -> Result<Vec<RankedList>> { parse_run(&read_to_string(p)?, &p.display().to_string()) };

    let summaries_path = dir.join("summaries.jsonl");
    let summarizer_extra = match &cfg.summarizer {
        SummarizerSpec::Policy { checkpoint, .. } => file_sha(checkpoint)?,
        SummarizerSpec::Remote { template } => {
            let t = template.as_deref().map(file_sha).transpose()?.unwrap_or_default();
            format!("{}{t}", json(&cfg.remote))
        }
        SummarizerSpec::Firstp { .. } => String::new(),
    };
    runner.stage(
        "summarize",
        key(&["summarize", &bm25_sha, &corpus_sha, &queries_sha, &json(&cfg.summarizer), &summarizer_extra]),
        || {
            let (corpus, index) = load()?;
            let ctx = BackendContext {
                index: Some(index),
                qrels: qrels.clone(),
                remote: cfg.remote.clone(),
            };
            let backend = build_summarizer(&cfg.summarizer, &ctx)?;
            backend.probe()?;
            let run = read_run(&bm25_path)?;
            let by_id: BTreeMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
            let mut all = Vec::new();
            for list in &run {
                let q = by_id[list.query_id.as_str()];
                let docs = list
                    .doc_ids()
                    .map(|d| {
                        corpus.get(d).ok_or_else(|| Error::InvalidRankedList {
                            query_id: list.query_id.clone(),
                            reason: format!("document `{d}` not in the corpus"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                all.extend(summarize_pointwise(backend.as_ref(), q, &docs));
            }
            write_summaries(&all, &summaries_path)?;
            Ok(vec!["summaries.jsonl"])
        },
    )?;
    let summaries_sha = runner.output("summarize", "summaries.jsonl");

    let rerank_path = dir.join("run.rerank.txt");
    let reranker_extra = match &cfg.reranker {
        RerankerSpec::Oracle => qrels_sha.clone(),
        RerankerSpec::Lexical => corpus_sha.clone(),
        RerankerSpec::Remote { template } => {
            let t = template.as_deref().map(file_sha).transpose()?.unwrap_or_default();
            format!("{}{t}", json(&cfg.remote))
        }
    };
    runner.stage(
        "rerank",
        key(&["rerank", &bm25_sha, &summaries_sha, &json(&cfg.reranker), &json(&cfg.window), &reranker_extra]),
        || {
            let index = match cfg.reranker {
                RerankerSpec::Lexical => Some(load()?.1),
                _ => None,
            };
            let ctx = BackendContext {
                index,
                qrels: qrels.clone(),
                remote: cfg.remote.clone(),
            };
            let backend = build_reranker(&cfg.reranker, &ctx)?;
            backend.probe()?;
            let run = read_run(&bm25_path)?;
            let summaries = read_summaries(&summaries_path)?;
            let jobs = rerank_jobs(&queries, &run, &summaries)?;
            let reranked = rerank_queries(backend.as_ref(), &jobs, cfg.window, "rerank", cfg.parallelism.max(1))?;
            check_cardinality(&run, &reranked)?;
            write_file(&rerank_path, format_run(&reranked)?.as_bytes())?;
            Ok(vec!["run.rerank.txt"])
        },
    )?;
    let rerank_sha = runner.output("rerank", "run.rerank.txt");

    let mut eval = None;
    let mut baseline = None;
    if let Some(q) = &qrels {
        runner.stage(
            "eval",
            key(&["eval", &bm25_sha, &rerank_sha, &qrels_sha, &json(&cfg.metrics)]),
            || {
                let base = evaluate_run(&read_run(&bm25_path)?, q, &cfg.metrics)?;
                let report = evaluate_run(&read_run(&rerank_path)?, q, &cfg.metrics)?;
                write_file(&dir.join("metrics.tsv"), report.to_tsv().as_bytes())?;
                write_file(&dir.join("metrics.bm25.tsv"), base.to_tsv().as_bytes())?;
                let table = format!("first stage (bm25)\n{}\nreranked\n{}", base.to_table(), report.to_table());
                write_file(&dir.join("metrics.txt"), table.as_bytes())?;
                Ok(vec!["metrics.tsv", "metrics.bm25.tsv", "metrics.txt"])
            },
        )?;
        let report = evaluate_run(&read_run(&rerank_path)?, q, &cfg.metrics).map_err(|e| e.in_stage("eval"))?;
        let base = evaluate_run(&read_run(&bm25_path)?, q, &cfg.metrics).map_err(|e| e.in_stage("eval"))?;
        eval = Some(report);
        baseline = Some(base);
    }
    Ok(PipelineReport {
        stages: runner.stages,
        eval,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_qrels, write_queries, Document};

    fn fixture(dir: &Path) -> PipelineConfig {
        let docs = vec![
            Document::new("a", "", "The tide tables list every high tide at the harbor."),
            Document::new("b", "", "Harbor fees rose this year for every boat."),
            Document::new("c", "", "Gulls and terns nest on the cliffs."),
            Document::new("d", "", "Tide pools hold crabs at low water."),
        ];
        write_corpus(&docs, dir.join("corpus.jsonl")).unwrap();
        write_queries(&[Query::new("q1", "tide harbor"), Query::new("q2", "gulls cliffs")], dir.join("queries.tsv")).unwrap();
        let mut qrels = QrelsTable::new();
        qrels.insert("q1", "a", 2);
        qrels.insert("q1", "b", 0);
        qrels.insert("q1", "d", 1);
        qrels.insert("q2", "c", 1);
        write_qrels(&qrels, dir.join("qrels.txt")).unwrap();
        PipelineConfig {
            corpus: dir.join("corpus.jsonl"),
            queries: dir.join("queries.tsv"),
            qrels: Some(dir.join("qrels.txt")),
            output_dir: dir.join("out"),
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig {
            summarizer: SummarizerSpec::Policy {
                checkpoint: "p.ckpt".into(),
                budget: 2,
            },
            reranker: RerankerSpec::Oracle,
            ..Default::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        let minimal = PipelineConfig::from_toml("corpus = \"c.jsonl\"\n[summarizer]\nkind = \"firstp\"\nk = 256\n").unwrap();
        assert_eq!(minimal.retrieval.topk, 100);
        assert_eq!(minimal.window, WindowPlan::default());
        assert_eq!(minimal.metrics.ndcg_k, 10);
        assert_eq!(minimal.metrics.map_k, 100);
        assert_eq!(minimal.summarizer, SummarizerSpec::Firstp { k: 256 });
    }

    #[test]
    fn validation_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.validate().unwrap();
        cfg.corpus = dir.path().join("missing.jsonl");
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = fixture(dir.path());
        cfg.qrels = None;
        cfg.reranker = RerankerSpec::Oracle;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn oracle_run_is_perfect_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.reranker = RerankerSpec::Oracle;
        let first = run_pipeline(&cfg).unwrap();
        assert!(first.stages.iter().all(|s| !s.reused));
        let eval = first.eval.unwrap();
        assert!(eval.per_query.iter().all(|q| (q.ndcg - 1.0).abs() < 1e-12));
        let snapshot = |name: &str| std::fs::read(cfg.output_dir.join(name)).unwrap();
        let before: Vec<Vec<u8>> = ["run.bm25.txt", "summaries.jsonl", "run.rerank.txt", "metrics.tsv", "manifest.json"]
            .iter()
            .map(|n| snapshot(n))
            .collect();
        let second = run_pipeline(&cfg).unwrap();
        assert!(second.stages.iter().all(|s| s.reused));
        let after: Vec<Vec<u8>> = ["run.bm25.txt", "summaries.jsonl", "run.rerank.txt", "metrics.tsv", "manifest.json"]
            .iter()
            .map(|n| snapshot(n))
            .collect();
        assert_eq!(before, after);

        // a new summarizer reruns summarize and rerank; the oracle order does
        // not depend on summaries, so the evaluation inputs are unchanged
        cfg.summarizer = SummarizerSpec::Firstp { k: 3 };
        let third = run_pipeline(&cfg).unwrap();
        let reused: Vec<bool> = third.stages.iter().map(|s| s.reused).collect();
        assert_eq!(reused, vec![true, false, false, true]);
        cfg.reranker = RerankerSpec::Lexical;
        let fourth = run_pipeline(&cfg).unwrap();
        assert!(fourth.stages[1].reused);
        assert!(!fourth.stages[2].reused);
    }

    #[test]
    fn tampered_artifact_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        run_pipeline(&cfg).unwrap();
        std::fs::write(cfg.output_dir.join("run.rerank.txt"), "garbage").unwrap();
        let again = run_pipeline(&cfg).unwrap();
        let reused: Vec<bool> = again.stages.iter().map(|s| s.reused).collect();
        assert_eq!(reused, vec![true, true, false, true]);
        assert_ne!(std::fs::read(cfg.output_dir.join("run.rerank.txt")).unwrap(), b"garbage");
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        let ckpt = dir.path().join("bad.ckpt");
        std::fs::write(&ckpt, "not a checkpoint").unwrap();
        cfg.summarizer = SummarizerSpec::Policy {
            checkpoint: ckpt,
            budget: 3,
        };
        match run_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "summarize"),
            other => panic!("unexpected {other:?}"),
        }
        // the retrieval artifact survives
        assert!(cfg.output_dir.join("run.bm25.txt").exists());
    }

    #[test]
    fn cardinality_check() {
        let a = RankedList::from_ordered("q", vec![("x".to_string(), 2.0), ("y".to_string(), 1.0)], "t");
        let b = RankedList::from_ordered("q", vec![("y".to_string(), 2.0), ("x".to_string(), 1.0)], "t");
        let c = RankedList::from_ordered("q", vec![("y".to_string(), 2.0), ("z".to_string(), 1.0)], "t");
        check_cardinality(std::slice::from_ref(&a), &[b]).unwrap();
        assert!(check_cardinality(&[a], &[c]).is_err());
    }
}
