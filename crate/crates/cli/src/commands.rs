use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use strank_core::corpus::{load_corpus, load_qrels, load_queries, read_run, write_run, QrelsTable, Query, RankedList};
use strank_core::metrics::{evaluate_run, Gain, MetricConfig};
use strank_core::pipeline::{
    build_reranker, build_summarizer, check_cardinality, load_index_bundle, rerank_jobs, run_pipeline, save_index_bundle,
    BackendContext, PipelineConfig, RerankerSpec, SummarizerSpec,
};
use strank_core::rerank::{rerank_queries, Reranker, WindowPlan};
use strank_core::retrieval::InvertedIndex;
use strank_core::rl_data::{build_rl_data, read_rl_data, write_rl_data, RlInstance};
use strank_core::summarize::{read_summaries, summarize_pointwise, write_summaries, Summarizer};
use strank_core::synthetic::{generate, SyntheticConfig};
use strank_core::train::trainer::{split_heldout, write_metrics_csv};
use strank_core::train::{
    fill_backgrounds, load_checkpoint, prepare_candidates, save_checkpoint, train_grpo, train_sft, PolicySummarizer,
    SftConfig, TrainEnv,
};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Index(a) => index(a),
        Command::Retrieve(a) => retrieve(a, &cfg),
        Command::Summarize(a) => summarize(a, &cfg),
        Command::Rerank(a) => rerank(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::BuildRlData(a) => build_rl(a, &cfg),
        Command::Sft(a) => sft(a, &cfg),
        Command::TrainGrpo(a) => grpo(a, &cfg),
        Command::Pipeline(a) => pipeline(a, cli.config.is_some(), cfg),
        Command::Serve(a) => crate::serve::serve(a, &cfg),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn summarizer_spec(flags: &SummarizerFlags, cfg: &PipelineConfig) -> Result<SummarizerSpec> {
    let base = &cfg.summarizer;
    let kind = flags.kind.unwrap_or(match base {
        SummarizerSpec::Firstp { .. } => SummarizerKind::Firstp,
        SummarizerSpec::Policy { .. } => SummarizerKind::Policy,
        SummarizerSpec::Remote { .. } => SummarizerKind::Remote,
    });
    Ok(match kind {
        SummarizerKind::Firstp => {
            let k = match base {
                SummarizerSpec::Firstp { k } => *k,
                _ => 128,
            };
            SummarizerSpec::Firstp {
                k: flags.firstp_k.unwrap_or(k),
            }
        }
        SummarizerKind::Policy => {
            let (ckpt, budget) = match base {
                SummarizerSpec::Policy { checkpoint, budget } => (Some(checkpoint.clone()), *budget),
                _ => (None, 3),
            };
            SummarizerSpec::Policy {
                checkpoint: flags
                    .checkpoint
                    .clone()
                    .or(ckpt)
                    .ok_or_else(|| anyhow!("the policy summarizer needs --checkpoint"))?,
                budget: flags.budget.unwrap_or(budget),
            }
        }
        SummarizerKind::Remote => {
            let template = match base {
                SummarizerSpec::Remote { template } => template.clone(),
                _ => None,
            };
            SummarizerSpec::Remote {
                template: flags.summarize_template.clone().or(template),
            }
        }
    })
}

pub fn reranker_spec(kind: Option<RerankerKind>, template: Option<&Path>, cfg: &PipelineConfig) -> RerankerSpec {
    let Some(kind) = kind else {
        return match (&cfg.reranker, template) {
            (RerankerSpec::Remote { .. }, Some(t)) => RerankerSpec::Remote {
                template: Some(t.to_path_buf()),
            },
            (spec, _) => spec.clone(),
        };
    };
    match kind {
        RerankerKind::Oracle => RerankerSpec::Oracle,
        RerankerKind::Lexical => RerankerSpec::Lexical,
        RerankerKind::Remote => {
            let base = match &cfg.reranker {
                RerankerSpec::Remote { template } => template.clone(),
                _ => None,
            };
            RerankerSpec::Remote {
                template: template.map(Path::to_path_buf).or(base),
            }
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = generate(&SyntheticConfig {
        queries: a.queries,
        heldout: a.heldout,
        background_docs: a.background_docs,
        seed: a.seed,
        ..Default::default()
    });
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    data.write(&a.out)?;
    println!(
        "wrote {} documents, {} queries ({} train, {} held out) to {}",
        data.documents.len(),
        data.queries.len(),
        data.train.len(),
        data.heldout.len(),
        a.out.display()
    );
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let index = InvertedIndex::build(corpus.documents())?;
    save_index_bundle(&index, &corpus, &a.out)?;
    println!(
        "indexed {} documents (avg length {:.1}) into {}",
        index.doc_count(),
        index.avg_doc_len(),
        a.out.display()
    );
    Ok(())
}

fn retrieve(a: RetrieveArgs, cfg: &PipelineConfig) -> Result<()> {
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let mut params = cfg.retrieval.bm25;
    params.k1 = a.k1.unwrap_or(params.k1);
    params.b = a.b.unwrap_or(params.b);
    params.validate()?;
    let topk = a.topk.unwrap_or(cfg.retrieval.topk);
    let lists: Vec<RankedList> = queries.iter().map(|q| index.retrieve_top_n(q, topk, params)).collect();
    write_run(&lists, &a.out)?;
    let empty = lists.iter().filter(|l| l.is_empty()).count();
    println!("retrieved top-{topk} for {} queries ({empty} empty) into {}", lists.len(), a.out.display());
    Ok(())
}

fn query_map(queries: &[Query]) -> BTreeMap<&str, &Query> {
    queries.iter().map(|q| (q.query_id.as_str(), q)).collect()
}

fn summarize(a: SummarizeArgs, cfg: &PipelineConfig) -> Result<()> {
    let (corpus, index) = load_index_bundle(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let run = read_run(&a.run)?;
    let spec = summarizer_spec(&a.summarizer, cfg)?;
    let ctx = BackendContext {
        index: Some(Arc::new(index)),
        qrels: None,
        remote: cfg.remote.clone(),
    };
    let backend = build_summarizer(&spec, &ctx)?;
    backend.probe()?;
    let by_id = query_map(&queries);
    let mut all = Vec::new();
    for list in &run {
        let q = by_id
            .get(list.query_id.as_str())
            .ok_or_else(|| anyhow!("run query `{}` is not in {}", list.query_id, a.queries.display()))?;
        let docs = list
            .doc_ids()
            .map(|d| corpus.get(d).ok_or_else(|| anyhow!("document `{d}` is not in the index")))
            .collect::<Result<Vec<_>>>()?;
        all.extend(summarize_pointwise(backend.as_ref(), q, &docs));
    }
    write_summaries(&all, &a.out)?;
    let safeguards = all.iter().filter(|s| s.is_safeguard).count();
    println!(
        "{} summaries by {} ({safeguards} safeguard) into {}",
        all.len(),
        backend.name(),
        a.out.display()
    );
    Ok(())
}

fn rerank(a: RerankArgs, cfg: &PipelineConfig) -> Result<()> {
    let run = read_run(&a.run)?;
    let summaries = read_summaries(&a.summaries)?;
    let queries = load_queries(&a.queries)?;
    let spec = reranker_spec(a.backend, a.template.as_deref(), cfg);
    let ctx = BackendContext {
        index: a.index.as_ref().map(InvertedIndex::load).transpose()?.map(Arc::new),
        qrels: a.qrels.as_ref().map(load_qrels).transpose()?.map(Arc::new),
        remote: cfg.remote.clone(),
    };
    let backend = build_reranker(&spec, &ctx)?;
    backend.probe()?;
    let plan = WindowPlan::new(a.window.unwrap_or(cfg.window.window), a.step.unwrap_or(cfg.window.step))?;
    let jobs = rerank_jobs(&queries, &run, &summaries)?;
    let tag = backend.name();
    let out = rerank_queries(backend.as_ref(), &jobs, plan, &tag, a.parallelism.unwrap_or(cfg.parallelism))?;
    check_cardinality(&run, &out)?;
    write_run(&out, &a.out)?;
    println!("reranked {} queries with {tag} into {}", out.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let metrics = MetricConfig {
        ndcg_k: a.ndcg_k.unwrap_or(cfg.metrics.ndcg_k),
        map_k: a.map_k.unwrap_or(cfg.metrics.map_k),
        gain: match a.gain {
            Some(GainArg::Linear) => Gain::Linear,
            Some(GainArg::Exponential) => Gain::Exponential,
            None => cfg.metrics.gain,
        },
        ..cfg.metrics
    };
    let report = evaluate_run(&run, &qrels, &metrics)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn build_rl(a: BuildRlDataArgs, cfg: &PipelineConfig) -> Result<()> {
    let (corpus, index) = load_index_bundle(&a.index)?;
    let index = Arc::new(index);
    let queries = load_queries(&a.queries)?;
    let qrels = load_qrels(&a.qrels)?;
    let mut rl = cfg.rl_data;
    rl.n = a.n.unwrap_or(rl.n);
    rl.k = a.k.unwrap_or(rl.k);
    rl.seed = a.seed.unwrap_or(rl.seed);
    let summarizer = match &a.background {
        Some(p) => Some(PolicySummarizer::new(Arc::new(load_checkpoint(p)?), Some(index.clone()), a.budget)),
        None => None,
    };
    let built = build_rl_data(
        &queries,
        &corpus,
        &index,
        &qrels,
        &rl,
        summarizer.as_ref().map(|s| s as &dyn Summarizer),
    )?;
    write_rl_data(&built.instances, &a.out)?;
    let injected: usize = built.instances.iter().map(|i| i.injected_count).sum();
    println!(
        "{} instances of {} candidates ({injected} injected, {} queries skipped) into {}",
        built.instances.len(),
        rl.n,
        built.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn sft(a: SftArgs, cfg: &PipelineConfig) -> Result<()> {
    let instances = read_rl_data(&a.rl_data)?;
    let (corpus, index) = load_index_bundle(&a.index)?;
    let defaults = SftConfig {
        seed: cfg.seed,
        ..Default::default()
    };
    let sft_cfg = SftConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        seed: a.seed.unwrap_or(defaults.seed),
        budget: a.budget.unwrap_or(defaults.budget),
        ..defaults
    };
    let docs = prepare_candidates(&instances, &corpus, Some(&index))?;
    let (params, losses) = train_sft(&docs, &strank_core::PolicyParams::zeros(), &sft_cfg)?;
    save_checkpoint(&params, &a.out)?;
    for (e, l) in losses.iter().enumerate() {
        println!("epoch {}: loss {l:.6}", e + 1);
    }
    println!("trained on {} documents; checkpoint {}", docs.len(), a.out.display());
    Ok(())
}

/// Qrels recovered from the candidate grades of training instances.
fn instance_qrels(instances: &[RlInstance]) -> QrelsTable {
    let mut qrels = QrelsTable::new();
    for inst in instances {
        for c in &inst.candidates {
            qrels.insert(&inst.query.query_id, &c.doc_id, c.grade);
        }
    }
    qrels
}

fn grpo(a: TrainGrpoArgs, cfg: &PipelineConfig) -> Result<()> {
    let all = read_rl_data(&a.rl_data)?;
    let (mut train, heldout) = match &a.heldout {
        Some(p) => (all, read_rl_data(p)?),
        None => split_heldout(all, a.heldout_fraction, cfg.seed),
    };
    if train.is_empty() {
        bail!("no training instances left after the held-out split");
    }
    let (corpus, index) = load_index_bundle(&a.index)?;
    let index = Arc::new(index);
    let init = load_checkpoint(&a.init)?;

    let mut g = cfg.grpo;
    g.group_size = a.group_size.unwrap_or(g.group_size);
    g.kl_beta = a.beta.unwrap_or(g.kl_beta);
    g.penalty_lambda = a.lambda.unwrap_or(g.penalty_lambda);
    g.clip_epsilon = a.epsilon.unwrap_or(g.clip_epsilon);
    g.epochs = a.epochs.unwrap_or(g.epochs);
    g.learning_rate = a.lr.unwrap_or(g.learning_rate);
    g.seed = a.seed.unwrap_or(g.seed);
    g.validate()?;

    let spec = reranker_spec(a.reranker, None, cfg);
    let ctx = BackendContext {
        index: Some(index.clone()),
        qrels: Some(Arc::new(instance_qrels(&train))),
        remote: cfg.remote.clone(),
    };
    let reranker: Box<dyn Reranker> = build_reranker(&spec, &ctx)?;
    reranker.probe()?;
    let env = TrainEnv {
        corpus: &corpus,
        index: Some(&index),
        reranker: reranker.as_ref(),
    };
    let filled = fill_backgrounds(&mut train, &init, env, g.budget)?;
    if filled > 0 {
        log::info!("filled background summaries for {filled} instances from the init checkpoint");
    }
    let outcome = train_grpo(&train, &heldout, &init, env, &g)?;
    save_checkpoint(&outcome.params, &a.out)?;
    if let Some(m) = &a.metrics {
        write_metrics_csv(&outcome.epochs, m)?;
    }
    println!(
        "initial: heldout ndcg@10 {:.4}, safeguard rate {:.3}",
        outcome.initial.ndcg10, outcome.initial.safeguard_rate
    );
    for e in &outcome.epochs {
        println!(
            "epoch {}: reward {:.4}, kl {:.6}, clip {:.3}, heldout ndcg@10 {:.4}, safeguard rate {:.3}",
            e.epoch, e.mean_reward, e.mean_kl, e.clip_fraction, e.heldout.ndcg10, e.heldout.safeguard_rate
        );
    }
    println!(
        "{} training and {} held-out instances; checkpoint {}",
        train.len(),
        heldout.len(),
        a.out.display()
    );
    Ok(())
}

fn pipeline(a: PipelineArgs, has_config: bool, mut cfg: PipelineConfig) -> Result<()> {
    if !has_config {
        bail!("pipeline needs a config file (--config or {CONFIG_ENV})");
    }
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let report = run_pipeline(&cfg)?;
    for s in &report.stages {
        println!("{:<10}{}", s.stage, if s.reused { "reused" } else { "ran" });
    }
    if let Some(base) = &report.baseline {
        println!("\nfirst stage\n{}", base.to_table());
    }
    if let Some(eval) = &report.eval {
        println!("reranked\n{}", eval.to_table());
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}
