//! The policy-optimization loop and held-out evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::rerank::Reranker;
use crate::retrieval::InvertedIndex;
use crate::rl_data::{build_background_summaries, Label, RlInstance};
use crate::util::{derive_seed, write_file};

use super::features::PreparedDoc;
use super::grpo::{grpo_step, normalize_advantages, GroupSample, GrpoConfig};
use super::policy::{greedy_decode, sample_rollouts, DecodeCounter, PolicyParams, PolicySummarizer};
use super::reward::{compute_reward, list_ndcg};

/// Documents, idf source and reward ranker shared by training and evaluation.
#[derive(Clone, Copy)]
pub struct TrainEnv<'a> {
    pub corpus: &'a Corpus,
    pub index: Option<&'a Arc<InvertedIndex>>,
    pub reranker: &'a dyn Reranker,
}

impl TrainEnv<'_> {
    fn doc(&self, inst: &RlInstance, doc_id: &str) -> Result<&Document> {
        self.corpus.get(doc_id).ok_or_else(|| Error::InsufficientJudgments {
            query_id: inst.query.query_id.clone(),
            reason: format!("candidate `{doc_id}` missing from the corpus"),
        })
    }

    fn prepare(&self, inst: &RlInstance, doc_id: &str) -> Result<PreparedDoc> {
        Ok(PreparedDoc::new(&inst.query, self.doc(inst, doc_id)?, self.index.map(|i| i.as_ref())))
    }
}

/// Every candidate of every instance, prepared for its query, in list order.
pub fn prepare_candidates(instances: &[RlInstance], corpus: &Corpus, index: Option<&InvertedIndex>) -> Result<Vec<PreparedDoc>> {
    instances
        .par_iter()
        .map(|inst| {
            inst.candidates
                .iter()
                .map(|c| {
                    let doc = corpus.get(&c.doc_id).ok_or_else(|| Error::InsufficientJudgments {
                        query_id: inst.query.query_id.clone(),
                        reason: format!("candidate `{}` missing from the corpus", c.doc_id),
                    })?;
                    Ok(PreparedDoc::new(&inst.query, doc, index))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Fills empty background lists by greedy decoding of `params`. Returns the
/// number of instances filled.
pub fn fill_backgrounds(instances: &mut [RlInstance], params: &PolicyParams, env: TrainEnv<'_>, budget: usize) -> Result<usize> {
    let summarizer = PolicySummarizer::new(Arc::new(params.clone()), env.index.cloned(), budget);
    let mut filled = 0;
    for inst in instances.iter_mut().filter(|i| !i.has_background()) {
        inst.background = build_background_summaries(&inst.candidates, &summarizer, &inst.query, env.corpus)?;
        filled += 1;
    }
    Ok(filled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    pub ndcg10: f64,
    /// Share of negative candidates whose greedy summary is the safeguard phrase.
    pub safeguard_rate: f64,
    /// Same share over positive candidates.
    pub positive_safeguard_rate: f64,
    pub negatives: usize,
}

/// Summarizes every candidate with the greedy policy, reranks each list and
/// scores it against the candidates' grades.
pub fn evaluate_policy(params: &PolicyParams, instances: &[RlInstance], env: TrainEnv<'_>, budget: usize) -> Result<HeldoutMetrics> {
    let per: Vec<(f64, usize, usize, usize, usize)> = instances
        .par_iter()
        .map(|inst| {
            let mut texts = Vec::with_capacity(inst.candidates.len());
            let (mut neg, mut neg_sg, mut pos, mut pos_sg) = (0, 0, 0, 0);
            for c in &inst.candidates {
                let r = greedy_decode(params, &env.prepare(inst, &c.doc_id)?, budget, None);
                match c.label {
                    Label::Negative => {
                        neg += 1;
                        neg_sg += usize::from(r.is_reject());
                    }
                    Label::Positive => {
                        pos += 1;
                        pos_sg += usize::from(r.is_reject());
                    }
                }
                texts.push(r.text);
            }
            Ok((list_ndcg(inst, &texts, env.reranker)?, neg, neg_sg, pos, pos_sg))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let sum = |f: fn(&(f64, usize, usize, usize, usize)) -> usize| per.iter().map(f).sum::<usize>();
    let (neg, neg_sg, pos, pos_sg) = (sum(|p| p.1), sum(|p| p.2), sum(|p| p.3), sum(|p| p.4));
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(HeldoutMetrics {
        ndcg10: per.iter().map(|p| p.0).sum::<f64>() / n,
        safeguard_rate: ratio(neg_sg, neg),
        positive_safeguard_rate: ratio(pos_sg, pos),
        negatives: neg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub query_id: String,
    pub doc_id: String,
    pub label: Label,
    pub mean_reward: f64,
    /// KL to the reference at the pre-step parameters.
    pub kl: f64,
    pub clip_fraction: f64,
    pub advantage_mean: f64,
    /// Population variance of the group advantages.
    pub advantage_var: f64,
    /// Policy decodes spent on this step.
    pub decodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub heldout: HeldoutMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub initial: HeldoutMetrics,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
    pub checksums_before: Vec<String>,
    pub checksums_after: Vec<String>,
}

impl TrainOutcome {
    pub fn final_heldout(&self) -> HeldoutMetrics {
        self.epochs.last().map_or(self.initial, |e| e.heldout)
    }
}

/// Runs policy optimization starting from `init`, which also serves as the
/// KL reference. Every instance needs its background list.
pub fn train_grpo(
    instances: &[RlInstance],
    heldout: &[RlInstance],
    init: &PolicyParams,
    env: TrainEnv<'_>,
    cfg: &GrpoConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidConfig("no training instances".into()));
    }
    for inst in instances {
        inst.validate()?;
        if !inst.has_background() {
            return Err(Error::InvalidConfig(format!(
                "instance `{}` has no background summaries",
                inst.query.query_id
            )));
        }
    }
    if !env.reranker.is_deterministic() {
        log::warn!("reward ranker `{}` is not deterministic; runs will not be reproducible", env.reranker.name());
    }
    let checksums_before: Vec<String> = instances.iter().map(RlInstance::background_checksum).collect();
    let reference = init.clone();
    let mut params = init.clone();
    let counter = DecodeCounter::new();
    let initial = evaluate_policy(&params, heldout, env, cfg.budget)?;
    log::info!(
        "initial held-out ndcg@10 {:.4}, negative safeguard rate {:.4}",
        initial.ndcg10,
        initial.safeguard_rate
    );

    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let (mut reward_sum, mut reward_n, mut kl_sum, mut clip_sum, mut n_steps) = (0.0, 0usize, 0.0, 0.0, 0usize);
        for &qi in &order {
            let inst = &instances[qi];
            let qid = &inst.query.query_id;
            let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("target/{epoch}/{qid}")));
            let targets = [Label::Positive, Label::Negative]
                .map(|l| *inst.positions(l).choose(&mut pick).expect("validated composition"));
            for t in targets {
                let cand = &inst.candidates[t];
                let doc = env.prepare(inst, &cand.doc_id)?;
                let old = params.clone();
                let before = counter.get();
                let seed = derive_seed(cfg.seed, &format!("rollouts/{epoch}/{qid}/{t}"));
                let rollouts = sample_rollouts(&old, &doc, cfg.group_size, cfg.budget, seed, Some(&counter));
                let rewards: Vec<f64> = rollouts
                    .par_iter()
                    .map(|r| compute_reward(inst, t, &r.text, env.reranker, cfg.penalty_lambda))
                    .collect::<Result<_>>()?;
                let decodes = counter.get() - before;
                let advantages = normalize_advantages(&rewards, cfg.std_floor);
                let group = GroupSample {
                    doc: &doc,
                    rollouts: &rollouts,
                    advantages: &advantages,
                };
                let out = grpo_step(&params, &reference, &old, group, cfg, steps.len())?;
                params = out.params;
                let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
                let advantage_mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
                let advantage_var =
                    advantages.iter().map(|a| (a - advantage_mean).powi(2)).sum::<f64>() / advantages.len() as f64;
                reward_sum += rewards.iter().sum::<f64>();
                reward_n += rewards.len();
                kl_sum += out.objective.kl;
                clip_sum += out.clip_fraction_after;
                n_steps += 1;
                steps.push(StepRecord {
                    epoch,
                    query_id: qid.clone(),
                    doc_id: cand.doc_id.clone(),
                    label: cand.label,
                    mean_reward,
                    kl: out.objective.kl,
                    clip_fraction: out.clip_fraction_after,
                    advantage_mean,
                    advantage_var,
                    decodes,
                });
            }
        }
        let heldout_metrics = evaluate_policy(&params, heldout, env, cfg.budget)?;
        let m = EpochMetrics {
            epoch,
            mean_reward: reward_sum / reward_n.max(1) as f64,
            mean_kl: kl_sum / n_steps.max(1) as f64,
            clip_fraction: clip_sum / n_steps.max(1) as f64,
            heldout: heldout_metrics,
        };
        log::info!(
            "epoch {epoch}: reward {:.4} kl {:.6} clip {:.4} held-out ndcg@10 {:.4} safeguard {:.4}",
            m.mean_reward,
            m.mean_kl,
            m.clip_fraction,
            m.heldout.ndcg10,
            m.heldout.safeguard_rate
        );
        epochs.push(m);
    }
    let checksums_after = instances.iter().map(RlInstance::background_checksum).collect();
    Ok(TrainOutcome {
        params,
        initial,
        epochs,
        steps,
        checksums_before,
        checksums_after,
    })
}

pub const METRICS_HEADER: &str = "epoch,mean_reward,mean_kl,clip_fraction,heldout_ndcg10,heldout_safeguard_rate";

pub fn format_metrics_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for e in epochs {
        let _ = writeln!(
            out,
            "{},{:.6},{:.8},{:.6},{:.6},{:.6}",
            e.epoch, e.mean_reward, e.mean_kl, e.clip_fraction, e.heldout.ndcg10, e.heldout.safeguard_rate
        );
    }
    out
}

pub fn write_metrics_csv(epochs: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), format_metrics_csv(epochs).as_bytes())
}

/// Splits instances into training and held-out sets by a seeded hash of the
/// query id; about `fraction` of them are held out.
pub fn split_heldout(instances: Vec<RlInstance>, fraction: f64, seed: u64) -> (Vec<RlInstance>, Vec<RlInstance>) {
    let cut = (fraction.clamp(0.0, 1.0) * u64::MAX as f64) as u64;
    instances
        .into_iter()
        .partition(|i| derive_seed(seed, &format!("heldout/{}", i.query.query_id)) >= cut)
}
