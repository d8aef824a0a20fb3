//! Ranking reward for one rollout against the frozen background list.

use crate::error::{Error, Result};
use crate::metrics::{ndcg_from_grades, Gain};
use crate::rerank::{sliding_window_rerank, RerankItem, Reranker, WindowPlan};
use crate::rl_data::{Label, RlInstance};
use crate::summarize::detect_safeguard;

pub const REWARD_NDCG_K: usize = 10;

/// Background texts with position `t` replaced by `text`.
pub fn assemble_eval_list(instance: &RlInstance, t: usize, text: &str) -> Result<Vec<String>> {
    let n = instance.candidates.len();
    if t >= n {
        return Err(Error::IndexOutOfRange { index: t, len: n });
    }
    if !instance.has_background() {
        return Err(Error::InvalidConfig(format!(
            "instance `{}` has no background summaries",
            instance.query.query_id
        )));
    }
    Ok(instance
        .background
        .iter()
        .enumerate()
        .map(|(i, s)| if i == t { text.to_string() } else { s.text.clone() })
        .collect())
}

/// NDCG@10 of the reranked `texts`, judged only against the instance's
/// candidates.
pub fn list_ndcg(instance: &RlInstance, texts: &[String], reranker: &dyn Reranker) -> Result<f64> {
    let items: Vec<RerankItem> = instance
        .candidates
        .iter()
        .zip(texts)
        .map(|(c, t)| RerankItem::new(c.doc_id.clone(), t.clone()))
        .collect();
    let ranked = sliding_window_rerank(reranker, &instance.query, &items, WindowPlan::default(), "reward")?;
    let grade_of = |doc: &str| {
        instance
            .candidates
            .iter()
            .find(|c| c.doc_id == doc)
            .map_or(0, |c| c.grade)
    };
    let ranked_grades: Vec<u32> = ranked.doc_ids().map(grade_of).collect();
    let judged: Vec<u32> = instance.candidates.iter().map(|c| c.grade).collect();
    Ok(ndcg_from_grades(&ranked_grades, &judged, REWARD_NDCG_K, Gain::Linear))
}

/// Combines the ranking score with the safeguard rule.
pub fn shape_reward(label: Label, ranking_score: f64, is_safeguard: bool, lambda: f64) -> f64 {
    match label {
        Label::Positive => ranking_score,
        Label::Negative if is_safeguard => 1.0,
        Label::Negative => ranking_score - lambda,
    }
}

/// Reward of `text` generated for the candidate at position `t`.
pub fn compute_reward(instance: &RlInstance, t: usize, text: &str, reranker: &dyn Reranker, lambda: f64) -> Result<f64> {
    let label = instance
        .candidates
        .get(t)
        .ok_or(Error::IndexOutOfRange {
            index: t,
            len: instance.candidates.len(),
        })?
        .label;
    let safeguard = detect_safeguard(text);
    if label == Label::Negative && safeguard {
        return Ok(1.0);
    }
    let texts = assemble_eval_list(instance, t, text)?;
    let score = list_ndcg(instance, &texts, reranker)?;
    Ok(shape_reward(label, score, safeguard, lambda))
}
