//! The extractive summarization policy.
//!
//! A rollout is a token sequence. Token 0 is the gate: REJECT emits the
//! safeguard phrase and ends the sequence, CONTINUE moves on to one
//! INCLUDE/SKIP token per sentence. Both kinds of token are Bernoulli with a
//! logistic link on a linear score. Once `budget` sentences are included the
//! remaining tokens are forced SKIPs with probability 1; forced tokens carry
//! no log-probability and are excluded from every loss.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::retrieval::InvertedIndex;
use crate::summarize::{Summarizer, SAFEGUARD_PHRASE};
use crate::util::{dot, log_sigmoid, sigmoid};

use super::features::{PreparedDoc, GATE_DIM, SENTENCE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub gate_weights: Vec<f64>,
    pub include_weights: Vec<f64>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            gate_weights: vec![0.0; GATE_DIM],
            include_weights: vec![0.0; SENTENCE_DIM],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gate_weights.len() != GATE_DIM || self.include_weights.len() != SENTENCE_DIM {
            return Err(Error::Checkpoint(format!(
                "expected {GATE_DIM} gate and {SENTENCE_DIM} include weights, got {} and {}",
                self.gate_weights.len(),
                self.include_weights.len()
            )));
        }
        if !self.is_finite() {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.gate_weights.iter().chain(&self.include_weights).all(|w| w.is_finite())
    }

    pub fn len(&self) -> usize {
        self.gate_weights.len() + self.include_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gate weights followed by include weights.
    pub fn to_flat(&self) -> Vec<f64> {
        self.gate_weights.iter().chain(&self.include_weights).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            gate_weights: flat[..GATE_DIM].to_vec(),
            include_weights: flat[GATE_DIM..GATE_DIM + SENTENCE_DIM].to_vec(),
        }
    }

    /// `self + scale * other`, element-wise.
    pub fn add_scaled(&self, other: &PolicyParams, scale: f64) -> PolicyParams {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + scale * y).collect();
        PolicyParams {
            gate_weights: zip(&self.gate_weights, &other.gate_weights),
            include_weights: zip(&self.include_weights, &other.include_weights),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    Continue,
    Include,
    Skip,
}

impl Decision {
    /// True for the action whose probability is the sigmoid (CONTINUE / INCLUDE).
    pub fn is_positive(self) -> bool {
        matches!(self, Decision::Continue | Decision::Include)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub doc_id: String,
    pub decisions: Vec<Decision>,
    pub forced: Vec<bool>,
    /// Log-probability of each token under the sampling policy; 0 for forced tokens.
    pub log_probs: Vec<f64>,
    pub text: String,
}

impl Rollout {
    pub fn is_reject(&self) -> bool {
        self.decisions.first() == Some(&Decision::Reject)
    }

    /// Number of tokens that enter the losses.
    pub fn free_tokens(&self) -> usize {
        self.forced.iter().filter(|f| !**f).count()
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Logit of the positive action at token `t` (0 = gate).
pub fn token_logit(params: &PolicyParams, doc: &PreparedDoc, t: usize) -> f64 {
    token_features(params, doc, t).0
}

/// `(logit, features)` of token `t`.
pub(crate) fn token_features<'a>(params: &PolicyParams, doc: &'a PreparedDoc, t: usize) -> (f64, &'a [f64]) {
    if t == 0 {
        (dot(&params.gate_weights, &doc.gate), &doc.gate)
    } else {
        let x = &doc.sentence_features[t - 1];
        (dot(&params.include_weights, x), x)
    }
}

fn chosen_log_prob(z: f64, d: Decision) -> f64 {
    if d.is_positive() {
        log_sigmoid(z)
    } else {
        log_sigmoid(-z)
    }
}

/// Per-token log-probabilities of `decisions` under `params`; forced tokens get 0.
pub fn token_log_probs(params: &PolicyParams, doc: &PreparedDoc, decisions: &[Decision], forced: &[bool]) -> Vec<f64> {
    decisions
        .iter()
        .zip(forced)
        .enumerate()
        .map(|(t, (&d, &f))| if f { 0.0 } else { chosen_log_prob(token_logit(params, doc, t), d) })
        .collect()
}

/// Log-probability of a whole decision sequence (sum over free tokens).
pub fn sequence_log_prob(params: &PolicyParams, doc: &PreparedDoc, decisions: &[Decision], forced: &[bool]) -> f64 {
    token_log_probs(params, doc, decisions, forced).iter().sum()
}

pub fn render_text(doc: &PreparedDoc, decisions: &[Decision]) -> String {
    if decisions.first() == Some(&Decision::Reject) {
        return SAFEGUARD_PHRASE.to_string();
    }
    decisions
        .iter()
        .skip(1)
        .zip(&doc.sentences)
        .filter(|(d, _)| **d == Decision::Include)
        .map(|(_, s)| s.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs the decision process, choosing each free token with `choose(t, p)`
/// where `p` is the probability of the positive action.
fn decode(params: &PolicyParams, doc: &PreparedDoc, budget: usize, mut choose: impl FnMut(f64) -> bool) -> Rollout {
    let mut decisions = Vec::with_capacity(doc.sentences.len() + 1);
    let mut forced = Vec::with_capacity(doc.sentences.len() + 1);
    let gate = sigmoid(token_logit(params, doc, 0));
    if !choose(gate) {
        decisions.push(Decision::Reject);
        forced.push(false);
    } else {
        decisions.push(Decision::Continue);
        forced.push(false);
        let mut included = 0;
        for t in 1..=doc.sentences.len() {
            if included >= budget {
                decisions.push(Decision::Skip);
                forced.push(true);
                continue;
            }
            let p = sigmoid(token_logit(params, doc, t));
            if choose(p) {
                decisions.push(Decision::Include);
                included += 1;
            } else {
                decisions.push(Decision::Skip);
            }
            forced.push(false);
        }
    }
    let log_probs = token_log_probs(params, doc, &decisions, &forced);
    let text = render_text(doc, &decisions);
    Rollout {
        doc_id: doc.doc_id.clone(),
        decisions,
        forced,
        log_probs,
        text,
    }
}

/// Counts policy decodes (one per rollout or greedy summary).
#[derive(Debug, Default)]
pub struct DecodeCounter(AtomicUsize);

impl DecodeCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    fn add(&self, n: usize) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

/// Deterministic decode: every free token takes its more likely action
/// (ties go to CONTINUE / INCLUDE).
pub fn greedy_decode(params: &PolicyParams, doc: &PreparedDoc, budget: usize, counter: Option<&DecodeCounter>) -> Rollout {
    if let Some(c) = counter {
        c.add(1);
    }
    decode(params, doc, budget, |p| p >= 0.5)
}

pub fn sample_rollout(params: &PolicyParams, doc: &PreparedDoc, budget: usize, rng: &mut impl Rng) -> Rollout {
    decode(params, doc, budget, |p| rng.random::<f64>() < p)
}

/// `group_size` independent ancestral samples from one seeded stream. The
/// stored log-probabilities are those of `params`, the sampling policy.
pub fn sample_rollouts(
    params: &PolicyParams,
    doc: &PreparedDoc,
    group_size: usize,
    budget: usize,
    seed: u64,
    counter: Option<&DecodeCounter>,
) -> Vec<Rollout> {
    if let Some(c) = counter {
        c.add(group_size);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..group_size).map(|_| sample_rollout(params, doc, budget, &mut rng)).collect()
}

/// Every decision sequence the policy can emit on `doc`.
pub fn enumerate_sequences(doc: &PreparedDoc, budget: usize) -> Vec<(Vec<Decision>, Vec<bool>)> {
    let mut out = vec![(vec![Decision::Reject], vec![false])];
    let mut stack = vec![(vec![Decision::Continue], vec![false], 0usize)];
    while let Some((d, f, included)) = stack.pop() {
        if d.len() == doc.sentences.len() + 1 {
            out.push((d, f));
            continue;
        }
        if included >= budget {
            let mut d2 = d;
            let mut f2 = f;
            d2.push(Decision::Skip);
            f2.push(true);
            stack.push((d2, f2, included));
            continue;
        }
        for choice in [Decision::Include, Decision::Skip] {
            let mut d2 = d.clone();
            let mut f2 = f.clone();
            d2.push(choice);
            f2.push(false);
            stack.push((d2, f2, included + usize::from(choice == Decision::Include)));
        }
    }
    out
}

/// Summarizer backed by greedy decoding of a fixed policy.
#[derive(Debug, Clone)]
pub struct PolicySummarizer {
    params: Arc<PolicyParams>,
    index: Option<Arc<InvertedIndex>>,
    budget: usize,
    counter: Arc<DecodeCounter>,
}

impl PolicySummarizer {
    pub fn new(params: Arc<PolicyParams>, index: Option<Arc<InvertedIndex>>, budget: usize) -> Self {
        Self {
            params,
            index,
            budget,
            counter: Arc::new(DecodeCounter::new()),
        }
    }

    pub fn decodes(&self) -> usize {
        self.counter.get()
    }
}

impl Summarizer for PolicySummarizer {
    fn name(&self) -> String {
        format!("policy-b{}", self.budget)
    }

    fn summarize(&self, query: &Query, doc: &Document) -> Result<String> {
        let prepared = PreparedDoc::new(query, doc, self.index.as_deref());
        Ok(greedy_decode(&self.params, &prepared, self.budget, Some(&self.counter)).text)
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summarize::detect_safeguard;
    use proptest::prelude::*;

    fn doc(n_sent: usize) -> PreparedDoc {
        let body: Vec<String> = (0..n_sent).map(|i| format!("Sentence number {i} mentions tide {i}.")).collect();
        PreparedDoc::new(&Query::new("q", "tide tables"), &Document::new("d", "", body.join(" ")), None)
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let d = doc(2);
        let p = PolicyParams::zeros();
        let decisions = [Decision::Continue, Decision::Include, Decision::Skip];
        let lp = sequence_log_prob(&p, &d, &decisions, &[false; 3]);
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reject_is_complement_of_gate() {
        let d = doc(2);
        let p = PolicyParams {
            gate_weights: vec![0.3, -1.2, 0.7],
            include_weights: vec![0.0; SENTENCE_DIM],
        };
        let lp = sequence_log_prob(&p, &d, &[Decision::Reject], &[false]);
        assert!((lp.exp() - (1.0 - sigmoid(token_logit(&p, &d, 0)))).abs() < 1e-12);
    }

    #[test]
    fn enumeration_counts() {
        // 1 reject + 2^2 include patterns
        assert_eq!(enumerate_sequences(&doc(2), 3).len(), 5);
        // budget 1 on 3 sentences: I--, SI-, SSI, SSS plus reject
        assert_eq!(enumerate_sequences(&doc(3), 1).len(), 5);
    }

    proptest! {
        #[test]
        fn enumerated_probabilities_sum_to_one(
            w in prop::collection::vec(-4.0f64..4.0, GATE_DIM + SENTENCE_DIM),
            n in 0usize..=3,
            budget in 1usize..4,
        ) {
            let p = PolicyParams::from_flat(&w);
            let d = doc(n);
            let total: f64 = enumerate_sequences(&d, budget)
                .iter()
                .map(|(dec, f)| sequence_log_prob(&p, &d, dec, f).exp())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rollout_text_is_extractive(w in prop::collection::vec(-3.0f64..3.0, GATE_DIM + SENTENCE_DIM), seed in any::<u64>()) {
            let p = PolicyParams::from_flat(&w);
            let d = doc(6);
            for r in sample_rollouts(&p, &d, 4, 3, seed, None) {
                if r.is_reject() {
                    prop_assert_eq!(r.decisions.len(), 1);
                    prop_assert!(detect_safeguard(&r.text));
                    continue;
                }
                prop_assert_eq!(r.decisions.len(), d.sentences.len() + 1);
                let picked: Vec<&String> = d.sentences.iter().zip(&r.decisions[1..]).filter(|(_, x)| **x == Decision::Include).map(|(s, _)| s).collect();
                prop_assert!(picked.len() <= 3);
                let joined = picked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
                prop_assert_eq!(&r.text, &joined);
                prop_assert!(r.log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let d = doc(5);
        let p = PolicyParams::zeros();
        let counter = DecodeCounter::new();
        let a = sample_rollouts(&p, &d, 8, 3, 11, Some(&counter));
        let b = sample_rollouts(&p, &d, 8, 3, 11, Some(&counter));
        assert_eq!(a, b);
        assert_eq!(counter.get(), 16);
    }

    #[test]
    fn saturated_negative_gate_always_rejects() {
        let d = doc(4);
        let p = PolicyParams {
            gate_weights: vec![-60.0, 0.0, 0.0],
            include_weights: vec![0.0; SENTENCE_DIM],
        };
        assert!(sample_rollouts(&p, &d, 64, 3, 5, None).iter().all(Rollout::is_reject));
    }

    #[test]
    fn budget_forces_skips() {
        let d = doc(6);
        let p = PolicyParams {
            gate_weights: vec![5.0, 0.0, 0.0],
            include_weights: vec![5.0, 0.0, 0.0, 0.0, 0.0],
        };
        let r = greedy_decode(&p, &d, 2, None);
        assert_eq!(&r.decisions[1..3], &[Decision::Include, Decision::Include]);
        assert!(r.forced[3..].iter().all(|f| *f));
        assert_eq!(r.free_tokens(), 3);
        assert_eq!(r.text, format!("{} {}", d.sentences[0], d.sentences[1]));
    }

    #[test]
    fn greedy_is_deterministic_through_summarizer() {
        let s = PolicySummarizer::new(Arc::new(PolicyParams::zeros()), None, 3);
        let q = Query::new("q", "tide");
        let d = Document::new("d", "", "The tide is high today. Boats wait in the harbor.");
        assert_eq!(s.summarize(&q, &d).unwrap(), s.summarize(&q, &d).unwrap());
        assert_eq!(s.decodes(), 2);
    }

    #[test]
    fn flat_round_trip() {
        let p = PolicyParams::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(p.gate_weights, vec![1.0, 2.0, 3.0]);
        assert_eq!(PolicyParams::from_flat(&p.to_flat()), p);
        p.validate().unwrap();
    }
}
