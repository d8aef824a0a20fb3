//! Cold-start behavior cloning from a lexical teacher.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{log_sigmoid, sigmoid};

use super::features::PreparedDoc;
use super::policy::{token_features, Decision, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Teacher includes a sentence iff its overlap share is at least this.
    pub teacher_threshold: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.05,
            teacher_threshold: 0.2,
            budget: 3,
            seed: 7,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("sft learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("sft budget must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher decisions: REJECT when no sentence reaches the threshold,
/// otherwise INCLUDE exactly the qualifying sentences until the budget is spent.
pub fn teacher_decisions(doc: &PreparedDoc, threshold: f64, budget: usize) -> (Vec<Decision>, Vec<bool>) {
    let qualifies = |i: usize| doc.overlap(i) >= threshold;
    if !(0..doc.sentences.len()).any(qualifies) {
        return (vec![Decision::Reject], vec![false]);
    }
    let mut decisions = vec![Decision::Continue];
    let mut forced = vec![false];
    let mut included = 0;
    for i in 0..doc.sentences.len() {
        if included >= budget {
            decisions.push(Decision::Skip);
            forced.push(true);
        } else if qualifies(i) {
            decisions.push(Decision::Include);
            forced.push(false);
            included += 1;
        } else {
            decisions.push(Decision::Skip);
            forced.push(false);
        }
    }
    (decisions, forced)
}

/// Mean negative log-likelihood of `decisions` over free tokens and its gradient.
pub fn sft_loss_grad(params: &PolicyParams, doc: &PreparedDoc, decisions: &[Decision], forced: &[bool]) -> (f64, PolicyParams) {
    let mut loss = 0.0;
    let mut grad = PolicyParams::zeros();
    let mut free = 0usize;
    for (t, (&d, &f)) in decisions.iter().zip(forced).enumerate() {
        if f {
            continue;
        }
        free += 1;
        let (z, x) = token_features(params, doc, t);
        let y = if d.is_positive() { 1.0 } else { 0.0 };
        loss -= if d.is_positive() { log_sigmoid(z) } else { log_sigmoid(-z) };
        let coef = sigmoid(z) - y;
        let g = if t == 0 { &mut grad.gate_weights } else { &mut grad.include_weights };
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += coef * xi;
        }
    }
    if free == 0 {
        return (0.0, grad);
    }
    let n = free as f64;
    let scale = 1.0 / n;
    (loss / n, PolicyParams::zeros().add_scaled(&grad, scale))
}

/// One gradient-descent step on a single document. Returns the loss before
/// the step and the updated parameters.
pub fn sft_step(params: &PolicyParams, doc: &PreparedDoc, cfg: &SftConfig) -> (f64, PolicyParams) {
    let (decisions, forced) = teacher_decisions(doc, cfg.teacher_threshold, cfg.budget);
    let (loss, grad) = sft_loss_grad(params, doc, &decisions, &forced);
    (loss, params.add_scaled(&grad, -cfg.learning_rate))
}

/// Stochastic gradient descent over `docs`, one step per document, visiting
/// them in a seeded order each epoch. Returns the parameters and the mean
/// loss of every epoch.
pub fn train_sft(docs: &[PreparedDoc], init: &PolicyParams, cfg: &SftConfig) -> Result<(PolicyParams, Vec<f64>)> {
    cfg.validate()?;
    init.validate()?;
    let mut params = init.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, next) = sft_step(&params, &docs[i], cfg);
            if !next.is_finite() {
                return Err(Error::NonFiniteGradient {
                    step: epoch * docs.len(),
                    dump: format!("{params:?}"),
                });
            }
            total += loss;
            params = next;
        }
        let mean = if docs.is_empty() { 0.0 } else { total / docs.len() as f64 };
        log::info!("sft epoch {}: mean loss {mean:.6}", epoch + 1);
        losses.push(mean);
    }
    Ok((params, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Query};
    use crate::train::features::{GATE_DIM, SENTENCE_DIM};
    use crate::train::policy::greedy_decode;
    use proptest::prelude::*;

    fn doc(body: &str) -> PreparedDoc {
        PreparedDoc::new(&Query::new("q", "tide tables harbor"), &Document::new("d", "", body), None)
    }

    fn sample_doc() -> PreparedDoc {
        doc("The tide rises twice a day. Gulls circle over the quiet water. \
             Tide tables for the harbor are printed weekly. Nothing else happens here.")
    }

    #[test]
    fn teacher_labels() {
        let d = sample_doc();
        let (dec, forced) = teacher_decisions(&d, 0.2, 3);
        assert_eq!(
            dec,
            vec![Decision::Continue, Decision::Include, Decision::Skip, Decision::Include, Decision::Skip]
        );
        assert!(forced.iter().all(|f| !f));
        let irrelevant = doc("Gulls circle over the quiet water. Nothing else happens here.");
        assert_eq!(teacher_decisions(&irrelevant, 0.2, 3).0, vec![Decision::Reject]);
        // budget 1 forces the rest
        let (_, forced) = teacher_decisions(&d, 0.2, 1);
        assert_eq!(forced, vec![false, false, true, true, true]);
    }

    #[test]
    fn zero_weights_single_token_loss_is_ln2() {
        let d = sample_doc();
        let (loss, _) = sft_loss_grad(&PolicyParams::zeros(), &d, &[Decision::Reject], &[false]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_matching_weights_have_small_loss() {
        let d = sample_doc();
        // gate: continue when max overlap is high; include: overlap above 0.2
        let p = PolicyParams {
            gate_weights: vec![-20.0, 100.0, 0.0],
            include_weights: vec![-20.0, 100.0, 0.0, 0.0, 0.0],
        };
        let (dec, forced) = teacher_decisions(&d, 0.2, 3);
        let (loss, _) = sft_loss_grad(&p, &d, &dec, &forced);
        assert!(loss < 0.01, "loss {loss}");
        assert_eq!(greedy_decode(&p, &d, 3, None).decisions, dec);
    }

    fn fd_check(params: &PolicyParams, d: &PreparedDoc) {
        let (dec, forced) = teacher_decisions(d, 0.2, 3);
        let (_, grad) = sft_loss_grad(params, d, &dec, &forced);
        let flat = params.to_flat();
        let g = grad.to_flat();
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            up[i] += h;
            let mut down = flat.clone();
            down[i] -= h;
            let lu = sft_loss_grad(&PolicyParams::from_flat(&up), d, &dec, &forced).0;
            let ld = sft_loss_grad(&PolicyParams::from_flat(&down), d, &dec, &forced).0;
            let fd = (lu - ld) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() <= tol, "coord {i}: analytic {} fd {fd}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(w in prop::collection::vec(-2.0f64..2.0, GATE_DIM + SENTENCE_DIM)) {
            fd_check(&PolicyParams::from_flat(&w), &sample_doc());
        }
    }

    #[test]
    fn training_reduces_loss_and_is_seeded() {
        let docs = vec![
            sample_doc(),
            doc("Gulls circle over the quiet water. Nothing else happens here."),
            doc("Harbor walls were rebuilt in stone. The harbor tide tables list every tide."),
        ];
        let cfg = SftConfig { epochs: 40, learning_rate: 0.5, ..Default::default() };
        let (p, losses) = train_sft(&docs, &PolicyParams::zeros(), &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let (p2, losses2) = train_sft(&docs, &PolicyParams::zeros(), &cfg).unwrap();
        assert_eq!(p, p2);
        assert_eq!(losses, losses2);
    }
}
