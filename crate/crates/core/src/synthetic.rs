//! Deterministic synthetic long-document collection.
//!
//! Every query is three invented key terms that occur nowhere else in the
//! collection. Each query owns a set of judged documents of 10 to 40
//! sentences built from a filler vocabulary:
//!
//! | kind          | grade | key-term sentences                                        |
//! |---------------|-------|-----------------------------------------------------------|
//! | strong        | 3     | three early sentences with term A, two late full mentions |
//! | medium        | 2     | three early sentences with term A, one late full mention  |
//! | weak          | 1     | three early sentences with term A, one late A+B sentence  |
//! | distractor    | 0     | one sentence each for A, B and C, anywhere                |
//! | off-topic     | 0     | none                                                      |
//!
//! Unjudged background documents built from filler alone complete the corpus.
//! Full mentions sit in the second half of the document, so leading-text
//! truncation misses them.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, write_qrels, write_queries, Document, QrelsTable, Query};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub queries: usize,
    pub heldout: usize,
    pub background_docs: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            queries: 80,
            heldout: 20,
            background_docs: 200,
            filler_vocab: 500,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: QrelsTable,
    pub train: Vec<Query>,
    pub heldout: Vec<Query>,
}

impl SyntheticDataset {
    /// Writes `corpus.jsonl`, `queries.tsv`, `train.tsv`, `heldout.tsv` and `qrels.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_corpus(&self.documents, dir.join("corpus.jsonl"))?;
        write_queries(&self.queries, dir.join("queries.tsv"))?;
        write_queries(&self.train, dir.join("train.tsv"))?;
        write_queries(&self.heldout, dir.join("heldout.tsv"))?;
        write_qrels(&self.qrels, dir.join("qrels.txt"))
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllables() -> Vec<String> {
    let mut out = Vec::new();
    for &c in CONSONANTS {
        for &v in VOWELS {
            out.push(format!("{}{}", c as char, v as char));
        }
    }
    out
}

/// `count` distinct words of `n` syllables.
fn words(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<String> {
    let syl = syllables();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w: String = (0..n).map(|_| syl.choose(rng).unwrap().as_str()).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Writer<'a> {
    filler: &'a [String],
}

impl Writer<'_> {
    fn sentence(&self, rng: &mut ChaCha8Rng, keys: &[&str]) -> String {
        let len = rng.random_range(7..=14);
        let mut toks: Vec<String> = (0..len).map(|_| self.filler.choose(rng).unwrap().clone()).collect();
        for k in keys {
            let at = rng.random_range(0..=toks.len());
            toks.insert(at, (*k).to_string());
        }
        let mut s = toks.join(" ");
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s.push('.');
        s
    }

    fn title(&self, rng: &mut ChaCha8Rng) -> String {
        let mut toks: Vec<String> = (0..rng.random_range(3..=5)).map(|_| self.filler.choose(rng).unwrap().clone()).collect();
        toks[0][0..1].make_ascii_uppercase();
        format!("{}.", toks.join(" "))
    }

    /// A document of `len` sentences with key sentences at fixed positions.
    fn document(&self, rng: &mut ChaCha8Rng, len: usize, planted: &[(usize, Vec<&str>)]) -> (String, String) {
        let body: Vec<String> = (0..len)
            .map(|i| match planted.iter().find(|(p, _)| *p == i) {
                Some((_, keys)) => self.sentence(rng, keys),
                None => self.sentence(rng, &[]),
            })
            .collect();
        (self.title(rng), body.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Strong,
    Medium,
    Weak,
    Distractor,
    OffTopic,
}

impl Kind {
    fn grade(self) -> u32 {
        match self {
            Kind::Strong => 3,
            Kind::Medium => 2,
            Kind::Weak => 1,
            Kind::Distractor | Kind::OffTopic => 0,
        }
    }
}

/// Distinct positions: `early` in the first quarter, `late` in the second half.
fn positions(rng: &mut ChaCha8Rng, len: usize, early: usize, late: usize) -> (Vec<usize>, Vec<usize>) {
    let mut e: Vec<usize> = (0..(len / 4).max(early)).collect();
    e.shuffle(rng);
    e.truncate(early);
    e.sort_unstable();
    let mut l: Vec<usize> = (len / 2..len).collect();
    l.shuffle(rng);
    l.truncate(late);
    l.sort_unstable();
    (e, l)
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let filler = words(&mut rng, 2, cfg.filler_vocab.max(10));
    let keys = words(&mut rng, 3, cfg.queries * 3);
    let writer = Writer { filler: &filler };

    // (owner query and kind, title, body)
    type Raw = (Option<(usize, Kind)>, String, String);
    let mut raw: Vec<Raw> = Vec::new();
    let mut queries = Vec::with_capacity(cfg.queries);
    for q in 0..cfg.queries {
        let k = &keys[q * 3..q * 3 + 3];
        let (a, b, c) = (k[0].as_str(), k[1].as_str(), k[2].as_str());
        queries.push(Query::new(format!("q{:03}", q + 1), format!("{a} {b} {c}")));
        let distractors = rng.random_range(4..=6);
        let mut kinds = vec![Kind::Strong, Kind::Strong, Kind::Medium, Kind::Medium, Kind::Weak];
        kinds.extend(std::iter::repeat_n(Kind::Distractor, distractors));
        kinds.extend(std::iter::repeat_n(Kind::OffTopic, 4));
        for kind in kinds {
            let len = rng.random_range(10..=40);
            let planted: Vec<(usize, Vec<&str>)> = match kind {
                Kind::Strong | Kind::Medium | Kind::Weak => {
                    let late = if kind == Kind::Strong { 2 } else { 1 };
                    let (early, late) = positions(&mut rng, len, 3, late);
                    let full = if kind == Kind::Weak { vec![a, b] } else { vec![a, b, c] };
                    early
                        .into_iter()
                        .map(|p| (p, vec![a]))
                        .chain(late.into_iter().map(|p| (p, full.clone())))
                        .collect()
                }
                Kind::Distractor => {
                    let mut spots: Vec<usize> = (0..len).collect();
                    spots.shuffle(&mut rng);
                    spots.into_iter().zip([a, b, c]).map(|(p, t)| (p, vec![t])).collect()
                }
                Kind::OffTopic => Vec::new(),
            };
            let (title, body) = writer.document(&mut rng, len, &planted);
            raw.push((Some((q, kind)), title, body));
        }
    }
    for _ in 0..cfg.background_docs {
        let len = rng.random_range(10..=40);
        let (title, body) = writer.document(&mut rng, len, &[]);
        raw.push((None, title, body));
    }

    // opaque ids, assigned in a shuffled order
    let mut ids: Vec<usize> = (0..raw.len()).collect();
    ids.shuffle(&mut rng);
    let mut qrels = QrelsTable::new();
    let mut documents: Vec<Document> = raw
        .into_iter()
        .zip(ids)
        .map(|((owner, title, body), id)| {
            let doc_id = format!("D{:05}", id + 1);
            if let Some((q, kind)) = owner {
                qrels.insert(&queries[q].query_id, &doc_id, kind.grade());
            }
            Document::new(doc_id, title, body)
        })
        .collect();
    documents.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));

    let mut order = queries.clone();
    order.shuffle(&mut rng);
    let cut = cfg.heldout.min(order.len());
    let mut heldout = order[..cut].to_vec();
    let mut train = order[cut..].to_vec();
    heldout.sort_by(|x, y| x.query_id.cmp(&y.query_id));
    train.sort_by(|x, y| x.query_id.cmp(&y.query_id));
    SyntheticDataset {
        documents,
        queries,
        qrels,
        train,
        heldout,
    }
}
