//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use strank_core::corpus::Corpus;
use strank_core::retrieval::InvertedIndex;
use strank_core::synthetic::{generate, SyntheticConfig, SyntheticDataset};

pub struct Fixture {
    pub data: SyntheticDataset,
    pub corpus: Corpus,
    pub index: Arc<InvertedIndex>,
}

pub fn fixture() -> Fixture {
    let data = generate(&SyntheticConfig::default());
    let corpus = Corpus::from_documents(data.documents.clone()).expect("unique ids");
    let index = Arc::new(InvertedIndex::build(&data.documents).expect("non-empty corpus"));
    Fixture { data, corpus, index }
}
