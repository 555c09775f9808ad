//! Silver-data augmentation for sentence-pair tasks.
//!
//! The pipeline recombines the sentences of a small gold dataset into new
//! candidate pairs (random, BM25, semantic search, or both), soft-labels them
//! with a pair scorer, optionally thins the result so its label distribution
//! follows gold, and merges it into the training split. [`lab`] provides a
//! synthetic task family and a toy bi-encoder for end-to-end experiments.

pub mod augment;
pub mod datamodel;
pub mod distmatch;
pub mod embedsearch;
pub mod evalmetrics;
pub mod lab;
pub mod scorers;
pub mod seedharness;
pub mod textindex;

pub use augment::{
    build_cross_domain_silver, build_silver, generate_candidates, merge_gold_silver,
    SamplingConfig, SilverFilter, SilverReport, Strategy,
};
pub use datamodel::{LabeledPair, PairDataset, Sentence, SentenceId, SentencePair, TaskKind};
pub use scorers::{PairScorer, SentenceEmbedder, SyntheticOracle};
