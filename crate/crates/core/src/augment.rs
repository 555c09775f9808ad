//! Silver-data pipeline: sample candidate pairs, label them with a pair
//! scorer, filter toward the gold label distribution, and merge into train.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    pair_universe_size, unique_sentences, unrank_pair, Corpus, DataError, LabeledPair, PairDataset,
    PairRecord, Provenance, Sentence, SentenceId, SentencePair, Split, SplitSelector, TaskKind,
};
use crate::distmatch::{kde_filter, ratio_filter, DistError, RatioSpec};
use crate::embedsearch::{EmbedError, EmbeddingMatrix};
use crate::scorers::{check_scores, PairScorer, ScorerError};
use crate::textindex::{Bm25Index, Bm25Params, IndexError};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("strategy {0} needs a BM25 index")]
    MissingIndex(Strategy),
    #[error("strategy {0} needs an embedding matrix")]
    MissingMatrix(Strategy),
    #[error("{what} has {got} rows but the gold train split has {want} sentences")]
    SizeMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("silver pair ({a}, {b}) also appears in the {split} split")]
    Contamination {
        a: SentenceId,
        b: SentenceId,
        split: Split,
    },
    #[error("silver pair ({a}, {b}) duplicates a gold train pair")]
    GoldOverlap { a: SentenceId, b: SentenceId },
    #[error("no target pairs to adapt to")]
    EmptyTarget,
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Rs,
    Bm25,
    Ss,
    Bm25Ss,
    Kde,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Rs => "rs",
            Strategy::Bm25 => "bm25",
            Strategy::Ss => "ss",
            Strategy::Bm25Ss => "bm25_ss",
            Strategy::Kde => "kde",
        }
    }

    /// Filter matching the strategy for a task kind: the KDE strategy labels
    /// a random pool and distribution-matches it, everything else is kept.
    pub fn default_filter(&self, task: TaskKind, threshold: f64) -> SilverFilter {
        match (self, task) {
            (Strategy::Kde, TaskKind::Regression) => SilverFilter::Kde,
            (Strategy::Kde, TaskKind::Classification) => SilverFilter::Ratio { threshold },
            _ => SilverFilter::None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = AugmentError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rs" => Strategy::Rs,
            "bm25" => Strategy::Bm25,
            "ss" => Strategy::Ss,
            "bm25_ss" | "bm25-ss" | "bm25+ss" => Strategy::Bm25Ss,
            "kde" => Strategy::Kde,
            other => return Err(AugmentError::Config(format!("unknown strategy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub top_k: usize,
    pub rs_pair_budget: usize,
    pub seed: u64,
    /// Skip pairs that already carry a gold train label.
    pub exclude_gold: bool,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, gold_train_size: usize, seed: u64) -> Self {
        Self {
            strategy,
            top_k: 5,
            rs_pair_budget: (20 * gold_train_size).max(1),
            seed,
            exclude_gold: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(AugmentError::Config("top_k must be >= 1".into()));
        }
        if self.rs_pair_budget < 1 {
            return Err(AugmentError::Config("rs_pair_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sentences the pipeline recombines: the unique sentences of gold train,
/// in id order. Index documents and matrix rows follow this order.
pub fn train_sentences(gold: &PairDataset) -> Vec<Sentence> {
    unique_sentences(gold, SplitSelector::TRAIN)
}

pub fn build_bm25_index(sentences: &[Sentence], params: Bm25Params) -> Bm25Index {
    Bm25Index::build(params, sentences.iter().map(|s| s.text.as_str()))
}

fn excluded_pairs(config: &SamplingConfig, gold: &PairDataset) -> HashSet<SentencePair> {
    let mut out: HashSet<SentencePair> = gold.pair_set(Split::Dev);
    out.extend(gold.pair_set(Split::Test));
    if config.exclude_gold {
        out.extend(gold.pair_set(Split::Train));
    }
    out
}

fn random_candidates(
    sentences: &[Sentence],
    excluded: &HashSet<SentencePair>,
    budget: usize,
    seed: u64,
) -> Vec<SentencePair> {
    let n = sentences.len();
    let universe = pair_universe_size(n);
    let pair_at = |idx: u64| {
        let (i, j) = unrank_pair(n, idx);
        SentencePair {
            a: sentences[i].id,
            b: sentences[j].id,
        }
    };
    let in_train = |id: SentenceId| sentences.binary_search_by_key(&id, |s| s.id).is_ok();
    let blocked = excluded
        .iter()
        .filter(|p| in_train(p.a) && in_train(p.b))
        .count() as u64;
    let available = universe - blocked;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<SentencePair>;
    if budget as u64 >= available || (budget as u64) * 2 > available {
        // dense regime: enumerate, then draw a subset
        let all: Vec<SentencePair> = (0..universe)
            .map(pair_at)
            .filter(|p| !excluded.contains(p))
            .collect();
        if budget >= all.len() {
            out = all;
        } else {
            out = rand::seq::index::sample(&mut rng, all.len(), budget)
                .into_iter()
                .map(|i| all[i])
                .collect();
        }
    } else {
        let mut seen = HashSet::with_capacity(budget);
        out = Vec::with_capacity(budget);
        while out.len() < budget {
            let p = pair_at(rng.gen_range(0..universe));
            if !excluded.contains(&p) && seen.insert(p) {
                out.push(p);
            }
        }
    }
    out.sort_unstable();
    out
}

fn union_of_hits(sentences: &[Sentence], hits: Vec<Vec<(usize, f64)>>) -> Vec<SentencePair> {
    let mut set = HashSet::new();
    for (q, row) in hits.into_iter().enumerate() {
        for (doc, _) in row {
            let pair = SentencePair::new(sentences[q].id, sentences[doc].id)
                .expect("top-k excludes the query itself");
            set.insert(pair);
        }
    }
    set.into_iter().collect()
}

pub fn bm25_candidates(
    sentences: &[Sentence],
    index: &Bm25Index,
    k: usize,
) -> Result<Vec<SentencePair>> {
    if index.num_docs() != sentences.len() {
        return Err(AugmentError::SizeMismatch {
            what: "BM25 index",
            got: index.num_docs(),
            want: sentences.len(),
        });
    }
    let hits = (0..sentences.len())
        .into_par_iter()
        .map(|q| index.top_k(q, k))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(union_of_hits(sentences, hits))
}

pub fn ss_candidates(
    sentences: &[Sentence],
    matrix: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<SentencePair>> {
    if matrix.len() != sentences.len() {
        return Err(AugmentError::SizeMismatch {
            what: "embedding matrix",
            got: matrix.len(),
            want: sentences.len(),
        });
    }
    Ok(union_of_hits(sentences, matrix.top_k_all(k)?))
}

/// Candidate pairs over the gold train sentences for the configured strategy.
///
/// Output is canonical, deduplicated and sorted. Dev/test pairs are never
/// proposed; gold train pairs are dropped when `exclude_gold` is set.
pub fn generate_candidates(
    config: &SamplingConfig,
    gold: &PairDataset,
    index: Option<&Bm25Index>,
    matrix: Option<&EmbeddingMatrix>,
) -> Result<Vec<SentencePair>> {
    config.validate()?;
    let sentences = train_sentences(gold);
    let excluded = excluded_pairs(config, gold);
    let mut pairs = match config.strategy {
        Strategy::Rs | Strategy::Kde => {
            return Ok(random_candidates(
                &sentences,
                &excluded,
                config.rs_pair_budget,
                config.seed,
            ))
        }
        Strategy::Bm25 => {
            let index = index.ok_or(AugmentError::MissingIndex(config.strategy))?;
            bm25_candidates(&sentences, index, config.top_k)?
        }
        Strategy::Ss => {
            let matrix = matrix.ok_or(AugmentError::MissingMatrix(config.strategy))?;
            ss_candidates(&sentences, matrix, config.top_k)?
        }
        Strategy::Bm25Ss => {
            let index = index.ok_or(AugmentError::MissingIndex(config.strategy))?;
            let matrix = matrix.ok_or(AugmentError::MissingMatrix(config.strategy))?;
            let mut set: HashSet<SentencePair> = bm25_candidates(&sentences, index, config.top_k)?
                .into_iter()
                .collect();
            set.extend(ss_candidates(&sentences, matrix, config.top_k)?);
            set.into_iter().collect()
        }
    };
    pairs.retain(|p| !excluded.contains(p));
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SilverFilter {
    None,
    Kde,
    Ratio { threshold: f64 },
}

impl SilverFilter {
    /// Filter for a task kind: KDE for regression, ratio matching for classification.
    pub fn for_task(task: TaskKind, threshold: f64) -> Self {
        match task {
            TaskKind::Regression => SilverFilter::Kde,
            TaskKind::Classification => SilverFilter::Ratio { threshold },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sample_ms: f64,
    pub label_ms: f64,
    pub filter_ms: f64,
    pub merge_ms: f64,
}

pub fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilverReport {
    pub strategy: Option<Strategy>,
    pub candidates: usize,
    pub labeled: usize,
    pub retained: usize,
    pub merged_train_size: usize,
    pub timings: StageTimings,
}

impl SilverReport {
    pub fn empty(strategy: Option<Strategy>) -> Self {
        Self {
            strategy,
            candidates: 0,
            labeled: 0,
            retained: 0,
            merged_train_size: 0,
            timings: StageTimings::default(),
        }
    }
}

/// Scores `pairs` in concurrent batches, checking the output contract of each.
pub fn label_pairs(
    corpus: &Corpus,
    pairs: &[SentencePair],
    scorer: &dyn PairScorer,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let batch_size = batch_size.max(1);
    let chunks: Vec<&[SentencePair]> = pairs.chunks(batch_size).collect();
    let scored = chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let texts: Vec<(&str, &str)> = chunk.iter().map(|p| corpus.pair_texts(*p)).collect();
            // scorer batch indices are relative to this chunk
            let scores = scorer.score_batch(&texts).map_err(|e| e.with_batch(i))?;
            check_scores(i, chunk.len(), &scores)?;
            Ok(scores)
        })
        .collect::<std::result::Result<Vec<_>, ScorerError>>()?;
    Ok(scored.into_iter().flatten().collect())
}

/// Applies a silver filter against the gold train split.
pub fn apply_filter(
    filter: SilverFilter,
    labeled: Vec<LabeledPair>,
    gold: &PairDataset,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    if labeled.is_empty() {
        return Ok(labeled);
    }
    Ok(match filter {
        SilverFilter::None => labeled,
        SilverFilter::Kde => {
            let gold_scores: Vec<f64> = gold.train.iter().map(|p| p.score).collect();
            kde_filter(&gold_scores, &labeled, seed)?
        }
        SilverFilter::Ratio { threshold } => {
            let spec = RatioSpec::from_gold(&gold.train)?;
            ratio_filter(spec, &labeled, threshold, seed)?
        }
    })
}

pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Labels every candidate and applies `filter`. Silver pairs follow candidate order.
pub fn build_silver(
    candidates: &[SentencePair],
    scorer: &dyn PairScorer,
    filter: SilverFilter,
    gold: &PairDataset,
    seed: u64,
) -> Result<(Vec<LabeledPair>, SilverReport)> {
    build_silver_batched(candidates, scorer, filter, gold, seed, DEFAULT_BATCH_SIZE)
}

pub fn build_silver_batched(
    candidates: &[SentencePair],
    scorer: &dyn PairScorer,
    filter: SilverFilter,
    gold: &PairDataset,
    seed: u64,
    batch_size: usize,
) -> Result<(Vec<LabeledPair>, SilverReport)> {
    let mut report = SilverReport::empty(None);
    report.candidates = candidates.len();
    let t = Instant::now();
    let scores = label_pairs(&gold.corpus, candidates, scorer, batch_size)?;
    report.timings.label_ms = millis(t.elapsed());
    let labeled: Vec<LabeledPair> = candidates
        .iter()
        .zip(scores)
        .map(|(p, s)| LabeledPair::silver(*p, s))
        .collect();
    report.labeled = labeled.len();
    let t = Instant::now();
    let kept = apply_filter(filter, labeled, gold, seed)?;
    report.timings.filter_ms = millis(t.elapsed());
    report.retained = kept.len();
    Ok((kept, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldOverlap {
    /// Silver pairs already labeled in gold train are dropped.
    #[default]
    Drop,
    /// Silver pairs already labeled in gold train are an error.
    Reject,
}

/// `train = gold train ∪ silver`; dev/test are untouched and any silver pair
/// found there is a contamination error.
pub fn merge_gold_silver(
    gold: &PairDataset,
    silver: &[LabeledPair],
    overlap: GoldOverlap,
) -> Result<PairDataset> {
    let dev = gold.pair_set(Split::Dev);
    let test = gold.pair_set(Split::Test);
    let mut train_pairs = gold.pair_set(Split::Train);
    let mut merged = gold.clone();
    merged.train.reserve(silver.len());
    for lp in silver {
        for (split, set) in [(Split::Dev, &dev), (Split::Test, &test)] {
            if set.contains(&lp.pair) {
                return Err(AugmentError::Contamination {
                    a: lp.pair.a,
                    b: lp.pair.b,
                    split,
                });
            }
        }
        if !train_pairs.insert(lp.pair) {
            match overlap {
                GoldOverlap::Drop => continue,
                GoldOverlap::Reject => {
                    return Err(AugmentError::GoldOverlap {
                        a: lp.pair.a,
                        b: lp.pair.b,
                    })
                }
            }
        }
        merged.train.push(LabeledPair {
            provenance: Provenance::Silver,
            ..*lp
        });
    }
    Ok(merged)
}

/// Target-domain task: explicit train pairs (labels unused) plus gold dev/test.
#[derive(Debug, Clone)]
pub struct TargetDomain {
    pub corpus: Corpus,
    pub train_pairs: Vec<SentencePair>,
    pub dev: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl TargetDomain {
    /// Treats a loaded dataset's train split as unlabeled target pairs.
    pub fn from_dataset(dataset: PairDataset) -> Self {
        Self {
            train_pairs: dataset.train.iter().map(|p| p.pair).collect(),
            corpus: dataset.corpus,
            dev: dataset.dev,
            test: dataset.test,
        }
    }
}

/// Which labeled dev split the cross-domain silver dataset carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevSource {
    #[default]
    Source,
    /// Only when target-domain gold dev labels may be used.
    Target,
}

/// Labels the target train pairs with a scorer fitted on the source domain.
pub fn build_cross_domain_silver(
    source: &PairDataset,
    target: &TargetDomain,
    scorer: &dyn PairScorer,
    dev_source: DevSource,
) -> Result<PairDataset> {
    if target.train_pairs.is_empty() {
        return Err(AugmentError::EmptyTarget);
    }
    let scores = label_pairs(
        &target.corpus,
        &target.train_pairs,
        scorer,
        DEFAULT_BATCH_SIZE,
    )?;
    let mut corpus = target.corpus.clone();
    let dev = match dev_source {
        DevSource::Target => target.dev.clone(),
        DevSource::Source => source
            .dev
            .iter()
            .map(|lp| {
                let (a, b) = source.corpus.pair_texts(lp.pair);
                Ok(LabeledPair {
                    pair: corpus.pair(a, b)?,
                    ..*lp
                })
            })
            .collect::<Result<_>>()?,
    };
    let dataset = PairDataset {
        task: source.task,
        corpus,
        train: target
            .train_pairs
            .iter()
            .zip(scores)
            .map(|(p, s)| LabeledPair::silver(*p, s))
            .collect(),
        dev,
        test: target.test.clone(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Silver JSONL records: pair texts, soft label, provenance and strategy.
pub fn silver_records(
    corpus: &Corpus,
    silver: &[LabeledPair],
    strategy: Option<Strategy>,
) -> Vec<PairRecord> {
    silver
        .iter()
        .map(|lp| {
            let (s1, s2) = corpus.pair_texts(lp.pair);
            PairRecord {
                sentence1: s1.to_string(),
                sentence2: s2.to_string(),
                label: Some(lp.score),
                split: None,
                provenance: Some(Provenance::Silver),
                strategy: strategy.map(|s| s.name().to_string()),
            }
        })
        .collect()
}

pub const STATS_HEADER: &str = "strategy\tcandidates\tlabeled\tretained\tmerged_train";

/// One tab-separated row of silver-set sizes.
pub fn silver_stats(report: &SilverReport) -> String {
    assert!(
        report.retained <= report.labeled && report.labeled <= report.candidates,
        "inconsistent silver report: {report:?}"
    );
    format!(
        "{}\t{}\t{}\t{}\t{}",
        report.strategy.map(|s| s.name()).unwrap_or("-"),
        report.candidates,
        report.labeled,
        report.retained,
        report.merged_train_size
    )
}

/// Header plus one row per report, sorted by strategy name.
pub fn silver_stats_table(reports: &[SilverReport]) -> String {
    let mut sorted: Vec<&SilverReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.strategy.map(|s| s.name()).unwrap_or(""));
    let mut out = String::from(STATS_HEADER);
    for r in sorted {
        out.push('\n');
        out.push_str(&silver_stats(r));
    }
    out
}
