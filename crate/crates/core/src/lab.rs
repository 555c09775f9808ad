//! Desk-scale synthetic lab.
//!
//! A seeded "world" of topics, concepts and synonyms produces sentence-pair
//! tasks whose ground truth is a [`SyntheticOracle`] that knows the synonyms.
//! A toy bi-encoder (a linear map over frozen hashed token features, trained
//! by gradient descent on squared cosine error) only sees surface tokens, so
//! it has to learn synonymy from labeled pairs. That is the gap silver data
//! is supposed to close.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    build_bm25_index, build_cross_domain_silver, build_silver, generate_candidates,
    merge_gold_silver, train_sentences, AugmentError, DevSource, GoldOverlap, SamplingConfig,
    SilverFilter, Strategy, TargetDomain,
};
use crate::datamodel::{Corpus, LabeledPair, PairDataset, SentenceId, TaskKind};
use crate::distmatch::{kl_between, mass_below};
use crate::embedsearch::cosine;
use crate::evalmetrics::{auc_at, spearman};
use crate::scorers::{
    fnv1a, hashed_gaussian, splitmix64, Lexicon, ScorerError, SentenceEmbedder, SyntheticOracle,
};
use crate::seedharness::Trainable;
use crate::textindex::{tokenize, Bm25Params};

pub type Result<T> = std::result::Result<T, AugmentError>;

fn derive_seed(seed: u64, salt: &str) -> u64 {
    splitmix64(seed ^ fnv1a(salt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub topics: usize,
    pub concepts_per_topic: usize,
    pub synonyms: usize,
    /// Concepts shared by every topic (and every domain).
    pub shared_concepts: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a sentence slot holds a shared concept.
    pub shared_rate: f64,
    /// Sentences per paraphrase cluster.
    pub cluster_size: usize,
    /// Chance that a pair group is two independent sentences instead of a cluster.
    pub unrelated_rate: f64,
    /// Upper bound on the fraction of concepts replaced in a paraphrase pair.
    pub max_edit: f64,
    /// Chance that a kept concept changes surface form.
    pub resurface_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            topics: 3,
            concepts_per_topic: 6,
            synonyms: 3,
            shared_concepts: 6,
            min_len: 5,
            max_len: 8,
            shared_rate: 0.2,
            cluster_size: 3,
            unrelated_rate: 0.0,
            max_edit: 0.5,
            resurface_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
struct Concept {
    forms: Vec<String>,
}

/// Vocabulary of one domain. Topic concepts carry the domain tag; shared
/// concepts do not, so two domains overlap exactly on them.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    concepts: Vec<Concept>,
    topics: Vec<Vec<usize>>,
    shared: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Draft {
    topic: usize,
    slots: Vec<(usize, usize)>,
}

impl World {
    pub fn new(config: WorldConfig, tag: &str) -> Self {
        let mut concepts = Vec::new();
        let mut make = |key: String| {
            let forms = (0..config.synonyms.max(1))
                .map(|f| format!("{key}s{f}"))
                .collect();
            concepts.push(Concept { forms });
            concepts.len() - 1
        };
        let shared: Vec<usize> = (0..config.shared_concepts)
            .map(|c| make(format!("g{c}")))
            .collect();
        let topics: Vec<Vec<usize>> = (0..config.topics.max(1))
            .map(|t| {
                (0..config.concepts_per_topic.max(1))
                    .map(|c| make(format!("{tag}{t}c{c}")))
                    .collect()
            })
            .collect();
        Self {
            config,
            concepts,
            topics,
            shared,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// Surface form to concept key for every word of this world.
    pub fn extend_lexicon(&self, lexicon: &mut Lexicon) {
        for c in &self.concepts {
            for f in &c.forms {
                lexicon.insert(f.clone(), c.forms[0].clone());
            }
        }
    }

    pub fn lexicon(&self) -> Lexicon {
        let mut lex = Lexicon::new();
        self.extend_lexicon(&mut lex);
        lex
    }

    fn draw_concept(&self, topic: usize, rng: &mut ChaCha8Rng, avoid: &[(usize, usize)]) -> usize {
        loop {
            let pool = if !self.shared.is_empty() && rng.gen_bool(self.config.shared_rate) {
                &self.shared
            } else {
                &self.topics[topic]
            };
            let c = pool[rng.gen_range(0..pool.len())];
            if !avoid.iter().any(|s| s.0 == c) || avoid.len() >= self.concepts.len() {
                return c;
            }
        }
    }

    fn form(&self, concept: usize, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.concepts[concept].forms.len())
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> Draft {
        let topic = rng.gen_range(0..self.topics.len());
        let len = rng.gen_range(self.config.min_len..=self.config.max_len.max(self.config.min_len));
        let mut slots = Vec::with_capacity(len);
        for _ in 0..len {
            let c = self.draw_concept(topic, rng, &slots);
            let f = self.form(c, rng);
            slots.push((c, f));
        }
        Draft { topic, slots }
    }

    fn paraphrase(&self, a: &Draft, rng: &mut ChaCha8Rng) -> Draft {
        let len = a.slots.len();
        let max_edits = ((self.config.max_edit * len as f64).round() as usize).min(len);
        let edits = rng.gen_range(0..=max_edits);
        let mut slots = a.slots.clone();
        for &i in rand::seq::index::sample(rng, len, edits)
            .iter()
            .collect::<Vec<_>>()
            .iter()
        {
            let c = self.draw_concept(a.topic, rng, &slots);
            let f = self.form(c, rng);
            slots[i] = (c, f);
        }
        for s in slots.iter_mut() {
            if rng.gen_bool(self.config.resurface_rate) {
                s.1 = self.form(s.0, rng);
            }
        }
        slots.shuffle(rng);
        Draft {
            topic: a.topic,
            slots,
        }
    }

    fn text(&self, d: &Draft) -> String {
        d.slots
            .iter()
            .map(|&(c, f)| self.concepts[c].forms[f].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn random_sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let d = self.sentence(rng);
        self.text(&d)
    }

    /// One group of gold-style pairs. Usually a base sentence and
    /// `cluster_size - 1` partial paraphrases of it, paired with the base
    /// only, so paraphrase-to-paraphrase pairs stay unlabeled; sometimes a
    /// single pair of unrelated sentences. Paired texts always differ.
    pub fn pair_group(&self, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
        loop {
            let a = self.sentence(rng);
            let ta = self.text(&a);
            if rng.gen_bool(self.config.unrelated_rate) {
                let tb = self.random_sentence(rng);
                if ta != tb {
                    return vec![(ta, tb)];
                }
                continue;
            }
            let mut out: Vec<(String, String)> = Vec::new();
            for _ in 1..self.config.cluster_size.max(2) {
                let tb = self.text(&self.paraphrase(&a, rng));
                if tb != ta && out.iter().all(|(_, b)| *b != tb) {
                    out.push((ta.clone(), tb));
                }
            }
            if !out.is_empty() {
                return out;
            }
        }
    }
}

/// Split sizes of a generated task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Draws a labeled task from `world`. Gold labels are the oracle's noiseless
/// similarity plus annotator noise, or that similarity thresholded for
/// classification. Pairs repeat across splits with negligible probability;
/// repeats are redrawn.
pub fn generate_task(
    world: &World,
    oracle: &SyntheticOracle,
    task: TaskKind,
    sizes: TaskSizes,
    annotator_noise: f64,
    positive_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PairDataset> {
    let mut ds = PairDataset::new(task);
    let mut seen = std::collections::HashSet::new();
    for (split, n) in [
        (crate::datamodel::Split::Train, sizes.train),
        (crate::datamodel::Split::Dev, sizes.dev),
        (crate::datamodel::Split::Test, sizes.test),
    ] {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            for (a, b) in world.pair_group(rng) {
                if out.len() == n {
                    break;
                }
                let pair = ds.corpus.pair(&a, &b)?;
                if !seen.insert(pair) {
                    continue;
                }
                let clean = oracle.true_similarity(&a, &b);
                let score = match task {
                    TaskKind::Regression => {
                        let z: f64 = StandardNormal.sample(rng);
                        (clean + annotator_noise * z).clamp(0.0, 1.0)
                    }
                    TaskKind::Classification => {
                        if clean >= positive_threshold {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                out.push(LabeledPair::gold(pair, score));
            }
        }
        *ds.split_mut(split) = out;
    }
    ds.validate()?;
    Ok(ds)
}

/// Frozen random token features: a sentence is the sum of its tokens'
/// hashed Gaussian vectors, scaled by `1/sqrt(dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub seed: u64,
    pub dim: usize,
}

impl FeatureSpace {
    pub fn features(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let scale = 1.0 / (self.dim as f64).sqrt();
        let tokens = tokenize(text);
        let keys: Vec<&str> = if tokens.is_empty() {
            vec![text.trim()]
        } else {
            tokens.iter().map(String::as_str).collect()
        };
        for t in keys {
            for (acc, x) in v.iter_mut().zip(hashed_gaussian(self.seed, t, self.dim)) {
                *acc += x * scale;
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Scale of the seeded perturbation added to the identity at init.
    pub init_noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            embed_dim: 128,
            learning_rate: 1.0,
            steps: 300,
            init_noise: 0.3,
        }
    }
}

/// Linear bi-encoder: `embed(s) = W · features(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBiEncoder {
    space: FeatureSpace,
    embed_dim: usize,
    /// Row-major `embed_dim × feature_dim`.
    weights: Vec<f64>,
}

impl ToyBiEncoder {
    /// `W = I + init_noise · N(0, 1/feature_dim)`, where `I` keeps the first
    /// `embed_dim` features. With a square map the untrained encoder is a
    /// bag-of-tokens model, which already separates unrelated sentences.
    pub fn init(space: FeatureSpace, embed_dim: usize, init_noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "toy-init"));
        let d = space.dim;
        let scale = init_noise / (d as f64).sqrt();
        let mut weights = Vec::with_capacity(embed_dim * d);
        for k in 0..embed_dim {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                weights.push(if k == j { 1.0 } else { 0.0 } + scale * z);
            }
        }
        Self {
            space,
            embed_dim,
            weights,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn project(&self, f: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.space.dim)
            .map(|row| row.iter().zip(f).map(|(w, x)| w * x).sum())
            .collect()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.project(&self.space.features(text))
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        cosine(&self.embed(a), &self.embed(b)).unwrap_or(0.0)
    }

    fn pair_cosines(&self, data: &EncodedPairs) -> Vec<f64> {
        let emb: Vec<Vec<f64>> = data.features.iter().map(|f| self.project(f)).collect();
        data.pairs
            .iter()
            .map(|&(i, j)| cosine(&emb[i], &emb[j]).unwrap_or(0.0))
            .collect()
    }

    /// One full-batch gradient step on mean `(cos(u, v) - y)^2`.
    fn descend(&mut self, data: &EncodedPairs, learning_rate: f64) {
        if data.pairs.is_empty() {
            return;
        }
        let e = self.embed_dim;
        let d = self.space.dim;
        let emb: Vec<Vec<f64>> = data.features.iter().map(|f| self.project(f)).collect();
        let norms: Vec<f64> = emb
            .iter()
            .map(|u| u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut grad_emb = vec![vec![0.0; e]; emb.len()];
        let scale = 2.0 / data.pairs.len() as f64;
        for (&(i, j), &y) in data.pairs.iter().zip(&data.labels) {
            let (u, v) = (&emb[i], &emb[j]);
            let (nu, nv) = (norms[i], norms[j]);
            let c = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
            let r = scale * (c - y);
            for k in 0..e {
                let gu = v[k] / (nu * nv) - c * u[k] / (nu * nu);
                let gv = u[k] / (nu * nv) - c * v[k] / (nv * nv);
                grad_emb[i][k] += r * gu;
                grad_emb[j][k] += r * gv;
            }
        }
        for (g, f) in grad_emb.iter().zip(&data.features) {
            for k in 0..e {
                let step = learning_rate * g[k];
                if step == 0.0 {
                    continue;
                }
                let row = &mut self.weights[k * d..(k + 1) * d];
                for (w, x) in row.iter_mut().zip(f) {
                    *w -= step * x;
                }
            }
        }
    }
}

impl SentenceEmbedder for ToyBiEncoder {
    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn embed_batch(&self, sentences: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ScorerError> {
        Ok(sentences.iter().map(|s| self.embed(s)).collect())
    }
}

/// Labeled pairs with their sentences' features precomputed.
#[derive(Debug, Clone, Default)]
pub struct EncodedPairs {
    features: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    labels: Vec<f64>,
}

impl EncodedPairs {
    pub fn new(space: FeatureSpace, corpus: &Corpus, pairs: &[LabeledPair]) -> Self {
        let mut slot: HashMap<SentenceId, usize> = HashMap::new();
        let mut out = Self::default();
        let mut index = |id: SentenceId, out: &mut Self| {
            *slot.entry(id).or_insert_with(|| {
                out.features.push(space.features(corpus.text(id)));
                out.features.len() - 1
            })
        };
        for lp in pairs {
            let i = index(lp.pair.a, &mut out);
            let j = index(lp.pair.b, &mut out);
            out.pairs.push((i, j));
            out.labels.push(lp.score);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    /// Spearman correlation times 100.
    Spearman,
    /// Normalized partial AUC up to this false-positive rate; labels >= 0.5 are positive.
    Auc(f64),
}

pub fn evaluate(metric: DevMetric, predicted: &[f64], labels: &[f64]) -> f64 {
    match metric {
        DevMetric::Spearman => spearman(predicted, labels)
            .map(|r| 100.0 * r)
            .unwrap_or(0.0),
        DevMetric::Auc(cap) => {
            let gold: Vec<bool> = labels.iter().map(|&y| y >= 0.5).collect();
            auc_at(cap, predicted, &gold).unwrap_or(0.0)
        }
    }
}

/// Trains a [`ToyBiEncoder`] on fixed data; dev evaluation uses `metric`.
pub struct ToyTrainer {
    pub config: ToyConfig,
    pub space: FeatureSpace,
    pub train: EncodedPairs,
    pub dev: EncodedPairs,
    pub metric: DevMetric,
}

impl ToyTrainer {
    pub fn new(
        config: ToyConfig,
        space: FeatureSpace,
        corpus: &Corpus,
        train: &[LabeledPair],
        dev_corpus: &Corpus,
        dev: &[LabeledPair],
        metric: DevMetric,
    ) -> Self {
        Self {
            config,
            space,
            train: EncodedPairs::new(space, corpus, train),
            dev: EncodedPairs::new(space, dev_corpus, dev),
            metric,
        }
    }

    pub fn fit(&self, seed: u64) -> ToyBiEncoder {
        let mut m = self.init(seed);
        for _ in 0..self.config.steps {
            m = self.step(m);
        }
        m
    }
}

impl Trainable for ToyTrainer {
    type State = ToyBiEncoder;

    fn init(&self, seed: u64) -> ToyBiEncoder {
        ToyBiEncoder::init(
            self.space,
            self.config.embed_dim,
            self.config.init_noise,
            seed,
        )
    }

    fn step(&self, mut state: ToyBiEncoder) -> ToyBiEncoder {
        state.descend(&self.train, self.config.learning_rate);
        state
    }

    fn eval_dev(&self, state: &ToyBiEncoder) -> f64 {
        evaluate(
            self.metric,
            &state.pair_cosines(&self.dev),
            &self.dev.labels,
        )
    }

    fn total_steps(&self) -> usize {
        self.config.steps
    }
}

/// Scores a model on labeled pairs of `corpus`.
pub fn evaluate_model(
    model: &ToyBiEncoder,
    corpus: &Corpus,
    pairs: &[LabeledPair],
    metric: DevMetric,
) -> f64 {
    let data = EncodedPairs::new(model.space, corpus, pairs);
    evaluate(metric, &model.pair_cosines(&data), &data.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub latent_dim: usize,
    pub sharpness: f64,
    /// Cross-encoder label noise on the domain it was fitted on.
    pub noise: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            sharpness: 6.0,
            noise: 0.1,
        }
    }
}

fn make_oracle(cfg: &OracleConfig, seed: u64, lexicon: Lexicon) -> Result<SyntheticOracle> {
    Ok(
        SyntheticOracle::with_sharpness(seed, cfg.latent_dim, cfg.noise, cfg.sharpness)?
            .with_lexicon(Arc::new(lexicon)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InDomainConfig {
    pub world: WorldConfig,
    pub oracle: OracleConfig,
    pub toy: ToyConfig,
    pub sizes: TaskSizes,
    pub annotator_noise: f64,
    pub top_k: usize,
    /// Random-sampling pool size as a multiple of the gold train size.
    pub rs_factor: usize,
}

impl Default for InDomainConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            oracle: OracleConfig::default(),
            toy: ToyConfig::default(),
            sizes: TaskSizes {
                train: 100,
                dev: 50,
                test: 400,
            },
            annotator_noise: 0.03,
            top_k: 5,
            rs_factor: 20,
        }
    }
}

/// Silver statistics of one sampling arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub silver: usize,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InDomainRun {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    pub kl_before: f64,
    pub kl_after: f64,
    pub gold_mass_below: f64,
    pub rs_mass_below: f64,
}

impl InDomainRun {
    pub fn test_score(&self, arm: &str) -> Option<f64> {
        self.arms.iter().find(|a| a.arm == arm).map(|a| a.test)
    }
}

pub const LOW_SCORE_CUT: f64 = 0.3;

pub const ARM_GOLD: &str = "gold";
pub const ARM_BM25: &str = "bm25";
pub const ARM_KDE: &str = "kde";
pub const ARM_RS: &str = "rs";

/// Gold task and the three silver sets of one in-domain run, before training.
#[derive(Debug, Clone)]
pub struct InDomainSilver {
    pub gold: PairDataset,
    pub bm25: Vec<LabeledPair>,
    pub rs: Vec<LabeledPair>,
    pub kde: Vec<LabeledPair>,
    pub kl_before: f64,
    pub kl_after: f64,
    pub gold_mass_below: f64,
    pub rs_mass_below: f64,
}

pub fn in_domain_silver(cfg: &InDomainConfig, seed: u64) -> Result<InDomainSilver> {
    let world = World::new(cfg.world.clone(), "d");
    let oracle = make_oracle(&cfg.oracle, derive_seed(seed, "oracle"), world.lexicon())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "task"));
    let gold = generate_task(
        &world,
        &oracle,
        TaskKind::Regression,
        cfg.sizes,
        cfg.annotator_noise,
        0.5,
        &mut rng,
    )?;
    let sample_seed = derive_seed(seed, "sample");
    let filter_seed = derive_seed(seed, "filter");
    let index = build_bm25_index(&train_sentences(&gold), Bm25Params::default());

    let silver_for = |strategy: Strategy, filter: SilverFilter| -> Result<Vec<LabeledPair>> {
        let mut sc = SamplingConfig::new(strategy, gold.train.len(), sample_seed);
        sc.top_k = cfg.top_k;
        sc.rs_pair_budget = cfg.rs_factor * gold.train.len();
        let candidates = generate_candidates(&sc, &gold, Some(&index), None)?;
        let (silver, _) = build_silver(&candidates, &oracle, filter, &gold, filter_seed)?;
        Ok(silver)
    };
    let bm25 = silver_for(Strategy::Bm25, SilverFilter::None)?;
    let rs = silver_for(Strategy::Rs, SilverFilter::None)?;
    let kde = silver_for(Strategy::Kde, SilverFilter::Kde)?;

    let gold_scores: Vec<f64> = gold.train.iter().map(|p| p.score).collect();
    let rs_scores: Vec<f64> = rs.iter().map(|p| p.score).collect();
    let kde_scores: Vec<f64> = kde.iter().map(|p| p.score).collect();
    Ok(InDomainSilver {
        kl_before: kl_between(&gold_scores, &rs_scores)?,
        kl_after: kl_between(&gold_scores, &kde_scores)?,
        gold_mass_below: mass_below(&gold_scores, LOW_SCORE_CUT),
        rs_mass_below: mass_below(&rs_scores, LOW_SCORE_CUT),
        gold,
        bm25,
        rs,
        kde,
    })
}

/// Gold-only training vs. gold plus BM25, KDE-filtered and random silver,
/// all evaluated by test Spearman×100.
pub fn run_in_domain(cfg: &InDomainConfig, seed: u64) -> Result<InDomainRun> {
    let InDomainSilver {
        gold,
        bm25,
        rs,
        kde,
        kl_before,
        kl_after,
        gold_mass_below,
        rs_mass_below,
    } = in_domain_silver(cfg, seed)?;
    let space = FeatureSpace {
        seed: derive_seed(seed, "features"),
        dim: cfg.toy.feature_dim,
    };

    let arms: Vec<(&str, &[LabeledPair])> = vec![
        (ARM_GOLD, &[]),
        (ARM_BM25, &bm25),
        (ARM_KDE, &kde),
        (ARM_RS, &rs),
    ];
    let train_seed = derive_seed(seed, "train");
    let results = arms
        .par_iter()
        .map(|&(arm, silver)| {
            let merged = merge_gold_silver(&gold, silver, GoldOverlap::Drop)?;
            let trainer = ToyTrainer::new(
                cfg.toy,
                space,
                &merged.corpus,
                &merged.train,
                &gold.corpus,
                &gold.dev,
                DevMetric::Spearman,
            );
            let model = trainer.fit(train_seed);
            Ok(ArmResult {
                arm: arm.to_string(),
                silver: merged.train.len() - gold.train.len(),
                test: evaluate_model(&model, &gold.corpus, &gold.test, DevMetric::Spearman),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(InDomainRun {
        seed,
        arms: results,
        kl_before,
        kl_after,
        gold_mass_below,
        rs_mass_below,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossDomainConfig {
    pub world: WorldConfig,
    pub oracle: OracleConfig,
    /// Cross-encoder noise on the target domain it was not fitted on.
    pub target_noise: f64,
    pub toy: ToyConfig,
    pub source: TaskSizes,
    pub target: TaskSizes,
    /// Noiseless similarity at or above which a pair is a duplicate.
    pub positive_threshold: f64,
    pub fpr_cap: f64,
    pub dev_source: DevSource,
}

impl Default for CrossDomainConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            oracle: OracleConfig::default(),
            target_noise: 0.1,
            toy: ToyConfig {
                learning_rate: 3.0,
                ..ToyConfig::default()
            },
            source: TaskSizes {
                train: 300,
                dev: 50,
                test: 50,
            },
            target: TaskSizes {
                train: 300,
                dev: 50,
                test: 400,
            },
            positive_threshold: 0.4,
            fpr_cap: 0.05,
            dev_source: DevSource::Source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainRun {
    pub seed: u64,
    pub source_only: f64,
    pub augsbert: f64,
    pub target_positive_rate: f64,
}

/// Source-gold bi-encoder vs. one trained on target pairs labeled by the
/// source-fitted oracle, both scored by partial AUC on target test.
pub fn run_cross_domain(cfg: &CrossDomainConfig, seed: u64) -> Result<CrossDomainRun> {
    let source_world = World::new(cfg.world.clone(), "s");
    let target_world = World::new(cfg.world.clone(), "t");
    let mut lexicon = source_world.lexicon();
    target_world.extend_lexicon(&mut lexicon);
    let oracle = make_oracle(&cfg.oracle, derive_seed(seed, "oracle"), lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "task"));
    let source = generate_task(
        &source_world,
        &oracle,
        TaskKind::Classification,
        cfg.source,
        0.0,
        cfg.positive_threshold,
        &mut rng,
    )?;
    let target = generate_task(
        &target_world,
        &oracle,
        TaskKind::Classification,
        cfg.target,
        0.0,
        cfg.positive_threshold,
        &mut rng,
    )?;
    let space = FeatureSpace {
        seed: derive_seed(seed, "features"),
        dim: cfg.toy.feature_dim,
    };
    let metric = DevMetric::Auc(cfg.fpr_cap);
    let train_seed = derive_seed(seed, "train");

    let target_oracle = oracle.clone().with_noise(cfg.target_noise);
    let silver = build_cross_domain_silver(
        &source,
        &TargetDomain::from_dataset(target.clone()),
        &target_oracle,
        cfg.dev_source,
    )?;

    let runs: Vec<(&PairDataset, f64)> = [&source, &silver]
        .par_iter()
        .map(|ds| {
            let trainer = ToyTrainer::new(
                cfg.toy, space, &ds.corpus, &ds.train, &ds.corpus, &ds.dev, metric,
            );
            let model = trainer.fit(train_seed);
            (
                *ds,
                evaluate_model(&model, &target.corpus, &target.test, metric),
            )
        })
        .collect();
    let positives = target.test.iter().filter(|p| p.score >= 0.5).count();
    Ok(CrossDomainRun {
        seed,
        source_only: runs[0].1,
        augsbert: runs[1].1,
        target_positive_rate: positives as f64 / target.test.len() as f64,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InDomainSummary {
    pub runs: Vec<InDomainRun>,
    pub median: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainSummary {
    pub runs: Vec<CrossDomainRun>,
    pub median_source_only: f64,
    pub median_augsbert: f64,
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub in_domain: InDomainConfig,
    pub cross_domain: CrossDomainConfig,
    /// Minimum AUC gain that counts as a cross-domain win.
    pub win_margin: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            in_domain: InDomainConfig::default(),
            cross_domain: CrossDomainConfig::default(),
            win_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seeds: Vec<u64>,
    pub in_domain: InDomainSummary,
    pub cross_domain: CrossDomainSummary,
}

pub fn summarize_in_domain(runs: Vec<InDomainRun>) -> InDomainSummary {
    let names: Vec<String> = runs
        .first()
        .map(|r| r.arms.iter().map(|a| a.arm.clone()).collect())
        .unwrap_or_default();
    let median_of = |f: &dyn Fn(&ArmResult) -> f64, arm: &str| {
        let vals: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.arms.iter().find(|a| a.arm == arm).map(f))
            .collect();
        median(&vals)
    };
    let median = names
        .iter()
        .map(|arm| ArmResult {
            arm: arm.clone(),
            silver: median_of(&|a| a.silver as f64, arm).round() as usize,
            test: median_of(&|a| a.test, arm),
        })
        .collect();
    InDomainSummary { runs, median }
}

pub fn summarize_cross_domain(runs: Vec<CrossDomainRun>, win_margin: f64) -> CrossDomainSummary {
    let src: Vec<f64> = runs.iter().map(|r| r.source_only).collect();
    let aug: Vec<f64> = runs.iter().map(|r| r.augsbert).collect();
    CrossDomainSummary {
        median_source_only: median(&src),
        median_augsbert: median(&aug),
        wins: runs
            .iter()
            .filter(|r| r.augsbert - r.source_only >= win_margin)
            .count(),
        runs,
    }
}

/// Runs both experiments for every seed. Deterministic given config and seeds.
pub fn simulate(cfg: &SimulationConfig, seeds: &[u64]) -> Result<SimulationReport> {
    let in_domain = seeds
        .par_iter()
        .map(|&s| run_in_domain(&cfg.in_domain, s))
        .collect::<Result<Vec<_>>>()?;
    let cross = seeds
        .par_iter()
        .map(|&s| run_cross_domain(&cfg.cross_domain, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        seeds: seeds.to_vec(),
        in_domain: summarize_in_domain(in_domain),
        cross_domain: summarize_cross_domain(cross, cfg.win_margin),
    })
}

/// Trainable with a known answer: seed `s` converges to a hidden quality
/// `q_s`, and its dev curve carries noise that decays to zero at the end.
///
/// `dev(t) = q_s · (1 - exp(-rate · t/T)) + noise · (1 - t/T) · z(s, t)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyCurves {
    pub trial: u64,
    pub total: usize,
    pub rate: f64,
    pub noise: f64,
}

impl NoisyCurves {
    pub fn new(trial: u64) -> Self {
        Self {
            trial,
            total: 100,
            rate: 5.0,
            noise: 0.25,
        }
    }

    pub fn quality(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.trial ^ splitmix64(seed)));
        StandardNormal.sample(&mut rng)
    }

    fn jitter(&self, seed: u64, step: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.trial ^ splitmix64(seed)));
        rng.set_stream(1 + step as u64);
        StandardNormal.sample(&mut rng)
    }

    /// Seed with the highest final dev score; ties go to the smallest seed.
    pub fn true_best(&self, seeds: &[u64]) -> Option<u64> {
        let mut best: Option<(u64, f64)> = None;
        for &s in seeds {
            let q = self.quality(s);
            match best {
                Some((bs, bq)) if q < bq || (q == bq && s > bs) => {}
                _ => best = Some((s, q)),
            }
        }
        best.map(|b| b.0)
    }
}

impl Trainable for NoisyCurves {
    type State = (u64, usize);

    fn init(&self, seed: u64) -> (u64, usize) {
        (seed, 0)
    }

    fn step(&self, (seed, t): (u64, usize)) -> (u64, usize) {
        (seed, t + 1)
    }

    fn eval_dev(&self, &(seed, t): &(u64, usize)) -> f64 {
        let frac = t as f64 / self.total as f64;
        let signal = self.quality(seed) * (1.0 - (-self.rate * frac).exp());
        signal + self.noise * (1.0 - frac).max(0.0) * self.jitter(seed, t)
    }

    fn total_steps(&self) -> usize {
        self.total
    }
}
