//! Pair scorers (cross-encoder role) and sentence embedders (bi-encoder role).
//!
//! Two families live here: [`SyntheticOracle`], a deterministic in-process
//! stand-in used by tests and the synthetic lab, and [`RemoteClient`], which
//! speaks the JSON protocol of an external model service:
//!
//! * `POST /score` `{"pairs": [[s1, s2], ...]}` → `{"scores": [x, ...]}`
//! * `POST /embed` `{"sentences": [s, ...]}` → `{"embeddings": [[...], ...]}`
//! * `GET /health` → `{"status": "ok", "embedding_dim": d}`

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedsearch::cosine;
use crate::textindex::tokenize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("batch {batch}: transport error: {message}")]
    Transport { batch: usize, message: String },
    #[error("batch {batch}: HTTP {status}: {body}")]
    Http {
        batch: usize,
        status: u16,
        body: String,
    },
    #[error("batch {batch}: protocol violation: {message}")]
    Protocol { batch: usize, message: String },
    #[error("invalid scorer configuration: {0}")]
    Config(String),
}

impl ScorerError {
    pub fn batch(&self) -> Option<usize> {
        match self {
            ScorerError::Transport { batch, .. }
            | ScorerError::Http { batch, .. }
            | ScorerError::Protocol { batch, .. } => Some(*batch),
            ScorerError::Config(_) => None,
        }
    }

    pub(crate) fn with_batch(self, offset: usize) -> Self {
        match self {
            ScorerError::Transport { batch, message } => ScorerError::Transport {
                batch: batch + offset,
                message,
            },
            ScorerError::Http {
                batch,
                status,
                body,
            } => ScorerError::Http {
                batch: batch + offset,
                status,
                body,
            },
            ScorerError::Protocol { batch, message } => ScorerError::Protocol {
                batch: batch + offset,
                message,
            },
            other => other,
        }
    }
}

/// Scores sentence pairs into `[0, 1]`, one output per input, in order.
pub trait PairScorer: Send + Sync {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

/// Maps sentences to fixed-dimension vectors.
pub trait SentenceEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_batch(&self, sentences: &[&str]) -> Result<Vec<Vec<f64>>, ScorerError>;
}

/// Checks the scorer output contract for one batch.
pub fn check_scores(batch: usize, expected: usize, scores: &[f64]) -> Result<(), ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::Protocol {
            batch,
            message: format!("expected {expected} scores, got {}", scores.len()),
        });
    }
    if let Some(bad) = scores
        .iter()
        .find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s))
    {
        return Err(ScorerError::Protocol {
            batch,
            message: format!("score {bad} outside [0, 1]"),
        });
    }
    Ok(())
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded Gaussian vector keyed by a string.
pub(crate) fn hashed_gaussian(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(key.as_bytes())));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Maps surface tokens to concept keys, so synonyms share a latent vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    concepts: HashMap<String, String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: impl Into<String>, concept: impl Into<String>) {
        self.concepts.insert(surface.into(), concept.into());
    }

    /// Concept key for `token`; unknown tokens are their own concept.
    pub fn concept<'a>(&'a self, token: &'a str) -> &'a str {
        self.concepts
            .get(token)
            .map(String::as_str)
            .unwrap_or(token)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Deterministic desk-scale cross-encoder.
///
/// Every token owns a seeded Gaussian vector (looked up through the optional
/// [`Lexicon`], so synonyms share one); a sentence's latent is the sum over
/// its tokens, which makes lexically overlapping sentences correlated. The
/// noiseless similarity is `((cos + 1) / 2)^sharpness`; with the default
/// sharpness of 1 this is the plain affine rescale of cosine into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pub seed: u64,
    pub latent_dim: usize,
    pub noise: f64,
    pub sharpness: f64,
    lexicon: Option<Arc<Lexicon>>,
}

impl SyntheticOracle {
    pub fn new(seed: u64, latent_dim: usize, noise: f64) -> Result<Self, ScorerError> {
        Self::with_sharpness(seed, latent_dim, noise, 1.0)
    }

    pub fn with_sharpness(
        seed: u64,
        latent_dim: usize,
        noise: f64,
        sharpness: f64,
    ) -> Result<Self, ScorerError> {
        if latent_dim == 0 {
            return Err(ScorerError::Config("latent_dim must be >= 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(ScorerError::Config(format!(
                "noise must be >= 0, got {noise}"
            )));
        }
        if !(sharpness >= 1.0 && sharpness.is_finite()) {
            return Err(ScorerError::Config(format!(
                "sharpness must be >= 1, got {sharpness}"
            )));
        }
        Ok(Self {
            seed,
            latent_dim,
            noise,
            sharpness,
            lexicon: None,
        })
    }

    pub fn with_lexicon(mut self, lexicon: Arc<Lexicon>) -> Self {
        self.lexicon = Some(lexicon);
        self
    }

    /// Same latents and noise stream, different noise level.
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise.max(0.0);
        self
    }

    pub fn lexicon(&self) -> Option<&Lexicon> {
        self.lexicon.as_deref()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        hashed_gaussian(self.seed, token, self.latent_dim)
    }

    pub fn latent(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut v = vec![0.0; self.latent_dim];
        if tokens.is_empty() {
            // punctuation-only text: key on the raw string instead
            return self.token_vector(text.trim());
        }
        for t in &tokens {
            let key = self.lexicon.as_deref().map_or(t.as_str(), |l| l.concept(t));
            for (acc, x) in v.iter_mut().zip(self.token_vector(key)) {
                *acc += x;
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            return self.token_vector(text.trim());
        }
        v
    }

    /// Similarity of two latent vectors under this oracle's rescale map.
    pub fn similarity_of_latents(&self, u: &[f64], v: &[f64]) -> f64 {
        let c = cosine(u, v).expect("latents are nonzero and share a dimension");
        ((c + 1.0) / 2.0).powf(self.sharpness).clamp(0.0, 1.0)
    }

    pub fn true_similarity(&self, a: &str, b: &str) -> f64 {
        self.similarity_of_latents(&self.latent(a), &self.latent(b))
    }

    /// Noisy score; the noise draw is keyed on the unordered text pair.
    pub fn score(&self, a: &str, b: &str) -> f64 {
        let clean = self.true_similarity(a, b);
        if self.noise == 0.0 {
            return clean;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let key = splitmix64(fnv1a(lo.as_bytes())) ^ fnv1a(hi.as_bytes()).rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ key ^ 0x5eed));
        let z: f64 = StandardNormal.sample(&mut rng);
        (clean + self.noise * z).clamp(0.0, 1.0)
    }
}

impl PairScorer for SyntheticOracle {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(|(a, b)| self.score(a, b)).collect())
    }
}

impl SentenceEmbedder for SyntheticOracle {
    fn dim(&self) -> usize {
        self.latent_dim
    }

    fn embed_batch(&self, sentences: &[&str]) -> Result<Vec<Vec<f64>>, ScorerError> {
        Ok(sentences.iter().map(|s| self.latent(s)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub max_retries: u32,
    pub backoff: Duration,
    pub parallelism: usize,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            batch_size: 32,
            max_retries: 3,
            backoff: Duration::from_millis(200),
            parallelism: 4,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    sentences: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub embedding_dim: usize,
}

/// HTTP client for an external scoring service.
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    dim: Mutex<Option<usize>>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, ScorerError> {
        if config.batch_size == 0 {
            return Err(ScorerError::Config("batch_size must be >= 1".into()));
        }
        if config.parallelism == 0 {
            return Err(ScorerError::Config("parallelism must be >= 1".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(Self {
            config,
            agent,
            dim: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn health(&self) -> Result<Health, ScorerError> {
        let url = format!("{}/health", self.config.endpoint);
        let body = self.with_retries(0, || self.agent.get(&url).call())?;
        let health: Health = serde_json::from_str(&body).map_err(|e| ScorerError::Protocol {
            batch: 0,
            message: format!("malformed /health response: {e}"),
        })?;
        *self.dim.lock().unwrap() = Some(health.embedding_dim);
        Ok(health)
    }

    fn with_retries<F>(&self, batch: usize, send: F) -> Result<String, ScorerError>
    where
        F: Fn() -> Result<ureq::Response, ureq::Error>,
    {
        let mut attempt = 0u32;
        loop {
            let err = match send() {
                Ok(resp) => {
                    return resp.into_string().map_err(|e| ScorerError::Transport {
                        batch,
                        message: e.to_string(),
                    })
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let err = ScorerError::Http {
                        batch,
                        status,
                        body,
                    };
                    if !(status >= 500 || status == 429) {
                        return Err(err);
                    }
                    err
                }
                Err(ureq::Error::Transport(t)) => ScorerError::Transport {
                    batch,
                    message: t.to_string(),
                },
            };
            if attempt >= self.config.max_retries {
                return Err(err);
            }
            thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
            attempt += 1;
        }
    }

    fn score_one_batch(
        &self,
        batch: usize,
        pairs: &[(&str, &str)],
    ) -> Result<Vec<f64>, ScorerError> {
        let url = format!("{}/score", self.config.endpoint);
        let req = ScoreRequest {
            pairs: pairs.iter().map(|(a, b)| [*a, *b]).collect(),
        };
        let payload = serde_json::to_value(&req).expect("request serializes");
        let body = self.with_retries(batch, || self.agent.post(&url).send_json(payload.clone()))?;
        let resp: ScoreResponse =
            serde_json::from_str(&body).map_err(|e| ScorerError::Protocol {
                batch,
                message: format!("malformed /score response: {e}"),
            })?;
        check_scores(batch, pairs.len(), &resp.scores)?;
        Ok(resp.scores)
    }

    fn embed_one_batch(
        &self,
        batch: usize,
        sentences: &[&str],
    ) -> Result<Vec<Vec<f64>>, ScorerError> {
        let url = format!("{}/embed", self.config.endpoint);
        let payload = serde_json::to_value(EmbedRequest { sentences }).expect("request serializes");
        let body = self.with_retries(batch, || self.agent.post(&url).send_json(payload.clone()))?;
        let resp: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| ScorerError::Protocol {
                batch,
                message: format!("malformed /embed response: {e}"),
            })?;
        if resp.embeddings.len() != sentences.len() {
            return Err(ScorerError::Protocol {
                batch,
                message: format!(
                    "expected {} embeddings, got {}",
                    sentences.len(),
                    resp.embeddings.len()
                ),
            });
        }
        let dim = resp.embeddings.first().map(Vec::len).unwrap_or(0);
        for v in &resp.embeddings {
            if v.len() != dim || dim == 0 || v.iter().any(|x| !x.is_finite()) {
                return Err(ScorerError::Protocol {
                    batch,
                    message: "embeddings have inconsistent dimension or non-finite entries".into(),
                });
            }
        }
        Ok(resp.embeddings)
    }

    /// Runs `work` over fixed-size batches with bounded parallelism; the first
    /// error (lowest batch index) aborts the whole call.
    fn run_batched<T, R, F>(&self, items: &[T], work: F) -> Result<Vec<R>, ScorerError>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> Result<Vec<R>, ScorerError> + Sync,
    {
        let chunks: Vec<&[T]> = items.chunks(self.config.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<R>, ScorerError>>>> =
            (0..chunks.len()).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failed = std::sync::atomic::AtomicBool::new(false);
        let workers = self.config.parallelism.min(chunks.len()).max(1);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = work(i, chunks[i]);
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(items.len());
        for slot in results {
            match slot.into_inner().unwrap() {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok(out)
    }
}

impl PairScorer for RemoteClient {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let scores = self.run_batched(pairs, |i, chunk| self.score_one_batch(i, chunk))?;
        check_scores(0, pairs.len(), &scores)?;
        Ok(scores)
    }
}

impl SentenceEmbedder for RemoteClient {
    fn dim(&self) -> usize {
        if let Some(d) = *self.dim.lock().unwrap() {
            return d;
        }
        self.health().map(|h| h.embedding_dim).unwrap_or(0)
    }

    fn embed_batch(&self, sentences: &[&str]) -> Result<Vec<Vec<f64>>, ScorerError> {
        let out = self.run_batched(sentences, |i, chunk| self.embed_one_batch(i, chunk))?;
        if out.len() != sentences.len() {
            return Err(ScorerError::Protocol {
                batch: 0,
                message: "embedding count mismatch".into(),
            });
        }
        Ok(out)
    }
}
