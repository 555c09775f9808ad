use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use silverforge::augment::{
    self, apply_filter, build_bm25_index, label_pairs, millis, silver_records, train_sentences,
    AugmentError, GoldOverlap, SamplingConfig, SilverFilter, SilverReport, Strategy,
};
use silverforge::datamodel::{
    load_dataset, load_dataset_splits, read_records, save_dataset, write_records, Corpus,
    DataError, DatasetFormat, LabeledPair, PairDataset, PairRecord, Provenance, TaskKind,
    TsvColumns,
};
use silverforge::distmatch::{density_report, kl_between, mass_below, DistError, Histogram};
use silverforge::embedsearch::{load_cache, save_cache, EmbedError, EmbeddingMatrix};
use silverforge::evalmetrics::{
    apply_threshold, auc_at, f1_positive, jaccard_baseline, majority_baseline, spearman,
    threshold_search, EvalResult, MetricError,
};
use silverforge::lab::{self, DevMetric, FeatureSpace, SimulationConfig, ToyConfig, ToyTrainer};
use silverforge::scorers::{
    PairScorer, RemoteClient, RemoteConfig, ScorerError, SentenceEmbedder, SyntheticOracle,
};
use silverforge::seedharness::{
    early_stop_correlation, seed_optimize, SeedError, SeedRunConfig, SeedSource,
};
use silverforge::textindex::{Bm25Params, IndexError};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "silverforge",
    version,
    about = "Silver-data augmentation for sentence-pair tasks"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    tsv: TsvArgs,
    #[command(subcommand)]
    command: Command,
}

/// Column layout for `.tsv` inputs (zero-based).
#[derive(Args, Debug, Clone)]
struct TsvArgs {
    #[arg(long, global = true, default_value_t = 0)]
    col_s1: usize,
    #[arg(long, global = true, default_value_t = 1)]
    col_s2: usize,
    #[arg(long, global = true, default_value_t = 2)]
    col_label: usize,
    /// Skip the first line of `.tsv` inputs.
    #[arg(long, global = true)]
    tsv_header: bool,
}

static TSV_COLUMNS: OnceLock<TsvColumns> = OnceLock::new();

fn format_of(path: &Path) -> DatasetFormat {
    DatasetFormat::detect(path, TSV_COLUMNS.get().copied().unwrap_or_default())
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Propose candidate pairs from the gold train sentences.
    Sample(SampleArgs),
    /// Soft-label candidate pairs with a pair scorer.
    Label(LabelArgs),
    /// Thin silver pairs toward the gold label distribution.
    Filter(FilterArgs),
    /// Merge silver pairs into the gold train split.
    Merge(MergeArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Score histograms of gold and silver files.
    Dist(DistArgs),
    /// Run the synthetic in-domain and cross-domain experiments.
    Simulate(SimulateArgs),
    /// Seed optimization for the toy bi-encoder.
    Seedopt(SeedoptArgs),
    /// sample, label, filter and merge in one go.
    Pipeline(PipelineArgs),
    /// Re-run a recorded command and check its outputs.
    Replay(ReplayArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => TaskKind::Regression,
            TaskArg::Classification => TaskKind::Classification,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StrategyArg {
    Rs,
    Bm25,
    Ss,
    #[value(name = "bm25_ss", alias = "bm25-ss")]
    Bm25Ss,
    Kde,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Rs => Strategy::Rs,
            StrategyArg::Bm25 => Strategy::Bm25,
            StrategyArg::Ss => Strategy::Ss,
            StrategyArg::Bm25Ss => Strategy::Bm25Ss,
            StrategyArg::Kde => Strategy::Kde,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FilterArg {
    None,
    Kde,
    Ratio,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GoldArgs {
    /// Gold dataset (JSONL or TSV). Records with a `split` field go to that split.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
}

impl GoldArgs {
    fn load(&self) -> Result<PairDataset, Failure> {
        let task = self.task.into();
        let ds = if self.dev.is_none() && self.test.is_none() {
            load_dataset(&self.gold, format_of(&self.gold), task)?
        } else {
            load_dataset_splits(
                &self.gold,
                self.dev.as_deref(),
                self.test.as_deref(),
                task,
                TSV_COLUMNS.get().copied().unwrap_or_default(),
            )?
        };
        ds.validate()?;
        Ok(ds)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.gold.clone()];
        v.extend(self.dev.clone());
        v.extend(self.test.clone());
        v
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ScorerArgs {
    /// `synthetic`, or the base URL of a scoring service.
    #[arg(long, env = "SILVERFORGE_SCORER_URL", default_value = "synthetic")]
    scorer: String,
    /// Noise of the synthetic scorer.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Latent dimension of the synthetic scorer.
    #[arg(long, default_value_t = 32)]
    oracle_dim: usize,
    /// Seed of the synthetic scorer.
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
    /// Exponent on the synthetic scorer's rescaled cosine.
    #[arg(long, default_value_t = 1.0)]
    sharpness: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

enum ScorerImpl {
    Synthetic(SyntheticOracle),
    Remote(RemoteClient),
}

impl ScorerImpl {
    fn scorer(&self) -> &dyn PairScorer {
        match self {
            ScorerImpl::Synthetic(s) => s,
            ScorerImpl::Remote(r) => r,
        }
    }

    fn embedder(&self) -> &dyn SentenceEmbedder {
        match self {
            ScorerImpl::Synthetic(s) => s,
            ScorerImpl::Remote(r) => r,
        }
    }
}

impl ScorerArgs {
    fn build(&self) -> Result<ScorerImpl, Failure> {
        if self.scorer == "synthetic" {
            return Ok(ScorerImpl::Synthetic(SyntheticOracle::with_sharpness(
                self.oracle_seed,
                self.oracle_dim,
                self.noise,
                self.sharpness,
            )?));
        }
        if !(self.scorer.starts_with("http://") || self.scorer.starts_with("https://")) {
            return Err(Failure::validation(format!(
                "--scorer must be `synthetic` or an http(s) URL, got {:?}",
                self.scorer
            )));
        }
        let mut cfg = RemoteConfig::new(self.scorer.clone());
        cfg.batch_size = self.batch_size;
        Ok(ScorerImpl::Remote(RemoteClient::new(cfg)?))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    gold: GoldArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bm25")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Emit one candidate file per k, named `<out stem>.k<k>.<ext>`.
    #[arg(long, value_delimiter = ',')]
    sweep_k: Vec<usize>,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// Random-sampling pool size; defaults to 20x the gold train size.
    #[arg(long)]
    rs_budget: Option<usize>,
    /// Also propose pairs already labeled in gold train.
    #[arg(long)]
    include_gold: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding cache for semantic search, rows in train-sentence order.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Write the embeddings computed for semantic search here.
    #[arg(long)]
    save_embeddings: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct LabelArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FilterArgs {
    #[command(flatten)]
    gold: GoldArgs,
    #[arg(long)]
    silver: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to kde for regression and ratio for classification.
    #[arg(long, value_enum)]
    filter: Option<FilterArg>,
    /// Silver score at or above which a pair counts as positive.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct MergeArgs {
    #[command(flatten)]
    gold: GoldArgs,
    #[arg(long)]
    silver: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fail instead of dropping silver pairs already in gold train.
    #[arg(long)]
    reject_overlap: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricArg {
    Spearman,
    F1,
    Auc,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BaselineArg {
    Jaccard,
    Majority,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EvalArgs {
    /// Gold labels.
    #[arg(long)]
    gold: PathBuf,
    /// Predicted scores for the same pairs, in the `label` field.
    #[arg(long, required_unless_present = "baseline")]
    pred: Option<PathBuf>,
    /// Evaluate a baseline instead of a prediction file.
    #[arg(long, value_enum, conflicts_with = "pred")]
    baseline: Option<BaselineArg>,
    /// Training labels for the majority baseline.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    /// Defaults to spearman for regression and f1 for classification.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Fixed decision threshold for f1; searched on the evaluated data otherwise.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    fpr_cap: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DistArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Silver files to compare against gold; repeatable.
    #[arg(long)]
    silver: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Report the mass below this score.
    #[arg(long, default_value_t = 0.3)]
    cut: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    /// First seed; runs use `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    runs: u64,
    /// JSON overrides for the lab configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SeedoptArgs {
    #[command(flatten)]
    gold: GoldArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    num_seeds: usize,
    /// First seed; seeds are `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    fraction: f64,
    /// Also report partial-vs-final rank correlation at these fractions.
    #[arg(long, value_delimiter = ',')]
    correlation: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    feature_dim: usize,
    #[arg(long, default_value_t = 128)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    fpr_cap: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PipelineArgs {
    #[command(flatten)]
    gold: GoldArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bm25")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    #[arg(long)]
    rs_budget: Option<usize>,
    /// Defaults to the strategy's own filter.
    #[arg(long, value_enum)]
    filter: Option<FilterArg>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: "validation",
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self {
            kind: "format",
            message: e.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let kind = if matches!(e, DataError::Io(_)) {
            "io"
        } else {
            "data"
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ScorerError> for Failure {
    fn from(e: ScorerError) -> Self {
        let kind = if matches!(e, ScorerError::Config(_)) {
            "validation"
        } else {
            "scorer"
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Scorer(e) => e.into(),
            AugmentError::Data(e) => e.into(),
            AugmentError::Config(_)
            | AugmentError::MissingIndex(_)
            | AugmentError::MissingMatrix(_)
            | AugmentError::SizeMismatch { .. } => Self::validation(e.to_string()),
            other => Self {
                kind: "data",
                message: other.to_string(),
            },
        }
    }
}

macro_rules! data_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Self { kind: "data", message: e.to_string() }
            }
        }
    )*};
}
data_failure!(DistError, EmbedError, MetricError, IndexError);

impl From<SeedError> for Failure {
    fn from(e: SeedError) -> Self {
        Self::validation(e.to_string())
    }
}

type Outcome = Result<Vec<PathBuf>, Failure>;

/// Everything needed to re-run a command.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    seed: Option<u64>,
    version: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileHash {
    path: PathBuf,
    sha256: String,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn hash_files(paths: &[PathBuf]) -> Result<Vec<FileHash>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            out.extend(hash_files(&entries)?);
        } else {
            out.push(FileHash {
                path: p.clone(),
                sha256: sha256_file(p)?,
            });
        }
    }
    Ok(out)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Failure {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(BufWriter::new(file))
}

fn write_jsonl(path: &Path, records: &[PairRecord]) -> Result<(), Failure> {
    let mut w = create(path)?;
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<PairRecord>, Failure> {
    Ok(read_records(path, format_of(path))?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// Loads labeled silver records into their own corpus.
fn load_silver(path: &Path) -> Result<(Corpus, Vec<LabeledPair>, Vec<PairRecord>), Failure> {
    let records = read_pairs(path)?;
    let mut corpus = Corpus::new();
    let mut pairs = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let score = r.label.ok_or_else(|| Failure {
            kind: "data",
            message: format!("{}: record {} has no label", path.display(), i + 1),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Failure {
                kind: "data",
                message: format!(
                    "{}: record {} has score {score} outside [0, 1]",
                    path.display(),
                    i + 1
                ),
            });
        }
        let pair = corpus.pair(&r.sentence1, &r.sentence2)?;
        pairs.push(LabeledPair::silver(pair, score));
    }
    Ok((corpus, pairs, records))
}

fn sampling_config(
    strategy: StrategyArg,
    gold: &PairDataset,
    top_k: usize,
    rs_budget: Option<usize>,
    include_gold: bool,
    seed: u64,
) -> SamplingConfig {
    let mut cfg = SamplingConfig::new(strategy.into(), gold.train.len(), seed);
    cfg.top_k = top_k;
    if let Some(b) = rs_budget {
        cfg.rs_pair_budget = b;
    }
    cfg.exclude_gold = !include_gold;
    cfg
}

fn embeddings_for(
    gold: &PairDataset,
    cache: Option<&Path>,
    scorer: &ScorerArgs,
) -> Result<EmbeddingMatrix, Failure> {
    if let Some(path) = cache {
        return Ok(load_cache(path)?);
    }
    let sentences = train_sentences(gold);
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let embedder = scorer.build()?;
    let rows = embedder.embedder().embed_batch(&texts)?;
    Ok(EmbeddingMatrix::from_rows(rows)?)
}

fn candidates_for(
    strategy: StrategyArg,
    cfg: &SamplingConfig,
    gold: &PairDataset,
    params: Bm25Params,
    matrix: Option<&EmbeddingMatrix>,
) -> Result<Vec<silverforge::SentencePair>, Failure> {
    let needs_index = matches!(strategy, StrategyArg::Bm25 | StrategyArg::Bm25Ss);
    let index = needs_index.then(|| build_bm25_index(&train_sentences(gold), params));
    Ok(augment::generate_candidates(
        cfg,
        gold,
        index.as_ref(),
        matrix,
    )?)
}

fn candidate_records(
    corpus: &Corpus,
    pairs: &[silverforge::SentencePair],
    strategy: Strategy,
) -> Vec<PairRecord> {
    pairs
        .iter()
        .map(|p| {
            let (a, b) = corpus.pair_texts(*p);
            let mut r = PairRecord::unlabeled(a, b);
            r.strategy = Some(strategy.name().to_string());
            r
        })
        .collect()
}

fn sweep_path(out: &Path, k: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("candidates");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.k{k}.{ext}"),
        None => format!("{stem}.k{k}"),
    };
    out.with_file_name(name)
}

fn cmd_sample(a: &SampleArgs) -> Outcome {
    let gold = a.gold.load()?;
    let params = Bm25Params::new(a.k1, a.b)?;
    let ks: Vec<usize> = if a.sweep_k.is_empty() {
        vec![a.top_k]
    } else {
        a.sweep_k.clone()
    };
    let base = sampling_config(
        a.strategy,
        &gold,
        a.top_k,
        a.rs_budget,
        a.include_gold,
        a.seed,
    );
    for &k in &ks {
        SamplingConfig {
            top_k: k,
            ..base.clone()
        }
        .validate()?;
    }
    let matrix = if matches!(a.strategy, StrategyArg::Ss | StrategyArg::Bm25Ss) {
        let m = embeddings_for(&gold, a.embeddings.as_deref(), &a.scorer)?;
        if let Some(path) = &a.save_embeddings {
            let mut w = create(path)?;
            save_cache(&mut w, &m)?;
            w.flush()?;
        }
        Some(m)
    } else {
        None
    };
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for &k in &ks {
        let cfg = SamplingConfig {
            top_k: k,
            ..base.clone()
        };
        let pairs = candidates_for(a.strategy, &cfg, &gold, params, matrix.as_ref())?;
        let path = if a.sweep_k.is_empty() {
            a.out.clone()
        } else {
            sweep_path(&a.out, k)
        };
        write_jsonl(
            &path,
            &candidate_records(&gold.corpus, &pairs, cfg.strategy),
        )?;
        summary.push(serde_json::json!({"top_k": k, "candidates": pairs.len(), "path": path}));
        outputs.push(path);
    }
    if !a.sweep_k.is_empty() {
        write_json(&a.out, &summary)?;
        outputs.push(a.out.clone());
    }
    outputs.extend(a.save_embeddings.clone());
    println!("{}", serde_json::to_string(&summary)?);
    Ok(outputs)
}

fn cmd_label(a: &LabelArgs) -> Outcome {
    let records = read_pairs(&a.candidates)?;
    let mut corpus = Corpus::new();
    let pairs = records
        .iter()
        .map(|r| corpus.pair(&r.sentence1, &r.sentence2))
        .collect::<Result<Vec<_>, _>>()?;
    let scorer = a.scorer.build()?;
    let t = Instant::now();
    let scores = label_pairs(&corpus, &pairs, scorer.scorer(), a.scorer.batch_size)?;
    let out: Vec<PairRecord> = records
        .into_iter()
        .zip(&scores)
        .map(|(r, &s)| PairRecord {
            label: Some(s),
            provenance: Some(Provenance::Silver),
            split: None,
            ..r
        })
        .collect();
    write_jsonl(&a.out, &out)?;
    eprintln!(
        "{}",
        serde_json::json!({"labeled": out.len(), "label_ms": millis(t.elapsed())})
    );
    Ok(vec![a.out.clone()])
}

fn resolve_filter(
    filter: Option<FilterArg>,
    default: SilverFilter,
    threshold: f64,
) -> SilverFilter {
    match filter {
        None => default,
        Some(FilterArg::None) => SilverFilter::None,
        Some(FilterArg::Kde) => SilverFilter::Kde,
        Some(FilterArg::Ratio) => SilverFilter::Ratio { threshold },
    }
}

fn check_threshold(t: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Failure::validation(format!(
            "--threshold must lie in [0, 1], got {t}"
        )))
    }
}

fn cmd_filter(a: &FilterArgs) -> Outcome {
    check_threshold(a.threshold)?;
    let gold = a.gold.load()?;
    let (_, silver, records) = load_silver(&a.silver)?;
    let filter = resolve_filter(
        a.filter,
        SilverFilter::for_task(gold.task, a.threshold),
        a.threshold,
    );
    // remember each pair's record through the filter
    let tagged: Vec<LabeledPair> = silver.clone();
    let index: std::collections::HashMap<_, usize> = tagged
        .iter()
        .enumerate()
        .map(|(i, lp)| (lp.pair, i))
        .collect();
    let kept = apply_filter(filter, tagged, &gold, a.seed)?;
    let out: Vec<PairRecord> = kept
        .iter()
        .map(|lp| records[index[&lp.pair]].clone())
        .collect();
    write_jsonl(&a.out, &out)?;
    let gold_scores: Vec<f64> = gold.train.iter().map(|p| p.score).collect();
    let before: Vec<f64> = silver.iter().map(|p| p.score).collect();
    let after: Vec<f64> = kept.iter().map(|p| p.score).collect();
    let mut stats = serde_json::json!({"labeled": silver.len(), "retained": kept.len()});
    if gold.task == TaskKind::Regression {
        stats["kl_before"] = kl_between(&gold_scores, &before).ok().into();
        stats["kl_after"] = kl_between(&gold_scores, &after).ok().into();
    }
    println!("{stats}");
    Ok(vec![a.out.clone()])
}

fn cmd_merge(a: &MergeArgs) -> Outcome {
    let gold = a.gold.load()?;
    let (scorpus, silver, _) = load_silver(&a.silver)?;
    let mut merged_base = gold.clone();
    let silver: Vec<LabeledPair> = silver
        .iter()
        .map(|lp| {
            let (s1, s2) = scorpus.pair_texts(lp.pair);
            let pair = merged_base.corpus.pair(s1, s2)?;
            Ok(LabeledPair::silver(pair, lp.score))
        })
        .collect::<Result<_, DataError>>()?;
    let overlap = if a.reject_overlap {
        GoldOverlap::Reject
    } else {
        GoldOverlap::Drop
    };
    let merged = augment::merge_gold_silver(&merged_base, &silver, overlap)?;
    let mut w = create(&a.out)?;
    save_dataset(&mut w, &merged)?;
    w.flush()?;
    merged_base.train.clear();
    println!(
        "{}",
        serde_json::json!({"gold_train": gold.train.len(), "silver": silver.len(), "merged_train": merged.train.len()})
    );
    Ok(vec![a.out.clone()])
}

fn gold_pairs(path: &Path) -> Result<Vec<(String, String, f64)>, Failure> {
    read_pairs(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r.label.ok_or_else(|| Failure {
                kind: "data",
                message: format!("{}: record {} has no label", path.display(), i + 1),
            })?;
            Ok((r.sentence1, r.sentence2, label))
        })
        .collect()
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    let (a, b) = (
        silverforge::datamodel::normalize_text(a),
        silverforge::datamodel::normalize_text(b),
    );
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    let gold = gold_pairs(&a.gold)?;
    let labels: Vec<f64> = gold.iter().map(|g| g.2).collect();
    let task: TaskKind = a.task.into();
    let metric = a.metric.unwrap_or(match task {
        TaskKind::Regression => MetricArg::Spearman,
        TaskKind::Classification => MetricArg::F1,
    });
    let binary: Vec<bool> = labels.iter().map(|&y| y >= 0.5).collect();

    let result = if let Some(BaselineArg::Majority) = a.baseline {
        let train = a
            .train
            .as_ref()
            .ok_or_else(|| Failure::validation("--baseline majority needs --train"))?;
        let train_labels: Vec<bool> = gold_pairs(train)?.iter().map(|g| g.2 >= 0.5).collect();
        let m = majority_baseline(&train_labels)?;
        EvalResult {
            metric: "f1".into(),
            value: f1_positive(&m.predict(binary.len()), &binary)?,
            threshold: None,
        }
    } else {
        let pred: Vec<f64> = match (&a.pred, a.baseline) {
            (Some(path), _) => {
                let by_key: std::collections::HashMap<(String, String), f64> = gold_pairs(path)?
                    .into_iter()
                    .map(|(s1, s2, y)| (pair_key(&s1, &s2), y))
                    .collect();
                gold.iter()
                    .map(|(s1, s2, _)| {
                        by_key
                            .get(&pair_key(s1, s2))
                            .copied()
                            .ok_or_else(|| Failure {
                                kind: "data",
                                message: format!("no prediction for pair ({s1:?}, {s2:?})"),
                            })
                    })
                    .collect::<Result<_, _>>()?
            }
            (None, _) => gold
                .iter()
                .map(|(s1, s2, _)| jaccard_baseline(s1, s2))
                .collect(),
        };
        match metric {
            MetricArg::Spearman => EvalResult {
                metric: "spearman".into(),
                value: spearman(&pred, &labels)?,
                threshold: None,
            },
            MetricArg::F1 => {
                let (threshold, value) = match a.threshold {
                    Some(t) => (t, f1_positive(&apply_threshold(&pred, t), &binary)?),
                    None => threshold_search(&pred, &binary)?,
                };
                EvalResult {
                    metric: "f1".into(),
                    value,
                    threshold: Some(threshold),
                }
            }
            MetricArg::Auc => EvalResult {
                metric: format!("auc@{}", a.fpr_cap),
                value: auc_at(a.fpr_cap, &pred, &binary)?,
                threshold: None,
            },
        }
    };
    let text = serde_json::to_string(&result)?;
    println!("{text}");
    match &a.out {
        Some(path) => {
            write_json(path, &result)?;
            Ok(vec![path.clone()])
        }
        None => Ok(vec![]),
    }
}

fn scores_of(path: &Path) -> Result<Vec<f64>, Failure> {
    Ok(gold_pairs(path)?.into_iter().map(|g| g.2).collect())
}

fn cmd_dist(a: &DistArgs) -> Outcome {
    if a.bins == 0 {
        return Err(Failure::validation("--bins must be >= 1"));
    }
    let gold = scores_of(&a.gold)?;
    let mut series: Vec<(String, Vec<f64>)> = vec![("gold".into(), gold.clone())];
    for p in &a.silver {
        series.push((p.display().to_string(), scores_of(p)?));
    }
    let hists: Vec<Histogram> = series
        .iter()
        .map(|(_, s)| density_report(s, a.bins))
        .collect();
    let mut w = create(&a.out)?;
    write!(w, "bin_lo\tbin_hi")?;
    for (name, _) in &series {
        write!(w, "\t{name}")?;
    }
    writeln!(w)?;
    for b in 0..a.bins {
        write!(w, "{:.4}\t{:.4}", hists[0].bins[b].lo, hists[0].bins[b].hi)?;
        for h in &hists {
            write!(w, "\t{:.6}", h.bins[b].density)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    let summary: Vec<serde_json::Value> = series
        .iter()
        .enumerate()
        .map(|(i, (name, s))| {
            serde_json::json!({
                "series": name,
                "count": s.len(),
                "mass_below": mass_below(s, a.cut),
                "kl_from_gold": if i == 0 { None } else { kl_between(&gold, s).ok() },
            })
        })
        .collect();
    println!("{}", serde_json::to_string(&summary)?);
    Ok(vec![a.out.clone()])
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    if a.runs == 0 {
        return Err(Failure::validation("--runs must be >= 1"));
    }
    let cfg: SimulationConfig = match &a.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => SimulationConfig::default(),
    };
    let seeds: Vec<u64> = (0..a.runs).map(|i| a.seed.wrapping_add(i)).collect();
    let report = lab::simulate(&cfg, &seeds)?;
    write_json(
        &a.out,
        &serde_json::json!({"config": cfg, "report": report}),
    )?;
    let med = &report.in_domain.median;
    println!(
        "{}",
        serde_json::json!({
            "in_domain_median": med,
            "cross_domain": {
                "median_source_only": report.cross_domain.median_source_only,
                "median_augsbert": report.cross_domain.median_augsbert,
                "wins": report.cross_domain.wins,
            }
        })
    );
    Ok(vec![a.out.clone()])
}

#[derive(Serialize)]
struct SeedLine {
    seed: u64,
    partial_dev: f64,
    final_dev: Option<f64>,
    winner: bool,
}

fn cmd_seedopt(a: &SeedoptArgs) -> Outcome {
    let gold = a.gold.load()?;
    if gold.dev.is_empty() {
        return Err(Failure::validation("seed optimization needs a dev split"));
    }
    let toy = ToyConfig {
        feature_dim: a.feature_dim,
        embed_dim: a.embed_dim,
        learning_rate: a.learning_rate,
        steps: a.steps,
        ..ToyConfig::default()
    };
    if toy.feature_dim == 0 || toy.embed_dim == 0 {
        return Err(Failure::validation(
            "--feature-dim and --embed-dim must be >= 1",
        ));
    }
    let metric = match gold.task {
        TaskKind::Regression => DevMetric::Spearman,
        TaskKind::Classification => DevMetric::Auc(a.fpr_cap),
    };
    let space = FeatureSpace {
        seed: a.seed,
        dim: toy.feature_dim,
    };
    let trainer = ToyTrainer::new(
        toy,
        space,
        &gold.corpus,
        &gold.train,
        &gold.corpus,
        &gold.dev,
        metric,
    );
    let cfg = SeedRunConfig {
        num_seeds: a.num_seeds,
        early_stop_fraction: a.fraction,
        seeds: SeedSource::Base(a.seed),
    };
    let outcome = seed_optimize(&trainer, &cfg)?;
    let mut w = create(&a.out)?;
    for r in &outcome.rows {
        serde_json::to_writer(
            &mut w,
            &SeedLine {
                seed: r.seed,
                partial_dev: r.partial_dev,
                final_dev: r.final_dev,
                winner: r.winner,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut summary = serde_json::json!({
        "best_seed": outcome.best_seed,
        "final_dev": outcome.final_dev,
        "partial_steps": outcome.partial_steps,
        "total_steps": outcome.total_steps,
    });
    if !a.correlation.is_empty() {
        let seeds = cfg.resolve_seeds()?;
        summary["correlation"] =
            serde_json::to_value(early_stop_correlation(&trainer, &seeds, &a.correlation)?)?;
    }
    println!("{summary}");
    Ok(vec![a.out.clone()])
}

fn cmd_pipeline(a: &PipelineArgs) -> Outcome {
    check_threshold(a.threshold)?;
    let gold = a.gold.load()?;
    let params = Bm25Params::new(a.k1, a.b)?;
    let cfg = sampling_config(a.strategy, &gold, a.top_k, a.rs_budget, false, a.seed);
    cfg.validate()?;
    fs::create_dir_all(&a.out)?;
    let mut report = SilverReport::empty(Some(cfg.strategy));

    let t = Instant::now();
    let matrix = if matches!(a.strategy, StrategyArg::Ss | StrategyArg::Bm25Ss) {
        Some(embeddings_for(&gold, a.embeddings.as_deref(), &a.scorer)?)
    } else {
        None
    };
    let candidates = candidates_for(a.strategy, &cfg, &gold, params, matrix.as_ref())?;
    report.timings.sample_ms = millis(t.elapsed());
    report.candidates = candidates.len();
    let cand_path = a.out.join("candidates.jsonl");
    write_jsonl(
        &cand_path,
        &candidate_records(&gold.corpus, &candidates, cfg.strategy),
    )?;

    let scorer = a.scorer.build()?;
    let t = Instant::now();
    let scores = label_pairs(
        &gold.corpus,
        &candidates,
        scorer.scorer(),
        a.scorer.batch_size,
    )?;
    report.timings.label_ms = millis(t.elapsed());
    let labeled: Vec<LabeledPair> = candidates
        .iter()
        .zip(scores)
        .map(|(p, s)| LabeledPair::silver(*p, s))
        .collect();
    report.labeled = labeled.len();
    let silver_path = a.out.join("silver.jsonl");
    write_jsonl(
        &silver_path,
        &silver_records(&gold.corpus, &labeled, Some(cfg.strategy)),
    )?;

    let filter = resolve_filter(
        a.filter,
        cfg.strategy.default_filter(gold.task, a.threshold),
        a.threshold,
    );
    let t = Instant::now();
    let kept = apply_filter(filter, labeled, &gold, a.seed)?;
    report.timings.filter_ms = millis(t.elapsed());
    report.retained = kept.len();
    let filtered_path = a.out.join("filtered.jsonl");
    write_jsonl(
        &filtered_path,
        &silver_records(&gold.corpus, &kept, Some(cfg.strategy)),
    )?;

    let t = Instant::now();
    let merged = augment::merge_gold_silver(&gold, &kept, GoldOverlap::Drop)?;
    report.timings.merge_ms = millis(t.elapsed());
    report.merged_train_size = merged.train.len();
    let merged_path = a.out.join("merged.jsonl");
    let mut w = create(&merged_path)?;
    save_dataset(&mut w, &merged)?;
    w.flush()?;

    let stats_path = a.out.join("stats.tsv");
    let mut w = create(&stats_path)?;
    writeln!(
        w,
        "{}",
        augment::silver_stats_table(std::slice::from_ref(&report))
    )?;
    w.flush()?;
    eprintln!("{}", serde_json::to_string(&report)?);
    Ok(vec![
        cand_path,
        silver_path,
        filtered_path,
        merged_path,
        stats_path,
    ])
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Sample(_) => "sample",
        Command::Label(_) => "label",
        Command::Filter(_) => "filter",
        Command::Merge(_) => "merge",
        Command::Eval(_) => "eval",
        Command::Dist(_) => "dist",
        Command::Simulate(_) => "simulate",
        Command::Seedopt(_) => "seedopt",
        Command::Pipeline(_) => "pipeline",
        Command::Replay(_) => "replay",
    }
}

/// Input files, the manifest anchor, and the seed of a command.
fn plan(c: &Command) -> (Vec<PathBuf>, Option<PathBuf>, Option<u64>) {
    match c {
        Command::Sample(a) => {
            let mut inputs = a.gold.inputs();
            inputs.extend(a.embeddings.clone());
            (inputs, Some(a.out.clone()), Some(a.seed))
        }
        Command::Label(a) => (
            vec![a.candidates.clone()],
            Some(a.out.clone()),
            Some(a.scorer.oracle_seed),
        ),
        Command::Filter(a) => {
            let mut inputs = a.gold.inputs();
            inputs.push(a.silver.clone());
            (inputs, Some(a.out.clone()), Some(a.seed))
        }
        Command::Merge(a) => {
            let mut inputs = a.gold.inputs();
            inputs.push(a.silver.clone());
            (inputs, Some(a.out.clone()), None)
        }
        Command::Eval(a) => {
            let mut inputs = vec![a.gold.clone()];
            inputs.extend(a.pred.clone());
            inputs.extend(a.train.clone());
            (inputs, a.out.clone(), None)
        }
        Command::Dist(a) => {
            let mut inputs = vec![a.gold.clone()];
            inputs.extend(a.silver.iter().cloned());
            (inputs, Some(a.out.clone()), None)
        }
        Command::Simulate(a) => (
            a.config.iter().cloned().collect(),
            Some(a.out.clone()),
            Some(a.seed),
        ),
        Command::Seedopt(a) => (a.gold.inputs(), Some(a.out.clone()), Some(a.seed)),
        Command::Pipeline(a) => {
            let mut inputs = a.gold.inputs();
            inputs.extend(a.embeddings.clone());
            (inputs, Some(a.out.clone()), Some(a.seed))
        }
        Command::Replay(_) => (vec![], None, None),
    }
}

fn execute(c: &Command) -> Outcome {
    match c {
        Command::Sample(a) => cmd_sample(a),
        Command::Label(a) => cmd_label(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dist(a) => cmd_dist(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Seedopt(a) => cmd_seedopt(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Runs a parsed command and writes its manifest.
fn run_recorded(cli: &Cli, argv: &[String]) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be >= 1"));
        }
        // a second build in the same process (replay) is harmless to ignore
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    if let Command::Replay(_) = cli.command {
        return execute(&cli.command);
    }
    let columns = TsvColumns {
        sentence1: cli.tsv.col_s1,
        sentence2: cli.tsv.col_s2,
        label: cli.tsv.col_label,
        has_header: cli.tsv.tsv_header,
    };
    let _ = TSV_COLUMNS.set(columns);
    let (input_paths, anchor, seed) = plan(&cli.command);
    let inputs = hash_files(&input_paths)?;
    let started = unix_ms();
    let outputs = execute(&cli.command)?;
    let finished = unix_ms();
    if let Some(anchor) = anchor {
        let manifest = RunManifest {
            command: command_name(&cli.command).to_string(),
            argv: argv.to_vec(),
            config: serde_json::to_value(&cli.command)?,
            inputs,
            outputs: hash_files(&outputs)?,
            seed,
            version: VERSION.to_string(),
            started_unix_ms: started,
            finished_unix_ms: finished,
        };
        let path = manifest_path(&anchor);
        write_json(&path, &manifest)?;
    }
    Ok(outputs)
}

fn cmd_replay(a: &ReplayArgs) -> Outcome {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&a.manifest)?)?;
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Failure {
                kind: "replay",
                message: format!(
                    "input {} changed since the recorded run",
                    input.path.display()
                ),
            });
        }
    }
    let cli = Cli::try_parse_from(
        std::iter::once("silverforge".to_string()).chain(manifest.argv.iter().cloned()),
    )
    .map_err(|e| Failure::validation(e.to_string()))?;
    run_recorded(&cli, &manifest.argv)?;
    let mut mismatched = Vec::new();
    for out in &manifest.outputs {
        if sha256_file(&out.path)? != out.sha256 {
            mismatched.push(out.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure {
            kind: "replay",
            message: format!(
                "outputs differ from the recorded run: {}",
                mismatched.join(", ")
            ),
        });
    }
    println!(
        "{}",
        serde_json::json!({"replayed": manifest.command, "outputs_match": manifest.outputs.len()})
    );
    Ok(vec![])
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::json!({"error": {"kind": f.kind, "message": f.message}})
    );
    ExitCode::from(if f.kind == "validation" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            return fail(&Failure::validation(message.trim().to_string()));
        }
    };
    match run_recorded(&cli, &argv) {
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}
