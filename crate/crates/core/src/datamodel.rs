//! Sentence, pair and dataset types plus JSONL/TSV ingestion.
//!
//! Sentences are identified by their NFC-normalized, trimmed text. Ids are
//! handed out in first-seen order while a dataset is read, so two records that
//! differ only in surrounding whitespace point at the same [`Sentence`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: score {score} is outside [0, 1]")]
    ScoreOutOfRange {
        path: String,
        line: usize,
        score: f64,
    },
    #[error("{path}:{line}: classification label must be 0 or 1, got {score}")]
    NotBinary {
        path: String,
        line: usize,
        score: f64,
    },
    #[error("{path}:{line}: duplicate pair in split {split}")]
    DuplicatePair {
        path: String,
        line: usize,
        split: Split,
    },
    #[error("pair ({a}, {b}) appears in both {first} and {second}")]
    SplitOverlap {
        a: SentenceId,
        b: SentenceId,
        first: Split,
        second: Split,
    },
    #[error("self-pair on sentence {0}")]
    SelfPair(SentenceId),
    #[error("empty sentence text")]
    EmptySentence,
    #[error("unknown sentence id {0}")]
    UnknownSentence(SentenceId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceId(pub u32);

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: SentenceId,
    pub text: String,
}

/// Identity used for sentence deduplication.
pub fn normalize_text(text: &str) -> String {
    text.trim().nfc().collect::<String>().trim().to_string()
}

/// Interning table mapping normalized sentence text to ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    by_text: HashMap<String, SentenceId>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `text`, interning it on first sight.
    pub fn intern(&mut self, text: &str) -> Result<SentenceId> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(DataError::EmptySentence);
        }
        if let Some(&id) = self.by_text.get(&norm) {
            return Ok(id);
        }
        let id = SentenceId(self.sentences.len() as u32);
        self.by_text.insert(norm.clone(), id);
        self.sentences.push(Sentence { id, text: norm });
        Ok(id)
    }

    pub fn lookup(&self, text: &str) -> Option<SentenceId> {
        self.by_text.get(&normalize_text(text)).copied()
    }

    pub fn get(&self, id: SentenceId) -> Option<&Sentence> {
        self.sentences.get(id.0 as usize)
    }

    pub fn text(&self, id: SentenceId) -> &str {
        &self.sentences[id.0 as usize].text
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    /// Interns both texts and returns their canonical pair.
    pub fn pair(&mut self, s1: &str, s2: &str) -> Result<SentencePair> {
        let a = self.intern(s1)?;
        let b = self.intern(s2)?;
        SentencePair::new(a, b)
    }

    pub fn pair_texts(&self, pair: SentencePair) -> (&str, &str) {
        (self.text(pair.a), self.text(pair.b))
    }
}

/// An unordered pair of distinct sentences, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub a: SentenceId,
    pub b: SentenceId,
}

impl SentencePair {
    pub fn new(a: SentenceId, b: SentenceId) -> Result<Self> {
        canonicalize(SentencePair { a, b })
    }
}

pub fn canonicalize(pair: SentencePair) -> Result<SentencePair> {
    match pair.a.cmp(&pair.b) {
        std::cmp::Ordering::Less => Ok(pair),
        std::cmp::Ordering::Greater => Ok(SentencePair {
            a: pair.b,
            b: pair.a,
        }),
        std::cmp::Ordering::Equal => Err(DataError::SelfPair(pair.a)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Silver,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub pair: SentencePair,
    pub score: f64,
    pub provenance: Provenance,
}

impl LabeledPair {
    pub fn gold(pair: SentencePair, score: f64) -> Self {
        Self {
            pair,
            score,
            provenance: Provenance::Gold,
        }
    }

    pub fn silver(pair: SentencePair, score: f64) -> Self {
        Self {
            pair,
            score,
            provenance: Provenance::Silver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Which splits an operation should look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSelector {
    pub train: bool,
    pub dev: bool,
    pub test: bool,
}

impl SplitSelector {
    pub const ALL: Self = Self {
        train: true,
        dev: true,
        test: true,
    };
    pub const TRAIN: Self = Self {
        train: true,
        dev: false,
        test: false,
    };

    fn includes(&self, split: Split) -> bool {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairDataset {
    pub task: TaskKind,
    pub corpus: Corpus,
    pub train: Vec<LabeledPair>,
    pub dev: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl PairDataset {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            corpus: Corpus::new(),
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> &[LabeledPair] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<LabeledPair> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn pair_set(&self, split: Split) -> HashSet<SentencePair> {
        self.split(split).iter().map(|p| p.pair).collect()
    }

    /// Checks the no-duplicates and no-cross-split invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<SentencePair, Split> = HashMap::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            for lp in self.split(split) {
                if let Some(&first) = seen.get(&lp.pair) {
                    if first == split {
                        return Err(DataError::DuplicatePair {
                            path: String::from("<memory>"),
                            line: 0,
                            split,
                        });
                    }
                    return Err(DataError::SplitOverlap {
                        a: lp.pair.a,
                        b: lp.pair.b,
                        first,
                        second: split,
                    });
                }
                seen.insert(lp.pair, split);
            }
        }
        Ok(())
    }
}

/// Column layout for TSV input (zero-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsvColumns {
    pub sentence1: usize,
    pub sentence2: usize,
    pub label: usize,
    pub has_header: bool,
}

impl Default for TsvColumns {
    fn default() -> Self {
        Self {
            sentence1: 0,
            sentence2: 1,
            label: 2,
            has_header: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Tsv(TsvColumns),
}

impl DatasetFormat {
    /// Guesses the format from the file extension; anything but `.tsv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        Self::detect(path, TsvColumns::default())
    }

    /// `.tsv` files use `columns`; everything else is JSONL.
    pub fn detect(path: &Path, columns: TsvColumns) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => DatasetFormat::Tsv(columns),
            _ => DatasetFormat::Jsonl,
        }
    }
}

/// On-disk JSONL record. Unknown fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub sentence1: String,
    pub sentence2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    #[serde(default, skip_serializing_if = "is_train")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

fn is_train(split: &Option<Split>) -> bool {
    matches!(split, None | Some(Split::Train))
}

impl PairRecord {
    pub fn unlabeled(s1: &str, s2: &str) -> Self {
        Self {
            sentence1: s1.to_string(),
            sentence2: s2.to_string(),
            label: None,
            split: None,
            provenance: None,
            strategy: None,
        }
    }
}

/// Reads raw records from a JSONL or TSV file, with 1-based line numbers.
pub fn read_records(path: &Path, format: DatasetFormat) -> Result<Vec<(usize, PairRecord)>> {
    let file = fs::File::open(path)?;
    let display = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match format {
            DatasetFormat::Jsonl => {
                serde_json::from_str::<PairRecord>(&line).map_err(|e| DataError::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: e.to_string(),
                })?
            }
            DatasetFormat::Tsv(cols) => {
                if cols.has_header && line_no == 1 {
                    continue;
                }
                parse_tsv_line(&line, cols).map_err(|message| DataError::Parse {
                    path: display.clone(),
                    line: line_no,
                    message,
                })?
            }
        };
        out.push((line_no, record));
    }
    Ok(out)
}

fn parse_tsv_line(line: &str, cols: TsvColumns) -> std::result::Result<PairRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let field = |i: usize| {
        fields
            .get(i)
            .copied()
            .ok_or_else(|| format!("missing column {i} (line has {} columns)", fields.len()))
    };
    let raw_label = field(cols.label)?.trim();
    let label: f64 = raw_label
        .parse()
        .map_err(|_| format!("label {raw_label:?} is not a number"))?;
    Ok(PairRecord {
        sentence1: field(cols.sentence1)?.to_string(),
        sentence2: field(cols.sentence2)?.to_string(),
        label: Some(label),
        split: None,
        provenance: None,
        strategy: None,
    })
}

/// Loads a labeled dataset. Records carrying a `split` field go to that
/// split, everything else lands in train.
pub fn load_dataset(path: &Path, format: DatasetFormat, task: TaskKind) -> Result<PairDataset> {
    let mut dataset = PairDataset::new(task);
    append_records(&mut dataset, path, format, None)?;
    Ok(dataset)
}

/// Like [`load_dataset`], reading each split from its own file.
pub fn load_dataset_splits(
    train: &Path,
    dev: Option<&Path>,
    test: Option<&Path>,
    task: TaskKind,
    columns: TsvColumns,
) -> Result<PairDataset> {
    let mut dataset = PairDataset::new(task);
    append_records(
        &mut dataset,
        train,
        DatasetFormat::detect(train, columns),
        None,
    )?;
    if let Some(dev) = dev {
        append_records(
            &mut dataset,
            dev,
            DatasetFormat::detect(dev, columns),
            Some(Split::Dev),
        )?;
    }
    if let Some(test) = test {
        append_records(
            &mut dataset,
            test,
            DatasetFormat::detect(test, columns),
            Some(Split::Test),
        )?;
    }
    Ok(dataset)
}

fn append_records(
    dataset: &mut PairDataset,
    path: &Path,
    format: DatasetFormat,
    force_split: Option<Split>,
) -> Result<()> {
    let display = path.display().to_string();
    let mut seen: HashMap<SentencePair, Split> = HashMap::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        for lp in dataset.split(split) {
            seen.insert(lp.pair, split);
        }
    }
    for (line, record) in read_records(path, format)? {
        let parse_err = |message: String| DataError::Parse {
            path: display.clone(),
            line,
            message,
        };
        let score = record
            .label
            .ok_or_else(|| parse_err("missing label".into()))?;
        if !score.is_finite() {
            return Err(parse_err(format!("label {score} is not finite")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(DataError::ScoreOutOfRange {
                path: display.clone(),
                line,
                score,
            });
        }
        let provenance = record.provenance.unwrap_or(Provenance::Gold);
        if dataset.task == TaskKind::Classification
            && provenance == Provenance::Gold
            && score != 0.0
            && score != 1.0
        {
            return Err(DataError::NotBinary {
                path: display.clone(),
                line,
                score,
            });
        }
        let pair = dataset
            .corpus
            .pair(&record.sentence1, &record.sentence2)
            .map_err(|e| parse_err(e.to_string()))?;
        let split = force_split.or(record.split).unwrap_or(Split::Train);
        if let Some(&first) = seen.get(&pair) {
            if first == split {
                return Err(DataError::DuplicatePair {
                    path: display.clone(),
                    line,
                    split,
                });
            }
            return Err(DataError::SplitOverlap {
                a: pair.a,
                b: pair.b,
                first,
                second: split,
            });
        }
        seen.insert(pair, split);
        dataset.split_mut(split).push(LabeledPair {
            pair,
            score,
            provenance,
        });
    }
    Ok(())
}

pub fn record_for(corpus: &Corpus, lp: &LabeledPair, split: Split) -> PairRecord {
    let (s1, s2) = corpus.pair_texts(lp.pair);
    PairRecord {
        sentence1: s1.to_string(),
        sentence2: s2.to_string(),
        label: Some(lp.score),
        split: Some(split),
        provenance: (lp.provenance == Provenance::Silver).then_some(Provenance::Silver),
        strategy: None,
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[PairRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Serializes all splits as JSONL, train first.
pub fn save_dataset<W: Write>(out: W, dataset: &PairDataset) -> Result<()> {
    let mut records = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        for lp in dataset.split(split) {
            records.push(record_for(&dataset.corpus, lp, split));
        }
    }
    write_records(out, &records)
}

/// Sentences referenced by the selected splits, ordered by id.
pub fn unique_sentences(dataset: &PairDataset, splits: SplitSelector) -> Vec<Sentence> {
    let mut ids = HashSet::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        if !splits.includes(split) {
            continue;
        }
        for lp in dataset.split(split) {
            ids.insert(lp.pair.a);
            ids.insert(lp.pair.b);
        }
    }
    let mut ids: Vec<SentenceId> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| dataset.corpus.sentences[id.0 as usize].clone())
        .collect()
}

/// Number of canonical pairs over `n` sentences.
pub fn pair_universe_size(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index in `0..n(n-1)/2` to the positions `(i, j)`, `i < j`,
/// enumerating row by row: (0,1), (0,2), ..., (0,n-1), (1,2), ...
pub fn unrank_pair(n: usize, mut index: u64) -> (usize, usize) {
    let mut i = 0usize;
    loop {
        let row = (n - i - 1) as u64;
        if index < row {
            return (i, i + 1 + index as usize);
        }
        index -= row;
        i += 1;
    }
}
