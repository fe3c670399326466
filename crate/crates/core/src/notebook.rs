//! Correct and mistake notebooks.
//!
//! Both notebooks are append-only and share one encoder configuration.
//! Retrieval is an exhaustive cosine scan over question embeddings; ties go
//! to the older entry.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, Embedder, EncoderConfig, UnitVector};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORRECT_FILE: &str = "correct.jsonl";
pub const MISTAKE_FILE: &str = "mistakes.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NotebookError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("invalid demonstration plan: {0}")]
    InvalidPlan(String),
    #[error("{file}:{line}: malformed record: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("encoder config mismatch: store has {stored:?}, caller has {requested:?}")]
    EncoderMismatch {
        stored: EncoderConfig,
        requested: EncoderConfig,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NotebookError + '_ {
    move |source| NotebookError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Accumulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectEntry {
    pub seq: u64,
    pub question: String,
    pub hint: String,
    pub sql: String,
    pub thought: String,
    pub origin: Origin,
    pub db_id: Option<String>,
    pub embedding: UnitVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MistakeEntry {
    pub seq: u64,
    pub question: String,
    pub hint: String,
    pub first_sql: String,
    pub exec_error: Option<String>,
    pub reflected_sql: Option<String>,
    pub gold_sql: String,
    pub tip: String,
    pub origin: Origin,
    pub db_id: Option<String>,
    pub embedding: UnitVector,
}

/// Anything retrievable by question similarity.
pub trait NotebookRecord {
    fn seq(&self) -> u64;
    fn embedding(&self) -> &UnitVector;
}

impl NotebookRecord for CorrectEntry {
    fn seq(&self) -> u64 {
        self.seq
    }
    fn embedding(&self) -> &UnitVector {
        &self.embedding
    }
}

impl NotebookRecord for MistakeEntry {
    fn seq(&self) -> u64 {
        self.seq
    }
    fn embedding(&self) -> &UnitVector {
        &self.embedding
    }
}

/// Fields of a correct-notebook record before it is numbered and embedded.
#[derive(Clone, Debug, Default)]
pub struct NewCorrect {
    pub question: String,
    pub hint: String,
    pub sql: String,
    pub thought: String,
    pub db_id: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct NewMistake {
    pub question: String,
    pub hint: String,
    pub first_sql: String,
    pub exec_error: Option<String>,
    pub reflected_sql: Option<String>,
    pub gold_sql: String,
    pub tip: String,
    pub db_id: Option<String>,
}

/// Up to `n` entries by descending similarity to `query`, ties to smaller seq.
pub fn top_k<'a, T: NotebookRecord>(
    entries: &'a [T],
    query: &UnitVector,
    n: usize,
) -> Result<Vec<&'a T>, NotebookError> {
    if n == 0 || entries.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored = entries
        .iter()
        .map(|e| cosine_similarity(query, e.embedding()).map(|s| (s, e)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.seq().cmp(&b.seq()))
    });
    scored.truncate(n);
    Ok(scored.into_iter().map(|(_, e)| e).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationPlan {
    pub k: usize,
    pub correct_rate: f64,
}

impl DemonstrationPlan {
    pub fn new(k: usize, correct_rate: f64) -> Result<Self, NotebookError> {
        if !(0.0..=1.0).contains(&correct_rate) {
            return Err(NotebookError::InvalidPlan(format!(
                "correct rate {correct_rate} outside [0, 1]"
            )));
        }
        Ok(DemonstrationPlan { k, correct_rate })
    }

    /// Correct-notebook share of `k`, rounded half up.
    pub fn correct_target(&self) -> usize {
        ((self.k as f64 * self.correct_rate) + 0.5).floor() as usize
    }

    pub fn mistake_target(&self) -> usize {
        self.k - self.correct_target().min(self.k)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub correct_picks: Vec<CorrectEntry>,
    pub mistake_picks: Vec<MistakeEntry>,
}

impl DemonstrationSet {
    pub fn len(&self) -> usize {
        self.correct_picks.len() + self.mistake_picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `plan.k` between the notebooks. A short side hands its unused
/// slots to the other side.
pub fn select_demonstrations(
    kb: &KnowledgeBase,
    query: &UnitVector,
    plan: &DemonstrationPlan,
) -> Result<DemonstrationSet, NotebookError> {
    let want_correct = plan.correct_target().min(plan.k);
    let want_mistake = plan.k - want_correct;
    let have_correct = kb.correct.len();
    let have_mistake = kb.mistakes.len();

    let mut take_correct = want_correct.min(have_correct);
    let mut take_mistake = want_mistake.min(have_mistake);
    let spare_from_correct = want_correct - take_correct;
    let spare_from_mistake = want_mistake - take_mistake;
    take_mistake = (take_mistake + spare_from_correct).min(have_mistake);
    take_correct = (take_correct + spare_from_mistake).min(have_correct);

    Ok(DemonstrationSet {
        correct_picks: top_k(&kb.correct, query, take_correct)?
            .into_iter()
            .cloned()
            .collect(),
        mistake_picks: top_k(&kb.mistakes, query, take_mistake)?
            .into_iter()
            .cloned()
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub correct_count: usize,
    pub mistake_count: usize,
    pub next_correct_seq: u64,
    pub next_mistake_seq: u64,
}

/// The pair of notebooks plus the encoder that embedded them.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    embedder: Embedder,
    correct: Vec<CorrectEntry>,
    mistakes: Vec<MistakeEntry>,
    next_correct_seq: u64,
    next_mistake_seq: u64,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.encoder() == other.encoder()
            && self.correct == other.correct
            && self.mistakes == other.mistakes
            && self.next_correct_seq == other.next_correct_seq
            && self.next_mistake_seq == other.next_mistake_seq
    }
}

impl KnowledgeBase {
    pub fn new(encoder: EncoderConfig) -> Result<Self, NotebookError> {
        Ok(KnowledgeBase {
            embedder: Embedder::new(encoder)?,
            correct: Vec::new(),
            mistakes: Vec::new(),
            next_correct_seq: 1,
            next_mistake_seq: 1,
        })
    }

    pub fn encoder(&self) -> &EncoderConfig {
        self.embedder.config()
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn correct(&self) -> &[CorrectEntry] {
        &self.correct
    }

    pub fn mistakes(&self) -> &[MistakeEntry] {
        &self.mistakes
    }

    pub fn len(&self) -> usize {
        self.correct.len() + self.mistakes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed(&self, text: &str) -> Result<UnitVector, NotebookError> {
        Ok(self.embedder.embed(text)?)
    }

    pub fn add_correct(&mut self, entry: NewCorrect, origin: Origin) -> Result<u64, NotebookError> {
        if entry.sql.trim().is_empty() {
            return Err(NotebookError::InvalidEntry("correct entry needs SQL".into()));
        }
        let embedding = self.embed(&entry.question)?;
        let seq = self.next_correct_seq;
        self.correct.push(CorrectEntry {
            seq,
            question: entry.question,
            hint: entry.hint,
            sql: entry.sql,
            thought: entry.thought,
            origin,
            db_id: entry.db_id,
            embedding,
        });
        self.next_correct_seq += 1;
        Ok(seq)
    }

    pub fn add_mistake(&mut self, entry: NewMistake, origin: Origin) -> Result<u64, NotebookError> {
        if entry.gold_sql.trim().is_empty() {
            return Err(NotebookError::InvalidEntry("mistake entry needs gold SQL".into()));
        }
        if entry.exec_error.is_some() != entry.reflected_sql.is_some() {
            return Err(NotebookError::InvalidEntry(
                "exec_error and reflected_sql must be both present or both absent".into(),
            ));
        }
        let embedding = self.embed(&entry.question)?;
        let seq = self.next_mistake_seq;
        self.mistakes.push(MistakeEntry {
            seq,
            question: entry.question,
            hint: entry.hint,
            first_sql: entry.first_sql,
            exec_error: entry.exec_error,
            reflected_sql: entry.reflected_sql,
            gold_sql: entry.gold_sql,
            tip: entry.tip,
            origin,
            db_id: entry.db_id,
            embedding,
        });
        self.next_mistake_seq += 1;
        Ok(seq)
    }

    pub fn correct_by_seq(&self, seq: u64) -> Option<&CorrectEntry> {
        self.correct
            .binary_search_by_key(&seq, |e| e.seq)
            .ok()
            .map(|i| &self.correct[i])
    }

    pub fn mistake_by_seq(&self, seq: u64) -> Option<&MistakeEntry> {
        self.mistakes
            .binary_search_by_key(&seq, |e| e.seq)
            .ok()
            .map(|i| &self.mistakes[i])
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            encoder: self.encoder().clone(),
            correct_count: self.correct.len(),
            mistake_count: self.mistakes.len(),
            next_correct_seq: self.next_correct_seq,
            next_mistake_seq: self.next_mistake_seq,
        }
    }

    /// Writes the store under `dir`. An existing store there must have been
    /// built with the same encoder config.
    pub fn persist(&self, dir: &Path) -> Result<(), NotebookError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let existing = read_manifest(&manifest_path)?;
            if &existing.encoder != self.encoder() {
                return Err(NotebookError::EncoderMismatch {
                    stored: existing.encoder,
                    requested: self.encoder().clone(),
                });
            }
        }
        write_jsonl(&dir.join(CORRECT_FILE), &self.correct)?;
        write_jsonl(&dir.join(MISTAKE_FILE), &self.mistakes)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest())
            .expect("manifest serializes");
        manifest.push('\n');
        write_atomic(&manifest_path, manifest.as_bytes())
    }

    /// Reads a store written by [`KnowledgeBase::persist`]. Any malformed
    /// line fails the whole load.
    pub fn load(dir: &Path) -> Result<Self, NotebookError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = read_manifest(&manifest_path)?;
        let correct: Vec<CorrectEntry> = read_jsonl(&dir.join(CORRECT_FILE))?;
        let mistakes: Vec<MistakeEntry> = read_jsonl(&dir.join(MISTAKE_FILE))?;
        let malformed = |file: &str, line: usize, reason: String| NotebookError::Malformed {
            file: dir.join(file),
            line,
            reason,
        };
        check_records(&correct, manifest.encoder.dimension, manifest.next_correct_seq)
            .map_err(|(line, reason)| malformed(CORRECT_FILE, line, reason))?;
        check_records(&mistakes, manifest.encoder.dimension, manifest.next_mistake_seq)
            .map_err(|(line, reason)| malformed(MISTAKE_FILE, line, reason))?;
        if correct.len() != manifest.correct_count {
            return Err(malformed(
                MANIFEST_FILE,
                1,
                format!(
                    "manifest counts {} correct entries, file holds {}",
                    manifest.correct_count,
                    correct.len()
                ),
            ));
        }
        if mistakes.len() != manifest.mistake_count {
            return Err(malformed(
                MANIFEST_FILE,
                1,
                format!(
                    "manifest counts {} mistake entries, file holds {}",
                    manifest.mistake_count,
                    mistakes.len()
                ),
            ));
        }
        Ok(KnowledgeBase {
            embedder: Embedder::new(manifest.encoder)?,
            correct,
            mistakes,
            next_correct_seq: manifest.next_correct_seq,
            next_mistake_seq: manifest.next_mistake_seq,
        })
    }

    /// Loads `dir` if it holds a store, else starts an empty one. Either way
    /// the encoder must match `encoder`.
    pub fn open_or_create(dir: &Path, encoder: &EncoderConfig) -> Result<Self, NotebookError> {
        if !dir.join(MANIFEST_FILE).exists() {
            return KnowledgeBase::new(encoder.clone());
        }
        let kb = KnowledgeBase::load(dir)?;
        if kb.encoder() != encoder {
            return Err(NotebookError::EncoderMismatch {
                stored: kb.encoder().clone(),
                requested: encoder.clone(),
            });
        }
        Ok(kb)
    }
}

fn check_records<T: NotebookRecord>(
    records: &[T],
    dimension: usize,
    next_seq: u64,
) -> Result<(), (usize, String)> {
    let mut prev = 0u64;
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        if r.seq() <= prev {
            return Err((line, format!("seq {} not greater than {}", r.seq(), prev)));
        }
        if r.seq() >= next_seq {
            return Err((line, format!("seq {} not below manifest counter {next_seq}", r.seq())));
        }
        if r.embedding().dimension() != dimension {
            return Err((
                line,
                format!("embedding has {} dims, store has {dimension}", r.embedding().dimension()),
            ));
        }
        prev = r.seq();
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Manifest, NotebookError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| NotebookError::Malformed {
        file: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(NotebookError::Malformed {
            file: path.to_path_buf(),
            line: 1,
            reason: format!("unsupported format version {}", manifest.format_version),
        });
    }
    manifest.encoder.validate()?;
    Ok(manifest)
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, NotebookError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| NotebookError::Malformed {
            file: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), NotebookError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), NotebookError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Hand-written examples offered only while both notebooks are empty.
#[derive(Clone, Debug, Deserialize)]
struct FixedExampleRecord {
    question: String,
    #[serde(default)]
    hint: String,
    sql: String,
    #[serde(default)]
    thought: String,
}

/// Reads a line-delimited file of `{question, hint, sql, thought}` records
/// and embeds them as seed-origin correct entries (seq by line order).
pub fn load_fixed_examples(path: &Path, embedder: &Embedder) -> Result<Vec<CorrectEntry>, NotebookError> {
    let records: Vec<FixedExampleRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(CorrectEntry {
                seq: i as u64 + 1,
                embedding: embedder.embed(&r.question)?,
                question: r.question,
                hint: r.hint,
                sql: r.sql,
                thought: r.thought,
                origin: Origin::Seed,
                db_id: None,
            })
        })
        .collect()
}
