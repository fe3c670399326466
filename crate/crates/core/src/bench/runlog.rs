//! Line-delimited run log.
//!
//! Each evaluated item contributes one `branch` record per branch followed
//! by one `item` record, written in a single append. An item without its
//! closing `item` record was interrupted and is dropped on resume.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{Counters, EvalReport, ItemVerdict};
use super::BenchError;
use crate::consistency::CrossRun;
use crate::llm::PromptKind;
use crate::pipeline::{Difficulty, NotebookDelta, TaskItem};
use crate::sql::ExecOutcome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExecSummary {
    Rows {
        arity: usize,
        distinct_rows: usize,
        row_count: usize,
        digest: String,
    },
    Failure {
        message: String,
    },
    Timeout,
}

impl From<&ExecOutcome> for ExecSummary {
    fn from(outcome: &ExecOutcome) -> Self {
        match outcome {
            ExecOutcome::Rows(r) => {
                let canonical = serde_json::to_vec(&r.rows).expect("rows serialize");
                let digest = Sha256::digest(&canonical);
                ExecSummary::Rows {
                    arity: r.arity,
                    distinct_rows: r.len(),
                    row_count: r.original_row_count,
                    digest: digest[..8].iter().map(|b| format!("{b:02x}")).collect(),
                }
            }
            ExecOutcome::Failure { message } => ExecSummary::Failure {
                message: message.clone(),
            },
            ExecOutcome::Timeout => ExecSummary::Timeout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRef {
    pub kind: PromptKind,
    pub digest: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationIds {
    pub correct: Vec<u64>,
    pub mistakes: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub question_id: String,
    pub rate: f64,
    pub demonstrations: DemonstrationIds,
    pub prompts: Vec<PromptRef>,
    pub first_sql: String,
    pub thought: String,
    pub exec_error: Option<String>,
    pub reflected_sql: Option<String>,
    pub final_sql: String,
    pub final_exec: ExecSummary,
    pub aborted: Option<String>,
    pub provider_calls: usize,
    pub tokens: u64,
    pub correct: Option<bool>,
    pub delta: NotebookDelta,
    pub tip: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub question_id: String,
    pub db_id: String,
    pub difficulty: Difficulty,
    pub chosen_rate: Option<f64>,
    pub chosen_sql: String,
    pub vote_group_sizes: Vec<usize>,
    pub correct: bool,
    pub gold_valid: bool,
    pub aborted: bool,
    pub error: Option<String>,
    pub provider_calls: usize,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LogRecord {
    Branch(BranchRecord),
    Item(ItemRecord),
}

/// All records of one finished item.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedItem {
    pub branches: Vec<BranchRecord>,
    pub item: ItemRecord,
}

impl CompletedItem {
    pub fn from_run(item: &TaskItem, run: &CrossRun, correct: bool, gold_valid: bool) -> Self {
        let answer = &run.answer;
        let branches: Vec<BranchRecord> = answer
            .branch_outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let rethink = run.rethinks[i].as_ref();
                let mut prompts: Vec<PromptRef> = o
                    .prompt_digests
                    .iter()
                    .map(|(kind, digest)| PromptRef {
                        kind: *kind,
                        digest: digest.clone(),
                    })
                    .collect();
                if let Some(d) = rethink.and_then(|r| r.tip_digest.clone()) {
                    prompts.push(PromptRef {
                        kind: PromptKind::MistakeTip,
                        digest: d,
                    });
                }
                BranchRecord {
                    question_id: item.question_id.clone(),
                    rate: o.correct_rate,
                    demonstrations: DemonstrationIds {
                        correct: o.demonstrations.correct_picks.iter().map(|e| e.seq).collect(),
                        mistakes: o.demonstrations.mistake_picks.iter().map(|e| e.seq).collect(),
                    },
                    prompts,
                    first_sql: o.first_sql.clone(),
                    thought: o.thought.clone(),
                    exec_error: o.exec_error.clone(),
                    reflected_sql: o.reflected_sql.clone(),
                    final_sql: o.final_sql.clone(),
                    final_exec: ExecSummary::from(&o.final_exec),
                    aborted: answer.aborted[i].clone(),
                    provider_calls: o.provider_calls + rethink.map_or(0, |r| r.provider_calls),
                    tokens: o.tokens + rethink.map_or(0, |r| r.tokens),
                    correct: rethink.filter(|r| r.gold_valid).map(|r| r.correct),
                    delta: rethink.map_or(NotebookDelta::NoUpdate, |r| r.delta),
                    tip: rethink.and_then(|r| r.tip.clone()),
                }
            })
            .collect();
        let provider_calls = branches.iter().map(|b| b.provider_calls).sum();
        let tokens = branches.iter().map(|b| b.tokens).sum();
        CompletedItem {
            item: ItemRecord {
                question_id: item.question_id.clone(),
                db_id: item.db_id.clone(),
                difficulty: item.difficulty,
                chosen_rate: Some(answer.chosen_rate),
                chosen_sql: answer.chosen_sql.clone(),
                vote_group_sizes: answer.vote_group_sizes.clone(),
                correct,
                gold_valid,
                aborted: answer.aborted.iter().all(Option::is_some),
                error: None,
                provider_calls,
                tokens,
            },
            branches,
        }
    }

    /// An item the harness could not process at all; scored incorrect.
    pub fn failed(item: &TaskItem, error: String) -> Self {
        CompletedItem {
            branches: Vec::new(),
            item: ItemRecord {
                question_id: item.question_id.clone(),
                db_id: item.db_id.clone(),
                difficulty: item.difficulty,
                chosen_rate: None,
                chosen_sql: String::new(),
                vote_group_sizes: Vec::new(),
                correct: false,
                gold_valid: false,
                aborted: true,
                error: Some(error),
                provider_calls: 0,
                tokens: 0,
            },
        }
    }

    pub fn verdict(&self) -> ItemVerdict {
        ItemVerdict {
            question_id: self.item.question_id.clone(),
            difficulty: self.item.difficulty,
            correct: self.item.correct,
            chosen_rate: self.item.chosen_rate,
            aborted: self.item.aborted,
            gold_valid: self.item.gold_valid,
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for b in &self.branches {
            serde_json::to_writer(&mut buf, &LogRecord::Branch(b.clone())).expect("record serializes");
            buf.push(b'\n');
        }
        serde_json::to_writer(&mut buf, &LogRecord::Item(self.item.clone())).expect("record serializes");
        buf.push(b'\n');
        buf
    }
}

pub fn report_from_items(items: &[CompletedItem]) -> EvalReport {
    let mut counters = Counters::default();
    let mut by_kind: BTreeMap<String, u64> = BTreeMap::new();
    for c in items {
        counters.provider_calls += c.item.provider_calls as u64;
        counters.tokens += c.item.tokens;
        for p in c.branches.iter().flat_map(|b| &b.prompts) {
            *by_kind.entry(p.kind.name().to_string()).or_default() += 1;
        }
    }
    counters.calls_by_kind = by_kind;
    EvalReport::from_verdicts(items.iter().map(CompletedItem::verdict).collect(), counters)
}

/// Parses a log. Returns the completed items and the byte length of the
/// committed prefix; anything after it belongs to an interrupted item.
pub fn read_log(path: &Path) -> Result<(Vec<CompletedItem>, u64), BenchError> {
    let text = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    let mut items = Vec::new();
    let mut pending = Vec::new();
    let mut committed = 0u64;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < text.len() {
        line_no += 1;
        let end = match text[offset..].iter().position(|b| *b == b'\n') {
            Some(p) => offset + p,
            // unterminated tail: a write cut short
            None => break,
        };
        let line = &text[offset..end];
        offset = end + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: LogRecord = match serde_json::from_slice(line) {
            Ok(r) => r,
            Err(e) if offset >= text.len() => {
                log::warn!("{}:{line_no}: dropping unreadable last line ({e})", path.display());
                break;
            }
            Err(e) => {
                return Err(BenchError::Log {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })
            }
        };
        match record {
            LogRecord::Branch(b) => pending.push(b),
            LogRecord::Item(item) => {
                items.push(CompletedItem {
                    branches: std::mem::take(&mut pending),
                    item,
                });
                committed = offset as u64;
            }
        }
    }
    Ok((items, committed))
}

pub fn report_from_log(path: &Path) -> Result<EvalReport, BenchError> {
    let (items, _) = read_log(path)?;
    Ok(report_from_items(&items))
}

/// Append-only writer for a run log.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: fs::File,
}

impl RunLog {
    /// Starts a fresh log, replacing any previous file.
    pub fn create(path: &Path) -> Result<Self, BenchError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
        Ok(RunLog {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopens an existing log, cutting off any interrupted item.
    pub fn resume(path: &Path) -> Result<(Self, Vec<CompletedItem>), BenchError> {
        if !path.exists() {
            return Ok((Self::create(path)?, Vec::new()));
        }
        let (items, committed) = read_log(path)?;
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| BenchError::io(path, e))?;
        file.set_len(committed).map_err(|e| BenchError::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| BenchError::io(path, e))?;
        Ok((
            RunLog {
                path: path.to_path_buf(),
                file,
            },
            items,
        ))
    }

    pub fn append(&mut self, item: &CompletedItem) -> Result<(), BenchError> {
        self.file
            .write_all(&item.encode())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| BenchError::io(&self.path, e))
    }
}
