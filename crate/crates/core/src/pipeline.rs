//! One question through one correct-rate branch: retrieve demonstrations,
//! generate, explain, execute, reflect once on an execution error, then
//! compare against the gold query and grow the notebooks.

use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    complete, extract_sql, extract_tip, prompt_digest, render, CompletionParams,
    CompletionProvider, CompletionRequest, LlmError, PromptContext, PromptKind,
};
use crate::notebook::{
    select_demonstrations, top_k, CorrectEntry, DemonstrationPlan, DemonstrationSet,
    KnowledgeBase, NewCorrect, NewMistake, NotebookError, Origin,
};
use crate::sql::{self, database_path, outcomes_equal, ExecOutcome, SqlError};

pub const NO_SQL_EXTRACTED: &str = "no SQL extracted";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("provider call failed: {0}")]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Notebook(#[from] NotebookError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenging];

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub question_id: String,
    pub db_id: String,
    pub question: String,
    pub hint: String,
    pub gold_sql: String,
    pub difficulty: Difficulty,
}

/// Whether notebooks carry reasoning text (thoughts and tips) or only
/// question/SQL pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoMode {
    #[default]
    High,
    Low,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub db_root: PathBuf,
    pub timeout_ms: u64,
    pub info_mode: InfoMode,
    pub continuous_accumulation: bool,
    pub params: CompletionParams,
    pub origin: Origin,
    /// Offered as demonstrations only while both notebooks are empty.
    pub fixed_examples: Vec<CorrectEntry>,
}

impl PipelineConfig {
    pub fn new(db_root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            db_root: db_root.into(),
            timeout_ms: sql::DEFAULT_TIMEOUT_MS,
            info_mode: InfoMode::High,
            continuous_accumulation: true,
            params: CompletionParams::default(),
            origin: Origin::Accumulated,
            fixed_examples: Vec::new(),
        }
    }
}

/// Formats a correct rate the way branch tags and directory names use it.
pub fn rate_label(rate: f64) -> String {
    format!("{rate}")
}

#[derive(Clone, Debug)]
pub struct BranchOutcome {
    pub correct_rate: f64,
    pub demonstrations: DemonstrationSet,
    pub first_sql: String,
    pub thought: String,
    pub exec_error: Option<String>,
    pub reflected_sql: Option<String>,
    pub final_sql: String,
    pub final_exec: ExecOutcome,
    pub provider_calls: usize,
    pub tokens: u64,
    pub prompt_digests: Vec<(PromptKind, String)>,
}

impl BranchOutcome {
    /// Stand-in for a branch whose provider calls could not complete.
    pub fn aborted(correct_rate: f64, reason: &str) -> Self {
        BranchOutcome {
            correct_rate,
            demonstrations: DemonstrationSet::default(),
            first_sql: String::new(),
            thought: String::new(),
            exec_error: None,
            reflected_sql: None,
            final_sql: String::new(),
            final_exec: ExecOutcome::failure(format!("branch aborted: {reason}")),
            provider_calls: 0,
            tokens: 0,
            prompt_digests: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "seq", rename_all = "snake_case")]
pub enum NotebookDelta {
    AddedCorrect(u64),
    AddedMistake(u64),
    NoUpdate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rethink {
    pub correct: bool,
    pub gold_valid: bool,
    pub delta: NotebookDelta,
    pub provider_calls: usize,
    pub tokens: u64,
    pub tip_digest: Option<String>,
    /// Tip stored with a new mistake entry.
    pub tip: Option<String>,
}

/// A reviewer's judgement, used in place of executing a gold query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HumanVerdict {
    Accept,
    Reject { corrected_sql: String },
}

struct Caller<'a> {
    provider: &'a dyn CompletionProvider,
    params: &'a CompletionParams,
    tag: String,
    calls: usize,
    tokens: u64,
    digests: Vec<(PromptKind, String)>,
}

impl Caller<'_> {
    fn call(&mut self, kind: PromptKind, prompt: &str) -> Result<String, LlmError> {
        self.calls += 1;
        self.digests.push((kind, prompt_digest(prompt)));
        let completion = complete(
            self.provider,
            &CompletionRequest {
                kind,
                prompt,
                tag: Some(&self.tag),
                params: self.params,
            },
        )?;
        self.tokens += completion.tokens;
        Ok(completion.text)
    }
}

fn run_sql(cfg: &PipelineConfig, db_id: &str, sql_text: &str) -> Result<ExecOutcome, SqlError> {
    if sql_text.is_empty() {
        return Ok(ExecOutcome::failure(NO_SQL_EXTRACTED));
    }
    sql::execute(&database_path(&cfg.db_root, db_id), sql_text, cfg.timeout_ms)
}

pub fn branch_tag(item: &TaskItem, rate: f64) -> String {
    format!("{}/{}", item.question_id, rate_label(rate))
}

/// Produces this branch's SQL for `item` without touching the notebooks.
pub fn answer(
    item: &TaskItem,
    kb: &KnowledgeBase,
    plan: &DemonstrationPlan,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
) -> Result<BranchOutcome, PipelineError> {
    let query = kb.embed(&item.question)?;
    let mut demonstrations = select_demonstrations(kb, &query, plan)?;
    if kb.is_empty() && !cfg.fixed_examples.is_empty() {
        demonstrations.correct_picks = top_k(&cfg.fixed_examples, &query, plan.k)?
            .into_iter()
            .cloned()
            .collect();
    }

    let mut caller = Caller {
        provider,
        params: &cfg.params,
        tag: branch_tag(item, plan.correct_rate),
        calls: 0,
        tokens: 0,
        digests: Vec::new(),
    };
    let base = PromptContext {
        schema_text,
        question: &item.question,
        hint: &item.hint,
        demonstrations: Some(&demonstrations),
        ..Default::default()
    };

    let reply = caller.call(PromptKind::GenerateSql, &render(PromptKind::GenerateSql, &base)?)?;
    let first_sql = extract_sql(&reply).unwrap_or_default();

    let thought = if cfg.info_mode == InfoMode::High && !first_sql.is_empty() {
        let ctx = PromptContext {
            sql: Some(&first_sql),
            ..base
        };
        caller
            .call(PromptKind::ThoughtProcess, &render(PromptKind::ThoughtProcess, &ctx)?)?
            .trim()
            .to_string()
    } else {
        String::new()
    };

    let first_exec = run_sql(cfg, &item.db_id, &first_sql)?;
    let (exec_error, reflected_sql, final_sql, final_exec) = match first_exec.error_message(cfg.timeout_ms) {
        None => (None, None, first_sql.clone(), first_exec),
        Some(error) => {
            let ctx = PromptContext {
                sql: Some(&first_sql),
                exec_error: Some(&error),
                ..base
            };
            let reply = caller.call(PromptKind::ReflectSql, &render(PromptKind::ReflectSql, &ctx)?)?;
            let reflected = extract_sql(&reply).unwrap_or_default();
            let exec = run_sql(cfg, &item.db_id, &reflected)?;
            (Some(error), Some(reflected.clone()), reflected, exec)
        }
    };

    Ok(BranchOutcome {
        correct_rate: plan.correct_rate,
        demonstrations,
        first_sql,
        thought,
        exec_error,
        reflected_sql,
        final_sql,
        final_exec,
        provider_calls: caller.calls,
        tokens: caller.tokens,
        prompt_digests: caller.digests,
    })
}

/// Scores the branch against the gold query and, when accumulation is on,
/// records a correct entry or a mistake entry with a tip.
pub fn rethink_update(
    outcome: &BranchOutcome,
    item: &TaskItem,
    kb: &mut KnowledgeBase,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
) -> Result<Rethink, PipelineError> {
    let gold = run_sql(cfg, &item.db_id, &item.gold_sql)?;
    if gold.rows().is_none() {
        warn!(
            "gold SQL for {} fails on {}: {}; notebooks left unchanged",
            item.question_id,
            item.db_id,
            gold.error_message(cfg.timeout_ms).unwrap_or_default()
        );
        return Ok(Rethink {
            correct: false,
            gold_valid: false,
            delta: NotebookDelta::NoUpdate,
            provider_calls: 0,
            tokens: 0,
            tip_digest: None,
            tip: None,
        });
    }
    let correct = outcomes_equal(&outcome.final_exec, &gold);
    let mut rethink = update_notebooks(outcome, item, kb, provider, schema_text, cfg, correct, &item.gold_sql)?;
    rethink.gold_valid = true;
    Ok(rethink)
}

/// Same update as [`rethink_update`], with a reviewer deciding correctness
/// instead of a gold query.
pub fn rethink_with_verdict(
    outcome: &BranchOutcome,
    item: &TaskItem,
    kb: &mut KnowledgeBase,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
    verdict: &HumanVerdict,
) -> Result<Rethink, PipelineError> {
    match verdict {
        HumanVerdict::Accept => update_notebooks(outcome, item, kb, provider, schema_text, cfg, true, &outcome.final_sql),
        HumanVerdict::Reject { corrected_sql } => {
            update_notebooks(outcome, item, kb, provider, schema_text, cfg, false, corrected_sql)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_notebooks(
    outcome: &BranchOutcome,
    item: &TaskItem,
    kb: &mut KnowledgeBase,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
    correct: bool,
    gold_sql: &str,
) -> Result<Rethink, PipelineError> {
    let mut rethink = Rethink {
        correct,
        gold_valid: true,
        delta: NotebookDelta::NoUpdate,
        provider_calls: 0,
        tokens: 0,
        tip_digest: None,
        tip: None,
    };
    if !cfg.continuous_accumulation {
        return Ok(rethink);
    }
    if correct {
        let seq = kb.add_correct(
            NewCorrect {
                question: item.question.clone(),
                hint: item.hint.clone(),
                sql: outcome.final_sql.clone(),
                thought: outcome.thought.clone(),
                db_id: Some(item.db_id.clone()),
            },
            cfg.origin,
        )?;
        rethink.delta = NotebookDelta::AddedCorrect(seq);
        return Ok(rethink);
    }

    let tip = if cfg.info_mode == InfoMode::High {
        let ctx = PromptContext {
            schema_text,
            question: &item.question,
            hint: &item.hint,
            sql: Some(&outcome.first_sql),
            exec_error: outcome.exec_error.as_deref(),
            reflected_sql: outcome.reflected_sql.as_deref(),
            gold_sql: Some(gold_sql),
            ..Default::default()
        };
        let prompt = render(PromptKind::MistakeTip, &ctx)?;
        let mut caller = Caller {
            provider,
            params: &cfg.params,
            tag: branch_tag(item, outcome.correct_rate),
            calls: 0,
            tokens: 0,
            digests: Vec::new(),
        };
        let reply = caller.call(PromptKind::MistakeTip, &prompt);
        rethink.provider_calls = caller.calls;
        rethink.tokens = caller.tokens;
        rethink.tip_digest = caller.digests.pop().map(|(_, d)| d);
        match reply {
            Ok(text) => extract_tip(&text),
            Err(e) => {
                warn!("tip generation failed for {}: {e}; storing mistake without a tip", item.question_id);
                String::new()
            }
        }
    } else {
        String::new()
    };

    let seq = kb.add_mistake(
        NewMistake {
            question: item.question.clone(),
            hint: item.hint.clone(),
            first_sql: outcome.first_sql.clone(),
            exec_error: outcome.exec_error.clone(),
            reflected_sql: outcome.reflected_sql.clone(),
            gold_sql: gold_sql.to_string(),
            tip: tip.clone(),
            db_id: Some(item.db_id.clone()),
        },
        cfg.origin,
    )?;
    rethink.tip = Some(tip);
    info!("{}: mistake #{seq} recorded", item.question_id);
    rethink.delta = NotebookDelta::AddedMistake(seq);
    Ok(rethink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EncoderConfig;
    use crate::llm::{Script, ScriptedProvider};
    use rusqlite::Connection;

    struct Fixture {
        _dir: tempfile::TempDir,
        cfg: PipelineConfig,
        schema: String,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("music");
        std::fs::create_dir_all(&db_dir).unwrap();
        let path = db_dir.join("music.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age INTEGER);
             INSERT INTO singer VALUES (1, 'Ann', 30), (2, 'Bob', 41), (3, 'Cy', 25);",
        )
        .unwrap();
        drop(conn);
        let schema = sql::schema_text(&path).unwrap();
        Fixture {
            cfg: PipelineConfig::new(dir.path()),
            _dir: dir,
            schema,
        }
    }

    fn item(gold: &str) -> TaskItem {
        TaskItem {
            question_id: "q1".into(),
            db_id: "music".into(),
            question: "Names of singers older than 28".into(),
            hint: "older refers to age > 28".into(),
            gold_sql: gold.into(),
            difficulty: Difficulty::Simple,
        }
    }

    fn plan() -> DemonstrationPlan {
        DemonstrationPlan::new(4, 0.5).unwrap()
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::new(EncoderConfig::hashed(64)).unwrap()
    }

    const GOLD: &str = "SELECT name FROM singer WHERE age > 28";

    #[test]
    fn happy_path_skips_reflection() {
        let fx = fixture();
        let p = ScriptedProvider::from_sequence([GOLD, "Filter by age."]);
        let mut kb = kb();
        let out = answer(&item(GOLD), &kb, &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        assert_eq!(out.provider_calls, 2);
        assert_eq!(out.final_sql, out.first_sql);
        assert!(out.reflected_sql.is_none());
        assert_eq!(out.thought, "Filter by age.");

        let r = rethink_update(&out, &item(GOLD), &mut kb, &p, &fx.schema, &fx.cfg).unwrap();
        assert_eq!(r.delta, NotebookDelta::AddedCorrect(1));
        assert!(kb.mistakes().is_empty());
        assert_eq!(kb.correct()[0].thought, "Filter by age.");
    }

    #[test]
    fn execution_error_triggers_one_reflection() {
        let fx = fixture();
        let p = ScriptedProvider::from_sequence([
            "SELECT nme FROM singer WHERE age > 28",
            "I used the name column.",
            &format!("```sql\n{GOLD}\n```"),
        ]);
        let out = answer(&item(GOLD), &kb(), &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        assert_eq!(out.provider_calls, 3);
        assert!(out.exec_error.as_deref().unwrap().contains("no such column"));
        assert_eq!(out.reflected_sql.as_deref(), Some(GOLD));
        assert_eq!(out.final_sql, GOLD);
        assert_eq!(p.count_of(PromptKind::ReflectSql), 1);
    }

    #[test]
    fn prose_reply_becomes_synthetic_failure() {
        let fx = fixture();
        let p = ScriptedProvider::from_sequence(["I don't know.", "Still no idea.", "# Tip: read the schema"]);
        let mut kb = kb();
        let out = answer(&item(GOLD), &kb, &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        assert_eq!(out.first_sql, "");
        assert_eq!(out.final_sql, "");
        assert!(matches!(&out.final_exec, ExecOutcome::Failure { message } if message == NO_SQL_EXTRACTED));
        let r = rethink_update(&out, &item(GOLD), &mut kb, &p, &fx.schema, &fx.cfg).unwrap();
        assert_eq!(r.delta, NotebookDelta::AddedMistake(1));
        assert_eq!(kb.mistakes()[0].tip, "read the schema");
        assert_eq!(kb.mistakes()[0].exec_error.as_deref(), Some(NO_SQL_EXTRACTED));
    }

    #[test]
    fn wrong_rows_go_to_mistakes_with_gold_in_tip_prompt() {
        let fx = fixture();
        let mut script = Script::default();
        script
            .insert("GenerateSql#*", "SELECT name FROM singer")
            .insert("ThoughtProcess#*", "All singers.")
            .insert("MistakeTip#*", "# Tip:\nApply the age filter.");
        let p = ScriptedProvider::new(script);
        let mut kb = kb();
        let out = answer(&item(GOLD), &kb, &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        assert!(out.exec_error.is_none());
        let r = rethink_update(&out, &item(GOLD), &mut kb, &p, &fx.schema, &fx.cfg).unwrap();
        assert!(!r.correct);
        assert_eq!(r.delta, NotebookDelta::AddedMistake(1));
        assert_eq!(r.provider_calls, 1);
        let m = &kb.mistakes()[0];
        assert_eq!(m.tip, "Apply the age filter.");
        assert!(m.exec_error.is_none() && m.reflected_sql.is_none());
        assert_eq!(m.gold_sql, GOLD);
    }

    #[test]
    fn accumulation_off_leaves_notebooks_alone() {
        let fx = fixture();
        let mut cfg = fx.cfg.clone();
        cfg.continuous_accumulation = false;
        let p = ScriptedProvider::from_sequence(["SELECT 1", "t"]);
        let mut kb = kb();
        let out = answer(&item(GOLD), &kb, &plan(), &p, &fx.schema, &cfg).unwrap();
        let r = rethink_update(&out, &item(GOLD), &mut kb, &p, &fx.schema, &cfg).unwrap();
        assert_eq!(r.delta, NotebookDelta::NoUpdate);
        assert!(!r.correct);
        assert!(kb.is_empty());
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn low_information_mode_skips_auxiliary_calls() {
        let fx = fixture();
        let mut cfg = fx.cfg.clone();
        cfg.info_mode = InfoMode::Low;
        let p = ScriptedProvider::from_sequence(["SELECT name FROM singer"]);
        let mut kb = kb();
        let out = answer(&item(GOLD), &kb, &plan(), &p, &fx.schema, &cfg).unwrap();
        assert_eq!(out.provider_calls, 1);
        rethink_update(&out, &item(GOLD), &mut kb, &p, &fx.schema, &cfg).unwrap();
        assert_eq!(p.call_count(), 1);
        assert_eq!(kb.mistakes()[0].tip, "");
    }

    #[test]
    fn invalid_gold_is_not_recorded() {
        let fx = fixture();
        let p = ScriptedProvider::from_sequence([GOLD, "t"]);
        let mut kb = kb();
        let bad = item("SELECT * FROM missing");
        let out = answer(&bad, &kb, &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        let r = rethink_update(&out, &bad, &mut kb, &p, &fx.schema, &fx.cfg).unwrap();
        assert!(!r.gold_valid);
        assert_eq!(r.delta, NotebookDelta::NoUpdate);
        assert!(kb.is_empty());
    }

    #[test]
    fn provider_exhaustion_aborts() {
        let fx = fixture();
        let p = ScriptedProvider::default();
        let err = answer(&item(GOLD), &kb(), &plan(), &p, &fx.schema, &fx.cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Provider(LlmError::ScriptExhausted { .. })));
    }

    #[test]
    fn human_verdicts() {
        let fx = fixture();
        let p = ScriptedProvider::from_sequence(["SELECT name FROM singer", "t", "# Tip: filter"]);
        let mut kb = kb();
        let it = item(GOLD);
        let out = answer(&it, &kb, &plan(), &p, &fx.schema, &fx.cfg).unwrap();
        let r = rethink_with_verdict(&out, &it, &mut kb, &p, &fx.schema, &fx.cfg, &HumanVerdict::Accept).unwrap();
        assert_eq!(r.delta, NotebookDelta::AddedCorrect(1));
        let reject = HumanVerdict::Reject {
            corrected_sql: GOLD.into(),
        };
        let r = rethink_with_verdict(&out, &it, &mut kb, &p, &fx.schema, &fx.cfg, &reject).unwrap();
        assert_eq!(r.delta, NotebookDelta::AddedMistake(1));
        assert_eq!(kb.mistakes()[0].gold_sql, GOLD);
    }

    #[test]
    fn fixed_examples_fill_an_empty_store() {
        let fx = fixture();
        let mut cfg = fx.cfg.clone();
        let embedder = crate::embedding::Embedder::new(EncoderConfig::hashed(64)).unwrap();
        cfg.fixed_examples = vec![CorrectEntry {
            seq: 1,
            question: "How many singers?".into(),
            hint: String::new(),
            sql: "SELECT count(*) FROM singer".into(),
            thought: String::new(),
            origin: Origin::Seed,
            db_id: None,
            embedding: embedder.embed("How many singers?").unwrap(),
        }];
        let p = ScriptedProvider::from_sequence([GOLD, "t"]);
        let out = answer(&item(GOLD), &kb(), &plan(), &p, &fx.schema, &cfg).unwrap();
        assert_eq!(out.demonstrations.correct_picks.len(), 1);
    }
}
