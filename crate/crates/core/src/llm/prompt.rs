use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;
use crate::notebook::{CorrectEntry, DemonstrationSet, MistakeEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    GenerateSql,
    ThoughtProcess,
    ReflectSql,
    MistakeTip,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::GenerateSql,
        PromptKind::ThoughtProcess,
        PromptKind::ReflectSql,
        PromptKind::MistakeTip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::GenerateSql => "GenerateSql",
            PromptKind::ThoughtProcess => "ThoughtProcess",
            PromptKind::ReflectSql => "ReflectSql",
            PromptKind::MistakeTip => "MistakeTip",
        }
    }
}

/// Everything a template may reference. Which optional fields are required
/// depends on the kind.
#[derive(Clone, Copy, Debug, Default)]
pub struct PromptContext<'a> {
    pub schema_text: &'a str,
    pub question: &'a str,
    pub hint: &'a str,
    pub demonstrations: Option<&'a DemonstrationSet>,
    pub sql: Option<&'a str>,
    pub exec_error: Option<&'a str>,
    pub reflected_sql: Option<&'a str>,
    pub gold_sql: Option<&'a str>,
}

const CORRECT_HEADER: &str = "# For your reference, here are some examples of Questions, sql queries, \
and thought processes related to the Question you're working with";

const MISTAKE_HEADER: &str = "# Below are examples of mistakes you've made before that are similar to \
the question you're about to tackle, so please refer to not making the same mistake!";

const SQL_ONLY_INSTRUCTIONS: &str = "In your response, you do not need to mention your intermediate steps.
    Do not include any comments in your response.
    Do not need to start with the symbol ```
    Your SQL code should be concise and efficient.
    You only need to return the result SQLite SQL code
    start from SELECT";

const THOUGHT_INSTRUCTION: &str = "Now, please provide your thought process behind the generation of this \
SQL query. Your explanation should be concise and efficient, focusing on the key reasoning steps.";

const TIP_INSTRUCTION: &str = "Error SQL Query is the result you generate the first time and SQL after \
Reflection is the result you generate again based on the Error information returned by the compiler \
knowing that the first generated result was wrong. Now that both results are known to be wrong, I am \
providing Ground Truth SQL for your reference, please think carefully about why your first two results \
were not correct, please provide a Tip on how to avoid making the same mistake in the future. Note that \
you only need to return the Tip. Please return in the following format:
# Tip:";

const ABSENT: &str = "None";

fn require<'a>(kind: PromptKind, field: &'static str, value: Option<&'a str>) -> Result<&'a str, LlmError> {
    value.ok_or(LlmError::MissingField { kind, field })
}

fn correct_example(out: &mut String, n: usize, e: &CorrectEntry) {
    let _ = write!(
        out,
        "### Example {n}\nQuestion: {}\nHint: {}\nSQL:\n{}\n",
        e.question, e.hint, e.sql
    );
    if !e.thought.is_empty() {
        let _ = write!(out, "Thought process:\n{}\n", e.thought);
    }
}

fn mistake_example(out: &mut String, n: usize, e: &MistakeEntry) {
    let _ = write!(
        out,
        "### Mistake {n}\nQuestion: {}\nHint: {}\nIncorrect SQL:\n{}\n",
        e.question, e.hint, e.first_sql
    );
    if !e.tip.is_empty() {
        let _ = write!(out, "Tip:\n{}\n", e.tip);
    }
    let _ = write!(out, "Correct SQL:\n{}\n", e.gold_sql);
}

/// Correct examples first, then mistakes; an empty side is left out.
fn demonstration_sections(out: &mut String, demos: Option<&DemonstrationSet>) {
    let Some(demos) = demos else { return };
    if !demos.correct_picks.is_empty() {
        out.push_str(CORRECT_HEADER);
        out.push('\n');
        for (i, e) in demos.correct_picks.iter().enumerate() {
            correct_example(out, i + 1, e);
        }
        out.push('\n');
    }
    if !demos.mistake_picks.is_empty() {
        out.push_str(MISTAKE_HEADER);
        out.push('\n');
        for (i, e) in demos.mistake_picks.iter().enumerate() {
            mistake_example(out, i + 1, e);
        }
        out.push('\n');
    }
}

fn block(out: &mut String, title: &str, body: &str) {
    let _ = write!(out, "# {title}\n{body}\n\n");
}

pub fn render(kind: PromptKind, ctx: &PromptContext<'_>) -> Result<String, LlmError> {
    if ctx.question.trim().is_empty() {
        return Err(LlmError::MissingField {
            kind,
            field: "question",
        });
    }
    let mut out = String::new();
    match kind {
        PromptKind::GenerateSql => {
            demonstration_sections(&mut out, ctx.demonstrations);
            block(&mut out, "Schema of the database:", ctx.schema_text);
            let _ = write!(
                out,
                "-- Using valid SQLite and understanding Hint, answer the following questions for the tables provided above.\n\
                 -- {}\n-- {}\n\n\
                 Generate the SQLite for the above question after thinking step by step:\n\n{}\n",
                ctx.question, ctx.hint, SQL_ONLY_INSTRUCTIONS
            );
        }
        PromptKind::ThoughtProcess => {
            let sql = require(kind, "sql", ctx.sql)?;
            block(&mut out, "Schema of the database:", ctx.schema_text);
            block(&mut out, "Question:", ctx.question);
            block(&mut out, "External Knowledge :", ctx.hint);
            block(&mut out, "You just generated the following SQL:", sql);
            out.push_str(THOUGHT_INSTRUCTION);
            out.push('\n');
        }
        PromptKind::ReflectSql => {
            let sql = require(kind, "sql", ctx.sql)?;
            let error = require(kind, "exec_error", ctx.exec_error)?;
            demonstration_sections(&mut out, ctx.demonstrations);
            block(&mut out, "Schema of the database:", ctx.schema_text);
            block(&mut out, "Question:", ctx.question);
            block(&mut out, "External Knowledge :", ctx.hint);
            block(&mut out, "SQL Query:", sql);
            block(&mut out, "Error:", error);
            let _ = write!(
                out,
                "Reflect on the error encountered in the SQL query and provide a corrected SQL query.\n\n{}\n",
                SQL_ONLY_INSTRUCTIONS
            );
        }
        PromptKind::MistakeTip => {
            let sql = require(kind, "sql", ctx.sql)?;
            let gold = require(kind, "gold_sql", ctx.gold_sql)?;
            block(&mut out, "Schema of the database:", ctx.schema_text);
            block(&mut out, "Question:", ctx.question);
            block(&mut out, "External Knowledge :", ctx.hint);
            block(&mut out, "Error SQL Query:", sql);
            block(&mut out, "Error information:", ctx.exec_error.unwrap_or(ABSENT));
            block(&mut out, "SQL after Reflection:", ctx.reflected_sql.unwrap_or(ABSENT));
            block(&mut out, "Ground Truth SQL:", gold);
            out.push_str(TIP_INSTRUCTION);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Hex SHA-256 of a rendered prompt; the stable identity used in run logs
/// and scripts.
pub fn prompt_digest(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
