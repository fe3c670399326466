use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::pipeline::Difficulty;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub question_id: String,
    pub difficulty: Difficulty,
    pub correct: bool,
    pub chosen_rate: Option<f64>,
    pub aborted: bool,
    pub gold_valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub count: usize,
    pub correct: usize,
    /// Percentage rounded to two decimals.
    pub ex: f64,
}

impl Bucket {
    fn new(label: &str, count: usize, correct: usize) -> Self {
        let ex = if count == 0 {
            0.0
        } else {
            (10_000.0 * correct as f64 / count as f64).round() / 100.0
        };
        Bucket {
            label: label.to_string(),
            count,
            correct,
            ex,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub provider_calls: u64,
    pub tokens: u64,
    pub calls_by_kind: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub buckets: Vec<Bucket>,
    pub total: Bucket,
    pub counters: Counters,
    pub verdicts: Vec<ItemVerdict>,
}

impl EvalReport {
    pub fn from_verdicts(verdicts: Vec<ItemVerdict>, counters: Counters) -> Self {
        let buckets = Difficulty::ALL
            .iter()
            .map(|d| {
                let of: Vec<&ItemVerdict> = verdicts.iter().filter(|v| v.difficulty == *d).collect();
                Bucket::new(d.label(), of.len(), of.iter().filter(|v| v.correct).count())
            })
            .collect();
        let total = Bucket::new(
            "total",
            verdicts.len(),
            verdicts.iter().filter(|v| v.correct).count(),
        );
        EvalReport {
            buckets,
            total,
            counters,
            verdicts,
        }
    }

    pub fn bucket(&self, difficulty: Difficulty) -> &Bucket {
        self.buckets
            .iter()
            .find(|b| b.label == difficulty.label())
            .expect("all difficulty buckets present")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text EX table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>7} {:>8} {:>7}", "difficulty", "count", "correct", "EX");
        for b in self.buckets.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(out, "{:<12} {:>7} {:>8} {:>7.2}", b.label, b.count, b.correct, b.ex);
        }
        let _ = writeln!(
            out,
            "provider calls: {}  tokens: {}",
            self.counters.provider_calls, self.counters.tokens
        );
        out
    }
}
