#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sql_notebooks::bench::{self, build_branches, EvalOptions, EvalReport, RunConfig};
use sql_notebooks::consistency::BranchSet;
use sql_notebooks::demo::{self, FixturePaths};
use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::llm::{PromptContext, ScriptedProvider};
use sql_notebooks::notebook::{
    select_demonstrations, DemonstrationPlan, DemonstrationSet, KnowledgeBase, NewCorrect,
    NewMistake, Origin,
};
use sql_notebooks::pipeline::TaskItem;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub paths: FixturePaths,
    pub cfg: RunConfig,
    pub items: Vec<TaskItem>,
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let paths = demo::write_fixture(dir.path()).unwrap();
    let cfg = RunConfig::load(&paths.config).unwrap();
    let items = bench::load_items(&paths.dataset, &paths.db_root).unwrap();
    Fixture {
        dir,
        paths,
        cfg,
        items,
    }
}

pub struct Outcome {
    pub report: EvalReport,
    pub log: Vec<u8>,
    pub branches: BranchSet,
    pub provider: ScriptedProvider,
}

/// Evaluates `items` from empty stores, logging to `log`.
pub fn run_items(cfg: &RunConfig, items: &[TaskItem], log: &Path) -> Outcome {
    let mut branches = build_branches(cfg).unwrap();
    let provider = ScriptedProvider::new(demo::script());
    let report = bench::evaluate(
        items,
        &mut branches,
        &provider,
        &cfg.pipeline_config().unwrap(),
        &EvalOptions {
            log: Some(log.to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap();
    Outcome {
        report,
        log: std::fs::read(log).unwrap(),
        branches,
        provider,
    }
}

pub fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub const SNAPSHOT_SCHEMA: &str = "CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age INTEGER)\n\n\
CREATE TABLE song (id INTEGER PRIMARY KEY, singer_id INTEGER, title TEXT, sales REAL)";

/// Two correct and two mistake demonstrations over a 16-wide hashed store.
pub fn snapshot_demonstrations() -> DemonstrationSet {
    let mut kb = KnowledgeBase::new(EncoderConfig::hashed(16)).unwrap();
    for (q, h, sql, t) in [
        ("How many singers are there?", "", "SELECT COUNT(*) FROM singer", "Count all rows of singer."),
        (
            "List the titles of songs by Ann.",
            "Ann refers to singer.name = 'Ann'",
            "SELECT s.title FROM song s JOIN singer g ON g.id = s.singer_id WHERE g.name = 'Ann'",
            "Join song to singer on singer_id and filter by name.",
        ),
    ] {
        kb.add_correct(
            NewCorrect {
                question: q.into(),
                hint: h.into(),
                sql: sql.into(),
                thought: t.into(),
                db_id: Some("music".into()),
            },
            Origin::Seed,
        )
        .unwrap();
    }
    kb.add_mistake(
        NewMistake {
            question: "Which singer is the oldest?".into(),
            hint: "oldest refers to MAX(age)".into(),
            first_sql: "SELECT nme FROM singer ORDER BY age DESC LIMIT 1".into(),
            exec_error: Some("no such column: nme".into()),
            reflected_sql: Some("SELECT name FROM singer ORDER BY age LIMIT 1".into()),
            gold_sql: "SELECT name FROM singer ORDER BY age DESC LIMIT 1".into(),
            tip: "Check column names against the schema and keep the sort direction.".into(),
            db_id: Some("music".into()),
        },
        Origin::Seed,
    )
    .unwrap();
    kb.add_mistake(
        NewMistake {
            question: "Total sales of songs by singers over 30?".into(),
            hint: "over 30 refers to age > 30".into(),
            first_sql: "SELECT SUM(sales) FROM song".into(),
            gold_sql: "SELECT SUM(s.sales) FROM song s JOIN singer g ON g.id = s.singer_id WHERE g.age > 30".into(),
            tip: "Apply the age filter through a join.".into(),
            db_id: Some("music".into()),
            ..Default::default()
        },
        Origin::Seed,
    )
    .unwrap();
    let query = kb.embed("What are the names of singers older than 40?").unwrap();
    select_demonstrations(&kb, &query, &DemonstrationPlan::new(4, 0.5).unwrap()).unwrap()
}

pub fn snapshot_context(demos: &DemonstrationSet) -> PromptContext<'_> {
    PromptContext {
        schema_text: SNAPSHOT_SCHEMA,
        question: "What are the names of singers older than 40?",
        hint: "older than 40 refers to age > 40",
        demonstrations: Some(demos),
        sql: Some("SELECT name FROM singer WHERE ages > 40"),
        exec_error: Some("no such column: ages"),
        reflected_sql: Some("SELECT name FROM singer WHERE age >= 40"),
        gold_sql: Some("SELECT name FROM singer WHERE age > 40"),
    }
}

pub fn golden_path(kind: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{kind}.txt"))
}

// ---- independent oracles ----

pub const VOCAB: [&str; 14] = [
    "how", "many", "singers", "songs", "older", "than", "average", "age", "list", "names", "count",
    "select", "oldest", "title",
];

pub fn random_question(rng: &mut impl rand::Rng) -> String {
    let n = rng.gen_range(1..=5);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// Feature hashing written out from its definition: lowercase alphanumeric
/// tokens, SHA-256, bucket from bytes 0..8 and sign from bytes 8..16
/// (little-endian), then L2 normalization in f64 stored as f32.
pub fn oracle_hash_embed(text: &str, dim: usize) -> Vec<f32> {
    use sha2::{Digest, Sha256};
    let mut v = vec![0.0f64; dim];
    let lower = text.to_lowercase();
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let d = Sha256::digest(tok.as_bytes());
        let mut w1 = [0u8; 8];
        let mut w2 = [0u8; 8];
        w1.copy_from_slice(&d[..8]);
        w2.copy_from_slice(&d[8..16]);
        let bucket = (u64::from_le_bytes(w1) % dim as u64) as usize;
        v[bucket] += if u64::from_le_bytes(w2) & 1 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| if norm == 0.0 { 0.0 } else { (x / norm) as f32 }).collect()
}

/// Cosine of unit vectors: the plain dot product, summed in f64 in index order.
pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Ranks every entry, then keeps the first `n` ids.
pub fn oracle_top_k(entries: &[(u64, Vec<f32>)], query: &[f32], n: usize) -> Vec<u64> {
    let mut scored: Vec<(f64, u64)> = entries.iter().map(|(id, e)| (oracle_cosine(query, e), *id)).collect();
    // selection sort: slow and obviously right
    let mut out = Vec::new();
    while out.len() < n && !scored.is_empty() {
        let mut best = 0;
        for i in 1..scored.len() {
            let (s, id) = scored[i];
            let (bs, bid) = scored[best];
            if s > bs || (s == bs && id < bid) {
                best = i;
            }
        }
        out.push(scored.remove(best).1);
    }
    out
}

/// (correct, mistake) counts for k slots at `rate` with `c` and `m` entries
/// available: round-half-up target, then unused slots move across.
pub fn oracle_split(k: usize, rate: f64, c: usize, m: usize) -> (usize, usize) {
    let want_c = (k as f64 * rate + 0.5).floor() as usize;
    let want_m = k - want_c;
    let mut take_c = want_c.min(c);
    let mut take_m = want_m.min(m);
    let free_for_m = want_c - take_c;
    let free_for_c = want_m - take_m;
    take_m = (take_m + free_for_m).min(m);
    take_c = (take_c + free_for_c).min(c);
    (take_c, take_m)
}

/// Rank of a rate in the tie-break order 0.5, 1, 0, then others ascending.
pub fn oracle_rate_rank(rate: f64) -> (u8, f64) {
    if rate == 0.5 {
        (0, 0.0)
    } else if rate == 1.0 {
        (1, 0.0)
    } else if rate == 0.0 {
        (2, 0.0)
    } else {
        (3, rate)
    }
}

/// Winning index. `value` is `Some(id)` for a row result (equal ids mean
/// equal rows) and `None` for a failure or timeout.
pub fn oracle_vote(cands: &[(f64, Option<u8>)]) -> usize {
    let size = |i: usize| match cands[i].1 {
        None => 0,
        Some(v) => cands.iter().filter(|c| c.1 == Some(v)).count(),
    };
    let best_size = (0..cands.len()).map(size).max().unwrap();
    let pool: Vec<usize> = (0..cands.len()).filter(|&i| size(i) == best_size).collect();
    let mut best = pool[0];
    for &i in &pool[1..] {
        let (ri, rb) = (oracle_rate_rank(cands[i].0), oracle_rate_rank(cands[best].0));
        if ri.0 < rb.0 || (ri.0 == rb.0 && ri.1 < rb.1) {
            best = i;
        }
    }
    best
}

/// A store with up to `max` entries per notebook, questions drawn from
/// [`VOCAB`] so duplicates (exact score ties) are common.
pub fn random_kb(rng: &mut impl rand::Rng, max: usize, dim: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new(EncoderConfig::hashed(dim)).unwrap();
    let (nc, nm) = (rng.gen_range(0..=max), rng.gen_range(0..=max));
    for i in 0..nc {
        kb.add_correct(
            NewCorrect {
                question: random_question(rng),
                hint: if rng.gen_bool(0.5) { format!("hint {i}") } else { String::new() },
                sql: format!("SELECT {i}"),
                thought: if rng.gen_bool(0.5) { "think \"quoted\"\nnext line".into() } else { String::new() },
                db_id: rng.gen_bool(0.5).then(|| "db".to_string()),
            },
            if rng.gen_bool(0.5) { Origin::Seed } else { Origin::Accumulated },
        )
        .unwrap();
    }
    for i in 0..nm {
        let errored = rng.gen_bool(0.5);
        kb.add_mistake(
            NewMistake {
                question: random_question(rng),
                hint: String::new(),
                first_sql: format!("SELECT bad{i}"),
                exec_error: errored.then(|| format!("no such column: bad{i}")),
                reflected_sql: errored.then(|| format!("SELECT fixed{i}")),
                gold_sql: format!("SELECT {i}"),
                tip: "ünïcode tip ✓".into(),
                db_id: None,
            },
            Origin::Accumulated,
        )
        .unwrap();
    }
    kb
}
