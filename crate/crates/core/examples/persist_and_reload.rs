//! Writes a knowledge base to disk, reads it back and shows the files.

use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::notebook::{KnowledgeBase, NewCorrect, NewMistake, Origin};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut kb = KnowledgeBase::new(EncoderConfig::hashed(8))?;
    kb.add_correct(
        NewCorrect {
            question: "How many singers are there?".into(),
            sql: "SELECT COUNT(*) FROM singer".into(),
            thought: "Count every row of singer.".into(),
            ..Default::default()
        },
        Origin::Seed,
    )?;
    kb.add_mistake(
        NewMistake {
            question: "Oldest singer?".into(),
            first_sql: "SELECT nme FROM singer ORDER BY age DESC LIMIT 1".into(),
            exec_error: Some("no such column: nme".into()),
            reflected_sql: Some("SELECT name FROM singer ORDER BY age DESC LIMIT 1".into()),
            gold_sql: "SELECT name FROM singer ORDER BY age DESC LIMIT 1".into(),
            tip: "Check column names against the schema.".into(),
            ..Default::default()
        },
        Origin::Accumulated,
    )?;
    kb.persist(dir.path())?;

    let back = KnowledgeBase::load(dir.path())?;
    assert_eq!(back, kb);
    for f in ["manifest.json", "correct.jsonl", "mistakes.jsonl"] {
        println!("--- {f}");
        print!("{}", std::fs::read_to_string(dir.path().join(f))?);
    }
    Ok(())
}
