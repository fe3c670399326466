//! Hash embeddings and nearest-question search over a correct notebook.
//!
//!     cargo run --example embed_and_search -- "how many pupils are enrolled"

use sql_notebooks::embedding::{cosine_similarity, EncoderConfig};
use sql_notebooks::notebook::{top_k, KnowledgeBase, NewCorrect, Origin};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "How many students are in grade 10?".to_string());

    let mut kb = KnowledgeBase::new(EncoderConfig::default())?;
    for (q, sql) in [
        ("How many students are there?", "SELECT COUNT(*) FROM student"),
        ("List the names of students in grade 10.", "SELECT name FROM student WHERE grade = 10"),
        ("What is the most expensive product?", "SELECT name FROM product ORDER BY price DESC LIMIT 1"),
        ("How many loans are recorded?", "SELECT COUNT(*) FROM loan"),
        ("Which teacher has the largest class?", "SELECT teacher FROM class LIMIT 1"),
    ] {
        kb.add_correct(
            NewCorrect {
                question: q.into(),
                sql: sql.into(),
                ..Default::default()
            },
            Origin::Seed,
        )?;
    }

    let q = kb.embed(&query)?;
    println!("query: {query}");
    for entry in top_k(kb.correct(), &q, 3)? {
        let score = cosine_similarity(&q, &entry.embedding)?;
        println!("  #{} {score:.4}  {}", entry.seq, entry.question);
    }
    Ok(())
}
