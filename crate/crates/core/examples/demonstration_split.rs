//! How k demonstration slots are divided between the correct and mistake
//! notebooks at different correct rates, including backfill when one
//! notebook runs short.

use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::notebook::{
    select_demonstrations, DemonstrationPlan, KnowledgeBase, NewCorrect, NewMistake, Origin,
};

fn store(correct: usize, mistakes: usize) -> Result<KnowledgeBase, Box<dyn std::error::Error>> {
    let mut kb = KnowledgeBase::new(EncoderConfig::hashed(64))?;
    for i in 0..correct {
        kb.add_correct(
            NewCorrect {
                question: format!("solved question {i}"),
                sql: "SELECT 1".into(),
                ..Default::default()
            },
            Origin::Seed,
        )?;
    }
    for i in 0..mistakes {
        kb.add_mistake(
            NewMistake {
                question: format!("failed question {i}"),
                first_sql: "SELECT 0".into(),
                gold_sql: "SELECT 1".into(),
                ..Default::default()
            },
            Origin::Seed,
        )?;
    }
    Ok(kb)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = 4;
    println!("{:<6} {:<14} {:>7} {:>8}", "rate", "store (c/m)", "correct", "mistake");
    for (c, m) in [(10, 10), (1, 10), (10, 0), (2, 1)] {
        let kb = store(c, m)?;
        let query = kb.embed("question")?;
        for rate in [1.0, 0.75, 0.5, 0.25, 0.0] {
            let plan = DemonstrationPlan::new(k, rate)?;
            let set = select_demonstrations(&kb, &query, &plan)?;
            println!(
                "{:<6} {:<14} {:>7} {:>8}",
                rate,
                format!("{c}/{m}"),
                set.correct_picks.len(),
                set.mistake_picks.len()
            );
        }
    }
    Ok(())
}
