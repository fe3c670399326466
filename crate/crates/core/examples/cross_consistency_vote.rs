//! Three branches (rates 1, 0.5, 0) answer the two fixture questions where
//! they disagree, then vote on execution results.

use sql_notebooks::consistency::{run, BranchSet};
use sql_notebooks::demo;
use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::llm::ScriptedProvider;
use sql_notebooks::pipeline::PipelineConfig;
use sql_notebooks::sql::{database_path, schema_text};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    demo::create_databases(dir.path())?;
    let cfg = PipelineConfig::new(dir.path());
    let provider = ScriptedProvider::new(demo::script());
    let mut branches = BranchSet::canonical(4, &EncoderConfig::default())?;

    for item in demo::items().into_iter().filter(|i| i.question_id == "8" || i.question_id == "11") {
        let schema = schema_text(&database_path(dir.path(), &item.db_id))?;
        let result = run(&item, &mut branches, &provider, &schema, &cfg)?;
        println!("question {}: {}", item.question_id, item.question);
        for (o, r) in result.answer.branch_outcomes.iter().zip(&result.rethinks) {
            let correct = r.as_ref().map(|r| r.correct);
            println!("  rate {:<4} correct={:?}  {}", o.correct_rate, correct, o.final_sql.replace('\n', " "));
        }
        println!(
            "  groups {:?} -> rate {} chosen\n",
            result.answer.vote_group_sizes, result.answer.chosen_rate
        );
    }
    Ok(())
}
