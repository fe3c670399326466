//! One question through one branch: generate, explain, execute, reflect on
//! the error, then file the result into the notebooks.

use sql_notebooks::demo;
use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::llm::ScriptedProvider;
use sql_notebooks::notebook::{DemonstrationPlan, KnowledgeBase};
use sql_notebooks::pipeline::{answer, rethink_update, PipelineConfig};
use sql_notebooks::sql::{database_path, schema_text};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    demo::create_databases(dir.path())?;
    let cfg = PipelineConfig::new(dir.path());
    let provider = ScriptedProvider::new(demo::script());
    let mut kb = KnowledgeBase::new(EncoderConfig::default())?;
    let plan = DemonstrationPlan::new(4, 0.5)?;

    // question 5 starts with a bad column name; question 6 returns wrong rows
    for item in demo::items().into_iter().filter(|i| i.question_id == "5" || i.question_id == "6") {
        let schema = schema_text(&database_path(dir.path(), &item.db_id))?;
        let out = answer(&item, &kb, &plan, &provider, &schema, &cfg)?;
        println!("question {}: {}", item.question_id, item.question);
        println!("  first SQL:  {}", out.first_sql);
        if let Some(err) = &out.exec_error {
            println!("  error:      {err}");
            println!("  reflected:  {}", out.final_sql);
        }
        let r = rethink_update(&out, &item, &mut kb, &provider, &schema, &cfg)?;
        println!("  correct: {}  notebook update: {:?}  calls: {}", r.correct, r.delta, out.provider_calls + r.provider_calls);
    }
    for m in kb.mistakes() {
        println!("mistake #{} tip: {}", m.seq, m.tip);
    }
    Ok(())
}
