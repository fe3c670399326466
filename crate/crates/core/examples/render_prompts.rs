//! Prints the four prompt kinds for one fixture question, with one
//! demonstration from each notebook.

use sql_notebooks::demo;
use sql_notebooks::embedding::EncoderConfig;
use sql_notebooks::llm::{render, PromptContext, PromptKind};
use sql_notebooks::notebook::{
    select_demonstrations, DemonstrationPlan, KnowledgeBase, NewCorrect, NewMistake, Origin,
};
use sql_notebooks::sql::{database_path, schema_text};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    demo::create_databases(dir.path())?;
    let schema = schema_text(&database_path(dir.path(), "shop"))?;

    let mut kb = KnowledgeBase::new(EncoderConfig::default())?;
    kb.add_correct(
        NewCorrect {
            question: "How many products are in the Toys category?".into(),
            hint: "Toys refers to category = 'Toys'".into(),
            sql: "SELECT COUNT(*) FROM product WHERE category = 'Toys'".into(),
            thought: "Count rows of product filtered on category.".into(),
            db_id: Some("shop".into()),
        },
        Origin::Seed,
    )?;
    kb.add_mistake(
        NewMistake {
            question: "How many orders include more than two items?".into(),
            hint: "more than two refers to qty > 2".into(),
            first_sql: "SELECT COUNT(*) FROM orders WHERE qty >= 2".into(),
            gold_sql: "SELECT COUNT(*) FROM orders WHERE qty > 2".into(),
            tip: "\"More than\" is strict.".into(),
            db_id: Some("shop".into()),
            ..Default::default()
        },
        Origin::Seed,
    )?;

    let q = &demo::QUESTIONS[5];
    let demos = select_demonstrations(&kb, &kb.embed(q.question)?, &DemonstrationPlan::new(2, 0.5)?)?;
    let first = "SELECT p.category, SUM(o.quantity) FROM orders o JOIN product p ON o.product_id = p.id GROUP BY p.category";
    let ctx = PromptContext {
        schema_text: &schema,
        question: q.question,
        hint: q.hint,
        demonstrations: Some(&demos),
        sql: Some(first),
        exec_error: Some("no such column: o.quantity"),
        reflected_sql: Some(q.gold),
        gold_sql: Some(q.gold),
    };
    for kind in PromptKind::ALL {
        println!("==================== {} ====================", kind.name());
        println!("{}", render(kind, &ctx)?);
    }
    Ok(())
}
