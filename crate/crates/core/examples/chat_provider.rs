//! Sends one generation prompt to a chat-completions endpoint.
//!
//!     OPENAI_API_KEY=... cargo run --example chat_provider -- https://api.openai.com/v1 gpt-4o-mini
//!
//! Without an API key in the environment this only prints the request it
//! would send.

use sql_notebooks::demo;
use sql_notebooks::llm::{
    complete, extract_sql, render, ChatConfig, ChatProvider, CompletionParams, CompletionRequest,
    PromptContext, PromptKind,
};
use sql_notebooks::sql::{database_path, execute, schema_text};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = ChatConfig::default();
    if let Some(endpoint) = args.next() {
        config.endpoint = endpoint;
    }
    if let Some(model) = args.next() {
        config.model = model;
    }

    let dir = tempfile::tempdir()?;
    demo::create_databases(dir.path())?;
    let db = database_path(dir.path(), "school");
    let schema = schema_text(&db)?;
    let q = &demo::QUESTIONS[3];
    let prompt = render(
        PromptKind::GenerateSql,
        &PromptContext {
            schema_text: &schema,
            question: q.question,
            hint: q.hint,
            ..Default::default()
        },
    )?;

    if std::env::var_os(&config.api_key_env).is_none() {
        println!("{} is not set; would POST to {} with model {}:\n", config.api_key_env, config.url(), config.model);
        println!("{prompt}");
        return Ok(());
    }
    let provider = ChatProvider::new(config)?;
    let params = CompletionParams::default();
    let reply = complete(
        &provider,
        &CompletionRequest {
            kind: PromptKind::GenerateSql,
            prompt: &prompt,
            tag: Some("example"),
            params: &params,
        },
    )?;
    let sql = extract_sql(&reply.text).unwrap_or_default();
    println!("SQL: {sql}\ntokens: {}", reply.tokens);
    println!("result: {:?}", execute(&db, &sql, 30_000)?);
    Ok(())
}
