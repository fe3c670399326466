//! Runs the bundled twelve-question fixture end to end with the scripted
//! provider and prints the EX table.
//!
//!     cargo run --example fixture_benchmark [-- <out dir>]
//!
//! With an output directory the fixture files, run log, report and final
//! notebooks are kept there, ready for `sqlnb report` or `sqlnb kb`.

use std::path::PathBuf;

use sql_notebooks::bench::{build_branches, evaluate, persist_branches, EvalOptions, RunConfig};
use sql_notebooks::demo;
use sql_notebooks::llm::{PromptKind, ScriptedProvider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp;
    let out = match std::env::args().nth(1) {
        Some(dir) => PathBuf::from(dir),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let paths = demo::write_fixture(&out)?;
    let cfg = RunConfig::load(&paths.config)?;
    let items = sql_notebooks::bench::load_items(&paths.dataset, &paths.db_root)?;
    let provider = ScriptedProvider::new(demo::script());
    let mut branches = build_branches(&cfg)?;
    let opts = EvalOptions {
        log: Some(out.join("run.jsonl")),
        ..Default::default()
    };
    let report = evaluate(&items, &mut branches, &provider, &cfg.pipeline_config()?, &opts)?;
    persist_branches(&out.join("notebooks"), &branches)?;
    std::fs::write(out.join("report.json"), report.to_json())?;

    print!("{}", report.render_table());
    for kind in PromptKind::ALL {
        println!("{:<15} {:>3} calls", kind.name(), provider.count_of(kind));
    }
    for (i, plan) in branches.plans().iter().enumerate() {
        let kb = branches.kb(i);
        println!(
            "rate {:<4} {} correct, {} mistakes",
            plan.correct_rate,
            kb.correct().len(),
            kb.mistakes().len()
        );
    }
    Ok(())
}
