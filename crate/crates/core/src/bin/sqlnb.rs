use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sql_notebooks::bench::{
    self, branch_dir, build_branches, build_provider, load_branches, load_items, persist_branches,
    report_from_log, select_subset, EvalOptions, InitStrategy, ProviderConfig, RunConfig,
};
use sql_notebooks::consistency::{self, BranchSet};
use sql_notebooks::embedding::EncoderMode;
use sql_notebooks::notebook::{KnowledgeBase, MANIFEST_FILE};
use sql_notebooks::pipeline::{Difficulty, InfoMode, TaskItem};
use sql_notebooks::sql::{self, database_path, ExecOutcome};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "sqlnb", version, about = "Text-to-SQL with correct and mistake notebooks")]
struct Cli {
    /// TOML run config; defaults to $SQLNB_CONFIG, then ./sqlnb.toml if present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build notebooks from a sample of training pairs.
    Seed {
        #[arg(long)]
        train: PathBuf,
        /// Database root for the training file (defaults to the config's).
        #[arg(long)]
        train_db_root: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        /// Where to write the notebook directories.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sample_seed: Option<u64>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate a dataset and write a run log, a report and the final notebooks.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for run.jsonl, report.json, report.txt and notebooks/.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// File with one question id per line; only those items are run.
        #[arg(long)]
        ids: Option<PathBuf>,
        /// Continue an interrupted run in --out.
        #[arg(long)]
        resume: bool,
        /// Stop after this many items.
        #[arg(long)]
        limit: Option<usize>,
        /// empty | preloaded:<dir> | seed:<n>:<train file>
        #[arg(long)]
        init: Option<String>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Answer one question against a database using existing notebooks.
    Ask {
        #[arg(long)]
        db_id: String,
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "")]
        hint: String,
        /// Notebook root holding one directory per rate.
        #[arg(long)]
        kb: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Inspect notebook directories.
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Re-render a run log as an EX table.
    Report {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum KbAction {
    /// Entry counts and encoder per store.
    Stats { dir: PathBuf },
    /// Print every entry as JSON, without embeddings.
    Dump { dir: PathBuf },
    /// Check record order, dimensions and (for hashed stores) embeddings.
    Verify { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Info {
    High,
    Low,
}

#[derive(Args, Default)]
struct RunFlags {
    /// Comma-separated correct rates, e.g. 1,0.5,0 or a single rate.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    accumulation: Option<OnOff>,
    #[arg(long, value_enum)]
    info_mode: Option<Info>,
    #[arg(long)]
    db_root: Option<PathBuf>,
    /// Use a scripted provider from this file instead of the configured one.
    #[arg(long)]
    script: Option<PathBuf>,
    /// One store shared by every rate.
    #[arg(long)]
    shared_kb: bool,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(r) = &self.rates {
            cfg.rates = r.clone();
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(a) = self.accumulation {
            cfg.continuous_accumulation = matches!(a, OnOff::On);
        }
        if let Some(m) = self.info_mode {
            cfg.info_mode = match m {
                Info::High => InfoMode::High,
                Info::Low => InfoMode::Low,
            };
        }
        if let Some(d) = &self.db_root {
            cfg.db_root = d.clone();
        }
        if let Some(s) = &self.script {
            cfg.provider = ProviderConfig::Scripted { script: s.clone() };
        }
        if self.shared_kb {
            cfg.shared_kb = true;
        }
        if let Some(t) = self.timeout_ms {
            cfg.timeout_ms = t;
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let from_env = std::env::var_os("SQLNB_CONFIG").map(PathBuf::from);
    let default = Path::new("sqlnb.toml");
    match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => Ok(RunConfig::load(&p)?),
        None if default.exists() => Ok(RunConfig::load(default)?),
        None => Ok(RunConfig::default()),
    }
}

fn parse_init(s: &str) -> Result<InitStrategy> {
    let parts: Vec<&str> = s.splitn(3, ':').collect();
    match parts.as_slice() {
        ["empty"] => Ok(InitStrategy::Empty),
        ["preloaded", dir] => Ok(InitStrategy::Preloaded { dir: dir.into() }),
        ["seed", n, train] => Ok(InitStrategy::SeedN {
            n: n.parse()?,
            train: train.into(),
            train_db_root: None,
        }),
        _ => Err(format!("bad --init {s:?}; expected empty, preloaded:<dir> or seed:<n>:<file>").into()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn cmd_seed(
    cfg: &RunConfig,
    train: &Path,
    train_db_root: Option<&Path>,
    n: usize,
    out: &Path,
) -> Result<BranchSet> {
    let mut pcfg = cfg.pipeline_config()?;
    if let Some(root) = train_db_root {
        pcfg.db_root = root.to_path_buf();
    }
    let items = load_items(train, &pcfg.db_root)?;
    let provider = build_provider(&cfg.provider)?;
    let mut branches = build_branches(cfg)?;
    let summary = bench::seed(&items, n, &mut branches, provider.as_ref(), &pcfg, cfg.seed_sample_seed)?;
    persist_branches(out, &branches)?;
    println!(
        "seeded {} items ({} failed) into {}",
        summary.sampled.len(),
        summary.failed.len(),
        out.display()
    );
    for i in 0..branches.len() {
        let kb = branches.kb(i);
        println!(
            "  {}: {} correct, {} mistakes",
            branch_dir(out, &branches, i).display(),
            kb.correct().len(),
            kb.mistakes().len()
        );
    }
    Ok(branches)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    ids: Option<&Path>,
    resume: bool,
    limit: Option<usize>,
) -> Result<()> {
    let pcfg = cfg.pipeline_config()?;
    let mut items = load_items(dataset, &cfg.db_root)?;
    if let Some(ids) = ids {
        items = select_subset(items, &std::fs::read_to_string(ids)?);
    }
    let mut branches = match &cfg.init {
        InitStrategy::Empty => build_branches(cfg)?,
        InitStrategy::Preloaded { dir } => load_branches(dir, cfg)?,
        InitStrategy::SeedN {
            n,
            train,
            train_db_root,
        } => {
            // the seeded snapshot is the starting state a resumed run replays onto
            let seeded = out.join("seeded");
            if resume && seeded.exists() {
                load_branches(&seeded, cfg)?
            } else {
                cmd_seed(cfg, train, train_db_root.as_deref(), *n, &seeded)?
            }
        }
    };
    let provider = build_provider(&cfg.provider)?;
    let opts = EvalOptions {
        log: Some(out.join("run.jsonl")),
        resume,
        limit,
    };
    let report = bench::evaluate(&items, &mut branches, provider.as_ref(), &pcfg, &opts)?;
    write(&out.join("report.json"), &report.to_json())?;
    let table = report.render_table();
    write(&out.join("report.txt"), &table)?;
    if cfg.continuous_accumulation {
        persist_branches(&out.join("notebooks"), &branches)?;
    }
    print!("{table}");
    info!("outputs in {}", out.display());
    Ok(())
}

fn cmd_ask(cfg: &RunConfig, db_id: &str, question: &str, hint: &str, kb: &Path) -> Result<()> {
    let pcfg = cfg.pipeline_config()?;
    let branches = load_branches(kb, cfg)?;
    let provider = build_provider(&cfg.provider)?;
    let db_file = database_path(&cfg.db_root, db_id);
    let schema = sql::schema_text(&db_file)?;
    let item = TaskItem {
        question_id: "ask".into(),
        db_id: db_id.into(),
        question: question.into(),
        hint: hint.into(),
        gold_sql: String::new(),
        difficulty: Difficulty::Simple,
    };
    let answer = consistency::ask(&item, &branches, provider.as_ref(), &schema, &pcfg)?;
    if answer.aborted.iter().all(Option::is_some) {
        let first = answer.aborted[0].as_deref().unwrap_or_default();
        return Err(format!("every branch failed; first error: {first}").into());
    }
    println!("{}", answer.chosen_sql);
    match answer.final_exec() {
        ExecOutcome::Rows(r) => eprintln!(
            "rate {} chosen; {} rows ({} distinct); vote groups {:?}",
            answer.chosen_rate,
            r.original_row_count,
            r.len(),
            answer.vote_group_sizes
        ),
        other => eprintln!(
            "rate {} chosen; execution: {}",
            answer.chosen_rate,
            other.error_message(pcfg.timeout_ms).unwrap_or_default()
        ),
    }
    Ok(())
}

/// A single store, or every store one level below `dir`.
fn stores(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).exists())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(format!("no notebook store in {}", dir.display()).into());
    }
    Ok(found)
}

fn cmd_kb(action: &KbAction) -> Result<ExitCode> {
    match action {
        KbAction::Stats { dir } => {
            for s in stores(dir)? {
                let kb = KnowledgeBase::load(&s)?;
                let m = kb.manifest();
                println!(
                    "{}: {} correct, {} mistakes, encoder {:?} (dimension {})",
                    s.display(),
                    m.correct_count,
                    m.mistake_count,
                    kb.encoder().mode,
                    kb.encoder().dimension
                );
            }
        }
        KbAction::Dump { dir } => {
            for s in stores(dir)? {
                let kb = KnowledgeBase::load(&s)?;
                let store = s.display().to_string();
                for e in kb.correct() {
                    let mut v = serde_json::to_value(e)?;
                    v["notebook"] = "correct".into();
                    v["store"] = store.clone().into();
                    v.as_object_mut().map(|o| o.remove("embedding"));
                    println!("{v}");
                }
                for e in kb.mistakes() {
                    let mut v = serde_json::to_value(e)?;
                    v["notebook"] = "mistake".into();
                    v["store"] = store.clone().into();
                    v.as_object_mut().map(|o| o.remove("embedding"));
                    println!("{v}");
                }
            }
        }
        KbAction::Verify { dir } => {
            let mut bad = 0usize;
            for s in stores(dir)? {
                let kb = match KnowledgeBase::load(&s) {
                    Ok(kb) => kb,
                    Err(e) => {
                        println!("FAIL {}: {e}", s.display());
                        bad += 1;
                        continue;
                    }
                };
                let mut drift = 0usize;
                if kb.encoder().mode == EncoderMode::DeterministicHash {
                    let questions = kb
                        .correct()
                        .iter()
                        .map(|e| (&e.question, &e.embedding))
                        .chain(kb.mistakes().iter().map(|e| (&e.question, &e.embedding)));
                    for (q, emb) in questions {
                        if &kb.embed(q)? != emb {
                            drift += 1;
                        }
                    }
                }
                if drift > 0 {
                    println!("FAIL {}: {drift} embeddings differ from their questions", s.display());
                    bad += 1;
                } else {
                    println!("ok   {}: {} entries", s.display(), kb.len());
                }
            }
            if bad > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Kb { action } => return cmd_kb(action),
        Command::Report { log, json } => {
            let report = report_from_log(log)?;
            if *json {
                print!("{}", report.to_json());
            } else {
                print!("{}", report.render_table());
            }
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Seed {
            train,
            train_db_root,
            n,
            out,
            sample_seed,
            run,
        } => {
            run.apply(&mut cfg);
            if let Some(s) = sample_seed {
                cfg.seed_sample_seed = *s;
            }
            cfg.validate()?;
            cmd_seed(&cfg, train, train_db_root.as_deref(), *n, out)?;
        }
        Command::Eval {
            dataset,
            out,
            ids,
            resume,
            limit,
            init,
            run,
        } => {
            run.apply(&mut cfg);
            if let Some(i) = init {
                cfg.init = parse_init(i)?;
            }
            cfg.validate()?;
            cmd_eval(&cfg, dataset, out, ids.as_deref(), *resume, *limit)?;
        }
        Command::Ask {
            db_id,
            question,
            hint,
            kb,
            run,
        } => {
            run.apply(&mut cfg);
            cfg.validate()?;
            cmd_ask(&cfg, db_id, question, hint, kb)?;
        }
        Command::Kb { .. } | Command::Report { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
