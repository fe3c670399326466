use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use super::runlog::{report_from_items, CompletedItem, RunLog};
use super::BenchError;
use crate::consistency::{self, BranchSet, CANONICAL_RATES};
use crate::embedding::{EncoderConfig, Embedder};
use crate::llm::{ChatConfig, ChatProvider, CompletionParams, CompletionProvider, ScriptedProvider};
use crate::notebook::{
    load_fixed_examples, DemonstrationPlan, KnowledgeBase, NewCorrect, NewMistake, Origin,
};
use crate::pipeline::{rate_label, InfoMode, NotebookDelta, PipelineConfig, TaskItem};
use crate::sql::{self, database_path, outcomes_equal, ExecOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    Empty,
    /// Seed from `n` items of a training file before evaluating.
    SeedN {
        n: usize,
        train: PathBuf,
        #[serde(default)]
        train_db_root: Option<PathBuf>,
    },
    /// Start from notebook directories written by an earlier run.
    Preloaded { dir: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted { script: PathBuf },
    Chat(ChatConfig),
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn CompletionProvider>, BenchError> {
    Ok(match cfg {
        ProviderConfig::Scripted { script } => Box::new(ScriptedProvider::load(script)?),
        ProviderConfig::Chat(chat) => Box::new(ChatProvider::new(chat.clone())?),
    })
}

/// Run settings, normally read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub rates: Vec<f64>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_ms: u64,
    pub info_mode: InfoMode,
    pub continuous_accumulation: bool,
    /// One store for every rate instead of one per rate.
    pub shared_kb: bool,
    pub init: InitStrategy,
    pub seed_sample_seed: u64,
    pub db_root: PathBuf,
    pub encoder: EncoderConfig,
    pub provider: ProviderConfig,
    pub fixed_examples: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = CompletionParams::default();
        RunConfig {
            k: 4,
            rates: CANONICAL_RATES.to_vec(),
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
            timeout_ms: sql::DEFAULT_TIMEOUT_MS,
            info_mode: InfoMode::High,
            continuous_accumulation: true,
            shared_kb: false,
            init: InitStrategy::Empty,
            seed_sample_seed: 42,
            db_root: PathBuf::from("data/dev_databases"),
            encoder: EncoderConfig::default(),
            provider: ProviderConfig::Chat(ChatConfig::default()),
            fixed_examples: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.rates.is_empty() {
            return Err(BenchError::Config("at least one rate is required".into()));
        }
        for r in &self.rates {
            DemonstrationPlan::new(self.k, *r)?;
        }
        self.params()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn plans(&self) -> Result<Vec<DemonstrationPlan>, BenchError> {
        self.rates
            .iter()
            .map(|r| DemonstrationPlan::new(self.k, *r).map_err(BenchError::from))
            .collect()
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, BenchError> {
        let mut p = PipelineConfig::new(&self.db_root);
        p.timeout_ms = self.timeout_ms;
        p.info_mode = self.info_mode;
        p.continuous_accumulation = self.continuous_accumulation;
        p.params = self.params();
        if let Some(path) = &self.fixed_examples {
            let embedder = Embedder::new(self.encoder.clone()).map_err(crate::notebook::NotebookError::from)?;
            p.fixed_examples = load_fixed_examples(path, &embedder)?;
        }
        Ok(p)
    }
}

/// Empty stores laid out as the config asks.
pub fn build_branches(cfg: &RunConfig) -> Result<BranchSet, BenchError> {
    let plans = cfg.plans()?;
    let set = if cfg.shared_kb {
        BranchSet::shared(plans, KnowledgeBase::new(cfg.encoder.clone())?)?
    } else {
        let branches = plans
            .into_iter()
            .map(|p| Ok((p, KnowledgeBase::new(cfg.encoder.clone())?)))
            .collect::<Result<Vec<_>, BenchError>>()?;
        BranchSet::per_branch(branches)?
    };
    Ok(set)
}

/// Directory of branch `i` under `root`: `cr-<rate>`, or `shared` when all
/// branches use one store.
pub fn branch_dir(root: &Path, branches: &BranchSet, i: usize) -> PathBuf {
    if branches.is_shared() {
        root.join("shared")
    } else {
        root.join(format!("cr-{}", rate_label(branches.plans()[i].correct_rate)))
    }
}

/// Reads one store per branch from `root`. Every directory must exist.
pub fn load_branches(root: &Path, cfg: &RunConfig) -> Result<BranchSet, BenchError> {
    let mut set = build_branches(cfg)?;
    for i in 0..set.len() {
        let dir = branch_dir(root, &set, i);
        let kb = KnowledgeBase::load(&dir)?;
        if kb.encoder() != &cfg.encoder {
            return Err(crate::notebook::NotebookError::EncoderMismatch {
                stored: kb.encoder().clone(),
                requested: cfg.encoder.clone(),
            }
            .into());
        }
        *set.kb_mut(i) = kb;
    }
    Ok(set)
}

pub fn persist_branches(root: &Path, branches: &BranchSet) -> Result<(), BenchError> {
    for i in 0..branches.len() {
        branches.kb(i).persist(&branch_dir(root, branches, i))?;
        if branches.is_shared() {
            break;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SeedSummary {
    /// Sampled ids, in the order they were processed.
    pub sampled: Vec<String>,
    /// Items whose run failed outright.
    pub failed: Vec<String>,
}

/// Grows the notebooks from `n` sampled training items.
///
/// Sampling is deterministic in `sample_seed`; the sampled items are then
/// processed in file order with accumulation forced on.
pub fn seed(
    train_items: &[TaskItem],
    n: usize,
    branches: &mut BranchSet,
    provider: &dyn CompletionProvider,
    cfg: &PipelineConfig,
    sample_seed: u64,
) -> Result<SeedSummary, BenchError> {
    if n > train_items.len() {
        return Err(BenchError::Config(format!(
            "cannot seed {n} items from a file of {}",
            train_items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut picked = rand::seq::index::sample(&mut rng, train_items.len(), n).into_vec();
    picked.sort_unstable();

    let mut cfg = cfg.clone();
    cfg.continuous_accumulation = true;
    cfg.origin = Origin::Seed;
    let mut summary = SeedSummary::default();
    let mut schemas = SchemaCache::default();
    for idx in picked {
        let item = &train_items[idx];
        summary.sampled.push(item.question_id.clone());
        let result = schemas
            .get(&cfg.db_root, &item.db_id)
            .and_then(|schema| consistency::run(item, branches, provider, &schema, &cfg).map_err(BenchError::from));
        match result {
            Ok(run) => {
                for (b, a) in run.answer.aborted.iter().enumerate() {
                    if let Some(reason) = a {
                        warn!("seed {}: branch {b} aborted: {reason}", item.question_id);
                    }
                }
            }
            Err(e) => {
                warn!("seed {}: {e}", item.question_id);
                summary.failed.push(item.question_id.clone());
            }
        }
    }
    info!("seeded from {} items ({} failed)", summary.sampled.len(), summary.failed.len());
    Ok(summary)
}

#[derive(Default)]
struct SchemaCache(HashMap<String, String>);

impl SchemaCache {
    fn get(&mut self, db_root: &Path, db_id: &str) -> Result<String, BenchError> {
        if let Some(s) = self.0.get(db_id) {
            return Ok(s.clone());
        }
        let s = sql::schema_text(&database_path(db_root, db_id)).map_err(crate::pipeline::PipelineError::from)?;
        self.0.insert(db_id.to_string(), s.clone());
        Ok(s)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Where to append the run log; `None` keeps the run in memory.
    pub log: Option<PathBuf>,
    /// Continue the log at `log` instead of starting over.
    pub resume: bool,
    /// Stop once this many items (including resumed ones) are done.
    pub limit: Option<usize>,
}

/// Evaluates `items` in order, scoring each final answer against the gold
/// query's execution.
///
/// With `opts.resume`, items already committed to the log are not run
/// again: their notebook updates are replayed from the log onto
/// `branches`, which must therefore be in the state the original run
/// started from.
pub fn evaluate(
    items: &[TaskItem],
    branches: &mut BranchSet,
    provider: &dyn CompletionProvider,
    cfg: &PipelineConfig,
    opts: &EvalOptions,
) -> Result<EvalReport, BenchError> {
    let (mut log, mut done) = match (&opts.log, opts.resume) {
        (Some(path), true) => {
            let (log, done) = RunLog::resume(path)?;
            (Some(log), done)
        }
        (Some(path), false) => (Some(RunLog::create(path)?), Vec::new()),
        (None, _) => (None, Vec::new()),
    };
    if !done.is_empty() {
        info!("resuming after {} logged items", done.len());
        replay(items, &done, branches, cfg)?;
    }

    let end = opts.limit.map_or(items.len(), |l| l.min(items.len()));
    let mut schemas = SchemaCache::default();
    for item in items.iter().take(end).skip(done.len()) {
        let completed = evaluate_item(item, branches, provider, cfg, &mut schemas);
        if let Some(err) = &completed.item.error {
            warn!("{}: counted incorrect: {err}", item.question_id);
        }
        if let Some(log) = log.as_mut() {
            log.append(&completed)?;
        }
        done.push(completed);
    }
    Ok(report_from_items(&done))
}

fn evaluate_item(
    item: &TaskItem,
    branches: &mut BranchSet,
    provider: &dyn CompletionProvider,
    cfg: &PipelineConfig,
    schemas: &mut SchemaCache,
) -> CompletedItem {
    let schema = match schemas.get(&cfg.db_root, &item.db_id) {
        Ok(s) => s,
        Err(e) => return CompletedItem::failed(item, e.to_string()),
    };
    let gold = match sql::execute(&database_path(&cfg.db_root, &item.db_id), &item.gold_sql, cfg.timeout_ms) {
        Ok(g) => g,
        Err(e) => return CompletedItem::failed(item, e.to_string()),
    };
    // a run that fails part-way must not leave half its updates behind
    let before = branches.clone();
    match consistency::run(item, branches, provider, &schema, cfg) {
        Ok(run) => {
            let gold_valid = gold.rows().is_some();
            let correct = gold_valid && outcomes_equal(run.answer.final_exec(), &gold);
            CompletedItem::from_run(item, &run, correct, gold_valid)
        }
        Err(e) => {
            *branches = before;
            CompletedItem::failed(item, e.to_string())
        }
    }
}

fn replay(
    items: &[TaskItem],
    done: &[CompletedItem],
    branches: &mut BranchSet,
    cfg: &PipelineConfig,
) -> Result<(), BenchError> {
    if done.len() > items.len() {
        return Err(BenchError::ResumeMismatch(format!(
            "log has {} items, dataset only {}",
            done.len(),
            items.len()
        )));
    }
    for (item, c) in items.iter().zip(done) {
        if c.item.question_id != item.question_id {
            return Err(BenchError::ResumeMismatch(format!(
                "log item {} where the dataset has {}",
                c.item.question_id, item.question_id
            )));
        }
        if c.branches.is_empty() {
            continue;
        }
        if c.branches.len() != branches.len() {
            return Err(BenchError::ResumeMismatch(format!(
                "{}: logged {} branches, configured {}",
                item.question_id,
                c.branches.len(),
                branches.len()
            )));
        }
        for (i, b) in c.branches.iter().enumerate() {
            if b.rate != branches.plans()[i].correct_rate {
                return Err(BenchError::ResumeMismatch(format!(
                    "{}: branch {i} logged at rate {}, configured {}",
                    item.question_id,
                    b.rate,
                    branches.plans()[i].correct_rate
                )));
            }
            let (expected, got) = match b.delta {
                NotebookDelta::NoUpdate => continue,
                NotebookDelta::AddedCorrect(seq) => (
                    seq,
                    branches.kb_mut(i).add_correct(
                        NewCorrect {
                            question: item.question.clone(),
                            hint: item.hint.clone(),
                            sql: b.final_sql.clone(),
                            thought: b.thought.clone(),
                            db_id: Some(item.db_id.clone()),
                        },
                        cfg.origin,
                    )?,
                ),
                NotebookDelta::AddedMistake(seq) => (
                    seq,
                    branches.kb_mut(i).add_mistake(
                        NewMistake {
                            question: item.question.clone(),
                            hint: item.hint.clone(),
                            first_sql: b.first_sql.clone(),
                            exec_error: b.exec_error.clone(),
                            reflected_sql: b.reflected_sql.clone(),
                            gold_sql: item.gold_sql.clone(),
                            tip: b.tip.clone().unwrap_or_default(),
                            db_id: Some(item.db_id.clone()),
                        },
                        cfg.origin,
                    )?,
                ),
            };
            if expected != got {
                return Err(BenchError::ResumeMismatch(format!(
                    "{}: branch {i} replayed as entry {got}, log says {expected}; \
                     were the notebooks reset to the run's starting state?",
                    item.question_id
                )));
            }
        }
    }
    Ok(())
}

/// Gold execution for reporting outside [`evaluate`].
pub fn gold_outcome(item: &TaskItem, cfg: &PipelineConfig) -> Result<ExecOutcome, BenchError> {
    sql::execute(&database_path(&cfg.db_root, &item.db_id), &item.gold_sql, cfg.timeout_ms)
        .map_err(|e| crate::pipeline::PipelineError::from(e).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_toml() {
        let cfg: RunConfig = toml::from_str(
            r#"
            k = 2
            rates = [0.5]
            db_root = "dbs"
            [init]
            kind = "preloaded"
            dir = "kb"
            [provider]
            kind = "scripted"
            script = "s.json"
            [encoder]
            mode = "deterministic-hash"
            dimension = 64
            "#,
        )
        .unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.timeout_ms, 30_000);
        assert_eq!(cfg.init, InitStrategy::Preloaded { dir: "kb".into() });
        assert_eq!(cfg.encoder, EncoderConfig::hashed(64));
        assert!(cfg.validate().is_ok());

        let d = RunConfig::default();
        assert_eq!((d.k, d.rates.clone(), d.temperature), (4, vec![1.0, 0.5, 0.0], 0.0));
        let bad = RunConfig {
            rates: vec![1.5],
            ..d
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn chat_provider_section_parses() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [provider]
            kind = "chat"
            endpoint = "http://localhost:8000/v1"
            model = "llama"
            "#,
        )
        .unwrap();
        match cfg.provider {
            ProviderConfig::Chat(c) => {
                assert_eq!(c.model, "llama");
                assert_eq!(c.max_attempts, 3);
                assert_eq!(c.api_key_env, "OPENAI_API_KEY");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn branch_dirs() {
        let cfg = RunConfig::default();
        let set = build_branches(&cfg).unwrap();
        let names: Vec<PathBuf> = (0..3).map(|i| branch_dir(Path::new("kb"), &set, i)).collect();
        assert_eq!(names, [Path::new("kb/cr-1"), Path::new("kb/cr-0.5"), Path::new("kb/cr-0")]);
        let shared = build_branches(&RunConfig {
            shared_kb: true,
            ..cfg
        })
        .unwrap();
        assert_eq!(branch_dir(Path::new("kb"), &shared, 2), Path::new("kb/shared"));
    }

    #[test]
    fn seed_sampling_is_deterministic_and_bounded() {
        let items: Vec<TaskItem> = Vec::new();
        let mut set = build_branches(&RunConfig::default()).unwrap();
        let p = ScriptedProvider::default();
        let cfg = PipelineConfig::new("nowhere");
        let s = seed(&items, 0, &mut set, &p, &cfg, 1).unwrap();
        assert!(s.sampled.is_empty());
        assert!(seed(&items, 1, &mut set, &p, &cfg, 1).is_err());
    }
}
