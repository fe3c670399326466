use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_digest, LlmError, PromptKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// One prompt on its way to a model. `tag` identifies the work item
/// (`<question_id>/<rate>`) so scripted runs can key on it.
#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub kind: PromptKind,
    pub prompt: &'a str,
    pub tag: Option<&'a str>,
    pub params: &'a CompletionParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub tokens: u64,
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

/// Makes exactly one provider call; blank output is an error.
pub fn complete(
    provider: &dyn CompletionProvider,
    request: &CompletionRequest<'_>,
) -> Result<Completion, LlmError> {
    let completion = provider.complete(request)?;
    if completion.text.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(completion)
}

/// Script file contents.
///
/// `responses` keys, tried in this order for each call:
/// `sha256:<prompt digest>`, `<Kind>@<question_id>/<rate>`,
/// `<Kind>@<question_id>`, `<Kind>#<n>` (n = 1-based count of calls of
/// that kind), `<Kind>#*`. When nothing matches, the next unused
/// `sequence` entry is replayed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub sequence: Vec<String>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }

    pub fn insert(&mut self, key: impl Into<String>, completion: impl Into<String>) -> &mut Self {
        self.responses.insert(key.into(), completion.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub kind: PromptKind,
    pub tag: Option<String>,
    pub digest: String,
    pub key: Option<String>,
}

#[derive(Debug, Default)]
struct ScriptState {
    per_kind: HashMap<PromptKind, usize>,
    cursor: usize,
    calls: Vec<CallRecord>,
}

/// Replays a [`Script`] without touching the network. Every call, matched
/// or not, lands in the ledger.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    script: Script,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        ScriptedProvider {
            script,
            state: Mutex::default(),
        }
    }

    pub fn from_sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script {
            sequence: replies.into_iter().map(Into::into).collect(),
            ..Default::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Script::load(path)?))
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state.lock().expect("ledger lock").calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("ledger lock").calls.len()
    }

    pub fn count_of(&self, kind: PromptKind) -> usize {
        self.state
            .lock()
            .expect("ledger lock")
            .calls
            .iter()
            .filter(|c| c.kind == kind)
            .count()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        let mut state = self.state.lock().expect("ledger lock");
        let ordinal = {
            let n = state.per_kind.entry(request.kind).or_insert(0);
            *n += 1;
            *n
        };
        let kind = request.kind.name();
        let digest = prompt_digest(request.prompt);

        let mut candidates = vec![format!("sha256:{digest}")];
        if let Some(tag) = request.tag {
            candidates.push(format!("{kind}@{tag}"));
            if let Some((item, _)) = tag.split_once('/') {
                candidates.push(format!("{kind}@{item}"));
            }
        }
        candidates.push(format!("{kind}#{ordinal}"));
        candidates.push(format!("{kind}#*"));

        let keyed = candidates
            .iter()
            .find_map(|k| self.script.responses.get(k).map(|v| (k.clone(), v.clone())));
        let (key, text) = match keyed {
            Some((k, v)) => (Some(k), Some(v)),
            None => match self.script.sequence.get(state.cursor) {
                Some(v) => {
                    state.cursor += 1;
                    (Some(format!("sequence[{}]", state.cursor - 1)), Some(v.clone()))
                }
                None => (None, None),
            },
        };
        state.calls.push(CallRecord {
            kind: request.kind,
            tag: request.tag.map(str::to_string),
            digest,
            key: key.clone(),
        });
        let text = text.ok_or_else(|| LlmError::ScriptExhausted {
            key: match request.tag {
                Some(tag) => format!("{kind}#{ordinal} ({kind}@{tag})"),
                None => format!("{kind}#{ordinal}"),
            },
        })?;
        let tokens = (request.prompt.split_whitespace().count() + text.split_whitespace().count()) as u64;
        Ok(Completion { text, tokens })
    }
}
