//! Scripted mock backend. Each entry matches either a template id carried in
//! the request tag or a prompt prefix, and cycles through its responses by
//! trial index, so a response is a pure function of (script, request).

use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKey {
    Template(String),
    Prefix(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockReply {
    pub content: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub key: MatchKey,
    pub responses: Vec<MockReply>,
}

impl MockEntry {
    pub fn template(id: &str, responses: &[&str]) -> MockEntry {
        MockEntry {
            key: MatchKey::Template(id.to_string()),
            responses: responses
                .iter()
                .map(|c| MockReply {
                    content: c.to_string(),
                    finish_reason: FinishReason::Stop,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockScript {
    name: String,
    entries: Vec<MockEntry>,
}

const BUILTIN: &[&str] = &[
    include_str!("../../fixtures/mock/advisor-generic.json"),
    include_str!("../../fixtures/mock/advisor-clone-aware.json"),
    include_str!("../../fixtures/mock/referee.json"),
    include_str!("../../fixtures/mock/taker-unaided.json"),
    include_str!("../../fixtures/mock/taker-instructed-generic.json"),
    include_str!("../../fixtures/mock/taker-instructed-clone-aware.json"),
    include_str!("../../fixtures/mock/scorer-unaided.json"),
    include_str!("../../fixtures/mock/scorer-instructed-generic.json"),
    include_str!("../../fixtures/mock/scorer-instructed-clone-aware.json"),
    include_str!("../../fixtures/mock/exemplar.json"),
];

impl MockScript {
    pub fn new(name: &str, entries: Vec<MockEntry>) -> Result<MockScript, BackendError> {
        if let Some(e) = entries.iter().find(|e| e.responses.is_empty()) {
            return Err(BackendError::Config(format!("mock entry {:?} has no responses", e.key)));
        }
        Ok(MockScript {
            name: name.to_string(),
            entries,
        })
    }

    /// The script shipped with the crate: plausible answers for every role.
    pub fn builtin() -> MockScript {
        let entries = BUILTIN
            .iter()
            .map(|s| serde_json::from_str(s).expect("built-in fixture parses"))
            .collect();
        MockScript::new("builtin", entries).expect("built-in fixtures are nonempty")
    }

    /// Loads every `*.json` file in `dir` (sorted by name). A file holds one
    /// entry or an array of entries.
    pub fn load_dir(dir: &Path) -> Result<MockScript, BackendError> {
        let read_err = |e: std::io::Error| BackendError::Config(format!("cannot read fixtures in {}: {e}", dir.display()));
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(read_err)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(read_err)?;
        paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
        paths.sort();
        let mut entries = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(read_err)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
            let parsed: Result<Vec<MockEntry>, _> = if value.is_array() {
                serde_json::from_value(value)
            } else {
                serde_json::from_value(value).map(|e| vec![e])
            };
            entries.extend(parsed.map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?);
        }
        MockScript::new(&dir.display().to_string(), entries)
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }

    /// Template match first, then the longest matching prompt prefix.
    pub fn lookup(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let index = request.tag.as_ref().map_or(0, |t| t.trial_index);
        let by_template = request.tag.as_ref().and_then(|tag| {
            self.entries
                .iter()
                .find(|e| matches!(&e.key, MatchKey::Template(id) if *id == tag.template_id))
        });
        let entry = by_template.or_else(|| {
            let prompt = request.prompt_text();
            self.entries
                .iter()
                .filter_map(|e| match &e.key {
                    MatchKey::Prefix(p) if prompt.starts_with(p.as_str()) => Some((p.len(), e)),
                    _ => None,
                })
                .max_by_key(|(len, _)| *len)
                .map(|(_, e)| e)
        });
        let Some(entry) = entry else {
            return Err(BackendError::NoFixture {
                template: request.tag.as_ref().map(|t| t.template_id.clone()),
            });
        };
        let reply = &entry.responses[index % entry.responses.len()];
        Ok(ChatResponse {
            content: reply.content.clone(),
            finish_reason: reply.finish_reason,
            usage: None,
        })
    }
}

#[async_trait]
impl ChatBackend for MockScript {
    fn id(&self) -> String {
        format!("mock:{}", self.name)
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.lookup(request)
    }
}
