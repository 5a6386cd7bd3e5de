//! Prompt templates for the nine roles and slot substitution.
//!
//! Template bodies live in `prompts/*.txt` and are compiled in. Slots are
//! written `{NAME}` with an upper-case name; the scorer rubric's literal
//! `{A1: x1 points}` examples never match because of the colon.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RoleId;

const ADVISOR_GENERIC_RAW: &str = include_str!("../prompts/advisor_generic.txt");
const ADVISOR_CLONE_AWARE_RAW: &str = include_str!("../prompts/advisor_clone_aware.txt");
const REFEREE_RAW: &str = include_str!("../prompts/referee.txt");
const TEST_TAKER_RAW: &str = include_str!("../prompts/test_taker.txt");
const SCORER_RAW: &str = include_str!("../prompts/scorer.txt");

/// Blank line between spliced instructions and the base test.
pub const INSTRUCTION_SEPARATOR: &str = "\n\n";

/// Text changes made to the printed prompts. Every built-in template that
/// contains the story set carries these.
pub const EMENDATIONS: &[Emendation] = &[Emendation {
    location: "story 15 (Paul's car purchase)",
    printed: "the dealer will charge 5",
    emended: "the dealer will charge 5% interest.",
}];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Emendation {
    pub location: &'static str,
    pub printed: &'static str,
    pub emended: &'static str,
}

fn resource(raw: &'static str) -> &'static str {
    raw.strip_suffix('\n').unwrap_or(raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for slot {0}")]
    MissingSlot(Slot),
    #[error("binding for slot {0}, which the template does not contain")]
    UnexpectedSlot(Slot),
    #[error("template uses unknown slot {{{0}}}")]
    UnknownSlot(String),
    #[error("template for role {role} must have slots {expected:?}, found {found:?}")]
    SlotMismatch {
        role: RoleId,
        expected: BTreeSet<Slot>,
        found: BTreeSet<Slot>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    /// Instructions prefaced to the test. When the bound text is blank the
    /// slot and the separator after it are dropped, leaving the base test.
    Instructions,
    Answers,
    Passage1,
    Passage2,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Instructions => "INSTRUCTIONS",
            Slot::Answers => "ANSWERS",
            Slot::Passage1 => "PASSAGE_1",
            Slot::Passage2 => "PASSAGE_2",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        match name {
            "INSTRUCTIONS" => Some(Slot::Instructions),
            "ANSWERS" => Some(Slot::Answers),
            "PASSAGE_1" => Some(Slot::Passage1),
            "PASSAGE_2" => Some(Slot::Passage2),
            _ => None,
        }
    }

    /// Slots the template of `role` must contain.
    pub fn required_for(role: RoleId) -> BTreeSet<Slot> {
        match role.ordinal() {
            3 => [Slot::Passage1, Slot::Passage2].into(),
            5 | 6 => [Slot::Instructions].into(),
            7..=9 => [Slot::Answers].into(),
            _ => BTreeSet::new(),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.name())
    }
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").expect("valid slot regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: Cow<'static, str>,
    role: RoleId,
    body: Cow<'static, str>,
}

impl PromptTemplate {
    /// Builds a template, checking that its slots are exactly the ones the
    /// role requires.
    pub fn new(
        id: impl Into<Cow<'static, str>>,
        role: RoleId,
        body: impl Into<Cow<'static, str>>,
    ) -> Result<Self, PromptError> {
        let template = Self {
            id: id.into(),
            role,
            body: body.into(),
        };
        let found = template.slots()?;
        let expected = Slot::required_for(role);
        if found != expected {
            return Err(PromptError::SlotMismatch {
                role,
                expected,
                found,
            });
        }
        Ok(template)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> RoleId {
        self.role
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn slots(&self) -> Result<BTreeSet<Slot>, PromptError> {
        slot_pattern()
            .captures_iter(&self.body)
            .map(|c| Slot::from_name(&c[1]).ok_or_else(|| PromptError::UnknownSlot(c[1].to_string())))
            .collect()
    }

    pub fn emendations(&self) -> &'static [Emendation] {
        if EMENDATIONS.iter().any(|e| self.body.contains(e.emended)) {
            EMENDATIONS
        } else {
            &[]
        }
    }
}

/// Template id for each role; the mock backend matches on these.
pub fn template_id(role: RoleId) -> &'static str {
    match role.ordinal() {
        1 => "advisor-generic",
        2 => "advisor-clone-aware",
        3 => "referee",
        4 => "taker-unaided",
        5 => "taker-instructed-generic",
        6 => "taker-instructed-clone-aware",
        7 => "scorer-unaided",
        8 => "scorer-instructed-generic",
        _ => "scorer-instructed-clone-aware",
    }
}

/// Built-in template for `role`.
pub fn template_for(role: RoleId) -> PromptTemplate {
    static INSTRUCTED: OnceLock<String> = OnceLock::new();
    let body: Cow<'static, str> = match role.ordinal() {
        1 => resource(ADVISOR_GENERIC_RAW).into(),
        2 => resource(ADVISOR_CLONE_AWARE_RAW).into(),
        3 => resource(REFEREE_RAW).into(),
        4 => resource(TEST_TAKER_RAW).into(),
        5 | 6 => INSTRUCTED
            .get_or_init(|| {
                format!(
                    "{}{INSTRUCTION_SEPARATOR}{}",
                    Slot::Instructions,
                    resource(TEST_TAKER_RAW)
                )
            })
            .as_str()
            .into(),
        _ => resource(SCORER_RAW).into(),
    };
    PromptTemplate::new(template_id(role), role, body).expect("built-in templates are well formed")
}

/// Substitutes every slot of `template` from `bindings`. Bound text is
/// inserted verbatim in a single pass.
pub fn assemble_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<Slot, String>,
) -> Result<String, PromptError> {
    let slots = template.slots()?;
    if let Some(missing) = slots.iter().find(|s| !bindings.contains_key(s)) {
        return Err(PromptError::MissingSlot(*missing));
    }
    if let Some(extra) = bindings.keys().find(|s| !slots.contains(s)) {
        return Err(PromptError::UnexpectedSlot(*extra));
    }
    let body = template.body();
    let mut out = String::with_capacity(body.len() + bindings.values().map(String::len).sum::<usize>());
    let mut cursor = 0;
    for caps in slot_pattern().captures_iter(body) {
        let whole = caps.get(0).expect("group 0");
        let slot = Slot::from_name(&caps[1]).expect("validated above");
        out.push_str(&body[cursor..whole.start()]);
        cursor = whole.end();
        let value = &bindings[&slot];
        if slot == Slot::Instructions && value.trim().is_empty() {
            if body[cursor..].starts_with(INSTRUCTION_SEPARATOR) {
                cursor += INSTRUCTION_SEPARATOR.len();
            }
            continue;
        }
        out.push_str(value);
    }
    out.push_str(&body[cursor..]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvisorVariant {
    Generic,
    CloneAware,
}

/// The advisor prompt; neither variant has slots.
pub fn advisor_prompt(variant: AdvisorVariant) -> &'static str {
    match variant {
        AdvisorVariant::Generic => resource(ADVISOR_GENERIC_RAW),
        AdvisorVariant::CloneAware => resource(ADVISOR_CLONE_AWARE_RAW),
    }
}

/// The unaided test prompt.
pub fn base_test_prompt() -> &'static str {
    resource(TEST_TAKER_RAW)
}

/// Prompt for a test taker. `instructions` is used only by roles 5 and 6.
pub fn taker_prompt(role: RoleId, instructions: Option<&str>) -> Result<String, PromptError> {
    let mut bindings = BTreeMap::new();
    if let Some(text) = instructions {
        bindings.insert(Slot::Instructions, text.to_string());
    }
    assemble_prompt(&template_for(role), &bindings)
}

/// Referee prompt with passage 1 from the generic advisor and passage 2 from
/// the clone-aware advisor.
pub fn referee_prompt(passage_1: &str, passage_2: &str) -> String {
    let bindings = BTreeMap::from([
        (Slot::Passage1, passage_1.to_string()),
        (Slot::Passage2, passage_2.to_string()),
    ]);
    assemble_prompt(&template_for(RoleId::REFEREE), &bindings).expect("referee slots bound")
}

/// Scorer prompt with the rendered answers appended after the rubric.
pub fn scorer_prompt(role: RoleId, rendered_answers: &str) -> Result<String, PromptError> {
    let bindings = BTreeMap::from([(Slot::Answers, rendered_answers.to_string())]);
    assemble_prompt(&template_for(role), &bindings)
}
