//! Logical schema for trials: roles, transcripts, parsed artifacts, trial
//! records and regression fits. On-disk encoding lives in [`crate::store`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::parsing;
use crate::protocol;

/// Questions (and stories) in the test.
pub const QUESTION_COUNT: u8 = 16;

/// One of the nine instances. The ordinal carries the role semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RoleId(u8);

impl RoleId {
    pub const ADVISOR_GENERIC: RoleId = RoleId(1);
    pub const ADVISOR_CLONE_AWARE: RoleId = RoleId(2);
    pub const REFEREE: RoleId = RoleId(3);
    pub const TAKER_UNAIDED: RoleId = RoleId(4);
    pub const TAKER_GENERIC: RoleId = RoleId(5);
    pub const TAKER_CLONE_AWARE: RoleId = RoleId(6);
    pub const SCORER_UNAIDED: RoleId = RoleId(7);
    pub const SCORER_GENERIC: RoleId = RoleId(8);
    pub const SCORER_CLONE_AWARE: RoleId = RoleId(9);

    pub const ALL: [RoleId; 9] = [
        RoleId(1),
        RoleId(2),
        RoleId(3),
        RoleId(4),
        RoleId(5),
        RoleId(6),
        RoleId(7),
        RoleId(8),
        RoleId(9),
    ];
    pub const ADVISORS: [RoleId; 2] = [RoleId(1), RoleId(2)];
    pub const TAKERS: [RoleId; 3] = [RoleId(4), RoleId(5), RoleId(6)];
    pub const SCORERS: [RoleId; 3] = [RoleId(7), RoleId(8), RoleId(9)];

    pub fn new(ordinal: u8) -> Option<RoleId> {
        (1..=9).contains(&ordinal).then_some(RoleId(ordinal))
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    /// 0 for the scorers, 1 for everyone else.
    pub fn default_temperature(self) -> f64 {
        if self.is_scorer() {
            0.0
        } else {
            1.0
        }
    }

    pub fn is_advisor(self) -> bool {
        matches!(self.0, 1 | 2)
    }

    pub fn is_taker(self) -> bool {
        matches!(self.0, 4..=6)
    }

    pub fn is_scorer(self) -> bool {
        matches!(self.0, 7..=9)
    }

    /// Scorer that grades this taker (4→7, 5→8, 6→9).
    pub fn scorer(self) -> Option<RoleId> {
        self.is_taker().then(|| RoleId(self.0 + 3))
    }

    /// Taker graded by this scorer.
    pub fn graded_taker(self) -> Option<RoleId> {
        self.is_scorer().then(|| RoleId(self.0 - 3))
    }

    /// Advisor whose instructions preface this taker's prompt (5→1, 6→2).
    pub fn instruction_source(self) -> Option<RoleId> {
        match self.0 {
            5 => Some(RoleId(1)),
            6 => Some(RoleId(2)),
            _ => None,
        }
    }

    /// Roles whose output this role's prompt consumes.
    pub fn upstream(self) -> &'static [RoleId] {
        match self.0 {
            3 => &[RoleId(1), RoleId(2)],
            5 => &[RoleId(1)],
            6 => &[RoleId(2)],
            7 => &[RoleId(4)],
            8 => &[RoleId(5)],
            9 => &[RoleId(6)],
            _ => &[],
        }
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            1 => "advisor (generic)",
            2 => "advisor (clone-aware)",
            3 => "referee",
            4 => "taker (unaided)",
            5 => "taker (generic instructions)",
            6 => "taker (clone-aware instructions)",
            7 => "scorer (unaided taker)",
            8 => "scorer (generic-instructed taker)",
            _ => "scorer (clone-aware-instructed taker)",
        }
    }
}

impl TryFrom<u8> for RoleId {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        RoleId::new(value).ok_or_else(|| format!("role ordinal {value} is outside 1..=9"))
    }
}

impl From<RoleId> for u8 {
    fn from(role: RoleId) -> u8 {
        role.0
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sampling configuration for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub role: RoleId,
    pub prompt_template_id: String,
    pub temperature: f64,
    pub model_name: String,
}

impl RoleSpec {
    pub fn default_for(role: RoleId, model_name: &str) -> RoleSpec {
        RoleSpec {
            role,
            prompt_template_id: protocol::template_id(role).to_string(),
            temperature: role.default_temperature(),
            model_name: model_name.to_string(),
        }
    }

    /// Default specs for all nine roles.
    pub fn defaults(model_name: &str) -> Vec<RoleSpec> {
        RoleId::ALL.iter().map(|&r| RoleSpec::default_for(r, model_name)).collect()
    }
}

/// One role's exchange with the backend. `response_text` is the raw final
/// response; earlier responses rejected by the parser are kept in
/// `discarded_responses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub role: RoleId,
    pub request_text: String,
    pub response_text: String,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub backend_id: String,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded_responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    /// Backend failure message; the response is empty when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Instructions emitted by an advisor, with their metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionArtifact {
    pub source_role: RoleId,
    pub text: String,
    pub is_empty: bool,
    pub char_length: usize,
    pub entropy_bits: f64,
}

impl InstructionArtifact {
    /// The whole response is the artifact. Blank output (after trimming
    /// Unicode whitespace) counts as a decision not to instruct.
    pub fn from_response(source_role: RoleId, text: &str) -> InstructionArtifact {
        let is_empty = text.trim().is_empty();
        let (char_length, entropy_bits) = if is_empty {
            (0, 0.0)
        } else {
            let m = metrics::text_metrics(text).expect("nonempty text");
            (m.char_length, m.entropy_bits)
        };
        InstructionArtifact {
            source_role,
            text: text.to_string(),
            is_empty,
            char_length,
            entropy_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    UsefulPassage1,
    UsefulPassage2,
    NotUseful,
    Noncompliant,
}

impl VerdictKind {
    pub const ALL: [VerdictKind; 4] = [
        VerdictKind::UsefulPassage1,
        VerdictKind::UsefulPassage2,
        VerdictKind::NotUseful,
        VerdictKind::Noncompliant,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VerdictKind::UsefulPassage1 => "Useful, Passage 1",
            VerdictKind::UsefulPassage2 => "Useful, Passage 2",
            VerdictKind::NotUseful => "Not Useful",
            VerdictKind::Noncompliant => "Noncompliant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefereeVerdict {
    pub kind: VerdictKind,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub scorer_role: RoleId,
    pub scores: BTreeMap<u8, u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The backend call failed.
    Backend,
    /// The output could not be parsed, even after the retry.
    Parse,
    /// Not run because an upstream role failed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub role: RoleId,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    /// `stage` is the lowest-numbered role that failed on its own (not
    /// skipped).
    Failed {
        stage: RoleId,
        failures: Vec<StageFailure>,
    },
}

/// Full provenance of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub trial_index: usize,
    pub config_hash: String,
    /// Sorted by role.
    pub transcripts: Vec<Transcript>,
    /// Sorted by source role.
    pub instructions: Vec<InstructionArtifact>,
    pub verdict: Option<RefereeVerdict>,
    pub answers: BTreeMap<RoleId, BTreeMap<u8, String>>,
    /// Sorted by scorer role.
    pub sheets: Vec<ScoreSheet>,
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn is_complete(&self) -> bool {
        self.status == TrialStatus::Complete
    }

    pub fn transcript(&self, role: RoleId) -> Option<&Transcript> {
        self.transcripts.iter().find(|t| t.role == role)
    }

    pub fn instruction(&self, source: RoleId) -> Option<&InstructionArtifact> {
        self.instructions.iter().find(|a| a.source_role == source)
    }

    pub fn sheet(&self, scorer: RoleId) -> Option<&ScoreSheet> {
        self.sheets.iter().find(|s| s.scorer_role == scorer)
    }
}

/// Coefficient table of a logit or OLS fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub terms: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    /// Wald z for logit, t for OLS.
    pub stat: Vec<f64>,
    pub p: Vec<f64>,
    pub log_likelihood: Option<f64>,
    pub null_log_likelihood: Option<f64>,
    pub llr_p: Option<f64>,
    pub residual_sum_squares: Option<f64>,
    pub residual_df: Option<usize>,
    pub n: usize,
    pub iterations: Option<usize>,
    /// OLS with zero residual variance: se, stat and p are placeholders.
    pub degenerate: bool,
}

impl RegressionFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coef[i])
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let k = self.coef.len();
        for (name, len) in [
            ("terms", self.terms.len()),
            ("se", self.se.len()),
            ("stat", self.stat.len()),
            ("p", self.p.len()),
        ] {
            if len != k {
                v.push(Violation::new(name, format!("length {len} differs from {k} coefficients")));
            }
        }
        for (i, p) in self.p.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                v.push(Violation::new(format!("p[{i}]"), format!("{p} outside [0, 1]")));
            }
        }
        if let Some(p) = self.llr_p {
            if !(0.0..=1.0).contains(&p) {
                v.push(Violation::new("llr_p", format!("{p} outside [0, 1]")));
            }
        }
        v
    }
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Violation {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Prompt that `role` should have received given the record's upstream
/// transcripts, or `None` when an upstream response is unavailable.
pub fn expected_request(record: &TrialRecord, role: RoleId) -> Option<String> {
    let response = |r: RoleId| {
        record
            .transcript(r)
            .filter(|t| t.error.is_none())
            .map(|t| t.response_text.as_str())
    };
    match role.ordinal() {
        1 => Some(protocol::advisor_prompt(protocol::AdvisorVariant::Generic).to_string()),
        2 => Some(protocol::advisor_prompt(protocol::AdvisorVariant::CloneAware).to_string()),
        3 => Some(protocol::referee_prompt(
            response(RoleId::ADVISOR_GENERIC)?,
            response(RoleId::ADVISOR_CLONE_AWARE)?,
        )),
        4 => Some(protocol::base_test_prompt().to_string()),
        5 | 6 => {
            let source = role.instruction_source().expect("instructed taker");
            protocol::taker_prompt(role, Some(response(source)?)).ok()
        }
        _ => {
            let taker = role.graded_taker().expect("scorer");
            let answers = record.answers.get(&taker)?;
            protocol::scorer_prompt(role, &parsing::render_answers(answers)).ok()
        }
    }
}

/// Every invariant violation in `record`; empty means valid.
pub fn validate_record(record: &TrialRecord) -> Vec<Violation> {
    let mut v = Vec::new();
    let complete = record.is_complete();

    if record.trial_id.trim().is_empty() {
        v.push(Violation::new("trial_id", "empty trial id"));
    }
    if record.config_hash.trim().is_empty() {
        v.push(Violation::new("config_hash", "empty config hash"));
    }

    // status bookkeeping
    let mut failed: BTreeMap<RoleId, FailureKind> = BTreeMap::new();
    if let TrialStatus::Failed { stage, failures } = &record.status {
        if failures.is_empty() {
            v.push(Violation::new("status", "failed record lists no failures"));
        }
        for f in failures {
            if failed.insert(f.role, f.kind).is_some() {
                v.push(Violation::new("status", format!("role {} fails twice", f.role)));
            }
        }
        let first_own = failures
            .iter()
            .filter(|f| f.kind != FailureKind::Skipped)
            .map(|f| f.role)
            .min();
        if first_own != Some(*stage) {
            v.push(Violation::new(
                "status.stage",
                format!("stage {stage} is not the first non-skipped failure"),
            ));
        }
        for f in failures.iter().filter(|f| f.kind == FailureKind::Skipped) {
            if !f.role.upstream().iter().any(|u| failed.contains_key(u)) {
                v.push(Violation::new(
                    "status",
                    format!("role {} skipped although its inputs succeeded", f.role),
                ));
            }
        }
    }

    // transcripts
    let mut seen = BTreeSet::new();
    for (i, t) in record.transcripts.iter().enumerate() {
        if !seen.insert(t.role) {
            v.push(Violation::new(format!("transcripts[{i}]"), format!("duplicate transcript role {}", t.role)));
        }
        if i > 0 && record.transcripts[i - 1].role > t.role {
            v.push(Violation::new("transcripts", "transcripts not sorted by role"));
        }
    }
    for role in RoleId::ALL {
        let present = seen.contains(&role);
        match failed.get(&role) {
            Some(FailureKind::Skipped) if present => v.push(Violation::new(
                "transcripts",
                format!("skipped role {role} has a transcript"),
            )),
            Some(FailureKind::Skipped) => {}
            _ if !present => v.push(Violation::new("transcripts", format!("missing transcript role {role}"))),
            _ => {}
        }
    }
    for t in &record.transcripts {
        let field = format!("transcript[{}]", t.role);
        if t.backend_id.trim().is_empty() {
            v.push(Violation::new(&field, "empty backend id"));
        }
        if t.attempts == 0 {
            v.push(Violation::new(&field, "zero attempts"));
        } else if t.discarded_responses.len() as u32 >= t.attempts {
            v.push(Violation::new(&field, "more discarded responses than attempts"));
        }
        if t.ended_at < t.started_at {
            v.push(Violation::new(&field, "ended before it started"));
        }
        match &t.error {
            Some(_) => {
                if !t.response_text.is_empty() {
                    v.push(Violation::new(&field, "failed call carries a response"));
                }
                if failed.get(&t.role) != Some(&FailureKind::Backend) {
                    v.push(Violation::new(&field, "backend error not reflected in status"));
                }
            }
            None => {
                if failed.get(&t.role) == Some(&FailureKind::Backend) {
                    v.push(Violation::new(&field, "status reports a backend failure but no error is recorded"));
                }
                if t.discarded_responses.len() as u32 + 1 != t.attempts {
                    v.push(Violation::new(&field, "attempts do not match discarded responses"));
                }
            }
        }
        if let Some(expected) = expected_request(record, t.role) {
            if t.request_text != expected {
                v.push(Violation::new(
                    &field,
                    format!("request text differs from the assembled prompt for role {}", t.role),
                ));
            }
        } else if t.role.upstream().iter().all(|u| seen.contains(u)) {
            v.push(Violation::new(&field, "request cannot be reconstructed from upstream outputs"));
        }
    }

    // an artifact exists exactly when its role ran and did not fail
    let usable = |role: RoleId| {
        record
            .transcript(role)
            .is_some_and(|t| t.error.is_none())
            && !failed.contains_key(&role)
    };

    // instructions
    let mut sources = BTreeSet::new();
    for (i, a) in record.instructions.iter().enumerate() {
        let field = format!("instructions[{i}]");
        if !a.source_role.is_advisor() {
            v.push(Violation::new(&field, format!("source role {} is not an advisor", a.source_role)));
        }
        if !sources.insert(a.source_role) {
            v.push(Violation::new(&field, format!("duplicate artifact for role {}", a.source_role)));
        }
        if i > 0 && record.instructions[i - 1].source_role > a.source_role {
            v.push(Violation::new("instructions", "artifacts not sorted by source"));
        }
        let fresh = InstructionArtifact::from_response(a.source_role, &a.text);
        if a.is_empty != fresh.is_empty {
            v.push(Violation::new(&field, "is_empty disagrees with the text"));
        }
        if a.char_length != fresh.char_length {
            v.push(Violation::new(
                &field,
                format!("char_length {} but text has {}", a.char_length, fresh.char_length),
            ));
        }
        if !(a.entropy_bits - fresh.entropy_bits).abs().le(&1e-12) {
            v.push(Violation::new(
                &field,
                format!("entropy {} but text gives {}", a.entropy_bits, fresh.entropy_bits),
            ));
        }
        if let Some(t) = record.transcript(a.source_role) {
            if t.response_text != a.text {
                v.push(Violation::new(&field, "text differs from the raw advisor response"));
            }
        }
    }
    for role in RoleId::ADVISORS {
        if usable(role) && !sources.contains(&role) {
            v.push(Violation::new("instructions", format!("missing artifact for role {role}")));
        }
        if !usable(role) && sources.contains(&role) {
            v.push(Violation::new("instructions", format!("artifact for role {role}, which did not complete")));
        }
    }

    // verdict
    match &record.verdict {
        Some(verdict) => {
            if parsing::parse_verdict(&verdict.raw_text).kind != verdict.kind {
                v.push(Violation::new("verdict", "kind disagrees with the raw text"));
            }
            match record.transcript(RoleId::REFEREE) {
                Some(t) if t.response_text == verdict.raw_text => {}
                _ => v.push(Violation::new("verdict", "raw text differs from the referee response")),
            }
            if !usable(RoleId::REFEREE) {
                v.push(Violation::new("verdict", "verdict present but the referee did not complete"));
            }
        }
        None if usable(RoleId::REFEREE) => v.push(Violation::new("verdict", "missing referee verdict")),
        None => {}
    }

    // answers
    for (role, answers) in &record.answers {
        let field = format!("answers[{role}]");
        if !role.is_taker() {
            v.push(Violation::new(&field, format!("role {role} is not a taker")));
            continue;
        }
        let missing: Vec<u8> = (1..=QUESTION_COUNT).filter(|q| !answers.contains_key(q)).collect();
        if !missing.is_empty() {
            v.push(Violation::new(&field, format!("missing questions {missing:?}")));
        }
        if let Some(q) = answers.keys().find(|q| !(1..=QUESTION_COUNT).contains(q)) {
            v.push(Violation::new(&field, format!("unknown question {q}")));
        }
        if let Some((q, _)) = answers.iter().find(|(_, a)| a.trim().is_empty()) {
            v.push(Violation::new(&field, format!("question {q} has an empty answer")));
        }
        if let Some(t) = record.transcript(*role) {
            match parsing::parse_answers(&t.response_text) {
                Ok(parsed) if parsed.answers() == answers => {}
                _ => v.push(Violation::new(&field, "answers do not reparse from the raw response")),
            }
        }
        if !usable(*role) {
            v.push(Violation::new(&field, "answers present but the taker did not complete"));
        }
    }
    for role in RoleId::TAKERS {
        if usable(role) && !record.answers.contains_key(&role) {
            v.push(Violation::new("answers", format!("missing answers for role {role}")));
        }
    }

    // sheets
    let mut scorers = BTreeSet::new();
    for (i, sheet) in record.sheets.iter().enumerate() {
        let role = sheet.scorer_role;
        let field = format!("sheets[{role}]");
        if !role.is_scorer() {
            v.push(Violation::new(&field, format!("role {role} is not a scorer")));
        }
        if !scorers.insert(role) {
            v.push(Violation::new(&field, "duplicate sheet"));
        }
        if i > 0 && record.sheets[i - 1].scorer_role > role {
            v.push(Violation::new("sheets", "sheets not sorted by scorer"));
        }
        let missing: Vec<u8> = (1..=QUESTION_COUNT).filter(|q| !sheet.scores.contains_key(q)).collect();
        if !missing.is_empty() {
            v.push(Violation::new(&field, format!("missing scores for questions {missing:?}")));
        }
        for (q, x) in &sheet.scores {
            if !(1..=QUESTION_COUNT).contains(q) {
                v.push(Violation::new(&field, format!("unknown question {q}")));
            }
            if *x > 2 {
                v.push(Violation::new(
                    &field,
                    format!("question {q} in sheet {role} has score {x}, outside 0-2"),
                ));
            }
        }
        if let Some(t) = record.transcript(role) {
            match parsing::parse_scores(&t.response_text, role) {
                Ok(parsed) if parsed == *sheet => {}
                _ => v.push(Violation::new(&field, "scores do not reparse from the raw response")),
            }
        }
        if !usable(role) {
            v.push(Violation::new(&field, "sheet present but the scorer did not complete"));
        }
    }
    for role in RoleId::SCORERS {
        if usable(role) && !scorers.contains(&role) {
            v.push(Violation::new("sheets", format!("missing sheet for role {role}")));
        }
    }

    if complete && !failed.is_empty() {
        v.push(Violation::new("status", "complete record lists failures"));
    }
    v
}
