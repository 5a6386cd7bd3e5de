//! Runs one trial's nine-role dependency graph against a backend, and
//! batches of independent trials with bounded concurrency.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use futures::future::{join, join4, FutureExt};
use futures::stream::{self, StreamExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, ChatBackend, ChatRequest};
use crate::model::{
    FailureKind, InstructionArtifact, RefereeVerdict, RoleId, RoleSpec, ScoreSheet, StageFailure, Transcript,
    TrialRecord, TrialStatus, Violation,
};
use crate::parsing::{self, AnswerSet};
use crate::protocol;

/// Edges of the trial graph: (from, to).
pub const DAG_EDGES: [(RoleId, RoleId); 7] = [
    (RoleId::ADVISOR_GENERIC, RoleId::TAKER_GENERIC),
    (RoleId::ADVISOR_CLONE_AWARE, RoleId::TAKER_CLONE_AWARE),
    (RoleId::ADVISOR_GENERIC, RoleId::REFEREE),
    (RoleId::ADVISOR_CLONE_AWARE, RoleId::REFEREE),
    (RoleId::TAKER_UNAIDED, RoleId::SCORER_UNAIDED),
    (RoleId::TAKER_GENERIC, RoleId::SCORER_GENERIC),
    (RoleId::TAKER_CLONE_AWARE, RoleId::SCORER_CLONE_AWARE),
];

/// Roles with no inputs.
pub const SOURCES: [RoleId; 3] = [RoleId::ADVISOR_GENERIC, RoleId::ADVISOR_CLONE_AWARE, RoleId::TAKER_UNAIDED];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("role specs must cover roles 1-9 exactly once, in order")]
    InvalidRoleSpecs,
    #[error("role {role} has invalid temperature {temperature}")]
    InvalidTemperature { role: RoleId, temperature: f64 },
}

/// Timestamp source for transcripts. `Fixed` makes records reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub trial_id: String,
    pub trial_index: usize,
    pub role_specs: Vec<RoleSpec>,
    pub backend: BackendConfig,
    pub config_hash: String,
}

impl TrialPlan {
    pub fn new(
        trial_index: usize,
        role_specs: Vec<RoleSpec>,
        backend: BackendConfig,
    ) -> Result<TrialPlan, OrchestratorError> {
        validate_specs(&role_specs)?;
        let config_hash = config_hash(&role_specs, &backend);
        Ok(TrialPlan {
            trial_id: format!("{}-{trial_index:05}", &config_hash[..12]),
            trial_index,
            role_specs,
            backend,
            config_hash,
        })
    }

    pub fn dag(&self) -> &'static [(RoleId, RoleId)] {
        &DAG_EDGES
    }

    fn spec(&self, role: RoleId) -> &RoleSpec {
        &self.role_specs[role.ordinal() as usize - 1]
    }
}

fn validate_specs(specs: &[RoleSpec]) -> Result<(), OrchestratorError> {
    if specs.len() != 9 || specs.iter().zip(RoleId::ALL).any(|(s, r)| s.role != r) {
        return Err(OrchestratorError::InvalidRoleSpecs);
    }
    if let Some(s) = specs.iter().find(|s| !(s.temperature >= 0.0 && s.temperature.is_finite())) {
        return Err(OrchestratorError::InvalidTemperature {
            role: s.role,
            temperature: s.temperature,
        });
    }
    Ok(())
}

/// Plans for trials `0..trials` sharing one configuration.
pub fn plan_batch(
    trials: usize,
    role_specs: &[RoleSpec],
    backend: &BackendConfig,
) -> Result<Vec<TrialPlan>, OrchestratorError> {
    (0..trials)
        .map(|i| TrialPlan::new(i, role_specs.to_vec(), backend.clone()))
        .collect()
}

/// SHA-256 over the role specs, backend settings and template bodies.
pub fn config_hash(role_specs: &[RoleSpec], backend: &BackendConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        role_specs: &'a [RoleSpec],
        backend: &'a BackendConfig,
        templates: Vec<(String, String)>,
    }
    let templates = RoleId::ALL
        .iter()
        .map(|&r| {
            let t = protocol::template_for(r);
            (t.id().to_string(), hex::encode(Sha256::digest(t.body().as_bytes())))
        })
        .collect();
    let doc = Hashed {
        role_specs,
        backend,
        templates,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&doc).expect("config serializes")))
}

#[derive(Clone)]
struct Outcome<T> {
    transcript: Option<Transcript>,
    result: Result<T, StageFailure>,
}

impl<T> Outcome<T> {
    fn skipped(role: RoleId, because: RoleId) -> Outcome<T> {
        Outcome {
            transcript: None,
            result: Err(StageFailure {
                role,
                kind: FailureKind::Skipped,
                message: format!("input from role {because} unavailable"),
            }),
        }
    }
}

struct TrialContext<'a> {
    plan: &'a TrialPlan,
    backend: &'a dyn ChatBackend,
    clock: Clock,
}

impl TrialContext<'_> {
    /// Queries `role` once, and once more if the output does not parse.
    async fn invoke<T>(&self, role: RoleId, prompt: String, parse: impl Fn(&str) -> Result<T, String>) -> Outcome<T> {
        let spec = self.plan.spec(role);
        let request = ChatRequest::user(&spec.model_name, spec.temperature, prompt.clone())
            .with_tag(&spec.prompt_template_id, self.plan.trial_index);
        let started_at = self.clock.now();
        let mut discarded = Vec::new();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut transcript = Transcript {
                role,
                request_text: prompt.clone(),
                response_text: String::new(),
                started_at,
                ended_at: started_at,
                backend_id: self.backend.id(),
                attempts,
                discarded_responses: discarded.clone(),
                finish_reason: None,
                error: None,
            };
            let response = self.backend.complete(&request).await;
            transcript.ended_at = self.clock.now();
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    transcript.error = Some(e.to_string());
                    return Outcome {
                        transcript: Some(transcript),
                        result: Err(StageFailure {
                            role,
                            kind: FailureKind::Backend,
                            message: e.to_string(),
                        }),
                    };
                }
            };
            transcript.finish_reason = Some(response.finish_reason.as_str().to_string());
            transcript.response_text = response.content;
            match parse(&transcript.response_text) {
                Ok(parsed) => {
                    return Outcome {
                        transcript: Some(transcript),
                        result: Ok(parsed),
                    }
                }
                Err(message) if attempts >= 2 => {
                    return Outcome {
                        transcript: Some(transcript),
                        result: Err(StageFailure {
                            role,
                            kind: FailureKind::Parse,
                            message,
                        }),
                    }
                }
                Err(message) => {
                    tracing::debug!(%role, %message, "unparseable output, querying once more");
                    discarded.push(transcript.response_text);
                }
            }
        }
    }

    async fn advisor(&self, role: RoleId) -> Outcome<InstructionArtifact> {
        let variant = if role == RoleId::ADVISOR_GENERIC {
            protocol::AdvisorVariant::Generic
        } else {
            protocol::AdvisorVariant::CloneAware
        };
        let prompt = protocol::advisor_prompt(variant).to_string();
        self.invoke(role, prompt, |raw| Ok(InstructionArtifact::from_response(role, raw)))
            .await
    }

    async fn referee(
        &self,
        a1: &Outcome<InstructionArtifact>,
        a2: &Outcome<InstructionArtifact>,
    ) -> Outcome<RefereeVerdict> {
        let (p1, p2) = match (&a1.result, &a2.result) {
            (Ok(p1), Ok(p2)) => (p1, p2),
            (Err(_), _) => return Outcome::skipped(RoleId::REFEREE, RoleId::ADVISOR_GENERIC),
            _ => return Outcome::skipped(RoleId::REFEREE, RoleId::ADVISOR_CLONE_AWARE),
        };
        let prompt = protocol::referee_prompt(&p1.text, &p2.text);
        self.invoke(RoleId::REFEREE, prompt, |raw| Ok(parsing::parse_verdict(raw))).await
    }

    async fn taker(&self, role: RoleId, instructions: Option<&Outcome<InstructionArtifact>>) -> Outcome<AnswerSet> {
        let text = match instructions.map(|o| &o.result) {
            None => None,
            Some(Ok(a)) => Some(a.text.as_str()),
            Some(Err(_)) => {
                return Outcome::skipped(role, role.instruction_source().expect("instructed taker"));
            }
        };
        let prompt = protocol::taker_prompt(role, text).expect("taker slots bound");
        self.invoke(role, prompt, |raw| parsing::parse_answers(raw).map_err(|e| e.to_string()))
            .await
    }

    async fn scorer(&self, role: RoleId, taker: &Outcome<AnswerSet>) -> Outcome<ScoreSheet> {
        let taker_role = role.graded_taker().expect("scorer");
        let Ok(answers) = &taker.result else {
            return Outcome::skipped(role, taker_role);
        };
        let prompt = protocol::scorer_prompt(role, &answers.render()).expect("scorer slots bound");
        self.invoke(role, prompt, |raw| parsing::parse_scores(raw, role).map_err(|e| e.to_string()))
            .await
    }

    async fn branch(&self, taker: RoleId, advisor: Option<&Outcome<InstructionArtifact>>) -> (Outcome<AnswerSet>, Outcome<ScoreSheet>) {
        let answers = self.taker(taker, advisor).await;
        let sheet = self.scorer(taker.scorer().expect("taker"), &answers).await;
        (answers, sheet)
    }
}

/// Runs one trial. Each role gets a fresh single-message request; a failure
/// in one branch leaves the independent branches running.
pub async fn run_trial(plan: &TrialPlan, backend: &dyn ChatBackend, clock: Clock) -> TrialRecord {
    let ctx = TrialContext { plan, backend, clock };
    let ctx = &ctx;
    let adv1 = ctx.advisor(RoleId::ADVISOR_GENERIC).shared();
    let adv2 = ctx.advisor(RoleId::ADVISOR_CLONE_AWARE).shared();

    let referee = {
        let (adv1, adv2) = (adv1.clone(), adv2.clone());
        async move {
            let (a1, a2) = join(adv1, adv2).await;
            ctx.referee(&a1, &a2).await
        }
    };
    let unaided = ctx.branch(RoleId::TAKER_UNAIDED, None);
    let generic = {
        let adv1 = adv1.clone();
        async move { ctx.branch(RoleId::TAKER_GENERIC, Some(&adv1.await)).await }
    };
    let clone_aware = {
        let adv2 = adv2.clone();
        async move { ctx.branch(RoleId::TAKER_CLONE_AWARE, Some(&adv2.await)).await }
    };
    let (referee, unaided, generic, clone_aware) = join4(referee, unaided, generic, clone_aware).await;
    let (adv1, adv2) = join(adv1, adv2).await;

    let mut transcripts = Vec::new();
    let mut failures = Vec::new();
    let mut collect = |t: Option<Transcript>, f: Option<StageFailure>| {
        transcripts.extend(t);
        failures.extend(f);
    };

    let mut instructions = Vec::new();
    for o in [adv1, adv2] {
        collect(o.transcript, o.result.as_ref().err().cloned());
        instructions.extend(o.result.ok());
    }
    collect(referee.transcript, referee.result.as_ref().err().cloned());
    let verdict = referee.result.ok();

    let mut answers = BTreeMap::new();
    let mut sheets = Vec::new();
    for (role, (taker, scorer)) in RoleId::TAKERS.into_iter().zip([unaided, generic, clone_aware]) {
        collect(taker.transcript, taker.result.as_ref().err().cloned());
        if let Ok(set) = taker.result {
            answers.insert(role, set.into_inner());
        }
        collect(scorer.transcript, scorer.result.as_ref().err().cloned());
        sheets.extend(scorer.result.ok());
    }

    transcripts.sort_by_key(|t| t.role);
    failures.sort_by_key(|f| f.role);
    let status = match failures.iter().filter(|f| f.kind != FailureKind::Skipped).map(|f| f.role).min() {
        None if failures.is_empty() => TrialStatus::Complete,
        stage => TrialStatus::Failed {
            stage: stage.unwrap_or(failures[0].role),
            failures,
        },
    };
    TrialRecord {
        trial_id: plan.trial_id.clone(),
        trial_index: plan.trial_index,
        config_hash: plan.config_hash.clone(),
        transcripts,
        instructions,
        verdict,
        answers,
        sheets,
        status,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub parallelism: usize,
    /// Shuffles dispatch order. Records do not depend on it.
    pub seed: Option<u64>,
    pub clock: Clock,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            parallelism: 4,
            seed: None,
            clock: Clock::System,
        }
    }
}

/// Runs independent trials with at most `parallelism` in flight. Records are
/// handed to `on_record` as they finish (from this task only, so the
/// callback is the single writer) and returned in input order.
pub async fn run_batch<F>(
    plans: &[TrialPlan],
    backend: Arc<dyn ChatBackend>,
    options: BatchOptions,
    mut on_record: F,
) -> Result<Vec<TrialRecord>, OrchestratorError>
where
    F: FnMut(&TrialRecord),
{
    if options.parallelism == 0 {
        return Err(OrchestratorError::InvalidParallelism);
    }
    let mut order: Vec<usize> = (0..plans.len()).collect();
    if let Some(seed) = options.seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut slots: Vec<Option<TrialRecord>> = vec![None; plans.len()];
    let backend = &backend;
    let mut running = stream::iter(order)
        .map(|i| async move { (i, run_trial(&plans[i], backend.as_ref(), options.clock).await) })
        .buffer_unordered(options.parallelism);
    while let Some((i, record)) = running.next().await {
        on_record(&record);
        slots[i] = Some(record);
    }
    Ok(slots.into_iter().map(|r| r.expect("every trial ran")).collect())
}

/// Blocking wrapper around [`run_batch`] for callers without a runtime.
pub fn run_batch_blocking<F>(
    plans: &[TrialPlan],
    backend: Arc<dyn ChatBackend>,
    options: BatchOptions,
    on_record: F,
) -> Result<Vec<TrialRecord>, OrchestratorError>
where
    F: FnMut(&TrialRecord),
{
    block_on(run_batch(plans, backend, options, on_record))
}

fn block_on<T>(fut: impl Future<Output = T>) -> T {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
        .block_on(fut)
}

/// Substring provenance check: a role's request may contain another role's
/// response only along a declared edge. Text that also arrives through a
/// declared input, or that the template itself contains, is not a leak.
pub fn check_isolation(record: &TrialRecord) -> Vec<Violation> {
    let mut v = Vec::new();
    for receiver in &record.transcripts {
        let template = protocol::template_for(receiver.role);
        let mut legitimate: Vec<String> = Vec::new();
        for &u in receiver.role.upstream() {
            if let Some(t) = record.transcript(u) {
                legitimate.push(t.response_text.clone());
            }
            if let Some(a) = record.answers.get(&u) {
                legitimate.push(parsing::render_answers(a));
            }
        }
        for sender in &record.transcripts {
            let text = sender.response_text.trim();
            if sender.role == receiver.role || text.is_empty() || receiver.role.upstream().contains(&sender.role) {
                continue;
            }
            if !receiver.request_text.contains(text) {
                continue;
            }
            if template.body().contains(text) || legitimate.iter().any(|l| l.contains(text)) {
                continue;
            }
            v.push(Violation::new(
                format!("transcript[{}]", receiver.role),
                format!("request contains the response of role {} without a declared edge", sender.role),
            ));
        }
    }
    v
}
