//! Batch aggregation: instruction metrics (Table 1), referee preferences and
//! their logit (Table 3), rubric score means (Table 4) and the score
//! difference OLS (Table 5). Also builds the exemplar summarization request.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatRequest;
use crate::metrics::{self, TextMetrics};
use crate::model::{RegressionFit, RoleId, ScoreSheet, TrialRecord, VerdictKind};
use crate::stats::{self, DesignMatrix, StatsError, TwoSampleResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("analysis needs at least 2 complete records, found {0}")]
    TooFewRecords(usize),
    #[error("no instruction sets given")]
    EmptyInput,
    #[error("estimated {estimated} tokens exceeds the context budget of {budget}")]
    ContextBudgetExceeded { estimated: usize, budget: usize },
}

/// A statistic, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StatCell<T> {
    Value { value: T },
    Flagged { reason: String },
}

impl<T> StatCell<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            StatCell::Value { value } => Some(value),
            StatCell::Flagged { .. } => None,
        }
    }

    fn flagged(reason: impl Into<String>) -> StatCell<T> {
        StatCell::Flagged { reason: reason.into() }
    }
}

impl<T> From<Result<T, StatsError>> for StatCell<T> {
    fn from(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(value) => StatCell::Value { value },
            Err(e) => StatCell::flagged(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Summary {
    /// `values` must be nonempty.
    pub fn of(values: &[f64]) -> Summary {
        let (mean, sd) = stats::mean_and_sd(values);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            n: values.len(),
            mean,
            sd,
            min: sorted[0],
            q25: stats::quantile_sorted(&sorted, 0.25),
            median: stats::quantile_sorted(&sorted, 0.5),
            q75: stats::quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Table 1 row block for one advisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: RoleId,
    pub length: Summary,
    pub entropy: Summary,
    /// Artifacts that were blank; they enter the columns as 0 and 0.
    pub empty_count: usize,
}

/// Question split for Table 4: stories 1-8 test mental states, 9-16
/// physical causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPartition {
    pub mental: [u8; 8],
    pub physical: [u8; 8],
}

impl QuestionPartition {
    pub const STANDARD: QuestionPartition = QuestionPartition {
        mental: [1, 2, 3, 4, 5, 6, 7, 8],
        physical: [9, 10, 11, 12, 13, 14, 15, 16],
    };
}

impl Default for QuestionPartition {
    fn default() -> Self {
        QuestionPartition::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDispersion {
    pub n: usize,
    pub mean: f64,
    /// Between-trial standard deviation of per-trial means.
    pub sd: f64,
    /// `sd / sqrt(n)`.
    pub se: f64,
}

impl ScoreDispersion {
    fn of(per_trial: &[f64]) -> ScoreDispersion {
        let (mean, sd) = stats::mean_and_sd(per_trial);
        ScoreDispersion {
            n: per_trial.len(),
            mean,
            sd,
            se: sd / (per_trial.len() as f64).sqrt(),
        }
    }
}

/// Table 4 row: one taker graded by its designated scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakerScores {
    pub taker: RoleId,
    pub scorer: RoleId,
    pub mental: ScoreDispersion,
    pub physical: ScoreDispersion,
    pub combined: ScoreDispersion,
}

/// Per-trial means of one sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheetMeans {
    pub mental: f64,
    pub physical: f64,
    pub combined: f64,
}

pub fn sheet_means(sheet: &ScoreSheet, partition: &QuestionPartition) -> SheetMeans {
    let mean_of = |qs: &[u8]| {
        let total: u32 = qs.iter().map(|q| sheet.scores.get(q).copied().unwrap_or(0) as u32).sum();
        total as f64 / qs.len() as f64
    };
    let all: Vec<u8> = partition.mental.iter().chain(&partition.physical).copied().collect();
    SheetMeans {
        mental: mean_of(&partition.mental),
        physical: mean_of(&partition.physical),
        combined: mean_of(&all),
    }
}

/// Batch means and both dispersion conventions for a set of sheets.
pub fn score_aggregate(sheets: &[&ScoreSheet], partition: &QuestionPartition) -> [ScoreDispersion; 3] {
    let means: Vec<SheetMeans> = sheets.iter().map(|s| sheet_means(s, partition)).collect();
    let column = |f: fn(&SheetMeans) -> f64| ScoreDispersion::of(&means.iter().map(f).collect::<Vec<_>>());
    [column(|m| m.mental), column(|m| m.physical), column(|m| m.combined)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSummary {
    /// Trials preferring passage 1.
    pub k: u64,
    /// Trials preferring either passage.
    pub n: u64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAnalysis {
    /// Complete records analysed.
    pub n_trials: usize,
    /// Failed records left out.
    pub n_failed_excluded: usize,
    pub table1: Vec<SourceSummary>,
    /// Generic (sample 1) against clone-aware (sample 2).
    pub length_test: StatCell<TwoSampleResult>,
    pub entropy_test: StatCell<TwoSampleResult>,
    pub verdict_counts: BTreeMap<VerdictKind, usize>,
    /// Trials whose verdict prefers one passage; the sample for the
    /// binomial test and the logit.
    pub n_preference: usize,
    pub binomial: StatCell<BinomialSummary>,
    /// y = 1 when passage 2 is preferred, on delta length and entropy.
    pub logit: StatCell<RegressionFit>,
    pub table4: Vec<TakerScores>,
    /// Combined score of taker 6 minus taker 5, on the same deltas.
    pub ols: StatCell<RegressionFit>,
}

pub const LOGIT_TERMS: [&str; 3] = ["const", "delta_length", "delta_entropy"];

fn metric_columns(records: &[&TrialRecord], source: RoleId) -> (Vec<f64>, Vec<f64>, usize) {
    let mut lengths = Vec::with_capacity(records.len());
    let mut entropies = Vec::with_capacity(records.len());
    let mut empty = 0;
    for r in records {
        let a = r.instruction(source).expect("complete record has both artifacts");
        lengths.push(a.char_length as f64);
        entropies.push(a.entropy_bits);
        empty += a.is_empty as usize;
    }
    (lengths, entropies, empty)
}

/// Aggregates the complete records of a batch. Failed records are counted
/// and left out; input order does not matter.
pub fn analyze_batch(records: &[TrialRecord]) -> Result<BatchAnalysis, AnalysisError> {
    let mut complete: Vec<&TrialRecord> = records.iter().filter(|r| r.is_complete()).collect();
    complete.sort_by(|a, b| (a.trial_index, &a.trial_id).cmp(&(b.trial_index, &b.trial_id)));
    if complete.len() < 2 {
        return Err(AnalysisError::TooFewRecords(complete.len()));
    }
    let n_trials = complete.len();

    let (len1, ent1, empty1) = metric_columns(&complete, RoleId::ADVISOR_GENERIC);
    let (len2, ent2, empty2) = metric_columns(&complete, RoleId::ADVISOR_CLONE_AWARE);
    let table1 = vec![
        SourceSummary {
            source: RoleId::ADVISOR_GENERIC,
            length: Summary::of(&len1),
            entropy: Summary::of(&ent1),
            empty_count: empty1,
        },
        SourceSummary {
            source: RoleId::ADVISOR_CLONE_AWARE,
            length: Summary::of(&len2),
            entropy: Summary::of(&ent2),
            empty_count: empty2,
        },
    ];
    let length_test = stats::t_test(&len1, &len2).into();
    let entropy_test = stats::t_test(&ent1, &ent2).into();

    let mut verdict_counts: BTreeMap<VerdictKind, usize> = VerdictKind::ALL.iter().map(|&k| (k, 0)).collect();
    let mut y = Vec::new();
    let mut d_len = Vec::new();
    let mut d_ent = Vec::new();
    for (i, r) in complete.iter().enumerate() {
        let kind = r.verdict.as_ref().expect("complete record has a verdict").kind;
        *verdict_counts.get_mut(&kind).expect("all kinds present") += 1;
        let outcome = match kind {
            VerdictKind::UsefulPassage1 => 0.0,
            VerdictKind::UsefulPassage2 => 1.0,
            _ => continue,
        };
        y.push(outcome);
        d_len.push(len2[i] - len1[i]);
        d_ent.push(ent2[i] - ent1[i]);
    }
    let n_preference = y.len();
    let (binomial, logit) = if n_preference == 0 {
        let reason = "no verdict prefers either passage";
        (StatCell::flagged(reason), StatCell::flagged(reason))
    } else {
        let k = verdict_counts[&VerdictKind::UsefulPassage1] as u64;
        let n = n_preference as u64;
        let binomial = stats::binomial_two_sided(k, n, 0.5)
            .map(|p_value| BinomialSummary { k, n, p_value })
            .into();
        let logit = DesignMatrix::with_intercept(&[(LOGIT_TERMS[1], &d_len), (LOGIT_TERMS[2], &d_ent)])
            .and_then(|x| stats::fit_logistic(&x, &y))
            .into();
        (binomial, logit)
    };

    let partition = QuestionPartition::STANDARD;
    let mut table4 = Vec::new();
    let mut combined: BTreeMap<RoleId, Vec<f64>> = BTreeMap::new();
    for taker in RoleId::TAKERS {
        let scorer = taker.scorer().expect("taker");
        let sheets: Vec<&ScoreSheet> = complete
            .iter()
            .map(|r| r.sheet(scorer).expect("complete record has every sheet"))
            .collect();
        let [mental, physical, all] = score_aggregate(&sheets, &partition);
        combined.insert(taker, sheets.iter().map(|s| sheet_means(s, &partition).combined).collect());
        table4.push(TakerScores {
            taker,
            scorer,
            mental,
            physical,
            combined: all,
        });
    }
    let score_diff: Vec<f64> = combined[&RoleId::TAKER_CLONE_AWARE]
        .iter()
        .zip(&combined[&RoleId::TAKER_GENERIC])
        .map(|(b, a)| b - a)
        .collect();
    let all_d_len: Vec<f64> = len2.iter().zip(&len1).map(|(b, a)| b - a).collect();
    let all_d_ent: Vec<f64> = ent2.iter().zip(&ent1).map(|(b, a)| b - a).collect();
    let ols = DesignMatrix::with_intercept(&[(LOGIT_TERMS[1], &all_d_len), (LOGIT_TERMS[2], &all_d_ent)])
        .and_then(|x| stats::fit_ols(&x, &score_diff))
        .into();

    Ok(BatchAnalysis {
        n_trials,
        n_failed_excluded: records.len() - n_trials,
        table1,
        length_test,
        entropy_test,
        verdict_counts,
        n_preference,
        binomial,
        logit,
        table4,
        ols,
    })
}

/// Directive for the exemplar summarization job, verbatim.
pub const EXEMPLAR_DIRECTIVE: &str = "You have been presented with 250 sets of instructions to a participant in a Theory of Mind assessment. Please develop an exemplar instruction that best represents the commonalities in the instructions by capturing the most typical elements in the sets of instructions.";

/// Default context budget in tokens.
pub const DEFAULT_CONTEXT_BUDGET: usize = 128_000;

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    metrics::char_length(text).div_ceil(4)
}

/// Single user message: the directive, then the numbered instruction sets.
pub fn build_exemplar_request(
    instructions: &[&str],
    model_name: &str,
    budget_tokens: usize,
) -> Result<ChatRequest, AnalysisError> {
    if instructions.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut prompt = String::from(EXEMPLAR_DIRECTIVE);
    for (i, text) in instructions.iter().enumerate() {
        prompt.push_str(&format!("\n\nInstruction set {}:\n\n{}", i + 1, text));
    }
    let estimated = estimate_tokens(&prompt);
    if estimated > budget_tokens {
        return Err(AnalysisError::ContextBudgetExceeded {
            estimated,
            budget: budget_tokens,
        });
    }
    Ok(ChatRequest::user(model_name, 1.0, prompt).with_tag("exemplar", 0))
}

/// Stored output of the summarization job, for human inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub source: RoleId,
    pub n_instructions: usize,
    pub request_text: String,
    pub response_text: String,
    pub metrics: Option<TextMetrics>,
    pub backend_id: String,
}

impl Exemplar {
    pub fn new(source: RoleId, n_instructions: usize, request: &ChatRequest, response: &str, backend_id: &str) -> Exemplar {
        Exemplar {
            source,
            n_instructions,
            request_text: request.prompt_text(),
            response_text: response.to_string(),
            metrics: metrics::text_metrics(response).ok(),
            backend_id: backend_id.to_string(),
        }
    }
}

/// Nonempty instruction texts from `source` in complete records, in trial
/// order.
pub fn instruction_texts(records: &[TrialRecord], source: RoleId) -> Vec<&str> {
    let mut complete: Vec<&TrialRecord> = records.iter().filter(|r| r.is_complete()).collect();
    complete.sort_by_key(|r| r.trial_index);
    complete
        .iter()
        .filter_map(|r| r.instruction(source))
        .filter(|a| !a.is_empty)
        .map(|a| a.text.as_str())
        .collect()
}
