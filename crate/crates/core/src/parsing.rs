//! Extraction of answers, rubric scores and referee verdicts from raw model
//! output. Parsers borrow the raw text and never alter it.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RefereeVerdict, RoleId, ScoreSheet, VerdictKind, QUESTION_COUNT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing answers for questions {0:?}")]
    MissingAnswer(Vec<u8>),
    #[error("question {0} is answered twice with different text")]
    DuplicateAnswer(u8),
    #[error("missing scores for questions {0:?}")]
    MissingScore(Vec<u8>),
    #[error("question {question} scored {value}, outside 0-2")]
    ScoreOutOfRange { question: u8, value: i64 },
    #[error("question {0} has a non-integer score")]
    NonIntegerScore(u8),
    #[error("question {0} is scored twice with different values")]
    DuplicateScore(u8),
}

/// Answers to all sixteen questions, keyed 1..=16.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerSet(BTreeMap<u8, String>);

impl AnswerSet {
    pub fn answers(&self) -> &BTreeMap<u8, String> {
        &self.0
    }

    pub fn into_inner(self) -> BTreeMap<u8, String> {
        self.0
    }

    pub fn get(&self, question: u8) -> Option<&str> {
        self.0.get(&question).map(String::as_str)
    }

    /// Canonical `A<n>: <answer>` lines in question order.
    pub fn render(&self) -> String {
        render_answers(&self.0)
    }
}

pub fn render_answers(answers: &BTreeMap<u8, String>) -> String {
    answers
        .iter()
        .map(|(q, a)| format!("A{q}: {a}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn answer_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:^|[^\p{L}\p{N}])(\**A(\d{1,2})\**[ \t]*:\**)").expect("valid answer regex")
    })
}

fn score_entry() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:^|[^\p{L}\p{N}])\**A(\d{1,2})\**[ \t]*:\**[ \t]*([+-]?\d+(?:[.,]\d+)?)(?:[ \t]*points?)?")
            .expect("valid score regex")
    })
}

// Drops a trailing line that holds only list-bullet punctuation, which
// belongs to the next answer's marker rather than to this answer.
fn strip_dangling_bullet(text: &str) -> &str {
    let text = text.trim_end();
    let last_line_start = text.rfind('\n').map_or(0, |i| i + 1);
    let last = text[last_line_start..].trim();
    let is_bullet = !last.is_empty()
        && (last.chars().all(|c| "-*•+>#".contains(c))
            || (last.len() > 1
                && last.ends_with(['.', ')'])
                && last[..last.len() - 1].chars().all(|c| c.is_ascii_digit())));
    if is_bullet {
        text[..last_line_start].trim_end()
    } else {
        text
    }
}

/// Extracts `A<n>: <response>` answers for questions 1 to 16.
///
/// Prose before the first marker is ignored; each response runs to the next
/// marker or the end of the text. Markdown bullets and bold markers around
/// the `A<n>:` label are tolerated.
pub fn parse_answers(raw: &str) -> Result<AnswerSet, ParseError> {
    let markers: Vec<(usize, usize, u32)> = answer_marker()
        .captures_iter(raw)
        .map(|c| {
            let m = c.get(1).expect("group 1");
            let n = c[2].parse::<u32>().expect("digits");
            (m.start(), m.end(), n)
        })
        .collect();
    let mut answers = BTreeMap::new();
    for (i, &(_, content_start, n)) in markers.iter().enumerate() {
        let content_end = markers.get(i + 1).map_or(raw.len(), |next| next.0);
        if !(1..=QUESTION_COUNT as u32).contains(&n) {
            continue;
        }
        let n = n as u8;
        let text = strip_dangling_bullet(&raw[content_start..content_end]);
        let text = text.trim_start_matches('*').trim();
        if text.is_empty() {
            continue;
        }
        match answers.get(&n) {
            Some(existing) if existing != text => return Err(ParseError::DuplicateAnswer(n)),
            Some(_) => {}
            None => {
                answers.insert(n, text.to_string());
            }
        }
    }
    let missing: Vec<u8> = (1..=QUESTION_COUNT).filter(|q| !answers.contains_key(q)).collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingAnswer(missing));
    }
    Ok(AnswerSet(answers))
}

/// Extracts rubric scores written `{A<n>: <x> points}`, `A<n>: <x> points`
/// or `A<n>: <x>`, requiring an integer 0, 1 or 2 for each of the sixteen
/// questions.
pub fn parse_scores(raw: &str, scorer: RoleId) -> Result<ScoreSheet, ParseError> {
    let mut scores = BTreeMap::new();
    for caps in score_entry().captures_iter(raw) {
        let Ok(n) = caps[1].parse::<u8>() else { continue };
        if !(1..=QUESTION_COUNT).contains(&n) {
            continue;
        }
        let value_text = &caps[2];
        if value_text.contains(['.', ',']) {
            return Err(ParseError::NonIntegerScore(n));
        }
        let value = value_text.parse::<i64>().unwrap_or(if value_text.starts_with('-') {
            i64::MIN
        } else {
            i64::MAX
        });
        if !(0..=2).contains(&value) {
            return Err(ParseError::ScoreOutOfRange { question: n, value });
        }
        let value = value as u8;
        match scores.get(&n) {
            Some(existing) if *existing != value => return Err(ParseError::DuplicateScore(n)),
            Some(_) => {}
            None => {
                scores.insert(n, value);
            }
        }
    }
    let missing: Vec<u8> = (1..=QUESTION_COUNT).filter(|q| !scores.contains_key(q)).collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingScore(missing));
    }
    Ok(ScoreSheet {
        scorer_role: scorer,
        scores,
    })
}

/// Canonical scorer output for a sheet, in the format the scorer prompt asks
/// for.
pub fn render_scores(sheet: &ScoreSheet) -> String {
    sheet
        .scores
        .iter()
        .map(|(q, x)| format!("{{A{q}: {x} points}}"))
        .collect::<Vec<_>>()
        .join(",\n")
}

fn normalize_for_verdict(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len() + 2);
    out.push(' ');
    let mut last_space = true;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    if !last_space {
        out.push(' ');
    }
    out
}

/// Classifies referee output. Exactly one of the three canonical phrases
/// (case and punctuation ignored) gives that verdict; none or several give
/// `Noncompliant`.
pub fn parse_verdict(raw: &str) -> RefereeVerdict {
    let normalized = normalize_for_verdict(raw);
    let found: Vec<VerdictKind> = [
        (" useful passage 1 ", VerdictKind::UsefulPassage1),
        (" useful passage 2 ", VerdictKind::UsefulPassage2),
        (" not useful ", VerdictKind::NotUseful),
    ]
    .into_iter()
    .filter(|(phrase, _)| normalized.contains(phrase))
    .map(|(_, kind)| kind)
    .collect();
    let kind = match found.as_slice() {
        [only] => *only,
        _ => VerdictKind::Noncompliant,
    };
    RefereeVerdict {
        kind,
        raw_text: raw.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sixteen(f: impl Fn(u8) -> String) -> String {
        (1..=16).map(f).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn plain_answers() {
        let raw = sixteen(|n| {
            if n == 1 {
                "A1: Because Jim knows Simon always lies.".into()
            } else {
                format!("A{n}: answer {n}.")
            }
        });
        let set = parse_answers(&raw).unwrap();
        assert_eq!(set.answers().len(), 16);
        assert_eq!(set.get(1), Some("Because Jim knows Simon always lies."));
        assert_eq!(set.get(16), Some("answer 16."));
    }

    #[test]
    fn order_insensitive() {
        let forward = sixteen(|n| format!("A{n}: answer {n}."));
        let backward = (1..=16).rev().map(|n| format!("A{n}: answer {n}.")).collect::<Vec<_>>().join("\n");
        assert_eq!(parse_answers(&forward).unwrap(), parse_answers(&backward).unwrap());
    }

    #[test]
    fn missing_sixteenth() {
        let raw = (1..=15).map(|n| format!("A{n}: x")).collect::<Vec<_>>().join("\n");
        assert_eq!(parse_answers(&raw), Err(ParseError::MissingAnswer(vec![16])));
        assert_eq!(
            parse_answers("nothing here"),
            Err(ParseError::MissingAnswer((1..=16).collect()))
        );
    }

    #[test]
    fn markdown_and_prose_tolerated() {
        let mut raw = String::from("Here are my answers:\n\n");
        for n in 1..=16 {
            raw.push_str(&format!("- **A{n}:** Reason number {n}.\n\n"));
        }
        raw.push_str("\n");
        let set = parse_answers(&raw).unwrap();
        assert_eq!(set.get(3), Some("Reason number 3."));
        assert_eq!(set.get(16), Some("Reason number 16."));
        let numbered = sixteen(|n| format!("{n}. A{n}: item {n}"));
        assert_eq!(parse_answers(&numbered).unwrap().get(4), Some("item 4"));
    }

    #[test]
    fn duplicates() {
        let mut raw = sixteen(|n| format!("A{n}: x{n}"));
        raw.push_str("\nA3: x3");
        assert!(parse_answers(&raw).is_ok());
        raw.push_str("\nA3: something else");
        assert_eq!(parse_answers(&raw), Err(ParseError::DuplicateAnswer(3)));
    }

    #[test]
    fn scores_in_prompt_format() {
        let raw = sixteen(|n| format!("{{A{n}: {} points}},", if n == 10 { 2 } else { n % 3 }));
        let sheet = parse_scores(&raw, RoleId::SCORER_UNAIDED).unwrap();
        assert_eq!(sheet.scores[&10], 2);
        assert_eq!(sheet.scores[&4], 1);
        assert_eq!(sheet.scorer_role, RoleId::SCORER_UNAIDED);
    }

    #[test]
    fn tolerant_score_variants() {
        let raw = sixteen(|n| if n % 2 == 0 { format!("A{n}: 2 points") } else { format!("A{n}: 1") });
        let sheet = parse_scores(&raw, RoleId::SCORER_GENERIC).unwrap();
        assert_eq!(sheet.scores[&2], 2);
        assert_eq!(sheet.scores[&1], 1);
        assert!(parse_scores("{A1: 1 point}", RoleId::SCORER_GENERIC).is_err());
    }

    #[test]
    fn score_errors() {
        let with = |bad: &str| {
            let mut raw = sixteen(|n| format!("{{A{n}: 2 points}}"));
            raw = raw.replacen("{A3: 2 points}", bad, 1);
            raw
        };
        assert_eq!(
            parse_scores(&with("{A3: 5 points}"), RoleId::SCORER_UNAIDED),
            Err(ParseError::ScoreOutOfRange { question: 3, value: 5 })
        );
        assert_eq!(
            parse_scores(&with("{A3: -1 points}"), RoleId::SCORER_UNAIDED),
            Err(ParseError::ScoreOutOfRange { question: 3, value: -1 })
        );
        assert_eq!(
            parse_scores(&with("{A3: 1.5 points}"), RoleId::SCORER_UNAIDED),
            Err(ParseError::NonIntegerScore(3))
        );
        assert_eq!(
            parse_scores(&with(""), RoleId::SCORER_UNAIDED),
            Err(ParseError::MissingScore(vec![3]))
        );
        let dup = format!("{}\n{{A3: 1 points}}", with("{A3: 2 points}"));
        assert_eq!(
            parse_scores(&dup, RoleId::SCORER_UNAIDED),
            Err(ParseError::DuplicateScore(3))
        );
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("Useful, Passage 1").kind, VerdictKind::UsefulPassage1);
        assert_eq!(
            parse_verdict("After review: useful, passage 2.").kind,
            VerdictKind::UsefulPassage2
        );
        assert_eq!(parse_verdict("'Not Useful'").kind, VerdictKind::NotUseful);
        assert_eq!(
            parse_verdict("Both passages are equally useful.").kind,
            VerdictKind::Noncompliant
        );
        assert_eq!(
            parse_verdict("Useful, Passage 1. Then again, Not Useful.").kind,
            VerdictKind::Noncompliant
        );
        assert_eq!(parse_verdict("Useful, Passage 12").kind, VerdictKind::Noncompliant);
        assert_eq!(parse_verdict("").kind, VerdictKind::Noncompliant);
        let raw = "  USEFUL,\n PASSAGE 1 \n";
        let v = parse_verdict(raw);
        assert_eq!(v.kind, VerdictKind::UsefulPassage1);
        assert_eq!(v.raw_text, raw);
    }

    fn answer_text() -> impl Strategy<Value = String> {
        "[a-z][a-z ,.'!?\n]{0,40}[a-z.]".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn answers_round_trip(texts in prop::collection::vec(answer_text(), 16)) {
            let map: BTreeMap<u8, String> =
                texts.into_iter().enumerate().map(|(i, t)| (i as u8 + 1, t)).collect();
            let rendered = render_answers(&map);
            prop_assert_eq!(parse_answers(&rendered).unwrap().into_inner(), map);
        }

        #[test]
        fn scores_round_trip(values in prop::collection::vec(0u8..=2, 16)) {
            let sheet = ScoreSheet {
                scorer_role: RoleId::SCORER_CLONE_AWARE,
                scores: values.into_iter().enumerate().map(|(i, v)| (i as u8 + 1, v)).collect(),
            };
            prop_assert_eq!(parse_scores(&render_scores(&sheet), RoleId::SCORER_CLONE_AWARE).unwrap(), sheet);
        }

        #[test]
        fn verdict_is_total(raw in "\\PC{0,200}") {
            let v = parse_verdict(&raw);
            prop_assert_eq!(v.raw_text, raw);
        }
    }
}
