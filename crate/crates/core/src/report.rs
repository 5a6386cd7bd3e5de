//! Rendering of a [`BatchAnalysis`] as text tables and as a JSON document.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{BatchAnalysis, ScoreDispersion, StatCell, Summary};
use crate::model::{RegressionFit, VerdictKind};
use crate::stats::TwoSampleResult;

pub const REPORT_SCHEMA: &str = "tom-harness.report";
pub const REPORT_VERSION: u32 = 1;

/// Machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub analysis: BatchAnalysis,
}

impl ReportDocument {
    pub fn new(config_hash: &str, analysis: BatchAnalysis) -> ReportDocument {
        ReportDocument {
            schema: REPORT_SCHEMA.to_string(),
            schema_version: REPORT_VERSION,
            config_hash: config_hash.to_string(),
            analysis,
        }
    }
}

fn fmt_p(p: f64) -> String {
    if p == 0.0 {
        "0".into()
    } else if p < 1e-3 {
        format!("{p:.3e}")
    } else {
        format!("{p:.3}")
    }
}

fn summary_rows(out: &mut String, label: &str, a: &Summary, b: &Summary, digits: usize) {
    let rows: [(&str, fn(&Summary) -> f64); 7] = [
        ("mean", |s| s.mean),
        ("sd", |s| s.sd),
        ("min", |s| s.min),
        ("25%", |s| s.q25),
        ("50%", |s| s.median),
        ("75%", |s| s.q75),
        ("max", |s| s.max),
    ];
    for (i, (name, f)) in rows.iter().enumerate() {
        let head = if i == 0 { label } else { "" };
        let _ = writeln!(out, "{head:<10}{name:<6}{:>16.digits$}{:>16.digits$}", f(a), f(b));
    }
}

fn t_line(out: &mut String, label: &str, cell: &StatCell<TwoSampleResult>) {
    match cell {
        StatCell::Value { value } => {
            let _ = writeln!(out, "{label}: t({}) = {:.3}, p = {}", value.df, value.t, fmt_p(value.p_two_sided));
        }
        StatCell::Flagged { reason } => {
            let _ = writeln!(out, "{label}: not computed ({reason})");
        }
    }
}

fn coef_table(out: &mut String, fit: &RegressionFit, stat: &str) {
    let _ = writeln!(out, "{:<16}{:>14}{:>14}{:>10}{:>12}", "", "coef", "std err", stat, format!("P>|{stat}|"));
    for i in 0..fit.coef.len() {
        let _ = writeln!(
            out,
            "{:<16}{:>14.6}{:>14.6}{:>10.3}{:>12}",
            fit.terms[i],
            fit.coef[i],
            fit.se[i],
            fit.stat[i],
            fmt_p(fit.p[i])
        );
    }
}

fn dispersion(d: &ScoreDispersion) -> String {
    format!("{:.3} ({:.3}) [{:.4}]", d.mean, d.sd, d.se)
}

/// Plain-text rendering of Tables 1, 3, 4 and 5 with the tests that go
/// with them.
pub fn render_text(a: &BatchAnalysis) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Trials analysed: {} (failed and excluded: {})", a.n_trials, a.n_failed_excluded);
    let _ = writeln!(out);

    let _ = writeln!(out, "Table 1. Instruction length (characters) and information (bits per character)");
    let _ = writeln!(out, "{:<16}{:>16}{:>16}", "", "Generic (1)", "Clone-aware (2)");
    let (g, c) = (&a.table1[0], &a.table1[1]);
    summary_rows(&mut out, "Length", &g.length, &c.length, 2);
    summary_rows(&mut out, "Entropy", &g.entropy, &c.entropy, 4);
    let _ = writeln!(out, "{:<16}{:>16}{:>16}", "empty outputs", g.empty_count, c.empty_count);
    t_line(&mut out, "Length", &a.length_test);
    t_line(&mut out, "Entropy", &a.entropy_test);
    let _ = writeln!(out);

    let _ = writeln!(out, "Referee verdicts");
    for kind in VerdictKind::ALL {
        let _ = writeln!(out, "  {:<20}{:>6}", kind.label(), a.verdict_counts.get(&kind).copied().unwrap_or(0));
    }
    match &a.binomial {
        StatCell::Value { value } => {
            let _ = writeln!(
                out,
                "Binomial test: {} of {} prefer passage 1, two-sided p = {}",
                value.k,
                value.n,
                fmt_p(value.p_value)
            );
        }
        StatCell::Flagged { reason } => {
            let _ = writeln!(out, "Binomial test: not computed ({reason})");
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Table 3. Logit of referee preference (1 = passage 2), n = {}", a.n_preference);
    match &a.logit {
        StatCell::Value { value } => {
            coef_table(&mut out, value, "z");
            if let (Some(ll), Some(ll0)) = (value.log_likelihood, value.null_log_likelihood) {
                let _ = writeln!(out, "Log-likelihood = {ll:.3}, null = {ll0:.3}");
            }
            if let Some(p) = value.llr_p {
                let _ = writeln!(out, "LL ratio p-value = {}", fmt_p(p));
            }
        }
        StatCell::Flagged { reason } => {
            let _ = writeln!(out, "not computed ({reason})");
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Table 4. Rubric scores: mean (sd) [se] over trials, designated scorer");
    let _ = writeln!(out, "{:<14}{:>28}{:>28}{:>28}", "taker", "mental", "physical", "combined");
    for row in &a.table4 {
        let _ = writeln!(
            out,
            "{:<14}{:>28}{:>28}{:>28}",
            format!("{} (by {})", row.taker, row.scorer),
            dispersion(&row.mental),
            dispersion(&row.physical),
            dispersion(&row.combined)
        );
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Table 5. OLS of combined score difference (taker 6 - taker 5)");
    match &a.ols {
        StatCell::Value { value } => {
            coef_table(&mut out, value, "t");
            if let (Some(rss), Some(df)) = (value.residual_sum_squares, value.residual_df) {
                let _ = writeln!(out, "RSS = {rss:.6}, residual df = {df}");
            }
            if value.degenerate {
                let _ = writeln!(out, "zero residual variance: standard errors and p-values are placeholders");
            }
        }
        StatCell::Flagged { reason } => {
            let _ = writeln!(out, "not computed ({reason})");
        }
    }
    out
}
