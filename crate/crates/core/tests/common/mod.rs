//! Independent oracles and fixture builders shared by the integration and
//! acceptance tests. Nothing here calls the statistics it is used to check.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tom_harness::backend::{BackendConfig, ChatBackend, MockEntry, MockScript};
use tom_harness::model::RoleSpec;
use tom_harness::orchestrator::{self, BatchOptions, Clock};
use tom_harness::TrialRecord;

pub fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn choose(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// Two-sided exact binomial p at p0 = 1/2 in exact integer arithmetic: the
/// total mass of outcomes no more likely than `k`.
pub fn binomial_half_oracle(k: u64, n: u64) -> f64 {
    let observed = choose(n, k);
    let mut mass = BigUint::from(0u32);
    for x in 0..=n {
        let c = choose(n, x);
        if c <= observed {
            mass += c;
        }
    }
    let total = BigUint::one() << n;
    if mass == total {
        return 1.0;
    }
    // both fit comfortably in f64 range for n < 1000
    mass.to_f64().unwrap() / total.to_f64().unwrap()
}

/// Composite Simpson rule on [a, b] with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Two-sided Student t tail by quadrature of the unnormalised density; the
/// normalising constant is integrated the same way, so no gamma function is
/// involved.
pub fn student_t_two_sided_oracle(t: f64, df: f64) -> f64 {
    // log density up to a constant, scaled so the peak is 1
    let g = |x: f64| (-(df + 1.0) / 2.0 * (x * x / df).ln_1p()).exp();
    // map [0, 1) onto [lo, inf)
    let tail_from = |lo: f64| {
        simpson(
            |u| {
                if u >= 1.0 {
                    return 0.0;
                }
                let x = lo + u / (1.0 - u);
                g(x) / ((1.0 - u) * (1.0 - u))
            },
            0.0,
            1.0,
            400_000,
        )
    };
    let half = tail_from(0.0);
    tail_from(t.abs()) / half
}

/// Entropy in bits per character with a hash map and plain summation.
pub fn entropy_oracle(text: &str) -> f64 {
    let mut counts: HashMap<char, usize> = HashMap::new();
    for c in text.chars() {
        *counts.entry(c).or_default() += 1;
    }
    let n = text.chars().count() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln() / std::f64::consts::LN_2
        })
        .sum()
}

/// Bernoulli log-likelihood of a logit model with rows that already carry
/// the intercept column.
pub fn logit_ll(rows: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, &yi)| {
            let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            // log(1 + e^eta) without overflow
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            yi * eta - softplus
        })
        .sum()
}

/// Maximises the logit likelihood by brute-force grid refinement: evaluate
/// the full 3^p grid of neighbours at the current step, move to the best,
/// halve the step when the centre wins.
pub fn logit_grid_search(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    let mut best = logit_ll(rows, y, &beta);
    let mut step = 1.0;
    let offsets: Vec<Vec<f64>> = (0..3usize.pow(p as u32))
        .map(|mut code| {
            (0..p)
                .map(|_| {
                    let d = (code % 3) as f64 - 1.0;
                    code /= 3;
                    d
                })
                .collect()
        })
        .collect();
    while step > 1e-9 {
        let mut moved = false;
        for o in &offsets {
            let cand: Vec<f64> = beta.iter().zip(o).map(|(b, d)| b + d * step).collect();
            let ll = logit_ll(rows, y, &cand);
            if ll > best {
                best = ll;
                beta = cand;
                moved = true;
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    beta
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// OLS by the normal equations.
pub fn ols_normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            xty[i] += r[i] * yi;
            for j in 0..p {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    gauss_solve(xtx, xty)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Pooled two-sample t statistic.
pub fn pooled_t(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let sp2 = ((n1 - 1.0) * sample_var(a) + (n2 - 1.0) * sample_var(b)) / (n1 + n2 - 2.0);
    (mean(a) - mean(b)) / (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt()
}

/// Standard normal draw by Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random logit data: `cols` predictor columns (no intercept) and 0/1 outcomes.
pub fn logit_dataset(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta: Vec<f64> = (0..=cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<Vec<f64>> = (0..cols).map(|_| (0..n).map(|_| normal(rng)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let eta = beta[0] + (0..cols).map(|c| beta[c + 1] * x[c][i]).sum::<f64>();
            let prob = 1.0 / (1.0 + (-eta).exp());
            if rng.gen::<f64>() < prob {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (x, y)
}

pub fn with_intercept(columns: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| std::iter::once(1.0).chain(columns.iter().map(|c| c[i])).collect()).collect()
}

// ---- engineered batch -------------------------------------------------------

pub const ENGINEERED_TRIALS: usize = 12;

pub const ENGINEERED_VERDICTS: [&str; ENGINEERED_TRIALS] = [
    "Useful, Passage 1",
    "Useful, Passage 2",
    "Useful, Passage 1",
    "Not Useful",
    "Useful, Passage 2",
    "Useful, Passage 1",
    "Useful, Passage 1",
    "I cannot decide.",
    "Useful, Passage 2",
    "Useful, Passage 1",
    "Useful, Passage 2",
    "Useful, Passage 1",
];

const WORDS: [&str; 12] = [
    "read", "each", "story", "slowly", "and", "ask", "what", "every", "character", "believes", "wants", "expects",
];

/// Advisor text for trial `i`; lengths and letter mixes vary by trial.
pub fn engineered_instruction(source: u8, i: usize) -> String {
    let words = 6 + (i * 5 + source as usize * 3) % 17;
    let mut s = String::new();
    for w in 0..words {
        let word = WORDS[(w * (source as usize + 1) + i) % WORDS.len()];
        s.push_str(word);
        s.push(if w % 5 == 4 { '.' } else { ' ' });
    }
    if source == 2 {
        s.push_str(" Your clone thinks as you do; flag the traps you would fall into.");
    }
    s
}

pub fn engineered_score(scorer: u8, trial: usize, question: u8) -> u8 {
    ((trial * 7 + question as usize * 3 + scorer as usize * (trial % 4 + 1)) % 3) as u8
}

pub fn engineered_answers(trial: usize) -> String {
    (1..=16).map(|q| format!("A{q}: Because of what character {q} believes in trial {trial}.")).collect::<Vec<_>>().join("\n")
}

pub fn engineered_sheet(scorer: u8, trial: usize) -> String {
    (1..=16)
        .map(|q| format!("{{A{q}: {} points}}", engineered_score(scorer, trial, q)))
        .collect::<Vec<_>>()
        .join(",\n")
}

pub fn engineered_script() -> MockScript {
    let per_trial = |f: &dyn Fn(usize) -> String| (0..ENGINEERED_TRIALS).map(f).collect::<Vec<String>>();
    let entry = |id: &str, texts: Vec<String>| {
        MockEntry::template(id, &texts.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let mut entries = vec![
        entry("advisor-generic", per_trial(&|i| engineered_instruction(1, i))),
        entry("advisor-clone-aware", per_trial(&|i| engineered_instruction(2, i))),
        entry("referee", ENGINEERED_VERDICTS.iter().map(|s| s.to_string()).collect()),
    ];
    for id in ["taker-unaided", "taker-instructed-generic", "taker-instructed-clone-aware"] {
        entries.push(entry(id, per_trial(&engineered_answers)));
    }
    for (id, scorer) in [("scorer-unaided", 7), ("scorer-instructed-generic", 8), ("scorer-instructed-clone-aware", 9)] {
        entries.push(entry(id, per_trial(&|i| engineered_sheet(scorer, i))));
    }
    MockScript::new("engineered", entries).unwrap()
}

pub fn fixed_clock() -> Clock {
    Clock::Fixed(Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap())
}

pub fn run_mock_batch(script: MockScript, trials: usize) -> Vec<TrialRecord> {
    let plans = orchestrator::plan_batch(trials, &RoleSpec::defaults("gpt-4-turbo"), &BackendConfig::mock()).unwrap();
    let backend: Arc<dyn ChatBackend> = Arc::new(script);
    let options = BatchOptions {
        parallelism: 4,
        seed: Some(7),
        clock: fixed_clock(),
    };
    orchestrator::run_batch_blocking(&plans, backend, options, |_| {}).unwrap()
}

pub fn engineered_batch() -> Vec<TrialRecord> {
    run_mock_batch(engineered_script(), ENGINEERED_TRIALS)
}

/// Statistics of the engineered batch computed from its inputs by hand.
pub struct EngineeredExpectations {
    pub len: [Vec<f64>; 2],
    pub ent: [Vec<f64>; 2],
    pub t_length: f64,
    pub p_length: f64,
    pub t_entropy: f64,
    pub p_entropy: f64,
    pub k_passage1: u64,
    pub n_preference: u64,
    pub binomial_p: f64,
    pub logit: Vec<f64>,
    /// Rows for takers 4, 5, 6: mental, physical, combined mean.
    pub table4: [[f64; 3]; 3],
    pub ols: Vec<f64>,
}

fn sheet_mean(scorer: u8, trial: usize, qs: std::ops::RangeInclusive<u8>) -> f64 {
    let n = qs.clone().count() as f64;
    qs.map(|q| engineered_score(scorer, trial, q) as f64).sum::<f64>() / n
}

pub fn engineered_expectations() -> EngineeredExpectations {
    let trials = 0..ENGINEERED_TRIALS;
    let column = |source: u8, f: &dyn Fn(&str) -> f64| -> Vec<f64> {
        trials.clone().map(|i| f(&engineered_instruction(source, i))).collect()
    };
    let chars = |s: &str| s.chars().count() as f64;
    let len = [column(1, &chars), column(2, &chars)];
    let ent = [column(1, &entropy_oracle), column(2, &entropy_oracle)];
    let t_length = pooled_t(&len[0], &len[1]);
    let t_entropy = pooled_t(&ent[0], &ent[1]);
    let df = (2 * ENGINEERED_TRIALS - 2) as f64;

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in trials.clone() {
        let pref = match ENGINEERED_VERDICTS[i] {
            "Useful, Passage 1" => 0.0,
            "Useful, Passage 2" => 1.0,
            _ => continue,
        };
        rows.push(vec![1.0, len[1][i] - len[0][i], ent[1][i] - ent[0][i]]);
        y.push(pref);
    }
    let n_preference = y.len() as u64;
    let k_passage1 = y.iter().filter(|v| **v == 0.0).count() as u64;

    let mut table4 = [[0.0; 3]; 3];
    for (row, scorer) in [7u8, 8, 9].into_iter().enumerate() {
        let mental: Vec<f64> = trials.clone().map(|i| sheet_mean(scorer, i, 1..=8)).collect();
        let physical: Vec<f64> = trials.clone().map(|i| sheet_mean(scorer, i, 9..=16)).collect();
        let combined: Vec<f64> = trials.clone().map(|i| sheet_mean(scorer, i, 1..=16)).collect();
        table4[row] = [mean(&mental), mean(&physical), mean(&combined)];
    }

    let ols_rows: Vec<Vec<f64>> = trials
        .clone()
        .map(|i| vec![1.0, len[1][i] - len[0][i], ent[1][i] - ent[0][i]])
        .collect();
    let ols_y: Vec<f64> = trials.clone().map(|i| sheet_mean(9, i, 1..=16) - sheet_mean(8, i, 1..=16)).collect();

    EngineeredExpectations {
        t_length,
        p_length: student_t_two_sided_oracle(t_length, df),
        t_entropy,
        p_entropy: student_t_two_sided_oracle(t_entropy, df),
        k_passage1,
        n_preference,
        binomial_p: binomial_half_oracle(k_passage1, n_preference),
        logit: logit_grid_search(&rows, &y),
        table4,
        ols: ols_normal_equations(&ols_rows, &ols_y),
        len,
        ent,
    }
}
