//! Corpus BLEU, per-experiment reports, run robustness and selection of the
//! most differentiating test examples.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bucket::fb_hash;
use crate::config::DomainConfig;
use crate::example::Example;
use crate::fidelity::FailReason;
use crate::mr::{tokenize, Token};

pub const MAX_NGRAM: usize = 4;
pub const DEFAULT_SELECTION_SIZE: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("missing candidates for {} example(s): {}", .0.len(), preview(.0))]
    MissingCandidates(Vec<String>),
    #[error("duplicate record for example `{example_id}` in experiment `{experiment_id}`")]
    DuplicateRecord {
        example_id: String,
        experiment_id: String,
    },
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}

/// Whitespace tokens of a response. Bracket tokens are removed unless
/// `keep_structure` is set; a word fused with a following standalone `[`
/// is a label and goes too.
pub fn bleu_tokens(text: &str, keep_structure: bool) -> Vec<String> {
    if keep_structure {
        return text.split_whitespace().map(str::to_string).collect();
    }
    let mut out: Vec<String> = Vec::new();
    let mut prev_term = false;
    for token in tokenize(text) {
        match token {
            Token::Term(t) => {
                out.push(t);
                prev_term = true;
            }
            Token::Open(label) => {
                if label.is_empty() && prev_term {
                    out.pop();
                }
                prev_term = false;
            }
            Token::Close => prev_term = false,
        }
    }
    out
}

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_NGRAM],
    pub totals: [u64; MAX_NGRAM],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl BleuStats {
    pub fn add_pair<S: AsRef<str>>(&mut self, candidate: &[S], reference: &[S]) {
        self.candidate_len += candidate.len() as u64;
        self.reference_len += reference.len() as u64;
        for n in 1..=MAX_NGRAM {
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            for (gram, count) in &cand {
                self.matches[n - 1] += (*count).min(refs.get(gram).copied().unwrap_or(0));
            }
            self.totals[n - 1] += candidate.len().saturating_sub(n - 1) as u64;
        }
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..MAX_NGRAM {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn precisions(&self) -> [f64; MAX_NGRAM] {
        std::array::from_fn(|n| match self.totals[n] {
            0 => 0.0,
            t => self.matches[n] as f64 / t as f64,
        })
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if c > r {
            1.0
        } else if c == 0.0 {
            0.0
        } else {
            (1.0 - r / c).exp()
        }
    }

    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_mean = self
            .precisions()
            .iter()
            .map(|p| p.ln())
            .sum::<f64>()
            / MAX_NGRAM as f64;
        self.brevity_penalty() * log_mean.exp()
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 over `(candidate, reference)` token pairs, single
/// reference, no smoothing.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut stats = BleuStats::default();
    for (c, r) in pairs {
        stats.add_pair(c, r);
    }
    Ok(stats.score())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: String,
    pub experiment_id: String,
    pub candidate_text: String,
    pub tree_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lenient_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FailReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment_id: String,
    /// Percentage of passing examples.
    pub tree_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lenient_tree_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    pub n_examples: usize,
    /// Strict pass per example, in test-set order.
    pub passes: Vec<bool>,
}

pub fn percentage(passed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * passed as f64 / total as f64
    }
}

/// Report for one experiment over the test ids `expected` (in order).
/// Records of other experiments are ignored.
pub fn aggregate(
    experiment_id: &str,
    expected: &[String],
    records: &[EvalRecord],
) -> Result<RunReport, MetricsError> {
    let mut by_id: BTreeMap<&str, &EvalRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| r.experiment_id == experiment_id) {
        if by_id.insert(&r.example_id, r).is_some() {
            return Err(MetricsError::DuplicateRecord {
                example_id: r.example_id.clone(),
                experiment_id: r.experiment_id.clone(),
            });
        }
    }
    let missing: Vec<String> = expected
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || expected.is_empty() {
        return Err(MetricsError::MissingCandidates(missing));
    }
    let chosen: Vec<&EvalRecord> = expected.iter().map(|id| by_id[id.as_str()]).collect();
    let passes: Vec<bool> = chosen.iter().map(|r| r.tree_pass).collect();
    let n = passes.len();
    let lenient = chosen
        .iter()
        .map(|r| r.lenient_pass)
        .collect::<Option<Vec<bool>>>()
        .map(|v| percentage(v.iter().filter(|p| **p).count(), n));
    Ok(RunReport {
        experiment_id: experiment_id.to_string(),
        tree_accuracy: percentage(passes.iter().filter(|p| **p).count(), n),
        lenient_tree_accuracy: lenient,
        bleu: None,
        n_examples: n,
        passes,
    })
}

/// Maximum tree accuracy over repeated runs of one configuration and the
/// population standard deviation.
pub fn robustness(reports: &[RunReport]) -> Result<(f64, f64), MetricsError> {
    let values: Vec<f64> = reports.iter().map(|r| r.tree_accuracy).collect();
    max_and_stddev(&values)
}

pub fn max_and_stddev(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewRuns(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((max, var.sqrt()))
}

/// `pass_matrix`: example id → experiment id → pass.
pub type PassMatrix = BTreeMap<String, BTreeMap<String, bool>>;

fn pass_count(matrix: &PassMatrix, id: &str) -> usize {
    matrix
        .get(id)
        .map_or(0, |row| row.values().filter(|p| **p).count())
}

/// Core of [`select_differentiating`] over precomputed `(id, bucket key)`
/// pairs in test-set order.
///
/// Per bucket the example with the fewest (but at least one) passing
/// experiments is chosen, earliest in test order on ties. Buckets are then
/// ranked by that count, ascending, ties again by test order.
pub fn select_by_bucket(keyed: &[(String, String)], matrix: &PassMatrix, k: usize) -> Vec<String> {
    // bucket key -> (count, position)
    let mut best: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (pos, (id, key)) in keyed.iter().enumerate() {
        let count = pass_count(matrix, id);
        if count == 0 {
            continue;
        }
        let entry = best.entry(key).or_insert((count, pos));
        if count < entry.0 {
            *entry = (count, pos);
        }
    }
    let mut ranked: Vec<(usize, usize)> = best.into_values().collect();
    ranked.sort();
    ranked
        .into_iter()
        .take(k)
        .map(|(_, pos)| keyed[pos].0.clone())
        .collect()
}

/// The `k` most differentiating test examples, at most one per FB bucket.
pub fn select_differentiating(
    test_set: &[Example],
    matrix: &PassMatrix,
    config: &DomainConfig,
    k: usize,
) -> Vec<String> {
    let keyed: Vec<(String, String)> = test_set
        .iter()
        .map(|e| (e.id.clone(), fb_hash(e, config).key))
        .collect();
    select_by_bucket(&keyed, matrix, k)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub bleu: Option<f64>,
    pub tree_accuracy: f64,
    pub lenient_tree_accuracy: Option<f64>,
    pub data_reduction: Option<f64>,
    pub tree_accuracy_stddev: Option<f64>,
}

/// Aligned text table; BLEU shown ×100.
pub fn render_table(rows: &[TableRow]) -> String {
    let headers = [
        "Experiment",
        "BLEU Score",
        "Tree Accuracy",
        "Lenient TreeAcc",
        "Data Reduction",
        "TreeAcc STDev",
    ];
    let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                opt(r.bleu.map(|b| b * 100.0), 2),
                format!("{:.1}", r.tree_accuracy),
                opt(r.lenient_tree_accuracy, 1),
                opt(r.data_reduction, 1),
                opt(r.tree_accuracy_stddev, 2),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        let mut parts = Vec::new();
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            parts.push(if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &headers.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in &cells {
        line(&mut out, row);
    }
    out
}

/// Ids of `matrix` rows whose pass count is zero everywhere.
pub fn all_fail_ids(matrix: &PassMatrix) -> BTreeSet<String> {
    matrix
        .iter()
        .filter(|(_, row)| row.values().all(|p| !p))
        .map(|(id, _)| id.clone())
        .collect()
}
