//! RAG quality metrics and the evaluation harness.
//!
//! All four metrics run offline with the embedding-threshold judge; an LLM judge can
//! be swapped in through the [`Judge`] trait.

mod judge;
mod matching;
mod metrics;
mod statements;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

pub use judge::{
    EmbeddingJudge, Judge, JudgeKind, JudgeSpec, LlmJudge, StatementCounts, DEFAULT_TAU,
};
pub use matching::greedy_match;
pub use metrics::{
    answer_relevancy, blend_correctness, classify_statements, context_recall, correctness,
    factual_f, faithfulness, DEFAULT_OMEGA,
};
pub use statements::split_statements;

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Test-set size used per dataset.
pub const DEFAULT_TESTSET_SIZE: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub question: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_contexts: Option<Vec<String>>,
}

pub fn load_testset(path: impl AsRef<Path>) -> Result<Vec<TestCase>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let case: TestCase = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if case.question.trim().is_empty() || case.ground_truth.trim().is_empty() {
            return Err(parse_err("question and ground_truth must be non-empty".into()));
        }
        cases.push(case);
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rag,
    Vanilla,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Rag => "rag",
            Mode::Vanilla => "vanilla",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rag" => Ok(Mode::Rag),
            "vanilla" => Ok(Mode::Vanilla),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

/// Something that answers questions: the full pipeline or a stand-in.
pub trait AnswerSource: Sync {
    /// Returns the answer and, in rag mode, the retrieved context texts in rank order.
    fn answer(&self, question: &str, mode: Mode) -> Result<(String, Option<Vec<String>>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub testcase: TestCase,
    pub answer: Option<String>,
    pub retrieved_contexts: Option<Vec<String>>,
    pub answer_relevancy: Option<f64>,
    pub context_recall: Option<f64>,
    pub correctness: Option<f64>,
    pub faithfulness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub answer_relevancy: Option<f64>,
    pub context_recall: Option<f64>,
    pub correctness: Option<f64>,
    pub faithfulness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub model_name: String,
    pub mode: Mode,
    /// Cases that produced scores.
    pub n_cases: usize,
    pub n_failed: usize,
    pub means: MetricMeans,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub dataset_name: String,
    pub model_name: String,
    pub mode: Mode,
    pub omega: f64,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dataset_name: "testset".into(),
            model_name: String::new(),
            mode: Mode::Rag,
            omega: DEFAULT_OMEGA,
            exec: Execution::default(),
        }
    }
}

/// Scores one answered case. Metrics that need retrieved contexts are absent when
/// `contexts` is `None`.
pub fn score_case(
    case: &TestCase,
    answer: &str,
    contexts: Option<&[String]>,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    omega: f64,
) -> Result<EvalRecord> {
    let correctness = correctness(answer, &case.ground_truth, judge, embedder, omega)?;
    let (ar, recall, faithful) = match contexts {
        Some(ctx) => (
            Some(answer_relevancy(
                &[answer.to_owned()],
                std::slice::from_ref(&case.ground_truth),
                embedder,
            )?),
            Some(context_recall(&case.ground_truth, ctx, judge)?),
            Some(faithfulness(answer, ctx, judge)?),
        ),
        None => (None, None, None),
    };
    Ok(EvalRecord {
        testcase: case.clone(),
        answer: Some(answer.to_owned()),
        retrieved_contexts: contexts.map(<[String]>::to_vec),
        answer_relevancy: ar,
        context_recall: recall,
        correctness: Some(correctness),
        faithfulness: faithful,
        error: None,
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Answers every case through `source`, scores it and aggregates the means.
///
/// Cases run through `opts.exec`; a failing case is kept in the records with its
/// error and excluded from the means.
pub fn run_eval(
    testset: &[TestCase],
    source: &dyn AnswerSource,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::InvalidConfig("test set is empty".into()));
    }
    if testset.len() != DEFAULT_TESTSET_SIZE {
        warn!(
            cases = testset.len(),
            expected = DEFAULT_TESTSET_SIZE,
            "test set size differs from the standard protocol"
        );
    }
    let records = opts.exec.map(testset, |case| {
        let scored = source
            .answer(&case.question, opts.mode)
            .and_then(|(answer, contexts)| {
                let contexts = match opts.mode {
                    Mode::Rag => Some(contexts.unwrap_or_default()),
                    Mode::Vanilla => None,
                };
                score_case(case, &answer, contexts.as_deref(), judge, embedder, opts.omega)
            });
        scored.unwrap_or_else(|e| {
            warn!(question = %case.question, error = %e, "evaluation case failed");
            EvalRecord {
                testcase: case.clone(),
                answer: None,
                retrieved_contexts: None,
                answer_relevancy: None,
                context_recall: None,
                correctness: None,
                faithfulness: None,
                error: Some(e.to_string()),
            }
        })
    });

    let n_failed = records.iter().filter(|r| r.error.is_some()).count();
    let means = MetricMeans {
        answer_relevancy: mean(records.iter().map(|r| r.answer_relevancy)),
        context_recall: mean(records.iter().map(|r| r.context_recall)),
        correctness: mean(records.iter().map(|r| r.correctness)),
        faithfulness: mean(records.iter().map(|r| r.faithfulness)),
    };
    Ok(EvalReport {
        dataset_name: opts.dataset_name.clone(),
        model_name: opts.model_name.clone(),
        mode: opts.mode,
        n_cases: records.len() - n_failed,
        n_failed,
        means,
        records,
    })
}

/// Plain-text table with one row per metric and one column per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    type Getter = fn(&MetricMeans) -> Option<f64>;
    let rows: [(&str, Getter); 4] = [
        ("A) Answer relevancy", |m| m.answer_relevancy),
        ("B) Context recall", |m| m.context_recall),
        ("C) Correctness", |m| m.correctness),
        ("D) Faithfulness", |m| m.faithfulness),
    ];
    let headers: Vec<String> = reports
        .iter()
        .map(|r| {
            let model = if r.model_name.is_empty() { "model" } else { &r.model_name };
            format!("{}/{} ({})", r.dataset_name, model, r.mode)
        })
        .collect();
    let width = headers.iter().map(String::len).max().unwrap_or(0).max(8);
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);

    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "Metric");
    for h in &headers {
        let _ = write!(out, "  {h:>width$}");
    }
    out.push('\n');
    for (label, get) in rows {
        let _ = write!(out, "{label:label_w$}");
        for r in reports {
            let cell = get(&r.means).map_or_else(|| "-".to_string(), |v| format!("{:.1}%", v * 100.0));
            let _ = write!(out, "  {cell:>width$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:label_w$}", "Cases (failed)");
    for r in reports {
        let cell = format!("{} ({})", r.n_cases, r.n_failed);
        let _ = write!(out, "  {cell:>width$}");
    }
    out.push('\n');
    out
}
