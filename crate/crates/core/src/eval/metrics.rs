//! Answer relevancy, context recall, answer correctness and faithfulness.

use tracing::warn;

use super::judge::{Judge, StatementCounts};
use super::statements::split_statements;
use crate::embed::Embedder;
use crate::error::{Error, Result};

pub const DEFAULT_OMEGA: f64 = 0.25;

/// Mean cosine similarity between each answer and its ground truth.
pub fn answer_relevancy(answers: &[String], truths: &[String], embedder: &dyn Embedder) -> Result<f64> {
    if answers.is_empty() || answers.len() != truths.len() {
        return Err(Error::InvalidConfig(format!(
            "answer_relevancy needs equal-length non-empty lists ({} answers, {} truths)",
            answers.len(),
            truths.len()
        )));
    }
    let ea = embedder.embed_batch(answers)?;
    let et = embedder.embed_batch(truths)?;
    let sum: f64 = ea.iter().zip(&et).map(|(a, t)| a.cosine(t)).sum();
    Ok(sum / answers.len() as f64)
}

/// Fraction of ground-truth statements the judge attributes to the contexts.
pub fn context_recall(ground_truth: &str, contexts: &[String], judge: &dyn Judge) -> Result<f64> {
    let statements = split_statements(ground_truth);
    if statements.is_empty() {
        return Err(Error::EmptyInput);
    }
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let supported = judge.support(&statements, contexts)?;
    Ok(fraction(&supported))
}

/// `tp / (tp + 0.5 * (fp + fn))`; all-zero counts are degenerate and score 0.
pub fn factual_f(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        warn!("factual F-score of zero statements is undefined; reporting 0");
        return 0.0;
    }
    tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64)
}

pub fn classify_statements(answer: &str, ground_truth: &str, judge: &dyn Judge) -> Result<StatementCounts> {
    let a = split_statements(answer);
    let t = split_statements(ground_truth);
    if a.is_empty() || t.is_empty() {
        return Err(Error::EmptyInput);
    }
    judge.classify(&a, &t)
}

/// `omega * similarity + (1 - omega) * f`.
pub fn blend_correctness(similarity: f64, f: f64, omega: f64) -> f64 {
    omega * similarity + (1.0 - omega) * f
}

pub fn correctness(
    answer: &str,
    ground_truth: &str,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    omega: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidConfig(format!("omega must be in [0, 1], got {omega}")));
    }
    let c = classify_statements(answer, ground_truth, judge)?;
    let f = factual_f(c.true_positives, c.false_positives, c.false_negatives);
    let sim = embedder
        .embed_text(answer)?
        .cosine(&embedder.embed_text(ground_truth)?);
    Ok(blend_correctness(sim, f, omega))
}

/// Supported claims over total claims in the answer.
pub fn faithfulness(answer: &str, contexts: &[String], judge: &dyn Judge) -> Result<f64> {
    let claims = split_statements(answer);
    if claims.is_empty() {
        return Err(Error::EmptyInput);
    }
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let supported = judge.support(&claims, contexts)?;
    Ok(fraction(&supported))
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}
