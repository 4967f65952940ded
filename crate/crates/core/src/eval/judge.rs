//! Statement support and classification judges.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::matching::greedy_match;
use super::statements::split_statements;
use crate::embed::{EmbeddingVector, Embedder};
use crate::error::{Error, Result};
use crate::gen::{ChatMessage, ChatProvider, ChatRequest};

pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

pub trait Judge: Send + Sync {
    /// For each statement, whether the contexts support it.
    fn support(&self, statements: &[String], contexts: &[String]) -> Result<Vec<bool>>;

    /// Compares answer statements against ground-truth statements.
    fn classify(&self, answer: &[String], truth: &[String]) -> Result<StatementCounts>;
}

/// True when `needle` occurs in `haystack` starting and ending at whitespace or the
/// ends of the string.
pub(crate) fn contains_verbatim(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        before.is_none_or(char::is_whitespace) && after.is_none_or(char::is_whitespace)
    })
}

/// Judges support by embedding similarity: a statement is supported when it appears
/// verbatim in a context or its cosine similarity to some context statement is at
/// least `tau`. Classification matches statements one-to-one with [`greedy_match`].
pub struct EmbeddingJudge {
    embedder: Arc<dyn Embedder>,
    tau: f64,
}

impl EmbeddingJudge {
    pub fn new(embedder: Arc<dyn Embedder>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau must be in (0, 1), got {tau}")));
        }
        Ok(Self { embedder, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn embed_all(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.embedder.embed_batch(texts)
    }

    /// Cosine similarity matrix, rows `a`, columns `b`.
    pub fn similarity(&self, a: &[String], b: &[String]) -> Result<Vec<Vec<f64>>> {
        let ea = self.embed_all(a)?;
        let eb = self.embed_all(b)?;
        Ok(ea
            .iter()
            .map(|x| eb.iter().map(|y| x.cosine(y)).collect())
            .collect())
    }
}

impl Judge for EmbeddingJudge {
    fn support(&self, statements: &[String], contexts: &[String]) -> Result<Vec<bool>> {
        let context_statements: Vec<String> = contexts
            .iter()
            .flat_map(|c| split_statements(c))
            .collect();
        if context_statements.is_empty() {
            return Ok(vec![false; statements.len()]);
        }
        let sim = self.similarity(statements, &context_statements)?;
        Ok(statements
            .iter()
            .zip(sim)
            .map(|(s, row)| {
                contexts.iter().any(|c| contains_verbatim(c, s))
                    || row.iter().any(|&x| x >= self.tau)
            })
            .collect())
    }

    fn classify(&self, answer: &[String], truth: &[String]) -> Result<StatementCounts> {
        let sim = self.similarity(answer, truth)?;
        let tp = greedy_match(&sim, self.tau).len();
        Ok(StatementCounts {
            true_positives: tp,
            false_positives: answer.len() - tp,
            false_negatives: truth.len() - tp,
        })
    }
}

/// Delegates support decisions to a chat model that answers "yes" or "no".
pub struct LlmJudge {
    provider: Arc<dyn ChatProvider>,
    model: String,
}

const JUDGE_SYSTEM: &str = "You verify statements against reference text. Reply with a single \
word: yes if the statement is supported by the reference text, otherwise no.";

impl LlmJudge {
    pub fn new(provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        Self {
            provider,
            model: model.into(),
        }
    }

    fn ask(&self, statement: &str, reference: &str) -> Result<bool> {
        let req = ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: JUDGE_SYSTEM.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: format!("Reference text:\n{reference}\n\nStatement: {statement}"),
                },
            ],
            top_p: 1.0,
        };
        let reply = self.provider.complete(&req)?;
        let word = reply
            .trim_start()
            .split(|c: char| !c.is_alphabetic())
            .next()
            .unwrap_or("")
            .to_ascii_lowercase();
        match word.as_str() {
            "yes" => Ok(true),
            "no" => Ok(false),
            _ => Err(Error::BadResponse(format!("judge reply is not yes/no: {reply:?}"))),
        }
    }
}

impl Judge for LlmJudge {
    fn support(&self, statements: &[String], contexts: &[String]) -> Result<Vec<bool>> {
        if contexts.is_empty() {
            return Ok(vec![false; statements.len()]);
        }
        let reference = contexts.join("\n\n");
        statements.iter().map(|s| self.ask(s, &reference)).collect()
    }

    /// Answer statements found in the ground truth are true positives, the rest false
    /// positives; ground-truth statements missing from the answer are false negatives.
    fn classify(&self, answer: &[String], truth: &[String]) -> Result<StatementCounts> {
        let truth_text = truth.join(" ");
        let answer_text = answer.join(" ");
        let tp = answer
            .iter()
            .map(|s| self.ask(s, &truth_text))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&b| b)
            .count();
        let missing = truth
            .iter()
            .map(|s| self.ask(s, &answer_text))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&b| !b)
            .count();
        Ok(StatementCounts {
            true_positives: tp,
            false_positives: answer.len() - tp,
            false_negatives: missing,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    EmbeddingThreshold,
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSpec {
    pub kind: JudgeKind,
    pub tau: f64,
}

impl Default for JudgeSpec {
    fn default() -> Self {
        Self {
            kind: JudgeKind::EmbeddingThreshold,
            tau: DEFAULT_TAU,
        }
    }
}

impl JudgeSpec {
    pub fn build(
        &self,
        embedder: Arc<dyn Embedder>,
        provider: Arc<dyn ChatProvider>,
        model: &str,
    ) -> Result<Box<dyn Judge>> {
        Ok(match self.kind {
            JudgeKind::EmbeddingThreshold => Box::new(EmbeddingJudge::new(embedder, self.tau)?),
            JudgeKind::LlmJudge => Box::new(LlmJudge::new(provider, model)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    fn judge() -> EmbeddingJudge {
        EmbeddingJudge::new(Arc::new(HashingEmbedder::new(256)), DEFAULT_TAU).unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn verbatim_containment_respects_word_boundaries() {
        assert!(contains_verbatim("The cell uses band n78. Next.", "The cell uses band n78."));
        assert!(!contains_verbatim("plan.", "an."));
        assert!(!contains_verbatim("x", ""));
    }

    #[test]
    fn tau_bounds() {
        let e: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(8));
        assert!(EmbeddingJudge::new(e.clone(), 0.0).is_err());
        assert!(EmbeddingJudge::new(e, 1.0).is_err());
    }

    #[test]
    fn support_by_similarity_and_containment() {
        let j = judge();
        let got = j
            .support(
                &s(&["The RIC hosts xApps.", "Cats purr loudly."]),
                &s(&["Overview: The RIC hosts xApps. More text follows."]),
            )
            .unwrap();
        assert_eq!(got, vec![true, false]);
        assert_eq!(j.support(&s(&["x"]), &[]).unwrap(), vec![false]);
    }

    #[test]
    fn classify_identical_and_disjoint() {
        let j = judge();
        let t = s(&["Alpha uses beta.", "Gamma is delta."]);
        assert_eq!(
            j.classify(&t, &t).unwrap(),
            StatementCounts {
                true_positives: 2,
                false_positives: 0,
                false_negatives: 0
            }
        );
    }

    struct Scripted(fn(&str) -> &'static str);
    impl ChatProvider for Scripted {
        fn complete(&self, req: &ChatRequest) -> Result<String> {
            Ok((self.0)(&req.messages[1].content).to_string())
        }
    }

    #[test]
    fn llm_judge_parses_replies() {
        let j = LlmJudge::new(
            Arc::new(Scripted(|p| if p.contains("Statement: A.") { "Yes." } else { "no" })),
            "m",
        );
        assert_eq!(j.support(&s(&["A.", "B."]), &s(&["ctx"])).unwrap(), vec![true, false]);
        let c = j.classify(&s(&["A.", "B."]), &s(&["A."])).unwrap();
        assert_eq!(c.true_positives, 1);
        assert_eq!(c.false_positives, 1);

        let bad = LlmJudge::new(Arc::new(Scripted(|_| "maybe")), "m");
        assert!(matches!(
            bad.support(&s(&["A."]), &s(&["c"])),
            Err(Error::BadResponse(_))
        ));
    }
}
