//! Embedding providers.
//!
//! Every provider returns L2-normalized vectors, so cosine similarity anywhere in the
//! crate is a plain dot product.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::remote::{JsonClient, RetryPolicy};

pub const EMBED_API_KEY_ENV: &str = "RAGFORGE_EMBED_API_KEY";
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_SEED: u64 = 0x5e_ed0f_7e57;
/// 8192 tokens at roughly four characters per token.
pub const DEFAULT_MAX_INPUT_CHARS: usize = 8192 * 4;

const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadResponse("embedding has non-finite values".into()));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::BadResponse("embedding has zero norm".into()));
        }
        for v in &mut values {
            *v = (f64::from(*v) / norm) as f32;
        }
        Ok(Self(values))
    }

    /// Wraps values that are already unit length (within 1e-6).
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let v = Self(values);
        if v.0.iter().any(|x| !x.is_finite()) || (v.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "vector is not unit length (norm {})",
                v.norm()
            )));
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Cosine similarity, which for unit vectors is the dot product.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Dot product accumulated in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn model_name(&self) -> &str;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    /// Embeds many texts; element `i` equals `embed_text(texts[i])`.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed_text(t).map_err(|e| Error::BatchItem {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    RemoteService,
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    /// Base URL of an OpenAI-compatible service (remote only).
    pub endpoint: Option<String>,
    pub model_name: String,
    pub dim: usize,
    pub max_input_chars: usize,
    pub batch_size: usize,
    /// Hash seed for the deterministic embedder.
    pub seed: u64,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::DeterministicTest,
            endpoint: None,
            model_name: "hashing-bow".into(),
            dim: DEFAULT_DIM,
            max_input_chars: DEFAULT_MAX_INPUT_CHARS,
            batch_size: 32,
            seed: DEFAULT_SEED,
            max_in_flight: 4,
            timeout_ms: 30_000,
            retry: RetryPolicy::default(),
        }
    }
}

impl EmbedderSpec {
    pub fn deterministic(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self, chunk_size: usize) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedder dim must be > 0".into()));
        }
        if self.max_input_chars < chunk_size {
            return Err(Error::InvalidConfig(format!(
                "max_input_chars ({}) is smaller than the chunk size ({chunk_size})",
                self.max_input_chars
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("embedder batch_size must be > 0".into()));
        }
        if self.kind == EmbedderKind::RemoteService && self.endpoint.is_none() {
            return Err(Error::InvalidConfig("remote embedder needs an endpoint".into()));
        }
        Ok(())
    }

    /// Instantiates the provider. Remote credentials come from `RAGFORGE_EMBED_API_KEY`.
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate(0)?;
        Ok(match self.kind {
            EmbedderKind::DeterministicTest => Box::new(HashingEmbedder::from_spec(self)),
            EmbedderKind::RemoteService => Box::new(RemoteEmbedder::new(
                self.clone(),
                std::env::var(EMBED_API_KEY_ENV).ok(),
            )?),
        })
    }
}

fn truncate_input(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => {
            warn!(max_chars, "embedding input truncated");
            &text[..byte]
        }
        None => text,
    }
}

/// Bag-of-words embedder: each lowercase whitespace token is hashed into one of
/// `dim` buckets and the count vector is normalized.
///
/// Tokens are stripped of leading and trailing punctuation; a token made only of
/// punctuation is kept as-is. Hashing is pure integer arithmetic, so vectors are
/// identical across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    max_input_chars: usize,
    model_name: String,
    exec: Execution,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self::from_spec(&EmbedderSpec::deterministic(dim))
    }

    pub fn from_spec(spec: &EmbedderSpec) -> Self {
        Self {
            dim: spec.dim,
            seed: spec.seed,
            max_input_chars: spec.max_input_chars,
            model_name: spec.model_name.clone(),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn bucket(&self, token: &str) -> usize {
        (stable_hash(token.as_bytes(), self.seed) % self.dim as u64) as usize
    }

    /// Raw bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<u32> {
        let mut counts = vec![0u32; self.dim];
        for tok in tokenize(text) {
            counts[self.bucket(&tok)] += 1;
        }
        counts
    }
}

/// Lowercased whitespace tokens with edge punctuation removed.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|raw| {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        let tok = if trimmed.is_empty() { raw } else { trimmed };
        tok.to_lowercase()
    })
}

/// FNV-1a over the bytes with a seeded offset basis, finished with the
/// splitmix64 mixer so the low bits used for bucketing are well distributed.
pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let text = truncate_input(text, self.max_input_chars);
        let counts = self.counts(text);
        EmbeddingVector::normalized(counts.into_iter().map(|c| c as f32).collect())
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.exec
            .map_indexed(texts, |index, t| {
                self.embed_text(t).map_err(|e| Error::BatchItem {
                    index,
                    source: Box::new(e),
                })
            })
            .into_iter()
            .collect()
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

/// Client for an OpenAI-compatible `POST {endpoint}/v1/embeddings` service.
#[derive(Debug)]
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    url: String,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec, api_key: Option<String>) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("remote embedder needs an endpoint".into()))?;
        let url = format!("{}/v1/embeddings", endpoint.trim_end_matches('/'));
        let client = JsonClient::new(
            api_key,
            spec.retry,
            spec.max_in_flight,
            Duration::from_millis(spec.timeout_ms),
        )?;
        Ok(Self { spec, url, client })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let resp: EmbeddingsResponse = self.client.post(
            &self.url,
            &EmbeddingsRequest {
                model: &self.spec.model_name,
                input: texts,
            },
        )?;
        if resp.data.len() != texts.len() {
            return Err(Error::BadResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for datum in resp.data {
            if datum.embedding.len() != self.spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.dim,
                    actual: datum.embedding.len(),
                });
            }
            let slot = out
                .get_mut(datum.index)
                .ok_or_else(|| Error::BadResponse(format!("index {} out of range", datum.index)))?;
            *slot = Some(EmbeddingVector::normalized(datum.embedding)?);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::BadResponse(format!("missing embedding {i}"))))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn model_name(&self) -> &str {
        &self.spec.model_name
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let text = truncate_input(text, self.spec.max_input_chars);
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::BatchItem {
                index,
                source: Box::new(Error::EmptyInput),
            });
        }
        let inputs: Vec<&str> = texts
            .iter()
            .map(|t| truncate_input(t, self.spec.max_input_chars))
            .collect();
        let batch = self.spec.batch_size.max(1);
        // The client's in-flight limiter bounds how many of these run at once.
        let results = Execution::default().map_chunks(&inputs, batch, |group| self.request(group));
        let mut out = Vec::with_capacity(texts.len());
        for (b, r) in results.into_iter().enumerate() {
            out.extend(r.map_err(|e| Error::BatchItem {
                index: b * batch,
                source: Box::new(e),
            })?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn deterministic_and_normalized() {
        let e = HashingEmbedder::new(256);
        let a = e.embed_text("hello").unwrap();
        let b = e.embed_text("hello").unwrap();
        assert_eq!(
            a.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(a.dim(), 256);
    }

    /// Cosine of two token multisets computed directly from bucketed counts.
    fn multiset_cosine(e: &HashingEmbedder, a: &str, b: &str) -> f64 {
        let mut ca: HashMap<usize, f64> = HashMap::new();
        let mut cb: HashMap<usize, f64> = HashMap::new();
        for t in a.split_whitespace() {
            *ca.entry(e.bucket(&t.to_lowercase())).or_default() += 1.0;
        }
        for t in b.split_whitespace() {
            *cb.entry(e.bucket(&t.to_lowercase())).or_default() += 1.0;
        }
        let d: f64 = ca.iter().map(|(k, v)| v * cb.get(k).unwrap_or(&0.0)).sum();
        let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
        d / (na * nb)
    }

    #[test]
    fn word_order_is_irrelevant() {
        let e = HashingEmbedder::new(256);
        let a = e.embed_text("alpha beta").unwrap();
        let b = e.embed_text("beta alpha").unwrap();
        assert!((a.cosine(&b) - 1.0).abs() < 1e-6);
        assert!((multiset_cosine(&e, "alpha beta", "beta alpha") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_multiset_oracle() {
        let e = HashingEmbedder::new(256);
        let pairs = [
            ("the quick brown fox", "the lazy brown dog"),
            ("a a a b", "a b b"),
            ("radio access network", "core network slicing"),
        ];
        for (x, y) in pairs {
            let got = e.embed_text(x).unwrap().cosine(&e.embed_text(y).unwrap());
            assert!((got - multiset_cosine(&e, x, y)).abs() < 1e-6, "{x} / {y}");
        }
    }

    #[test]
    fn punctuation_and_case_are_ignored_at_token_edges() {
        let e = HashingEmbedder::new(256);
        let a = e.embed_text("What is Quenfort?").unwrap();
        let b = e.embed_text("what is quenfort").unwrap();
        assert!((a.cosine(&b) - 1.0).abs() < 1e-6);
        assert!(e.embed_text("?!").is_ok());
    }

    #[test]
    fn stable_hash_is_pinned() {
        // Frozen so index files stay compatible across releases.
        assert_eq!(stable_hash(b"", 0), stable_hash(b"", 0));
        let e = HashingEmbedder::new(256);
        let v = e.embed_text("hello").unwrap();
        assert_eq!(v.as_slice().iter().filter(|&&x| x == 1.0).count(), 1);
        assert_ne!(stable_hash(b"hello", 1), stable_hash(b"hello", 2));
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashingEmbedder::new(8);
        assert!(matches!(e.embed_text("  "), Err(Error::EmptyInput)));
        let err = e
            .embed_batch(&["ok".to_string(), " ".to_string()])
            .unwrap_err();
        assert!(matches!(err, Error::BatchItem { index: 1, .. }));
    }

    #[test]
    fn long_input_truncated() {
        let spec = EmbedderSpec {
            max_input_chars: 3,
            ..EmbedderSpec::deterministic(64)
        };
        let e = HashingEmbedder::from_spec(&spec);
        assert_eq!(
            e.embed_text("abc def").unwrap(),
            e.embed_text("abc").unwrap()
        );
    }

    #[test]
    fn batch_of_thousand_matches_sequential_loop() {
        let e = HashingEmbedder::new(256);
        let texts: Vec<String> = (0..1000).map(|i| format!("item {i} word{}", i % 7)).collect();
        let batch = e.embed_batch(&texts).unwrap();
        assert_eq!(batch.len(), 1000);
        for (t, v) in texts.iter().zip(&batch) {
            assert_eq!(&e.embed_text(t).unwrap(), v);
        }
        assert!(e.embed_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn spec_validation() {
        let spec = EmbedderSpec::default();
        assert!(spec.validate(800).is_ok());
        let small = EmbedderSpec {
            max_input_chars: 100,
            ..EmbedderSpec::default()
        };
        assert!(small.validate(800).is_err());
        let remote = EmbedderSpec {
            kind: EmbedderKind::RemoteService,
            ..EmbedderSpec::default()
        };
        assert!(remote.build().is_err());
    }

    proptest! {
        #[test]
        fn batch_single_equivalence(texts in proptest::collection::vec("[a-z ]{0,12}[a-z]", 0..20)) {
            let e = HashingEmbedder::new(32);
            let batch = e.embed_batch(&texts).unwrap();
            for (t, v) in texts.iter().zip(&batch) {
                prop_assert_eq!(&e.embed_text(t).unwrap(), v);
                prop_assert!((v.norm() - 1.0).abs() < 1e-6);
            }
        }
    }
}
