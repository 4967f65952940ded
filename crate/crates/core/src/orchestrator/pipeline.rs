use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::config::PipelineConfig;
use super::corpus::{load_corpus, validate_corpus};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::eval::{run_eval, AnswerSource, EvalOptions, EvalReport, Mode, TestCase};
use crate::gen::{generate, ChatProvider, ContextPassage};
use crate::ingest::{chunk_corpus, prepare_document, ChunkPolicy, Document};
use crate::kb::{percentile_filter, KbEntry, KnowledgeBase};
use crate::par::Execution;

/// Monotonic time source for stage timings.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// A clock that never advances; every recorded duration is zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed_ms: f64,
    pub search_ms: f64,
    pub rank_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub mode: Mode,
    pub answer: String,
    /// Ranked retrieved chunks; absent in vanilla mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits: Option<Vec<HitView>>,
    pub used_contexts: Vec<String>,
    pub timing: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitReport {
    pub cache_hit: bool,
    pub documents: usize,
    pub chunks: usize,
    pub entries: usize,
    pub content_hash: String,
}

/// SHA-256 over everything that determines index contents: the chunk policy, the
/// embedder identity, the index configuration and every document.
pub fn content_hash(config: &PipelineConfig, docs: &[Document]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ragforge-index\0");
    let settings = serde_json::json!({
        "chunk_size": config.ingest.chunk_size,
        "overlap": config.ingest.overlap,
        "embed_kind": config.embed.kind,
        "embed_model": config.embed.model_name,
        "embed_dim": config.embed.dim,
        "embed_seed": config.embed.seed,
        "embed_max_input_chars": config.embed.max_input_chars,
        "index": config.index.config,
    });
    h.update(settings.to_string().as_bytes());
    for d in docs {
        for part in [d.doc_id.as_bytes(), d.text.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
    }
    h.finalize().into()
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub struct Pipeline {
    config: PipelineConfig,
    kb: KnowledgeBase,
    embedder: Arc<dyn Embedder>,
    provider: Arc<dyn ChatProvider>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("entries", &self.kb.len())
            .field("mode", &self.config.mode)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Builds (or reuses) the knowledge base with providers taken from the configuration.
    pub fn init(config: PipelineConfig) -> Result<(Self, InitReport)> {
        let embedder: Arc<dyn Embedder> = Arc::from(config.embed.build()?);
        let provider: Arc<dyn ChatProvider> = Arc::from(config.gen.build()?);
        Self::init_with(config, embedder, provider)
    }

    /// Preprocesses, chunks, embeds and indexes the configured corpus, then writes the
    /// index file atomically.
    ///
    /// If the index file already exists and was built from the same corpus and
    /// configuration it is loaded instead and nothing is re-embedded.
    pub fn init_with(
        config: PipelineConfig,
        embedder: Arc<dyn Embedder>,
        provider: Arc<dyn ChatProvider>,
    ) -> Result<(Self, InitReport)> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        check_dims(&config, embedder.as_ref())?;
        let policy = config.chunk_policy()?;
        let exec = Execution::default();

        let corpus = config
            .ingest
            .corpus
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no corpus path configured".into()))
            .map_err(|e| e.in_stage("load_corpus"))?;
        let raw = load_corpus(corpus).map_err(|e| e.in_stage("load_corpus"))?;
        let docs = exec
            .map(&raw, |d| prepare_document(d.clone()))
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("preprocess"))?;
        validate_corpus(&docs).map_err(|e| e.in_stage("preprocess"))?;
        let hash = content_hash(&config, &docs);

        if let Some(path) = config.index.path.as_deref() {
            if let Some(kb) = cached_index(path, &hash) {
                info!(path = %path.display(), entries = kb.len(), "index cache hit, skipping re-embedding");
                let report = InitReport {
                    cache_hit: true,
                    documents: docs.len(),
                    chunks: docs.iter().map(|d| policy.chunk_count(d.len_chars())).sum(),
                    entries: kb.len(),
                    content_hash: hex::encode(hash),
                };
                return Ok((Self::from_parts(config, kb, embedder, provider)?, report));
            }
        }

        let (kb, chunks) = build_index(&config, &policy, &docs, embedder.as_ref(), hash, exec)?;
        if let Some(path) = config.index.path.as_deref() {
            kb.save(path).map_err(|e| e.in_stage("persist"))?;
            info!(path = %path.display(), entries = kb.len(), "index written");
        }
        let report = InitReport {
            cache_hit: false,
            documents: docs.len(),
            chunks,
            entries: kb.len(),
            content_hash: hex::encode(hash),
        };
        Ok((Self::from_parts(config, kb, embedder, provider)?, report))
    }

    /// Loads the index file named in the configuration.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        let embedder: Arc<dyn Embedder> = Arc::from(config.embed.build()?);
        let provider: Arc<dyn ChatProvider> = Arc::from(config.gen.build()?);
        let path = config
            .index
            .path
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no index path configured".into()))?;
        let kb = KnowledgeBase::load(&path).map_err(|e| e.in_stage("load_index"))?;
        Self::from_parts(config, kb, embedder, provider)
    }

    pub fn from_parts(
        config: PipelineConfig,
        kb: KnowledgeBase,
        embedder: Arc<dyn Embedder>,
        provider: Arc<dyn ChatProvider>,
    ) -> Result<Self> {
        if embedder.dim() != kb.dim() {
            return Err(Error::DimensionMismatch {
                expected: kb.dim(),
                actual: embedder.dim(),
            });
        }
        Ok(Self {
            config,
            kb,
            embedder,
            provider,
            clock: Arc::new(SystemClock::default()),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    /// Answers a question. In rag mode: embed, search `retrieval_k` candidates, keep
    /// the configured percentile, assemble the prompt and generate. In vanilla mode the
    /// prompt carries no context.
    pub fn answer_query(&self, question: &str, mode: Mode) -> Result<QueryResponse> {
        if question.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let start = self.clock.now();
        let mut timing = StageTimings::default();
        let mut hits_view = None;
        let mut contexts = Vec::new();

        if mode == Mode::Rag {
            let t0 = self.clock.now();
            let q = self
                .embedder
                .embed_text(question)
                .map_err(|e| e.in_stage("embed"))?;
            let t1 = self.clock.now();
            let hits = self
                .kb
                .search(&q, self.config.index.config.retrieval_k)
                .map_err(|e| e.in_stage("search"))?;
            let t2 = self.clock.now();
            let hits = percentile_filter(&hits, self.config.index.config.percentile_p);
            let t3 = self.clock.now();
            timing.embed_ms = ms(t1 - t0);
            timing.search_ms = ms(t2 - t1);
            timing.rank_ms = ms(t3 - t2);

            let mut views = Vec::with_capacity(hits.len());
            for h in &hits {
                let e = self.kb.entry(h);
                contexts.push(ContextPassage {
                    chunk_id: e.chunk_id.to_owned(),
                    text: e.text.to_owned(),
                    score: h.score,
                });
                views.push(HitView {
                    chunk_id: e.chunk_id.to_owned(),
                    doc_id: e.doc_id.to_owned(),
                    score: h.score,
                    snippet: e.text.to_owned(),
                });
            }
            hits_view = Some(views);
        }

        let t4 = self.clock.now();
        let req = self.config.gen.request(question, contexts);
        let result = generate(&req, self.provider.as_ref()).map_err(|e| e.in_stage("generate"))?;
        let end = self.clock.now();
        timing.generate_ms = ms(end - t4);
        timing.total_ms = ms(end - start);

        Ok(QueryResponse {
            mode,
            answer: result.answer,
            hits: hits_view,
            used_contexts: result.used_contexts,
            timing,
        })
    }

    /// Runs the evaluation harness against this pipeline.
    pub fn evaluate(&self, testset: &[TestCase], mode: Mode) -> Result<EvalReport> {
        let judge = self.config.eval.judge.build(
            Arc::clone(&self.embedder),
            Arc::clone(&self.provider),
            &self.config.gen.model_name,
        )?;
        let opts = EvalOptions {
            dataset_name: self.config.eval.dataset_name.clone().unwrap_or_else(|| "testset".into()),
            model_name: self.config.gen.model_name.clone(),
            mode,
            omega: self.config.eval.omega,
            exec: Execution::default(),
        };
        run_eval(testset, self, judge.as_ref(), self.embedder.as_ref(), &opts)
    }
}

impl AnswerSource for Pipeline {
    fn answer(&self, question: &str, mode: Mode) -> Result<(String, Option<Vec<String>>)> {
        let r = self.answer_query(question, mode)?;
        let contexts = r
            .hits
            .map(|hits| hits.into_iter().map(|h| h.snippet).collect());
        Ok((r.answer, contexts))
    }
}

fn check_dims(config: &PipelineConfig, embedder: &dyn Embedder) -> Result<()> {
    if embedder.dim() != config.index.config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.index.config.dim,
            actual: embedder.dim(),
        }
        .in_stage("config"));
    }
    Ok(())
}

fn cached_index(path: &Path, hash: &[u8; 32]) -> Option<KnowledgeBase> {
    if !path.exists() {
        return None;
    }
    match KnowledgeBase::load(path) {
        Ok(kb) if kb.content_hash() == hash => Some(kb),
        Ok(_) => {
            info!(path = %path.display(), "index is stale, rebuilding");
            None
        }
        Err(e) => {
            warn!(path = %path.display(), error = %e, "existing index unreadable, rebuilding");
            None
        }
    }
}

fn build_index(
    config: &PipelineConfig,
    policy: &ChunkPolicy,
    docs: &[Document],
    embedder: &dyn Embedder,
    hash: [u8; 32],
    exec: Execution,
) -> Result<(KnowledgeBase, usize)> {
    let chunks = chunk_corpus(docs, policy, exec);
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_batch(&texts).map_err(|e| e.in_stage("embed"))?;

    let mut kb = KnowledgeBase::new(config.index.config.clone())
        .map_err(|e| e.in_stage("index"))?
        .with_execution(exec);
    kb.set_content_hash(hash);
    let n_chunks = chunks.len();
    let entries = chunks
        .into_iter()
        .zip(vectors)
        .map(|(c, vector)| KbEntry {
            chunk_id: c.chunk_id,
            doc_id: c.doc_id,
            vector,
            text: c.text,
        })
        .collect();
    let added = kb.add(entries).map_err(|e| e.in_stage("index"))?;
    if added < n_chunks {
        info!(duplicates = n_chunks - added, "skipped duplicate chunks");
    }
    Ok((kb, n_chunks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingVector, HashingEmbedder};
    use crate::gen::CannedProvider;
    use std::fs;

    fn write_corpus(dir: &Path) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("a.txt"), "x".repeat(1000)).unwrap();
        fs::write(
            dir.join("b.txt"),
            "The near-RT RIC hosts xApps. It connects over the E2 interface.",
        )
        .unwrap();
    }

    fn config(tmp: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.ingest.corpus = Some(tmp.join("docs"));
        c.index.path = Some(tmp.join("kb.rgf"));
        c
    }

    #[test]
    fn builds_and_reuses_index() {
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(&tmp.path().join("docs"));
        let (_, first) = Pipeline::init(config(tmp.path())).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.documents, 2);
        // 1000 chars give chunks at 0 and 720, the short doc one chunk.
        assert_eq!(first.chunks, 3);
        assert_eq!(first.entries, 3);
        assert!(tmp.path().join("kb.rgf").exists());

        let (_, second) = Pipeline::init(config(tmp.path())).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.content_hash, first.content_hash);

        fs::write(tmp.path().join("docs/c.txt"), "Another document.").unwrap();
        let (_, third) = Pipeline::init(config(tmp.path())).unwrap();
        assert!(!third.cache_hit);
        assert_eq!(third.entries, 4);
    }

    #[test]
    fn missing_corpus_leaves_no_index() {
        let tmp = tempfile::tempdir().unwrap();
        let err = Pipeline::init(config(tmp.path())).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "load_corpus", .. }), "{err}");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    struct Failing;
    impl Embedder for Failing {
        fn dim(&self) -> usize {
            256
        }
        fn model_name(&self) -> &str {
            "failing"
        }
        fn embed_text(&self, _: &str) -> Result<EmbeddingVector> {
            Err(Error::Unreachable {
                attempts: 3,
                message: "down".into(),
            })
        }
    }

    #[test]
    fn embedding_failure_leaves_no_index() {
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(&tmp.path().join("docs"));
        let err = Pipeline::init_with(config(tmp.path()), Arc::new(Failing), Arc::new(CannedProvider))
            .unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "embed", .. }), "{err}");
        assert!(!tmp.path().join("kb.rgf").exists());
    }

    #[test]
    fn query_modes() {
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(&tmp.path().join("docs"));
        let (p, _) = Pipeline::init_with(
            config(tmp.path()),
            Arc::new(HashingEmbedder::new(256)),
            Arc::new(CannedProvider),
        )
        .unwrap();
        let p = p.with_clock(Arc::new(FrozenClock));

        let q = "The near-RT RIC hosts xApps. It connects over the E2 interface.";
        let r = p.answer_query(q, Mode::Rag).unwrap();
        let hits = r.hits.as_ref().unwrap();
        assert_eq!(hits[0].chunk_id, "b.txt#0");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert_eq!(r.answer, "The near-RT RIC hosts xApps.");
        assert_eq!(r.timing, StageTimings::default());

        let v = p.answer_query(q, Mode::Vanilla).unwrap();
        assert!(v.hits.is_none());
        assert!(v.used_contexts.is_empty());
        assert!(!serde_json::to_string(&v).unwrap().contains("hits"));

        assert!(matches!(p.answer_query("  ", Mode::Rag), Err(Error::EmptyInput)));
    }

    #[test]
    fn open_rejects_wrong_dim() {
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(&tmp.path().join("docs"));
        Pipeline::init(config(tmp.path())).unwrap();
        let mut c = config(tmp.path());
        c.embed.dim = 64;
        c.index.config.dim = 64;
        assert!(Pipeline::open(c).is_err());
        assert_eq!(Pipeline::open(config(tmp.path())).unwrap().knowledge_base().len(), 3);
    }
}
