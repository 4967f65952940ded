//! Vector knowledge base.
//!
//! Vectors are stored row-major in one contiguous buffer. Search is exact cosine
//! similarity (dot product of unit vectors), either over every entry (flat) or over
//! the entries of the `nprobe` clusters whose centroids score highest (clustered).
//! Hits are ordered by score descending, then by insertion order.

mod kmeans;
mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tracing::debug;

pub use kmeans::{kmeans, nearest_centroid, KMeansParams, KMeansResult};
pub use persist::{FORMAT_VERSION, MAGIC};

use crate::embed::{dot, stable_hash, EmbeddingVector};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Rows scored per parallel task in flat search.
const SCORE_BLOCK_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Flat,
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub dim: usize,
    pub mode: IndexMode,
    /// `None` means `ceil(sqrt(n))` at build time.
    pub num_clusters: Option<usize>,
    pub nprobe: usize,
    /// Candidates fetched before percentile filtering.
    pub retrieval_k: usize,
    /// Percentage of retrieved candidates kept, in `1..=100`.
    pub percentile_p: u32,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            dim: crate::embed::DEFAULT_DIM,
            mode: IndexMode::Flat,
            num_clusters: None,
            nprobe: 8,
            retrieval_k: 20,
            percentile_p: 95,
        }
    }
}

impl IndexConfig {
    pub fn flat(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn clustered(dim: usize) -> Self {
        Self {
            dim,
            mode: IndexMode::Clustered,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("index dim must be > 0".into());
        }
        if self.nprobe == 0 {
            return bad("nprobe must be >= 1".into());
        }
        if let Some(k) = self.num_clusters {
            if k == 0 || self.nprobe > k {
                return bad(format!("need 1 <= nprobe ({}) <= num_clusters ({k})", self.nprobe));
            }
        }
        if self.retrieval_k == 0 {
            return bad("retrieval_k must be >= 1".into());
        }
        if self.percentile_p == 0 || self.percentile_p > 100 {
            return bad(format!("percentile_p must be in 1..=100, got {}", self.percentile_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbEntry {
    pub chunk_id: String,
    pub doc_id: String,
    pub vector: EmbeddingVector,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EntryMeta {
    chunk_id: String,
    doc_id: String,
    text: String,
}

/// Borrowed view of a stored entry.
#[derive(Debug, Clone, Copy)]
pub struct EntryRef<'a> {
    pub position: usize,
    pub chunk_id: &'a str,
    pub doc_id: &'a str,
    pub text: &'a str,
    pub vector: &'a [f32],
}

/// A search result: entry position in insertion order plus cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub position: usize,
    pub score: f64,
}

/// Score descending, then insertion order.
fn rank_order(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.position.cmp(&b.position))
}

fn top_k(mut hits: Vec<ScoredHit>, k: usize) -> Vec<ScoredHit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    hits
}

/// Keeps the first `ceil(p/100 * m)` of `m` ranked hits.
///
/// `p` must be in `1..=100`; the output is always a prefix of the input.
pub fn percentile_filter<T: Clone>(hits: &[T], p: u32) -> Vec<T> {
    assert!((1..=100).contains(&p), "percentile must be in 1..=100, got {p}");
    let keep = (hits.len() * p as usize).div_ceil(100);
    hits[..keep].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
struct Clusters {
    centroids: Vec<f32>,
    assignments: Vec<u32>,
    lists: Vec<Vec<u32>>,
}

impl Clusters {
    fn from_parts(centroids: Vec<f32>, assignments: Vec<u32>, k: usize) -> Self {
        let mut lists = vec![Vec::new(); k];
        for (pos, &c) in assignments.iter().enumerate() {
            lists[c as usize].push(pos as u32);
        }
        Self {
            centroids,
            assignments,
            lists,
        }
    }

    fn len(&self) -> usize {
        self.lists.len()
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    config: IndexConfig,
    vectors: Vec<f32>,
    meta: Vec<EntryMeta>,
    by_chunk: HashMap<String, usize>,
    by_text: HashMap<u64, Vec<usize>>,
    clusters: Option<Clusters>,
    content_hash: [u8; 32],
    exec: Execution,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vectors == other.vectors
            && self.meta == other.meta
            && self.clusters == other.clusters
            && self.content_hash == other.content_hash
    }
}

impl KnowledgeBase {
    pub fn new(config: IndexConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            vectors: Vec::new(),
            meta: Vec::new(),
            by_chunk: HashMap::new(),
            by_text: HashMap::new(),
            clusters: None,
            content_hash: [0; 32],
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Hash of the corpus and configuration this index was built from.
    pub fn content_hash(&self) -> &[u8; 32] {
        &self.content_hash
    }

    pub fn set_content_hash(&mut self, hash: [u8; 32]) {
        self.content_hash = hash;
    }

    /// Number of clusters, once the clustered structure has been built.
    pub fn num_clusters(&self) -> Option<usize> {
        self.clusters.as_ref().map(Clusters::len)
    }

    pub fn get(&self, position: usize) -> Option<EntryRef<'_>> {
        let m = self.meta.get(position)?;
        Some(EntryRef {
            position,
            chunk_id: &m.chunk_id,
            doc_id: &m.doc_id,
            text: &m.text,
            vector: self.row(position),
        })
    }

    pub fn entry(&self, hit: &ScoredHit) -> EntryRef<'_> {
        self.get(hit.position).expect("hit from this index")
    }

    pub fn position_of(&self, chunk_id: &str) -> Option<usize> {
        self.by_chunk.get(chunk_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = EntryRef<'_>> {
        (0..self.len()).map(|i| self.get(i).expect("in range"))
    }

    #[inline]
    fn row(&self, i: usize) -> &[f32] {
        let d = self.config.dim;
        &self.vectors[i * d..(i + 1) * d]
    }

    fn find_text(&self, text: &str) -> Option<usize> {
        self.by_text
            .get(&stable_hash(text.as_bytes(), 0))?
            .iter()
            .copied()
            .find(|&i| self.meta[i].text == text)
    }

    /// Appends entries, skipping exact-duplicate texts. Returns the number added.
    ///
    /// Either every entry is accepted (possibly as a skipped duplicate) or nothing is
    /// modified. In clustered mode new entries join their nearest existing cluster; the
    /// clusters are built on the first non-empty add.
    pub fn add(&mut self, entries: Vec<KbEntry>) -> Result<usize> {
        for e in &entries {
            if e.vector.dim() != self.config.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.dim,
                    actual: e.vector.dim(),
                });
            }
        }
        let mut staged: HashMap<&str, &str> = HashMap::new();
        for e in &entries {
            let existing = self
                .by_chunk
                .get(&e.chunk_id)
                .map(|&i| self.meta[i].text.as_str())
                .or_else(|| staged.get(e.chunk_id.as_str()).copied());
            match existing {
                Some(t) if t != e.text => return Err(Error::ConflictingChunk(e.chunk_id.clone())),
                _ => {
                    staged.insert(&e.chunk_id, &e.text);
                }
            }
        }

        let first_new = self.len();
        let mut added = 0;
        for e in entries {
            if self.by_chunk.contains_key(&e.chunk_id) || self.find_text(&e.text).is_some() {
                continue;
            }
            let pos = self.meta.len();
            self.vectors.extend_from_slice(e.vector.as_slice());
            self.by_chunk.insert(e.chunk_id.clone(), pos);
            self.by_text
                .entry(stable_hash(e.text.as_bytes(), 0))
                .or_default()
                .push(pos);
            self.meta.push(EntryMeta {
                chunk_id: e.chunk_id,
                doc_id: e.doc_id,
                text: e.text,
            });
            added += 1;
        }

        if self.config.mode == IndexMode::Clustered && added > 0 {
            let dim = self.config.dim;
            if let Some(clusters) = self.clusters.as_mut() {
                for pos in first_new..self.meta.len() {
                    let row = &self.vectors[pos * dim..(pos + 1) * dim];
                    let c = nearest_centroid(&clusters.centroids, dim, row);
                    clusters.assignments.push(c);
                    clusters.lists[c as usize].push(pos as u32);
                }
            } else {
                self.build_clusters();
            }
        }
        Ok(added)
    }

    /// (Re)builds the cluster structure over all stored entries.
    pub fn build_clusters(&mut self) {
        let n = self.len();
        if n == 0 {
            self.clusters = None;
            return;
        }
        let k = self
            .config
            .num_clusters
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .clamp(1, n);
        let result = kmeans(
            &self.vectors,
            self.config.dim,
            KMeansParams {
                k,
                max_iters: kmeans::DEFAULT_MAX_ITERS,
                seed: kmeans::DEFAULT_SEED,
            },
            self.exec,
        );
        debug!(n, k, iterations = result.iterations, "built clusters");
        self.clusters = Some(Clusters::from_parts(result.centroids, result.assignments, k));
    }

    fn check_query(&self, query: &EmbeddingVector, k: usize) -> Result<()> {
        if query.dim() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        Ok(())
    }

    /// Top-k search in the configured mode.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>> {
        match self.config.mode {
            IndexMode::Flat => self.search_flat(query, k),
            IndexMode::Clustered => self.search_clustered(query, k, self.config.nprobe),
        }
    }

    /// Exact top-k over every entry.
    pub fn search_flat(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>> {
        self.check_query(query, k)?;
        let dim = self.config.dim;
        let q = query.as_slice();
        let blocks = self
            .exec
            .map_chunks(&self.vectors, SCORE_BLOCK_ROWS * dim, |block| {
                block.chunks_exact(dim).map(|r| dot(r, q)).collect::<Vec<f64>>()
            });
        let hits = blocks
            .into_iter()
            .flatten()
            .enumerate()
            .map(|(position, score)| ScoredHit { position, score })
            .collect();
        Ok(top_k(hits, k))
    }

    /// Exact top-k restricted to the `nprobe` clusters nearest the query.
    ///
    /// `nprobe` is clamped to the number of clusters. An index whose clusters have not
    /// been built yet (flat mode) is treated as a single cluster.
    pub fn search_clustered(
        &self,
        query: &EmbeddingVector,
        k: usize,
        nprobe: usize,
    ) -> Result<Vec<ScoredHit>> {
        self.check_query(query, k)?;
        let Some(clusters) = &self.clusters else {
            return self.search_flat(query, k);
        };
        let dim = self.config.dim;
        let q = query.as_slice();
        let mut probe: Vec<ScoredHit> = clusters
            .centroids
            .chunks_exact(dim)
            .enumerate()
            .map(|(position, c)| ScoredHit {
                position,
                score: dot(c, q),
            })
            .collect();
        probe.sort_unstable_by(rank_order);
        probe.truncate(nprobe.clamp(1, clusters.len()));

        let scored = self.exec.map(&probe, |c| {
            clusters.lists[c.position]
                .iter()
                .map(|&pos| ScoredHit {
                    position: pos as usize,
                    score: dot(self.row(pos as usize), q),
                })
                .collect::<Vec<_>>()
        });
        Ok(top_k(scored.into_iter().flatten().collect(), k))
    }

    /// `retrieval_k` candidates followed by the configured percentile filter.
    pub fn retrieve(&self, query: &EmbeddingVector) -> Result<Vec<ScoredHit>> {
        let hits = self.search(query, self.config.retrieval_k)?;
        Ok(percentile_filter(&hits, self.config.percentile_p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
        EmbeddingVector::normalized((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .unwrap()
    }

    fn entry(i: usize, v: EmbeddingVector) -> KbEntry {
        KbEntry {
            chunk_id: format!("c{i}"),
            doc_id: format!("d{}", i / 3),
            vector: v,
            text: format!("text {i}"),
        }
    }

    fn basis(dim: usize, i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        EmbeddingVector::from_unit(v).unwrap()
    }

    #[test]
    fn add_and_dedup() {
        let mut kb = KnowledgeBase::new(IndexConfig::flat(4)).unwrap();
        let es: Vec<_> = (0..3).map(|i| entry(i, basis(4, i))).collect();
        assert_eq!(kb.add(es.clone()).unwrap(), 3);
        assert_eq!(kb.add(vec![es[0].clone()]).unwrap(), 0);
        let mut same_text = entry(9, basis(4, 3));
        same_text.text = es[1].text.clone();
        assert_eq!(kb.add(vec![same_text]).unwrap(), 0);
        assert_eq!(kb.len(), 3);
    }

    #[test]
    fn add_rejects_conflicts_atomically() {
        let mut kb = KnowledgeBase::new(IndexConfig::flat(4)).unwrap();
        kb.add(vec![entry(0, basis(4, 0))]).unwrap();
        let mut conflict = entry(0, basis(4, 1));
        conflict.text = "different".into();
        let err = kb.add(vec![entry(1, basis(4, 1)), conflict]).unwrap_err();
        assert!(matches!(err, Error::ConflictingChunk(_)));
        assert_eq!(kb.len(), 1);

        let wrong = entry(5, basis(3, 0));
        assert!(matches!(
            kb.add(vec![wrong]),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let mut kb = KnowledgeBase::new(IndexConfig::flat(8)).unwrap();
        kb.add((0..4).map(|i| entry(i, basis(8, i))).collect()).unwrap();
        let hits = kb.search(&basis(8, 2), 1).unwrap();
        assert_eq!(hits[0].position, 2);
        assert!((hits[0].score - 1.0).abs() < 1e-12);

        let hits = kb.search(&basis(8, 7), 4).unwrap();
        assert_eq!(hits.len(), 4);
        assert!(hits.iter().all(|h| h.score.abs() < 1e-6));
        let order: Vec<_> = hits.iter().map(|h| h.position).collect();
        assert_eq!(order, vec![0, 1, 2, 3], "ties keep insertion order");
    }

    #[test]
    fn search_errors() {
        let kb = KnowledgeBase::new(IndexConfig::flat(4)).unwrap();
        assert!(matches!(kb.search(&basis(4, 0), 1), Err(Error::EmptyIndex)));
        let mut kb = kb;
        kb.add(vec![entry(0, basis(4, 0))]).unwrap();
        assert!(kb.search(&basis(4, 0), 0).is_err());
        assert!(matches!(
            kb.search(&basis(2, 0), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn self_retrieval_ten_thousand() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut kb = KnowledgeBase::new(IndexConfig::flat(32)).unwrap();
        let es: Vec<_> = (0..10_000).map(|i| entry(i, random_unit(&mut rng, 32))).collect();
        assert_eq!(kb.add(es.clone()).unwrap(), 10_000);
        for i in (0..10_000).step_by(997) {
            let hits = kb.search(&es[i].vector, 1).unwrap();
            assert_eq!(hits[0].position, i);
            assert!((hits[0].score - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clustered_full_probe_equals_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 16;
        let es: Vec<_> = (0..500).map(|i| entry(i, random_unit(&mut rng, dim))).collect();
        let mut flat = KnowledgeBase::new(IndexConfig::flat(dim)).unwrap();
        let mut clus = KnowledgeBase::new(IndexConfig::clustered(dim)).unwrap();
        flat.add(es.clone()).unwrap();
        clus.add(es).unwrap();
        let nc = clus.num_clusters().unwrap();
        assert_eq!(nc, 23);
        for _ in 0..20 {
            let q = random_unit(&mut rng, dim);
            assert_eq!(
                flat.search(&q, 10).unwrap(),
                clus.search_clustered(&q, 10, nc).unwrap()
            );
        }
    }

    #[test]
    fn incremental_adds_join_existing_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut kb = KnowledgeBase::new(IndexConfig::clustered(8)).unwrap();
        kb.add((0..50).map(|i| entry(i, random_unit(&mut rng, 8))).collect())
            .unwrap();
        let k = kb.num_clusters().unwrap();
        kb.add((50..80).map(|i| entry(i, random_unit(&mut rng, 8))).collect())
            .unwrap();
        assert_eq!(kb.num_clusters(), Some(k));
        let v = kb.get(70).unwrap().vector.to_vec();
        let hits = kb
            .search_clustered(&EmbeddingVector::from_unit(v).unwrap(), 1, 1)
            .unwrap();
        assert_eq!(hits[0].position, 70);
    }

    #[test]
    fn percentile_examples() {
        let hits: Vec<u32> = (0..20).collect();
        assert_eq!(percentile_filter(&hits, 95).len(), 19);
        assert_eq!(percentile_filter(&[1], 95), vec![1]);
        assert_eq!(percentile_filter(&hits, 100), hits);
        assert!(percentile_filter::<u32>(&[], 95).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(IndexConfig::default().validate().is_ok());
        let bad = IndexConfig {
            num_clusters: Some(4),
            nprobe: 5,
            ..IndexConfig::default()
        };
        assert!(bad.validate().is_err());
        for p in [0, 101] {
            let bad = IndexConfig {
                percentile_p: p,
                ..IndexConfig::default()
            };
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn sort_and_filter_contract(seed in any::<u64>(), n in 1usize..200, k in 1usize..40, p in 1u32..=100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut kb = KnowledgeBase::new(IndexConfig::flat(6)).unwrap();
            kb.add((0..n).map(|i| entry(i, random_unit(&mut rng, 6))).collect()).unwrap();
            let hits = kb.search(&random_unit(&mut rng, 6), k).unwrap();
            prop_assert_eq!(hits.len(), k.min(n));
            prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
            let kept = percentile_filter(&hits, p);
            prop_assert_eq!(&hits[..kept.len()], &kept[..]);
            if let Some(min_kept) = kept.last() {
                prop_assert!(hits[kept.len()..].iter().all(|h| h.score <= min_kept.score));
            }
        }

        #[test]
        fn recall_monotone_in_nprobe(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 8;
            let mut kb = KnowledgeBase::new(IndexConfig::clustered(dim)).unwrap();
            kb.add((0..150).map(|i| entry(i, random_unit(&mut rng, dim))).collect()).unwrap();
            let q = random_unit(&mut rng, dim);
            let truth: Vec<_> = kb.search_flat(&q, 5).unwrap().iter().map(|h| h.position).collect();
            let mut prev = 0;
            for nprobe in 1..=kb.num_clusters().unwrap() {
                let found = kb.search_clustered(&q, 5, nprobe).unwrap()
                    .iter().filter(|h| truth.contains(&h.position)).count();
                prop_assert!(found >= prev);
                prev = found;
            }
            prop_assert_eq!(prev, 5);
        }
    }
}
