//! Corpus cleanup and fixed-size overlapping chunking.
//!
//! Chunks are windows measured in Unicode scalar values (Rust `char`s), not tokens.
//! Chunk `k` of a document covers characters `[k * stride, k * stride + C)` clipped to
//! the document length, with `stride = C - overlap`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_CHUNK_SIZE: usize = 800;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let doc_id = doc_id.into();
        Self {
            source: doc_id.clone(),
            doc_id,
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    /// Length in characters.
    pub fn len_chars(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    /// Character offset of the first character of this chunk in the document.
    pub offset: usize,
    pub text: String,
}

impl Chunk {
    pub fn len_chars(&self) -> usize {
        self.text.chars().count()
    }
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self::with_size(DEFAULT_CHUNK_SIZE)
    }
}

impl ChunkPolicy {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self> {
        let policy = Self {
            chunk_size,
            overlap,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Policy with overlap fixed at a tenth of the chunk size.
    pub fn with_size(chunk_size: usize) -> Self {
        Self {
            chunk_size,
            overlap: chunk_size / 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(Error::InvalidChunkPolicy {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }

    /// Number of chunks produced for a document of `len` characters.
    pub fn chunk_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len <= self.chunk_size {
            1
        } else {
            1 + (len - self.chunk_size).div_ceil(self.stride())
        }
    }
}

/// Cleans raw corpus text.
///
/// Non-newline whitespace runs become a single space, other control characters are
/// dropped, lines are trimmed, runs of more than two newlines collapse to two, and
/// the result is NFC-normalized. The function is idempotent.
pub fn preprocess(raw: &str) -> Result<String> {
    let mapped: String = raw
        .nfc()
        .filter_map(|c| match c {
            '\n' => Some('\n'),
            c if c.is_whitespace() => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect();

    let mut out = String::with_capacity(mapped.len());
    let mut pending_newlines = 0usize;
    for line in mapped.split('\n') {
        let mut words = line.split(' ').filter(|w| !w.is_empty()).peekable();
        if words.peek().is_none() {
            pending_newlines += 1;
            continue;
        }
        if !out.is_empty() {
            for _ in 0..(pending_newlines + 1).min(2) {
                out.push('\n');
            }
        }
        pending_newlines = 0;
        let mut first = true;
        for w in words {
            if !first {
                out.push(' ');
            }
            out.push_str(w);
            first = false;
        }
    }

    // Removing control characters can bring combining marks next to a base
    // character, so normalize once more after cleaning.
    let out: String = out.nfc().collect();
    if out.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(out)
}

/// Preprocesses the document text in place and checks document invariants.
pub fn prepare_document(mut doc: Document) -> Result<Document> {
    if doc.doc_id.trim().is_empty() {
        return Err(Error::InvalidDocument("empty doc_id".into()));
    }
    doc.text = preprocess(&doc.text).map_err(|e| match e {
        Error::EmptyDocument => {
            Error::InvalidDocument(format!("`{}` is empty after preprocessing", doc.doc_id))
        }
        e => e,
    })?;
    Ok(doc)
}

/// Splits a document into overlapping character windows.
///
/// Panics if the policy is invalid; callers validate policies at construction.
pub fn chunk_document(doc: &Document, policy: &ChunkPolicy) -> Vec<Chunk> {
    assert!(policy.validate().is_ok(), "invalid chunk policy {policy:?}");

    // Byte offset of every char boundary, including the end of the string.
    let bounds: Vec<usize> = doc
        .text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(doc.text.len()))
        .collect();
    let len = bounds.len() - 1;

    let mut chunks = Vec::with_capacity(policy.chunk_count(len));
    let mut start = 0usize;
    while start < len {
        let end = (start + policy.chunk_size).min(len);
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, chunks.len()),
            doc_id: doc.doc_id.clone(),
            offset: start,
            text: doc.text[bounds[start]..bounds[end]].to_owned(),
        });
        if end == len {
            break;
        }
        start += policy.stride();
    }
    chunks
}

/// Chunks many documents, preserving document order.
pub fn chunk_corpus(docs: &[Document], policy: &ChunkPolicy, exec: Execution) -> Vec<Chunk> {
    exec.map(docs, |d| chunk_document(d, policy))
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_of_len(n: usize) -> Document {
        let text: String = (0..n).map(|i| (b'a' + (i % 26) as u8) as char).collect();
        Document::new("d", text)
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess("a  b\t c").unwrap(), "a b c");
        assert_eq!(preprocess("x").unwrap(), "x");
        assert_eq!(preprocess("line1\n\n\n\nline2").unwrap(), "line1\n\nline2");
    }

    #[test]
    fn preprocess_rejects_blank() {
        assert!(matches!(preprocess(""), Err(Error::EmptyDocument)));
        assert!(matches!(preprocess(" \t\n\u{0007}\n "), Err(Error::EmptyDocument)));
    }

    #[test]
    fn preprocess_strips_controls_and_line_padding() {
        assert_eq!(preprocess("  a\u{0000}b \r\n c  \n").unwrap(), "ab\nc");
        assert_eq!(preprocess("e\u{0001}\u{0301}").unwrap(), "\u{e9}");
    }

    #[test]
    fn chunk_examples() {
        let p = ChunkPolicy::default();
        assert_eq!((p.chunk_size, p.overlap), (800, 80));

        let c = chunk_document(&doc_of_len(800), &p);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].offset, c[0].len_chars()), (0, 800));

        let c = chunk_document(&doc_of_len(1600), &p);
        let shape: Vec<_> = c.iter().map(|c| (c.offset, c.len_chars())).collect();
        assert_eq!(shape, vec![(0, 800), (720, 800), (1440, 160)]);
        assert_eq!(c[2].chunk_id, "d#2");

        let c = chunk_document(&doc_of_len(720), &p);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len_chars(), 720);
    }

    #[test]
    fn chunking_counts_chars_not_bytes() {
        let doc = Document::new("u", "é".repeat(10));
        let c = chunk_document(&doc, &ChunkPolicy::new(4, 1).unwrap());
        let offsets: Vec<_> = c.iter().map(|c| c.offset).collect();
        assert_eq!(offsets, vec![0, 3, 6]);
        assert!(c.iter().all(|c| c.len_chars() <= 4));
    }

    #[test]
    fn invalid_policies() {
        assert!(ChunkPolicy::new(0, 0).is_err());
        assert!(ChunkPolicy::new(10, 10).is_err());
        assert!(ChunkPolicy::new(10, 9).is_ok());
    }

    #[test]
    fn prepare_rejects_empty_id() {
        assert!(prepare_document(Document::new("", "text")).is_err());
        assert!(prepare_document(Document::new("a", "\n\n")).is_err());
    }

    fn reconstruct(chunks: &[Chunk], overlap: usize) -> String {
        let mut out = String::new();
        for (i, c) in chunks.iter().enumerate() {
            let skip = if i == 0 { 0 } else { overlap };
            out.extend(c.text.chars().skip(skip));
        }
        out
    }

    proptest! {
        #[test]
        fn chunk_invariants(text in "\\PC{1,400}", size in 1usize..64, ov in 0usize..64) {
            let overlap = ov % size;
            let policy = ChunkPolicy::new(size, overlap).unwrap();
            let doc = Document::new("p", text.clone());
            let chunks = chunk_document(&doc, &policy);
            prop_assert_eq!(chunks.len(), policy.chunk_count(doc.len_chars()));
            prop_assert_eq!(reconstruct(&chunks, overlap), text);
            for (i, c) in chunks.iter().enumerate() {
                prop_assert!(c.len_chars() > 0 && c.len_chars() <= size);
                prop_assert_eq!(c.offset, i * policy.stride());
            }
            for w in chunks.windows(2) {
                let head: String = w[1].text.chars().take(overlap).collect();
                let tail: String = w[0].text.chars().skip(size - overlap).collect();
                prop_assert_eq!(head, tail);
            }
        }

        #[test]
        fn preprocess_idempotent(raw in "(\\PC|[\\n\\t\\r \u{0301}\u{0000}\u{00a0}]){0,200}") {
            if let Ok(once) = preprocess(&raw) {
                prop_assert_eq!(preprocess(&once).unwrap(), once);
            }
        }
    }
}
