//! Corpus readers: a directory of UTF-8 text files, a JSONL file, or one text file.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::ingest::Document;

#[derive(Deserialize)]
struct JsonlDocument {
    doc_id: String,
    #[serde(default)]
    source: Option<String>,
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

fn stringify(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Reads raw documents. Directory entries are visited in sorted order and hidden files
/// are skipped; a file's id is its path relative to the directory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let docs = if meta.is_dir() {
        load_dir(path)?
    } else if path.extension().is_some_and(|e| e == "jsonl") {
        load_jsonl(path)?
    } else {
        vec![load_text_file(path, path.file_name().map_or("doc".into(), |n| n.to_string_lossy().into_owned()))?]
    };
    validate_corpus(&docs)?;
    Ok(docs)
}

/// Checks that document ids are non-empty and unique.
pub fn validate_corpus(docs: &[Document]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in docs {
        if d.doc_id.trim().is_empty() {
            return Err(Error::InvalidDocument(format!("empty doc_id (source {})", d.source)));
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
    }
    Ok(())
}

fn load_text_file(path: &Path, doc_id: String) -> Result<Document> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::InvalidDocument(format!("{} is not valid UTF-8", path.display())))?;
    Ok(Document {
        doc_id,
        source: path.display().to_string(),
        text,
        metadata: BTreeMap::new(),
    })
}

fn load_dir(root: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| {
            let p = e.path().unwrap_or(root).to_owned();
            Error::io(p, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        docs.push(load_text_file(entry.path(), rel)?);
    }
    Ok(docs)
}

fn load_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: JsonlDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(Document {
            source: d.source.unwrap_or_else(|| path.display().to_string()),
            doc_id: d.doc_id,
            text: d.text,
            metadata: d.metadata.into_iter().map(|(k, v)| (k, stringify(v))).collect(),
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_corpus_sorted_and_hidden_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("b.txt"), "bee").unwrap();
        std::fs::write(dir.path().join("a.txt"), "ay").unwrap();
        std::fs::write(dir.path().join("sub/c.md"), "sea").unwrap();
        std::fs::write(dir.path().join(".hidden"), "no").unwrap();
        let docs = load_corpus(dir.path()).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a.txt", "b.txt", "sub/c.md"]);
        assert_eq!(docs[2].text, "sea");
    }

    #[test]
    fn jsonl_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"doc_id\":\"x\",\"source\":\"TeleQnA\",\"text\":\"hello\",\"metadata\":{\"year\":2024,\"k\":\"v\"}}\n\n{\"doc_id\":\"y\",\"text\":\"world\"}\n",
        )
        .unwrap();
        let docs = load_corpus(&p).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].source, "TeleQnA");
        assert_eq!(docs[0].metadata["year"], "2024");
        assert_eq!(docs[0].metadata["k"], "v");

        std::fs::write(&p, "{\"doc_id\":\"x\",\"text\":\"a\"}\n{\"doc_id\":\"x\",\"text\":\"b\"}\n").unwrap();
        assert!(matches!(load_corpus(&p), Err(Error::DuplicateDocId(_))));
        std::fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(load_corpus(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path().join("nope")), Err(Error::Io { .. })));
        let p = dir.path().join("bin.txt");
        std::fs::write(&p, [0xff, 0xfe, 0x00]).unwrap();
        assert!(matches!(load_corpus(&p), Err(Error::InvalidDocument(_))));
    }
}
