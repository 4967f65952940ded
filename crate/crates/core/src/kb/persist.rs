//! On-disk index format.
//!
//! ```text
//! "RGF1"            magic
//! u16               format version
//! u32               CRC-32 of everything after this field
//! --- payload ---
//! u32 dim, u8 mode (0 flat, 1 clustered), u32 num_clusters (0 = auto),
//! u32 nprobe, u32 retrieval_k, u32 percentile_p
//! [u8; 32]          content hash of the corpus + configuration
//! u64 n
//! n * dim f32       vectors
//! n * (str chunk_id, str doc_id, str text)      str = u32 byte length + UTF-8
//! u8 has_clusters; if 1: u32 k, k * dim f32 centroids, n * u32 assignments
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Clusters, EntryMeta, IndexConfig, IndexMode, KnowledgeBase};
use crate::embed::stable_hash;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RGF1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Corrupt(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.reserve(xs.len() * 4);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("count overflow".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corrupt("invalid UTF-8 in string".into()))
    }
}

impl KnowledgeBase {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut p = Vec::with_capacity(64 + self.vectors.len() * 4);
        put_u32(&mut p, c.dim)?;
        p.push(match c.mode {
            IndexMode::Flat => 0,
            IndexMode::Clustered => 1,
        });
        put_u32(&mut p, c.num_clusters.unwrap_or(0))?;
        put_u32(&mut p, c.nprobe)?;
        put_u32(&mut p, c.retrieval_k)?;
        put_u32(&mut p, c.percentile_p as usize)?;
        p.extend_from_slice(&self.content_hash);
        p.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        put_f32s(&mut p, &self.vectors);
        for m in &self.meta {
            put_str(&mut p, &m.chunk_id)?;
            put_str(&mut p, &m.doc_id)?;
            put_str(&mut p, &m.text)?;
        }
        match &self.clusters {
            None => p.push(0),
            Some(cl) => {
                p.push(1);
                put_u32(&mut p, cl.len())?;
                put_f32s(&mut p, &cl.centroids);
                for &a in &cl.assignments {
                    p.extend_from_slice(&a.to_le_bytes());
                }
            }
        }

        let mut out = Vec::with_capacity(HEADER_LEN + p.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out.extend_from_slice(&p);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt("file shorter than header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let stored = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        let payload = &bytes[HEADER_LEN..];
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let dim = r.u32()? as usize;
        let mode = match r.u8()? {
            0 => IndexMode::Flat,
            1 => IndexMode::Clustered,
            m => return Err(Error::Corrupt(format!("unknown index mode {m}"))),
        };
        let num_clusters = match r.u32()? {
            0 => None,
            k => Some(k as usize),
        };
        let config = IndexConfig {
            dim,
            mode,
            num_clusters,
            nprobe: r.u32()? as usize,
            retrieval_k: r.u32()? as usize,
            percentile_p: r.u32()?,
        };
        let mut kb = KnowledgeBase::new(config)
            .map_err(|e| Error::Corrupt(format!("invalid stored config: {e}")))?;
        kb.content_hash = r.take(32)?.try_into().expect("32 bytes");

        let n = r.count()?;
        kb.vectors = r.f32s(n.checked_mul(dim).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        kb.meta.reserve(n);
        for pos in 0..n {
            let m = EntryMeta {
                chunk_id: r.string()?,
                doc_id: r.string()?,
                text: r.string()?,
            };
            if kb.by_chunk.insert(m.chunk_id.clone(), pos).is_some() {
                return Err(Error::Corrupt(format!("duplicate chunk id `{}`", m.chunk_id)));
            }
            kb.by_text
                .entry(stable_hash(m.text.as_bytes(), 0))
                .or_default()
                .push(pos);
            kb.meta.push(m);
        }

        if r.u8()? == 1 {
            let k = r.u32()? as usize;
            if k == 0 || k > n {
                return Err(Error::Corrupt(format!("bad cluster count {k}")));
            }
            let centroids = r.f32s(k * dim)?;
            let mut assignments = Vec::with_capacity(n);
            for _ in 0..n {
                let a = r.u32()?;
                if a as usize >= k {
                    return Err(Error::Corrupt(format!("cluster assignment {a} out of range")));
                }
                assignments.push(a);
            }
            kb.clusters = Some(Clusters::from_parts(centroids, assignments, k));
        }
        if r.pos != payload.len() {
            return Err(Error::Corrupt("trailing bytes after payload".into()));
        }
        Ok(kb)
    }

    /// Writes the index through a temporary file in the target directory and renames
    /// it into place, so readers never observe a partially written file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
            w.flush().map_err(|e| Error::io(tmp.path(), e))?;
        }
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
