//! Flat exact cosine-distance store.
//!
//! Two on-disk formats are supported:
//!
//! - JSON lines: one `{"id": u64, "embedding": [f64; n], "text": string}`
//!   object per line.
//! - Binary: magic `PRVS`, `u32` version (1), `u32` n, `u64` N, then per
//!   record `u64` id, `n` × `f64`, `u32` text length, text bytes. All fields
//!   little-endian.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, NormalizedEmbedding};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PRVS";
pub const BINARY_VERSION: u32 = 1;

/// An input record before normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentRecord {
    pub id: u64,
    pub embedding: NormalizedEmbedding,
    pub text: Vec<u8>,
}

/// One ranked candidate. `position` is 1-based within its [`CandidateSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub position: usize,
    pub id: u64,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateSet(pub Vec<Candidate>);

impl CandidateSet {
    pub fn ids(&self) -> Vec<u64> {
        self.0.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Id at a 1-based position.
    pub fn id_at(&self, position: usize) -> Option<u64> {
        position.checked_sub(1).and_then(|i| self.0.get(i)).map(|c| c.id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.0.iter()
    }

    /// Byte image used for determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 24);
        for c in &self.0 {
            out.extend_from_slice(&(c.position as u64).to_le_bytes());
            out.extend_from_slice(&c.id.to_le_bytes());
            out.extend_from_slice(&c.distance.to_le_bytes());
        }
        out
    }
}

/// Immutable corpus with embeddings stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Store {
    dim: usize,
    ids: Vec<u64>,
    embeddings: Vec<f64>,
    texts: Vec<Vec<u8>>,
    index: HashMap<u64, usize>,
}

impl Store {
    /// Normalizes and indexes `records`. Errors name the offending record.
    pub fn ingest<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = Result<RawRecord>>,
    {
        let mut store = Store::default();
        for (index, record) in records.into_iter().enumerate() {
            let record = record.map_err(|e| Error::Ingestion { index, reason: e.to_string() })?;
            store.push(index, record.id, record.embedding, record.text.into_bytes())?;
        }
        Ok(store)
    }

    fn push(&mut self, index: usize, id: u64, embedding: Vec<f64>, text: Vec<u8>) -> Result<()> {
        let fail = |reason: String| Error::Ingestion { index, reason };
        if self.ids.is_empty() {
            if embedding.len() < 2 {
                return Err(fail(format!("dimension {} < 2", embedding.len())));
            }
            self.dim = embedding.len();
        } else if embedding.len() != self.dim {
            return Err(fail(format!("dimension {} != {}", embedding.len(), self.dim)));
        }
        if let Some(i) = embedding.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite component at {i}")));
        }
        if self.index.contains_key(&id) {
            return Err(fail(format!("duplicate id {id}")));
        }
        let unit = NormalizedEmbedding::normalize(embedding).map_err(|e| fail(e.to_string()))?;
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.embeddings.extend_from_slice(&unit);
        self.texts.push(text);
        Ok(())
    }

    /// Builds a store from already-normalized parts, e.g. a synthetic corpus.
    pub fn from_records(records: Vec<DocumentRecord>) -> Result<Self> {
        let mut store = Store::default();
        for (index, r) in records.into_iter().enumerate() {
            store.push(index, r.id, r.embedding.into_inner(), r.text)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Embedding dimension; zero for an empty store.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn text(&self, row: usize) -> &[u8] {
        &self.texts[row]
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn embedding_of(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|row| self.embedding(row))
    }

    pub fn record(&self, row: usize) -> DocumentRecord {
        DocumentRecord {
            id: self.ids[row],
            embedding: NormalizedEmbedding::from_unit(self.embedding(row).to_vec())
                .expect("stored embeddings are unit length"),
            text: self.texts[row].clone(),
        }
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if !self.is_empty() && query.len() != self.dim {
            return Err(Error::domain(format!(
                "query dimension {} != store dimension {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// The `k` smallest cosine distances, exact, ties by ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<CandidateSet> {
        self.check_query(query)?;
        self.rank_by(k, |row| 1.0 - dot(query, self.embedding(row)))
    }

    /// The `k` smallest L2 distances, same tie rule.
    pub fn top_k_l2(&self, query: &[f64], k: usize) -> Result<CandidateSet> {
        self.check_query(query)?;
        self.rank_by(k, |row| crate::embedding::l2_distance(query, self.embedding(row)))
    }

    fn rank_by(&self, k: usize, distance: impl Fn(usize) -> f64) -> Result<CandidateSet> {
        if k == 0 {
            return Err(Error::domain("k must be at least 1"));
        }
        let mut scored: Vec<(f64, u64)> = (0..self.len()).map(|row| (distance(row), self.ids[row])).collect();
        let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() && k > 0 {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(CandidateSet(
            scored
                .into_iter()
                .enumerate()
                .map(|(i, (distance, id))| Candidate { position: i + 1, id, distance })
                .collect(),
        ))
    }

    /// Records in request order.
    pub fn fetch(&self, ids: &[u64]) -> Result<Vec<DocumentRecord>> {
        ids.iter()
            .map(|&id| self.row_of(id).map(|row| self.record(row)).ok_or(Error::NotFound(id)))
            .collect()
    }

    /// Texts in request order.
    pub fn fetch_texts(&self, ids: &[u64]) -> Result<Vec<Vec<u8>>> {
        ids.iter()
            .map(|&id| self.row_of(id).map(|row| self.texts[row].clone()).ok_or(Error::NotFound(id)))
            .collect()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        Self::ingest(reader.lines().enumerate().filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str::<RawRecord>(&l).map_err(|e| Error::Ingestion {
                index: i,
                reason: format!("line {}: {e}", i + 1),
            })),
            Err(e) => Some(Err(e.into())),
        }))
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in 0..self.len() {
            let rec = RawRecord {
                id: self.ids[row],
                embedding: self.embedding(row).to_vec(),
                text: String::from_utf8_lossy(&self.texts[row]).into_owned(),
            };
            serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(BINARY_MAGIC)?;
        writer.write_all(&BINARY_VERSION.to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        writer.write_all(&(self.len() as u64).to_le_bytes())?;
        for row in 0..self.len() {
            writer.write_all(&self.ids[row].to_le_bytes())?;
            for v in self.embedding(row) {
                writer.write_all(&v.to_le_bytes())?;
            }
            writer.write_all(&(self.texts[row].len() as u32).to_le_bytes())?;
            writer.write_all(&self.texts[row])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self> {
        let header = |what: &str| Error::Ingestion { index: 0, reason: format!("bad header: {what}") };
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(header("magic"));
        }
        let version = read_u32(&mut reader)?;
        if version != BINARY_VERSION {
            return Err(header(&format!("version {version}")));
        }
        let dim = read_u32(&mut reader)? as usize;
        let count = read_u64(&mut reader)? as usize;
        let mut store = Store::default();
        for index in 0..count {
            let truncated = |e: std::io::Error| Error::Ingestion { index, reason: format!("truncated: {e}") };
            let id = read_u64(&mut reader).map_err(truncated)?;
            let mut embedding = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 8];
                reader.read_exact(&mut b).map_err(truncated)?;
                embedding.push(f64::from_le_bytes(b));
            }
            let len = read_u32(&mut reader).map_err(truncated)? as usize;
            let mut text = vec![0u8; len];
            reader.read_exact(&mut text).map_err(truncated)?;
            store.push(index, id, embedding, text)?;
        }
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Err(Error::Ingestion { index: count, reason: "trailing bytes after last record".into() });
        }
        Ok(store)
    }

    /// Reads either format, sniffing the binary magic.
    pub fn read_any<R: BufRead>(mut reader: R) -> Result<Self> {
        let is_binary = reader.fill_buf()?.starts_with(BINARY_MAGIC);
        if is_binary {
            Self::read_binary(reader)
        } else {
            Self::read_jsonl(reader)
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Orders candidates the way [`Store::top_k`] does; exposed for callers that
/// rank externally computed distances.
pub fn compare_ranked(a: (f64, u64), b: (f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
