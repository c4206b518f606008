//! Exact evidence index: cosine alignment scores, Top-K and threshold filtering.
//!
//! # File layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "EVRAGIDX"
//! format_version   u32      (currently 1)
//! dim              u32
//! entry_count      u64
//! fingerprint_len  u32, then that many UTF-8 bytes (hex SHA-256 of the encoder)
//! metadata_len     u32, then that many UTF-8 bytes (JSON: run configuration and vocabulary)
//! entry_count records, sorted by id:
//!   id             u64
//!   text_len       u32, then that many UTF-8 bytes
//!   vector         dim × f64
//! ```
//!
//! Every stored vector is unit length, so loading marks them normalized.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, SemanticVector, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm};
use crate::vocab::Vocabulary;

pub const INDEX_MAGIC: &[u8; 8] = b"EVRAGIDX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceChunk {
    pub id: u64,
    pub text: String,
    pub vector: SemanticVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceIndex {
    dim: usize,
    entries: Vec<EvidenceChunk>,
    encoder_fingerprint: String,
    metadata: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: u64,
    pub score: f64,
    pub rank: usize,
}

/// Cosine similarity. A vector with norm below [`NORM_FLOOR`] scores 0.
pub fn alignment_score(q: &SemanticVector, d: &SemanticVector) -> Result<f64> {
    cosine(q.values(), d.values())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Orders by score descending, then id ascending.
fn ranking_order(a: &(u64, f64), b: &(u64, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub(crate) fn rank_scores(mut scored: Vec<(u64, f64)>, k: usize) -> Vec<RetrievalResult> {
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, ranking_order);
        scored.truncate(k);
    }
    scored.sort_by(ranking_order);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (chunk_id, score))| RetrievalResult {
            chunk_id,
            score,
            rank: i + 1,
        })
        .collect()
}

/// Keep results scoring at least `tau`. Input order is preserved, so the
/// output is a prefix of a sorted input.
pub fn filter_by_threshold(results: &[RetrievalResult], tau: f64) -> Vec<RetrievalResult> {
    results
        .iter()
        .take_while(|r| r.score >= tau)
        .copied()
        .collect()
}

impl EvidenceIndex {
    pub fn build(
        corpus: &[(u64, String)],
        vocab: &Vocabulary,
        params: &EncoderParams,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(corpus.len());
        for (id, _) in corpus {
            if !seen.insert(*id) {
                return Err(Error::DuplicateId(*id));
            }
        }
        let mut entries = corpus
            .iter()
            .map(|(id, text)| {
                let ids = vocab.tokenize(text);
                if ids.is_empty() {
                    return Err(Error::EmptyInput { id: Some(*id) });
                }
                Ok(EvidenceChunk {
                    id: *id,
                    text: text.clone(),
                    vector: params.encode_ids(&ids)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.id);
        Ok(EvidenceIndex {
            dim: params.dim(),
            entries,
            encoder_fingerprint: params.fingerprint(),
            metadata: String::new(),
        })
    }

    /// Assemble an index from already-encoded chunks.
    pub fn from_chunks(
        dim: usize,
        mut entries: Vec<EvidenceChunk>,
        encoder_fingerprint: String,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: e.vector.dim(),
                });
            }
            if !seen.insert(e.id) {
                return Err(Error::DuplicateId(e.id));
            }
        }
        entries.sort_by_key(|e| e.id);
        Ok(EvidenceIndex {
            dim,
            entries,
            encoder_fingerprint,
            metadata: String::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: String) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EvidenceChunk] {
        &self.entries
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn get(&self, id: u64) -> Option<&EvidenceChunk> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Fails with [`Error::StaleIndex`] unless `params` produced these vectors.
    pub fn check_encoder(&self, params: &EncoderParams) -> Result<()> {
        let fp = params.fingerprint();
        if fp != self.encoder_fingerprint {
            return Err(Error::StaleIndex {
                expected: fp,
                found: self.encoder_fingerprint.clone(),
            });
        }
        Ok(())
    }

    /// Exact Top-K by exhaustive scan.
    pub fn top_k(&self, q: &SemanticVector, k: usize) -> Result<Vec<RetrievalResult>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        let scored = self
            .entries
            .iter()
            .map(|e| Ok((e.id, alignment_score(q, &e.vector)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_scores(scored, k.max(1)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for s in [&self.encoder_fingerprint, &self.metadata] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&(e.text.len() as u32).to_le_bytes());
            out.extend_from_slice(e.text.as_bytes());
            for v in e.vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err("not an evidence index (bad magic)".into());
        }
        let version = r.u32()?;
        if version != INDEX_FORMAT_VERSION {
            return Err(format!("unsupported index format version {version}"));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let encoder_fingerprint = r.string()?;
        let metadata = r.string()?;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.u64()?;
            let text = r.string()?;
            let values = (0..dim).map(|_| r.f64()).collect::<std::result::Result<_, _>>()?;
            entries.push(EvidenceChunk {
                id,
                text,
                vector: SemanticVector::from_parts(values, true),
            });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        if entries.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err("entries are not strictly sorted by id".into());
        }
        Ok(EvidenceIndex {
            dim,
            entries,
            encoder_fingerprint,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("invalid UTF-8 at byte {at}"))
    }
}
