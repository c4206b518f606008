//! Tokenization and the token-id vocabulary.
//!
//! Ids `0..4` are reserved (`PAD`, `BOS`, `EOS`, `UNK`). Known words follow,
//! then a fixed range of hash buckets that absorbs every word not in the list,
//! so the text to id mapping is total.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: u32 = 4;

/// Lowercase `text` and split it into maximal alphanumeric runs.
///
/// Whitespace and punctuation both act as boundaries and are dropped.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    hash_buckets: u32,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
    hash_buckets: u32,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::new(r.words, r.hash_buckets)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            words: v.words,
            hash_buckets: v.hash_buckets,
        }
    }
}

impl Vocabulary {
    /// Build from an explicit word list. Later duplicates are ignored.
    pub fn new(words: Vec<String>, hash_buckets: u32) -> Self {
        assert!(hash_buckets > 0, "hash_buckets must be positive");
        let mut kept = Vec::with_capacity(words.len());
        let mut lookup = HashMap::with_capacity(words.len());
        for w in words {
            if lookup.contains_key(&w) {
                continue;
            }
            lookup.insert(w.clone(), RESERVED + kept.len() as u32);
            kept.push(w);
        }
        Vocabulary {
            words: kept,
            hash_buckets,
            lookup,
        }
    }

    /// Collect words from `texts` in first-occurrence order, keeping those
    /// seen at least `min_count` times.
    pub fn from_texts<'a, I>(texts: I, min_count: usize, hash_buckets: u32) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order = Vec::new();
        for t in texts {
            for w in split_words(t) {
                let c = counts.entry(w.clone()).or_insert(0);
                if *c == 0 {
                    order.push(w);
                }
                *c += 1;
            }
        }
        let words = order
            .into_iter()
            .filter(|w| counts[w] >= min_count.max(1))
            .collect();
        Vocabulary::new(words, hash_buckets)
    }

    pub fn size(&self) -> usize {
        RESERVED as usize + self.words.len() + self.hash_buckets as usize
    }

    pub fn hash_buckets(&self) -> u32 {
        self.hash_buckets
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> u32 {
        match self.lookup.get(word) {
            Some(&id) => id,
            None => {
                let bucket = (fnv1a(word.as_bytes()) % u64::from(self.hash_buckets)) as u32;
                RESERVED + self.words.len() as u32 + bucket
            }
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text).iter().map(|w| self.word_id(w)).collect()
    }

    /// True for ids that carry content (known words and hash buckets).
    pub fn is_content(&self, id: u32) -> bool {
        id >= RESERVED && (id as usize) < self.size()
    }

    /// Render an id back to text. Bucket ids render as `<unk>`.
    pub fn token_str(&self, id: u32) -> &str {
        match id {
            PAD => "<pad>",
            BOS => "<bos>",
            EOS => "<eos>",
            UNK => "<unk>",
            _ => {
                let i = (id - RESERVED) as usize;
                self.words.get(i).map(String::as_str).unwrap_or("<unk>")
            }
        }
    }

    /// Join generated ids into text, dropping reserved ids.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id >= RESERVED)
            .map(|&id| self.token_str(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
