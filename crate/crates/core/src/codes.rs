//! Binary codes, Hamming distance and exhaustive Hamming ranking.
//!
//! Bit `j` of a k-bit code lives in word `j / 64` at position `j % 64`.
//! Bits at or above `k` are always zero.
//!
//! Code file layout (little-endian):
//!
//! ```text
//! "MMH1" 'C' u64 count u32 k  { u64 id, u64[ceil(k / 64)] words } * count
//! ```

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::{self, atomic_write, ByteReader, KIND_CODES};
use crate::error::{Error, Result};

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    bits: usize,
    words: Vec<u64>,
}

impl PackedCode {
    /// Panics if a bit at or above `bits` is set or the word count is wrong.
    pub fn from_words(bits: usize, words: Vec<u64>) -> Self {
        assert_eq!(words.len(), words_for(bits), "word count for {bits} bits");
        if bits % 64 != 0 {
            assert_eq!(
                words[words.len() - 1] >> (bits % 64),
                0,
                "bits above width {bits} must be zero"
            );
        }
        Self { bits, words }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut words = vec![0u64; words_for(bits.len())];
        for (j, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            words[j / 64] |= 1 << (j % 64);
        }
        Self {
            bits: bits.len(),
            words,
        }
    }

    pub fn zeros(bits: usize) -> Self {
        Self {
            bits,
            words: vec![0; words_for(bits)],
        }
    }

    pub fn ones(bits: usize) -> Self {
        let mut c = Self {
            bits,
            words: vec![u64::MAX; words_for(bits)],
        };
        c.mask_tail();
        c
    }

    fn mask_tail(&mut self) {
        if self.bits % 64 != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (self.bits % 64)) - 1;
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    /// Complement within the code width.
    pub fn not(&self) -> Self {
        let mut c = Self {
            bits: self.bits,
            words: self.words.iter().map(|w| !w).collect(),
        };
        c.mask_tail();
        c
    }
}

/// Sign rule: bit `j` is set iff `h[j] >= 0`.
pub fn binarize(h: &[f64]) -> PackedCode {
    let mut words = vec![0u64; words_for(h.len())];
    for (j, &x) in h.iter().enumerate() {
        if x >= 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    PackedCode {
        bits: h.len(),
        words,
    }
}

#[inline]
fn popcount_xor(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming_distance(a: &PackedCode, b: &PackedCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::WidthMismatch {
            left: a.bits,
            right: b.bits,
        });
    }
    Ok(popcount_xor(&a.words, &b.words))
}

/// Codes with ids, stored contiguously in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndex {
    bits: usize,
    ids: Vec<u64>,
    words: Vec<u64>,
}

impl CodeIndex {
    pub fn empty(bits: usize) -> Self {
        Self {
            bits,
            ids: Vec::new(),
            words: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn stride(&self) -> usize {
        words_for(self.bits)
    }

    pub fn code_words(&self, pos: usize) -> &[u64] {
        let s = self.stride();
        &self.words[pos * s..(pos + 1) * s]
    }

    pub fn code(&self, pos: usize) -> PackedCode {
        PackedCode {
            bits: self.bits,
            words: self.code_words(pos).to_vec(),
        }
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, PackedCode)> + '_ {
        (0..self.len()).map(|p| (self.ids[p], self.code(p)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.len() * (8 + 8 * self.stride()));
        out.extend_from_slice(binfmt::MAGIC);
        out.push(KIND_CODES);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        for p in 0..self.len() {
            out.extend_from_slice(&self.ids[p].to_le_bytes());
            for w in self.code_words(p) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(KIND_CODES)?;
        let count = r.u64("count")?;
        let bits = r.u32("k")? as usize;
        let stride = words_for(bits);
        r.expect_remaining(count as u128 * (8 + 8 * stride as u128), "code payload")?;
        let mut items = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = r.u64("id")?;
            let mut words = Vec::with_capacity(stride);
            for _ in 0..stride {
                words.push(r.u64("code word")?);
            }
            if bits % 64 != 0 && words[stride - 1] >> (bits % 64) != 0 {
                return Err(Error::WidthMismatch {
                    left: bits,
                    right: 64 * stride,
                });
            }
            items.push((id, PackedCode { bits, words }));
        }
        r.finish()?;
        let mut index = build_index(items)?;
        index.bits = bits;
        Ok(index)
    }
}

/// Collects codes into an index; all codes must share one width and ids must be unique.
pub fn build_index<I>(codes: I) -> Result<CodeIndex>
where
    I: IntoIterator<Item = (u64, PackedCode)>,
{
    let mut index: Option<CodeIndex> = None;
    let mut seen = HashSet::new();
    for (id, code) in codes {
        let idx = index.get_or_insert_with(|| CodeIndex::empty(code.bits));
        if code.bits != idx.bits {
            return Err(Error::WidthMismatch {
                left: idx.bits,
                right: code.bits,
            });
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        idx.ids.push(id);
        idx.words.extend_from_slice(&code.words);
    }
    Ok(index.unwrap_or_else(|| CodeIndex::empty(0)))
}

/// Full Hamming ranking: every item, ordered by (distance, id).
pub fn search(index: &CodeIndex, query: &PackedCode) -> Result<Vec<(u64, u32)>> {
    if index.is_empty() {
        return Ok(Vec::new());
    }
    if query.bits != index.bits {
        return Err(Error::WidthMismatch {
            left: index.bits,
            right: query.bits,
        });
    }
    let stride = index.stride();
    let mut ranked: Vec<(u64, u32)> = index
        .words
        .par_chunks(stride)
        .zip(index.ids.par_iter())
        .map(|(words, &id)| (id, popcount_xor(words, &query.words)))
        .collect();
    ranked.sort_unstable_by_key(|&(id, d)| (d, id));
    Ok(ranked)
}

pub fn write_codes(index: &CodeIndex, path: &Path) -> Result<()> {
    let bytes = index.to_bytes();
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn read_codes(path: &Path) -> Result<CodeIndex> {
    CodeIndex::from_bytes(&std::fs::read(path)?)
}
