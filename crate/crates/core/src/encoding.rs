//! Token index ↔ bit-block encodings.
//!
//! Token indices are the 0-based vocabulary positions. Three block layouts
//! are supported:
//!
//! - one-hot: `k = T`, token `i` sets bit `i`;
//! - binary: `k = ceil(log2 T)`, token `i` is `i` written big-endian;
//! - stacked: concatenated one-hot blocks of sizes `(k_1, ..., k_m)`; the hot
//!   position of block `j` is digit `j` of `i` in the mixed radix
//!   `(k_1, ..., k_m)`, least significant digit first.
//!
//! Decoding never fails on well-sized input. Invalid one-hot blocks are
//! repaired by sampling, and code words whose value is `>= T` wrap modulo `T`.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenSequence;
use crate::{Error, Result, Rng};

/// A fixed-length 0/1 vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Any nonzero byte counts as a set bit.
    pub fn from_bits(bits: impl IntoIterator<Item = u8>) -> Self {
        Self(bits.into_iter().map(|b| u8::from(b != 0)).collect())
    }

    /// Bits of the `len` lowest bits of `value`, most significant first.
    pub fn from_u64(value: u64, len: usize) -> Self {
        Self((0..len).rev().map(|i| ((value >> i) & 1) as u8).collect())
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidArgument(format!("{other:?} is not a bit"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl From<Vec<u8>> for BitVector {
    fn from(bits: Vec<u8>) -> Self {
        Self::from_bits(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingKind {
    OneHot,
    Binary,
    Stacked,
}

/// Per-token bit layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeFile", into = "SchemeFile")]
pub struct EncodingScheme {
    kind: EncodingKind,
    vocab_size: usize,
    bits: usize,
    blocks: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemeFile {
    kind: EncodingKind,
    #[serde(rename = "T")]
    vocab_size: usize,
    k: usize,
    block_sizes: Vec<usize>,
}

impl From<EncodingScheme> for SchemeFile {
    fn from(s: EncodingScheme) -> Self {
        Self {
            kind: s.kind,
            vocab_size: s.vocab_size,
            k: s.bits,
            block_sizes: s.blocks,
        }
    }
}

impl TryFrom<SchemeFile> for EncodingScheme {
    type Error = Error;

    fn try_from(f: SchemeFile) -> Result<Self> {
        let scheme = match f.kind {
            EncodingKind::OneHot => Self::one_hot(f.vocab_size)?,
            EncodingKind::Binary => Self::binary(f.vocab_size)?,
            EncodingKind::Stacked => Self::stacked(f.vocab_size, f.block_sizes.clone())?,
        };
        if scheme.bits != f.k {
            return Err(Error::InvalidEncoding(format!(
                "k = {} does not match the {:?} layout ({} bits)",
                f.k, f.kind, scheme.bits
            )));
        }
        Ok(scheme)
    }
}

/// Names accepted by [`EncodingScheme::from_name`].
pub const ENCODING_NAMES: &[&str] = &[
    "binary8",
    "stacked16",
    "stacked20",
    "stacked24",
    "binary",
    "onehot",
    "stacked:<k1>,<k2>,...",
];

impl EncodingScheme {
    pub fn one_hot(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidEncoding("one-hot needs T >= 2".into()));
        }
        Ok(Self {
            kind: EncodingKind::OneHot,
            vocab_size,
            bits: vocab_size,
            blocks: vec![vocab_size],
        })
    }

    pub fn binary(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidEncoding("binary needs T >= 2".into()));
        }
        Ok(Self {
            kind: EncodingKind::Binary,
            vocab_size,
            bits: ceil_log2(vocab_size),
            blocks: Vec::new(),
        })
    }

    pub fn stacked(vocab_size: usize, blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|&k| k < 2) {
            return Err(Error::InvalidEncoding(format!(
                "stacked blocks {blocks:?} must all be >= 2"
            )));
        }
        let capacity = blocks.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k));
        if capacity.is_some_and(|c| c < vocab_size) {
            return Err(Error::InvalidEncoding(format!(
                "stacked blocks {blocks:?} give fewer than T = {vocab_size} code words"
            )));
        }
        Ok(Self {
            kind: EncodingKind::Stacked,
            vocab_size,
            bits: blocks.iter().sum(),
            blocks,
        })
    }

    /// Resolves a CLI encoding name for a vocabulary of `vocab_size` tokens.
    pub fn from_name(name: &str, vocab_size: usize) -> Result<Self> {
        let scheme = match name {
            "binary8" => {
                let scheme = Self::binary(vocab_size)?;
                if scheme.bits != 8 {
                    return Err(Error::InvalidEncoding(format!(
                        "binary8 needs 128 < T <= 256, got T = {vocab_size}; use \"binary\""
                    )));
                }
                scheme
            }
            "stacked16" => Self::stacked(vocab_size, vec![2; 8])?,
            "stacked20" => Self::stacked(vocab_size, vec![2, 2, 8, 8])?,
            "stacked24" => Self::stacked(vocab_size, vec![2, 2, 2, 2, 16])?,
            "binary" => Self::binary(vocab_size)?,
            "onehot" => Self::one_hot(vocab_size)?,
            other => match other.strip_prefix("stacked:") {
                Some(list) => {
                    let blocks = list
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::InvalidEncoding(format!("{other:?}: {e}")))?;
                    Self::stacked(vocab_size, blocks)?
                }
                None => {
                    return Err(Error::InvalidEncoding(format!(
                        "unknown encoding {other:?}; valid names: {}",
                        ENCODING_NAMES.join(", ")
                    )))
                }
            },
        };
        Ok(scheme)
    }

    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Bits per token, `k`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// One-hot block sizes; empty for binary.
    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// Bit ranges of the one-hot blocks inside a single token's code word.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|&k| {
                let r = start..start + k;
                start += k;
                r
            })
            .collect()
    }

    /// Number of distinct valid code words.
    pub fn code_words(&self) -> u128 {
        match self.kind {
            EncodingKind::OneHot => self.vocab_size as u128,
            EncodingKind::Binary => 1u128 << self.bits,
            EncodingKind::Stacked => self.blocks.iter().map(|&k| k as u128).product(),
        }
    }

    pub fn encode_token(&self, index: usize) -> Result<BitVector> {
        if index >= self.vocab_size {
            return Err(Error::TokenOutOfRange {
                index,
                size: self.vocab_size,
            });
        }
        let mut bits = vec![0u8; self.bits];
        self.write_token(index, &mut bits);
        Ok(BitVector(bits))
    }

    fn write_token(&self, index: usize, out: &mut [u8]) {
        match self.kind {
            EncodingKind::Binary => {
                for (pos, bit) in out.iter_mut().enumerate() {
                    *bit = ((index >> (self.bits - 1 - pos)) & 1) as u8;
                }
            }
            EncodingKind::OneHot | EncodingKind::Stacked => {
                let mut rest = index;
                let mut offset = 0;
                for &k in &self.blocks {
                    out[offset + rest % k] = 1;
                    rest /= k;
                    offset += k;
                }
            }
        }
    }

    pub fn decode_token(&self, bits: &BitVector, rng: &mut Rng) -> Result<usize> {
        if bits.len() != self.bits {
            return Err(Error::LengthMismatch {
                expected: self.bits,
                actual: bits.len(),
            });
        }
        Ok(self.read_token(bits.as_slice(), rng))
    }

    fn read_token(&self, bits: &[u8], rng: &mut Rng) -> usize {
        let value = match self.kind {
            EncodingKind::Binary => bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize),
            EncodingKind::OneHot | EncodingKind::Stacked => {
                let mut value = 0usize;
                let mut radix = 1usize;
                let mut offset = 0;
                for &k in &self.blocks {
                    let digit = repair_one_hot(&bits[offset..offset + k], rng);
                    value = value.wrapping_add(digit.wrapping_mul(radix));
                    radix = radix.wrapping_mul(k);
                    offset += k;
                }
                value
            }
        };
        value % self.vocab_size
    }
}

/// Hot position of a one-hot block. Several hot bits: one of them uniformly.
/// No hot bit: any position uniformly.
fn repair_one_hot(block: &[u8], rng: &mut Rng) -> usize {
    let hot = block.iter().filter(|&&b| b == 1).count();
    match hot {
        0 => rng.gen_range(0..block.len()),
        1 => block.iter().position(|&b| b == 1).unwrap_or(0),
        _ => {
            let pick = rng.gen_range(0..hot);
            block
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == 1)
                .nth(pick)
                .map(|(i, _)| i)
                .unwrap_or(0)
        }
    }
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Password-level codec: `max_tokens` token blocks padded with end-of-word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordCodec {
    pub scheme: EncodingScheme,
    pub max_tokens: usize,
    pub eow: usize,
}

impl PasswordCodec {
    pub fn new(scheme: EncodingScheme, max_tokens: usize, eow: usize) -> Result<Self> {
        if eow >= scheme.vocab_size() {
            return Err(Error::TokenOutOfRange {
                index: eow,
                size: scheme.vocab_size(),
            });
        }
        Ok(Self {
            scheme,
            max_tokens,
            eow,
        })
    }

    /// Total bits `n = M k`.
    pub fn bits(&self) -> usize {
        self.max_tokens * self.scheme.bits()
    }

    pub fn encode_password(&self, seq: &TokenSequence) -> Result<BitVector> {
        if seq.len() > self.max_tokens {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.max_tokens,
            });
        }
        let k = self.scheme.bits();
        let mut bits = vec![0u8; self.bits()];
        let padded = seq
            .indices()
            .iter()
            .copied()
            .chain(std::iter::repeat(self.eow))
            .take(self.max_tokens);
        for (pos, token) in padded.enumerate() {
            if token >= self.scheme.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    index: token,
                    size: self.scheme.vocab_size(),
                });
            }
            self.scheme
                .write_token(token, &mut bits[pos * k..(pos + 1) * k]);
        }
        Ok(BitVector(bits))
    }

    /// Decodes every block (repairing as needed) and cuts at the first end-of-word.
    pub fn decode_password(&self, bits: &BitVector, rng: &mut Rng) -> Result<TokenSequence> {
        if bits.len() != self.bits() {
            return Err(Error::LengthMismatch {
                expected: self.bits(),
                actual: bits.len(),
            });
        }
        let k = self.scheme.bits();
        let mut tokens = Vec::with_capacity(self.max_tokens);
        // Every block is decoded so the random stream does not depend on where the word ends.
        let mut ended = false;
        for block in bits.as_slice().chunks(k) {
            let token = self.scheme.read_token(block, rng);
            ended |= token == self.eow;
            if !ended {
                tokens.push(token);
            }
        }
        TokenSequence::new(tokens, self.eow)
    }
}
