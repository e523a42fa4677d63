//! Byte-pair-encoding vocabulary.
//!
//! Training starts from the characters present in the corpus plus a
//! dedicated end-of-word token and repeatedly merges the most frequent
//! adjacent pair. Ties go to the lexicographically smallest concatenation,
//! then to the smallest left token. Tokenization replays the recorded merges
//! in training order, so a vocabulary file fully determines `tokenize`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::PasswordCorpus;
use crate::{Error, Result};

/// End-of-word marker. It lies outside printable ASCII, so no merge of corpus
/// characters can ever produce it.
pub const EOW_TOKEN: &str = "\u{2403}";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Merge {
    left: u32,
    right: u32,
    result: u32,
}

/// Ordered token list with its merge rules. Token `i` is identified by its
/// position; the end-of-word token sits at [`TokenVocabulary::eow_index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    merges: Vec<Merge>,
    eow_index: usize,
    chars: HashMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    eow_index: usize,
}

impl From<TokenVocabulary> for VocabularyFile {
    fn from(vocab: TokenVocabulary) -> Self {
        let merges = vocab
            .merges
            .iter()
            .map(|m| {
                (
                    vocab.tokens[m.left as usize].clone(),
                    vocab.tokens[m.right as usize].clone(),
                )
            })
            .collect();
        Self {
            tokens: vocab.tokens,
            merges,
            eow_index: vocab.eow_index,
        }
    }
}

impl TryFrom<VocabularyFile> for TokenVocabulary {
    type Error = Error;

    fn try_from(file: VocabularyFile) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidArgument(format!("vocabulary: {msg}"));
        if file.tokens.get(file.eow_index).map(String::as_str) != Some(EOW_TOKEN) {
            return Err(invalid(format!(
                "eow_index {} does not hold {EOW_TOKEN:?}",
                file.eow_index
            )));
        }
        let mut index = HashMap::new();
        for (i, token) in file.tokens.iter().enumerate() {
            if token.is_empty() {
                return Err(invalid(format!("token {i} is empty")));
            }
            if index.insert(token.as_str(), i as u32).is_some() {
                return Err(invalid(format!("duplicate token {token:?}")));
            }
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| invalid(format!("unknown token {s:?}")))
        };
        let mut merges = Vec::with_capacity(file.merges.len());
        for (left, right) in &file.merges {
            if left == EOW_TOKEN || right == EOW_TOKEN {
                return Err(invalid("end-of-word token cannot be merged".into()));
            }
            merges.push(Merge {
                left: lookup(left)?,
                right: lookup(right)?,
                result: lookup(&format!("{left}{right}"))?,
            });
        }
        Ok(Self::assemble(file.tokens, merges, file.eow_index))
    }
}

/// Token indices of one password, optionally followed by end-of-word padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    /// Rejects sequences where a non-padding token follows `eow`.
    pub fn new(indices: Vec<usize>, eow: usize) -> Result<Self> {
        if let Some(first) = indices.iter().position(|&t| t == eow) {
            if indices[first..].iter().any(|&t| t != eow) {
                return Err(Error::InvalidArgument(
                    "end-of-word token may only be followed by end-of-word tokens".into(),
                ));
            }
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TokenVocabulary {
    fn assemble(tokens: Vec<String>, merges: Vec<Merge>, eow_index: usize) -> Self {
        let chars = tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let mut it = t.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) if i != eow_index => Some((c, i as u32)),
                    _ => None,
                }
            })
            .collect();
        Self {
            tokens,
            merges,
            eow_index,
            chars,
        }
    }

    /// Number of tokens `T`, end-of-word included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn eow_index(&self) -> usize {
        self.eow_index
    }

    /// Merge rules as `(left, right)` strings in application order.
    pub fn merges(&self) -> Vec<(&str, &str)> {
        self.merges
            .iter()
            .map(|m| {
                (
                    self.tokens[m.left as usize].as_str(),
                    self.tokens[m.right as usize].as_str(),
                )
            })
            .collect()
    }

    /// Splits `password` into characters and replays every merge in order.
    pub fn tokenize(&self, password: &str) -> Result<TokenSequence> {
        let mut symbols = password
            .chars()
            .map(|c| self.chars.get(&c).copied().ok_or(Error::OutOfVocabulary(c)))
            .collect::<Result<Vec<u32>>>()?;
        for merge in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            apply_merge(&mut symbols, merge);
        }
        Ok(TokenSequence(
            symbols.into_iter().map(|s| s as usize).collect(),
        ))
    }

    /// Concatenates token strings, skipping end-of-word tokens.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.0
            .iter()
            .filter(|&&t| t != self.eow_index)
            .filter_map(|&t| self.tokens.get(t))
            .map(String::as_str)
            .collect()
    }

    /// Longest tokenization over `corpus`, ignoring passwords that cannot be tokenized.
    pub fn max_tokenized_len(&self, corpus: &PasswordCorpus) -> usize {
        corpus
            .passwords()
            .iter()
            .filter_map(|p| self.tokenize(p).ok())
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Replaces non-overlapping `(left, right)` occurrences left to right.
/// Returns whether anything changed.
fn apply_merge(symbols: &mut Vec<u32>, merge: &Merge) -> bool {
    let mut out = 0;
    let mut read = 0;
    let mut changed = false;
    while read < symbols.len() {
        if read + 1 < symbols.len()
            && symbols[read] == merge.left
            && symbols[read + 1] == merge.right
        {
            symbols[out] = merge.result;
            read += 2;
            changed = true;
        } else {
            symbols[out] = symbols[read];
            read += 1;
        }
        out += 1;
    }
    symbols.truncate(out);
    changed
}

type Pair = (u32, u32);

struct PairStats {
    counts: HashMap<Pair, u64>,
    occurs_in: HashMap<Pair, HashSet<usize>>,
}

impl PairStats {
    fn new(words: &[(Vec<u32>, u64)]) -> Self {
        let mut stats = Self {
            counts: HashMap::new(),
            occurs_in: HashMap::new(),
        };
        for (w, (symbols, freq)) in words.iter().enumerate() {
            stats.add(w, symbols, *freq);
        }
        stats
    }

    fn add(&mut self, word: usize, symbols: &[u32], freq: u64) {
        for pair in symbols.windows(2) {
            let pair = (pair[0], pair[1]);
            *self.counts.entry(pair).or_default() += freq;
            self.occurs_in.entry(pair).or_default().insert(word);
        }
    }

    fn remove(&mut self, symbols: &[u32], freq: u64) {
        for pair in symbols.windows(2) {
            let pair = (pair[0], pair[1]);
            if let Some(count) = self.counts.get_mut(&pair) {
                *count -= freq;
                if *count == 0 {
                    self.counts.remove(&pair);
                }
            }
        }
    }

    fn best(&self, tokens: &[String]) -> Option<Pair> {
        let top = *self.counts.values().max()?;
        self.counts
            .iter()
            .filter(|(_, &c)| c == top)
            .map(|(&pair, _)| pair)
            .min_by(|&a, &b| {
                let key =
                    |(l, r): Pair| (format!("{}{}", tokens[l as usize], tokens[r as usize]), l);
                let (ka, kb) = (key(a), key(b));
                ka.0.cmp(&kb.0)
                    .then_with(|| tokens[ka.1 as usize].cmp(&tokens[kb.1 as usize]))
            })
    }
}

/// Learns a vocabulary of exactly `target_vocab_size` tokens from `corpus`.
pub fn train_bpe(corpus: &PasswordCorpus, target_vocab_size: usize) -> Result<TokenVocabulary> {
    let mut frequencies: BTreeMap<&str, u64> = BTreeMap::new();
    for password in corpus.passwords() {
        *frequencies.entry(password.as_str()).or_default() += 1;
    }
    let base: BTreeSet<char> = frequencies.keys().flat_map(|p| p.chars()).collect();
    let minimum = base.len() + 1;
    if target_vocab_size < minimum {
        return Err(Error::VocabularySize {
            requested: target_vocab_size,
            achievable: minimum,
            reason: format!(
                "the corpus has {} distinct characters plus end-of-word",
                base.len()
            ),
        });
    }

    let mut tokens = vec![EOW_TOKEN.to_string()];
    tokens.extend(base.iter().map(|c| c.to_string()));
    let mut index: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut words: Vec<(Vec<u32>, u64)> = frequencies
        .iter()
        .map(|(p, &f)| (p.chars().map(|c| index[&c.to_string()]).collect(), f))
        .collect();
    let mut stats = PairStats::new(&words);
    let mut merges = Vec::new();

    while tokens.len() < target_vocab_size {
        let Some((left, right)) = stats.best(&tokens) else {
            return Err(Error::VocabularySize {
                requested: target_vocab_size,
                achievable: tokens.len(),
                reason: "no adjacent pairs left to merge".into(),
            });
        };
        let joined = format!("{}{}", tokens[left as usize], tokens[right as usize]);
        let result = *index.entry(joined.clone()).or_insert_with(|| {
            tokens.push(joined);
            (tokens.len() - 1) as u32
        });
        let merge = Merge {
            left,
            right,
            result,
        };
        merges.push(merge);

        let mut affected: Vec<usize> = stats
            .occurs_in
            .remove(&(left, right))
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for w in affected {
            let (symbols, freq) = &mut words[w];
            let before = symbols.clone();
            if apply_merge(symbols, &merge) {
                stats.remove(&before, *freq);
                let (symbols, freq) = (words[w].0.clone(), words[w].1);
                stats.add(w, &symbols, freq);
            }
        }
        stats.counts.remove(&(left, right));
    }

    Ok(TokenVocabulary::assemble(tokens, merges, 0))
}
