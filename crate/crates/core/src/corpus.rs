//! Password corpora and cross-validation folds.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenVocabulary;
use crate::{seeded_rng, Error, Result};

/// First and last printable ASCII code points.
pub const PRINTABLE_ASCII: std::ops::RangeInclusive<u8> = 0x20..=0x7E;

pub fn is_printable_ascii(s: &str) -> bool {
    s.bytes().all(|b| PRINTABLE_ASCII.contains(&b))
}

/// A multiset of passwords restricted to printable ASCII and a length window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordCorpus {
    passwords: Vec<String>,
    alphabet: BTreeSet<char>,
    min_len: usize,
    max_len: usize,
}

impl PasswordCorpus {
    /// Keeps every candidate that is printable ASCII with `min_len <= len <= max_len`.
    ///
    /// Unlike [`load_corpus`], an empty result is allowed here.
    pub fn from_candidates<I, S>(candidates: I, min_len: usize, max_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if min_len == 0 || max_len < min_len {
            return Err(Error::InvalidArgument(format!(
                "length window [{min_len}, {max_len}] requires 1 <= min_len <= max_len"
            )));
        }
        let passwords = candidates
            .into_iter()
            .map(Into::into)
            .filter(|p| is_printable_ascii(p) && (min_len..=max_len).contains(&p.len()))
            .collect();
        Ok(Self {
            passwords,
            alphabet: PRINTABLE_ASCII.map(char::from).collect(),
            min_len,
            max_len,
        })
    }

    pub fn passwords(&self) -> &[String] {
        &self.passwords
    }

    pub fn len(&self) -> usize {
        self.passwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passwords.is_empty()
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    pub fn min_len(&self) -> usize {
        self.min_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Number of occurrences of `password`.
    pub fn multiplicity(&self, password: &str) -> usize {
        self.passwords.iter().filter(|p| *p == password).count()
    }

    /// Sub-corpus made of the passwords at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            passwords: indices.iter().map(|&i| self.passwords[i].clone()).collect(),
            alphabet: self.alphabet.clone(),
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

/// Reads a newline-delimited password list.
///
/// Lines lose their line terminator (`\n` or `\r\n`) and nothing else. Lines
/// that are not valid printable ASCII are dropped, not reported as errors.
pub fn load_corpus(
    path: impl AsRef<Path>,
    min_len: usize,
    max_len: usize,
) -> Result<PasswordCorpus> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines = raw
        .split(|&b| b == b'\n')
        .map(|line| line.strip_suffix(b"\r").unwrap_or(line))
        .filter_map(|line| std::str::from_utf8(line).ok());
    let corpus = PasswordCorpus::from_candidates(lines, min_len, max_len)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus {
            reason: format!(
                "no printable-ASCII line of length {min_len}..={max_len} in {}",
                path.display()
            ),
        });
    }
    Ok(corpus)
}

/// Outcome of [`filter_by_token_length`].
#[derive(Debug, Clone)]
pub struct TokenFilter {
    pub corpus: PasswordCorpus,
    pub too_long: usize,
    pub out_of_vocabulary: usize,
}

/// Keeps passwords that tokenize to at most `max_tokens` tokens.
///
/// The end-of-word padding is not counted. Passwords that cannot be tokenized
/// are skipped and counted in [`TokenFilter::out_of_vocabulary`].
pub fn filter_by_token_length(
    corpus: &PasswordCorpus,
    vocab: &TokenVocabulary,
    max_tokens: usize,
) -> TokenFilter {
    let mut too_long = 0;
    let mut out_of_vocabulary = 0;
    let mut kept = Vec::with_capacity(corpus.len());
    for password in &corpus.passwords {
        match vocab.tokenize(password) {
            Ok(seq) if seq.len() <= max_tokens => kept.push(password.clone()),
            Ok(_) => too_long += 1,
            Err(_) => out_of_vocabulary += 1,
        }
    }
    if out_of_vocabulary > 0 {
        warn!("skipped {out_of_vocabulary} out-of-vocabulary passwords");
    }
    TokenFilter {
        corpus: PasswordCorpus {
            passwords: kept,
            alphabet: corpus.alphabet.clone(),
            min_len: corpus.min_len,
            max_len: corpus.max_len,
        },
        too_long,
        out_of_vocabulary,
    }
}

/// Assignment of every corpus index to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl SplitPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn eval_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f == fold)
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|f| f != fold)
    }

    fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| keep(f))
            .map(|(i, _)| i)
            .collect()
    }

    /// `(train, eval)` corpora for `fold`.
    pub fn partition(
        &self,
        corpus: &PasswordCorpus,
        fold: usize,
    ) -> Result<(PasswordCorpus, PasswordCorpus)> {
        if fold >= self.fold_count {
            return Err(Error::InvalidArgument(format!(
                "fold {fold} does not exist, plan has {} folds",
                self.fold_count
            )));
        }
        if corpus.len() != self.assignments.len() {
            return Err(Error::LengthMismatch {
                expected: self.assignments.len(),
                actual: corpus.len(),
            });
        }
        Ok((
            corpus.select(&self.train_indices(fold)),
            corpus.select(&self.eval_indices(fold)),
        ))
    }
}

/// Shuffles the corpus indices with `seed` and deals them round-robin into folds.
pub fn make_splits(corpus: &PasswordCorpus, folds: usize, seed: u64) -> Result<SplitPlan> {
    if folds < 2 || folds > corpus.len() {
        return Err(Error::InvalidSplit {
            len: corpus.len(),
            folds,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seeded_rng(seed, 0));
    let mut assignments = vec![0; corpus.len()];
    for (position, &index) in order.iter().enumerate() {
        assignments[index] = position % folds;
    }
    Ok(SplitPlan {
        fold_count: folds,
        seed,
        assignments,
    })
}
