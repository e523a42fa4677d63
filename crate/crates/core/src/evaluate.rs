//! Generated-password quality: overlap with a held-out set and minimum edit
//! distance (MED) to it, with a BK-tree to keep nearest-neighbour lookups cheap.

use std::collections::{BTreeSet, HashSet};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tokenizer::{TokenSequence, TokenVocabulary};
use crate::{seeded_rng, Error, Result};

/// Levenshtein distance over `char`s, two-row dynamic programming.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone)]
struct Node {
    word: String,
    /// `(edge weight, child index)`, at most one child per weight.
    children: Vec<(usize, usize)>,
}

/// Burkhard-Keller tree over unique strings under edit distance.
#[derive(Debug, Clone)]
pub struct BkTree {
    nodes: Vec<Node>,
}

impl BkTree {
    /// Builds from the unique strings of `eval_set`, inserted in sorted order.
    pub fn build<I, S>(eval_set: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = eval_set
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        let mut words = unique.into_iter();
        let root = words.next().ok_or(Error::EmptyEvalSet)?;
        let mut tree = Self {
            nodes: vec![Node {
                word: root,
                children: Vec::new(),
            }],
        };
        for word in words {
            tree.insert(word);
        }
        Ok(tree)
    }

    /// Adds `word`; returns `false` if it was already present.
    pub fn insert(&mut self, word: String) -> bool {
        let mut at = 0;
        loop {
            let d = edit_distance(&word, &self.nodes[at].word);
            if d == 0 {
                return false;
            }
            match self.nodes[at].children.iter().find(|(w, _)| *w == d) {
                Some(&(_, child)) => at = child,
                None => {
                    let index = self.nodes.len();
                    self.nodes.push(Node {
                        word,
                        children: Vec::new(),
                    });
                    self.nodes[at].children.push((d, index));
                    return true;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.min_edit_distance(word) == 0
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.word.as_str())
    }

    /// Every edge as `(parent word, child word, weight)`.
    pub fn edges(&self) -> Vec<(&str, &str, usize)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.children
                    .iter()
                    .map(move |&(w, c)| (n.word.as_str(), self.nodes[c].word.as_str(), w))
            })
            .collect()
    }

    /// Exact distance from `word` to its nearest tree member.
    ///
    /// A child reached by an edge of weight `w` from a node at distance `d`
    /// only holds strings at distance `>= |w - d|`, so it is skipped unless
    /// that bound beats the current best.
    pub fn min_edit_distance(&self, word: &str) -> usize {
        let mut best = usize::MAX;
        let mut stack = vec![0];
        while let Some(at) = stack.pop() {
            let node = &self.nodes[at];
            let d = edit_distance(word, &node.word);
            best = best.min(d);
            if best == 0 {
                break;
            }
            let mut next: Vec<(usize, usize)> = node
                .children
                .iter()
                .filter(|(w, _)| w.abs_diff(d) < best)
                .map(|&(w, c)| (w.abs_diff(d), c))
                .collect();
            // Closest-looking children are popped first.
            next.sort_unstable_by(|a, b| b.cmp(a));
            stack.extend(next.into_iter().map(|(_, c)| c));
        }
        best
    }

    /// MED for every query, in parallel.
    pub fn min_edit_distances(&self, queries: &[String]) -> Vec<usize> {
        queries
            .par_iter()
            .map(|q| self.min_edit_distance(q))
            .collect()
    }
}

/// Fraction of `generated` (with multiplicity) found in `eval_set`.
pub fn overlap_score(generated: &[String], eval_set: &HashSet<String>) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no generated passwords".into()));
    }
    let hits = generated.iter().filter(|g| eval_set.contains(*g)).count();
    Ok(hits as f64 / generated.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[usize]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<usize>() as f64 / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (mean, var.sqrt())
}

/// Passwords of `max_tokens` uniformly drawn tokens, cut at the first end-of-word.
pub fn uniform_passwords(
    vocab: &TokenVocabulary,
    max_tokens: usize,
    count: usize,
    seed: u64,
) -> Vec<String> {
    let mut rng = seeded_rng(seed, 0);
    let eow = vocab.eow_index();
    (0..count)
        .map(|_| {
            let draws: Vec<usize> = (0..max_tokens)
                .map(|_| rng.gen_range(0..vocab.len()))
                .collect();
            let content: Vec<usize> = draws.into_iter().take_while(|&t| t != eow).collect();
            let seq = TokenSequence::new(content, eow).expect("no end-of-word inside content");
            vocab.detokenize(&seq)
        })
        .collect()
}

/// MED mean and sample standard deviation of uniformly random token sequences.
pub fn uniform_baseline(
    vocab: &TokenVocabulary,
    max_tokens: usize,
    count: usize,
    seed: u64,
    tree: &BkTree,
) -> Result<(f64, f64)> {
    if count < 2 {
        return Err(Error::InvalidArgument(
            "the baseline needs at least 2 samples".into(),
        ));
    }
    let passwords = uniform_passwords(vocab, max_tokens, count, seed);
    Ok(mean_std(&tree.min_edit_distances(&passwords)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasswordMed {
    pub password: String,
    pub med: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overlap: f64,
    pub med_values: Vec<PasswordMed>,
    pub med_mean: f64,
    pub med_std: f64,
    pub baseline_med_mean: f64,
    pub baseline_med_std: f64,
    pub baseline_count: usize,
}

impl EvalReport {
    /// Scores `generated` against `eval_set`, with a `baseline_count`-sample uniform baseline.
    pub fn compute(
        generated: &[String],
        eval_set: &[String],
        vocab: &TokenVocabulary,
        max_tokens: usize,
        baseline_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let tree = BkTree::build(eval_set)?;
        let eval: HashSet<String> = eval_set.iter().cloned().collect();
        let overlap = overlap_score(generated, &eval)?;
        let meds = tree.min_edit_distances(generated);
        let (med_mean, med_std) = mean_std(&meds);
        let (baseline_med_mean, baseline_med_std) =
            uniform_baseline(vocab, max_tokens, baseline_count, seed, &tree)?;
        Ok(Self {
            overlap,
            med_values: generated
                .iter()
                .zip(meds)
                .map(|(p, med)| PasswordMed {
                    password: p.clone(),
                    med,
                })
                .collect(),
            med_mean,
            med_std,
            baseline_med_mean,
            baseline_med_std,
            baseline_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PasswordCorpus;
    use crate::tokenizer::train_bpe;

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("hunter2", "hunter2"), 0);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("flaw", "lawn"), 2);
    }

    #[test]
    fn single_and_duplicate() {
        let tree = BkTree::build(["abc"]).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.min_edit_distance("abd"), 1);
        let mut tree = BkTree::build(["abc", "abc", "abd"]).unwrap();
        assert_eq!(tree.len(), 2);
        assert!(!tree.insert("abd".into()));
        assert_eq!(tree.len(), 2);
        assert!(matches!(
            BkTree::build(Vec::<String>::new()),
            Err(Error::EmptyEvalSet)
        ));
    }

    #[test]
    fn edges_hold_edit_distances() {
        let words = [
            "book", "books", "cake", "boo", "cape", "cart", "boon", "cook", "a", "",
        ];
        let tree = BkTree::build(words).unwrap();
        for (u, v, w) in tree.edges() {
            assert_eq!(edit_distance(u, v), w);
        }
        assert!(tree.contains("cape"));
        assert_eq!(tree.min_edit_distance("caqe"), 1);
    }

    #[test]
    fn overlap_examples() {
        let eval: HashSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let g = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(overlap_score(&g(&["x", "y"]), &eval).unwrap(), 0.0);
        assert_eq!(overlap_score(&g(&["a", "b", "a"]), &eval).unwrap(), 1.0);
        assert_eq!(
            overlap_score(&g(&["a", "x", "y", "z"]), &eval).unwrap(),
            0.25
        );
        assert!(overlap_score(&[], &eval).is_err());
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1, 2, 3, 4]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn baseline_on_unary_alphabet() {
        let corpus = PasswordCorpus::from_candidates(["a", "aa", "aaa"], 1, 32).unwrap();
        let vocab = train_bpe(&corpus, 3).unwrap();
        // Tokens: eow, "a", "aa"; longest possible output is 3 * "aa".
        let eval: Vec<String> = (0..=6).map(|k| "a".repeat(k)).collect();
        let tree = BkTree::build(&eval).unwrap();
        let (mean, std) = uniform_baseline(&vocab, 3, 200, 5, &tree).unwrap();
        assert_eq!((mean, std), (0.0, 0.0));
        assert_eq!(
            uniform_passwords(&vocab, 3, 50, 1),
            uniform_passwords(&vocab, 3, 50, 1)
        );
        assert!(uniform_baseline(&vocab, 3, 1, 5, &tree).is_err());
    }

    #[test]
    fn report_subset_overlap() {
        let eval: Vec<String> = ["love", "lovely", "loser"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let corpus = PasswordCorpus::from_candidates(eval.clone(), 1, 32).unwrap();
        let vocab = train_bpe(&corpus, 10).unwrap();
        let generated = vec!["love".to_string(), "loser".to_string()];
        let report = EvalReport::compute(&generated, &eval, &vocab, 3, 10, 0).unwrap();
        assert_eq!(report.overlap, 1.0);
        assert_eq!(report.med_mean, 0.0);
        assert_eq!(report.med_values.len(), 2);
    }
}
