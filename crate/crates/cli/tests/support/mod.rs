//! Synthetic password corpora for tests.
#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use qubo_passgen::seeded_rng;

const WORDS: &[&str] = &[
    "love", "baby", "angel", "star", "monkey", "dragon", "sun", "blue", "pink", "king", "girl",
    "boy", "cat", "dog", "hello", "life", "cool", "happy", "sweet", "lucky", "honey", "bear",
    "rose", "mama", "papa", "lola", "nina", "maria", "mike", "tiger", "candy", "music", "summer",
    "money", "shadow", "jordan", "daniel", "anna",
];

const NUMBERS: &[&str] = &[
    "123456", "12345", "111111", "123", "000", "777", "2580", "654321", "1234", "007",
];

fn zipf_word(rng: &mut impl Rng) -> &'static str {
    let total: f64 = (1..=WORDS.len()).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for (r, w) in WORDS.iter().enumerate() {
        u -= 1.0 / (r + 1) as f64;
        if u <= 0.0 {
            return w;
        }
    }
    WORDS[WORDS.len() - 1]
}

/// Word-and-digit passwords with a heavy-tailed word distribution.
pub fn human_like(count: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(seed, 0);
    (0..count)
        .map(|_| {
            let word = zipf_word(&mut rng);
            match rng.gen_range(0..100) {
                0..=19 => word.to_owned(),
                20..=49 => format!("{word}{}", rng.gen_range(0..100)),
                50..=64 => format!("{word}{}", rng.gen_range(1970..2012)),
                65..=79 => NUMBERS.choose(&mut rng).unwrap().to_string(),
                80..=89 => format!("{word}{}", zipf_word(&mut rng)),
                _ => format!("{word}123"),
            }
        })
        .collect()
}

/// Short passwords over `{a, b, c, 1, 2, 3}`.
pub fn tiny(count: usize, seed: u64) -> Vec<String> {
    const STEMS: &[&str] = &["abc", "cab", "ab", "ba", "cc"];
    const TAILS: &[&str] = &["", "1", "12", "123", "21", "3"];
    let mut rng = seeded_rng(seed, 0);
    (0..count)
        .map(|_| {
            let stem = STEMS[rng
                .gen_range(0..STEMS.len())
                .min(rng.gen_range(0..STEMS.len()))];
            let tail = TAILS[rng
                .gen_range(0..TAILS.len())
                .min(rng.gen_range(0..TAILS.len()))];
            format!("{stem}{tail}")
        })
        .collect()
}

/// Random printable-ASCII strings of length 1..=12.
pub fn printable(count: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(seed, 0);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=12);
            (0..len)
                .map(|_| rng.gen_range(0x20u8..=0x7E) as char)
                .collect()
        })
        .collect()
}

pub fn write_corpus(path: &Path, passwords: &[String]) {
    let mut text = passwords.join("\n");
    text.push('\n');
    std::fs::write(path, text).unwrap();
}
