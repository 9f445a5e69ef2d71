//! Additively-smoothed n-gram language model.
//!
//! Training counts every k-gram (k <= order) over sequences padded with
//! `order - 1` begin markers and one end marker. Conditional probabilities
//! use additive smoothing
//!
//! ```text
//! p(w | h) = (count(h, w) + alpha) / (count(h) + alpha * V)
//! ```
//!
//! with `V` the vocabulary size including the unknown and end symbols.
//! Unseen words map to the unknown symbol. The end transition is counted in
//! training but never scored: stories in the benchmark corpora carry no
//! explicit terminator, so the `m` scored tokens are exactly the story's.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ConditionChannel, ScoringBackend, ScoringError, TokenLogLik};
use crate::text::tokenize;

pub const BOS_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Immutable after training; safe for unrestricted parallel scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    /// Corpus words only; markers and the unknown symbol are implicit.
    vocab: BTreeSet<String>,
    /// k-gram -> count, for all k in 1..=order.
    counts: BTreeMap<Vec<String>, u64>,
    /// Total unigram mass (the empty-history denominator).
    total_unigrams: u64,
}

impl NGramModel {
    /// Train from token sequences.
    pub fn train<S: AsRef<str>>(
        corpus: &[Vec<S>],
        order: usize,
        alpha: f64,
    ) -> Result<Self, ScoringError> {
        if corpus.is_empty() || corpus.iter().all(|seq| seq.is_empty()) {
            return Err(ScoringError::InvalidInput("training corpus is empty".into()));
        }
        if order < 1 {
            return Err(ScoringError::InvalidInput("ngram order must be >= 1".into()));
        }
        if alpha <= 0.0 {
            return Err(ScoringError::InvalidInput("smoothing constant must be > 0".into()));
        }
        let mut vocab = BTreeSet::new();
        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        let mut total_unigrams = 0u64;
        for seq in corpus {
            if seq.is_empty() {
                continue;
            }
            let mut padded: Vec<&str> = Vec::with_capacity(seq.len() + order);
            padded.extend(std::iter::repeat(BOS_TOKEN).take(order - 1));
            for token in seq {
                let token = token.as_ref();
                vocab.insert(token.to_string());
                padded.push(token);
            }
            padded.push(END_TOKEN);
            for k in 1..=order {
                for window in padded.windows(k) {
                    let gram: Vec<String> = window.iter().map(|t| t.to_string()).collect();
                    *counts.entry(gram).or_insert(0) += 1;
                }
            }
            total_unigrams += padded.len() as u64;
        }
        Ok(Self {
            order,
            alpha,
            vocab,
            counts,
            total_unigrams,
        })
    }

    /// Train from raw text, one sequence per line.
    pub fn train_from_text(text: &str, order: usize, alpha: f64) -> Result<Self, ScoringError> {
        let corpus: Vec<Vec<String>> = text
            .lines()
            .filter(|line| !line.trim().is_empty())
            .map(|line| {
                tokenize(line)
                    .map(|t| t.tokens.into_iter().map(|tok| tok.text).collect())
                    .map_err(|e| ScoringError::InvalidInput(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Self::train(&corpus, order, alpha)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Vocabulary size including the unknown and end symbols.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 2
    }

    fn map_token<'a>(&self, token: &'a str) -> &'a str {
        if token == BOS_TOKEN || token == END_TOKEN || self.vocab.contains(token) {
            token
        } else {
            UNK_TOKEN
        }
    }

    fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() {
            return self.total_unigrams;
        }
        let key: Vec<String> = gram.iter().map(|t| t.to_string()).collect();
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Smoothed conditional probability of `word` after `history`. Both are
    /// mapped to the unknown symbol as needed; only the last `order - 1`
    /// history tokens are used.
    pub fn conditional_prob(&self, history: &[&str], word: &str) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        let mut gram: Vec<&str> = history[start..].iter().map(|t| self.map_token(t)).collect();
        let history_count = self.count(&gram);
        gram.push(self.map_token(word));
        let joint_count = self.count(&gram);
        let v = self.vocab_size() as f64;
        (joint_count as f64 + self.alpha) / (history_count as f64 + self.alpha * v)
    }

    /// Save as a versioned text dump of counts; round-trips exactly.
    pub fn save(&self, path: &Path) -> Result<(), ScoringError> {
        let mut out = String::new();
        writeln!(
            out,
            "ngram-model v1 order={} alpha={} vocab={}",
            self.order,
            self.alpha,
            self.vocab_size()
        )
        .expect("write to string");
        let mut grams: Vec<(&Vec<String>, &u64)> = self.counts.iter().collect();
        grams.sort_by(|a, b| (a.0.len(), a.0).cmp(&(b.0.len(), b.0)));
        for (gram, count) in grams {
            writeln!(out, "{}\t{}\t{}", gram.len(), gram.join(" "), count).expect("write to string");
        }
        fs::write(path, out).map_err(|e| ScoringError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let err = |message: String| ScoringError::ModelFile {
            path: path.display().to_string(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut lines = raw.lines();
        let header = lines.next().ok_or_else(|| err("empty model file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "ngram-model" || fields[1] != "v1" {
            return Err(err(format!("bad header '{header}'")));
        }
        let parse_kv = |field: &str, key: &str| -> Result<String, ScoringError> {
            field
                .strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| err(format!("expected {key}=... in header, got '{field}'")))
        };
        let order: usize = parse_kv(fields[2], "order")?
            .parse()
            .map_err(|e| err(format!("bad order: {e}")))?;
        let alpha: f64 = parse_kv(fields[3], "alpha")?
            .parse()
            .map_err(|e| err(format!("bad alpha: {e}")))?;
        let vocab_size: usize = parse_kv(fields[4], "vocab")?
            .parse()
            .map_err(|e| err(format!("bad vocab: {e}")))?;

        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        let mut vocab = BTreeSet::new();
        let mut total_unigrams = 0u64;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(3, '\t').collect();
            if parts.len() != 3 {
                return Err(err(format!("line {}: expected 3 tab-separated fields", i + 2)));
            }
            let k: usize = parts[0]
                .parse()
                .map_err(|e| err(format!("line {}: bad k: {e}", i + 2)))?;
            let gram: Vec<String> = parts[1].split(' ').map(str::to_string).collect();
            if gram.len() != k {
                return Err(err(format!("line {}: gram length {} != k {}", i + 2, gram.len(), k)));
            }
            let count: u64 = parts[2]
                .parse()
                .map_err(|e| err(format!("line {}: bad count: {e}", i + 2)))?;
            if k == 1 {
                total_unigrams += count;
                let token = &gram[0];
                if token != BOS_TOKEN && token != END_TOKEN && token != UNK_TOKEN {
                    vocab.insert(token.clone());
                }
            }
            counts.insert(gram, count);
        }
        let model = Self {
            order,
            alpha,
            vocab,
            counts,
            total_unigrams,
        };
        if model.vocab_size() != vocab_size {
            return Err(err(format!(
                "header vocab={} disagrees with reconstructed vocabulary {}",
                vocab_size,
                model.vocab_size()
            )));
        }
        Ok(model)
    }
}

impl ScoringBackend for NGramModel {
    fn id(&self) -> String {
        format!("ngram-{}-a{}", self.order, self.alpha)
    }

    fn condition_channel(&self) -> ConditionChannel {
        ConditionChannel::Concatenated
    }

    fn score(&self, condition: &str, story: &str) -> Result<TokenLogLik, ScoringError> {
        let story_tokens: Vec<String> = tokenize(story)
            .map_err(|e| ScoringError::InvalidInput(e.to_string()))?
            .tokens
            .into_iter()
            .map(|t| t.text)
            .collect();
        if story_tokens.is_empty() {
            return Err(ScoringError::EmptyScore { backend: self.id() });
        }
        let condition_tokens: Vec<String> = if condition.trim().is_empty() {
            Vec::new()
        } else {
            tokenize(condition)
                .map_err(|e| ScoringError::InvalidInput(e.to_string()))?
                .tokens
                .into_iter()
                .map(|t| t.text)
                .collect()
        };
        let mut sequence: Vec<&str> = Vec::new();
        sequence.extend(std::iter::repeat(BOS_TOKEN).take(self.order - 1));
        sequence.extend(condition_tokens.iter().map(|t| t.as_str()));
        let story_start = sequence.len();
        sequence.extend(story_tokens.iter().map(|t| t.as_str()));

        let logprobs: Vec<f64> = (story_start..sequence.len())
            .map(|t| self.conditional_prob(&sequence[..t], sequence[t]).ln())
            .collect();
        TokenLogLik::new(logprobs, self.id(), !condition_tokens.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> NGramModel {
        // two identical sequences "a b"
        NGramModel::train(&[vec!["a", "b"], vec!["a", "b"]], 2, 1.0).unwrap()
    }

    #[test]
    fn toy_bigram_probabilities() {
        let model = toy_model();
        // V = {a, b, unk, end} = 4
        assert_eq!(model.vocab_size(), 4);
        // p(b|a) = (2 + 1) / (2 + 1*4) = 0.5
        assert!((model.conditional_prob(&["a"], "b") - 0.5).abs() < 1e-12);
        // p(a|<s>) = (2 + 1) / (2 + 4) = 0.5
        assert!((model.conditional_prob(&[BOS_TOKEN], "a") - 0.5).abs() < 1e-12);
        // unseen continuation: p(a|b) = (0 + 1) / (2 + 4) = 1/6
        assert!((model.conditional_prob(&["b"], "a") - 1.0 / 6.0).abs() < 1e-12);
        // unknown word maps to UNK: p(unk|a) = 1/6
        assert!((model.conditional_prob(&["a"], "zzz") - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn unigram_counts_include_end() {
        // order 1, corpus "a": tokens counted {a, </s>}; V = {a, unk, end} = 3
        let model = NGramModel::train(&[vec!["a"]], 1, 1.0).unwrap();
        assert_eq!(model.vocab_size(), 3);
        // p(a) = (1 + 1) / (2 + 1*3) = 0.4
        assert!((model.conditional_prob(&[], "a") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn large_alpha_flattens_to_uniform() {
        let model = NGramModel::train(&[vec!["a", "b"]], 2, 1e9).unwrap();
        let v = model.vocab_size() as f64;
        for word in ["a", "b", "zzz", END_TOKEN] {
            assert!((model.conditional_prob(&["a"], word) - 1.0 / v).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(NGramModel::train::<&str>(&[], 2, 1.0).is_err());
        assert!(NGramModel::train(&[Vec::<&str>::new()], 2, 1.0).is_err());
    }

    #[test]
    fn scores_story_tokens_only() {
        let model = toy_model();
        let with_condition = model.score("a", "b").unwrap();
        assert_eq!(with_condition.token_count, 1);
        assert!(with_condition.condition_included);
        // p(b|a) = 0.5
        assert!((with_condition.mean_logprob - 0.5f64.ln()).abs() < 1e-12);

        let unconditional = model.score("", "a b").unwrap();
        assert_eq!(unconditional.token_count, 2);
        assert!(!unconditional.condition_included);
        // p(a|<s>) = 0.5, p(b|a) = 0.5
        assert!((unconditional.mean_logprob - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_condition_is_bitwise_unconditional() {
        let model = toy_model();
        let a = model.score("", "a b").unwrap();
        let b = model.score("   ", "a b").unwrap();
        assert_eq!(a.story_token_logprobs, b.story_token_logprobs);
    }

    #[test]
    fn condition_length_never_changes_token_count() {
        let model = toy_model();
        for condition in ["", "a", "a b", "a b a b a b"] {
            assert_eq!(model.score(condition, "a b").unwrap().token_count, 2);
        }
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let model = NGramModel::train(
            &[vec!["a", "b", "c"], vec!["a", "c"], vec!["b"]],
            3,
            0.25,
        )
        .unwrap();
        model.save(&path).unwrap();
        let loaded = NGramModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        // byte-exact second dump
        let path2 = dir.path().join("model2.txt");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "not-a-model\n").unwrap();
        assert!(matches!(
            NGramModel::load(&path),
            Err(ScoringError::ModelFile { .. })
        ));
    }

    #[test]
    fn probabilities_sum_to_one_over_vocab() {
        let model = NGramModel::train(
            &[vec!["a", "b", "a"], vec!["b", "b"], vec!["c", "a", "b"]],
            2,
            0.5,
        )
        .unwrap();
        // histories observed as prefixes of counted bigrams
        let mut histories: BTreeSet<String> = BTreeSet::new();
        for gram in model.counts.keys().filter(|g| g.len() == 2) {
            histories.insert(gram[0].clone());
        }
        for h in histories {
            let mut total = 0.0;
            for word in model.vocab.iter().map(String::as_str).chain([UNK_TOKEN, END_TOKEN]) {
                total += model.conditional_prob(&[h.as_str()], word);
            }
            assert!((total - 1.0).abs() < 1e-9, "sum for history '{h}' was {total}");
        }
    }
}
