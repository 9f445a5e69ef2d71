//! Word tokenization and sentence segmentation shared by all perturbations.
//!
//! The benchmark corpora come pre-tokenized with spaces around punctuation
//! ("did n't", "evening ."), so whitespace is the primary delimiter here and
//! only terminal punctuation still glued to a word is split off. Subword
//! tokenization for likelihood scoring is the backend's business, not ours.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A story condition (title / prompt / leading sentence) plus the story text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionedStory {
    pub id: String,
    /// May be empty; scoring then degenerates to the unconditional likelihood.
    pub condition: String,
    pub story: String,
    /// Name of the generator that produced the story, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl ConditionedStory {
    pub fn new(
        id: impl Into<String>,
        condition: impl Into<String>,
        story: impl Into<String>,
    ) -> Result<Self, TextError> {
        let story = story.into();
        if story.trim().is_empty() {
            return Err(TextError::InvalidInput("story is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            condition: condition.into(),
            story,
            system: None,
        })
    }
}

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte offsets into the original story text, `start..end`.
    pub span: (usize, usize),
}

/// Tokenized story: word tokens plus sentence ranges over the token list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedStory {
    pub tokens: Vec<Token>,
    /// Half-open token-index ranges; non-empty, and they partition the tokens.
    pub sentences: Vec<(usize, usize)>,
}

impl TokenizedStory {
    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

fn is_terminal_char(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

fn is_closing_quote(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| matches!(c, '"' | '\'' | '`' | '\u{2019}' | '\u{201d}'))
}

/// Split a whitespace chunk into a word plus any trailing terminal
/// punctuation glued to it ("was." -> ["was", "."]).
fn split_glued(chunk: &str, offset: usize, out: &mut Vec<Token>) {
    let mut split_at = chunk.len();
    for (idx, ch) in chunk.char_indices().rev() {
        if idx > 0 && is_terminal_char(ch) {
            split_at = idx;
        } else {
            break;
        }
    }
    let head = &chunk[..split_at];
    if split_at == chunk.len() || head.chars().all(is_terminal_char) {
        // nothing glued, or the chunk is pure punctuation ("...")
        out.push(Token {
            text: chunk.to_string(),
            span: (offset, offset + chunk.len()),
        });
        return;
    }
    out.push(Token {
        text: head.to_string(),
        span: (offset, offset + split_at),
    });
    for (i, ch) in chunk[split_at..].char_indices() {
        let start = offset + split_at + i;
        out.push(Token {
            text: ch.to_string(),
            span: (start, start + ch.len_utf8()),
        });
    }
}

/// Tokenize a story into whitespace-delimited tokens, splitting glued
/// terminal punctuation, and segment the result into sentences.
pub fn tokenize(text: &str) -> Result<TokenizedStory, TextError> {
    if text.trim().is_empty() {
        return Err(TextError::InvalidInput(
            "cannot tokenize empty or whitespace-only text".into(),
        ));
    }
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        split_glued(&text[start..i], start, &mut tokens);
    }
    let sentences = segment_sentences(&tokens);
    Ok(TokenizedStory { tokens, sentences })
}

/// Sentence ranges over a token list: a sentence ends at a token that is
/// exactly `.`, `!` or `?`, optionally followed by closing quotes; trailing
/// tokens with no terminator are absorbed into the final range.
pub fn segment_sentences(tokens: &[Token]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < tokens.len() {
        if is_terminal(&tokens[i].text) {
            let mut end = i + 1;
            while end < tokens.len() && is_closing_quote(&tokens[end].text) {
                end += 1;
            }
            ranges.push((start, end));
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < tokens.len() {
        ranges.push((start, tokens.len()));
    }
    ranges
}

/// Join tokens with single spaces — the corpus normal form.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(t: &TokenizedStory) -> Vec<String> {
        t.tokens.iter().map(|tok| tok.text.clone()).collect()
    }

    #[test]
    fn splits_pretokenized_story() {
        let t = tokenize("We play badminton every evening .").unwrap();
        assert_eq!(texts(&t), ["We", "play", "badminton", "every", "evening", "."]);
        assert_eq!(t.sentences, vec![(0, 6)]);
    }

    #[test]
    fn single_token_single_sentence() {
        let t = tokenize("a").unwrap();
        assert_eq!(texts(&t), ["a"]);
        assert_eq!(t.sentences, vec![(0, 1)]);
    }

    #[test]
    fn splits_glued_terminators() {
        // "Hi. Bye." -> 4 tokens, 2 sentences
        let t = tokenize("Hi. Bye.").unwrap();
        assert_eq!(texts(&t), ["Hi", ".", "Bye", "."]);
        assert_eq!(t.sentences, vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn empty_input_is_invalid() {
        assert!(matches!(tokenize(""), Err(TextError::InvalidInput(_))));
        assert!(matches!(tokenize("   \n\t"), Err(TextError::InvalidInput(_))));
    }

    #[test]
    fn spans_point_back_into_source() {
        let src = "Hi. Bye.";
        let t = tokenize(src).unwrap();
        for tok in &t.tokens {
            assert_eq!(&src[tok.span.0..tok.span.1], tok.text);
        }
        // strictly increasing, non-overlapping
        for pair in t.tokens.windows(2) {
            assert!(pair[0].span.1 <= pair[1].span.0);
        }
    }

    #[test]
    fn sentence_boundaries() {
        let t = tokenize("Hi . Bye .").unwrap();
        assert_eq!(t.sentences, vec![(0, 2), (2, 4)]);
        let t = tokenize("no terminator").unwrap();
        assert_eq!(t.sentences, vec![(0, 2)]);
        // Table-1-style two-sentence story segments into two ranges
        let t = tokenize(
            "she did n't intend to buy anything . unfortunately she has poor impulse control .",
        )
        .unwrap();
        assert!(t.sentences.len() >= 2);
        assert_eq!(t.sentences[0], (0, 8));
    }

    #[test]
    fn closing_quote_absorbed_into_sentence() {
        let t = tokenize("he said stop . \" then left .").unwrap();
        assert_eq!(t.sentences[0], (0, 5));
    }

    #[test]
    fn contractions_stay_whole() {
        let t = tokenize("she did n't intend").unwrap();
        assert_eq!(texts(&t), ["she", "did", "n't", "intend"]);
    }

    #[test]
    fn pure_punctuation_token_kept_whole() {
        let t = tokenize("wait ...").unwrap();
        assert_eq!(texts(&t)[1], "...");
    }

    #[test]
    fn roundtrip_on_normalized_text() {
        for s in [
            "We play badminton every evening .",
            "she did n't intend to buy anything .",
            "The supermarket has various kinds of goods",
            "he went to see what the problem was",
        ] {
            let t = tokenize(s).unwrap();
            assert_eq!(detokenize(&t.token_texts()), s);
        }
    }

    proptest! {
        // Normalization is idempotent: tokenizing already-normalized text
        // and joining with single spaces round-trips.
        #[test]
        fn normalization_idempotent(raw in "[a-zA-Z.!?' ]{1,80}") {
            prop_assume!(!raw.trim().is_empty());
            let once = detokenize(&tokenize(&raw).unwrap().token_texts());
            let twice = detokenize(&tokenize(&once).unwrap().token_texts());
            prop_assert_eq!(once, twice);
        }

        // Sentence ranges partition the token list exactly.
        #[test]
        fn sentences_partition_tokens(raw in "[a-z.!? ]{1,60}") {
            prop_assume!(!raw.trim().is_empty());
            let t = tokenize(&raw).unwrap();
            prop_assert!(!t.sentences.is_empty());
            let mut cursor = 0;
            for &(start, end) in &t.sentences {
                prop_assert_eq!(start, cursor);
                prop_assert!(end > start);
                cursor = end;
            }
            prop_assert_eq!(cursor, t.tokens.len());
        }

        // Pure function: repeated calls are identical.
        #[test]
        fn tokenize_is_pure(raw in "[a-zA-Z0-9.!?,' ]{1,60}") {
            prop_assume!(!raw.trim().is_empty());
            prop_assert_eq!(tokenize(&raw).unwrap(), tokenize(&raw).unwrap());
        }
    }
}
