//! Lexical resources for the deterministic perturbations: the antonym
//! lexicon (loaded from a pinned TSV file) and the closed verb-agreement
//! table used to plant subject-verb disagreement.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::PerturbError;

/// Antonym lexicon: case-folded word -> antonyms, first listed wins.
///
/// File format: UTF-8, one entry per line, tab-separated fields
/// (`word<TAB>antonym1[<TAB>antonym2...]`), `#` starts a comment.
#[derive(Debug, Clone, Default)]
pub struct AntonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl AntonymLexicon {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (word, antonyms) in entries {
            let word: String = word.into();
            map.insert(
                word.to_lowercase(),
                antonyms.into_iter().map(Into::into).collect(),
            );
        }
        Self { entries: map }
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let raw = fs::read_to_string(path).map_err(|e| {
            PerturbError::InvalidInput(format!("cannot read antonym lexicon {}: {e}", path.display()))
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, PerturbError> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
            let word = fields.next().ok_or_else(|| {
                PerturbError::InvalidInput(format!("antonym lexicon line {}: empty entry", lineno + 1))
            })?;
            let antonyms: Vec<String> = fields.map(str::to_string).collect();
            if antonyms.is_empty() {
                return Err(PerturbError::InvalidInput(format!(
                    "antonym lexicon line {}: '{}' has no antonyms",
                    lineno + 1,
                    word
                )));
            }
            entries.insert(word.to_lowercase(), antonyms);
        }
        Ok(Self { entries })
    }

    /// First listed antonym for a token, matched case-folded.
    pub fn antonym(&self, token: &str) -> Option<&str> {
        self.entries
            .get(&token.to_lowercase())
            .map(|alts| alts[0].as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Copula/auxiliary flips across the agreement boundary.
const AGREEMENT_FLIPS: &[(&str, &str)] = &[
    ("is", "am"),
    ("am", "is"),
    ("are", "is"),
    ("was", "were"),
    ("were", "was"),
    ("has", "have"),
    ("have", "has"),
    ("does", "do"),
    ("do", "does"),
];

const THIRD_SINGULAR_PRONOUNS: &[&str] = &["he", "she", "it"];
const OTHER_PRONOUNS: &[&str] = &["i", "you", "we", "they"];

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(|c| c.is_uppercase()) {
        let mut chars = replacement.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

/// Flip a verb form so it no longer agrees with its subject.
///
/// Auxiliaries and copulas flip by table regardless of position; any other
/// token directly following a pronoun subject gets its `-s` inflection
/// toggled (stripped after he/she/it, added after i/you/we/they).
pub fn disagree(token: &str, prev_token: Option<&str>) -> Option<String> {
    let folded = token.to_lowercase();
    if let Some(&(_, flipped)) = AGREEMENT_FLIPS.iter().find(|(from, _)| *from == folded) {
        return Some(match_case(token, flipped));
    }
    let prev = prev_token?.to_lowercase();
    if !token.chars().all(|c| c.is_alphabetic()) {
        return None;
    }
    if THIRD_SINGULAR_PRONOUNS.contains(&prev.as_str()) {
        if folded.len() > 2 && folded.ends_with('s') && !folded.ends_with("ss") {
            return Some(token[..token.len() - 1].to_string());
        }
    } else if OTHER_PRONOUNS.contains(&prev.as_str()) && !folded.ends_with('s') {
        return Some(format!("{token}s"));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tsv_with_comments() {
        let lex = AntonymLexicon::parse("# comment\nhappy\tsad\tunhappy\n\nbig\tsmall\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.antonym("happy"), Some("sad"));
        assert_eq!(lex.antonym("HAPPY"), Some("sad"));
        assert_eq!(lex.antonym("big"), Some("small"));
        assert_eq!(lex.antonym("tiny"), None);
    }

    #[test]
    fn entry_without_antonyms_is_rejected() {
        assert!(AntonymLexicon::parse("happy\n").is_err());
    }

    #[test]
    fn copula_flips_by_table() {
        assert_eq!(disagree("is", Some("he")).unwrap(), "am");
        assert_eq!(disagree("are", Some("they")).unwrap(), "is");
        assert_eq!(disagree("was", None).unwrap(), "were");
        assert_eq!(disagree("Has", Some("she")).unwrap(), "Have");
    }

    #[test]
    fn s_toggle_after_pronoun() {
        assert_eq!(disagree("runs", Some("he")).unwrap(), "run");
        assert_eq!(disagree("run", Some("they")).unwrap(), "runs");
        assert_eq!(disagree("run", Some("street")), None);
        // never strip from short or -ss words
        assert_eq!(disagree("as", Some("he")), None);
        assert_eq!(disagree("miss", Some("he")), None);
    }

    #[test]
    fn non_alphabetic_untouched() {
        assert_eq!(disagree("n't", Some("they")), None);
        assert_eq!(disagree(".", Some("he")), None);
    }
}
