//! Subword vocabularies: WordPiece training, greedy longest-match
//! tokenization and the one-token-per-line vocabulary file.

mod pretokenize;
mod tokenizer;
mod trainer;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use pretokenize::{is_punctuation, pretokenize};
pub use tokenizer::{detokenize, is_composable, tokenize, tokenize_text, TokenizerOutput, MAX_WORD_CHARS};
pub use trainer::train_wordpiece;

/// Marker for word-internal pieces.
pub const CONTINUATION_PREFIX: &str = "##";

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in the order they are written at the top of a trained
/// vocabulary file.
pub const DEFAULT_SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Strips the continuation prefix, if any.
pub fn surface_form(token: &str) -> &str {
    token.strip_prefix(CONTINUATION_PREFIX).unwrap_or(token)
}

pub fn is_continuation(token: &str) -> bool {
    token.starts_with(CONTINUATION_PREFIX) && token.len() > CONTINUATION_PREFIX.len()
}

/// Ordered set of unique tokens; a token's id is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    specials: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary, checking for duplicates and that every special is
    /// present. `[UNK]` must be among the specials.
    pub fn new(tokens: Vec<String>, specials: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::format("vocabulary", format!("invalid token at line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        if !specials.iter().any(|s| s == UNK) {
            return Err(Error::format("vocabulary", "special tokens must include [UNK]"));
        }
        for s in &specials {
            if !index.contains_key(s) {
                return Err(Error::format("vocabulary", format!("special token {s:?} missing")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            specials,
        })
    }

    /// Builds a vocabulary whose specials are the standard BERT markers found
    /// among `tokens`; all five must be present.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
        Vocabulary::new(tokens, specials)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn is_special(&self, token: &str) -> bool {
        self.specials.iter().any(|s| s == token)
    }

    /// Id of a non-special piece, used by the tokenizer.
    pub(crate) fn piece_id(&self, piece: &str) -> Option<usize> {
        self.id(piece).filter(|_| !self.is_special(piece))
    }

    /// `(id, token)` for every non-special entry, in id order.
    pub fn non_special(&self) -> impl Iterator<Item = (usize, &str)> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| !self.is_special(t))
            .map(|(i, t)| (i, t.as_str()))
    }

    pub fn non_special_count(&self) -> usize {
        self.non_special().count()
    }

    /// Characters available as word-initial single-character pieces.
    pub fn initial_alphabet(&self) -> BTreeSet<char> {
        self.single_chars(false)
    }

    /// Characters available as `##`-prefixed single-character pieces.
    pub fn continuation_alphabet(&self) -> BTreeSet<char> {
        self.single_chars(true)
    }

    fn single_chars(&self, continuation: bool) -> BTreeSet<char> {
        self.non_special()
            .filter(|(_, t)| is_continuation(t) == continuation)
            .filter_map(|(_, t)| {
                let mut chars = surface_form(t).chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            w.write_all(t.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::format("vocabulary", e.to_string()))?;
        let body = text.strip_suffix('\n').unwrap_or(&text);
        if body.is_empty() {
            return Err(Error::format("vocabulary", "file is empty"));
        }
        Vocabulary::from_tokens(body.split('\n').map(str::to_owned).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Vocabulary::read_from(fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn test_vocab(pieces: &[&str]) -> Vocabulary {
    let tokens = DEFAULT_SPECIALS
        .iter()
        .chain(pieces)
        .map(|s| s.to_string())
        .collect();
    Vocabulary::from_tokens(tokens).unwrap()
}
