use crate::error::{Error, Result};

use super::{pretokenize, surface_form, Vocabulary, CONTINUATION_PREFIX, UNK};

/// Words longer than this (in characters) tokenize to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizerOutput {
    pub tokens: Vec<String>,
    /// Positions in `tokens` holding `[UNK]`.
    pub unk_positions: Vec<usize>,
}

impl TokenizerOutput {
    pub fn has_unk(&self) -> bool {
        !self.unk_positions.is_empty()
    }

    fn push_unk(&mut self) {
        self.unk_positions.push(self.tokens.len());
        self.tokens.push(UNK.to_owned());
    }
}

/// Greedy longest-match-first segmentation of a single word. Pieces after the
/// first carry the continuation prefix. If any position cannot be matched the
/// whole word becomes one `[UNK]`. The word is used as given (no
/// normalization); special tokens never match as pieces.
pub fn tokenize(vocab: &Vocabulary, word: &str) -> TokenizerOutput {
    let mut out = TokenizerOutput::default();
    if word.is_empty() {
        return out;
    }
    if word.chars().count() > MAX_WORD_CHARS {
        out.push_unk();
        return out;
    }

    // char boundaries including the end of the word
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let mut pieces = Vec::new();
    let mut candidate = String::with_capacity(word.len() + CONTINUATION_PREFIX.len());
    let mut start = 0;
    while start + 1 < bounds.len() {
        let mut matched = None;
        for end in (start + 1..bounds.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&word[bounds[start]..bounds[end]]);
            if vocab.piece_id(&candidate).is_some() {
                matched = Some(end);
                break;
            }
        }
        match matched {
            Some(end) => {
                pieces.push(candidate.clone());
                start = end;
            }
            None => {
                out.push_unk();
                return out;
            }
        }
    }
    out.tokens = pieces;
    out
}

/// Whether some segmentation of `surface` into vocabulary pieces exists.
///
/// Unlike [`tokenize`], which commits to the longest piece at each step, this
/// searches all segmentations, so adding pieces to `vocab` can only turn a
/// `false` into a `true`. With `continuation` set the first piece must also
/// be a `##` piece (the surface belongs inside a word).
pub fn is_composable(vocab: &Vocabulary, surface: &str, continuation: bool) -> bool {
    if surface.is_empty() || surface.chars().count() > MAX_WORD_CHARS {
        return false;
    }
    let bounds: Vec<usize> = surface
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(surface.len()))
        .collect();
    let mut reachable = vec![false; bounds.len()];
    reachable[0] = true;
    let mut candidate = String::with_capacity(surface.len() + CONTINUATION_PREFIX.len());
    for start in 0..bounds.len() - 1 {
        if !reachable[start] {
            continue;
        }
        for end in start + 1..bounds.len() {
            if reachable[end] {
                continue;
            }
            candidate.clear();
            if start > 0 || continuation {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&surface[bounds[start]..bounds[end]]);
            if vocab.piece_id(&candidate).is_some() {
                reachable[end] = true;
            }
        }
    }
    reachable[bounds.len() - 1]
}

/// Pre-tokenizes `text` and tokenizes every word.
pub fn tokenize_text(vocab: &Vocabulary, text: &str) -> TokenizerOutput {
    let mut out = TokenizerOutput::default();
    for word in pretokenize(text) {
        let part = tokenize(vocab, &word);
        let offset = out.tokens.len();
        out.unk_positions
            .extend(part.unk_positions.iter().map(|p| p + offset));
        out.tokens.extend(part.tokens);
    }
    out
}

/// Joins the pieces of one word, stripping continuation prefixes.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> Result<String> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("nothing to detokenize".into()));
    }
    let mut word = String::new();
    for t in tokens {
        let t = t.as_ref();
        if t == UNK {
            return Err(Error::UnknownToken(t.to_owned()));
        }
        word.push_str(surface_form(t));
    }
    Ok(word)
}
