use unicode_general_category::get_general_category;
use unicode_normalization::UnicodeNormalization;

/// Unicode punctuation (general category `P*`).
pub fn is_punctuation(c: char) -> bool {
    get_general_category(c).abbreviation().starts_with('P')
}

/// NFC-normalizes `text`, splits on whitespace and emits every punctuation
/// character as a word of its own. No case folding.
pub fn pretokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut words = Vec::new();
    for chunk in normalized.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_whitespace_and_punctuation() {
        assert_eq!(pretokenize("Hello, world!  a-b\tc"), ["Hello", ",", "world", "!", "a", "-", "b", "c"]);
    }

    #[test]
    fn keeps_case_and_normalizes_to_nfc() {
        // "e" + combining acute composes to a single code point
        assert_eq!(pretokenize("Cafe\u{301}"), ["Caf\u{e9}"]);
    }

    #[test]
    fn unicode_punctuation() {
        assert!(is_punctuation('«'));
        assert!(is_punctuation('।'));
        assert!(!is_punctuation('a'));
        assert_eq!(pretokenize("«да»"), ["«", "да", "»"]);
    }
}
