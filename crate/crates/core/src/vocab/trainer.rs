use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

use super::{pretokenize, surface_form, Vocabulary, CONTINUATION_PREFIX, UNK};

type Pair = (u32, u32);

/// Symbol table plus the evolving segmentation of every distinct word.
struct MergeState {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    unit_freq: Vec<u64>,
    pair_freq: HashMap<Pair, u64>,
    pair_words: HashMap<Pair, BTreeSet<usize>>,
}

impl MergeState {
    fn new(word_counts: &BTreeMap<String, u64>) -> Self {
        let mut state = MergeState {
            symbols: Vec::new(),
            symbol_ids: HashMap::new(),
            words: Vec::with_capacity(word_counts.len()),
            unit_freq: Vec::new(),
            pair_freq: HashMap::new(),
            pair_words: HashMap::new(),
        };
        for (word, &count) in word_counts {
            let mut seq = Vec::with_capacity(word.len());
            for (i, c) in word.chars().enumerate() {
                let sym = if i == 0 {
                    c.to_string()
                } else {
                    format!("{CONTINUATION_PREFIX}{c}")
                };
                seq.push(state.intern(sym));
            }
            state.words.push((seq, count));
        }
        for w in 0..state.words.len() {
            state.account(w, 1);
        }
        state
    }

    fn intern(&mut self, sym: String) -> u32 {
        if let Some(&id) = self.symbol_ids.get(&sym) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbol_ids.insert(sym.clone(), id);
        self.symbols.push(sym);
        self.unit_freq.push(0);
        id
    }

    /// Adds (`sign = 1`) or removes (`sign = -1`) word `w`'s contribution to
    /// the unit and pair statistics.
    fn account(&mut self, w: usize, sign: i8) {
        let (seq, count) = &self.words[w];
        let count = *count;
        for &s in seq {
            let f = &mut self.unit_freq[s as usize];
            *f = if sign > 0 { *f + count } else { *f - count };
        }
        for pair in seq.windows(2).map(|p| (p[0], p[1])) {
            let f = self.pair_freq.entry(pair).or_insert(0);
            if sign > 0 {
                *f += count;
                self.pair_words.entry(pair).or_default().insert(w);
            } else {
                *f -= count;
                if *f == 0 {
                    self.pair_freq.remove(&pair);
                }
                if let Some(ws) = self.pair_words.get_mut(&pair) {
                    ws.remove(&w);
                    if ws.is_empty() {
                        self.pair_words.remove(&pair);
                    }
                }
            }
        }
    }

    /// Highest `freq(pair) / (freq(left) * freq(right))`, compared exactly in
    /// integers; ties go to the lexicographically smallest `(left, right)`.
    fn best_pair(&self) -> Option<Pair> {
        let mut best: Option<(Pair, u64)> = None;
        for (&pair, &freq) in &self.pair_freq {
            best = match best {
                None => Some((pair, freq)),
                Some((cur, cur_freq)) => {
                    if self.compare(pair, freq, cur, cur_freq) == Ordering::Greater {
                        Some((pair, freq))
                    } else {
                        Some((cur, cur_freq))
                    }
                }
            };
        }
        best.map(|(p, _)| p)
    }

    fn compare(&self, a: Pair, fa: u64, b: Pair, fb: u64) -> Ordering {
        let denom = |p: Pair| {
            u128::from(self.unit_freq[p.0 as usize]) * u128::from(self.unit_freq[p.1 as usize])
        };
        let lhs = u128::from(fa) * denom(b);
        let rhs = u128::from(fb) * denom(a);
        lhs.cmp(&rhs).then_with(|| {
            let key = |p: Pair| (&self.symbols[p.0 as usize], &self.symbols[p.1 as usize]);
            // smaller strings win, so reverse
            key(b).cmp(&key(a))
        })
    }

    fn merge(&mut self, pair: Pair) -> String {
        let merged = format!(
            "{}{}",
            self.symbols[pair.0 as usize],
            surface_form(&self.symbols[pair.1 as usize])
        );
        let new_id = self.intern(merged.clone());
        let affected: Vec<usize> = self
            .pair_words
            .get(&pair)
            .map(|ws| ws.iter().copied().collect())
            .unwrap_or_default();
        for w in affected {
            self.account(w, -1);
            let seq = &self.words[w].0;
            let mut next = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(seq[i]);
                    i += 1;
                }
            }
            self.words[w].0 = next;
            self.account(w, 1);
        }
        merged
    }
}

/// Trains a WordPiece vocabulary of at most `target_size` entries.
///
/// The vocabulary starts with `specials` (in the given order), then every
/// character seen in the corpus, sorted, in each position form it occurs in
/// (word-initial `c`, word-internal `##c`). Pairs of adjacent units are then
/// merged greedily by `freq(pair) / (freq(left) * freq(right))` until the
/// target size is reached or no pair is left. Merged pieces are appended in
/// merge order.
pub fn train_wordpiece<I, S>(corpus: I, target_size: usize, specials: &[&str]) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for word in pretokenize(line.as_ref()) {
            *word_counts.entry(word).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if !specials.contains(&UNK) {
        return Err(Error::InvalidArgument("specials must include [UNK]".into()));
    }

    let mut state = MergeState::new(&word_counts);
    let mut tokens: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    let mut alphabet: Vec<String> = state
        .symbols
        .iter()
        .filter(|s| !specials.contains(&s.as_str()))
        .cloned()
        .collect();
    alphabet.sort();
    if target_size < tokens.len() + alphabet.len() {
        return Err(Error::InvalidArgument(format!(
            "target size {target_size} cannot hold {} specials and {} alphabet units",
            tokens.len(),
            alphabet.len()
        )));
    }
    tokens.extend(alphabet);
    let mut present: BTreeSet<String> = tokens.iter().cloned().collect();

    while tokens.len() < target_size {
        let Some(pair) = state.best_pair() else {
            break;
        };
        let merged = state.merge(pair);
        if present.insert(merged.clone()) {
            tokens.push(merged);
        }
    }

    Vocabulary::new(tokens, specials.iter().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::DEFAULT_SPECIALS;

    fn non_special(v: &Vocabulary) -> Vec<&str> {
        v.non_special().map(|(_, t)| t).collect()
    }

    #[test]
    fn single_symbol_corpus() {
        let v = train_wordpiece(["a a a"], 100, &DEFAULT_SPECIALS).unwrap();
        assert_eq!(non_special(&v), ["a"]);
        assert_eq!(&v.tokens()[..5], DEFAULT_SPECIALS.map(String::from));
    }

    #[test]
    fn first_merge_follows_hand_scoring() {
        // word "abab" x10: units a:10, ##b:20, ##a:10; pairs (a,##b), (##b,##a),
        // (##a,##b) all have frequency 10 and score 10/200, so the tie-break
        // picks the smallest (left, right) = ("##a", "##b").
        let corpus = vec!["abab"; 10];
        let v = train_wordpiece(&corpus, 5 + 3 + 1, &DEFAULT_SPECIALS).unwrap();
        assert_eq!(non_special(&v), ["##a", "##b", "a", "##ab"]);
    }

    #[test]
    fn score_prefers_rare_units() {
        // "xy" x2, "xz" x1, "wz" x3: units x:3 w:3 ##y:2 ##z:4.
        // scores: (x,##y) 2/6, (x,##z) 1/12, (w,##z) 3/12 -> "xy" first.
        let mut corpus = vec!["xy", "xy", "xz"];
        corpus.extend(["wz"; 3]);
        let v = train_wordpiece(&corpus, 5 + 4 + 1, &DEFAULT_SPECIALS).unwrap();
        assert_eq!(v.tokens().last().unwrap(), "xy");
    }

    #[test]
    fn size_bound_and_errors() {
        let corpus = ["the quick brown fox jumps over the lazy dog", "the dog sleeps"];
        for size in [34, 40, 60, 1000] {
            let v = train_wordpiece(corpus, size, &DEFAULT_SPECIALS).unwrap();
            assert!(v.len() <= size);
        }
        assert!(train_wordpiece(corpus, 10, &DEFAULT_SPECIALS).is_err());
        assert!(train_wordpiece(["   "], 100, &DEFAULT_SPECIALS).is_err());
        assert!(train_wordpiece(["a"], 100, &["[PAD]"]).is_err());
    }

    #[test]
    fn merges_eventually_yield_whole_words() {
        let v = train_wordpiece(["banana bandana banana"], 1000, &DEFAULT_SPECIALS).unwrap();
        assert!(v.contains("banana"));
        assert!(v.contains("bandana"));
    }
}
