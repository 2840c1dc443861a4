//! Cross-vocabulary diagnostics: how much of a target vocabulary a base
//! vocabulary shares verbatim, how much it cannot compose at all, and how
//! those rates relate to downstream transfer scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::Serialize;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_script::{Script, UnicodeScript};

use crate::error::{Error, Result};
use crate::numerics::pearson_correlation;
use crate::vocab::{is_composable, is_continuation, surface_form, Vocabulary};

/// Bundled per-language vocabulary metrics for the 17 evaluation targets.
pub const BUNDLED_TABLE1: &str = include_str!("../../../fixtures/table1_metrics.tsv");
/// Bundled zero-shot mBERT NER F1 for the same languages.
pub const BUNDLED_TABLE4A: &str = include_str!("../../../fixtures/table4a_mbert.tsv");

/// Published correlation of vocabulary overlap with NER F1.
pub const REFERENCE_R_LEX: f64 = 0.443;
/// Published correlation of the UNK rate with NER F1.
pub const REFERENCE_R_UNK: f64 = -0.798;
pub const CORRELATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LexicalOverlap {
    pub tokens: BTreeSet<String>,
    pub rate: f64,
}

/// Non-special target tokens that also appear, as the identical string, among
/// the base's non-special tokens. The rate is relative to the number of
/// non-special target tokens.
pub fn lexical_overlap(target: &Vocabulary, base: &Vocabulary) -> LexicalOverlap {
    let mut total = 0usize;
    let mut tokens = BTreeSet::new();
    for (_, t) in target.non_special() {
        total += 1;
        if base.contains(t) && !base.is_special(t) {
            tokens.insert(t.to_owned());
        }
    }
    let rate = if total == 0 {
        0.0
    } else {
        tokens.len() as f64 / total as f64
    };
    LexicalOverlap { tokens, rate }
}

/// Share of non-special target tokens that `base` cannot compose from its
/// pieces. A continuation token is composed as the inside of a word: its
/// surface form (prefix stripped) must be built from `##` pieces only.
///
/// Composability means that some segmentation exists, so growing `base` never
/// raises the rate. Greedy tokenization can dead-end on words another
/// segmentation covers and would break that.
pub fn unk_rate(target: &Vocabulary, base: &Vocabulary) -> f64 {
    let mut total = 0usize;
    let mut unk = 0usize;
    for (_, t) in target.non_special() {
        total += 1;
        if !is_composable(base, surface_form(t), is_continuation(t)) {
            unk += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        unk as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TokenGroup {
    Numbers,
    LatChar,
    LatSubword,
    OtherChar,
    OtherSubword,
}

impl TokenGroup {
    pub const ALL: [TokenGroup; 5] = [
        TokenGroup::Numbers,
        TokenGroup::LatChar,
        TokenGroup::LatSubword,
        TokenGroup::OtherChar,
        TokenGroup::OtherSubword,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenGroup::Numbers => "Numbers",
            TokenGroup::LatChar => "LatChar",
            TokenGroup::LatSubword => "LatSubword",
            TokenGroup::OtherChar => "OtherChar",
            TokenGroup::OtherSubword => "OtherSubword",
        }
    }
}

fn is_decimal_digit(c: char) -> bool {
    get_general_category(c) == GeneralCategory::DecimalNumber
}

fn is_latin(c: char) -> bool {
    c.script() == Script::Latin
}

/// Classifies one token (prefix stripped first). Any decimal digit puts the
/// token in `Numbers`; otherwise length and the presence of Latin-script
/// characters decide.
pub fn classify_token(token: &str) -> TokenGroup {
    let surface = surface_form(token);
    if surface.chars().any(is_decimal_digit) {
        return TokenGroup::Numbers;
    }
    let single = surface.chars().count() == 1;
    let latin = surface.chars().any(is_latin);
    match (single, latin) {
        (true, true) => TokenGroup::LatChar,
        (false, true) => TokenGroup::LatSubword,
        (true, false) => TokenGroup::OtherChar,
        (false, false) => TokenGroup::OtherSubword,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TokenGrouping {
    pub numbers: usize,
    pub lat_char: usize,
    pub lat_subword: usize,
    pub other_char: usize,
    pub other_subword: usize,
}

impl TokenGrouping {
    pub fn get(&self, group: TokenGroup) -> usize {
        match group {
            TokenGroup::Numbers => self.numbers,
            TokenGroup::LatChar => self.lat_char,
            TokenGroup::LatSubword => self.lat_subword,
            TokenGroup::OtherChar => self.other_char,
            TokenGroup::OtherSubword => self.other_subword,
        }
    }

    fn bump(&mut self, group: TokenGroup) {
        let slot = match group {
            TokenGroup::Numbers => &mut self.numbers,
            TokenGroup::LatChar => &mut self.lat_char,
            TokenGroup::LatSubword => &mut self.lat_subword,
            TokenGroup::OtherChar => &mut self.other_char,
            TokenGroup::OtherSubword => &mut self.other_subword,
        };
        *slot += 1;
    }

    pub fn total(&self) -> usize {
        TokenGroup::ALL.iter().map(|&g| self.get(g)).sum()
    }
}

pub fn group_overlap_tokens<'a, I>(tokens: I) -> TokenGrouping
where
    I: IntoIterator<Item = &'a str>,
{
    let mut grouping = TokenGrouping::default();
    for t in tokens {
        grouping.bump(classify_token(t));
    }
    grouping
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub unk_rate: f64,
    pub lex_overlap_rate: f64,
    pub overlap_tokens: BTreeSet<String>,
    pub grouping: TokenGrouping,
}

pub fn analyze(target: &Vocabulary, base: &Vocabulary) -> OverlapReport {
    let overlap = lexical_overlap(target, base);
    let grouping = group_overlap_tokens(overlap.tokens.iter().map(String::as_str));
    OverlapReport {
        unk_rate: unk_rate(target, base),
        lex_overlap_rate: overlap.rate,
        overlap_tokens: overlap.tokens,
        grouping,
    }
}

impl OverlapReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "unk_rate\t{:.6}", self.unk_rate)?;
        writeln!(w, "lex_overlap_rate\t{:.6}", self.lex_overlap_rate)?;
        writeln!(w, "overlap_tokens\t{}", self.overlap_tokens.len())?;
        for g in TokenGroup::ALL {
            writeln!(w, "{}\t{}", g.name(), self.grouping.get(g))?;
        }
        Ok(())
    }
}

/// Majority Unicode script of a token's surface form. Digits, punctuation
/// and other script-neutral characters count as `Common`; a token with any
/// script-specific character is labelled by the most frequent such script
/// (alphabetical order breaks ties).
pub fn token_script(token: &str) -> &'static str {
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for c in surface_form(token).chars() {
        match c.script() {
            Script::Common | Script::Inherited | Script::Unknown => {}
            s => *counts.entry(s.full_name()).or_insert(0) += 1,
        }
    }
    counts
        .iter()
        .fold(None, |best: Option<(&'static str, usize)>, (&name, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((name, n)),
        })
        .map_or("Common", |(name, _)| name)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageMetricsRow {
    pub lang: String,
    pub unk_rate: f64,
    pub lex_overlap_rate: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub r_lex: f64,
    pub r_unk: f64,
    pub languages: usize,
}

impl CorrelationReport {
    pub fn lex_matches_reference(&self) -> bool {
        (self.r_lex - REFERENCE_R_LEX).abs() <= CORRELATION_TOLERANCE
    }

    pub fn unk_matches_reference(&self) -> bool {
        (self.r_unk - REFERENCE_R_UNK).abs() <= CORRELATION_TOLERANCE
    }
}

/// Pearson's r of each vocabulary metric against the transfer score.
pub fn correlation_report(rows: &[LanguageMetricsRow]) -> Result<CorrelationReport> {
    if rows.iter().any(|r| !(r.unk_rate.is_finite() && r.lex_overlap_rate.is_finite() && r.score.is_finite())) {
        return Err(Error::NonFinite("metrics row"));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let lex: Vec<f64> = rows.iter().map(|r| r.lex_overlap_rate).collect();
    let unk: Vec<f64> = rows.iter().map(|r| r.unk_rate).collect();
    Ok(CorrelationReport {
        r_lex: pearson_correlation(&lex, &scores)?,
        r_unk: pearson_correlation(&unk, &scores)?,
        languages: rows.len(),
    })
}

impl fmt::Display for CorrelationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        writeln!(f, "metric\tr\treference\ttolerance\tstatus")?;
        writeln!(
            f,
            "r_unk\t{:.4}\t{REFERENCE_R_UNK}\t{CORRELATION_TOLERANCE}\t{}",
            self.r_unk,
            verdict(self.unk_matches_reference())
        )?;
        write!(
            f,
            "r_lex\t{:.4}\t{REFERENCE_R_LEX}\t{CORRELATION_TOLERANCE}\t{}",
            self.r_lex,
            verdict(self.lex_matches_reference())
        )
    }
}

/// Parses a header-led TSV into rows of named columns.
fn read_tsv<R: BufRead>(reader: R, what: &'static str, required: &[&str]) -> Result<Vec<HashMap<String, String>>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::format(what, "missing header row")),
    };
    let columns: Vec<String> = header.split('\t').map(|c| c.trim().to_owned()).collect();
    for col in required {
        if !columns.iter().any(|c| c == col) {
            return Err(Error::format(what, format!("missing column {col:?}")));
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::format(what, format!("line {} has {} fields, expected {}", n + 2, fields.len(), columns.len())));
        }
        rows.push(columns.iter().cloned().zip(fields.iter().map(|f| f.trim().to_owned())).collect());
    }
    Ok(rows)
}

fn number(row: &HashMap<String, String>, col: &str, what: &'static str) -> Result<f64> {
    let raw = &row[col];
    raw.parse::<f64>()
        .map_err(|_| Error::format(what, format!("{col} value {raw:?} is not a number")))
}

/// Reads `lang  unk_rate  lex_overlap_rate  score` rows.
pub fn read_metrics_tsv<R: BufRead>(reader: R) -> Result<Vec<LanguageMetricsRow>> {
    const WHAT: &str = "metrics TSV";
    read_tsv(reader, WHAT, &["lang", "unk_rate", "lex_overlap_rate", "score"])?
        .iter()
        .map(|row| {
            Ok(LanguageMetricsRow {
                lang: row["lang"].clone(),
                unk_rate: number(row, "unk_rate", WHAT)?,
                lex_overlap_rate: number(row, "lex_overlap_rate", WHAT)?,
                score: number(row, "score", WHAT)?,
            })
        })
        .collect()
}

/// Joins a vocabulary-metrics table (`lang unk_rate lex_overlap_rate`) with a
/// score table (`lang score`) on `lang`, keeping the metrics table's order.
pub fn join_metrics<R1: BufRead, R2: BufRead>(metrics: R1, scores: R2) -> Result<Vec<LanguageMetricsRow>> {
    const WHAT: &str = "fixture TSV";
    let score_rows = read_tsv(scores, WHAT, &["lang", "score"])?;
    let mut by_lang = HashMap::new();
    for row in &score_rows {
        by_lang.insert(row["lang"].clone(), number(row, "score", WHAT)?);
    }
    read_tsv(metrics, WHAT, &["lang", "unk_rate", "lex_overlap_rate"])?
        .iter()
        .map(|row| {
            let lang = row["lang"].clone();
            let score = *by_lang
                .get(&lang)
                .ok_or_else(|| Error::format(WHAT, format!("no score for language {lang:?}")))?;
            Ok(LanguageMetricsRow {
                unk_rate: number(row, "unk_rate", WHAT)?,
                lex_overlap_rate: number(row, "lex_overlap_rate", WHAT)?,
                score,
                lang,
            })
        })
        .collect()
}

pub fn write_metrics_tsv<W: Write>(rows: &[LanguageMetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "lang\tunk_rate\tlex_overlap_rate\tscore")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.lang, r.unk_rate, r.lex_overlap_rate, r.score)?;
    }
    Ok(())
}

/// The bundled 17-language fixture.
pub fn bundled_metrics() -> Result<Vec<LanguageMetricsRow>> {
    join_metrics(BUNDLED_TABLE1.as_bytes(), BUNDLED_TABLE4A.as_bytes())
}
