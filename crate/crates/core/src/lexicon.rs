//! Gender-labelled word pairs and name lists, plus the tokenizer and casing
//! rules every matching step relies on.
//!
//! Tokens are maximal runs of letters and digits, with apostrophes allowed
//! between two word characters. A trailing possessive `'s` is split into its
//! own token so `Maria's` still matches the name `Maria`. Matching is always
//! on whole tokens: `man` never matches inside `mandate`.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gendered noun pairs shipped with the crate.
pub const BUNDLED_PAIRS: &str = include_str!("../data/gendered_pairs.tsv");

/// Small illustrative name-count table in the national name-statistics layout.
pub const BUNDLED_NAME_COUNTS: &str = include_str!("../data/names_sample.tsv");

/// Default dominance threshold for name lists.
pub const DEFAULT_NAME_THRESHOLD: f64 = 0.8;

/// Gender association of a lexicon entry. Binary labels are the default but
/// any lowercase label (e.g. `neutral`) is admitted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenderLabel(String);

impl GenderLabel {
    pub fn female() -> Self {
        GenderLabel("female".into())
    }

    pub fn male() -> Self {
        GenderLabel("male".into())
    }

    /// Parse a label, accepting `f`/`m` shorthands. Empty labels are rejected.
    pub fn parse(raw: &str) -> Result<Self> {
        let lower = raw.trim().to_lowercase();
        let label = match lower.as_str() {
            "" => return Err(Error::invalid("empty gender label")),
            "f" | "female" | "she" => "female".to_string(),
            "m" | "male" | "he" => "male".to_string(),
            other => other.to_string(),
        };
        Ok(GenderLabel(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_female(&self) -> bool {
        self.0 == "female"
    }

    pub fn is_male(&self) -> bool {
        self.0 == "male"
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A token with its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Split `text` into word tokens.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].1.is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = chars[i].0;
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if c.is_alphanumeric() {
                j += 1;
            } else if is_apostrophe(c) && j + 1 < chars.len() && chars[j + 1].1.is_alphanumeric() {
                j += 2;
            } else {
                break;
            }
        }
        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        let word = &text[start..end];
        match possessive_split(word) {
            Some(stem_len) => {
                tokens.push(Token {
                    start,
                    end: start + stem_len,
                    text: &word[..stem_len],
                });
                tokens.push(Token {
                    start: start + stem_len,
                    end,
                    text: &word[stem_len..],
                });
            }
            None => tokens.push(Token {
                start,
                end,
                text: word,
            }),
        }
        i = j;
    }
    tokens
}

// Byte length of the stem when `word` ends in a possessive 's.
fn possessive_split(word: &str) -> Option<usize> {
    let mut rev = word.char_indices().rev();
    let (_, last) = rev.next()?;
    let (apos_idx, apos) = rev.next()?;
    if (last == 's' || last == 'S') && is_apostrophe(apos) && apos_idx > 0 {
        Some(apos_idx)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CasingClass {
    Lower,
    Title,
    Upper,
    Mixed,
}

fn casing_class(token: &str) -> CasingClass {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    let Some(&first) = letters.first() else {
        return CasingClass::Lower;
    };
    let rest_lower = letters[1..].iter().all(|c| !c.is_uppercase());
    let rest_upper = letters[1..].iter().all(|c| !c.is_lowercase());
    if !first.is_uppercase() {
        if rest_lower {
            CasingClass::Lower
        } else {
            CasingClass::Mixed
        }
    } else if rest_lower {
        // a single capital letter reads as Title rather than UPPER
        CasingClass::Title
    } else if rest_upper {
        CasingClass::Upper
    } else {
        CasingClass::Mixed
    }
}

/// Render `replacement` in the casing class of `pattern` (lower, Title or
/// UPPER). Mixed-case patterns fall back to a lowercase replacement.
pub fn apply_casing(pattern: &str, replacement: &str) -> String {
    match casing_class(pattern) {
        CasingClass::Lower | CasingClass::Mixed => replacement.to_lowercase(),
        CasingClass::Upper => replacement.to_uppercase(),
        CasingClass::Title => {
            let lower = replacement.to_lowercase();
            let mut chars = lower.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

/// One partner relation as written in the pairs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    pub word_a: String,
    pub label_a: GenderLabel,
    pub word_b: String,
    pub label_b: GenderLabel,
}

/// What a lexicon token resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub partner: String,
    pub label: GenderLabel,
    pub pair_index: usize,
}

/// Bidirectional gendered word-pair list with a lowercase lookup index.
#[derive(Debug, Clone)]
pub struct PairLexicon {
    pairs: Vec<WordPair>,
    lookup: HashMap<String, LexEntry>,
    max_entry_tokens: usize,
    warnings: Vec<String>,
}

fn normalize_key(word: &str) -> String {
    word.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl PairLexicon {
    /// Build from pairs; on conflicting partners the first-listed mapping wins
    /// and a warning is recorded.
    pub fn from_pairs(pairs: Vec<WordPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("pair lexicon is empty"));
        }
        let mut lex = PairLexicon {
            pairs: Vec::with_capacity(pairs.len()),
            lookup: HashMap::new(),
            max_entry_tokens: 1,
            warnings: Vec::new(),
        };
        for pair in pairs {
            lex.push(pair, None);
        }
        Ok(lex)
    }

    fn push(&mut self, pair: WordPair, line: Option<usize>) {
        let idx = self.pairs.len();
        let place = line.map(|l| format!("line {l}: ")).unwrap_or_default();
        for (word, label, partner) in [
            (&pair.word_a, &pair.label_a, &pair.word_b),
            (&pair.word_b, &pair.label_b, &pair.word_a),
        ] {
            let key = normalize_key(word);
            self.max_entry_tokens = self.max_entry_tokens.max(key.split(' ').count());
            match self.lookup.get(&key) {
                Some(existing) => {
                    let msg = if normalize_key(&existing.partner) == normalize_key(partner) {
                        format!("{place}duplicate mapping `{key}` -> `{partner}` ignored")
                    } else {
                        format!(
                            "{place}`{key}` already maps to `{}`; ignoring `{partner}`",
                            existing.partner
                        )
                    };
                    self.warnings.push(msg);
                }
                None => {
                    self.lookup.insert(
                        key,
                        LexEntry {
                            partner: partner.clone(),
                            label: label.clone(),
                            pair_index: idx,
                        },
                    );
                }
            }
        }
        self.pairs.push(pair);
    }

    /// Apply context-free replacement overrides (`word<TAB>replacement`),
    /// replacing whatever partner the word resolved to.
    pub fn apply_overrides<R: BufRead>(&mut self, source: R) -> Result<usize> {
        let mut applied = 0;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::parse(line_no, "override needs `word<TAB>replacement`"));
            }
            let key = normalize_key(fields[0]);
            let entry = self.lookup.get_mut(&key).ok_or_else(|| {
                Error::parse(line_no, format!("override for unknown word `{}`", fields[0]))
            })?;
            entry.partner = fields[1].to_string();
            applied += 1;
        }
        Ok(applied)
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn max_entry_tokens(&self) -> usize {
        self.max_entry_tokens
    }

    /// Case-insensitive lookup of a word (or whitespace-separated phrase).
    pub fn lookup(&self, word: &str) -> Option<&LexEntry> {
        self.lookup.get(&normalize_key(word))
    }

    pub fn partner(&self, word: &str) -> Option<&str> {
        self.lookup(word).map(|e| e.partner.as_str())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.lookup.contains_key(&normalize_key(word))
    }

    /// Every listed word with its label, in file order, without duplicates.
    pub fn labelled_words(&self) -> Vec<(String, GenderLabel)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for p in &self.pairs {
            for (w, l) in [(&p.word_a, &p.label_a), (&p.word_b, &p.label_b)] {
                if seen.insert(normalize_key(w)) {
                    out.push((w.clone(), l.clone()));
                }
            }
        }
        out
    }
}

/// Read a tab-separated pairs file: `word_a<TAB>label_a<TAB>word_b<TAB>label_b`.
pub fn load_pair_lexicon<R: BufRead>(source: R) -> Result<PairLexicon> {
    let mut lex = PairLexicon {
        pairs: Vec::new(),
        lookup: HashMap::new(),
        max_entry_tokens: 1,
        warnings: Vec::new(),
    };
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let label_a = GenderLabel::parse(fields[1]).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let label_b = GenderLabel::parse(fields[3]).map_err(|e| Error::parse(line_no, e.to_string()))?;
        lex.push(
            WordPair {
                word_a: fields[0].to_string(),
                label_a,
                word_b: fields[2].to_string(),
                label_b,
            },
            Some(line_no),
        );
    }
    if lex.pairs.is_empty() {
        return Err(Error::invalid("pair lexicon is empty"));
    }
    Ok(lex)
}

/// A lexicon match inside a sentence. `start..end` are byte offsets and
/// `surface` is the text exactly as it appeared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMatch<'s, 'l> {
    pub start: usize,
    pub end: usize,
    pub surface: &'s str,
    pub entry: &'l LexEntry,
}

/// Whole-token, case-insensitive matches of lexicon entries, longest entry
/// first, never overlapping.
pub fn match_gendered_tokens<'s, 'l>(sentence: &'s str, lex: &'l PairLexicon) -> Vec<TokenMatch<'s, 'l>> {
    let tokens = tokenize(sentence);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = None;
        let max_n = lex.max_entry_tokens.min(tokens.len() - i);
        for n in (1..=max_n).rev() {
            let span = &tokens[i..i + n];
            // multi-token entries may only be separated by whitespace
            let contiguous = span
                .windows(2)
                .all(|w| sentence[w[0].end..w[1].start].chars().all(char::is_whitespace) && w[0].end < w[1].start);
            if !contiguous {
                continue;
            }
            let key = span
                .iter()
                .map(|t| t.text.to_lowercase())
                .collect::<Vec<_>>()
                .join(" ");
            if let Some(entry) = lex.lookup.get(&key) {
                matched = Some((n, entry));
                break;
            }
        }
        match matched {
            Some((n, entry)) => {
                let start = tokens[i].start;
                let end = tokens[i + n - 1].end;
                out.push(TokenMatch {
                    start,
                    end,
                    surface: &sentence[start..end],
                    entry,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Render a (possibly multi-token) replacement in the casing of the matched
/// surface: each replacement word mirrors the corresponding surface word.
pub(crate) fn apply_phrase_casing(surface: &str, replacement: &str) -> String {
    let surface_words: Vec<&str> = surface.split_whitespace().collect();
    let first = surface_words.first().copied().unwrap_or(surface);
    let last = surface_words.last().copied().unwrap_or(surface);
    replacement
        .split_whitespace()
        .enumerate()
        .map(|(i, w)| {
            let pattern = match surface_words.get(i) {
                Some(p) => *p,
                None if surface_words.len() > 1 => last,
                None => first,
            };
            if i > 0 && casing_class(pattern) != CasingClass::Upper && casing_class(first) == CasingClass::Title
                && (surface_words.len() == 1 || casing_class(pattern) == CasingClass::Lower)
            {
                w.to_lowercase()
            } else {
                apply_casing(pattern, w)
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A name retained from count statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub label: GenderLabel,
    /// Share of counts belonging to the dominant gender.
    pub dominance: f64,
    pub female_count: u64,
    pub male_count: u64,
}

/// Names whose counts are dominated by one gender.
#[derive(Debug, Clone, Default)]
pub struct NameLexicon {
    entries: Vec<NameEntry>,
    index: HashMap<String, usize>,
}

impl NameLexicon {
    pub fn from_entries(entries: Vec<NameEntry>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.to_lowercase(), i).is_some() {
                return Err(Error::invalid(format!("duplicate name `{}`", e.name)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[NameEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive name lookup.
    pub fn get(&self, name: &str) -> Option<&NameEntry> {
        self.index.get(&name.to_lowercase()).map(|&i| &self.entries[i])
    }

    pub fn with_label<'a>(&'a self, label: &'a GenderLabel) -> impl Iterator<Item = &'a NameEntry> + 'a {
        self.entries.iter().filter(move |e| &e.label == label)
    }

    /// Distinct labels present, sorted.
    pub fn labels(&self) -> Vec<GenderLabel> {
        let mut labels: Vec<GenderLabel> = self.entries.iter().map(|e| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Entries whose first letter falls in `split`.
    pub fn restricted_to(&self, split: &NameSplit) -> NameLexicon {
        let entries: Vec<NameEntry> = self
            .entries
            .iter()
            .filter(|e| split.contains(&e.name))
            .cloned()
            .collect();
        NameLexicon::from_entries(entries).expect("subset of a unique list is unique")
    }
}

pub fn bundled_pair_lexicon() -> PairLexicon {
    load_pair_lexicon(BUNDLED_PAIRS.as_bytes()).expect("bundled pair list parses")
}

pub fn bundled_name_lexicon() -> NameLexicon {
    load_name_lexicon(BUNDLED_NAME_COUNTS.as_bytes(), DEFAULT_NAME_THRESHOLD).expect("bundled names parse")
}

/// Read `name<TAB>female_count<TAB>male_count` rows and keep names whose
/// dominant-gender share strictly exceeds `threshold`.
pub fn load_name_lexicon<R: BufRead>(source: R, threshold: f64) -> Result<NameLexicon> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "name threshold must lie in (0.5, 1], got {threshold}"
        )));
    }
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(Error::parse(line_no, "expected `name<TAB>female_count<TAB>male_count`"));
        }
        let count = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(line_no, format!("malformed count `{s}`")))
        };
        let female = count(fields[1])?;
        let male = count(fields[2])?;
        if let Some(prev) = seen.insert(fields[0].to_lowercase(), line_no) {
            return Err(Error::parse(
                line_no,
                format!("name `{}` already listed on line {prev}", fields[0]),
            ));
        }
        if let Some(entry) = dominant_entry(fields[0], female, male, threshold) {
            entries.push(entry);
        }
    }
    NameLexicon::from_entries(entries)
}

fn dominant_entry(name: &str, female: u64, male: u64, threshold: f64) -> Option<NameEntry> {
    let total = female + male;
    if total == 0 {
        return None;
    }
    let (label, top) = if female > male {
        (GenderLabel::female(), female)
    } else if male > female {
        (GenderLabel::male(), male)
    } else {
        return None;
    };
    let dominance = top as f64 / total as f64;
    (dominance > threshold).then(|| NameEntry {
        name: name.to_string(),
        label,
        dominance,
        female_count: female,
        male_count: male,
    })
}

/// Inclusive first-letter ranges, e.g. `A-M` or `N-Z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameSplit {
    ranges: Vec<(char, char)>,
}

impl NameSplit {
    pub fn all() -> Self {
        NameSplit { ranges: Vec::new() }
    }

    pub fn new(ranges: Vec<(char, char)>) -> Result<Self> {
        for &(lo, hi) in &ranges {
            if !lo.is_alphabetic() || !hi.is_alphabetic() || lo > hi {
                return Err(Error::invalid(format!("bad letter range {lo}-{hi}")));
            }
        }
        Ok(NameSplit { ranges })
    }

    /// Parse `all`, `A-M`, `N-Z`, or a comma list such as `A-C,X-Z`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        let mut ranges = Vec::new();
        for part in spec.split(',') {
            let part = part.trim();
            let chars: Vec<char> = part.chars().collect();
            let range = match chars.as_slice() {
                [c] => (c.to_ascii_uppercase(), c.to_ascii_uppercase()),
                [lo, '-', hi] => (lo.to_ascii_uppercase(), hi.to_ascii_uppercase()),
                _ => return Err(Error::invalid(format!("bad name split `{part}`"))),
            };
            ranges.push(range);
        }
        Self::new(ranges)
    }

    pub fn is_all(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        if self.ranges.is_empty() {
            return true;
        }
        let Some(first) = name.chars().next() else {
            return false;
        };
        let first = first.to_uppercase().next().unwrap_or(first);
        self.ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&first))
    }

    /// True when `splits` cover A-Z exactly once between them.
    pub fn partitions_alphabet(splits: &[NameSplit]) -> bool {
        ('A'..='Z').all(|c| {
            let s = c.to_string();
            splits.iter().filter(|sp| !sp.is_all() && sp.contains(&s)).count() == 1
        })
    }
}

impl fmt::Display for NameSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ranges.is_empty() {
            return f.write_str("all");
        }
        let parts: Vec<String> = self
            .ranges
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") })
            .collect();
        f.write_str(&parts.join(","))
    }
}
