//! Counterfactual data augmentation: gendered term swaps and name
//! replacement.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexicon::{
    apply_casing, apply_phrase_casing, match_gendered_tokens, tokenize, GenderLabel, NameLexicon, NameSplit,
    PairLexicon,
};
use crate::parallel::par_map;

/// Records handled per parallel chunk while streaming.
const CHUNK: usize = 2048;

/// Replace every matched gendered token with its partner, all at once.
/// Returns `None` when nothing matched.
pub fn counterfactual_sentence(s: &str, lex: &PairLexicon) -> Option<String> {
    counterfactual_with_pairs(s, lex).map(|(text, _)| text)
}

/// Like [`counterfactual_sentence`], also reporting the pair index of each
/// substitution.
pub fn counterfactual_with_pairs(s: &str, lex: &PairLexicon) -> Option<(String, Vec<usize>)> {
    let matches = match_gendered_tokens(s, lex);
    if matches.is_empty() {
        return None;
    }
    let mut out = String::with_capacity(s.len() + 8);
    let mut pairs = Vec::with_capacity(matches.len());
    let mut last = 0;
    for m in &matches {
        out.push_str(&s[last..m.start]);
        out.push_str(&apply_phrase_casing(m.surface, &m.entry.partner));
        pairs.push(m.entry.pair_index);
        last = m.end;
    }
    out.push_str(&s[last..]);
    Some((out, pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdaMode {
    /// Counterfactuals of matching sentences only.
    OneSided,
    /// Every original, each matching one followed by its counterfactual.
    TwoSided,
}

impl CdaMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "one" | "one_sided" | "1" => Ok(CdaMode::OneSided),
            "two" | "two_sided" | "2" => Ok(CdaMode::TwoSided),
            other => Err(Error::invalid(format!("unknown CDA mode `{other}` (one|two)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaConfig {
    pub mode: CdaMode,
    pub seed: u64,
    /// One-sided only: share of matching sentences emitted in their original
    /// form instead of the counterfactual. Not part of plain CDA.
    pub mix_ratio: Option<f64>,
}

impl CdaConfig {
    pub fn new(mode: CdaMode, seed: u64) -> Self {
        CdaConfig {
            mode,
            seed,
            mix_ratio: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdaStats {
    pub sentences_read: u64,
    pub sentences_with_matches: u64,
    /// Substitution counts keyed by `word_a/word_b`.
    pub substitutions_per_pair: BTreeMap<String, u64>,
    pub output_sentences: u64,
    /// Matching sentences emitted unmodified because of the mix ratio.
    #[serde(default)]
    pub originals_mixed_in: u64,
}

impl CdaStats {
    /// Check the output count against the mode definition.
    pub fn check(&self, mode: CdaMode) -> Result<()> {
        let expected = match mode {
            CdaMode::OneSided => self.sentences_with_matches,
            CdaMode::TwoSided => self.sentences_read + self.sentences_with_matches,
        };
        if self.output_sentences != expected {
            return Err(Error::Invariant(format!(
                "{mode:?}: emitted {} sentences, expected {expected}",
                self.output_sentences
            )));
        }
        Ok(())
    }

    pub fn total_substitutions(&self) -> u64 {
        self.substitutions_per_pair.values().sum()
    }
}

/// One input or output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub id: Value,
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub counterfactual: bool,
}

impl CorpusRecord {
    pub fn plain(text: impl Into<String>) -> Self {
        CorpusRecord {
            id: Value::Null,
            text: text.into(),
            counterfactual: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One sentence per line.
    Text,
    /// JSON lines `{id, text}`.
    Jsonl,
}

/// Streaming reader over a corpus; errors name the record index.
pub fn read_corpus<R: BufRead>(source: R, format: CorpusFormat) -> impl Iterator<Item = Result<CorpusRecord>> {
    source.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::invalid(format!("record {i}: {e}")))),
        };
        match format {
            CorpusFormat::Text => Some(Ok(CorpusRecord::plain(line))),
            CorpusFormat::Jsonl if line.trim().is_empty() => None,
            CorpusFormat::Jsonl => Some(
                serde_json::from_str::<CorpusRecord>(&line)
                    .map_err(|e| Error::parse(i + 1, format!("corpus record: {e}"))),
            ),
        }
    })
}

pub fn write_record<W: Write>(out: &mut W, record: &CorpusRecord, format: CorpusFormat) -> Result<()> {
    match format {
        CorpusFormat::Text => writeln!(out, "{}", record.text)?,
        CorpusFormat::Jsonl => {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Approximate segmentation of raw text: splits at newlines and after
/// `.`, `!` or `?` followed by whitespace.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        for (n, &(i, c)) in chars.iter().enumerate() {
            if matches!(c, '.' | '!' | '?') && chars.get(n + 1).is_some_and(|(_, next)| next.is_whitespace()) {
                let piece = line[start..i + c.len_utf8()].trim();
                if !piece.is_empty() {
                    out.push(piece.to_string());
                }
                start = i + c.len_utf8();
            }
        }
        let piece = line[start..].trim();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
    }
    out
}

/// Generator for one sampling site, keyed on (seed, record, match).
fn site_rng(seed: u64, record: u64, site: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for v in [seed, record, site] {
        h.update(v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Apply `f` to records with bounded parallelism, emitting results in order.
fn stream_chunks<I, T, F, E>(records: I, workers: usize, f: F, mut emit: E) -> Result<()>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
    T: Send,
    F: Fn(u64, &CorpusRecord) -> Result<T> + Sync,
    E: FnMut(CorpusRecord, T) -> Result<()>,
{
    let mut iter = records.into_iter();
    let mut index = 0u64;
    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        for r in iter.by_ref().take(CHUNK) {
            chunk.push((index, r?));
            index += 1;
        }
        if chunk.is_empty() {
            return Ok(());
        }
        let done = par_map(&chunk, workers, |(i, rec)| f(*i, rec));
        for ((_, rec), result) in chunk.into_iter().zip(done) {
            emit(rec, result?)?;
        }
    }
}

/// Rewrite a corpus. Output records go to `sink` in input order.
pub fn rewrite_corpus<I, S>(records: I, lex: &PairLexicon, cfg: &CdaConfig, workers: usize, mut sink: S) -> Result<CdaStats>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
    S: FnMut(&CorpusRecord) -> Result<()>,
{
    if let Some(r) = cfg.mix_ratio {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("mix ratio {r} outside [0, 1]")));
        }
        if cfg.mode == CdaMode::TwoSided && r > 0.0 {
            return Err(Error::invalid("mix ratio applies to one-sided mode only"));
        }
    }
    let mut stats = CdaStats::default();
    let pair_names: Vec<String> = lex.pairs().iter().map(|p| format!("{}/{}", p.word_a, p.word_b)).collect();
    stream_chunks(
        records,
        workers,
        |i, rec| {
            let cf = counterfactual_with_pairs(&rec.text, lex);
            let keep_original = match (&cf, cfg.mix_ratio) {
                (Some(_), Some(r)) if r > 0.0 => site_rng(cfg.seed, i, u64::MAX).random_bool(r),
                _ => false,
            };
            Ok((cf, keep_original))
        },
        |rec, (cf, keep_original)| {
            stats.sentences_read += 1;
            let mut emit = |r: &CorpusRecord| {
                stats.output_sentences += 1;
                sink(r)
            };
            match cf {
                Some((text, pairs)) => {
                    stats.sentences_with_matches += 1;
                    for p in pairs {
                        *stats.substitutions_per_pair.entry(pair_names[p].clone()).or_default() += 1;
                    }
                    let counterfactual = CorpusRecord {
                        id: rec.id.clone(),
                        text,
                        counterfactual: true,
                    };
                    match cfg.mode {
                        CdaMode::TwoSided => {
                            emit(&rec)?;
                            emit(&counterfactual)?;
                        }
                        CdaMode::OneSided if keep_original => {
                            stats.originals_mixed_in += 1;
                            emit(&rec)?;
                        }
                        CdaMode::OneSided => emit(&counterfactual)?,
                    }
                }
                None if cfg.mode == CdaMode::TwoSided => emit(&rec)?,
                None => {}
            }
            Ok(())
        },
    )?;
    stats.check(cfg.mode)?;
    Ok(stats)
}

// ------------------------------------------------------------------ names

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    SameGender,
    FlipGender,
    RandomGender,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "same" | "same_gender" => Ok(PolicyKind::SameGender),
            "flip" | "flip_gender" => Ok(PolicyKind::FlipGender),
            "random" | "random_gender" => Ok(PolicyKind::RandomGender),
            other => Err(Error::invalid(format!("unknown name policy `{other}` (same|flip|random)"))),
        }
    }
}

/// How names are recognized and replaced.
#[derive(Debug, Clone)]
pub struct NamePolicy {
    pub kind: PolicyKind,
    /// Only names whose initial falls in this split are replaced.
    pub split: NameSplit,
    /// Names recognized in text and sampled as replacements.
    pub pool: NameLexicon,
    pub seed: u64,
}

/// One replaced name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameReplacement {
    pub original: String,
    pub original_label: GenderLabel,
    pub replacement: String,
    pub replacement_label: GenderLabel,
}

impl NamePolicy {
    pub fn new(kind: PolicyKind, split: NameSplit, pool: NameLexicon, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::invalid("name replacement pool is empty"));
        }
        let policy = NamePolicy { kind, split, pool, seed };
        for label in policy.pool.labels() {
            policy.target_labels(&label)?;
        }
        Ok(policy)
    }

    fn target_labels(&self, original: &GenderLabel) -> Result<Vec<GenderLabel>> {
        let labels = match self.kind {
            PolicyKind::SameGender => vec![original.clone()],
            PolicyKind::FlipGender => {
                let flipped = if original.is_female() {
                    GenderLabel::male()
                } else if original.is_male() {
                    GenderLabel::female()
                } else {
                    return Err(Error::invalid(format!("cannot flip non-binary label `{original}`")));
                };
                vec![flipped]
            }
            PolicyKind::RandomGender => self.pool.labels(),
        };
        for l in &labels {
            if self.pool.with_label(l).next().is_none() {
                return Err(Error::invalid(format!("replacement pool has no `{l}` names")));
            }
        }
        Ok(labels)
    }

    fn sample(&self, original: &str, label: &GenderLabel, record: u64, site: u64) -> Result<NameReplacement> {
        let mut rng = site_rng(self.seed, record, site);
        let labels = self.target_labels(label)?;
        let target = labels.choose(&mut rng).expect("target labels nonempty");
        let all: Vec<&str> = self.pool.with_label(target).map(|e| e.name.as_str()).collect();
        let others: Vec<&str> = all.iter().copied().filter(|n| !n.eq_ignore_ascii_case(original)).collect();
        let candidates = if others.is_empty() { &all } else { &others };
        let chosen = candidates.choose(&mut rng).expect("label pool nonempty");
        Ok(NameReplacement {
            original: original.to_string(),
            original_label: label.clone(),
            replacement: apply_casing(original, chosen),
            replacement_label: target.clone(),
        })
    }

    /// Does `token` name a person this policy rewrites? Only capitalized
    /// tokens count, so common words that double as names stay intact.
    pub fn recognizes(&self, token: &str) -> Option<&GenderLabel> {
        let first = token.chars().next()?;
        if !first.is_uppercase() || !self.split.contains(token) {
            return None;
        }
        self.pool.get(token).map(|e| &e.label)
    }
}

/// Replace every recognized name in `s`. `record` keys the sampling so that
/// a corpus rewrite is reproducible record by record.
pub fn name_intervention(s: &str, policy: &NamePolicy, record: u64) -> Result<(String, Vec<NameReplacement>)> {
    let mut out = String::with_capacity(s.len());
    let mut replacements = Vec::new();
    let mut last = 0;
    for tok in tokenize(s) {
        let Some(label) = policy.recognizes(tok.text) else {
            continue;
        };
        let r = policy.sample(tok.text, label, record, replacements.len() as u64)?;
        out.push_str(&s[last..tok.start]);
        out.push_str(&r.replacement);
        last = tok.end;
        replacements.push(r);
    }
    out.push_str(&s[last..]);
    Ok((out, replacements))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameStats {
    pub sentences_read: u64,
    pub sentences_changed: u64,
    pub replacements: u64,
    /// Counts keyed by `original_label->replacement_label`.
    pub label_transitions: BTreeMap<String, u64>,
}

/// Apply a name policy to every record, preserving order and count.
pub fn rewrite_names<I, S>(records: I, policy: &NamePolicy, workers: usize, mut sink: S) -> Result<NameStats>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
    S: FnMut(&CorpusRecord, &[NameReplacement]) -> Result<()>,
{
    let mut stats = NameStats::default();
    stream_chunks(
        records,
        workers,
        |i, rec| name_intervention(&rec.text, policy, i),
        |rec, (text, reps)| {
            stats.sentences_read += 1;
            if !reps.is_empty() {
                stats.sentences_changed += 1;
            }
            for r in &reps {
                stats.replacements += 1;
                *stats
                    .label_transitions
                    .entry(format!("{}->{}", r.original_label, r.replacement_label))
                    .or_default() += 1;
            }
            let out = CorpusRecord {
                id: rec.id,
                text,
                counterfactual: !reps.is_empty(),
            };
            sink(&out, &reps)
        },
    )?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{load_pair_lexicon, NameEntry};

    fn lex(rows: &str) -> PairLexicon {
        load_pair_lexicon(rows.as_bytes()).unwrap()
    }

    #[test]
    fn church_example() {
        let l = lex("man\tmale\twoman\tfemale\n");
        assert_eq!(
            counterfactual_sentence("the man who pioneered the church named it", &l).as_deref(),
            Some("the woman who pioneered the church named it")
        );
        assert_eq!(counterfactual_sentence("the sky is blue", &l), None);
    }

    #[test]
    fn first_pair_rule() {
        let l = lex("he\tmale\tshe\tfemale\nhis\tmale\ther\tfemale\nhim\tmale\ther\tfemale\n");
        assert_eq!(
            counterfactual_sentence("He told her brother.", &l).as_deref(),
            Some("She told his brother.")
        );
    }

    fn corpus(lines: &[&str]) -> Vec<Result<CorpusRecord>> {
        lines.iter().map(|l| Ok(CorpusRecord::plain(*l))).collect()
    }

    #[test]
    fn mode_counts() {
        let l = lex("man\tmale\twoman\tfemale\n");
        let input = ["a man", "the sky", "blue"];
        let mut out = Vec::new();
        let s = rewrite_corpus(corpus(&input), &l, &CdaConfig::new(CdaMode::TwoSided, 0), 2, |r| {
            out.push(r.text.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(out, ["a man", "a woman", "the sky", "blue"]);
        assert_eq!(s.output_sentences, 4);
        let s = rewrite_corpus(corpus(&input), &l, &CdaConfig::new(CdaMode::OneSided, 0), 2, |_| Ok(())).unwrap();
        assert_eq!(s.output_sentences, 1);
        assert_eq!(s.substitutions_per_pair["man/woman"], 1);
    }

    #[test]
    fn mix_ratio_keeps_counts() {
        let l = lex("man\tmale\twoman\tfemale\n");
        let input: Vec<&str> = std::iter::repeat_n("a man", 200).collect();
        let mut cfg = CdaConfig::new(CdaMode::OneSided, 3);
        cfg.mix_ratio = Some(0.5);
        let s = rewrite_corpus(corpus(&input), &l, &cfg, 2, |_| Ok(())).unwrap();
        assert_eq!(s.output_sentences, 200);
        assert!(s.originals_mixed_in > 60 && s.originals_mixed_in < 140);
        cfg.mode = CdaMode::TwoSided;
        assert!(rewrite_corpus(corpus(&input), &l, &cfg, 2, |_| Ok(())).is_err());
    }

    #[test]
    fn segmenter() {
        assert_eq!(
            segment_sentences("He left. She stayed!\nDone? yes"),
            ["He left.", "She stayed!", "Done?", "yes"]
        );
        assert_eq!(segment_sentences("3.5 apples"), ["3.5 apples"]);
    }

    fn pool() -> NameLexicon {
        let e = |n: &str, l: GenderLabel| NameEntry {
            name: n.into(),
            label: l,
            dominance: 0.99,
            female_count: 0,
            male_count: 0,
        };
        NameLexicon::from_entries(vec![
            e("Maria", GenderLabel::female()),
            e("Anna", GenderLabel::female()),
            e("Linda", GenderLabel::female()),
            e("John", GenderLabel::male()),
            e("David", GenderLabel::male()),
            e("Nancy", GenderLabel::female()),
        ])
        .unwrap()
    }

    #[test]
    fn policies() {
        let am = NameSplit::parse("A-M").unwrap();
        let p = pool().restricted_to(&am);
        let same = NamePolicy::new(PolicyKind::SameGender, am.clone(), p.clone(), 11).unwrap();
        let (text, reps) = name_intervention("Maria studied art", &same, 0).unwrap();
        assert_eq!(reps.len(), 1);
        assert!(reps[0].replacement_label.is_female());
        assert_ne!(reps[0].replacement, "Maria");
        assert!(text.ends_with(" studied art"));
        assert_eq!(name_intervention("Maria studied art", &same, 0).unwrap().0, text);

        let flip = NamePolicy::new(PolicyKind::FlipGender, am.clone(), p, 11).unwrap();
        let (_, reps) = name_intervention("Maria studied art", &flip, 0).unwrap();
        assert!(reps[0].replacement_label.is_male());

        let (text, reps) = name_intervention("Nancy studied art", &same, 0).unwrap();
        assert_eq!(text, "Nancy studied art");
        assert!(reps.is_empty());
    }

    #[test]
    fn casing_of_names() {
        let all = NameSplit::all();
        let p = NamePolicy::new(PolicyKind::SameGender, all, pool(), 1).unwrap();
        let (text, _) = name_intervention("MARIA and maria", &p, 0).unwrap();
        assert!(text.chars().take(4).all(|c| c.is_uppercase()), "{text}");
        assert!(text.ends_with("and maria"));
    }
}
