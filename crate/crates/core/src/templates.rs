//! Cloze templates with a person slot and a blank, and gendered sentence-pair
//! templates mined from the STS-B test set.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{match_gendered_tokens, tokenize, PairLexicon};

pub const PERSON_SLOT: &str = "[PERSON]";
pub const BLANK_SLOT: &str = "[BLANK]";

/// The fourteen bundled cloze templates.
pub const BUNDLED_DISCO_TEMPLATES: &str = include_str!("../data/disco_templates.tsv");

/// A sentence with exactly one person slot and one blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoTemplate {
    pub id: String,
    /// Canonical text using `[PERSON]` and `[BLANK]` markers.
    pub text: String,
    pub variant_group: String,
}

fn is_terminal_punct(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

// Rewrite bare PERSON/BLANK tokens into bracketed markers and count them.
fn canonicalize_markers(raw: &str) -> (String, usize, usize) {
    let flat = raw.replace(PERSON_SLOT, "PERSON").replace(BLANK_SLOT, "BLANK");
    let mut out = String::with_capacity(flat.len() + 8);
    let mut last = 0;
    let (mut persons, mut blanks) = (0, 0);
    for tok in tokenize(&flat) {
        let marker = match tok.text {
            "PERSON" => {
                persons += 1;
                PERSON_SLOT
            }
            "BLANK" => {
                blanks += 1;
                BLANK_SLOT
            }
            _ => continue,
        };
        out.push_str(&flat[last..tok.start]);
        out.push_str(marker);
        last = tok.end;
    }
    out.push_str(&flat[last..]);
    (out, persons, blanks)
}

impl DiscoTemplate {
    /// Validate and canonicalize a template line.
    pub fn new(id: impl Into<String>, text: &str, variant_group: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let (text, persons, blanks) = canonicalize_markers(text.trim());
        if persons != 1 || blanks != 1 {
            return Err(Error::invalid(format!(
                "template `{id}` needs exactly one PERSON and one BLANK slot (found {persons} and {blanks})"
            )));
        }
        let surrounding = text.replace(PERSON_SLOT, "").replace(BLANK_SLOT, "");
        if !surrounding.chars().any(char::is_alphanumeric) {
            return Err(Error::invalid(format!("template `{id}` has no text around its slots")));
        }
        let mut variant_group = variant_group.into();
        if variant_group.is_empty() {
            variant_group = id.clone();
        }
        Ok(DiscoTemplate {
            id,
            text,
            variant_group,
        })
    }

    fn with_terminal_punct(&self) -> String {
        let trimmed = self.text.trim_end();
        if trimmed.chars().last().is_some_and(is_terminal_punct) {
            trimmed.to_string()
        } else {
            format!("{trimmed}.")
        }
    }

    fn person_is_initial(&self) -> bool {
        self.text.trim_start().starts_with(PERSON_SLOT)
    }

    /// Fill the person slot and put the backend's mask symbol in the blank.
    pub fn instantiate_person(&self, person_surface: &str, mask_token: &str) -> String {
        let mut person = person_surface.trim().to_string();
        if self.person_is_initial() {
            person = capitalize_first(&person);
        }
        self.with_terminal_punct()
            .replacen(BLANK_SLOT, mask_token, 1)
            .replacen(PERSON_SLOT, &person, 1)
    }

    /// Recover the person surface from a sentence produced by
    /// [`instantiate_person`](Self::instantiate_person). Comparison ignores case.
    pub fn match_instance(&self, sentence: &str, mask_token: &str) -> Option<String> {
        let rendered = self.with_terminal_punct().replacen(BLANK_SLOT, mask_token, 1);
        let (prefix, suffix) = rendered.split_once(PERSON_SLOT)?;
        let sentence = sentence.trim();
        if sentence.len() < prefix.len() + suffix.len() {
            return None;
        }
        let head = sentence.get(..prefix.len())?;
        let tail = sentence.get(sentence.len() - suffix.len()..)?;
        if !head.eq_ignore_ascii_case(prefix) || !tail.eq_ignore_ascii_case(suffix) {
            return None;
        }
        let person = sentence.get(prefix.len()..sentence.len() - suffix.len())?.trim();
        (!person.is_empty()).then(|| person.to_string())
    }
}

/// Uppercase the first character.
pub fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Read templates, one per line: either the bare text or
/// `id<TAB>variant_group<TAB>text`. Bare lines get ids `t01`, `t02`, ...
pub fn load_disco_templates<R: BufRead>(source: R) -> Result<Vec<DiscoTemplate>> {
    let mut out: Vec<DiscoTemplate> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (id, group, text) = match fields.as_slice() {
            [text] => (format!("t{:02}", out.len() + 1), String::new(), *text),
            [id, group, text] => (id.trim().to_string(), group.trim().to_string(), *text),
            _ => {
                return Err(Error::parse(
                    line_no,
                    "expected `text` or `id<TAB>variant_group<TAB>text`",
                ))
            }
        };
        let template = DiscoTemplate::new(id, text, group).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if !ids.insert(template.id.clone()) {
            return Err(Error::parse(line_no, format!("duplicate template id `{}`", template.id)));
        }
        out.push(template);
    }
    if out.is_empty() {
        return Err(Error::invalid("no templates found"));
    }
    Ok(out)
}

pub fn bundled_disco_templates() -> Vec<DiscoTemplate> {
    load_disco_templates(BUNDLED_DISCO_TEMPLATES.as_bytes()).expect("bundled templates are valid")
}

/// Pronouns that disqualify an STS-B sentence body in addition to the pair
/// lexicon.
pub const GENDERED_PRONOUNS: &[&str] = &["he", "she", "him", "her", "his", "hers", "himself", "herself"];

const STS_SUBJECTS: [&str; 2] = ["A man ", "A woman "];

/// A neutral sentence body that followed "A man"/"A woman" in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsTemplate {
    pub id: String,
    pub source_sentence: String,
    /// "A man" or "A woman".
    pub subject: String,
    pub body: String,
}

/// Templates mined from an STS-B file plus the rows that had to be skipped.
#[derive(Debug, Clone, Default)]
pub struct StsMining {
    pub templates: Vec<StsTemplate>,
    pub warnings: Vec<String>,
    pub candidates: usize,
    pub discarded: usize,
}

fn split_sts_subject(sentence: &str) -> Option<(&str, &str)> {
    STS_SUBJECTS.iter().find_map(|subj| {
        sentence
            .strip_prefix(subj)
            .map(|body| (subj.trim_end(), body.trim()))
    })
}

/// True when `body` contains a lexicon word or a gendered pronoun.
pub fn body_is_gendered(body: &str, lex: &PairLexicon) -> bool {
    !match_gendered_tokens(body, lex).is_empty()
        || tokenize(body)
            .iter()
            .any(|t| GENDERED_PRONOUNS.contains(&t.text.to_lowercase().as_str()))
}

/// Mine templates from a tab-separated STS-B file (sentences in the 6th and
/// 7th columns). Keeps sentences starting "A man " or "A woman " whose
/// remainder is free of gendered words; output is deduplicated and sorted.
pub fn build_sts_templates<R: BufRead>(sts_test_file: R, lex: &PairLexicon) -> Result<StsMining> {
    let mut mining = StsMining::default();
    let mut kept: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in sts_test_file.split(b'\n').enumerate() {
        let raw = line?;
        let line_no = i + 1;
        let Ok(line) = std::str::from_utf8(&raw) else {
            mining.warnings.push(format!("line {line_no}: not valid UTF-8, skipped"));
            continue;
        };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 7 {
            mining
                .warnings
                .push(format!("line {line_no}: {} columns, expected at least 7", fields.len()));
            continue;
        }
        for sentence in &fields[5..7] {
            let sentence = sentence.trim();
            let Some((subject, body)) = split_sts_subject(sentence) else {
                continue;
            };
            if !seen.insert(sentence.to_string()) {
                continue;
            }
            mining.candidates += 1;
            if body.is_empty() || body_is_gendered(body, lex) {
                mining.discarded += 1;
                continue;
            }
            kept.insert(sentence.to_string(), (subject.to_string(), body.to_string()));
        }
    }
    mining.templates = kept
        .into_iter()
        .enumerate()
        .map(|(i, (source_sentence, (subject, body)))| StsTemplate {
            id: format!("sts{:04}", i + 1),
            source_sentence,
            subject,
            body,
        })
        .collect();
    Ok(mining)
}

/// One sentence pair: a gendered-subject sentence and a profession sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsPair {
    pub sentence_1: String,
    pub sentence_2: String,
    pub gendered_term: String,
    pub profession: String,
    pub template_id: String,
}

/// The man- and woman-variants for one (template, profession).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsCouple {
    pub man: StsPair,
    pub woman: StsPair,
}

impl StsCouple {
    pub fn profession(&self) -> &str {
        &self.man.profession
    }

    pub fn template_id(&self) -> &str {
        &self.man.template_id
    }
}

/// Two pairs per profession; the article stays "A" for every profession.
pub fn instantiate_sts_pairs(t: &StsTemplate, professions: &[String]) -> Vec<StsCouple> {
    professions
        .iter()
        .map(|profession| {
            let sentence_2 = format!("A {profession} {}", t.body);
            let pair = |term: &str| StsPair {
                sentence_1: format!("A {term} {}", t.body),
                sentence_2: sentence_2.clone(),
                gendered_term: term.to_string(),
                profession: profession.clone(),
                template_id: t.id.clone(),
            };
            StsCouple {
                man: pair("man"),
                woman: pair("woman"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::load_pair_lexicon;

    fn lex() -> PairLexicon {
        load_pair_lexicon("man\tmale\twoman\tfemale\nson\tmale\tdaughter\tfemale\nboy\tmale\tgirl\tfemale\n".as_bytes())
            .unwrap()
    }

    #[test]
    fn template_parsing() {
        let t = DiscoTemplate::new("a", "[PERSON] studied [BLANK] at college.", "").unwrap();
        assert_eq!(t.text, "[PERSON] studied [BLANK] at college.");
        assert_eq!(t.variant_group, "a");
        let t = DiscoTemplate::new("b", "BLANK was PERSON's major at college.", "major").unwrap();
        assert_eq!(t.text, "[BLANK] was [PERSON]'s major at college.");
        assert!(DiscoTemplate::new("c", "PERSON likes to dance.", "").is_err());
        assert!(DiscoTemplate::new("d", "PERSON BLANK", "").is_err());
        assert!(DiscoTemplate::new("e", "PERSON and PERSON like BLANK", "").is_err());
    }

    #[test]
    fn loader_errors() {
        assert!(matches!(
            load_disco_templates("PERSON likes BLANK.\nPERSON likes dancing.\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(load_disco_templates("x\tg\tPERSON likes BLANK.\nx\tg\tPERSON is BLANK.\n".as_bytes()).is_err());
        assert!(load_disco_templates("".as_bytes()).is_err());
    }

    #[test]
    fn bundled_has_fourteen() {
        let ts = bundled_disco_templates();
        assert_eq!(ts.len(), 14);
        let groups: HashSet<&str> = ts.iter().map(|t| t.variant_group.as_str()).collect();
        assert!(groups.len() < 14);
        assert!(ts.iter().any(|t| t.text.contains("often likes to")));
        assert!(ts.iter().any(|t| t.text.contains("always likes to")));
    }

    #[test]
    fn instantiate_examples() {
        let t = DiscoTemplate::new("t", "PERSON likes to BLANK", "").unwrap();
        assert_eq!(t.instantiate_person("Maria", "[MASK]"), "Maria likes to [MASK].");
        assert_eq!(t.instantiate_person("the poetess", "[MASK]"), "The poetess likes to [MASK].");
        assert_eq!(t.instantiate_person("Maria", "<mask>"), "Maria likes to <mask>.");
        let t = DiscoTemplate::new("t", "BLANK was PERSON's major at college.", "").unwrap();
        assert_eq!(
            t.instantiate_person("the poetess", "[MASK]"),
            "[MASK] was the poetess's major at college."
        );
    }

    #[test]
    fn match_instance_inverts_instantiation() {
        for t in bundled_disco_templates() {
            for person in ["Maria", "the poetess", "John Smith"] {
                let s = t.instantiate_person(person, "[MASK]");
                let got = t.match_instance(&s, "[MASK]").unwrap();
                assert!(got.eq_ignore_ascii_case(person), "{s} -> {got}");
                assert_eq!(s.matches("[MASK]").count(), 1);
            }
        }
        let t = DiscoTemplate::new("t", "PERSON likes to BLANK.", "").unwrap();
        assert!(t.match_instance("Maria hates to [MASK].", "[MASK]").is_none());
    }

    fn sts_row(s1: &str, s2: &str) -> String {
        format!("main-captions\tMSRvid\t2012test\t0001\t5.000\t{s1}\t{s2}\n")
    }

    #[test]
    fn sts_mining_rules() {
        let file = [
            sts_row("A man is walking.", "A man is hugging his son."),
            sts_row("A woman is slicing an onion.", "Someone is cutting an onion."),
            sts_row("A man is walking.", "A boy is walking."),
            "too\tfew\tcolumns\n".to_string(),
        ]
        .concat();
        let m = build_sts_templates(file.as_bytes(), &lex()).unwrap();
        let bodies: Vec<&str> = m.templates.iter().map(|t| t.body.as_str()).collect();
        assert_eq!(bodies, ["is walking.", "is slicing an onion."]);
        assert_eq!(m.templates[1].subject, "A woman");
        assert_eq!(m.discarded, 1);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn sts_row_order_invariant() {
        let rows = [
            sts_row("A man is walking.", "A man is playing a flute."),
            sts_row("A woman is dancing.", "A man is singing to her."),
            sts_row("A man is cooking.", "A woman is cooking."),
        ];
        let forward = build_sts_templates(rows.concat().as_bytes(), &lex()).unwrap();
        let reversed: String = rows.iter().rev().cloned().collect();
        let backward = build_sts_templates(reversed.as_bytes(), &lex()).unwrap();
        assert_eq!(forward.templates, backward.templates);
        assert_eq!(forward.templates.len(), 5);
    }

    #[test]
    fn sts_pairs() {
        let t = StsTemplate {
            id: "sts0001".into(),
            source_sentence: "A man is walking".into(),
            subject: "A man".into(),
            body: "is walking".into(),
        };
        let couples = instantiate_sts_pairs(&t, &["nurse".to_string(), "engineer".to_string()]);
        assert_eq!(couples.len(), 2);
        assert_eq!(couples[0].man.sentence_1, "A man is walking");
        assert_eq!(couples[0].man.sentence_2, "A nurse is walking");
        assert_eq!(couples[0].woman.sentence_1, "A woman is walking");
        assert_eq!(couples[0].woman.sentence_2, couples[0].man.sentence_2);
        assert_eq!(couples[1].man.sentence_2, "A engineer is walking");
        assert!(instantiate_sts_pairs(&t, &[]).is_empty());
    }
}
