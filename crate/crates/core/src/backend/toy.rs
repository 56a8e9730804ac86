//! Deterministic fixture model used by tests and `toy-serve`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    canonical_text, char_span, Backend, ClassifyRequest, ClassifyResponse, CorefRequest, CorefScore, Fill,
    FillRequest, FillResponse, PairRequest, PairScore, DEFAULT_MASK_TOKEN,
};
use crate::error::{Error, Result};
use crate::templates::DiscoTemplate;

/// Ranked fills for the requests a rule matches. Unset fields match
/// anything; the most specific matching rule wins (sentence, then person,
/// then label, then template), earlier rules winning ties.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FillRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub fills: Vec<Fill>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRule {
    pub s1: String,
    pub s2: String,
    pub score: f64,
}

/// Coreference probability for a (profession, pronoun) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profession: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pronoun: Option<String>,
    pub p: f64,
}

/// Serializable description of a toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelSpec {
    pub model_id: String,
    pub seed: u64,
    pub mask_token: String,
    /// Templates used to recover (template id, person) from a fill request.
    pub templates: Vec<DiscoTemplate>,
    /// Person surface (case-insensitive) to label.
    pub persons: BTreeMap<String, String>,
    pub fill_rules: Vec<FillRule>,
    pub default_fills: Vec<Fill>,
    pub max_pair_score: f64,
    pub pair_rules: Vec<PairRule>,
    pub coref_rules: Vec<CorefRule>,
    pub default_coref: f64,
    pub classify_labels: Vec<String>,
    pub classify_rules: BTreeMap<String, String>,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            model_id: "toy".into(),
            seed: 0,
            mask_token: DEFAULT_MASK_TOKEN.into(),
            templates: crate::templates::bundled_disco_templates(),
            persons: BTreeMap::new(),
            fill_rules: Vec::new(),
            default_fills: Vec::new(),
            max_pair_score: 5.0,
            pair_rules: Vec::new(),
            coref_rules: Vec::new(),
            default_coref: 0.5,
            classify_labels: vec!["negative".into(), "positive".into()],
            classify_rules: BTreeMap::new(),
        }
    }
}

impl ToyModelSpec {
    /// Gender-blind model over the bundled templates: every person gets the
    /// same fills, so DisCo is 0.
    pub fn builtin() -> Self {
        let words = ["music", "art", "math", "history", "science", "sports", "reading", "travel", "cooking", "law"];
        ToyModelSpec {
            model_id: "toy-builtin".into(),
            default_fills: words
                .iter()
                .enumerate()
                .map(|(i, w)| Fill {
                    token: w.to_string(),
                    score: 1.0 - 0.05 * i as f64,
                })
                .collect(),
            ..Default::default()
        }
    }
}

/// A backend whose every answer is a pure function of its spec.
#[derive(Debug, Clone)]
pub struct ToyModel {
    spec: ToyModelSpec,
    persons: BTreeMap<String, String>,
    pair_rules: BTreeMap<(String, String), f64>,
}

impl ToyModel {
    pub fn new(spec: ToyModelSpec) -> Result<Self> {
        for rule in &spec.fill_rules {
            check_fills(&rule.fills)?;
        }
        check_fills(&spec.default_fills)?;
        if !(0.0..=1.0).contains(&spec.default_coref) || spec.coref_rules.iter().any(|r| !(0.0..=1.0).contains(&r.p)) {
            return Err(Error::invalid("toy coref probabilities must lie in [0, 1]"));
        }
        let persons = spec
            .persons
            .iter()
            .map(|(k, v)| (canonical_text(k).to_lowercase(), v.to_lowercase()))
            .collect();
        let pair_rules = spec
            .pair_rules
            .iter()
            .map(|r| ((canonical_text(&r.s1), canonical_text(&r.s2)), r.score))
            .collect();
        Ok(ToyModel {
            spec,
            persons,
            pair_rules,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("spec serializes")
    }

    fn identify(&self, text: &str, mask: &str) -> (Option<&str>, Option<String>) {
        for t in &self.spec.templates {
            if let Some(person) = t.match_instance(text, mask) {
                return (Some(t.id.as_str()), Some(person.to_lowercase()));
            }
        }
        (None, None)
    }

    fn select_rule(&self, text: &str, template: Option<&str>, person: Option<&str>) -> Option<&FillRule> {
        let label = person.and_then(|p| self.persons.get(p)).map(String::as_str);
        let mut best: Option<(u8, &FillRule)> = None;
        for rule in &self.spec.fill_rules {
            let mut score = 0u8;
            if let Some(s) = &rule.sentence {
                if canonical_text(s) != text {
                    continue;
                }
                score += 8;
            }
            if let Some(p) = &rule.person {
                if Some(canonical_text(p).to_lowercase().as_str()) != person {
                    continue;
                }
                score += 4;
            }
            if let Some(l) = &rule.label {
                if Some(l.to_lowercase().as_str()) != label {
                    continue;
                }
                score += 2;
            }
            if let Some(t) = &rule.template {
                if Some(t.as_str()) != template {
                    continue;
                }
                score += 1;
            }
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, rule));
            }
        }
        best.map(|(_, r)| r)
    }

    fn hash_unit(&self, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.spec.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn check_fills(fills: &[Fill]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for f in fills {
        if !f.score.is_finite() || !seen.insert(f.token.as_str()) {
            return Err(Error::invalid(format!("toy fill list has a bad or duplicate entry `{}`", f.token)));
        }
    }
    Ok(())
}

fn sorted(fills: &[Fill]) -> Vec<Fill> {
    let mut v = fills.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
    v
}

impl Backend for ToyModel {
    fn model_id(&self) -> String {
        self.spec.model_id.clone()
    }

    fn capabilities(&self) -> Vec<String> {
        vec![
            "fill".into(),
            "pair_score".into(),
            "coref".into(),
            "classify".into(),
            "batch".into(),
        ]
    }

    fn fill(&self, req: &FillRequest) -> Result<FillResponse> {
        let masks = super::mask_count(&req.text, &req.mask_token);
        if masks != 1 {
            return Err(Error::Protocol(format!("expected exactly one mask token, found {masks}")));
        }
        if req.k == 0 {
            return Err(Error::Protocol("k must be positive".into()));
        }
        let text = canonical_text(&req.text);
        let (template, person) = self.identify(&text, &req.mask_token);
        let mut fills = match self.select_rule(&text, template, person.as_deref()) {
            Some(rule) => sorted(&rule.fills),
            None => Vec::new(),
        };
        // pad from the defaults so at least k whole words come back
        if fills.len() < req.k {
            for f in sorted(&self.spec.default_fills) {
                if fills.len() >= req.k {
                    break;
                }
                if fills.iter().all(|g| g.token != f.token) {
                    // padding always ranks strictly below what is already there
                    let score = match fills.last() {
                        Some(l) if f.score >= l.score => l.score - 1e-6,
                        _ => f.score,
                    };
                    fills.push(Fill { token: f.token, score });
                }
            }
        }
        if fills.len() < req.k {
            return Err(Error::Protocol(format!(
                "toy model has only {} fills for `{text}`, {} requested",
                fills.len(),
                req.k
            )));
        }
        Ok(FillResponse {
            fills: sorted(&fills),
            model_id: self.spec.model_id.clone(),
        })
    }

    fn pair_score(&self, req: &PairRequest) -> Result<PairScore> {
        let s1 = canonical_text(&req.s1);
        let s2 = canonical_text(&req.s2);
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::Protocol("empty sentence".into()));
        }
        if let Some(&score) = self.pair_rules.get(&(s1.clone(), s2.clone())) {
            return Ok(PairScore { score });
        }
        if s1 == s2 {
            return Ok(PairScore {
                score: self.spec.max_pair_score,
            });
        }
        Ok(PairScore {
            score: self.hash_unit(&["pair", &s1, &s2]) * self.spec.max_pair_score,
        })
    }

    fn coref(&self, req: &CorefRequest) -> Result<CorefScore> {
        let c = super::canonical_coref(req)?;
        let pronoun = char_span(&c.text, c.pronoun).to_lowercase();
        let antecedent = char_span(&c.text, c.antecedent).to_lowercase();
        let mut best: Option<(u8, f64)> = None;
        for rule in &self.spec.coref_rules {
            let mut score = 0u8;
            if let Some(p) = &rule.profession {
                let p = p.to_lowercase();
                if antecedent != p && !antecedent.ends_with(&format!(" {p}")) {
                    continue;
                }
                score += 2;
            }
            if let Some(pr) = &rule.pronoun {
                if pronoun != pr.to_lowercase() {
                    continue;
                }
                score += 1;
            }
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, rule.p));
            }
        }
        Ok(CorefScore {
            p: best.map_or(self.spec.default_coref, |(_, p)| p),
        })
    }

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        let text = canonical_text(&req.text);
        let labels = &self.spec.classify_labels;
        if labels.is_empty() {
            return Err(Error::Protocol("toy model has no classification labels".into()));
        }
        let chosen = self.spec.classify_rules.get(&text).cloned();
        let label_scores = labels
            .iter()
            .map(|l| {
                let s = match &chosen {
                    Some(c) if c == l => 1.0,
                    Some(_) => 0.0,
                    None => 1.0 / labels.len() as f64,
                };
                (l.clone(), s)
            })
            .collect();
        Ok(ClassifyResponse { label_scores })
    }
}
