use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    canonical_coref, canonical_text, Backend, ClassifyRequest, ClassifyResponse, CorefRequest, CorefScore,
    FillRequest, FillResponse, PairRequest, PairScore,
};
use crate::error::{Error, Result};

/// One line of an offline predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRecord {
    pub kind: String,
    pub key: Value,
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

pub(crate) fn fill_key(text: &str, mask_token: &str) -> String {
    json!({ "text": canonical_text(text), "mask_token": mask_token }).to_string()
}

pub(crate) fn pair_key(s1: &str, s2: &str) -> String {
    json!({ "s1": canonical_text(s1), "s2": canonical_text(s2) }).to_string()
}

/// Key for an already canonicalized coreference request.
pub(crate) fn coref_key(req: &CorefRequest) -> String {
    json!({ "text": req.text, "pronoun": req.pronoun, "antecedent": req.antecedent }).to_string()
}

pub(crate) fn classify_key(text: &str) -> String {
    json!({ "text": canonical_text(text) }).to_string()
}

#[derive(Deserialize)]
struct FillKey {
    text: String,
    #[serde(default = "default_mask")]
    mask_token: String,
}

fn default_mask() -> String {
    super::DEFAULT_MASK_TOKEN.to_string()
}

/// Backend answering only the requests recorded in a predictions file.
#[derive(Debug, Clone, Default)]
pub struct OfflineBackend {
    model_id: String,
    pub(super) fills: HashMap<String, FillResponse>,
    pub(super) pairs: HashMap<String, PairScore>,
    pub(super) corefs: HashMap<String, CorefScore>,
    pub(super) classes: HashMap<String, ClassifyResponse>,
}

fn insert_unique<V: PartialEq>(map: &mut HashMap<String, V>, key: String, value: V, line: usize) -> Result<()> {
    match map.get(&key) {
        Some(existing) if *existing != value => Err(Error::parse(
            line,
            format!("conflicting duplicate prediction for {key}"),
        )),
        Some(_) => Ok(()),
        None => {
            map.insert(key, value);
            Ok(())
        }
    }
}

impl OfflineBackend {
    pub fn len(&self) -> usize {
        self.fills.len() + self.pairs.len() + self.corefs.len() + self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Add one record; `line` is used in error messages.
    pub fn insert(&mut self, record: &OfflineRecord, line: usize) -> Result<()> {
        let bad = |what: &str, e: serde_json::Error| Error::parse(line, format!("{what}: {e}"));
        match record.kind.as_str() {
            "fill" => {
                let key: FillKey = serde_json::from_value(record.key.clone()).map_err(|e| bad("fill key", e))?;
                let mut value: FillResponse = match serde_json::from_value(record.value.clone()) {
                    Ok(v) => v,
                    Err(_) => {
                        #[derive(Deserialize)]
                        struct Bare {
                            fills: Vec<super::Fill>,
                        }
                        let bare: Bare =
                            serde_json::from_value(record.value.clone()).map_err(|e| bad("fill value", e))?;
                        FillResponse {
                            fills: bare.fills,
                            model_id: String::new(),
                        }
                    }
                };
                if value.model_id.is_empty() {
                    value.model_id = record.model_id.clone().unwrap_or_else(|| self.model_id.clone());
                }
                if self.model_id.is_empty() || self.model_id == "offline" {
                    self.model_id = value.model_id.clone();
                }
                insert_unique(&mut self.fills, fill_key(&key.text, &key.mask_token), value, line)
            }
            "pair" | "pair_score" => {
                let key: PairRequest = serde_json::from_value(record.key.clone()).map_err(|e| bad("pair key", e))?;
                let value: PairScore =
                    serde_json::from_value(record.value.clone()).map_err(|e| bad("pair value", e))?;
                insert_unique(&mut self.pairs, pair_key(&key.s1, &key.s2), value, line)
            }
            "coref" => {
                let key: CorefRequest =
                    serde_json::from_value(record.key.clone()).map_err(|e| bad("coref key", e))?;
                let value: CorefScore =
                    serde_json::from_value(record.value.clone()).map_err(|e| bad("coref value", e))?;
                let canonical = canonical_coref(&key).map_err(|e| Error::parse(line, e.to_string()))?;
                insert_unique(&mut self.corefs, coref_key(&canonical), value, line)
            }
            "classify" => {
                let key: ClassifyRequest =
                    serde_json::from_value(record.key.clone()).map_err(|e| bad("classify key", e))?;
                let value: ClassifyResponse =
                    serde_json::from_value(record.value.clone()).map_err(|e| bad("classify value", e))?;
                insert_unique(&mut self.classes, classify_key(&key.text), value, line)
            }
            other => Err(Error::parse(line, format!("unknown record kind `{other}`"))),
        }
    }
}

/// Parse a JSON-lines predictions file. Duplicate keys must carry identical
/// payloads.
pub fn load_offline_predictions<R: BufRead>(source: R) -> Result<OfflineBackend> {
    let mut backend = OfflineBackend {
        model_id: "offline".into(),
        ..Default::default()
    };
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: OfflineRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(line_no, format!("schema violation: {e}")))?;
        if let Some(id) = &record.model_id {
            if backend.model_id == "offline" {
                backend.model_id = id.clone();
            }
        }
        backend.insert(&record, line_no)?;
    }
    Ok(backend)
}

/// Append one record in the offline format.
pub fn write_record<W: Write>(out: &mut W, record: &OfflineRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn missing(kind: &str, key: String) -> Error {
    Error::PredictionMissing {
        kind: kind.into(),
        key,
    }
}

impl Backend for OfflineBackend {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn capabilities(&self) -> Vec<String> {
        let mut caps = Vec::new();
        for (name, present) in [
            ("fill", !self.fills.is_empty()),
            ("pair_score", !self.pairs.is_empty()),
            ("coref", !self.corefs.is_empty()),
            ("classify", !self.classes.is_empty()),
        ] {
            if present {
                caps.push(name.to_string());
            }
        }
        caps
    }

    fn fill(&self, req: &FillRequest) -> Result<FillResponse> {
        let key = fill_key(&req.text, &req.mask_token);
        self.fills.get(&key).cloned().ok_or_else(|| missing("fill", key))
    }

    fn pair_score(&self, req: &PairRequest) -> Result<PairScore> {
        let key = pair_key(&req.s1, &req.s2);
        self.pairs.get(&key).copied().ok_or_else(|| missing("pair", key))
    }

    fn coref(&self, req: &CorefRequest) -> Result<CorefScore> {
        let key = coref_key(&canonical_coref(req)?);
        self.corefs.get(&key).copied().ok_or_else(|| missing("coref", key))
    }

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        let key = classify_key(&req.text);
        self.classes.get(&key).cloned().ok_or_else(|| missing("classify", key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_FILL: &str = r#"{"kind":"fill","key":{"text":"Maria studied [MASK] at college.","mask_token":"[MASK]","k":3},"value":{"fills":[{"token":"art","score":0.5},{"token":"music","score":0.3},{"token":"law","score":0.1}],"model_id":"rec"}}"#;

    #[test]
    fn one_fill_record() {
        let b = load_offline_predictions(ONE_FILL.as_bytes()).unwrap();
        assert_eq!(b.model_id(), "rec");
        let r = b
            .fill(&FillRequest {
                text: "Maria  studied [MASK] at college.".into(),
                mask_token: "[MASK]".into(),
                k: 3,
            })
            .unwrap();
        assert_eq!(r.tokens().collect::<Vec<_>>(), ["art", "music", "law"]);
    }

    #[test]
    fn duplicate_conflict_rejected() {
        let other = ONE_FILL.replace("\"art\"", "\"dance\"");
        let same = format!("{ONE_FILL}\n{ONE_FILL}\n");
        assert!(load_offline_predictions(same.as_bytes()).is_ok());
        let conflict = format!("{ONE_FILL}\n{other}\n");
        let err = load_offline_predictions(conflict.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn schema_violation_names_line() {
        let text = format!("{ONE_FILL}\n{{\"kind\":\"pair\",\"key\":{{\"s1\":\"a\"}},\"value\":{{\"score\":1}}}}\n");
        assert!(matches!(
            load_offline_predictions(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_offline_predictions("not json\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn coref_miss_names_key() {
        let b = load_offline_predictions(ONE_FILL.as_bytes()).unwrap();
        let err = b
            .coref(&CorefRequest {
                text: "The nurse said she left".into(),
                pronoun: [15, 18],
                antecedent: [4, 9],
            })
            .unwrap_err();
        match err {
            Error::PredictionMissing { kind, key } => {
                assert_eq!(kind, "coref");
                assert!(key.contains("The nurse said she left"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
