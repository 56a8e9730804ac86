//! Uniform access to model predictions.
//!
//! A [`Backend`] answers four request kinds (masked fill, sentence-pair
//! score, coreference probability, classification). Three implementations
//! ship: [`ToyModel`] (deterministic fixtures), [`OfflineBackend`] (recorded
//! JSON-lines predictions) and [`RemoteBackend`] (the HTTP wire protocol).
//!
//! Metrics never talk to a backend directly; they go through a [`Scorer`],
//! which canonicalizes requests, validates responses, breaks score ties
//! deterministically and caches every answer so repeated requests within a
//! run are identical.

mod offline;
mod remote;
mod scorer;
mod toy;
pub mod wire;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use offline::{load_offline_predictions, write_record, OfflineBackend, OfflineRecord};
pub use remote::RemoteBackend;
pub use scorer::{Scorer, ScorerConfig};
pub use toy::{CorefRule, FillRule, PairRule, ToyModel, ToyModelSpec};

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";

/// Largest number of requests carried by one wire message.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRequest {
    pub text: String,
    pub mask_token: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub token: String,
    pub score: f64,
}

/// Ranked fills for one masked sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub fills: Vec<Fill>,
    pub model_id: String,
}

impl FillResponse {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.fills.iter().map(|f| f.token.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRequest {
    pub s1: String,
    pub s2: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub score: f64,
}

/// Character offsets (in NFC text) of the pronoun and candidate antecedent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefRequest {
    pub text: String,
    pub pronoun: [usize; 2],
    pub antecedent: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorefScore {
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label_scores: BTreeMap<String, f64>,
}

impl ClassifyResponse {
    /// Highest-scoring label, ties resolved towards the smaller label.
    pub fn top_label(&self) -> Option<&str> {
        self.label_scores
            .iter()
            .fold(None, |best: Option<(&String, f64)>, (l, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((l, s)),
            })
            .map(|(l, _)| l.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub model_id: String,
    pub capabilities: Vec<String>,
}

/// A source of model predictions. Implementations must be deterministic for
/// identical requests and safe to call from several threads.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> String;

    fn capabilities(&self) -> Vec<String> {
        vec!["fill".into(), "pair_score".into(), "coref".into(), "classify".into()]
    }

    fn fill(&self, req: &FillRequest) -> Result<FillResponse>;

    /// Several fill requests at once; semantics identical to issuing them in
    /// order.
    fn fill_batch(&self, reqs: &[FillRequest]) -> Vec<Result<FillResponse>> {
        reqs.iter().map(|r| self.fill(r)).collect()
    }

    fn pair_score(&self, req: &PairRequest) -> Result<PairScore>;

    fn coref(&self, req: &CorefRequest) -> Result<CorefScore>;

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse>;

    fn health(&self) -> Health {
        Health {
            model_id: self.model_id(),
            capabilities: self.capabilities(),
        }
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn capabilities(&self) -> Vec<String> {
        (**self).capabilities()
    }
    fn fill(&self, req: &FillRequest) -> Result<FillResponse> {
        (**self).fill(req)
    }
    fn fill_batch(&self, reqs: &[FillRequest]) -> Vec<Result<FillResponse>> {
        (**self).fill_batch(reqs)
    }
    fn pair_score(&self, req: &PairRequest) -> Result<PairScore> {
        (**self).pair_score(req)
    }
    fn coref(&self, req: &CorefRequest) -> Result<CorefScore> {
        (**self).coref(req)
    }
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        (**self).classify(req)
    }
}

/// Open a backend from a specifier: `http://host:port` (or https), `toy`,
/// `toy:SPEC.json`, `offline:PREDICTIONS.jsonl`, or a bare path ending in
/// `.jsonl`.
pub fn open_backend(spec: &str) -> Result<std::sync::Arc<dyn Backend>> {
    use std::io::BufReader;
    use std::sync::Arc;
    let spec = spec.trim();
    let read = |path: &str| {
        std::fs::File::open(path).map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })
    };
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Arc::new(RemoteBackend::connect(spec)?));
    }
    if spec == "toy" {
        return Ok(Arc::new(ToyModel::new(ToyModelSpec::builtin())?));
    }
    if let Some(path) = spec.strip_prefix("toy:") {
        let text = std::io::read_to_string(read(path)?)?;
        return Ok(Arc::new(ToyModel::from_json(&text).map_err(|e| e.in_file(path))?));
    }
    let path = spec.strip_prefix("offline:").unwrap_or(spec);
    if spec.starts_with("offline:") || path.ends_with(".jsonl") {
        let backend = load_offline_predictions(BufReader::new(read(path)?)).map_err(|e| e.in_file(path))?;
        return Ok(Arc::new(backend));
    }
    Err(Error::invalid(format!(
        "unrecognized backend `{spec}` (expected http://..., toy, toy:FILE or offline:FILE)"
    )))
}

/// NFC-normalize, collapse whitespace runs to one space and trim.
pub fn canonical_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonicalize coreference text and remap its character spans. Offsets on
/// input are character offsets into the NFC form of `text`.
pub fn canonical_coref(req: &CorefRequest) -> Result<CorefRequest> {
    let nfc: Vec<char> = req.text.nfc().collect();
    validate_spans(nfc.len(), req.pronoun, req.antecedent)?;
    // map[i] = canonical index of original char i; map[len] = canonical len
    let mut map = Vec::with_capacity(nfc.len() + 1);
    let mut out = String::with_capacity(nfc.len());
    let mut out_len = 0usize;
    let mut pending_space = false;
    for &c in &nfc {
        if c.is_whitespace() {
            if out_len > 0 {
                pending_space = true;
            }
            map.push(out_len + usize::from(pending_space && out_len > 0));
            continue;
        }
        if pending_space {
            out.push(' ');
            out_len += 1;
            pending_space = false;
        }
        map.push(out_len);
        out.push(c);
        out_len += 1;
    }
    map.push(out_len);
    // starts map forward onto the next kept char; ends map from the last
    // char inside the span
    let remap = |[s, e]: [usize; 2]| [map[s].min(out_len), (map[e - 1] + 1).min(out_len)];
    let canonical = CorefRequest {
        text: out,
        pronoun: remap(req.pronoun),
        antecedent: remap(req.antecedent),
    };
    validate_spans(out_len, canonical.pronoun, canonical.antecedent)?;
    Ok(canonical)
}

fn validate_spans(len: usize, pronoun: [usize; 2], antecedent: [usize; 2]) -> Result<()> {
    for (name, [s, e]) in [("pronoun", pronoun), ("antecedent", antecedent)] {
        if s >= e || e > len {
            return Err(Error::invalid(format!(
                "{name} span [{s}, {e}) invalid for text of {len} characters"
            )));
        }
    }
    let overlap = pronoun[0] < antecedent[1] && antecedent[0] < pronoun[1];
    if overlap {
        return Err(Error::invalid("pronoun and antecedent spans overlap"));
    }
    Ok(())
}

/// Text covered by a character span.
pub fn char_span(text: &str, [s, e]: [usize; 2]) -> String {
    text.chars().skip(s).take(e.saturating_sub(s)).collect()
}

/// Subword pieces a bridge must merge before answering.
pub fn is_subword_piece(token: &str) -> bool {
    token.starts_with("##") || token.contains('\u{2581}') || token.contains('\u{120}') || token.starts_with("@@")
}

/// Check the fill-response contract: at least `k` fills, whole words, no
/// duplicates, finite non-increasing scores.
pub fn validate_fill_response(resp: &FillResponse, k: usize) -> Result<()> {
    if resp.fills.len() < k {
        return Err(Error::Protocol(format!(
            "{} returned {} fills, {k} requested",
            resp.model_id,
            resp.fills.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for (i, f) in resp.fills.iter().enumerate() {
        if f.token.trim().is_empty() || f.token.chars().any(char::is_whitespace) || is_subword_piece(&f.token) {
            return Err(Error::Protocol(format!("fill `{}` is not a whole word", f.token)));
        }
        if !f.score.is_finite() {
            return Err(Error::Protocol(format!("fill `{}` has non-finite score", f.token)));
        }
        if !seen.insert(f.token.as_str()) {
            return Err(Error::Protocol(format!("duplicate fill `{}`", f.token)));
        }
        if i > 0 && f.score > resp.fills[i - 1].score {
            return Err(Error::Protocol(format!(
                "fill scores increase at position {i} (`{}`)",
                f.token
            )));
        }
    }
    Ok(())
}

/// Order fills by descending score with ascending-token tie-breaks and keep
/// the first `k`.
pub fn rank_fills(fills: &[Fill], k: usize) -> Vec<Fill> {
    let mut ranked = fills.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
    ranked.truncate(k);
    ranked
}

/// Count of `mask` occurrences in `text`.
pub fn mask_count(text: &str, mask: &str) -> usize {
    if mask.is_empty() {
        0
    } else {
        text.matches(mask).count()
    }
}
