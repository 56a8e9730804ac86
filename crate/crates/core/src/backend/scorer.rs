use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde_json::json;

use super::offline::{classify_key, coref_key, fill_key, pair_key, OfflineBackend, OfflineRecord};
use super::{
    canonical_coref, canonical_text, mask_count, rank_fills, validate_fill_response, write_record, Backend,
    ClassifyRequest, ClassifyResponse, CorefRequest, CorefScore, FillRequest, FillResponse, PairRequest,
    PairScore, DEFAULT_MASK_TOKEN, MAX_BATCH,
};
use crate::error::{Error, Result};
use crate::parallel::par_map;

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    pub mask_token: String,
    /// Upper bound on concurrent backend requests.
    pub max_parallel: usize,
    /// Optional on-disk response cache in the offline predictions format.
    pub cache_path: Option<PathBuf>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            mask_token: DEFAULT_MASK_TOKEN.into(),
            max_parallel: 4,
            cache_path: None,
        }
    }
}

#[derive(Default)]
struct Caches {
    fills: HashMap<String, FillResponse>,
    pairs: HashMap<String, PairScore>,
    corefs: HashMap<String, CorefScore>,
    classes: HashMap<String, ClassifyResponse>,
}

/// Validating, caching front end over a [`Backend`].
pub struct Scorer {
    backend: Arc<dyn Backend>,
    config: ScorerConfig,
    model_id: String,
    cache: Mutex<Caches>,
    disk: Option<Mutex<BufWriter<File>>>,
}

impl Scorer {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_config(backend, ScorerConfig::default()).expect("no disk cache to open")
    }

    pub fn with_config(backend: Arc<dyn Backend>, config: ScorerConfig) -> Result<Self> {
        let model_id = backend.model_id();
        let mut caches = Caches::default();
        let disk = match &config.cache_path {
            Some(path) => {
                if path.exists() {
                    load_disk_cache(path, &model_id, &mut caches).map_err(|e| e.in_file(path))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::from(e).in_file(path))?;
                Some(Mutex::new(BufWriter::new(file)))
            }
            None => None,
        };
        Ok(Scorer {
            backend,
            config,
            model_id,
            cache: Mutex::new(caches),
            disk,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn mask_token(&self) -> &str {
        &self.config.mask_token
    }

    pub fn max_parallel(&self) -> usize {
        self.config.max_parallel
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    fn persist(&self, kind: &str, key: &str, value: serde_json::Value) -> Result<()> {
        if let Some(disk) = &self.disk {
            let record = OfflineRecord {
                kind: kind.into(),
                key: serde_json::from_str(key)?,
                value,
                model_id: Some(self.model_id.clone()),
            };
            let mut w = disk.lock().expect("cache file lock");
            write_record(&mut *w, &record)?;
            w.flush()?;
        }
        Ok(())
    }

    fn check_fill_request(&self, sentence: &str, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let masks = mask_count(sentence, &self.config.mask_token);
        if masks != 1 {
            return Err(Error::invalid(format!(
                "expected exactly one `{}` in `{sentence}`, found {masks}",
                self.config.mask_token
            )));
        }
        Ok(())
    }

    fn cached_fill(&self, key: &str, k: usize) -> Option<FillResponse> {
        let cache = self.cache.lock().expect("cache lock");
        cache.fills.get(key).filter(|r| r.fills.len() >= k).map(|r| FillResponse {
            fills: rank_fills(&r.fills, k),
            model_id: r.model_id.clone(),
        })
    }

    fn store_fill(&self, key: &str, sentence: &str, resp: FillResponse, k: usize) -> Result<FillResponse> {
        validate_fill_response(&resp, k).map_err(|e| Error::Protocol(format!("{e} (request: `{sentence}`)")))?;
        {
            let mut cache = self.cache.lock().expect("cache lock");
            let keep = cache.fills.get(key).is_none_or(|old| old.fills.len() < resp.fills.len());
            if keep {
                cache.fills.insert(key.to_string(), resp.clone());
            }
        }
        self.persist("fill", key, serde_json::to_value(&resp)?)?;
        Ok(FillResponse {
            fills: rank_fills(&resp.fills, k),
            model_id: resp.model_id,
        })
    }

    /// Top-`k` fills for a sentence holding exactly one mask token.
    pub fn query_fills(&self, sentence: &str, k: usize) -> Result<FillResponse> {
        self.check_fill_request(sentence, k)?;
        let text = canonical_text(sentence);
        let key = fill_key(&text, &self.config.mask_token);
        if let Some(hit) = self.cached_fill(&key, k) {
            return Ok(hit);
        }
        let resp = self.backend.fill(&FillRequest {
            text: text.clone(),
            mask_token: self.config.mask_token.clone(),
            k,
        })?;
        self.store_fill(&key, &text, resp, k)
    }

    /// Fill many sentences, batching up to 64 requests per backend call and
    /// running batches with bounded parallelism. Results follow input order.
    pub fn query_fills_many(&self, sentences: &[String], k: usize) -> Vec<Result<FillResponse>> {
        let mut pending: Vec<(String, String)> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for s in sentences {
            if self.check_fill_request(s, k).is_err() {
                continue;
            }
            let text = canonical_text(s);
            let key = fill_key(&text, &self.config.mask_token);
            if self.cached_fill(&key, k).is_none() && queued.insert(key.clone()) {
                pending.push((key, text));
            }
        }
        let batches: Vec<&[(String, String)]> = pending.chunks(MAX_BATCH).collect();
        let failures: Vec<Vec<(String, Error)>> = par_map(&batches, self.config.max_parallel, |batch| {
            let reqs: Vec<FillRequest> = batch
                .iter()
                .map(|(_, text)| FillRequest {
                    text: text.clone(),
                    mask_token: self.config.mask_token.clone(),
                    k,
                })
                .collect();
            let mut errs = Vec::new();
            let responses = self.backend.fill_batch(&reqs);
            if responses.len() != reqs.len() {
                for (key, _) in batch.iter() {
                    errs.push((
                        key.clone(),
                        Error::Protocol(format!("batch returned {} of {} responses", responses.len(), reqs.len())),
                    ));
                }
                return errs;
            }
            for ((key, text), resp) in batch.iter().zip(responses) {
                if let Err(e) = resp.and_then(|r| self.store_fill(key, text, r, k)) {
                    errs.push((key.clone(), e));
                }
            }
            errs
        });
        let mut failed: HashMap<String, Error> = failures.into_iter().flatten().collect();
        sentences
            .iter()
            .map(|s| {
                self.check_fill_request(s, k)?;
                let text = canonical_text(s);
                let key = fill_key(&text, &self.config.mask_token);
                if let Some(e) = failed.remove(&key) {
                    return Err(e);
                }
                match self.cached_fill(&key, k) {
                    Some(hit) => Ok(hit),
                    // an earlier duplicate already consumed the error
                    None => self.query_fills(s, k),
                }
            })
            .collect()
    }

    pub fn query_pair_score(&self, s1: &str, s2: &str) -> Result<PairScore> {
        if s1.trim().is_empty() || s2.trim().is_empty() {
            return Err(Error::invalid("pair score needs two non-empty sentences"));
        }
        let key = pair_key(s1, s2);
        if let Some(hit) = self.cache.lock().expect("cache lock").pairs.get(&key) {
            return Ok(*hit);
        }
        let resp = self.backend.pair_score(&PairRequest {
            s1: canonical_text(s1),
            s2: canonical_text(s2),
        })?;
        if !resp.score.is_finite() {
            return Err(Error::Protocol(format!("non-finite pair score for ({s1}, {s2})")));
        }
        self.cache.lock().expect("cache lock").pairs.insert(key.clone(), resp);
        self.persist("pair", &key, json!(resp))?;
        Ok(resp)
    }

    pub fn query_pair_scores_many(&self, pairs: &[(String, String)]) -> Vec<Result<PairScore>> {
        par_map(pairs, self.config.max_parallel, |(a, b)| self.query_pair_score(a, b))
    }

    pub fn query_coref(&self, req: &CorefRequest) -> Result<CorefScore> {
        let canonical = canonical_coref(req)?;
        let key = coref_key(&canonical);
        if let Some(hit) = self.cache.lock().expect("cache lock").corefs.get(&key) {
            return Ok(*hit);
        }
        let resp = self.backend.coref(&canonical)?;
        if !(0.0..=1.0).contains(&resp.p) {
            return Err(Error::Protocol(format!("coref probability {} outside [0, 1]", resp.p)));
        }
        self.cache.lock().expect("cache lock").corefs.insert(key.clone(), resp);
        self.persist("coref", &key, json!(resp))?;
        Ok(resp)
    }

    pub fn query_coref_many(&self, reqs: &[CorefRequest]) -> Vec<Result<CorefScore>> {
        par_map(reqs, self.config.max_parallel, |r| self.query_coref(r))
    }

    pub fn query_classify(&self, text: &str) -> Result<ClassifyResponse> {
        let key = classify_key(text);
        if let Some(hit) = self.cache.lock().expect("cache lock").classes.get(&key) {
            return Ok(hit.clone());
        }
        let resp = self.backend.classify(&ClassifyRequest {
            text: canonical_text(text),
        })?;
        if resp.label_scores.is_empty() || resp.label_scores.values().any(|s| !s.is_finite()) {
            return Err(Error::Protocol(format!("invalid label scores for `{text}`")));
        }
        self.cache.lock().expect("cache lock").classes.insert(key.clone(), resp.clone());
        self.persist("classify", &key, serde_json::to_value(&resp)?)?;
        Ok(resp)
    }
}

fn load_disk_cache(path: &PathBuf, model_id: &str, caches: &mut Caches) -> Result<()> {
    use std::io::BufRead;
    let reader = BufReader::new(File::open(path)?);
    let mut mine = OfflineBackend::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: OfflineRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("cache record: {e}")))?;
        if record.model_id.as_deref() == Some(model_id) {
            mine.insert(&record, i + 1)?;
        }
    }
    caches.fills = mine.fills;
    caches.pairs = mine.pairs;
    caches.corefs = mine.corefs;
    caches.classes = mine.classes;
    Ok(())
}
