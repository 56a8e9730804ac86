//! Python bindings. Results are handed over as plain dicts and lists parsed
//! from the same JSON the command-line tool writes.

use std::io::BufReader;
use std::path::Path;

use gencorr::backend::{open_backend, Scorer, ScorerConfig};
use gencorr::cda::{
    counterfactual_sentence, name_intervention, rewrite_corpus, CdaConfig, CdaMode, CorpusRecord, NamePolicy,
    PolicyKind,
};
use gencorr::lexicon::{
    bundled_name_lexicon, bundled_pair_lexicon, load_name_lexicon, load_pair_lexicon, NameLexicon, NameSplit,
    PairLexicon, DEFAULT_NAME_THRESHOLD,
};
use gencorr::metrics::{
    self, bundled_bls_table, disco, disco_null_calibration, load_bls_table, load_winogender, name_persons, term_persons,
    BlsTable, CorefOptions, Correction, DiscoOptions, MetricResult,
};
use gencorr::report::ComparisonTable;
use gencorr::stats::{self, ContingencyTable};
use gencorr::templates::{build_sts_templates, bundled_disco_templates, instantiate_sts_pairs, load_disco_templates};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(gencorr, GencorrError, PyException, "Base class for gencorr errors.");
create_exception!(gencorr, InputError, GencorrError, "Bad input data or arguments.");
create_exception!(gencorr, BackendError, GencorrError, "The model backend failed or answered badly.");
create_exception!(gencorr, InvariantError, GencorrError, "An internal consistency check failed.");

fn py_err(e: gencorr::Error) -> PyErr {
    match e.exit_code() {
        2 => BackendError::new_err(e.to_string()),
        3 => InvariantError::new_err(e.to_string()),
        _ => InputError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn value_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| InvariantError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

fn open_file(path: &str) -> PyResult<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| InputError::new_err(format!("{path}: {e}")))
}

fn pair_lexicon(path: Option<&str>) -> PyResult<PairLexicon> {
    match path {
        None => Ok(bundled_pair_lexicon()),
        Some(p) => load_pair_lexicon(open_file(p)?).map_err(|e| py_err(e.in_file(p))),
    }
}

fn name_lexicon(path: Option<&str>, threshold: f64) -> PyResult<NameLexicon> {
    match path {
        None if threshold == DEFAULT_NAME_THRESHOLD => Ok(bundled_name_lexicon()),
        None => load_name_lexicon(gencorr::lexicon::BUNDLED_NAME_COUNTS.as_bytes(), threshold).map_err(py_err),
        Some(p) => load_name_lexicon(open_file(p)?, threshold).map_err(|e| py_err(e.in_file(p))),
    }
}

fn professions(path: Option<&str>) -> PyResult<BlsTable> {
    match path {
        None => Ok(bundled_bls_table()),
        Some(p) => load_bls_table(open_file(p)?).map_err(|e| py_err(e.in_file(p))),
    }
}

/// 2x2 Pearson chi-square without continuity correction: `(statistic, p)`.
#[pyfunction]
fn chi_square_2x2(a: u64, b: u64, c: u64, d: u64) -> PyResult<(f64, f64)> {
    let r = stats::chi_square_2x2(&ContingencyTable::new(a, b, c, d)).map_err(py_err)?;
    Ok((r.statistic, r.p_value))
}

#[pyfunction]
#[pyo3(signature = (statistic, dof = 1))]
fn chi_square_p(statistic: f64, dof: u32) -> PyResult<f64> {
    stats::chi_square_p(statistic, dof).map_err(py_err)
}

#[pyfunction]
fn pearson_r(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    stats::pearson_r(&xs, &ys).map_err(py_err)
}

/// Least-squares line: `{"slope", "intercept", "pearson_r", "n"}`.
#[pyfunction]
fn linear_fit<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    value_to_py(py, &stats::linear_fit(&xs, &ys).map_err(py_err)?)
}

/// A scoring backend behind a validating, caching front end.
#[pyclass(frozen)]
struct Model {
    scorer: Scorer,
}

#[pymethods]
impl Model {
    /// `spec` is `toy`, `toy:SPEC.json`, `offline:FILE.jsonl` or an
    /// `http://host:port` endpoint.
    #[new]
    #[pyo3(signature = (spec = "toy", mask_token = "[MASK]", max_parallel = 4, cache = None))]
    fn new(py: Python<'_>, spec: &str, mask_token: &str, max_parallel: usize, cache: Option<String>) -> PyResult<Self> {
        let config = ScorerConfig {
            mask_token: mask_token.to_string(),
            max_parallel,
            cache_path: cache.map(Into::into),
        };
        let scorer = py
            .detach(|| open_backend(spec).and_then(|b| Scorer::with_config(b, config)))
            .map_err(py_err)?;
        Ok(Model { scorer })
    }

    #[getter]
    fn model_id(&self) -> &str {
        self.scorer.model_id()
    }

    /// Top-`k` `(token, score)` pairs for a sentence with one mask token.
    #[pyo3(signature = (sentence, k = 3))]
    fn fill(&self, py: Python<'_>, sentence: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let resp = py.detach(|| self.scorer.query_fills(sentence, k)).map_err(py_err)?;
        Ok(resp.fills.into_iter().map(|f| (f.token, f.score)).collect())
    }

    fn pair_score(&self, py: Python<'_>, s1: &str, s2: &str) -> PyResult<f64> {
        Ok(py.detach(|| self.scorer.query_pair_score(s1, s2)).map_err(py_err)?.score)
    }

    /// Probability that the pronoun span refers to the antecedent span
    /// (character offsets, end exclusive).
    fn coref(&self, py: Python<'_>, text: &str, pronoun: [usize; 2], antecedent: [usize; 2]) -> PyResult<f64> {
        let req = gencorr::backend::CorefRequest {
            text: text.to_string(),
            pronoun,
            antecedent,
        };
        Ok(py.detach(|| self.scorer.query_coref(&req)).map_err(py_err)?.p)
    }

    fn __repr__(&self) -> String {
        format!("Model(model_id={:?})", self.scorer.model_id())
    }
}

/// DisCo over names (default) or gendered terms. Returns the per-run detail
/// as a dict; with `random_groups` the value list of the null calibration.
#[pyfunction]
#[pyo3(signature = (model, *, names = None, terms = false, templates = None, split = "all", k = 3, alpha = 0.05,
                    per_template = false, min_expected = None, random_groups = false, trials = 100, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn disco_metric<'py>(
    py: Python<'py>,
    model: &Model,
    names: Option<&str>,
    terms: bool,
    templates: Option<&str>,
    split: &str,
    k: usize,
    alpha: f64,
    per_template: bool,
    min_expected: Option<f64>,
    random_groups: bool,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let templates = match templates {
        None => bundled_disco_templates(),
        Some(p) => load_disco_templates(open_file(p)?).map_err(|e| py_err(e.in_file(p)))?,
    };
    let persons = if terms {
        term_persons(&pair_lexicon(None)?)
    } else {
        let split = NameSplit::parse(split).map_err(py_err)?;
        name_persons(&name_lexicon(names, DEFAULT_NAME_THRESHOLD)?.restricted_to(&split))
    };
    let opts = DiscoOptions {
        k,
        alpha,
        correction: if per_template {
            Correction::PerTemplate
        } else {
            Correction::Global
        },
        min_expected,
    };
    let scorer = &model.scorer;
    if random_groups {
        let values = py
            .detach(|| disco_null_calibration(&templates, &persons, scorer, &opts, seed, trials))
            .map_err(py_err)?;
        value_to_py(py, &values)
    } else {
        let result = py.detach(|| disco(&templates, &persons, scorer, &opts)).map_err(py_err)?;
        value_to_py(py, &result)
    }
}

/// Gendered STS-B correlation from an STS-B test file.
#[pyfunction]
#[pyo3(signature = (model, sts_path, *, professions_path = None))]
fn sts_gender<'py>(
    py: Python<'py>,
    model: &Model,
    sts_path: &str,
    professions_path: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let bls = professions(professions_path)?;
    let mined = build_sts_templates(open_file(sts_path)?, &pair_lexicon(None)?).map_err(|e| py_err(e.in_file(sts_path)))?;
    let names = bls.professions();
    let couples: Vec<_> = mined.templates.iter().flat_map(|t| instantiate_sts_pairs(t, &names)).collect();
    let report = py
        .detach(|| metrics::sts_gender(&couples, &model.scorer, &bls))
        .map_err(py_err)?;
    value_to_py(py, &report)
}

/// Coreference correlation from a WinoGender-style TSV.
#[pyfunction]
#[pyo3(signature = (model, examples_path, *, professions_path = None, threshold = None))]
fn coref_gender<'py>(
    py: Python<'py>,
    model: &Model,
    examples_path: &str,
    professions_path: Option<&str>,
    threshold: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let bls = professions(professions_path)?;
    let examples = load_winogender(open_file(examples_path)?).map_err(|e| py_err(e.in_file(examples_path)))?;
    let opts = CorefOptions { threshold };
    let report = py
        .detach(|| metrics::coref_gender(&examples, &model.scorer, &bls, &opts))
        .map_err(py_err)?;
    value_to_py(py, &report)
}

/// TPR-gap slope from a prediction log and a training log.
#[pyfunction]
fn bios_gap<'py>(py: Python<'py>, log_path: &str, train_path: &str) -> PyResult<Bound<'py, PyAny>> {
    let train = metrics::load_bios_log(open_file(train_path)?).map_err(|e| py_err(e.in_file(train_path)))?;
    let stats = metrics::estimate_profession_stats(&train).map_err(|e| py_err(e.in_file(train_path)))?;
    let log = metrics::load_bios_log(open_file(log_path)?).map_err(|e| py_err(e.in_file(log_path)))?;
    value_to_py(py, &metrics::bios_gap(&log, &stats).map_err(|e| py_err(e.in_file(log_path)))?)
}

/// Swap gendered terms; `None` when the sentence has none.
#[pyfunction]
#[pyo3(signature = (sentence, pairs_path = None))]
fn counterfactual(sentence: &str, pairs_path: Option<&str>) -> PyResult<Option<String>> {
    Ok(counterfactual_sentence(sentence, &pair_lexicon(pairs_path)?))
}

/// Augment a list of sentences. Returns `(sentences, stats)`.
#[pyfunction]
#[pyo3(signature = (sentences, *, mode = "two", seed = 0, mix_ratio = None, pairs_path = None, workers = 4))]
fn cda<'py>(
    py: Python<'py>,
    sentences: Vec<String>,
    mode: &str,
    seed: u64,
    mix_ratio: Option<f64>,
    pairs_path: Option<&str>,
    workers: usize,
) -> PyResult<(Vec<String>, Bound<'py, PyAny>)> {
    let lex = pair_lexicon(pairs_path)?;
    let cfg = CdaConfig {
        mode: CdaMode::parse(mode).map_err(py_err)?,
        seed,
        mix_ratio,
    };
    let mut out = Vec::new();
    let stats = py
        .detach(|| {
            rewrite_corpus(sentences.into_iter().map(|s| Ok(CorpusRecord::plain(s))), &lex, &cfg, workers, |r| {
                out.push(r.text.clone());
                Ok(())
            })
        })
        .map_err(py_err)?;
    Ok((out, value_to_py(py, &stats)?))
}

/// Name replacement under a `same`, `flip` or `random` policy.
#[pyclass(frozen)]
struct NameIntervention {
    policy: NamePolicy,
}

#[pymethods]
impl NameIntervention {
    #[new]
    #[pyo3(signature = (policy, *, names_path = None, split = "all", seed = 0, threshold = DEFAULT_NAME_THRESHOLD))]
    fn new(policy: &str, names_path: Option<&str>, split: &str, seed: u64, threshold: f64) -> PyResult<Self> {
        let kind = PolicyKind::parse(policy).map_err(py_err)?;
        let split = NameSplit::parse(split).map_err(py_err)?;
        let pool = name_lexicon(names_path, threshold)?.restricted_to(&split);
        Ok(NameIntervention {
            policy: NamePolicy::new(kind, split, pool, seed).map_err(py_err)?,
        })
    }

    /// Rewrite one sentence; `record` keys the random draws. Returns the new
    /// text and `(original, replacement)` pairs.
    #[pyo3(signature = (sentence, record = 0))]
    fn apply(&self, sentence: &str, record: u64) -> PyResult<(String, Vec<(String, String)>)> {
        let (text, reps) = name_intervention(sentence, &self.policy, record).map_err(py_err)?;
        Ok((text, reps.into_iter().map(|r| (r.original, r.replacement)).collect()))
    }
}

/// Markdown comparison table from metric JSON documents.
#[pyfunction]
fn report_markdown(documents: Vec<String>) -> PyResult<String> {
    let results = documents
        .iter()
        .map(|d| MetricResult::from_json(d))
        .collect::<gencorr::Result<Vec<_>>>()
        .map_err(py_err)?;
    Ok(ComparisonTable::from_results(&results).map_err(py_err)?.to_markdown())
}

/// Read a metric JSON file and return it as a dict.
#[pyfunction]
fn load_result<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let text = std::fs::read_to_string(Path::new(path)).map_err(|e| InputError::new_err(format!("{path}: {e}")))?;
    let result = MetricResult::from_json(&text).map_err(|e| py_err(e.in_file(path)))?;
    value_to_py(py, &result)
}

#[pymodule]
fn gencorr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("GencorrError", py.get_type::<GencorrError>())?;
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("BackendError", py.get_type::<BackendError>())?;
    m.add("InvariantError", py.get_type::<InvariantError>())?;
    m.add_class::<Model>()?;
    m.add_class::<NameIntervention>()?;
    m.add_function(wrap_pyfunction!(chi_square_2x2, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_p, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(linear_fit, m)?)?;
    m.add_function(wrap_pyfunction!(disco_metric, m)?)?;
    m.add_function(wrap_pyfunction!(sts_gender, m)?)?;
    m.add_function(wrap_pyfunction!(coref_gender, m)?)?;
    m.add_function(wrap_pyfunction!(bios_gap, m)?)?;
    m.add_function(wrap_pyfunction!(counterfactual, m)?)?;
    m.add_function(wrap_pyfunction!(cda, m)?)?;
    m.add_function(wrap_pyfunction!(report_markdown, m)?)?;
    m.add_function(wrap_pyfunction!(load_result, m)?)?;
    Ok(())
}
