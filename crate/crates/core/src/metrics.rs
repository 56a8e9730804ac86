//! Correlation metrics: DisCo, STS-B gender, coreference gender, the
//! Bias-in-Bios TPR gap slope, and accuracy from prediction logs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{CorefRequest, Scorer};
use crate::error::{Error, Result};
use crate::lexicon::{GenderLabel, NameLexicon, PairLexicon};
use crate::stats::{
    aggregate_restarts, bonferroni_alpha, chi_square_2x2, linear_fit, pearson_r, CompensatedSum,
    ContingencyTable, LinearFitResult, RestartSummary,
};
use crate::templates::{DiscoTemplate, StsCouple, GENDERED_PRONOUNS};

/// Bundled profession table (approximate shares, percent female).
pub const BUNDLED_PROFESSIONS: &str = include_str!("../data/professions.csv");

/// Largest share of items that may be skipped for a missing profession.
pub const MAX_SKIP_FRACTION: f64 = 0.10;

// ---------------------------------------------------------------- DisCo

/// A labelled word or phrase placed in a template's person slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonEntry {
    pub surface: String,
    pub label: GenderLabel,
}

impl PersonEntry {
    pub fn new(surface: impl Into<String>, label: GenderLabel) -> Self {
        PersonEntry {
            surface: surface.into(),
            label,
        }
    }
}

/// Person entries from a name list.
pub fn name_persons(names: &NameLexicon) -> Vec<PersonEntry> {
    names
        .entries()
        .iter()
        .map(|e| PersonEntry::new(e.name.clone(), e.label.clone()))
        .collect()
}

/// `the NOUN` phrases for every single-word, non-pronoun lexicon entry.
pub fn term_persons(lex: &PairLexicon) -> Vec<PersonEntry> {
    lex.labelled_words()
        .into_iter()
        .filter(|(w, _)| !w.contains(' ') && !GENDERED_PRONOUNS.contains(&w.as_str()))
        .map(|(w, label)| PersonEntry::new(format!("the {w}"), label))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// One Bonferroni denominator for every test in the run.
    #[default]
    Global,
    /// Each template corrected by its own number of tests.
    PerTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoOptions {
    pub k: usize,
    pub alpha: f64,
    pub correction: Correction,
    /// When set, tables whose smallest expected count falls below this value
    /// are reported but never counted as significant.
    pub min_expected: Option<f64>,
}

impl Default for DiscoOptions {
    fn default() -> Self {
        DiscoOptions {
            k: 3,
            alpha: 0.05,
            correction: Correction::Global,
            min_expected: None,
        }
    }
}

/// One (template, fill) hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillTest {
    pub fill: String,
    /// Rows are the two groups in [`DiscoResult::groups`] order; columns are
    /// entries whose top-k contained / did not contain the fill.
    pub table: [u64; 4],
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificantFill {
    pub fill: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDetail {
    pub template_id: String,
    /// Number of distinct fills tested for this template.
    pub tested: usize,
    pub threshold: f64,
    pub significant: Vec<SignificantFill>,
    pub tests: Vec<FillTest>,
}

impl TemplateDetail {
    pub fn significant_count(&self) -> usize {
        self.significant.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoResult {
    pub value: f64,
    pub templates: Vec<TemplateDetail>,
    /// Total (template, fill) tests in the run.
    pub total_tests: usize,
    pub alpha: f64,
    pub k: usize,
    pub correction: Correction,
    pub groups: [GenderLabel; 2],
    pub group_sizes: [usize; 2],
}

/// Top-k fill sets per template per person, gathered once and reusable for
/// any grouping of the persons.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoObservations {
    pub template_ids: Vec<String>,
    /// `fills[t][p]` is the set of top-k fills for person `p` in template `t`.
    pub fills: Vec<Vec<BTreeSet<String>>>,
    pub k: usize,
}

fn check_disco_inputs(templates: &[DiscoTemplate], persons: &[PersonEntry]) -> Result<[GenderLabel; 2]> {
    if templates.is_empty() {
        return Err(Error::invalid("DisCo needs at least one template"));
    }
    let mut counts: BTreeMap<&GenderLabel, usize> = BTreeMap::new();
    for p in persons {
        *counts.entry(&p.label).or_default() += 1;
    }
    if counts.len() != 2 {
        return Err(Error::invalid(format!(
            "DisCo needs exactly two person labels, found {}",
            counts.len()
        )));
    }
    if let Some((label, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::invalid(format!("label `{label}` has {n} person entries; at least 2 required")));
    }
    let mut labels = counts.into_keys().cloned();
    Ok([labels.next().expect("two labels"), labels.next().expect("two labels")])
}

/// Query the backend for every (template, person) sentence.
pub fn collect_disco_fills(
    templates: &[DiscoTemplate],
    persons: &[PersonEntry],
    scorer: &Scorer,
    k: usize,
) -> Result<DiscoObservations> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let sentences: Vec<String> = templates
        .iter()
        .flat_map(|t| persons.iter().map(|p| t.instantiate_person(&p.surface, scorer.mask_token())))
        .collect();
    let mut responses = scorer.query_fills_many(&sentences, k).into_iter();
    let mut fills = Vec::with_capacity(templates.len());
    for t in templates {
        let mut row = Vec::with_capacity(persons.len());
        for p in persons {
            let resp = responses.next().expect("one response per sentence").map_err(|e| {
                if e.is_backend() {
                    e
                } else {
                    Error::invalid(format!("template {} with `{}`: {e}", t.id, p.surface))
                }
            })?;
            row.push(resp.tokens().take(k).map(str::to_string).collect());
        }
        fills.push(row);
    }
    Ok(DiscoObservations {
        template_ids: templates.iter().map(|t| t.id.clone()).collect(),
        fills,
        k,
    })
}

/// DisCo over gathered fills. `groups[p]` is 0 or 1 for person `p`.
pub fn disco_from_observations(
    obs: &DiscoObservations,
    groups: &[usize],
    labels: [GenderLabel; 2],
    opts: &DiscoOptions,
) -> Result<DiscoResult> {
    let mut sizes = [0usize; 2];
    for &g in groups {
        if g > 1 {
            return Err(Error::Invariant(format!("group index {g} out of range")));
        }
        sizes[g] += 1;
    }
    struct Raw {
        fill: String,
        table: ContingencyTable,
    }
    let mut per_template: Vec<Vec<Raw>> = Vec::with_capacity(obs.fills.len());
    for row in &obs.fills {
        if row.len() != groups.len() {
            return Err(Error::Invariant("fill rows and group assignment differ in length".into()));
        }
        let mut present: BTreeMap<&str, [u64; 2]> = BTreeMap::new();
        for (set, &g) in row.iter().zip(groups) {
            for fill in set {
                present.entry(fill.as_str()).or_default()[g] += 1;
            }
        }
        per_template.push(
            present
                .into_iter()
                .map(|(fill, [with0, with1])| Raw {
                    fill: fill.to_string(),
                    table: ContingencyTable::new(
                        with0,
                        sizes[0] as u64 - with0,
                        with1,
                        sizes[1] as u64 - with1,
                    ),
                })
                .collect(),
        );
    }
    let total_tests: usize = per_template.iter().map(Vec::len).sum();
    let global = bonferroni_alpha(opts.alpha, total_tests.max(1))?;
    let mut templates = Vec::with_capacity(per_template.len());
    let mut counts = CompensatedSum::new();
    for (id, raws) in obs.template_ids.iter().zip(per_template) {
        let threshold = match opts.correction {
            Correction::Global => global,
            Correction::PerTemplate => bonferroni_alpha(opts.alpha, raws.len().max(1))?,
        };
        let tested = raws.len();
        let mut tests = Vec::with_capacity(tested);
        let mut significant = Vec::new();
        for raw in raws {
            let t = raw.table;
            let mut test = FillTest {
                fill: raw.fill,
                table: [t.a, t.b, t.c, t.d],
                statistic: None,
                p_value: None,
                significant: false,
                note: None,
            };
            match chi_square_2x2(&t) {
                Ok(chi) => {
                    test.statistic = Some(chi.statistic);
                    test.p_value = Some(chi.p_value);
                    let low = opts.min_expected.is_some_and(|m| chi.min_expected < m);
                    if low {
                        test.note = Some(format!("min expected count {:.2} below cutoff", chi.min_expected));
                    }
                    test.significant = chi.p_value < threshold && !low;
                    if test.significant {
                        significant.push(SignificantFill {
                            fill: test.fill.clone(),
                            p_value: chi.p_value,
                        });
                    }
                }
                Err(Error::Untestable(msg)) => test.note = Some(msg),
                Err(e) => return Err(e),
            }
            tests.push(test);
        }
        counts.add(significant.len() as f64);
        templates.push(TemplateDetail {
            template_id: id.clone(),
            tested,
            threshold,
            significant,
            tests,
        });
    }
    let value = counts.total() / obs.fills.len().max(1) as f64;
    Ok(DiscoResult {
        value,
        templates,
        total_tests,
        alpha: opts.alpha,
        k: obs.k,
        correction: opts.correction,
        groups: labels,
        group_sizes: sizes,
    })
}

/// DisCo: average number of fills per template whose presence in the top-k
/// differs significantly between the two label groups.
pub fn disco(
    templates: &[DiscoTemplate],
    persons: &[PersonEntry],
    scorer: &Scorer,
    opts: &DiscoOptions,
) -> Result<DiscoResult> {
    let labels = check_disco_inputs(templates, persons)?;
    let obs = collect_disco_fills(templates, persons, scorer, opts.k)?;
    let groups: Vec<usize> = persons.iter().map(|p| usize::from(p.label != labels[0])).collect();
    disco_from_observations(&obs, &groups, labels, opts)
}

/// Seeded label permutations for null calibration. Trial `i` always uses
/// the same permutation for a given seed, however many trials are run.
pub fn permuted_groups(groups: &[usize], seed: u64, trial: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut out = groups.to_vec();
    out.shuffle(&mut rng);
    out
}

/// DisCo with person labels randomly permuted, once per trial.
pub fn disco_null_calibration(
    templates: &[DiscoTemplate],
    persons: &[PersonEntry],
    scorer: &Scorer,
    opts: &DiscoOptions,
    seed: u64,
    trials: usize,
) -> Result<Vec<f64>> {
    let labels = check_disco_inputs(templates, persons)?;
    if trials == 0 {
        return Ok(Vec::new());
    }
    let obs = collect_disco_fills(templates, persons, scorer, opts.k)?;
    let groups: Vec<usize> = persons.iter().map(|p| usize::from(p.label != labels[0])).collect();
    (0..trials as u64)
        .map(|trial| {
            let permuted = permuted_groups(&groups, seed, trial);
            disco_from_observations(&obs, &permuted, labels.clone(), opts).map(|r| r.value)
        })
        .collect()
}

// ---------------------------------------------------------- professions

/// Percentage of women per profession.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlsTable {
    pub pct_female: BTreeMap<String, f64>,
}

impl BlsTable {
    pub fn get(&self, profession: &str) -> Option<f64> {
        self.pct_female.get(profession).copied()
    }

    pub fn professions(&self) -> Vec<String> {
        self.pct_female.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.pct_female.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pct_female.is_empty()
    }
}

/// Read `profession,pct_female` rows. `#` lines are comments and an initial
/// header row is skipped.
pub fn load_bls_table<R: BufRead>(source: R) -> Result<BlsTable> {
    let mut table = BlsTable::default();
    let mut seen_data = false;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::parse(line_no, format!("expected 2 fields, found {}", fields.len())));
        }
        let value = match fields[1].parse::<f64>() {
            Ok(v) => v,
            Err(_) if !seen_data && table.is_empty() => {
                seen_data = true;
                continue;
            }
            Err(_) => return Err(Error::parse(line_no, format!("pct_female `{}` is not a number", fields[1]))),
        };
        seen_data = true;
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::parse(line_no, format!("pct_female {value} outside [0, 100]")));
        }
        let name = fields[0].to_lowercase();
        if name.is_empty() {
            return Err(Error::parse(line_no, "empty profession"));
        }
        if table.pct_female.insert(name.clone(), value).is_some() {
            return Err(Error::parse(line_no, format!("duplicate profession `{name}`")));
        }
    }
    if table.is_empty() {
        return Err(Error::invalid("profession table is empty"));
    }
    Ok(table)
}

pub fn bundled_bls_table() -> BlsTable {
    load_bls_table(BUNDLED_PROFESSIONS.as_bytes()).expect("bundled professions parse")
}

// ----------------------------------------------------- correlation reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub label: String,
    /// Representation statistic (share of women).
    pub x: f64,
    /// Metric quantity for this profession.
    pub y: f64,
    /// Items averaged into `y`.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    PearsonR,
    Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    /// Which quantity `value` carries.
    pub statistic: Statistic,
    pub value: f64,
    pub pearson_r: f64,
    /// Absent when every x is equal.
    pub fit: Option<LinearFitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

fn correlation_report(
    metric: &str,
    statistic: Statistic,
    points: Vec<Point>,
    y_name: &str,
    warnings: Vec<String>,
) -> Result<CorrelationReport> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "{metric}: need at least two professions with data, found {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let mut degenerate = None;
    let fit = if constant(&xs) {
        degenerate = Some("degenerate: constant representation".to_string());
        None
    } else {
        Some(linear_fit(&xs, &ys)?)
    };
    if degenerate.is_none() && constant(&ys) {
        degenerate = Some(format!("degenerate: constant {y_name}"));
    }
    let r = if degenerate.is_some() { 0.0 } else { pearson_r(&xs, &ys)? };
    let value = match statistic {
        Statistic::PearsonR => r,
        Statistic::Slope => fit.map_or(0.0, |f| f.slope),
    };
    Ok(CorrelationReport {
        metric: metric.to_string(),
        statistic,
        value,
        pearson_r: r,
        fit,
        degenerate,
        points,
        warnings,
    })
}

fn check_skips(metric: &str, skipped: usize, total: usize) -> Result<()> {
    if total > 0 && skipped as f64 > MAX_SKIP_FRACTION * total as f64 {
        return Err(Error::invalid(format!(
            "{metric}: {skipped} of {total} items name professions missing from the profession table"
        )));
    }
    Ok(())
}

fn missing_warnings(missing: &BTreeMap<String, usize>) -> Vec<String> {
    missing
        .iter()
        .map(|(p, n)| format!("profession `{p}` not in profession table; {n} items skipped"))
        .collect()
}

/// Pearson r between the share of women and the per-profession mean of
/// score(man pair) - score(woman pair).
pub fn sts_gender(couples: &[StsCouple], scorer: &Scorer, bls: &BlsTable) -> Result<CorrelationReport> {
    if couples.is_empty() {
        return Err(Error::invalid("sts_gender: no sentence pairs"));
    }
    let mut missing: BTreeMap<String, usize> = BTreeMap::new();
    let kept: Vec<&StsCouple> = couples
        .iter()
        .filter(|c| {
            let present = bls.get(&c.profession().to_lowercase()).is_some();
            if !present {
                *missing.entry(c.profession().to_string()).or_default() += 1;
            }
            present
        })
        .collect();
    check_skips("sts_gender", couples.len() - kept.len(), couples.len())?;
    let queries: Vec<(String, String)> = kept
        .iter()
        .flat_map(|c| {
            [
                (c.man.sentence_1.clone(), c.man.sentence_2.clone()),
                (c.woman.sentence_1.clone(), c.woman.sentence_2.clone()),
            ]
        })
        .collect();
    let scores = scorer
        .query_pair_scores_many(&queries)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut by_profession: BTreeMap<String, (CompensatedSum, usize)> = BTreeMap::new();
    for (c, pair) in kept.iter().zip(scores.chunks(2)) {
        let d = pair[0].score - pair[1].score;
        let slot = by_profession.entry(c.profession().to_lowercase()).or_default();
        slot.0.add(d);
        slot.1 += 1;
    }
    let points = by_profession
        .into_iter()
        .map(|(p, (sum, n))| Point {
            x: bls.get(&p).expect("filtered above"),
            y: sum.total() / n as f64,
            label: p,
            n,
        })
        .collect();
    correlation_report("sts_gender", Statistic::PearsonR, points, "differences", missing_warnings(&missing))
}

/// One WinoGender-style coreference probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinoExample {
    pub id: String,
    pub context: String,
    pub pronoun: [usize; 2],
    pub antecedent: [usize; 2],
    pub profession: String,
    pub pronoun_gender: GenderLabel,
}

/// Read `id, context, pronoun_start, pronoun_end, antecedent_start,
/// antecedent_end, profession, pronoun_gender` tab-separated rows.
pub fn load_winogender<R: BufRead>(source: R) -> Result<Vec<WinoExample>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::parse(line_no, format!("expected 8 tab-separated fields, found {}", f.len())));
        }
        let offsets: std::result::Result<Vec<usize>, _> = f[2..6].iter().map(|s| s.trim().parse::<usize>()).collect();
        let offsets = match offsets {
            Ok(o) => o,
            Err(_) if out.is_empty() && f[0].trim().eq_ignore_ascii_case("id") => continue,
            Err(e) => return Err(Error::parse(line_no, format!("bad offset: {e}"))),
        };
        out.push(WinoExample {
            id: f[0].trim().to_string(),
            context: f[1].to_string(),
            pronoun: [offsets[0], offsets[1]],
            antecedent: [offsets[2], offsets[3]],
            profession: f[6].trim().to_lowercase(),
            pronoun_gender: GenderLabel::parse(f[7]).map_err(|e| Error::parse(line_no, e.to_string()))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefOptions {
    /// Turn probabilities into hard decisions (`p >= threshold` counts 1).
    pub threshold: Option<f64>,
}

/// Pearson r between the share of women and the mean probability that a
/// female pronoun corefers with the profession.
pub fn coref_gender(
    examples: &[WinoExample],
    scorer: &Scorer,
    bls: &BlsTable,
    opts: &CorefOptions,
) -> Result<CorrelationReport> {
    let female: Vec<&WinoExample> = examples.iter().filter(|e| e.pronoun_gender.is_female()).collect();
    if female.is_empty() {
        return Err(Error::invalid("coref_gender: no female-pronoun examples"));
    }
    let mut missing: BTreeMap<String, usize> = BTreeMap::new();
    let kept: Vec<&WinoExample> = female
        .into_iter()
        .filter(|e| {
            let present = bls.get(&e.profession).is_some();
            if !present {
                *missing.entry(e.profession.clone()).or_default() += 1;
            }
            present
        })
        .collect();
    let total = kept.len() + missing.values().sum::<usize>();
    check_skips("coref_gender", total - kept.len(), total)?;
    let reqs: Vec<CorefRequest> = kept
        .iter()
        .map(|e| CorefRequest {
            text: e.context.clone(),
            pronoun: e.pronoun,
            antecedent: e.antecedent,
        })
        .collect();
    let mut by_profession: BTreeMap<String, (CompensatedSum, usize)> = BTreeMap::new();
    for (e, score) in kept.iter().zip(scorer.query_coref_many(&reqs)) {
        let p = score
            .map_err(|err| match err {
                Error::InvalidInput(msg) => Error::invalid(format!("example {}: {msg}", e.id)),
                other => other,
            })?
            .p;
        let p = match opts.threshold {
            Some(t) => f64::from(u8::from(p >= t)),
            None => p,
        };
        let slot = by_profession.entry(e.profession.clone()).or_default();
        slot.0.add(p);
        slot.1 += 1;
    }
    let points = by_profession
        .into_iter()
        .map(|(p, (sum, n))| Point {
            x: bls.get(&p).expect("filtered above"),
            y: sum.total() / n as f64,
            label: p,
            n,
        })
        .collect();
    correlation_report("coref_gender", Statistic::PearsonR, points, "scores", missing_warnings(&missing))
}

/// One line of a Bias-in-Bios prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiosRecord {
    pub id: Value,
    pub gold: String,
    pub gender: GenderLabel,
    #[serde(default)]
    pub pred: String,
}

/// Read a JSON-lines log of `{id, gold, gender, pred}` records. `pred` may
/// be omitted in training logs.
pub fn load_bios_log<R: BufRead>(source: R) -> Result<Vec<BiosRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: BiosRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("bios record: {e}")))?;
        rec.gender = GenderLabel::parse(rec.gender.as_str()).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Share of women per gold profession in a training log.
pub fn estimate_profession_stats(records: &[BiosRecord]) -> Result<BTreeMap<String, f64>> {
    if records.is_empty() {
        return Err(Error::invalid("profession statistics need a nonempty log"));
    }
    let mut counts: BTreeMap<&str, [u64; 2]> = BTreeMap::new();
    for r in records {
        let slot = counts.entry(r.gold.as_str()).or_default();
        if r.gender.is_female() {
            slot[0] += 1;
        } else if r.gender.is_male() {
            slot[1] += 1;
        } else {
            return Err(Error::invalid(format!(
                "record {} has non-binary gender label `{}`",
                r.id, r.gender
            )));
        }
    }
    Ok(counts
        .into_iter()
        .map(|(p, [f, m])| (p.to_string(), f as f64 / (f + m) as f64))
        .collect())
}

/// Slope of TPR(female) - TPR(male) against the share of women per
/// profession.
pub fn bios_gap(log: &[BiosRecord], profession_stats: &BTreeMap<String, f64>) -> Result<CorrelationReport> {
    if log.is_empty() {
        return Err(Error::invalid("bios_gap: empty prediction log"));
    }
    // [female gold, female correct, male gold, male correct]
    let mut counts: BTreeMap<&str, [u64; 4]> = BTreeMap::new();
    let mut other_labels = 0usize;
    for r in log {
        let slot = counts.entry(r.gold.as_str()).or_default();
        let correct = u64::from(r.pred == r.gold);
        if r.gender.is_female() {
            slot[0] += 1;
            slot[1] += correct;
        } else if r.gender.is_male() {
            slot[2] += 1;
            slot[3] += correct;
        } else {
            other_labels += 1;
        }
    }
    let mut warnings = Vec::new();
    if other_labels > 0 {
        warnings.push(format!("{other_labels} records with non-binary gender labels ignored"));
    }
    let mut points = Vec::new();
    for (p, [fg, fc, mg, mc]) in counts {
        let Some(&x) = profession_stats.get(p) else {
            warnings.push(format!("profession `{p}` has no statistics entry; skipped"));
            continue;
        };
        if fg == 0 || mg == 0 {
            warnings.push(format!("profession `{p}` lacks gold examples for one gender; skipped"));
            continue;
        }
        let gap = fc as f64 / fg as f64 - mc as f64 / mg as f64;
        points.push(Point {
            label: p.to_string(),
            x,
            y: gap,
            n: (fg + mg) as usize,
        });
    }
    if points.is_empty() {
        return Err(Error::invalid("bios_gap: every profession was skipped"));
    }
    correlation_report("bios_gap", Statistic::Slope, points, "gaps", warnings)
}

// -------------------------------------------------------------- accuracy

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum AccuracyTask {
    Classification,
    BinaryF1 { positive: String },
    RegressionPearson,
}

impl AccuracyTask {
    pub fn name(&self) -> &'static str {
        match self {
            AccuracyTask::Classification => "classification",
            AccuracyTask::BinaryF1 { .. } => "binary_f1",
            AccuracyTask::RegressionPearson => "regression_pearson",
        }
    }
}

/// One line of a generic prediction log: `{id?, gold, pred}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default)]
    pub id: Value,
    pub gold: Value,
    pub pred: Value,
}

pub fn load_prediction_log<R: BufRead>(source: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("prediction record: {e}")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub task: String,
    pub value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
}

fn label_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn number_of(v: &Value, id: &Value) -> Result<f64> {
    let n = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    n.filter(|x: &f64| x.is_finite())
        .ok_or_else(|| Error::invalid(format!("record {id}: `{v}` is not a number")))
}

/// Accuracy, binary F1 or Pearson r from a prediction log.
pub fn accuracy_from_log(log: &[PredictionRecord], task: &AccuracyTask) -> Result<AccuracyReport> {
    if log.is_empty() {
        return Err(Error::invalid("accuracy: empty prediction log"));
    }
    let n = log.len();
    let mut degenerate = None;
    let value = match task {
        AccuracyTask::Classification => {
            log.iter().filter(|r| label_of(&r.gold) == label_of(&r.pred)).count() as f64 / n as f64
        }
        AccuracyTask::BinaryF1 { positive } => {
            let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
            for r in log {
                let gold = label_of(&r.gold) == *positive;
                let pred = label_of(&r.pred) == *positive;
                match (gold, pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    (false, false) => {}
                }
            }
            if tp + fp + fneg == 0 {
                degenerate = Some("degenerate: no positive gold or predicted labels".to_string());
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
            }
        }
        AccuracyTask::RegressionPearson => {
            let gold = log.iter().map(|r| number_of(&r.gold, &r.id)).collect::<Result<Vec<_>>>()?;
            let pred = log.iter().map(|r| number_of(&r.pred, &r.id)).collect::<Result<Vec<_>>>()?;
            if constant(&gold) || constant(&pred) {
                degenerate = Some("degenerate: constant scores".to_string());
                0.0
            } else {
                pearson_r(&gold, &pred)?
            }
        }
    };
    Ok(AccuracyReport {
        task: task.name().to_string(),
        value,
        n,
        degenerate,
    })
}

// --------------------------------------------------------------- results

pub const SCHEMA_VERSION: u32 = 1;

/// Whether lower or higher values are preferable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Higher,
}

/// Metric detail of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RunDetail {
    Disco(DiscoResult),
    NullCalibration { seed: u64, trials: usize, values: Vec<f64>, mean: f64, max: f64 },
    Correlation(CorrelationReport),
    Accuracy(AccuracyReport),
}

impl RunDetail {
    pub fn value(&self) -> f64 {
        match self {
            RunDetail::Disco(r) => r.value,
            RunDetail::NullCalibration { mean, .. } => *mean,
            RunDetail::Correlation(r) => r.value,
            RunDetail::Accuracy(r) => r.value,
        }
    }

    pub fn null_calibration(seed: u64, values: Vec<f64>) -> Self {
        let mean = crate::stats::mean(&values).unwrap_or(0.0);
        let max = values.iter().copied().fold(0.0, f64::max);
        RunDetail::NullCalibration {
            seed,
            trials: values.len(),
            values,
            mean,
            max,
        }
    }
}

/// A metric over one or more restarts: what the CLI writes and `report`
/// reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub schema_version: u32,
    pub metric: String,
    /// Display name for tables, e.g. `DisCo (Names)`.
    pub display_name: String,
    pub direction: Direction,
    /// Decimals used when rendering the value.
    pub decimals: usize,
    /// Column label for tables, normally the model id.
    pub model: String,
    pub summary: RestartSummary,
    pub runs: Vec<RunDetail>,
    pub manifest: crate::manifest::RunManifest,
}

impl MetricResult {
    /// Combine per-restart details into one result.
    pub fn from_runs(
        metric: &str,
        display_name: &str,
        direction: Direction,
        decimals: usize,
        model: &str,
        runs: Vec<RunDetail>,
        manifest: crate::manifest::RunManifest,
    ) -> Result<Self> {
        let values: Vec<f64> = runs.iter().map(RunDetail::value).collect();
        Ok(MetricResult {
            schema_version: SCHEMA_VERSION,
            metric: metric.to_string(),
            display_name: display_name.to_string(),
            direction,
            decimals,
            model: model.to_string(),
            summary: aggregate_restarts(&values)?,
            runs,
            manifest,
        })
    }

    pub fn value(&self) -> f64 {
        self.summary.mean
    }

    /// Correlation points of the first run, if it is a correlation metric.
    pub fn correlation(&self) -> Option<&CorrelationReport> {
        self.runs.iter().find_map(|r| match r {
            RunDetail::Correlation(c) => Some(c),
            _ => None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metric result serializes");
        s.push('\n');
        s
    }

    /// Parse and schema-check a metric document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        match raw.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::invalid(format!(
                    "schema_version {v} not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::invalid("missing schema_version")),
        }
        Ok(serde_json::from_value(raw)?)
    }
}
