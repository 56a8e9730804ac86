//! Acceptance checks. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero when any criterion fails. Reference values come from
//! oracles written here, independent of the library code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gencorr::backend::{Backend, CorefRule, Fill, FillRequest, FillRule, PairRule, Scorer, ToyModel, ToyModelSpec};
use gencorr::cda::{
    counterfactual_sentence, rewrite_corpus, rewrite_names, write_record, CdaConfig, CdaMode, CorpusFormat,
    CorpusRecord, NamePolicy, NameReplacement, PolicyKind,
};
use gencorr::lexicon::{bundled_name_lexicon, bundled_pair_lexicon, GenderLabel, NameSplit, PairLexicon};
use gencorr::manifest::RunManifest;
use gencorr::metrics::{
    bios_gap, bundled_bls_table, coref_gender, disco, disco_null_calibration, name_persons, sts_gender, AccuracyReport,
    BiosRecord, BlsTable, CorefOptions, CorrelationReport, Correction, Direction, DiscoOptions, DiscoResult,
    MetricResult, PersonEntry, RunDetail, Statistic, WinoExample,
};
use gencorr::report::{scatter_svg, ComparisonTable};
use gencorr::stats::{chi_square_2x2, chi_square_p, linear_fit, ContingencyTable};
use gencorr::templates::{build_sts_templates, bundled_disco_templates, instantiate_sts_pairs, DiscoTemplate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "chi-square statistic and p-value", limit: Some(Duration::from_secs(5)), check: chi_square },
        Criterion { name: "DisCo equals brute-force oracle", limit: Some(Duration::from_secs(30)), check: disco_oracle },
        Criterion { name: "DisCo random-group calibration", limit: Some(Duration::from_secs(60)), check: null_calibration },
        Criterion { name: "STS-B template mining", limit: None, check: sts_mining },
        Criterion { name: "correlation metrics on linear fixtures", limit: Some(Duration::from_secs(10)), check: linear_fixtures },
        Criterion { name: "CDA counting invariants", limit: None, check: cda_counts },
        Criterion { name: "name-policy statistics", limit: None, check: name_policies },
        Criterion { name: "report determinism and bolding", limit: None, check: report_determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        let limit = c.limit.map(|l| format!(", limit {}s", l.as_secs())).unwrap_or_default();
        match outcome {
            Ok(detail) => println!("PASS  {} ({:.2}s{limit}): {detail}", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {} ({:.2}s{limit}): {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

/// Sum over cells of (observed - expected)^2 / expected.
fn chi2_oracle(cells: [u64; 4]) -> Option<f64> {
    let [a, b, c, d] = cells.map(|v| v as f64);
    let n = a + b + c + d;
    let rows = [a + b, c + d];
    let cols = [a + c, b + d];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return None;
    }
    let observed = [[a, b], [c, d]];
    let mut total = 0.0;
    for (i, row) in observed.iter().enumerate() {
        for (j, o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / n;
            total += (o - e) * (o - e) / e;
        }
    }
    Some(total)
}

/// Upper tail of the 1-dof chi-square distribution by composite Simpson
/// quadrature. With t = u^2 the tail is 2 * integral of the standard normal
/// density over [sqrt(x), inf).
fn p_oracle(x: f64) -> f64 {
    let lo = x.sqrt();
    let hi = lo + 40.0;
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let f = |u: f64| (-0.5 * u * u).exp();
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    2.0 * s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

// ---------------------------------------------------------------- criteria

fn chi_square() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20200601);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 1000 {
        let scale = *[5u64, 50, 500, 5000].choose(&mut rng).unwrap();
        let cells = [(); 4].map(|_| rng.random_range(0..=scale));
        let Some(want) = chi2_oracle(cells) else { continue };
        let got = chi_square_2x2(&ContingencyTable::new(cells[0], cells[1], cells[2], cells[3]))
            .map_err(|e| format!("{cells:?}: {e}"))?
            .statistic;
        let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
        ensure!(rel <= 1e-9, "table {cells:?}: statistic {got} vs oracle {want}");
        worst = worst.max(rel);
        checked += 1;
    }
    let mut p_detail = Vec::new();
    for (x, nominal) in [(3.841459, 0.05), (6.634897, 0.01)] {
        let got = chi_square_p(x, 1).map_err(|e| e.to_string())?;
        let oracle = p_oracle(x);
        ensure!((got - nominal).abs() <= 1e-6, "p({x}) = {got}, expected {nominal}");
        ensure!((got - oracle).abs() <= 1e-6, "p({x}) = {got}, quadrature gives {oracle}");
        p_detail.push(format!("p({x})={got:.9}"));
    }
    Ok(format!("1000 tables, max rel err {worst:.1e}; {}", p_detail.join(", ")))
}

fn random_spec(rng: &mut ChaCha8Rng, index: usize) -> (ToyModelSpec, Vec<DiscoTemplate>, Vec<PersonEntry>) {
    let vocab = [
        "music", "art", "math", "law", "sports", "cooking", "dance", "poetry", "chess", "physics", "history", "travel",
        "medicine", "finance", "design",
    ];
    let pool: Vec<String> = bundled_name_lexicon().entries().iter().map(|e| e.name.clone()).collect();
    let n_persons = rng.random_range(6..=40);
    let mut names: Vec<String> = pool.choose_multiple(rng, n_persons).cloned().collect();
    names.sort();
    let mut labels: Vec<GenderLabel> = (0..n_persons)
        .map(|i| if i < 2 { GenderLabel::female() } else if i < 4 { GenderLabel::male() } else if rng.random_bool(0.5) { GenderLabel::female() } else { GenderLabel::male() })
        .collect();
    labels.shuffle(rng);
    let persons: Vec<PersonEntry> = names.iter().zip(&labels).map(|(n, l)| PersonEntry::new(n.clone(), l.clone())).collect();

    let mut all_templates = bundled_disco_templates();
    all_templates.shuffle(rng);
    let templates: Vec<DiscoTemplate> = all_templates.into_iter().take(rng.random_range(2..=8)).collect();

    let random_fills = |rng: &mut ChaCha8Rng| -> Vec<Fill> {
        let n = rng.random_range(3..=6);
        vocab
            .choose_multiple(rng, n)
            .map(|w| Fill { token: w.to_string(), score: rng.random_range(0.01..1.0) })
            .collect()
    };
    let mut fill_rules = Vec::new();
    for t in &templates {
        for label in ["female", "male"] {
            if rng.random_bool(0.6) {
                fill_rules.push(FillRule {
                    sentence: None,
                    template: Some(t.id.clone()),
                    person: None,
                    label: Some(label.into()),
                    fills: random_fills(rng),
                });
            }
        }
    }
    for p in &persons {
        if rng.random_bool(0.2) {
            fill_rules.push(FillRule {
                sentence: None,
                template: None,
                person: Some(p.surface.clone()),
                label: None,
                fills: random_fills(rng),
            });
        }
    }
    let spec = ToyModelSpec {
        model_id: format!("toy-random-{index}"),
        seed: index as u64,
        templates: templates.clone(),
        persons: persons.iter().map(|p| (p.surface.clone(), p.label.as_str().to_string())).collect(),
        fill_rules,
        default_fills: vocab.iter().map(|w| Fill { token: w.to_string(), score: rng.random_range(0.0..0.01) }).collect(),
        ..ToyModelSpec::default()
    };
    (spec, templates, persons)
}

/// Brute-force DisCo: query every sentence directly, enumerate every
/// (template, fill) table, oracle chi-square and a global Bonferroni bound.
fn disco_brute_force(
    model: &ToyModel,
    templates: &[DiscoTemplate],
    persons: &[PersonEntry],
    k: usize,
    alpha: f64,
) -> (f64, Vec<usize>, usize) {
    let female: Vec<bool> = persons.iter().map(|p| p.label.is_female()).collect();
    let mut per_template: Vec<Vec<(u64, u64, u64, u64)>> = Vec::new();
    for t in templates {
        let mut sets = Vec::new();
        for p in persons {
            let mut surface = p.surface.clone();
            if t.text.starts_with("[PERSON]") {
                let mut chars = surface.chars();
                surface = chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default();
            }
            let mut text = t.text.replacen("[BLANK]", "[MASK]", 1).replacen("[PERSON]", &surface, 1);
            if !text.ends_with(['.', '!', '?']) {
                text.push('.');
            }
            let resp = model.fill(&FillRequest { text, mask_token: "[MASK]".into(), k }).unwrap();
            let mut fills = resp.fills.clone();
            fills.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.token.cmp(&b.token)));
            let top: BTreeSet<String> = fills.into_iter().take(k).map(|f| f.token).collect();
            sets.push(top);
        }
        let distinct: BTreeSet<&String> = sets.iter().flatten().collect();
        let tables = distinct
            .into_iter()
            .map(|fill| {
                let mut t = (0, 0, 0, 0);
                for (set, &is_f) in sets.iter().zip(&female) {
                    match (is_f, set.contains(fill)) {
                        (true, true) => t.0 += 1,
                        (true, false) => t.1 += 1,
                        (false, true) => t.2 += 1,
                        (false, false) => t.3 += 1,
                    }
                }
                t
            })
            .collect();
        per_template.push(tables);
    }
    let m: usize = per_template.iter().map(Vec::len).sum();
    let counts: Vec<usize> = per_template
        .iter()
        .map(|tables| {
            tables
                .iter()
                .filter(|&&(a, b, c, d)| chi2_oracle([a, b, c, d]).is_some_and(|x| p_oracle(x) < alpha / m as f64))
                .count()
        })
        .collect();
    let value = counts.iter().sum::<usize>() as f64 / templates.len() as f64;
    (value, counts, m)
}

fn disco_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nonzero = 0;
    let specs = 24;
    for i in 0..specs {
        let (spec, templates, persons) = random_spec(&mut rng, i);
        let k = *[1usize, 2, 3, 3, 5].choose(&mut rng).unwrap();
        let alpha = *[0.05, 0.01, 0.1].choose(&mut rng).unwrap();
        let model = ToyModel::new(spec).map_err(|e| e.to_string())?;
        let (want, want_counts, want_m) = disco_brute_force(&model, &templates, &persons, k, alpha);
        let scorer = Scorer::new(Arc::new(model));
        let opts = DiscoOptions { k, alpha, correction: Correction::Global, min_expected: None };
        let got: DiscoResult = disco(&templates, &persons, &scorer, &opts).map_err(|e| format!("spec {i}: {e}"))?;
        let got_counts: Vec<usize> = got.templates.iter().map(|t| t.significant.len()).collect();
        ensure!(got.value == want, "spec {i}: DisCo {} vs oracle {want}", got.value);
        ensure!(got_counts == want_counts, "spec {i}: per-template {got_counts:?} vs oracle {want_counts:?}");
        ensure!(got.total_tests == want_m, "spec {i}: m = {} vs oracle {want_m}", got.total_tests);
        if want > 0.0 {
            nonzero += 1;
        }
    }
    ensure!(nonzero >= 5, "only {nonzero} specs had a non-zero DisCo; fixtures too weak");
    Ok(format!("{specs} seeded specs equal, {nonzero} with non-zero DisCo"))
}

fn biased_names_model() -> (ToyModel, Vec<DiscoTemplate>, Vec<PersonEntry>) {
    let persons = name_persons(&bundled_name_lexicon());
    let templates = bundled_disco_templates();
    let mut spec = ToyModelSpec::builtin();
    spec.model_id = "toy-biased".into();
    spec.persons = persons.iter().map(|p| (p.surface.clone(), p.label.as_str().to_string())).collect();
    spec.fill_rules.push(FillRule {
        sentence: None,
        template: None,
        person: None,
        label: Some("female".into()),
        fills: vec![
            Fill { token: "dance".into(), score: 0.9 },
            Fill { token: "music".into(), score: 0.8 },
            Fill { token: "poetry".into(), score: 0.7 },
        ],
    });
    (ToyModel::new(spec).unwrap(), templates, persons)
}

fn null_calibration() -> Outcome {
    let (model, templates, persons) = biased_names_model();
    let scorer = Scorer::new(Arc::new(model));
    let opts = DiscoOptions::default();
    let gendered = disco(&templates, &persons, &scorer, &opts).map_err(|e| e.to_string())?.value;
    let values = disco_null_calibration(&templates, &persons, &scorer, &opts, 2020, 100).map_err(|e| e.to_string())?;
    ensure!(values.len() == 100, "{} trials", values.len());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().cloned().fold(0.0, f64::max);
    ensure!(gendered >= 1.0, "gendered groups give DisCo {gendered}, want >= 1.0");
    ensure!(mean <= 0.1, "random-group mean {mean}, want <= 0.1");
    ensure!(max <= 0.2, "random-group max {max}, want <= 0.2");
    Ok(format!("gendered {gendered:.1}; 100 random trials mean {mean:.3}, max {max:.1}"))
}

const STS_FIXTURE: &[(&str, bool)] = &[
    ("A man is playing a guitar.", true),
    ("A woman is slicing an onion.", true),
    ("A man is talking to his wife.", false),
    ("A woman is brushing her hair.", false),
    ("A man is riding a horse.", true),
    ("A man is riding a horse.", true),
    ("The man is cutting paper.", false),
    ("A boy is jumping on a trampoline.", false),
    ("A woman and a man are dancing.", false),
    ("A man is playing with his son.", false),
    ("A woman is cooking.", true),
    ("A man's dog is barking.", false),
    ("a man is swimming.", false),
    ("A woman is peeling a potato.", true),
    ("A man is talking to a girl.", false),
    ("A woman is playing the flute.", true),
    ("A man is shooting a gun.", true),
    ("A woman is dancing by herself.", false),
    ("A man is bowing to the king.", false),
    ("A woman is slicing an onion.", true),
];

fn canonical_sts_path() -> Option<PathBuf> {
    std::env::var_os("GENCORR_STS_TEST")
        .map(PathBuf::from)
        .or_else(|| Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sts-test.csv")))
        .filter(|p| p.is_file())
}

fn sts_mining() -> Outcome {
    let lex = bundled_pair_lexicon();
    let mut file = String::new();
    for (i, (sentence, _)) in STS_FIXTURE.iter().enumerate() {
        file.push_str(&format!("main-captions\tMSRvid\t2012test\t{i:04}\t2.5\t{sentence}\tSomeone is outside.\n"));
    }
    let mined = build_sts_templates(file.as_bytes(), &lex).map_err(|e| e.to_string())?;
    let got: BTreeSet<&str> = mined.templates.iter().map(|t| t.source_sentence.as_str()).collect();
    let want: BTreeSet<&str> = STS_FIXTURE.iter().filter(|(_, keep)| *keep).map(|(s, _)| *s).collect();
    ensure!(got == want, "fixture kept {got:?}, hand labels {want:?}");
    ensure!(mined.templates.len() == want.len(), "duplicates survived");
    let fixture = format!("20-line fixture matches hand labels ({} kept)", want.len());

    let Some(path) = canonical_sts_path() else {
        return Err(format!(
            "{fixture}; canonical STS-B test file not available (set GENCORR_STS_TEST or add data/sts-test.csv), 276-template count unverified"
        ));
    };
    let reader = std::io::BufReader::new(std::fs::File::open(&path).map_err(|e| e.to_string())?);
    let mined = build_sts_templates(reader, &lex).map_err(|e| e.to_string())?;
    ensure!(mined.templates.len() == 276, "{fixture}; canonical file gives {} templates, want 276", mined.templates.len());
    Ok(format!("{fixture}; canonical file gives 276 templates"))
}

/// Deterministic noise with mean 0, orthogonal to `xs`, sample std `sd`.
fn orthogonal_noise(xs: &[f64], sd: f64) -> Vec<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let cx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let z: Vec<f64> = (0..xs.len()).map(|i| ((i as f64 + 1.0) * 1.618).sin()).collect();
    let mz = z.iter().sum::<f64>() / n;
    let z: Vec<f64> = z.iter().map(|v| v - mz).collect();
    let beta = z.iter().zip(&cx).map(|(a, b)| a * b).sum::<f64>() / cx.iter().map(|v| v * v).sum::<f64>();
    let e: Vec<f64> = z.iter().zip(&cx).map(|(a, b)| a - beta * b).collect();
    let s = (e.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
    e.iter().map(|v| v * sd / s).collect()
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sample r of y = a + b x + e when e is orthogonal to x.
fn planted_r(xs: &[f64], b: f64, noise_sd: f64) -> f64 {
    let bs = b * sample_sd(xs);
    bs / (bs * bs + noise_sd * noise_sd).sqrt()
}

fn sts_fixture(bls: &BlsTable, slope: f64, noise_sd: f64) -> Result<(f64, f64), String> {
    let lex = bundled_pair_lexicon();
    let file = "a\tb\tc\t1\t5.0\tA man is reading a book.\tx\na\tb\tc\t2\t5.0\tA woman is walking outside.\tx\n";
    let mined = build_sts_templates(file.as_bytes(), &lex).map_err(|e| e.to_string())?;
    let professions = bls.professions();
    let xs: Vec<f64> = professions.iter().map(|p| bls.get(p).unwrap()).collect();
    let noise = orthogonal_noise(&xs, noise_sd);
    let mut spec = ToyModelSpec::builtin();
    for (ti, t) in mined.templates.iter().enumerate() {
        let offset = if ti == 0 { 0.1 } else { -0.1 };
        for couple in instantiate_sts_pairs(t, &professions) {
            let i = professions.iter().position(|p| p == couple.profession()).unwrap();
            let d = 0.5 + slope * xs[i] + noise[i] + offset;
            for (pair, score) in [(&couple.man, 2.5 + d / 2.0), (&couple.woman, 2.5 - d / 2.0)] {
                spec.pair_rules.push(PairRule { s1: pair.sentence_1.clone(), s2: pair.sentence_2.clone(), score });
            }
        }
    }
    let couples: Vec<_> = mined.templates.iter().flat_map(|t| instantiate_sts_pairs(t, &professions)).collect();
    let scorer = Scorer::new(Arc::new(ToyModel::new(spec).map_err(|e| e.to_string())?));
    let report = sts_gender(&couples, &scorer, bls).map_err(|e| e.to_string())?;
    Ok((report.value, planted_r(&xs, slope, noise_sd)))
}

fn coref_fixture(bls: &BlsTable, slope: f64, noise_sd: f64) -> Result<(f64, f64), String> {
    let professions: Vec<String> = bls.professions().into_iter().filter(|p| !p.contains(' ')).collect();
    let table = BlsTable { pct_female: professions.iter().map(|p| (p.clone(), bls.get(p).unwrap())).collect() };
    let xs: Vec<f64> = professions.iter().map(|p| table.get(p).unwrap()).collect();
    let noise = orthogonal_noise(&xs, noise_sd);
    let mut spec = ToyModelSpec::builtin();
    let mut examples = Vec::new();
    for (i, p) in professions.iter().enumerate() {
        spec.coref_rules.push(CorefRule {
            profession: Some(p.clone()),
            pronoun: Some("she".into()),
            p: 0.3 + slope * xs[i] + noise[i],
        });
        spec.coref_rules.push(CorefRule { profession: Some(p.clone()), pronoun: Some("he".into()), p: 0.9 });
        for (pronoun, label) in [("she", GenderLabel::female()), ("he", GenderLabel::male())] {
            let context = format!("The {p} said that {pronoun} was tired.");
            let start = context.find(&format!(" {pronoun} ")).unwrap() + 1;
            examples.push(WinoExample {
                id: format!("{p}-{pronoun}"),
                context,
                pronoun: [start, start + pronoun.len()],
                antecedent: [4, 4 + p.chars().count()],
                profession: p.clone(),
                pronoun_gender: label,
            });
        }
    }
    let scorer = Scorer::new(Arc::new(ToyModel::new(spec).map_err(|e| e.to_string())?));
    let report = coref_gender(&examples, &scorer, &table, &CorefOptions::default()).map_err(|e| e.to_string())?;
    Ok((report.value, planted_r(&xs, slope, noise_sd)))
}

fn bios_fixture(slope: f64, noise_sd: f64) -> Result<(f64, f64), String> {
    let n = 10_000u64;
    let fractions: Vec<f64> = (1..=45).map(|i| i as f64 * 0.02).collect();
    let noise = orthogonal_noise(&fractions, noise_sd);
    let mut log = Vec::new();
    let mut stats = BTreeMap::new();
    for (i, f) in fractions.iter().enumerate() {
        let prof = format!("job{i:02}");
        stats.insert(prof.clone(), *f);
        let gap = slope * (f - 0.46) + noise[i];
        for (gender, tpr) in [(GenderLabel::female(), 0.5 + gap / 2.0), (GenderLabel::male(), 0.5 - gap / 2.0)] {
            let correct = (tpr * n as f64).round() as u64;
            for j in 0..n {
                log.push(BiosRecord {
                    id: Value::from(log.len()),
                    gold: prof.clone(),
                    gender: gender.clone(),
                    pred: if j < correct { prof.clone() } else { "other".into() },
                });
            }
        }
    }
    let report = bios_gap(&log, &stats).map_err(|e| e.to_string())?;
    ensure!(report.statistic == Statistic::Slope, "bios_gap reports {:?}", report.statistic);
    Ok((report.value, slope))
}

fn linear_fixtures() -> Outcome {
    let bls = bundled_bls_table();
    let mut lines = Vec::new();
    let cases: [(&str, Box<dyn Fn(f64, f64) -> Result<(f64, f64), String>>, f64, f64, f64); 3] = [
        ("sts_gender r", Box::new(|b, sd| sts_fixture(&bls, b, sd)), -0.01, 0.0, 0.3),
        ("coref_gender r", Box::new(|b, sd| coref_fixture(&bls, b, sd)), 0.005, 0.0, 0.08),
        ("bios_gap slope", Box::new(bios_fixture), 0.5, 0.0, 0.05),
    ];
    for (name, run, slope, clean_sd, noisy_sd) in &cases {
        let (got, want) = run(*slope, *clean_sd)?;
        ensure!((got - want).abs() <= 1e-9, "{name}: noise-free gives {got}, planted {want}");
        let (got_noisy, want_noisy) = run(*slope, *noisy_sd)?;
        ensure!((got_noisy - want_noisy).abs() <= 0.02, "{name}: noisy gives {got_noisy}, planted {want_noisy}");
        lines.push(format!("{name} {got:.4}/{want:.4}, noisy {got_noisy:.4}/{want_noisy:.4}"));
    }
    Ok(lines.join("; "))
}

fn involutive_vocab(lex: &PairLexicon) -> (Vec<String>, Vec<String>) {
    let mut gendered = Vec::new();
    let mut lexicon_tokens = BTreeSet::new();
    for p in lex.pairs() {
        for w in [&p.word_a, &p.word_b] {
            lexicon_tokens.extend(w.split_whitespace().map(str::to_lowercase));
            if !w.contains(' ') && lex.partner(w).and_then(|q| lex.partner(q)) == Some(w.as_str()) {
                gendered.push(w.to_lowercase());
            }
        }
    }
    gendered.sort();
    gendered.dedup();
    let neutral = [
        "the", "a", "dog", "ran", "quickly", "table", "green", "over", "river", "city", "book", "blue", "sang", "apple",
        "under", "bright", "window", "slowly", "garden", "bridge", "yellow", "cloud", "stone", "paper",
    ]
    .iter()
    .map(|w| w.to_string())
    .filter(|w| !lexicon_tokens.contains(w))
    .collect();
    (gendered, neutral)
}

fn cda_counts() -> Outcome {
    let lex = bundled_pair_lexicon();
    let (gendered, neutral) = involutive_vocab(&lex);
    ensure!(neutral.len() >= 20, "neutral vocabulary overlaps the lexicon");
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let n = 10_000;
    let mut corpus = Vec::with_capacity(n);
    let mut matches = 0u64;
    for _ in 0..n {
        let mut words: Vec<String> = (0..rng.random_range(4..12)).map(|_| neutral.choose(&mut rng).unwrap().clone()).collect();
        if rng.random_bool(0.3) {
            matches += 1;
            for _ in 0..rng.random_range(1..=3) {
                let at = rng.random_range(0..=words.len());
                words.insert(at, gendered.choose(&mut rng).unwrap().clone());
            }
        }
        let mut s = words.join(" ");
        s.replace_range(0..1, &s[0..1].to_uppercase());
        s.push('.');
        corpus.push(s);
    }
    let mut counts = BTreeMap::new();
    for mode in [CdaMode::TwoSided, CdaMode::OneSided] {
        let records = corpus.iter().map(|s| Ok(CorpusRecord::plain(s.clone())));
        let mut out = 0u64;
        let mut flagged = 0u64;
        let stats = rewrite_corpus(records, &lex, &CdaConfig::new(mode, 0), 4, |r| {
            out += 1;
            flagged += u64::from(r.counterfactual);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        ensure!(stats.sentences_with_matches == matches, "{mode:?}: {} matches, planted {matches}", stats.sentences_with_matches);
        ensure!(flagged == matches, "{mode:?}: {flagged} counterfactuals, planted {matches}");
        counts.insert(format!("{mode:?}"), out);
    }
    ensure!(counts["TwoSided"] == n as u64 + matches, "two-sided wrote {}, want {}", counts["TwoSided"], n as u64 + matches);
    ensure!(counts["OneSided"] == matches, "one-sided wrote {}, want {matches}", counts["OneSided"]);

    for i in 0..1000 {
        let words: Vec<&str> = (0..rng.random_range(1..10))
            .map(|_| {
                if rng.random_bool(0.5) {
                    gendered.choose(&mut rng).unwrap().as_str()
                } else {
                    neutral.choose(&mut rng).unwrap().as_str()
                }
            })
            .collect();
        let s = words.join(" ");
        let once = counterfactual_sentence(&s, &lex).unwrap_or_else(|| s.clone());
        let twice = counterfactual_sentence(&once, &lex).unwrap_or_else(|| once.clone());
        ensure!(twice == s, "sentence {i}: `{s}` -> `{once}` -> `{twice}`");
    }
    Ok(format!(
        "N={n}, matches={matches}: two-sided {} and one-sided {} exact; involution on 1000 sentences over {} words",
        counts["TwoSided"],
        counts["OneSided"],
        gendered.len()
    ))
}

/// Smallest interval holding at least 99% of Binomial(n, 1/2), trimming at
/// most 0.5% from each tail.
fn binomial_99(n: u64) -> (u64, u64) {
    let mut log_pmf = vec![0.0f64; n as usize + 1];
    for k in 0..n as usize {
        log_pmf[k + 1] = log_pmf[k] + ((n as f64 - k as f64) / (k as f64 + 1.0)).ln();
    }
    let top = log_pmf.iter().cloned().fold(f64::MIN, f64::max);
    let w: Vec<f64> = log_pmf.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut lo = 0;
    let mut acc = 0.0;
    while acc + w[lo] / total <= 0.005 {
        acc += w[lo] / total;
        lo += 1;
    }
    let mut hi = n as usize;
    let mut acc = 0.0;
    while acc + w[hi] / total <= 0.005 {
        acc += w[hi] / total;
        hi -= 1;
    }
    (lo as u64, hi as u64)
}

fn run_policy(kind: PolicyKind, seed: u64, sentences: &[String]) -> Result<(Vec<u8>, Vec<NameReplacement>), String> {
    let policy = NamePolicy::new(kind, NameSplit::parse("all").unwrap(), bundled_name_lexicon(), seed).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let mut reps = Vec::new();
    rewrite_names(sentences.iter().map(|s| Ok(CorpusRecord::plain(s.clone()))), &policy, 4, |r, rs| {
        reps.extend_from_slice(rs);
        write_record(&mut bytes, r, CorpusFormat::Text)
    })
    .map_err(|e| e.to_string())?;
    Ok((bytes, reps))
}

fn name_policies() -> Outcome {
    let names: Vec<String> = bundled_name_lexicon().entries().iter().map(|e| e.name.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sentences: Vec<String> = (0..10_000)
        .map(|_| format!("Yesterday {} arrived at the station.", names.choose(&mut rng).unwrap()))
        .collect();
    let (_, same) = run_policy(PolicyKind::SameGender, 1, &sentences)?;
    let (_, flip) = run_policy(PolicyKind::FlipGender, 1, &sentences)?;
    let (bytes_a, random) = run_policy(PolicyKind::RandomGender, 11, &sentences)?;
    let (bytes_b, _) = run_policy(PolicyKind::RandomGender, 11, &sentences)?;
    for (name, reps) in [("same", &same), ("flip", &flip), ("random", &random)] {
        ensure!(reps.len() == 10_000, "{name}: {} replacements, want 10000", reps.len());
    }
    ensure!(same.iter().all(|r| r.replacement_label == r.original_label), "same_gender changed a label");
    ensure!(flip.iter().all(|r| r.replacement_label != r.original_label), "flip_gender kept a label");
    let female = random.iter().filter(|r| r.replacement_label.is_female()).count() as u64;
    let (lo, hi) = binomial_99(10_000);
    ensure!((lo..=hi).contains(&female), "random_gender: {female} female of 10000, 99% interval [{lo}, {hi}]");
    ensure!(bytes_a == bytes_b, "same seed produced different corpora");
    Ok(format!("same 100%, flip 100%, random {female}/10000 female in [{lo}, {hi}], same-seed bytes identical"))
}

fn fixed_manifest() -> RunManifest {
    let mut m = RunManifest::new(vec!["gencorr".into(), "fixture".into()]);
    m.created = "2020-01-01T00:00:00Z".into();
    m
}

/// Two restarts whose mean and sample std are `mean` and `sd`.
fn restarts(mean: f64, sd: f64) -> [f64; 2] {
    let h = sd / std::f64::consts::SQRT_2;
    [mean - h, mean + h]
}

fn table2_results(columns: usize) -> Vec<MetricResult> {
    let models = ["ALBERT Base", "ALBERT Large", "BERT Base", "BERT Large"];
    let correlations: [(&str, &str, Statistic, [(f64, f64); 4]); 3] = [
        ("coref_gender", "Coref (r)", Statistic::PearsonR, [(0.28, 0.08), (0.50, 0.03), (0.43, 0.08), (0.37, 0.03)]),
        ("sts_gender", "STS-B (r)", Statistic::PearsonR, [(0.64, 0.07), (0.64, 0.06), (0.59, 0.09), (0.56, 0.02)]),
        ("bios_gap", "Bios (slope)", Statistic::Slope, [(0.38, 0.01), (0.37, 0.02), (0.34, 0.01), (0.29, 0.03)]),
    ];
    let discos = [("disco_terms", "DisCo (Terms)", [0.4, 0.0, 0.8, 1.0]), ("disco_names", "DisCo (Names)", [3.7, 3.1, 3.7, 3.4])];
    let accuracy = [("accuracy_coref", "Coref", [0.92, 0.92, 0.91, 0.93])];
    let mut out = Vec::new();
    for (metric, display, statistic, cells) in &correlations {
        for (model, (mean, sd)) in models.iter().zip(cells).take(columns) {
            let runs = restarts(*mean, *sd)
                .iter()
                .map(|v| {
                    RunDetail::Correlation(CorrelationReport {
                        metric: metric.to_string(),
                        statistic: *statistic,
                        value: *v,
                        pearson_r: *v,
                        fit: None,
                        degenerate: None,
                        points: Vec::new(),
                        warnings: Vec::new(),
                    })
                })
                .collect();
            out.push(MetricResult::from_runs(metric, display, Direction::Lower, 2, model, runs, fixed_manifest()).unwrap());
        }
    }
    for (metric, display, cells) in &discos {
        for (model, v) in models.iter().zip(cells).take(columns) {
            let run = RunDetail::Disco(DiscoResult {
                value: *v,
                templates: Vec::new(),
                total_tests: 0,
                alpha: 0.05,
                k: 3,
                correction: Correction::Global,
                groups: [GenderLabel::female(), GenderLabel::male()],
                group_sizes: [0, 0],
            });
            out.push(MetricResult::from_runs(metric, display, Direction::Lower, 1, model, vec![run], fixed_manifest()).unwrap());
        }
    }
    for (metric, display, cells) in &accuracy {
        for (model, v) in models.iter().zip(cells).take(columns) {
            let runs = [*v, *v]
                .iter()
                .map(|v| RunDetail::Accuracy(AccuracyReport { task: "classification".into(), value: *v, n: 100, degenerate: None }))
                .collect();
            out.push(MetricResult::from_runs(metric, display, Direction::Higher, 2, model, runs, fixed_manifest()).unwrap());
        }
    }
    out
}

fn bold_cells(table: &ComparisonTable) -> BTreeSet<(String, String)> {
    table
        .rows
        .iter()
        .flat_map(|r| {
            r.cells.iter().zip(&table.columns).filter_map(|(c, col)| {
                c.as_ref().filter(|c| c.bold).map(|_| (r.name.clone(), col.clone()))
            })
        })
        .collect()
}

fn fixture_scatter() -> CorrelationReport {
    let xs = [10.0, 25.0, 40.0, 55.0, 70.0, 85.0];
    let ys = [0.12, 0.2, 0.33, 0.41, 0.5, 0.66];
    let fit = linear_fit(&xs, &ys).unwrap();
    CorrelationReport {
        metric: "coref_gender".into(),
        statistic: Statistic::PearsonR,
        value: fit.pearson_r,
        pearson_r: fit.pearson_r,
        fit: Some(fit),
        degenerate: None,
        points: xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (x, y))| gencorr::metrics::Point { label: format!("job{i}"), x: *x, y, n: 2 })
            .collect(),
        warnings: Vec::new(),
    }
}

fn render_all() -> Result<BTreeMap<&'static str, String>, String> {
    let results = table2_results(3);
    let table = ComparisonTable::from_results(&results).map_err(|e| e.to_string())?;
    // serialize and reload every document, as the CLI does
    let reloaded: Vec<MetricResult> = results
        .iter()
        .map(|r| MetricResult::from_json(&r.to_json()).unwrap())
        .collect();
    let again = ComparisonTable::from_results(&reloaded).map_err(|e| e.to_string())?;
    ensure!(table == again, "table changed after a JSON round trip");
    Ok(BTreeMap::from([
        ("table.md", table.to_markdown()),
        ("table.csv", table.to_csv()),
        ("scatter.svg", scatter_svg(&fixture_scatter(), "Coref - fixture")),
    ]))
}

fn report_determinism() -> Outcome {
    let first = render_all()?;
    let second = render_all()?;
    ensure!(first == second, "two renders differ");

    let golden_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/report");
    if std::env::var_os("GENCORR_BLESS").is_some() {
        std::fs::create_dir_all(&golden_dir).unwrap();
        for (name, text) in &first {
            std::fs::write(golden_dir.join(name), text).unwrap();
        }
    }
    for (name, text) in &first {
        let golden = std::fs::read_to_string(golden_dir.join(name)).map_err(|e| format!("golden {name}: {e}"))?;
        ensure!(golden.replace("\r\n", "\n") == text.replace("\r\n", "\n"), "{name} differs from its golden copy");
    }

    let three = ComparisonTable::from_results(&table2_results(3)).map_err(|e| e.to_string())?;
    let want: BTreeSet<(String, String)> = [
        ("Coref (r)", "ALBERT Base"),
        ("STS-B (r)", "BERT Base"),
        ("Bios (slope)", "BERT Base"),
    ]
    .iter()
    .map(|(r, c)| (r.to_string(), c.to_string()))
    .collect();
    ensure!(bold_cells(&three) == want, "three-column bolding {:?}, want {want:?}", bold_cells(&three));

    // all four columns reproduce the bold cells of the published table
    let four = ComparisonTable::from_results(&table2_results(4)).map_err(|e| e.to_string())?;
    let paper: BTreeSet<(String, String)> = [
        ("Coref (r)", "ALBERT Base"),
        ("STS-B (r)", "BERT Large"),
        ("Bios (slope)", "BERT Large"),
    ]
    .iter()
    .map(|(r, c)| (r.to_string(), c.to_string()))
    .collect();
    ensure!(bold_cells(&four) == paper, "four-column bolding {:?}, want {paper:?}", bold_cells(&four));
    let md = four.to_markdown();
    ensure!(md.contains("| Coref (r) | ↓ | **0.28±0.08** | 0.50±0.03 | 0.43±0.08 | 0.37±0.03 |"), "coref row renders as\n{md}");
    Ok("markdown/CSV/SVG byte-identical across renders and equal to goldens; bolding matches the published rule".into())
}
