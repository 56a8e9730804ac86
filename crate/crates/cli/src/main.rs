//! `gencorr` command-line front end.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 backend or
//! transport error, 3 internal invariant violation.

mod config;
mod serve;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gencorr::backend::{open_backend, Backend, Scorer, ScorerConfig, ToyModel, ToyModelSpec};
use gencorr::cda::{
    read_corpus, rewrite_corpus, rewrite_names, segment_sentences, write_record, CdaConfig, CdaMode, CorpusFormat,
    CorpusRecord, NamePolicy, PolicyKind,
};
use gencorr::lexicon::{
    load_name_lexicon, load_pair_lexicon, NameLexicon, NameSplit, PairLexicon, BUNDLED_NAME_COUNTS, BUNDLED_PAIRS,
};
use gencorr::manifest::RunManifest;
use gencorr::metrics::{
    accuracy_from_log, bios_gap, coref_gender, disco, disco_null_calibration, estimate_profession_stats,
    load_bios_log, load_bls_table, load_prediction_log, load_winogender, name_persons, sts_gender, term_persons,
    AccuracyTask, BlsTable, CorefOptions, Correction, Direction, DiscoOptions, MetricResult, PersonEntry, RunDetail,
    BUNDLED_PROFESSIONS,
};
use gencorr::report::{load_series_csv, scatter_svg, series_svg, slug, ComparisonTable};
use gencorr::templates::{build_sts_templates, instantiate_sts_pairs, load_disco_templates, DiscoTemplate, BUNDLED_DISCO_TEMPLATES};
use gencorr::{Error, Result};

const BACKEND_ENV: &str = "GENCORR_BACKEND";

#[derive(Parser)]
#[command(name = "gencorr", version, about = "Measure gendered correlations in language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count fills significantly associated with gender, averaged over templates.
    Disco(DiscoArgs),
    /// Correlate STS-B score differences (man - woman) with profession statistics.
    StsGender(StsArgs),
    /// Correlate female-pronoun coreference probability with profession statistics.
    CorefGender(CorefArgs),
    /// Slope of the TPR gap (female - male) against the share of women.
    BiosGap(BiosArgs),
    /// Accuracy, binary F1 or Pearson r from prediction logs.
    Accuracy(AccuracyArgs),
    /// Counterfactual augmentation of a corpus (term swaps or name replacement).
    Cda(CdaArgs),
    /// Comparison table and plots from metric documents.
    Report(ReportArgs),
    /// Serve a toy model over the HTTP wire protocol.
    ToyServe(ServeArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Backend specifier; repeat (or comma-separate) for several restarts.
    #[arg(long = "backend", env = BACKEND_ENV, value_delimiter = ',', required = true)]
    backends: Vec<String>,
    /// On-disk response cache (offline predictions format).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_parallel: usize,
    #[arg(long, default_value = "[MASK]")]
    mask_token: String,
    /// Column label in reports; defaults to the first backend's model id.
    #[arg(long)]
    model_name: Option<String>,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct DiscoArgs {
    /// `bundled` or a templates file.
    #[arg(long, default_value = "bundled")]
    templates: String,
    /// Name-count file (`bundled` for the shipped sample).
    #[arg(long, conflicts_with = "terms", required_unless_present = "terms")]
    names: Option<String>,
    /// Gendered word-pair file used as `the NOUN` phrases (`bundled` allowed).
    #[arg(long)]
    terms: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    name_threshold: f64,
    /// Restrict names to initials, e.g. `A-M`.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bonferroni correction per template instead of over the whole run.
    #[arg(long)]
    per_template: bool,
    /// Never count tables with a smaller minimum expected count as significant.
    #[arg(long)]
    min_expected: Option<f64>,
    /// Null calibration: assign persons to random groups.
    #[arg(long)]
    random_groups: bool,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct StsArgs {
    /// STS-B test file (tab-separated, sentences in columns 6 and 7).
    #[arg(long)]
    sts: PathBuf,
    #[arg(long, default_value = "bundled")]
    pairs: String,
    #[arg(long, default_value = "bundled")]
    professions: String,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct CorefArgs {
    /// WinoGender-style TSV.
    #[arg(long)]
    examples: PathBuf,
    #[arg(long, default_value = "bundled")]
    professions: String,
    /// Count `p >= threshold` as 1 and anything else as 0.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
#[command(args_override_self = false)]
struct BiosArgs {
    /// Prediction log (JSON lines {id, gold, gender, pred}); repeat per restart.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// Training log from which to estimate the share of women per profession.
    #[arg(long, required_unless_present = "stats", conflicts_with = "stats")]
    train: Option<PathBuf>,
    /// CSV `profession,fraction_female` with fractions in [0, 1].
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value = "predictions")]
    model_name: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    BinaryF1,
    RegressionPearson,
}

#[derive(Args)]
struct AccuracyArgs {
    /// Prediction log (JSON lines {id, gold, pred}); repeat per restart.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Positive label for binary F1.
    #[arg(long, default_value = "1")]
    positive: String,
    /// Row name in reports, e.g. `Coref` or `STS-B`.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "predictions")]
    model_name: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// One sentence per line.
    Text,
    /// JSON lines {id, text}.
    Jsonl,
    /// Running text, split into sentences approximately.
    Raw,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct CdaArgs {
    /// Input corpus; standard input when omitted or `-`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output corpus; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// `one` (counterfactuals only) or `two` (originals and counterfactuals).
    #[arg(long, default_value = "two")]
    mode: String,
    #[arg(long, default_value = "bundled")]
    pairs: String,
    /// Name-count file; with --policy, replace names instead of swapping terms.
    #[arg(long)]
    names: Option<String>,
    /// `same`, `flip` or `random`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, default_value_t = 0.8)]
    name_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One-sided mode: share of matching sentences kept in original form.
    #[arg(long)]
    mix_ratio: Option<f64>,
    /// Where to write the run manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric documents.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for table.md, table.csv and SVG plots.
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
    /// Training-curve CSV (`step,<series>...`); one plot each.
    #[arg(long)]
    series: Vec<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Toy model spec (JSON); the built-in gender-blind model when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port; the chosen address is printed on start.
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Stop after this many requests.
    #[arg(long)]
    max_requests: Option<usize>,
    /// Write the spec in use to this file and exit.
    #[arg(long)]
    dump_spec: Option<PathBuf>,
}

fn main() {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => fail(e),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli, &args) {
        fail(e);
    }
}

fn fail(e: Error) -> ! {
    eprintln!("error: {e}");
    std::process::exit(e.exit_code());
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let mut command = vec!["gencorr".to_string()];
    command.extend(argv.iter().skip(1).cloned());
    let manifest = RunManifest::new(command);
    match cli.command {
        Command::Disco(a) => cmd_disco(a, manifest),
        Command::StsGender(a) => cmd_sts(a, manifest),
        Command::CorefGender(a) => cmd_coref(a, manifest),
        Command::BiosGap(a) => cmd_bios(a, manifest),
        Command::Accuracy(a) => cmd_accuracy(a, manifest),
        Command::Cda(a) => cmd_cda(a, manifest),
        Command::Report(a) => cmd_report(a),
        Command::ToyServe(a) => cmd_serve(a),
    }
}

// ------------------------------------------------------------------ input

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Text of `bundled` data or a file, recorded in the manifest.
fn source_text(spec: &str, role: &str, bundled_name: &str, bundled: &str, manifest: &mut RunManifest) -> Result<String> {
    if spec == "bundled" {
        manifest.input_bytes(role, &format!("bundled:{bundled_name}"), bundled.as_bytes());
        return Ok(bundled.to_string());
    }
    let path = Path::new(spec);
    let text = read_text(path)?;
    manifest.input_bytes(role, spec, text.as_bytes());
    Ok(text)
}

fn parse_in<T>(spec: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| if spec == "bundled" { e } else { e.in_file(spec) })
}

fn templates(spec: &str, manifest: &mut RunManifest) -> Result<Vec<DiscoTemplate>> {
    let text = source_text(spec, "templates", "disco_templates.tsv", BUNDLED_DISCO_TEMPLATES, manifest)?;
    parse_in(spec, load_disco_templates(text.as_bytes()))
}

fn pairs(spec: &str, manifest: &mut RunManifest) -> Result<PairLexicon> {
    let text = source_text(spec, "pairs", "gendered_pairs.tsv", BUNDLED_PAIRS, manifest)?;
    parse_in(spec, load_pair_lexicon(text.as_bytes()))
}

fn names(spec: &str, threshold: f64, manifest: &mut RunManifest) -> Result<NameLexicon> {
    let text = source_text(spec, "names", "names_sample.tsv", BUNDLED_NAME_COUNTS, manifest)?;
    parse_in(spec, load_name_lexicon(text.as_bytes(), threshold))
}

fn professions(spec: &str, manifest: &mut RunManifest) -> Result<BlsTable> {
    let text = source_text(spec, "professions", "professions.csv", BUNDLED_PROFESSIONS, manifest)?;
    parse_in(spec, load_bls_table(text.as_bytes()))
}

fn scorers(args: &BackendArgs, manifest: &mut RunManifest) -> Result<Vec<Scorer>> {
    if args.backends.is_empty() {
        return Err(Error::InvalidInput(format!("no backend given (--backend or {BACKEND_ENV})")));
    }
    args.backends
        .iter()
        .map(|spec| {
            let backend: Arc<dyn Backend> = open_backend(spec)?;
            if let Some(path) = spec.strip_prefix("toy:").or_else(|| spec.strip_prefix("offline:")) {
                manifest.input_file("backend", Path::new(path))?;
            } else if spec.ends_with(".jsonl") {
                manifest.input_file("backend", Path::new(spec))?;
            }
            let scorer = Scorer::with_config(
                backend,
                ScorerConfig {
                    mask_token: args.mask_token.clone(),
                    max_parallel: args.max_parallel,
                    cache_path: args.cache.clone(),
                },
            )?;
            manifest.model(scorer.model_id());
            Ok(scorer)
        })
        .collect()
}

fn model_label(args: &BackendArgs, scorers: &[Scorer]) -> String {
    args.model_name
        .clone()
        .unwrap_or_else(|| scorers.first().map(|s| s.model_id().to_string()).unwrap_or_default())
}

fn emit(out: &OutArgs, text: &str) -> Result<()> {
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::File {
            path: path.clone(),
            message: e.to_string(),
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn warn_all(report: &RunDetail) {
    if let RunDetail::Correlation(c) = report {
        for w in &c.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(d) = &c.degenerate {
            eprintln!("warning: {d}");
        }
    }
}

// --------------------------------------------------------------- commands

fn cmd_disco(a: DiscoArgs, mut manifest: RunManifest) -> Result<()> {
    let templates = templates(&a.templates, &mut manifest)?;
    let split = NameSplit::parse(&a.split)?;
    let (persons, metric, display): (Vec<PersonEntry>, &str, String) = match (&a.names, &a.terms) {
        (Some(spec), _) => {
            let lex = names(spec, a.name_threshold, &mut manifest)?.restricted_to(&split);
            let display = if split.is_all() {
                "DisCo (Names)".to_string()
            } else {
                format!("DisCo (Names {split})")
            };
            (name_persons(&lex), "disco_names", display)
        }
        (None, Some(spec)) => (term_persons(&pairs(spec, &mut manifest)?), "disco_terms", "DisCo (Terms)".into()),
        (None, None) => return Err(Error::InvalidInput("give --names or --terms".into())),
    };
    let opts = DiscoOptions {
        k: a.k,
        alpha: a.alpha,
        correction: if a.per_template {
            Correction::PerTemplate
        } else {
            Correction::Global
        },
        min_expected: a.min_expected,
    };
    let scorers = scorers(&a.backend, &mut manifest)?;
    let model = model_label(&a.backend, &scorers);
    let mut runs = Vec::new();
    for scorer in &scorers {
        if a.random_groups {
            let values = disco_null_calibration(&templates, &persons, scorer, &opts, a.seed, a.trials)?;
            runs.push(RunDetail::null_calibration(a.seed, values));
        } else {
            runs.push(RunDetail::Disco(disco(&templates, &persons, scorer, &opts)?));
        }
    }
    let (metric, display) = if a.random_groups {
        manifest.seed("permutation", a.seed);
        (format!("{metric}_random_groups"), format!("{display} random groups"))
    } else {
        (metric.to_string(), display)
    };
    let result = MetricResult::from_runs(&metric, &display, Direction::Lower, 1, &model, runs, manifest)?;
    emit(&a.out, &result.to_json())
}

fn correlation_result(
    metric: &str,
    display: &str,
    model: &str,
    runs: Vec<RunDetail>,
    manifest: RunManifest,
    out: &OutArgs,
) -> Result<()> {
    runs.iter().for_each(warn_all);
    let result = MetricResult::from_runs(metric, display, Direction::Lower, 2, model, runs, manifest)?;
    emit(out, &result.to_json())
}

fn cmd_sts(a: StsArgs, mut manifest: RunManifest) -> Result<()> {
    let lex = pairs(&a.pairs, &mut manifest)?;
    let bls = professions(&a.professions, &mut manifest)?;
    manifest.input_file("sts", &a.sts)?;
    let mining = build_sts_templates(open(&a.sts)?, &lex).map_err(|e| e.in_file(&a.sts))?;
    for w in &mining.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("{} templates mined from {} candidates", mining.templates.len(), mining.candidates);
    let names = bls.professions();
    let couples: Vec<_> = mining
        .templates
        .iter()
        .flat_map(|t| instantiate_sts_pairs(t, &names))
        .collect();
    let scorers = scorers(&a.backend, &mut manifest)?;
    let model = model_label(&a.backend, &scorers);
    let runs = scorers
        .iter()
        .map(|s| sts_gender(&couples, s, &bls).map(RunDetail::Correlation))
        .collect::<Result<Vec<_>>>()?;
    correlation_result("sts_gender", "STS-B (r)", &model, runs, manifest, &a.out)
}

fn cmd_coref(a: CorefArgs, mut manifest: RunManifest) -> Result<()> {
    let bls = professions(&a.professions, &mut manifest)?;
    manifest.input_file("examples", &a.examples)?;
    let examples = load_winogender(open(&a.examples)?).map_err(|e| e.in_file(&a.examples))?;
    let scorers = scorers(&a.backend, &mut manifest)?;
    let model = model_label(&a.backend, &scorers);
    let opts = CorefOptions { threshold: a.threshold };
    let runs = scorers
        .iter()
        .map(|s| coref_gender(&examples, s, &bls, &opts).map(RunDetail::Correlation))
        .collect::<Result<Vec<_>>>()?;
    correlation_result("coref_gender", "Coref (r)", &model, runs, manifest, &a.out)
}

fn load_fraction_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let table = load_bls_table(open(path)?).map_err(|e| e.in_file(path))?;
    table
        .pct_female
        .into_iter()
        .map(|(p, v)| {
            if v > 1.0 {
                Err(Error::File {
                    path: path.to_path_buf(),
                    message: format!("fraction {v} for `{p}` exceeds 1"),
                })
            } else {
                Ok((p, v))
            }
        })
        .collect()
}

fn cmd_bios(a: BiosArgs, mut manifest: RunManifest) -> Result<()> {
    let stats = match (&a.train, &a.stats) {
        (Some(train), _) => {
            manifest.input_file("train", train)?;
            let log = load_bios_log(open(train)?).map_err(|e| e.in_file(train))?;
            estimate_profession_stats(&log).map_err(|e| e.in_file(train))?
        }
        (None, Some(path)) => {
            manifest.input_file("stats", path)?;
            load_fraction_csv(path)?
        }
        (None, None) => return Err(Error::InvalidInput("give --train or --stats".into())),
    };
    let mut runs = Vec::new();
    for path in &a.logs {
        manifest.input_file("log", path)?;
        let log = load_bios_log(open(path)?).map_err(|e| e.in_file(path))?;
        runs.push(RunDetail::Correlation(bios_gap(&log, &stats).map_err(|e| e.in_file(path))?));
    }
    correlation_result("bios_gap", "Bios (slope)", &a.model_name, runs, manifest, &a.out)
}

fn cmd_accuracy(a: AccuracyArgs, mut manifest: RunManifest) -> Result<()> {
    let task = match a.task {
        TaskArg::Classification => AccuracyTask::Classification,
        TaskArg::BinaryF1 => AccuracyTask::BinaryF1 { positive: a.positive.clone() },
        TaskArg::RegressionPearson => AccuracyTask::RegressionPearson,
    };
    let mut runs = Vec::new();
    for path in &a.logs {
        manifest.input_file("log", path)?;
        let log = load_prediction_log(open(path)?).map_err(|e| e.in_file(path))?;
        let report = accuracy_from_log(&log, &task).map_err(|e| e.in_file(path))?;
        if let Some(d) = &report.degenerate {
            eprintln!("warning: {}: {d}", path.display());
        }
        runs.push(RunDetail::Accuracy(report));
    }
    let name = a.name.clone().unwrap_or_else(|| task.name().to_string());
    let metric = format!("accuracy_{}", slug(&name));
    let result = MetricResult::from_runs(&metric, &name, Direction::Higher, 2, &a.model_name, runs, manifest)?;
    emit(&a.out, &result.to_json())
}

fn cmd_cda(a: CdaArgs, mut manifest: RunManifest) -> Result<()> {
    manifest.seed("cda", a.seed);
    let input: Box<dyn BufRead> = match &a.input {
        Some(p) if p.as_os_str() != "-" => {
            manifest.input_file("corpus", p)?;
            Box::new(open(p)?)
        }
        _ => Box::new(BufReader::new(std::io::stdin())),
    };
    let records: Box<dyn Iterator<Item = Result<CorpusRecord>>> = match a.format {
        FormatArg::Text => Box::new(read_corpus(input, CorpusFormat::Text)),
        FormatArg::Jsonl => Box::new(read_corpus(input, CorpusFormat::Jsonl)),
        FormatArg::Raw => {
            let mut text = String::new();
            let mut input = input;
            input.read_to_string(&mut text)?;
            Box::new(segment_sentences(&text).into_iter().map(|s| Ok(CorpusRecord::plain(s))))
        }
    };
    let out_format = if a.format == FormatArg::Jsonl {
        CorpusFormat::Jsonl
    } else {
        CorpusFormat::Text
    };
    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::File {
            path: p.clone(),
            message: e.to_string(),
        })?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    };
    let summary = match (&a.policy, &a.names) {
        (Some(policy), Some(spec)) => {
            let kind = PolicyKind::parse(policy)?;
            let split = NameSplit::parse(&a.split)?;
            let pool = names(spec, a.name_threshold, &mut manifest)?.restricted_to(&split);
            let policy = NamePolicy::new(kind, split.clone(), pool, a.seed)?;
            let stats = rewrite_names(records, &policy, a.workers, |r, _| write_record(&mut sink, r, out_format))?;
            serde_json::json!({ "kind": "names", "policy": kind, "split": split.to_string(), "stats": stats })
        }
        (Some(_), None) => return Err(Error::InvalidInput("--policy needs --names".into())),
        (None, _) => {
            let lex = pairs(&a.pairs, &mut manifest)?;
            let mode = CdaMode::parse(&a.mode)?;
            let cfg = CdaConfig {
                mode,
                seed: a.seed,
                mix_ratio: a.mix_ratio,
            };
            let stats = rewrite_corpus(records, &lex, &cfg, a.workers, |r| write_record(&mut sink, r, out_format))?;
            serde_json::json!({ "kind": "terms", "mode": mode, "mix_ratio": a.mix_ratio, "stats": stats })
        }
    };
    sink.flush()?;
    let doc = serde_json::json!({ "cda": summary, "manifest": manifest });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &a.manifest {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::File {
            path: p.clone(),
            message: e.to_string(),
        }),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut results = Vec::new();
    for path in &a.inputs {
        let text = read_text(path)?;
        results.push(MetricResult::from_json(&text).map_err(|e| e.in_file(path))?);
    }
    let table = ComparisonTable::from_results(&results)?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = a.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::File { path, message: e.to_string() })
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::File {
        path: a.out_dir.clone(),
        message: e.to_string(),
    })?;
    write("table.md", &table.to_markdown())?;
    write("table.csv", &table.to_csv())?;
    for r in &results {
        if let Some(c) = r.correlation() {
            let title = format!("{} - {}", r.display_name, r.model);
            write(&format!("scatter-{}-{}.svg", slug(&r.metric), slug(&r.model)), &scatter_svg(c, &title))?;
        }
    }
    for path in &a.series {
        let series = load_series_csv(open(path)?).map_err(|e| e.in_file(path))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        write(&format!("series-{}.svg", slug(&stem)), &series_svg(&series, &stem, "value"))?;
    }
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => serde_json::from_str::<ToyModelSpec>(&read_text(path)?).map_err(|e| Error::File {
            path: path.clone(),
            message: e.to_string(),
        })?,
        None => ToyModelSpec::builtin(),
    };
    let model = ToyModel::new(spec)?;
    if let Some(path) = &a.dump_spec {
        return std::fs::write(path, model.to_json() + "\n").map_err(|e| Error::File {
            path: path.clone(),
            message: e.to_string(),
        });
    }
    serve::serve(Arc::new(model), &format!("{}:{}", a.host, a.port), a.max_requests)
}

