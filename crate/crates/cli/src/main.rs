mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use idocr::bootstrap::{run_bootstrap, BootstrapInputs};
use idocr::charset::Charset;
use idocr::classify::{train, train_linear_baseline, Dataset, EpochRecord, Model, ModelSpec};
use idocr::fonts::FontLibrary;
use idocr::imaging::{read_png, write_png, BBox, GrayImage};
use idocr::metrics::{benchmark_latency, evaluate_fields};
use idocr::ocr::{recognize_field, FieldResult, RuleSet};
use idocr::segment::segment_field;
use idocr::synthgen::{
    generate_char_corpus, generate_field_corpus, read_field_manifest, read_jsonl, write_json,
    CorpusSpec, FieldKind, FieldTextSampler, Generator, SplitSpec,
};

use config::RunConfig;

/// Character corpus rendered from the source fonts.
const SOURCE_CHARS: &str = "source-chars";
/// Pseudo-real field corpora.
const MINE_FIELDS: &str = "mine-fields";
const TEST_FIELDS: &str = "test-fields";
const EVAL_FIELDS: &str = "eval-fields";

#[derive(Parser)]
#[command(
    name = "idocr",
    version,
    about = "Step-wise OCR for identity-document text fields"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More progress output on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the character and field corpora.
    Gen,
    /// Train a classifier on the source character corpus.
    Train(TrainArgs),
    /// Bootstrap a trained model on the pseudo-real field corpus.
    Bootstrap(BootstrapArgs),
    /// Recognize a field image or every field of a corpus.
    Ocr(OcrArgs),
    /// Score recognition results against corpus ground truth.
    Eval(EvalArgs),
    /// Measure single-threaded classification latency.
    Bench(BenchArgs),
    /// Dump the segmentation of a field image.
    Segment(SegmentArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Model preset (one of lenet-like, cifarnet-like, hog-linear).
    #[arg(long)]
    preset: Option<String>,
    /// Output model file [default: <work>/models/<preset>.ocrm].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Initial model [default: <work>/models/<model>.ocrm].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Run directory [default: <work>/run].
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Args)]
struct OcrArgs {
    #[arg(long)]
    model: PathBuf,
    /// A single field image.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    image: Option<PathBuf>,
    /// A field corpus; each field uses the rule named in its manifest.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Rule id for a single image.
    #[arg(long, requires = "image")]
    rule: Option<String>,
    /// Ignore format rules.
    #[arg(long)]
    no_rules: bool,
    /// JSONL output [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL written by `ocr --corpus`.
    #[arg(long)]
    results: PathBuf,
    /// Field corpus holding the ground truth.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON report [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Timed forward passes.
    #[arg(long, default_value_t = 1000)]
    calls: usize,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    image: PathBuf,
    /// Directory for the patches and `segments.json`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report_error("usage", first);
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error("failed", &error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, leaving out causes a message already ends with.
fn error_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string().replace('\n', " ");
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    match cli.command {
        Command::Gen => cmd_gen(&cfg),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Bootstrap(a) => cmd_bootstrap(&cfg, a),
        Command::Ocr(a) => cmd_ocr(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Bench(a) => cmd_bench(&cfg, a),
        Command::Segment(a) => cmd_segment(&cfg, a),
    }
}

fn generators(cfg: &RunConfig) -> Result<(Generator, Generator)> {
    let fonts = FontLibrary::load(&cfg.paths.fonts)?;
    let source = Generator::new(fonts.pool(&cfg.source.font_pool)?, cfg.source.clone())?;
    let pseudo = Generator::new(
        fonts.pool(&cfg.pseudo_real.font_pool)?,
        cfg.pseudo_real.clone(),
    )?;
    Ok((source, pseudo))
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let (source, pseudo) = generators(cfg)?;
    let charset = Charset::default();
    let classes = cfg.classes.classes(&charset);
    let t = Instant::now();
    let spec = CorpusSpec {
        classes,
        splits: vec![
            SplitSpec {
                name: "train".into(),
                per_class: cfg.corpus.train_per_class,
            },
            SplitSpec {
                name: "test".into(),
                per_class: cfg.corpus.test_per_class,
            },
        ],
    };
    let root = cfg.corpus_dir(SOURCE_CHARS);
    let entries = generate_char_corpus(&source, &spec, &root, cfg.corpus_seed(SOURCE_CHARS))?;
    log::info!(
        "{SOURCE_CHARS}: {} patches in {:.1?}",
        entries.len(),
        t.elapsed()
    );

    let sampler = FieldTextSampler::new(cfg.classes, FieldKind::ALL.to_vec());
    for (name, count) in [
        (MINE_FIELDS, cfg.corpus.mine_fields),
        (TEST_FIELDS, cfg.corpus.test_fields),
        (EVAL_FIELDS, cfg.corpus.eval_fields),
    ] {
        let t = Instant::now();
        generate_field_corpus(
            &pseudo,
            &sampler,
            count,
            &cfg.corpus_dir(name),
            cfg.corpus_seed(name),
        )?;
        log::info!("{name}: {count} fields in {:.1?}", t.elapsed());
    }
    cfg.write_beside(&cfg.corpora_dir())
}

#[derive(Serialize)]
struct TrainReport {
    preset: String,
    train_size: usize,
    test_size: usize,
    param_count: usize,
    test_accuracy: f64,
    history: Vec<EpochRecord>,
}

fn cmd_train(resolved: &RunConfig, a: TrainArgs) -> Result<()> {
    let cfg = resolved.clone().seeded();
    let preset = a.preset.unwrap_or_else(|| cfg.model.clone());
    let spec = ModelSpec::preset(&preset)?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.paths.work.join("models").join(format!("{preset}.ocrm")));
    let charset = Charset::default();
    let root = cfg.corpus_dir(SOURCE_CHARS);
    let data = Dataset::from_manifest(&root, "train", &charset)
        .with_context(|| format!("loading {}; run `idocr gen` first", root.display()))?;
    let test = Dataset::from_manifest(&root, "test", &charset)?;
    log::info!(
        "training {preset} on {} patches ({} test)",
        data.len(),
        test.len()
    );
    let t = Instant::now();
    let (model, history) = if preset == "hog-linear" {
        (train_linear_baseline(&data, &cfg.linear)?, Vec::new())
    } else {
        let outcome = train(&spec, &data, Some(&test), &cfg.train)?;
        (outcome.model, outcome.history)
    };
    let report = TrainReport {
        preset: preset.clone(),
        train_size: data.len(),
        test_size: test.len(),
        param_count: spec.param_count()?,
        test_accuracy: model.accuracy(&test)?,
        history,
    };
    log::info!(
        "{preset}: test accuracy {:.4} after {:.1?}",
        report.test_accuracy,
        t.elapsed()
    );
    model.save(&out)?;
    write_json(&out.with_extension("report.json"), &report)?;
    resolved.write_beside(out.parent().unwrap_or(Path::new(".")))
}

fn cmd_bootstrap(resolved: &RunConfig, a: BootstrapArgs) -> Result<()> {
    let cfg = resolved.clone().seeded();
    let model_path = a.model.unwrap_or_else(|| {
        cfg.paths
            .work
            .join("models")
            .join(format!("{}.ocrm", cfg.model))
    });
    let run_dir = a.run.unwrap_or_else(|| cfg.paths.work.join("run"));
    let initial = Model::load(&model_path)?;
    let (source, _) = generators(&cfg)?;
    let classes = cfg.classes.classes(&Charset::default());
    let (mine, test) = (cfg.corpus_dir(MINE_FIELDS), cfg.corpus_dir(TEST_FIELDS));
    let inputs = BootstrapInputs {
        initial: &initial,
        mine_corpus: &mine,
        test_corpus: &test,
        synth: &source,
        classes: &classes,
        segment: &cfg.segment,
    };
    resolved.write_beside(&run_dir)?;
    let t = Instant::now();
    let outcome = run_bootstrap(&inputs, &cfg.bootstrap, &run_dir)?;
    log::info!(
        "bootstrap finished in {:.1?}: pseudo-real accuracy {:.4} -> {:.4}",
        t.elapsed(),
        outcome.summary.initial_accuracy,
        outcome
            .summary
            .stages
            .last()
            .map_or(f64::NAN, |s| s.pseudo_real_accuracy)
    );
    Ok(())
}

#[derive(Serialize)]
struct OcrLine<'a> {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<&'a str>,
    #[serde(flatten)]
    result: FieldResult,
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(std::io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_ocr(cfg: &RunConfig, a: OcrArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let charset = Charset::default();
    let rules = if a.no_rules {
        RuleSet::default()
    } else {
        RuleSet::load(&cfg.paths.rules, &charset)?
    };
    let lookup = |id: Option<&str>| -> Result<Option<&idocr::ocr::FormatRule>> {
        match id {
            None => Ok(None),
            Some(_) if a.no_rules => Ok(None),
            Some(id) => rules.get(id).map(Some).with_context(|| {
                format!(
                    "rule '{id}' is not defined in {}",
                    cfg.paths.rules.display()
                )
            }),
        }
    };
    let mut out = writer(a.out.as_deref())?;
    if let Some(image) = &a.image {
        let rule = lookup(a.rule.as_deref())?;
        let result = recognize_field(&model, &read_png(image)?, rule, &cfg.segment)?;
        let line = OcrLine {
            path: image.display().to_string(),
            rule: rule.map(|r| r.id.as_str()),
            result,
        };
        serde_json::to_writer(&mut out, &line)?;
        writeln!(out)?;
    } else if let Some(root) = &a.corpus {
        let entries = read_field_manifest(root)?;
        let t = Instant::now();
        let lines = entries
            .par_iter()
            .map(|e| -> Result<OcrLine<'_>> {
                let rule = lookup(e.rule.as_deref())?;
                let image = read_png(&root.join(&e.path))?;
                Ok(OcrLine {
                    path: e.path.clone(),
                    rule: rule.map(|r| r.id.as_str()),
                    result: recognize_field(&model, &image, rule, &cfg.segment)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for line in &lines {
            serde_json::to_writer(&mut out, line)?;
            writeln!(out)?;
        }
        log::info!("recognized {} fields in {:.1?}", lines.len(), t.elapsed());
    }
    out.flush()?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct ResultLine {
    path: String,
    text: String,
}

fn cmd_eval(_cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let results: Vec<ResultLine> = read_jsonl(&a.results)?;
    let truth = read_field_manifest(&a.corpus)?;
    let by_path: std::collections::HashMap<&str, &str> = results
        .iter()
        .map(|r| (r.path.as_str(), r.text.as_str()))
        .collect();
    if results.len() != truth.len() {
        bail!(
            "{} results for {} ground-truth fields",
            results.len(),
            truth.len()
        );
    }
    let predicted = truth
        .iter()
        .map(|e| {
            by_path
                .get(e.path.as_str())
                .copied()
                .with_context(|| format!("no result for {}", e.path))
        })
        .collect::<Result<Vec<_>>>()?;
    let texts: Vec<&str> = truth.iter().map(|e| e.text.as_str()).collect();
    let charset = Charset::default();
    let report = evaluate_fields(&predicted, &texts, &charset)?;
    log::info!(
        "{} of {} fields correct ({:.4}); class-wise accuracy {:.4}",
        report.correct_count,
        report.field_count,
        report.correct_rate,
        report.class_wise_accuracy
    );
    if let Some(csv) = &a.confusion {
        fs::write(csv, report.confusion_csv(&charset))
            .with_context(|| format!("writing {}", csv.display()))?;
    }
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, a: BenchArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let (source, _) = generators(cfg)?;
    let charset = Charset::default();
    let classes = cfg.classes.classes(&charset);
    let patches = (0..100)
        .map(|i| {
            Ok(source
                .render_char(classes[i % classes.len()], i as u64)?
                .image)
        })
        .collect::<Result<Vec<GrayImage>>>()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let stats = pool.install(|| benchmark_latency(&model, &patches, a.calls))?;
    log::info!(
        "{}: mean {:.3} ms, p95 {:.3} ms over {} calls",
        model.spec().name,
        stats.mean_ms,
        stats.p95_ms,
        stats.calls
    );
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

#[derive(Serialize)]
struct SegmentDump {
    lines: Vec<LineDump>,
}

#[derive(Serialize)]
struct LineDump {
    bbox: BBox,
    strings: Vec<StringDump>,
}

#[derive(Serialize)]
struct StringDump {
    bbox: BBox,
    chars: Vec<CharDump>,
}

#[derive(Serialize)]
struct CharDump {
    bbox: BBox,
    patch: String,
}

fn cmd_segment(cfg: &RunConfig, a: SegmentArgs) -> Result<()> {
    let image = read_png(&a.image)?;
    let seg = segment_field(&image, &cfg.segment)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut dump = SegmentDump { lines: Vec::new() };
    for (l, line) in seg.lines.iter().enumerate() {
        let mut strings = Vec::new();
        for (s, string) in line.strings.iter().enumerate() {
            let mut chars = Vec::new();
            for (c, ch) in string.chars.iter().enumerate() {
                let name = format!("l{l}_s{s}_c{c}.png");
                write_png(&ch.patch, &a.out.join(&name))?;
                chars.push(CharDump {
                    bbox: ch.bbox,
                    patch: name,
                });
            }
            strings.push(StringDump {
                bbox: string.bbox,
                chars,
            });
        }
        dump.lines.push(LineDump {
            bbox: line.bbox,
            strings,
        });
    }
    write_json(&a.out.join("segments.json"), &dump)?;
    log::info!(
        "{} characters in {} lines",
        seg.char_count(),
        seg.lines.len()
    );
    Ok(())
}
