//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The desk-scale pipeline (corpora, three classifiers, a 4-stage bootstrap
//! and two end-to-end evaluations) runs through the `idocr` binary under
//! `target/acceptance-run/full-<key>`, where the key hashes the binary and
//! the configuration files. Completed steps are reused on later runs with
//! the same key; their recorded durations are reported.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde_json::Value;

use idocr::charset::{Charset, ClassSubset, NUM_CLASSES};
use idocr::classify::{argmax_lowest, gradcheck, Model};
use idocr::fonts::FontLibrary;
use idocr::imaging::{read_png, BinaryImage};
use idocr::metrics::levenshtein;
use idocr::ocr::{apply_format_rule, FormatRule, Slot};
use idocr::rng::{derive_seed, SeededRng};
use idocr::segment::{segment_field, trace_contours, SegmentParams};
use idocr::synthgen::{read_field_manifest, FieldKind, FieldTextSampler, GenParams, Generator};

// Criterion 1
const GRAD_SEEDS: u64 = 20;
const GRAD_TOLERANCE: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 60.0;
// Criterion 2
const LEV_MAX_LEN: usize = 6;
const LEV_BUDGET_S: f64 = 60.0;
// Criterion 3
const CIFARNET_MIN_ACC: f64 = 0.90;
const LENET_MIN_ACC: f64 = 0.80;
const TRAIN_BUDGET_S: f64 = 2.0 * 3600.0;
// Criterion 4
const BENCH_CALLS: usize = 1000;
const LATENCY_BUDGET_MS: f64 = 50.0;
// Criterion 5
const SEG_FIELDS: usize = 500;
const SEG_MIN_RATE: f64 = 0.95;
const CONTOUR_MASKS: usize = 1000;
// Criterion 6
const BOOTSTRAP_STAGES: usize = 4;
const BOOTSTRAP_MIN_GAIN: f64 = 0.15;
const BOOTSTRAP_BUDGET_S: f64 = 4.0 * 3600.0;
// Criterion 7
const CORRUPTED_POSITIONS: usize = 100;
const MIN_RECOVERED: usize = 95;
const RULE_CASES: usize = 10_000;
// Criterion 8
const EVAL_FIELDS: usize = 320;
const FIELD_MIN_RATE: f64 = 0.80;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

type Res<T> = Result<T, String>;
type Check = fn(&Pipeline) -> Res<Outcome>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root")
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn read_json(path: &Path) -> Res<Value> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value, key: &str) -> Res<f64> {
    v[key]
        .as_f64()
        .ok_or_else(|| format!("missing number '{key}'"))
}

/// Runs the binary from the workspace root.
fn idocr(args: &[&str], env: &[(&str, String)]) -> Res<String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_idocr"));
    cmd.current_dir(workspace()).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().map_err(|e| format!("spawning idocr: {e}"))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(format!(
            "idocr {} failed: {}",
            args.join(" "),
            stderr.lines().last().unwrap_or("")
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// The desk-scale pipeline with per-step caching and recorded durations.
struct Pipeline {
    dir: PathBuf,
    work: PathBuf,
    timings: BTreeMap<String, f64>,
}

impl Pipeline {
    fn open() -> Res<Pipeline> {
        let ws = workspace();
        let mut key = 0xcbf2_9ce4_8422_2325;
        for file in [
            PathBuf::from(env!("CARGO_BIN_EXE_idocr")),
            ws.join("configs/desk.toml"),
            ws.join("configs/rules.toml"),
            ws.join("fonts/fonts.toml"),
        ] {
            key = fnv1a(
                &fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?,
                key,
            );
        }
        let dir = ws.join(format!("target/acceptance-run/full-{key:016x}"));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let timings = read_json(&dir.join("timings.json"))
            .ok()
            .and_then(|v| serde_json::from_value(v).ok())
            .unwrap_or_default();
        Ok(Pipeline {
            work: dir.join("work"),
            dir,
            timings,
        })
    }

    fn env(&self) -> Vec<(&'static str, String)> {
        vec![("IDOCR_PATHS__WORK", self.work.display().to_string())]
    }

    /// Runs `args` unless `marker` exists already.
    fn step(&mut self, name: &str, marker: &Path, args: &[&str]) -> Res<f64> {
        if marker.exists() {
            if let Some(&t) = self.timings.get(name) {
                return Ok(t);
            }
        }
        eprintln!("acceptance: running {name}");
        let t = Instant::now();
        let mut full = vec!["--config", "configs/desk.toml"];
        full.extend_from_slice(args);
        idocr(&full, &self.env())?;
        let secs = t.elapsed().as_secs_f64();
        self.timings.insert(name.to_owned(), secs);
        fs::write(
            self.dir.join("timings.json"),
            serde_json::to_vec_pretty(&self.timings).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        Ok(secs)
    }

    fn model(&self, preset: &str) -> PathBuf {
        self.work.join("models").join(format!("{preset}.ocrm"))
    }

    fn final_model(&self) -> PathBuf {
        self.work
            .join(format!("run/stage-{}/model.ocrm", BOOTSTRAP_STAGES - 1))
    }

    fn eval_corpus(&self) -> PathBuf {
        self.work.join("corpora/eval-fields")
    }

    fn run_all(&mut self) -> Res<()> {
        let work = self.work.clone();
        self.step("gen", &work.join("corpora/config.resolved.toml"), &["gen"])?;
        for preset in ["cifarnet-like", "lenet-like", "hog-linear"] {
            let report = self.model(preset).with_extension("report.json");
            self.step(
                &format!("train {preset}"),
                &report,
                &["train", "--preset", preset],
            )?;
        }
        self.step("bootstrap", &work.join("run/summary.json"), &["bootstrap"])?;
        for (name, model) in [
            ("initial", self.model("cifarnet-like")),
            ("final", self.final_model()),
        ] {
            let results = work.join(format!("eval-{name}.jsonl"));
            let report = work.join(format!("eval-{name}.json"));
            let (m, r, rep, c) = (
                model.display().to_string(),
                results.display().to_string(),
                report.display().to_string(),
                self.eval_corpus().display().to_string(),
            );
            self.step(
                &format!("ocr {name}"),
                &report,
                &["ocr", "--model", &m, "--corpus", &c, "--out", &r],
            )?;
            self.step(
                &format!("eval {name}"),
                &report,
                &["eval", "--results", &r, "--corpus", &c, "--out", &rep],
            )?;
        }
        Ok(())
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let spec = gradcheck::tiny_spec();
    let mut worst = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        match gradcheck::check_gradients(&spec, seed) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return Outcome::error(e),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        worst < GRAD_TOLERANCE && secs < GRAD_BUDGET_S,
        format!("max relative error {worst:.2e} over {GRAD_SEEDS} seeds (< {GRAD_TOLERANCE:e}), {secs:.1}s"),
    )
}

/// Plain recursion on the definition, memoized on suffix lengths.
fn lev_oracle(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let d = (lev_oracle(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
        .min(lev_oracle(&a[1..], b, memo) + 1)
        .min(lev_oracle(a, &b[1..], memo) + 1);
    memo.insert((a.len(), b.len()), d);
    d
}

fn c2_levenshtein() -> Outcome {
    let t = Instant::now();
    let mut words: Vec<Vec<char>> = vec![Vec::new()];
    let mut frontier = words.clone();
    for _ in 0..LEV_MAX_LEN {
        frontier = frontier
            .iter()
            .flat_map(|w| ['a', 'b', 'c'].map(|c| [w.as_slice(), &[c]].concat()))
            .collect();
        words.extend(frontier.iter().cloned());
    }
    let strings: Vec<String> = words.iter().map(|w| w.iter().collect()).collect();
    let mut pairs = 0usize;
    let mut memo = HashMap::new();
    for (a, sa) in words.iter().zip(&strings) {
        for (b, sb) in words.iter().zip(&strings) {
            memo.clear();
            if levenshtein(sa, sb) != lev_oracle(a, b, &mut memo) {
                return Outcome::new(false, format!("disagreement on ({sa:?}, {sb:?})"));
            }
            pairs += 1;
        }
    }
    let kitten = levenshtein("kitten", "sitting");
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        kitten == 3 && secs < LEV_BUDGET_S,
        format!(
            "{pairs} pairs agree with the recursive oracle; kitten/sitting = {kitten}; {secs:.1}s"
        ),
    )
}

fn c3_training(p: &Pipeline) -> Res<Outcome> {
    let acc = |preset: &str| -> Res<f64> {
        num(
            &read_json(&p.model(preset).with_extension("report.json"))?,
            "test_accuracy",
        )
    };
    let (cifar, lenet, hog) = (
        acc("cifarnet-like")?,
        acc("lenet-like")?,
        acc("hog-linear")?,
    );
    let secs: f64 = ["cifarnet-like", "lenet-like", "hog-linear"]
        .iter()
        .map(|n| {
            p.timings
                .get(&format!("train {n}"))
                .copied()
                .unwrap_or(f64::INFINITY)
        })
        .sum();
    Ok(Outcome::new(
        cifar >= CIFARNET_MIN_ACC && lenet >= LENET_MIN_ACC && hog < cifar && secs <= TRAIN_BUDGET_S,
        format!(
            "cifarnet-like {cifar:.4} (>= {CIFARNET_MIN_ACC}), lenet-like {lenet:.4} (>= {LENET_MIN_ACC}), \
             hog-linear {hog:.4} (< cifarnet); training {:.1} min",
            secs / 60.0
        ),
    ))
}

fn c4_latency(p: &Pipeline) -> Res<Outcome> {
    let model = p.model("cifarnet-like").display().to_string();
    let calls = BENCH_CALLS.to_string();
    let out = idocr(
        &[
            "--config",
            "configs/desk.toml",
            "--threads",
            "1",
            "bench",
            "--model",
            &model,
            "--calls",
            &calls,
        ],
        &p.env(),
    )?;
    let stats: Value = serde_json::from_str(out.trim()).map_err(|e| e.to_string())?;
    let (mean, p95) = (num(&stats, "mean_ms")?, num(&stats, "p95_ms")?);
    Ok(Outcome::new(
        mean < LATENCY_BUDGET_MS && stats["calls"].as_u64() == Some(BENCH_CALLS as u64),
        format!("cifarnet-like mean {mean:.3} ms, p95 {p95:.3} ms over {BENCH_CALLS} calls (< {LATENCY_BUDGET_MS} ms)"),
    ))
}

fn flood_fill_count(img: &BinaryImage) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || !img.get(start % w, start / w) {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in [
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && img.get(nx as usize, ny as usize) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    count
}

fn c5_segmentation() -> Res<Outcome> {
    let fonts =
        FontLibrary::load(&workspace().join("fonts/fonts.toml")).map_err(|e| e.to_string())?;
    let params = GenParams::pseudo_real();
    let gen = Generator::new(
        fonts.pool(&params.font_pool).map_err(|e| e.to_string())?,
        params,
    )
    .map_err(|e| e.to_string())?;
    let sampler = FieldTextSampler::new(ClassSubset::Desk, FieldKind::ALL.to_vec());
    let seg = SegmentParams::default();
    let mut matched = 0;
    for i in 0..SEG_FIELDS {
        let seed = derive_seed(0xacce, &[i as u64]);
        let (_, text) = sampler.sample(&mut SeededRng::new(seed));
        let field = gen.render_field(&text, seed).map_err(|e| e.to_string())?;
        let found = segment_field(&field.image, &seg).map_err(|e| e.to_string())?;
        if found.char_count() == text.chars().filter(|&c| c != ' ').count() {
            matched += 1;
        }
    }
    let rate = matched as f64 / SEG_FIELDS as f64;

    let mut rng = SeededRng::new(0xc047);
    let mut exact = 0;
    for m in 0..CONTOUR_MASKS {
        let (w, h) = (8 + rng.index(41), 8 + rng.index(41));
        let density = [0.2, 0.35, 0.5, 0.65][m % 4];
        let data = (0..w * h).map(|_| rng.chance(density)).collect();
        let mask = BinaryImage::from_vec(w, h, data).map_err(|e| e.to_string())?;
        if trace_contours(&mask).components.len() == flood_fill_count(&mask) {
            exact += 1;
        }
    }
    Ok(Outcome::new(
        rate >= SEG_MIN_RATE && exact == CONTOUR_MASKS,
        format!(
            "{matched}/{SEG_FIELDS} fields with the right character count ({rate:.3} >= {SEG_MIN_RATE}); \
             contour counts match flood fill on {exact}/{CONTOUR_MASKS} masks"
        ),
    ))
}

fn c6_bootstrap(p: &Pipeline) -> Res<Outcome> {
    let summary = read_json(&p.work.join("run/summary.json"))?;
    let initial = num(&summary, "initial_accuracy")?;
    let stages = summary["stages"].as_array().ok_or("missing stages")?;
    let acc = stages
        .iter()
        .map(|s| num(s, "pseudo_real_accuracy"))
        .collect::<Res<Vec<f64>>>()?;
    let mined: Vec<u64> = stages
        .iter()
        .map(|s| s["mined"].as_u64().unwrap_or(0))
        .collect();
    let mut series = vec![initial];
    series.extend(&acc);
    let increasing = series.windows(2).all(|w| w[1] > w[0]);
    let final_acc = acc.last().copied().unwrap_or(0.0);
    let gain = final_acc - initial;
    let mined_ok = mined.windows(2).all(|w| w[1] >= w[0]);
    let secs = p.timings.get("bootstrap").copied().unwrap_or(f64::INFINITY);
    let shown: Vec<String> = series.iter().map(|a| format!("{a:.4}")).collect();
    Ok(Outcome::new(
        acc.len() == BOOTSTRAP_STAGES && increasing && gain >= BOOTSTRAP_MIN_GAIN && mined_ok && secs <= BOOTSTRAP_BUDGET_S,
        format!(
            "(a) pseudo-real accuracy {} strictly increasing: {increasing}; (b) gain {:+.1} pts (>= {:.0}); \
             (c) mined {mined:?} non-decreasing: {mined_ok}; {:.1} min on {} frozen test patches",
            shown.join(" -> "),
            gain * 100.0,
            BOOTSTRAP_MIN_GAIN * 100.0,
            secs / 60.0,
            summary["frozen_test_size"]
        ),
    ))
}

/// Digits paired with the letters they are most often mistaken for.
const CONFUSABLE: [(char, char); 3] = [('0', 'O'), ('1', 'I'), ('5', 'S')];

fn random_pattern(rng: &mut SeededRng, symbols: &[char]) -> String {
    let mut p = String::new();
    for _ in 0..1 + rng.index(10) {
        match rng.index(6) {
            0 => p.push('9'),
            1 => p.push('A'),
            2 => p.push('a'),
            3 => p.push('*'),
            4 => {
                p.push('[');
                for _ in 0..1 + rng.index(5) {
                    p.push('\\');
                    p.push(symbols[rng.index(symbols.len())]);
                }
                p.push(']');
            }
            _ => {
                p.push('\\');
                p.push(symbols[rng.index(symbols.len())]);
            }
        }
        if rng.chance(0.2) {
            p.push_str(&format!("{{{}}}", 1 + rng.index(3)));
        }
    }
    if rng.chance(0.3) {
        p.push('+');
    }
    p
}

fn c7_format_rules(p: &Pipeline) -> Res<Outcome> {
    let cs = Charset::default();
    let symbols = cs.symbols();
    let model = Model::load(&p.final_model()).map_err(|e| e.to_string())?;
    let digit_rule = FormatRule::parse("digit", "9", &cs).map_err(|e| e.to_string())?;
    let corpus = p.eval_corpus();
    let seg = SegmentParams::default();
    let (mut tried, mut recovered) = (0, 0);
    'fields: for entry in read_field_manifest(&corpus).map_err(|e| e.to_string())? {
        let truth: Vec<char> = entry.text.chars().filter(|&c| c != ' ').collect();
        let image = read_png(&corpus.join(&entry.path)).map_err(|e| e.to_string())?;
        let found = segment_field(&image, &seg).map_err(|e| e.to_string())?;
        if found.char_count() != truth.len() {
            continue;
        }
        for (patch, &t) in found.chars().zip(&truth) {
            let Some(&(_, letter)) = CONFUSABLE.iter().find(|(d, _)| *d == t) else {
                continue;
            };
            let mut probs = model
                .forward(&patch.patch)
                .map_err(|e| e.to_string())?
                .probabilities;
            let top = probs[argmax_lowest(&probs).index()];
            let li = cs.class_of(letter).map_err(|e| e.to_string())?.index();
            probs[li] = top * 1.25;
            let sum: f32 = probs.iter().sum();
            probs.iter_mut().for_each(|v| *v /= sum);
            assert_eq!(symbols[argmax_lowest(&probs).index()], letter);
            let (out, fixes) =
                apply_format_rule(&[&probs], &digit_rule, &cs).ok_or("digit rule skipped")?;
            if symbols[out[0].index()] == t && fixes.len() == 1 {
                recovered += 1;
            }
            tried += 1;
            if tried == CORRUPTED_POSITIONS {
                break 'fields;
            }
        }
    }

    let mut rng = SeededRng::new(0x7a11);
    let mut violations = 0;
    for _ in 0..RULE_CASES {
        let pattern = random_pattern(&mut rng, symbols);
        let rule =
            FormatRule::parse("random", &pattern, &cs).map_err(|e| format!("{pattern}: {e}"))?;
        let n = rule.slots.len()
            + if rule.fixed_len().is_none() {
                rng.index(4)
            } else {
                0
            };
        let probs: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..NUM_CLASSES).map(|_| rng.unit() as f32).collect())
            .collect();
        let views: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
        let (out, _) =
            apply_format_rule(&views, &rule, &cs).ok_or("rule skipped at matching length")?;
        for (i, c) in out.iter().enumerate() {
            let slot: &Slot = rule.slot(i);
            if !slot.allows(symbols[c.index()]) {
                violations += 1;
            }
        }
    }
    Ok(Outcome::new(
        tried == CORRUPTED_POSITIONS && recovered >= MIN_RECOVERED && violations == 0,
        format!(
            "recovered {recovered}/{tried} corrupted digit positions (>= {MIN_RECOVERED}); \
             {violations} slot violations in {RULE_CASES} random rules"
        ),
    ))
}

fn c8_end_to_end(p: &Pipeline) -> Res<Outcome> {
    let initial = read_json(&p.work.join("eval-initial.json"))?;
    let last = read_json(&p.work.join("eval-final.json"))?;
    let (r0, r4) = (num(&initial, "correct_rate")?, num(&last, "correct_rate")?);
    let n = last["field_count"].as_u64().unwrap_or(0) as usize;
    Ok(Outcome::new(
        n == EVAL_FIELDS && r4 >= FIELD_MIN_RATE && r4 > r0,
        format!(
            "stage-{} model {}/{n} fields correct ({r4:.4} >= {FIELD_MIN_RATE}); synthetic-only {r0:.4}",
            BOOTSTRAP_STAGES - 1,
            last["correct_count"]
        ),
    ))
}

fn tree_digest(root: &Path) -> Res<BTreeMap<String, u64>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .display()
                    .to_string();
                let bytes = fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(rel, fnv1a(&bytes, 0xcbf2_9ce4_8422_2325));
            }
        }
    }
    Ok(out)
}

/// Reduced-scale pipeline, run from scratch once single-threaded and once
/// with two workers, in the same directory so recorded paths agree.
fn c9_determinism() -> Res<Outcome> {
    let dir = workspace().join("target/acceptance-run/determinism");
    let mut digests = Vec::new();
    for threads in ["1", "2"] {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
        }
        let env: Vec<(&str, String)> = [
            ("IDOCR_PATHS__WORK", dir.display().to_string()),
            ("IDOCR_CORPUS__TRAIN_PER_CLASS", "40".into()),
            ("IDOCR_CORPUS__TEST_PER_CLASS", "5".into()),
            ("IDOCR_CORPUS__MINE_FIELDS", "120".into()),
            ("IDOCR_CORPUS__TEST_FIELDS", "40".into()),
            ("IDOCR_CORPUS__EVAL_FIELDS", "20".into()),
            ("IDOCR_TRAIN__EPOCHS", "1".into()),
            ("IDOCR_BOOTSTRAP__STAGES", "2".into()),
            ("IDOCR_BOOTSTRAP__QUOTA", "40".into()),
            ("IDOCR_BOOTSTRAP__FINE_TUNE__EPOCHS", "1".into()),
        ]
        .into_iter()
        .collect();
        let common = ["--config", "configs/desk.toml", "--threads", threads];
        let model = dir.join("run/stage-1/model.ocrm").display().to_string();
        let corpus = dir.join("corpora/eval-fields").display().to_string();
        let results = dir.join("eval.jsonl").display().to_string();
        let report = dir.join("eval.json").display().to_string();
        let steps: [&[&str]; 5] = [
            &["gen"],
            &["train"],
            &["bootstrap"],
            &[
                "ocr", "--model", &model, "--corpus", &corpus, "--out", &results,
            ],
            &[
                "eval",
                "--results",
                &results,
                "--corpus",
                &corpus,
                "--out",
                &report,
            ],
        ];
        for step in steps {
            let args: Vec<&str> = common.iter().chain(step.iter()).copied().collect();
            idocr(&args, &env)?;
        }
        digests.push(tree_digest(&dir)?);
    }
    let (a, b) = (&digests[0], &digests[1]);
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    let key_files = [
        "models/cifarnet-like.ocrm",
        "run/summary.json",
        "corpora/mine-fields/fields.jsonl",
    ];
    let present = key_files.iter().all(|k| a.contains_key(*k));
    Ok(Outcome::new(
        differing.is_empty() && present,
        format!(
            "{} files (manifests, models, reports, images) byte-identical at --threads 1 and 2{}",
            a.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {differing:?}")
            }
        ),
    ))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // that excludes this suite skips it.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    results.push((1, "gradient correctness", c1_gradients()));
    results.push((2, "levenshtein oracle equivalence", c2_levenshtein()));
    results.push((
        5,
        "segmentation round-trip",
        c5_segmentation().unwrap_or_else(Outcome::error),
    ));

    let pipeline = Pipeline::open().and_then(|mut p| p.run_all().map(|()| p));
    let heavy: [(u8, &str, Check); 5] = [
        (3, "synthetic-only training", c3_training),
        (4, "latency budget", c4_latency),
        (6, "bootstrap experiment", c6_bootstrap),
        (7, "format post-processing", c7_format_rules),
        (8, "end-to-end field accuracy", c8_end_to_end),
    ];
    for (id, name, check) in heavy {
        let outcome = match &pipeline {
            Ok(p) => check(p).unwrap_or_else(Outcome::error),
            Err(e) => Outcome::error(format!("pipeline: {e}")),
        };
        results.push((id, name, outcome));
    }
    results.push((
        9,
        "determinism",
        c9_determinism().unwrap_or_else(Outcome::error),
    ));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "{} {id} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
