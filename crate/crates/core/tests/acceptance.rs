//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `DERMAFUSE_BLESS=1` rewrites the golden prompt files and the recorded
//! service responses instead of comparing against them.
//! `DERMAFUSE_FULL_DATA=<dir>` enables the full-scale dataset check.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use dermafuse::corpus::{split_corpus, TEXT_TRAIN_FRACTION};
use dermafuse::dataset::reference::{SKIN26_FINAL_COUNTS, SKIN26_TOTAL_IMAGES};
use dermafuse::dataset::{
    dedup, ingest_source, sampling_weights, ContentHash, DatasetManifest, ExclusionList, ImageSample, IngestOptions,
    LabelMap, SourceRecord, Split, SplitConfig, WeightedSampler,
};
use dermafuse::fusion::{build_router, evaluate_fusion, AppState, ChainMode, DiagnoseOptions, ServiceConfig};
use dermafuse::metrics::evaluate_scores;
use dermafuse::synthetic::{keyword_corpus, toy_label_map, toy_manifest, toy_registry, write_png, write_stub_models};
use dermafuse::text::{
    build_examples, build_prompt, evaluate_narratives, finetune, make_prediction_augmented_example, run_chain,
    AdapterConfig, ChainConfig, ExampleSettings, FinetuneSettings, FixedScores, PromptSpec, TextModel, TextTrainMode,
};
use dermafuse::vision::{
    evaluate, freeze_parameters, train, AugmentationConfig, BackboneConfig, SamplerKind, TrainConfig, VisionNet,
};
use dermafuse::{ClassCode, ClassRegistry};

const SAMPLER_TOLERANCE: f64 = 0.02;
const SAMPLER_DRAWS: usize = 100_000;
const SAMPLER_BUDGET: Duration = Duration::from_secs(10);
const DEDUP_BUDGET: Duration = Duration::from_secs(1);
const CHAIN_BUDGET: Duration = Duration::from_secs(5);
const INCLUSION_PROB: f64 = 0.952;
const INCLUSION_TOLERANCE: f64 = 0.01;
const INCLUSION_DRAWS: usize = 10_000;
const E2E_BUDGET: Duration = Duration::from_secs(600);
const E2E_MIN_UNIMODAL: f64 = 0.90;
const E2E_FUSED_SLACK: f64 = 0.05;
const FULL_SCALE_TOLERANCE: f64 = 0.03;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn blessing() -> bool {
    std::env::var_os("DERMAFUSE_BLESS").is_some()
}

fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn registry_of(m: usize) -> ClassRegistry {
    ClassRegistry::new(format!("m{m}"), (0..m).map(|i| format!("Class {i}"))).unwrap()
}

fn synthetic_source() -> SourceRecord {
    SourceRecord {
        source_id: "synthetic".into(),
        root: "/nonexistent".into(),
        rejected: Vec::new(),
    }
}

fn fake_sample(i: usize, code: usize, split: Option<Split>) -> ImageSample {
    let rel = format!("c{code}/{i:06}.png");
    ImageSample {
        id: ImageSample::make_id("synthetic", &rel),
        source_id: "synthetic".into(),
        relative_path: rel,
        class_code: ClassCode::from_index(code),
        content_hash: ContentHash::of_bytes(&(i as u64).to_le_bytes()),
        width: 1,
        height: 1,
        perceptual_hash: None,
        split,
    }
}

fn weighted_sampler_uniformity() -> Outcome {
    let counts = [10usize, 50, 200, 1000];
    let registry = registry_of(counts.len());
    let mut samples = Vec::new();
    for (code, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            samples.push(fake_sample(samples.len(), code, Some(Split::Train)));
        }
    }
    let manifest = DatasetManifest::from_parts(registry, vec![synthetic_source()], samples, None).map_err(err)?;
    let start = Instant::now();
    let weights = sampling_weights(&manifest).map_err(err)?;
    let labels: Vec<ClassCode> = manifest.samples().iter().map(|s| s.class_code).collect();
    let sampler = WeightedSampler::new(&labels, &weights).map_err(err)?;
    let draws = sampler.draw(&mut ChaCha8Rng::seed_from_u64(2024), SAMPLER_DRAWS);
    let elapsed = start.elapsed();
    let mut hist = vec![0usize; counts.len()];
    for i in draws {
        hist[labels[i].index()] += 1;
    }
    let freqs: Vec<f64> = hist.iter().map(|&h| h as f64 / SAMPLER_DRAWS as f64).collect();
    let target = 1.0 / counts.len() as f64;
    let worst = freqs.iter().map(|f| (f - target).abs()).fold(0.0, f64::max);
    ensure!(worst <= SAMPLER_TOLERANCE, "frequencies {freqs:?} off by {worst:.4}");
    ensure!(elapsed < SAMPLER_BUDGET, "took {elapsed:?}");
    Ok(format!("frequencies {freqs:.4?}, max deviation {worst:.4}, {elapsed:.2?}"))
}

fn dedup_correctness() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let dirs = ["crimson_plaque", "azure_scale", "verdant_papule", "amber_crust"];
    // 16 distinct images, then 4 byte-identical copies under new names.
    for i in 0..16u8 {
        let path = dir.path().join(dirs[usize::from(i % 4)]).join(format!("img{i:02}.png"));
        write_png(&path, 8, 8, [i * 15, 255 - i * 15, 100]);
    }
    for i in 0..4u8 {
        let class = dirs[usize::from(i % 4)];
        let src = dir.path().join(class).join(format!("img{i:02}.png"));
        fs::copy(&src, dir.path().join(class).join(format!("copy{i:02}.png"))).map_err(err)?;
    }
    let start = Instant::now();
    let report = ingest_source(dir.path(), "fixture", &toy_label_map(), &IngestOptions::default()).map_err(err)?;
    ensure!(report.samples.len() == 20, "ingested {} files", report.samples.len());
    let first = dedup(report.samples);
    let second = dedup(first.kept.clone());
    let elapsed = start.elapsed();
    ensure!(first.kept.len() == 16, "kept {}", first.kept.len());
    ensure!(first.removed.len() == 4, "removed {}", first.removed.len());
    ensure!(second.removed.is_empty(), "second pass removed {}", second.removed.len());
    ensure!(elapsed < DEDUP_BUDGET, "took {elapsed:?}");
    Ok(format!("20 files -> 16 kept, re-dedup removed 0, {elapsed:.2?}"))
}

fn split_stratification() -> Outcome {
    let registry = ClassRegistry::skin26();
    let mut samples = Vec::new();
    for (code, &n) in SKIN26_FINAL_COUNTS.iter().enumerate() {
        for _ in 0..n {
            samples.push(fake_sample(samples.len(), code, None));
        }
    }
    let total = samples.len();
    let mut manifest = DatasetManifest::from_parts(registry, vec![synthetic_source()], samples, None).map_err(err)?;
    manifest
        .apply_split(&SplitConfig {
            train_fraction: 0.8,
            seed: 17,
            stratified: true,
        })
        .map_err(err)?;
    let train = manifest.split(Split::Train).count();
    let val = manifest.split(Split::Val).count();
    ensure!(train + val == total, "train {train} + val {val} != {total}");
    let mut worst = 0.0f64;
    for (code, &n) in SKIN26_FINAL_COUNTS.iter().enumerate() {
        let c = ClassCode::from_index(code);
        let t = manifest.split(Split::Train).filter(|s| s.class_code == c).count();
        let dev = (t as f64 - 0.8 * n as f64).abs();
        worst = worst.max(dev);
        ensure!(dev <= 1.0, "class {code}: {t} of {n} in train");
    }
    Ok(format!("{total} images, {train}/{val}, max per-class deviation {worst:.2} samples"))
}

fn freeze_fraction_oracle() -> Outcome {
    let classes = 4usize;
    // conv weights (out * in * 3 * 3) plus bias, then the linear head
    let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
    let sizes = [conv(3, 8), conv(8, 16), conv(16, 32), conv(32, 32), 32 * classes + classes];
    let feature_total: usize = sizes[..4].iter().sum();
    let mut details = Vec::new();
    for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut net = VisionNet::build(&BackboneConfig::new("tiny-cnn", classes), 0).map_err(err)?;
        let actual: Vec<usize> = net.groups().iter().map(|g| g.param_count()).collect();
        ensure!(actual == sizes, "group sizes {actual:?}, expected {sizes:?}");
        let mut expected = 0;
        let mut cum = 0;
        for s in &sizes[..4] {
            cum += s;
            if cum as f64 <= f * feature_total as f64 {
                expected += 1;
            } else {
                break;
            }
        }
        let plan = freeze_parameters(&mut net, f).map_err(err)?;
        let frozen = plan.frozen.iter().take_while(|&&b| b).count();
        ensure!(
            plan.frozen.iter().filter(|&&b| b).count() == frozen,
            "f = {f}: frozen groups are not a prefix"
        );
        ensure!(frozen == expected, "f = {f}: froze {frozen} groups, oracle {expected}");
        ensure!(!plan.frozen[4], "f = {f}: head frozen");
        details.push(format!("{f}->{frozen}"));
    }
    Ok(details.join(" "))
}

fn brute_rank(scores: &[f64], gold: usize) -> usize {
    (0..scores.len())
        .filter(|&j| scores[j] > scores[gold] || (scores[j] == scores[gold] && j < gold))
        .count()
}

fn topk_oracle() -> Outcome {
    let (n, classes, ks) = (200usize, 26usize, [1usize, 3, 5]);
    for run in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        // odd runs use coarse scores so ties are common
        let rows: Vec<(ClassCode, Vec<f64>)> = (0..n)
            .map(|_| {
                let gold = ClassCode::from_index(rng.random_range(0..classes));
                let s = (0..classes)
                    .map(|_| {
                        if run % 2 == 1 {
                            f64::from(rng.random_range(0..5u8))
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect();
                (gold, s)
            })
            .collect();
        let report = evaluate_scores(classes, &ks, rows.iter().map(|(g, s)| (*g, s.as_slice()))).map_err(err)?;
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (gold, s) in &rows {
            let pred = (0..classes)
                .find(|&j| brute_rank(s, j) == 0)
                .expect("some class ranks first");
            confusion[gold.index()][pred] += 1;
        }
        ensure!(report.confusion.counts == confusion, "run {run}: confusion differs");
        let mut prev = 0.0;
        for k in ks {
            let hits = rows.iter().filter(|(g, s)| brute_rank(s, g.index()) < k).count();
            let expect = hits as f64 / n as f64;
            let got = report.top_k_accuracy[&k];
            ensure!(got == expect, "run {run}: top-{k} {got} vs brute force {expect}");
            ensure!(got >= prev, "run {run}: top-{k} below smaller k");
            prev = got;
        }
    }
    Ok("20 runs x 200 samples x 26 classes, exact match".into())
}

fn chain_schedule() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for m in 2..=12usize {
        let registry = registry_of(m);
        for k in 1..m {
            let mut rng = ChaCha8Rng::seed_from_u64((m * 100 + k) as u64);
            let scores: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let argmax = (0..m).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            let model = FixedScores::new(registry.clone(), scores);
            let (class, state) =
                run_chain(&model, "narrative", &[], &ChainConfig::all_classes(k, &registry), &registry).map_err(err)?;
            let mut expected = vec![m];
            while *expected.last().unwrap() > k {
                expected.push(expected.last().unwrap() - k);
            }
            ensure!(class.index() == argmax, "m={m} k={k}: got {class}, argmax {argmax}");
            ensure!(state.schedule() == expected, "m={m} k={k}: schedule {:?}", state.schedule());
            ensure!(state.replay().map_err(err)? == class, "m={m} k={k}: replay disagrees");
            cases += 1;
        }
    }
    let registry = ClassRegistry::skin26();
    let model = FixedScores::new(registry.clone(), (0..26).map(|i| f64::from(i) + 1.0).collect());
    let (_, state) =
        run_chain(&model, "narrative", &[], &ChainConfig::all_classes(5, &registry), &registry).map_err(err)?;
    let elapsed = start.elapsed();
    ensure!(
        state.schedule() == [26, 21, 16, 11, 6, 1],
        "26/5 schedule {:?}",
        state.schedule()
    );
    ensure!(elapsed < CHAIN_BUDGET, "took {elapsed:?}");
    Ok(format!("{cases} (m, k) cases, 26/5 -> 26 21 16 11 6 1, {elapsed:.2?}"))
}

fn inclusion_noise_calibration() -> Outcome {
    let registry = ClassRegistry::skin26();
    let mut rng = ChaCha8Rng::seed_from_u64(95);
    let mut included = 0usize;
    for i in 0..INCLUSION_DRAWS {
        let gold = ClassCode::from_index(rng.random_range(0..26));
        let ex = make_prediction_augmented_example("story", gold, 5, INCLUSION_PROB, &registry, i as u64)
            .map_err(err)?;
        ensure!(ex.spec.predictions.len() == 5, "example {i} has {} predictions", ex.spec.predictions.len());
        if ex.spec.predictions.contains(&gold) {
            included += 1;
        }
    }
    let rate = included as f64 / INCLUSION_DRAWS as f64;
    ensure!(
        (rate - INCLUSION_PROB).abs() <= INCLUSION_TOLERANCE,
        "inclusion rate {rate:.4}"
    );
    Ok(format!("gold included in {rate:.4} of {INCLUSION_DRAWS}"))
}

const GOLDEN_NARRATIVE: &str = "For about three weeks I have had a firm, slightly raised brown bump on my lower leg. \
It itches a little when I shave and dimples inward when I pinch it.";

fn golden_specs() -> Vec<(&'static str, PromptSpec)> {
    let all: Vec<ClassCode> = ClassRegistry::skin26().codes().collect();
    let preds = vec![ClassCode(1), ClassCode(7), ClassCode(19)];
    vec![
        ("plain", PromptSpec::plain()),
        ("explicit_mapping", PromptSpec::explicit_mapping(all.clone())),
        ("implicit_options", PromptSpec::implicit_options(all.clone())),
        ("predictions", PromptSpec::predictions(preds.clone())),
        ("predictions_plus_mapping", PromptSpec::predictions_plus_mapping(preds.clone(), all.clone())),
        ("predictions_plus_options", PromptSpec::predictions_plus_options(preds, all)),
    ]
}

fn prompt_golden_files() -> Outcome {
    let registry = ClassRegistry::skin26();
    let dir = tests_dir().join("golden");
    let mut checked = 0;
    for (name, spec) in golden_specs() {
        let a = build_prompt(GOLDEN_NARRATIVE, &spec, &registry).map_err(err)?.text;
        let b = build_prompt(GOLDEN_NARRATIVE, &spec, &registry).map_err(err)?.text;
        ensure!(a == b, "{name}: two builds differ");
        let path = dir.join(format!("{name}.txt"));
        if blessing() {
            fs::create_dir_all(&dir).map_err(err)?;
            fs::write(&path, &a).map_err(err)?;
        }
        let golden = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(a == golden, "{name}: differs from {}", path.display());
        checked += 1;
    }
    let mapping = fs::read_to_string(dir.join("explicit_mapping.txt")).map_err(err)?;
    ensure!(mapping.contains("Dermatofibroma → 1"), "mapping lacks \"Dermatofibroma → 1\"");
    Ok(format!("{checked} modes match golden files"))
}

fn tiny_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let manifest = toy_manifest(dir.path(), 50, 40, 7).map_err(err)?;
    ensure!(manifest.samples().len() == 200, "{} images", manifest.samples().len());
    let cfg = TrainConfig {
        epochs_max: 20,
        batch_size: 16,
        learning_rate: 3e-3,
        sampler: SamplerKind::Weighted,
        seed: 1,
        ..TrainConfig::default()
    };
    let vision = train(&manifest, &BackboneConfig::new("tiny-cnn", 4), &AugmentationConfig::standard(32), &cfg)
        .map_err(err)?
        .model;
    let vision_report = evaluate(&vision, &manifest, &[1, 3]).map_err(err)?;
    let vision_top1 = vision_report.top_k_accuracy[&1];

    let corpus = split_corpus(&keyword_corpus(10, 3), 3, TEXT_TRAIN_FRACTION).map_err(err)?;
    let reg = corpus.registry.clone();
    let adapter = AdapterConfig::for_base("tiny-bow").map_err(err)?;
    let settings = FinetuneSettings::default();
    let plain = ExampleSettings::new(TextTrainMode::Plain);
    let tr = build_examples(corpus.split(Split::Train), &reg, &plain).map_err(err)?;
    let va = build_examples(corpus.split(Split::Val), &reg, &plain).map_err(err)?;
    let text = finetune(&reg, &tr, &va, &adapter, &settings).map_err(err)?.model;
    let text_top1 = evaluate_narratives(&text, corpus.split(Split::Val), TextTrainMode::Plain, None)
        .map_err(err)?
        .top1();

    let fused_examples = ExampleSettings {
        per_narrative: 16,
        inclusion_prob: vision_report.top_k_accuracy[&3],
        seed: 5,
        ..ExampleSettings::new(TextTrainMode::PredChain { n: 3 })
    };
    let tr = build_examples(corpus.split(Split::Train), &reg, &fused_examples).map_err(err)?;
    let va = build_examples(corpus.split(Split::Val), &reg, &fused_examples).map_err(err)?;
    let fused_text = finetune(&reg, &tr, &va, &adapter, &settings).map_err(err)?.model;
    let opts = DiagnoseOptions {
        top_n: 3,
        chain: ChainMode::Chain { k: 2 },
    };
    let fused = evaluate_fusion(&vision, &fused_text, &manifest, &corpus, &opts, 3, 11).map_err(err)?;
    let fused_top1 = fused.report.top1();

    // A text model that echoes the first image prediction must reproduce the
    // image model's top-1 decision on every pair.
    let echo = TextModel::base(reg.clone(), AdapterConfig::for_base("stub-echo").map_err(err)?, 0).map_err(err)?;
    let direct = DiagnoseOptions {
        top_n: 3,
        chain: ChainMode::Direct,
    };
    let consistency = evaluate_fusion(&vision, &echo, &manifest, &corpus, &direct, 1, 11).map_err(err)?;
    let vision_pred: BTreeMap<String, ClassCode> = {
        let images = dermafuse::vision::load_split(&manifest, Split::Val).map_err(err)?;
        let scores = vision
            .predict_scores(&images.iter().map(|i| i.image.clone()).collect::<Vec<_>>())
            .map_err(err)?;
        images
            .iter()
            .zip(scores)
            .map(|(i, s)| (i.id.clone(), ClassCode::from_index(dermafuse::metrics::argmax(&s))))
            .collect()
    };
    let mismatches = consistency
        .pairs
        .iter()
        .filter(|p| vision_pred[&p.image_id] != p.predicted)
        .count();
    let elapsed = start.elapsed();

    let summary = format!(
        "vision {vision_top1:.3}, text {text_top1:.3}, fused {fused_top1:.3}, echo mismatches {mismatches}, {elapsed:.1?}"
    );
    ensure!(vision_top1 >= E2E_MIN_UNIMODAL, "vision below target: {summary}");
    ensure!(text_top1 >= E2E_MIN_UNIMODAL, "text below target: {summary}");
    ensure!(
        fused_top1 >= vision_top1.max(text_top1) - E2E_FUSED_SLACK,
        "fused below target: {summary}"
    );
    ensure!(mismatches == 0, "fusion consistency: {summary}");
    ensure!(
        fused.report.confusion.total() as usize == 3 * manifest.split(Split::Val).count(),
        "fused confusion total {}",
        fused.report.confusion.total()
    );
    ensure!(elapsed < E2E_BUDGET, "took {elapsed:?}");
    Ok(summary)
}

const BOUNDARY: &str = "dermafuse-fixture-boundary";

fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, file, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match file {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: image/png\r\n\r\n")
                    .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

#[derive(serde::Deserialize)]
struct Case {
    name: String,
    method: String,
    path: String,
    /// Request body file, sent as multipart with the fixture boundary.
    #[serde(default)]
    body: Option<String>,
    status: u16,
}

/// Writes stub checkpoints and request bodies for the service fixtures.
fn bless_service_inputs(dir: &Path) -> Result<(), String> {
    write_stub_models(&dir.join("models"), &toy_registry()).map_err(err)?;
    let png = |color: [u8; 3]| -> Result<Vec<u8>, String> {
        let tmp = tempfile::tempdir().map_err(err)?;
        let p = tmp.path().join("x.png");
        write_png(&p, 16, 16, color);
        fs::read(&p).map_err(err)
    };
    let red = png([200, 30, 40])?;
    let story = b"I have crimson patches with a raised border on my forearm. It feels warm to touch.".as_slice();
    let requests: Vec<(&str, Vec<u8>)> = vec![
        ("diagnose", multipart(&[("image", Some("lesion.png"), &red), ("narrative", None, story)])),
        (
            "diagnose_direct",
            multipart(&[
                ("image", Some("lesion.png"), &red),
                ("narrative", None, story),
                ("top_n", None, b"2"),
                ("k", None, b"direct"),
            ]),
        ),
        ("missing_narrative", multipart(&[("image", Some("lesion.png"), &red)])),
        ("empty_narrative", multipart(&[("image", Some("lesion.png"), &red), ("narrative", None, b"  ")])),
        (
            "bad_k",
            multipart(&[("image", Some("lesion.png"), &red), ("narrative", None, story), ("k", None, b"9")]),
        ),
        (
            "unreadable_image",
            multipart(&[("image", Some("lesion.png"), b"not an image"), ("narrative", None, story)]),
        ),
        (
            "malformed",
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"\r\n\r\nunterminated").into_bytes(),
        ),
    ];
    for (name, body) in requests {
        fs::write(dir.join(format!("{name}.request")), body).map_err(err)?;
    }
    Ok(())
}

fn service_contract() -> Outcome {
    let dir = tests_dir().join("fixtures").join("service");
    if blessing() {
        bless_service_inputs(&dir)?;
    }
    let cfg = ServiceConfig::load(&dir.join("service.toml")).map_err(err)?;
    ensure!(!cfg.record_timings, "fixture config must disable timings");
    let state = Arc::new(AppState::from_config(&cfg).map_err(err)?);
    let cases: Vec<Case> =
        serde_json::from_str(&fs::read_to_string(dir.join("cases.json")).map_err(err)?).map_err(err)?;
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(err)?;
    let mut client_errors = 0;
    for case in &cases {
        let router = build_router(state.clone());
        let request = match &case.body {
            Some(file) => Request::builder()
                .method(case.method.as_str())
                .uri(&case.path)
                .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
                .body(Body::from(fs::read(dir.join(file)).map_err(err)?)),
            None => Request::builder()
                .method(case.method.as_str())
                .uri(&case.path)
                .body(Body::empty()),
        }
        .map_err(err)?;
        let (status, body) = runtime.block_on(async {
            let resp = router.oneshot(request).await.expect("infallible router");
            let status = resp.status();
            let bytes = resp.into_body().collect().await.expect("body").to_bytes();
            (status, bytes)
        });
        let path = dir.join(format!("{}.response.json", case.name));
        if blessing() {
            fs::write(&path, &body).map_err(err)?;
        }
        let recorded = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(
            status == StatusCode::from_u16(case.status).map_err(err)?,
            "{}: status {status}, expected {}",
            case.name,
            case.status
        );
        ensure!(body.as_ref() == recorded.as_slice(), "{}: body differs from recording", case.name);
        if status.is_client_error() {
            let v: serde_json::Value = serde_json::from_slice(&body).map_err(err)?;
            ensure!(
                v["error"]["code"].is_string() && v["error"]["message"].is_string(),
                "{}: unstructured error body",
                case.name
            );
            client_errors += 1;
        }
    }
    ensure!(cases.iter().any(|c| c.name == "malformed"), "no malformed-multipart case");
    Ok(format!("{} recorded exchanges replayed, {client_errors} structured 4xx", cases.len()))
}

/// Expects `<dir>/<source>/` trees with `<dir>/<source>.labels.json` and an
/// optional `<dir>/<source>.exclude` for each source.
fn full_scale_forge(dir: &Path) -> Outcome {
    let mut sources: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    sources.sort();
    ensure!(!sources.is_empty(), "no source directories under {}", dir.display());
    let mut manifest = DatasetManifest::new(ClassRegistry::skin26());
    for src in &sources {
        let id = src.file_name().unwrap().to_string_lossy().into_owned();
        let labels = LabelMap::load(&dir.join(format!("{id}.labels.json"))).map_err(err)?;
        let exclude = dir.join(format!("{id}.exclude"));
        let options = IngestOptions {
            exclusions: if exclude.exists() {
                ExclusionList::load(&exclude).map_err(err)?
            } else {
                ExclusionList::default()
            },
            perceptual: false,
        };
        let report = ingest_source(src, &id, &labels, &options).map_err(err)?;
        manifest.add_source(&id, src, report.samples, report.rejected).map_err(err)?;
    }
    let total = manifest.samples().len();
    let present = manifest.stats().rows.iter().filter(|c| c.total > 0).count();
    let dev = (total as f64 - SKIN26_TOTAL_IMAGES as f64).abs() / SKIN26_TOTAL_IMAGES as f64;
    ensure!(present == 26, "{present} classes populated");
    ensure!(dev <= FULL_SCALE_TOLERANCE, "{total} images, {:.1}% from {SKIN26_TOTAL_IMAGES}", dev * 100.0);
    Ok(format!("{total} images over 26 classes ({:.2}% from {SKIN26_TOTAL_IMAGES})", dev * 100.0))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("weighted sampler uniformity", weighted_sampler_uniformity),
        ("dedup correctness", dedup_correctness),
        ("split stratification", split_stratification),
        ("freeze fraction oracle", freeze_fraction_oracle),
        ("top-k evaluation oracle", topk_oracle),
        ("chain schedule", chain_schedule),
        ("inclusion noise calibration", inclusion_noise_calibration),
        ("prompt golden files", prompt_golden_files),
        ("tiny end-to-end", tiny_end_to_end),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    match std::env::var_os("DERMAFUSE_FULL_DATA") {
        Some(dir) => match full_scale_forge(Path::new(&dir)) {
            Ok(d) => println!("PASS  full-scale forge: {d}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  full-scale forge: {e}");
            }
        },
        None => println!("SKIP  full-scale forge: set DERMAFUSE_FULL_DATA to the downloaded sources"),
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
