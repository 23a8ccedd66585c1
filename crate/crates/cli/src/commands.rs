use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dermafuse::corpus::{split_corpus, validate_corpus, NarrativeCorpus, TEXT_TRAIN_FRACTION};
use dermafuse::dataset::{
    dedup, dedup_perceptual, ingest_source, sampling_weights, DatasetManifest, ExclusionList, IngestOptions, LabelMap,
    Split, SplitConfig,
};
use dermafuse::fusion::{evaluate_fusion, serve, ChainMode, DiagnoseOptions, ServiceConfig};
use dermafuse::io::to_pretty_json;
use dermafuse::synthetic::{keyword_corpus, toy_label_map, toy_manifest, toy_registry, write_stub_models};
use dermafuse::text::{
    build_examples, evaluate_narratives, finetune, run_chain, AdapterConfig, ChainConfig, ExampleSettings,
    FinetuneSettings, TextModel, TextTrainMode,
};
use dermafuse::vision::{
    evaluate, sweep, train, AugmentPreset, BackboneConfig, SamplerKind, SweepGrid, TrainConfig, VisionModel,
};
use dermafuse::{ClassCode, ClassRegistry};

use crate::*;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Forge(c) => forge(c),
        Command::Corpus(c) => corpus(c),
        Command::TrainVision(a) => train_vision(a),
        Command::EvalVision(a) => eval_vision(a),
        Command::Sweep(a) => {
            let grid: SweepGrid = serde_json::from_str(&read(&a.grid)?).context("parsing sweep grid")?;
            let manifest = DatasetManifest::load(&a.manifest)?;
            let results = sweep(&manifest, &grid, &a.results)?;
            print!("{}", results.render_table());
            Ok(())
        }
        Command::TrainText(a) => train_text(a),
        Command::EvalText(a) => eval_text(a),
        Command::ChainRun(a) => chain_run(a),
        Command::Serve(a) => {
            let cfg = ServiceConfig::load(&a.config)?;
            serve(&cfg, a.bind)?;
            Ok(())
        }
        Command::EvalFusion(a) => eval_fusion(a),
        Command::Synth(a) => synth(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_report<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, to_pretty_json(value)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load_registry(spec: &str) -> Result<ClassRegistry> {
    Ok(match spec {
        "skin26" => ClassRegistry::skin26(),
        "toy4" => toy_registry(),
        path => serde_json::from_str(&read(Path::new(path))?).context("parsing registry")?,
    })
}

fn parse_class(registry: &ClassRegistry, s: &str) -> Result<ClassCode> {
    let s = s.trim();
    match s.parse::<u32>() {
        Ok(n) => Ok(registry.check(ClassCode(n))?),
        Err(_) => Ok(registry.code_of(s)?),
    }
}

fn forge(cmd: ForgeCmd) -> Result<()> {
    match cmd {
        ForgeCmd::Ingest {
            manifest,
            source,
            source_id,
            label_map,
            exclude,
            registry,
            perceptual,
        } => {
            let mut m = if manifest.exists() {
                DatasetManifest::load(&manifest)?
            } else {
                DatasetManifest::new(load_registry(&registry)?)
            };
            let labels = LabelMap::load(&label_map)?;
            labels.validate(m.registry())?;
            let options = IngestOptions {
                exclusions: match exclude {
                    Some(p) => ExclusionList::load(&p)?,
                    None => ExclusionList::default(),
                },
                perceptual,
            };
            let report = ingest_source(&source, &source_id, &labels, &options)?;
            let (found, rejected, excluded) = (report.samples.len(), report.rejected.len(), report.excluded.len());
            let outcome = m.add_source(&source_id, &source, report.samples, report.rejected)?;
            m.save(&manifest)?;
            println!(
                "{source_id}: {found} images, {rejected} rejected, {excluded} excluded, {} duplicates; manifest now holds {}",
                outcome.removed.len(),
                m.samples().len()
            );
        }
        ForgeCmd::Dedup {
            manifest,
            perceptual,
            max_distance,
        } => {
            let mut m = DatasetManifest::load(&manifest)?;
            let samples = m.samples().to_vec();
            let outcome = if perceptual {
                dedup_perceptual(samples, max_distance)
            } else {
                dedup(samples)
            };
            let removed = outcome.removed.len();
            m.apply_dedup(outcome);
            m.save(&manifest)?;
            println!("removed {removed}; {} kept", m.samples().len());
        }
        ForgeCmd::Split {
            manifest,
            train_fraction,
            seed,
            unstratified,
        } => {
            let mut m = DatasetManifest::load(&manifest)?;
            let warnings = m.apply_split(&SplitConfig {
                train_fraction,
                seed,
                stratified: !unstratified,
            })?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            m.save(&manifest)?;
            println!(
                "train {}, val {}",
                m.split(Split::Train).count(),
                m.split(Split::Val).count()
            );
        }
        ForgeCmd::Stats { manifest, json } => {
            let m = DatasetManifest::load(&manifest)?;
            if json {
                println!("{}", to_pretty_json(m.stats())?);
            } else {
                print!("{}", m.stats().render_table());
            }
        }
        ForgeCmd::Weights { manifest } => {
            let m = DatasetManifest::load(&manifest)?;
            println!("{}", to_pretty_json(&sampling_weights(&m)?)?);
        }
    }
    Ok(())
}

fn corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate { corpus, per_class } => {
            let c = NarrativeCorpus::load(&corpus)?;
            let report = validate_corpus(&c, per_class);
            println!("{}", to_pretty_json(&report)?);
            if !report.is_clean() {
                bail!("{} problem(s) found", report.violation_count());
            }
        }
        CorpusCmd::Split {
            corpus,
            seed,
            train_fraction,
            out,
        } => {
            let c = split_corpus(&NarrativeCorpus::load(&corpus)?, seed, train_fraction)?;
            c.save(out.as_deref().unwrap_or(&corpus))?;
            println!("train {}, val {}", c.split(Split::Train).count(), c.split(Split::Val).count());
        }
        CorpusCmd::Prompt { keywords } => {
            println!("{}", dermafuse::corpus::build_generation_prompt(&keywords)?);
        }
    }
    Ok(())
}

fn train_vision(a: TrainVisionArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut backbone = BackboneConfig::new(&a.backbone, manifest.registry().len());
    backbone.freeze_fraction = a.freeze;
    backbone.pretrained = a.init_checkpoint.is_some();
    let preset = match a.augmentation {
        Augment::None => AugmentPreset::None,
        Augment::Standard => AugmentPreset::Standard,
        Augment::CropRotate => AugmentPreset::CropRotate,
    };
    let cfg = TrainConfig {
        epochs_max: a.epochs,
        patience: a.patience,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        sampler: match a.sampler {
            Sampler::Plain => SamplerKind::Plain,
            Sampler::Weighted => SamplerKind::Weighted,
        },
        samples_per_epoch: a.samples_per_epoch,
        init_checkpoint: a.init_checkpoint,
    };
    let out = train(&manifest, &backbone, &preset.config(a.resolution), &cfg)?;
    out.model.save(&a.out)?;
    for r in &out.history {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.3}  val top-1 {:.3}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_top1
        );
    }
    match out.best_epoch {
        Some(e) => println!("kept epoch {e}; saved to {}", a.out.display()),
        None => println!("saved to {}", a.out.display()),
    }
    Ok(())
}

fn eval_vision(a: EvalVisionArgs) -> Result<()> {
    let model = VisionModel::load(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = evaluate(&model, &manifest, &a.ks)?;
    for (k, acc) in &report.top_k_accuracy {
        println!("top-{k}: {:.4}", acc);
    }
    write_report(a.report.as_deref(), &report)
}

fn train_text(a: TrainTextArgs) -> Result<()> {
    let corpus = NarrativeCorpus::load(&a.corpus)?;
    let corpus = if corpus.split_seed.is_some() {
        corpus
    } else {
        split_corpus(&corpus, a.seed, TEXT_TRAIN_FRACTION)?
    };
    let mode: TextTrainMode = a.mode.parse()?;
    let inclusion_prob = match (mode, a.inclusion_prob) {
        (TextTrainMode::Pred { .. } | TextTrainMode::PredChain { .. }, None) => {
            bail!("--inclusion-prob is required for {mode}; use the image model's top-N accuracy")
        }
        (_, p) => p.unwrap_or(1.0),
    };
    let settings = ExampleSettings {
        mode,
        per_narrative: a.per_narrative,
        inclusion_prob,
        seed: a.seed,
    };
    let reg = &corpus.registry;
    let train = build_examples(corpus.split(Split::Train), reg, &settings)?;
    let val = build_examples(corpus.split(Split::Val), reg, &settings)?;
    if let Some(path) = &a.examples_out {
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        for ex in train.iter().chain(&val) {
            writeln!(f, "{}", serde_json::to_string(ex)?)?;
        }
    }
    let mut adapter = AdapterConfig::for_base(&a.base)?;
    if let Some(r) = a.rank {
        adapter.rank = r;
        adapter.alpha = 2.0 * r as f64;
    }
    if let Some(alpha) = a.alpha {
        adapter.alpha = alpha;
    }
    let ft = FinetuneSettings {
        epochs: a.epochs,
        patience: a.patience,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
    };
    let out = finetune(reg, &train, &val, &adapter, &ft)?;
    out.model.save(&a.out)?;
    for r in &out.history {
        println!("epoch {:>3}  loss {:.4}  val acc {:.3}", r.epoch, r.train_loss, r.val_accuracy);
    }
    let p = &out.model.meta.params;
    println!(
        "{} train / {} val examples; trainable {} of {} parameters ({:.2}%); saved to {}",
        train.len(),
        val.len(),
        p.trainable_params,
        p.total_params,
        100.0 * p.trainable_fraction,
        a.out.display()
    );
    Ok(())
}

fn eval_text(a: EvalTextArgs) -> Result<()> {
    let model = TextModel::load(&a.checkpoint)?;
    let corpus = NarrativeCorpus::load(&a.corpus)?;
    model.registry().ensure_matches(&corpus.registry)?;
    if corpus.split_seed.is_none() {
        bail!("corpus has no split; run `corpus split` first");
    }
    let report = evaluate_narratives(&model, corpus.split(Split::Val), a.mode.parse()?, a.chain_k)?;
    println!("top-1: {:.4} over {} narratives", report.top1(), report.total);
    write_report(a.report.as_deref(), &report)
}

fn chain_run(a: ChainRunArgs) -> Result<()> {
    let model = TextModel::load(&a.checkpoint)?;
    let narrative = match (a.narrative, a.narrative_file) {
        (Some(n), _) => n,
        (None, Some(p)) => read(&p)?,
        (None, None) => bail!("pass --narrative or --narrative-file"),
    };
    let reg = model.registry();
    let predictions = a
        .predictions
        .iter()
        .map(|s| parse_class(reg, s))
        .collect::<Result<Vec<_>>>()?;
    let (class, trace) = run_chain(&model, &narrative, &predictions, &ChainConfig::all_classes(a.k, reg), reg)?;
    println!("{}", to_pretty_json(&trace)?);
    println!("final: {} ({})", reg.name(class)?, class);
    Ok(())
}

fn eval_fusion(a: EvalFusionArgs) -> Result<()> {
    let vision = VisionModel::load(&a.vision)?;
    let text = TextModel::load(&a.text)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let corpus = NarrativeCorpus::load(&a.corpus)?;
    let options = DiagnoseOptions {
        top_n: a.top_n,
        chain: a.chain_k.parse::<ChainMode>()?,
    };
    let r = evaluate_fusion(&vision, &text, &manifest, &corpus, &options, a.trials, a.seed)?;
    for (k, acc) in &r.vision_only.top_k_accuracy {
        println!("vision top-{k}: {acc:.4}");
    }
    println!(
        "fused top-1: {:.4} over {} pairs (top_n {}, chain {})",
        r.report.top1(),
        r.report.total,
        options.top_n,
        options.chain
    );
    write_report(a.report.as_deref(), &r)
}

fn synth(a: SynthArgs) -> Result<()> {
    let images = a.out.join("images");
    fs::create_dir_all(&images)?;
    let manifest = toy_manifest(&images, a.images_per_class, a.size, a.seed)?;
    manifest.save(&a.out.join("manifest.json"))?;
    fs::write(a.out.join("label_map.json"), to_pretty_json(&toy_label_map())?)?;
    let corpus = split_corpus(
        &keyword_corpus(a.narratives_per_class, a.seed),
        a.seed,
        TEXT_TRAIN_FRACTION,
    )?;
    corpus.save(&a.out.join("corpus.json"))?;
    let models = a.out.join("stub-models");
    write_stub_models(&models, manifest.registry())?;
    fs::write(
        a.out.join("service.toml"),
        "vision_checkpoint = \"stub-models/vision\"\nadapter_checkpoint = \"stub-models/text\"\ntop_n = 3\nchain = \"2\"\n",
    )?;
    println!(
        "wrote {} images, {} narratives and stub models under {}",
        manifest.samples().len(),
        corpus.narratives.len(),
        a.out.display()
    );
    Ok(())
}
