//! Small synthetic datasets that exercise the whole pipeline on a CPU.
//!
//! The toy registry has four classes. Each class has a characteristic
//! colored shape for images and a disjoint set of symptom keywords for
//! narratives, so both modalities are separable on their own.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_generation_prompt, Narrative, NarrativeCorpus};
use crate::dataset::{ingest_source, DatasetManifest, IngestOptions, LabelMap, SplitConfig};
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

pub const TOY_VERSION: &str = "toy4-v1";

struct ToyClass {
    name: &'static str,
    dir: &'static str,
    color: [u8; 3],
    shape: Shape,
    keywords: [&'static str; 6],
}

#[derive(Copy, Clone)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Ring,
}

const TOY_CLASSES: [ToyClass; 4] = [
    ToyClass {
        name: "Crimson Plaque",
        dir: "crimson_plaque",
        color: [200, 30, 40],
        shape: Shape::Disc,
        keywords: [
            "crimson patches",
            "burning sensation",
            "raised border",
            "flaking edges",
            "warm to touch",
            "spreading redness",
        ],
    },
    ToyClass {
        name: "Azure Scale",
        dir: "azure_scale",
        color: [40, 70, 210],
        shape: Shape::Square,
        keywords: [
            "bluish scales",
            "cold fingertips",
            "silvery flakes",
            "numb skin",
            "cracked knuckles",
            "peeling layers",
        ],
    },
    ToyClass {
        name: "Verdant Papule",
        dir: "verdant_papule",
        color: [40, 180, 60],
        shape: Shape::Triangle,
        keywords: [
            "greenish bumps",
            "weeping blisters",
            "sour odor",
            "tiny pustules",
            "itchy clusters",
            "murky discharge",
        ],
    },
    ToyClass {
        name: "Amber Crust",
        dir: "amber_crust",
        color: [230, 190, 30],
        shape: Shape::Ring,
        keywords: [
            "golden crust",
            "honey colored scabs",
            "sticky residue",
            "tender nodules",
            "swollen glands",
            "oozing sores",
        ],
    },
];

pub fn toy_registry() -> ClassRegistry {
    ClassRegistry::new(TOY_VERSION, TOY_CLASSES.iter().map(|c| c.name)).expect("valid toy registry")
}

pub fn toy_label_map() -> LabelMap {
    LabelMap {
        labels: TOY_CLASSES
            .iter()
            .enumerate()
            .map(|(i, c)| (c.dir.to_string(), ClassCode::from_index(i)))
            .collect(),
        ignore: BTreeSet::new(),
    }
}

/// Symptom keywords of a toy class.
pub fn toy_keywords(code: ClassCode) -> &'static [&'static str] {
    &TOY_CLASSES[code.index()].keywords
}

/// Writes a solid-color PNG, creating parent directories.
pub fn write_png(path: &Path, width: u32, height: u32, color: [u8; 3]) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).expect("create fixture directory");
    }
    RgbImage::from_pixel(width, height, Rgb(color))
        .save(path)
        .expect("write fixture png");
}

fn jitter(rng: &mut ChaCha8Rng, v: u8, amount: i32) -> u8 {
    (i32::from(v) + rng.random_range(-amount..=amount)).clamp(0, 255) as u8
}

/// Renders one toy image of `class` with random placement and color noise.
pub fn render_shape(code: ClassCode, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let class = &TOY_CLASSES[code.index()];
    let bg = [
        jitter(rng, 225, 20),
        jitter(rng, 190, 20),
        jitter(rng, 170, 20),
    ];
    let fg = class.color.map(|c| jitter(rng, c, 25));
    let s = size as f32;
    let radius = rng.random_range(0.22 * s..0.34 * s);
    let cx = rng.random_range(radius + 1.0..s - radius - 1.0);
    let cy = rng.random_range(radius + 1.0..s - radius - 1.0);
    let mut img = RgbImage::new(size, size);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let dx = x as f32 + 0.5 - cx;
        let dy = y as f32 + 0.5 - cy;
        let inside = match class.shape {
            Shape::Disc => dx * dx + dy * dy <= radius * radius,
            Shape::Square => dx.abs() <= radius * 0.85 && dy.abs() <= radius * 0.85,
            Shape::Triangle => dy <= radius * 0.8 && dy >= -radius && dx.abs() <= (dy + radius) * 0.6,
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= radius * radius && d2 >= (radius * 0.55) * (radius * 0.55)
            }
        };
        let base = if inside { fg } else { bg };
        *p = Rgb(base.map(|c| jitter(rng, c, 8)));
    }
    img
}

/// Writes `per_class` PNGs per toy class under `root/<class dir>/`.
pub fn write_shapes_dataset(root: &Path, per_class: usize, size: u32, seed: u64) -> Result<LabelMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, class) in TOY_CLASSES.iter().enumerate() {
        let dir = root.join(class.dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for j in 0..per_class {
            let img = render_shape(ClassCode::from_index(i), size, &mut rng);
            let path = dir.join(format!("{j:04}.png"));
            img.save(&path)?;
        }
    }
    Ok(toy_label_map())
}

/// Builds a story from keywords in a fixed sentence frame, so the keywords
/// are the only thing that varies between stories.
pub fn toy_story(keywords: &[&str]) -> String {
    let mut parts = vec![format!("I have been dealing with {} on my skin for a while.", keywords[0])];
    if let Some(k) = keywords.get(1) {
        parts.push(format!("There is also {k}, which comes and goes."));
    }
    for k in keywords.iter().skip(2) {
        parts.push(format!("Lately I noticed {k} as well."));
    }
    parts.push("I would like to know what is going on.".to_string());
    parts.join(" ")
}

/// `per_class` distinct keyword narratives for each toy class, unsplit.
///
/// Panics if `per_class` exceeds 120, the number of ordered keyword triples.
pub fn keyword_corpus(per_class: usize, seed: u64) -> NarrativeCorpus {
    assert!(per_class <= 120, "at most 120 distinct stories per toy class");
    let registry = toy_registry();
    let mut corpus = NarrativeCorpus::new(registry);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, class) in TOY_CLASSES.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for j in 0..per_class {
            let kws = loop {
                let mut kws: Vec<&str> = class.keywords.to_vec();
                kws.shuffle(&mut rng);
                kws.truncate(3);
                if seen.insert(kws.clone()) {
                    break kws;
                }
            };
            let story = toy_story(&kws);
            corpus
                .push(Narrative {
                    id: format!("{}-{j:02}", class.dir),
                    class_code: ClassCode::from_index(i),
                    keywords: kws.iter().map(|s| s.to_string()).collect(),
                    generation_prompt: build_generation_prompt(&kws).expect("nonempty keywords"),
                    story,
                    split: None,
                })
                .expect("valid toy narrative");
        }
    }
    corpus
}

/// Renders the shapes dataset under `root` and returns an ingested,
/// 80/20-split manifest.
pub fn toy_manifest(root: &Path, per_class: usize, size: u32, seed: u64) -> Result<DatasetManifest> {
    let labels = write_shapes_dataset(root, per_class, size, seed)?;
    let report = ingest_source(root, "shapes", &labels, &IngestOptions::default())?;
    let mut manifest = DatasetManifest::new(toy_registry());
    manifest.add_source("shapes", root, report.samples, report.rejected)?;
    manifest.apply_split(&SplitConfig {
        seed,
        ..SplitConfig::default()
    })?;
    Ok(manifest)
}

/// Writes parameter-free vision (`stub-color`) and text (`stub-echo`)
/// checkpoints to `dir/vision` and `dir/text`.
pub fn write_stub_models(dir: &Path, registry: &ClassRegistry) -> Result<()> {
    use crate::text::{AdapterConfig, TextModel};
    use crate::vision::{AugmentationConfig, BackboneConfig, VisionModel};
    let vision = VisionModel::fresh(
        registry.clone(),
        BackboneConfig::new("stub-color", registry.len()),
        AugmentationConfig::none(32),
        0,
    )?;
    vision.save(&dir.join("vision"))?;
    let text = TextModel::base(registry.clone(), AdapterConfig::for_base("stub-echo")?, 0)?;
    text.save(&dir.join("text"))
}

/// Class counts keyed by code, for building imbalanced fixtures.
pub fn counts_map(counts: &[usize]) -> BTreeMap<ClassCode, usize> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (ClassCode::from_index(i), n))
        .collect()
}
