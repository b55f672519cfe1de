//! The language-conditioned skill dataset and its on-disk form: a JSON-lines
//! index with a header line, plus sibling CDPT depth rasters.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::grammar::{self, render_instruction, ActionKind, BasicInstruction, ClothType};
use crate::model::{Tokenizer, TrainSample};
use crate::sim::{read_depth, write_depth, DepthImage};

use super::demo::Demonstration;
use super::SkillError;

/// One basic skill example: an observation, the instruction, and the
/// labeled action.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillTriple {
    pub demo_id: String,
    pub step_index: usize,
    pub image_index: usize,
    pub cloth_type: ClothType,
    pub instruction: BasicInstruction,
    pub pixel: (u32, u32),
    pub world: DVec3,
    pub image: DepthImage,
}

/// How a dataset was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum Provenance {
    Rule,
    Llm { prompt_hash: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillDataset {
    pub triples: Vec<SkillTriple>,
    pub vocab_fingerprint: u64,
    pub provenance: Provenance,
}

/// Concatenates decompositions of all demos. Demos whose decomposition
/// fails are skipped and reported, not fatal.
pub fn build_dataset(
    demos: &[Demonstration],
    provenance: Provenance,
    mut decomposer: impl FnMut(&Demonstration) -> Result<Vec<SkillTriple>, SkillError>,
) -> (SkillDataset, Vec<(String, SkillError)>) {
    let mut triples = Vec::new();
    let mut skipped = Vec::new();
    for demo in demos {
        match decomposer(demo) {
            Ok(mut t) => triples.append(&mut t),
            Err(e) => skipped.push((demo.demo_id.clone(), e)),
        }
    }
    (
        SkillDataset { triples, vocab_fingerprint: grammar::vocab_fingerprint(), provenance },
        skipped,
    )
}

const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
    vocab_fingerprint: u64,
    provenance: Provenance,
    triple_count: usize,
}

#[derive(Serialize, Deserialize)]
struct TripleLine {
    demo_id: String,
    step: usize,
    cloth_type: ClothType,
    kind: ActionKind,
    instruction: String,
    pixel: [u32; 2],
    world: [f64; 3],
    image_path: String,
}

/// Writes `dataset.jsonl` plus an `images/` directory of CDPT files into
/// `dir`. Identical datasets produce identical bytes.
pub fn write_dataset(dir: &Path, dataset: &SkillDataset) -> Result<(), SkillError> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut written: BTreeSet<String> = BTreeSet::new();
    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("dataset.jsonl"))?);
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        vocab_fingerprint: dataset.vocab_fingerprint,
        provenance: dataset.provenance,
        triple_count: dataset.triples.len(),
    };
    writeln!(file, "{}", serde_json::to_string(&header)?)?;

    for triple in &dataset.triples {
        let image_name = format!("{}_{:03}.cdpt", triple.demo_id, triple.image_index);
        if written.insert(image_name.clone()) {
            write_depth(&images_dir.join(&image_name), &triple.image)?;
        }
        let line = TripleLine {
            demo_id: triple.demo_id.clone(),
            step: triple.step_index,
            cloth_type: triple.cloth_type,
            kind: triple.instruction.kind,
            instruction: render_instruction(&triple.instruction),
            pixel: [triple.pixel.0, triple.pixel.1],
            world: [triple.world.x, triple.world.y, triple.world.z],
            image_path: format!("images/{image_name}"),
        };
        writeln!(file, "{}", serde_json::to_string(&line)?)?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a dataset directory back. The vocabulary fingerprint must match
/// the current grammar.
pub fn read_dataset(dir: &Path) -> Result<SkillDataset, SkillError> {
    let file = BufReader::new(std::fs::File::open(dir.join("dataset.jsonl"))?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SkillError::InvalidDemo("dataset.jsonl is empty".to_string()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(SkillError::UnsupportedSchema(header.schema_version));
    }
    let expected = grammar::vocab_fingerprint();
    if header.vocab_fingerprint != expected {
        return Err(SkillError::VocabMismatch { expected, found: header.vocab_fingerprint });
    }

    let mut triples = Vec::with_capacity(header.triple_count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TripleLine = serde_json::from_str(&line)?;
        let instruction = grammar::parse_instruction(&parsed.instruction, parsed.cloth_type)?;
        if instruction.kind != parsed.kind {
            return Err(SkillError::InvalidDemo(format!(
                "triple {}/{} kind disagrees with its instruction",
                parsed.demo_id, parsed.step
            )));
        }
        let image = read_depth(&dir.join(&parsed.image_path))?;
        if parsed.pixel[0] >= image.width || parsed.pixel[1] >= image.height {
            return Err(SkillError::InvalidDemo(format!(
                "triple {}/{} pixel {:?} outside image",
                parsed.demo_id, parsed.step, parsed.pixel
            )));
        }
        triples.push(SkillTriple {
            demo_id: parsed.demo_id,
            step_index: parsed.step,
            image_index: parsed.step / 2,
            cloth_type: parsed.cloth_type,
            instruction,
            pixel: (parsed.pixel[0], parsed.pixel[1]),
            world: DVec3::new(parsed.world[0], parsed.world[1], parsed.world[2]),
            image,
        });
    }
    Ok(SkillDataset {
        triples,
        vocab_fingerprint: header.vocab_fingerprint,
        provenance: header.provenance,
    })
}

/// Converts triples into model training samples.
pub fn to_train_samples(
    dataset: &SkillDataset,
    tokenizer: &Tokenizer,
    max_text_len: usize,
) -> Vec<TrainSample> {
    dataset
        .triples
        .iter()
        .map(|t| TrainSample {
            image: t.image.clone(),
            tokens: tokenizer.encode(&render_instruction(&t.instruction), max_text_len),
            target: t.pixel,
        })
        .collect()
}

fn swap_left_right(part: &str) -> String {
    part.split_whitespace()
        .map(|w| match w {
            "left" => "right",
            "right" => "left",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Horizontal-flip augmentation: mirrors the image, the labeled pixel, and
/// the left/right words of the part. Returns the dataset extended with one
/// flipped copy per triple.
pub fn augment_flip(dataset: &SkillDataset) -> SkillDataset {
    let mut triples = dataset.triples.clone();
    for t in &dataset.triples {
        let mut image = t.image.clone();
        for y in 0..image.height {
            for x in 0..image.width / 2 {
                let a = (y * image.width + x) as usize;
                let b = (y * image.width + (image.width - 1 - x)) as usize;
                image.data.swap(a, b);
            }
        }
        let mut flipped = t.clone();
        flipped.demo_id = format!("{}_flip", t.demo_id);
        flipped.image = image;
        flipped.pixel = (t.image.width - 1 - t.pixel.0, t.pixel.1);
        flipped.world = DVec3::new(-t.world.x, t.world.y, t.world.z);
        flipped.instruction.part = swap_left_right(&t.instruction.part);
        triples.push(flipped);
    }
    SkillDataset { triples, ..*dataset }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::default_env;
    use crate::planner::{plan_rule, TaskSpec};
    use crate::skill::decompose::decompose_rule;
    use crate::skill::demo::generate_demo;

    fn small_dataset() -> SkillDataset {
        let spec = TaskSpec {
            long_instruction: "Fold the square from left to right".into(),
            cloth_type: ClothType::Square,
        };
        let plan = plan_rule(&spec).unwrap();
        let mut demos = Vec::new();
        for i in 0..3 {
            let mut env = default_env(ClothType::Square).unwrap();
            demos.push(
                generate_demo(&format!("demo_{i:03}"), &spec.long_instruction, &plan, &mut env)
                    .unwrap(),
            );
        }
        let template = default_env(ClothType::Square).unwrap().template;
        let (dataset, skipped) =
            build_dataset(&demos, Provenance::Rule, |d| decompose_rule(d, &template));
        assert!(skipped.is_empty());
        dataset
    }

    #[test]
    fn dataset_counts_follow_the_decomposition_rule() {
        let dataset = small_dataset();
        // 3 demos × (2·3 − 2) triples.
        assert_eq!(dataset.triples.len(), 12);
    }

    #[test]
    fn empty_demo_list_builds_an_empty_valid_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (dataset, skipped) = build_dataset(&[], Provenance::Rule, |_| Ok(vec![]));
        assert!(skipped.is_empty());
        assert!(dataset.triples.is_empty());
        write_dataset(dir.path(), &dataset).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.triples.len(), 0);
    }

    #[test]
    fn skipped_demos_are_reported_not_fatal() {
        let spec = TaskSpec {
            long_instruction: "Fold the square from left to right".into(),
            cloth_type: ClothType::Square,
        };
        let plan = plan_rule(&spec).unwrap();
        let mut env = default_env(ClothType::Square).unwrap();
        let good = generate_demo("good", &spec.long_instruction, &plan, &mut env).unwrap();
        let mut bad = good.clone();
        bad.demo_id = "bad".into();
        bad.sim = None;
        let template = env.template.clone();
        let (dataset, skipped) =
            build_dataset(&[good, bad], Provenance::Rule, |d| decompose_rule(d, &template));
        assert_eq!(dataset.triples.len(), 4);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].0, "bad");
    }

    #[test]
    fn dataset_reload_reserializes_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset();
        let a = dir.path().join("a");
        write_dataset(&a, &dataset).unwrap();
        let back = read_dataset(&a).unwrap();
        let b = dir.path().join("b");
        write_dataset(&b, &back).unwrap();
        assert_eq!(
            std::fs::read(a.join("dataset.jsonl")).unwrap(),
            std::fs::read(b.join("dataset.jsonl")).unwrap()
        );
    }

    #[test]
    fn wrong_vocab_fingerprint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut dataset = small_dataset();
        dataset.vocab_fingerprint ^= 1;
        write_dataset(dir.path(), &dataset).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(SkillError::VocabMismatch { .. })));
    }

    #[test]
    fn train_samples_keep_pixels_in_bounds() {
        let dataset = small_dataset();
        let tokenizer = Tokenizer::from_grammar();
        let samples = to_train_samples(&dataset, &tokenizer, 12);
        assert_eq!(samples.len(), dataset.triples.len());
        for s in &samples {
            assert!(s.target.0 < s.image.width && s.target.1 < s.image.height);
            assert!(s.tokens.len > 0);
        }
    }

    #[test]
    fn flip_augmentation_mirrors_pixels_and_parts() {
        let dataset = small_dataset();
        let augmented = augment_flip(&dataset);
        assert_eq!(augmented.triples.len(), dataset.triples.len() * 2);
        let n = dataset.triples.len();
        for (orig, flipped) in dataset.triples.iter().zip(&augmented.triples[n..]) {
            assert_eq!(flipped.pixel.0, orig.image.width - 1 - orig.pixel.0);
            assert_eq!(flipped.pixel.1, orig.pixel.1);
            if orig.instruction.part.contains("left") {
                assert!(flipped.instruction.part.contains("right"));
            }
            // Mirrored image column check at the labeled pixel row.
            let y = orig.pixel.1;
            let w = orig.image.width;
            for x in 0..w {
                assert_eq!(orig.image.at(x, y), flipped.image.at(w - 1 - x, y));
            }
        }
    }
}
