//! The basic-skill instruction language: two templates over per-cloth part
//! vocabularies.
//!
//! Every single-step skill is either `Pick up the {part} of the {cloth}` or
//! `Fold it to the {part}`. The part vocabularies are closed and fixed per
//! cloth type, which makes the full instruction set finite: parsing and
//! rendering are exhaustively testable, and the affordance model's text
//! vocabulary can be derived from the grammar instead of a pretrained
//! encoder.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fnv1a;

/// The five supported cloth categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClothType {
    Square,
    Rectangular,
    Tshirt,
    Skirt,
    Trousers,
}

impl ClothType {
    pub const ALL: [ClothType; 5] = [
        ClothType::Square,
        ClothType::Rectangular,
        ClothType::Tshirt,
        ClothType::Skirt,
        ClothType::Trousers,
    ];

    /// Canonical surface name used when rendering instructions.
    pub fn canonical_name(self) -> &'static str {
        match self {
            ClothType::Square => "square",
            ClothType::Rectangular => "rectangle",
            ClothType::Tshirt => "T-shirt",
            ClothType::Skirt => "skirt",
            ClothType::Trousers => "trousers",
        }
    }

    /// Stable identifier used in file formats and CLI flags.
    pub fn id(self) -> &'static str {
        match self {
            ClothType::Square => "square",
            ClothType::Rectangular => "rectangular",
            ClothType::Tshirt => "tshirt",
            ClothType::Skirt => "skirt",
            ClothType::Trousers => "trousers",
        }
    }

    /// Parses a cloth name, accepting common surface variants
    /// ("T-shirt"/"tshirt"/"t shirt", "rectangle"/"rectangular", a trailing
    /// "cloth", ...). LLM output varies in surface form, so parsing is
    /// deliberately forgiving here while staying a closed list.
    pub fn parse_name(name: &str) -> Result<ClothType, GrammarError> {
        let mut n = normalize(name);
        for suffix in [" cloth", " fabric"] {
            if let Some(stripped) = n.strip_suffix(suffix) {
                n = stripped.to_string();
            }
        }
        match n.as_str() {
            "square" => Ok(ClothType::Square),
            "rectangle" | "rectangular" | "rect" => Ok(ClothType::Rectangular),
            "t-shirt" | "tshirt" | "t shirt" | "tee shirt" | "shirt" => Ok(ClothType::Tshirt),
            "skirt" => Ok(ClothType::Skirt),
            "trousers" | "trouser" | "pants" => Ok(ClothType::Trousers),
            _ => Err(GrammarError::UnknownClothType { name: name.to_string() }),
        }
    }
}

impl fmt::Display for ClothType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

/// Whether an instruction picks the cloth up or folds it to a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Pick,
    Place,
}

impl ActionKind {
    pub fn id(self) -> &'static str {
        match self {
            ActionKind::Pick => "pick",
            ActionKind::Place => "place",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A parsed single-step instruction: one of the two templates filled with a
/// part label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasicInstruction {
    pub kind: ActionKind,
    pub part: String,
    pub cloth_type: ClothType,
}

impl BasicInstruction {
    pub fn pick(part: &str, cloth_type: ClothType) -> Self {
        BasicInstruction { kind: ActionKind::Pick, part: part.to_string(), cloth_type }
    }

    pub fn place(part: &str, cloth_type: ClothType) -> Self {
        BasicInstruction { kind: ActionKind::Place, part: part.to_string(), cloth_type }
    }

    /// True when the part belongs to the cloth type's vocabulary.
    pub fn is_valid(&self) -> bool {
        vocabulary(self.cloth_type).contains(&self.part)
    }
}

impl fmt::Display for BasicInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_instruction(self))
    }
}

/// The ordered part vocabulary of one cloth type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClothPartVocab {
    pub cloth_type: ClothType,
    pub parts: Vec<String>,
}

impl ClothPartVocab {
    pub fn contains(&self, part: &str) -> bool {
        self.parts.iter().any(|p| p == part)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("no instruction template matches {input:?}")]
    NoTemplateMatch { input: String },
    #[error("unknown part {part:?} for cloth type {cloth_type}")]
    UnknownPart { part: String, cloth_type: ClothType },
    #[error("instruction names cloth type {stated} but {expected} was expected")]
    ClothTypeMismatch { stated: ClothType, expected: ClothType },
    #[error("unknown cloth type {name:?}")]
    UnknownClothType { name: String },
}

const SQUARE_PARTS: [&str; 9] = [
    "top left corner",
    "top right corner",
    "bottom left corner",
    "bottom right corner",
    "top edge",
    "bottom edge",
    "left edge",
    "right edge",
    "center",
];

const TSHIRT_PARTS: [&str; 10] = [
    "left sleeve",
    "right sleeve",
    "left collar",
    "right collar",
    "left shoulder",
    "right shoulder",
    "left hem",
    "right hem",
    "bottom edge",
    "center",
];

const SKIRT_PARTS: [&str; 9] = [
    "waist left corner",
    "waist right corner",
    "waist center",
    "hem left corner",
    "hem right corner",
    "hem center",
    "left edge",
    "right edge",
    "center",
];

const TROUSERS_PARTS: [&str; 9] = [
    "waist left corner",
    "waist right corner",
    "waist center",
    "left leg hem",
    "right leg hem",
    "left knee",
    "right knee",
    "crotch",
    "center",
];

/// Part labels for one cloth type, in a fixed stable order.
pub fn part_labels(cloth_type: ClothType) -> &'static [&'static str] {
    match cloth_type {
        ClothType::Square | ClothType::Rectangular => &SQUARE_PARTS,
        ClothType::Tshirt => &TSHIRT_PARTS,
        ClothType::Skirt => &SKIRT_PARTS,
        ClothType::Trousers => &TROUSERS_PARTS,
    }
}

/// The fixed vocabulary of one cloth type.
pub fn vocabulary(cloth_type: ClothType) -> ClothPartVocab {
    ClothPartVocab {
        cloth_type,
        parts: part_labels(cloth_type).iter().map(|s| s.to_string()).collect(),
    }
}

/// Fingerprint over every (cloth type, part) pair in vocabulary order.
/// Stored in dataset headers so a dataset built against one vocabulary is
/// never silently trained against another.
pub fn vocab_fingerprint() -> u64 {
    let mut buf = String::new();
    for ct in ClothType::ALL {
        for part in part_labels(ct) {
            buf.push_str(ct.id());
            buf.push(':');
            buf.push_str(part);
            buf.push(';');
        }
    }
    fnv1a(buf.as_bytes())
}

/// Lowercases, collapses runs of whitespace, and strips trailing sentence
/// punctuation.
fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut last_space = true;
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    while out.ends_with([' ', '.', '!', '?']) {
        out.pop();
    }
    out
}

/// Parses one instruction against the two templates, case- and
/// whitespace-insensitively.
///
/// `Pick up the X of the C` yields a pick (and `C` must agree with
/// `cloth_type`); `Fold it to the X` yields a place, with the cloth type
/// taken from the argument.
pub fn parse_instruction(text: &str, cloth_type: ClothType) -> Result<BasicInstruction, GrammarError> {
    let norm = normalize(text);

    if let Some(rest) = norm.strip_prefix("pick up the ") {
        // Part labels never contain " of the ", so the last occurrence
        // separates part from cloth name.
        let split = rest
            .rfind(" of the ")
            .ok_or_else(|| GrammarError::NoTemplateMatch { input: text.to_string() })?;
        let part = rest[..split].trim().to_string();
        let cloth_text = &rest[split + " of the ".len()..];
        let stated = ClothType::parse_name(cloth_text)?;
        if stated != cloth_type {
            return Err(GrammarError::ClothTypeMismatch { stated, expected: cloth_type });
        }
        if !vocabulary(cloth_type).contains(&part) {
            return Err(GrammarError::UnknownPart { part, cloth_type });
        }
        return Ok(BasicInstruction { kind: ActionKind::Pick, part, cloth_type });
    }

    if let Some(rest) = norm.strip_prefix("fold it to the ") {
        let part = rest.trim().to_string();
        if !vocabulary(cloth_type).contains(&part) {
            return Err(GrammarError::UnknownPart { part, cloth_type });
        }
        return Ok(BasicInstruction { kind: ActionKind::Place, part, cloth_type });
    }

    Err(GrammarError::NoTemplateMatch { input: text.to_string() })
}

/// Renders an instruction in canonical casing. Rendering is a plain template
/// fill and does not require the part to be in the vocabulary; that check
/// belongs to parsing and plan validation.
pub fn render_instruction(inst: &BasicInstruction) -> String {
    match inst.kind {
        ActionKind::Pick => format!(
            "Pick up the {} of the {}",
            inst.part,
            inst.cloth_type.canonical_name()
        ),
        ActionKind::Place => format!("Fold it to the {}", inst.part),
    }
}

/// Every valid instruction of the whole language, in stable order.
pub fn all_instructions() -> Vec<BasicInstruction> {
    let mut out = Vec::new();
    for ct in ClothType::ALL {
        for part in part_labels(ct) {
            out.push(BasicInstruction::pick(part, ct));
            out.push(BasicInstruction::place(part, ct));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_pick_tshirt_sleeve() {
        let inst = parse_instruction("pick up the left sleeve of the T-shirt", ClothType::Tshirt)
            .unwrap();
        assert_eq!(inst, BasicInstruction::pick("left sleeve", ClothType::Tshirt));
    }

    #[test]
    fn parse_place_left_hem() {
        let inst = parse_instruction("Fold it to the left hem", ClothType::Tshirt).unwrap();
        assert_eq!(inst, BasicInstruction::place("left hem", ClothType::Tshirt));
    }

    #[test]
    fn parse_rejects_free_text() {
        let err = parse_instruction("wave the flag", ClothType::Square).unwrap_err();
        assert!(matches!(err, GrammarError::NoTemplateMatch { .. }));
    }

    #[test]
    fn parse_rejects_unknown_part() {
        let err = parse_instruction("Fold it to the engine", ClothType::Square).unwrap_err();
        assert!(matches!(err, GrammarError::UnknownPart { .. }));
    }

    #[test]
    fn parse_rejects_cloth_mismatch() {
        let err = parse_instruction(
            "Pick up the center of the trousers",
            ClothType::Square,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GrammarError::ClothTypeMismatch { stated: ClothType::Trousers, expected: ClothType::Square }
        ));
    }

    #[test]
    fn parse_tolerates_case_whitespace_and_punctuation() {
        let inst = parse_instruction(
            "  PICK  up the   Bottom Left  Corner of the SQUARE CLOTH. ",
            ClothType::Square,
        )
        .unwrap();
        assert_eq!(inst.part, "bottom left corner");
        assert_eq!(inst.kind, ActionKind::Pick);
    }

    #[test]
    fn render_is_canonical() {
        // Rendering is a pure template fill, even for parts outside the
        // cloth's own vocabulary.
        let inst = BasicInstruction::pick("right collar", ClothType::Skirt);
        assert_eq!(render_instruction(&inst), "Pick up the right collar of the skirt");
        let inst = BasicInstruction::place("top edge", ClothType::Square);
        assert_eq!(render_instruction(&inst), "Fold it to the top edge");
    }

    #[test]
    fn round_trip_over_full_language() {
        for inst in all_instructions() {
            let text = render_instruction(&inst);
            let parsed = parse_instruction(&text, inst.cloth_type).unwrap();
            assert_eq!(parsed, inst, "round trip failed for {text:?}");
        }
    }

    #[test]
    fn square_vocabulary_has_nine_parts() {
        let vocab = vocabulary(ClothType::Square);
        assert_eq!(vocab.parts.len(), 9);
        for corner in ["top left corner", "top right corner", "bottom left corner", "bottom right corner"] {
            assert!(vocab.contains(corner));
        }
        for edge in ["top edge", "bottom edge", "left edge", "right edge"] {
            assert!(vocab.contains(edge));
        }
        assert!(vocab.contains("center"));
    }

    #[test]
    fn tshirt_vocabulary_has_sleeves_and_collars() {
        let vocab = vocabulary(ClothType::Tshirt);
        for part in ["left sleeve", "right sleeve", "left collar", "right collar"] {
            assert!(vocab.contains(part), "missing {part}");
        }
    }

    #[test]
    fn unknown_cloth_name_is_an_error() {
        assert!(matches!(
            ClothType::parse_name("tablecloth"),
            Err(GrammarError::UnknownClothType { .. })
        ));
    }

    #[test]
    fn cloth_aliases_normalize() {
        for alias in ["T-shirt", "tshirt", "t shirt", "T-SHIRT"] {
            assert_eq!(ClothType::parse_name(alias).unwrap(), ClothType::Tshirt);
        }
        assert_eq!(ClothType::parse_name("rectangular cloth").unwrap(), ClothType::Rectangular);
        assert_eq!(ClothType::parse_name("square cloth").unwrap(), ClothType::Square);
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(vocab_fingerprint(), vocab_fingerprint());
        assert_ne!(vocab_fingerprint(), 0);
    }

    #[test]
    fn labels_are_unique_per_cloth() {
        for ct in ClothType::ALL {
            let labels = part_labels(ct);
            let mut seen = std::collections::BTreeSet::new();
            for l in labels {
                assert!(seen.insert(l), "duplicate label {l} for {ct}");
            }
        }
    }
}
