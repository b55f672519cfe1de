//! High-level task planning: a long folding instruction becomes an ordered
//! sequence of basic pick/place instructions.
//!
//! Two paths produce plans. The rule planner matches instruction clauses
//! against a small library of fold schemas (half folds along either axis and
//! direction, one-corner, four-corners, sleeve folds) and is fully
//! deterministic. The LLM planner prompts a chat model with the same
//! few-shot structure the skill decomposer uses and accepts its output only
//! if it passes the same validator.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{
    self, parse_instruction, ActionKind, BasicInstruction, ClothType, GrammarError,
};
use crate::llm::{build_messages, extract_answer, LlmClient, LlmError, PromptConfig};

/// A new task to plan for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub long_instruction: String,
    pub cloth_type: ClothType,
}

/// An ordered list of basic instructions, alternating pick/place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub steps: Vec<BasicInstruction>,
}

impl TaskPlan {
    pub fn pair_count(&self) -> usize {
        self.steps.len() / 2
    }
}

/// One benchmark task: a long instruction, its cloth, whether the family is
/// part of training, and an optional explicit plan that overrides the
/// schema library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub name: String,
    pub cloth_type: ClothType,
    pub long_instruction: String,
    pub seen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_plan: Option<Vec<String>>,
}

impl BenchmarkTask {
    pub fn spec(&self) -> TaskSpec {
        TaskSpec { long_instruction: self.long_instruction.clone(), cloth_type: self.cloth_type }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no fold schema matches clause {clause:?}")]
    UnknownSchema { clause: String },
    #[error("{schema} fold does not apply to cloth type {cloth_type}")]
    SchemaInapplicable { schema: String, cloth_type: ClothType },
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("plan violates invariants: {}", violations.join("; "))]
    Invalid { violations: Vec<String> },
    #[error("malformed plan from llm ({reason}); raw response preserved")]
    MalformedPlan { reason: String, raw: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("suite io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite parse error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldDirection {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Schema {
    /// "Vertical" folds along the horizontal midline (top↔bottom motion);
    /// "horizontal" folds along the vertical midline (left↔right motion).
    /// Uses without a direction default to top-to-bottom / left-to-right.
    HalfFold(FoldDirection),
    OneCorner,
    FourCorners,
    Sleeves { left: bool, right: bool },
}

fn parse_direction(clause: &str) -> Option<FoldDirection> {
    if clause.contains("left to right") {
        Some(FoldDirection::LeftToRight)
    } else if clause.contains("right to left") {
        Some(FoldDirection::RightToLeft)
    } else if clause.contains("top to bottom") {
        Some(FoldDirection::TopToBottom)
    } else if clause.contains("bottom to top") {
        Some(FoldDirection::BottomToTop)
    } else if clause.contains("vertical") {
        Some(FoldDirection::TopToBottom)
    } else if clause.contains("horizontal") {
        Some(FoldDirection::LeftToRight)
    } else {
        None
    }
}

fn match_schema(clause: &str) -> Result<Schema, PlanError> {
    if clause.contains("sleeve") {
        let both = clause.contains("both") || clause.contains("sleeves");
        let left = both || clause.contains("left");
        let right = both || clause.contains("right");
        if !left && !right {
            return Ok(Schema::Sleeves { left: true, right: true });
        }
        return Ok(Schema::Sleeves { left, right });
    }
    if clause.contains("four corners") || (clause.contains("corners") && clause.contains("all")) {
        return Ok(Schema::FourCorners);
    }
    if clause.contains("corner") {
        return Ok(Schema::OneCorner);
    }
    if let Some(dir) = parse_direction(clause) {
        return Ok(Schema::HalfFold(dir));
    }
    if clause.contains("half") {
        return Ok(Schema::HalfFold(FoldDirection::TopToBottom));
    }
    Err(PlanError::UnknownSchema { clause: clause.to_string() })
}

/// The two pick→place part pairs of a half fold, per cloth type.
fn half_fold_pairs(
    cloth_type: ClothType,
    dir: FoldDirection,
) -> [(&'static str, &'static str); 2] {
    use FoldDirection::*;
    match cloth_type {
        ClothType::Square | ClothType::Rectangular => match dir {
            LeftToRight => [
                ("top left corner", "top right corner"),
                ("bottom left corner", "bottom right corner"),
            ],
            RightToLeft => [
                ("top right corner", "top left corner"),
                ("bottom right corner", "bottom left corner"),
            ],
            TopToBottom => [
                ("top left corner", "bottom left corner"),
                ("top right corner", "bottom right corner"),
            ],
            BottomToTop => [
                ("bottom left corner", "top left corner"),
                ("bottom right corner", "top right corner"),
            ],
        },
        ClothType::Skirt => match dir {
            LeftToRight => [
                ("waist left corner", "waist right corner"),
                ("hem left corner", "hem right corner"),
            ],
            RightToLeft => [
                ("waist right corner", "waist left corner"),
                ("hem right corner", "hem left corner"),
            ],
            TopToBottom => [
                ("waist left corner", "hem left corner"),
                ("waist right corner", "hem right corner"),
            ],
            BottomToTop => [
                ("hem left corner", "waist left corner"),
                ("hem right corner", "waist right corner"),
            ],
        },
        ClothType::Trousers => match dir {
            LeftToRight => [
                ("waist left corner", "waist right corner"),
                ("left leg hem", "right leg hem"),
            ],
            RightToLeft => [
                ("waist right corner", "waist left corner"),
                ("right leg hem", "left leg hem"),
            ],
            TopToBottom => [
                ("waist left corner", "left leg hem"),
                ("waist right corner", "right leg hem"),
            ],
            BottomToTop => [
                ("left leg hem", "waist left corner"),
                ("right leg hem", "waist right corner"),
            ],
        },
        // Vertical T-shirt folds run along the side seams (shoulder↔hem),
        // keeping the strokes clear of the folded-sleeve bundle at the
        // center.
        ClothType::Tshirt => match dir {
            LeftToRight => [("left shoulder", "right shoulder"), ("left hem", "right hem")],
            RightToLeft => [("right shoulder", "left shoulder"), ("right hem", "left hem")],
            TopToBottom => [("left shoulder", "left hem"), ("right shoulder", "right hem")],
            BottomToTop => [("left hem", "left shoulder"), ("right hem", "right shoulder")],
        },
    }
}

fn expand_schema(schema: &Schema, cloth_type: ClothType) -> Result<Vec<BasicInstruction>, PlanError> {
    let pairs: Vec<(&str, &str)> = match schema {
        Schema::HalfFold(dir) => half_fold_pairs(cloth_type, *dir).to_vec(),
        Schema::OneCorner => match cloth_type {
            ClothType::Square | ClothType::Rectangular => {
                vec![("bottom left corner", "top right corner")]
            }
            _ => {
                return Err(PlanError::SchemaInapplicable {
                    schema: "one corner".to_string(),
                    cloth_type,
                })
            }
        },
        Schema::FourCorners => match cloth_type {
            ClothType::Square | ClothType::Rectangular => vec![
                ("bottom left corner", "center"),
                ("bottom right corner", "center"),
                ("top left corner", "center"),
                ("top right corner", "center"),
            ],
            _ => {
                return Err(PlanError::SchemaInapplicable {
                    schema: "four corners".to_string(),
                    cloth_type,
                })
            }
        },
        Schema::Sleeves { left, right } => {
            if cloth_type != ClothType::Tshirt {
                return Err(PlanError::SchemaInapplicable {
                    schema: "sleeves".to_string(),
                    cloth_type,
                });
            }
            // Sleeves fold inward onto the body center, which keeps the
            // shoulder and hem pick points of later folds uncovered.
            let mut pairs = Vec::new();
            if *left {
                pairs.push(("left sleeve", "center"));
            }
            if *right {
                pairs.push(("right sleeve", "center"));
            }
            pairs
        }
    };
    let mut steps = Vec::with_capacity(pairs.len() * 2);
    for (pick, place) in pairs {
        steps.push(BasicInstruction::pick(pick, cloth_type));
        steps.push(BasicInstruction::place(place, cloth_type));
    }
    Ok(steps)
}

/// Splits a long instruction into schema clauses on "then", commas, and
/// semicolons.
fn clauses(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split([',', ';'])
        .flat_map(|part| part.split(" then ").map(str::to_string).collect::<Vec<_>>())
        .map(|c| {
            c.trim().trim_start_matches("then ").trim_end_matches('.').trim().to_string()
        })
        .filter(|c| !c.is_empty() && c != "then")
        .collect()
}

/// Deterministic planning via the fold schema library. Clauses expand in
/// order and concatenate.
pub fn plan_rule(task: &TaskSpec) -> Result<TaskPlan, PlanError> {
    let clauses = clauses(&task.long_instruction);
    if clauses.is_empty() {
        return Err(PlanError::EmptyInstruction);
    }
    let mut steps = Vec::new();
    for clause in &clauses {
        let schema = match_schema(clause)?;
        steps.extend(expand_schema(&schema, task.cloth_type)?);
    }
    let plan = TaskPlan { steps };
    let validation = validate_plan(&plan, task.cloth_type);
    if !validation.is_ok() {
        return Err(PlanError::Invalid { violations: validation.violations });
    }
    Ok(plan)
}

/// Validation outcome: hard violations plus advisory warnings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanValidation {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl PlanValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the TaskPlan invariants: even length, pick/place alternation
/// starting with pick, and every part in the cloth vocabulary. An empty
/// plan passes with a warning.
pub fn validate_plan(plan: &TaskPlan, cloth_type: ClothType) -> PlanValidation {
    let mut v = PlanValidation::default();
    if plan.steps.is_empty() {
        v.warnings.push("plan has zero steps".to_string());
        return v;
    }
    if plan.steps.len() % 2 != 0 {
        v.violations.push(format!("plan has odd length {}", plan.steps.len()));
    }
    for (i, step) in plan.steps.iter().enumerate() {
        let expected = if i % 2 == 0 { ActionKind::Pick } else { ActionKind::Place };
        if step.kind != expected {
            v.violations.push(format!(
                "step {} is a {} but alternation requires a {}",
                i + 1,
                step.kind,
                expected
            ));
        }
        if step.cloth_type != cloth_type {
            v.violations.push(format!(
                "step {} targets cloth type {} instead of {}",
                i + 1,
                step.cloth_type,
                cloth_type
            ));
        }
        if !grammar::vocabulary(cloth_type).contains(&step.part) {
            v.violations.push(format!(
                "step {} uses part {:?} which is not in the {} vocabulary",
                i + 1,
                step.part,
                cloth_type
            ));
        }
    }
    v
}

/// Default prompt for the LLM planner: the same few-shot chain-of-thought
/// structure as skill decomposition, with planner-specific exemplars.
pub fn default_plan_prompt() -> PromptConfig {
    PromptConfig {
        system: include_str!("../assets/prompts/plan_system.txt").trim_end().to_string(),
        few_shot: vec![
            (
                include_str!("../assets/prompts/plan_fewshot_1_user.txt").trim_end().to_string(),
                include_str!("../assets/prompts/plan_fewshot_1_assistant.txt").trim_end().to_string(),
            ),
            (
                include_str!("../assets/prompts/plan_fewshot_2_user.txt").trim_end().to_string(),
                include_str!("../assets/prompts/plan_fewshot_2_assistant.txt").trim_end().to_string(),
            ),
        ],
        ..PromptConfig::default()
    }
}

/// The user payload sent to the LLM planner.
pub fn plan_user_payload(task: &TaskSpec) -> String {
    format!(
        "Task: {}\nCloth type: {}\nParts: {}",
        task.long_instruction,
        task.cloth_type.canonical_name(),
        grammar::part_labels(task.cloth_type).join(", "),
    )
}

fn parse_plan_lines(lines: &[String], cloth_type: ClothType) -> Result<TaskPlan, String> {
    let mut steps = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match parse_instruction(line, cloth_type) {
            Ok(inst) => steps.push(inst),
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    let plan = TaskPlan { steps };
    let validation = validate_plan(&plan, cloth_type);
    if !validation.is_ok() {
        return Err(validation.violations.join("; "));
    }
    if plan.steps.is_empty() {
        return Err("plan has zero steps".to_string());
    }
    Ok(plan)
}

/// LLM-backed planning. Transport failures abort; malformed responses are
/// retried up to the configured count, preserving the raw text of the last
/// attempt in the error.
pub fn plan_llm(
    task: &TaskSpec,
    client: &LlmClient,
    prompt: &PromptConfig,
) -> Result<TaskPlan, PlanError> {
    let payload = plan_user_payload(task);
    let messages = build_messages(prompt, &payload);
    let mut last_err = None;
    for _ in 0..=prompt.retries {
        let response = client.complete(&messages, prompt)?;
        let extracted = extract_answer(&response, prompt);
        match parse_plan_lines(&extracted.lines, task.cloth_type) {
            Ok(plan) => return Ok(plan),
            Err(reason) => last_err = Some(PlanError::MalformedPlan { reason, raw: response }),
        }
    }
    Err(last_err.expect("at least one attempt runs"))
}

/// Resolves a benchmark task's plan: the explicit oracle plan when present,
/// otherwise the schema library.
pub fn plan_for_task(task: &BenchmarkTask) -> Result<TaskPlan, PlanError> {
    if let Some(lines) = &task.oracle_plan {
        let plan = parse_plan_lines(lines, task.cloth_type)
            .map_err(|reason| PlanError::Invalid { violations: vec![reason] })?;
        return Ok(plan);
    }
    plan_rule(&task.spec())
}

/// The ten benchmark tasks: five seen fold families and five unseen ones
/// across the five cloth types.
pub fn default_suite() -> Vec<BenchmarkTask> {
    let task = |name: &str, ct: ClothType, text: &str, seen: bool| BenchmarkTask {
        name: name.to_string(),
        cloth_type: ct,
        long_instruction: text.to_string(),
        seen,
        oracle_plan: None,
    };
    vec![
        task(
            "tshirt-sleeves-then-left-to-right",
            ClothType::Tshirt,
            "Fold both sleeves inward, then fold the T-shirt from left to right",
            true,
        ),
        task(
            "square-one-corner",
            ClothType::Square,
            "Fold one corner of the square to the opposite corner",
            true,
        ),
        task("skirt-left-to-right", ClothType::Skirt, "Fold the skirt from left to right", true),
        task(
            "rect-top-to-bottom",
            ClothType::Rectangular,
            "Fold the rectangle from top to bottom",
            true,
        ),
        task(
            "trousers-left-to-right",
            ClothType::Trousers,
            "Fold the trousers from left to right",
            true,
        ),
        task(
            "tshirt-sleeves-then-bottom-to-top",
            ClothType::Tshirt,
            "Fold both sleeves inward, then fold the T-shirt from bottom to top",
            false,
        ),
        task(
            "square-four-corners",
            ClothType::Square,
            "Fold all four corners of the square to the center",
            false,
        ),
        task("skirt-top-to-bottom", ClothType::Skirt, "Fold the skirt from top to bottom", false),
        task(
            "rect-left-to-right",
            ClothType::Rectangular,
            "Fold the rectangle from left to right",
            false,
        ),
        task(
            "trousers-top-to-bottom",
            ClothType::Trousers,
            "Fold the trousers from top to bottom",
            false,
        ),
    ]
}

pub fn load_suite(path: &Path) -> Result<Vec<BenchmarkTask>, PlanError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_suite(path: &Path, suite: &[BenchmarkTask]) -> Result<(), PlanError> {
    let text = serde_json::to_string_pretty(suite)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockTransport;

    fn spec(text: &str, ct: ClothType) -> TaskSpec {
        TaskSpec { long_instruction: text.to_string(), cloth_type: ct }
    }

    #[test]
    fn trousers_left_to_right_is_four_steps() {
        let plan = plan_rule(&spec("fold the trousers from left to right", ClothType::Trousers))
            .unwrap();
        assert_eq!(plan.steps.len(), 4);
        assert_eq!(plan.steps[0], BasicInstruction::pick("waist left corner", ClothType::Trousers));
        assert_eq!(plan.steps[1], BasicInstruction::place("waist right corner", ClothType::Trousers));
        assert_eq!(plan.steps[2], BasicInstruction::pick("left leg hem", ClothType::Trousers));
        assert_eq!(plan.steps[3], BasicInstruction::place("right leg hem", ClothType::Trousers));
    }

    #[test]
    fn tshirt_three_clause_task_is_twelve_steps() {
        let plan = plan_rule(&spec(
            "Fold both sleeves inward, then fold the T-shirt top to bottom, then left to right",
            ClothType::Tshirt,
        ))
        .unwrap();
        assert_eq!(plan.steps.len(), 12);
        assert!(validate_plan(&plan, ClothType::Tshirt).is_ok());
    }

    #[test]
    fn single_sleeve_plus_half_fold_is_six_steps() {
        let plan = plan_rule(&spec(
            "fold the right sleeve of the T-shirt inward, then fold the T-shirt from bottom to top",
            ClothType::Tshirt,
        ))
        .unwrap();
        assert_eq!(plan.steps.len(), 6);
        assert_eq!(plan.steps[0], BasicInstruction::pick("right sleeve", ClothType::Tshirt));
    }

    #[test]
    fn unknown_clause_is_an_error() {
        let err = plan_rule(&spec("iron the shirt", ClothType::Tshirt)).unwrap_err();
        assert!(matches!(err, PlanError::UnknownSchema { .. }));
    }

    #[test]
    fn sleeves_on_square_is_inapplicable() {
        let err = plan_rule(&spec("fold both sleeves inward", ClothType::Square)).unwrap_err();
        assert!(matches!(err, PlanError::SchemaInapplicable { .. }));
    }

    #[test]
    fn four_corners_expands_to_eight_steps() {
        let plan = plan_rule(&spec(
            "fold all four corners of the square to the center",
            ClothType::Square,
        ))
        .unwrap();
        assert_eq!(plan.steps.len(), 8);
        for i in (1..8).step_by(2) {
            assert_eq!(plan.steps[i].part, "center");
        }
    }

    #[test]
    fn every_default_suite_task_plans_and_validates() {
        for task in default_suite() {
            let plan = plan_for_task(&task).unwrap_or_else(|e| panic!("{}: {e}", task.name));
            let v = validate_plan(&plan, task.cloth_type);
            assert!(v.is_ok(), "{}: {:?}", task.name, v.violations);
            assert!(!plan.steps.is_empty());
        }
    }

    #[test]
    fn validate_flags_bad_alternation() {
        let plan = TaskPlan {
            steps: vec![
                BasicInstruction::pick("center", ClothType::Square),
                BasicInstruction::pick("top edge", ClothType::Square),
                BasicInstruction::place("center", ClothType::Square),
                BasicInstruction::place("top edge", ClothType::Square),
            ],
        };
        let v = validate_plan(&plan, ClothType::Square);
        assert!(!v.is_ok());
    }

    #[test]
    fn validate_empty_plan_warns_but_passes() {
        let v = validate_plan(&TaskPlan { steps: vec![] }, ClothType::Square);
        assert!(v.is_ok());
        assert_eq!(v.warnings.len(), 1);
    }

    #[test]
    fn plan_llm_accepts_a_rule_equivalent_response() {
        let task = spec("fold the trousers from left to right", ClothType::Trousers);
        let expected = plan_rule(&task).unwrap();
        let prompt = default_plan_prompt();
        let mut mock = MockTransport::new();
        mock.script(
            &plan_user_payload(&task),
            "Two pairs fold left onto right.\nANSWER:\n\
             1. Pick up the waist left corner of the trousers\n\
             2. Fold it to the waist right corner\n\
             3. Pick up the left leg hem of the trousers\n\
             4. Fold it to the right leg hem",
        );
        let client = LlmClient::mock(mock);
        let plan = plan_llm(&task, &client, &prompt).unwrap();
        assert_eq!(plan, expected);
    }

    #[test]
    fn plan_llm_rejects_odd_step_count() {
        let task = spec("fold the trousers from left to right", ClothType::Trousers);
        let prompt = default_plan_prompt();
        let mock = MockTransport::always(
            "ANSWER:\n1. Pick up the waist left corner of the trousers",
        );
        let client = LlmClient::mock(mock);
        let err = plan_llm(&task, &client, &prompt).unwrap_err();
        match err {
            PlanError::MalformedPlan { reason, raw } => {
                assert!(reason.contains("odd length"), "reason: {reason}");
                assert!(raw.contains("waist left corner"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plan_llm_rejects_unknown_part_by_name() {
        let task = spec("fold the trousers from left to right", ClothType::Trousers);
        let prompt = default_plan_prompt();
        let mock = MockTransport::always(
            "ANSWER:\n1. Pick up the gearbox of the trousers\n2. Fold it to the waist center",
        );
        let client = LlmClient::mock(mock);
        let err = plan_llm(&task, &client, &prompt).unwrap_err();
        match err {
            PlanError::MalformedPlan { reason, .. } => {
                assert!(reason.contains("gearbox"), "reason should name the part: {reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plan_llm_retries_then_succeeds() {
        let task = spec("fold the skirt from left to right", ClothType::Skirt);
        let prompt = default_plan_prompt();
        let good = "ANSWER:\n\
            1. Pick up the waist left corner of the skirt\n\
            2. Fold it to the waist right corner\n\
            3. Pick up the hem left corner of the skirt\n\
            4. Fold it to the hem right corner";
        let mut mock = MockTransport::new();
        mock.script_sequence(
            &plan_user_payload(&task),
            vec!["garbage".to_string(), good.to_string()],
        );
        let client = LlmClient::mock(mock);
        let plan = plan_llm(&task, &client, &prompt).unwrap();
        assert_eq!(plan.steps.len(), 4);
    }

    #[test]
    fn suite_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let suite = default_suite();
        save_suite(&path, &suite).unwrap();
        let back = load_suite(&path).unwrap();
        assert_eq!(back, suite);
    }

    #[test]
    fn oracle_plan_override_wins_over_schemas() {
        let mut task = default_suite().into_iter().next().unwrap();
        task.cloth_type = ClothType::Square;
        task.oracle_plan = Some(vec![
            "Pick up the center of the square".to_string(),
            "Fold it to the top edge".to_string(),
        ]);
        let plan = plan_for_task(&task).unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[0].part, "center");
    }
}
