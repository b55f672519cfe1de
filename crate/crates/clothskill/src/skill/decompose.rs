//! Demonstration decomposition: the rule path (geometric keypoint labeling)
//! and the LLM path (few-shot prompting with strict validation).

use crate::grammar::{parse_instruction, render_instruction, ActionKind, BasicInstruction};
use crate::llm::{build_messages, extract_answer, LlmClient, PromptConfig};
use crate::sim::ClothTemplate;

use super::dataset::SkillTriple;
use super::demo::Demonstration;
use super::SkillError;

/// An action farther than this many particle spacings from every keypoint
/// cannot be labeled reliably.
pub const UNLABELABLE_FACTOR: f64 = 2.0;

/// Labels every action of a generated demonstration against the template's
/// semantic keypoints: picks match the keypoint nearest to the action point
/// in the pre-action state, places match against the rest-frame keypoint
/// targets. Labels depend only on relative geometry, so rigid translations
/// of the whole demo do not change them.
pub fn decompose_rule(
    demo: &Demonstration,
    template: &ClothTemplate,
) -> Result<Vec<SkillTriple>, SkillError> {
    demo.validate()?;
    let sim = demo.sim.as_ref().ok_or(SkillError::MissingSimStates)?;
    let threshold = UNLABELABLE_FACTOR * template.spacing;

    let mut triples = Vec::with_capacity(demo.actions.len());
    for (step, action) in demo.actions.iter().enumerate() {
        let image_index = step / 2;
        let mut best: Option<(&str, f64)> = None;
        for (label, &idx) in &template.keypoints {
            let reference = match action.kind {
                ActionKind::Pick => sim.states[image_index].positions[idx],
                ActionKind::Place => sim.rest_world[idx],
            };
            let dist = (reference - action.world).length();
            if best.map_or(true, |(_, d)| dist < d) {
                best = Some((label, dist));
            }
        }
        let (label, distance) = best.expect("templates have keypoints");
        if distance > threshold {
            return Err(SkillError::UnlabelableAction { step, distance, threshold });
        }
        triples.push(SkillTriple {
            demo_id: demo.demo_id.clone(),
            step_index: step,
            image_index,
            cloth_type: demo.cloth_type,
            instruction: BasicInstruction { kind: action.kind, part: label.to_string(), cloth_type: demo.cloth_type },
            pixel: action.pixel,
            world: action.world,
            image: demo.images[image_index].clone(),
        });
    }
    Ok(triples)
}

/// Default prompt for the LLM decomposer: system rules plus two worked
/// examples (a square one-corner fold and a trousers half fold).
pub fn default_decompose_prompt() -> PromptConfig {
    PromptConfig {
        system: include_str!("../../assets/prompts/decompose_system.txt").trim_end().to_string(),
        few_shot: vec![
            (
                include_str!("../../assets/prompts/decompose_fewshot_1_user.txt").trim_end().to_string(),
                include_str!("../../assets/prompts/decompose_fewshot_1_assistant.txt")
                    .trim_end()
                    .to_string(),
            ),
            (
                include_str!("../../assets/prompts/decompose_fewshot_2_user.txt").trim_end().to_string(),
                include_str!("../../assets/prompts/decompose_fewshot_2_assistant.txt")
                    .trim_end()
                    .to_string(),
            ),
        ],
        ..PromptConfig::default()
    }
}

/// The user payload for one demonstration: the long instruction plus action
/// metadata. Images are never sent.
pub fn decompose_user_payload(demo: &Demonstration) -> String {
    let vocab = crate::grammar::part_labels(demo.cloth_type).join(", ");
    let metadata: Vec<String> = demo
        .actions
        .iter()
        .enumerate()
        .map(|(k, a)| format!("{}: {} at pixel ({}, {})", k + 1, a.kind, a.pixel.0, a.pixel.1))
        .collect();
    format!(
        "Task: {}\nCloth type: {}\nParts: {}\nNumber of images: {}\nRequired actions: {} (alternating pick and place, starting with pick)\nAction metadata: {}",
        demo.long_instruction,
        demo.cloth_type.canonical_name(),
        vocab,
        demo.image_count(),
        demo.expected_actions(),
        metadata.join("; "),
    )
}

fn parse_decomposition_lines(
    lines: &[String],
    demo: &Demonstration,
) -> Result<Vec<SkillTriple>, String> {
    let expected = demo.expected_actions();
    if lines.len() != expected {
        return Err(format!("expected {expected} instruction lines, got {}", lines.len()));
    }
    let mut triples = Vec::with_capacity(expected);
    for (step, line) in lines.iter().enumerate() {
        let instruction =
            parse_instruction(line, demo.cloth_type).map_err(|e| format!("line {}: {e}", step + 1))?;
        let expected_kind = if step % 2 == 0 { ActionKind::Pick } else { ActionKind::Place };
        if instruction.kind != expected_kind {
            return Err(format!(
                "line {}: {} breaks the pick/place alternation (expected {expected_kind})",
                step + 1,
                instruction.kind
            ));
        }
        let action = &demo.actions[step];
        debug_assert_eq!(action.kind, expected_kind, "demo validated before decomposition");
        triples.push(SkillTriple {
            demo_id: demo.demo_id.clone(),
            step_index: step,
            image_index: step / 2,
            cloth_type: demo.cloth_type,
            instruction,
            pixel: action.pixel,
            world: action.world,
            image: demo.images[step / 2].clone(),
        });
    }
    Ok(triples)
}

/// LLM-backed decomposition. The response's answer lines must parse against
/// the grammar, match the 2m−2 count, and alternate pick/place; anything
/// else is retried up to the configured count and then surfaced with the
/// raw response preserved for audit.
pub fn decompose_llm(
    demo: &Demonstration,
    client: &LlmClient,
    prompt: &PromptConfig,
) -> Result<Vec<SkillTriple>, SkillError> {
    demo.validate()?;
    let payload = decompose_user_payload(demo);
    let messages = build_messages(prompt, &payload);
    let mut last_err = None;
    for _ in 0..=prompt.retries {
        let response = client.complete(&messages, prompt)?;
        let extracted = extract_answer(&response, prompt);
        match parse_decomposition_lines(&extracted.lines, demo) {
            Ok(triples) => return Ok(triples),
            Err(reason) => {
                last_err = Some(SkillError::MalformedResponse { reason, raw: response })
            }
        }
    }
    Err(last_err.expect("at least one attempt runs"))
}

/// Per-step validation outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepCheck {
    pub step: usize,
    pub ok: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub pass: bool,
    pub failures: Vec<String>,
    pub steps: Vec<StepCheck>,
}

/// Checks a decomposition against its demonstration: the 2m−2 count,
/// pick/place alternation, instruction parseability and kind agreement,
/// and (when simulator states exist) semantic agreement between each
/// instruction's keypoint and the action point.
pub fn validate_decomposition(
    triples: &[SkillTriple],
    demo: &Demonstration,
    template: &ClothTemplate,
) -> DecompositionReport {
    let mut failures = Vec::new();
    let expected = demo.expected_actions();
    if triples.len() != expected {
        failures.push(format!("triple count {} differs from 2m-2 = {expected}", triples.len()));
    }

    let threshold = UNLABELABLE_FACTOR * template.spacing;
    let mut steps = Vec::with_capacity(triples.len());
    for (k, triple) in triples.iter().enumerate() {
        let mut reasons = Vec::new();
        let expected_kind = if k % 2 == 0 { ActionKind::Pick } else { ActionKind::Place };
        if triple.instruction.kind != expected_kind {
            reasons.push(format!("kind {} breaks alternation", triple.instruction.kind));
        }
        if k < demo.actions.len() && triple.instruction.kind != demo.actions[k].kind {
            reasons.push("instruction kind disagrees with the action".to_string());
        }
        let text = render_instruction(&triple.instruction);
        if parse_instruction(&text, triple.cloth_type).is_err() {
            reasons.push(format!("instruction {text:?} does not parse"));
        }
        if let Some(sim) = &demo.sim {
            if let Some(idx) = template.keypoint_index(&triple.instruction.part) {
                let reference = match triple.instruction.kind {
                    ActionKind::Pick => sim.states[triple.image_index].positions[idx],
                    ActionKind::Place => sim.rest_world[idx],
                };
                let dist = (reference - triple.world).length();
                if dist > threshold {
                    reasons.push(format!(
                        "keypoint {:?} is {dist:.4} m from the action (threshold {threshold:.4})",
                        triple.instruction.part
                    ));
                }
            } else {
                reasons.push(format!("part {:?} has no keypoint", triple.instruction.part));
            }
        }
        let ok = reasons.is_empty();
        if !ok {
            failures.push(format!("step {k}: {}", reasons.join("; ")));
        }
        steps.push(StepCheck { step: k, ok, reasons });
    }

    DecompositionReport { pass: failures.is_empty(), failures, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::default_env;
    use crate::grammar::ClothType;
    use crate::llm::MockTransport;
    use crate::planner::{plan_rule, TaskSpec};
    use crate::skill::demo::generate_demo;

    fn demo_and_template(
        text: &str,
        cloth: ClothType,
    ) -> (Demonstration, ClothTemplate) {
        let spec = TaskSpec { long_instruction: text.into(), cloth_type: cloth };
        let plan = plan_rule(&spec).unwrap();
        let mut env = default_env(cloth).unwrap();
        let demo = generate_demo("demo_000", text, &plan, &mut env).unwrap();
        (demo, env.template)
    }

    #[test]
    fn trousers_half_fold_yields_four_triples() {
        let (demo, template) =
            demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let triples = decompose_rule(&demo, &template).unwrap();
        assert_eq!(triples.len(), 4);
        assert_eq!(triples[0].instruction.part, "waist left corner");
        assert_eq!(triples[1].instruction.part, "waist right corner");
        assert_eq!(triples[2].instruction.part, "left leg hem");
        assert_eq!(triples[3].instruction.part, "right leg hem");
    }

    #[test]
    fn twelve_step_tshirt_task_yields_twelve_triples() {
        let (demo, template) = demo_and_template(
            "Fold both sleeves inward, then fold the T-shirt top to bottom, then left to right",
            ClothType::Tshirt,
        );
        assert_eq!(demo.image_count(), 7);
        let triples = decompose_rule(&demo, &template).unwrap();
        assert_eq!(triples.len(), 12);
    }

    #[test]
    fn rule_decomposition_passes_its_own_validator() {
        let (demo, template) =
            demo_and_template("Fold the skirt from top to bottom", ClothType::Skirt);
        let triples = decompose_rule(&demo, &template).unwrap();
        let report = validate_decomposition(&triples, &demo, &template);
        assert!(report.pass, "failures: {:?}", report.failures);
    }

    #[test]
    fn mid_panel_action_is_unlabelable() {
        let (mut demo, template) =
            demo_and_template("Fold the square from left to right", ClothType::Square);
        // Push the first pick far from every keypoint.
        demo.actions[0].world.x += 0.5;
        let err = decompose_rule(&demo, &template).unwrap_err();
        assert!(matches!(err, SkillError::UnlabelableAction { step: 0, .. }));
    }

    #[test]
    fn missing_sim_states_is_a_typed_error() {
        let (mut demo, template) =
            demo_and_template("Fold the square from left to right", ClothType::Square);
        demo.sim = None;
        assert!(matches!(decompose_rule(&demo, &template), Err(SkillError::MissingSimStates)));
    }

    #[test]
    fn rule_labels_are_translation_invariant() {
        let spec = TaskSpec {
            long_instruction: "Fold the square from left to right".into(),
            cloth_type: ClothType::Square,
        };
        let plan = plan_rule(&spec).unwrap();
        let mut env = default_env(ClothType::Square).unwrap();
        let demo_a = generate_demo("a", &spec.long_instruction, &plan, &mut env).unwrap();

        let template = env.template.clone();
        let mut env_b = crate::executor::Env::with_placement(
            template.clone(),
            env.sim_config.clone(),
            env.camera.clone(),
            0.0,
            glam::DVec3::new(0.02, -0.015, 0.0),
        );
        let demo_b = generate_demo("b", &spec.long_instruction, &plan, &mut env_b).unwrap();

        let labels = |triples: &[SkillTriple]| -> Vec<String> {
            triples.iter().map(|t| t.instruction.part.clone()).collect()
        };
        let a = decompose_rule(&demo_a, &template).unwrap();
        let b = decompose_rule(&demo_b, &template).unwrap();
        assert_eq!(labels(&a), labels(&b));
    }

    #[test]
    fn llm_decomposition_matches_the_rule_path_with_a_good_mock() {
        let (demo, template) =
            demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let expected = decompose_rule(&demo, &template).unwrap();

        let prompt = default_decompose_prompt();
        let mut mock = MockTransport::new();
        mock.script(
            &decompose_user_payload(&demo),
            "Left onto right needs the waist pair then the hem pair.\nANSWER:\n\
             1. Pick up the waist left corner of the trousers\n\
             2. Fold it to the waist right corner\n\
             3. Pick up the left leg hem of the trousers\n\
             4. Fold it to the right leg hem",
        );
        let client = LlmClient::mock(mock);
        let triples = decompose_llm(&demo, &client, &prompt).unwrap();
        assert_eq!(triples.len(), expected.len());
        for (a, b) in triples.iter().zip(&expected) {
            assert_eq!(a.instruction, b.instruction);
            assert_eq!(a.pixel, b.pixel);
        }
    }

    #[test]
    fn llm_wrong_count_is_malformed() {
        let (demo, _) = demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let prompt = default_decompose_prompt();
        let mock = MockTransport::always(
            "ANSWER:\n1. Pick up the waist left corner of the trousers\n\
             2. Fold it to the waist right corner\n\
             3. Pick up the left leg hem of the trousers",
        );
        let client = LlmClient::mock(mock);
        let err = decompose_llm(&demo, &client, &prompt).unwrap_err();
        match err {
            SkillError::MalformedResponse { reason, .. } => {
                assert!(reason.contains("expected 4"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn llm_free_text_is_malformed() {
        let (demo, _) = demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let prompt = default_decompose_prompt();
        let client = LlmClient::mock(MockTransport::always(
            "ANSWER:\ngrab the thing\ndrop the thing\ngrab it again\ndrop it again",
        ));
        let err = decompose_llm(&demo, &client, &prompt).unwrap_err();
        assert!(matches!(err, SkillError::MalformedResponse { .. }));
    }

    #[test]
    fn validator_flags_swapped_instructions() {
        let (demo, template) =
            demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let mut triples = decompose_rule(&demo, &template).unwrap();
        let tmp = triples[0].instruction.clone();
        triples[0].instruction = triples[1].instruction.clone();
        triples[1].instruction = tmp;
        let report = validate_decomposition(&triples, &demo, &template);
        assert!(!report.pass);
        assert!(!report.steps[0].ok);
    }

    #[test]
    fn validator_flags_perturbed_actions() {
        let (demo, template) =
            demo_and_template("Fold the trousers from left to right", ClothType::Trousers);
        let mut triples = decompose_rule(&demo, &template).unwrap();
        triples[0].world.x += 0.2;
        let report = validate_decomposition(&triples, &demo, &template);
        assert!(!report.pass);
        assert!(report.failures[0].contains("step 0"));
    }
}
