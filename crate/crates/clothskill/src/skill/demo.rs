//! Long demonstrations: recorded multi-step episodes with one image per
//! pick/place pair plus the final image, and the action list between them.

use std::path::{Path, PathBuf};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::executor::{scripted_rollout, Env};
use crate::grammar::{ActionKind, ClothType};
use crate::planner::TaskPlan;
use crate::sim::{self, read_depth, write_depth, ClothState, DepthImage};

use super::SkillError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoAction {
    pub kind: ActionKind,
    pub pixel: (u32, u32),
    pub world: DVec3,
}

/// Simulator-side extras available for generated demonstrations: the cloth
/// state under each image and the rest-frame anchor of the placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSimInfo {
    pub states: Vec<ClothState>,
    pub rest_world: Vec<DVec3>,
}

/// A long demonstration: m images, 2m−2 actions alternating pick/place
/// (the final image has no actions), and the long task instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub demo_id: String,
    pub cloth_type: ClothType,
    pub long_instruction: String,
    pub images: Vec<DepthImage>,
    pub actions: Vec<DemoAction>,
    pub sim: Option<DemoSimInfo>,
}

impl Demonstration {
    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// Expected action count: 2m − 2.
    pub fn expected_actions(&self) -> usize {
        2 * self.image_count().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        if self.image_count() < 2 {
            return Err(SkillError::InvalidDemo(format!(
                "{}: needs at least two images, has {}",
                self.demo_id,
                self.image_count()
            )));
        }
        if self.actions.len() != self.expected_actions() {
            return Err(SkillError::InvalidDemo(format!(
                "{}: {} images require {} actions, found {}",
                self.demo_id,
                self.image_count(),
                self.expected_actions(),
                self.actions.len()
            )));
        }
        for (k, action) in self.actions.iter().enumerate() {
            let expected = if k % 2 == 0 { ActionKind::Pick } else { ActionKind::Place };
            if action.kind != expected {
                return Err(SkillError::InvalidDemo(format!(
                    "{}: action {k} is {} but must be {expected}",
                    self.demo_id, action.kind
                )));
            }
            let image = &self.images[k / 2];
            if action.pixel.0 >= image.width || action.pixel.1 >= image.height {
                return Err(SkillError::InvalidDemo(format!(
                    "{}: action {k} pixel {:?} is outside the {}x{} image",
                    self.demo_id, action.pixel, image.width, image.height
                )));
            }
        }
        if let Some(sim) = &self.sim {
            if sim.states.len() != self.image_count() {
                return Err(SkillError::InvalidDemo(format!(
                    "{}: {} states for {} images",
                    self.demo_id,
                    sim.states.len(),
                    self.image_count()
                )));
            }
        }
        Ok(())
    }
}

/// Runs a scripted rollout of `plan` in `env` and records it as a
/// demonstration: one depth image before every pick/place pair, the final
/// image, true action points, and their projected pixels.
pub fn generate_demo(
    demo_id: &str,
    long_instruction: &str,
    plan: &TaskPlan,
    env: &mut Env,
) -> Result<Demonstration, SkillError> {
    let steps = scripted_rollout(plan, env)?;
    let mut images = Vec::with_capacity(steps.len() + 1);
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut actions = Vec::with_capacity(steps.len() * 2);

    let project = |env: &Env, point: DVec3| -> Result<(u32, u32), SkillError> {
        let (px, py) = env.camera.project(point).map_err(sim::SimError::from)?;
        let clamp = |v: f64, hi: u32| (v.round().max(0.0) as u32).min(hi - 1);
        Ok((clamp(px, env.camera.width), clamp(py, env.camera.height)))
    };

    for step in &steps {
        images.push(sim::render_depth(
            &step.pre_state,
            &env.template,
            &env.camera,
            env.sim_config.ground_height,
        )?);
        states.push(step.pre_state.clone());
        actions.push(DemoAction {
            kind: ActionKind::Pick,
            pixel: project(env, step.pick_world)?,
            world: step.pick_world,
        });
        actions.push(DemoAction {
            kind: ActionKind::Place,
            pixel: project(env, step.place_world)?,
            world: step.place_world,
        });
    }
    images.push(env.render_depth()?);
    states.push(env.state.clone());

    let demo = Demonstration {
        demo_id: demo_id.to_string(),
        cloth_type: env.template.cloth_type,
        long_instruction: long_instruction.to_string(),
        images,
        actions,
        sim: Some(DemoSimInfo { states, rest_world: env.rest_world.clone() }),
    };
    demo.validate()?;
    Ok(demo)
}

#[derive(Serialize, Deserialize)]
struct DemoMeta {
    schema_version: u32,
    demo_id: String,
    cloth_type: ClothType,
    long_instruction: String,
    actions: Vec<DemoAction>,
    images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim: Option<DemoSimInfo>,
}

const DEMO_SCHEMA_VERSION: u32 = 1;

/// Writes `demo` as a directory: `meta.json` plus one CDPT file per image.
pub fn save_demo(dir: &Path, demo: &Demonstration) -> Result<(), SkillError> {
    std::fs::create_dir_all(dir)?;
    let mut image_names = Vec::with_capacity(demo.images.len());
    for (i, image) in demo.images.iter().enumerate() {
        let name = format!("img_{i:03}.cdpt");
        write_depth(&dir.join(&name), image)?;
        image_names.push(name);
    }
    let meta = DemoMeta {
        schema_version: DEMO_SCHEMA_VERSION,
        demo_id: demo.demo_id.clone(),
        cloth_type: demo.cloth_type,
        long_instruction: demo.long_instruction.clone(),
        actions: demo.actions.clone(),
        images: image_names,
        sim: demo.sim.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

pub fn load_demo(dir: &Path) -> Result<Demonstration, SkillError> {
    let meta: DemoMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.schema_version != DEMO_SCHEMA_VERSION {
        return Err(SkillError::UnsupportedSchema(meta.schema_version));
    }
    let mut images = Vec::with_capacity(meta.images.len());
    for name in &meta.images {
        images.push(read_depth(&dir.join(name))?);
    }
    let demo = Demonstration {
        demo_id: meta.demo_id,
        cloth_type: meta.cloth_type,
        long_instruction: meta.long_instruction,
        images,
        actions: meta.actions,
        sim: meta.sim,
    };
    demo.validate()?;
    Ok(demo)
}

/// Loads every demo directory under `root`, sorted by name.
pub fn load_demos(root: &Path) -> Result<Vec<Demonstration>, SkillError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("meta.json").exists())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_demo(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::default_env;
    use crate::planner::{plan_rule, TaskSpec};

    fn trousers_demo() -> Demonstration {
        let spec = TaskSpec {
            long_instruction: "Fold the trousers from left to right".into(),
            cloth_type: ClothType::Trousers,
        };
        let plan = plan_rule(&spec).unwrap();
        let mut env = default_env(ClothType::Trousers).unwrap();
        generate_demo("demo_test_000", &spec.long_instruction, &plan, &mut env).unwrap()
    }

    #[test]
    fn generated_demo_satisfies_the_action_count_rule() {
        let demo = trousers_demo();
        // 2 pairs → 3 images → 4 actions.
        assert_eq!(demo.image_count(), 3);
        assert_eq!(demo.actions.len(), 4);
        demo.validate().unwrap();
    }

    #[test]
    fn demo_round_trips_through_disk_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let demo = trousers_demo();
        let path = dir.path().join(&demo.demo_id);
        save_demo(&path, &demo).unwrap();
        let back = load_demo(&path).unwrap();
        assert_eq!(back, demo);

        // Saving the reloaded demo reproduces identical bytes.
        let path2 = dir.path().join("again");
        save_demo(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(path.join("meta.json")).unwrap(),
            std::fs::read(path2.join("meta.json")).unwrap()
        );
    }

    #[test]
    fn validate_rejects_wrong_action_count() {
        let mut demo = trousers_demo();
        demo.actions.pop();
        assert!(matches!(demo.validate(), Err(SkillError::InvalidDemo(_))));
    }

    #[test]
    fn validate_rejects_broken_alternation() {
        let mut demo = trousers_demo();
        demo.actions.swap(0, 1);
        assert!(matches!(demo.validate(), Err(SkillError::InvalidDemo(_))));
    }

    #[test]
    fn load_demos_sorts_by_directory_name() {
        let dir = tempfile::tempdir().unwrap();
        let demo = trousers_demo();
        let mut b = demo.clone();
        b.demo_id = "demo_b".into();
        let mut a = demo.clone();
        a.demo_id = "demo_a".into();
        save_demo(&dir.path().join("demo_b"), &b).unwrap();
        save_demo(&dir.path().join("demo_a"), &a).unwrap();
        let demos = load_demos(dir.path()).unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[0].demo_id, "demo_a");
        assert_eq!(demos[1].demo_id, "demo_b");
    }
}
