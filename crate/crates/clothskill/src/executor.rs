//! Grounds plans into simulator actions.
//!
//! For every pick/place pair the executor renders one observation, asks the
//! grounding (learned model or geometric oracle) for both pixels from that
//! same observation, back-projects them through the camera using the median
//! rendered depth around each pixel, transforms to the base frame, and runs
//! the pick-and-place primitive. Grasp misses are recorded and the episode
//! continues; divergence aborts it.

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraModel};
use crate::grammar::{render_instruction, BasicInstruction, ClothType};
use crate::model::{self, ModelConfig, ModelError, TensorMap, Tokenizer};
use crate::planner::{validate_plan, TaskPlan};
use crate::sim::{
    self, execute_pick_place, ClothState, ClothTemplate, DepthImage, Mask, SimConfig, SimError,
};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("plan is invalid for this environment: {}", violations.join("; "))]
    PlanInvalid { violations: Vec<String> },
    #[error("no keypoint named {part:?} on this template")]
    UnknownPart { part: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// One manipulation episode's world: template, mutable state, the
/// rest-frame anchor of this placement, physics, and the camera.
#[derive(Debug, Clone)]
pub struct Env {
    pub template: ClothTemplate,
    pub state: ClothState,
    /// Rest positions under this episode's placement; the "nominal location"
    /// a fold target refers to.
    pub rest_world: Vec<DVec3>,
    pub sim_config: SimConfig,
    pub camera: CameraModel,
}

impl Env {
    /// Cloth flat at its canonical pose.
    pub fn new(template: ClothTemplate, sim_config: SimConfig, camera: CameraModel) -> Env {
        let state = ClothState::from_template(&template);
        let rest_world = template.rest_positions.clone();
        Env { template, state, rest_world, sim_config, camera }
    }

    /// Cloth flat under a rigid placement (rotation about the centroid,
    /// then translation).
    pub fn with_placement(
        template: ClothTemplate,
        sim_config: SimConfig,
        camera: CameraModel,
        rotation_z: f64,
        translation: DVec3,
    ) -> Env {
        let state = ClothState::placed(&template, rotation_z, translation);
        let rest_world = state.positions.clone();
        Env { template, state, rest_world, sim_config, camera }
    }

    pub fn render_depth(&self) -> Result<DepthImage, SimError> {
        sim::render_depth(&self.state, &self.template, &self.camera, self.sim_config.ground_height)
    }

    pub fn render_mask(&self) -> Result<Mask, SimError> {
        sim::render_mask(&self.state, &self.template, &self.camera)
    }

    fn keypoint(&self, part: &str) -> Result<usize, ExecError> {
        self.template
            .keypoint_index(part)
            .ok_or_else(|| ExecError::UnknownPart { part: part.to_string() })
    }
}

/// Context handed to groundings; the oracle needs the simulator state, the
/// learned model ignores it.
pub struct GroundingContext<'a> {
    pub state: &'a ClothState,
    pub template: &'a ClothTemplate,
    pub rest_world: &'a [DVec3],
    pub camera: &'a CameraModel,
}

/// Maps (observation, instruction) to a target pixel. Groundings are
/// shared read-only across concurrent episodes.
pub trait Grounding: Sync {
    fn name(&self) -> &'static str;
    fn predict_pixel(
        &self,
        observation: &DepthImage,
        instruction: &BasicInstruction,
        ctx: &GroundingContext<'_>,
    ) -> Result<(u32, u32), ExecError>;
}

/// Geometric reference grounding (keypoint projection).
pub struct OracleGrounding;

impl Grounding for OracleGrounding {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn predict_pixel(
        &self,
        _observation: &DepthImage,
        instruction: &BasicInstruction,
        ctx: &GroundingContext<'_>,
    ) -> Result<(u32, u32), ExecError> {
        Ok(model::oracle_predict(ctx.state, ctx.template, ctx.rest_world, instruction, ctx.camera)?)
    }
}

/// Learned grounding: heatmap argmax of the trained affordance model.
pub struct ModelGrounding {
    pub params: TensorMap,
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
}

impl Grounding for ModelGrounding {
    fn name(&self) -> &'static str {
        "model"
    }

    fn predict_pixel(
        &self,
        observation: &DepthImage,
        instruction: &BasicInstruction,
        _ctx: &GroundingContext<'_>,
    ) -> Result<(u32, u32), ExecError> {
        let text = render_instruction(instruction);
        let tokens = self.tokenizer.encode(&text, self.config.max_text_len);
        Ok(model::predict_point(&self.params, &self.config, observation, &tokens)?)
    }
}

/// Depth used to lift a predicted pixel to 3D: the pixel's own rendered
/// value, i.e. where that camera ray actually hits. Windowed statistics
/// (median or minimum over a neighborhood) blend depths across fold layers
/// and adjacent piles, which drags grasps centimeters off target in bunched
/// regions.
pub fn pixel_depth(image: &DepthImage, px: u32, py: u32) -> f32 {
    image.at(px.min(image.width - 1), py.min(image.height - 1))
}

/// Everything recorded for one executed pick/place pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub pick_instruction: BasicInstruction,
    pub place_instruction: BasicInstruction,
    pub pick_pixel: (u32, u32),
    pub place_pixel: (u32, u32),
    pub pick_cam: DVec3,
    pub place_cam: DVec3,
    pub pick_base: DVec3,
    pub place_base: DVec3,
    pub grasp_missed: bool,
    /// Raster file reference filled in when frames are exported.
    pub observation_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pair_index")]
pub enum Outcome {
    Completed,
    Diverged(usize),
}

/// A full episode record, sufficient to replay it deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub grounding: String,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
    pub initial_state: ClothState,
    pub final_state: ClothState,
}

/// Executes a validated plan pair by pair. Both pixels of a pair are
/// predicted from the same pre-pick observation, matching the dataset
/// structure in which one image carries a pick and a place action.
pub fn execute_plan(
    plan: &TaskPlan,
    env: &mut Env,
    grounding: &dyn Grounding,
) -> Result<EpisodeTrace, ExecError> {
    let validation = validate_plan(plan, env.template.cloth_type);
    if !validation.is_ok() {
        return Err(ExecError::PlanInvalid { violations: validation.violations });
    }

    let initial_state = env.state.clone();
    let mut records = Vec::with_capacity(plan.pair_count());
    let mut outcome = Outcome::Completed;

    for (pair_index, pair) in plan.steps.chunks_exact(2).enumerate() {
        let (pick_inst, place_inst) = (&pair[0], &pair[1]);
        let pre_pair_state = env.state.clone();
        let observation = env.render_depth()?;
        let ctx = GroundingContext {
            state: &env.state,
            template: &env.template,
            rest_world: &env.rest_world,
            camera: &env.camera,
        };
        let pick_pixel = grounding.predict_pixel(&observation, pick_inst, &ctx)?;
        let place_pixel = grounding.predict_pixel(&observation, place_inst, &ctx)?;

        let pick_depth = pixel_depth(&observation, pick_pixel.0, pick_pixel.1);
        let place_depth = pixel_depth(&observation, place_pixel.0, place_pixel.1);
        let pick_cam =
            env.camera.backproject(pick_pixel.0 as f64, pick_pixel.1 as f64, pick_depth as f64)?;
        let place_cam =
            env.camera.backproject(place_pixel.0 as f64, place_pixel.1 as f64, place_depth as f64)?;
        let pick_base = env.camera.cam_to_base(pick_cam);
        let place_base = env.camera.cam_to_base(place_cam);

        let mut record = StepRecord {
            pick_instruction: pick_inst.clone(),
            place_instruction: place_inst.clone(),
            pick_pixel,
            place_pixel,
            pick_cam,
            place_cam,
            pick_base,
            place_base,
            grasp_missed: false,
            observation_ref: None,
        };

        match execute_pick_place(&mut env.state, &env.template, pick_base, place_base, &env.sim_config)
        {
            Ok(_) => {}
            Err(SimError::GraspMiss { .. }) => {
                // Partial-credit policy: record the miss, keep going.
                record.grasp_missed = true;
            }
            Err(SimError::SimulationDiverged { .. }) => {
                // Roll back to the last finite state; the trace stays
                // replayable and serializable.
                env.state = pre_pair_state;
                outcome = Outcome::Diverged(pair_index);
                break;
            }
            Err(e) => return Err(e.into()),
        }
        records.push(record);
    }

    Ok(EpisodeTrace {
        grounding: grounding.name().to_string(),
        records,
        outcome,
        initial_state,
        final_state: env.state.clone(),
    })
}

/// Re-runs a trace's recorded base-frame actions from its initial state.
/// With the same template and config this reproduces the final state bit
/// for bit.
pub fn replay(
    trace: &EpisodeTrace,
    template: &ClothTemplate,
    sim_config: &SimConfig,
) -> Result<ClothState, ExecError> {
    let mut state = trace.initial_state.clone();
    for record in &trace.records {
        match execute_pick_place(&mut state, template, record.pick_base, record.place_base, sim_config)
        {
            Ok(_) => {}
            Err(SimError::GraspMiss { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(state)
}

/// One step of a scripted rollout: the pre-action state and the exact world
/// points used.
#[derive(Debug, Clone)]
pub struct ScriptedStep {
    pub pick_instruction: BasicInstruction,
    pub place_instruction: BasicInstruction,
    pub pre_state: ClothState,
    pub pick_world: DVec3,
    pub place_world: DVec3,
}

/// Executes a plan with true keypoint world positions and no pixel round
/// trip: picks grab the instruction's particle where it currently is,
/// places target the rest-frame location. This is the scripted, error-free
/// reference execution.
pub fn scripted_rollout(plan: &TaskPlan, env: &mut Env) -> Result<Vec<ScriptedStep>, ExecError> {
    let validation = validate_plan(plan, env.template.cloth_type);
    if !validation.is_ok() {
        return Err(ExecError::PlanInvalid { violations: validation.violations });
    }
    let mut steps = Vec::with_capacity(plan.pair_count());
    for pair in plan.steps.chunks_exact(2) {
        let (pick_inst, place_inst) = (&pair[0], &pair[1]);
        let pick_world = env.state.positions[env.keypoint(&pick_inst.part)?];
        let place_world = env.rest_world[env.keypoint(&place_inst.part)?];
        let pre_state = env.state.clone();
        execute_pick_place(&mut env.state, &env.template, pick_world, place_world, &env.sim_config)?;
        steps.push(ScriptedStep {
            pick_instruction: pick_inst.clone(),
            place_instruction: place_inst.clone(),
            pre_state,
            pick_world,
            place_world,
        });
    }
    Ok(steps)
}

/// Convenience: template + default physics + benchmark camera for a cloth
/// type at its default dimensions.
pub fn default_env(cloth_type: ClothType) -> Result<Env, SimError> {
    let (w, h) = sim::default_dims(cloth_type);
    let template = sim::make_template(cloth_type, w, h, 0.025)?;
    Ok(Env::new(template, SimConfig::default(), CameraModel::default_benchmark()))
}
