//! Command-line pipeline: demo generation, skill discovery, training,
//! planning, rollouts, and the benchmark, plus vocabulary and render
//! utilities.
//!
//! Configuration comes from an optional JSON file (`--config`) with CLI
//! flags taking precedence. Every command is deterministic for a fixed
//! seed; the live LLM paths are the documented exception.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::eval::{
    self, prepare_suite_rule, BenchmarkOptions, BenchmarkReport, PreparedTask,
};
use crate::executor::{
    execute_plan, Env, EpisodeTrace, Grounding, ModelGrounding, OracleGrounding,
};
use crate::grammar::{self, ClothType};
use crate::llm::{LlmClient, PromptConfig};
use crate::model::{
    read_checkpoint, write_checkpoint, ModelConfig, Tokenizer, TrainHyper, TrainLogEntry,
};
use crate::planner::{
    self, default_plan_prompt, plan_for_task, plan_llm, BenchmarkTask, TaskPlan,
};
use crate::sim::{self, write_depth, write_depth_png, write_mask, SimConfig};
use crate::skill::{
    self, build_dataset, decompose_llm, decompose_rule, default_decompose_prompt, read_dataset,
    to_train_samples, validate_decomposition, write_dataset, Provenance, SkillTriple,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_THRESHOLDS: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("acceptance thresholds not met")]
    ThresholdsNotMet,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::ThresholdsNotMet => EXIT_THRESHOLDS,
        }
    }
}

fn runtime(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroundingChoice {
    Oracle,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlannerChoice {
    Rule,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecomposerChoice {
    Rule,
    Llm,
}

/// Optional pass/fail gates applied by `eval`; exit code 4 when any fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalThresholds {
    pub min_success_rate: Option<f64>,
    pub min_miou: Option<f64>,
    pub max_wrinkle_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Demo directory; defaults to `<out_dir>/demos`.
    pub demos_dir: Option<PathBuf>,
    /// Dataset directory; defaults to `<out_dir>/dataset`.
    pub dataset_dir: Option<PathBuf>,
    /// Checkpoint path; defaults to `<out_dir>/model.cafm`.
    pub checkpoint: Option<PathBuf>,
    /// Training log path; defaults to `<out_dir>/train_log.jsonl`.
    pub train_log: Option<PathBuf>,
    /// Benchmark report path; defaults to `<out_dir>/report.json`.
    pub report: Option<PathBuf>,
    /// Task suite file; the built-in ten tasks when absent.
    pub suite: Option<PathBuf>,
    /// Directory overriding the embedded prompt assets.
    pub prompts_dir: Option<PathBuf>,
    /// JSON-lines transcript log for live LLM calls.
    pub transcript_log: Option<PathBuf>,
    pub grounding: GroundingChoice,
    pub planner: PlannerChoice,
    pub decomposer: DecomposerChoice,
    pub seed: u64,
    pub jobs: usize,
    pub trials: usize,
    pub demos_per_task: usize,
    pub augment_flip: bool,
    pub spacing: f64,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub eval: EvalThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            demos_dir: None,
            dataset_dir: None,
            checkpoint: None,
            train_log: None,
            report: None,
            suite: None,
            prompts_dir: None,
            transcript_log: None,
            grounding: GroundingChoice::Oracle,
            planner: PlannerChoice::Rule,
            decomposer: DecomposerChoice::Rule,
            seed: 0,
            jobs: 1,
            trials: 50,
            demos_per_task: 20,
            augment_flip: false,
            spacing: 0.025,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            hyper: TrainHyper::default(),
            eval: EvalThresholds::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse config {}: {e}", path.display())))
    }

    pub fn demos_dir(&self) -> PathBuf {
        self.demos_dir.clone().unwrap_or_else(|| self.out_dir.join("demos"))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir.clone().unwrap_or_else(|| self.out_dir.join("dataset"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.cafm"))
    }

    pub fn train_log(&self) -> PathBuf {
        self.train_log.clone().unwrap_or_else(|| self.out_dir.join("train_log.jsonl"))
    }

    pub fn report(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.out_dir.join("report.json"))
    }

    fn camera(&self) -> CameraModel {
        let side = self.model.image_size as u32;
        CameraModel::top_down(1.0, side, side, 1.5 * side as f64, 1.5 * side as f64)
    }

    fn suite(&self) -> Result<Vec<BenchmarkTask>, CliError> {
        match &self.suite {
            Some(path) => planner::load_suite(path)
                .map_err(|e| CliError::Config(format!("suite {}: {e}", path.display()))),
            None => Ok(planner::default_suite()),
        }
    }

    fn llm_client(&self) -> Result<LlmClient, CliError> {
        let client = LlmClient::from_env().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(match &self.transcript_log {
            Some(path) => client.with_transcript_log(path.clone()),
            None => client,
        })
    }

    fn prompt(&self, kind: PromptKind) -> Result<PromptConfig, CliError> {
        match &self.prompts_dir {
            None => Ok(match kind {
                PromptKind::Decompose => default_decompose_prompt(),
                PromptKind::Plan => default_plan_prompt(),
            }),
            Some(dir) => load_prompt_dir(dir, kind),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PromptKind {
    Decompose,
    Plan,
}

/// Reads prompt assets (`<kind>_system.txt`, `<kind>_fewshot_N_user.txt` /
/// `_assistant.txt`) from a directory.
fn load_prompt_dir(dir: &Path, kind: PromptKind) -> Result<PromptConfig, CliError> {
    let prefix = match kind {
        PromptKind::Decompose => "decompose",
        PromptKind::Plan => "plan",
    };
    let read = |name: String| -> Result<String, CliError> {
        std::fs::read_to_string(dir.join(&name))
            .map(|s| s.trim_end().to_string())
            .map_err(|e| CliError::Config(format!("prompt asset {name}: {e}")))
    };
    let system = read(format!("{prefix}_system.txt"))?;
    let mut few_shot = Vec::new();
    for i in 1.. {
        let user = dir.join(format!("{prefix}_fewshot_{i}_user.txt"));
        if !user.exists() {
            break;
        }
        few_shot.push((
            read(format!("{prefix}_fewshot_{i}_user.txt"))?,
            read(format!("{prefix}_fewshot_{i}_assistant.txt"))?,
        ));
    }
    Ok(PromptConfig { system, few_shot, ..PromptConfig::default() })
}

fn task_env(config: &RunConfig, cloth_type: ClothType, placement: Option<(f64, DVec3)>) -> Result<Env, CliError> {
    let (w, h) = sim::default_dims(cloth_type);
    let template = sim::make_template(cloth_type, w, h, config.spacing).map_err(runtime)?;
    Ok(match placement {
        None => Env::new(template, config.sim.clone(), config.camera()),
        Some((rot, t)) => {
            Env::with_placement(template, config.sim.clone(), config.camera(), rot, t)
        }
    })
}

const DEMOGEN_SALT: u64 = 0xde30_0000_0000_0003;

#[derive(Debug, Serialize)]
pub struct DemoGenSummary {
    pub demo_count: usize,
    pub demos_dir: PathBuf,
    pub skipped_tasks: Vec<String>,
}

/// Generates jittered scripted demonstrations for every seen task in the
/// suite.
pub fn cmd_demo_gen(config: &RunConfig) -> Result<DemoGenSummary, CliError> {
    let suite = config.suite()?;
    let demos_dir = config.demos_dir();
    std::fs::create_dir_all(&demos_dir).map_err(runtime)?;

    let seen: Vec<&BenchmarkTask> = suite.iter().filter(|t| t.seen).collect();
    let mut skipped_tasks = Vec::new();
    let mut demo_count = 0usize;
    for (task_index, task) in seen.iter().enumerate() {
        let plan = match plan_for_task(task) {
            Ok(p) => p,
            Err(e) => {
                skipped_tasks.push(format!("{}: {e}", task.name));
                continue;
            }
        };
        for i in 0..config.demos_per_task {
            let mut bytes = Vec::new();
            bytes.extend_from_slice(&config.seed.to_le_bytes());
            bytes.extend_from_slice(&(task_index as u64).to_le_bytes());
            bytes.extend_from_slice(&(i as u64).to_le_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(crate::fnv1a(&bytes) ^ DEMOGEN_SALT);
            let tx: f64 = rng.random_range(-0.02..0.02);
            let ty: f64 = rng.random_range(-0.02..0.02);
            let rot: f64 = rng.random_range(-10f64.to_radians()..10f64.to_radians());

            let mut env = task_env(config, task.cloth_type, Some((rot, DVec3::new(tx, ty, 0.0))))?;
            let demo_id = format!("{}_{i:03}", task.name);
            let demo = skill::generate_demo(&demo_id, &task.long_instruction, &plan, &mut env)
                .map_err(runtime)?;
            skill::save_demo(&demos_dir.join(&demo_id), &demo).map_err(runtime)?;
            demo_count += 1;
        }
    }
    Ok(DemoGenSummary { demo_count, demos_dir, skipped_tasks })
}

#[derive(Debug, Serialize)]
pub struct DiscoverSummary {
    pub triple_count: usize,
    pub demo_count: usize,
    pub skipped: Vec<String>,
    pub validation_passed: usize,
    pub validation_total: usize,
    pub dataset_dir: PathBuf,
}

/// Decomposes every stored demo and writes the skill dataset.
pub fn cmd_discover(config: &RunConfig) -> Result<DiscoverSummary, CliError> {
    let demos = skill::load_demos(&config.demos_dir())
        .map_err(|e| CliError::Config(format!("demos in {}: {e}", config.demos_dir().display())))?;
    if demos.is_empty() {
        return Err(CliError::Config(format!(
            "no demonstrations under {}",
            config.demos_dir().display()
        )));
    }

    let mut templates = std::collections::BTreeMap::new();
    for demo in &demos {
        if !templates.contains_key(&demo.cloth_type) {
            let (w, h) = sim::default_dims(demo.cloth_type);
            let template =
                sim::make_template(demo.cloth_type, w, h, config.spacing).map_err(runtime)?;
            templates.insert(demo.cloth_type, template);
        }
    }

    let (provenance, decomposer): (Provenance, Box<dyn FnMut(&skill::Demonstration) -> Result<Vec<SkillTriple>, skill::SkillError>>) =
        match config.decomposer {
            DecomposerChoice::Rule => (
                Provenance::Rule,
                Box::new(|demo: &skill::Demonstration| decompose_rule(demo, &templates[&demo.cloth_type])),
            ),
            DecomposerChoice::Llm => {
                let client = config.llm_client()?;
                let prompt = config.prompt(PromptKind::Decompose)?;
                let prompt_hash = crate::fnv1a(
                    format!("{}{:?}", prompt.system, prompt.few_shot).as_bytes(),
                );
                (
                    Provenance::Llm { prompt_hash },
                    Box::new(move |demo: &skill::Demonstration| decompose_llm(demo, &client, &prompt)),
                )
            }
        };

    let (dataset, skipped) = build_dataset(&demos, provenance, decomposer);

    // Validate each demo's slice of the dataset.
    let mut validation_passed = 0usize;
    let mut validation_total = 0usize;
    for demo in &demos {
        let triples: Vec<SkillTriple> = dataset
            .triples
            .iter()
            .filter(|t| t.demo_id == demo.demo_id)
            .cloned()
            .collect();
        if triples.is_empty() {
            continue;
        }
        validation_total += 1;
        if validate_decomposition(&triples, demo, &templates[&demo.cloth_type]).pass {
            validation_passed += 1;
        }
    }

    let dataset_dir = config.dataset_dir();
    write_dataset(&dataset_dir, &dataset).map_err(runtime)?;
    Ok(DiscoverSummary {
        triple_count: dataset.triples.len(),
        demo_count: demos.len(),
        skipped: skipped.iter().map(|(id, e)| format!("{id}: {e}")).collect(),
        validation_passed,
        validation_total,
        dataset_dir,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub sample_count: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_holdout_acc: Option<f64>,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
}

/// Trains the affordance model on the stored dataset, optionally resuming
/// from a checkpoint, and writes the checkpoint plus a JSON-lines log.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    let dataset = read_dataset(&config.dataset_dir())
        .map_err(|e| CliError::Config(format!("dataset {}: {e}", config.dataset_dir().display())))?;
    let dataset = if config.augment_flip { skill::augment_flip(&dataset) } else { dataset };

    let tokenizer = Tokenizer::from_grammar();
    let mut model_config = config.model.clone();
    model_config.vocab_size = tokenizer.vocab_size();

    let samples = to_train_samples(&dataset, &tokenizer, model_config.max_text_len);
    let mut hyper = config.hyper.clone();
    hyper.seed = config.seed;

    let (state, log) = match resume {
        None => crate::model::train(&samples, &model_config, &hyper).map_err(runtime)?,
        Some(path) => {
            let (ckpt_config, state) = read_checkpoint(path)
                .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
            if ckpt_config != model_config {
                return Err(CliError::Config(
                    "checkpoint model config differs from the requested config".to_string(),
                ));
            }
            crate::model::train_from(state, &samples, &model_config, &hyper).map_err(runtime)?
        }
    };

    std::fs::create_dir_all(&config.out_dir).map_err(runtime)?;
    let checkpoint = config.checkpoint();
    write_checkpoint(&checkpoint, &model_config, &state).map_err(runtime)?;

    let train_log = config.train_log();
    let mut lines = String::new();
    for entry in &log {
        lines.push_str(&serde_json::to_string(entry).map_err(runtime)?);
        lines.push('\n');
    }
    std::fs::write(&train_log, lines).map_err(runtime)?;

    let last: Option<&TrainLogEntry> = log.last();
    Ok(TrainSummary {
        sample_count: samples.len(),
        epochs_run: log.len(),
        final_train_loss: last.map(|e| e.train_loss).unwrap_or(f64::NAN),
        final_holdout_acc: last.and_then(|e| e.holdout_argmax_acc),
        checkpoint,
        train_log,
    })
}

fn resolve_plan(config: &RunConfig, task: &BenchmarkTask) -> Result<TaskPlan, CliError> {
    match config.planner {
        PlannerChoice::Rule => plan_for_task(task).map_err(runtime),
        PlannerChoice::Llm => {
            let client = config.llm_client()?;
            let prompt = config.prompt(PromptKind::Plan)?;
            plan_llm(&task.spec(), &client, &prompt).map_err(runtime)
        }
    }
}

fn resolve_grounding(config: &RunConfig) -> Result<Box<dyn Grounding>, CliError> {
    match config.grounding {
        GroundingChoice::Oracle => Ok(Box::new(OracleGrounding)),
        GroundingChoice::Model => {
            let path = config.checkpoint();
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "grounding=model needs a checkpoint at {}",
                    path.display()
                )));
            }
            let (model_config, state) = read_checkpoint(&path)
                .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
            Ok(Box::new(ModelGrounding {
                params: state.params,
                config: model_config,
                tokenizer: Tokenizer::from_grammar(),
            }))
        }
    }
}

/// Plans a task (by suite name or free instruction) and returns the
/// rendered step lines.
pub fn cmd_plan(
    config: &RunConfig,
    task_name: Option<&str>,
    instruction: Option<(&str, ClothType)>,
) -> Result<Vec<String>, CliError> {
    let task = match (task_name, instruction) {
        (Some(name), _) => find_task(config, name)?,
        (None, Some((text, cloth))) => BenchmarkTask {
            name: "adhoc".to_string(),
            cloth_type: cloth,
            long_instruction: text.to_string(),
            seen: false,
            oracle_plan: None,
        },
        (None, None) => {
            return Err(CliError::Config(
                "plan needs --task or --instruction with --cloth".to_string(),
            ))
        }
    };
    let plan = resolve_plan(config, &task)?;
    Ok(plan.steps.iter().map(grammar::render_instruction).collect())
}

fn find_task(config: &RunConfig, name: &str) -> Result<BenchmarkTask, CliError> {
    let suite = config.suite()?;
    suite.iter().find(|t| t.name == name).cloned().ok_or_else(|| {
        let names: Vec<&str> = suite.iter().map(|t| t.name.as_str()).collect();
        CliError::Config(format!("unknown task {name:?}; suite has: {}", names.join(", ")))
    })
}

#[derive(Debug, Serialize)]
pub struct RolloutSummary {
    pub task: String,
    pub success: bool,
    pub particle_error: f64,
    pub outcome: String,
    pub trace_path: PathBuf,
}

/// Plans and executes one task from its canonical placement, writing the
/// trace (with per-step raster references) and optional PNG frames.
pub fn cmd_rollout(
    config: &RunConfig,
    task_name: &str,
    save_png: bool,
) -> Result<RolloutSummary, CliError> {
    let task = find_task(config, task_name)?;
    let plan = resolve_plan(config, &task)?;
    let grounding = resolve_grounding(config)?;

    let mut env = task_env(config, task.cloth_type, None)?;
    let oracle_state = eval::make_oracle_state(&plan, &env).map_err(runtime)?;
    let mut trace = execute_plan(&plan, &mut env, grounding.as_ref()).map_err(runtime)?;

    let rollout_dir = config.out_dir.join("rollouts").join(&task.name);
    std::fs::create_dir_all(&rollout_dir).map_err(runtime)?;
    save_trace_frames(&mut trace, &env, &rollout_dir, save_png)?;

    let trace_path = rollout_dir.join("trace.json");
    let json = serde_json::to_string_pretty(&trace).map_err(runtime)?;
    std::fs::write(&trace_path, json + "\n").map_err(runtime)?;

    let (ok, particle_error) =
        eval::success(&trace.final_state, &oracle_state, eval::SUCCESS_THRESHOLD);
    Ok(RolloutSummary {
        task: task.name,
        success: ok,
        particle_error,
        outcome: format!("{:?}", trace.outcome),
        trace_path,
    })
}

/// Re-simulates the trace from its initial state, saving the observation
/// rasters each pair saw and stamping their references into the trace.
fn save_trace_frames(
    trace: &mut EpisodeTrace,
    env: &Env,
    dir: &Path,
    save_png: bool,
) -> Result<(), CliError> {
    let mut state = trace.initial_state.clone();
    for (k, record) in trace.records.iter_mut().enumerate() {
        let depth = sim::render_depth(&state, &env.template, &env.camera, env.sim_config.ground_height)
            .map_err(runtime)?;
        let mask = sim::render_mask(&state, &env.template, &env.camera).map_err(runtime)?;
        let depth_name = format!("frame_{k:02}.cdpt");
        write_depth(&dir.join(&depth_name), &depth).map_err(runtime)?;
        write_mask(&dir.join(format!("frame_{k:02}.cmsk")), &mask).map_err(runtime)?;
        if save_png {
            write_depth_png(&dir.join(format!("frame_{k:02}.png")), &depth).map_err(runtime)?;
        }
        record.observation_ref = Some(depth_name);

        match sim::execute_pick_place(
            &mut state,
            &env.template,
            record.pick_base,
            record.place_base,
            &env.sim_config,
        ) {
            Ok(_) => {}
            Err(sim::SimError::GraspMiss { .. }) => {}
            Err(e) => return Err(runtime(e)),
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub report_path: PathBuf,
    pub csv_path: Option<PathBuf>,
    pub thresholds_met: bool,
    pub compute_seconds: f64,
}

/// Runs the benchmark and writes the report (and optional CSV). Fails with
/// the threshold exit code when configured gates are not met.
pub fn cmd_eval(
    config: &RunConfig,
    csv: Option<&Path>,
) -> Result<(BenchmarkReport, EvalSummary), CliError> {
    let suite = config.suite()?;
    let prepared: Vec<PreparedTask> = match config.planner {
        PlannerChoice::Rule => prepare_suite_rule(&suite).map_err(runtime)?,
        PlannerChoice::Llm => {
            let client = config.llm_client()?;
            let prompt = config.prompt(PromptKind::Plan)?;
            suite
                .iter()
                .map(|task| {
                    let plan = plan_llm(&task.spec(), &client, &prompt).map_err(runtime)?;
                    Ok(PreparedTask { task: task.clone(), plan })
                })
                .collect::<Result<Vec<_>, CliError>>()?
        }
    };
    let grounding = resolve_grounding(config)?;
    let options = BenchmarkOptions {
        trials: config.trials,
        seed: config.seed,
        jobs: config.jobs,
        sim: config.sim.clone(),
        camera: config.camera(),
        spacing: config.spacing,
        ..BenchmarkOptions::default()
    };
    let (report, compute_seconds) =
        eval::run_benchmark(&prepared, grounding.as_ref(), &options).map_err(runtime)?;

    std::fs::create_dir_all(&config.out_dir).map_err(runtime)?;
    let report_path = config.report();
    std::fs::write(&report_path, report.to_json_pretty()).map_err(runtime)?;
    let csv_path = match csv {
        Some(path) => {
            std::fs::write(path, report.to_csv()).map_err(runtime)?;
            Some(path.to_path_buf())
        }
        None => None,
    };

    let thresholds_met = report.rows.iter().all(|row| {
        config.eval.min_success_rate.map_or(true, |t| row.success_rate >= t)
            && config.eval.min_miou.map_or(true, |t| row.mean_miou >= t)
            && config.eval.max_wrinkle_recall.map_or(true, |t| row.mean_wrinkle_recall <= t)
    });

    let summary = EvalSummary { report_path, csv_path, thresholds_met, compute_seconds };
    Ok((report, summary))
}

/// The part vocabulary, one label per line.
pub fn cmd_vocab(cloth_type: ClothType) -> Vec<String> {
    grammar::vocabulary(cloth_type).parts
}

#[derive(Debug, Serialize)]
pub struct RenderSummary {
    pub depth_path: PathBuf,
    pub mask_path: PathBuf,
    pub png_path: Option<PathBuf>,
}

/// Renders a flat cloth's depth and mask rasters (and optional PNG).
pub fn cmd_render(
    config: &RunConfig,
    cloth_type: ClothType,
    png: bool,
) -> Result<RenderSummary, CliError> {
    let env = task_env(config, cloth_type, None)?;
    let depth = env.render_depth().map_err(runtime)?;
    let mask = env.render_mask().map_err(runtime)?;
    let dir = config.out_dir.join("renders");
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    let depth_path = dir.join(format!("{}.cdpt", cloth_type.id()));
    let mask_path = dir.join(format!("{}.cmsk", cloth_type.id()));
    write_depth(&depth_path, &depth).map_err(runtime)?;
    write_mask(&mask_path, &mask).map_err(runtime)?;
    let png_path = if png {
        let path = dir.join(format!("{}.png", cloth_type.id()));
        write_depth_png(&path, &depth).map_err(runtime)?;
        Some(path)
    } else {
        None
    };
    Ok(RenderSummary { depth_path, mask_path, png_path })
}

// --- clap surface ---

#[derive(Parser, Debug)]
#[command(name = "clothskill", version, about = "Cloth folding skills at desk scale")]
pub struct Cli {
    /// JSON config file; CLI flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub suite: Option<PathBuf>,
    #[arg(long, global = true)]
    pub prompts_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub transcript_log: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub grounding: Option<GroundingChoice>,
    #[arg(long, global = true, value_enum)]
    pub planner: Option<PlannerChoice>,
    #[arg(long, global = true, value_enum)]
    pub decomposer: Option<DecomposerChoice>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scripted demonstrations for the seen tasks.
    DemoGen {
        #[arg(long)]
        demos_per_task: Option<usize>,
    },
    /// Decompose stored demonstrations into a skill dataset.
    Discover,
    /// Train the affordance model on the stored dataset.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Double the dataset with left/right-flipped copies.
        #[arg(long)]
        augment_flip: bool,
    },
    /// Print the plan for a task or an ad-hoc instruction.
    Plan {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        cloth: Option<String>,
    },
    /// Execute one task and write its trace and frames.
    Rollout {
        #[arg(long)]
        task: String,
        /// Also export PNG visualizations of each frame.
        #[arg(long)]
        save_frames: bool,
    },
    /// Run the benchmark suite and write the report.
    Eval {
        #[arg(long)]
        trials: Option<usize>,
        /// Also write a success-rate CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the part vocabulary of a cloth type.
    Vocab {
        #[arg(long)]
        cloth: String,
    },
    /// Render a flat cloth's depth and mask rasters.
    Render {
        #[arg(long)]
        cloth: String,
        /// Also export a 16-bit grayscale PNG.
        #[arg(long)]
        png: bool,
    },
}

fn apply_overrides(config: &mut RunConfig, overrides: &Overrides) {
    if let Some(v) = &overrides.out_dir {
        config.out_dir = v.clone();
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    if let Some(v) = overrides.jobs {
        config.jobs = v;
    }
    if let Some(v) = &overrides.suite {
        config.suite = Some(v.clone());
    }
    if let Some(v) = &overrides.prompts_dir {
        config.prompts_dir = Some(v.clone());
    }
    if let Some(v) = &overrides.transcript_log {
        config.transcript_log = Some(v.clone());
    }
    if let Some(v) = overrides.grounding {
        config.grounding = v;
    }
    if let Some(v) = overrides.planner {
        config.planner = v;
    }
    if let Some(v) = overrides.decomposer {
        config.decomposer = v;
    }
}

fn parse_cloth(name: &str) -> Result<ClothType, CliError> {
    ClothType::parse_name(name).map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut config, &cli.overrides);

    match cli.command {
        Command::DemoGen { demos_per_task } => {
            if let Some(n) = demos_per_task {
                config.demos_per_task = n;
            }
            let summary = cmd_demo_gen(&config)?;
            println!(
                "wrote {} demos to {}",
                summary.demo_count,
                summary.demos_dir.display()
            );
            for skip in &summary.skipped_tasks {
                eprintln!("skipped task: {skip}");
            }
            Ok(())
        }
        Command::Discover => {
            let summary = cmd_discover(&config)?;
            println!(
                "{} triples from {} demos ({} skipped); validation {}/{} demos pass; dataset at {}",
                summary.triple_count,
                summary.demo_count,
                summary.skipped.len(),
                summary.validation_passed,
                summary.validation_total,
                summary.dataset_dir.display()
            );
            for skip in &summary.skipped {
                eprintln!("skipped demo: {skip}");
            }
            Ok(())
        }
        Command::Train { epochs, resume, augment_flip } => {
            if let Some(n) = epochs {
                config.hyper.epochs = n;
            }
            if augment_flip {
                config.augment_flip = true;
            }
            let summary = cmd_train(&config, resume.as_deref())?;
            println!(
                "trained on {} samples for {} epochs: loss {:.4}, holdout acc {}; checkpoint {}",
                summary.sample_count,
                summary.epochs_run,
                summary.final_train_loss,
                summary
                    .final_holdout_acc
                    .map(|a| format!("{:.1}%", a * 100.0))
                    .unwrap_or_else(|| "n/a".to_string()),
                summary.checkpoint.display()
            );
            Ok(())
        }
        Command::Plan { task, instruction, cloth } => {
            let inst = match (&instruction, &cloth) {
                (Some(text), Some(cloth)) => Some((text.as_str(), parse_cloth(cloth)?)),
                (Some(_), None) => {
                    return Err(CliError::Config("--instruction needs --cloth".to_string()))
                }
                _ => None,
            };
            let lines = cmd_plan(&config, task.as_deref(), inst)?;
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Rollout { task, save_frames } => {
            let summary = cmd_rollout(&config, &task, save_frames)?;
            println!(
                "{}: {} (mean particle error {:.4} m, outcome {}); trace {}",
                summary.task,
                if summary.success { "success" } else { "failure" },
                summary.particle_error,
                summary.outcome,
                summary.trace_path.display()
            );
            Ok(())
        }
        Command::Eval { trials, csv } => {
            if let Some(n) = trials {
                config.trials = n;
            }
            let (report, summary) = cmd_eval(&config, csv.as_deref())?;
            for row in &report.rows {
                println!(
                    "{:<36} {} {:>5.1}%  err {:.4} m  miou {:.3}  wr {:.3}",
                    row.name,
                    if row.seen { "seen  " } else { "unseen" },
                    row.success_rate * 100.0,
                    row.mean_particle_error,
                    row.mean_miou,
                    row.mean_wrinkle_recall
                );
            }
            println!("report written to {}", summary.report_path.display());
            if !summary.thresholds_met {
                return Err(CliError::ThresholdsNotMet);
            }
            Ok(())
        }
        Command::Vocab { cloth } => {
            for part in cmd_vocab(parse_cloth(&cloth)?) {
                println!("{part}");
            }
            Ok(())
        }
        Command::Render { cloth, png } => {
            let summary = cmd_render(&config, parse_cloth(&cloth)?, png)?;
            println!("wrote {} and {}", summary.depth_path.display(), summary.mask_path.display());
            if let Some(p) = summary.png_path {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
