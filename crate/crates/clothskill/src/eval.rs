//! Benchmark metrics and the task-suite runner.
//!
//! Success compares the policy's settled state against a scripted oracle
//! rollout of the same plan from the same initial placement: mean particle
//! error within one particle spacing (0.025 m). Mask IoU and wrinkle recall
//! mirror the real-protocol checks (thresholds 0.8 and 0.35).

use std::time::Instant;

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{execute_plan, scripted_rollout, Env, ExecError, Grounding};
use crate::fnv1a;
use crate::grammar::ClothType;
use crate::planner::{plan_for_task, BenchmarkTask, PlanError, TaskPlan};
use crate::sim::{self, ClothState, DepthImage, Mask, SimConfig, SimError};
use crate::CameraModel;

/// Success threshold: one particle spacing.
pub const SUCCESS_THRESHOLD: f64 = 0.025;
/// Mask-overlap threshold of the real-protocol check.
pub const MIOU_MIN: f64 = 0.8;
/// Wrinkle-recall threshold of the real-protocol check.
pub const WR_MAX: f64 = 0.35;
/// Depth-gradient magnitude (m/px) above which a pixel counts as a wrinkle
/// or edge.
pub const WRINKLE_TAU: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("report io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean-particle-error success check. Returns the verdict and the error
/// value itself.
pub fn success(
    final_state: &ClothState,
    oracle_state: &ClothState,
    threshold: f64,
) -> (bool, f64) {
    let error = final_state.mean_distance(oracle_state);
    (error <= threshold, error)
}

/// Intersection over union of two masks; 1.0 when both are empty.
pub fn miou(a: &Mask, b: &Mask) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "mask dimensions differ");
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&pa, &pb) in a.data.iter().zip(&b.data) {
        if pa && pb {
            intersection += 1;
        }
        if pa || pb {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Fraction of mask-interior pixels whose central-difference depth-gradient
/// magnitude exceeds `tau`. The interior erodes the mask by one pixel
/// (4-neighborhood) and excludes the image border. An empty interior yields
/// 0 with the warning flag set.
pub fn wrinkle_recall(depth: &DepthImage, mask: &Mask, tau: f64) -> (f64, bool) {
    assert_eq!((depth.width, depth.height), (mask.width, mask.height));
    let (w, h) = (depth.width, depth.height);
    let mut interior = 0usize;
    let mut wrinkled = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let in_interior = mask.at(x, y)
                && mask.at(x - 1, y)
                && mask.at(x + 1, y)
                && mask.at(x, y - 1)
                && mask.at(x, y + 1);
            if !in_interior {
                continue;
            }
            interior += 1;
            let gx = (depth.at(x + 1, y) as f64 - depth.at(x - 1, y) as f64) / 2.0;
            let gy = (depth.at(x, y + 1) as f64 - depth.at(x, y - 1) as f64) / 2.0;
            if (gx * gx + gy * gy).sqrt() > tau {
                wrinkled += 1;
            }
        }
    }
    if interior == 0 {
        (0.0, true)
    } else {
        (wrinkled as f64 / interior as f64, false)
    }
}

/// The oracle state for a plan: scripted, error-free execution from the
/// given environment's current placement. An empty plan returns the initial
/// state.
pub fn make_oracle_state(plan: &TaskPlan, env: &Env) -> Result<ClothState, EvalError> {
    let mut oracle_env = env.clone();
    scripted_rollout(plan, &mut oracle_env)?;
    Ok(oracle_env.state)
}

/// A benchmark task with its plan already resolved.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: BenchmarkTask,
    pub plan: TaskPlan,
}

/// Resolves every task's plan through the rule planner (or its explicit
/// oracle plan).
pub fn prepare_suite_rule(suite: &[BenchmarkTask]) -> Result<Vec<PreparedTask>, PlanError> {
    suite
        .iter()
        .map(|task| Ok(PreparedTask { task: task.clone(), plan: plan_for_task(task)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads for trial parallelism; results are identical for any
    /// value.
    pub jobs: usize,
    pub success_threshold: f64,
    pub wrinkle_tau: f64,
    /// Initial-placement jitter: translation bound (m) per axis and
    /// rotation bound (radians).
    pub jitter_translation: f64,
    pub jitter_rotation: f64,
    pub sim: SimConfig,
    pub camera: CameraModel,
    pub spacing: f64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            trials: 50,
            seed: 0,
            jobs: 1,
            success_threshold: SUCCESS_THRESHOLD,
            wrinkle_tau: WRINKLE_TAU,
            jitter_translation: 0.02,
            jitter_rotation: 10.0_f64.to_radians(),
            sim: SimConfig::default(),
            camera: CameraModel::default_benchmark(),
            spacing: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub name: String,
    pub cloth_type: ClothType,
    pub seen: bool,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_particle_error: f64,
    pub mean_miou: f64,
    pub mean_wrinkle_recall: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<TaskRow>,
    pub trials_per_task: usize,
    pub seed: u64,
    pub grounding: String,
    pub success_threshold: f64,
    pub wrinkle_tau: f64,
}

impl BenchmarkReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Success-rate table, one row per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,cloth,seen,success_rate\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                row.name,
                row.cloth_type.id(),
                row.seen,
                row.success_rate
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct TrialResult {
    success: bool,
    particle_error: f64,
    miou: f64,
    wrinkle: f64,
    diverged: bool,
    compute_seconds: f64,
}

fn trial_seed(seed: u64, task_index: usize, trial: usize) -> u64 {
    let mut bytes = Vec::with_capacity(24);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&(task_index as u64).to_le_bytes());
    bytes.extend_from_slice(&(trial as u64).to_le_bytes());
    fnv1a(&bytes)
}

fn run_trial(
    prepared: &PreparedTask,
    task_index: usize,
    trial: usize,
    grounding: &dyn Grounding,
    options: &BenchmarkOptions,
) -> Result<TrialResult, EvalError> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(options.seed, task_index, trial));
    let tx = rng.random_range(-options.jitter_translation..options.jitter_translation);
    let ty = rng.random_range(-options.jitter_translation..options.jitter_translation);
    let rot = rng.random_range(-options.jitter_rotation..options.jitter_rotation);

    let (w, h) = sim::default_dims(prepared.task.cloth_type);
    let template = sim::make_template(prepared.task.cloth_type, w, h, options.spacing)?;
    let mut env = Env::with_placement(
        template,
        options.sim.clone(),
        options.camera.clone(),
        rot,
        DVec3::new(tx, ty, 0.0),
    );

    let oracle_state = make_oracle_state(&prepared.plan, &env)?;
    let mut oracle_env = env.clone();
    oracle_env.state = oracle_state.clone();

    let trace = execute_plan(&prepared.plan, &mut env, grounding)?;
    let diverged = matches!(trace.outcome, crate::executor::Outcome::Diverged(_));

    let (ok, particle_error) = success(&env.state, &oracle_state, options.success_threshold);
    let policy_mask = env.render_mask()?;
    let oracle_mask = oracle_env.render_mask()?;
    let overlap = miou(&policy_mask, &oracle_mask);
    let depth = env.render_depth()?;
    let (wrinkle, _) = wrinkle_recall(&depth, &policy_mask, options.wrinkle_tau);

    Ok(TrialResult {
        success: ok && !diverged,
        particle_error,
        miou: overlap,
        wrinkle,
        diverged,
        compute_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs every task for the configured number of jittered trials and
/// aggregates per-task rows. Returns the report plus the summed per-trial
/// compute time (the single-core cost, regardless of `jobs`).
pub fn run_benchmark(
    tasks: &[PreparedTask],
    grounding: &dyn Grounding,
    options: &BenchmarkOptions,
) -> Result<(BenchmarkReport, f64), EvalError> {
    let mut jobs_results: Vec<Vec<TrialResult>> = Vec::with_capacity(tasks.len());

    if options.jobs <= 1 {
        for (task_index, prepared) in tasks.iter().enumerate() {
            let mut results = Vec::with_capacity(options.trials);
            for trial in 0..options.trials {
                results.push(run_trial(prepared, task_index, trial, grounding, options)?);
            }
            jobs_results.push(results);
        }
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .expect("thread pool builds");
        let flat: Vec<(usize, usize)> = (0..tasks.len())
            .flat_map(|t| (0..options.trials).map(move |k| (t, k)))
            .collect();
        let outcomes: Vec<Result<TrialResult, EvalError>> = pool.install(|| {
            flat.par_iter()
                .map(|&(task_index, trial)| {
                    run_trial(&tasks[task_index], task_index, trial, grounding, options)
                })
                .collect()
        });
        let mut iter = outcomes.into_iter();
        for _ in 0..tasks.len() {
            let mut results = Vec::with_capacity(options.trials);
            for _ in 0..options.trials {
                results.push(iter.next().expect("one outcome per trial")?);
            }
            jobs_results.push(results);
        }
    }

    let mut compute_seconds = 0.0;
    let mut rows = Vec::with_capacity(tasks.len());
    for (prepared, results) in tasks.iter().zip(&jobs_results) {
        let trials = results.len();
        let successes = results.iter().filter(|r| r.success).count();
        let diverged = results.iter().filter(|r| r.diverged).count();
        let mean = |f: &dyn Fn(&TrialResult) -> f64| -> f64 {
            if trials == 0 {
                0.0
            } else {
                results.iter().map(|r| f(r)).sum::<f64>() / trials as f64
            }
        };
        compute_seconds += results.iter().map(|r| r.compute_seconds).sum::<f64>();
        rows.push(TaskRow {
            name: prepared.task.name.clone(),
            cloth_type: prepared.task.cloth_type,
            seen: prepared.task.seen,
            trials,
            successes,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            mean_particle_error: mean(&|r| r.particle_error),
            mean_miou: mean(&|r| r.miou),
            mean_wrinkle_recall: mean(&|r| r.wrinkle),
            diverged,
        });
    }

    let report = BenchmarkReport {
        rows,
        trials_per_task: options.trials,
        seed: options.seed,
        grounding: grounding.name().to_string(),
        success_threshold: options.success_threshold,
        wrinkle_tau: options.wrinkle_tau,
    };
    Ok((report, compute_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{default_env, OracleGrounding};
    use crate::planner::{default_suite, plan_rule, TaskSpec};

    #[test]
    fn success_of_identical_states_is_exact() {
        let env = default_env(ClothType::Square).unwrap();
        let (ok, err) = success(&env.state, &env.state.clone(), SUCCESS_THRESHOLD);
        assert!(ok);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn uniform_offset_beyond_threshold_fails() {
        let env = default_env(ClothType::Square).unwrap();
        let mut shifted = env.state.clone();
        for p in &mut shifted.positions {
            p.x += 0.03;
        }
        let (ok, err) = success(&shifted, &env.state, SUCCESS_THRESHOLD);
        assert!(!ok);
        assert!((err - 0.03).abs() < 1e-12);
    }

    #[test]
    fn success_is_monotone_in_threshold() {
        let env = default_env(ClothType::Square).unwrap();
        let mut shifted = env.state.clone();
        for p in &mut shifted.positions {
            p.x += 0.02;
        }
        let thresholds = [0.005, 0.01, 0.02, 0.025, 0.05];
        let verdicts: Vec<bool> =
            thresholds.iter().map(|&t| success(&shifted, &env.state, t).0).collect();
        for pair in verdicts.windows(2) {
            assert!(!pair[0] || pair[1], "success must be monotone in the threshold");
        }
    }

    #[test]
    fn miou_identities() {
        let mut a = Mask::new(8, 8);
        a.set(1, 1, true);
        a.set(2, 1, true);
        assert_eq!(miou(&a, &a), 1.0);

        let mut b = Mask::new(8, 8);
        b.set(5, 5, true);
        assert_eq!(miou(&a, &b), 0.0);

        let empty = Mask::new(8, 8);
        assert_eq!(miou(&empty, &empty), 1.0);
    }

    #[test]
    fn miou_shifted_block_is_one_third() {
        // A 2x2 block against itself shifted one pixel: overlap 2, union 6.
        let mut a = Mask::new(8, 8);
        let mut b = Mask::new(8, 8);
        for y in 1..3 {
            for x in 1..3 {
                a.set(x, y, true);
                b.set(x + 1, y, true);
            }
        }
        let v = miou(&a, &b);
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(miou(&a, &b), miou(&b, &a));
    }

    #[test]
    fn wrinkle_recall_flat_region_is_zero() {
        let depth = DepthImage::new(16, 16, 1.0);
        let mut mask = Mask::new(16, 16);
        for y in 2..14 {
            for x in 2..14 {
                mask.set(x, y, true);
            }
        }
        let (wr, warned) = wrinkle_recall(&depth, &mask, WRINKLE_TAU);
        assert_eq!(wr, 0.0);
        assert!(!warned);
    }

    #[test]
    fn wrinkle_recall_counts_the_spike_stencil_exactly() {
        let mut depth = DepthImage::new(16, 16, 1.0);
        depth.set(8, 8, 1.05);
        let mut mask = Mask::new(16, 16);
        for y in 2..14 {
            for x in 2..14 {
                mask.set(x, y, true);
            }
        }
        // Interior is the mask eroded by one pixel: a 10x10 block. Central
        // differences flag exactly the spike's 4 neighbors; the spike pixel
        // itself is symmetric and the diagonals see no gradient.
        let (wr, _) = wrinkle_recall(&depth, &mask, WRINKLE_TAU);
        assert!((wr - 4.0 / 100.0).abs() < 1e-12, "wr = {wr}");
    }

    #[test]
    fn wrinkle_recall_with_infinite_tau_is_zero() {
        let mut depth = DepthImage::new(16, 16, 1.0);
        depth.set(8, 8, 0.5);
        let mut mask = Mask::new(16, 16);
        for y in 2..14 {
            for x in 2..14 {
                mask.set(x, y, true);
            }
        }
        assert_eq!(wrinkle_recall(&depth, &mask, f64::INFINITY).0, 0.0);
    }

    #[test]
    fn wrinkle_recall_ignores_constant_depth_offsets() {
        let mut depth = DepthImage::new(16, 16, 1.0);
        depth.set(7, 7, 1.02);
        depth.set(10, 9, 0.97);
        let mut mask = Mask::new(16, 16);
        for y in 2..14 {
            for x in 2..14 {
                mask.set(x, y, true);
            }
        }
        let (wr_a, _) = wrinkle_recall(&depth, &mask, WRINKLE_TAU);
        let mut offset = depth.clone();
        for v in &mut offset.data {
            *v += 0.25;
        }
        let (wr_b, _) = wrinkle_recall(&offset, &mask, WRINKLE_TAU);
        assert_eq!(wr_a, wr_b);
    }

    #[test]
    fn empty_interior_warns() {
        let depth = DepthImage::new(8, 8, 1.0);
        let mask = Mask::new(8, 8);
        let (wr, warned) = wrinkle_recall(&depth, &mask, WRINKLE_TAU);
        assert_eq!(wr, 0.0);
        assert!(warned);
    }

    #[test]
    fn oracle_state_of_empty_plan_is_the_initial_state() {
        let env = default_env(ClothType::Square).unwrap();
        let state = make_oracle_state(&TaskPlan { steps: vec![] }, &env).unwrap();
        assert_eq!(state, env.state);
    }

    #[test]
    fn oracle_state_is_deterministic() {
        let env = default_env(ClothType::Trousers).unwrap();
        let plan = plan_rule(&TaskSpec {
            long_instruction: "fold the trousers from left to right".into(),
            cloth_type: ClothType::Trousers,
        })
        .unwrap();
        let a = make_oracle_state(&plan, &env).unwrap();
        let b = make_oracle_state(&plan, &env).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_fold_oracle_mirrors_the_left_half() {
        // The fold lands slightly short of a perfect mirror (the trailing
        // edge sticks to the ground), so the check is: mirrored to within
        // about one particle spacing on average, and nearly everywhere
        // within two. A non-fold would sit an order of magnitude off.
        let env = default_env(ClothType::Square).unwrap();
        let plan = plan_rule(&TaskSpec {
            long_instruction: "fold the square from left to right".into(),
            cloth_type: ClothType::Square,
        })
        .unwrap();
        let oracle = make_oracle_state(&plan, &env).unwrap();
        let rest = &env.template.rest_positions;
        let errors: Vec<f64> = rest
            .iter()
            .enumerate()
            .filter(|(_, r)| r.x < -1e-9)
            .map(|(i, r)| (oracle.positions[i].x - (-r.x)).abs())
            .collect();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let within_two = errors.iter().filter(|e| **e <= 2.0 * 0.025).count();
        assert!(mean <= 0.03, "mean mirror error {mean:.4} m");
        assert!(
            within_two as f64 / errors.len() as f64 >= 0.9,
            "only {within_two}/{} particles within two spacings",
            errors.len()
        );
    }

    #[test]
    fn zero_trials_produce_a_valid_empty_report() {
        let suite = default_suite();
        let prepared = prepare_suite_rule(&suite[..2]).unwrap();
        let options = BenchmarkOptions { trials: 0, ..BenchmarkOptions::default() };
        let (report, _) = run_benchmark(&prepared, &OracleGrounding, &options).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.trials == 0 && r.successes == 0));
        // The report still serializes and carries its config.
        assert!(report.to_json_pretty().contains("success_threshold"));
    }

    #[test]
    fn same_seed_reproduces_the_report_regardless_of_jobs() {
        let suite = default_suite();
        // Two cheap tasks keep this test quick.
        let subset: Vec<_> = suite
            .into_iter()
            .filter(|t| t.name == "square-one-corner" || t.name == "trousers-left-to-right")
            .collect();
        let prepared = prepare_suite_rule(&subset).unwrap();
        let options = BenchmarkOptions { trials: 2, seed: 11, ..BenchmarkOptions::default() };
        let (report_a, _) = run_benchmark(&prepared, &OracleGrounding, &options).unwrap();
        let (report_b, _) = run_benchmark(&prepared, &OracleGrounding, &options).unwrap();
        assert_eq!(report_a, report_b);
        let parallel = BenchmarkOptions { jobs: 4, ..options };
        let (report_c, _) = run_benchmark(&prepared, &OracleGrounding, &parallel).unwrap();
        assert_eq!(report_a, report_c);
    }

    #[test]
    fn csv_has_one_row_per_task() {
        let suite = default_suite();
        let prepared = prepare_suite_rule(&suite[..3]).unwrap();
        let options = BenchmarkOptions { trials: 0, ..BenchmarkOptions::default() };
        let (report, _) = run_benchmark(&prepared, &OracleGrounding, &options).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("task,cloth,seen,success_rate"));
    }
}
