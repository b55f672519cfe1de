//! C ABI for the clothskill library.
//!
//! Handles are opaque pointers created and destroyed by this layer; every
//! function returns a [`CskStatus`] and never panics across the boundary.
//! String outputs use caller-provided buffers: the required size (including
//! the NUL terminator) is always written to `out_len`, and
//! `CSK_STATUS_BUFFER_TOO_SMALL` signals that nothing was copied. The
//! corresponding C header is generated into `include/clothskill.h` at build
//! time.
//!
//! On any non-OK status, `csk_last_error` returns a human-readable message
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use clothskill::executor::{self, Env};
use clothskill::grammar::{self, ActionKind, ClothType};
use clothskill::model::{self, ModelConfig, TensorMap, Tokenizer};
use clothskill::planner::{plan_rule, TaskSpec};
use clothskill::sim::{self, SimConfig, SimError};
use clothskill::CameraModel;
use clothskill::glam::DVec3;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CskStatus {
    Ok = 0,
    NullArgument = -1,
    InvalidUtf8 = -2,
    InvalidArgument = -3,
    GraspMiss = -4,
    SimulationDiverged = -5,
    ParseError = -6,
    PlanError = -7,
    IoError = -8,
    BufferTooSmall = -9,
    Internal = -99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message.replace('\0', " ")).unwrap_or_default();
    });
}

fn fail(status: CskStatus, message: impl Into<String>) -> CskStatus {
    set_error(message);
    status
}

/// A simulation environment: template, state, physics, and camera.
pub struct CskEnv {
    env: Env,
}

/// A loaded affordance model checkpoint.
pub struct CskModel {
    params: TensorMap,
    config: ModelConfig,
    tokenizer: Tokenizer,
}

const VERSION: &[u8] = b"0.1.0\0";

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csk_version() -> *const c_char {
    VERSION.as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated) and returns the required buffer size including the
/// terminator. With a null or too-small buffer nothing is copied.
#[no_mangle]
pub extern "C" fn csk_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && cap >= bytes.len() {
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
            }
        }
        bytes.len()
    })
}

unsafe fn parse_c_str<'a>(ptr: *const c_char) -> Result<&'a str, CskStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(CskStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CskStatus::InvalidUtf8
    })
}

unsafe fn parse_cloth(ptr: *const c_char) -> Result<ClothType, CskStatus> {
    let name = parse_c_str(ptr)?;
    ClothType::parse_name(name).map_err(|e| {
        set_error(e.to_string());
        CskStatus::InvalidArgument
    })
}

fn write_string(text: &str, buf: *mut c_char, cap: usize, out_len: *mut usize) -> CskStatus {
    let c = match CString::new(text) {
        Ok(c) => c,
        Err(_) => return fail(CskStatus::Internal, "output contained a NUL byte"),
    };
    let bytes = c.as_bytes_with_nul();
    if !out_len.is_null() {
        unsafe { *out_len = bytes.len() };
    }
    if buf.is_null() || cap < bytes.len() {
        return fail(
            CskStatus::BufferTooSmall,
            format!("buffer of {cap} bytes cannot hold {} bytes", bytes.len()),
        );
    }
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    }
    CskStatus::Ok
}

fn map_sim_error(err: &SimError) -> CskStatus {
    match err {
        SimError::GraspMiss { .. } => CskStatus::GraspMiss,
        SimError::SimulationDiverged { .. } => CskStatus::SimulationDiverged,
        _ => CskStatus::InvalidArgument,
    }
}

/// Creates an environment for a cloth type. Passing 0 for any dimension
/// selects the default size and spacing (0.025 m).
#[no_mangle]
pub extern "C" fn csk_env_new(
    cloth_type: *const c_char,
    width_m: f64,
    height_m: f64,
    spacing_m: f64,
    out_env: *mut *mut CskEnv,
) -> CskStatus {
    if out_env.is_null() {
        return fail(CskStatus::NullArgument, "out_env is null");
    }
    let ct = match unsafe { parse_cloth(cloth_type) } {
        Ok(ct) => ct,
        Err(status) => return status,
    };
    let (default_w, default_h) = sim::default_dims(ct);
    let w = if width_m > 0.0 { width_m } else { default_w };
    let h = if height_m > 0.0 { height_m } else { default_h };
    let spacing = if spacing_m > 0.0 { spacing_m } else { 0.025 };
    let template = match sim::make_template(ct, w, h, spacing) {
        Ok(t) => t,
        Err(e) => return fail(map_sim_error(&e), e.to_string()),
    };
    let env = Env::new(template, SimConfig::default(), CameraModel::default_benchmark());
    unsafe {
        *out_env = Box::into_raw(Box::new(CskEnv { env }));
    }
    CskStatus::Ok
}

/// Frees an environment handle. A null handle is a no-op.
#[no_mangle]
pub extern "C" fn csk_env_free(env: *mut CskEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

unsafe fn env_ref<'a>(env: *mut CskEnv) -> Result<&'a mut CskEnv, CskStatus> {
    if env.is_null() {
        set_error("null environment handle");
        return Err(CskStatus::NullArgument);
    }
    Ok(&mut *env)
}

/// Resets the cloth to a flat placement: rotation about its centroid, then
/// translation.
#[no_mangle]
pub extern "C" fn csk_env_place(env: *mut CskEnv, rotation_z: f64, tx: f64, ty: f64) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let e = &handle.env;
    handle.env = Env::with_placement(
        e.template.clone(),
        e.sim_config.clone(),
        e.camera.clone(),
        rotation_z,
        DVec3::new(tx, ty, 0.0),
    );
    CskStatus::Ok
}

#[no_mangle]
pub extern "C" fn csk_env_particle_count(env: *mut CskEnv, out_count: *mut usize) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    if out_count.is_null() {
        return fail(CskStatus::NullArgument, "out_count is null");
    }
    unsafe { *out_count = handle.env.template.particle_count() };
    CskStatus::Ok
}

/// Copies particle positions as x,y,z triples; `cap` counts f64 values.
#[no_mangle]
pub extern "C" fn csk_env_positions(env: *mut CskEnv, out: *mut f64, cap: usize) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let needed = handle.env.state.positions.len() * 3;
    if out.is_null() || cap < needed {
        return fail(CskStatus::BufferTooSmall, format!("need {needed} f64 values, have {cap}"));
    }
    for (i, p) in handle.env.state.positions.iter().enumerate() {
        unsafe {
            *out.add(3 * i) = p.x;
            *out.add(3 * i + 1) = p.y;
            *out.add(3 * i + 2) = p.z;
        }
    }
    CskStatus::Ok
}

/// Current world position of a named part's particle.
#[no_mangle]
pub extern "C" fn csk_env_keypoint(
    env: *mut CskEnv,
    part: *const c_char,
    out_xyz: *mut f64,
) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let part = match unsafe { parse_c_str(part) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    if out_xyz.is_null() {
        return fail(CskStatus::NullArgument, "out_xyz is null");
    }
    match handle.env.template.keypoint_index(part) {
        Some(idx) => {
            let p = handle.env.state.positions[idx];
            unsafe {
                *out_xyz = p.x;
                *out_xyz.add(1) = p.y;
                *out_xyz.add(2) = p.z;
            }
            CskStatus::Ok
        }
        None => fail(CskStatus::InvalidArgument, format!("no keypoint named {part:?}")),
    }
}

/// Runs one pick-and-place (world coordinates) and settles.
#[no_mangle]
pub extern "C" fn csk_env_pick_place(
    env: *mut CskEnv,
    pick_x: f64,
    pick_y: f64,
    pick_z: f64,
    place_x: f64,
    place_y: f64,
    place_z: f64,
) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let env = &mut handle.env;
    match sim::execute_pick_place(
        &mut env.state,
        &env.template,
        DVec3::new(pick_x, pick_y, pick_z),
        DVec3::new(place_x, place_y, place_z),
        &env.sim_config,
    ) {
        Ok(_) => CskStatus::Ok,
        Err(e) => fail(map_sim_error(&e), e.to_string()),
    }
}

/// Steps until the cloth's kinetic energy falls below the settle threshold.
#[no_mangle]
pub extern "C" fn csk_env_settle(env: *mut CskEnv) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let env = &mut handle.env;
    match sim::settle(&mut env.state, &env.template, &env.sim_config) {
        Ok(_) => CskStatus::Ok,
        Err(e) => fail(map_sim_error(&e), e.to_string()),
    }
}

/// Renders the depth image; `cap` counts f32 values. Width and height are
/// always reported.
#[no_mangle]
pub extern "C" fn csk_env_render_depth(
    env: *mut CskEnv,
    out: *mut f32,
    cap: usize,
    out_width: *mut u32,
    out_height: *mut u32,
) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let image = match handle.env.render_depth() {
        Ok(img) => img,
        Err(e) => return fail(map_sim_error(&e), e.to_string()),
    };
    if !out_width.is_null() {
        unsafe { *out_width = image.width };
    }
    if !out_height.is_null() {
        unsafe { *out_height = image.height };
    }
    let needed = image.data.len();
    if out.is_null() || cap < needed {
        return fail(CskStatus::BufferTooSmall, format!("need {needed} f32 values, have {cap}"));
    }
    unsafe {
        std::ptr::copy_nonoverlapping(image.data.as_ptr(), out, needed);
    }
    CskStatus::Ok
}

/// Renders the coverage mask as 0/1 bytes; `cap` counts bytes.
#[no_mangle]
pub extern "C" fn csk_env_render_mask(
    env: *mut CskEnv,
    out: *mut u8,
    cap: usize,
    out_width: *mut u32,
    out_height: *mut u32,
) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let mask = match handle.env.render_mask() {
        Ok(m) => m,
        Err(e) => return fail(map_sim_error(&e), e.to_string()),
    };
    if !out_width.is_null() {
        unsafe { *out_width = mask.width };
    }
    if !out_height.is_null() {
        unsafe { *out_height = mask.height };
    }
    let needed = mask.data.len();
    if out.is_null() || cap < needed {
        return fail(CskStatus::BufferTooSmall, format!("need {needed} bytes, have {cap}"));
    }
    for (i, &bit) in mask.data.iter().enumerate() {
        unsafe { *out.add(i) = bit as u8 };
    }
    CskStatus::Ok
}

/// Parses a basic instruction. `out_kind` receives 0 for pick, 1 for
/// place; the part label goes to `part_buf`.
#[no_mangle]
pub extern "C" fn csk_parse_instruction(
    text: *const c_char,
    cloth_type: *const c_char,
    out_kind: *mut i32,
    part_buf: *mut c_char,
    part_cap: usize,
    out_len: *mut usize,
) -> CskStatus {
    let text = match unsafe { parse_c_str(text) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let ct = match unsafe { parse_cloth(cloth_type) } {
        Ok(ct) => ct,
        Err(status) => return status,
    };
    match grammar::parse_instruction(text, ct) {
        Ok(inst) => {
            if !out_kind.is_null() {
                unsafe {
                    *out_kind = match inst.kind {
                        ActionKind::Pick => 0,
                        ActionKind::Place => 1,
                    };
                }
            }
            write_string(&inst.part, part_buf, part_cap, out_len)
        }
        Err(e) => fail(CskStatus::ParseError, e.to_string()),
    }
}

/// Plans a folding task with the rule planner; the steps are written
/// newline-separated.
#[no_mangle]
pub extern "C" fn csk_plan_rule(
    instruction: *const c_char,
    cloth_type: *const c_char,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> CskStatus {
    let text = match unsafe { parse_c_str(instruction) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let ct = match unsafe { parse_cloth(cloth_type) } {
        Ok(ct) => ct,
        Err(status) => return status,
    };
    match plan_rule(&TaskSpec { long_instruction: text.to_string(), cloth_type: ct }) {
        Ok(plan) => {
            let lines: Vec<String> = plan.steps.iter().map(grammar::render_instruction).collect();
            write_string(&lines.join("\n"), buf, cap, out_len)
        }
        Err(e) => fail(CskStatus::PlanError, e.to_string()),
    }
}

/// The part vocabulary of a cloth type, newline-separated.
#[no_mangle]
pub extern "C" fn csk_vocab(
    cloth_type: *const c_char,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> CskStatus {
    let ct = match unsafe { parse_cloth(cloth_type) } {
        Ok(ct) => ct,
        Err(status) => return status,
    };
    let parts = grammar::vocabulary(ct).parts.join("\n");
    write_string(&parts, buf, cap, out_len)
}

/// Geometric reference grounding: the pixel of the instruction's keypoint
/// in the environment's camera.
#[no_mangle]
pub extern "C" fn csk_oracle_predict(
    env: *mut CskEnv,
    instruction: *const c_char,
    out_px: *mut u32,
    out_py: *mut u32,
) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let text = match unsafe { parse_c_str(instruction) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let e = &handle.env;
    let inst = match grammar::parse_instruction(text, e.template.cloth_type) {
        Ok(i) => i,
        Err(err) => return fail(CskStatus::ParseError, err.to_string()),
    };
    match model::oracle_predict(&e.state, &e.template, &e.rest_world, &inst, &e.camera) {
        Ok((px, py)) => {
            if !out_px.is_null() {
                unsafe { *out_px = px };
            }
            if !out_py.is_null() {
                unsafe { *out_py = py };
            }
            CskStatus::Ok
        }
        Err(err) => fail(CskStatus::InvalidArgument, err.to_string()),
    }
}

/// Loads an affordance model checkpoint.
#[no_mangle]
pub extern "C" fn csk_model_load(path: *const c_char, out_model: *mut *mut CskModel) -> CskStatus {
    if out_model.is_null() {
        return fail(CskStatus::NullArgument, "out_model is null");
    }
    let path = match unsafe { parse_c_str(path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    match model::read_checkpoint(Path::new(path)) {
        Ok((config, state)) => {
            let model = CskModel { params: state.params, config, tokenizer: Tokenizer::from_grammar() };
            unsafe { *out_model = Box::into_raw(Box::new(model)) };
            CskStatus::Ok
        }
        Err(e) => fail(CskStatus::IoError, e.to_string()),
    }
}

/// Frees a model handle. A null handle is a no-op.
#[no_mangle]
pub extern "C" fn csk_model_free(model: *mut CskModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Predicts the pick/place pixel for an instruction against the
/// environment's current rendered observation.
#[no_mangle]
pub extern "C" fn csk_model_predict(
    model: *mut CskModel,
    env: *mut CskEnv,
    instruction: *const c_char,
    out_px: *mut u32,
    out_py: *mut u32,
) -> CskStatus {
    if model.is_null() {
        return fail(CskStatus::NullArgument, "null model handle");
    }
    let model = unsafe { &*model };
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let text = match unsafe { parse_c_str(instruction) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let observation = match handle.env.render_depth() {
        Ok(img) => img,
        Err(e) => return fail(map_sim_error(&e), e.to_string()),
    };
    let tokens = model.tokenizer.encode(text, model.config.max_text_len);
    match model::predict_point(&model.params, &model.config, &observation, &tokens) {
        Ok((px, py)) => {
            if !out_px.is_null() {
                unsafe { *out_px = px };
            }
            if !out_py.is_null() {
                unsafe { *out_py = py };
            }
            CskStatus::Ok
        }
        Err(e) => fail(CskStatus::InvalidArgument, e.to_string()),
    }
}

/// Executes the rule plan for a task instruction in the environment using
/// the oracle grounding, returning after the final settle.
#[no_mangle]
pub extern "C" fn csk_env_run_task(env: *mut CskEnv, instruction: *const c_char) -> CskStatus {
    let handle = match unsafe { env_ref(env) } {
        Ok(h) => h,
        Err(status) => return status,
    };
    let text = match unsafe { parse_c_str(instruction) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let task = TaskSpec {
        long_instruction: text.to_string(),
        cloth_type: handle.env.template.cloth_type,
    };
    let plan = match plan_rule(&task) {
        Ok(p) => p,
        Err(e) => return fail(CskStatus::PlanError, e.to_string()),
    };
    match executor::execute_plan(&plan, &mut handle.env, &executor::OracleGrounding) {
        Ok(trace) => match trace.outcome {
            executor::Outcome::Completed => CskStatus::Ok,
            executor::Outcome::Diverged(pair) => {
                fail(CskStatus::SimulationDiverged, format!("diverged at pair {pair}"))
            }
        },
        Err(e) => fail(CskStatus::Internal, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(csk_version()) };
        assert_eq!(v.to_str().unwrap(), "0.1.0");
    }

    #[test]
    fn env_lifecycle_and_queries() {
        let mut env: *mut CskEnv = std::ptr::null_mut();
        let status = csk_env_new(c("square").as_ptr(), 0.0, 0.0, 0.0, &mut env);
        assert_eq!(status, CskStatus::Ok);
        assert!(!env.is_null());

        let mut count = 0usize;
        assert_eq!(csk_env_particle_count(env, &mut count), CskStatus::Ok);
        assert_eq!(count, 225);

        let mut positions = vec![0.0f64; count * 3];
        assert_eq!(csk_env_positions(env, positions.as_mut_ptr(), positions.len()), CskStatus::Ok);
        assert!(positions.iter().all(|v| v.is_finite()));

        let mut xyz = [0.0f64; 3];
        assert_eq!(
            csk_env_keypoint(env, c("bottom left corner").as_ptr(), xyz.as_mut_ptr()),
            CskStatus::Ok
        );
        assert!((xyz[0] + 0.175).abs() < 1e-12);

        csk_env_free(env);
    }

    #[test]
    fn unknown_cloth_is_invalid_argument_with_message() {
        let mut env: *mut CskEnv = std::ptr::null_mut();
        let status = csk_env_new(c("tablecloth").as_ptr(), 0.0, 0.0, 0.0, &mut env);
        assert_eq!(status, CskStatus::InvalidArgument);
        let needed = csk_last_error(std::ptr::null_mut(), 0);
        let mut buf = vec![0 as c_char; needed];
        csk_last_error(buf.as_mut_ptr(), buf.len());
        let message = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(message.contains("tablecloth"), "{message}");
    }

    #[test]
    fn pick_place_moves_the_cloth_and_misses_are_typed() {
        let mut env: *mut CskEnv = std::ptr::null_mut();
        csk_env_new(c("square").as_ptr(), 0.0, 0.0, 0.0, &mut env);

        // A grasp far off the cloth reports a miss.
        let miss = csk_env_pick_place(env, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(miss, CskStatus::GraspMiss);

        // Fold the left edge onto the right edge.
        let mut left = [0.0f64; 3];
        let mut right = [0.0f64; 3];
        csk_env_keypoint(env, c("left edge").as_ptr(), left.as_mut_ptr());
        csk_env_keypoint(env, c("right edge").as_ptr(), right.as_mut_ptr());
        let ok = csk_env_pick_place(env, left[0], left[1], left[2], right[0], right[1], right[2]);
        assert_eq!(ok, CskStatus::Ok);

        // The left-edge particle moved to the right half.
        csk_env_keypoint(env, c("left edge").as_ptr(), left.as_mut_ptr());
        assert!(left[0] > 0.0);
        csk_env_free(env);
    }

    #[test]
    fn render_reports_size_and_fills_buffers() {
        let mut env: *mut CskEnv = std::ptr::null_mut();
        csk_env_new(c("trousers").as_ptr(), 0.0, 0.0, 0.0, &mut env);

        let (mut w, mut h) = (0u32, 0u32);
        let too_small = csk_env_render_depth(env, std::ptr::null_mut(), 0, &mut w, &mut h);
        assert_eq!(too_small, CskStatus::BufferTooSmall);
        assert_eq!((w, h), (64, 64));

        let mut depth = vec![0.0f32; (w * h) as usize];
        assert_eq!(
            csk_env_render_depth(env, depth.as_mut_ptr(), depth.len(), &mut w, &mut h),
            CskStatus::Ok
        );
        assert!(depth.iter().all(|v| *v > 0.0));

        let mut mask = vec![0u8; (w * h) as usize];
        assert_eq!(
            csk_env_render_mask(env, mask.as_mut_ptr(), mask.len(), &mut w, &mut h),
            CskStatus::Ok
        );
        assert!(mask.iter().any(|&b| b == 1));
        assert!(mask.iter().all(|&b| b <= 1));
        csk_env_free(env);
    }

    #[test]
    fn parse_and_plan_round_trip_through_the_abi() {
        let mut kind = -1i32;
        let mut part = vec![0 as c_char; 64];
        let mut len = 0usize;
        let status = csk_parse_instruction(
            c("Pick up the left sleeve of the T-shirt").as_ptr(),
            c("tshirt").as_ptr(),
            &mut kind,
            part.as_mut_ptr(),
            part.len(),
            &mut len,
        );
        assert_eq!(status, CskStatus::Ok);
        assert_eq!(kind, 0);
        let part = unsafe { CStr::from_ptr(part.as_ptr()) }.to_str().unwrap();
        assert_eq!(part, "left sleeve");

        let mut buf = vec![0 as c_char; 512];
        let status = csk_plan_rule(
            c("fold the trousers from left to right").as_ptr(),
            c("trousers").as_ptr(),
            buf.as_mut_ptr(),
            buf.len(),
            &mut len,
        );
        assert_eq!(status, CskStatus::Ok);
        let plan = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert_eq!(plan.lines().count(), 4);

        let bad = csk_plan_rule(
            c("iron the shirt").as_ptr(),
            c("tshirt").as_ptr(),
            buf.as_mut_ptr(),
            buf.len(),
            &mut len,
        );
        assert_eq!(bad, CskStatus::PlanError);
    }

    #[test]
    fn vocab_needs_a_big_enough_buffer() {
        let mut len = 0usize;
        let status = csk_vocab(c("square").as_ptr(), std::ptr::null_mut(), 0, &mut len);
        assert_eq!(status, CskStatus::BufferTooSmall);
        assert!(len > 0);
        let mut buf = vec![0 as c_char; len];
        assert_eq!(csk_vocab(c("square").as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), CskStatus::Ok);
        let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn oracle_predict_and_run_task() {
        let mut env: *mut CskEnv = std::ptr::null_mut();
        csk_env_new(c("square").as_ptr(), 0.0, 0.0, 0.0, &mut env);
        let (mut px, mut py) = (0u32, 0u32);
        let status = csk_oracle_predict(
            env,
            c("Pick up the center of the square").as_ptr(),
            &mut px,
            &mut py,
        );
        assert_eq!(status, CskStatus::Ok);
        assert_eq!((px, py), (32, 32));

        let status = csk_env_run_task(env, c("fold the square from left to right").as_ptr());
        assert_eq!(status, CskStatus::Ok);
        csk_env_free(env);
    }

    #[test]
    fn model_load_rejects_missing_files() {
        let mut model: *mut CskModel = std::ptr::null_mut();
        let status = csk_model_load(c("/nonexistent/model.cafm").as_ptr(), &mut model);
        assert_eq!(status, CskStatus::IoError);
        assert!(model.is_null());
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/include/clothskill.h"
        ))
        .expect("build.rs generated the header");
        for symbol in [
            "csk_version",
            "csk_last_error",
            "csk_env_new",
            "csk_env_pick_place",
            "csk_env_render_depth",
            "csk_parse_instruction",
            "csk_plan_rule",
            "csk_vocab",
            "csk_oracle_predict",
            "csk_model_load",
            "csk_model_predict",
            "CskStatus",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
