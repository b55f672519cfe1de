//! Time stepping and the pick-and-place primitive.

use glam::DVec3;

use super::state::Grasp;
use super::{ClothState, ClothTemplate, SimConfig, SimError};

/// Advances the state by one `dt` with semi-implicit Euler: spring and
/// damping forces, gravity, the grasp constraint, and ground contact with
/// zeroed normal velocity and tangential friction.
pub fn step(state: &mut ClothState, template: &ClothTemplate, config: &SimConfig) -> Result<(), SimError> {
    let n = template.particle_count();
    if state.positions.len() != n {
        return Err(SimError::StateMismatch { expected: n, actual: state.positions.len() });
    }

    let mass = config.particle_mass;
    let gravity = DVec3::new(0.0, 0.0, -config.gravity);

    let mut forces = vec![DVec3::ZERO; n];
    for s in &template.springs {
        let delta = state.positions[s.j] - state.positions[s.i];
        let len = delta.length();
        if len < 1e-12 {
            continue;
        }
        let k = match s.kind {
            super::SpringKind::Structural => config.stiffness_structural,
            super::SpringKind::Shear => config.stiffness_shear,
            super::SpringKind::Bend => config.stiffness_bend,
        };
        let axis = delta / len;
        let rel_speed = (state.velocities[s.j] - state.velocities[s.i]).dot(axis);
        let force = axis * (k * (len - s.rest_length) + config.spring_damping * rel_speed);
        forces[s.i] += force;
        forces[s.j] -= force;
    }

    let grasped_idx = state.grasped.map(|g| g.particle);
    for i in 0..n {
        if Some(i) == grasped_idx {
            let g = state.grasped.unwrap();
            state.positions[i] = g.target;
            state.velocities[i] = DVec3::ZERO;
            continue;
        }
        let accel = forces[i] / mass + gravity - state.velocities[i] * config.damping;
        state.velocities[i] += accel * config.dt;
        state.positions[i] += state.velocities[i] * config.dt;

        if state.positions[i].z < config.ground_height {
            state.positions[i].z = config.ground_height;
            if state.velocities[i].z < 0.0 {
                state.velocities[i].z = 0.0;
            }
            state.velocities[i].x *= 1.0 - config.ground_friction;
            state.velocities[i].y *= 1.0 - config.ground_friction;
        }

        if !state.positions[i].is_finite() || !state.velocities[i].is_finite() {
            return Err(SimError::SimulationDiverged { particle: i });
        }
    }
    Ok(())
}

/// Grasps the particle nearest to `world_point` if it is within the grasp
/// radius; ties break toward the lowest index. On a miss the state is left
/// untouched.
pub fn grasp(
    state: &mut ClothState,
    template: &ClothTemplate,
    world_point: DVec3,
    config: &SimConfig,
) -> Result<usize, SimError> {
    let n = template.particle_count();
    if state.positions.len() != n {
        return Err(SimError::StateMismatch { expected: n, actual: state.positions.len() });
    }
    let mut best = usize::MAX;
    let mut best_dist = f64::INFINITY;
    for (i, p) in state.positions.iter().enumerate() {
        let d = (*p - world_point).length();
        if d < best_dist {
            best_dist = d;
            best = i;
        }
    }
    if best_dist > config.grasp_radius {
        return Err(SimError::GraspMiss { distance: best_dist, radius: config.grasp_radius });
    }
    state.grasped = Some(Grasp { particle: best, target: state.positions[best] });
    Ok(best)
}

/// Drops the grasp constraint, if any.
pub fn release(state: &mut ClothState) {
    state.grasped = None;
}

/// Steps until total kinetic energy drops below `settle_ke_eps` or
/// `max_settle_steps` is reached. Returns the number of steps taken.
pub fn settle(
    state: &mut ClothState,
    template: &ClothTemplate,
    config: &SimConfig,
) -> Result<usize, SimError> {
    if state.grasped.is_some() {
        return Err(SimError::CannotSettleGrasped);
    }
    for taken in 0..config.max_settle_steps {
        if state.kinetic_energy(config.particle_mass) < config.settle_ke_eps {
            return Ok(taken);
        }
        step(state, template, config)?;
    }
    Ok(config.max_settle_steps)
}

/// Evaluates the piecewise-linear lift-move-lower path at arc length `s`.
fn path_point(waypoints: &[DVec3], s: f64) -> DVec3 {
    let mut remaining = s;
    for pair in waypoints.windows(2) {
        let seg = pair[1] - pair[0];
        let len = seg.length();
        if remaining <= len || len == 0.0 {
            if len == 0.0 {
                continue;
            }
            return pair[0] + seg * (remaining / len);
        }
        remaining -= len;
    }
    *waypoints.last().expect("path has at least one waypoint")
}

/// Runs one full pick-and-place: grasp at `pick`, lift vertically to the
/// configured lift height, move linearly above `place`, lower, release, and
/// settle. The grasp waypoint advances once per action frame
/// (`substeps` × `dt`) at `move_speed`, and the grasped particle sits exactly
/// on the waypoint at every substep.
///
/// Returns one intermediate state per action frame plus the final settled
/// state.
pub fn execute_pick_place(
    state: &mut ClothState,
    template: &ClothTemplate,
    pick: DVec3,
    place: DVec3,
    config: &SimConfig,
) -> Result<Vec<ClothState>, SimError> {
    config.validate(template)?;
    let handle = grasp(state, template, pick, config)?;

    let start = state.positions[handle];
    let lift_z = config.ground_height + config.lift_height;
    let place_z = place.z.max(config.ground_height);
    let waypoints = [
        start,
        DVec3::new(start.x, start.y, lift_z),
        DVec3::new(place.x, place.y, lift_z),
        DVec3::new(place.x, place.y, place_z),
    ];
    let total_len: f64 = waypoints.windows(2).map(|p| (p[1] - p[0]).length()).sum();
    let frame_dist = config.move_speed * config.dt * config.substeps as f64;

    let mut frames = Vec::new();
    let advance = |state: &mut ClothState, target: DVec3| -> Result<(), SimError> {
        state.grasped = Some(Grasp { particle: handle, target });
        for _ in 0..config.substeps {
            step(state, template, config)?;
        }
        Ok(())
    };

    let mut s = frame_dist;
    while s < total_len {
        advance(state, path_point(&waypoints, s))?;
        frames.push(state.clone());
        s += frame_dist;
    }
    // Land exactly on the endpoint, then give the cloth one extra frame to
    // transfer momentum before release.
    advance(state, waypoints[3])?;
    frames.push(state.clone());

    release(state);
    settle(state, template, config)?;
    frames.push(state.clone());
    Ok(frames)
}
