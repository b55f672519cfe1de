//! Geometric reference grounding: instead of a learned heatmap, project the
//! instruction's keypoint through the camera. Picks use the particle's
//! current position; places use the rest-frame target location (where the
//! named part nominally sits in this episode's placement).

use glam::DVec3;

use crate::camera::CameraModel;
use crate::grammar::{ActionKind, BasicInstruction};
use crate::sim::{ClothState, ClothTemplate};

use super::ModelError;

pub fn oracle_predict(
    state: &ClothState,
    template: &ClothTemplate,
    rest_world: &[DVec3],
    instruction: &BasicInstruction,
    camera: &CameraModel,
) -> Result<(u32, u32), ModelError> {
    let idx = template
        .keypoint_index(&instruction.part)
        .ok_or_else(|| ModelError::UnknownPart { part: instruction.part.clone() })?;
    let point = match instruction.kind {
        ActionKind::Pick => state.positions[idx],
        ActionKind::Place => rest_world[idx],
    };
    let (px, py) = camera.project(point)?;
    let clamp = |v: f64, hi: u32| -> u32 { (v.round().max(0.0) as u32).min(hi - 1) };
    Ok((clamp(px, camera.width), clamp(py, camera.height)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ClothType;
    use crate::sim::make_template;

    #[test]
    fn flat_cloth_pick_matches_direct_projection() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let s = ClothState::from_template(&t);
        let cam = CameraModel::default_benchmark();
        let inst = BasicInstruction::pick("bottom left corner", ClothType::Square);
        let (px, py) = oracle_predict(&s, &t, &t.rest_positions, &inst, &cam).unwrap();
        let corner = t.rest_positions[t.keypoint_index("bottom left corner").unwrap()];
        let (ex, ey) = cam.project(corner).unwrap();
        assert!((px as f64 - ex).abs() <= 1.0);
        assert!((py as f64 - ey).abs() <= 1.0);
    }

    #[test]
    fn pick_follows_current_position_place_stays_at_rest() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let mut s = ClothState::from_template(&t);
        let idx = t.keypoint_index("left edge").unwrap();
        // Drag the left edge particle to the right side, as a half fold
        // would.
        s.positions[idx] = DVec3::new(0.15, 0.0, 0.002);
        let cam = CameraModel::default_benchmark();

        let pick = BasicInstruction::pick("left edge", ClothType::Square);
        let (px, _) = oracle_predict(&s, &t, &t.rest_positions, &pick, &cam).unwrap();
        assert!(px as f64 > cam.cx, "pick tracks the moved particle");

        let place = BasicInstruction::place("left edge", ClothType::Square);
        let (qx, _) = oracle_predict(&s, &t, &t.rest_positions, &place, &cam).unwrap();
        assert!((qx as f64) < cam.cx, "place keeps the rest-frame location");
    }

    #[test]
    fn unknown_part_is_an_error() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let s = ClothState::from_template(&t);
        let cam = CameraModel::default_benchmark();
        let inst = BasicInstruction::pick("left sleeve", ClothType::Square);
        assert!(matches!(
            oracle_predict(&s, &t, &t.rest_positions, &inst, &cam),
            Err(ModelError::UnknownPart { .. })
        ));
    }
}
