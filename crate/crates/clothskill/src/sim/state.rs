//! Mutable cloth state: particle positions, velocities, and the grasp
//! constraint.

use glam::{DMat3, DVec3};
use serde::{Deserialize, Serialize};

use super::{ClothTemplate, SimError};

/// An active single-particle grasp. While present, the particle tracks
/// `target` exactly (infinite-mass constraint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub particle: usize,
    pub target: DVec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothState {
    pub positions: Vec<DVec3>,
    pub velocities: Vec<DVec3>,
    pub grasped: Option<Grasp>,
}

impl ClothState {
    /// The cloth at rest, exactly on its template positions.
    pub fn from_template(template: &ClothTemplate) -> ClothState {
        ClothState {
            positions: template.rest_positions.clone(),
            velocities: vec![DVec3::ZERO; template.particle_count()],
            grasped: None,
        }
    }

    /// The cloth at rest after a rigid in-plane placement: rotation by
    /// `rotation_z` radians about the template centroid, then translation.
    pub fn placed(template: &ClothTemplate, rotation_z: f64, translation: DVec3) -> ClothState {
        let rot = DMat3::from_rotation_z(rotation_z);
        ClothState {
            positions: template.rest_positions.iter().map(|&p| rot * p + translation).collect(),
            velocities: vec![DVec3::ZERO; template.particle_count()],
            grasped: None,
        }
    }

    pub fn validate(&self, template: &ClothTemplate) -> Result<(), SimError> {
        let n = template.particle_count();
        if self.positions.len() != n {
            return Err(SimError::StateMismatch { expected: n, actual: self.positions.len() });
        }
        if self.velocities.len() != n {
            return Err(SimError::StateMismatch { expected: n, actual: self.velocities.len() });
        }
        for (i, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            if !p.is_finite() || !v.is_finite() {
                return Err(SimError::SimulationDiverged { particle: i });
            }
        }
        if let Some(g) = &self.grasped {
            if g.particle >= n {
                return Err(SimError::StateMismatch { expected: n, actual: g.particle });
            }
        }
        Ok(())
    }

    /// Total kinetic energy, ½ m Σ|v|².
    pub fn kinetic_energy(&self, particle_mass: f64) -> f64 {
        0.5 * particle_mass * self.velocities.iter().map(|v| v.length_squared()).sum::<f64>()
    }

    /// Mean particle distance to another state of the same template.
    pub fn mean_distance(&self, other: &ClothState) -> f64 {
        assert_eq!(self.positions.len(), other.positions.len());
        if self.positions.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| (*a - *b).length())
            .sum();
        sum / self.positions.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ClothType;
    use crate::sim::make_template;

    #[test]
    fn placed_rotates_about_centroid() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let s = ClothState::placed(&t, std::f64::consts::FRAC_PI_2, DVec3::new(0.01, 0.0, 0.0));
        // The rest layout is centered on the origin, so the centroid moves
        // exactly by the translation.
        let centroid: DVec3 = s.positions.iter().sum::<DVec3>() / s.positions.len() as f64;
        assert!((centroid - DVec3::new(0.01, 0.0, 0.0)).length() < 1e-12);
        // A quarter turn maps the +x extreme onto +y.
        let right_idx = t.keypoint_index("right edge").unwrap();
        assert!(s.positions[right_idx].y > 0.17);
    }

    #[test]
    fn mean_distance_of_identical_states_is_zero() {
        let t = make_template(ClothType::Square, 0.1, 0.1, 0.025).unwrap();
        let s = ClothState::from_template(&t);
        assert_eq!(s.mean_distance(&s.clone()), 0.0);
    }

    #[test]
    fn validate_rejects_nan() {
        let t = make_template(ClothType::Square, 0.1, 0.1, 0.025).unwrap();
        let mut s = ClothState::from_template(&t);
        s.positions[3].x = f64::NAN;
        assert!(matches!(s.validate(&t), Err(SimError::SimulationDiverged { particle: 3 })));
    }
}
