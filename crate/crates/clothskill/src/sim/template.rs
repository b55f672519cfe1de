//! Cloth template construction: particle grids, spring graphs, and semantic
//! keypoints for each cloth silhouette.

use std::collections::BTreeMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::grammar::{self, ClothType};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub kind: SpringKind,
}

/// A cloth at rest: particle layout, spring graph, and the binding from
/// grammar part labels to particle indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothTemplate {
    pub cloth_type: ClothType,
    pub rest_positions: Vec<DVec3>,
    pub springs: Vec<Spring>,
    /// Semantic part label → particle index. Exactly the grammar vocabulary
    /// of `cloth_type`.
    pub keypoints: BTreeMap<String, usize>,
    pub spacing: f64,
}

impl ClothTemplate {
    pub fn particle_count(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn keypoint_index(&self, part: &str) -> Option<usize> {
        self.keypoints.get(part).copied()
    }

    /// Checks the structural invariants: spring indices in range with
    /// positive rest lengths, planar rest positions, a connected spring
    /// graph, and a keypoint set equal to the grammar vocabulary.
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.particle_count();
        if self.spacing <= 0.0 {
            return Err(SimError::BadTemplate(format!("spacing {} must be positive", self.spacing)));
        }
        for s in &self.springs {
            if s.i >= n || s.j >= n {
                return Err(SimError::BadTemplate(format!(
                    "spring ({}, {}) out of range for {n} particles",
                    s.i, s.j
                )));
            }
            if s.i == s.j {
                return Err(SimError::BadTemplate(format!("degenerate spring at particle {}", s.i)));
            }
            if s.rest_length <= 0.0 {
                return Err(SimError::BadTemplate(format!(
                    "spring ({}, {}) has nonpositive rest length {}",
                    s.i, s.j, s.rest_length
                )));
            }
        }
        for (i, p) in self.rest_positions.iter().enumerate() {
            if p.z != 0.0 {
                return Err(SimError::BadTemplate(format!(
                    "rest position of particle {i} is not planar (z = {})",
                    p.z
                )));
            }
        }

        // Keypoints must be exactly the grammar vocabulary for this cloth.
        let vocab = grammar::part_labels(self.cloth_type);
        for part in vocab {
            match self.keypoints.get(*part) {
                Some(&idx) if idx < n => {}
                Some(&idx) => {
                    return Err(SimError::BadTemplate(format!(
                        "keypoint {part:?} maps to out-of-range particle {idx}"
                    )))
                }
                None => {
                    return Err(SimError::BadTemplate(format!("missing keypoint for part {part:?}")))
                }
            }
        }
        for label in self.keypoints.keys() {
            if !vocab.contains(&label.as_str()) {
                return Err(SimError::BadTemplate(format!(
                    "keypoint {label:?} is not in the {} vocabulary",
                    self.cloth_type
                )));
            }
        }

        // Connectivity via union-find over the spring graph.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for s in &self.springs {
            let (a, b) = (find(&mut parent, s.i), find(&mut parent, s.j));
            if a != b {
                parent[a] = b;
            }
        }
        if n > 0 {
            let root = find(&mut parent, 0);
            for i in 1..n {
                if find(&mut parent, i) != root {
                    return Err(SimError::BadTemplate(format!(
                        "spring graph is disconnected (particle {i})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Real-world cloth dimensions used when a caller does not specify them.
pub fn default_dims(cloth_type: ClothType) -> (f64, f64) {
    match cloth_type {
        ClothType::Square => (0.35, 0.35),
        ClothType::Rectangular => (0.40, 0.30),
        ClothType::Tshirt => (0.45, 0.35),
        ClothType::Skirt => (0.35, 0.35),
        ClothType::Trousers => (0.42, 0.33),
    }
}

/// Grid-index silhouette plus keypoint cells for one cloth type, on a
/// `cols` x `rows` lattice. Row 0 is the bottom of the cloth (smallest y).
struct Silhouette {
    cells: Vec<Vec<bool>>,
    keypoints: Vec<(&'static str, (usize, usize))>,
}

fn full_grid(cols: usize, rows: usize) -> Vec<Vec<bool>> {
    vec![vec![true; cols]; rows]
}

fn square_silhouette(cols: usize, rows: usize) -> Silhouette {
    let top = rows - 1;
    let right = cols - 1;
    Silhouette {
        cells: full_grid(cols, rows),
        keypoints: vec![
            ("top left corner", (0, top)),
            ("top right corner", (right, top)),
            ("bottom left corner", (0, 0)),
            ("bottom right corner", (right, 0)),
            ("top edge", (cols / 2, top)),
            ("bottom edge", (cols / 2, 0)),
            ("left edge", (0, rows / 2)),
            ("right edge", (right, rows / 2)),
            ("center", (cols / 2, rows / 2)),
        ],
    }
}

fn tshirt_silhouette(cols: usize, rows: usize) -> Result<Silhouette, String> {
    let sleeve_cols = ((cols as f64 * 0.2).round() as usize).max(2);
    let sleeve_rows = ((rows as f64 * 0.4).round() as usize).max(2);
    let body_lo = sleeve_cols;
    let body_hi = cols - sleeve_cols - 1;
    if body_hi <= body_lo + 2 || sleeve_rows + 2 > rows {
        return Err("T-shirt silhouette needs a larger grid".into());
    }
    let mut cells = vec![vec![false; cols]; rows];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let in_body = c >= body_lo && c <= body_hi;
            let in_sleeve = r >= rows - sleeve_rows;
            *cell = in_body || in_sleeve;
        }
    }
    let top = rows - 1;
    let body_w = body_hi - body_lo;
    let sleeve_row = top - sleeve_rows / 2;
    Ok(Silhouette {
        cells,
        keypoints: vec![
            ("left sleeve", (0, sleeve_row)),
            ("right sleeve", (cols - 1, sleeve_row)),
            ("left collar", (body_lo + body_w / 3, top)),
            ("right collar", (body_hi - body_w / 3, top)),
            ("left shoulder", (body_lo, top)),
            ("right shoulder", (body_hi, top)),
            ("left hem", (body_lo, 0)),
            ("right hem", (body_hi, 0)),
            ("bottom edge", (cols / 2, 0)),
            ("center", (cols / 2, rows / 2)),
        ],
    })
}

fn trousers_silhouette(cols: usize, rows: usize) -> Result<Silhouette, String> {
    let waist_rows = ((rows as f64 * 0.3).round() as usize).max(2);
    let leg_cols = ((cols as f64 * 0.4).round() as usize).max(2);
    if 2 * leg_cols + 1 > cols || waist_rows + 2 > rows {
        return Err("trousers silhouette needs a larger grid".into());
    }
    let leg_rows = rows - waist_rows;
    let mut cells = vec![vec![false; cols]; rows];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let in_waist = r >= leg_rows;
            let in_left_leg = c < leg_cols;
            let in_right_leg = c >= cols - leg_cols;
            *cell = in_waist || in_left_leg || in_right_leg;
        }
    }
    let top = rows - 1;
    Ok(Silhouette {
        cells,
        keypoints: vec![
            ("waist left corner", (0, top)),
            ("waist right corner", (cols - 1, top)),
            ("waist center", (cols / 2, top)),
            ("left leg hem", (leg_cols / 2, 0)),
            ("right leg hem", (cols - 1 - leg_cols / 2, 0)),
            ("left knee", (leg_cols / 2, leg_rows / 2)),
            ("right knee", (cols - 1 - leg_cols / 2, leg_rows / 2)),
            ("crotch", (cols / 2, leg_rows)),
            ("center", (cols / 2, top - waist_rows / 2)),
        ],
    })
}

fn skirt_silhouette(cols: usize, rows: usize) -> Result<Silhouette, String> {
    if cols < 7 || rows < 5 {
        return Err("skirt silhouette needs a larger grid".into());
    }
    // Trapezoid approximated by rectangle rows: full width at the hem
    // (row 0), 60% at the waist (top row).
    let center = (cols - 1) as f64 / 2.0;
    let half_at = |r: usize| -> usize {
        let frac = 1.0 - 0.4 * r as f64 / (rows - 1) as f64;
        (center * frac).round() as usize
    };
    let mut cells = vec![vec![false; cols]; rows];
    for (r, row) in cells.iter_mut().enumerate() {
        let half = half_at(r);
        let lo = (center - half as f64).round() as usize;
        let hi = (center + half as f64).round() as usize;
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = c >= lo && c <= hi;
        }
    }
    let top = rows - 1;
    let mid = rows / 2;
    let c_mid = (center).round() as usize;
    let waist_lo = (center - half_at(top) as f64).round() as usize;
    let waist_hi = (center + half_at(top) as f64).round() as usize;
    let mid_lo = (center - half_at(mid) as f64).round() as usize;
    let mid_hi = (center + half_at(mid) as f64).round() as usize;
    Ok(Silhouette {
        cells,
        keypoints: vec![
            ("waist left corner", (waist_lo, top)),
            ("waist right corner", (waist_hi, top)),
            ("waist center", (c_mid, top)),
            ("hem left corner", (0, 0)),
            ("hem right corner", (cols - 1, 0)),
            ("hem center", (c_mid, 0)),
            ("left edge", (mid_lo, mid)),
            ("right edge", (mid_hi, mid)),
            ("center", (c_mid, mid)),
        ],
    })
}

/// Builds a template for `cloth_type` with the requested physical size.
/// Particle spacing is exact; width and height round to the nearest whole
/// number of cells. The cloth is centered on the origin at z = 0.
pub fn make_template(
    cloth_type: ClothType,
    width_m: f64,
    height_m: f64,
    spacing_m: f64,
) -> Result<ClothTemplate, SimError> {
    let too_small = || SimError::DimensionsTooSmall {
        cloth_type,
        width: width_m,
        height: height_m,
        spacing: spacing_m,
    };
    if spacing_m <= 0.0 || width_m < 2.0 * spacing_m || height_m < 2.0 * spacing_m {
        return Err(too_small());
    }
    let cols = (width_m / spacing_m).round() as usize + 1;
    let rows = (height_m / spacing_m).round() as usize + 1;

    let silhouette = match cloth_type {
        ClothType::Square | ClothType::Rectangular => square_silhouette(cols, rows),
        ClothType::Tshirt => tshirt_silhouette(cols, rows).map_err(|_| too_small())?,
        ClothType::Trousers => trousers_silhouette(cols, rows).map_err(|_| too_small())?,
        ClothType::Skirt => skirt_silhouette(cols, rows).map_err(|_| too_small())?,
    };

    // Assign particle indices row-major over occupied cells.
    let mut index = vec![vec![None; cols]; rows];
    let mut rest_positions = Vec::new();
    let half_w = (cols - 1) as f64 / 2.0;
    let half_h = (rows - 1) as f64 / 2.0;
    for r in 0..rows {
        for c in 0..cols {
            if silhouette.cells[r][c] {
                index[r][c] = Some(rest_positions.len());
                rest_positions.push(DVec3::new(
                    (c as f64 - half_w) * spacing_m,
                    (r as f64 - half_h) * spacing_m,
                    0.0,
                ));
            }
        }
    }

    let at = |c: isize, r: isize| -> Option<usize> {
        if c < 0 || r < 0 || c as usize >= cols || r as usize >= rows {
            None
        } else {
            index[r as usize][c as usize]
        }
    };

    let mut springs = Vec::new();
    let diag = spacing_m * std::f64::consts::SQRT_2;
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let Some(i) = at(c, r) else { continue };
            // Structural neighbors to the right and above.
            for (dc, dr) in [(1, 0), (0, 1)] {
                if let Some(j) = at(c + dc, r + dr) {
                    springs.push(Spring { i, j, rest_length: spacing_m, kind: SpringKind::Structural });
                }
            }
            // Shear diagonals.
            for (dc, dr) in [(1, 1), (1, -1)] {
                if let Some(j) = at(c + dc, r + dr) {
                    springs.push(Spring { i, j, rest_length: diag, kind: SpringKind::Shear });
                }
            }
            // Bend springs skip one particle; the intermediate particle must
            // exist so a bend spring never bridges a silhouette gap.
            for (dc, dr) in [(2, 0), (0, 2)] {
                if at(c + dc / 2, r + dr / 2).is_some() {
                    if let Some(j) = at(c + dc, r + dr) {
                        springs.push(Spring {
                            i,
                            j,
                            rest_length: 2.0 * spacing_m,
                            kind: SpringKind::Bend,
                        });
                    }
                }
            }
        }
    }

    let mut keypoints = BTreeMap::new();
    for (label, (c, r)) in &silhouette.keypoints {
        let idx = at(*c as isize, *r as isize).ok_or_else(|| {
            SimError::BadTemplate(format!("keypoint {label:?} falls outside the silhouette"))
        })?;
        keypoints.insert(label.to_string(), idx);
    }

    let template = ClothTemplate { cloth_type, rest_positions, springs, keypoints, spacing: spacing_m };
    template.validate()?;
    Ok(template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar;

    #[test]
    fn square_35cm_is_15_by_15() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        assert_eq!(t.particle_count(), 15 * 15);
        // Physical extent is 0.35 m on each side.
        let min_x = t.rest_positions.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = t.rest_positions.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        assert!((max_x - min_x - 0.35).abs() < 1e-12);
        assert_eq!(t.keypoints.len(), 9);
    }

    #[test]
    fn square_interior_particles_have_four_structural_neighbors() {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let mut structural_degree = vec![0usize; t.particle_count()];
        for s in &t.springs {
            if s.kind == SpringKind::Structural {
                structural_degree[s.i] += 1;
                structural_degree[s.j] += 1;
            }
        }
        for (i, p) in t.rest_positions.iter().enumerate() {
            let interior = p.x.abs() < 0.175 - 0.025 + 1e-9 && p.y.abs() < 0.175 - 0.025 + 1e-9;
            if interior {
                assert_eq!(structural_degree[i], 4, "particle {i} at {p:?}");
            }
        }
    }

    #[test]
    fn all_cloth_types_validate() {
        for ct in ClothType::ALL {
            let (w, h) = default_dims(ct);
            let t = make_template(ct, w, h, 0.025).unwrap();
            t.validate().unwrap();
        }
    }

    #[test]
    fn trousers_keypoints_equal_grammar_vocabulary() {
        let t = make_template(ClothType::Trousers, 0.42, 0.33, 0.025).unwrap();
        let vocab: Vec<&str> = grammar::part_labels(ClothType::Trousers).to_vec();
        let mut keys: Vec<&str> = t.keypoints.keys().map(|s| s.as_str()).collect();
        let mut expect = vocab.clone();
        keys.sort_unstable();
        expect.sort_unstable();
        assert_eq!(keys, expect);
    }

    #[test]
    fn keypoints_are_distinct_particles() {
        for ct in ClothType::ALL {
            let (w, h) = default_dims(ct);
            let t = make_template(ct, w, h, 0.025).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for (label, idx) in &t.keypoints {
                assert!(seen.insert(*idx), "{ct}: keypoint {label} shares a particle");
            }
        }
    }

    #[test]
    fn too_small_dimensions_error() {
        assert!(matches!(
            make_template(ClothType::Square, 0.03, 0.35, 0.025),
            Err(SimError::DimensionsTooSmall { .. })
        ));
    }

    #[test]
    fn tshirt_sleeves_are_left_and_right_extremes() {
        let t = make_template(ClothType::Tshirt, 0.45, 0.35, 0.025).unwrap();
        let left = t.rest_positions[t.keypoint_index("left sleeve").unwrap()];
        let right = t.rest_positions[t.keypoint_index("right sleeve").unwrap()];
        let min_x = t.rest_positions.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = t.rest_positions.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(left.x, min_x);
        assert_eq!(right.x, max_x);
        assert!(left.y > 0.0 && right.y > 0.0, "sleeves sit on the top half");
    }
}
