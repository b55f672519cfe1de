//! Top-down depth and mask rendering via point-splat z-buffering.

use crate::camera::CameraModel;

use super::{ClothState, ClothTemplate, SimError};

/// A depth image in meters, row-major from the top-left pixel. Values are
/// stored as `f32` to match the on-disk raster format bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, fill: f32) -> DepthImage {
        DepthImage { width, height, data: vec![fill; (width * height) as usize] }
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[(y * self.width + x) as usize] = v;
    }
}

/// A binary coverage mask with the same layout as [`DepthImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Mask {
        Mask { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn at(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Splats every particle into the image. `write` receives the pixel
/// coordinates and the particle's camera-frame depth; nearest-wins is the
/// caller's business for depth, masks just set coverage.
fn splat_particles<F: FnMut(u32, u32, f32)>(
    state: &ClothState,
    template: &ClothTemplate,
    camera: &CameraModel,
    mut write: F,
) -> Result<(), SimError> {
    camera.validate()?;
    let (w, h) = (camera.width as i64, camera.height as i64);
    for (i, &p) in state.positions.iter().enumerate() {
        if !p.is_finite() {
            return Err(SimError::SimulationDiverged { particle: i });
        }
        let cam_pt = camera.base_to_cam(p);
        let (px, py) = camera.project_cam(cam_pt)?;
        let depth = cam_pt.z as f32;
        // Splat disc radius: half the particle spacing, in pixels at this depth.
        let radius = (template.spacing * camera.fx / (2.0 * cam_pt.z)).ceil() as i64;
        let cx = px.round() as i64;
        let cy = py.round() as i64;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && x < w && y >= 0 && y < h {
                    write(x as u32, y as u32, depth);
                }
            }
        }
    }
    Ok(())
}

/// Renders a depth image: particle splats z-buffered over a background at
/// the camera-to-ground distance.
pub fn render_depth(
    state: &ClothState,
    template: &ClothTemplate,
    camera: &CameraModel,
    ground_height: f64,
) -> Result<DepthImage, SimError> {
    let mut img = DepthImage::new(camera.width, camera.height, camera.ground_depth(ground_height) as f32);
    let data = &mut img.data;
    let width = camera.width;
    splat_particles(state, template, camera, |x, y, depth| {
        let idx = (y * width + x) as usize;
        if depth < data[idx] {
            data[idx] = depth;
        }
    })?;
    Ok(img)
}

/// Renders a coverage mask: a pixel is set iff any particle splat covers it.
pub fn render_mask(
    state: &ClothState,
    template: &ClothTemplate,
    camera: &CameraModel,
) -> Result<Mask, SimError> {
    let mut mask = Mask::new(camera.width, camera.height);
    let data = &mut mask.data;
    let width = camera.width;
    splat_particles(state, template, camera, |x, y, _| {
        data[(y * width + x) as usize] = true;
    })?;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ClothType;
    use crate::sim::make_template;
    use glam::DVec3;

    fn setup() -> (ClothTemplate, ClothState, CameraModel) {
        let t = make_template(ClothType::Square, 0.35, 0.35, 0.025).unwrap();
        let s = ClothState::from_template(&t);
        (t, s, CameraModel::default_benchmark())
    }

    #[test]
    fn flat_cloth_on_ground_renders_uniform_depth() {
        // With the cloth flat at z = 0 and the ground at 0, every pixel is
        // exactly the camera height: flat cloth is indistinguishable from
        // background by depth alone, which is why masks exist.
        let (t, s, cam) = setup();
        let img = render_depth(&s, &t, &cam, 0.0).unwrap();
        for v in &img.data {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn lifted_particle_is_strictly_nearest() {
        let (t, mut s, cam) = setup();
        let idx = t.keypoint_index("center").unwrap();
        s.positions[idx].z = 0.1;
        let img = render_depth(&s, &t, &cam, 0.0).unwrap();
        let min = img.data.iter().cloned().fold(f32::INFINITY, f32::min);
        assert!((min - 0.9).abs() < 1e-6);
        // The minimum sits at the particle's projected pixel.
        let (px, py) = cam.project(s.positions[idx]).unwrap();
        assert_eq!(img.at(px.round() as u32, py.round() as u32), min);
    }

    #[test]
    fn keypoint_projection_matches_pinhole_formula() {
        // Independent projection oracle: compute the pixel by hand from the
        // top-down geometry and compare against the camera path the renderer
        // uses.
        let (t, s, cam) = setup();
        for (_, &idx) in &t.keypoints {
            let p = s.positions[idx];
            let z = cam.translation.z - p.z;
            let expected_px = cam.fx * p.x / z + cam.cx;
            let expected_py = cam.fy * -p.y / z + cam.cy;
            let (px, py) = cam.project(p).unwrap();
            assert!((px - expected_px).abs() < 1e-12);
            assert!((py - expected_py).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_scene_mask_is_all_false() {
        let (t, _, cam) = setup();
        // A state translated far outside the view frustum covers nothing.
        let mut s = ClothState::from_template(&t);
        for p in &mut s.positions {
            p.x += 100.0;
        }
        let mask = render_mask(&s, &t, &cam).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn flat_cloth_mask_matches_analytic_square() {
        let (t, s, cam) = setup();
        let mask = render_mask(&s, &t, &cam).unwrap();
        // Analytic projection of the 0.35 m square at depth 1: half extent
        // 0.175·96 = 16.8 px around the principal point, padded by one splat
        // radius (2 px) plus half a pixel for splat-center rounding.
        let half_px = 0.175 * cam.fx / 1.0;
        let splat = (t.spacing * cam.fx / 2.0).ceil() + 0.5;
        for y in 0..mask.height {
            for x in 0..mask.width {
                let dx = (x as f64 - cam.cx).abs();
                let dy = (y as f64 - cam.cy).abs();
                let inside_core = dx <= half_px - splat && dy <= half_px - splat;
                let outside_pad = dx > half_px + splat || dy > half_px + splat;
                if inside_core {
                    assert!(mask.at(x, y), "pixel ({x},{y}) inside the cloth is uncovered");
                }
                if outside_pad {
                    assert!(!mask.at(x, y), "pixel ({x},{y}) outside the cloth is covered");
                }
            }
        }
    }

    #[test]
    fn one_pixel_world_shift_shifts_the_mask_one_pixel() {
        let (t, s, cam) = setup();
        let mask_a = render_mask(&s, &t, &cam).unwrap();
        // One pixel at depth 1 m corresponds to z/fx meters; shift slightly
        // off-center first so no projection sits exactly on a rounding
        // boundary.
        let mut nudged = s.clone();
        for p in &mut nudged.positions {
            p.x += 1e-4;
        }
        let mask_b = render_mask(&nudged, &t, &cam).unwrap();
        assert_eq!(mask_a.count(), mask_b.count());

        let mut shifted = nudged.clone();
        for p in &mut shifted.positions {
            p.x += 1.0 / cam.fx;
        }
        let mask_c = render_mask(&shifted, &t, &cam).unwrap();
        for y in 0..mask_b.height {
            for x in 0..mask_b.width - 1 {
                assert_eq!(
                    mask_b.at(x, y),
                    mask_c.at(x + 1, y),
                    "mask did not shift cleanly at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn particle_behind_camera_is_a_render_error() {
        let (t, mut s, cam) = setup();
        s.positions[0].z = 2.0;
        assert!(render_depth(&s, &t, &cam, 0.0).is_err());
    }

    #[test]
    fn splat_radius_follows_depth() {
        let (t, _, cam) = setup();
        // A single particle at z=0 (depth 1) has radius ceil(0.025*96/2)=2.
        let mut s = ClothState::from_template(&t);
        for p in &mut s.positions {
            p.x += 100.0; // move everything out of view
        }
        s.positions[0] = DVec3::new(0.0, 0.0, 0.0);
        let mask = render_mask(&s, &t, &cam).unwrap();
        // Disc of radius 2: 13 pixels.
        assert_eq!(mask.count(), 13);
    }
}
