//! Synthetic RGB-D renderer for the vial scene.
//!
//! The vial is a box section: the scraped wall is the plane `x = wall_x`
//! facing the camera, the opposite wall is `x = far_wall_x`, and the sides are
//! at `|y| = inner_diameter / 2`. The camera sits outside the scraped wall
//! looking along −x. Glass gives no depth return; material (front and back
//! walls), the tool and the background do. Front material is translucent in
//! colour, so material lying over the tool picks up a green tint, but opaque
//! in depth.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::color::{blend, hsv_to_rgb, Hsv};
use super::frame::{BBox, Camera, RgbdFrame};
use crate::error::{invalid, Result};
use crate::material::{MaterialProfile, VialGeometry};
use crate::rng::seeded_rng;

/// A material dot on a wall, in wall coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallDot {
    pub lateral: f64,
    pub z: f64,
}

/// Flat spatula blade: a ribbon from `tip` back along `−(cos pitch, sin pitch)`
/// in the x–z plane, `2 * half_width` wide in y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolPose {
    /// `(x, z)` of the blade tip.
    pub tip: Vector2<f64>,
    pub pitch: f64,
    pub half_width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub particle_radius: f64,
    /// Dots scattered on the far wall.
    pub back_count: usize,
    /// Colour weight of front material over whatever lies behind it.
    pub material_opacity: f64,
    pub material_hsv: Hsv,
    pub tool_hsv: Hsv,
    pub glass_rgb: [u8; 3],
    pub background_rgb: [u8; 3],
    /// Background plane distance behind the far wall.
    pub background_gap: f64,
    pub depth_noise_std: f64,
    /// Fraction of vial pixels given an out-of-band depth.
    pub artifact_rate: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            particle_radius: 7e-4,
            back_count: 40,
            material_opacity: 0.4,
            material_hsv: Hsv { h: 10.0, s: 0.8, v: 0.8 },
            tool_hsv: Hsv { h: 60.0, s: 0.8, v: 0.7 },
            glass_rgb: [190, 200, 210],
            background_rgb: [60, 60, 64],
            background_gap: 0.05,
            depth_noise_std: 0.0,
            artifact_rate: 0.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.particle_radius > 0.0) {
            return invalid("particle radius must be positive");
        }
        if !(0.0..=1.0).contains(&self.material_opacity) || !(0.0..=1.0).contains(&self.artifact_rate) {
            return invalid("opacity and artifact rate must lie in [0, 1]");
        }
        if !(self.depth_noise_std >= 0.0) || !(self.background_gap > 0.0) {
            return invalid("depth noise must be non-negative and background gap positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub geometry: VialGeometry,
    /// Material on the scraped wall, sorted by z.
    pub front: Vec<WallDot>,
    /// Material on the far wall, sorted by z.
    pub back: Vec<WallDot>,
    pub tool: Option<ToolPose>,
    pub params: SceneParams,
    /// Seeds the depth noise and artifacts.
    pub seed: u64,
}

fn sort_dots(dots: &mut [WallDot]) {
    dots.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.lateral.total_cmp(&b.lateral)));
}

impl SyntheticScene {
    pub fn new(
        geometry: VialGeometry,
        mut front: Vec<WallDot>,
        mut back: Vec<WallDot>,
        tool: Option<ToolPose>,
        params: SceneParams,
        seed: u64,
    ) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        sort_dots(&mut front);
        sort_dots(&mut back);
        Ok(Self { geometry, front, back, tool, params, seed })
    }

    /// Attached particles of `profile` on the front wall plus `params.back_count`
    /// dots scattered over the window on the far wall.
    pub fn from_profile(
        profile: &MaterialProfile,
        geometry: &VialGeometry,
        tool: Option<ToolPose>,
        params: SceneParams,
        seed: u64,
    ) -> Result<Self> {
        let front = profile
            .particles
            .iter()
            .filter(|p| p.attached)
            .map(|p| WallDot { lateral: p.lateral, z: p.pos.y })
            .collect();
        let mut rng = seeded_rng(seed ^ 0xBAC4);
        let half = 0.4 * geometry.inner_diameter;
        let back = (0..params.back_count)
            .map(|_| WallDot {
                lateral: rng.random_range(-half..=half),
                z: rng.random_range(geometry.window_z_min..=geometry.window_z_max),
            })
            .collect();
        Self::new(geometry.clone(), front, back, tool, params, seed)
    }
}

/// Camera looking at the scraped wall from `distance` outside it, centred on the vial.
pub fn default_camera(geometry: &VialGeometry) -> Camera {
    let pos = Vector3::new(geometry.wall_x + 0.12, 0.0, 0.5 * (geometry.bottom_z + geometry.rim_z));
    Camera::facing_negative_x(128, 384, 400.0, pos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub frame: RgbdFrame,
    /// Front-wall material visible at the pixel.
    pub material: Vec<bool>,
    /// Tool visible at the pixel.
    pub tool: Vec<bool>,
    pub vial: Vec<bool>,
    /// Bounding box of the vial pixels; `None` if the vial is out of view.
    pub bbox: Option<BBox>,
}

fn dot_hit(dots: &[WallDot], lateral: f64, z: f64, r: f64) -> bool {
    let start = dots.partition_point(|d| d.z < z - r);
    dots[start..].iter().take_while(|d| d.z <= z + r).any(|d| (d.lateral - lateral).powi(2) + (d.z - z).powi(2) <= r * r)
}

/// Camera depth at which the ray hits the tool ribbon, if it does.
fn tool_hit(tool: &ToolPose, cam: &Camera, ray: &Vector3<f64>) -> Option<f64> {
    let tip = Vector3::new(tool.tip.x, 0.0, tool.tip.y);
    let d = -Vector3::new(tool.pitch.cos(), 0.0, tool.pitch.sin());
    let n = d.cross(&Vector3::y());
    let den = n.dot(ray);
    if den.abs() < 1e-12 {
        return None;
    }
    let lambda = n.dot(&(tip - cam.position)) / den;
    if lambda <= 0.0 {
        return None;
    }
    let q = cam.position + ray * lambda - tip;
    let s = q.dot(&d);
    (s >= 0.0 && s <= tool.length && q.y.abs() <= tool.half_width).then_some(lambda)
}

/// Depth on the plane `x = plane_x` and the wall coordinates `(y, z)` there.
fn plane_hit(cam: &Camera, ray: &Vector3<f64>, plane_x: f64) -> Option<(f64, f64, f64)> {
    if ray.x.abs() < 1e-12 {
        return None;
    }
    let lambda = (plane_x - cam.position.x) / ray.x;
    (lambda > 0.0).then(|| {
        let p = cam.position + ray * lambda;
        (lambda, p.y, p.z)
    })
}

pub fn render(scene: &SyntheticScene, cam: &Camera) -> Result<Rendered> {
    let g = &scene.geometry;
    let p = &scene.params;
    let half = 0.5 * g.inner_diameter;
    let material_rgb = hsv_to_rgb(p.material_hsv);
    let tool_rgb = hsv_to_rgb(p.tool_hsv);
    let n = cam.pixel_count();
    let mut rgb = vec![p.background_rgb; n];
    let mut depth = vec![0.0f64; n];
    let mut material = vec![false; n];
    let mut tool = vec![false; n];
    let mut vial = vec![false; n];
    let inside = |y: f64, z: f64| y.abs() <= half && z >= g.bottom_z && z <= g.rim_z;

    for v in 0..cam.height {
        for u in 0..cam.width {
            let i = v * cam.width + u;
            let ray = cam.ray(u as f64 + 0.5, v as f64 + 0.5);
            let t_hit = scene.tool.as_ref().and_then(|t| tool_hit(t, cam, &ray));
            let front = plane_hit(cam, &ray, g.wall_x).filter(|&(_, y, z)| inside(y, z));
            let Some((zf, yf, zzf)) = front else {
                // outside the vial silhouette: tool or background
                if let Some(d) = t_hit {
                    rgb[i] = tool_rgb;
                    depth[i] = d;
                    tool[i] = true;
                } else if let Some((d, _, _)) = plane_hit(cam, &ray, g.far_wall_x() - p.background_gap) {
                    depth[i] = d;
                }
                continue;
            };
            vial[i] = true;
            let back = plane_hit(cam, &ray, g.far_wall_x())
                .filter(|&(_, y, z)| inside(y, z) && dot_hit(&scene.back, y, z, p.particle_radius));
            // what lies behind the front wall, nearest first
            let (behind_rgb, behind_depth, is_tool) = match (t_hit, back) {
                (Some(td), Some((bd, _, _))) if bd < td => (material_rgb, bd, false),
                (Some(td), _) => (tool_rgb, td, true),
                (None, Some((bd, _, _))) => (material_rgb, bd, false),
                (None, None) => (p.glass_rgb, 0.0, false),
            };
            if dot_hit(&scene.front, yf, zzf, p.particle_radius) {
                rgb[i] = blend(material_rgb, behind_rgb, p.material_opacity);
                depth[i] = zf;
                material[i] = true;
            } else {
                rgb[i] = behind_rgb;
                depth[i] = behind_depth;
                tool[i] = is_tool;
            }
        }
    }

    let mut rng = seeded_rng(scene.seed);
    let noise = (p.depth_noise_std > 0.0).then(|| Normal::new(0.0, p.depth_noise_std).expect("validated std"));
    let (near, far) = (cam.position.x - g.wall_x, cam.position.x - g.far_wall_x());
    for i in 0..n {
        if vial[i] && p.artifact_rate > 0.0 && rng.random::<f64>() < p.artifact_rate {
            depth[i] = if rng.random::<bool>() {
                rng.random_range(0.3 * near..0.7 * near)
            } else {
                rng.random_range(1.5 * far..3.0 * far)
            };
        } else if depth[i] > 0.0 {
            if let Some(nd) = &noise {
                depth[i] = (depth[i] + nd.sample(&mut rng)).max(1e-6);
            }
        }
    }

    let bbox = vial_bbox(&vial, cam.width);
    let frame = RgbdFrame::new(cam.clone(), rgb, depth.iter().map(|&d| d as f32).collect())?;
    Ok(Rendered { frame, material, tool, vial, bbox })
}

fn vial_bbox(vial: &[bool], width: usize) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for (i, _) in vial.iter().enumerate().filter(|(_, v)| **v) {
        let (x, y) = (i % width, i / width);
        b = Some(match b {
            None => BBox { x0: x, y0: y, x1: x + 1, y1: y + 1 },
            Some(b) => BBox { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x + 1), y1: b.y1.max(y + 1) },
        });
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(front: Vec<WallDot>, tool: Option<ToolPose>, params: SceneParams) -> SyntheticScene {
        SyntheticScene::new(VialGeometry::default(), front, vec![], tool, params, 1).unwrap()
    }

    fn blade(z: f64) -> ToolPose {
        let g = VialGeometry::default();
        ToolPose { tip: Vector2::new(g.wall_x - 1e-3, z), pitch: -1.3, half_width: 3e-3, length: 0.12 }
    }

    #[test]
    fn empty_scene_has_no_material() {
        let g = VialGeometry::default();
        let r = render(&scene(vec![], None, SceneParams::default()), &default_camera(&g)).unwrap();
        assert!(r.material.iter().all(|m| !m));
        assert!(r.tool.iter().all(|t| !t));
        // glass gives no return inside the vial
        for i in 0..r.vial.len() {
            assert_eq!(r.vial[i], r.frame.depth[i] == 0.0);
        }
        let b = r.bbox.unwrap();
        // 28 mm x 100 mm at 0.12 m with f = 400 px
        assert!((b.width() as f64 - 93.3).abs() <= 1.5 && (b.height() as f64 - 333.3).abs() <= 1.5);
    }

    #[test]
    fn material_depth_is_wall_distance() {
        let g = VialGeometry::default();
        let cam = default_camera(&g);
        let dots = vec![WallDot { lateral: 0.0, z: 0.03 }, WallDot { lateral: 2e-3, z: 0.05 }];
        let r = render(&scene(dots, Some(blade(0.04)), SceneParams::default()), &cam).unwrap();
        let wall = (cam.position.x - g.wall_x) as f32;
        let mut count = 0;
        for i in 0..r.material.len() {
            if r.material[i] {
                assert_eq!(r.frame.depth[i], wall);
                count += 1;
            }
        }
        // two dots of radius 0.7 mm: about 2 * pi * 2.33^2 pixels
        assert!((25..=45).contains(&count), "{count}");
        assert!(r.tool.iter().any(|t| *t));
    }

    #[test]
    fn same_seed_same_frame() {
        let g = VialGeometry::default();
        let params = SceneParams { depth_noise_std: 5e-4, artifact_rate: 0.05, ..Default::default() };
        let dots = vec![WallDot { lateral: 0.0, z: 0.04 }];
        let s = scene(dots, Some(blade(0.05)), params);
        let a = render(&s, &default_camera(&g)).unwrap();
        let b = render(&s, &default_camera(&g)).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 2;
        assert_ne!(render(&other, &default_camera(&g)).unwrap().frame.depth, a.frame.depth);
    }

    #[test]
    fn translucent_material_over_tool_turns_green() {
        let g = VialGeometry::default();
        let cam = default_camera(&g);
        let tip = blade(0.03);
        let dots = vec![WallDot { lateral: 0.0, z: 0.035 }, WallDot { lateral: 0.0, z: 0.02 }];
        let r = render(&scene(dots, Some(tip), SceneParams::default()), &cam).unwrap();
        let hue_at = |world: Vector3<f64>| {
            let (u, v, _) = cam.project(&world);
            let i = r.frame.index(u as usize, v as usize);
            assert!(r.material[i]);
            super::super::color::rgb_to_hsv(r.frame.rgb[i].map(f64::from)).h
        };
        // above the tip the blade is behind the dot, below it glass is
        let over_tool = hue_at(Vector3::new(g.wall_x, 0.0, 0.035));
        let over_glass = hue_at(Vector3::new(g.wall_x, 0.0, 0.02));
        assert!((40.0..=80.0).contains(&over_tool), "{over_tool}");
        assert!(over_glass < 20.0, "{over_glass}");
    }
}
