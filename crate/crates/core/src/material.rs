//! Particle material coating the vial wall.
//!
//! Particles sit on the wall plane `x = wall_x` inside the target window. Each
//! carries a dislodgement threshold sampled from a Perlin field; a particle
//! detaches once the tool tip is within the capture radius while the contact
//! normal force reaches its threshold. All particles share the same mass and the
//! total is 1, so removed mass is directly a fraction.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use crate::arm::TaskState;
use crate::error::{invalid, Error, Result};
use crate::noise::{NoiseParams, PerlinField};
use crate::perception::kmeans::kmeans;
use crate::rng::seeded_rng;

pub const MIN_PARTICLES: usize = 200;
pub const MAX_PARTICLES: usize = 500;
pub const CLUSTER_COUNT: usize = 3;
const PROFILE_HEADER: &str = "scrapelab-profile 1";

#[derive(Debug, Clone, PartialEq)]
pub struct VialGeometry {
    /// Interior wall face the tool presses against (tool pushes toward +x).
    pub wall_x: f64,
    pub window_z_min: f64,
    pub window_z_max: f64,
    pub bottom_z: f64,
    pub rim_z: f64,
    pub inner_diameter: f64,
    /// Width of the scraped strip along the wall (out of the arm plane).
    pub strip_width: f64,
}

impl Default for VialGeometry {
    fn default() -> Self {
        Self {
            wall_x: 0.60,
            window_z_min: 0.015,
            window_z_max: 0.075,
            bottom_z: 0.0,
            rim_z: 0.10,
            inner_diameter: 0.028,
            strip_width: 0.008,
        }
    }
}

impl VialGeometry {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.bottom_z < self.window_z_min
            && self.window_z_min < self.window_z_max
            && self.window_z_max < self.rim_z;
        if !ordered {
            return Err(Error::Config("vial geometry needs bottom < window_min < window_max < rim".into()));
        }
        if !(self.inner_diameter > 0.0 && self.strip_width > 0.0 && self.strip_width <= self.inner_diameter) {
            return Err(Error::Config("vial diameter and strip width must be positive".into()));
        }
        Ok(())
    }

    pub fn window_height(&self) -> f64 {
        self.window_z_max - self.window_z_min
    }

    /// x of the wall opposite the scraped one.
    pub fn far_wall_x(&self) -> f64 {
        self.wall_x - self.inner_diameter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// `(x, z)` on the wall plane.
    pub pos: Vector2<f64>,
    /// Offset across the strip, in `[-strip_width/2, strip_width/2]`.
    pub lateral: f64,
    pub threshold: f64,
    pub attached: bool,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub count: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub min_spacing: f64,
    pub noise: NoiseParams,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self { count: 300, f_min: 1.0, f_max: 8.0, min_spacing: 1e-4, noise: NoiseParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MaterialProfile {
    /// Sorted by height, then lateral offset.
    pub particles: Vec<Particle>,
    pub noise: PerlinField,
    pub spatial_seed: u64,
    pub f_min: f64,
    pub f_max: f64,
    removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dislodged {
    pub mass: f64,
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEntry {
    pub centroid: Vector3<f64>,
    pub residue_pct: f64,
}

/// Three material clusters ordered by height, highest first; empty entries trail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSummary {
    pub clusters: [ClusterEntry; CLUSTER_COUNT],
}

/// Perlin sampling coordinates of a wall point: both axes scaled by the window height.
pub fn noise_coordinates(geometry: &VialGeometry, z: f64, lateral: f64) -> (f64, f64) {
    let h = geometry.window_height();
    (lateral / h, (z - geometry.window_z_min) / h)
}

pub fn generate_profile(
    noise_seed: u64,
    spatial_seed: u64,
    params: &MaterialParams,
    geometry: &VialGeometry,
) -> Result<MaterialProfile> {
    geometry.validate()?;
    let MaterialParams { count, f_min, f_max, min_spacing, noise } = *params;
    if !(MIN_PARTICLES..=MAX_PARTICLES).contains(&count) {
        return invalid(format!("particle count {count} outside [{MIN_PARTICLES}, {MAX_PARTICLES}]"));
    }
    if !(f_min > 0.0 && f_min < f_max) {
        return invalid(format!("threshold bounds must satisfy 0 < f_min < f_max, got [{f_min}, {f_max}]"));
    }
    let field = PerlinField::new(noise_seed, noise)?;

    // jittered grid over the window; cells chosen by a seeded shuffle
    let (w, h) = (geometry.strip_width, geometry.window_height());
    let cols = ((count as f64 * w / h).sqrt().round() as usize).max(1);
    let rows = count.div_ceil(cols);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    if cw.min(ch) < min_spacing {
        return invalid(format!("window too small for {count} particles at spacing {min_spacing} m"));
    }
    let jitter = 0.5 * (cw.min(ch) - min_spacing);
    let mut rng = seeded_rng(spatial_seed);
    let mut cells: Vec<usize> = (0..rows * cols).collect();
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    cells.truncate(count);
    let mass = 1.0 / count as f64;
    let mut particles = Vec::with_capacity(count);
    for cell in cells {
        let (r, c) = (cell / cols, cell % cols);
        let lateral = -0.5 * w + (c as f64 + 0.5) * cw + rng.random_range(-jitter..=jitter);
        let z = geometry.window_z_min + (r as f64 + 0.5) * ch + rng.random_range(-jitter..=jitter);
        let (u, v) = noise_coordinates(geometry, z, lateral);
        let threshold = field.sample_threshold(u, v, f_min, f_max)?;
        particles.push(Particle { pos: Vector2::new(geometry.wall_x, z), lateral, threshold, attached: true, mass });
    }
    particles.sort_by(|a, b| a.pos.y.total_cmp(&b.pos.y).then(a.lateral.total_cmp(&b.lateral)));
    Ok(MaterialProfile { particles, noise: field, spatial_seed, f_min, f_max, removed: 0 })
}

impl MaterialProfile {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn removed_count(&self) -> usize {
        self.removed
    }

    pub fn attached_count(&self) -> usize {
        self.particles.len() - self.removed
    }

    /// Detached mass over total mass. With uniform masses this is the detached count ratio.
    pub fn removed_fraction(&self) -> f64 {
        if self.particles.is_empty() {
            return 0.0;
        }
        self.removed as f64 / self.particles.len() as f64
    }

    /// Detaches particle `id` if still attached; returns whether it changed.
    pub fn detach(&mut self, id: usize) -> bool {
        let p = &mut self.particles[id];
        if p.attached {
            p.attached = false;
            self.removed += 1;
            true
        } else {
            false
        }
    }

    /// Detaches every attached particle within `capture_radius` of the tip whose
    /// threshold does not exceed `normal_force`.
    pub fn dislodge_step(&mut self, tip: &TaskState, normal_force: f64, capture_radius: f64) -> Dislodged {
        self.dislodge_at(&tip.position, normal_force, capture_radius)
    }

    pub fn dislodge_at(&mut self, tip: &Vector2<f64>, normal_force: f64, capture_radius: f64) -> Dislodged {
        let mut out = Dislodged::default();
        if !(normal_force > 0.0) || self.removed == self.particles.len() {
            return out;
        }
        let lo = self.particles.partition_point(|p| p.pos.y < tip.y - capture_radius);
        let r2 = capture_radius * capture_radius;
        for id in lo..self.particles.len() {
            let p = &self.particles[id];
            if p.pos.y > tip.y + capture_radius {
                break;
            }
            if p.attached && p.threshold <= normal_force && (p.pos - tip).norm_squared() <= r2 {
                out.mass += p.mass;
                out.ids.push(id);
            }
        }
        for &id in &out.ids {
            self.detach(id);
        }
        out
    }

    /// Groups attached particles into three clusters over their world positions
    /// `(x, 0, z)`. Empty entries reuse `previous`'s centroid in the same slot, or
    /// the window centre when there is none.
    pub fn summarize_clusters(
        &self,
        seed: u64,
        geometry: &VialGeometry,
        previous: Option<&ClusterSummary>,
    ) -> ClusterSummary {
        let total = self.particles.len().max(1) as f64;
        let points: Vec<[f64; 3]> = self
            .particles
            .iter()
            .filter(|p| p.attached)
            .map(|p| [p.pos.x, 0.0, p.pos.y])
            .collect();
        let fallback = |slot: usize| {
            previous.map(|s| s.clusters[slot].centroid).unwrap_or_else(|| {
                Vector3::new(geometry.wall_x, 0.0, 0.5 * (geometry.window_z_min + geometry.window_z_max))
            })
        };
        let mut found: Vec<(Vector3<f64>, usize)> = Vec::new();
        if points.len() >= CLUSTER_COUNT {
            let km = kmeans(&points, CLUSTER_COUNT, seed, 100).expect("enough finite points");
            for (c, n) in km.centroids.iter().zip(km.cluster_sizes()) {
                if n > 0 {
                    found.push((Vector3::new(c[0], c[1], c[2]), n));
                }
            }
        } else {
            found.extend(points.iter().map(|p| (Vector3::new(p[0], p[1], p[2]), 1)));
        }
        found.sort_by(|a, b| b.0.z.total_cmp(&a.0.z));
        let clusters = std::array::from_fn(|slot| match found.get(slot) {
            Some(&(centroid, n)) => ClusterEntry { centroid, residue_pct: n as f64 / total * 100.0 },
            None => ClusterEntry { centroid: fallback(slot), residue_pct: 0.0 },
        });
        ClusterSummary { clusters }
    }

    /// Versioned text form: a header, a parameter line, then
    /// `x z threshold attached lateral` per particle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{PROFILE_HEADER}");
        let _ = writeln!(
            s,
            "count {} f_min {} f_max {} noise_seed {} spatial_seed {}",
            self.particles.len(),
            self.f_min,
            self.f_max,
            self.noise.seed(),
            self.spatial_seed
        );
        for p in &self.particles {
            let _ = writeln!(s, "{} {} {} {} {}", p.pos.x, p.pos.y, p.threshold, u8::from(p.attached), p.lateral);
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output. The noise field is rebuilt
    /// from the recorded seed with `noise` parameters.
    pub fn from_text(text: &str, noise: NoiseParams) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("profile text: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(PROFILE_HEADER) {
            return Err(bad("missing header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing parameter line"))?.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            meta.iter()
                .position(|t| *t == key)
                .and_then(|i| meta.get(i + 1).copied())
                .ok_or_else(|| bad(&format!("missing {key}")))
        };
        let num = |key: &str| -> Result<f64> { field(key)?.parse().map_err(|_| bad(key)) };
        let int = |key: &str| -> Result<u64> { field(key)?.parse().map_err(|_| bad(key)) };
        let count = int("count")? as usize;
        let mut particles = Vec::with_capacity(count);
        let mut removed = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 5 {
                return Err(bad("particle line needs 5 fields"));
            }
            let f = |i: usize| t[i].parse::<f64>().map_err(|_| bad("number"));
            let attached = match t[3] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("attached flag")),
            };
            removed += usize::from(!attached);
            particles.push(Particle {
                pos: Vector2::new(f(0)?, f(1)?),
                lateral: f(4)?,
                threshold: f(2)?,
                attached,
                mass: 1.0 / count.max(1) as f64,
            });
        }
        if particles.len() != count {
            return Err(bad("particle count mismatch"));
        }
        Ok(Self {
            particles,
            noise: PerlinField::new(int("noise_seed")?, noise)?,
            spatial_seed: int("spatial_seed")?,
            f_min: num("f_min")?,
            f_max: num("f_max")?,
            removed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(noise_seed: u64, spatial_seed: u64) -> MaterialProfile {
        generate_profile(noise_seed, spatial_seed, &MaterialParams::default(), &VialGeometry::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = profile(1, 2);
        let b = profile(1, 2);
        assert_eq!(a.particles, b.particles);
        assert_ne!(a.particles, profile(1, 3).particles);
        let g = VialGeometry::default();
        assert_eq!(a.len(), 300);
        let total: f64 = a.particles.iter().map(|p| p.mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for p in &a.particles {
            assert!(p.attached);
            assert!((1.0..=8.0).contains(&p.threshold));
            assert!(p.pos.y >= g.window_z_min && p.pos.y <= g.window_z_max);
            assert_eq!(p.pos.x, g.wall_x);
        }
    }

    #[test]
    fn particles_respect_minimum_spacing() {
        let p = profile(4, 5);
        let min = MaterialParams::default().min_spacing;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let (a, b) = (&p.particles[i], &p.particles[j]);
                let d = (a.pos.y - b.pos.y).hypot(a.lateral - b.lateral);
                assert!(d >= min - 1e-15);
            }
        }
    }

    #[test]
    fn invalid_generation_rejected() {
        let g = VialGeometry::default();
        let p = |count, f_min, f_max| MaterialParams { count, f_min, f_max, ..Default::default() };
        assert!(generate_profile(0, 0, &p(300, 2.0, 2.0), &g).is_err());
        assert!(generate_profile(0, 0, &p(100, 1.0, 8.0), &g).is_err());
        assert!(generate_profile(0, 0, &p(600, 1.0, 8.0), &g).is_err());
        let crowded = MaterialParams { min_spacing: 0.01, ..Default::default() };
        assert!(generate_profile(0, 0, &crowded, &g).is_err());
    }

    #[test]
    fn zero_force_removes_nothing() {
        let mut p = profile(1, 1);
        let z = p.particles[10].pos;
        assert!(p.dislodge_at(&z, 0.0, 0.004).ids.is_empty());
        assert_eq!(p.removed_fraction(), 0.0);
    }

    #[test]
    fn full_force_sweep_removes_all() {
        let mut p = profile(1, 1);
        let g = VialGeometry::default();
        let mut z = g.window_z_min - 0.004;
        while z <= g.window_z_max + 0.004 {
            p.dislodge_at(&Vector2::new(g.wall_x, z), p.f_max, 0.0045);
            z += 0.001;
        }
        assert_eq!(p.removed_fraction(), 1.0);
    }

    #[test]
    fn midpoint_force_matches_brute_force_filter() {
        let mut p = profile(7, 8);
        let g = VialGeometry::default();
        let tip = Vector2::new(g.wall_x - 0.001, 0.045);
        let force = 4.5;
        let radius = 0.004;
        let expected: Vec<usize> = (0..p.len())
            .filter(|&i| {
                let q = &p.particles[i];
                q.threshold <= force && ((q.pos.x - tip.x).powi(2) + (q.pos.y - tip.y).powi(2)).sqrt() <= radius
            })
            .collect();
        assert!(!expected.is_empty());
        let out = p.dislodge_at(&tip, force, radius);
        assert_eq!(out.ids, expected);
        assert!((out.mass - expected.len() as f64 / 300.0).abs() < 1e-12);
        // already detached particles are not counted twice
        assert!(p.dislodge_at(&tip, force, radius).ids.is_empty());
    }

    #[test]
    fn removed_fraction_arithmetic() {
        let mut p = profile(2, 2);
        assert_eq!(p.removed_fraction(), 0.0);
        for id in 0..30 {
            p.detach(id);
        }
        assert_eq!(p.removed_fraction(), 0.1);
        for id in 0..p.len() {
            p.detach(id);
        }
        assert_eq!(p.removed_fraction(), 1.0);
    }

    #[test]
    fn single_octave_thresholds_span_range() {
        let params = MaterialParams {
            noise: NoiseParams { octaves: 1, ..Default::default() },
            ..Default::default()
        };
        let g = VialGeometry::default();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for seed in 0..334u64 {
            for q in generate_profile(seed, seed ^ 0x55, &params, &g).unwrap().particles {
                lo = lo.min(q.threshold);
                hi = hi.max(q.threshold);
            }
        }
        assert!((hi - lo) / 7.0 >= 0.9, "span [{lo}, {hi}]");
    }

    #[test]
    fn default_thresholds_cover_most_of_range() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for seed in 0..334u64 {
            for q in profile(seed, seed ^ 0x55).particles {
                lo = lo.min(q.threshold);
                hi = hi.max(q.threshold);
            }
        }
        assert!((hi - lo) / 7.0 >= 0.6, "span [{lo}, {hi}]");
    }

    #[test]
    fn residue_sums_to_remaining_material() {
        let mut p = profile(3, 3);
        let g = VialGeometry::default();
        let s = p.summarize_clusters(0, &g, None);
        let sum: f64 = s.clusters.iter().map(|c| c.residue_pct).sum();
        assert!((sum - 100.0).abs() < 1e-9);
        for id in (0..p.len()).step_by(3) {
            p.detach(id);
        }
        let s2 = p.summarize_clusters(0, &g, Some(&s));
        let sum: f64 = s2.clusters.iter().map(|c| c.residue_pct).sum();
        assert!((sum - 100.0 * (1.0 - p.removed_fraction())).abs() < 1e-9);
        assert!(s2.clusters[0].centroid.z >= s2.clusters[1].centroid.z);
        assert!(s2.clusters[1].centroid.z >= s2.clusters[2].centroid.z);
    }

    #[test]
    fn coincident_particles_form_one_cluster() {
        let mut p = profile(3, 3);
        let g = VialGeometry::default();
        for q in &mut p.particles {
            q.pos = Vector2::new(g.wall_x, 0.04);
        }
        let s = p.summarize_clusters(1, &g, None);
        assert_eq!(s.clusters[0].residue_pct, 100.0);
        assert_eq!(s.clusters[1].residue_pct, 0.0);
        assert_eq!(s.clusters[2].residue_pct, 0.0);
        assert!((s.clusters[0].centroid - Vector3::new(g.wall_x, 0.0, 0.04)).norm() < 1e-12);
    }

    #[test]
    fn separated_blobs_recover_blob_means() {
        let mut p = profile(3, 3);
        let g = VialGeometry::default();
        let centres = [0.02, 0.045, 0.07];
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for (i, q) in p.particles.iter_mut().enumerate() {
            let b = i % 3;
            let z = centres[b] + 0.0015 * ((i * 37 % 11) as f64 / 10.0 - 0.5);
            q.pos = Vector2::new(g.wall_x, z);
            sums[b] += z;
            counts[b] += 1;
        }
        let s = p.summarize_clusters(5, &g, None);
        for (slot, b) in [2usize, 1, 0].into_iter().enumerate() {
            let mean = sums[b] / counts[b] as f64;
            assert!((s.clusters[slot].centroid.z - mean).abs() < 1e-3);
        }
    }

    #[test]
    fn empty_slots_keep_previous_centroids() {
        let mut p = profile(3, 3);
        let g = VialGeometry::default();
        let first = p.summarize_clusters(0, &g, None);
        for id in 0..p.len() {
            p.detach(id);
        }
        let s = p.summarize_clusters(0, &g, Some(&first));
        for slot in 0..3 {
            assert_eq!(s.clusters[slot].residue_pct, 0.0);
            assert_eq!(s.clusters[slot].centroid, first.clusters[slot].centroid);
        }
    }

    #[test]
    fn text_round_trip() {
        let mut p = profile(9, 10);
        p.detach(4);
        p.detach(100);
        let text = p.to_text();
        let back = MaterialProfile::from_text(&text, NoiseParams::default()).unwrap();
        assert_eq!(back.particles, p.particles);
        assert_eq!(back.removed_fraction(), p.removed_fraction());
        assert_eq!(back.noise.permutation(), p.noise.permutation());
        assert!(MaterialProfile::from_text("nope", NoiseParams::default()).is_err());
    }
}
