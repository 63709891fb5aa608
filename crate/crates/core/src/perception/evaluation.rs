//! Pixelwise evaluation of the pipeline on rendered scenes under three
//! conditions: tool present, tool absent, and tool present with filtering.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::Rng;
use rayon::prelude::*;

use super::metrics::{evaluate, MetricsReport, METRICS_FIELDS};
use super::pipeline::{run_pipeline, PipelineParams};
use super::render::{default_camera, render, SceneParams, SyntheticScene, ToolPose};
use crate::error::{invalid, Result};
use crate::material::{generate_profile, MaterialParams, VialGeometry};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionEvalConfig {
    pub scenes: usize,
    pub seed: u64,
    pub geometry: VialGeometry,
    pub material: MaterialParams,
    pub scene: SceneParams,
    pub pipeline: PipelineParams,
    /// Each scene has a uniform fraction in `[0, max_removed]` of particles removed.
    pub max_removed: f64,
    pub tool_pitch: f64,
    pub tool_half_width: f64,
    pub tool_length: f64,
    /// Gap between blade and scraped wall.
    pub tool_standoff: f64,
}

impl Default for PerceptionEvalConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            seed: 0,
            geometry: VialGeometry::default(),
            material: MaterialParams::default(),
            scene: SceneParams::default(),
            pipeline: PipelineParams::default(),
            max_removed: 0.6,
            tool_pitch: -1.3,
            tool_half_width: 3e-3,
            tool_length: 0.12,
            tool_standoff: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Spatula,
    NoSpatula,
    FilteredSpatula,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Spatula, Condition::NoSpatula, Condition::FilteredSpatula];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Spatula => "spatula",
            Condition::NoSpatula => "no_spatula",
            Condition::FilteredSpatula => "filtered_spatula",
        }
    }
}

/// Scene `index`: a material profile with part of it scraped away and,
/// optionally, the blade resting at a random height in the window.
pub fn evaluation_scene(cfg: &PerceptionEvalConfig, index: u64, with_tool: bool) -> Result<SyntheticScene> {
    if !(0.0..=1.0).contains(&cfg.max_removed) {
        return invalid("max_removed must lie in [0, 1]");
    }
    let base = derive_seed(cfg.seed, &[index]);
    let g = &cfg.geometry;
    let mut profile = generate_profile(derive_seed(base, &[1]), derive_seed(base, &[2]), &cfg.material, g)?;
    let mut rng = seeded_rng(derive_seed(base, &[3]));
    let removed = rng.random_range(0.0..=cfg.max_removed);
    for id in 0..profile.len() {
        if rng.random::<f64>() < removed {
            profile.detach(id);
        }
    }
    let tip_z = rng.random_range(g.window_z_min..=g.window_z_max);
    let tool = with_tool.then(|| ToolPose {
        tip: Vector2::new(g.wall_x - cfg.tool_standoff, tip_z),
        pitch: cfg.tool_pitch,
        half_width: cfg.tool_half_width,
        length: cfg.tool_length,
    });
    SyntheticScene::from_profile(&profile, g, tool, cfg.scene.clone(), derive_seed(base, &[4]))
}

/// Pipeline metrics over the ROI against the rendered ground truth.
pub fn scene_metrics(cfg: &PerceptionEvalConfig, index: u64, condition: Condition) -> Result<MetricsReport> {
    let scene = evaluation_scene(cfg, index, condition != Condition::NoSpatula)?;
    let r = render(&scene, &default_camera(&cfg.geometry))?;
    let bbox = r.bbox.ok_or_else(|| crate::Error::InvalidArgument("vial not in view".into()))?;
    let params = PipelineParams { filter_tool: condition == Condition::FilteredSpatula, ..cfg.pipeline.clone() };
    let out = run_pipeline(&r.frame, &r.vial, &bbox, &params, derive_seed(cfg.seed, &[index, 0x9E]))?;
    let w = r.frame.width();
    evaluate(&out.roi_values(&out.material, w), &out.roi_values(&r.material, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub scene: u64,
    pub metrics: [MetricsReport; 3],
}

pub fn perception_eval(cfg: &PerceptionEvalConfig, parallel: bool) -> Result<Vec<SceneResult>> {
    let one = |i: u64| -> Result<SceneResult> {
        let mut m = Vec::with_capacity(3);
        for c in Condition::ALL {
            m.push(scene_metrics(cfg, i, c)?);
        }
        Ok(SceneResult { scene: i, metrics: [m[0], m[1], m[2]] })
    };
    let ids: Vec<u64> = (0..cfg.scenes as u64).collect();
    if parallel {
        ids.par_iter().map(|&i| one(i)).collect()
    } else {
        ids.iter().map(|&i| one(i)).collect()
    }
}

pub fn condition_means(results: &[SceneResult]) -> [MetricsReport; 3] {
    let pick = |c: usize| results.iter().map(|r| r.metrics[c]).collect::<Vec<_>>();
    [MetricsReport::mean(&pick(0)), MetricsReport::mean(&pick(1)), MetricsReport::mean(&pick(2))]
}

/// One row per scene and condition, then a `mean` row per condition.
pub fn metrics_csv(results: &[SceneResult]) -> String {
    let mut s = format!("scene,condition,{METRICS_FIELDS}\n");
    for r in results {
        for (c, m) in Condition::ALL.iter().zip(&r.metrics) {
            let _ = writeln!(s, "{},{},{}", r.scene, c.name(), m.csv_fields());
        }
    }
    if !results.is_empty() {
        for (c, m) in Condition::ALL.iter().zip(condition_means(results)) {
            let _ = writeln!(s, "mean,{},{}", c.name(), m.csv_fields());
        }
    }
    s
}
