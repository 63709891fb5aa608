//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every key
//! has a default; unknown or repeated keys are errors. [`RunConfig::to_text`]
//! writes the fully resolved configuration in the same format, and reading it
//! back gives an identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::agent::baseline::BaselineConfig;
use crate::agent::ppo::PpoConfig;
use crate::agent::tasks::SeedBases;
use crate::agent::train::TrainConfig;
use crate::env::{EnvConfig, WrenchNorm};
use crate::error::{Error, Result};
use crate::perception::evaluation::PerceptionEvalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    /// Base of the training hardness fields.
    pub noise_seed: u64,
    /// Base of the training particle layouts.
    pub spatial_seed: u64,
    /// Network initialization, exploration and minibatch order.
    pub policy_seed: u64,
    /// Joint friction, in training and evaluation.
    pub friction_seed: u64,
    /// Synthetic perception scenes.
    pub render_seed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { noise_seed: 1, spatial_seed: 2, policy_seed: 3, friction_seed: 4, render_seed: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub baseline: BaselineConfig,
    /// Geometry, material and seed are taken from the rest of the configuration.
    pub perception: PerceptionEvalConfig,
    pub seeds: Seeds,
    pub workers: usize,
    pub checkpoint_every: usize,
    /// Held-out material profiles for `eval` and `compare`.
    pub eval_profiles: Vec<u64>,
    pub eval_episodes: usize,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            baseline: BaselineConfig::default(),
            perception: PerceptionEvalConfig::default(),
            seeds: Seeds::default(),
            workers: 1,
            checkpoint_every: 0,
            eval_profiles: vec![1001, 1002, 1003, 1004, 1005],
            eval_episodes: 20,
            output_dir: "runs".into(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render_value(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{s:?}: {e}"))
            }
            fn render_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64, usize, u32, u64, bool, String);

fn parse_list<T: ConfigValue>(s: &str) -> std::result::Result<Vec<T>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| T::parse_value(p.trim())).collect()
}

fn render_list<T: ConfigValue>(v: &[T]) -> String {
    v.iter().map(ConfigValue::render_value).collect::<Vec<_>>().join(",")
}

fn fixed<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = parse_list(s)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} values, got {}", v.len()))
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        parse_list(s)
    }
    fn render_value(&self) -> String {
        render_list(self)
    }
}

impl ConfigValue for [f64; 4] {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        fixed::<4>(s)
    }
    fn render_value(&self) -> String {
        render_list(self)
    }
}

impl ConfigValue for (f64, f64) {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let [a, b] = fixed::<2>(s)?;
        Ok((a, b))
    }
    fn render_value(&self) -> String {
        render_list(&[self.0, self.1])
    }
}

impl ConfigValue for Vector3<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(Vector3::from(fixed::<3>(s)?))
    }
    fn render_value(&self) -> String {
        render_list(self.as_slice())
    }
}

impl ConfigValue for Vector4<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(Vector4::from(fixed::<4>(s)?))
    }
    fn render_value(&self) -> String {
        render_list(self.as_slice())
    }
}

impl ConfigValue for WrenchNorm {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(WrenchNorm::Full),
            "force_only" => Ok(WrenchNorm::ForceOnly),
            _ => Err(format!("{s:?} is not one of full, force_only")),
        }
    }
    fn render_value(&self) -> String {
        match self {
            WrenchNorm::Full => "full".into(),
            WrenchNorm::ForceOnly => "force_only".into(),
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every configuration key, in the order written by [`RunConfig::to_text`].
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            /// Sets one key from its text value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value)
                            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.render_value())),*]
            }
        }
    };
}

config_keys! {
    "seed.noise" => seeds.noise_seed;
    "seed.spatial" => seeds.spatial_seed;
    "seed.policy" => seeds.policy_seed;
    "seed.friction" => seeds.friction_seed;
    "seed.render" => seeds.render_seed;
    "output_dir" => output_dir;
    "workers" => workers;

    "arm.link_lengths" => env.arm.link_lengths;
    "arm.link_masses" => env.arm.link_masses;
    "arm.gravity" => env.arm.gravity;
    "arm.joint_friction" => env.arm.joint_viscous_friction;

    "controller.stiffness" => env.gains.stiffness;
    "controller.damping" => env.gains.damping;
    "controller.nullspace_stiffness" => env.gains.nullspace_stiffness;
    "controller.nullspace_damping" => env.gains.nullspace_damping;

    "vial.wall_x" => env.geometry.wall_x;
    "vial.window_z_min" => env.geometry.window_z_min;
    "vial.window_z_max" => env.geometry.window_z_max;
    "vial.bottom_z" => env.geometry.bottom_z;
    "vial.rim_z" => env.geometry.rim_z;
    "vial.inner_diameter" => env.geometry.inner_diameter;
    "vial.strip_width" => env.geometry.strip_width;

    "material.count" => env.material.count;
    "material.f_min" => env.material.f_min;
    "material.f_max" => env.material.f_max;
    "material.min_spacing" => env.material.min_spacing;
    "noise.frequency" => env.material.noise.frequency;
    "noise.octaves" => env.material.noise.octaves;
    "noise.persistence" => env.material.noise.persistence;

    "contact.wall_stiffness" => env.contact.wall_stiffness;
    "contact.wall_damping" => env.contact.wall_damping;
    "contact.friction_coefficient" => env.contact.friction_coefficient;
    "contact.slip_velocity" => env.contact.slip_velocity;
    "contact.shaft_clearance" => env.contact.shaft_clearance;
    "contact.shaft_stiffness" => env.contact.shaft_stiffness;
    "contact.floor" => env.contact.floor_contact;

    "reward.epsilon" => env.reward.epsilon;
    "reward.lambda_c" => env.reward.lambda_c;
    "reward.milestone_levels" => env.reward.milestone_levels;
    "reward.milestone_bonuses" => env.reward.milestone_bonuses;
    "reward.wrench_norm" => env.reward.wrench_norm;

    "action.f_x_max" => env.bounds.f_x_max;
    "action.tau_max" => env.bounds.tau_max;

    "env.horizon" => env.horizon;
    "env.policy_hz" => env.policy_hz;
    "env.control_hz" => env.control_hz;
    "env.physics_hz" => env.physics_hz;
    "env.capture_radius" => env.capture_radius;
    "env.nominal_pitch" => env.nominal_pitch;
    "env.settle_time" => env.settle_time;
    "env.randomize_friction" => env.randomize_friction;
    "env.friction_range" => env.friction_range;
    "env.ik_guess" => env.ik_guess;
    "env.normalize_observation" => env.normalize_observation;

    "ppo.clip_epsilon" => ppo.clip_epsilon;
    "ppo.gamma" => ppo.gamma;
    "ppo.gae_lambda" => ppo.gae_lambda;
    "ppo.learning_rate" => ppo.learning_rate;
    "ppo.epochs_per_update" => ppo.epochs_per_update;
    "ppo.minibatch_size" => ppo.minibatch_size;
    "ppo.rollout_steps" => ppo.rollout_steps;
    "ppo.value_coef" => ppo.value_coef;
    "ppo.entropy_coef" => ppo.entropy_coef;
    "ppo.max_grad_norm" => ppo.max_grad_norm;
    "ppo.total_updates" => ppo.total_updates;
    "ppo.adam_beta1" => ppo.adam_beta1;
    "ppo.adam_beta2" => ppo.adam_beta2;
    "ppo.adam_epsilon" => ppo.adam_epsilon;
    "ppo.hidden" => ppo.hidden;
    "ppo.init_log_std" => ppo.init_log_std;
    "train.checkpoint_every" => checkpoint_every;

    "baseline.f_x" => baseline.f_x;
    "baseline.tau_y" => baseline.tau_y;
    "baseline.upward_sweep" => baseline.upward_sweep;
    "baseline.sweep_split" => baseline.sweep_split;
    "baseline.sweep_f_x" => baseline.sweep_f_x;

    "eval.profiles" => eval_profiles;
    "eval.episodes" => eval_episodes;

    "perception.scenes" => perception.scenes;
    "perception.max_removed" => perception.max_removed;
    "perception.tool_pitch" => perception.tool_pitch;
    "perception.tool_half_width" => perception.tool_half_width;
    "perception.tool_length" => perception.tool_length;
    "perception.tool_standoff" => perception.tool_standoff;
    "perception.particle_radius" => perception.scene.particle_radius;
    "perception.back_count" => perception.scene.back_count;
    "perception.material_opacity" => perception.scene.material_opacity;
    "perception.depth_noise_std" => perception.scene.depth_noise_std;
    "perception.artifact_rate" => perception.scene.artifact_rate;
    "perception.depth_ratio" => perception.pipeline.depth_ratio;
    "perception.roi_top" => perception.pipeline.roi.top;
    "perception.roi_bottom" => perception.pipeline.roi.bottom;
    "perception.roi_left" => perception.pipeline.roi.left;
    "perception.roi_right" => perception.pipeline.roi.right;
    "perception.tool_clusters" => perception.pipeline.tool_filter.clusters;
    "perception.hue_min" => perception.pipeline.tool_filter.hue_min;
    "perception.hue_max" => perception.pipeline.tool_filter.hue_max;
    "perception.saturation_floor" => perception.pipeline.tool_filter.saturation_floor;
}

impl RunConfig {
    /// Defaults overridden by the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.perception.scene.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.perception.pipeline.depth_ratio) {
            return Err(Error::Config("perception.depth_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            ppo: self.ppo.clone(),
            seed: self.seeds.policy_seed,
            workers: self.workers,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn seed_bases(&self) -> SeedBases {
        SeedBases { noise: self.seeds.noise_seed, spatial: self.seeds.spatial_seed, friction: self.seeds.friction_seed }
    }

    pub fn perception_config(&self) -> PerceptionEvalConfig {
        PerceptionEvalConfig {
            seed: self.seeds.render_seed,
            geometry: self.env.geometry.clone(),
            material: self.env.material.clone(),
            ..self.perception.clone()
        }
    }
}
