//! The scraping MDP: observations, hybrid actions, reward, and episodes.
//!
//! Physics runs at `physics_hz`, the impedance controller at `control_hz`, and
//! the policy at `policy_hz`; each policy action is held zero-order for
//! `control_hz / policy_hz` control ticks.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3, Vector4};
use rand::Rng;

use crate::arm::{ArmModel, JointState, TaskState};
use crate::controller::{compose, embed_planar, ImpedanceParams, TaskHold, Wrench6, WrenchCommand, WrenchEstimator};
use crate::error::{invalid, Error, Result};
use crate::material::{generate_profile, ClusterSummary, MaterialParams, MaterialProfile, VialGeometry, CLUSTER_COUNT};
use crate::rng::{derive_seed, seeded_rng};

pub const OBS_DIM: usize = 25;
pub const ACT_DIM: usize = 3;
const CLUSTER_SEED_TAG: u64 = 0xC1;

/// Norm used for the interaction wrench in the efficiency reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrenchNorm {
    /// Euclidean norm over all six components (N and N·m mixed).
    Full,
    ForceOnly,
}

impl WrenchNorm {
    pub fn apply(self, w: &Wrench6) -> f64 {
        let n = match self {
            WrenchNorm::Full => 6,
            WrenchNorm::ForceOnly => 3,
        };
        w[..n].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactParams {
    pub wall_stiffness: f64,
    pub wall_damping: f64,
    pub friction_coefficient: f64,
    /// Velocity scale of the smoothed Coulomb law `−μN·tanh(ż / v_slip)`.
    pub slip_velocity: f64,
    /// Distance from a rim lip at which the tool shaft starts to feel contact.
    pub shaft_clearance: f64,
    pub shaft_stiffness: f64,
    pub floor_contact: bool,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            wall_stiffness: 5000.0,
            wall_damping: 50.0,
            friction_coefficient: 0.3,
            slip_velocity: 0.02,
            shaft_clearance: 0.002,
            shaft_stiffness: 5000.0,
            floor_contact: true,
        }
    }
}

/// Contact forces on the tool. `tip_wrench` is the external wrench on the robot
/// at the tip, `(f_x, f_z, τ_pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactForces {
    pub normal_force: f64,
    pub friction_force: f64,
    pub shaft_force: f64,
    pub floor_force: f64,
    pub tip_wrench: Vector3<f64>,
}

fn closest_on_segment(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

/// Penalty contact of the tool against the wall, the rim lips, and the floor.
pub fn wall_contact(tip: &TaskState, tool_length: f64, geometry: &VialGeometry, params: &ContactParams) -> ContactForces {
    let mut out = ContactForces::default();
    let (x, z) = (tip.position.x, tip.position.y);
    let (xdot, zdot) = (tip.velocity.x, tip.velocity.y);

    let depth = x - geometry.wall_x;
    if depth > 0.0 && z <= geometry.rim_z {
        let normal = (params.wall_stiffness * depth + params.wall_damping * xdot).max(0.0);
        let friction = -params.friction_coefficient * normal * (zdot / params.slip_velocity).tanh();
        out.normal_force = normal;
        out.friction_force = friction;
        out.tip_wrench += Vector3::new(-normal, friction, 0.0);
    }

    if params.floor_contact {
        let below = geometry.bottom_z - z;
        if below > 0.0 {
            let f = (params.wall_stiffness * below - params.wall_damping * zdot).max(0.0);
            out.floor_force = f;
            out.tip_wrench.y += f;
        }
    }

    let (s, c) = tip.pitch.sin_cos();
    let base = tip.position - tool_length * Vector2::new(c, s);
    for lip in [Vector2::new(geometry.wall_x, geometry.rim_z), Vector2::new(geometry.far_wall_x(), geometry.rim_z)] {
        let closest = closest_on_segment(&base, &tip.position, &lip);
        let away = closest - lip;
        let d = away.norm();
        if d >= params.shaft_clearance {
            continue;
        }
        let dir = if d > 0.0 { away / d } else { Vector2::new(-s, c) };
        let f = dir * params.shaft_stiffness * (params.shaft_clearance - d);
        let r = closest - tip.position;
        out.shaft_force += f.norm();
        out.tip_wrench += Vector3::new(f.x, f.y, r.x * f.y - r.y * f.x);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    /// Guard in the efficiency denominator, N.
    pub epsilon: f64,
    pub lambda_c: f64,
    pub milestone_levels: Vec<f64>,
    pub milestone_bonuses: Vec<f64>,
    pub wrench_norm: WrenchNorm,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            lambda_c: 0.01,
            milestone_levels: vec![0.5, 0.9],
            milestone_bonuses: vec![5.0, 10.0],
            wrench_norm: WrenchNorm::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub r_m: f64,
    pub r_e: f64,
    /// Contact penalty before weighting.
    pub r_c: f64,
    pub lambda_c: f64,
    pub total: f64,
}

/// `total = Δm / (‖F̄‖ + ε) + Σ bonuses crossed − λ_C · R_C`.
pub fn compute_reward(
    delta_m: f64,
    wrench_mean: &Wrench6,
    milestones_crossed: &[bool],
    shaft_contact_force_sum: f64,
    params: &RewardParams,
) -> Result<RewardBreakdown> {
    if !(delta_m >= 0.0) {
        return invalid(format!("removed mass must be non-negative, got {delta_m}"));
    }
    if !(shaft_contact_force_sum >= 0.0) {
        return invalid("contact penalty must be non-negative");
    }
    let r_m = if delta_m == 0.0 { 0.0 } else { delta_m / (params.wrench_norm.apply(wrench_mean) + params.epsilon) };
    let r_e = milestones_crossed
        .iter()
        .zip(&params.milestone_bonuses)
        .filter(|(&hit, _)| hit)
        .map(|(_, b)| b)
        .sum::<f64>();
    let r_c = shaft_contact_force_sum;
    Ok(RewardBreakdown { r_m, r_e, r_c, lambda_c: params.lambda_c, total: r_m + r_e - params.lambda_c * r_c })
}

/// The 25-value state. Layout: tip `(x, y, z)`, orientation `(roll, pitch, yaw)`,
/// speed, wrench `(F_x, F_y, F_z, T_x, T_y, T_z)`, then three `(c_x, c_y, c_z, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub tip_position: Vector3<f64>,
    pub tip_orientation: Vector3<f64>,
    pub speed: f64,
    pub wrench: Wrench6,
    pub clusters: ClusterSummary,
}

pub fn assemble_observation(task: &TaskState, wrench_estimate: &Wrench6, clusters: &ClusterSummary) -> Observation {
    Observation {
        tip_position: Vector3::new(task.position.x, 0.0, task.position.y),
        tip_orientation: Vector3::new(0.0, task.pitch, 0.0),
        speed: task.speed(),
        wrench: *wrench_estimate,
        clusters: *clusters,
    }
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut a = [0.0; OBS_DIM];
        a[0..3].copy_from_slice(self.tip_position.as_slice());
        a[3..6].copy_from_slice(self.tip_orientation.as_slice());
        a[6] = self.speed;
        a[7..13].copy_from_slice(&self.wrench);
        for (i, c) in self.clusters.clusters.iter().enumerate() {
            let o = 13 + 4 * i;
            a[o..o + 3].copy_from_slice(c.centroid.as_slice());
            a[o + 3] = c.residue_pct;
        }
        a
    }

    pub fn from_array(a: &[f64; OBS_DIM]) -> Self {
        let clusters = std::array::from_fn(|i| {
            let o = 13 + 4 * i;
            crate::material::ClusterEntry { centroid: Vector3::new(a[o], a[o + 1], a[o + 2]), residue_pct: a[o + 3] }
        });
        Self {
            tip_position: Vector3::new(a[0], a[1], a[2]),
            tip_orientation: Vector3::new(a[3], a[4], a[5]),
            speed: a[6],
            wrench: [a[7], a[8], a[9], a[10], a[11], a[12]],
            clusters: ClusterSummary { clusters },
        }
    }

    pub fn to_csv_line(&self) -> String {
        self.to_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad observation value {t:?}"))))
            .collect::<Result<_>>()?;
        let arr: [f64; OBS_DIM] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::Format(format!("observation needs {OBS_DIM} values, got {}", v.len())))?;
        Ok(Self::from_array(&arr))
    }
}

/// Per-component `(value − centre) / scale` used for the policy input.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationScaling {
    pub centre: [f64; OBS_DIM],
    pub scale: [f64; OBS_DIM],
}

impl ObservationScaling {
    /// Positions relative to the wall and window centre in units of 1 cm (x) and
    /// 3 cm (z); pitch relative to the nominal tool pitch over 0.2 rad; speed over
    /// 5 cm/s; forces over 5 N; torques over 1 N·m; residue over 33.3 %.
    pub fn for_geometry(geometry: &VialGeometry, nominal_pitch: f64) -> Self {
        let mid = 0.5 * (geometry.window_z_min + geometry.window_z_max);
        let mut centre = [0.0; OBS_DIM];
        let mut scale = [1.0; OBS_DIM];
        let mut set = |i: usize, c: f64, s: f64| {
            centre[i] = c;
            scale[i] = s;
        };
        set(0, geometry.wall_x, 0.01);
        set(2, mid, 0.03);
        set(4, nominal_pitch, 0.2);
        set(6, 0.0, 0.05);
        for i in 7..10 {
            set(i, 0.0, 5.0);
        }
        for k in 0..CLUSTER_COUNT {
            let o = 13 + 4 * k;
            set(o, geometry.wall_x, 0.01);
            set(o + 2, mid, 0.03);
            set(o + 3, 0.0, 100.0 / 3.0);
        }
        Self { centre, scale }
    }

    pub fn apply(&self, raw: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| (raw[i] - self.centre[i]) / self.scale[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub f_x_max: f64,
    pub tau_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self { f_x_max: 10.0, tau_max: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub f_x_cmd: f64,
    pub tau_y_cmd: f64,
    pub z_desired: f64,
}

impl Action {
    /// Maps a raw policy output in `[-1, 1]³` affinely onto the action bounds.
    pub fn from_raw(raw: &[f64], bounds: &ActionBounds, geometry: &VialGeometry) -> Result<Self> {
        if raw.len() != ACT_DIM || raw.iter().any(|v| !v.is_finite()) {
            return invalid(format!("raw action must be {ACT_DIM} finite values"));
        }
        let r = |i: usize| raw[i].clamp(-1.0, 1.0);
        Ok(Self {
            f_x_cmd: 0.5 * (r(0) + 1.0) * bounds.f_x_max,
            tau_y_cmd: r(1) * bounds.tau_max,
            z_desired: geometry.bottom_z + 0.5 * (r(2) + 1.0) * (geometry.rim_z - geometry.bottom_z),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.f_x_cmd.is_finite() && self.tau_y_cmd.is_finite() && self.z_desired.is_finite()
    }

    pub fn clamped(&self, bounds: &ActionBounds, geometry: &VialGeometry) -> Self {
        Self {
            f_x_cmd: self.f_x_cmd.clamp(0.0, bounds.f_x_max),
            tau_y_cmd: self.tau_y_cmd.clamp(-bounds.tau_max, bounds.tau_max),
            z_desired: self.z_desired.clamp(geometry.bottom_z, geometry.rim_z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub arm: ArmModel,
    pub gains: ImpedanceParams,
    pub geometry: VialGeometry,
    pub material: MaterialParams,
    pub contact: ContactParams,
    pub reward: RewardParams,
    pub bounds: ActionBounds,
    pub horizon: usize,
    pub policy_hz: u32,
    pub control_hz: u32,
    pub physics_hz: u32,
    pub capture_radius: f64,
    pub nominal_pitch: f64,
    /// Zero-command settling time after placing the tool, s.
    pub settle_time: f64,
    pub randomize_friction: bool,
    pub friction_range: (f64, f64),
    pub ik_guess: Vector4<f64>,
    pub normalize_observation: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arm: ArmModel::default(),
            gains: ImpedanceParams::default(),
            geometry: VialGeometry::default(),
            material: MaterialParams::default(),
            contact: ContactParams::default(),
            reward: RewardParams::default(),
            bounds: ActionBounds::default(),
            horizon: 300,
            policy_hz: 10,
            control_hz: 500,
            physics_hz: 1000,
            capture_radius: 0.004,
            nominal_pitch: -1.3,
            settle_time: 0.2,
            randomize_friction: true,
            friction_range: (0.02, 0.15),
            ik_guess: Vector4::new(0.9, -1.0, -0.6, -0.6),
            normalize_observation: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.policy_hz == 0 || self.control_hz == 0 || self.physics_hz == 0 {
            return cfg("rates must be positive".into());
        }
        if self.physics_hz % self.control_hz != 0 || self.control_hz % self.policy_hz != 0 {
            return cfg(format!(
                "physics_hz ({}) must be a multiple of control_hz ({}), which must be a multiple of policy_hz ({})",
                self.physics_hz, self.control_hz, self.policy_hz
            ));
        }
        if self.horizon == 0 {
            return cfg("horizon must be positive".into());
        }
        let r = &self.reward;
        if r.milestone_levels.len() != r.milestone_bonuses.len() {
            return cfg("milestone levels and bonuses must pair up".into());
        }
        if !(r.epsilon >= 0.0 && r.lambda_c >= 0.0) {
            return cfg("reward epsilon and lambda_c must be non-negative".into());
        }
        let (lo, hi) = self.friction_range;
        if !(lo >= 0.0 && lo <= hi) {
            return cfg(format!("friction range [{lo}, {hi}] is invalid"));
        }
        if !(self.capture_radius > 0.0 && self.bounds.f_x_max > 0.0 && self.bounds.tau_max >= 0.0) {
            return cfg("capture radius and action bounds must be positive".into());
        }
        self.arm.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.gains.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.geometry.validate()
    }

    pub fn physics_dt(&self) -> f64 {
        1.0 / self.physics_hz as f64
    }

    pub fn physics_per_control(&self) -> usize {
        (self.physics_hz / self.control_hz) as usize
    }

    pub fn control_per_policy(&self) -> usize {
        (self.control_hz / self.policy_hz) as usize
    }

    pub fn scaling(&self) -> ObservationScaling {
        ObservationScaling::for_geometry(&self.geometry, self.nominal_pitch)
    }

    pub fn tool_length(&self) -> f64 {
        self.arm.link_lengths[3]
    }
}

/// Seeds for one episode: hardness field, particle layout, and joint friction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeSeeds {
    pub noise: u64,
    pub spatial: u64,
    pub friction: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub delta_m: f64,
    pub removed_fraction: f64,
    pub mean_wrench: Wrench6,
    pub shaft_force_sum: f64,
    pub max_normal_force: f64,
    pub dynamics_failure: bool,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

pub const LOG_HEADER: &str =
    "step,f_x_cmd,tau_y_cmd,z_desired,F_x,F_z,T_y,delta_m,r_m,r_e,r_c,total,removed_fraction";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub action: Action,
    /// Last wrench estimate of the step: `(F_x, F_z, T_y)`.
    pub wrench: Vector3<f64>,
    pub delta_m: f64,
    pub reward: RewardBreakdown,
    pub removed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub rows: Vec<LogRow>,
}

impl EpisodeLog {
    pub fn total_return(&self) -> f64 {
        self.rows.iter().map(|r| r.reward.total).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.action.f_x_cmd,
                r.action.tau_y_cmd,
                r.action.z_desired,
                r.wrench.x,
                r.wrench.y,
                r.wrench.z,
                r.delta_m,
                r.reward.r_m,
                r.reward.r_e,
                r.reward.r_c,
                r.reward.total,
                r.removed_fraction
            );
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output; `lambda_c` is not logged and is supplied by the caller.
    pub fn from_csv(text: &str, lambda_c: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(Error::Format("episode log header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let t: Vec<&str> = line.split(',').collect();
            if t.len() != 13 {
                return Err(Error::Format(format!("episode log line {} has {} fields", n + 2, t.len())));
            }
            let f = |i: usize| -> Result<f64> {
                t[i].trim().parse().map_err(|_| Error::Format(format!("episode log line {}: bad number", n + 2)))
            };
            let step = t[0].trim().parse().map_err(|_| Error::Format(format!("episode log line {}: bad step", n + 2)))?;
            rows.push(LogRow {
                step,
                action: Action { f_x_cmd: f(1)?, tau_y_cmd: f(2)?, z_desired: f(3)? },
                wrench: Vector3::new(f(4)?, f(5)?, f(6)?),
                delta_m: f(7)?,
                reward: RewardBreakdown { r_m: f(8)?, r_e: f(9)?, r_c: f(10)?, lambda_c, total: f(11)? },
                removed_fraction: f(12)?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Default)]
struct TickTotals {
    wrench_sum: [f64; 6],
    shaft_sum: f64,
    max_normal: f64,
    ticks: usize,
    singular: bool,
}

/// One scraping episode. Single-threaded; independent instances share nothing.
#[derive(Debug, Clone)]
pub struct ScrapeEnv {
    cfg: EnvConfig,
    model: ArmModel,
    gains: ImpedanceParams,
    state: JointState,
    profile: MaterialProfile,
    hold: TaskHold,
    command: WrenchCommand,
    summary: ClusterSummary,
    estimator: WrenchEstimator,
    last_contact: ContactForces,
    milestones: Vec<bool>,
    cluster_seed: u64,
    steps: usize,
    done: bool,
    log: EpisodeLog,
}

impl ScrapeEnv {
    pub fn new(cfg: EnvConfig, seeds: &EpisodeSeeds) -> Result<Self> {
        cfg.validate()?;
        let profile = generate_profile(seeds.noise, seeds.spatial, &cfg.material, &cfg.geometry)?;
        let summary = profile.summarize_clusters(0, &cfg.geometry, None);
        let mut env = Self {
            model: cfg.arm.clone(),
            gains: cfg.gains.clone(),
            state: JointState::at_rest(Vector4::zeros()),
            profile,
            hold: TaskHold { x: cfg.geometry.wall_x, pitch: cfg.nominal_pitch },
            command: WrenchCommand::default(),
            summary,
            estimator: WrenchEstimator::default(),
            last_contact: ContactForces::default(),
            milestones: Vec::new(),
            cluster_seed: 0,
            steps: 0,
            done: true,
            log: EpisodeLog::default(),
            cfg,
        };
        env.reset(seeds)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ArmModel {
        &self.model
    }

    pub fn joint_state(&self) -> &JointState {
        &self.state
    }

    pub fn task_state(&self) -> TaskState {
        self.model.forward_kinematics(&self.state)
    }

    pub fn profile(&self) -> &MaterialProfile {
        &self.profile
    }

    pub fn last_contact(&self) -> &ContactForces {
        &self.last_contact
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Observation {
        assemble_observation(&self.task_state(), &self.estimator.last(), &self.summary)
    }

    /// Starts a fresh episode: new material, resampled friction, tool placed at
    /// the top of the window touching the wall, then a zero-command settle.
    pub fn reset(&mut self, seeds: &EpisodeSeeds) -> Result<Observation> {
        let cfg = &self.cfg;
        self.profile = generate_profile(seeds.noise, seeds.spatial, &cfg.material, &cfg.geometry)?;
        self.model = cfg.arm.clone();
        if cfg.randomize_friction {
            let mut rng = seeded_rng(seeds.friction);
            let (lo, hi) = cfg.friction_range;
            for b in &mut self.model.joint_viscous_friction {
                *b = if hi > lo { rng.random_range(lo..hi) } else { lo };
            }
        }
        let g = &cfg.geometry;
        let target = Vector3::new(g.wall_x, g.window_z_max, cfg.nominal_pitch);
        let q = self.model.inverse_kinematics(&target, &cfg.ik_guess)?;
        self.gains = cfg.gains.clone();
        self.gains.nullspace_posture = q;
        self.state = JointState::at_rest(q);
        self.hold = TaskHold { x: g.wall_x, pitch: cfg.nominal_pitch };
        self.command = WrenchCommand { z_setpoint: g.window_z_max, ..Default::default() };
        self.estimator = WrenchEstimator::default();
        self.milestones = vec![false; cfg.reward.milestone_levels.len()];
        self.cluster_seed = derive_seed(seeds.spatial, &[CLUSTER_SEED_TAG]);
        self.steps = 0;
        self.log = EpisodeLog::default();

        let settle_ticks = (self.cfg.settle_time * self.cfg.control_hz as f64).round() as usize;
        let mut totals = TickTotals::default();
        for _ in 0..settle_ticks {
            self.control_tick(false, &mut totals)?;
        }
        self.summary = self.profile.summarize_clusters(self.cluster_seed, &self.cfg.geometry, None);
        self.done = false;
        Ok(self.observation())
    }

    fn control_tick(&mut self, dislodge: bool, totals: &mut TickTotals) -> Result<()> {
        let ctrl = compose(&self.gains, &self.model, &self.state, &self.command, &self.hold);
        totals.singular |= ctrl.singular;
        let dt = self.cfg.physics_dt();
        let tool = self.cfg.tool_length();
        for sub in 0..self.cfg.physics_per_control() {
            let task = self.model.forward_kinematics(&self.state);
            let contact = wall_contact(&task, tool, &self.cfg.geometry, &self.cfg.contact);
            if sub == 0 {
                let tau_ext = self.model.jacobian(&self.state.q).transpose() * contact.tip_wrench;
                let w = self.estimator.update(&self.model, &self.state, &tau_ext);
                for (acc, v) in totals.wrench_sum.iter_mut().zip(w) {
                    *acc += v;
                }
                totals.shaft_sum += contact.shaft_force;
                totals.ticks += 1;
            }
            totals.max_normal = totals.max_normal.max(contact.normal_force);
            if dislodge {
                self.profile.dislodge_step(&task, contact.normal_force, self.cfg.capture_radius);
            }
            self.last_contact = contact;
            self.state = self.model.step(&self.state, &ctrl.total, &contact.tip_wrench, dt)?;
        }
        Ok(())
    }

    pub fn step_raw(&mut self, raw: &[f64]) -> Result<StepOutcome> {
        let action = Action::from_raw(raw, &self.cfg.bounds, &self.cfg.geometry)?;
        self.step(&action)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return invalid("episode is over; reset before stepping");
        }
        if !action.is_finite() {
            return invalid("action has non-finite entries");
        }
        let action = action.clamped(&self.cfg.bounds, &self.cfg.geometry);
        self.command = WrenchCommand {
            f_x: action.f_x_cmd,
            f_z: 0.0,
            tau_pitch: action.tau_y_cmd,
            z_setpoint: action.z_desired,
        };
        let before = self.profile.removed_count();
        let mut totals = TickTotals::default();
        let mut failure = false;
        for _ in 0..self.cfg.control_per_policy() {
            match self.control_tick(true, &mut totals) {
                Ok(()) => {}
                Err(Error::Dynamics(_)) => {
                    failure = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let n = self.profile.len() as f64;
        let delta_m = (self.profile.removed_count() - before) as f64 / n;
        let removed_fraction = self.profile.removed_fraction();
        let mean_wrench = totals.wrench_sum.map(|v| v / totals.ticks.max(1) as f64);

        let mut crossed = vec![false; self.milestones.len()];
        for (i, &level) in self.cfg.reward.milestone_levels.iter().enumerate() {
            if !self.milestones[i] && removed_fraction >= level {
                self.milestones[i] = true;
                crossed[i] = true;
            }
        }
        let reward = compute_reward(delta_m, &mean_wrench, &crossed, totals.shaft_sum, &self.cfg.reward)?;
        self.summary = self.profile.summarize_clusters(self.cluster_seed, &self.cfg.geometry, Some(&self.summary));
        self.steps += 1;
        let terminated = failure || self.profile.attached_count() == 0;
        let truncated = !terminated && self.steps >= self.cfg.horizon;
        self.done = terminated || truncated;

        let observation = self.observation();
        let w = observation.wrench;
        self.log.rows.push(LogRow {
            step: self.steps - 1,
            action,
            wrench: Vector3::new(w[0], w[2], w[4]),
            delta_m,
            reward,
            removed_fraction,
        });
        Ok(StepOutcome {
            observation,
            reward,
            terminated,
            truncated,
            info: StepInfo {
                delta_m,
                removed_fraction,
                mean_wrench,
                shaft_force_sum: totals.shaft_sum,
                max_normal_force: totals.max_normal,
                dynamics_failure: failure,
                singular: totals.singular || self.estimator.singular,
            },
        })
    }

    /// Observation as fed to the policy (normalized when configured).
    pub fn policy_input(&self, obs: &Observation) -> [f64; OBS_DIM] {
        let raw = obs.to_array();
        if self.cfg.normalize_observation {
            self.cfg.scaling().apply(&raw)
        } else {
            raw
        }
    }
}

/// Planar wrench embedding used by tests and the CLI when reporting contact.
pub fn contact_wrench6(c: &ContactForces) -> Wrench6 {
    embed_planar(&c.tip_wrench)
}
