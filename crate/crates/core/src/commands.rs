//! Batch commands behind the command-line front end. Each writes into an
//! output directory that also receives `config.resolved`, `command.txt` and
//! `FORMAT_VERSION`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::eval::{compare, eval_csv, evaluate, evaluation_seeds, ComparisonSummary, Driver, EvalRow};
use crate::agent::policy::Policy;
use crate::agent::tasks::ScrapeTask;
use crate::agent::train::{curve_csv, train, TrainOutcome};
use crate::config::RunConfig;
use crate::env::{EpisodeLog, ScrapeEnv};
use crate::error::{Error, Result};
use crate::material::{MaterialProfile, VialGeometry};
use crate::perception::evaluation::{metrics_csv, perception_eval, SceneResult};
use crate::perception::frame::write_ppm;

pub const FORMAT_VERSION: &str = "1";

/// Where a command writes and how it was invoked.
#[derive(Debug, Clone)]
pub struct Invocation<'a> {
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub command_line: &'a str,
}

impl Invocation<'_> {
    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(self.out)?;
        fs::write(self.out.join("config.resolved"), self.config.to_text())?;
        fs::write(self.out.join("command.txt"), format!("{}\n", self.command_line))?;
        fs::write(self.out.join("FORMAT_VERSION"), format!("{FORMAT_VERSION}\n"))?;
        Ok(())
    }

    fn parallel(&self) -> bool {
        self.config.workers > 1
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Trains a policy; writes `checkpoint.bin`, intermediate checkpoints under
/// `checkpoints/`, `learning_curve.csv` and `losses.csv`.
pub fn cmd_train(inv: &Invocation) -> Result<TrainOutcome> {
    inv.prepare()?;
    let cfg = inv.config;
    let ckpt_dir = inv.out.join("checkpoints");
    let final_updates = cfg.ppo.total_updates;
    let out = inv.out.to_path_buf();
    let outcome = train(
        |_| ScrapeTask::new(cfg.env.clone(), cfg.seed_bases()),
        &cfg.train_config(),
        |update, agent| {
            if update == final_updates {
                agent.policy.save(&out.join(CHECKPOINT_FILE))
            } else {
                fs::create_dir_all(&ckpt_dir)?;
                agent.policy.save(&ckpt_dir.join(format!("update_{update:05}.bin")))
            }
        },
    )?;
    fs::write(inv.out.join("learning_curve.csv"), curve_csv(&outcome.curve))?;
    let mut losses = String::from("update,policy_loss,value_loss,entropy,total,clip_fraction,approx_kl,grad_norm\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        losses.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i + 1,
            l.policy_loss,
            l.value_loss,
            l.entropy,
            l.total,
            l.clip_fraction,
            l.approx_kl,
            l.grad_norm
        ));
    }
    fs::write(inv.out.join("losses.csv"), losses)?;
    Ok(outcome)
}

fn load_policy(path: &Path) -> Result<Policy> {
    let p = Policy::load(path)?;
    if p.net.input_dim() != crate::env::OBS_DIM || p.net.output_dim() != crate::env::ACT_DIM {
        return Err(Error::Format(format!(
            "checkpoint maps {} -> {}, expected {} -> {}",
            p.net.input_dim(),
            p.net.output_dim(),
            crate::env::OBS_DIM,
            crate::env::ACT_DIM
        )));
    }
    Ok(p)
}

/// Deterministic-mode evaluation on the configured profiles; writes
/// `eval.csv` and the log of each profile's first episode under `logs/`.
pub fn cmd_eval(inv: &Invocation, checkpoint: &Path) -> Result<Vec<EvalRow>> {
    let policy = load_policy(checkpoint)?;
    inv.prepare()?;
    let cfg = inv.config;
    let rows = evaluate(
        &Driver::Policy(&policy),
        &cfg.env,
        &cfg.eval_profiles,
        cfg.eval_episodes,
        cfg.seeds.friction_seed,
        inv.parallel(),
    )?;
    fs::write(inv.out.join("eval.csv"), eval_csv(&rows))?;
    let logs = inv.out.join("logs");
    for r in rows.iter().filter(|r| r.episode == 0) {
        fs::create_dir_all(&logs)?;
        fs::write(log_path(&logs, r.profile_seed, r.episode), r.result.log.to_csv())?;
    }
    Ok(rows)
}

pub fn log_path(dir: &Path, profile_seed: u64, episode: u64) -> PathBuf {
    dir.join(format!("profile_{profile_seed}_episode_{episode}.csv"))
}

/// Policy against the configured baseline on identical profiles; writes
/// `compare.csv` and `summary.txt`.
pub fn cmd_compare(inv: &Invocation, checkpoint: &Path) -> Result<ComparisonSummary> {
    let policy = load_policy(checkpoint)?;
    inv.prepare()?;
    let cfg = inv.config;
    let summary = compare(
        &Driver::Policy(&policy),
        &Driver::Baseline(cfg.baseline.clone()),
        &cfg.env,
        &cfg.eval_profiles,
        cfg.eval_episodes,
        cfg.seeds.friction_seed,
        inv.parallel(),
    )?;
    fs::write(inv.out.join("compare.csv"), summary.to_csv())?;
    fs::write(inv.out.join("summary.txt"), summary.summary_text())?;
    Ok(summary)
}

/// Writes `perception_metrics.csv`.
pub fn cmd_perception_eval(inv: &Invocation) -> Result<Vec<SceneResult>> {
    inv.prepare()?;
    let res = perception_eval(&inv.config.perception_config(), inv.parallel())?;
    fs::write(inv.out.join("perception_metrics.csv"), metrics_csv(&res))?;
    Ok(res)
}

pub const REMOVED_RGB: [u8; 3] = [235, 235, 235];
pub const BACKGROUND_RGB: [u8; 3] = [30, 30, 34];
pub const TIP_RGB: [u8; 3] = [36, 178, 36];
const MARGIN: usize = 6;

/// Top-down map of the wall strip: one pixel per particle centre (with a
/// dimmer cross around it), attached particles shaded by hardness from yellow
/// (soft) to red (hard), detached ones in [`REMOVED_RGB`]. The tip height is
/// marked in the left and right margins. The scale is chosen so that no two
/// particle centres share a pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WallMap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
    /// Pixels per metre.
    pub scale: f64,
}

pub fn wall_map_scale(profile: &MaterialProfile) -> f64 {
    let mut dmin = f64::INFINITY;
    let ps = &profile.particles;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            if ps[j].pos.y - ps[i].pos.y >= dmin {
                break;
            }
            dmin = dmin.min((ps[j].pos.y - ps[i].pos.y).hypot(ps[j].lateral - ps[i].lateral));
        }
    }
    // 1.5 px between the closest centres, between 5 and 50 px per mm
    (1.5 / dmin).clamp(5_000.0, 50_000.0)
}

/// Pixel of a particle centre on a wall map.
pub fn wall_map_pixel(geometry: &VialGeometry, scale: f64, lateral: f64, z: f64) -> (usize, usize) {
    let x = MARGIN as f64 + (lateral + 0.5 * geometry.strip_width) * scale;
    let y = MARGIN as f64 + (geometry.window_z_max - z) * scale;
    (x.max(0.0) as usize, y.max(0.0) as usize)
}

pub fn wall_map(profile: &MaterialProfile, geometry: &VialGeometry, tip_z: f64, scale: f64) -> WallMap {
    let width = (geometry.strip_width * scale).ceil() as usize + 2 * MARGIN + 1;
    let height = (geometry.window_height() * scale).ceil() as usize + 2 * MARGIN + 1;
    let mut rgb = vec![BACKGROUND_RGB; width * height];
    let span = (profile.f_max - profile.f_min).max(f64::MIN_POSITIVE);
    let colour = |p: &crate::material::Particle| {
        if !p.attached {
            return REMOVED_RGB;
        }
        let t = ((p.threshold - profile.f_min) / span).clamp(0.0, 1.0);
        [(250.0 - 60.0 * t) as u8, (220.0 * (1.0 - t)) as u8, 40]
    };
    let centres: Vec<(usize, usize)> =
        profile.particles.iter().map(|p| wall_map_pixel(geometry, scale, p.lateral, p.pos.y)).collect();
    for (p, &(x, y)) in profile.particles.iter().zip(&centres) {
        let c = colour(p).map(|v| (v as f64 * 0.6) as u8);
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (xx, yy) = (x as i64 + dx, y as i64 + dy);
            if xx >= 0 && yy >= 0 && (xx as usize) < width && (yy as usize) < height {
                rgb[yy as usize * width + xx as usize] = c;
            }
        }
    }
    for (p, &(x, y)) in profile.particles.iter().zip(&centres) {
        if x < width && y < height {
            rgb[y * width + x] = colour(p);
        }
    }
    let (_, ty) = wall_map_pixel(geometry, scale, 0.0, tip_z.clamp(geometry.window_z_min, geometry.window_z_max));
    if ty < height {
        for x in (0..MARGIN - 1).chain(width - MARGIN + 1..width) {
            rgb[ty * width + x] = TIP_RGB;
        }
    }
    WallMap { width, height, rgb, scale }
}

/// Replays an evaluation episode log on profile `profile_seed`, episode
/// `episode`, and writes `frame_NNNNN.ppm` for the initial state and after
/// every step, plus `profile_initial.txt` and `profile_final.txt`. Returns
/// the number of frames. The replay must reproduce the log's removal column.
pub fn cmd_render(inv: &Invocation, log_file: &Path, profile_seed: u64, episode: u64) -> Result<usize> {
    let cfg = inv.config;
    let text = fs::read_to_string(log_file)?;
    let log = EpisodeLog::from_csv(&text, cfg.env.reward.lambda_c)?;
    if log.rows.len() > cfg.env.horizon {
        return Err(Error::Format(format!("log has {} rows, horizon is {}", log.rows.len(), cfg.env.horizon)));
    }
    inv.prepare()?;
    let seeds = evaluation_seeds(profile_seed, episode, cfg.seeds.friction_seed);
    let mut env = ScrapeEnv::new(cfg.env.clone(), &seeds)?;
    let g = cfg.env.geometry.clone();
    let scale = wall_map_scale(env.profile());
    let write_frame = |k: usize, env: &ScrapeEnv| -> Result<()> {
        let m = wall_map(env.profile(), &g, env.task_state().position.y, scale);
        let mut f = fs::File::create(inv.out.join(format!("frame_{k:05}.ppm")))?;
        write_ppm(&mut f, m.width, m.height, &m.rgb)
    };
    fs::write(inv.out.join("profile_initial.txt"), env.profile().to_text())?;
    write_frame(0, &env)?;
    for (k, row) in log.rows.iter().enumerate() {
        let out = env.step(&row.action)?;
        let removed = out.info.removed_fraction;
        if (removed - row.removed_fraction).abs() > 1e-12 {
            return Err(Error::Format(format!(
                "log step {} records removed fraction {}, replay gives {removed}",
                row.step, row.removed_fraction
            )));
        }
        write_frame(k + 1, &env)?;
    }
    fs::write(inv.out.join("profile_final.txt"), env.profile().to_text())?;
    Ok(log.rows.len() + 1)
}
