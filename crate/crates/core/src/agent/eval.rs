//! Deterministic evaluation of policies and the baseline on fixed material profiles.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::baseline::{fixed_wrench_policy, BaselineConfig};
use super::policy::Policy;
use crate::env::{Action, EnvConfig, EpisodeLog, EpisodeSeeds, ScrapeEnv};
use crate::error::Result;
use crate::rng::derive_seed;
use crate::stats::{mean, relative_success, sign_test_one_sided};

const NOISE_TAG: u64 = 0x401;
const SPATIAL_TAG: u64 = 0x5A7;

/// Seeds of evaluation episode `episode` on material profile `profile_seed`.
/// The material depends only on the profile; friction varies per episode.
pub fn evaluation_seeds(profile_seed: u64, episode: u64, friction_seed: u64) -> EpisodeSeeds {
    EpisodeSeeds {
        noise: derive_seed(profile_seed, &[NOISE_TAG]),
        spatial: derive_seed(profile_seed, &[SPATIAL_TAG]),
        friction: derive_seed(friction_seed, &[profile_seed, episode]),
    }
}

/// What chooses the actions during an evaluation episode.
#[derive(Debug, Clone)]
pub enum Driver<'a> {
    /// Deterministic mode of a learned policy.
    Policy(&'a Policy),
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub removed_fraction: f64,
    pub success: bool,
    pub total_return: f64,
    /// Mean over policy steps of the step-mean wrench norm.
    pub mean_wrench: f64,
    pub steps: usize,
    pub log: EpisodeLog,
}

pub fn run_episode(env: &mut ScrapeEnv, seeds: &EpisodeSeeds, driver: &Driver) -> Result<EpisodeResult> {
    let mut obs = env.reset(seeds)?;
    let horizon = env.config().horizon;
    let norm = env.config().reward.wrench_norm;
    let mut wrench_sum = 0.0;
    let mut t = 0;
    loop {
        let action = match driver {
            Driver::Policy(p) => {
                let raw = p.deterministic_action(&env.policy_input(&obs))?;
                Action::from_raw(&raw, &env.config().bounds, &env.config().geometry)?
            }
            Driver::Baseline(b) => fixed_wrench_policy(t, b, &env.config().geometry, horizon),
        };
        let out = env.step(&action)?;
        wrench_sum += norm.apply(&out.info.mean_wrench);
        t += 1;
        obs = out.observation;
        if out.terminated || out.truncated {
            break;
        }
    }
    let removed_fraction = env.profile().removed_fraction();
    Ok(EpisodeResult {
        removed_fraction,
        success: env.profile().attached_count() == 0,
        total_return: env.log().total_return(),
        mean_wrench: wrench_sum / t as f64,
        steps: t,
        log: env.log().clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub profile_seed: u64,
    pub episode: u64,
    pub result: EpisodeResult,
}

pub const EVAL_HEADER: &str = "profile_seed,episode,removed_fraction,success,return,mean_wrench";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.profile_seed,
            r.episode,
            r.result.removed_fraction,
            u8::from(r.result.success),
            r.result.total_return,
            r.result.mean_wrench
        );
    }
    s
}

/// Runs `episodes` episodes on each profile, profiles in parallel when
/// `parallel`; rows come back ordered by (profile, episode).
pub fn evaluate(
    driver: &Driver,
    cfg: &EnvConfig,
    profiles: &[u64],
    episodes: usize,
    friction_seed: u64,
    parallel: bool,
) -> Result<Vec<EvalRow>> {
    let run_profile = |&p: &u64| -> Result<Vec<EvalRow>> {
        let first = evaluation_seeds(p, 0, friction_seed);
        let mut env = ScrapeEnv::new(cfg.clone(), &first)?;
        (0..episodes as u64)
            .map(|e| {
                let result = run_episode(&mut env, &evaluation_seeds(p, e, friction_seed), driver)?;
                Ok(EvalRow { profile_seed: p, episode: e, result })
            })
            .collect()
    };
    let per_profile: Vec<Result<Vec<EvalRow>>> = if parallel {
        profiles.par_iter().map(run_profile).collect()
    } else {
        profiles.iter().map(run_profile).collect()
    };
    let mut rows = Vec::new();
    for r in per_profile {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileComparison {
    pub profile_seed: u64,
    pub policy_mean: f64,
    pub baseline_mean: f64,
    /// `policy_mean − baseline_mean`, in removed-fraction units.
    pub improvement: f64,
    /// Mean removal of the full-force sweep on the same profile.
    pub oracle_mean: f64,
    pub policy_s_rel: f64,
    pub baseline_s_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub profiles: Vec<ProfileComparison>,
    pub mean_improvement: f64,
    pub wins: usize,
    pub sign_test_p: f64,
}

pub const COMPARE_HEADER: &str =
    "profile_seed,policy_mean_removed,baseline_mean_removed,improvement,oracle_mean_removed,policy_s_rel,baseline_s_rel";

impl ComparisonSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(COMPARE_HEADER);
        s.push('\n');
        for p in &self.profiles {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.profile_seed,
                p.policy_mean,
                p.baseline_mean,
                p.improvement,
                p.oracle_mean,
                p.policy_s_rel,
                p.baseline_s_rel
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        format!(
            "profiles {}\nmean_improvement {}\nwins {}\nsign_test_p {}\n",
            self.profiles.len(),
            self.mean_improvement,
            self.wins,
            self.sign_test_p
        )
    }
}

/// The upper-bound reference: the baseline descent at the maximum commanded force.
pub fn oracle_driver(cfg: &EnvConfig) -> BaselineConfig {
    BaselineConfig { f_x: cfg.bounds.f_x_max, ..Default::default() }
}

fn per_profile_means(rows: &[EvalRow], profiles: &[u64]) -> Vec<f64> {
    profiles
        .iter()
        .map(|&p| {
            let v: Vec<f64> =
                rows.iter().filter(|r| r.profile_seed == p).map(|r| r.result.removed_fraction).collect();
            mean(&v)
        })
        .collect()
}

/// Policy vs baseline on identical profile seeds, with the oracle sweep as
/// the relative-success denominator.
pub fn compare(
    policy: &Driver,
    baseline: &Driver,
    cfg: &EnvConfig,
    profiles: &[u64],
    episodes: usize,
    friction_seed: u64,
    parallel: bool,
) -> Result<ComparisonSummary> {
    let pol = evaluate(policy, cfg, profiles, episodes, friction_seed, parallel)?;
    let base = evaluate(baseline, cfg, profiles, episodes, friction_seed, parallel)?;
    let oracle = evaluate(&Driver::Baseline(oracle_driver(cfg)), cfg, profiles, episodes, friction_seed, parallel)?;
    let (pm, bm, om) =
        (per_profile_means(&pol, profiles), per_profile_means(&base, profiles), per_profile_means(&oracle, profiles));
    let rows: Vec<ProfileComparison> = profiles
        .iter()
        .enumerate()
        .map(|(i, &p)| ProfileComparison {
            profile_seed: p,
            policy_mean: pm[i],
            baseline_mean: bm[i],
            improvement: pm[i] - bm[i],
            oracle_mean: om[i],
            policy_s_rel: relative_success(pm[i], om[i]),
            baseline_s_rel: relative_success(bm[i], om[i]),
        })
        .collect();
    let wins = rows.iter().filter(|r| r.improvement > 0.0).count();
    let improvements: Vec<f64> = rows.iter().map(|r| r.improvement).collect();
    Ok(ComparisonSummary {
        mean_improvement: mean(&improvements),
        wins,
        sign_test_p: sign_test_one_sided(wins, rows.len()),
        profiles: rows,
    })
}
