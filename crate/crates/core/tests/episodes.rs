use scrapelab::agent::baseline::{fixed_wrench_policy, BaselineConfig};
use scrapelab::agent::eval::{evaluation_seeds, oracle_driver, run_episode, Driver};
use scrapelab::agent::ppo::PpoConfig;
use scrapelab::agent::tasks::{ScrapeTask, SeedBases};
use scrapelab::agent::train::{curve_csv, train, TrainConfig};
use scrapelab::env::{EnvConfig, EpisodeLog, EpisodeSeeds, ScrapeEnv};

fn short_env() -> EnvConfig {
    EnvConfig { horizon: 40, ..EnvConfig::default() }
}

fn drive(env: &mut ScrapeEnv, steps: usize) {
    let cfg = BaselineConfig::default();
    for t in 0..steps {
        let a = fixed_wrench_policy(t, &cfg, &env.config().geometry, env.config().horizon);
        if env.step(&a).unwrap().terminated {
            break;
        }
    }
}

#[test]
fn identical_seeds_and_actions_replay_identically() {
    let seeds = EpisodeSeeds { noise: 1, spatial: 2, friction: 3 };
    let mut a = ScrapeEnv::new(short_env(), &seeds).unwrap();
    let mut b = ScrapeEnv::new(short_env(), &seeds).unwrap();
    drive(&mut a, 40);
    drive(&mut b, 40);
    assert_eq!(a.log().to_csv(), b.log().to_csv());
    assert_eq!(a.joint_state(), b.joint_state());
    assert_eq!(a.profile().to_text(), b.profile().to_text());
}

#[test]
fn reset_matches_a_fresh_environment() {
    let first = EpisodeSeeds { noise: 10, spatial: 11, friction: 12 };
    let second = EpisodeSeeds { noise: 20, spatial: 21, friction: 22 };
    let mut reused = ScrapeEnv::new(short_env(), &first).unwrap();
    drive(&mut reused, 15);
    let obs = reused.reset(&second).unwrap();
    let fresh = ScrapeEnv::new(short_env(), &second).unwrap();
    assert_eq!(obs, fresh.observation());
    assert_eq!(reused.joint_state(), fresh.joint_state());
    assert_eq!(reused.profile().to_text(), fresh.profile().to_text());
}

#[test]
fn logged_actions_reproduce_the_episode() {
    let seeds = evaluation_seeds(1001, 0, 4);
    let mut env = ScrapeEnv::new(short_env(), &seeds).unwrap();
    let res = run_episode(&mut env, &seeds, &Driver::Baseline(BaselineConfig::default())).unwrap();
    let text = res.log.to_csv();
    let parsed = EpisodeLog::from_csv(&text, short_env().reward.lambda_c).unwrap();
    assert_eq!(parsed.to_csv(), text);

    let mut replay = ScrapeEnv::new(short_env(), &seeds).unwrap();
    for row in &parsed.rows {
        let out = replay.step(&row.action).unwrap();
        assert_eq!(out.info.removed_fraction, row.removed_fraction);
    }
    assert_eq!(replay.profile().removed_fraction(), res.removed_fraction);
}

#[test]
fn stronger_fixed_wrench_removes_more() {
    let cfg = EnvConfig::default();
    let seeds = evaluation_seeds(1002, 0, 4);
    let mut env = ScrapeEnv::new(cfg.clone(), &seeds).unwrap();
    let weak = run_episode(&mut env, &seeds, &Driver::Baseline(BaselineConfig { f_x: 1.0, ..Default::default() })).unwrap();
    let strong = run_episode(&mut env, &seeds, &Driver::Baseline(oracle_driver(&cfg))).unwrap();
    assert!(strong.removed_fraction > weak.removed_fraction);
}

#[test]
fn training_is_reproducible() {
    let cfg = TrainConfig {
        ppo: PpoConfig { rollout_steps: 64, minibatch_size: 32, epochs_per_update: 2, total_updates: 2, ..PpoConfig::default() },
        seed: 9,
        workers: 1,
        checkpoint_every: 0,
    };
    let run = || train(|_| ScrapeTask::new(short_env(), SeedBases::default()), &cfg, |_, _| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
    assert_eq!(a.agent.flat_params(), b.agent.flat_params());
}
