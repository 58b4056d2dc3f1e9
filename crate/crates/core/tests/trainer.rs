use zoac_core::trainer::read_metrics;
use zoac_core::*;

fn lqr_config(seed: u64, iterations: u64) -> TrainerConfig {
    let mut spec = LqrSpec::scalar(0.95, 1.0, 1.0, 0.5, 0.99);
    spec.horizon = 40;
    let mut c = TrainerConfig::default();
    c.env = EnvSpec::Lqr(spec);
    c.run.seed = seed;
    c.run.iterations = iterations;
    c.run.eval_interval = 2;
    c.run.eval_episodes = 3;
    c.run.checkpoint_interval = 0;
    c.run.threads = 1;
    c.sampler.workers = 4;
    c.sampler.noise_table_size = 50_000;
    c.critic.hidden = vec![8, 8];
    c
}

fn stripped(path: &std::path::Path) -> Vec<MetricsRecord> {
    read_metrics(path).unwrap().iter().map(MetricsRecord::without_timing).collect()
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_training(lqr_config(1, 0), dir.path(), None).unwrap();
    assert_eq!(summary.iterations, 0);
    assert!(summary.final_checkpoint.ends_with("ckpt_000000.zoac"));
    assert!(read_metrics(&summary.metrics).unwrap().is_empty());
    let ckpt = Checkpoint::load(&summary.final_checkpoint).unwrap();
    assert_eq!(ckpt.header.iteration, 0);
    assert_eq!(ckpt.header.env_steps, 0);
}

#[test]
fn two_runs_with_one_seed_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_training(lqr_config(5, 6), &dir.path().join("a"), None).unwrap();
    let b = run_training(lqr_config(5, 6), &dir.path().join("b"), None).unwrap();
    let (ma, mb) = (stripped(&a.metrics), stripped(&b.metrics));
    assert_eq!(ma.len(), 6);
    assert_eq!(ma, mb);
    assert_eq!(
        std::fs::read(&a.final_checkpoint).unwrap(),
        std::fs::read(&b.final_checkpoint).unwrap()
    );

    let c = run_training(lqr_config(6, 6), &dir.path().join("c"), None).unwrap();
    assert_ne!(stripped(&c.metrics), ma);
}

#[test]
fn one_record_per_iteration_with_exact_step_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let config = lqr_config(2, 5);
    let per_iteration = (config.sampler.workers * config.sampler.rollout_length * config.sampler.segments_per_worker) as u64;
    let summary = run_training(config, dir.path(), None).unwrap();
    let records = read_metrics(&summary.metrics).unwrap();
    let iterations: Vec<u64> = records.iter().map(|r| r.iteration).collect();
    assert_eq!(iterations, vec![1, 2, 3, 4, 5]);
    for r in &records {
        assert_eq!(r.env_steps, r.iteration * per_iteration);
        assert_eq!(r.eval_mean_return.is_some(), r.iteration % 2 == 0);
        assert_eq!(r.eval_returns.as_ref().map(Vec::len), r.eval_mean_return.map(|_| 3));
        assert!(r.critic_loss.is_some());
    }
    assert_eq!(summary.env_steps, 5 * per_iteration);
}

#[test]
fn checkpoints_land_on_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = lqr_config(3, 5);
    config.run.checkpoint_interval = 2;
    run_training(config, dir.path(), None).unwrap();
    let paths = RunPaths::new(dir.path());
    for it in [0, 2, 4, 5] {
        assert!(paths.checkpoint(it).exists(), "missing checkpoint {it}");
    }
    assert!(!paths.checkpoint(3).exists());
    assert_eq!(paths.latest_checkpoint().unwrap(), Some(paths.checkpoint(5)));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = run_training(lqr_config(4, 7), &dir.path().join("straight"), None).unwrap();

    let split = dir.path().join("split");
    let first = run_training(lqr_config(4, 3), &split, None).unwrap();
    let resumed = run_training(lqr_config(4, 7), &split, Some(&first.final_checkpoint)).unwrap();
    assert_eq!(stripped(&resumed.metrics), stripped(&straight.metrics));
    assert_eq!(
        std::fs::read(&resumed.final_checkpoint).unwrap(),
        std::fs::read(&straight.final_checkpoint).unwrap()
    );
}

#[test]
fn resume_rejects_a_changed_algorithm_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_training(lqr_config(4, 2), dir.path(), None).unwrap();
    let mut other = lqr_config(4, 4);
    other.sampler.rollout_length = 5;
    assert!(run_training(other, dir.path(), Some(&first.final_checkpoint)).is_err());
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut config = lqr_config(1, 3);
    config.critic.lambda = 1.5;
    assert!(matches!(run_training(config, &out, None), Err(Error::InvalidConfig(_))));
    assert!(!out.exists());
}

#[test]
fn es_trainer_reproduces_degenerate_zoac_step() {
    let mut zoac = lqr_config(9, 1);
    zoac.run.eval_interval = 0;
    zoac.sampler.rollout_length = 60;
    zoac.sampler.segments_per_worker = 1;
    zoac.sampler.normalize_obs = false;
    zoac.critic.enabled = false;
    zoac.critic.lambda = 1.0;
    zoac.actor.normalize_advantages = false;
    let mut es = zoac.clone();
    es.run.algo = Algo::Es;
    es.es.shaped = false;

    let mut a = Trainer::new(zoac).unwrap();
    let mut b = Trainer::new(es).unwrap();
    assert_eq!(a.theta(), b.theta());
    let ra = a.step().unwrap();
    let rb = b.step().unwrap();
    let bits = |t: &[f64]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.theta()), bits(b.theta()));
    assert_eq!(ra.grad_norm.to_bits(), rb.grad_norm.to_bits());
    assert_eq!(ra.env_steps, rb.env_steps);
}

#[test]
fn evaluation_is_repeatable_and_honours_the_episode_count() {
    let trainer = Trainer::new(lqr_config(8, 1)).unwrap();
    let first = trainer.evaluate().unwrap();
    let second = trainer.evaluate().unwrap();
    assert_eq!(first.returns.len(), 3);
    assert_eq!(first, second);

    let env = mountain_car_env();
    let policy = PolicySpec::linear(2, 1);
    let theta = vec![0.0; policy.param_count()];
    let ten = evaluate_policy(&policy, &theta, &env, None, 10, 0).unwrap();
    assert_eq!(ten.len(), 10);
}

fn mountain_car_env() -> EnvSpec {
    EnvSpec::MountainCar(MountainCarSpec {
        max_steps: 50,
        ..Default::default()
    })
}

#[test]
fn zero_policy_from_rest_earns_nothing_on_lqr() {
    let mut spec = LqrSpec::scalar(0.9, 1.0, 1.0, 0.5, 0.99);
    spec.init_mean = vec![0.0];
    spec.init_std = vec![0.0];
    spec.horizon = 25;
    let env = EnvSpec::Lqr(spec);
    let policy = PolicySpec::linear(1, 1);
    let episodes = evaluate_policy(&policy, &[0.0], &env, None, 10, 3).unwrap();
    assert_eq!(episodes.len(), 10);
    for e in &episodes {
        assert_eq!(e.total_reward(), 0.0);
        assert_eq!(e.len(), 25);
    }
}

#[test]
fn es_run_reports_no_critic_fields() {
    let mut config = lqr_config(2, 2);
    config.run.algo = Algo::Es;
    let mut trainer = Trainer::new(config).unwrap();
    assert!(trainer.critic().is_none());
    let record = trainer.step().unwrap();
    assert!(record.critic_loss.is_none());
    assert!(record.phi.is_none());
}

#[test]
fn masked_policy_reports_usage_and_beta() {
    let mut config = lqr_config(2, 4);
    config.policy.kind = PolicyKind::Masked;
    config.policy.hidden = vec![4];
    config.actor.beta_iterations = Some(4);
    let mut trainer = Trainer::new(config).unwrap();
    let first = trainer.step().unwrap();
    assert_eq!(first.beta, Some(1.0));
    let usage = first.mask_usage.unwrap();
    assert!((0.0..=1.0).contains(&usage));
}
