//! Gated acceptance suite. Each test prints one `ACCEPTANCE <n> ... PASS`
//! line (visible with `--nocapture`); a failing criterion fails its test.
//!
//! Criterion 11 (full-scale training toward the reference score) runs for
//! hours and is `#[ignore]`d; invoke it explicitly to attempt it.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vrpssr::agent::{logs_semantically_equal, rollout, RolloutPolicy, Trainer, TrainingConfig};
use vrpssr::instance::{sample_instance, InstanceConfig};
use vrpssr::verify;

fn pass(criterion: u32, name: &str, detail: &str) {
    println!("ACCEPTANCE {criterion} {name}: PASS - {detail}");
}

fn gate(criterion: u32, name: &str, result: verify::CheckResult) {
    match result {
        Ok(detail) => pass(criterion, name, &detail),
        Err(detail) => panic!("ACCEPTANCE {criterion} {name}: FAIL - {detail}"),
    }
}

#[test]
fn criterion_01_environment_exactness() {
    gate(
        1,
        "environment-exactness",
        verify::check_env_exhaustive(20, 101),
    );
}

#[test]
fn criterion_02_oracle_consistency() {
    gate(2, "oracle-consistency", verify::check_oracle_consistency(50, 202));
}

#[test]
fn criterion_03_instance_statistics() {
    gate(3, "instance-statistics", verify::check_instance_statistics(10_000));
}

#[test]
fn criterion_04_observation_invariants() {
    gate(
        4,
        "observation-invariants",
        verify::check_observation_invariants(1_000, 303),
    );
}

#[test]
fn criterion_05_gradient_correctness() {
    gate(5, "gradient-correctness", verify::check_gradients(10, 404));
}

#[test]
fn criterion_06_dueling_identity() {
    gate(6, "dueling-identity", verify::check_dueling_identity(1_000, 505));
}

#[test]
fn criterion_07_schedules_and_accounting() {
    gate(7, "schedules", verify::check_schedules(50_000));
}

#[test]
fn criterion_08_replay_statistics() {
    gate(8, "replay-statistics", verify::check_per_statistics(606));
}

/// Random-policy mean return over the given instance seeds, one episode per
/// seed with an independent per-seed RNG.
fn random_baseline(cfg: &InstanceConfig, seeds: impl Iterator<Item = u64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0u64;
    for seed in seeds {
        let instance = Arc::new(sample_instance(cfg, seed).expect("valid instance"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba5e);
        let outcome = rollout(&instance, &RolloutPolicy::RandomAdmissible, &mut rng)
            .expect("rollout runs");
        total += outcome.ret;
        count += 1;
    }
    total / count as f64
}

#[test]
fn criterion_09_desk_scale_learning() {
    let inst_cfg = InstanceConfig::small();
    let train_cfg = TrainingConfig {
        episodes: 2_000,
        seed: 1,
        ..TrainingConfig::small()
    };

    let mut first = Trainer::new(inst_cfg.clone(), train_cfg.clone()).unwrap();
    first.train(|_| Ok(())).unwrap();
    let mut second = Trainer::new(inst_cfg.clone(), train_cfg.clone()).unwrap();
    second.train(|_| Ok(())).unwrap();
    assert!(
        logs_semantically_equal(&first.log, &second.log),
        "ACCEPTANCE 9 desk-scale-learning: FAIL - same-seed runs diverged"
    );

    let final_window = &first.log[first.log.len() - 200..];
    let agent_mean: f64 =
        final_window.iter().map(|r| r.ret).sum::<f64>() / final_window.len() as f64;
    // The same instance seeds those episodes trained on.
    let baseline = random_baseline(
        &inst_cfg,
        final_window.iter().map(|r| train_cfg.seed + r.episode),
    );
    assert!(
        agent_mean >= 1.25 * baseline,
        "ACCEPTANCE 9 desk-scale-learning: FAIL - final-200 mean {agent_mean:.2} \
         < 1.25 x random baseline {baseline:.2}"
    );
    // The perfect-information oracle is out of reach at this horizon (its
    // state-space guard stops at T=24), so the upper-bound comparison is not
    // computable here; agent-vs-oracle containment is covered at oracle
    // scale by criteria 1 and 2.
    pass(
        9,
        "desk-scale-learning",
        &format!(
            "final-200 mean {agent_mean:.2} >= 1.25 x random baseline {baseline:.2}; \
             same-seed determinism holds over {} episodes",
            first.log.len()
        ),
    );
}

#[test]
fn criterion_10_baseline_ordering() {
    let cfg = InstanceConfig::paper();
    let mut greedy_total = 0.0;
    let mut random_total = 0.0;
    let n = 100u64;
    for seed in 0..n {
        let instance = Arc::new(sample_instance(&cfg, seed).expect("valid instance"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba5e);
        greedy_total += rollout(&instance, &RolloutPolicy::GreedyNearest, &mut rng)
            .unwrap()
            .ret;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba5e);
        random_total += rollout(&instance, &RolloutPolicy::RandomAdmissible, &mut rng)
            .unwrap()
            .ret;
    }
    let greedy_mean = greedy_total / n as f64;
    let random_mean = random_total / n as f64;
    assert!(
        greedy_mean > random_mean,
        "ACCEPTANCE 10 baseline-ordering: FAIL - greedy {greedy_mean:.2} \
         not strictly above random {random_mean:.2}"
    );
    pass(
        10,
        "baseline-ordering",
        &format!("greedy {greedy_mean:.2} > random {random_mean:.2} over {n} instances"),
    );
}

/// Full-scale training toward the reference trailing mean. Multi-hour run;
/// not part of the gated suite.
#[test]
#[ignore]
fn criterion_11_full_scale_training() {
    let inst_cfg = InstanceConfig::paper();
    let train_cfg = TrainingConfig {
        episodes: 25_000,
        seed: 1,
        ..TrainingConfig::default()
    };
    let mut trainer = Trainer::new(inst_cfg, train_cfg).unwrap();
    trainer.train(|_| Ok(())).unwrap();
    let tail = &trainer.log[trainer.log.len() - 5_000..];
    let mean: f64 = tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64;
    let target = 125.0;
    assert!(
        (mean - target).abs() <= 0.25 * target,
        "ACCEPTANCE 11 full-scale-training: FAIL - trailing-5000 mean {mean:.2} \
         outside {target} +- 25%"
    );
    pass(
        11,
        "full-scale-training",
        &format!("trailing-5000 mean {mean:.2} within 25% of {target}"),
    );
}
