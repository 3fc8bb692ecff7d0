//! Frozen-artifact tests: byte-stable instance files for fixed seeds, a
//! fixed-seed Q-vector, and the resolved full-size preset constants.

use std::sync::Arc;

use vrpssr::agent::TrainingConfig;
use vrpssr::env::reset;
use vrpssr::instance::{instance_to_string, sample_instance, Cell, InstanceConfig};
use vrpssr::nn::{forward_single, init_params, NetConfig, QNetworkParams};

#[test]
fn small_preset_instance_seed_42_is_byte_stable() {
    let instance = sample_instance(&InstanceConfig::small(), 42).unwrap();
    let expected = include_str!("golden/instance_small_seed42.txt");
    assert_eq!(instance_to_string(&instance), expected);
}

#[test]
fn paper_preset_instance_seed_7_is_byte_stable() {
    let instance = sample_instance(&InstanceConfig::paper(), 7).unwrap();
    let expected = include_str!("golden/instance_paper_seed7.txt");
    assert_eq!(instance_to_string(&instance), expected);
}

#[test]
fn fixed_seed_q_vector_is_stable() {
    let cfg = NetConfig::for_grid(8, 8);
    let params: QNetworkParams<f32> = init_params(cfg, 123).unwrap();
    let instance = Arc::new(sample_instance(&InstanceConfig::small(), 42).unwrap());
    let (_, obs) = reset(instance);
    let q = forward_single(&params, &obs.to_input::<f32>());
    let golden = [
        1.792798750e-2f32,
        8.095972240e-3,
        7.355783135e-3,
        1.378540043e-2,
        1.981735695e-4,
    ];
    for (a, (got, want)) in q.iter().zip(golden).enumerate() {
        let rel = (got - want).abs() / want.abs().max(1e-9);
        assert!(rel < 1e-6, "Q[{a}] = {got:e}, golden {want:e}");
    }
}

#[test]
fn paper_preset_resolves_to_reference_constants() {
    let inst = InstanceConfig::paper();
    assert_eq!((inst.width, inst.height), (32, 32));
    assert_eq!(inst.horizon, 230);
    assert_eq!(inst.depot, Cell::new(16, 16));
    assert_eq!(
        inst.cluster_centers,
        vec![Cell::new(8, 8), Cell::new(8, 24), Cell::new(24, 16)]
    );
    assert_eq!(inst.cluster_weights, vec![0.25, 0.5, 0.25]);
    assert_eq!(inst.cluster_std, 2.0f64.sqrt());
    assert_eq!(inst.initial_mean, 15.0);
    assert_eq!(inst.ongoing_mean_total, 15.0);
    assert_eq!(inst.reward_per_customer, 10.0);

    let t = TrainingConfig::default();
    assert_eq!(t.gamma, 0.99);
    assert_eq!((t.eps_start, t.eps_end), (1.0, 0.1));
    assert_eq!(t.eps_decay_steps, 1_000_000);
    assert_eq!(t.memory_capacity, 1_000_000);
    assert_eq!(t.warmup_steps, 10_000);
    assert_eq!(t.train_every, 16);
    assert_eq!(t.batch_size, 32);
    assert_eq!(t.per_alpha, 0.6);
    assert_eq!(t.per_beta0, 0.4);
    assert_eq!(t.per_beta_steps, 600_000);
    assert_eq!(t.target_sync_every, 2_000);
    assert_eq!(t.learning_rate, 0.001);
}
