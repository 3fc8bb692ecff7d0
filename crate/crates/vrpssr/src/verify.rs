//! Self-verification suite shared by the CLI `verify` command and the
//! integration tests: environment cross-checks against an independent
//! simulator, exact-oracle consistency, generator statistics, observation
//! invariants, gradient and dueling checks, schedule accounting, and replay
//! sampling statistics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    beta, epsilon, expected_sync_count, expected_update_count, should_sync, should_update,
    TrainingConfig,
};
use crate::baselines::{
    brute_force_optimal, exhaustive_env_check, offline_optimal, random_policy,
};
use crate::env::{reset, step};
use crate::instance::{
    sample_customer_cell, sample_instance, Cell, CustomerSpec, Instance, InstanceConfig,
};
use crate::nn::{
    backward, forward_single, init_params, loss_value, Layout, LossKind, NetConfig,
    QNetworkParams, NUM_ACTIONS,
};
use crate::obs::{feature_layers, render_frame, BORDER_PX, TIME_BAR_PX};
use crate::replay::{PrioritizedReplay, ReplayIndex, SumTree, Transition};

/// Ok holds a one-line summary; Err holds the failure description.
pub type CheckResult = std::result::Result<String, String>;

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: CheckResult,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

/// A hand-rolled instance small enough for the exact oracles: explicit
/// customer list on a tiny grid, arbitrary request times.
pub fn random_small_instance(
    rng: &mut ChaCha8Rng,
    max_side: u32,
    max_horizon: u32,
    max_customers: usize,
) -> Instance {
    let width = rng.random_range(3..=max_side);
    let height = rng.random_range(3..=max_side);
    let horizon = rng.random_range(4..=max_horizon);
    let depot = Cell::new(
        rng.random_range(0..width as i32),
        rng.random_range(0..height as i32),
    );
    let config = InstanceConfig {
        width,
        height,
        horizon,
        depot,
        cluster_centers: vec![depot],
        cluster_weights: vec![1.0],
        cluster_std: 1.0,
        initial_mean: 1.0,
        ongoing_mean_total: 1.0,
        reward_per_customer: 10.0,
        wait_time: 1,
    };
    let n = rng.random_range(0..=max_customers);
    let mut customers = Vec::new();
    let mut used = vec![depot];
    while customers.len() < n {
        let cell = Cell::new(
            rng.random_range(0..width as i32),
            rng.random_range(0..height as i32),
        );
        if used.contains(&cell) {
            continue;
        }
        used.push(cell);
        customers.push(CustomerSpec {
            id: customers.len() as u32,
            cell,
            request_time: rng.random_range(0..horizon),
        });
    }
    let instance = Instance {
        config,
        customers,
        seed: 0,
    };
    instance.validate().expect("constructed instance is valid");
    instance
}

/// Every admissible action sequence through the environment agrees with an
/// independently coded simulator, on randomized tiny instances.
pub fn check_env_exhaustive(instances: usize, seed: u64) -> CheckResult {
    let mut total_nodes = 0u64;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let instance = Arc::new(random_small_instance(&mut rng, 5, 10, 3));
        match exhaustive_env_check(&instance, 100_000_000) {
            Ok(nodes) => total_nodes += nodes,
            Err(e) => return Err(format!("instance {i}: {e}")),
        }
    }
    Ok(format!(
        "{instances} instances, {total_nodes} nodes, simulators agree everywhere"
    ))
}

/// The DP oracle matches brute-force enumeration exactly.
pub fn check_oracle_consistency(cases: usize, seed: u64) -> CheckResult {
    for i in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let instance = random_small_instance(&mut rng, 5, 12, 4);
        let dp = offline_optimal(&instance).map_err(|e| format!("case {i}: {e}"))?;
        let bf = brute_force_optimal(&instance).map_err(|e| format!("case {i}: {e}"))?;
        if dp != bf {
            return Err(format!(
                "case {i}: dp {dp} != brute force {bf} (seed {})",
                seed.wrapping_add(i as u64)
            ));
        }
    }
    Ok(format!("{cases} cases, dp == enumeration exactly"))
}

/// Generator statistics on the full-size preset: arrival means and cluster
/// shares over full instances, plus the per-axis spread of the placement
/// sampler itself. The spread is measured on fresh draws with only the depot
/// occupied: within an instance the distinct-cell rejection resamples
/// crowded central cells outward, which inflates the pooled spread well past
/// the underlying normal's, so full instances are the wrong probe for it.
pub fn check_instance_statistics(seeds: usize) -> CheckResult {
    let cfg = InstanceConfig::paper();
    let centers = cfg.cluster_centers.clone();
    let mut initial = 0u64;
    let mut total = 0u64;
    let mut share = vec![0u64; centers.len()];
    for s in 0..seeds {
        let inst = sample_instance(&cfg, s as u64).map_err(|e| e.to_string())?;
        total += inst.customers.len() as u64;
        for c in &inst.customers {
            if c.request_time == 0 {
                initial += 1;
            }
            let nearest = (0..centers.len())
                .min_by_key(|k| c.cell.manhattan(centers[*k]))
                .unwrap();
            share[nearest] += 1;
        }
    }
    let mut dev_sum = 0.0f64;
    let mut dev_sq = 0.0f64;
    let mut dev_n = 0u64;
    {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57a7);
        let occupied: std::collections::HashSet<Cell> = [cfg.depot].into_iter().collect();
        for _ in 0..50_000 {
            let cell = sample_customer_cell(&cfg, &occupied, &mut rng)
                .map_err(|e| e.to_string())?;
            let nearest = (0..centers.len())
                .min_by_key(|k| cell.manhattan(centers[*k]))
                .unwrap();
            for d in [
                (cell.x - centers[nearest].x) as f64,
                (cell.y - centers[nearest].y) as f64,
            ] {
                dev_sum += d;
                dev_sq += d * d;
                dev_n += 1;
            }
        }
    }
    let mean_initial = initial as f64 / seeds as f64;
    let mean_total = total as f64 / seeds as f64;
    if !(14.5..=15.5).contains(&mean_initial) {
        return Err(format!("mean initial actives {mean_initial:.3} outside [14.5, 15.5]"));
    }
    if !(29.3..=30.7).contains(&mean_total) {
        return Err(format!("mean total customers {mean_total:.3} outside [29.3, 30.7]"));
    }
    for (k, want) in cfg.cluster_weights.iter().enumerate() {
        let got = share[k] as f64 / total as f64;
        if (got - want).abs() > 0.01 {
            return Err(format!(
                "cluster {k} share {got:.4} deviates from {want} by more than 0.01"
            ));
        }
    }
    let mean_dev = dev_sum / dev_n as f64;
    let std = (dev_sq / dev_n as f64 - mean_dev * mean_dev).sqrt();
    let want = 2.0f64.sqrt();
    if (std - want).abs() > 0.05 {
        return Err(format!(
            "per-axis placement stddev {std:.4} deviates from {want:.4} by more than 0.05"
        ));
    }
    Ok(format!(
        "{seeds} seeds: initial {mean_initial:.2}, total {mean_total:.2}, stddev {std:.3}"
    ))
}

/// Feature-plane invariants hold at every step of random-policy episodes,
/// and the render has the expected framed size.
pub fn check_observation_invariants(episodes: usize, seed: u64) -> CheckResult {
    let cfg = InstanceConfig::small();
    let mut steps = 0u64;
    for e in 0..episodes {
        let instance =
            Arc::new(sample_instance(&cfg, seed.wrapping_add(e as u64)).map_err(|e| e.to_string())?);
        let total = instance.customers.len() as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(e as u64) ^ 0xace);
        let (mut state, _) = reset(instance);
        loop {
            let obs = feature_layers(&state);
            if obs.plane_sum(0) != 1 {
                return Err(format!("episode {e}: vehicle plane sums to {}", obs.plane_sum(0)));
            }
            let active = obs.plane_sum(1);
            let potential = obs.plane_sum(2);
            let served = state.served_count() as u32;
            if active + potential + served != total {
                return Err(format!(
                    "episode {e}: active {active} + potential {potential} + served {served} != {total}"
                ));
            }
            let n = (obs.width * obs.height) as usize;
            for i in 0..n {
                if obs.planes[1][i] == 1 && obs.planes[2][i] == 1 {
                    return Err(format!("episode {e}: active/potential planes overlap at {i}"));
                }
            }
            if state.terminal {
                break;
            }
            let action = random_policy(&state, &mut rng);
            step(&mut state, action).map_err(|e| e.to_string())?;
            steps += 1;
        }
    }
    // Frame geometry on the full-size preset.
    let paper = InstanceConfig::paper();
    let instance = Arc::new(sample_instance(&paper, 0).map_err(|e| e.to_string())?);
    let (state, _) = reset(instance);
    let frame = render_frame(&state);
    let want_w = paper.width + 2 * BORDER_PX;
    let want_h = paper.height + 2 * BORDER_PX + TIME_BAR_PX;
    if frame.width != want_w || frame.height != want_h {
        return Err(format!(
            "render is {}x{}, expected {want_w}x{want_h}",
            frame.width, frame.height
        ));
    }
    Ok(format!(
        "{episodes} episodes / {steps} steps hold all plane invariants; render {want_w}x{want_h}"
    ))
}

fn random_net_config(rng: &mut ChaCha8Rng) -> NetConfig {
    NetConfig {
        input_h: rng.random_range(4..=8),
        input_w: rng.random_range(4..=8),
        conv1_filters: rng.random_range(2..=4),
        conv2_filters: rng.random_range(2..=4),
        dense_units: rng.random_range(4..=12),
        head_units: rng.random_range(3..=8),
    }
}

/// Analytic gradients match central finite differences in 64-bit mode.
pub fn check_gradients(configs: usize, seed: u64) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let cfg = random_net_config(&mut rng);
        let mut params: QNetworkParams<f64> =
            init_params(cfg, seed.wrapping_add(i as u64)).map_err(|e| e.to_string())?;
        // Jitter away from zero so no pre-activation sits on a ReLU kink.
        for p in params.data.iter_mut() {
            *p += rng.random_range(-0.01..0.01);
        }
        let loss = if i % 2 == 0 {
            LossKind::SquaredError
        } else {
            LossKind::Huber(1.0)
        };
        let batch = 2;
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| {
                (0..cfg.input_len())
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect()
            })
            .collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..NUM_ACTIONS)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..batch).map(|_| rng.random_range(0.5..1.0)).collect();
        let analytic = backward(&params, &inputs, &actions, &targets, &weights, loss)
            .map_err(|e| e.to_string())?;
        let h = 1e-5;
        for j in 0..params.data.len() {
            let orig = params.data[j];
            params.data[j] = orig + h;
            let up = loss_value(&params, &inputs, &actions, &targets, &weights, loss);
            params.data[j] = orig - h;
            let down = loss_value(&params, &inputs, &actions, &targets, &weights, loss);
            params.data[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.grads[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            if rel >= 1e-4 {
                return Err(format!(
                    "config {i} param {j}: analytic {a:.8e} vs fd {fd:.8e} (rel {rel:.2e})"
                ));
            }
        }
    }
    Ok(format!("{configs} configurations, worst relative error {worst:.2e}"))
}

/// Dueling identifiability: shifting every advantage output by a constant
/// leaves Q unchanged, and argmax Q equals argmax A.
pub fn check_dueling_identity(states: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetConfig::for_grid(8, 8);
    let params: QNetworkParams<f64> = init_params(cfg, seed).map_err(|e| e.to_string())?;
    let layout = Layout::of(&cfg);

    let mut shifted = params.clone();
    let shift = 3.75;
    for j in layout.adv2_b.0..layout.adv2_b.1 {
        shifted.data[j] += shift;
    }
    // Advantage view: value head zeroed, so outputs are A - mean(A).
    let mut adv_only = params.clone();
    for j in layout.val2_w.0..layout.val2_w.1 {
        adv_only.data[j] = 0.0;
    }
    for j in layout.val2_b.0..layout.val2_b.1 {
        adv_only.data[j] = 0.0;
    }

    for s in 0..states {
        let input: Vec<f64> = (0..cfg.input_len())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let q = forward_single(&params, &input);
        let q_shift = forward_single(&shifted, &input);
        for a in 0..NUM_ACTIONS {
            if (q[a] - q_shift[a]).abs() > 1e-6 {
                return Err(format!(
                    "state {s}: advantage shift changed Q[{a}] by {:.2e}",
                    (q[a] - q_shift[a]).abs()
                ));
            }
        }
        let argmax = |v: &[f64]| {
            (0..NUM_ACTIONS)
                .max_by(|a, b| v[*a].partial_cmp(&v[*b]).unwrap())
                .unwrap()
        };
        let adv = forward_single(&adv_only, &input);
        if argmax(&q) != argmax(&adv) {
            return Err(format!("state {s}: argmax Q {} != argmax A {}", argmax(&q), argmax(&adv)));
        }
    }
    Ok(format!("{states} states: shift-invariance and argmax identity hold"))
}

/// Schedule endpoints and the step-accounting formulas over a dry run.
pub fn check_schedules(dry_steps: u64) -> CheckResult {
    let cfg = TrainingConfig::default();
    let checks = [
        (epsilon(0, &cfg), 1.0, "epsilon(0)"),
        (epsilon(1_000_000, &cfg), 0.1, "epsilon(1e6)"),
        (epsilon(500_000, &cfg), 0.55, "epsilon(5e5)"),
        (beta(0, &cfg), 0.4, "beta(0)"),
        (beta(600_000, &cfg), 1.0, "beta(6e5)"),
        (beta(300_000, &cfg), 0.7, "beta(3e5)"),
    ];
    for (got, want, name) in checks {
        if (got - want).abs() > 1e-9 {
            return Err(format!("{name} = {got} != {want}"));
        }
    }
    let mut updates = 0u64;
    let mut syncs = 0u64;
    for s in 1..=dry_steps {
        if should_update(s, &cfg) {
            updates += 1;
        }
        if should_sync(s, &cfg) {
            syncs += 1;
        }
        if updates != expected_update_count(s, &cfg) || syncs != expected_sync_count(s, &cfg) {
            return Err(format!(
                "step {s}: counters ({updates}, {syncs}) diverge from formulas ({}, {})",
                expected_update_count(s, &cfg),
                expected_sync_count(s, &cfg)
            ));
        }
    }
    Ok(format!(
        "endpoints exact; {dry_steps}-step dry run: {updates} updates, {syncs} syncs"
    ))
}

fn dummy_transition() -> Transition {
    let obs = Arc::new(crate::obs::Observation {
        width: 2,
        height: 2,
        planes: [vec![1, 0, 0, 0], vec![0; 4], vec![0; 4]],
        time_left: 1.0,
    });
    Transition {
        obs: obs.clone(),
        action: 0,
        reward: 0.0,
        next_obs: obs,
        terminal: false,
    }
}

/// PER sampling statistics: the two-item 3:1 case, and tree prefix queries
/// against a linear-scan oracle under random operation sequences.
pub fn check_per_statistics(seed: u64) -> CheckResult {
    let mut buf = PrioritizedReplay::new(2, 1.0);
    buf.push(dummy_transition());
    buf.push(dummy_transition());
    let eps = buf.epsilon;
    let indices: Vec<ReplayIndex> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, idx, _) = buf.sample(2, 0.0, &mut rng).map_err(|e| e.to_string())?;
        let mut both = idx;
        both.sort_by_key(|i| i.slot);
        both.dedup_by_key(|i| i.slot);
        if both.len() < 2 {
            // Ensure we touch both slots regardless of the draw.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let (_, idx2, _) = buf.sample(2, 0.0, &mut rng).map_err(|e| e.to_string())?;
            both.extend(idx2);
            both.sort_by_key(|i| i.slot);
            both.dedup_by_key(|i| i.slot);
        }
        both
    };
    if indices.len() != 2 {
        return Err("could not address both replay slots".into());
    }
    buf.update_priorities(&indices, &[3.0 - eps, 1.0 - eps]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let draws = 100_000;
    let mut count0 = 0usize;
    for _ in 0..draws {
        let (_, idx, _) = buf.sample(1, 0.4, &mut rng).map_err(|e| e.to_string())?;
        if idx[0].slot == 0 {
            count0 += 1;
        }
    }
    let f0 = count0 as f64 / draws as f64;
    if (f0 - 0.75).abs() > 0.01 {
        return Err(format!("3:1 case sampled slot 0 at {f0:.4}, expected 0.75 +- 0.01"));
    }

    // Random op sequences on a padded tree vs a naive array.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(13));
    for trial in 0..20 {
        let leaves = rng.random_range(1..=64usize);
        let mut tree = SumTree::new(leaves);
        let mut naive = vec![0.0f64; leaves];
        for op in 0..500 {
            let leaf = rng.random_range(0..leaves);
            let value = if rng.random::<f64>() < 0.2 {
                0.0
            } else {
                rng.random_range(0.01..10.0)
            };
            tree.set(leaf, value);
            naive[leaf] = value;
            let naive_total: f64 = naive.iter().sum();
            if (tree.total() - naive_total).abs() > 1e-9 * naive_total.max(1.0) {
                return Err(format!("trial {trial} op {op}: totals diverge"));
            }
            let total = tree.total();
            if total > 0.0 {
                for probe in 0..8 {
                    let v = (probe as f64 + 0.5) / 8.0 * total;
                    let got = tree.prefix_query(v);
                    let mut acc = 0.0;
                    let mut expect = None;
                    for (i, p) in naive.iter().enumerate() {
                        if v < acc + p {
                            expect = Some(i);
                            break;
                        }
                        acc += p;
                    }
                    if Some(got) != expect {
                        return Err(format!(
                            "trial {trial} op {op}: prefix query {v} -> {got}, oracle {expect:?}"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("3:1 frequency {f0:.4}; tree matches linear oracle on random ops"))
}

/// The full gated suite at CLI scale.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        CheckOutcome {
            name: "environment-exhaustive",
            result: check_env_exhaustive(20, 101),
        },
        CheckOutcome {
            name: "oracle-consistency",
            result: check_oracle_consistency(50, 202),
        },
        CheckOutcome {
            name: "instance-statistics",
            result: check_instance_statistics(10_000),
        },
        CheckOutcome {
            name: "observation-invariants",
            result: check_observation_invariants(1_000, 303),
        },
        CheckOutcome {
            name: "gradient-check",
            result: check_gradients(10, 404),
        },
        CheckOutcome {
            name: "dueling-identity",
            result: check_dueling_identity(1_000, 505),
        },
        CheckOutcome {
            name: "schedules",
            result: check_schedules(50_000),
        },
        CheckOutcome {
            name: "replay-statistics",
            result: check_per_statistics(606),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instances_respect_guards() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let inst = random_small_instance(&mut rng, 5, 10, 3);
            assert!(inst.config.width <= 5 && inst.config.height <= 5);
            assert!(inst.config.horizon <= 10);
            assert!(inst.customers.len() <= 3);
        }
    }

    #[test]
    fn spot_checks_pass_at_reduced_scale() {
        check_env_exhaustive(3, 11).unwrap();
        check_oracle_consistency(3, 22).unwrap();
        check_observation_invariants(5, 33).unwrap();
        check_gradients(2, 44).unwrap();
        check_dueling_identity(50, 55).unwrap();
        check_schedules(5_000).unwrap();
    }
}
