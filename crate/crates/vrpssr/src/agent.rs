//! The training loop: epsilon-greedy behavior with action masking, double-DQN
//! targets, prioritized replay with annealed importance weights, periodic
//! target sync, and per-episode logging. All schedules count environment
//! steps.

use std::sync::Arc;
use std::time::Instant;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, reset, step, Action};
use crate::error::{Error, Result};
use crate::instance::{sample_instance, Instance, InstanceConfig};
use crate::nn::{
    backward, forward_single, init_params, rmsprop_update, LossKind, NetConfig, QNetworkParams,
    RmsPropState, NUM_ACTIONS,
};
use crate::replay::{PrioritizedReplay, Transition};

/// Keeps the agent's behavior stream distinct from instance-generation seeds.
const AGENT_RNG_SALT: u64 = 0x5eed_a9e4_7b01_c3f2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub memory_capacity: usize,
    pub warmup_steps: u64,
    pub train_every: u64,
    pub batch_size: usize,
    pub per_alpha: f64,
    pub per_beta0: f64,
    pub per_beta_steps: u64,
    pub target_sync_every: u64,
    pub learning_rate: f64,
    pub episodes: u64,
    pub seed: u64,
    /// Exploration dither used during evaluation rollouts.
    pub eval_epsilon: f64,
    /// Huber threshold; None means plain squared error.
    pub huber: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_decay_steps: 1_000_000,
            memory_capacity: 1_000_000,
            warmup_steps: 10_000,
            train_every: 16,
            batch_size: 32,
            per_alpha: 0.6,
            per_beta0: 0.4,
            per_beta_steps: 600_000,
            target_sync_every: 2_000,
            learning_rate: 0.001,
            episodes: 25_000,
            seed: 0,
            eval_epsilon: 0.05,
            huber: None,
        }
    }
}

impl TrainingConfig {
    /// Desk-scale schedules to pair with `InstanceConfig::small`.
    pub fn small() -> Self {
        TrainingConfig {
            eps_decay_steps: 50_000,
            memory_capacity: 50_000,
            warmup_steps: 1_000,
            per_beta_steps: 30_000,
            target_sync_every: 500,
            episodes: 2_000,
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_end > self.eps_start {
            return Err(Error::InvalidConfig("eps_end > eps_start".into()));
        }
        if self.per_beta0 > 1.0 {
            return Err(Error::InvalidConfig("per_beta0 > 1".into()));
        }
        if self.eps_decay_steps == 0
            || self.per_beta_steps == 0
            || self.train_every == 0
            || self.target_sync_every == 0
            || self.batch_size == 0
            || self.memory_capacity == 0
        {
            return Err(Error::InvalidConfig(
                "schedule and capacity fields must be positive".into(),
            ));
        }
        if (self.warmup_steps as usize) < self.batch_size {
            return Err(Error::InvalidConfig(
                "warmup_steps must cover at least one batch".into(),
            ));
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.huber {
            Some(kappa) => LossKind::Huber(kappa),
            None => LossKind::SquaredError,
        }
    }
}

/// Linear decay from eps_start to eps_end over eps_decay_steps, clamped.
pub fn epsilon(step: u64, cfg: &TrainingConfig) -> f64 {
    let slope = (cfg.eps_start - cfg.eps_end) / cfg.eps_decay_steps as f64;
    (cfg.eps_start - step as f64 * slope).max(cfg.eps_end)
}

/// Linear anneal from per_beta0 to 1.0 over per_beta_steps, clamped.
pub fn beta(step: u64, cfg: &TrainingConfig) -> f64 {
    let slope = (1.0 - cfg.per_beta0) / cfg.per_beta_steps as f64;
    (cfg.per_beta0 + step as f64 * slope).min(1.0)
}

/// Gradient updates happen after the warmup, every `train_every`-th step.
pub fn should_update(step: u64, cfg: &TrainingConfig) -> bool {
    step > cfg.warmup_steps && (step - cfg.warmup_steps) % cfg.train_every == 0
}

/// Target syncs happen every `target_sync_every`-th step.
pub fn should_sync(step: u64, cfg: &TrainingConfig) -> bool {
    step % cfg.target_sync_every == 0
}

/// Expected counter values after `steps` environment steps.
pub fn expected_update_count(steps: u64, cfg: &TrainingConfig) -> u64 {
    steps.saturating_sub(cfg.warmup_steps) / cfg.train_every
}

pub fn expected_sync_count(steps: u64, cfg: &TrainingConfig) -> u64 {
    steps / cfg.target_sync_every
}

/// Epsilon-greedy over the admissible actions; greedy ties break on the
/// lowest action index.
pub fn select_action<F: Float>(
    qvalues: &[F],
    mask: &[bool; NUM_ACTIONS],
    eps: f64,
    rng: &mut impl Rng,
) -> usize {
    debug_assert!(mask.iter().any(|m| *m));
    if eps > 0.0 && rng.random::<f64>() < eps {
        let admissible: Vec<usize> = (0..NUM_ACTIONS).filter(|a| mask[*a]).collect();
        return admissible[rng.random_range(0..admissible.len())];
    }
    greedy_masked(qvalues, mask)
}

pub fn greedy_masked<F: Float>(qvalues: &[F], mask: &[bool; NUM_ACTIONS]) -> usize {
    let mut best = None;
    for a in 0..NUM_ACTIONS {
        if !mask[a] {
            continue;
        }
        match best {
            None => best = Some(a),
            Some(b) if qvalues[a] > qvalues[b] => best = Some(a),
            _ => {}
        }
    }
    best.expect("nonempty mask")
}

/// Double-DQN targets: y = r + gamma * Q_target(s', argmax_a Q_online(s', a)),
/// with the argmax restricted to the next state's admissible actions and
/// y = r for terminal transitions.
pub fn td_targets(
    batch: &[Transition],
    online: &QNetworkParams<f32>,
    target: &QNetworkParams<f32>,
    gamma: f64,
) -> Vec<f32> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return t.reward as f32;
            }
            let input = t.next_obs.to_input::<f32>();
            let mask = t.next_obs.admissible_mask();
            let q_online = forward_single(online, &input);
            let pick = greedy_masked(&q_online, &mask);
            let q_target = forward_single(target, &input);
            (t.reward + gamma * q_target[pick] as f64) as f32
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub ret: f64,
    pub served: u32,
    pub steps: u32,
    pub epsilon: f64,
    /// Wall-clock only; excluded from determinism comparisons.
    pub wall_ms: u64,
}

pub type TrainLog = Vec<EpisodeRecord>;

/// Compares logs ignoring the wall-clock field.
pub fn logs_semantically_equal(a: &TrainLog, b: &TrainLog) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.episode == y.episode
                && x.ret == y.ret
                && x.served == y.served
                && x.steps == y.steps
                && x.epsilon == y.epsilon
        })
}

#[derive(Debug)]
pub struct Trainer {
    pub inst_cfg: InstanceConfig,
    pub cfg: TrainingConfig,
    pub online: QNetworkParams<f32>,
    pub target: QNetworkParams<f32>,
    pub opt: RmsPropState<f32>,
    pub replay: PrioritizedReplay,
    pub rng: ChaCha8Rng,
    pub global_step: u64,
    pub episode: u64,
    pub updates: u64,
    pub syncs: u64,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(inst_cfg: InstanceConfig, cfg: TrainingConfig) -> Result<Trainer> {
        inst_cfg.validate()?;
        cfg.validate()?;
        let net_cfg = NetConfig::for_grid(inst_cfg.height, inst_cfg.width);
        let online: QNetworkParams<f32> = init_params(net_cfg, cfg.seed)?;
        let target = online.sync_target();
        let opt = RmsPropState::new(online.data.len(), cfg.learning_rate);
        let replay = PrioritizedReplay::new(cfg.memory_capacity, cfg.per_alpha);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AGENT_RNG_SALT);
        Ok(Trainer {
            inst_cfg,
            cfg,
            online,
            target,
            opt,
            replay,
            rng,
            global_step: 0,
            episode: 0,
            updates: 0,
            syncs: 0,
            log: Vec::new(),
        })
    }

    /// Instance for a given episode index; independent of the agent's RNG so
    /// the scenario stream is stable under resume.
    pub fn episode_instance(&self, episode: u64) -> Result<Instance> {
        sample_instance(&self.inst_cfg, self.cfg.seed.wrapping_add(episode))
    }

    pub fn run_episode(&mut self) -> Result<&EpisodeRecord> {
        let started = Instant::now();
        let instance = Arc::new(self.episode_instance(self.episode)?);
        let (mut state, obs) = reset(instance);
        let mut obs = Arc::new(obs);
        let mut steps = 0u32;
        while !state.terminal {
            let eps = epsilon(self.global_step, &self.cfg);
            let input = obs.to_input::<f32>();
            let q = forward_single(&self.online, &input);
            let mask = env::admissible_mask(&state);
            let action = select_action(&q, &mask, eps, &mut self.rng);
            let res = step(&mut state, Action::from_index(action))?;
            let next_obs = Arc::new(res.observation);
            self.replay.push(Transition {
                obs: obs.clone(),
                action,
                reward: res.reward,
                next_obs: next_obs.clone(),
                terminal: res.terminal,
            });
            obs = next_obs;
            self.global_step += 1;
            steps += 1;
            if should_update(self.global_step, &self.cfg) {
                self.learn_step()?;
            }
            if should_sync(self.global_step, &self.cfg) {
                self.target = self.online.sync_target();
                self.syncs += 1;
            }
        }
        let record = EpisodeRecord {
            episode: self.episode,
            ret: state.episode_return,
            served: state.served_count() as u32,
            steps,
            epsilon: epsilon(self.global_step, &self.cfg),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        self.episode += 1;
        self.log.push(record);
        Ok(self.log.last().unwrap())
    }

    fn learn_step(&mut self) -> Result<()> {
        let b = beta(self.global_step, &self.cfg);
        let (refs, indices, weights) =
            self.replay
                .sample(self.cfg.batch_size, b, &mut self.rng)?;
        let batch: Vec<Transition> = refs.into_iter().cloned().collect();

        let targets = td_targets(&batch, &self.online, &self.target, self.cfg.gamma);
        let inputs: Vec<Vec<f32>> = batch.iter().map(|t| t.obs.to_input()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let weights_f32: Vec<f32> = weights.iter().map(|w| *w as f32).collect();

        let result = backward(
            &self.online,
            &inputs,
            &actions,
            &targets,
            &weights_f32,
            self.cfg.loss_kind(),
        )?;
        rmsprop_update(&mut self.online, &result.grads, &mut self.opt)?;

        let td_errors: Vec<f64> = result.td_errors.iter().map(|d| *d as f64).collect();
        self.replay.update_priorities(&indices, &td_errors);
        self.updates += 1;
        Ok(())
    }

    /// Runs episodes until the configured count, invoking `on_episode` after
    /// each one (for logging and checkpoint cadence).
    pub fn train(
        &mut self,
        mut on_episode: impl FnMut(&mut Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.episode < self.cfg.episodes {
            self.run_episode()?;
            on_episode(self)?;
        }
        Ok(())
    }
}

/// Evaluation-time policies, all admissibility-masked.
pub enum RolloutPolicy<'a> {
    RandomAdmissible,
    GreedyNearest,
    /// Q-greedy with a small epsilon dither.
    QNetwork(&'a QNetworkParams<f32>, f64),
}

pub struct RolloutOutcome {
    pub ret: f64,
    pub served: u32,
    pub steps: u32,
}

pub fn rollout(
    instance: &Arc<Instance>,
    policy: &RolloutPolicy<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutOutcome> {
    let (mut state, obs) = reset(instance.clone());
    let mut obs = obs;
    let mut steps = 0u32;
    while !state.terminal {
        let action = match policy {
            RolloutPolicy::RandomAdmissible => crate::baselines::random_policy(&state, rng),
            RolloutPolicy::GreedyNearest => crate::baselines::greedy_policy(&state),
            RolloutPolicy::QNetwork(params, eps) => {
                let input = obs.to_input::<f32>();
                let q = forward_single(params, &input);
                let mask = env::admissible_mask(&state);
                Action::from_index(select_action(&q, &mask, *eps, rng))
            }
        };
        let res = step(&mut state, action)?;
        obs = res.observation;
        steps += 1;
    }
    Ok(RolloutOutcome {
        ret: state.episode_return,
        served: state.served_count() as u32,
        steps,
    })
}
