//! Reference policies and exact small-instance oracles.
//!
//! `MirrorSim` is a deliberately separate, straight-line coding of the episode
//! rules. It shares no code with `env::step`; `exhaustive_env_check` walks
//! every admissible action sequence through both and demands exact agreement.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    admissible_actions, manhattan_time, reset, step, Action, CustomerStatus, EnvState, ACTIONS,
};
use crate::error::{Error, Result};
use crate::instance::{Cell, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    RandomAdmissible,
    GreedyNearest,
}

/// Uniform over the admissible actions.
pub fn random_policy(state: &EnvState, rng: &mut impl Rng) -> Action {
    let actions = admissible_actions(state);
    actions[rng.random_range(0..actions.len())]
}

/// Chases the nearest active customer whose service still allows the return
/// trip; otherwise heads home. Ties break on the lowest customer id; movement
/// reduces the larger axis gap first (x before y on equal gaps).
pub fn greedy_policy(state: &EnvState) -> Action {
    let depot = state.instance.config.depot;
    let remaining = state.remaining_time();

    let mut target: Option<(u32, u32, Cell)> = None; // (dist, id, cell)
    for (i, c) in state.instance.customers.iter().enumerate() {
        if state.status[i] != CustomerStatus::Active {
            continue;
        }
        let d = manhattan_time(state.vehicle, c.cell);
        if d + manhattan_time(c.cell, depot) > remaining {
            continue;
        }
        let key = (d, c.id);
        if target.map_or(true, |(td, tid, _)| key < (td, tid)) {
            target = Some((d, c.id, c.cell));
        }
    }

    let dest = match target {
        Some((_, _, cell)) => cell,
        None => depot,
    };
    step_toward(state.vehicle, dest)
}

fn step_toward(from: Cell, to: Cell) -> Action {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx == 0 && dy == 0 {
        return Action::Wait;
    }
    if dx.abs() >= dy.abs() {
        if dx > 0 {
            Action::Right
        } else if dx < 0 {
            Action::Left
        } else if dy > 0 {
            Action::Up
        } else {
            Action::Down
        }
    } else if dy > 0 {
        Action::Up
    } else {
        Action::Down
    }
}

const ORACLE_MAX_GRID: u32 = 8;
const ORACLE_MAX_HORIZON: u32 = 24;
const ORACLE_MAX_CUSTOMERS: usize = 10;

fn check_oracle_guards(instance: &Instance) -> Result<()> {
    let cfg = &instance.config;
    if cfg.width > ORACLE_MAX_GRID || cfg.height > ORACLE_MAX_GRID {
        return Err(Error::OracleGuard(format!(
            "grid {}x{} exceeds {ORACLE_MAX_GRID}x{ORACLE_MAX_GRID}",
            cfg.width, cfg.height
        )));
    }
    if cfg.horizon > ORACLE_MAX_HORIZON {
        return Err(Error::OracleGuard(format!(
            "horizon {} exceeds {ORACLE_MAX_HORIZON}",
            cfg.horizon
        )));
    }
    if instance.customers.len() > ORACLE_MAX_CUSTOMERS {
        return Err(Error::OracleGuard(format!(
            "{} customers exceed {ORACLE_MAX_CUSTOMERS}",
            instance.customers.len()
        )));
    }
    Ok(())
}

/// Perfect-information optimum: the maximal episode return over all
/// admissible action sequences, with every request time known in advance.
///
/// Dynamic program over (t, vehicle cell, served bitmask), honoring the same
/// move/reveal/serve/terminate phases as the environment. The result is an
/// upper bound on any non-anticipative policy.
pub fn offline_optimal(instance: &Instance) -> Result<f64> {
    check_oracle_guards(instance)?;
    let cfg = &instance.config;
    let cells = (cfg.width * cfg.height) as usize;
    let masks = 1usize << instance.customers.len();

    struct Dp<'a> {
        instance: &'a Instance,
        /// Max servable count from (t, cell, mask); -1 = unvisited.
        memo: Vec<i32>,
        cells: usize,
        masks: usize,
    }

    impl Dp<'_> {
        fn key(&self, t: u32, cell: Cell, mask: usize) -> usize {
            let cfg = &self.instance.config;
            let c = (cell.y as usize) * cfg.width as usize + cell.x as usize;
            (t as usize * self.cells + c) * self.masks + mask
        }

        fn terminal(&self, t: u32, cell: Cell) -> bool {
            let cfg = &self.instance.config;
            cfg.horizon.saturating_sub(t) <= manhattan_time(cell, cfg.depot)
        }

        // Recursion depth is bounded by the horizon guard (<= 24).
        fn value(&mut self, t: u32, cell: Cell, mask: usize) -> i32 {
            if self.terminal(t, cell) {
                return 0;
            }
            let key = self.key(t, cell, mask);
            if self.memo[key] >= 0 {
                return self.memo[key];
            }
            let cfg = self.instance.config.clone();
            let mut best = 0i32;
            for action in ACTIONS {
                let (dx, dy) = action.delta();
                let next = Cell::new(cell.x + dx, cell.y + dy);
                let next = if cfg.contains(next) { next } else { cell };
                let nt = t + 1;
                // Serve an unserved customer on the arrival cell whose request
                // has revealed by the new minute.
                let mut nmask = mask;
                let mut gained = 0i32;
                for (i, c) in self.instance.customers.iter().enumerate() {
                    if nmask & (1 << i) == 0 && c.cell == next && c.request_time <= nt {
                        nmask |= 1 << i;
                        gained = 1;
                        break;
                    }
                }
                best = best.max(gained + self.value(nt, next, nmask));
            }
            self.memo[key] = best;
            best
        }
    }

    let mut dp = Dp {
        instance,
        memo: vec![-1; (cfg.horizon as usize + 1) * cells * masks],
        cells,
        masks,
    };
    let served = dp.value(0, cfg.depot, 0);
    Ok(served as f64 * cfg.reward_per_customer)
}

/// Independent enumeration of the same maximum: depth-first search over
/// action sequences with an optimistic remaining-reward bound. Shares no
/// state-space machinery with `offline_optimal`.
pub fn brute_force_optimal(instance: &Instance) -> Result<f64> {
    check_oracle_guards(instance)?;
    let cfg = &instance.config;
    let n = instance.customers.len();

    struct Search<'a> {
        instance: &'a Instance,
        best: u32,
    }

    fn dfs(s: &mut Search, t: u32, cell: Cell, served: &mut Vec<bool>, acc: u32) {
        let cfg = &s.instance.config;
        if cfg.horizon.saturating_sub(t) <= cell.manhattan(cfg.depot) {
            s.best = s.best.max(acc);
            return;
        }
        let unserved = served.iter().filter(|x| !**x).count() as u32;
        if acc + unserved <= s.best {
            return; // cannot beat the incumbent even serving everyone left
        }
        for action in ACTIONS {
            let (dx, dy) = action.delta();
            let mut next = Cell::new(cell.x + dx, cell.y + dy);
            if !cfg.contains(next) {
                next = cell;
            }
            let nt = t + 1;
            let mut served_idx = None;
            for (i, c) in s.instance.customers.iter().enumerate() {
                if !served[i] && c.cell == next && c.request_time <= nt {
                    served_idx = Some(i);
                    break;
                }
            }
            let gain = if let Some(i) = served_idx {
                served[i] = true;
                1
            } else {
                0
            };
            dfs(s, nt, next, served, acc + gain);
            if let Some(i) = served_idx {
                served[i] = false;
            }
        }
    }

    let mut search = Search { instance, best: 0 };
    let mut served = vec![false; n];
    dfs(&mut search, 0, cfg.depot, &mut served, 0);
    Ok(search.best as f64 * cfg.reward_per_customer)
}

/// Straight-line re-implementation of the episode rules, kept independent of
/// `env` on purpose.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorSim {
    pub cell: Cell,
    pub t: u32,
    pub served: Vec<bool>,
    pub done: bool,
    pub total: f64,
}

impl MirrorSim {
    pub fn start(instance: &Instance) -> Self {
        let cfg = &instance.config;
        let done = cfg.horizon <= cfg.depot.manhattan(cfg.depot); // horizon == 0
        MirrorSim {
            cell: cfg.depot,
            t: 0,
            served: vec![false; instance.customers.len()],
            done,
            total: 0.0,
        }
    }

    pub fn act(&mut self, instance: &Instance, action: Action) -> f64 {
        assert!(!self.done, "acting on a finished mirror sim");
        let cfg = &instance.config;
        let (dx, dy) = action.delta();
        let nx = self.cell.x + dx;
        let ny = self.cell.y + dy;
        if nx >= 0 && ny >= 0 && (nx as u32) < cfg.width && (ny as u32) < cfg.height {
            self.cell = Cell::new(nx, ny);
        }
        self.t += 1;
        let mut reward = 0.0;
        for (i, c) in instance.customers.iter().enumerate() {
            if !self.served[i] && c.request_time <= self.t && c.cell == self.cell {
                self.served[i] = true;
                reward = cfg.reward_per_customer;
                break;
            }
        }
        self.total += reward;
        let dist_home =
            (self.cell.x - cfg.depot.x).unsigned_abs() + (self.cell.y - cfg.depot.y).unsigned_abs();
        if cfg.horizon - self.t <= dist_home {
            self.done = true;
        }
        reward
    }

    pub fn status_of(&self, instance: &Instance, i: usize) -> CustomerStatus {
        if self.served[i] {
            CustomerStatus::Served
        } else if instance.customers[i].request_time <= self.t {
            CustomerStatus::Active
        } else {
            CustomerStatus::Potential
        }
    }
}

fn divergence(label: &str, env: &EnvState, mirror: &MirrorSim, history: &[Action]) -> Error {
    Error::EnvCheckDiverged(format!(
        "{label}\n  after actions {history:?}\n  env: cell=({}, {}) t={} return={} terminal={}\n  mirror: cell=({}, {}) t={} total={} done={}",
        env.vehicle.x,
        env.vehicle.y,
        env.t,
        env.episode_return,
        env.terminal,
        mirror.cell.x,
        mirror.cell.y,
        mirror.t,
        mirror.total,
        mirror.done,
    ))
}

fn compare_node(env: &EnvState, mirror: &MirrorSim, history: &[Action]) -> Result<()> {
    if env.vehicle != mirror.cell || env.t != mirror.t {
        return Err(divergence("position/clock mismatch", env, mirror, history));
    }
    if env.terminal != mirror.done {
        return Err(divergence("termination mismatch", env, mirror, history));
    }
    if env.episode_return != mirror.total {
        return Err(divergence("return mismatch", env, mirror, history));
    }
    for i in 0..env.status.len() {
        if env.status[i] != mirror.status_of(&env.instance, i) {
            return Err(divergence(
                &format!("status mismatch for customer {i}"),
                env,
                mirror,
                history,
            ));
        }
    }
    Ok(())
}

/// Runs every admissible action sequence through the environment and the
/// mirror simulator, checking rewards, statuses, and termination at each
/// node. Errors with a counterexample trace on any divergence.
pub fn exhaustive_env_check(instance: &Arc<Instance>, node_limit: u64) -> Result<u64> {
    let (root, _) = reset(instance.clone());
    let mirror = MirrorSim::start(instance);
    let mut history = Vec::new();
    compare_node(&root, &mirror, &history)?;
    let mut nodes = 0u64;
    explore(&root, &mirror, &mut history, &mut nodes, node_limit)?;
    Ok(nodes)
}

fn explore(
    env: &EnvState,
    mirror: &MirrorSim,
    history: &mut Vec<Action>,
    nodes: &mut u64,
    node_limit: u64,
) -> Result<()> {
    if env.terminal {
        return Ok(());
    }
    for action in admissible_actions(env) {
        *nodes += 1;
        if *nodes > node_limit {
            return Err(Error::OracleGuard(format!(
                "exhaustive check exceeded {node_limit} nodes"
            )));
        }
        let mut e = env.clone();
        let mut m = mirror.clone();
        let res = step(&mut e, action)?;
        let mr = m.act(&e.instance, action);
        history.push(action);
        if res.reward != mr {
            return Err(divergence("reward mismatch", &e, &m, history));
        }
        compare_node(&e, &m, history)?;
        explore(&e, &m, history, nodes, node_limit)?;
        history.pop();
    }
    Ok(())
}
