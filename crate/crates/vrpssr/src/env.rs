//! Episode dynamics on the Manhattan grid: one minute per move or wait,
//! request revelation at the clock minute, service on arrival, and forced
//! termination once the remaining time only just covers the trip home.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Cell, Instance};
use crate::obs::{feature_layers, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Wait,
}

pub const ACTIONS: [Action; 5] = [
    Action::Up,
    Action::Down,
    Action::Left,
    Action::Right,
    Action::Wait,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Wait => 4,
        }
    }

    pub fn from_index(i: usize) -> Action {
        ACTIONS[i]
    }

    /// Unit displacement (dx, dy). Up is +y.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Wait => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CustomerStatus {
    /// May still request service later.
    Potential,
    /// Currently requesting service.
    Active,
    /// Visited while active; out of the game.
    Served,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvOptions {
    /// Reveal requests before the service check, so a customer activating at
    /// the arrival minute is servable on arrival.
    pub reveal_before_serve: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        EnvOptions {
            reveal_before_serve: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub instance: Arc<Instance>,
    pub vehicle: Cell,
    /// Clock in minutes, in [0, T].
    pub t: u32,
    pub status: Vec<CustomerStatus>,
    pub terminal: bool,
    pub episode_return: f64,
    pub options: EnvOptions,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub reward: f64,
    pub terminal: bool,
    pub observation: Observation,
    /// Customers that became active during this step.
    pub newly_active: Vec<u32>,
    /// Customer served during this step, if any.
    pub served: Option<u32>,
}

pub fn manhattan_time(a: Cell, b: Cell) -> u32 {
    a.manhattan(b)
}

impl EnvState {
    pub fn horizon(&self) -> u32 {
        self.instance.config.horizon
    }

    pub fn remaining_time(&self) -> u32 {
        self.horizon().saturating_sub(self.t)
    }

    pub fn served_count(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == CustomerStatus::Served)
            .count()
    }

    fn check_terminal(&mut self) {
        let home = manhattan_time(self.vehicle, self.instance.config.depot);
        if self.horizon().saturating_sub(self.t) <= home || self.t >= self.horizon() {
            self.terminal = true;
        }
    }
}

pub fn reset(instance: Arc<Instance>) -> (EnvState, Observation) {
    reset_with_options(instance, EnvOptions::default())
}

pub fn reset_with_options(instance: Arc<Instance>, options: EnvOptions) -> (EnvState, Observation) {
    let status = instance
        .customers
        .iter()
        .map(|c| {
            if c.request_time == 0 {
                CustomerStatus::Active
            } else {
                CustomerStatus::Potential
            }
        })
        .collect();
    let mut state = EnvState {
        vehicle: instance.config.depot,
        t: 0,
        status,
        terminal: false,
        episode_return: 0.0,
        options,
        instance,
    };
    state.check_terminal();
    let obs = feature_layers(&state);
    (state, obs)
}

/// All five actions minus moves that would leave the grid.
pub fn admissible_actions(state: &EnvState) -> Vec<Action> {
    let cfg = &state.instance.config;
    ACTIONS
        .iter()
        .copied()
        .filter(|a| {
            let (dx, dy) = a.delta();
            cfg.contains(Cell::new(state.vehicle.x + dx, state.vehicle.y + dy))
        })
        .collect()
}

pub fn admissible_mask(state: &EnvState) -> [bool; 5] {
    let mut mask = [false; 5];
    for a in admissible_actions(state) {
        mask[a.index()] = true;
    }
    mask
}

/// Advances the episode by one minute. Phases: move (off-grid moves act as
/// wait), tick the clock, reveal requests for the new minute, serve the
/// vehicle's cell, then check termination.
pub fn step(state: &mut EnvState, action: Action) -> Result<StepResult> {
    if state.terminal {
        return Err(Error::TerminalStep);
    }
    let cfg = state.instance.config.clone();

    let (dx, dy) = action.delta();
    let target = Cell::new(state.vehicle.x + dx, state.vehicle.y + dy);
    if cfg.contains(target) {
        state.vehicle = target;
    }

    state.t += 1;

    let mut newly_active = Vec::new();
    let reveal = |state: &mut EnvState, newly_active: &mut Vec<u32>| {
        for (i, c) in state.instance.customers.iter().enumerate() {
            if state.status[i] == CustomerStatus::Potential && c.request_time == state.t {
                state.status[i] = CustomerStatus::Active;
                newly_active.push(c.id);
            }
        }
    };
    let serve = |state: &mut EnvState| -> (f64, Option<u32>) {
        for (i, c) in state.instance.customers.iter().enumerate() {
            if state.status[i] == CustomerStatus::Active && c.cell == state.vehicle {
                state.status[i] = CustomerStatus::Served;
                return (state.instance.config.reward_per_customer, Some(c.id));
            }
        }
        (0.0, None)
    };

    let (reward, served) = if state.options.reveal_before_serve {
        reveal(state, &mut newly_active);
        serve(state)
    } else {
        let r = serve(state);
        reveal(state, &mut newly_active);
        r
    };
    state.episode_return += reward;

    state.check_terminal();

    Ok(StepResult {
        reward,
        terminal: state.terminal,
        observation: feature_layers(state),
        newly_active,
        served,
    })
}

/// One JSON-lines record per step, for replay and debugging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u32,
    pub vehicle: (i32, i32),
    pub action: Option<Action>,
    pub reward: f64,
    pub newly_active: Vec<u32>,
    pub served: Option<u32>,
    pub terminal: bool,
}

impl TraceRecord {
    pub fn initial(state: &EnvState) -> Self {
        let newly_active = state
            .instance
            .customers
            .iter()
            .enumerate()
            .filter(|(i, _)| state.status[*i] == CustomerStatus::Active)
            .map(|(_, c)| c.id)
            .collect();
        TraceRecord {
            t: state.t,
            vehicle: (state.vehicle.x, state.vehicle.y),
            action: None,
            reward: 0.0,
            newly_active,
            served: None,
            terminal: state.terminal,
        }
    }

    pub fn from_step(state: &EnvState, action: Action, result: &StepResult) -> Self {
        TraceRecord {
            t: state.t,
            vehicle: (state.vehicle.x, state.vehicle.y),
            action: Some(action),
            reward: result.reward,
            newly_active: result.newly_active.clone(),
            served: result.served,
            terminal: result.terminal,
        }
    }
}
