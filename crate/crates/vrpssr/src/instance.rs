//! Scenario generation: customer locations and request times sampled around
//! fixed clusters, plus a versioned text format for persisting instances.
//!
//! Generation is a pure function of `(config, seed)` using ChaCha8, so golden
//! files and experiment manifests stay stable across runs and platforms.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// Max rejection redraws when placing a single customer before the grid is
/// declared saturated.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// A grid cell. `(0, 0)` is the lower-left cell; `x` grows rightward and `y`
/// grows upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerSpec {
    pub id: u32,
    pub cell: Cell,
    /// Minute at which this customer starts requesting service, in `[0, T-1]`.
    pub request_time: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub width: u32,
    pub height: u32,
    /// Workday duration T in minutes.
    pub horizon: u32,
    pub depot: Cell,
    pub cluster_centers: Vec<Cell>,
    pub cluster_weights: Vec<f64>,
    /// Per-axis stddev of the normal placement draw, in cells.
    pub cluster_std: f64,
    /// Expected number of customers already requesting at t=0.
    pub initial_mean: f64,
    /// Expected number of customers requesting over all of t in {1..T-1}.
    pub ongoing_mean_total: f64,
    pub reward_per_customer: f64,
    /// Minutes consumed by a wait action.
    pub wait_time: u32,
}

impl InstanceConfig {
    /// The 32x32 / T=230 setup with three clusters.
    pub fn paper() -> Self {
        InstanceConfig {
            width: 32,
            height: 32,
            horizon: 230,
            depot: Cell::new(16, 16),
            cluster_centers: vec![Cell::new(8, 8), Cell::new(8, 24), Cell::new(24, 16)],
            cluster_weights: vec![0.25, 0.5, 0.25],
            cluster_std: 2f64.sqrt(),
            initial_mean: 15.0,
            ongoing_mean_total: 15.0,
            reward_per_customer: 10.0,
            wait_time: 1,
        }
    }

    /// Desk-scale setup: 8x8 grid, T=40, two clusters.
    pub fn small() -> Self {
        InstanceConfig {
            width: 8,
            height: 8,
            horizon: 40,
            depot: Cell::new(4, 4),
            cluster_centers: vec![Cell::new(2, 2), Cell::new(6, 6)],
            cluster_weights: vec![0.5, 0.5],
            cluster_std: 1.0,
            initial_mean: 4.0,
            ongoing_mean_total: 4.0,
            reward_per_customer: 10.0,
            wait_time: 1,
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as u32) < self.width && (cell.y as u32) < self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidConfig("grid must be at least 2x2".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !self.contains(self.depot) {
            return Err(Error::InvalidConfig("depot outside grid".into()));
        }
        if self.cluster_centers.is_empty() {
            return Err(Error::InvalidConfig("need at least one cluster".into()));
        }
        if self.cluster_centers.len() != self.cluster_weights.len() {
            return Err(Error::InvalidConfig(
                "cluster_centers and cluster_weights lengths differ".into(),
            ));
        }
        for c in &self.cluster_centers {
            if !self.contains(*c) {
                return Err(Error::InvalidConfig(format!(
                    "cluster center ({}, {}) outside grid",
                    c.x, c.y
                )));
            }
        }
        let wsum: f64 = self.cluster_weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || self.cluster_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig(
                "cluster_weights must be nonnegative and sum to 1".into(),
            ));
        }
        if self.cluster_std < 0.0 {
            return Err(Error::InvalidConfig("cluster_std must be >= 0".into()));
        }
        if self.initial_mean < 0.0 || self.ongoing_mean_total < 0.0 {
            return Err(Error::InvalidConfig("arrival means must be >= 0".into()));
        }
        if self.wait_time < 1 {
            return Err(Error::InvalidConfig("wait_time must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub config: InstanceConfig,
    pub customers: Vec<CustomerSpec>,
    pub seed: u64,
}

impl Instance {
    /// Checks the collective customer invariants (in-grid, off-depot,
    /// distinct cells, request times inside the horizon).
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let mut seen = HashSet::new();
        for c in &self.customers {
            if !self.config.contains(c.cell) {
                return Err(Error::InvalidConfig(format!(
                    "customer {} at ({}, {}) outside grid",
                    c.id, c.cell.x, c.cell.y
                )));
            }
            if c.cell == self.config.depot {
                return Err(Error::InvalidConfig(format!(
                    "customer {} placed on the depot cell",
                    c.id
                )));
            }
            if c.request_time >= self.config.horizon {
                return Err(Error::InvalidConfig(format!(
                    "customer {} request_time {} outside [0, {})",
                    c.id, c.request_time, self.config.horizon
                )));
            }
            if !seen.insert(c.cell) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate customer cell ({}, {})",
                    c.cell.x, c.cell.y
                )));
            }
        }
        Ok(())
    }
}

fn poisson_count(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive mean");
    dist.sample(rng) as u64
}

/// Draws one customer cell: pick a cluster by weight, then redraw per-axis
/// normal offsets until the rounded cell is in-grid, off-depot, and free.
pub fn sample_customer_cell(
    config: &InstanceConfig,
    occupied: &HashSet<Cell>,
    rng: &mut ChaCha8Rng,
) -> Result<Cell> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut cluster = config.cluster_centers.len() - 1;
    for (i, w) in config.cluster_weights.iter().enumerate() {
        acc += w;
        if u < acc {
            cluster = i;
            break;
        }
    }
    let center = config.cluster_centers[cluster];
    let normal = Normal::new(0.0, config.cluster_std).expect("nonnegative std");
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let dx: f64 = normal.sample(rng);
        let dy: f64 = normal.sample(rng);
        let cell = Cell::new(
            center.x + dx.round() as i32,
            center.y + dy.round() as i32,
        );
        if config.contains(cell) && cell != config.depot && !occupied.contains(&cell) {
            return Ok(cell);
        }
    }
    Err(Error::GridSaturated {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Samples a full instance. The t=0 requester count is Poisson(initial_mean);
/// each later minute t in {1..T-1} independently draws
/// Poisson(ongoing_mean_total / (T-1)) requesters.
pub fn sample_instance(config: &InstanceConfig, seed: u64) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occupied = HashSet::new();
    let mut customers = Vec::new();
    let mut next_id = 0u32;

    let place = |count: u64,
                     request_time: u32,
                     occupied: &mut HashSet<Cell>,
                     customers: &mut Vec<CustomerSpec>,
                     next_id: &mut u32,
                     rng: &mut ChaCha8Rng|
     -> Result<()> {
        for _ in 0..count {
            let cell = sample_customer_cell(config, occupied, rng)?;
            occupied.insert(cell);
            customers.push(CustomerSpec {
                id: *next_id,
                cell,
                request_time,
            });
            *next_id += 1;
        }
        Ok(())
    };

    let initial = poisson_count(config.initial_mean, &mut rng);
    place(
        initial,
        0,
        &mut occupied,
        &mut customers,
        &mut next_id,
        &mut rng,
    )?;

    if config.horizon > 1 {
        let per_period = config.ongoing_mean_total / (config.horizon - 1) as f64;
        for t in 1..config.horizon {
            let n = poisson_count(per_period, &mut rng);
            place(n, t, &mut occupied, &mut customers, &mut next_id, &mut rng)?;
        }
    }

    Ok(Instance {
        config: config.clone(),
        customers,
        seed,
    })
}

fn fmt_cell(c: Cell) -> String {
    format!("{},{}", c.x, c.y)
}

/// Renders an instance in the versioned text format (v1).
pub fn instance_to_string(instance: &Instance) -> String {
    let cfg = &instance.config;
    let mut s = String::new();
    let _ = writeln!(s, "format_version: {INSTANCE_FORMAT_VERSION}");
    let _ = writeln!(s, "seed: {}", instance.seed);
    let _ = writeln!(s, "width: {}", cfg.width);
    let _ = writeln!(s, "height: {}", cfg.height);
    let _ = writeln!(s, "horizon: {}", cfg.horizon);
    let _ = writeln!(s, "depot: {}", fmt_cell(cfg.depot));
    let centers: Vec<String> = cfg.cluster_centers.iter().map(|c| fmt_cell(*c)).collect();
    let _ = writeln!(s, "cluster_centers: {}", centers.join(" "));
    let weights: Vec<String> = cfg.cluster_weights.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(s, "cluster_weights: {}", weights.join(" "));
    let _ = writeln!(s, "cluster_std: {}", cfg.cluster_std);
    let _ = writeln!(s, "initial_mean: {}", cfg.initial_mean);
    let _ = writeln!(s, "ongoing_mean_total: {}", cfg.ongoing_mean_total);
    let _ = writeln!(s, "reward_per_customer: {}", cfg.reward_per_customer);
    let _ = writeln!(s, "wait_time: {}", cfg.wait_time);
    let _ = writeln!(s, "customers: {}", instance.customers.len());
    for c in &instance.customers {
        let _ = writeln!(s, "customer: {} {} {}", c.id, fmt_cell(c.cell), c.request_time);
    }
    s
}

pub fn save_instance(instance: &Instance, path: &Path) -> Result<()> {
    std::fs::write(path, instance_to_string(instance))?;
    Ok(())
}

struct InstanceParser<'a> {
    path: &'a Path,
}

impl<'a> InstanceParser<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::InstanceParse {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn field<'b>(&self, lines: &mut impl Iterator<Item = &'b str>, key: &str) -> Result<&'b str> {
        let line = lines
            .next()
            .ok_or_else(|| self.err(format!("missing field '{key}'")))?;
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| self.err(format!("expected 'key: value' line for '{key}'")))?;
        if k.trim() != key {
            return Err(self.err(format!("expected field '{key}', found '{}'", k.trim())));
        }
        Ok(v.trim())
    }

    fn parse_num<T: std::str::FromStr>(&self, raw: &str, key: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| self.err(format!("field '{key}': cannot parse '{raw}'")))
    }

    fn parse_cell(&self, raw: &str, key: &str) -> Result<Cell> {
        let (x, y) = raw
            .split_once(',')
            .ok_or_else(|| self.err(format!("field '{key}': expected 'x,y', found '{raw}'")))?;
        Ok(Cell::new(
            self.parse_num(x.trim(), key)?,
            self.parse_num(y.trim(), key)?,
        ))
    }
}

pub fn parse_instance(path: &Path, text: &str) -> Result<Instance> {
    let p = InstanceParser { path };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());

    let version: u32 = p.parse_num(p.field(&mut lines, "format_version")?, "format_version")?;
    if version != INSTANCE_FORMAT_VERSION {
        return Err(Error::InstanceVersion {
            path: path.to_path_buf(),
            found: version,
            expected: INSTANCE_FORMAT_VERSION,
        });
    }

    let seed: u64 = p.parse_num(p.field(&mut lines, "seed")?, "seed")?;
    let width: u32 = p.parse_num(p.field(&mut lines, "width")?, "width")?;
    let height: u32 = p.parse_num(p.field(&mut lines, "height")?, "height")?;
    let horizon: u32 = p.parse_num(p.field(&mut lines, "horizon")?, "horizon")?;
    let depot = p.parse_cell(p.field(&mut lines, "depot")?, "depot")?;

    let centers_raw = p.field(&mut lines, "cluster_centers")?;
    let mut cluster_centers = Vec::new();
    for tok in centers_raw.split_whitespace() {
        cluster_centers.push(p.parse_cell(tok, "cluster_centers")?);
    }

    let weights_raw = p.field(&mut lines, "cluster_weights")?;
    let mut cluster_weights = Vec::new();
    for tok in weights_raw.split_whitespace() {
        cluster_weights.push(p.parse_num::<f64>(tok, "cluster_weights")?);
    }

    let cluster_std: f64 = p.parse_num(p.field(&mut lines, "cluster_std")?, "cluster_std")?;
    let initial_mean: f64 = p.parse_num(p.field(&mut lines, "initial_mean")?, "initial_mean")?;
    let ongoing_mean_total: f64 =
        p.parse_num(p.field(&mut lines, "ongoing_mean_total")?, "ongoing_mean_total")?;
    let reward_per_customer: f64 = p.parse_num(
        p.field(&mut lines, "reward_per_customer")?,
        "reward_per_customer",
    )?;
    let wait_time: u32 = p.parse_num(p.field(&mut lines, "wait_time")?, "wait_time")?;
    let n_customers: usize = p.parse_num(p.field(&mut lines, "customers")?, "customers")?;

    let mut customers = Vec::with_capacity(n_customers);
    for i in 0..n_customers {
        let raw = p.field(&mut lines, "customer")?;
        let mut toks = raw.split_whitespace();
        let key = format!("customer[{i}]");
        let id: u32 = p.parse_num(
            toks.next().ok_or_else(|| p.err(format!("{key}: missing id")))?,
            &key,
        )?;
        let cell = p.parse_cell(
            toks.next()
                .ok_or_else(|| p.err(format!("{key}: missing cell")))?,
            &key,
        )?;
        let request_time: u32 = p.parse_num(
            toks.next()
                .ok_or_else(|| p.err(format!("{key}: missing request_time")))?,
            &key,
        )?;
        customers.push(CustomerSpec {
            id,
            cell,
            request_time,
        });
    }

    let instance = Instance {
        config: InstanceConfig {
            width,
            height,
            horizon,
            depot,
            cluster_centers,
            cluster_weights,
            cluster_std,
            initial_mean,
            ongoing_mean_total,
            reward_per_customer,
            wait_time,
        },
        customers,
        seed,
    };
    instance.validate().map_err(|e| match e {
        Error::InvalidConfig(reason) => p.err(reason),
        other => other,
    })?;
    Ok(instance)
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(path, &text)
}
