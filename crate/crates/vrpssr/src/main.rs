//! Command-line harness: instance generation, training, evaluation,
//! self-verification, and episode rollouts with rendered frames.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
//! The output root defaults to `./out` and can be moved with `VRPSSR_OUT`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vrpssr::agent::{
    rollout, EpisodeRecord, RolloutPolicy, Trainer, TrainingConfig,
};
use vrpssr::checkpoint::{load_checkpoint, resume_trainer, save_checkpoint};
use vrpssr::env::{reset, step, TraceRecord};
use vrpssr::instance::{load_instance, sample_instance, save_instance, InstanceConfig};
use vrpssr::nn::{forward_single, Layout, NetConfig, QNetworkParams};
use vrpssr::obs::{render_frame, write_pgm};
use vrpssr::verify;

#[derive(Parser)]
#[command(
    name = "vrpssr",
    about = "Grid-based dynamic vehicle routing with a from-scratch dueling double DQN",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample instances to text files plus a manifest.
    Generate(GenerateArgs),
    /// Train the agent; writes a JSONL log, a CSV curve, and checkpoints.
    Train(TrainArgs),
    /// Evaluate a baseline policy or a checkpoint over a fixed seed set.
    Eval(EvalArgs),
    /// Run the self-verification suite (oracles, statistics, gradients).
    Verify(VerifyArgs),
    /// Play one greedy episode from a checkpoint; dump trace and PGM frames.
    Rollout(RolloutArgs),
}

/// Preset + config file + flag overrides, shared by most subcommands.
/// Precedence: flags over file over preset.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named preset: "paper" (32x32, T=230) or "small" (8x8, T=40).
    #[arg(long, default_value = "small")]
    preset: String,
    /// TOML file overriding preset fields; may be partial. Schema matches
    /// the resolved config echoed into every run directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Enable the Huber loss with this threshold (default: squared error).
    #[arg(long)]
    huber: Option<f64>,
    /// Output directory (default: <output root>/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of instances; seeds run from --seed upward.
    #[arg(long, default_value_t = 10)]
    count: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from a checkpoint written with --replay-in-checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved config and memory estimate, then exit.
    #[arg(long)]
    dry_run: bool,
    /// Episodes between rolling checkpoints.
    #[arg(long, default_value_t = 500)]
    checkpoint_every: u64,
    /// Include the replay buffer in checkpoints (required for exact resume).
    #[arg(long)]
    replay_in_checkpoint: bool,
    /// Trailing window for the reported mean return.
    #[arg(long, default_value_t = 5000)]
    log_window: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// "random", "greedy", or a checkpoint path.
    #[arg(long, default_value = "random")]
    policy: String,
    /// Instances in the evaluation set; instance seeds run from --seed.
    #[arg(long, default_value_t = 100)]
    instances: u64,
    /// Episodes per instance (stochastic policies average over these).
    #[arg(long, default_value_t = 1)]
    episodes_per: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Reduced-scale pass for a fast smoke check.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint holding the policy network.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Play this instance file instead of sampling one from the config.
    #[arg(long)]
    instance: Option<PathBuf>,
}

enum Failure {
    /// A verification or evaluation contract failed (exit 1).
    Check(String),
    /// Bad arguments, unreadable files, invalid config (exit 2).
    Usage(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    instance: InstanceConfig,
    training: TrainingConfig,
}

impl RunConfig {
    fn preset(name: &str) -> Result<RunConfig, Failure> {
        match name {
            "paper" => Ok(RunConfig {
                instance: InstanceConfig::paper(),
                training: TrainingConfig::default(),
            }),
            "small" => Ok(RunConfig {
                instance: InstanceConfig::small(),
                training: TrainingConfig::small(),
            }),
            other => Err(Failure::Usage(format!(
                "unknown preset {other:?} (expected \"paper\" or \"small\")"
            ))),
        }
    }
}

/// Recursive table merge: values from `over` win, tables merge per key.
fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let preset = RunConfig::preset(&args.preset)?;
    let mut value = toml::Value::try_from(&preset).map_err(usage)?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        let over: toml::Table = text
            .parse()
            .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        merge_toml(&mut value, toml::Value::Table(over));
    }
    let mut cfg: RunConfig = value.try_into().map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        cfg.training.episodes = episodes;
    }
    if let Some(horizon) = args.horizon {
        cfg.instance.horizon = horizon;
    }
    if let Some(lr) = args.learning_rate {
        cfg.training.learning_rate = lr;
    }
    if let Some(batch) = args.batch_size {
        cfg.training.batch_size = batch;
    }
    if let Some(kappa) = args.huber {
        cfg.training.huber = Some(kappa);
    }
    cfg.instance.validate().map_err(usage)?;
    cfg.training.validate().map_err(usage)?;
    Ok(cfg)
}

fn out_dir(args: &ConfigArgs, subcommand: &str) -> Result<PathBuf, Failure> {
    let dir = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let root = std::env::var_os("VRPSSR_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out"));
            root.join(subcommand)
        }
    };
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Every run directory gets the fully-resolved config for provenance.
fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let text = toml::to_string_pretty(cfg).map_err(usage)?;
    fs::write(dir.join("config.toml"), text).map_err(usage)?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let cfg = resolve_config(&args.config)?;
    let dir = out_dir(&args.config, "instances")?;
    echo_config(&dir, &cfg)?;
    let base = cfg.training.seed;
    let mut manifest = String::new();
    for i in 0..args.count {
        let seed = base + i;
        let instance = sample_instance(&cfg.instance, seed).map_err(usage)?;
        let name = format!("instance_{seed:06}.txt");
        save_instance(&instance, &dir.join(&name)).map_err(usage)?;
        manifest.push_str(&format!("{name} seed={seed} customers={}\n", instance.customers.len()));
    }
    fs::write(dir.join("manifest.txt"), manifest).map_err(usage)?;
    println!("wrote {} instances to {}", args.count, dir.display());
    Ok(())
}

fn write_curve_csv(dir: &Path, window: usize) -> Result<(), Failure> {
    let log_path = dir.join("train_log.jsonl");
    let file = File::open(&log_path).map_err(usage)?;
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(usage)?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line).map_err(usage)?);
        }
    }
    let mut csv = String::from("episode,return,trailing_mean\n");
    let mut running = 0.0f64;
    for (i, rec) in records.iter().enumerate() {
        running += rec.ret;
        if i >= window {
            running -= records[i - window].ret;
        }
        let denom = (i + 1).min(window) as f64;
        csv.push_str(&format!("{},{},{:.4}\n", rec.episode, rec.ret, running / denom));
    }
    fs::write(dir.join("curve.csv"), csv).map_err(usage)?;
    Ok(())
}

fn estimated_memory(cfg: &RunConfig) -> (usize, usize) {
    let net = NetConfig::for_grid(cfg.instance.height, cfg.instance.width);
    let params = Layout::of(&net).total;
    // online + target + optimizer accumulator, f32 each.
    let network_bytes = params * 4 * 3;
    // Two shared observations per transition; one is the predecessor's, so
    // roughly one owned observation (3 planes + header) per step.
    let per_transition =
        3 * (cfg.instance.width * cfg.instance.height) as usize + 64;
    let replay_bytes = cfg.training.memory_capacity * per_transition;
    (network_bytes, replay_bytes)
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = resolve_config(&args.config)?;
    let dir = out_dir(&args.config, "train")?;

    if args.dry_run {
        let text = toml::to_string_pretty(&cfg).map_err(usage)?;
        let (net_bytes, replay_bytes) = estimated_memory(&cfg);
        println!("{text}");
        println!("# estimated memory: network+optimizer {:.1} MiB, replay up to {:.1} MiB",
            net_bytes as f64 / (1 << 20) as f64,
            replay_bytes as f64 / (1 << 20) as f64);
        return Ok(());
    }

    echo_config(&dir, &cfg)?;
    let (mut trainer, resumed) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path).map_err(usage)?;
            let t = resume_trainer(ck, &cfg.instance, &cfg.training).map_err(usage)?;
            println!("resumed at episode {} (step {})", t.episode, t.global_step);
            (t, true)
        }
        None => (
            Trainer::new(cfg.instance.clone(), cfg.training.clone()).map_err(usage)?,
            false,
        ),
    };

    let log_path = dir.join("train_log.jsonl");
    let log_file = File::options()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(usage)?;
    let mut log = BufWriter::new(log_file);

    let window = args.log_window.max(1);
    let mut trailing: Vec<f64> = Vec::new();
    let checkpoint_every = args.checkpoint_every.max(1);
    let latest = dir.join("checkpoint_latest.bin");
    let include_replay = args.replay_in_checkpoint;

    let result = trainer.train(|t| {
        let rec = t.log.last().expect("episode just recorded").clone();
        trailing.push(rec.ret);
        if trailing.len() > window {
            trailing.remove(0);
        }
        let line = serde_json::to_string(&rec)
            .map_err(|e| vrpssr::Error::InvalidConfig(e.to_string()))?;
        writeln!(log, "{line}").map_err(vrpssr::Error::from)?;
        if rec.episode % 100 == 99 || rec.episode + 1 == t.cfg.episodes {
            let mean: f64 = trailing.iter().sum::<f64>() / trailing.len() as f64;
            println!(
                "episode {:>6}  return {:>6.1}  trailing-{} mean {:>7.2}  eps {:.3}  step {}",
                rec.episode, rec.ret, trailing.len(), mean, rec.epsilon, t.global_step
            );
        }
        if (rec.episode + 1) % checkpoint_every == 0 {
            save_checkpoint(&latest, t, include_replay)?;
        }
        Ok(())
    });
    log.flush().map_err(usage)?;
    result.map_err(usage)?;

    save_checkpoint(&dir.join("checkpoint_final.bin"), &trainer, include_replay)
        .map_err(usage)?;
    write_curve_csv(&dir, window)?;
    println!("training finished: {} episodes, {} steps, artifacts in {}",
        trainer.episode, trainer.global_step, dir.display());
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let cfg = resolve_config(&args.config)?;
    let dir = out_dir(&args.config, "eval")?;
    echo_config(&dir, &cfg)?;

    let loaded_params: Option<QNetworkParams<f32>>;
    let policy = match args.policy.as_str() {
        "random" => RolloutPolicy::RandomAdmissible,
        "greedy" => RolloutPolicy::GreedyNearest,
        path => {
            let ck = load_checkpoint(Path::new(path)).map_err(usage)?;
            let want = NetConfig::for_grid(cfg.instance.height, cfg.instance.width);
            if ck.net_cfg != want {
                return Err(Failure::Usage(format!(
                    "checkpoint network is for a {}x{} grid, config wants {}x{}",
                    ck.net_cfg.input_w, ck.net_cfg.input_h,
                    cfg.instance.width, cfg.instance.height
                )));
            }
            loaded_params = Some(QNetworkParams {
                cfg: ck.net_cfg,
                data: ck.online,
            });
            RolloutPolicy::QNetwork(
                loaded_params.as_ref().unwrap(),
                cfg.training.eval_epsilon,
            )
        }
    };

    let jsonl_path = dir.join("eval.jsonl");
    let mut jsonl = BufWriter::new(File::create(&jsonl_path).map_err(usage)?);
    let mut returns = Vec::new();
    let mut served = Vec::new();
    let base = cfg.training.seed;
    for i in 0..args.instances {
        let instance =
            Arc::new(sample_instance(&cfg.instance, base + i).map_err(usage)?);
        for r in 0..args.episodes_per {
            let mut rng =
                ChaCha8Rng::seed_from_u64(base ^ (i << 20) ^ r ^ 0x0e5a_1701);
            let outcome = rollout(&instance, &policy, &mut rng).map_err(usage)?;
            let rec = serde_json::json!({
                "policy": args.policy,
                "instance_seed": base + i,
                "episode": r,
                "return": outcome.ret,
                "served": outcome.served,
                "steps": outcome.steps,
            });
            writeln!(jsonl, "{rec}").map_err(usage)?;
            returns.push(outcome.ret);
            served.push(outcome.served as f64);
        }
    }
    jsonl.flush().map_err(usage)?;

    let (ret_mean, ret_std) = mean_std(&returns);
    let (srv_mean, srv_std) = mean_std(&served);
    let csv = format!(
        "policy,episodes,mean_return,std_return,mean_served,std_served\n{},{},{:.4},{:.4},{:.4},{:.4}\n",
        args.policy, returns.len(), ret_mean, ret_std, srv_mean, srv_std
    );
    fs::write(dir.join("eval.csv"), &csv).map_err(usage)?;
    println!(
        "{}: {} episodes, return {:.2} +- {:.2}, served {:.2} +- {:.2}",
        args.policy, returns.len(), ret_mean, ret_std, srv_mean, srv_std
    );
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> CmdResult {
    let outcomes = if args.quick {
        vec![
            verify::CheckOutcome {
                name: "environment-exhaustive",
                result: verify::check_env_exhaustive(5, 101),
            },
            verify::CheckOutcome {
                name: "oracle-consistency",
                result: verify::check_oracle_consistency(10, 202),
            },
            verify::CheckOutcome {
                name: "instance-statistics",
                result: verify::check_instance_statistics(2_000),
            },
            verify::CheckOutcome {
                name: "observation-invariants",
                result: verify::check_observation_invariants(100, 303),
            },
            verify::CheckOutcome {
                name: "gradient-check",
                result: verify::check_gradients(3, 404),
            },
            verify::CheckOutcome {
                name: "dueling-identity",
                result: verify::check_dueling_identity(200, 505),
            },
            verify::CheckOutcome {
                name: "schedules",
                result: verify::check_schedules(50_000),
            },
            verify::CheckOutcome {
                name: "replay-statistics",
                result: verify::check_per_statistics(606),
            },
        ]
    } else {
        verify::run_all()
    };
    let mut failures = 0;
    for outcome in &outcomes {
        match &outcome.result {
            Ok(detail) => println!("PASS {} - {detail}", outcome.name),
            Err(detail) => {
                println!("FAIL {} - {detail}", outcome.name);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(Failure::Check(format!("{failures} verification check(s) failed")));
    }
    Ok(())
}

fn cmd_rollout(args: &RolloutArgs) -> CmdResult {
    let cfg = resolve_config(&args.config)?;
    let dir = out_dir(&args.config, "rollout")?;
    echo_config(&dir, &cfg)?;

    let instance = match &args.instance {
        Some(path) => load_instance(path).map_err(usage)?,
        None => sample_instance(&cfg.instance, cfg.training.seed).map_err(usage)?,
    };
    let ck = load_checkpoint(&args.checkpoint).map_err(usage)?;
    let want = NetConfig::for_grid(instance.config.height, instance.config.width);
    if ck.net_cfg != want {
        return Err(Failure::Usage(format!(
            "checkpoint network does not match the {}x{} instance grid",
            instance.config.width, instance.config.height
        )));
    }
    let params = QNetworkParams::<f32> {
        cfg: ck.net_cfg,
        data: ck.online,
    };

    let instance = Arc::new(instance);
    let (mut state, mut obs) = reset(instance.clone());
    let mut trace = BufWriter::new(File::create(dir.join("trace.jsonl")).map_err(usage)?);
    let initial = TraceRecord::initial(&state);
    writeln!(trace, "{}", serde_json::to_string(&initial).map_err(usage)?).map_err(usage)?;
    write_pgm(&render_frame(&state), &dir.join("frame_0000.pgm")).map_err(usage)?;

    let mut frame = 1u32;
    while !state.terminal {
        let q = forward_single(&params, &obs.to_input::<f32>());
        let mask = vrpssr::env::admissible_mask(&state);
        let action =
            vrpssr::env::Action::from_index(vrpssr::agent::greedy_masked(&q, &mask));
        let result = step(&mut state, action).map_err(usage)?;
        let rec = TraceRecord::from_step(&state, action, &result);
        writeln!(trace, "{}", serde_json::to_string(&rec).map_err(usage)?).map_err(usage)?;
        write_pgm(
            &render_frame(&state),
            &dir.join(format!("frame_{frame:04}.pgm")),
        )
        .map_err(usage)?;
        obs = result.observation;
        frame += 1;
    }
    trace.flush().map_err(usage)?;
    println!(
        "rollout: {} steps, return {}, {} frames in {}",
        frame - 1,
        state.episode_return,
        frame,
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Rollout(args) => cmd_rollout(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
