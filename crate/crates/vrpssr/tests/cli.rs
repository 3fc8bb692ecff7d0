//! End-to-end checks of the command-line binary: artifact layout,
//! reproducibility, config override precedence, and exit codes.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrpssr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_is_reproducible_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let out = out.to_str().unwrap();
        assert_ok(&run(&[
            "generate", "--preset", "small", "--seed", "42", "--count", "3", "--out", out,
        ]));
    }
    for name in [
        "manifest.txt",
        "config.toml",
        "instance_000042.txt",
        "instance_000043.txt",
        "instance_000044.txt",
    ] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let golden = include_bytes!("golden/instance_small_seed42.txt");
    assert_eq!(
        std::fs::read(out_a.join("instance_000042.txt")).unwrap(),
        golden,
        "generated instance differs from the frozen golden file"
    );

    // count=0 still succeeds with an empty manifest.
    let empty = dir.path().join("empty");
    assert_ok(&run(&[
        "generate", "--preset", "small", "--count", "0", "--out", empty.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read_to_string(empty.join("manifest.txt")).unwrap(), "");
}

#[test]
fn train_writes_artifacts_and_resume_requires_matching_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train");
    let out_s = out.to_str().unwrap();
    assert_ok(&run(&[
        "train", "--preset", "small", "--episodes", "12", "--seed", "3",
        "--out", out_s, "--checkpoint-every", "5", "--replay-in-checkpoint",
    ]));
    for name in [
        "config.toml",
        "train_log.jsonl",
        "curve.csv",
        "checkpoint_latest.bin",
        "checkpoint_final.bin",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let episodes: Vec<u64> = log
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["episode"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(episodes, (0..12).collect::<Vec<_>>());
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("episode,return,trailing_mean\n"));
    assert_eq!(curve.lines().count(), 13);

    // Mismatched config on resume is refused with the usage exit code.
    let ckpt = out.join("checkpoint_final.bin");
    let bad = run(&[
        "train", "--preset", "small", "--episodes", "12", "--seed", "4",
        "--out", out_s, "--resume", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("checkpoint"));
}

#[test]
fn eval_is_deterministic_and_rollout_dumps_frames() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("train");
    assert_ok(&run(&[
        "train", "--preset", "small", "--episodes", "8", "--seed", "3",
        "--out", train_out.to_str().unwrap(),
    ]));
    let ckpt = train_out.join("checkpoint_final.bin");

    let eval_a = dir.path().join("ea");
    let eval_b = dir.path().join("eb");
    for out in [&eval_a, &eval_b] {
        assert_ok(&run(&[
            "eval", "--preset", "small", "--policy", ckpt.to_str().unwrap(),
            "--instances", "5", "--seed", "50", "--out", out.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(eval_a.join("eval.jsonl")).unwrap(),
        std::fs::read(eval_b.join("eval.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(eval_a.join("eval.csv")).unwrap(),
        std::fs::read(eval_b.join("eval.csv")).unwrap()
    );

    let roll = dir.path().join("roll");
    assert_ok(&run(&[
        "rollout", "--preset", "small", "--checkpoint", ckpt.to_str().unwrap(),
        "--seed", "5", "--out", roll.to_str().unwrap(),
    ]));
    let trace = std::fs::read_to_string(roll.join("trace.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = trace
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let steps = records.len() - 1; // first record is the initial state
    for k in 0..=steps {
        assert!(
            roll.join(format!("frame_{k:04}.pgm")).exists(),
            "frame {k} missing"
        );
    }
    assert!(!roll.join(format!("frame_{:04}.pgm", steps + 1)).exists());
    // Small-preset frames are 8+4 x 8+4+2 portable graymaps.
    let pgm = std::fs::read(roll.join("frame_0000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n12 14\n"));
    // The trace's reward column sums to the reported episode return.
    let total: f64 = records.iter().map(|r| r["reward"].as_f64().unwrap()).sum();
    assert!(records.last().unwrap()["terminal"].as_bool().unwrap());
    assert_eq!(total, total.round());
    assert!(total >= 0.0);
}

#[test]
fn config_file_overrides_preset_and_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("override.toml");
    std::fs::write(
        &cfg_path,
        "[instance]\nhorizon = 20\n\n[training]\nseed = 99\nepisodes = 5\n",
    )
    .unwrap();
    let out = dir.path().join("gen");
    assert_ok(&run(&[
        "generate", "--preset", "small", "--config", cfg_path.to_str().unwrap(),
        "--seed", "123", "--count", "1", "--out", out.to_str().unwrap(),
    ]));
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("horizon = 20"), "file override lost");
    assert!(resolved.contains("seed = 123"), "flag should beat file");
    assert!(resolved.contains("episodes = 5"), "file override lost");
    assert!(out.join("instance_000123.txt").exists());
}

#[test]
fn verify_quick_passes_and_bad_args_exit_2() {
    let out = run(&["verify", "--quick"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS ").count(), 8);
    assert_eq!(stdout.matches("FAIL ").count(), 0);

    assert_eq!(run(&["generate", "--preset", "huge"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        run(&["eval", "--policy", "missing.bin"]).status.code(),
        Some(2)
    );
}
