//! End-to-end tests of the `frontier` binary: process spawning, exit codes,
//! and the on-disk run layout. Each test redirects output into its own temp
//! directory through the FRONTIER_OUT_ROOT override so parallel tests never
//! share state.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_frontier");

/// Single bump, tiny network, 300 env steps: trains in about a second while
/// still exercising every artifact writer.
const BASE_CONFIG: &str = r#"
experiment = "cli_smoke"
reward_mode = "vf"
seeds = [1]
output_dir = "runs"

[env]
horizon = 30

[field]
dim = 2

[[field.bumps]]
amplitude = 1.0
center = [0.5, 0.5]
sigma = 0.2

[shaping]
u_mid = 0.5

[train]
batch_size = 32
hidden_width = 16
hidden_depth = 1
replay_capacity = 2000
warmup_steps = 50
total_env_steps = 300
metrics_every = 100
target_entropy = -2.0

[diagnostics]
eval_episodes = 4
curvature_samples = 2000
reference_episodes = 3
trajectory_episodes = 2
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, BASE_CONFIG).unwrap();
    path
}

fn frontier(root: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("FRONTIER_OUT_ROOT", root)
        .output()
        .expect("spawn frontier binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited without a code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// The run directory created under `root` (exactly one is expected).
fn only_run_dir(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run dir in {root:?}, got {dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn train_writes_the_full_run_layout() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(tmp.path(), &["train", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let run = only_run_dir(tmp.path());
    for f in ["config.toml", "run.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let seed = run.join("seed_1");
    for f in [
        "metrics.jsonl",
        "checkpoint.ck",
        "checkpoint_last_good.ck",
        "diagnostics.json",
        "visitation.txt",
    ] {
        assert!(seed.join(f).is_file(), "missing seed_1/{f}");
    }
    // trajectory_episodes = 2 of 4 eval episodes: the final two indices.
    assert!(seed.join("trajectory_002.csv").is_file());
    assert!(seed.join("trajectory_003.csv").is_file());
    assert!(!seed.join("trajectory_001.csv").exists());

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed_status"]["1"], "ok");
}

#[test]
fn train_reruns_produce_byte_identical_metrics() {
    let tmp_a = TempDir::new().unwrap();
    let tmp_b = TempDir::new().unwrap();
    let cfg = write_config(tmp_a.path());
    assert_eq!(code(&frontier(tmp_a.path(), &["train", cfg.to_str().unwrap()])), 0);
    assert_eq!(code(&frontier(tmp_b.path(), &["train", cfg.to_str().unwrap()])), 0);

    let (run_a, run_b) = (only_run_dir(tmp_a.path()), only_run_dir(tmp_b.path()));
    assert_eq!(run_a.file_name(), run_b.file_name(), "config hash changed between runs");
    let bytes_a = fs::read(run_a.join("seed_1/metrics.jsonl")).unwrap();
    let bytes_b = fs::read(run_b.join("seed_1/metrics.jsonl")).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "metrics JSONL differs between identical runs");
}

#[test]
fn train_missing_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = frontier(tmp.path(), &["train", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_with_zero_env_steps_still_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(
        tmp.path(),
        &["train", cfg.to_str().unwrap(), "--set", "train.total_env_steps=0"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run = only_run_dir(tmp.path());
    // Only the format header: no interval was ever reached.
    let metrics = fs::read_to_string(run.join("seed_1/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(run.join("seed_1/checkpoint.ck").is_file());
    assert!(run.join("seed_1/diagnostics.json").is_file());
}

#[test]
fn train_divergence_exits_3_and_keeps_last_good_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(
        tmp.path(),
        &[
            "train",
            cfg.to_str().unwrap(),
            "--set",
            "train.alpha_lr=1e14",
            "--set",
            "train.target_entropy=8.0",
            "--set",
            "train.warmup_steps=10",
            "--set",
            "train.total_env_steps=600",
        ],
    );
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run = only_run_dir(tmp.path());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed_status"]["1"], "diverged");
    assert!(run.join("seed_1/checkpoint_last_good.ck").is_file());
    assert!(!run.join("seed_1/checkpoint.ck").exists());
}

#[test]
fn verify_default_config_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(tmp.path(), &["verify", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stdout: {}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS skew_orthogonality"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_tampered_skew_generator_fails_with_exit_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(
        tmp.path(),
        &["verify", cfg.to_str().unwrap(), "--set", "shaping.w_tamper=0.1"],
    );
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL skew_orthogonality"));
}

#[test]
fn verify_bumpless_field_passes_vacuously() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("flat.toml");
    // `bumps = []` must be explicit: leaving the key out entirely falls back
    // to the default field, which has one centered bump.
    let flat = BASE_CONFIG.replace(
        "[[field.bumps]]\namplitude = 1.0\ncenter = [0.5, 0.5]\nsigma = 0.2\n",
        "bumps = []\n",
    );
    assert!(flat.len() < BASE_CONFIG.len(), "bump block not replaced");
    fs::write(&path, flat).unwrap();
    let out = frontier(tmp.path(), &["verify", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stdout: {}", stdout(&out));
    assert!(stdout(&out).contains("(vacuous)"));
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&frontier(tmp.path(), &["train", cfg.to_str().unwrap()])), 0);
    let run = only_run_dir(tmp.path());
    let out = frontier(
        tmp.path(),
        &["eval", run.to_str().unwrap(), "seed_1/no_such.ck"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_is_read_only_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&frontier(tmp.path(), &["train", cfg.to_str().unwrap()])), 0);
    let run = only_run_dir(tmp.path());
    let ck_before = fs::read(run.join("seed_1/checkpoint.ck")).unwrap();
    let metrics_before = fs::read(run.join("seed_1/metrics.jsonl")).unwrap();

    let args = [
        "eval",
        run.to_str().unwrap(),
        "seed_1/checkpoint.ck",
        "--episodes",
        "3",
        "--seed",
        "7",
    ];
    assert_eq!(code(&frontier(tmp.path(), &args)), 0);
    let eval_dir = run.join("eval-checkpoint-s7");
    assert!(eval_dir.is_dir());
    let traj_first = fs::read(eval_dir.join("trajectory_002.csv")).unwrap();

    // Same checkpoint and seed again: byte-identical rollouts.
    assert_eq!(code(&frontier(tmp.path(), &args)), 0);
    let traj_second = fs::read(eval_dir.join("trajectory_002.csv")).unwrap();
    assert_eq!(traj_first, traj_second);

    // The training artifacts were not touched.
    assert_eq!(ck_before, fs::read(run.join("seed_1/checkpoint.ck")).unwrap());
    assert_eq!(metrics_before, fs::read(run.join("seed_1/metrics.jsonl")).unwrap());
}

#[test]
fn eval_with_zero_episodes_succeeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&frontier(tmp.path(), &["train", cfg.to_str().unwrap()])), 0);
    let run = only_run_dir(tmp.path());
    let out = frontier(
        tmp.path(),
        &[
            "eval",
            run.to_str().unwrap(),
            "seed_1/checkpoint.ck",
            "--episodes",
            "0",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("eval-checkpoint-s0/diagnostics.json").is_file());
}

#[test]
fn compare_run_with_itself_reports_zero_deltas() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&frontier(tmp.path(), &["train", cfg.to_str().unwrap()])), 0);
    let run = only_run_dir(tmp.path());
    let out = frontier(
        tmp.path(),
        &["compare", run.to_str().unwrap(), run.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let dirs: Vec<PathBuf> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("compare-"))
        .collect();
    assert_eq!(dirs.len(), 1);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(doc["field_configs_match"], true);
    let metrics = doc["metrics"].as_object().unwrap();
    assert!(!metrics.is_empty());
    for (name, pair) in metrics {
        assert_eq!(pair["delta"].as_f64(), Some(0.0), "nonzero delta for {name}");
    }
}

#[test]
fn compare_without_diagnostics_exits_2() {
    let tmp = TempDir::new().unwrap();
    let bogus = tmp.path().join("not_a_run");
    fs::create_dir(&bogus).unwrap();
    let out = frontier(
        tmp.path(),
        &["compare", bogus.to_str().unwrap(), bogus.to_str().unwrap()],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_rejects_non_scalar_axis() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(
        tmp.path(),
        &[
            "sweep",
            cfg.to_str().unwrap(),
            "--axis",
            "seeds",
            "--values",
            "1,2",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_with_no_values_is_a_no_op() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    let out = frontier(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--axis", "shaping.c_rot"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1, "no run dir expected");
}

#[test]
fn sweep_at_the_default_value_reproduces_the_plain_run_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&frontier(tmp.path(), &["train", cfg.to_str().unwrap()])), 0);
    let plain = only_run_dir(tmp.path());

    // c_rot = 1.0 is what BASE_CONFIG resolves to, so the swept config is
    // identical and must land in the same directory.
    let out = frontier(
        tmp.path(),
        &[
            "sweep",
            cfg.to_str().unwrap(),
            "--axis",
            "shaping.c_rot",
            "--values",
            "1.0",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run_dirs: Vec<PathBuf> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(run_dirs.len(), 1, "sweep at the default value created a second dir");
    assert_eq!(run_dirs[0], plain);
}
