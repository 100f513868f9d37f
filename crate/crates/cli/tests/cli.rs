use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mppde_cli::{checkpoint, dataset, report};
use mppde_core::eval::CSV_COLUMNS;
use mppde_core::model::{ModelConfig, MpPdeModel};
use tempfile::TempDir;

fn mppde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mppde")).args(args).env_remove("MPPDE_THREADS").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mppde(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &TempDir, name: &str, n_t: &str, n_x: &str, seed: &str) -> PathBuf {
    let out = p(dir, name);
    ok(&["gen-data", "--preset", "e1", "--n-traj", "2", "--n-t", n_t, "--n-x", n_x, "--seed", seed, "--out", s(&out)]);
    out
}

const TINY_MODEL: [&str; 8] = ["--layers", "1", "--hidden", "8", "--bundle-size", "2", "--batch-size", "2"];

fn train(dir: &TempDir, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let ckpt = p(dir, name);
    let mut args = vec!["train", "--data", s(data), "--out", s(&ckpt), "--seed", "5"];
    args.extend(TINY_MODEL);
    args.extend(extra);
    ok(&args);
    ckpt
}

#[test]
fn gen_data_is_byte_identical_and_sized() {
    let dir = TempDir::new().unwrap();
    let a = gen(&dir, "a", "64", "40", "7");
    let b = gen(&dir, "b", "64", "40", "7");
    let bin = |x: &Path| fs::read(x.with_extension("bin")).unwrap();
    assert_eq!(bin(&a).len(), 2 * 64 * 40 * 8);
    assert_eq!(bin(&a), bin(&b));
    let meta = |x: &Path| fs::read_to_string(x.with_extension("json")).unwrap();
    assert_eq!(meta(&a).replace("a.bin", "b.bin"), meta(&b));
    let (set, m) = dataset::load(&a).unwrap();
    assert_eq!(m.payload.bytes, 40960);
    assert_eq!(set.trajectories.len(), 2);
    assert_eq!(m.config["data"]["seed"], 7);
}

#[test]
fn summary_line_names_path_and_sizes() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "d");
    let o = ok(&["gen-data", "--n-traj", "1", "--n-t", "8", "--n-x", "16", "--out", s(&out)]);
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.contains("d.json") && line.contains("1 trajectories") && line.contains("1024 bytes"), "{line}");
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = mppde(&["gen-data", "--preset", "e9", "--out", s(&p(&dir, "x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flags_fail_fast() {
    let out = mppde(&["gen-data", "--out", "x", "--n-trajectories", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_or_foreign_dataset_is_rejected() {
    let dir = TempDir::new().unwrap();
    let d = gen(&dir, "d", "8", "16", "0");
    let json = d.with_extension("json");
    let text = fs::read_to_string(&json).unwrap();
    fs::write(&json, text.replacen("\"format_version\": 1", "\"format_version\": 2", 1)).unwrap();
    let err = dataset::load(&d).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    fs::write(&json, text).unwrap();
    let bin = d.with_extension("bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[3] ^= 1;
    fs::write(&bin, &bytes).unwrap();
    assert!(dataset::load(&d).is_err());
    let ckpt = p(&dir, "m.ckpt");
    let out = mppde(&["train", "--data", s(&d), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_learning_rate_keeps_initialisation() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "12", "16", "1");
    let ckpt = train(&dir, &data, "m.ckpt", &["--lr", "0", "--epochs", "2"]);
    let (model, header) = checkpoint::load(&ckpt).unwrap().unwrap();
    let init = MpPdeModel::new(header.model.clone(), 5).unwrap();
    for ((_, a), (_, b)) in model.named_params().zip(init.named_params()) {
        assert_eq!(a, b);
    }
    assert_eq!(header.provenance.seed, 5);
    assert_eq!(header.provenance.epochs, 2);
    assert_eq!(header.provenance.dataset_sha256, dataset::load_meta(&data).unwrap().payload.sha256);
}

#[test]
fn training_is_reproducible_and_logged() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "12", "16", "1");
    let a = train(&dir, &data, "a.ckpt", &["--epochs", "3"]);
    let b = train(&dir, &data, "b.ckpt", &["--epochs", "3"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(a.with_extension("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i);
        for key in ["one_step", "pushforward", "total", "wall_ms"] {
            assert!(v[key].is_number(), "{line}");
        }
    }
    let (m, _) = checkpoint::load(&a).unwrap().unwrap();
    assert_eq!(m.config(), &ModelConfig { num_layers: 1, hidden_dim: 8, bundle_size: 2, ..ModelConfig::default() });
}

#[test]
fn bundle_size_incompatible_with_horizon() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "8", "16", "1");
    let out = mppde(&["train", "--data", s(&data), "--out", s(&p(&dir, "m")), "--bundle-size", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("K=5") && err.contains("n_t=8"), "{err}");
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "c.toml");
    fs::write(&cfg, "[data]\nn_traj = 1\nn_t = 10\nn_x = 20\nseed = 4\n").unwrap();
    let out = p(&dir, "d");
    ok(&["--config", s(&cfg), "gen-data", "--n-x", "24", "--out", s(&out)]);
    let m = dataset::load_meta(&out).unwrap();
    assert_eq!(m.payload.shape, [1, 10, 24]);
    assert_eq!(m.seed, 4);
    assert_eq!(m.config["data"]["n_x"], 24);
    fs::write(&cfg, "[data]\nn_trajectories = 1\n").unwrap();
    assert_eq!(mppde(&["--config", s(&cfg), "gen-data", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn truth_scores_zero_error() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "20", "16", "2");
    let csv = p(&dir, "r.csv");
    ok(&["eval", "--solver", "truth", "--truth", s(&data), "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = report::parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].acc_error, 0.0);
    assert_eq!(rows[0].survival_time, 4.0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(csv.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["aggregates"][0]["acc_error"]["mean"], 0.0);
}

#[test]
fn weno_sweep_gives_three_rows_per_seed() {
    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "r.csv");
    let args = [
        "eval", "--solver", "weno5", "--n-t", "20", "--n-x", "40,50,100", "--seeds", "1,2", "--n-traj", "1", "--repeats",
        "1", "--out", s(&csv),
    ];
    ok(&args);
    let rows = report::parse_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    for seed in [1, 2] {
        let mut nx: Vec<usize> = rows.iter().filter(|r| r.seed == seed).map(|r| r.n_x).collect();
        nx.sort();
        assert_eq!(nx, vec![40, 50, 100]);
    }
}

#[test]
fn missing_checkpoint_exits_4() {
    let dir = TempDir::new().unwrap();
    let out = mppde(&["eval", "--checkpoint", s(&p(&dir, "none.ckpt")), "--out", s(&p(&dir, "r.csv"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn truth_file_excludes_generation_flags() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "8", "16", "2");
    let out = mppde(&["eval", "--solver", "truth", "--truth", s(&data), "--seeds", "3", "--out", s(&p(&dir, "r.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_prints_a_table() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "12", "16", "1");
    let ckpt = train(&dir, &data, "net.ckpt", &["--epochs", "2"]);
    let csv = p(&dir, "r.csv");
    let o = ok(&[
        "compare", "--solver", "weno5", "--checkpoint", s(&ckpt), "--truth", s(&data), "--repeats", "1", "--out", s(&csv),
    ]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("weno5") && table.contains("net"), "{table}");
    let rows = report::parse_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.solver.as_str()).collect::<Vec<_>>(), vec!["weno5", "net"]);
    assert!(rows[1].acc_error > 0.0);
    let lone = mppde(&["compare", "--solver", "weno5", "--truth", s(&data), "--out", s(&csv)]);
    assert_eq!(lone.status.code(), Some(2));
}

#[test]
fn solve_zero_problem_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "z");
    ok(&["solve", "--alpha", "0", "--zero-forcing", "--n-t", "10", "--n-x", "32", "--out", s(&out)]);
    let bytes = fs::read(out.with_extension("bin")).unwrap();
    assert_eq!(bytes.len(), 10 * 32 * 8);
    assert!(bytes.iter().all(|&b| b == 0));
}

#[test]
fn solve_heat_decays_at_the_analytic_rate() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "heat");
    ok(&["solve", "--preset", "heat", "--beta", "0.2", "--n-t", "5", "--n-x", "128", "--out", s(&out)]);
    let (set, _) = dataset::load(&out).unwrap();
    let tr = &set.trajectories[0];
    let (n, l) = (128, 16.0);
    let k = 2.0 * PI / l;
    let last = tr.row(4);
    // projection of exact cell averages onto the mode, divided by the averaging factor
    let dx = l / n as f64;
    let proj: f64 = last.iter().enumerate().map(|(i, u)| u * (k * (i as f64 + 0.5) * dx).sin()).sum::<f64>() * 2.0 / n as f64;
    let amp = proj / ((k * dx / 2.0).sin() / (k * dx / 2.0));
    let expected = (-0.2 * k * k * 4.0).exp();
    assert!((amp / expected - 1.0).abs() < 0.01, "{amp} vs {expected}");
}

#[test]
fn solve_output_is_a_truth_source() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "one");
    ok(&["solve", "--preset", "e2", "--seed", "3", "--n-t", "10", "--n-x", "24", "--out", s(&out)]);
    let csv = p(&dir, "r.csv");
    ok(&["eval", "--solver", "truth", "--solver", "weno5", "--truth", s(&out), "--repeats", "1", "--out", s(&csv)]);
    let rows = report::parse_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].acc_error, 0.0);
    assert_eq!(rows[0].preset, "e2");
    assert!(rows[1].acc_error > 0.0);
}

#[test]
fn eval_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let data = gen(&dir, "d", "12", "16", "1");
    let ckpt = train(&dir, &data, "net.ckpt", &["--epochs", "2"]);
    let run = |name: &str| {
        let csv = p(&dir, name);
        ok(&["eval", "--solver", "weno5", "--checkpoint", s(&ckpt), "--n-t", "12", "--n-x", "16", "--n-traj", "2", "--repeats",
            "1", "--out", s(&csv)]);
        let mut rows = report::parse_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
        rows.iter_mut().for_each(|r| r.runtime_ms = 0.0);
        rows
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn threads_flag_and_env() {
    let dir = TempDir::new().unwrap();
    ok(&["--threads", "1", "gen-data", "--n-traj", "1", "--n-t", "4", "--n-x", "8", "--out", s(&p(&dir, "a"))]);
    assert_eq!(mppde(&["--threads", "0", "gen-data", "--out", s(&p(&dir, "b"))]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_mppde"))
        .args(["gen-data", "--n-traj", "1", "--n-t", "4", "--n-x", "8", "--out", s(&p(&dir, "c"))])
        .env("MPPDE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
