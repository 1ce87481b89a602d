use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_vsring");

struct Run {
    code: i32,
    stderr: String,
}

fn run_in(dir: &Path, out: &str, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).env_remove("VSRING_OUT_DIR");
    if !out.is_empty() {
        cmd.args(["--out-dir", out]);
    }
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().expect("binary runs");
    Run { code: o.status.code().expect("exited"), stderr: String::from_utf8_lossy(&o.stderr).into_owned() }
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "config.toml")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

const BIG: [&str; 10] = [
    "--set",
    "dims.seq_len=8192",
    "--set",
    "ring.world=32",
    "--set",
    "ring.inner=8",
    "--set",
    "ring.outer=4",
    "--set",
    "ring.gpus_per_node=8",
];

#[test]
fn default_attn_check_passes() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["attn-check"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json(t.path().join("o/attn_check.json"));
    assert_eq!(rep["passed"], true);
    let names: Vec<&str> = rep["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in ["sparse_forward_vs_dense", "ring_flat_vs_dense", "ring_hierarchical_vs_dense", "ring_backward_vs_dense"] {
        assert!(names.contains(&n), "{names:?}");
    }
}

#[test]
fn corrupted_index_fails_the_check() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["attn-check", "--corrupt-index"], &[]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    let rep = json(t.path().join("o/attn_check.json"));
    assert_eq!(rep["passed"], false);
    let sparse = rep["checks"].as_array().unwrap().iter().find(|c| c["name"] == "sparse_forward_vs_dense").unwrap();
    assert_eq!(sparse["passed"], false);
}

#[test]
fn indivisible_world_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["--set", "dims.seq_len=100", "attn-check"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("ring.world") && r.stderr.contains("dims.seq_len"), "{}", r.stderr);
    assert!(!t.path().join("o").exists(), "nothing runs before validation");
}

#[test]
fn config_errors_name_the_key() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.toml"), "[dims]\nseq_len = 512\nhead_dim = 32\nheads = 1\ninputs = \"rope\"\ntheta_base = 1e4\nwidth = 3\n").unwrap();
    let r = run_in(t.path(), "o", &["--config", "c.toml", "pattern"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("dims") && r.stderr.contains("width"), "{}", r.stderr);

    let r = run_in(t.path(), "o", &["--set", "ring.world=\"four\"", "pattern"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("ring.world"), "{}", r.stderr);
}

#[test]
fn latency_reference_breakdown() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run_in(t.path(), "o", &["latency"], &[]).code, 0);
    let rep = json(t.path().join("o/latency.json"));
    let tot = &rep["totals"];
    for (k, want) in [("fwd_naive", 34.10), ("fwd_hier", 19.53), ("bwd_naive", 111.81), ("bwd_hier", 88.56)] {
        assert!((tot[k].as_f64().unwrap() - want).abs() <= 0.01, "{k}: {}", tot[k]);
    }
    assert!((rep["fwd_reduction"].as_f64().unwrap() * 100.0 - 42.7).abs() <= 0.2);
    let csv = fs::read_to_string(t.path().join("o/latency.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "naive_total,34.1000000,111.810000"), "{csv}");
}

#[test]
fn latency_two_workers_by_hand() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run_in(t.path(), "o", &["--set", "latency.world=2", "latency"], &[]).code, 0);
    let tot = json(t.path().join("o/latency.json"))["totals"].clone();
    // one step at max(comp, intra, inter) then the last chunk; or two at max(comp, intra)
    let fwd_naive = 1.13 + 2.08 + 0.98 + 0.51;
    let fwd_hier = 1.13 + 2.08 + 2.0 * 0.51;
    let bwd_naive = 1.86 + 1.90 + 3.40 + 2.65;
    let bwd_hier = 1.86 + 1.90 + 2.0 * 2.65;
    for (k, want) in [("fwd_naive", fwd_naive), ("fwd_hier", fwd_hier), ("bwd_naive", bwd_naive), ("bwd_hier", bwd_hier)] {
        assert!((tot[k].as_f64().unwrap() - want).abs() < 1e-12, "{k}");
    }
}

#[test]
fn latency_missing_parameter() {
    let t = tempfile::tempdir().unwrap();
    fs::write(
        t.path().join("c.toml"),
        "[latency]\nworld = 32\n[latency.forward]\nt_index = 1.0\nt_comp = 1.0\nt_cpu = 1.0\nt_intra = 1.0\n\
         [latency.backward]\nt_index = 1.0\nt_comp = 1.0\nt_cpu = 1.0\nt_intra = 1.0\nt_inter = 1.0\n",
    )
    .unwrap();
    let r = run_in(t.path(), "o", &["--config", "c.toml", "latency"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("latency.forward") && r.stderr.contains("t_inter"), "{}", r.stderr);
}

#[test]
fn rope_zero_model_is_flat() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["--set", "rope.model=zero", "--set", "rope.max_delta=64", "rope"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = fs::read_to_string(t.path().join("o/band_profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,expected,mc_mean,mc_se"));
    for l in lines {
        assert_eq!(l.split(',').nth(1), Some("0.00000000"), "{l}");
    }
}

#[test]
fn rope_default_model_agrees() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["--set", "rope.max_delta=64", "rope"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json(t.path().join("o/rope.json"));
    assert_eq!(rep["gate"], "applied");
    assert_eq!(rep["agreement"], true);
    assert_eq!(rep["smooth"], true);
    assert_eq!(rep["deltas"].as_array().unwrap().len(), 5);
}

#[test]
fn rope_refuses_gate_below_minimum_trials() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(t.path(), "o", &["--set", "rope.trials=100", "rope"], &[]);
    assert_eq!(r.code, 0);
    assert!(r.stderr.contains("warning"), "{}", r.stderr);
    let rep = json(t.path().join("o/rope.json"));
    assert_eq!(rep["gate"], "refused");
    assert_eq!(rep["agreement"], Value::Null);
}

fn layout_id(rep: &Value, layout: &str) -> f64 {
    rep["layouts"].as_array().unwrap().iter().find(|l| l["layout"] == layout).unwrap()["worker_id_mean"].as_f64().unwrap()
}

#[test]
fn balance_dense_pattern() {
    let t = tempfile::tempdir().unwrap();
    let r = run_in(
        t.path(),
        "o",
        &["--set", "balance.pattern=dense", "--set", "balance.layouts=[\"zigzag\",\"striped_token\",\"striped_block\"]", "--set", "balance.trials=1", "balance"],
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json(t.path().join("o/balance.json"));
    assert!((layout_id(&rep, "zigzag") - 1.0).abs() < 1e-9);
    assert!((layout_id(&rep, "striped_token") - 1.0).abs() < 1e-9);
    // whole stripes leave the diagonal tile of a stripe unevenly split
    assert!(layout_id(&rep, "striped_block") > 1.0);
}

#[test]
fn balance_sparse_striped_beats_zigzag() {
    let t = tempfile::tempdir().unwrap();
    let mut args = BIG.to_vec();
    args.extend(["--workers", "4", "balance"]);
    let r = run_in(t.path(), "o", &args, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json(t.path().join("o/balance.json"));
    let frac = rep["orderings"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["lower"] == "striped_block" && o["higher"] == "zigzag")
        .unwrap()["fraction"]
        .as_f64()
        .unwrap();
    assert!(frac >= 0.9, "{frac}");
    assert!(layout_id(&rep, "striped_block") < layout_id(&rep, "zigzag"));
    let trials = fs::read_to_string(t.path().join("o/balance_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 10 * 2);
}

#[test]
fn balance_reads_step_logs() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run_in(t.path(), "o", &["ring-sim"], &[]).code, 0);
    let logs = fs::read_to_string(t.path().join("o/step_logs_h0_fwd.csv")).unwrap();
    assert_eq!(logs.lines().next(), Some("rank,outer_step,inner_step,kv_origin,flops,comp_ms,comm_ms"));
    assert_eq!(logs.lines().count(), 1 + 4 * 4);
    let r = run_in(t.path(), "o", &["balance", "--logs", "o/step_logs_h0_fwd.csv"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let from_logs = json(t.path().join("o/balance_logs.json"));
    let sim = json(t.path().join("o/ring_sim.json"));
    let a = from_logs["worker_id"].as_f64().unwrap();
    let b = sim["heads"][0]["forward"]["imbalance"]["worker_id"].as_f64().unwrap();
    // the CSV rounds times to nine significant digits
    assert!((a - b).abs() < 1e-6 * b, "{a} vs {b}");
}

#[test]
fn reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    for cmd in [&["pattern"][..], &["ring-sim"], &["balance"], &["latency"], &["rope", "--set", "rope.max_delta=32"], &["attn-check"]] {
        let a = run_in(t.path(), "a", cmd, &[]);
        let b = run_in(t.path(), "b", cmd, &[]);
        assert_eq!((a.code, b.code), (0, 0), "{cmd:?}");
        assert_eq!(files(&t.path().join("a")), files(&t.path().join("b")), "{cmd:?}");
        fs::remove_dir_all(t.path().join("a")).unwrap();
        fs::remove_dir_all(t.path().join("b")).unwrap();
    }
}

#[test]
fn workers_do_not_change_results() {
    let t = tempfile::tempdir().unwrap();
    for cmd in [&["attn-check"][..], &["ring-sim"], &["balance"], &["rope", "--set", "rope.max_delta=32"]] {
        let mut threaded = cmd.to_vec();
        threaded.extend(["--workers", "4"]);
        assert_eq!(run_in(t.path(), "a", cmd, &[]).code, 0);
        assert_eq!(run_in(t.path(), "b", &threaded, &[]).code, 0);
        assert_eq!(files(&t.path().join("a")), files(&t.path().join("b")), "{cmd:?}");
    }
}

#[test]
fn output_directory_precedence() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run_in(t.path(), "", &["latency"], &[("VSRING_OUT_DIR", "env")]).code, 0);
    assert!(t.path().join("env/latency.json").exists());
    assert_eq!(run_in(t.path(), "flag", &["latency"], &[("VSRING_OUT_DIR", "env2")]).code, 0);
    assert!(t.path().join("flag/latency.json").exists());
    assert!(!t.path().join("env2").exists());
    fs::write(t.path().join("c.toml"), "out_dir = \"file\"\n").unwrap();
    assert_eq!(run_in(t.path(), "", &["--config", "c.toml", "latency"], &[]).code, 0);
    assert!(t.path().join("file/latency.json").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.toml"), "seed = 5\n").unwrap();
    assert_eq!(run_in(t.path(), "a", &["--config", "c.toml", "--seed", "9", "pattern"], &[]).code, 0);
    assert_eq!(run_in(t.path(), "b", &["--seed", "9", "pattern"], &[]).code, 0);
    assert_eq!(files(&t.path().join("a")), files(&t.path().join("b")));
    assert_eq!(run_in(t.path(), "c", &["--config", "c.toml", "pattern"], &[]).code, 0);
    assert_ne!(files(&t.path().join("a")), files(&t.path().join("c")));
}
