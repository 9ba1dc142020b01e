use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dflmesh::data::{self, Dataset, Targets};

fn dflmesh(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dflmesh"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const SMALL: &str = r#"{
  "topology": {"kind": "ring", "n": 6},
  "train": {"eta": 0.05, "beta": 0.5, "K": 2, "T": 10},
  "data": {"kind": "synthetic_regression", "samples": 120, "dims": 3, "groups": 6, "noise": 0.1, "partition": "group"},
  "model": {"kind": "least_squares"},
  "evaluate_bounds": true
}"#;

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    let o = dflmesh(&["simulate", "--config", "c.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["metrics.csv", "topology.json", "spectral.json", "bounds.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let spectral: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("spectral.json")).unwrap()).unwrap();
    assert!(spectral["theta"].as_f64().unwrap() > 0.0);
}

#[test]
fn topology_overlay_and_failures_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    let o = dflmesh(&["topology", "--config", "c.json", "--out", "t"], dir.path());
    assert_eq!(code(&o), 0);
    let edges = fs::read_to_string(dir.path().join("t/topology.txt")).unwrap();
    assert!(edges.lines().filter(|l| !l.starts_with('#')).count() >= 6);

    fs::write(dir.path().join("churn.txt"), "join 100\nfail 0\nfail 1\ncheck\n").unwrap();
    let o = dflmesh(
        &["overlay", "--nodes", "30", "--rings", "2", "--churn-script", "churn.txt", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let events: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/events.json")).unwrap()).unwrap();
    assert!(events.as_array().unwrap().len() > 30);

    fs::write(dir.path().join("bad_churn.txt"), "join 1\nexplode 2\n").unwrap();
    let o = dflmesh(&["overlay", "--nodes", "10", "--churn-script", "bad_churn.txt"], dir.path());
    assert_eq!(code(&o), 2);

    let o = dflmesh(
        &["failures", "--config", "c.json", "--fractions", "0,0.2", "--seeds", "2", "--out", "f"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(dir.path().join("f/failures.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    let o = dflmesh(&["failures", "--config", "c.json", "--fractions", "x"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn bounds_subcommand_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let params = r#"{"L": 1, "sigma": 1, "zeta": 1, "B": 1, "K": 2, "T": 100, "eta": 0.001953125,
                     "c": 0.1, "beta": 0.5, "lambda": 0.5, "N": 10, "n": 100, "f_gap": 1, "sup_f": 1}"#;
    fs::write(dir.path().join("p.json"), params).unwrap();
    let o = dflmesh(&["bounds", "--config", "p.json", "--t-max", "1000"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["convergence"].as_f64().unwrap() > 0.0);
    assert!(v["stability"].as_f64().unwrap() > 0.0);
    assert!((v["c_lambda"].as_f64().unwrap() - 5.0785).abs() < 1e-3);

    fs::write(dir.path().join("q.json"), params.replace("\"lambda\": 0.5", "\"lambda\": 1.5")).unwrap();
    assert_eq!(code(&dflmesh(&["bounds", "--config", "q.json"], dir.path())), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("broken.json"), "{ not json").unwrap();
    fs::write(p.join("unknown.json"), SMALL.replace("\"evaluate_bounds\"", "\"evaluate_bound\"")).unwrap();
    fs::write(
        p.join("nodata.json"),
        r#"{"topology": {"kind": "ring", "n": 4}, "train": {"eta": 0.1, "K": 1, "T": 1},
            "data": {"kind": "idx", "images": "nope", "labels": "nope", "partition": "iid"},
            "model": {"kind": "logistic"}}"#,
    )
    .unwrap();
    fs::write(p.join("beta.json"), SMALL.replace("\"beta\": 0.5", "\"beta\": 1.0")).unwrap();
    for cfg in ["broken.json", "unknown.json", "missing.json", "nodata.json", "beta.json"] {
        let o = dflmesh(&["simulate", "--config", cfg, "--out", "x"], p);
        assert_eq!(code(&o), 2, "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(code(&dflmesh(&["simulate"], p)), 2);
    assert_eq!(code(&dflmesh(&["compare", "--config", "unknown.json"], p)), 2);
    fs::write(p.join("ok.json"), SMALL).unwrap();
    let o = dflmesh(&["compare", "--config", "ok.json", "--topologies", "ring,hypercube"], p);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_with_three_and_keeps_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"eta\": 0.05", "\"eta\": 40.0").replace("\"T\": 10", "\"T\": 400");
    fs::write(dir.path().join("c.json"), text).unwrap();
    let o = dflmesh(&["simulate", "--config", "c.json", "--out", "run"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(csv.lines().count() < 401);
}

fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(x: u64) -> f64 {
    (mix64(x) >> 11) as f64 / (1u64 << 53) as f64
}

/// 28×28 binary images: each digit class owns a fixed sparse stroke mask and
/// every pixel is flipped with probability 0.3.
fn digit_like(rows: usize, salt: u64) -> Dataset {
    let mut features = Vec::with_capacity(rows * 784);
    let mut labels = Vec::with_capacity(rows);
    for r in 0..rows {
        let c = r % 10;
        labels.push(c);
        for p in 0..784u64 {
            let stroke = unit(c as u64 * 1000 + p) < 0.15;
            let flip = unit((salt << 40) ^ ((r as u64) << 12) ^ p) < 0.3;
            features.push(if stroke != flip { 1.0 } else { 0.0 });
        }
    }
    Dataset::new("digit-like", 784, features, Targets::Classes { labels, classes: 10 }).unwrap()
}

/// The MNIST recipe, run against a small synthetic stand-in written in the
/// same IDX layout.
#[test]
fn mnist_recipe_runs_on_an_idx_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let recipe = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes/mnist_noniid.json");
    fs::copy(&recipe, root.join("recipe.json")).unwrap();
    let mnist = root.join("data/mnist");
    fs::create_dir_all(&mnist).unwrap();
    let (train, test) = (digit_like(1500, 1), digit_like(500, 2));
    data::write_idx(
        &train,
        28,
        28,
        mnist.join("train-images-idx3-ubyte"),
        mnist.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    data::write_idx(
        &test,
        28,
        28,
        mnist.join("t10k-images-idx3-ubyte"),
        mnist.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();

    let o = dflmesh(&["compare", "--config", "recipe.json", "--out", "cmp"], root);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = root.join("cmp");
    for name in ["metrics_ring.csv", "metrics_expander-3.csv", "metrics_complete.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(text.lines().count(), 11, "{name}");
    }
    let mut rdr = csv::Reader::from_path(out.join("compare.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let acc_col = headers.iter().position(|h| h == "final_accuracy").unwrap();
    let acc: Vec<(String, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[acc_col].parse().unwrap())
        })
        .collect();
    let get = |label: &str| acc.iter().find(|(t, _)| t.starts_with(label)).unwrap().1;
    assert!(get("expander") >= get("ring"), "{acc:?}");
    assert!(get("complete") >= get("expander"), "{acc:?}");
}
