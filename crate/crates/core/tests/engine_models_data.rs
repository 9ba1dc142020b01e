mod common;

use std::fs;

use dflmesh::data::{
    self, load_idx, parse_idx_images, parse_idx_labels, partition_by_label, partition_iid, Dataset,
    Partition, Targets,
};
use dflmesh::engine::{
    consensus_distance, metrics_csv, run_experiment, FailureMode, FailurePlan, Simulation,
    StepSize, TrainConfig,
};
use dflmesh::experiments::{run_from_config, ExperimentConfig};
use dflmesh::graph;
use dflmesh::mixing::optimal_laplacian_mixing;
use dflmesh::models::{
    accuracy, all_rows, finite_difference_grad, least_squares_federated_optimum, LeastSquares,
    Logistic, Mlp, Objective,
};
use dflmesh::{Error, Result};
use proptest::prelude::*;

/// `½‖w‖²`, data ignored.
struct HalfNorm(usize);

impl Objective for HalfNorm {
    fn param_count(&self) -> usize {
        self.0
    }
    fn loss(&self, w: &[f64], _: &Dataset, _: &[usize]) -> f64 {
        0.5 * w.iter().map(|v| v * v).sum::<f64>()
    }
    fn grad_into(&self, w: &[f64], _: &Dataset, _: &[usize], out: &mut [f64]) {
        out.copy_from_slice(w);
    }
    fn check(&self, _: &Dataset) -> Result<()> {
        Ok(())
    }
    fn init_params(&self, _: u64) -> Vec<f64> {
        vec![1.0; self.0]
    }
}

fn regression(rows: usize, dims: usize, seed: u64) -> Dataset {
    data::synthetic_regression(rows, dims, 4, 1.0, 0.5, 0.3, seed).unwrap().0
}

fn cfg(eta: f64, beta: f64, k: usize, t: usize) -> TrainConfig {
    TrainConfig {
        step: StepSize::Constant(eta),
        beta,
        local_steps: k,
        rounds: t,
        batch_size: None,
        seed: 3,
        eval_every: 1,
    }
}

#[test]
fn momentum_unroll_matches_hand_values() {
    let ds = regression(8, 2, 0);
    let part = Partition::new(vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]).unwrap();
    let g = graph::make_complete(2).unwrap();
    let (m, _) = optimal_laplacian_mixing(&g).unwrap();
    let obj = HalfNorm(1);
    let mut sim = Simulation::new(&obj, &ds, &part, &g, &m, cfg(0.1, 0.9, 3, 1)).unwrap();
    sim.step().unwrap();
    // 1 → 0.9 → 0.72 → 0.486
    for s in sim.states() {
        assert!((s.params[0] - 0.486).abs() < 1e-12, "{}", s.params[0]);
    }
}

/// With every node holding an identical copy of the data, the decentralized
/// run is centralized heavy-ball GD with momentum restarted every K steps.
#[test]
fn identical_shards_reduce_to_centralized_momentum_gd() {
    let base = regression(30, 3, 1);
    let nodes = 4;
    let mut features = Vec::new();
    let mut values = Vec::new();
    for _ in 0..nodes {
        features.extend_from_slice(base.features());
        values.extend_from_slice(base.values().unwrap());
    }
    let ds = Dataset::new("copies", 3, features, Targets::Values(values)).unwrap();
    let shards: Vec<Vec<usize>> = (0..nodes).map(|i| (i * 30..(i + 1) * 30).collect()).collect();
    let part = Partition::new(shards).unwrap();
    let g = graph::make_ring(nodes).unwrap();
    let (m, _) = optimal_laplacian_mixing(&g).unwrap();
    let obj = LeastSquares::new(3);
    let (eta, beta, k, t) = (0.02, 0.8, 4, 25);
    let out = run_experiment(&cfg(eta, beta, k, t), &g, &m, &obj, &ds, &part, None, None)
        .unwrap()
        .into_result()
        .unwrap();

    let x = base.features();
    let y = base.values().unwrap();
    let grad = |w: &[f64]| {
        let mut gr = [0.0; 3];
        for r in 0..30 {
            let res: f64 = (0..3).map(|j| x[r * 3 + j] * w[j]).sum::<f64>() - y[r];
            for j in 0..3 {
                gr[j] += res * x[r * 3 + j] / 30.0;
            }
        }
        gr
    };
    let mut w = obj.init_params(3);
    for _ in 0..t {
        let mut prev = w.clone();
        for _ in 0..k {
            let gr = grad(&w);
            let next: Vec<f64> = (0..3).map(|j| w[j] - eta * gr[j] + beta * (w[j] - prev[j])).collect();
            prev = std::mem::replace(&mut w, next);
        }
    }
    for p in &out.final_params {
        for j in 0..3 {
            assert!((p[j] - w[j]).abs() < 1e-9, "{p:?} vs {w:?}");
        }
    }
    assert!(out.records.iter().all(|r| r.consensus_dist < 1e-9));
}

#[test]
fn consensus_distance_of_two_points() {
    let a = [0.0];
    let b = [2.0];
    assert!((consensus_distance([&a[..], &b[..]]) - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(consensus_distance(Vec::<&[f64]>::new()), 0.0);
}

#[test]
fn least_squares_run_approaches_the_federated_optimum() {
    let ds = regression(400, 4, 5);
    let part = partition_iid(&ds, 16, 5).unwrap();
    let g = graph::make_regular_expander(16, 4, 5).unwrap();
    let (m, _) = optimal_laplacian_mixing(&g).unwrap();
    let obj = LeastSquares::new(4);
    let f_star = common::federated_least_squares_min(&ds, part.shards());
    let (_, lib_star) = least_squares_federated_optimum(&ds, part.shards()).unwrap();
    assert!((lib_star - f_star).abs() <= 1e-9 * f_star.max(1.0));
    let out = run_experiment(&cfg(0.01, 0.5, 2, 3000), &g, &m, &obj, &ds, &part, None, None)
        .unwrap()
        .into_result()
        .unwrap();
    let last = out.last().unwrap();
    assert!(
        last.mean_model_loss <= f_star * (1.0 + 1e-6),
        "{} vs {f_star}",
        last.mean_model_loss
    );
    let rounds: Vec<usize> = out.records.iter().map(|r| r.round).collect();
    assert!(rounds.windows(2).all(|w| w[0] < w[1]));
    assert!(out.records.windows(2).all(|w| w[0].cum_comm_cost <= w[1].cum_comm_cost));
}

#[test]
fn failed_nodes_keep_stale_parameters() {
    let ds = regression(80, 3, 2);
    let part = partition_iid(&ds, 10, 2).unwrap();
    let g = graph::make_ring(10).unwrap();
    let (m, _) = optimal_laplacian_mixing(&g).unwrap();
    let obj = LeastSquares::new(3);
    let plan = FailurePlan {
        fraction: 0.3,
        mode: FailureMode::Transient,
        seed: 9,
    };
    let mut sim = Simulation::new(&obj, &ds, &part, &g, &m, cfg(0.05, 0.9, 2, 20))
        .unwrap()
        .with_failures(plan)
        .unwrap();
    for _ in 0..10 {
        let before: Vec<Vec<f64>> = sim.states().iter().map(|s| s.params.clone()).collect();
        let alive = sim.step().unwrap();
        assert_eq!(alive.iter().filter(|&&a| !a).count(), 3);
        for (i, s) in sim.states().iter().enumerate() {
            if !alive[i] {
                assert_eq!(s.params, before[i]);
            }
        }
        let rec = sim.evaluate(&alive).unwrap();
        assert_eq!(rec.alive, 7);
    }
}

#[test]
fn divergent_step_aborts_with_partial_metrics() {
    let ds = regression(80, 3, 2);
    let part = partition_iid(&ds, 4, 2).unwrap();
    let g = graph::make_ring(4).unwrap();
    let (m, _) = optimal_laplacian_mixing(&g).unwrap();
    let obj = LeastSquares::new(3);
    let out = run_experiment(&cfg(50.0, 0.9, 5, 500), &g, &m, &obj, &ds, &part, None, None).unwrap();
    assert!(out.records.len() < 500);
    assert!(matches!(out.into_result(), Err(Error::NonFinite { .. })));
}

const MLP_CONFIG: &str = r#"{
  "topology": {"kind": "expander", "n": 8, "d": 4, "seed": 1},
  "train": {"eta": 0.1, "beta": 0.9, "K": 2, "T": 12, "batch_size": 8, "seed": 4, "eval_every": 3},
  "data": {"kind": "synthetic_classification", "samples": 400, "test_samples": 100, "dims": 6,
           "classes": 4, "cluster_sep": 3.0, "seed": 2, "partition": "iid"},
  "model": {"kind": "mlp", "hidden": 5},
  "failures": {"fraction": 0.25, "mode": "transient", "seed": 7}
}"#;

#[test]
fn runs_are_bitwise_reproducible() {
    let cfg = ExperimentConfig::from_json(MLP_CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_from_config(&cfg, dir.path(), &a).unwrap();
    run_from_config(&cfg, dir.path(), &b).unwrap();
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("topology.json")).unwrap(),
        fs::read(b.join("topology.json")).unwrap()
    );

    let mut reader = csv::Reader::from_reader(ma.as_slice());
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["round", "train_loss", "test_loss", "test_acc", "consensus_dist", "cum_comm_cost"]
    );
    let rounds: Vec<usize> = reader
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(rounds, [3, 6, 9, 12]);
}

#[test]
fn zero_rounds_write_a_header_only_csv() {
    let text = MLP_CONFIG.replace("\"T\": 12", "\"T\": 0");
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let art = run_from_config(&cfg, dir.path(), dir.path()).unwrap();
    assert!(art.output.records.is_empty());
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, metrics_csv(&[]));
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn least_squares_and_logistic_hand_values() {
    let ds = Dataset::new("one", 1, vec![1.0], Targets::Values(vec![0.0])).unwrap();
    let ls = LeastSquares::new(1);
    assert!((ls.loss(&[2.0], &ds, &[0]) - 2.0).abs() < 1e-15);
    assert_eq!(ls.grad(&[2.0], &ds, &[0]), vec![2.0]);

    let cls = Dataset::new("one", 1, vec![1.0], Targets::Classes { labels: vec![1], classes: 2 }).unwrap();
    let lg = Logistic::new(1, 0.0);
    assert!((lg.loss(&[0.0, 0.0], &cls, &[0]) - 2f64.ln()).abs() < 1e-15);
    let g = lg.grad(&[0.0, 0.0], &cls, &[0]);
    assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] + 0.5).abs() < 1e-15);

    let mlp = Mlp::new(7, 5, 3).unwrap();
    assert_eq!(mlp.param_count(), 7 * 5 + 5 + 3 * 5 + 3);
}

#[test]
fn accuracy_matches_a_direct_count() {
    let (train, _) = data::synthetic_classification_split(200, 10, 3, 2, 1.0, 4).unwrap();
    let obj = Logistic::new(3, 0.0);
    let w = [0.4, -0.3, 0.2, 0.1];
    let labels = train.labels().unwrap();
    let manual = (0..train.rows())
        .filter(|&r| {
            let z: f64 = (0..3).map(|j| w[j] * train.row(r)[j]).sum::<f64>() + w[3];
            usize::from(z > 0.0) == labels[r]
        })
        .count() as f64
        / train.rows() as f64;
    let lib = accuracy(&obj, &w, &train, &all_rows(&train)).unwrap();
    assert!((lib - manual).abs() < 1e-12);
    assert!(matches!(
        accuracy(&LeastSquares::new(3), &w[..3], &train, &[0]),
        Err(Error::NotAClassifier)
    ));
}

fn check_fd(obj: &dyn Objective, w: &[f64], ds: &Dataset) -> std::result::Result<(), String> {
    let rows = all_rows(ds);
    let g = obj.grad(w, ds, &rows);
    let fd = finite_difference_grad(obj, w, ds, &rows, 1e-5);
    let scale = fd.iter().map(|v| v.abs()).fold(1e-3, f64::max);
    for (j, (a, b)) in g.iter().zip(&fd).enumerate() {
        if (a - b).abs() > 1e-4 * scale {
            return Err(format!("coordinate {j}: analytic {a}, numeric {b}"));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..1000, scale in 0.1f64..2.0) {
        let reg = regression(20, 4, seed);
        let (cls, _) = data::synthetic_classification_split(30, 5, 4, 3, 2.0, seed).unwrap();
        let bin = Dataset::new(
            "bin",
            4,
            cls.features().to_vec(),
            Targets::Classes { labels: cls.labels().unwrap().iter().map(|&l| l % 2).collect(), classes: 2 },
        ).unwrap();
        let point = |p: usize| -> Vec<f64> {
            (0..p).map(|i| scale * (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)).collect()
        };
        let ls = LeastSquares::new(4);
        prop_assert!(check_fd(&ls, &point(4), &reg).is_ok());
        let lg = Logistic::new(4, 0.1);
        let r = check_fd(&lg, &point(5), &bin);
        prop_assert!(r.is_ok(), "{:?}", r);
        let mlp = Mlp::new(4, 6, 3).unwrap();
        let r = check_fd(&mlp, &point(mlp.param_count()), &cls);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [0x0000_0803u32, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[test]
fn idx_fixture_loads_as_scaled_rows() {
    let pixels: Vec<u8> = (0..4 * 784).map(|i| (i % 256) as u8).collect();
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img");
    let lab = dir.path().join("lab");
    fs::write(&img, idx_images(4, 28, 28, &pixels)).unwrap();
    fs::write(&lab, idx_labels(&[3, 1, 4, 1])).unwrap();
    let ds = load_idx(&img, &lab).unwrap();
    assert_eq!((ds.rows(), ds.dims()), (4, 784));
    assert_eq!(ds.labels().unwrap(), &[3, 1, 4, 1]);
    assert!(ds.features().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(ds.row(0)[255], 1.0);
    assert!((ds.row(1)[0] - (784 % 256) as f64 / 255.0).abs() < 1e-15);
}

#[test]
fn malformed_idx_files_are_rejected() {
    let mut bad_magic = idx_images(1, 2, 2, &[0, 1, 2, 3]);
    bad_magic[3] = 0x02;
    assert!(parse_idx_images(&bad_magic).is_err());
    assert!(parse_idx_images(&idx_images(4, 28, 28, &[0; 100])).is_err());
    assert!(parse_idx_images(&[0, 0, 8]).is_err());
    assert!(parse_idx_labels(&idx_labels(&[1, 2])[..9]).is_err());
    assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0])).is_err());

    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img");
    let lab = dir.path().join("lab");
    fs::write(&img, idx_images(2, 1, 1, &[0, 255])).unwrap();
    fs::write(&lab, idx_labels(&[0, 1, 1])).unwrap();
    assert!(load_idx(&img, &lab).is_err());
    assert!(load_idx(dir.path().join("missing"), &lab).is_err());
}

fn train_logistic(train: &Dataset) -> Vec<f64> {
    let obj = Logistic::new(train.dims(), 0.0);
    let rows = all_rows(train);
    let mut w = vec![0.0; obj.param_count()];
    for _ in 0..300 {
        let g = obj.grad(&w, train, &rows);
        w.iter_mut().zip(&g).for_each(|(a, b)| *a -= 0.5 * b);
    }
    w
}

#[test]
fn cluster_separation_controls_difficulty() {
    let (train, test) = data::synthetic_classification_split(1000, 2000, 2, 2, 10.0, 1).unwrap();
    let w = train_logistic(&train);
    let acc = accuracy(&Logistic::new(2, 0.0), &w, &test, &all_rows(&test)).unwrap();
    assert!(acc >= 0.99, "{acc}");

    let (train, test) = data::synthetic_classification_split(1000, 4000, 2, 2, 0.0, 1).unwrap();
    let w = train_logistic(&train);
    let acc = accuracy(&Logistic::new(2, 0.0), &w, &test, &all_rows(&test)).unwrap();
    assert!((acc - 0.5).abs() < 0.05, "{acc}");
}

#[test]
fn iid_shards_have_near_global_label_histograms() {
    let ds = data::synthetic_classification(2000, 4, 10, 2.0, 0).unwrap();
    let part = partition_iid(&ds, 10, 11).unwrap();
    let labels = ds.labels().unwrap();
    for shard in part.shards() {
        let m = shard.len() as f64;
        let sigma = (m * 0.1 * 0.9).sqrt();
        for c in 0..10 {
            let count = shard.iter().filter(|&&r| labels[r] == c).count() as f64;
            assert!((count - 0.1 * m).abs() <= 3.0 * sigma, "class {c}: {count} of {m}");
        }
    }
    let mut covered = part.covered_rows();
    covered.sort_unstable();
    assert_eq!(covered, (0..2000).collect::<Vec<_>>());
}

#[test]
fn label_shards_are_more_heterogeneous_than_iid() {
    let ds = data::synthetic_classification(1000, 8, 10, 3.0, 0).unwrap();
    let label = partition_by_label(&ds, 10).unwrap();
    let labels = ds.labels().unwrap();
    for shard in label.shards() {
        assert!(shard.iter().all(|&r| labels[r] == labels[shard[0]]));
    }
    let iid = partition_iid(&ds, 10, 0).unwrap();
    let obj = Mlp::new(8, 6, 10).unwrap();
    let w = obj.init_params(0);
    let zeta = |p: &Partition| {
        let grads: Vec<Vec<f64>> = p.shards().iter().map(|s| obj.grad(&w, &ds, s)).collect();
        let n = grads.len() as f64;
        let mean: Vec<f64> = (0..w.len()).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / n).collect();
        grads
            .iter()
            .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let (z_label, z_iid) = (zeta(&label), zeta(&iid));
    assert!(z_label > 2.0 * z_iid, "label {z_label}, iid {z_iid}");
    assert!(partition_by_label(&ds, 11).is_err());
}
