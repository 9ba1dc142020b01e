//! Write a dataset in IDX format, read it back, and compare IID and
//! label-shard partitions by class histogram and gradient disagreement.
//!
//! Pass a directory holding `train-images-idx3-ubyte` and
//! `train-labels-idx1-ubyte` to use real files instead.

use dflmesh::data::{self, partition_by_label, partition_iid, Dataset, Partition};
use dflmesh::models::{Mlp, Objective};

fn histogram(ds: &Dataset, p: &Partition, node: usize) -> Vec<usize> {
    let labels = ds.labels().unwrap();
    let mut h = vec![0; ds.classes().unwrap()];
    for &r in p.shard(node) {
        h[labels[r]] += 1;
    }
    h
}

fn disagreement(obj: &dyn Objective, w: &[f64], ds: &Dataset, p: &Partition) -> f64 {
    let grads: Vec<Vec<f64>> = p.shards().iter().map(|s| obj.grad(w, ds, s)).collect();
    let n = grads.len() as f64;
    let mean: Vec<f64> = (0..w.len()).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / n).collect();
    grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn main() -> dflmesh::Result<()> {
    let ds = match std::env::args().nth(1) {
        Some(dir) => {
            let dir = std::path::PathBuf::from(dir);
            data::load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?
        }
        None => {
            let dir = std::env::temp_dir().join("dflmesh-idx-example");
            std::fs::create_dir_all(&dir)?;
            let synth = data::synthetic_classification(2000, 64, 10, 4.0, 0)?.min_max_scaled();
            let (img, lab) = (dir.join("images"), dir.join("labels"));
            data::write_idx(&synth, 8, 8, &img, &lab)?;
            data::load_idx(&img, &lab)?
        }
    };
    println!("{} rows × {} features, {} classes", ds.rows(), ds.dims(), ds.classes().unwrap_or(0));

    let iid = partition_iid(&ds, 10, 0)?;
    let label = partition_by_label(&ds, 10)?;
    println!("node 0 histogram, iid:   {:?}", histogram(&ds, &iid, 0));
    println!("node 0 histogram, label: {:?}", histogram(&ds, &label, 0));

    let obj = Mlp::new(ds.dims(), 16, ds.classes().unwrap())?;
    let w = obj.init_params(0);
    println!("max ‖∇f_i − ∇f‖ at w0: iid {:.4}, label {:.4}", disagreement(&obj, &w, &ds, &iid), disagreement(&obj, &w, &ds, &label));
    Ok(())
}
