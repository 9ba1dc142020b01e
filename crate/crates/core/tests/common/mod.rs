//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numeric code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dflmesh::data::Dataset;
use dflmesh::graph::Graph;
use dflmesh::overlay::{NodeId, OverlayNetwork};

/// Eigenvalues of a symmetric matrix (row-major, `n × n`) by cyclic Jacobi
/// rotations, ascending.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn laplacian_dense(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut l = vec![0.0; n * n];
    for (u, v) in g.edges() {
        l[u * n + v] -= 1.0;
        l[v * n + u] -= 1.0;
        l[u * n + u] += 1.0;
        l[v * n + v] += 1.0;
    }
    l
}

/// `λ_N(L) / λ_2(L)` from the Jacobi spectrum.
pub fn kappa_oracle(g: &Graph) -> f64 {
    let ev = jacobi_eigenvalues(&laplacian_dense(g), g.n());
    ev[g.n() - 1] / ev[1]
}

/// Second-largest eigenvalue magnitude of `I − 2L/((1+θ)λ_N)`.
pub fn mixing_lambda_oracle(g: &Graph, theta: f64) -> f64 {
    let n = g.n();
    let l = laplacian_dense(g);
    let ev = jacobi_eigenvalues(&l, n);
    let scale = 2.0 / ((1.0 + theta) * ev[n - 1]);
    let mut m: Vec<f64> = l.iter().map(|x| -scale * x).collect();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    let mev = jacobi_eigenvalues(&m, n);
    mev[n - 2].abs().max(mev[0].abs())
}

/// `min (1/N) Σ_i ‖X_i w − y_i‖² / (2 n_i)` by solving the weighted normal
/// equations with Gaussian elimination.
pub fn federated_least_squares_min(ds: &Dataset, shards: &[Vec<usize>]) -> f64 {
    let d = ds.dims();
    let y = ds.values().expect("regression targets");
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let nodes = shards.len() as f64;
    for shard in shards {
        let wgt = 1.0 / (nodes * shard.len() as f64);
        for &r in shard {
            let x = ds.row(r);
            for i in 0..d {
                b[i] += wgt * x[i] * y[r];
                for j in 0..d {
                    a[i * d + j] += wgt * x[i] * x[j];
                }
            }
        }
    }
    let w = solve(a, b, d);
    let mut f = 0.0;
    for shard in shards {
        let mut s = 0.0;
        for &r in shard {
            let x = ds.row(r);
            let pred: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            s += (pred - y[r]).powi(2);
        }
        f += s / (2.0 * shard.len() as f64);
    }
    f / nodes
}

fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
        }
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// Ground-truth ring neighbors and two-hop entries, recomputed from the live
/// nodes' coordinates alone.
pub fn overlay_ground_truth(net: &OverlayNetwork) -> BTreeMap<NodeId, Vec<[NodeId; 4]>> {
    let mut out: BTreeMap<NodeId, Vec<[NodeId; 4]>> = BTreeMap::new();
    for ring in 0..net.rings() {
        let mut order: Vec<(f64, NodeId)> = net.nodes().map(|n| (n.coords[ring], n.id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = order.len();
        for i in 0..n {
            let at = |k: isize| order[(i as isize + k).rem_euclid(n as isize) as usize].1;
            out.entry(order[i].1)
                .or_default()
                .push([at(-2), at(-1), at(1), at(2)]);
        }
    }
    out
}

/// Compare every node's stored pointers with [`overlay_ground_truth`].
pub fn overlay_matches_truth(net: &OverlayNetwork) -> Result<(), String> {
    let truth = overlay_ground_truth(net);
    for node in net.nodes() {
        for ring in 0..net.rings() {
            let [pp, p, s, ss] = truth[&node.id][ring];
            if node.ring_neighbors[ring] != (p, s) {
                return Err(format!(
                    "node {} ring {ring}: neighbors {:?}, truth {:?}",
                    node.id,
                    node.ring_neighbors[ring],
                    (p, s)
                ));
            }
            if node.two_hop[ring] != (pp, ss) {
                return Err(format!(
                    "node {} ring {ring}: two-hop {:?}, truth {:?}",
                    node.id,
                    node.two_hop[ring],
                    (pp, ss)
                ));
            }
        }
    }
    Ok(())
}

/// Connected components of `g` restricted to `alive`, by BFS.
pub fn alive_components(g: &Graph, alive: &[bool]) -> usize {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if !alive[s] || seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in g.neighbors(u) {
                if alive[v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}
