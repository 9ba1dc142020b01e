//! Reduced condition numbers of ring, Erdős–Rényi, expander and complete
//! graphs, next to the ring closed form and the Ramanujan bound.
//!
//!     cargo run --example topology_spectrum -- 100

use dflmesh::graph;
use dflmesh::spectral::{self, EigenOptions};

fn main() -> dflmesh::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let p = graph::erdos_renyi_threshold(n);

    let rows = [
        ("ring", graph::make_ring(n)?),
        ("erdos-renyi", graph::make_connected_erdos_renyi(n, p, 1, 100)?),
        ("ring+matching", graph::make_ring_matching(n - n % 2, 1)?),
        ("expander d=4", graph::make_regular_expander(n, 4, 1)?),
        ("expander d=8", graph::make_regular_expander(n, 8, 1)?),
        ("complete", graph::make_complete(n)?),
    ];
    println!("{:<14} {:>6} {:>10} {:>10} {:>12}", "topology", "edges", "lambda2", "lambdaN", "kappa");
    for (name, g) in &rows {
        let (l2, ln) = spectral::eigen_extremes(&g.laplacian(), EigenOptions::default())?;
        println!("{name:<14} {:>6} {l2:>10.5} {ln:>10.5} {:>12.3}", g.edge_count(), ln / l2);
    }

    println!();
    println!("ring closed form   {:.3}", spectral::ring_kappa_closed_form(n));
    println!("ring lower bound   {:.3}", spectral::ring_kappa_lower_bound(n)?);
    for d in [3, 4, 8] {
        println!("Ramanujan d={d}      {:.3}", spectral::ramanujan_kappa_upper_bound(d)?);
    }
    let g = graph::make_regular_expander(n, 4, 1)?;
    let adj = spectral::adjacency_extremes(&g, EigenOptions::default())?;
    println!(
        "expander d=4: λ1(A) = {:.4} (Ramanujan if ≤ {:.4}), κ bound {:.3}",
        adj.max_abs(),
        2.0 * 3f64.sqrt(),
        spectral::regular_kappa_upper_bound(4, adj.max_abs())
    );
    Ok(())
}
