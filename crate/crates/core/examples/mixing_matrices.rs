//! Laplacian mixing as a function of θ, against Metropolis–Hastings and
//! max-degree weights, and the resulting gossip contraction.

use dflmesh::graph;
use dflmesh::mixing::{self, lambda_of_theta, mix_step};
use dflmesh::spectral;

fn main() -> dflmesh::Result<()> {
    let g = graph::make_regular_expander(40, 4, 7)?;
    let kappa = spectral::reduced_condition_number(&g)?;
    let best = mixing::clamped_optimal_theta(kappa)?;
    println!("expander n=40 d=4: κ = {kappa:.4}, θ* = {best:.4}");

    for theta in [0.05, 0.2, best, 0.5, 0.9] {
        let m = mixing::laplacian_mixing(&g, theta)?;
        println!(
            "  θ = {theta:.4}  λ(M) = {:.5}  closed form {:.5}",
            m.lambda(),
            lambda_of_theta(kappa, theta)?
        );
    }
    let mh = mixing::metropolis_hastings_mixing(&g)?;
    let md = mixing::max_degree_mixing(&g)?;
    println!("  metropolis-hastings λ = {:.5}", mh.lambda());
    println!("  max-degree          λ = {:.5}", md.lambda());

    // pure gossip from one-hot vectors: distance to the mean shrinks by λ per step
    let (m, _) = mixing::optimal_laplacian_mixing(&g)?;
    let mut x: Vec<Vec<f64>> = (0..g.n()).map(|i| vec![if i == 0 { 1.0 } else { 0.0 }]).collect();
    let dist = |x: &[Vec<f64>]| {
        let mean = x.iter().map(|r| r[0]).sum::<f64>() / x.len() as f64;
        x.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>().sqrt()
    };
    let d0 = dist(&x);
    for t in 1..=30 {
        x = mix_step(&m, &x)?;
        if t % 5 == 0 {
            println!("  step {t:>2}: ‖x − x̄‖ = {:.3e} (λ^t·d0 = {:.3e})", dist(&x), m.lambda().powi(t) * d0);
        }
    }
    Ok(())
}
