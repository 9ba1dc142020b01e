//! Evaluate the convergence and stability bounds and check the stepsize-sum
//! inequality for a few spectral gaps.

use dflmesh::bounds::{self, BoundParams};

fn main() -> dflmesh::Result<()> {
    let base = BoundParams {
        l: 1.0,
        sigma: 1.0,
        zeta: 1.0,
        b: 1.0,
        k: 2.0,
        t: 1000.0,
        eta: 1.0 / 512.0,
        c: 0.05,
        beta: 0.5,
        lambda: 0.5,
        nodes: 10.0,
        n: 600.0,
        f_gap: 2.0,
        sup_f: 3.0,
    };
    println!("{:>6} {:>12} {:>12} {:>9} {:>9} {:>8}", "lambda", "convergence", "stability", "C", "C_lemma", "ratio");
    for lambda in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let p = BoundParams { lambda, ..base };
        println!(
            "{lambda:>6} {:>12.4e} {:>12.4e} {:>9.4} {:>9.4} {:>8.4}",
            bounds::convergence_bound(&p)?,
            bounds::stability_bound(&p)?,
            bounds::c_lambda(lambda)?,
            bounds::c_lambda_lemma(lambda)?,
            bounds::verify_stepsize_sum(1.0, lambda, 10_000)?
        );
    }
    let too_big = BoundParams { eta: 1.0 / 32.0, ..base };
    if let Err(e) = bounds::convergence_bound(&too_big) {
        println!("η = 1/32: {e}");
    }
    Ok(())
}
