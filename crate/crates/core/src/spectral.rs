//! Eigenvalue quantities of graph Laplacians and adjacency matrices.
//!
//! All matrices here are real symmetric and small (a few thousand nodes at
//! most), so every quantity comes from a dense symmetric eigendecomposition.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Relative tolerance used when none is given.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Solver controls for the dense symmetric eigendecomposition.
#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    pub tol: f64,
    /// Sweep budget; 0 means unlimited.
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: DEFAULT_TOL,
            max_iter: 0,
        }
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>, opts: EigenOptions) -> Result<Vec<f64>> {
    let eps = (opts.tol * 1e-6).max(f64::EPSILON);
    let eig = SymmetricEigen::try_new(m.clone(), eps, opts.max_iter).ok_or(
        Error::NotConverged {
            max_iter: opts.max_iter,
        },
    )?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Summary of a topology's spectrum, serialized as
/// `{"lambda2":…,"lambdaN":…,"kappa":…,"lambda_mix":…}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    #[serde(rename = "lambda2")]
    pub lambda2_l: f64,
    #[serde(rename = "lambdaN")]
    pub lambda_n_l: f64,
    pub kappa: f64,
    pub lambda_mix: f64,
}

/// `(λ_2(L), λ_N(L))` of a Laplacian. Errors with `Disconnected` when the
/// second-smallest eigenvalue is numerically zero.
pub fn eigen_extremes(laplacian: &DMatrix<f64>, opts: EigenOptions) -> Result<(f64, f64)> {
    let n = laplacian.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "Laplacian extremes need at least 2 nodes".into(),
        ));
    }
    let values = symmetric_eigenvalues(laplacian, opts)?;
    let lambda_n = values[n - 1];
    let lambda2 = values[1];
    if lambda2 <= 1e-9 * lambda_n.max(1.0) {
        return Err(Error::Disconnected);
    }
    Ok((lambda2, lambda_n))
}

/// Reduced condition number `κ(L) = λ_N(L) / λ_2(L)`.
pub fn reduced_condition_number(g: &Graph) -> Result<f64> {
    let (l2, ln) = eigen_extremes(&g.laplacian(), EigenOptions::default())?;
    Ok(ln / l2)
}

/// Closed-form `κ` of the ring on `n` nodes: `4 / (2 - 2 cos(2π/n))` for
/// even `n`; odd rings use the largest eigenvalue `2 - 2 cos(2π⌊n/2⌋/n)`.
pub fn ring_kappa_closed_form(n: usize) -> f64 {
    let eig = |k: usize| 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos();
    eig(n / 2) / eig(1)
}

/// Lower bound `n² / π²` on the ring's reduced condition number.
pub fn ring_kappa_lower_bound(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "ring needs at least 3 nodes, got {n}"
        )));
    }
    let n = n as f64;
    Ok(n * n / (PI * PI))
}

/// Upper bound on `κ(L)` for a d-regular Ramanujan graph:
/// `(d + 2√(d-1)) / (d - 2√(d-1))`.
pub fn ramanujan_kappa_upper_bound(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "Ramanujan kappa bound needs d >= 3, got {d}"
        )));
    }
    let d = d as f64;
    let r = 2.0 * (d - 1.0).sqrt();
    Ok((d + r) / (d - r))
}

/// `κ(L) ≤ (d + λ₁(A)) / (d - λ₁(A))` for a d-regular graph.
pub fn regular_kappa_upper_bound(d: usize, lambda1_a: f64) -> f64 {
    let d = d as f64;
    (d + lambda1_a) / (d - lambda1_a)
}

/// Nontrivial adjacency eigenvalues of a regular graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjacencyExtremes {
    pub degree: usize,
    /// Largest eigenvalue after removing the trivial `d`.
    pub second_largest: f64,
    /// Smallest eigenvalue.
    pub smallest: f64,
}

impl AdjacencyExtremes {
    /// Largest magnitude among the nontrivial eigenvalues.
    pub fn max_abs(&self) -> f64 {
        self.second_largest.abs().max(self.smallest.abs())
    }
}

pub fn adjacency_extremes(g: &Graph, opts: EigenOptions) -> Result<AdjacencyExtremes> {
    let degree = g.regular_degree().ok_or(Error::NotRegular {
        min: g.min_degree(),
        max: g.max_degree(),
    })?;
    let n = g.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 nodes".into()));
    }
    let values = symmetric_eigenvalues(&g.adjacency_matrix(), opts)?;
    // ascending; the trivial eigenvalue d is the last one
    Ok(AdjacencyExtremes {
        degree,
        second_largest: values[n - 2],
        smallest: values[0],
    })
}

/// `λ₁(A)`: the largest-magnitude adjacency eigenvalue other than the trivial
/// eigenvalue `d` (eigenvector `𝟙`). Requires a regular graph.
pub fn adjacency_second_eigenvalue(g: &Graph, opts: EigenOptions) -> Result<f64> {
    Ok(adjacency_extremes(g, opts)?.max_abs())
}

/// Full summary for a graph and a mixing rate.
pub fn summarize(g: &Graph, lambda_mix: f64) -> Result<SpectralSummary> {
    let (lambda2_l, lambda_n_l) = eigen_extremes(&g.laplacian(), EigenOptions::default())?;
    Ok(SpectralSummary {
        lambda2_l,
        lambda_n_l,
        kappa: lambda_n_l / lambda2_l,
        lambda_mix,
    })
}
