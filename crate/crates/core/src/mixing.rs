//! Mixing matrices on a communication graph.
//!
//! A mixing matrix `M` must (1) be supported on the graph's edges off the
//! diagonal, (2) be symmetric, (3) have `null(I - M) = span{𝟙}`, and
//! (4) satisfy `I ⪰ M ≻ -I`. Every constructor checks all four numerically
//! and rejects the `(graph, θ)` pair instead of returning a bad matrix.
//! Diagonal entries may be zero: the Laplacian family itself produces them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{eigen_extremes, symmetric_eigenvalues, EigenOptions};

const SYMMETRY_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;
const SPECTRAL_TOL: f64 = 1e-9;

/// Largest θ used when `1/κ` reaches the excluded endpoint 1.
pub const THETA_CLAMP: f64 = 1.0 - 1e-6;

/// Symmetric doubly stochastic matrix on a connected graph together with its
/// mixing rate `λ = max(|λ_2(M)|, |λ_N(M)|)`.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    m: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    lambda: f64,
}

impl MixingMatrix {
    /// Validate an arbitrary matrix against the graph.
    pub fn new(g: &Graph, m: DMatrix<f64>) -> Result<Self> {
        let n = g.n();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = m[(i, j)];
                if g.has_edge(i, j) {
                    if v <= 0.0 {
                        return Err(Error::MixingAxiom(format!(
                            "edge ({i}, {j}) has non-positive weight {v}"
                        )));
                    }
                } else if v != 0.0 {
                    return Err(Error::MixingAxiom(format!(
                        "non-edge ({i}, {j}) has weight {v}"
                    )));
                }
                if (v - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::MixingAxiom(format!("asymmetric at ({i}, {j})")));
                }
            }
            let row_sum: f64 = m.row(i).iter().sum();
            if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::MixingAxiom(format!("row {i} sums to {row_sum}")));
            }
        }
        let mut eigenvalues = symmetric_eigenvalues(&m, EigenOptions::default())?;
        eigenvalues.reverse();
        let top = eigenvalues[0];
        if (top - 1.0).abs() > SPECTRAL_TOL {
            return Err(Error::MixingAxiom(format!(
                "largest eigenvalue {top} is not 1"
            )));
        }
        if n > 1 {
            let second = eigenvalues[1];
            let last = eigenvalues[n - 1];
            if second >= 1.0 - SPECTRAL_TOL {
                return Err(Error::MixingAxiom(format!(
                    "eigenvalue 1 is not simple (λ_2 = {second})"
                )));
            }
            if last <= -1.0 + SPECTRAL_TOL {
                return Err(Error::MixingAxiom(format!(
                    "M + I is not positive definite (λ_N = {last})"
                )));
            }
        }
        let lambda = if n > 1 {
            eigenvalues[1].abs().max(eigenvalues[n - 1].abs())
        } else {
            0.0
        };
        Ok(MixingMatrix {
            m,
            eigenvalues,
            lambda,
        })
    }

    /// Identity "mixing". No communication; only useful as a test double.
    pub fn identity(n: usize) -> Self {
        MixingMatrix {
            m: DMatrix::identity(n, n),
            eigenvalues: vec![1.0; n],
            lambda: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Mixing rate `λ(M)`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row `i` restricted to alive nodes; weight sent to failed nodes is
    /// added back to the diagonal so the row still sums to one.
    pub fn renormalized_row(&self, i: usize, alive: &[bool]) -> Vec<f64> {
        let n = self.n();
        let mut row = vec![0.0; n];
        let mut lost = 0.0;
        for (j, w) in row.iter_mut().enumerate() {
            let m = self.m[(i, j)];
            if j == i || alive[j] {
                *w = m;
            } else {
                lost += m;
            }
        }
        row[i] += lost;
        row
    }

    /// The full matrix used in a round with failures: alive rows are
    /// renormalized, failed rows are the identity (stale state is kept).
    pub fn with_failures(&self, alive: &[bool]) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            if alive[i] {
                for (j, w) in self.renormalized_row(i, alive).into_iter().enumerate() {
                    out[(i, j)] = w;
                }
            } else {
                out[(i, i)] = 1.0;
            }
        }
        out
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::ThetaOutOfRange(theta))
    }
}

/// `M = I - 2L / ((1 + θ) λ_N(L))`.
pub fn laplacian_mixing(g: &Graph, theta: f64) -> Result<MixingMatrix> {
    check_theta(theta)?;
    let lap = g.laplacian();
    let (_, lambda_n) = eigen_extremes(&lap, EigenOptions::default())?;
    laplacian_mixing_with(g, &lap, lambda_n, theta)
}

/// Same as [`laplacian_mixing`] with `λ_N(L)` already known.
pub fn laplacian_mixing_with(
    g: &Graph,
    lap: &DMatrix<f64>,
    lambda_n: f64,
    theta: f64,
) -> Result<MixingMatrix> {
    check_theta(theta)?;
    let n = g.n();
    let scale = 2.0 / ((1.0 + theta) * lambda_n);
    let mut m = DMatrix::identity(n, n) - lap * scale;
    // Force exact symmetry and zero pattern; rows then sum to 1 up to
    // rounding in the diagonal only.
    for i in 0..n {
        for j in 0..i {
            let v = if g.has_edge(i, j) { scale } else { 0.0 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] = 1.0 - scale * g.degree(i) as f64;
    }
    MixingMatrix::new(g, m)
}

/// Laplacian mixing at `θ* = 1/κ`, clamped below 1.
pub fn optimal_laplacian_mixing(g: &Graph) -> Result<(MixingMatrix, f64)> {
    let lap = g.laplacian();
    let (l2, ln) = eigen_extremes(&lap, EigenOptions::default())?;
    let theta = clamped_optimal_theta(ln / l2)?;
    Ok((laplacian_mixing_with(g, &lap, ln, theta)?, theta))
}

/// Optimal θ for a given reduced condition number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalTheta {
    /// `1/κ`; may equal 1 for `κ = 1`.
    pub theta: f64,
    /// Whether `2/κ - θ* ≤ 1` holds, under which `θ*` equalizes the two
    /// branches of `λ(θ)`. Always true for `κ ≥ 1`.
    pub side_condition_holds: bool,
}

pub fn optimal_theta(kappa: f64) -> Result<OptimalTheta> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "reduced condition number must be >= 1, got {kappa}"
        )));
    }
    let theta = 1.0 / kappa;
    Ok(OptimalTheta {
        theta,
        side_condition_holds: 2.0 / kappa - theta <= 1.0,
    })
}

/// `min(1/κ, 1 - 1e-6)`, a valid argument for [`laplacian_mixing`].
pub fn clamped_optimal_theta(kappa: f64) -> Result<f64> {
    Ok(optimal_theta(kappa)?.theta.min(THETA_CLAMP))
}

/// `λ(θ) = max(|1 + θ - 2/κ| / (1 + θ), (1 - θ) / (1 + θ))`.
pub fn lambda_of_theta(kappa: f64, theta: f64) -> Result<f64> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "reduced condition number must be >= 1, got {kappa}"
        )));
    }
    check_theta(theta)?;
    let upper = (1.0 + theta - 2.0 / kappa).abs() / (1.0 + theta);
    let lower = (1.0 - theta) / (1.0 + theta);
    Ok(upper.max(lower))
}

/// Metropolis–Hastings weights `1 / (1 + max(d_i, d_j))` on edges.
pub fn metropolis_hastings_mixing(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let mut m = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let w = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        m[(i, j)] = w;
        m[(j, i)] = w;
    }
    fill_diagonal(&mut m);
    MixingMatrix::new(g, m)
}

/// Maximum-degree weights `1 / (1 + d_max)` on edges.
pub fn max_degree_mixing(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let w = 1.0 / (1.0 + g.max_degree() as f64);
    let mut m = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        m[(i, j)] = w;
        m[(j, i)] = w;
    }
    fill_diagonal(&mut m);
    MixingMatrix::new(g, m)
}

fn fill_diagonal(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = 1.0 - off;
    }
}

/// Dense `M · X` with a fixed summation order (row-major, ascending `ℓ`),
/// so results are bitwise reproducible.
pub fn mix_rows(m: &DMatrix<f64>, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.nrows();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let p = x.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; p]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (l, xl) in x.iter().enumerate() {
            let w = m[(i, l)];
            if w == 0.0 {
                continue;
            }
            if xl.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: xl.len(),
                });
            }
            for (o, v) in row.iter_mut().zip(xl) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// One gossip step `X ← M X` on an `N × P` parameter block.
pub fn mix_step(mixing: &MixingMatrix, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    mix_rows(mixing.matrix(), x)
}
