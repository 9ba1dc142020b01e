//! Local objectives with exact gradients.
//!
//! Every objective evaluates the mean per-sample loss over a set of dataset
//! rows. Parameters are flat `f64` vectors.

use rand::Rng as _;

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub trait Objective: Send + Sync {
    fn param_count(&self) -> usize;

    /// Mean loss over `rows` (plus any regularizer).
    fn loss(&self, w: &[f64], ds: &Dataset, rows: &[usize]) -> f64;

    /// Gradient of [`Objective::loss`], written into `out` (overwritten).
    fn grad_into(&self, w: &[f64], ds: &Dataset, rows: &[usize], out: &mut [f64]);

    /// Predicted class of one feature row; `None` for non-classifiers.
    fn predict(&self, _w: &[f64], _x: &[f64]) -> Option<usize> {
        None
    }

    /// Checks that `ds` has the features and targets this objective expects.
    fn check(&self, ds: &Dataset) -> Result<()>;

    /// Shared initial parameters drawn from `seed`.
    fn init_params(&self, seed: u64) -> Vec<f64>;

    fn grad(&self, w: &[f64], ds: &Dataset, rows: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_count()];
        self.grad_into(w, ds, rows, &mut g);
        g
    }

    fn is_classifier(&self) -> bool {
        false
    }
}

pub fn all_rows(ds: &Dataset) -> Vec<usize> {
    (0..ds.rows()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f(w) = ‖Xw − y‖² / (2·rows)`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    dims: usize,
}

impl LeastSquares {
    pub fn new(dims: usize) -> Self {
        LeastSquares { dims }
    }

    pub fn for_dataset(ds: &Dataset) -> Result<Self> {
        let obj = LeastSquares::new(ds.dims());
        obj.check(ds)?;
        Ok(obj)
    }
}

impl Objective for LeastSquares {
    fn param_count(&self) -> usize {
        self.dims
    }

    fn loss(&self, w: &[f64], ds: &Dataset, rows: &[usize]) -> f64 {
        let y = ds.values().expect("least squares needs real targets");
        let sum: f64 = rows
            .iter()
            .map(|&r| (dot(ds.row(r), w) - y[r]).powi(2))
            .sum();
        sum / (2.0 * rows.len() as f64)
    }

    fn grad_into(&self, w: &[f64], ds: &Dataset, rows: &[usize], out: &mut [f64]) {
        let y = ds.values().expect("least squares needs real targets");
        out.fill(0.0);
        for &r in rows {
            let x = ds.row(r);
            let resid = dot(x, w) - y[r];
            for (o, xi) in out.iter_mut().zip(x) {
                *o += resid * xi;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: ds.dims(),
            });
        }
        if ds.values().is_none() {
            return Err(Error::InvalidArgument(
                "least squares needs real-valued targets".into(),
            ));
        }
        if ds.rows() == 0 {
            return Err(Error::InvalidArgument("design matrix has no rows".into()));
        }
        Ok(())
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.dims]
    }
}

/// Global least-squares minimizer over all rows, via the normal equations.
pub fn least_squares_solution(ds: &Dataset) -> Result<Vec<f64>> {
    let y = ds
        .values()
        .ok_or_else(|| Error::InvalidArgument("least squares needs real-valued targets".into()))?;
    let x = nalgebra::DMatrix::from_row_slice(ds.rows(), ds.dims(), ds.features());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * nalgebra::DVector::from_column_slice(y);
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("XᵀX is singular".into()))?;
    Ok(chol.solve(&xty).iter().copied().collect())
}

/// Exact smoothness constant of least squares on the given rows:
/// `λ_max(XᵀX) / rows`.
pub fn least_squares_smoothness(ds: &Dataset, rows: &[usize]) -> Result<f64> {
    let sub = ds.subset(rows);
    let x = nalgebra::DMatrix::from_row_slice(sub.rows(), sub.dims(), sub.features());
    let gram = x.transpose() * &x / rows.len() as f64;
    let values = crate::spectral::symmetric_eigenvalues(&gram, Default::default())?;
    Ok(values.last().copied().unwrap_or(0.0))
}

/// Minimizer and minimum of `(1/N) Σ_i ‖X_i w − y_i‖² / (2 n_i)` over the
/// given shards (the federated objective, which weights shards equally).
pub fn least_squares_federated_optimum(ds: &Dataset, shards: &[Vec<usize>]) -> Result<(Vec<f64>, f64)> {
    let y = ds
        .values()
        .ok_or_else(|| Error::InvalidArgument("least squares needs real-valued targets".into()))?;
    let d = ds.dims();
    let mut a = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut rhs = nalgebra::DVector::<f64>::zeros(d);
    for shard in shards {
        let weight = 1.0 / (shards.len() * shard.len()) as f64;
        for &r in shard {
            let x = nalgebra::DVector::from_column_slice(ds.row(r));
            a += weight * &x * x.transpose();
            rhs += weight * y[r] * &x;
        }
    }
    let w: Vec<f64> = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("weighted XᵀX is singular".into()))?
        .solve(&rhs)
        .iter()
        .copied()
        .collect();
    let f = global_loss(&LeastSquares::new(d), &w, ds, shards);
    Ok((w, f))
}

/// `(1/N) Σ_i f_i(w)` over the shards.
pub fn global_loss(obj: &dyn Objective, w: &[f64], ds: &Dataset, shards: &[Vec<usize>]) -> f64 {
    shards.iter().map(|s| obj.loss(w, ds, s)).sum::<f64>() / shards.len() as f64
}

/// Largest `‖∇f_i(u) − ∇f_i(v)‖ / ‖u − v‖` over random pairs near `center`
/// (unit-scale Gaussian perturbations), maximized over shards.
pub fn estimate_smoothness(
    obj: &dyn Objective,
    ds: &Dataset,
    shards: &[Vec<usize>],
    center: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    use rand_distr::StandardNormal;
    let mut rng = rng_from(seed, &[0x4c]);
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let u: Vec<f64> = center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect();
        let v: Vec<f64> = u.iter().map(|c| c + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let dist = norm(&u.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        for s in shards {
            let gu = obj.grad(&u, ds, s);
            let gv = obj.grad(&v, ds, s);
            let diff = norm(&gu.iter().zip(&gv).map(|(a, b)| a - b).collect::<Vec<_>>());
            best = best.max(diff / dist);
        }
    }
    if !best.is_finite() {
        return Err(Error::InvalidArgument("smoothness estimate is not finite".into()));
    }
    Ok(best)
}

/// `max_i sqrt(E‖∇f_i(w; ξ) − ∇f_i(w)‖²)` for minibatches of `batch`
/// samples drawn with replacement, from `draws` samples per shard.
pub fn estimate_gradient_noise(
    obj: &dyn Objective,
    ds: &Dataset,
    shards: &[Vec<usize>],
    w: &[f64],
    batch: usize,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = rng_from(seed, &[0x73]);
    let mut worst = 0.0f64;
    for s in shards {
        let full = obj.grad(w, ds, s);
        let mut acc = 0.0;
        for _ in 0..draws {
            let rows: Vec<usize> = (0..batch).map(|_| s[rng.random_range(0..s.len())]).collect();
            let g = obj.grad(w, ds, &rows);
            acc += g.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        worst = worst.max((acc / draws.max(1) as f64).sqrt());
    }
    worst
}

/// Binary cross-entropy with a bias term and ridge penalty `(l2/2)‖w‖²` on
/// the weights (not the bias). Parameters are `[w_0..w_{d-1}, b]`.
#[derive(Clone, Debug)]
pub struct Logistic {
    dims: usize,
    l2: f64,
}

impl Logistic {
    pub fn new(dims: usize, l2: f64) -> Self {
        Logistic { dims, l2 }
    }

    pub fn for_dataset(ds: &Dataset, l2: f64) -> Result<Self> {
        let obj = Logistic::new(ds.dims(), l2);
        obj.check(ds)?;
        Ok(obj)
    }

    fn logit(&self, w: &[f64], x: &[f64]) -> f64 {
        dot(&w[..self.dims], x) + w[self.dims]
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective for Logistic {
    fn param_count(&self) -> usize {
        self.dims + 1
    }

    fn loss(&self, w: &[f64], ds: &Dataset, rows: &[usize]) -> f64 {
        let labels = ds.labels().expect("logistic needs class labels");
        let sum: f64 = rows
            .iter()
            .map(|&r| {
                let z = self.logit(w, ds.row(r));
                // -[y ln σ(z) + (1-y) ln(1-σ(z))]
                if labels[r] == 1 {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        let ridge = 0.5 * self.l2 * w[..self.dims].iter().map(|v| v * v).sum::<f64>();
        sum / rows.len() as f64 + ridge
    }

    fn grad_into(&self, w: &[f64], ds: &Dataset, rows: &[usize], out: &mut [f64]) {
        let labels = ds.labels().expect("logistic needs class labels");
        out.fill(0.0);
        for &r in rows {
            let x = ds.row(r);
            let err = sigmoid(self.logit(w, x)) - labels[r] as f64;
            for (o, xi) in out[..self.dims].iter_mut().zip(x) {
                *o += err * xi;
            }
            out[self.dims] += err;
        }
        let scale = 1.0 / rows.len() as f64;
        for (j, o) in out.iter_mut().enumerate() {
            *o *= scale;
            if j < self.dims {
                *o += self.l2 * w[j];
            }
        }
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> Option<usize> {
        Some(usize::from(self.logit(w, x) > 0.0))
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: ds.dims(),
            });
        }
        let labels = ds.labels().ok_or_else(|| {
            Error::InvalidArgument("logistic regression needs class labels".into())
        })?;
        if let Some(&label) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::LabelOutOfRange { label, classes: 2 });
        }
        Ok(())
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.dims + 1]
    }

    fn is_classifier(&self) -> bool {
        true
    }
}

/// One hidden tanh layer and a softmax cross-entropy output.
///
/// Parameter layout: `W1` (hidden × dims, row-major), `b1`, `W2`
/// (classes × hidden, row-major), `b2`.
#[derive(Clone, Debug)]
pub struct Mlp {
    dims: usize,
    hidden: usize,
    classes: usize,
}

struct MlpView<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl Mlp {
    pub fn new(dims: usize, hidden: usize, classes: usize) -> Result<Self> {
        if dims == 0 || hidden == 0 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "mlp needs dims >= 1, hidden >= 1, classes >= 2; got {dims}, {hidden}, {classes}"
            )));
        }
        Ok(Mlp {
            dims,
            hidden,
            classes,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.hidden * self.dims;
        let b = a + self.hidden;
        let c = b + self.classes * self.hidden;
        [a, b, c, c + self.classes]
    }

    fn view<'a>(&self, w: &'a [f64]) -> MlpView<'a> {
        let [a, b, c, d] = self.offsets();
        MlpView {
            w1: &w[..a],
            b1: &w[a..b],
            w2: &w[b..c],
            b2: &w[c..d],
        }
    }

    fn forward(&self, v: &MlpView, x: &[f64], h: &mut [f64], logits: &mut [f64]) {
        for j in 0..self.hidden {
            h[j] = (dot(&v.w1[j * self.dims..(j + 1) * self.dims], x) + v.b1[j]).tanh();
        }
        for c in 0..self.classes {
            logits[c] = dot(&v.w2[c * self.hidden..(c + 1) * self.hidden], h) + v.b2[c];
        }
    }

    /// Overwrites `logits` with softmax probabilities; returns log-sum-exp.
    fn softmax_in_place(logits: &mut [f64]) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        logits.iter_mut().for_each(|z| *z = (*z - lse).exp());
        lse
    }
}

impl Objective for Mlp {
    fn param_count(&self) -> usize {
        self.offsets()[3]
    }

    fn loss(&self, w: &[f64], ds: &Dataset, rows: &[usize]) -> f64 {
        let labels = ds.labels().expect("mlp needs class labels");
        let v = self.view(w);
        let mut h = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        let mut sum = 0.0;
        for &r in rows {
            self.forward(&v, ds.row(r), &mut h, &mut logits);
            let target = logits[labels[r]];
            sum += Self::softmax_in_place(&mut logits) - target;
        }
        sum / rows.len() as f64
    }

    fn grad_into(&self, w: &[f64], ds: &Dataset, rows: &[usize], out: &mut [f64]) {
        let labels = ds.labels().expect("mlp needs class labels");
        let v = self.view(w);
        let [a, b, c, _] = self.offsets();
        out.fill(0.0);
        let (g_w1, rest) = out.split_at_mut(a);
        let (g_b1, rest) = rest.split_at_mut(b - a);
        let (g_w2, g_b2) = rest.split_at_mut(c - b);
        let mut h = vec![0.0; self.hidden];
        let mut p = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        for &r in rows {
            let x = ds.row(r);
            self.forward(&v, x, &mut h, &mut p);
            Self::softmax_in_place(&mut p);
            p[labels[r]] -= 1.0;
            dh.fill(0.0);
            for k in 0..self.classes {
                let dk = p[k];
                g_b2[k] += dk;
                let w2_row = &v.w2[k * self.hidden..(k + 1) * self.hidden];
                let g_row = &mut g_w2[k * self.hidden..(k + 1) * self.hidden];
                for j in 0..self.hidden {
                    g_row[j] += dk * h[j];
                    dh[j] += dk * w2_row[j];
                }
            }
            for j in 0..self.hidden {
                let dz = dh[j] * (1.0 - h[j] * h[j]);
                g_b1[j] += dz;
                let g_row = &mut g_w1[j * self.dims..(j + 1) * self.dims];
                for (g, xi) in g_row.iter_mut().zip(x) {
                    *g += dz * xi;
                }
            }
        }
        let scale = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> Option<usize> {
        let v = self.view(w);
        let mut h = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.forward(&v, x, &mut h, &mut logits);
        Some(argmax(&logits))
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: ds.dims(),
            });
        }
        match ds.targets() {
            Targets::Classes { classes, .. } if *classes <= self.classes => Ok(()),
            Targets::Classes { classes, .. } => Err(Error::LabelOutOfRange {
                label: classes - 1,
                classes: self.classes,
            }),
            Targets::Values(_) => Err(Error::InvalidArgument("mlp needs class labels".into())),
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[0x6d6c70]);
        let [a, b, c, d] = self.offsets();
        let mut w = vec![0.0; d];
        let r1 = 1.0 / (self.dims as f64).sqrt();
        let r2 = 1.0 / (self.hidden as f64).sqrt();
        w[..a].iter_mut().for_each(|v| *v = rng.random_range(-r1..r1));
        w[b..c].iter_mut().for_each(|v| *v = rng.random_range(-r2..r2));
        w
    }

    fn is_classifier(&self) -> bool {
        true
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(obj: &dyn Objective, w: &[f64], ds: &Dataset, rows: &[usize]) -> Result<f64> {
    if !obj.is_classifier() {
        return Err(Error::NotAClassifier);
    }
    let labels = ds.labels().ok_or(Error::NotAClassifier)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let correct = rows
        .iter()
        .filter(|&&r| obj.predict(w, ds.row(r)) == Some(labels[r]))
        .count();
    Ok(correct as f64 / rows.len() as f64)
}

/// Central finite-difference gradient, for checking `grad_into`.
pub fn finite_difference_grad(
    obj: &dyn Objective,
    w: &[f64],
    ds: &Dataset,
    rows: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|j| {
            probe[j] = w[j] + h;
            let up = obj.loss(&probe, ds, rows);
            probe[j] = w[j] - h;
            let down = obj.loss(&probe, ds, rows);
            probe[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
