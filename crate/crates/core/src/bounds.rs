//! Closed-form convergence and stability bounds for DFedAvgM, and a numeric
//! check of the stepsize-sum inequality used by the stability argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem constants. Fields not needed by a given bound may be left at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// Smoothness constant.
    #[serde(rename = "L")]
    pub l: f64,
    /// Bound on the local stochastic-gradient standard deviation.
    pub sigma: f64,
    /// Bound on `‖∇f_i − ∇f‖`.
    pub zeta: f64,
    /// Bound on `‖∇f_i‖`.
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub t: f64,
    /// Constant step size (convergence bound).
    #[serde(default)]
    pub eta: f64,
    /// Decay constant of `η_t ≤ c/t` (stability bound).
    #[serde(default)]
    pub c: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Number of nodes.
    #[serde(rename = "N", default)]
    pub nodes: f64,
    /// Local data set size.
    #[serde(default)]
    pub n: f64,
    /// `f(w̄¹) − min f`.
    #[serde(default)]
    pub f_gap: f64,
    /// Uniform bound on the nonnegative loss.
    #[serde(default)]
    pub sup_f: f64,
}

impl BoundParams {
    fn check_common(&self) -> Result<()> {
        let named = [
            ("L", self.l),
            ("sigma", self.sigma),
            ("zeta", self.zeta),
            ("B", self.b),
            ("K", self.k),
            ("T", self.t),
            ("eta", self.eta),
            ("c", self.c),
            ("N", self.nodes),
            ("n", self.n),
            ("f_gap", self.f_gap),
            ("sup_f", self.sup_f),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        check_lambda(self.lambda)
    }

    /// The step-size conditions `0 < η ≤ 1/(8LK)` and
    /// `64L²K²η² + 64LKη < 1`.
    pub fn check_stepsize_guards(&self) -> Result<()> {
        let (l, k, eta) = (self.l, self.k, self.eta);
        if !(eta > 0.0) {
            return Err(Error::StepSizeGuard(format!("eta must be positive, got {eta}")));
        }
        if eta > 1.0 / (8.0 * l * k) {
            return Err(Error::StepSizeGuard(format!(
                "eta = {eta} exceeds 1/(8LK) = {}",
                1.0 / (8.0 * l * k)
            )));
        }
        let q = 64.0 * l * l * k * k * eta * eta + 64.0 * l * k * eta;
        if q >= 1.0 {
            return Err(Error::StepSizeGuard(format!(
                "64L²K²η² + 64LKη = {q} is not below 1"
            )));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceConstants {
    pub gamma: f64,
    pub alpha: f64,
    pub xi: f64,
}

/// `γ(K, η)`, `α(K, η)`, `Ξ(K, η)` of the constant-step convergence bound,
/// after checking the parameter ranges and step-size guards.
pub fn convergence_constants(p: &BoundParams) -> Result<ConvergenceConstants> {
    p.check_common()?;
    p.check_stepsize_guards()?;
    let c = raw_convergence_constants(p);
    if !(c.gamma > 0.0) {
        return Err(Error::GammaNonPositive(c.gamma));
    }
    Ok(c)
}

/// Literal evaluation of the three constants with no validation.
pub fn raw_convergence_constants(p: &BoundParams) -> ConvergenceConstants {
    let BoundParams {
        l,
        sigma,
        zeta,
        b,
        k,
        eta,
        beta,
        ..
    } = *p;
    let one_b = 1.0 - beta;
    let k_b = k - beta;
    let gamma = eta * k_b / one_b
        - 64.0 * one_b * l.powi(2) * k.powi(4) * eta.powi(3) / k_b
        - 64.0 * l * k.powi(2) * eta.powi(2);
    let momentum = 64.0 * k.powi(2) * beta.powi(2) * (sigma.powi(2) + b.powi(2)) / one_b.powi(2);
    let noise = 8.0 * k * sigma.powi(2) + 32.0 * k.powi(2) * zeta.powi(2) + momentum;
    let alpha = (one_b * l.powi(2) * k.powi(2) * eta.powi(3) / k_b + l * eta.powi(2)) * noise / gamma;
    let xi = (64.0 * one_b * l.powi(4) * k.powi(4) * eta.powi(5) / k_b
        + 64.0 * l.powi(3) * k.powi(2) * eta.powi(4))
        * ((noise + 32.0 * k.powi(2) * b.powi(2)) / gamma);
    ConvergenceConstants { gamma, alpha, xi }
}

/// Upper bound on `min_t E‖∇f(w̄ᵗ)‖²`:
/// `2 f_gap / (γT) + α + Ξ / (1 − λ)²`.
pub fn convergence_bound(p: &BoundParams) -> Result<f64> {
    convergence_constants(p)?;
    if !(p.t > 0.0) {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    Ok(raw_convergence_bound(p))
}

/// Literal evaluation of the convergence bound with no validation.
pub fn raw_convergence_bound(p: &BoundParams) -> f64 {
    let c = raw_convergence_constants(p);
    2.0 * p.f_gap / (c.gamma * p.t) + c.alpha + c.xi / (1.0 - p.lambda).powi(2)
}

/// Topology constant of the stability bound:
/// `2λ² + 4λ² ln(1/λ) + 2λ + 2 / ln(1/λ)`.
pub fn c_lambda(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let ln = (1.0 / lambda).ln();
    Ok(2.0 * lambda.powi(2) + 4.0 * lambda.powi(2) * ln + 2.0 * lambda + 2.0 / ln)
}

/// The stepsize-sum constant in its min-term form:
/// `min{2λ, λ^{1/ℓ}/ℓ} + min{4λℓ, 4λ^{2/ℓ}/ℓ} + min{2λ, λ^{1/ℓ}/ℓ} + 2/ℓ`
/// with `ℓ = ln(1/λ)`.
pub fn c_lambda_lemma(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let ln = (1.0 / lambda).ln();
    let first = (2.0 * lambda).min(lambda.powf(1.0 / ln) / ln);
    let second = (4.0 * lambda * ln).min(4.0 / ln * lambda.powf(2.0 / ln));
    Ok(2.0 * first + second + 2.0 / ln)
}

/// Uniform-stability bound for `η_t ≤ c/t`, with `x = cLK`:
/// `T^{x/(1+x)} (sup_f K x^{1/(1+x)} / n + (2σB/(NL)) / x^{x/(1+x)})
///  + B(σ + B)(cK + 2C_λ) / x`.
pub fn stability_bound(p: &BoundParams) -> Result<f64> {
    p.check_common()?;
    for (name, v) in [
        ("c", p.c),
        ("L", p.l),
        ("K", p.k),
        ("T", p.t),
        ("n", p.n),
        ("N", p.nodes),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
    }
    let x = p.c * p.l * p.k;
    let e = x / (1.0 + x);
    let head = p.t.powf(e)
        * (p.sup_f * p.k * x.powf(1.0 / (1.0 + x)) / p.n
            + (2.0 * p.sigma * p.b / (p.nodes * p.l)) / x.powf(e));
    let tail = p.b * (p.sigma + p.b) * (p.c * p.k + 2.0 * c_lambda(p.lambda)?) / x;
    Ok(head + tail)
}

/// `max_{2 ≤ t ≤ t_max} t Σ_{j=1}^{t−1} η_{t−j} λ^j / C` with `η_s = c/s`
/// and `C = c · c_lambda_lemma(λ)`. The inequality holds when the result
/// is at most 1.
pub fn verify_stepsize_sum(c: f64, lambda: f64, t_max: usize) -> Result<f64> {
    if !(c > 0.0) || t_max < 2 {
        return Err(Error::InvalidArgument(format!(
            "need c > 0 and t_max >= 2, got c = {c}, t_max = {t_max}"
        )));
    }
    let constant = c * c_lambda_lemma(lambda)?;
    // S(t) = Σ_{s=1}^{t−1} λ^{t−s}/s satisfies S(t) = λ (S(t−1) + 1/(t−1)).
    let mut s = 0.0;
    let mut worst = 0.0f64;
    for t in 2..=t_max {
        s = lambda * (s + 1.0 / (t - 1) as f64);
        worst = worst.max(t as f64 * c * s / constant);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub convergence: Option<f64>,
    pub convergence_error: Option<String>,
    pub constants: Option<ConvergenceConstants>,
    pub stability: Option<f64>,
    pub stability_error: Option<String>,
    pub c_lambda: f64,
    pub c_lambda_lemma: f64,
    pub lemma_ratio: f64,
    pub lemma_t_max: usize,
}

/// Evaluate everything that the given parameters allow.
pub fn report(p: &BoundParams, t_max: usize) -> Result<BoundsReport> {
    let conv = convergence_bound(p);
    let stab = stability_bound(p);
    let lemma_c = if p.c > 0.0 { p.c } else { 1.0 };
    Ok(BoundsReport {
        constants: convergence_constants(p).ok(),
        convergence: conv.as_ref().ok().copied(),
        convergence_error: conv.err().map(|e| e.to_string()),
        stability: stab.as_ref().ok().copied(),
        stability_error: stab.err().map(|e| e.to_string()),
        c_lambda: c_lambda(p.lambda)?,
        c_lambda_lemma: c_lambda_lemma(p.lambda)?,
        lemma_ratio: verify_stepsize_sum(lemma_c, p.lambda, t_max)?,
        lemma_t_max: t_max,
    })
}
