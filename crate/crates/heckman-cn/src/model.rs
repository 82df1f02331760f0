//! Model representation and observed-data quantities for the SLn and SLcn
//! selection models.
//!
//! The outcome equation is `Y1 = x'beta + e1` and the latent selection
//! equation `Y2 = w'gamma + e2`; `Y1` is observed exactly when `Y2 > 0`. The
//! error pair is bivariate normal (SLn) or bivariate contaminated normal
//! (SLcn) with covariance `[[sigma^2, rho sigma], [rho sigma, 1]]`; the unit
//! second diagonal is an identification constraint since only the sign of
//! `Y2` is seen.

use crate::dist::{cn_ln_cdf1, cn_ln_pdf1, ln_add_exp, norm_cdf, norm_ln_cdf, norm_ln_pdf};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which error family the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Bivariate normal errors (classical Heckman model).
    SLn,
    /// Bivariate contaminated-normal errors.
    SLcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SLn => "sln",
            ModelKind::SLcn => "slcn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sln" => Ok(ModelKind::SLn),
            "slcn" => Ok(ModelKind::SLcn),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (use sln or slcn)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Observed data: outcome design matrix `x` (n x p), selection design matrix
/// `w` (n x q), outcomes `v1` (present exactly when selected) and selection
/// indicators.
///
/// The constructor enforces structural consistency; estimability conditions
/// (sample size, design rank, variation in the indicator) are checked where
/// estimation starts, so that small handcrafted datasets can still be used
/// with the pure evaluation functions.
#[derive(Debug, Clone)]
pub struct SelectionData {
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    v1: Vec<Option<f64>>,
    c: Vec<bool>,
}

impl SelectionData {
    pub fn new(
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        v1: Vec<Option<f64>>,
        c: Vec<bool>,
    ) -> Result<Self> {
        let n = c.len();
        if n == 0 {
            return Err(Error::InvalidData("empty data set".into()));
        }
        if x.nrows() != n || w.nrows() != n || v1.len() != n {
            return Err(Error::InvalidData(
                "x, w, v1 and c must have one row per unit".into(),
            ));
        }
        if x.ncols() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidData(
                "design matrices need at least one column".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design matrices must be finite".into()));
        }
        for (i, (v, &ci)) in v1.iter().zip(&c).enumerate() {
            match (v, ci) {
                (Some(val), true) => {
                    if !val.is_finite() {
                        return Err(Error::InvalidData(format!(
                            "non-finite outcome at unit {i}"
                        )));
                    }
                }
                (None, false) => {}
                (Some(_), false) => {
                    return Err(Error::InvalidData(format!(
                        "unit {i} has an outcome but selection indicator 0"
                    )));
                }
                (None, true) => {
                    return Err(Error::InvalidData(format!(
                        "unit {i} is selected but its outcome is missing"
                    )));
                }
            }
        }
        Ok(Self { x, w, v1, c })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.w.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn outcomes(&self) -> &[Option<f64>] {
        &self.v1
    }
    pub fn selected(&self) -> &[bool] {
        &self.c
    }
    pub fn n_selected(&self) -> usize {
        self.c.iter().filter(|&&b| b).count()
    }

    /// Estimability conditions required before fitting: enough units, both
    /// outcomes present in the indicator, full-rank designs.
    pub fn check_estimable(&self, kind: ModelKind) -> Result<()> {
        let needed = self.p() + self.q() + if kind == ModelKind::SLcn { 4 } else { 2 };
        if self.n() < needed {
            return Err(Error::Estimability(format!(
                "need at least {needed} units for {} with p={} and q={}, got {}",
                kind.name(),
                self.p(),
                self.q(),
                self.n()
            )));
        }
        let sel = self.n_selected();
        if sel == 0 || sel == self.n() {
            return Err(Error::Estimability("selection indicator must vary".into()));
        }
        if sel < self.p() + 2 {
            return Err(Error::Estimability(format!(
                "need at least p+2 = {} selected units, got {sel}",
                self.p() + 2
            )));
        }
        let tol = 1e-8;
        if self.x.rank(tol) < self.p() {
            return Err(Error::RankDeficient("outcome design matrix x".into()));
        }
        if self.w.rank(tol) < self.q() {
            return Err(Error::RankDeficient("selection design matrix w".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Full parameter vector. For SLn fits `nu1`/`nu2` sit at the normal
/// boundary (0 and 1) and are ignored by every SLn code path.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl Theta {
    pub fn sln(beta: DVector<f64>, gamma: DVector<f64>, sigma2: f64, rho: f64) -> Self {
        Self {
            beta,
            gamma,
            sigma2,
            rho,
            nu1: 0.0,
            nu2: 1.0,
        }
    }

    pub fn slcn(
        beta: DVector<f64>,
        gamma: DVector<f64>,
        sigma2: f64,
        rho: f64,
        nu1: f64,
        nu2: f64,
    ) -> Self {
        Self {
            beta,
            gamma,
            sigma2,
            rho,
            nu1,
            nu2,
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.rho.abs() >= 1.0 - 1e-8 {
            return Err(Error::Domain(format!(
                "|rho| must stay below 1 - 1e-8, got {}",
                self.rho
            )));
        }
        if kind == ModelKind::SLcn
            && !(self.nu1 > 0.0 && self.nu1 < 1.0 && self.nu2 > 0.0 && self.nu2 < 1.0)
        {
            return Err(Error::Domain(format!(
                "SLcn requires nu1, nu2 in (0,1), got ({}, {})",
                self.nu1, self.nu2
            )));
        }
        if self.beta.iter().any(|v| !v.is_finite()) || self.gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite regression coefficients".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `psi = sigma^2 (1 - rho^2)`, the CM-step working parameter.
    pub fn psi(&self) -> f64 {
        self.sigma2 * (1.0 - self.rho * self.rho)
    }

    /// `rho* = rho sigma`, the CM-step working parameter.
    pub fn rho_star(&self) -> f64 {
        self.rho * self.sigma()
    }

    /// Error covariance with the unit second diagonal.
    pub fn sigma_mat(&self) -> Matrix2<f64> {
        let rs = self.rho_star();
        Matrix2::new(self.sigma2, rs, rs, 1.0)
    }

    /// Number of free parameters of the model.
    pub fn n_free(kind: ModelKind, p: usize, q: usize) -> usize {
        p + q + if kind == ModelKind::SLcn { 4 } else { 2 }
    }
}

// ---------------------------------------------------------------------------
// Log-likelihood
// ---------------------------------------------------------------------------

/// Deterministic pairwise summation.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Observed-data log contribution of unit `i`. The caller is responsible
/// for `theta` being valid for the model kind.
pub fn loglik_unit(theta: &Theta, data: &SelectionData, kind: ModelKind, i: usize) -> f64 {
    let xb = data
        .x
        .row(i)
        .iter()
        .zip(theta.beta.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let wg = data
        .w
        .row(i)
        .iter()
        .zip(theta.gamma.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let s = theta.sigma();
    let st = (1.0 - theta.rho * theta.rho).sqrt();
    match (data.c[i], kind) {
        (true, ModelKind::SLcn) => {
            let v = data.v1[i].expect("selected unit has outcome");
            let ln_f = cn_ln_pdf1(v, xb, theta.sigma2, theta.nu1, theta.nu2);
            let la = theta.nu1.ln() + norm_ln_pdf(v, xb, theta.sigma2 / theta.nu2);
            let lb = (1.0 - theta.nu1).ln() + norm_ln_pdf(v, xb, theta.sigma2);
            let ln_mix = ln_add_exp(la, lb);
            let zt = (wg + theta.rho / s * (v - xb)) / st;
            let ln_p = ln_add_exp(
                la - ln_mix + norm_ln_cdf(theta.nu2.sqrt() * zt),
                lb - ln_mix + norm_ln_cdf(zt),
            );
            ln_f + ln_p
        }
        (false, ModelKind::SLcn) => cn_ln_cdf1(-wg, 0.0, 1.0, theta.nu1, theta.nu2),
        (true, ModelKind::SLn) => {
            let v = data.v1[i].expect("selected unit has outcome");
            let zt = (wg + theta.rho / s * (v - xb)) / st;
            norm_ln_pdf(v, xb, theta.sigma2) + norm_ln_cdf(zt)
        }
        (false, ModelKind::SLn) => norm_ln_cdf(-wg),
    }
}

/// Observed-data log-likelihood: the sum of per-unit contributions, computed
/// in log space and reduced with a fixed-order pairwise sum.
pub fn loglik(theta: &Theta, data: &SelectionData, kind: ModelKind) -> Result<f64> {
    theta.validate(kind)?;
    let contributions: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| loglik_unit(theta, data, kind, i))
        .collect();
    if let Some(i) = contributions.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { unit: i });
    }
    Ok(pairwise_sum(&contributions))
}

// ---------------------------------------------------------------------------
// Observed-outcome density and mean correction
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Density of an observed outcome `V1 | C = 1` at `v1`. This is an extended
/// skew (contaminated) normal density in the outcome units.
pub fn observed_outcome_density(
    v1: f64,
    xi: &[f64],
    wi: &[f64],
    theta: &Theta,
    kind: ModelKind,
) -> Result<f64> {
    theta.validate(kind)?;
    if xi.len() != theta.beta.len() || wi.len() != theta.gamma.len() {
        return Err(Error::Dimension(
            "covariate length does not match coefficients".into(),
        ));
    }
    let xb = dot(xi, &theta.beta);
    let wg = dot(wi, &theta.gamma);
    let s = theta.sigma();
    let st = (1.0 - theta.rho * theta.rho).sqrt();
    let delta = (wg + theta.rho / s * (v1 - xb)) / st;
    let (nu1, nu2) = match kind {
        ModelKind::SLcn => (theta.nu1, theta.nu2),
        ModelKind::SLn => (0.0, 1.0),
    };
    let num = nu1 * norm_ln_pdf(v1, xb, theta.sigma2 / nu2).exp() * norm_cdf(nu2.sqrt() * delta)
        + (1.0 - nu1) * norm_ln_pdf(v1, xb, theta.sigma2).exp() * norm_cdf(delta);
    let den = nu1 * norm_cdf(nu2.sqrt() * wg) + (1.0 - nu1) * norm_cdf(wg);
    Ok(num / den)
}

/// Mean-correction function for observed outcomes under CN errors. At the
/// normal boundary (`nu1 = 0` or `nu2 = 1`) it reduces to the inverse Mills
/// ratio `phi(x)/Phi(x)`.
pub fn lambda_cn(x: f64, nu1: f64, nu2: f64) -> f64 {
    let rt = nu2.sqrt();
    let ln_num = ln_add_exp(
        ln_or_neg_inf(nu1) - 0.5 * nu2.ln() + ln_std_pdf(rt * x),
        ln_or_neg_inf(1.0 - nu1) + ln_std_pdf(x),
    );
    let ln_den = ln_add_exp(
        ln_or_neg_inf(nu1) + norm_ln_cdf(rt * x),
        ln_or_neg_inf(1.0 - nu1) + norm_ln_cdf(x),
    );
    (ln_num - ln_den).exp()
}

/// Analytic derivative of `lambda_cn` in its argument.
pub fn lambda_cn_prime(x: f64, nu1: f64, nu2: f64) -> f64 {
    let rt = nu2.sqrt();
    // standard CN density nu1 sqrt(nu2) phi(sqrt(nu2) x) + (1-nu1) phi(x)
    let ln_f = ln_add_exp(
        ln_or_neg_inf(nu1) + 0.5 * nu2.ln() + ln_std_pdf(rt * x),
        ln_or_neg_inf(1.0 - nu1) + ln_std_pdf(x),
    );
    let ln_cdf = ln_add_exp(
        ln_or_neg_inf(nu1) + norm_ln_cdf(rt * x),
        ln_or_neg_inf(1.0 - nu1) + norm_ln_cdf(x),
    );
    -((ln_f - ln_cdf).exp()) * (x + lambda_cn(x, nu1, nu2))
}

#[inline]
fn ln_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[inline]
fn ln_std_pdf(z: f64) -> f64 {
    -0.5 * z * z - crate::dist::LN_SQRT_2PI
}

/// `E[Y1 | C = 1, x, w] = x'beta + rho sigma lambda(w'gamma)`.
pub fn conditional_mean_observed(
    xi: &[f64],
    wi: &[f64],
    theta: &Theta,
    kind: ModelKind,
) -> Result<f64> {
    theta.validate(kind)?;
    let (nu1, nu2) = match kind {
        ModelKind::SLcn => (theta.nu1, theta.nu2),
        ModelKind::SLn => (0.0, 1.0),
    };
    Ok(dot(xi, &theta.beta) + theta.rho_star() * lambda_cn(dot(wi, &theta.gamma), nu1, nu2))
}

/// Which derivative convention a marginal effect uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalEffectForm {
    /// `beta_k + rho sigma lambda'(w'gamma)`, the form reported alongside the
    /// mean equation. Default for reproducing published curves.
    Literal,
    /// Chain-rule-complete form: multiplies the correction by the selection
    /// coefficient of the same underlying covariate (`None` when the
    /// covariate is excluded from the selection equation).
    ChainRule { selection_index: Option<usize> },
}

/// Marginal effect of outcome covariate `k` on `E[Y1 | C = 1]`.
pub fn marginal_effect(
    k: usize,
    xi: &[f64],
    wi: &[f64],
    theta: &Theta,
    kind: ModelKind,
    form: MarginalEffectForm,
) -> Result<f64> {
    theta.validate(kind)?;
    if k >= theta.beta.len() || xi.len() != theta.beta.len() {
        return Err(Error::Dimension(format!(
            "covariate index {k} out of range"
        )));
    }
    let (nu1, nu2) = match kind {
        ModelKind::SLcn => (theta.nu1, theta.nu2),
        ModelKind::SLn => (0.0, 1.0),
    };
    let slope = lambda_cn_prime(dot(wi, &theta.gamma), nu1, nu2);
    let correction = match form {
        MarginalEffectForm::Literal => theta.rho_star() * slope,
        MarginalEffectForm::ChainRule { selection_index } => match selection_index {
            Some(j) => {
                if j >= theta.gamma.len() {
                    return Err(Error::Dimension(format!(
                        "selection index {j} out of range"
                    )));
                }
                theta.rho_star() * slope * theta.gamma[j]
            }
            None => 0.0,
        },
    };
    Ok(theta.beta[k] + correction)
}

/// One row of the mean-correction curve table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaCurveRow {
    pub x: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
}

/// Tabulates `lambda` and `lambda'` over the cross product of the two
/// parameter lists and the argument grid; `(nu1, nu2) = (0, 1)` rows are the
/// normal case.
pub fn lambda_curve_export(
    nu1_list: &[f64],
    nu2_list: &[f64],
    x_grid: &[f64],
) -> Vec<LambdaCurveRow> {
    let mut rows = Vec::with_capacity(nu1_list.len() * nu2_list.len() * x_grid.len());
    for &nu1 in nu1_list {
        for &nu2 in nu2_list {
            for &x in x_grid {
                rows.push(LambdaCurveRow {
                    x,
                    nu1,
                    nu2,
                    lambda: lambda_cn(x, nu1, nu2),
                    lambda_prime: lambda_cn_prime(x, nu1, nu2),
                });
            }
        }
    }
    rows
}
