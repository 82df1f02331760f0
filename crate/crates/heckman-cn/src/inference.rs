//! Post-fit inference: empirical-information standard errors, information
//! criteria and likelihood-ratio tests, normalized quantile residuals with
//! simulated envelopes, and the automatic inlier/outlier detection rule.

use crate::dist::{binorm_rect, cn_cdf1, norm_cdf, norm_quantile, TruncRegion};
use crate::ecm::{e_step, fit, EStepQuantities, EcmOptions, EcmTrace};
use crate::error::{Error, Result};
use crate::model::{ModelKind, SelectionData, Theta};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Unit label from the detection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Good,
    Outlier,
    Inlier,
}

/// A fitted model with standard errors, criteria and diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: ModelKind,
    pub theta: Theta,
    /// Standard errors aligned with `param_names()`; the `sigma2` entry is
    /// delta-method adjusted from the score in `sigma`.
    pub se: Vec<f64>,
    /// Standard error of `sigma` itself.
    pub se_sigma: f64,
    /// Information matrix was positive definite; when false the standard
    /// errors come from a pseudo-inverse.
    pub info_pd: bool,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub k_params: usize,
    pub n: usize,
    pub eps_hat: Vec<f64>,
    pub classifications: Vec<Classification>,
    pub trace: EcmTrace,
}

impl FitResult {
    /// Reporting order: regression coefficients, `sigma2`, `rho`, and for
    /// SLcn the mixture parameters.
    pub fn param_names(&self) -> Vec<String> {
        let p = self.theta.beta.len();
        let q = self.theta.gamma.len();
        let mut names: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
        names.extend((0..q).map(|j| format!("gamma{j}")));
        names.push("sigma2".into());
        names.push("rho".into());
        if self.kind == ModelKind::SLcn {
            names.push("nu1".into());
            names.push("nu2".into());
        }
        names
    }

    pub fn param_value(&self, j: usize) -> f64 {
        let p = self.theta.beta.len();
        let q = self.theta.gamma.len();
        if j < p {
            self.theta.beta[j]
        } else if j < p + q {
            self.theta.gamma[j - p]
        } else {
            match j - p - q {
                0 => self.theta.sigma2,
                1 => self.theta.rho,
                2 => self.theta.nu1,
                3 => self.theta.nu2,
                _ => f64::NAN,
            }
        }
    }

    pub fn param_se(&self, j: usize) -> f64 {
        self.se.get(j).copied().unwrap_or(f64::NAN)
    }
}

// ---------------------------------------------------------------------------
// Scores and the empirical information matrix
// ---------------------------------------------------------------------------

fn sigma_inv(theta: &Theta) -> Matrix2<f64> {
    let psi = theta.psi();
    let rs = theta.rho_star();
    Matrix2::new(1.0 / psi, -rs / psi, -rs / psi, theta.sigma2 / psi)
}

/// Per-unit score in the `(beta, gamma, sigma, rho[, nu1, nu2])`
/// parameterization, assembled from the E-step expectations at `theta`.
pub fn score_vector(
    theta: &Theta,
    data: &SelectionData,
    kind: ModelKind,
    q: &EStepQuantities,
    i: usize,
) -> DVector<f64> {
    let (p, qq) = (data.p(), data.q());
    let d = Theta::n_free(kind, p, qq);
    let u = &q.units[i];
    let si = sigma_inv(theta);
    let s = theta.sigma();
    let rho = theta.rho;
    let nu2 = if kind == ModelKind::SLcn {
        theta.nu2
    } else {
        1.0
    };
    let xb: f64 = data
        .x()
        .row(i)
        .iter()
        .zip(theta.beta.iter())
        .map(|(a, b)| a * b)
        .sum();
    let wg: f64 = data
        .w()
        .row(i)
        .iter()
        .zip(theta.gamma.iter())
        .map(|(a, b)| a * b)
        .sum();
    let mu = Vector2::new(xb, wg);

    let mut out = DVector::zeros(d);
    // regression block: X' Sigma^-1 [(y_hat - mu) + (nu2 - 1)(eps y_hat - eps mu)]
    let resid = (u.y_hat - mu) + (nu2 - 1.0) * (u.epsy_hat - u.eps_hat * mu);
    let v = si * resid;
    for j in 0..p {
        out[j] = data.x()[(i, j)] * v[0];
    }
    for j in 0..qq {
        out[p + j] = data.w()[(i, j)] * v[1];
    }
    // E1, E2, Gamma at theta
    let e1 = u.y2_hat - u.y_hat * mu.transpose() - mu * u.y_hat.transpose() + mu * mu.transpose();
    let e2 = u.epsy2_hat - u.epsy_hat * mu.transpose() - mu * u.epsy_hat.transpose()
        + u.eps_hat * mu * mu.transpose();
    let gamma_mat = e1 + (nu2 - 1.0) * e2;
    let b = Matrix2::new(2.0 * s, rho, rho, 0.0);
    let dm = Matrix2::new(0.0, s, s, 0.0);
    let sb = -0.5 * (si * b).trace() + 0.5 * (gamma_mat * si * b * si).trace();
    let sd = -0.5 * (si * dm).trace() + 0.5 * (gamma_mat * si * dm * si).trace();
    out[p + qq] = sb;
    out[p + qq + 1] = sd;
    if kind == ModelKind::SLcn {
        // the complete-data term differentiates to eps/nu1 - (1-eps)/(1-nu1);
        // the published display drops the sign of the second piece, which
        // cannot vanish at the MLE
        out[p + qq + 2] = u.eps_hat / theta.nu1 - (1.0 - u.eps_hat) / (1.0 - theta.nu1);
        out[p + qq + 3] = u.eps_hat / theta.nu2 - 0.5 * (e2 * si).trace();
    }
    out
}

/// All per-unit scores, one row per unit.
pub fn score_matrix(theta: &Theta, data: &SelectionData, kind: ModelKind) -> Result<DMatrix<f64>> {
    let q = e_step(theta, data, kind)?;
    let d = Theta::n_free(kind, data.p(), data.q());
    let mut m = DMatrix::zeros(data.n(), d);
    for i in 0..data.n() {
        let s = score_vector(theta, data, kind, &q, i);
        for j in 0..d {
            m[(i, j)] = s[j];
        }
    }
    Ok(m)
}

/// Empirical information matrix
/// `I_e = sum_i s_i s_i' - (1/n) S S'` with `S = sum_i s_i`.
pub fn empirical_information(
    theta: &Theta,
    data: &SelectionData,
    kind: ModelKind,
) -> Result<DMatrix<f64>> {
    let scores = score_matrix(theta, data, kind)?;
    let d = scores.ncols();
    let n = scores.nrows();
    let mut info = DMatrix::zeros(d, d);
    let mut total = DVector::zeros(d);
    for i in 0..n {
        let row = scores.row(i).transpose();
        info += &row * row.transpose();
        total += row;
    }
    info -= &total * total.transpose() / n as f64;
    Ok(info)
}

/// Standard errors from the inverse information matrix; a non-PD matrix
/// falls back to the SVD pseudo-inverse and is flagged.
pub fn standard_errors_from_information(info: &DMatrix<f64>) -> Result<(DVector<f64>, bool)> {
    let d = info.nrows();
    if let Some(chol) = info.clone().cholesky() {
        let inv = chol.inverse();
        let se = DVector::from_iterator(d, (0..d).map(|j| inv[(j, j)].max(0.0).sqrt()));
        return Ok((se, true));
    }
    let pinv = info
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Singular(format!("information matrix pseudo-inverse: {e}")))?;
    let se = DVector::from_iterator(d, (0..d).map(|j| pinv[(j, j)].max(0.0).sqrt()));
    Ok((se, false))
}

// ---------------------------------------------------------------------------
// Criteria and tests
// ---------------------------------------------------------------------------

/// `AIC = -2 l + 2 k`, `BIC = -2 l + k ln n`.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let aic = -2.0 * loglik + 2.0 * k as f64;
    let bic = -2.0 * loglik + k as f64 * (n as f64).ln();
    (aic, bic)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of a nested null against an alternative.
pub fn lr_test(null: &FitResult, alt: &FitResult) -> Result<LrTest> {
    if alt.k_params < null.k_params {
        return Err(Error::Config(
            "alternative must have at least as many parameters".into(),
        ));
    }
    let stat = 2.0 * (alt.loglik - null.loglik);
    if stat < -1e-6 {
        return Err(Error::Nesting {
            null: null.loglik,
            alt: alt.loglik,
        });
    }
    let stat = stat.max(0.0);
    let df = alt.k_params - null.k_params;
    if df == 0 {
        return Ok(LrTest {
            statistic: stat,
            df,
            p_value: 1.0,
        });
    }
    let chi = ChiSquared::new(df as f64).expect("positive df");
    Ok(LrTest {
        statistic: stat,
        df,
        p_value: 1.0 - chi.cdf(stat),
    })
}

// ---------------------------------------------------------------------------
// Quantile residuals and envelopes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct QuantileResiduals {
    pub values: Vec<f64>,
    /// Number of units whose cdf value had to be clamped away from 0 or 1.
    pub n_clamped: usize,
}

fn selection_prob(theta: &Theta, kind: ModelKind, wg: f64) -> f64 {
    match kind {
        ModelKind::SLcn => cn_cdf1(wg, 0.0, 1.0, theta.nu1, theta.nu2),
        ModelKind::SLn => norm_cdf(wg),
    }
}

/// Normalized quantile residuals.
///
/// Selected units use the conditional probability integral transform
/// `Phi^{-1}(P(Y1 <= v | Y2 > 0))`, whose joint piece is an exact bivariate
/// rectangle probability under the fitted law; censored units carry the
/// deterministic value `Phi^{-1}(P(Y2 <= 0))`, or a uniform draw over that
/// point mass when a randomization source is supplied.
pub fn quantile_residuals(
    theta: &Theta,
    data: &SelectionData,
    kind: ModelKind,
    mut randomize: Option<&mut dyn RngCore>,
) -> Result<QuantileResiduals> {
    theta.validate(kind)?;
    let sig = theta.sigma_mat();
    let inflated = sig
        / if kind == ModelKind::SLcn {
            theta.nu2
        } else {
            1.0
        };
    let mut values = Vec::with_capacity(data.n());
    let mut n_clamped = 0usize;
    for i in 0..data.n() {
        let xb: f64 = data
            .x()
            .row(i)
            .iter()
            .zip(theta.beta.iter())
            .map(|(a, b)| a * b)
            .sum();
        let wg: f64 = data
            .w()
            .row(i)
            .iter()
            .zip(theta.gamma.iter())
            .map(|(a, b)| a * b)
            .sum();
        let u = if data.selected()[i] {
            let v = data.outcomes()[i].expect("selected unit has outcome");
            let region = TruncRegion::bivariate((f64::NEG_INFINITY, v), (0.0, f64::INFINITY))?;
            let mu = Vector2::new(xb, wg);
            let joint = match kind {
                ModelKind::SLcn => {
                    theta.nu1 * binorm_rect(&region, &mu, &inflated)?
                        + (1.0 - theta.nu1) * binorm_rect(&region, &mu, &sig)?
                }
                ModelKind::SLn => binorm_rect(&region, &mu, &sig)?,
            };
            joint / selection_prob(theta, kind, wg)
        } else {
            let p0 = 1.0 - selection_prob(theta, kind, wg);
            match randomize.as_mut() {
                Some(rng) => rng.gen::<f64>() * p0,
                None => p0,
            }
        };
        let clamped = u.clamp(1e-15, 1.0 - 1e-15);
        if clamped != u {
            n_clamped += 1;
        }
        values.push(norm_quantile(clamped)?);
    }
    Ok(QuantileResiduals { values, n_clamped })
}

/// One row of the envelope table: the `unit` holding the rank-`r` observed
/// residual, its value, the normal plotting position and the simulated band.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopeRow {
    pub unit: usize,
    pub residual: f64,
    pub theoretical_quantile: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

fn simulate_at_theta<R: Rng + ?Sized>(
    theta: &Theta,
    data: &SelectionData,
    kind: ModelKind,
    rng: &mut R,
) -> Result<SelectionData> {
    let n = data.n();
    let s = theta.sigma();
    let rs = theta.rho_star();
    let l11 = s;
    let l21 = rs / s;
    let l22 = (1.0 - l21 * l21).sqrt();
    let mut v1 = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let xb: f64 = data
            .x()
            .row(i)
            .iter()
            .zip(theta.beta.iter())
            .map(|(a, b)| a * b)
            .sum();
        let wg: f64 = data
            .w()
            .row(i)
            .iter()
            .zip(theta.gamma.iter())
            .map(|(a, b)| a * b)
            .sum();
        let scale = match kind {
            ModelKind::SLn => 1.0,
            ModelKind::SLcn => {
                if rng.gen::<f64>() < theta.nu1 {
                    1.0 / theta.nu2.sqrt()
                } else {
                    1.0
                }
            }
        };
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let e1 = scale * l11 * z1;
        let e2 = scale * (l21 * z1 + l22 * z2);
        if wg + e2 > 0.0 {
            c.push(true);
            v1.push(Some(xb + e1));
        } else {
            c.push(false);
            v1.push(None);
        }
    }
    SelectionData::new(data.x().clone(), data.w().clone(), v1, c)
}

/// Parametric-bootstrap envelopes for the normal QQ plot of the residuals:
/// `n_sim` data sets are simulated at the fitted parameters (no refitting),
/// residuals recomputed, and pointwise order-statistic bands taken at the
/// requested coverage level.
pub fn residual_envelope<R: Rng + ?Sized>(
    theta: &Theta,
    data: &SelectionData,
    kind: ModelKind,
    n_sim: usize,
    level: f64,
    rng: &mut R,
) -> Result<Vec<EnvelopeRow>> {
    if n_sim < 19 {
        return Err(Error::Config(
            "need at least 19 envelope simulations".into(),
        ));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Config("envelope level must be in (0, 1]".into()));
    }
    let observed = quantile_residuals(theta, data, kind, None)?.values;
    let n = observed.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| observed[a].total_cmp(&observed[b]));

    let mut sims: Vec<Vec<f64>> = Vec::with_capacity(n_sim);
    for _ in 0..n_sim {
        let simulated = simulate_at_theta(theta, data, kind, rng)?;
        let mut r = quantile_residuals(theta, &simulated, kind, None)?.values;
        r.sort_by(|a, b| a.total_cmp(b));
        sims.push(r);
    }
    let alpha = 1.0 - level;
    let lo_idx = ((alpha / 2.0) * n_sim as f64).floor() as usize;
    let lo_idx = lo_idx.min(n_sim - 1);
    let hi_idx = n_sim - 1 - lo_idx;
    let mut rows = Vec::with_capacity(n);
    let mut column = vec![0.0f64; n_sim];
    for r in 0..n {
        for (s, sim) in sims.iter().enumerate() {
            column[s] = sim[r];
        }
        column.sort_by(|a, b| a.total_cmp(b));
        rows.push(EnvelopeRow {
            unit: order[r],
            residual: observed[order[r]],
            theoretical_quantile: norm_quantile((r as f64 + 0.5) / n as f64)?,
            band_lo: column[lo_idx],
            band_hi: column[hi_idx],
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Detection rule
// ---------------------------------------------------------------------------

/// Detection rule: with `nu1_hat <= 0.5` the inflated component is the
/// minority, so `eps > 0.5` marks an outlier; with `nu1_hat > 0.5` the
/// inflated component is the reference and `eps < 0.5` marks an inlier.
pub fn classify_units(nu1_hat: f64, eps_hat: &[f64]) -> Vec<Classification> {
    eps_hat
        .iter()
        .map(|&e| {
            if nu1_hat <= 0.5 && e > 0.5 {
                Classification::Outlier
            } else if nu1_hat > 0.5 && e < 0.5 {
                Classification::Inlier
            } else {
                Classification::Good
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Orchestrated fit
// ---------------------------------------------------------------------------

/// Fit a model and attach standard errors, information criteria, posterior
/// contamination probabilities and unit classifications.
pub fn fit_model(data: &SelectionData, kind: ModelKind, opts: &EcmOptions) -> Result<FitResult> {
    let (theta, trace) = fit(data, kind, opts)?;
    let ll = *trace.loglik_path.last().expect("nonempty path");
    let k = Theta::n_free(kind, data.p(), data.q());
    let (aic, bic) = information_criteria(ll, k, data.n());
    let info = empirical_information(&theta, data, kind)?;
    let (se_raw, info_pd) = standard_errors_from_information(&info)?;
    let (p, q) = (data.p(), data.q());
    let se_sigma = se_raw[p + q];
    let mut se: Vec<f64> = se_raw.iter().copied().collect();
    // report sigma^2 via the delta method: Var(sigma^2) = (2 sigma)^2 Var(sigma)
    se[p + q] = 2.0 * theta.sigma() * se_sigma;
    let eps_hat = match kind {
        ModelKind::SLcn => trace.final_eps.clone(),
        ModelKind::SLn => vec![0.0; data.n()],
    };
    let classifications = match kind {
        ModelKind::SLcn => classify_units(theta.nu1, &eps_hat),
        ModelKind::SLn => vec![Classification::Good; data.n()],
    };
    Ok(FitResult {
        kind,
        theta,
        se,
        se_sigma,
        info_pd,
        loglik: ll,
        aic,
        bic,
        k_params: k,
        n: data.n(),
        eps_hat,
        classifications,
        trace,
    })
}
