//! First and second moments of truncated normal and truncated
//! contaminated-normal distributions.
//!
//! Univariate moments use the classical Mills-ratio identities. Bivariate
//! moments come in two routes: an exact conditional-decomposition path for
//! half-plane regions (the only shape the ECM E-step needs) and the
//! first/second-moment boundary recurrences for general rectangles. TCN
//! moments weight the component truncated-normal moments by the posterior
//! contamination masses.

use crate::dist::{
    binorm_rect, mills_upper, norm_cdf, norm_ln_cdf, std_norm_pdf, CnParams, TruncRegion,
    LN_SQRT_2PI,
};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

const LN_MASS_FLOOR: f64 = -690.7755278982137; // ln(1e-300)

/// Zeroth, first and second moments of a truncated distribution:
/// `m0` is the region mass, `m1 = E[W]`, `m2 = E[W W^T]`.
#[derive(Debug, Clone)]
pub struct TruncMoments {
    pub m0: f64,
    pub m1: DVector<f64>,
    pub m2: DMatrix<f64>,
}

// ---------------------------------------------------------------------------
// Univariate truncated normal
// ---------------------------------------------------------------------------

/// Standardized truncated-normal moments on `[al, be]`: returns
/// `(mass, E[T], E[T^2])` for `T ~ N(0,1)` restricted to the interval.
fn std_tn_interval(al: f64, be: f64) -> Result<(f64, f64, f64)> {
    let lower_open = al == f64::NEG_INFINITY;
    let upper_open = be == f64::INFINITY;
    if lower_open && upper_open {
        return Ok((1.0, 0.0, 1.0));
    }
    if lower_open {
        let r = mills_upper(-be); // phi(be)/Phi(be)
        let mass = norm_cdf(be);
        check_mass_ln(norm_ln_cdf(be))?;
        return Ok((mass, -r, 1.0 - be * r));
    }
    if upper_open {
        let r = mills_upper(al);
        let mass = norm_cdf(-al);
        check_mass_ln(norm_ln_cdf(-al))?;
        return Ok((mass, r, 1.0 + al * r));
    }
    // both bounds finite; evaluate the mass on the side that avoids cancellation
    let mass = if al > 0.0 {
        norm_cdf(-al) - norm_cdf(-be)
    } else {
        norm_cdf(be) - norm_cdf(al)
    };
    if !(mass > 1e-300) {
        return Err(Error::ZeroMass { unit: None });
    }
    let (pa, pb) = (std_norm_pdf(al), std_norm_pdf(be));
    let et = (pa - pb) / mass;
    let et2 = 1.0 + (al * pa - be * pb) / mass;
    Ok((mass, et, et2))
}

fn check_mass_ln(ln_mass: f64) -> Result<()> {
    if ln_mass < LN_MASS_FLOOR {
        Err(Error::ZeroMass { unit: None })
    } else {
        Ok(())
    }
}

/// `(E[W], E[W^2])` for `W ~ N(mu, var)` truncated to `[lo, +inf)`.
pub(crate) fn tn1_lower_scalar(mu: f64, var: f64, lo: f64) -> (f64, f64) {
    let sd = var.sqrt();
    let al = (lo - mu) / sd;
    let r = mills_upper(al);
    let et = r;
    let et2 = 1.0 + al * r;
    (mu + sd * et, mu * mu + 2.0 * mu * sd * et + var * et2)
}

/// `(E[W], E[W^2])` for `W ~ N(mu, var)` truncated to `(-inf, hi]`.
pub(crate) fn tn1_upper_scalar(mu: f64, var: f64, hi: f64) -> (f64, f64) {
    let sd = var.sqrt();
    let be = (hi - mu) / sd;
    let r = mills_upper(-be);
    let et = -r;
    let et2 = 1.0 - be * r;
    (mu + sd * et, mu * mu + 2.0 * mu * sd * et + var * et2)
}

/// Exact truncated-normal mean and second moment on an interval.
pub fn tn_moments_1d(mu: f64, sigma2: f64, region: &TruncRegion) -> Result<TruncMoments> {
    if region.dim() != 1 {
        return Err(Error::Dimension(
            "tn_moments_1d needs a univariate region".into(),
        ));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "tn_moments_1d requires sigma2 > 0, got {sigma2}"
        )));
    }
    let sd = sigma2.sqrt();
    let std = |v: f64| if v.is_infinite() { v } else { (v - mu) / sd };
    let (mass, et, et2) = std_tn_interval(std(region.lower()[0]), std(region.upper()[0]))?;
    let m1 = mu + sd * et;
    let m2 = mu * mu + 2.0 * mu * sd * et + sigma2 * et2;
    Ok(TruncMoments {
        m0: mass,
        m1: DVector::from_vec(vec![m1]),
        m2: DMatrix::from_vec(1, 1, vec![m2]),
    })
}

// ---------------------------------------------------------------------------
// Bivariate truncated normal
// ---------------------------------------------------------------------------

/// Moments for the half-plane `{w2 <= hi}` via the Gaussian regression of the
/// first coordinate on the truncated second. Scalar fast path: returns
/// `(E[W1], E[W2], E[W1^2], E[W1 W2], E[W2^2])`.
pub(crate) fn halfplane_upper2_scalar(
    mu1: f64,
    mu2: f64,
    s11: f64,
    s12: f64,
    s22: f64,
    hi: f64,
) -> (f64, f64, f64, f64, f64) {
    let (e2, e2sq) = tn1_upper_scalar(mu2, s22, hi);
    let c = s12 / s22;
    let resid = s11 - s12 * s12 / s22;
    let e1 = mu1 + c * (e2 - mu2);
    let e12 = mu1 * e2 + c * (e2sq - mu2 * e2);
    let central2 = e2sq - 2.0 * mu2 * e2 + mu2 * mu2;
    let e11 = resid + mu1 * mu1 + 2.0 * mu1 * c * (e2 - mu2) + c * c * central2;
    (e1, e2, e11, e12, e2sq)
}

fn halfplane_moments(
    mu: &Vector2<f64>,
    sigma: &Matrix2<f64>,
    free: usize,
    lo: f64,
    hi: f64,
) -> Result<TruncMoments> {
    // reorder so the truncated coordinate is index 1
    let (i_f, i_t) = (free, 1 - free);
    let (m_f, m_t) = (mu[i_f], mu[i_t]);
    let (s_ff, s_ft, s_tt) = (sigma[(i_f, i_f)], sigma[(i_f, i_t)], sigma[(i_t, i_t)]);
    let t = tn_moments_1d(m_t, s_tt, &TruncRegion::univariate(lo, hi)?)?;
    let (e2, e2sq, mass) = (t.m1[0], t.m2[(0, 0)], t.m0);
    let c = s_ft / s_tt;
    let resid = s_ff - s_ft * s_ft / s_tt;
    let e1 = m_f + c * (e2 - m_t);
    let e12 = m_f * e2 + c * (e2sq - m_t * e2);
    let central2 = e2sq - 2.0 * m_t * e2 + m_t * m_t;
    let e11 = resid + m_f * m_f + 2.0 * m_f * c * (e2 - m_t) + c * c * central2;
    let mut m1 = DVector::zeros(2);
    m1[i_f] = e1;
    m1[i_t] = e2;
    let mut m2 = DMatrix::zeros(2, 2);
    m2[(i_f, i_f)] = e11;
    m2[(i_t, i_t)] = e2sq;
    m2[(i_f, i_t)] = e12;
    m2[(i_t, i_f)] = e12;
    Ok(TruncMoments { m0: mass, m1, m2 })
}

/// Bivariate density of `N2(0, sigma)` at `(x, y)`.
fn centered_bvn_pdf(x: f64, y: f64, sigma: &Matrix2<f64>) -> f64 {
    if x.is_infinite() || y.is_infinite() {
        return 0.0;
    }
    let det = sigma[(0, 0)] * sigma[(1, 1)] - sigma[(0, 1)] * sigma[(1, 0)];
    let quad = (sigma[(1, 1)] * x * x - 2.0 * sigma[(0, 1)] * x * y + sigma[(0, 0)] * y * y) / det;
    (-0.5 * quad - 0.5 * det.ln() - 2.0 * LN_SQRT_2PI).exp()
}

/// Boundary function `F_k(x)`: marginal density of coordinate `k` at `x`
/// times the conditional interval probability of the other coordinate.
fn boundary_fk(k: usize, x: f64, lo: &[f64], hi: &[f64], sigma: &Matrix2<f64>) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let j = 1 - k;
    let skk = sigma[(k, k)];
    let c = sigma[(j, k)] / skk;
    let sj = (sigma[(j, j)] - sigma[(j, k)] * sigma[(j, k)] / skk).sqrt();
    let dens = std_norm_pdf(x / skk.sqrt()) / skk.sqrt();
    let at = |v: f64| {
        if v == f64::NEG_INFINITY {
            0.0
        } else if v == f64::INFINITY {
            1.0
        } else {
            norm_cdf((v - c * x) / sj)
        }
    };
    dens * (at(hi[j]) - at(lo[j]))
}

/// General-rectangle bivariate truncated-normal moments via the boundary
/// recurrences. Exposed separately so tests can compare it with the
/// half-plane decomposition route.
pub(crate) fn tn_moments_2d_recurrence(
    mu: &Vector2<f64>,
    sigma: &Matrix2<f64>,
    region: &TruncRegion,
) -> Result<TruncMoments> {
    let center = |v: f64, m: f64| if v.is_infinite() { v } else { v - m };
    let lo = [
        center(region.lower()[0], mu[0]),
        center(region.lower()[1], mu[1]),
    ];
    let hi = [
        center(region.upper()[0], mu[0]),
        center(region.upper()[1], mu[1]),
    ];
    let centered_region = TruncRegion::bivariate((lo[0], hi[0]), (lo[1], hi[1]))?;
    let alpha = binorm_rect(&centered_region, &Vector2::zeros(), sigma)?;
    if !(alpha > 1e-300) {
        return Err(Error::ZeroMass { unit: None });
    }
    let fk = [
        (
            boundary_fk(0, lo[0], &lo, &hi, sigma),
            boundary_fk(0, hi[0], &lo, &hi, sigma),
        ),
        (
            boundary_fk(1, lo[1], &lo, &hi, sigma),
            boundary_fk(1, hi[1], &lo, &hi, sigma),
        ),
    ];
    // first moments of the centered law
    let mut ey = [0.0f64; 2];
    for i in 0..2 {
        for k in 0..2 {
            ey[i] += sigma[(i, k)] * (fk[k].0 - fk[k].1);
        }
        ey[i] /= alpha;
    }
    // corner terms: F_{kq} at the four corners with the sign pattern
    // (a_k,a_q) - (a_k,b_q) - (b_k,a_q) + (b_k,b_q)
    let corner = |xk: f64, xq: f64, k: usize| -> f64 {
        // density of (Y_k, Y_q) at the corner; for p=2 the pair is (Y_0,Y_1)
        if k == 0 {
            centered_bvn_pdf(xk, xq, sigma)
        } else {
            centered_bvn_pdf(xq, xk, sigma)
        }
    };
    let weighted_bound = |v: f64, f: f64| if v.is_infinite() { 0.0 } else { v * f };
    let mut m2 = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = alpha * sigma[(i, j)];
            for k in 0..2 {
                let skk = sigma[(k, k)];
                let mut inner = sigma[(j, k)] / skk
                    * (weighted_bound(lo[k], fk[k].0) - weighted_bound(hi[k], fk[k].1));
                let q = 1 - k;
                let coef = sigma[(j, q)] - sigma[(k, q)] * sigma[(j, k)] / skk;
                let corners =
                    corner(lo[k], lo[q], k) - corner(lo[k], hi[q], k) - corner(hi[k], lo[q], k)
                        + corner(hi[k], hi[q], k);
                inner += coef * corners;
                acc += sigma[(i, k)] * inner;
            }
            m2[(i, j)] = acc / alpha;
        }
    }
    // shift back to the original location
    let m1 = Vector2::new(ey[0] + mu[0], ey[1] + mu[1]);
    let mut m2s = DMatrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            m2s[(i, j)] = m2[(i, j)] + mu[i] * ey[j] + mu[j] * ey[i] + mu[i] * mu[j];
        }
    }
    Ok(TruncMoments {
        m0: alpha,
        m1: DVector::from_column_slice(m1.as_slice()),
        m2: m2s,
    })
}

/// `E[W]` and `E[W W^T]` for a bivariate truncated normal.
///
/// Half-plane regions (one coordinate unbounded on both sides) take the exact
/// conditional-decomposition path; general rectangles use the boundary
/// recurrences.
pub fn tn_moments_2d(
    mu: &Vector2<f64>,
    sigma: &Matrix2<f64>,
    region: &TruncRegion,
) -> Result<TruncMoments> {
    if region.dim() != 2 {
        return Err(Error::Dimension(
            "tn_moments_2d needs a bivariate region".into(),
        ));
    }
    let det = sigma[(0, 0)] * sigma[(1, 1)] - sigma[(0, 1)] * sigma[(1, 0)];
    if !(sigma[(0, 0)] > 0.0 && det > 0.0) {
        return Err(Error::Singular("sigma must be positive definite".into()));
    }
    if region.coord_free(0) && region.coord_free(1) {
        let m1 = DVector::from_column_slice(mu.as_slice());
        let mut m2 = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                m2[(i, j)] = sigma[(i, j)] + mu[i] * mu[j];
            }
        }
        return Ok(TruncMoments { m0: 1.0, m1, m2 });
    }
    if region.coord_free(0) {
        return halfplane_moments(mu, sigma, 0, region.lower()[1], region.upper()[1]);
    }
    if region.coord_free(1) {
        return halfplane_moments(mu, sigma, 1, region.lower()[0], region.upper()[0]);
    }
    tn_moments_2d_recurrence(mu, sigma, region)
}

// ---------------------------------------------------------------------------
// Truncated contaminated normal: posterior-weighted moments
// ---------------------------------------------------------------------------

/// Moment bundle of a truncated CN vector `Y`:
/// plain moments `E[Y^(k)]`, posterior-weighted moments
/// `E[P_{nu2} Y^(k)]`, and `E[(nu2 P_{nu2} + P_1) Y^(k)]` for k = 0, 1, 2.
#[derive(Debug, Clone)]
pub struct TcnMoments {
    /// `F^CN(region)`, the mixture mass of the truncation region.
    pub mass: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    pub p_mass: f64,
    pub p_mean: DVector<f64>,
    pub p_second: DMatrix<f64>,
    pub u_mass: f64,
    pub u_mean: DVector<f64>,
    pub u_second: DMatrix<f64>,
}

fn component_masses(p: &CnParams, region: &TruncRegion) -> Result<(f64, f64)> {
    match p.dim() {
        1 => {
            let inflated = CnParamsView {
                mu: p.mu()[0],
                var: p.sigma()[(0, 0)],
            };
            let lo = region.lower()[0];
            let hi = region.upper()[0];
            let mass = |var: f64| {
                let sd = var.sqrt();
                let at = |v: f64| {
                    if v == f64::NEG_INFINITY {
                        0.0
                    } else if v == f64::INFINITY {
                        1.0
                    } else {
                        norm_cdf((v - inflated.mu) / sd)
                    }
                };
                (at(hi) - at(lo)).max(0.0)
            };
            Ok((mass(inflated.var / p.nu2()), mass(inflated.var)))
        }
        _ => {
            let mu = Vector2::new(p.mu()[0], p.mu()[1]);
            let sig = Matrix2::new(
                p.sigma()[(0, 0)],
                p.sigma()[(0, 1)],
                p.sigma()[(1, 0)],
                p.sigma()[(1, 1)],
            );
            let inflated = sig / p.nu2();
            Ok((
                binorm_rect(region, &mu, &inflated)?,
                binorm_rect(region, &mu, &sig)?,
            ))
        }
    }
}

struct CnParamsView {
    mu: f64,
    var: f64,
}

fn tn_component(p: &CnParams, region: &TruncRegion, inflate: bool) -> Result<TruncMoments> {
    let scale = if inflate { 1.0 / p.nu2() } else { 1.0 };
    match p.dim() {
        1 => tn_moments_1d(p.mu()[0], p.sigma()[(0, 0)] * scale, region),
        _ => {
            let mu = Vector2::new(p.mu()[0], p.mu()[1]);
            let sig = Matrix2::new(
                p.sigma()[(0, 0)] * scale,
                p.sigma()[(0, 1)] * scale,
                p.sigma()[(1, 0)] * scale,
                p.sigma()[(1, 1)] * scale,
            );
            tn_moments_2d(&mu, &sig, region)
        }
    }
}

/// Weighted moments of a truncated CN on `region`: the plain, posterior-
/// weighted and scale-weighted blocks the ECM E-step consumes.
pub fn tcn_moments(p: &CnParams, region: &TruncRegion) -> Result<TcnMoments> {
    if region.dim() != p.dim() {
        return Err(Error::Dimension(
            "region dimension does not match parameters".into(),
        ));
    }
    let (mass_nu, mass_1) = component_masses(p, region)?;
    let total = p.nu1() * mass_nu + (1.0 - p.nu1()) * mass_1;
    if !(total > 1e-300) {
        return Err(Error::ZeroMass { unit: None });
    }
    let d = p.dim();
    let zero_vec = || DVector::zeros(d);
    let zero_mat = || DMatrix::zeros(d, d);
    let (w_nu_m1, w_nu_m2) = if p.nu1() * mass_nu > 1e-300 {
        let w = tn_component(p, region, true)?;
        (w.m1, w.m2)
    } else {
        (zero_vec(), zero_mat())
    };
    let (w_1_m1, w_1_m2) = if (1.0 - p.nu1()) * mass_1 > 1e-300 {
        let w = tn_component(p, region, false)?;
        (w.m1, w.m2)
    } else {
        (zero_vec(), zero_mat())
    };

    let wa = p.nu1() * mass_nu / total;
    let wb = (1.0 - p.nu1()) * mass_1 / total;
    let mean = &w_nu_m1 * wa + &w_1_m1 * wb;
    let second = &w_nu_m2 * wa + &w_1_m2 * wb;

    let p_mass = wa;
    let p_mean = &w_nu_m1 * wa;
    let p_second = &w_nu_m2 * wa;

    let nu2 = p.nu2();
    let c1 = (1.0 - p.nu1()) * (1.0 - nu2) * mass_1 / total;
    let u_mass = nu2 + c1;
    let u_mean = &mean * nu2 + &w_1_m1 * c1;
    let u_second = &second * nu2 + &w_1_m2 * c1;

    Ok(TcnMoments {
        mass: total,
        mean,
        second,
        p_mass,
        p_mean,
        p_second,
        u_mass,
        u_mean,
        u_second,
    })
}

/// Conditional weighted moments: `Y = (Y1, Y2)` bivariate CN, `Y1 = x1`
/// observed, `Y2` restricted to `region2`. All moments are scalars.
#[derive(Debug, Clone, Copy)]
pub struct TcnConditionalMoments {
    /// `a_{nu2} + a_1`, the conditional region mass under the mixture.
    pub mass: f64,
    pub p_mass: f64,
    pub p_mean: f64,
    pub p_second: f64,
    pub mean: f64,
    pub second: f64,
    pub u_mass: f64,
    pub u_mean: f64,
    pub u_second: f64,
}

pub fn tcn_conditional_moments(
    p: &CnParams,
    x1: f64,
    region2: &TruncRegion,
) -> Result<TcnConditionalMoments> {
    if p.dim() != 2 {
        return Err(Error::Dimension(
            "tcn_conditional_moments needs bivariate parameters".into(),
        ));
    }
    if region2.dim() != 1 {
        return Err(Error::Dimension(
            "conditional region must be univariate".into(),
        ));
    }
    let cond = crate::dist::cn_conditional(x1, p)?;
    let (mu21, s221, omega, nu2) = (cond.mu()[0], cond.sigma()[(0, 0)], cond.nu1(), cond.nu2());
    let (lo, hi) = (region2.lower()[0], region2.upper()[0]);
    let interval_mass = |var: f64| {
        let sd = var.sqrt();
        let at = |v: f64| {
            if v == f64::NEG_INFINITY {
                0.0
            } else if v == f64::INFINITY {
                1.0
            } else {
                norm_cdf((v - mu21) / sd)
            }
        };
        (at(hi) - at(lo)).max(0.0)
    };
    let a_nu = omega * interval_mass(s221 / nu2);
    let a_1 = (1.0 - omega) * interval_mass(s221);
    let mass = a_nu + a_1;
    if !(mass > 1e-300) {
        return Err(Error::ZeroMass { unit: None });
    }
    let (w1_m, w1_m2) = if a_nu > 1e-300 {
        let t = tn_moments_1d(mu21, s221 / nu2, region2)?;
        (t.m1[0], t.m2[(0, 0)])
    } else {
        (0.0, 0.0)
    };
    let (w2_m, w2_m2) = if a_1 > 1e-300 {
        let t = tn_moments_1d(mu21, s221, region2)?;
        (t.m1[0], t.m2[(0, 0)])
    } else {
        (0.0, 0.0)
    };
    let p_mass = a_nu / mass;
    Ok(TcnConditionalMoments {
        mass,
        p_mass,
        p_mean: p_mass * w1_m,
        p_second: p_mass * w1_m2,
        mean: (a_nu * w1_m + a_1 * w2_m) / mass,
        second: (a_nu * w1_m2 + a_1 * w2_m2) / mass,
        u_mass: (nu2 * a_nu + a_1) / mass,
        u_mean: (nu2 * a_nu * w1_m + a_1 * w2_m) / mass,
        u_second: (nu2 * a_nu * w1_m2 + a_1 * w2_m2) / mass,
    })
}

/// Component and mixture masses of the region, exposed for consistency tests.
pub fn tcn_mass_split(p: &CnParams, region: &TruncRegion) -> Result<(f64, f64, f64)> {
    let (mass_nu, mass_1) = component_masses(p, region)?;
    let total = p.nu1() * mass_nu + (1.0 - p.nu1()) * mass_1;
    Ok((mass_nu, mass_1, total))
}
