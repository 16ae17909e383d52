//! Closed-form gap objects: the Keller-type function, the corrected auxiliary
//! fields and their gradients, the energy constants, blow-up rates and the
//! predicted orders of the remainder terms.

use std::sync::Arc;

use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

use crate::elasticity::{LameParameters, RigidMotion};
use crate::error::{invalid, Error, Result};
use crate::geometry::GapProfile;

const TIE: f64 = 1e-12;

fn split(profile: &GapProfile, x: &[f64]) -> Result<()> {
    if x.len() != profile.dim {
        return Err(Error::DimensionMismatch(format!(
            "point needs {} coordinates, got {}",
            profile.dim,
            x.len()
        )));
    }
    Ok(())
}

/// `vbar = (x_d - h2(x')) / delta(x')`.
pub fn keller_v(profile: &GapProfile, eps: f64, x: &[f64]) -> Result<f64> {
    split(profile, x)?;
    let d = profile.dim;
    let h2 = profile.h2(&x[..d - 1])?.value;
    Ok((x[d - 1] - h2) / profile.delta(eps, &x[..d - 1])?)
}

/// Gradient of `vbar`.
pub fn keller_grad(profile: &GapProfile, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(GapPoint::new(profile, eps, x)?.grad_v)
}

/// `f(v) = (v - 1/2)^2 / 2 - 1/8` and `f'(v) = v - 1/2`.
pub fn f_profile(v: f64) -> (f64, f64) {
    (0.5 * (v - 0.5) * (v - 0.5) - 0.125, v - 0.5)
}

/// Everything the gap formulas need at one point.
struct GapPoint {
    d: usize,
    grad_delta: Vec<f64>,
    hess_delta: Vec<f64>,
    v: f64,
    grad_v: Vec<f64>,
}

impl GapPoint {
    fn new(profile: &GapProfile, eps: f64, x: &[f64]) -> Result<Self> {
        split(profile, x)?;
        let d = profile.dim;
        let xp = &x[..d - 1];
        let jd = profile.delta_jet(eps, xp)?;
        let j2 = profile.h2(xp)?;
        let delta = jd.value;
        if !(delta > 0.0) {
            return Err(Error::OutsideChart(format!("gap thickness {delta} is not positive")));
        }
        let v = (x[d - 1] - j2.value) / delta;
        let mut grad_v = vec![0.0; d];
        for i in 0..d - 1 {
            grad_v[i] = -j2.grad[i] / delta - v * jd.grad[i] / delta;
        }
        grad_v[d - 1] = 1.0 / delta;
        Ok(Self { d, grad_delta: jd.grad, hess_delta: jd.hess, v, grad_v })
    }

    fn hess(&self, i: usize, j: usize) -> f64 {
        if i == self.d - 1 || j == self.d - 1 {
            0.0
        } else {
            self.hess_delta[i * (self.d - 1) + j]
        }
    }

    fn gdelta(&self, i: usize) -> f64 {
        if i == self.d - 1 { 0.0 } else { self.grad_delta[i] }
    }
}

fn lame_factors(params: &LameParameters) -> (f64, f64) {
    let (l, m) = (params.lambda, params.mu);
    ((l + m) / m, (l + m) / (l + 2.0 * m))
}

/// Value of the correction built from a vector field `w` with gradient `gw`.
fn correction(p: &GapPoint, params: &LameParameters, w: &[f64]) -> Vec<f64> {
    let d = p.d;
    let (k1, k2) = lame_factors(params);
    let (f, _) = f_profile(p.v);
    let mut out = vec![0.0; d];
    for i in 0..d - 1 {
        out[i] = k1 * f * w[d - 1] * p.grad_delta[i];
    }
    let s: f64 = (0..d - 1).map(|i| w[i] * p.grad_delta[i]).sum();
    out[d - 1] = k2 * f * s;
    out
}

/// Gradient of the correction, row = component, column = derivative.
fn correction_grad(p: &GapPoint, params: &LameParameters, w: &[f64], gw: &DMatrix<f64>) -> DMatrix<f64> {
    let d = p.d;
    let (k1, k2) = lame_factors(params);
    let (f, fp) = f_profile(p.v);
    let mut g = DMatrix::zeros(d, d);
    let s: f64 = (0..d - 1).map(|i| w[i] * p.grad_delta[i]).sum();
    for j in 0..d {
        for k in 0..d - 1 {
            g[(k, j)] = k1
                * (fp * p.grad_v[j] * w[d - 1] * p.grad_delta[k]
                    + f * gw[(d - 1, j)] * p.grad_delta[k]
                    + f * w[d - 1] * p.hess(j, k));
        }
        let ds: f64 = (0..d - 1).map(|i| gw[(i, j)] * p.gdelta(i) + w[i] * p.hess(j, i)).sum();
        g[(d - 1, j)] = k2 * (fp * p.grad_v[j] * s + f * ds);
    }
    g
}

fn motion_check(alpha: usize, profile: &GapProfile) -> Result<RigidMotion> {
    let basis = crate::elasticity::rigid_basis(profile.dim)?;
    basis
        .motions
        .get(alpha)
        .copied()
        .ok_or_else(|| invalid(format!("rigid index {} out of range 1..={}", alpha + 1, basis.len())))
}

/// `ubar_1^alpha = psi_alpha vbar + F_alpha` (zero-based `alpha`).
pub fn aux_u1(alpha: usize, profile: &GapProfile, eps: f64, params: &LameParameters, x: &[f64]) -> Result<Vec<f64>> {
    let motion = motion_check(alpha, profile)?;
    let p = GapPoint::new(profile, eps, x)?;
    let psi = motion.eval(x);
    let corr = correction(&p, params, &psi);
    Ok(psi.iter().zip(&corr).map(|(a, c)| a * p.v + c).collect())
}

/// Analytic gradient of [`aux_u1`].
pub fn aux_grad_u1(alpha: usize, profile: &GapProfile, eps: f64, params: &LameParameters, x: &[f64]) -> Result<DMatrix<f64>> {
    let motion = motion_check(alpha, profile)?;
    let p = GapPoint::new(profile, eps, x)?;
    let psi = motion.eval(x);
    let gpsi = motion.gradient(profile.dim);
    let mut g = correction_grad(&p, params, &psi, &gpsi);
    for k in 0..p.d {
        for j in 0..p.d {
            g[(k, j)] += gpsi[(k, j)] * p.v + psi[k] * p.grad_v[j];
        }
    }
    Ok(g)
}

/// `ubar_2^alpha = psi_alpha (1 - vbar) - F_alpha`.
pub fn aux_u2(alpha: usize, profile: &GapProfile, eps: f64, params: &LameParameters, x: &[f64]) -> Result<Vec<f64>> {
    let motion = motion_check(alpha, profile)?;
    let p = GapPoint::new(profile, eps, x)?;
    let psi = motion.eval(x);
    let corr = correction(&p, params, &psi);
    Ok(psi.iter().zip(&corr).map(|(a, c)| a * (1.0 - p.v) - c).collect())
}

/// Gradient of [`aux_u2`].
pub fn aux_grad_u2(alpha: usize, profile: &GapProfile, eps: f64, params: &LameParameters, x: &[f64]) -> Result<DMatrix<f64>> {
    let motion = motion_check(alpha, profile)?;
    Ok(motion.gradient(profile.dim) - aux_grad_u1(alpha, profile, eps, params, x)?)
}

/// Vector field data on one side of the gap: value, gradient and a `C^2` norm bound.
pub trait FieldData: Send + Sync {
    fn value(&self, x: &[f64]) -> Vec<f64>;
    fn gradient(&self, x: &[f64]) -> DMatrix<f64>;
    fn c2_norm(&self) -> f64;
}

/// Affine field `A x + c`; its `C^2` norm is taken over the unit ball of the chart.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
}

impl AffineField {
    pub fn zero(dim: usize) -> Self {
        Self { a: DMatrix::zeros(dim, dim), c: vec![0.0; dim] }
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let d = c.len();
        Self { a: DMatrix::zeros(d, d), c }
    }

    pub fn rigid(motion: RigidMotion, dim: usize) -> Self {
        let (a, c) = motion.affine(dim);
        Self { a, c }
    }
}

impl FieldData for AffineField {
    fn value(&self, x: &[f64]) -> Vec<f64> {
        let d = self.c.len();
        (0..d).map(|i| self.c[i] + (0..d).map(|j| self.a[(i, j)] * x[j]).sum::<f64>()).collect()
    }
    fn gradient(&self, _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }
    fn c2_norm(&self) -> f64 {
        self.c.iter().map(|v| v.abs()).fold(0.0, f64::max) + self.a.amax()
    }
}

/// Field given by closures (value and gradient) with a user-declared `C^2` bound.
#[derive(Clone)]
pub struct ClosureField {
    pub value: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub gradient: Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
    pub c2: f64,
}

impl FieldData for ClosureField {
    fn value(&self, x: &[f64]) -> Vec<f64> {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> DMatrix<f64> {
        (self.gradient)(x)
    }
    fn c2_norm(&self) -> f64 {
        self.c2
    }
}

/// `psi vbar + phi (1 - vbar) + correction(psi - phi)`: the field interpolating `psi`
/// on the upper and `phi` on the lower gap boundary.
pub fn general_aux_v(
    psi: &dyn FieldData,
    phi: &dyn FieldData,
    profile: &GapProfile,
    eps: f64,
    params: &LameParameters,
    x: &[f64],
) -> Result<Vec<f64>> {
    let p = GapPoint::new(profile, eps, x)?;
    let a = psi.value(x);
    let b = phi.value(x);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
    let corr = correction(&p, params, &diff);
    Ok((0..p.d).map(|k| a[k] * p.v + b[k] * (1.0 - p.v) + corr[k]).collect())
}

/// Gradient of [`general_aux_v`].
pub fn general_aux_grad_v(
    psi: &dyn FieldData,
    phi: &dyn FieldData,
    profile: &GapProfile,
    eps: f64,
    params: &LameParameters,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let p = GapPoint::new(profile, eps, x)?;
    let a = psi.value(x);
    let b = phi.value(x);
    let ga = psi.gradient(x);
    let gb = phi.gradient(x);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
    let mut g = correction_grad(&p, params, &diff, &(&ga - &gb));
    for k in 0..p.d {
        for j in 0..p.d {
            g[(k, j)] += ga[(k, j)] * p.v + gb[(k, j)] * (1.0 - p.v) + diff[k] * p.grad_v[j];
        }
    }
    Ok(g)
}

/// Residual size `|psi - phi| delta^{(m-2)/m} + delta (|psi|_{C2} + |phi|_{C2}) + |grad_{x'}(psi - phi)|`,
/// evaluated on the mid-gap point above `x'`.
pub fn residual_scale(psi: &dyn FieldData, phi: &dyn FieldData, profile: &GapProfile, eps: f64, xp: &[f64]) -> Result<f64> {
    let d = profile.dim;
    let delta = profile.delta(eps, xp)?;
    let mid = 0.5 * (eps + profile.h1(xp)?.value + profile.h2(xp)?.value);
    let mut x = xp.to_vec();
    x.push(mid);
    let diff: Vec<f64> = psi.value(&x).iter().zip(phi.value(&x)).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gd = psi.gradient(&x) - phi.gradient(&x);
    let tangential = (0..d).flat_map(|k| (0..d - 1).map(move |j| (k, j))).map(|(k, j)| gd[(k, j)].powi(2)).sum::<f64>().sqrt();
    Ok(norm * delta.powf((profile.m - 2.0) / profile.m) + delta * (psi.c2_norm() + phi.c2_norm()) + tangential)
}

/// Blow-up rate index `rho_i(d, m; eps)` for `i in {0, 2}`.
pub fn rho(i: usize, d: usize, m: f64, eps: f64) -> Result<f64> {
    if i != 0 && i != 2 {
        return Err(invalid(format!("rate index must be 0 or 2, got {i}")));
    }
    check_eps(eps)?;
    let k = (d + i) as f64 - 1.0;
    Ok(if (m - k).abs() < TIE {
        eps.ln().abs()
    } else if m > k {
        eps.powf(k / m - 1.0)
    } else {
        1.0
    })
}

/// Logarithmic helper used by the energy estimates: `|ln eps|` in 2D, `1` otherwise.
pub fn rho_d(d: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(if d == 2 { eps.ln().abs() } else { 1.0 })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// Families of predicted remainder orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemainderKind {
    /// Coefficient remainder for translations when `m >= d+1`.
    Eps0,
    /// Coefficient remainder for rotations when `m >= d+1`.
    Eps2,
    /// Translation remainder when `d-1 <= m < d+1`.
    EpsBar0,
    /// Rotation remainder when `d-1 <= m < d+1`.
    EpsBar2,
    /// Energy remainder of the translation diagonal.
    EpsHat0,
    /// Energy remainder of the rotation diagonal.
    EpsHat2,
    /// Remainder when `m < d-1`.
    Low,
}

fn eq(a: f64, b: f64) -> bool {
    (a - b).abs() < TIE
}

fn out_of_domain(kind: RemainderKind, d: usize, m: f64, sigma: f64) -> Error {
    Error::Regime(format!("{kind:?} is not defined for d={d}, m={m}, sigma={sigma}"))
}

/// Exact piecewise remainder order for the given family.
pub fn remainder_order(kind: RemainderKind, d: usize, m: f64, sigma: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let df = d as f64;
    let ln = eps.ln().abs();
    let p = |e: f64| eps.powf(e);
    let bad = || out_of_domain(kind, d, m, sigma);
    use RemainderKind::*;
    match kind {
        Eps0 => {
            if eq(m, df + 1.0) {
                Ok(1.0 / ln)
            } else if m > df - 1.0 + sigma + TIE && sigma >= 2.0 - TIE {
                Ok(p((0.25f64).min(sigma / m).min((m - df - 1.0) / m)))
            } else if m > df + 1.0 && m <= df - 1.0 + sigma + TIE && sigma > 2.0 {
                Ok(p((0.25f64).min((m - df - 1.0) / m)))
            } else {
                Err(bad())
            }
        }
        Eps2 => {
            if eq(m, df + 1.0) {
                Ok(1.0 / ln)
            } else if eq(m, df + 1.0 + sigma) {
                Ok(p(0.25).max(p(sigma / m) * ln))
            } else if m > df + 1.0 + sigma {
                Ok(p((0.25f64).min(sigma / m)))
            } else if m > df + 1.0 {
                Ok(p((0.25f64).min((m - df - 1.0) / m)))
            } else {
                Err(bad())
            }
        }
        EpsBar0 => {
            let tail = (df + 1.0 - m) / (12.0 * m);
            if eq(m, df - 1.0) {
                Ok(1.0 / ln)
            } else if !(m > df - 1.0 && m < df + 1.0 - TIE) {
                Err(bad())
            } else if eq(m, df - 1.0 + sigma) && sigma < 2.0 {
                Ok((p(sigma / m) * ln).max(p(tail)))
            } else if m > df - 1.0 + sigma && sigma < 2.0 {
                Ok(p((sigma / m).min(tail)))
            } else if m < df - 1.0 + sigma && sigma <= 2.0 + TIE {
                Ok(p(((m - df + 1.0) / m).min(tail)))
            } else {
                Err(bad())
            }
        }
        EpsBar2 => {
            if eq(m, df - 1.0) {
                Ok(1.0 / ln)
            } else if m > df - 1.0 && m < df + 1.0 - TIE {
                Ok(p(((m - df + 1.0) / m).min((df + 1.0 - m) / (12.0 * m))))
            } else {
                Err(bad())
            }
        }
        EpsHat0 | EpsHat2 => {
            let k = df + if kind == EpsHat0 { 0.0 } else { 2.0 } - 1.0;
            Ok(if eq(m, k + sigma) {
                p(sigma / m) * ln
            } else if m > k + sigma {
                p(sigma / m)
            } else if eq(m, k) {
                1.0 / ln
            } else if m > k {
                p(1.0 - k / m)
            } else {
                p((1.0 / 6.0f64).min((k - m) / (12.0 * m)))
            })
        }
        Low => {
            if m < df - 1.0 - TIE {
                Ok(p((1.0 / 6.0f64).min((df - 1.0 - m) / (12.0 * m))))
            } else {
                Err(bad())
            }
        }
    }
}

/// `Gamma[s]`: `Gamma(1 - s) Gamma(s)` below criticality, `1` at criticality.
pub fn gamma_bracket(s: f64) -> Result<f64> {
    if eq(s, 1.0) {
        Ok(1.0)
    } else if s > 0.0 && s < 1.0 {
        Ok(gamma(1.0 - s) * gamma(s))
    } else {
        Err(invalid(format!("Gamma bracket needs s in (0, 1], got {s}")))
    }
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// Energy constants and Lamé factors of the leading diagonal terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsBundle {
    pub d: usize,
    pub m: f64,
    pub tau: f64,
    /// Translation constant, `None` when `m < d-1`.
    pub m0: Option<f64>,
    /// Rotation constant, `None` when `m < d+1`.
    pub m2: Option<f64>,
    pub lame: Vec<f64>,
    pub omega: f64,
    pub gamma0: Option<f64>,
    pub gamma2: Option<f64>,
}

impl ConstantsBundle {
    pub fn m0(&self) -> Result<f64> {
        self.m0.ok_or_else(|| Error::Regime(format!("M0 undefined for m={} < d-1={}", self.m, self.d - 1)))
    }
    pub fn m2(&self) -> Result<f64> {
        self.m2.ok_or_else(|| Error::Regime(format!("M2 undefined for m={} < d+1={}", self.m, self.d + 1)))
    }
}

/// Lamé factors: `(mu, lambda+2mu, lambda+2mu)` in 2D; `mu` (d-1 times),
/// `lambda+2mu` (d times), `2mu` for the remaining rotations otherwise.
pub fn lame_constants(d: usize, params: &LameParameters) -> Vec<f64> {
    let (l, m) = (params.lambda, params.mu);
    let n = crate::elasticity::rigid_count(d);
    if d == 2 {
        return vec![m, l + 2.0 * m, l + 2.0 * m];
    }
    (0..n)
        .map(|a| if a < d - 1 { m } else if a < 2 * d - 1 { l + 2.0 * m } else { 2.0 * m })
        .collect()
}

pub fn constants(d: usize, m: f64, tau: f64, params: &LameParameters) -> Result<ConstantsBundle> {
    if d < 2 || !(tau > 0.0) || !(m > 0.0) {
        return Err(invalid("constants need d >= 2, m > 0, tau > 0"));
    }
    let df = d as f64;
    let omega = unit_ball_volume(d - 1);
    let gamma0 = if m >= df - 1.0 - TIE { Some(gamma_bracket((df - 1.0) / m)?) } else { None };
    let gamma2 = if m >= df + 1.0 - TIE { Some(gamma_bracket((df + 1.0) / m)?) } else { None };
    let m0 = gamma0.map(|g| (df - 1.0) * omega * g / (m * tau.powf((df - 1.0) / m)));
    let m2 = gamma2.map(|g| omega * g / (m * tau.powf((df + 1.0) / m)));
    Ok(ConstantsBundle { d, m, tau, m0, m2, lame: lame_constants(d, params), omega, gamma0, gamma2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::curvilinear_square_profile;

    #[test]
    fn f_values() {
        assert_eq!(f_profile(0.0).0, 0.0);
        assert_eq!(f_profile(1.0).0, 0.0);
        assert_eq!(f_profile(0.5).0, -0.125);
        assert!((f_profile(0.75).0 + 0.09375).abs() < 1e-16);
    }

    #[test]
    fn constants_examples() {
        let p = LameParameters::new(1.0, 1.0, 2).unwrap();
        let c = constants(2, 2.0, 1.0, &p).unwrap();
        assert!((c.m0.unwrap() - std::f64::consts::PI).abs() < 1e-12);
        assert!(c.m2.is_none());
        let c3 = constants(2, 3.0, 1.0, &p).unwrap();
        assert!((c3.m2.unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(c.lame, vec![1.0, 3.0, 3.0]);
        assert_eq!(lame_constants(3, &p), vec![1.0, 1.0, 3.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn rho_branches() {
        assert!((rho(0, 2, 2.0, 1e-4).unwrap() - 100.0).abs() < 1e-9);
        assert!((rho(0, 3, 2.0, 1e-4).unwrap() - 1e-4f64.ln().abs()).abs() < 1e-12);
        assert!((rho(2, 2, 4.0, 1e-4).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(rho(2, 2, 2.0, 1e-4).unwrap(), 1.0);
        assert!(rho(1, 2, 2.0, 0.1).is_err());
        assert!(rho(0, 2, 2.0, 1.5).is_err());
    }

    #[test]
    fn mid_gap_keller() {
        let prof = curvilinear_square_profile(1.0, 1.0, 2.0).unwrap();
        let eps = 0.01;
        let x1 = 0.2;
        let h1 = prof.h1(&[x1]).unwrap().value;
        let h2 = prof.h2(&[x1]).unwrap().value;
        let v = keller_v(&prof, eps, &[x1, 0.5 * (eps + h1 + h2)]).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        assert!((keller_v(&prof, eps, &[x1, eps + h1]).unwrap() - 1.0).abs() < 1e-14);
    }
}
