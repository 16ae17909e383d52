//! Gap profiles, inclusion shapes and the domain description used for meshing.
//!
//! A profile describes the narrow region between the inclusions as a pair of graphs
//! `x_d = eps + h1(x')` (upper boundary) and `x_d = h2(x')` (lower boundary) over a
//! chart `|x'| <= 2R`. Shipped profiles are radial in `|x'|`; anything else can be
//! supplied through [`CustomSurface`].

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Value, gradient and row-major Hessian of a scalar function of `x'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// A graph `x_d = h(x')` with analytic first and second derivatives.
pub trait Surface: Send + Sync + fmt::Debug {
    fn jet(&self, xp: &[f64]) -> Jet;
}

/// Builds the jet of `h(x') = g(|x'|)` from the radial derivatives `g, g', g''`.
fn radial_jet(xp: &[f64], g: f64, g1: f64, g2: f64) -> Jet {
    let n = xp.len();
    let rho = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    if rho == 0.0 {
        for i in 0..n {
            hess[i * n + i] = g2;
        }
        return Jet { value: g, grad, hess };
    }
    for i in 0..n {
        grad[i] = g1 * xp[i] / rho;
        for j in 0..n {
            let pp = xp[i] * xp[j] / (rho * rho);
            let id = if i == j { 1.0 } else { 0.0 };
            hess[i * n + j] = g2 * pp + g1 / rho * (id - pp);
        }
    }
    Jet { value: g, grad, hess }
}

/// `h(x') = coeff * |x'|^m`.
#[derive(Debug, Clone, Copy)]
pub struct PowerSurface {
    pub coeff: f64,
    pub m: f64,
}

impl Surface for PowerSurface {
    fn jet(&self, xp: &[f64]) -> Jet {
        let rho = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (c, m) = (self.coeff, self.m);
        let g = c * rho.powf(m);
        let g1 = c * m * rho.powf(m - 1.0);
        let g2 = if rho == 0.0 {
            if (m - 2.0).abs() < 1e-14 { 2.0 * c } else { 0.0 }
        } else {
            c * m * (m - 1.0) * rho.powf(m - 2.0)
        };
        radial_jet(xp, g, g1, g2)
    }
}

/// `h(x') = sign * (r - (r^m - |x'|^m)^{1/m})`: the cap of a curvilinear square.
#[derive(Debug, Clone, Copy)]
pub struct SuperellipseCap {
    pub r: f64,
    pub m: f64,
    pub sign: f64,
}

impl Surface for SuperellipseCap {
    fn jet(&self, xp: &[f64]) -> Jet {
        let rho = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (r, m) = (self.r, self.m);
        let t = (rho / r).powf(m);
        let g = -r * ((-t).ln_1p() / m).exp_m1();
        let big = r.powf(m) * (1.0 - t);
        let g1 = big.powf(1.0 / m - 1.0) * rho.powf(m - 1.0);
        let g2 = if rho == 0.0 {
            if (m - 2.0).abs() < 1e-14 { 1.0 / r } else { 0.0 }
        } else {
            (m - 1.0) * big.powf((1.0 - 2.0 * m) / m) * rho.powf(2.0 * m - 2.0)
                + (m - 1.0) * big.powf((1.0 - m) / m) * rho.powf(m - 2.0)
        };
        let s = self.sign;
        let mut jet = radial_jet(xp, g, g1, g2);
        jet.value *= s;
        jet.grad.iter_mut().for_each(|v| *v *= s);
        jet.hess.iter_mut().for_each(|v| *v *= s);
        jet
    }
}

/// User-supplied surface; its derivative bounds are not validated.
#[derive(Clone)]
pub struct CustomSurface {
    pub name: String,
    pub func: Arc<dyn Fn(&[f64]) -> Jet + Send + Sync>,
}

impl fmt::Debug for CustomSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomSurface({})", self.name)
    }
}

impl Surface for CustomSurface {
    fn jet(&self, xp: &[f64]) -> Jet {
        (self.func)(xp)
    }
}

/// Which family a profile came from, so the mesher can rebuild closed shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Power { tau1: f64, tau2: f64 },
    CurvilinearSquares { r1: f64, r2: f64 },
    Custom,
}

/// Gap geometry `delta(x') = eps + h1(x') - h2(x')` on the chart `|x'| <= 2R`.
#[derive(Debug, Clone)]
pub struct GapProfile {
    pub dim: usize,
    pub m: f64,
    pub tau: f64,
    pub sigma: f64,
    pub r_chart: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kind: ProfileKind,
    upper: Arc<dyn Surface>,
    lower: Arc<dyn Surface>,
}

impl GapProfile {
    /// `h1 = tau1 |x'|^m`, `h2 = -tau2 |x'|^m`; `sigma` only enters remainder orders.
    pub fn power(dim: usize, m: f64, tau1: f64, tau2: f64, sigma: f64, r_chart: f64) -> Result<Self> {
        if dim < 2 || !(m >= 2.0) || !(tau1 >= 0.0 && tau2 >= 0.0) || tau1 + tau2 <= 0.0 {
            return Err(invalid("power profile needs d >= 2, m >= 2, tau1, tau2 >= 0 with positive sum"));
        }
        if !(sigma > 0.0) || !(r_chart > 0.0) {
            return Err(invalid("power profile needs sigma > 0 and R > 0"));
        }
        let mut p = Self {
            dim,
            m,
            tau: tau1 + tau2,
            sigma,
            r_chart,
            kappa1: 0.0,
            kappa2: 0.0,
            kind: ProfileKind::Power { tau1, tau2 },
            upper: Arc::new(PowerSurface { coeff: tau1, m }),
            lower: Arc::new(PowerSurface { coeff: -tau2, m }),
        };
        p.estimate_kappas();
        Ok(p)
    }

    /// Arbitrary pair of surfaces; `sigma`, `kappa1`, `kappa2` are taken at face value.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        dim: usize,
        m: f64,
        tau: f64,
        sigma: f64,
        r_chart: f64,
        upper: Arc<dyn Surface>,
        lower: Arc<dyn Surface>,
        kappas: (f64, f64),
    ) -> Result<Self> {
        if dim < 2 || !(m >= 2.0) || !(tau > 0.0) || !(sigma > 0.0) || !(r_chart > 0.0) {
            return Err(invalid("custom profile needs d >= 2, m >= 2 and positive tau, sigma, R"));
        }
        Ok(Self {
            dim,
            m,
            tau,
            sigma,
            r_chart,
            kappa1: kappas.0,
            kappa2: kappas.1,
            kind: ProfileKind::Custom,
            upper,
            lower,
        })
    }

    fn estimate_kappas(&mut self) {
        let n = self.dim - 1;
        let mut k1: f64 = 0.0;
        for s in 1..=200 {
            let rho = 2.0 * self.r_chart * s as f64 / 200.0 * (1.0 - 1e-9);
            let mut xp = vec![0.0; n];
            xp[0] = rho;
            for jet in [self.upper.jet(&xp), self.lower.jet(&xp)] {
                let g = jet.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                let h = jet.hess.iter().map(|v| v * v).sum::<f64>().sqrt();
                k1 = k1.max(g / rho.powf(self.m - 1.0)).max(h / rho.powf(self.m - 2.0));
            }
        }
        self.kappa1 = k1;
        self.kappa2 = self.tau;
    }

    /// Largest `|x'|` accepted by the pointwise formulas.
    pub fn chart_limit(&self) -> f64 {
        2.0 * self.r_chart
    }

    fn check(&self, xp: &[f64]) -> Result<()> {
        if xp.len() != self.dim - 1 {
            return Err(Error::DimensionMismatch(format!(
                "x' needs {} components, got {}",
                self.dim - 1,
                xp.len()
            )));
        }
        let rho = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(rho <= self.chart_limit() * (1.0 + 1e-12)) {
            return Err(Error::OutsideChart(format!("|x'| = {rho} exceeds 2R = {}", self.chart_limit())));
        }
        Ok(())
    }

    pub fn h1(&self, xp: &[f64]) -> Result<Jet> {
        self.check(xp)?;
        Ok(self.upper.jet(xp))
    }

    pub fn h2(&self, xp: &[f64]) -> Result<Jet> {
        self.check(xp)?;
        Ok(self.lower.jet(xp))
    }

    /// Jet of `delta = eps + h1 - h2`.
    pub fn delta_jet(&self, eps: f64, xp: &[f64]) -> Result<Jet> {
        let a = self.h1(xp)?;
        let b = self.h2(xp)?;
        Ok(Jet {
            value: eps + a.value - b.value,
            grad: a.grad.iter().zip(&b.grad).map(|(x, y)| x - y).collect(),
            hess: a.hess.iter().zip(&b.hess).map(|(x, y)| x - y).collect(),
        })
    }

    pub fn delta(&self, eps: f64, xp: &[f64]) -> Result<f64> {
        self.check(xp)?;
        Ok(eps + self.upper.jet(xp).value - self.lower.jet(xp).value)
    }

    /// Thin-gap region `{h2 < x_d < eps + h1, |x' - z'| < t}`.
    pub fn omega_t(&self, eps: f64, z: &[f64], t: f64) -> Result<GapRegion> {
        self.check(z)?;
        let zr = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if zr > self.r_chart * (1.0 + 1e-12) {
            return Err(Error::OutsideChart(format!("|z'| = {zr} exceeds R = {}", self.r_chart)));
        }
        if !(t > 0.0 && t <= self.chart_limit()) {
            return Err(Error::OutsideChart(format!("radius t = {t} must lie in (0, 2R]")));
        }
        Ok(GapRegion { profile: self.clone(), eps, center: z.to_vec(), radius: t })
    }

    /// Largest ratio `|(h1 - h2) - tau |x'|^m| / |x'|^{m + sigma}` over `0 < |x'| <= r0`.
    pub fn remainder_constant(&self, r0: f64, samples: usize) -> Result<f64> {
        let mut k: f64 = 0.0;
        for s in 1..=samples {
            let rho = r0 * s as f64 / samples as f64;
            let mut xp = vec![0.0; self.dim - 1];
            xp[0] = rho;
            let diff = self.delta(0.0, &xp)? - self.tau * rho.powf(self.m);
            k = k.max(diff.abs() / rho.powf(self.m + self.sigma));
        }
        Ok(k)
    }
}

/// Characteristic predicate of a thin-gap region.
#[derive(Debug, Clone)]
pub struct GapRegion {
    profile: GapProfile,
    eps: f64,
    center: Vec<f64>,
    radius: f64,
}

impl GapRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        let d = self.profile.dim;
        if x.len() != d {
            return false;
        }
        let xp = &x[..d - 1];
        let dist = xp.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist >= self.radius {
            return false;
        }
        match (self.profile.h1(xp), self.profile.h2(xp)) {
            (Ok(a), Ok(b)) => x[d - 1] > b.value && x[d - 1] < self.eps + a.value,
            _ => false,
        }
    }
}

/// Gap profile of two curvilinear squares `|x1|^m + |x2 - eps - r1|^m = r1^m` and
/// `|x1|^m + |x2 + r2|^m = r2^m`.
pub fn curvilinear_square_profile(r1: f64, r2: f64, m: f64) -> Result<GapProfile> {
    if !(r1 > 0.0 && r2 > 0.0) {
        return Err(invalid(format!("radii must be positive, got r1={r1}, r2={r2}")));
    }
    if !(m >= 2.0) {
        return Err(invalid(format!("exponent m must be at least 2, got {m}")));
    }
    let tau = (r1.powf(1.0 - m) + r2.powf(1.0 - m)) / m;
    let mut p = GapProfile {
        dim: 2,
        m,
        tau,
        sigma: m,
        r_chart: 0.5 * r1.min(r2),
        kappa1: 0.0,
        kappa2: 0.0,
        kind: ProfileKind::CurvilinearSquares { r1, r2 },
        upper: Arc::new(SuperellipseCap { r: r1, m, sign: 1.0 }),
        lower: Arc::new(SuperellipseCap { r: r2, m, sign: -1.0 }),
    };
    p.estimate_kappas();
    Ok(p)
}

/// `{ x : (|x1 - c1|^m + |x2 - c2|^m)^{1/m} < r }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionShape {
    pub center: [f64; 2],
    pub r: f64,
    pub m: f64,
}

impl InclusionShape {
    /// Distance from the center to the boundary along direction `theta`.
    pub fn radius_at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.r / (c.abs().powf(self.m) + s.abs().powf(self.m)).powf(1.0 / self.m)
    }

    pub fn point(&self, theta: f64) -> [f64; 2] {
        let rho = self.radius_at(theta);
        [self.center[0] + rho * theta.cos(), self.center[1] + rho * theta.sin()]
    }

    pub fn angle_of(&self, p: [f64; 2]) -> f64 {
        (p[1] - self.center[1]).atan2(p[0] - self.center[0])
    }

    /// Radial projection onto the boundary.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        self.point(self.angle_of(p))
    }

    pub fn gauge(&self, p: [f64; 2]) -> f64 {
        let dx = (p[0] - self.center[0]).abs();
        let dy = (p[1] - self.center[1]).abs();
        (dx.powf(self.m) + dy.powf(self.m)).powf(1.0 / self.m)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.gauge(p) < self.r
    }

    /// Offset between `p` and the boundary, measured along the ray from the center.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let q = self.project(p);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }
}

/// Two inclusions inside a circular outer boundary, separated by `epsilon`.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub epsilon: f64,
    pub profile: GapProfile,
    pub inclusion1: InclusionShape,
    pub inclusion2: InclusionShape,
    pub outer_center: [f64; 2],
    pub outer_radius: f64,
    /// Cusp cutoff, required when `epsilon == 0`.
    pub eta: Option<f64>,
}

impl DomainSpec {
    /// Default layout: outer circle of radius `5 max(r1, r2)` centered between the inclusions.
    pub fn new(profile: &GapProfile, epsilon: f64, eta: Option<f64>) -> Result<Self> {
        let (r1, r2) = match profile.kind {
            ProfileKind::CurvilinearSquares { r1, r2 } => (r1, r2),
            _ => {
                return Err(invalid("only curvilinear-square (and disk) profiles can be meshed"));
            }
        };
        if profile.dim != 2 {
            return Err(invalid("meshing is two-dimensional only"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
        }
        if epsilon == 0.0 {
            match eta {
                Some(e) if e > 0.0 && e < 0.5 * profile.r_chart => {}
                _ => return Err(invalid("touching configuration needs a cusp cutoff 0 < eta < R/2")),
            }
        }
        let m = profile.m;
        let inclusion1 = InclusionShape { center: [0.0, epsilon + r1], r: r1, m };
        let inclusion2 = InclusionShape { center: [0.0, -r2], r: r2, m };
        let outer_center = [0.0, 0.5 * (epsilon + r1 - r2)];
        let outer_radius = 5.0 * r1.max(r2);
        Ok(Self {
            epsilon,
            profile: profile.clone(),
            inclusion1,
            inclusion2,
            outer_center,
            outer_radius,
            eta: if epsilon == 0.0 { eta } else { None },
        })
    }

    pub fn with_outer(mut self, center: [f64; 2], radius: f64) -> Result<Self> {
        self.outer_center = center;
        self.outer_radius = radius;
        for inc in [self.inclusion1, self.inclusion2] {
            let far = (0..64)
                .map(|k| {
                    let p = inc.point(k as f64 * std::f64::consts::TAU / 64.0);
                    ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
                })
                .fold(0.0, f64::max);
            if far >= 0.95 * radius {
                return Err(invalid("inclusions must lie strictly inside the outer boundary"));
            }
        }
        Ok(self)
    }

    pub fn is_touching(&self) -> bool {
        self.epsilon == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_matches_closed_form() {
        let p = curvilinear_square_profile(1.0, 1.0, 2.0).unwrap();
        let d = p.delta(0.0, &[0.1]).unwrap();
        assert!((d - (2.0 - 2.0 * (1.0f64 - 0.01).sqrt())).abs() < 1e-15);
        let j = p.h1(&[0.3]).unwrap();
        let h = 1e-6;
        let fd = (p.h1(&[0.3 + h]).unwrap().value - p.h1(&[0.3 - h]).unwrap().value) / (2.0 * h);
        assert!((j.grad[0] - fd).abs() < 1e-8);
        let fd2 = (p.h1(&[0.3 + h]).unwrap().grad[0] - p.h1(&[0.3 - h]).unwrap().grad[0]) / (2.0 * h);
        assert!((j.hess[0] - fd2).abs() < 1e-7);
    }

    #[test]
    fn delta_at_origin_is_eps() {
        let p = curvilinear_square_profile(2.0, 1.0, 4.0).unwrap();
        assert_eq!(p.delta(0.01, &[0.0]).unwrap(), 0.01);
        assert!(p.delta(0.01, &[10.0]).is_err());
    }

    #[test]
    fn power_profile_3d_hessian() {
        let p = GapProfile::power(3, 3.0, 0.5, 0.5, 1.0, 0.5).unwrap();
        let x = [0.2, -0.1];
        let j = p.delta_jet(0.0, &x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..2 {
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                let fd = (p.delta_jet(0.0, &a).unwrap().grad[i] - p.delta_jet(0.0, &b).unwrap().grad[i]) / (2.0 * h);
                assert!((j.hess[i * 2 + k] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn inclusion_projection() {
        let s = InclusionShape { center: [0.0, 1.0], r: 1.0, m: 4.0 };
        let q = s.project([0.3, 0.4]);
        assert!((s.gauge(q) - 1.0).abs() < 1e-13);
    }
}
