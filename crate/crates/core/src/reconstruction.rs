//! The asymptotic gradient field built from expansion coefficients and
//! `grad ubar_1^alpha`, probe sets, and comparison against a direct solve.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::asymptotic::aux_grad_u1;
use crate::elasticity::{rigid_count, LameParameters};
use crate::error::{invalid, Error, Result};
use crate::factors::Regime;
use crate::fem::{CoefficientSolution, FieldSolution};
use crate::geometry::GapProfile;

/// Leading-order model `grad u ~ sum_alpha c_alpha grad ubar_1^alpha` on the gap.
#[derive(Debug, Clone)]
pub struct AsymptoticModel {
    pub regime: Regime,
    pub profile: GapProfile,
    pub params: LameParameters,
    pub epsilon: f64,
    /// Per-alpha leading values of `C_1^alpha - C_2^alpha`.
    pub coefficients: Vec<f64>,
    /// Magnitude of the bounded additive term, reported alongside predictions.
    pub band: f64,
}

impl AsymptoticModel {
    pub fn new(profile: &GapProfile, params: &LameParameters, epsilon: f64, coefficients: Vec<f64>, band: f64) -> Result<Self> {
        let n = rigid_count(profile.dim);
        if coefficients.len() != n {
            return Err(Error::DimensionMismatch(format!("model needs {n} coefficients, got {}", coefficients.len())));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("the asymptotic model needs epsilon > 0"));
        }
        Ok(Self {
            regime: Regime::of(profile.dim, profile.m),
            profile: profile.clone(),
            params: *params,
            epsilon,
            coefficients,
            band: band.abs(),
        })
    }

    fn in_gap(&self, x: &[f64]) -> Result<()> {
        let d = self.profile.dim;
        let xp = &x[..d - 1];
        let r = xp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lower = self.profile.h2(xp)?.value;
        let upper = lower + self.profile.delta(self.epsilon, xp)?;
        if r >= self.profile.r_chart || x[d - 1] < lower - 1e-14 || x[d - 1] > upper + 1e-14 {
            return Err(Error::OutsideChart(format!("point {x:?} is outside the gap region")));
        }
        Ok(())
    }
}

/// `sum_alpha c_alpha grad ubar_1^alpha(x)`; the bounded term is not added.
pub fn asymptotic_gradient(model: &AsymptoticModel, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.profile.dim;
    if x.len() != d {
        return Err(Error::DimensionMismatch(format!("point needs {d} coordinates")));
    }
    model.in_gap(x)?;
    let mut g = DMatrix::zeros(d, d);
    for (alpha, &c) in model.coefficients.iter().enumerate() {
        if c != 0.0 {
            g += aux_grad_u1(alpha, &model.profile, model.epsilon, &model.params, x)? * c;
        }
    }
    Ok(g)
}

/// A named evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub id: String,
    pub point: [f64; 2],
}

/// Mid-gap points at `x1 = t eps^{1/m}`.
pub fn default_probes(profile: &GapProfile, eps: f64, ts: &[f64]) -> Result<Vec<Probe>> {
    let scale = eps.powf(1.0 / profile.m);
    ts.iter()
        .map(|&t| {
            let x1 = t * scale;
            if x1.abs() >= profile.r_chart {
                return Err(invalid(format!("probe t = {t} leaves the gap chart")));
            }
            let mid = profile.h2(&[x1])?.value + 0.5 * profile.delta(eps, &[x1])?;
            Ok(Probe { id: format!("t={t}"), point: [x1, mid] })
        })
        .collect()
}

/// Largest gradient norm over sample points of the elements whose centroid lies in the gap band.
pub fn max_gap_gradient(u: &FieldSolution, profile: &GapProfile, eps: f64) -> Result<(f64, [f64; 2])> {
    let mesh = &u.mesh;
    let half = profile.r_chart;
    let samples = [(1.0 / 3.0, 1.0 / 3.0), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.5, 0.0), (0.5, 0.5), (0.0, 0.5)];
    let best = (0..mesh.elements.len())
        .into_par_iter()
        .filter_map(|e| {
            let c = mesh.map_point(e, 1.0 / 3.0, 1.0 / 3.0);
            if c[0].abs() >= half {
                return None;
            }
            let lower = profile.h2(&[c[0]]).ok()?.value;
            let upper = lower + profile.delta(eps, &[c[0]]).ok()?;
            if c[1] < lower || c[1] > upper {
                return None;
            }
            let mut local = (0.0f64, c);
            for &(xi, eta) in &samples {
                let n = u.element_gradient(e, xi, eta).norm();
                if n > local.0 {
                    local = (n, mesh.map_point(e, xi, eta));
                }
            }
            Some(local)
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && (b.1[0], b.1[1]) < (a.1[0], a.1[1])) { b } else { a });
    best.ok_or_else(|| Error::Mesh("no elements in the gap band".into()))
}

/// One probe comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMetric {
    pub id: String,
    pub point: [f64; 2],
    pub direct_norm: f64,
    pub asymptotic_norm: f64,
    pub rel_err: f64,
}

/// Probe and coefficient comparison of a direct solution with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub epsilon: f64,
    pub probes: Vec<ProbeMetric>,
    pub max_rel_err: f64,
    /// `|X1 - c| / |X1|` per alpha, `None` without solver coefficients.
    pub coefficient_discrepancy: Vec<Option<f64>>,
    pub band: f64,
}

/// Compares `direct` and `model` at `probes` (evaluated in parallel, reported in input order).
pub fn compare(direct: &FieldSolution, model: &AsymptoticModel, probes: &[Probe], coeffs: Option<&CoefficientSolution>) -> Result<Comparison> {
    let probes_out: Vec<ProbeMetric> = probes
        .par_iter()
        .map(|p| {
            let gd = direct.gradient_at(p.point)?;
            let ga = asymptotic_gradient(model, &p.point)?;
            let dn = gd.norm();
            let err = (&gd - &ga).norm();
            Ok(ProbeMetric {
                id: p.id.clone(),
                point: p.point,
                direct_norm: dn,
                asymptotic_norm: ga.norm(),
                rel_err: if dn > 0.0 { err / dn } else { err },
            })
        })
        .collect::<Result<_>>()?;
    let max_rel_err = probes_out.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    let coefficient_discrepancy = match coeffs {
        Some(c) => c
            .x1
            .iter()
            .zip(&model.coefficients)
            .map(|(&x, &a)| Some(if x != 0.0 { (x - a).abs() / x.abs() } else { (x - a).abs() }))
            .collect(),
        None => vec![None; model.coefficients.len()],
    };
    Ok(Comparison { epsilon: model.epsilon, probes: probes_out, max_rel_err, coefficient_discrepancy, band: model.band })
}

/// CSV rows `epsilon,probe_id,x1,x2,grad_direct_norm,grad_asym_norm,rel_err`.
pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut s = String::from("epsilon,probe_id,x1,x2,grad_direct_norm,grad_asym_norm,rel_err\n");
    for c in rows {
        for p in &c.probes {
            let _ = writeln!(
                s,
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                c.epsilon, p.id, p.point[0], p.point[1], p.direct_norm, p.asymptotic_norm, p.rel_err
            );
        }
    }
    s
}
