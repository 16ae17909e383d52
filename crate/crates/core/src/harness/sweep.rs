//! Epsilon sweeps: direct solves, touching pipeline, model comparison, rate fits and output files.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asymptotic::{constants, rho, ConstantsBundle};
use crate::error::Result;
use crate::factors::{
    coeff_expansion, example_squares_expansion, squares_geometry_constants, CoeffExpansion, FactorMatrices, GeometryConstants, Regime,
    StarredQuantities,
};
use crate::fem::{solve_limit_problem, BoundaryData, CoefficientSolution, ElasticityProblem, Subproblems};
use crate::geometry::{DomainSpec, GapProfile};
use crate::mesh::{build_mesh, MeshStats};
use crate::reconstruction::{compare, default_probes, max_gap_gradient, AsymptoticModel, Comparison, Probe};

use super::config::ExperimentConfig;
use super::ratefit::{fit_rate, RateFit};
use super::svg::{loglog_svg, Series};

/// Convergence order of `b_1^beta` to its touching value.
pub const B_CONVERGENCE_ORDER: f64 = 0.5;

/// Everything recorded at one epsilon.
#[derive(Debug, Clone)]
pub struct EpsRecord {
    pub eps: f64,
    pub mesh: MeshStats,
    pub coeffs: CoefficientSolution,
    /// `a_11^{alpha alpha}`
    pub a11_diag: Vec<f64>,
    /// `L^alpha M_i rho_i`, where defined.
    pub a11_leading: Vec<Option<f64>>,
    pub b1: Vec<f64>,
    pub d_min_eig: f64,
    pub max_gap: (f64, [f64; 2]),
    pub comparison: Option<Comparison>,
    pub probe_gradients: Vec<(Probe, f64)>,
    pub expansion: Vec<Option<CoeffExpansion>>,
    pub refined: Vec<Option<f64>>,
    /// `|grad(v_1 + v_2)| / |grad v_1|` at the gap center, per alpha.
    pub decay_ratio: Vec<f64>,
    /// Same with the symmetric gradients.
    pub strain_decay_ratio: Vec<f64>,
    pub max_flux_residual: f64,
    pub seconds: f64,
}

/// Touching-configuration results.
#[derive(Debug, Clone)]
pub struct TouchingRecord {
    pub starred: StarredQuantities,
    pub factors: FactorMatrices,
    pub geometry: Option<GeometryConstants>,
    pub geometry_error: Option<String>,
    pub seconds: f64,
}

/// A fitted exponent next to the exponent predicted from the rate functions.
#[derive(Debug, Clone)]
pub struct NamedFit {
    pub name: String,
    pub fit: RateFit,
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub regime: Regime,
    pub constants: ConstantsBundle,
    pub records: Vec<EpsRecord>,
    pub touching: Option<TouchingRecord>,
    pub fits: Vec<NamedFit>,
}

impl SweepReport {
    pub fn fit(&self, name: &str) -> Option<&NamedFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn eps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eps).collect()
    }
}

/// Predicted gradient scale at the gap center (`"center"`), or the larger of the center and ring scales.
pub fn predicted_gradient_scale(d: usize, m: f64, eps: f64, locus: &str) -> Result<f64> {
    let center = 1.0 / (eps * rho(0, d, m, eps)?);
    let ring = match Regime::of(d, m) {
        Regime::Strong => 1.0 / (eps.powf((m - 1.0) / m) * rho(2, d, m, eps)?),
        Regime::Intermediate => eps.powf(1.0 / m - 1.0),
        Regime::Weak => 1.0 / eps,
    };
    Ok(match locus {
        "center" => center,
        _ => center.max(ring),
    })
}

/// Touching pipeline: starred entries at `eta` and `eta/2`, factor matrices and geometry constants.
pub fn run_touching(cfg: &ExperimentConfig, phi: &BoundaryData) -> Result<TouchingRecord> {
    let t = Instant::now();
    let profile = cfg.profile()?;
    let params = cfg.params()?;
    let grading = cfg.mesh.grading();
    let (starred, subs) = StarredQuantities::compute(&profile, &params, phi, &grading, cfg.factors.eta, cfg.factors.tolerance)
        .map_err(|e| e.at("touching solve"))?;
    let factors = FactorMatrices::assemble(&starred).map_err(|e| e.at("factor assembly"))?;
    let energies = |s: &Subproblems| (0..3).map(|a| s.a(0, 0, a, a)).collect::<Vec<_>>();
    let (geometry, geometry_error) =
        match squares_geometry_constants(&profile, &params, cfg.factors.r0, cfg.factors.eta, &energies(&subs[0]), &energies(&subs[1])) {
            Ok(g) => (Some(g), None),
            Err(e) => (None, Some(e.to_string())),
        };
    Ok(TouchingRecord { starred, factors, geometry, geometry_error, seconds: t.elapsed().as_secs_f64() })
}

fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min()
}

fn gap_center_ratios(sub: &Subproblems, profile: &GapProfile, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = [0.0, profile.h2(&[0.0])?.value + 0.5 * profile.delta(eps, &[0.0])?];
    let mut full = Vec::new();
    let mut strain = Vec::new();
    for a in 0..sub.n_rigid {
        let gs = sub.sums[a].gradient_at(c)?;
        let g1 = sub.basis[0][a].gradient_at(c)?;
        full.push(gs.norm() / g1.norm());
        strain.push(crate::elasticity::sym(&gs).norm() / crate::elasticity::sym(&g1).norm());
    }
    Ok((full, strain))
}

/// Direct solve and comparison at one epsilon.
pub fn run_eps(
    cfg: &ExperimentConfig,
    phi: &BoundaryData,
    eps: f64,
    touching: Option<&TouchingRecord>,
    rng: &mut ChaCha8Rng,
) -> Result<EpsRecord> {
    let t = Instant::now();
    let profile = cfg.profile()?;
    let params = cfg.params()?;
    let spec = DomainSpec::new(&profile, eps, None)?;
    let mesh = Arc::new(build_mesh(&spec, &cfg.mesh.grading()).map_err(|e| e.at("mesh"))?);
    let stats = mesh.stats(&spec);
    let problem = ElasticityProblem::new(mesh, params).map_err(|e| e.at("assembly"))?;
    let (u, coeffs, sub) = solve_limit_problem(&problem, phi).map_err(|e| e.at("direct solve"))?;
    let n = sub.n_rigid;
    let consts = constants(2, profile.m, profile.tau, &params)?;
    let a11_diag: Vec<f64> = (0..n).map(|a| sub.a(0, 0, a, a)).collect();
    let a11_leading = (0..n)
        .map(|a| {
            let (i, m_const) = if a < 2 { (0, consts.m0) } else { (2, consts.m2) };
            m_const.and_then(|mc| rho(i, 2, profile.m, eps).ok().map(|r| consts.lame[a] * mc * r))
        })
        .collect();
    let b1 = (0..n).map(|b| sub.b(0, b)).collect();
    let d_eps = DMatrix::from_fn(n, n, |r, c| sub.a_sum_all(c, r));
    let max_gap = max_gap_gradient(&u, &profile, eps).map_err(|e| e.at("gap scan"))?;
    let mut probes = default_probes(&profile, eps, &usable_probe_ts(cfg)?).map_err(|e| e.at("probes"))?;
    for k in 0..cfg.probes.random {
        let x1 = rng.gen_range(-0.5..0.5) * profile.r_chart;
        let v: f64 = rng.gen_range(0.05..0.95);
        let y = profile.h2(&[x1])?.value + v * profile.delta(eps, &[x1])?;
        probes.push(Probe { id: format!("random{k}"), point: [x1, y] });
    }
    let probe_gradients = probes
        .iter()
        .map(|p| Ok((p.clone(), u.gradient_at(p.point)?.norm())))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at("probes"))?;
    let mut expansion = vec![None; n];
    let mut refined = vec![None; n];
    let mut comparison = None;
    if let Some(tr) = touching {
        for a in 0..n {
            expansion[a] = coeff_expansion(a, profile.m, profile.sigma, eps, &tr.factors, &consts).ok();
            refined[a] = tr.geometry.as_ref().and_then(|g| example_squares_expansion(a, profile.m, eps, g, &tr.factors, &consts).ok());
        }
        if expansion.iter().all(|e| e.is_some()) {
            let c = expansion.iter().map(|e| e.unwrap().value).collect();
            let band = phi_sup(phi, &spec);
            let model = AsymptoticModel::new(&profile, &params, eps, c, band)?;
            comparison = Some(compare(&u, &model, &probes, Some(&coeffs)).map_err(|e| e.at("comparison"))?);
        }
    }
    let (decay_ratio, strain_decay_ratio) = gap_center_ratios(&sub, &profile, eps).map_err(|e| e.at("gap decay"))?;
    Ok(EpsRecord {
        eps,
        mesh: stats,
        max_flux_residual: coeffs.flux_residuals.iter().copied().fold(0.0, f64::max),
        coeffs,
        a11_diag,
        a11_leading,
        b1,
        d_min_eig: sym_min_eig(&d_eps),
        max_gap,
        comparison,
        probe_gradients,
        expansion,
        refined,
        decay_ratio,
        strain_decay_ratio,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Configured probe positions that stay inside the gap chart at every epsilon.
pub fn usable_probe_ts(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let p = cfg.profile()?;
    let widest = cfg.sweep.eps.iter().copied().fold(0.0, f64::max).powf(1.0 / p.m);
    Ok(cfg.probes.t.iter().copied().filter(|t| t.abs() * widest < p.r_chart).collect())
}

/// Sup of `|phi|` over 256 points of the outer circle.
fn phi_sup(phi: &BoundaryData, spec: &DomainSpec) -> f64 {
    (0..256)
        .map(|k| {
            let th = k as f64 * std::f64::consts::TAU / 256.0;
            let p = [spec.outer_center[0] + spec.outer_radius * th.cos(), spec.outer_center[1] + spec.outer_radius * th.sin()];
            let v = phi.value(crate::mesh::BoundaryTag::Outer, p);
            v[0].hypot(v[1])
        })
        .fold(0.0, f64::max)
}

fn series_fit(name: &str, eps: &[f64], values: &[f64], predicted: Option<Vec<f64>>) -> Option<NamedFit> {
    let fit = fit_rate(eps, values).ok()?;
    let predicted = predicted.and_then(|p| fit_rate(eps, &p).ok()).map(|f| f.slope);
    Some(NamedFit { name: name.into(), fit, predicted })
}

/// Full sweep over the configured epsilons.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let profile = cfg.profile()?;
    let spec0 = DomainSpec::new(&profile, cfg.sweep.eps[0], None)?;
    let phi = cfg.boundary.data(spec0.outer_center)?;
    let touching = if cfg.factors.enabled { Some(run_touching(cfg, &phi)?) } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let records = cfg
        .sweep
        .eps
        .iter()
        .map(|&e| run_eps(cfg, &phi, e, touching.as_ref(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = records.iter().map(|r| r.eps).collect();
    let d = 2;
    let m = profile.m;
    let pred = |locus: &str| eps.iter().map(|&e| predicted_gradient_scale(d, m, e, locus)).collect::<Result<Vec<_>>>().ok();
    let mut fits = Vec::new();
    let gmax: Vec<f64> = records.iter().map(|r| r.max_gap.0).collect();
    fits.extend(series_fit("max_gap_grad", &eps, &gmax, pred("max")));
    for (k, t) in usable_probe_ts(cfg)?.iter().enumerate() {
        let vals: Vec<f64> = records.iter().map(|r| r.probe_gradients[k].1).collect();
        let locus = if *t == 0.0 { "center" } else { "ring" };
        let p = if *t == 0.0 || (*t - 1.0).abs() < 1e-12 { pred(locus) } else { None };
        fits.extend(series_fit(&format!("probe_grad t={t}"), &eps, &vals, p));
    }
    for a in 0..3 {
        let vals: Vec<f64> = records.iter().map(|r| r.a11_diag[a]).collect();
        let i = if a < 2 { 0 } else { 2 };
        let p = eps.iter().map(|&e| rho(i, d, m, e)).collect::<Result<Vec<_>>>().ok();
        fits.extend(series_fit(&format!("a11^{0}{0}", a + 1), &eps, &vals, p));
    }
    if let Some(tr) = &touching {
        for b in 0..3 {
            let bstar = tr.starred.b1[b].value();
            let vals: Vec<f64> = records.iter().map(|r| (r.b1[b] - bstar).abs()).collect();
            let p = Some(eps.iter().map(|e| e.powf(B_CONVERGENCE_ORDER)).collect());
            fits.extend(series_fit(&format!("|b1^{} - b1*|", b + 1), &eps, &vals, p));
        }
    }
    Ok(SweepReport {
        config: cfg.clone(),
        regime: Regime::of(d, m),
        constants: constants(d, m, profile.tau, &cfg.params()?)?,
        records,
        touching,
        fits,
    })
}

/// Combined CSV with the documented header.
pub fn sweep_csv(rep: &SweepReport) -> String {
    let mut s = String::from("epsilon,alpha,coeff_direct,coeff_asymptotic,rel_err,probe_id,grad_direct_norm,grad_asym_norm\n");
    for r in &rep.records {
        for (a, x) in r.coeffs.x1.iter().enumerate() {
            let (asym, rel) = match r.expansion[a] {
                Some(e) => (format!("{:.16e}", e.value), format!("{:.16e}", (x - e.value).abs() / x.abs())),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{:.16e},{},{:.16e},{asym},{rel},,,", r.eps, a + 1, x);
        }
        match &r.comparison {
            Some(c) => {
                for p in &c.probes {
                    let _ = writeln!(
                        s,
                        "{:.16e},,,,{:.16e},{},{:.16e},{:.16e}",
                        r.eps, p.rel_err, p.id, p.direct_norm, p.asymptotic_norm
                    );
                }
            }
            None => {
                for (p, g) in &r.probe_gradients {
                    let _ = writeln!(s, "{:.16e},,,,,{},{:.16e},", r.eps, p.id, g);
                }
            }
        }
    }
    s
}

/// Per-epsilon energies, b-values and diagnostics.
pub fn energies_csv(rep: &SweepReport) -> String {
    let mut s = String::from("epsilon,alpha,a11_diag,a11_leading,b1,b1_star,coeff_refined,decay_ratio,strain_decay_ratio\n");
    for r in &rep.records {
        for a in 0..r.a11_diag.len() {
            let lead = r.a11_leading[a].map(|v| format!("{v:.16e}")).unwrap_or_default();
            let bstar = rep.touching.as_ref().map(|t| format!("{:.16e}", t.starred.b1[a].value())).unwrap_or_default();
            let refined = r.refined[a].map(|v| format!("{v:.16e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:.16e},{},{:.16e},{lead},{:.16e},{bstar},{refined},{:.16e},{:.16e}",
                r.eps,
                a + 1,
                r.a11_diag[a],
                r.b1[a],
                r.decay_ratio[a],
                r.strain_decay_ratio[a]
            );
        }
    }
    s
}

pub fn rates_csv(rep: &SweepReport) -> String {
    let mut s = String::from("quantity,fitted_exponent,half_width,predicted_exponent\n");
    for f in &rep.fits {
        let p = f.predicted.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.6},{:.6},{p}", f.name, f.fit.slope, f.fit.half_width);
    }
    s
}

pub fn summary_text(rep: &SweepReport) -> String {
    let mut s = String::new();
    let p = rep.config.profile().ok();
    let _ = writeln!(s, "lamegap sweep");
    let _ = writeln!(s, "shape {:?}  m {}  tau {:.6}  regime {}", rep.config.geometry.shape, rep.constants.m, rep.constants.tau, rep.regime.label());
    if let Some(p) = p {
        let _ = writeln!(s, "chart radius {:.4}  sigma {}", p.r_chart, p.sigma);
    }
    let kept = usable_probe_ts(&rep.config).unwrap_or_default();
    let dropped: Vec<f64> = rep.config.probes.t.iter().copied().filter(|t| !kept.contains(t)).collect();
    if !dropped.is_empty() {
        let _ = writeln!(s, "probes t = {dropped:?} leave the gap chart at the largest epsilon and are skipped");
    }
    let _ = writeln!(s, "\n{:<8} {:>8} {:>8} {:>12} {:>10} {:>8}", "epsilon", "nodes", "aspect", "max|grad u|", "flux res", "seconds");
    for r in &rep.records {
        let _ = writeln!(s, "{:<8.2e} {:>8} {:>8.0} {:>12.5e} {:>10.2e} {:>8.2}", r.eps, r.mesh.nodes, r.mesh.max_aspect, r.max_gap.0, r.max_flux_residual, r.seconds);
    }
    let _ = writeln!(s, "\n{:<22} {:>10} {:>10} {:>10}", "quantity", "fitted", "+/-95%", "predicted");
    for f in &rep.fits {
        let p = f.predicted.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<22} {:>10.4} {:>10.4} {:>10}", f.name, f.fit.slope, f.fit.half_width, p);
    }
    if let Some(t) = &rep.touching {
        let (worst, name) = t.starred.eta_report();
        let _ = writeln!(s, "\ntouching: eta {}  worst eta/eta2 change {:.3e} at {}  stable {}", t.starred.eta, worst, name, t.starred.is_eta_stable());
        let _ = writeln!(s, "min eig D* {:.6e}", t.factors.d_star_min_eigenvalue());
        if let Some(g) = &t.geometry {
            for a in 0..3 {
                if let (Some(k), Some(gv)) = (g.k[a], g.g[a]) {
                    let _ = writeln!(
                        s,
                        "K*^{} = {:.6}  G*^{} = {:.6}  r0/2 change {:.2e}  eta/2 change {:.2e}",
                        a + 1,
                        k,
                        a + 1,
                        gv,
                        g.r0_rel_diff(a).unwrap_or(f64::NAN),
                        g.eta_rel_diff(a).unwrap_or(f64::NAN)
                    );
                }
            }
        }
        if let Some(e) = &t.geometry_error {
            let _ = writeln!(s, "geometry constants unavailable: {e}");
        }
    }
    let _ = writeln!(s, "\n{:<8} {:>5} {:>14} {:>14} {:>10} {:>14}", "epsilon", "alpha", "X1 direct", "expansion", "rel diff", "refined");
    for r in &rep.records {
        for a in 0..r.coeffs.x1.len() {
            let x = r.coeffs.x1[a];
            let (e, rel) = match r.expansion[a] {
                Some(e) => (format!("{:.6e}", e.value), format!("{:.3e}", (x - e.value).abs() / x.abs())),
                None => ("-".into(), "-".into()),
            };
            let refd = r.refined[a].map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:<8.2e} {:>5} {:>14.6e} {:>14} {:>10} {:>14}", r.eps, a + 1, x, e, rel, refd);
        }
    }
    s
}

/// Writes CSV files, the SVG plot and the summary into `dir`.
pub fn write_report(rep: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(rep))?;
    std::fs::write(dir.join("energies.csv"), energies_csv(rep))?;
    std::fs::write(dir.join("rates.csv"), rates_csv(rep))?;
    std::fs::write(dir.join("summary.txt"), summary_text(rep))?;
    let eps = rep.eps();
    let mut series = Vec::new();
    let gmax: Vec<(f64, f64)> = rep.records.iter().map(|r| (r.eps, r.max_gap.0)).collect();
    series.push(Series { name: "max gap |grad u|".into(), points: gmax.clone(), dashed: false });
    for (k, t) in usable_probe_ts(&rep.config)?.iter().enumerate() {
        if *t == 0.0 || (*t - 1.0).abs() < 1e-12 {
            let pts = rep.records.iter().map(|r| (r.eps, r.probe_gradients[k].1)).collect();
            series.push(Series { name: format!("probe t={t}"), points: pts, dashed: false });
        }
    }
    if let Some(f) = rep.fit("max_gap_grad") {
        if let Some(p) = f.predicted {
            let (e0, g0) = gmax[0];
            let pts = eps.iter().map(|&e| (e, g0 * (e / e0).powf(p))).collect();
            series.push(Series { name: format!("predicted slope {p:.3}"), points: pts, dashed: true });
        }
    }
    std::fs::write(dir.join("gradient.svg"), loglog_svg("gap gradient versus epsilon", "epsilon", "|grad u|", &series))?;
    Ok(())
}
