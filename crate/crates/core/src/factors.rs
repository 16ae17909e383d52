//! Touching-configuration quantities, the blow-up factor matrices of each
//! regime, the leading coefficient expansions, and the geometry constants of
//! the curvilinear-square example.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::asymptotic::{aux_u1, aux_u2, constants, remainder_order, rho, ConstantsBundle, RemainderKind};
use crate::elasticity::{rigid_count, LameParameters};
use crate::error::{invalid, Error, Result};
use crate::fem::{BoundaryData, ElasticityProblem, Subproblems};
use crate::geometry::{DomainSpec, GapProfile, ProfileKind};
use crate::mesh::{build_mesh, MeshGrading};
use crate::quadrature::integrate;

const TIE: f64 = 1e-12;
const DET_THRESHOLD: f64 = 1e-10;

/// The three regimes of the main expansions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `m >= d+1`
    Strong,
    /// `d-1 <= m < d+1`
    Intermediate,
    /// `m < d-1`
    Weak,
}

impl Regime {
    pub fn of(d: usize, m: f64) -> Self {
        let df = d as f64;
        if m >= df + 1.0 - TIE {
            Regime::Strong
        } else if m >= df - 1.0 - TIE {
            Regime::Intermediate
        } else {
            Regime::Weak
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::Strong => "m >= d+1",
            Regime::Intermediate => "d-1 <= m < d+1",
            Regime::Weak => "m < d-1",
        }
    }
}

/// Whether the touching entry `a*_11^{alpha beta}` (zero-based) is finite.
pub fn a11_star_finite(alpha: usize, beta: usize, d: usize, m: f64) -> bool {
    let df = d as f64;
    if alpha == beta {
        if alpha < d {
            m < df - 1.0 - TIE
        } else {
            m < df + 1.0 - TIE
        }
    } else if d == 2 && alpha < 2 && beta < 2 {
        false
    } else {
        true
    }
}

/// An entry evaluated with cusp cutoffs `eta` and `eta/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaPair {
    pub coarse: f64,
    pub fine: f64,
}

impl EtaPair {
    pub fn exact(v: f64) -> Self {
        Self { coarse: v, fine: v }
    }

    pub fn value(&self) -> f64 {
        self.fine
    }

    pub fn rel_diff(&self) -> f64 {
        self.rel_diff_floor(0.0)
    }

    /// Change relative to `max(|value|, floor)`.
    pub fn rel_diff_floor(&self, floor: f64) -> f64 {
        let s = self.fine.abs().max(self.coarse.abs()).max(floor);
        if s == 0.0 {
            0.0
        } else {
            (self.fine - self.coarse).abs() / s
        }
    }
}

/// Entries below this fraction of the largest entry are compared against that floor.
pub const ETA_FLOOR: f64 = 1e-3;

/// Starred scalars of the touching configuration.
#[derive(Debug, Clone)]
pub struct StarredQuantities {
    pub d: usize,
    pub m: f64,
    pub eta: f64,
    pub tolerance: f64,
    /// `a*_11^{alpha beta}`, `None` where the entry diverges.
    pub a11: Vec<Vec<Option<EtaPair>>>,
    /// `sum_i a*_{i1}^{alpha beta}`
    pub a_sum_i1: Vec<Vec<EtaPair>>,
    /// `sum_{ij} a*_ij^{alpha beta}`
    pub a_sum_all: Vec<Vec<EtaPair>>,
    pub b1: Vec<EtaPair>,
    pub b_sum: Vec<EtaPair>,
}

/// Dirichlet data of `v_i^{*alpha}` on the cusp cut: the explicit fields at `eps = 0`.
pub fn cusp_data(profile: &GapProfile, params: &LameParameters) -> impl Fn(usize, usize) -> Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync> {
    let profile = profile.clone();
    let params = *params;
    move |i, alpha| {
        let profile = profile.clone();
        Arc::new(move |p: [f64; 2]| {
            let v = if i == 0 { aux_u1(alpha, &profile, 0.0, &params, &p) } else { aux_u2(alpha, &profile, 0.0, &params, &p) };
            match v {
                Ok(v) => [v[0], v[1]],
                Err(_) => [f64::NAN, f64::NAN],
            }
        })
    }
}

/// Solves every touching subproblem on the mesh truncated at `eta`.
pub fn touching_subproblems(
    profile: &GapProfile,
    params: &LameParameters,
    phi: &BoundaryData,
    grading: &MeshGrading,
    eta: f64,
) -> Result<(ElasticityProblem, Subproblems)> {
    let spec = DomainSpec::new(profile, 0.0, Some(eta))?;
    let mesh = Arc::new(build_mesh(&spec, grading).map_err(|e| e.at("touching mesh"))?);
    let problem = ElasticityProblem::new(mesh, *params)?;
    let cusp = cusp_data(profile, params);
    let sub = Subproblems::solve(&problem, phi, Some(&cusp), true)?;
    if sub.outer.values.iter().chain(sub.basis[0].iter().flat_map(|f| f.values.iter())).any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite cusp data".into()));
    }
    Ok((problem, sub))
}

impl StarredQuantities {
    /// Computes the starred entries with cutoffs `eta` and `eta/2`.
    pub fn compute(
        profile: &GapProfile,
        params: &LameParameters,
        phi: &BoundaryData,
        grading: &MeshGrading,
        eta: f64,
        tolerance: f64,
    ) -> Result<(Self, [Subproblems; 2])> {
        let (_, coarse) = touching_subproblems(profile, params, phi, grading, eta)?;
        let (_, fine) = touching_subproblems(profile, params, phi, grading, 0.5 * eta)?;
        let q = Self::from_subproblems(profile.dim, profile.m, eta, tolerance, &coarse, &fine);
        Ok((q, [coarse, fine]))
    }

    pub fn from_subproblems(d: usize, m: f64, eta: f64, tolerance: f64, c: &Subproblems, f: &Subproblems) -> Self {
        let n = c.n_rigid;
        let pair = |g: &dyn Fn(&Subproblems) -> f64| EtaPair { coarse: g(c), fine: g(f) };
        let a11 = (0..n)
            .map(|al| {
                (0..n)
                    .map(|be| a11_star_finite(al, be, d, m).then(|| pair(&|s| s.a(0, 0, al, be))))
                    .collect()
            })
            .collect();
        let a_sum_i1 = (0..n).map(|al| (0..n).map(|be| pair(&|s| s.a_sum_i1(al, be))).collect()).collect();
        let a_sum_all = (0..n).map(|al| (0..n).map(|be| pair(&|s| s.a_sum_all(al, be))).collect()).collect();
        let b1 = (0..n).map(|be| pair(&|s| s.b(0, be))).collect();
        let b_sum = (0..n).map(|be| pair(&|s| s.b_sum(be))).collect();
        Self { d, m, eta, tolerance, a11, a_sum_i1, a_sum_all, b1, b_sum }
    }

    /// Wraps externally supplied values (any dimension); entries outside the regime's
    /// finite range are dropped.
    #[allow(clippy::too_many_arguments)]
    pub fn from_entries(
        d: usize,
        m: f64,
        a11: &DMatrix<f64>,
        a_sum_i1: &DMatrix<f64>,
        a_sum_all: &DMatrix<f64>,
        b1: &[f64],
        b_sum: &[f64],
    ) -> Result<Self> {
        let n = rigid_count(d);
        for mat in [a11, a_sum_i1, a_sum_all] {
            if mat.nrows() != n || mat.ncols() != n {
                return Err(Error::DimensionMismatch(format!("starred matrices must be {n}x{n}")));
            }
        }
        if b1.len() != n || b_sum.len() != n {
            return Err(Error::DimensionMismatch(format!("starred vectors must have length {n}")));
        }
        let e = EtaPair::exact;
        Ok(Self {
            d,
            m,
            eta: 0.0,
            tolerance: f64::INFINITY,
            a11: (0..n).map(|a| (0..n).map(|b| a11_star_finite(a, b, d, m).then(|| e(a11[(a, b)]))).collect()).collect(),
            a_sum_i1: (0..n).map(|a| (0..n).map(|b| e(a_sum_i1[(a, b)])).collect()).collect(),
            a_sum_all: (0..n).map(|a| (0..n).map(|b| e(a_sum_all[(a, b)])).collect()).collect(),
            b1: b1.iter().map(|&v| e(v)).collect(),
            b_sum: b_sum.iter().map(|&v| e(v)).collect(),
        })
    }

    pub fn n(&self) -> usize {
        rigid_count(self.d)
    }

    /// `a*_11^{alpha beta}`; divergent entries are rejected.
    pub fn a11(&self, alpha: usize, beta: usize) -> Result<f64> {
        self.a11[alpha][beta].map(|p| p.value()).ok_or_else(|| {
            Error::Regime(format!(
                "a*_11^{{{}{}}} is infinite for d={}, m={} ({})",
                alpha + 1,
                beta + 1,
                self.d,
                self.m,
                Regime::of(self.d, self.m).label()
            ))
        })
    }

    fn all_pairs(&self) -> Vec<(String, EtaPair)> {
        let n = self.n();
        let mut v = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if let Some(p) = self.a11[a][b] {
                    v.push((format!("a*_11^{}{}", a + 1, b + 1), p));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                v.push((format!("sum_i_a*_i1^{}{}", a + 1, b + 1), self.a_sum_i1[a][b]));
                v.push((format!("sum_ij_a*_ij^{}{}", a + 1, b + 1), self.a_sum_all[a][b]));
            }
        }
        for a in 0..n {
            v.push((format!("b*_1^{}", a + 1), self.b1[a]));
            v.push((format!("sum_i_b*_i^{}", a + 1), self.b_sum[a]));
        }
        v
    }

    /// Absolute floor of the stability test: [`ETA_FLOOR`] times the largest entry.
    pub fn eta_floor(&self) -> f64 {
        ETA_FLOOR * self.all_pairs().iter().map(|(_, p)| p.value().abs()).fold(0.0, f64::max)
    }

    /// Largest `eta` vs `eta/2` change over every finite entry, with its label.
    pub fn eta_report(&self) -> (f64, String) {
        let floor = self.eta_floor();
        let mut worst = (0.0, String::from("none"));
        for (name, p) in self.all_pairs() {
            let r = p.rel_diff_floor(floor);
            if r > worst.0 {
                worst = (r, name);
            }
        }
        worst
    }

    pub fn is_eta_stable(&self) -> bool {
        self.eta_report().0 <= self.tolerance
    }
}

/// Regime-dependent matrices assembled from the starred entries.
///
/// Row `r`, column `c` of the full matrix holds the coefficient of unknown `c`
/// in equation `r`; the two blocks are `[[A, B], [C, D]]` with `C = B^T`.
#[derive(Debug, Clone)]
pub struct FactorMatrices {
    pub regime: Regime,
    pub d: usize,
    pub b_star: DMatrix<f64>,
    pub c_star: DMatrix<f64>,
    pub d_star: DMatrix<f64>,
    /// `A*` where every entry is finite (regime `m < d-1`).
    pub a_star: Option<DMatrix<f64>>,
    /// Bordered matrices of regime (i), one per alpha.
    pub f_alpha: Vec<DMatrix<f64>>,
    pub f0: Option<DMatrix<f64>>,
    /// Regime (ii): `F1` for translations, `F2` for rotations (indexed by alpha).
    pub f1: Vec<Option<DMatrix<f64>>>,
    pub f2: Vec<Option<DMatrix<f64>>>,
    pub f3: Vec<DMatrix<f64>>,
    pub f_full: Option<DMatrix<f64>>,
    /// Right-hand sides `(b*_1, sum_i b*_i)`.
    pub rhs: (Vec<f64>, Vec<f64>),
}

/// Determinant by partial-pivot LU, with a Hadamard-scaled zero test.
pub fn determinant(m: &DMatrix<f64>) -> (f64, bool) {
    let det = m.clone().lu().determinant();
    let scale: f64 = m.row_iter().map(|r| r.norm()).product();
    let zero = !(det.abs() > DET_THRESHOLD * scale);
    (det, zero)
}

fn nonzero_det(m: &DMatrix<f64>, name: &str) -> Result<f64> {
    let (det, zero) = determinant(m);
    if zero {
        return Err(Error::Singular(format!("det {name} = {det:e} is zero to relative threshold {DET_THRESHOLD:e}")));
    }
    Ok(det)
}

/// Submatrix with the given row and column index lists.
fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

impl FactorMatrices {
    pub fn assemble(s: &StarredQuantities) -> Result<Self> {
        let d = s.d;
        let n = s.n();
        let regime = Regime::of(d, s.m);
        let b_star = DMatrix::from_fn(n, n, |r, c| s.a_sum_i1[c][r].value());
        let c_star = b_star.transpose();
        let d_star = DMatrix::from_fn(n, n, |r, c| s.a_sum_all[c][r].value());
        let y1: Vec<f64> = s.b1.iter().map(|p| p.value()).collect();
        let y2: Vec<f64> = s.b_sum.iter().map(|p| p.value()).collect();
        let mut out = Self {
            regime,
            d,
            b_star: b_star.clone(),
            c_star: c_star.clone(),
            d_star: d_star.clone(),
            a_star: None,
            f_alpha: Vec::new(),
            f0: None,
            f1: vec![None; n],
            f2: vec![None; n],
            f3: Vec::new(),
            f_full: None,
            rhs: (y1.clone(), y2.clone()),
        };
        // Full equation-row matrix with a placeholder for divergent A* entries.
        let full = |a: &dyn Fn(usize, usize) -> Result<f64>| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] = a(r, c)?;
                    m[(r, n + c)] = b_star[(r, c)];
                    m[(n + r, c)] = c_star[(r, c)];
                    m[(n + r, n + c)] = d_star[(r, c)];
                }
            }
            Ok(m)
        };
        let rhs: Vec<f64> = y1.iter().chain(&y2).copied().collect();
        match regime {
            Regime::Strong => {
                for alpha in 0..n {
                    let mut f = DMatrix::zeros(n + 1, n + 1);
                    f[(0, 0)] = y1[alpha];
                    for c in 0..n {
                        f[(0, c + 1)] = b_star[(alpha, c)];
                    }
                    for r in 0..n {
                        f[(r + 1, 0)] = y2[r];
                        for c in 0..n {
                            f[(r + 1, c + 1)] = d_star[(r, c)];
                        }
                    }
                    out.f_alpha.push(f);
                }
            }
            Regime::Intermediate => {
                // Rows/columns kept when the translation unknowns are eliminated.
                let a_rot = |r: usize, c: usize| -> Result<f64> {
                    if r < d && c < d {
                        Ok(0.0)
                    } else {
                        s.a11(c, r)
                    }
                };
                let m = full(&a_rot)?;
                let keep: Vec<usize> = (d..2 * n).collect();
                let f0 = select(&m, &keep, &keep);
                for alpha in 0..d {
                    let rows: Vec<usize> = std::iter::once(alpha).chain(d..2 * n).collect();
                    let mut f1 = DMatrix::zeros(rows.len(), keep.len() + 1);
                    for (i, &r) in rows.iter().enumerate() {
                        f1[(i, 0)] = rhs[r];
                        for (j, &c) in keep.iter().enumerate() {
                            f1[(i, j + 1)] = m[(r, c)];
                        }
                    }
                    out.f1[alpha] = Some(f1);
                }
                for alpha in d..n {
                    let mut f2 = f0.clone();
                    let col = alpha - d;
                    for (i, &r) in keep.iter().enumerate() {
                        f2[(i, col)] = rhs[r];
                    }
                    out.f2[alpha] = Some(f2);
                }
                out.f0 = Some(f0);
            }
            Regime::Weak => {
                let m = full(&|r, c| s.a11(c, r))?;
                out.a_star = Some(select(&m, &(0..n).collect::<Vec<_>>(), &(0..n).collect::<Vec<_>>()));
                for alpha in 0..n {
                    let mut f3 = m.clone();
                    for r in 0..2 * n {
                        f3[(r, alpha)] = rhs[r];
                    }
                    out.f3.push(f3);
                }
                out.f_full = Some(m);
            }
        }
        Ok(out)
    }

    /// Every assembled matrix with its name.
    pub fn named(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut v: Vec<(String, &DMatrix<f64>)> = vec![
            ("B*".into(), &self.b_star),
            ("C*".into(), &self.c_star),
            ("D*".into(), &self.d_star),
        ];
        if let Some(a) = &self.a_star {
            v.push(("A*".into(), a));
        }
        for (a, f) in self.f_alpha.iter().enumerate() {
            v.push((format!("F*^{}", a + 1), f));
        }
        if let Some(f) = &self.f0 {
            v.push(("F0*".into(), f));
        }
        for (a, f) in self.f1.iter().enumerate() {
            if let Some(f) = f {
                v.push((format!("F1*^{}", a + 1), f));
            }
        }
        for (a, f) in self.f2.iter().enumerate() {
            if let Some(f) = f {
                v.push((format!("F2*^{}", a + 1), f));
            }
        }
        for (a, f) in self.f3.iter().enumerate() {
            v.push((format!("F3*^{}", a + 1), f));
        }
        if let Some(f) = &self.f_full {
            v.push(("F*".into(), f));
        }
        v
    }

    /// Smallest eigenvalue of the symmetric part of `D*`.
    pub fn d_star_min_eigenvalue(&self) -> f64 {
        let sym = (&self.d_star + self.d_star.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Leading value of `C_1^alpha - C_2^alpha` with its predicted remainder order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffExpansion {
    pub value: f64,
    pub remainder: Option<f64>,
}

/// Leading coefficient in the regime of `factors` (zero-based `alpha`).
pub fn coeff_expansion(
    alpha: usize,
    m: f64,
    sigma: f64,
    eps: f64,
    factors: &FactorMatrices,
    consts: &ConstantsBundle,
) -> Result<CoeffExpansion> {
    let d = factors.d;
    let n = rigid_count(d);
    if alpha >= n {
        return Err(invalid(format!("alpha {} out of range", alpha + 1)));
    }
    if Regime::of(d, m) != factors.regime || consts.d != d {
        return Err(Error::Regime(format!("factor matrices belong to regime {}", factors.regime.label())));
    }
    let lame = consts.lame[alpha];
    let order = |k: RemainderKind| remainder_order(k, d, m, sigma, eps).ok();
    Ok(match factors.regime {
        Regime::Strong => {
            let ratio = nonzero_det(&factors.f_alpha[alpha], "F*^alpha")? / nonzero_det(&factors.d_star, "D*")?;
            if alpha < d {
                CoeffExpansion { value: ratio / (lame * consts.m0()? * rho(0, d, m, eps)?), remainder: order(RemainderKind::Eps0) }
            } else {
                CoeffExpansion { value: ratio / (lame * consts.m2()? * rho(2, d, m, eps)?), remainder: order(RemainderKind::Eps2) }
            }
        }
        Regime::Intermediate => {
            let f0 = nonzero_det(factors.f0.as_ref().expect("assembled"), "F0*")?;
            if alpha < d {
                let f1 = nonzero_det(factors.f1[alpha].as_ref().expect("assembled"), "F1*^alpha")?;
                CoeffExpansion { value: f1 / f0 / (lame * consts.m0()? * rho(0, d, m, eps)?), remainder: order(RemainderKind::EpsBar0) }
            } else {
                let f2 = nonzero_det(factors.f2[alpha].as_ref().expect("assembled"), "F2*^alpha")?;
                CoeffExpansion { value: f2 / f0, remainder: order(RemainderKind::EpsBar2) }
            }
        }
        Regime::Weak => {
            let f = nonzero_det(factors.f_full.as_ref().expect("assembled"), "F*")?;
            let f3 = nonzero_det(&factors.f3[alpha], "F3*^alpha")?;
            CoeffExpansion { value: f3 / f, remainder: order(RemainderKind::Low) }
        }
    })
}

/// Geometry constants of two curvilinear squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConstants {
    pub m: f64,
    pub r1: f64,
    pub r2: f64,
    pub r0: f64,
    pub tau0: f64,
    /// Indexed by alpha; `None` where undefined (`alpha = 3` with `m < 3`).
    pub k: Vec<Option<f64>>,
    pub g: Vec<Option<f64>>,
    /// `M~*` pieces, `M*` pieces and the `C*` integrals per alpha.
    pub m_tilde: Vec<Option<f64>>,
    pub m_star: Vec<Option<f64>>,
    pub c_star: Vec<Option<f64>>,
    /// `K*` recomputed with `r0/2`.
    pub k_half_r0: Vec<Option<f64>>,
    /// `K*` from the coarser cusp cutoff.
    pub k_coarse_eta: Vec<Option<f64>>,
}

impl GeometryConstants {
    pub fn r0_rel_diff(&self, alpha: usize) -> Option<f64> {
        Some(rel(self.k[alpha]?, self.k_half_r0[alpha]?))
    }

    pub fn eta_rel_diff(&self, alpha: usize) -> Option<f64> {
        Some(rel(self.k[alpha]?, self.k_coarse_eta[alpha]?))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 { 0.0 } else { (a - b).abs() / s }
}

/// Closed-form tail of `K*` (zero-based `alpha`).
pub fn squares_tail(alpha: usize, m: f64, r0: f64, tau0: f64, lame: f64) -> Result<f64> {
    if alpha < 2 {
        Ok(-2.0 * r0.powf(1.0 - m) * lame / (tau0 * (m - 1.0)))
    } else if (m - 3.0).abs() < TIE {
        Ok(2.0 * (tau0.ln() + 3.0 * r0.ln()) * lame / (3.0 * tau0))
    } else if m > 3.0 {
        Ok(2.0 * r0.powf(3.0 - m) * lame / (tau0 * (3.0 - m)))
    } else {
        Err(Error::Regime(format!("the rotational geometry constant needs m >= 3, got m = {m}")))
    }
}

/// `1 - (1-t)^{1/m} - t/m` without cancellation for small `t`.
fn cap_excess(t: f64, m: f64) -> f64 {
    if t < 0.1 {
        let a = 1.0 / m;
        let mut coef = a;
        let mut term_sum = 0.0;
        let mut tk = t;
        for k in 1..60 {
            coef *= (a - k as f64) / (k as f64 + 1.0);
            tk *= t;
            let term = -coef * if k % 2 == 1 { 1.0 } else { -1.0 } * tk;
            term_sum += term;
            if term.abs() < 1e-18 * term_sum.abs() {
                break;
            }
        }
        term_sum
    } else {
        -((-t).ln_1p() / m).exp_m1() - t / m
    }
}

/// `(h1 - h2)(x) - tau0 |x|^m` for two curvilinear squares.
fn squares_excess(x: f64, r1: f64, r2: f64, m: f64) -> f64 {
    let x = x.abs();
    r1 * cap_excess((x / r1).powf(m), m) + r2 * cap_excess((x / r2).powf(m), m)
}

/// Quadrature pieces for given `r0` and truncated energy at cutoff `eta`.
fn k_star_from_energy(alpha: usize, profile: &GapProfile, r0: f64, eta: f64, energy: f64, lame: f64) -> Result<(f64, f64, f64, f64)> {
    let (r1, r2) = match profile.kind {
        ProfileKind::CurvilinearSquares { r1, r2 } => (r1, r2),
        _ => return Err(invalid("geometry constants are defined for curvilinear squares")),
    };
    let m = profile.m;
    let tau = profile.tau;
    let w = |x: f64| if alpha < 2 { 1.0 } else { x * x };
    let gap = |x: f64| tau * x.abs().powf(m) + squares_excess(x, r1, r2, m);
    let singular = 2.0 * integrate(|x| w(x) / gap(x), eta, r0, &[], 0.0, 1e-12)?.value;
    let regular = 2.0
        * integrate(
            |x| {
                if x == 0.0 {
                    return 0.0;
                }
                let xm = tau * x.powf(m);
                -w(x) * squares_excess(x, r1, r2, m) / (gap(x) * xm)
            },
            0.0,
            r0,
            &[],
            1e-14,
            1e-12,
        )?
        .value;
    let m_star = energy - lame * singular;
    let m_tilde = m_star + lame * regular;
    let k = m_tilde + squares_tail(alpha, m, r0, tau, lame)?;
    Ok((k, m_tilde, m_star, regular))
}

/// `K*` and `G*` for the curvilinear-square example from the truncated touching energies
/// `energy_fine` (cutoff `eta/2`) and `energy_coarse` (cutoff `eta`), indexed by alpha.
pub fn squares_geometry_constants(
    profile: &GapProfile,
    params: &LameParameters,
    r0: f64,
    eta: f64,
    energy_coarse: &[f64],
    energy_fine: &[f64],
) -> Result<GeometryConstants> {
    let (r1, r2) = match profile.kind {
        ProfileKind::CurvilinearSquares { r1, r2 } => (r1, r2),
        _ => return Err(invalid("geometry constants are defined for curvilinear squares")),
    };
    if profile.dim != 2 {
        return Err(invalid("geometry constants are two-dimensional"));
    }
    if !(r0 > eta && r0 <= profile.r_chart * 2.0) {
        return Err(invalid(format!("r0 = {r0} must lie in (eta, 2R]")));
    }
    let m = profile.m;
    let c = constants(2, m, profile.tau, params)?;
    let mut out = GeometryConstants {
        m,
        r1,
        r2,
        r0,
        tau0: profile.tau,
        k: vec![None; 3],
        g: vec![None; 3],
        m_tilde: vec![None; 3],
        m_star: vec![None; 3],
        c_star: vec![None; 3],
        k_half_r0: vec![None; 3],
        k_coarse_eta: vec![None; 3],
    };
    for alpha in 0..3 {
        if alpha == 2 && m < 3.0 - TIE {
            continue;
        }
        let lame = c.lame[alpha];
        let (k, mt, ms, cs) = k_star_from_energy(alpha, profile, r0, 0.5 * eta, energy_fine[alpha], lame)?;
        let (k_half, ..) = k_star_from_energy(alpha, profile, 0.5 * r0, 0.5 * eta, energy_fine[alpha], lame)?;
        let (k_coarse, ..) = k_star_from_energy(alpha, profile, r0, eta, energy_coarse[alpha], lame)?;
        let denom = if alpha < 2 { lame * c.m0()? } else { lame * c.m2()? };
        out.k[alpha] = Some(k);
        out.g[alpha] = Some(k / denom);
        out.m_tilde[alpha] = Some(mt);
        out.m_star[alpha] = Some(ms);
        out.c_star[alpha] = Some(cs);
        out.k_half_r0[alpha] = Some(k_half);
        out.k_coarse_eta[alpha] = Some(k_coarse);
    }
    Ok(out)
}

/// Refined coefficients of the curvilinear-square example (zero-based `alpha`).
pub fn example_squares_expansion(
    alpha: usize,
    m: f64,
    eps: f64,
    gc: &GeometryConstants,
    factors: &FactorMatrices,
    consts: &ConstantsBundle,
) -> Result<f64> {
    if factors.d != 2 || alpha > 2 {
        return Err(invalid("the square example is two-dimensional with alpha in 1..=3"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("epsilon must lie in (0, 1)"));
    }
    if (gc.m - m).abs() > TIE || Regime::of(2, m) != factors.regime {
        return Err(Error::Regime("geometry constants or factor matrices built for another m".into()));
    }
    let lame = consts.lame[alpha];
    let g = |a: usize| gc.g[a].ok_or_else(|| Error::Regime(format!("G*^{} undefined for m = {m}", a + 1)));
    let p1 = eps.powf((m - 1.0) / m);
    if m >= 3.0 - TIE {
        let ratio = nonzero_det(&factors.f_alpha[alpha], "F*^alpha")? / nonzero_det(&factors.d_star, "D*")?;
        if alpha < 2 {
            Ok(ratio * p1 / (lame * consts.m0()?) / (1.0 + g(alpha)? * p1))
        } else if (m - 3.0).abs() < TIE {
            Ok(ratio / (lame * consts.m2()?) / (eps.ln().abs() + g(2)?))
        } else {
            let p3 = eps.powf((m - 3.0) / m);
            Ok(ratio * p3 / (lame * consts.m2()?) / (1.0 + g(2)? * p3))
        }
    } else if m >= 2.0 - TIE {
        let f0 = nonzero_det(factors.f0.as_ref().expect("assembled"), "F0*")?;
        if alpha < 2 {
            let f1 = nonzero_det(factors.f1[alpha].as_ref().expect("assembled"), "F1*^alpha")?;
            Ok(f1 / f0 * p1 / (lame * consts.m0()?) / (1.0 + g(alpha)? * p1))
        } else {
            Ok(nonzero_det(factors.f2[2].as_ref().expect("assembled"), "F2*^3")? / f0)
        }
    } else {
        Err(Error::Regime(format!("the square example needs m >= 2, got {m}")))
    }
}

/// Three-dimensional constant `2 ln R - (2/pi) int_0^{pi/2} ln(cos^2/k1 + sin^2/k2) + sqrt(k1 k2) M / (pi L)`.
pub fn geometry_constant_3d(kappa1: f64, kappa2: f64, r: f64, lame: f64, m3: f64) -> Result<f64> {
    if !(kappa1 > 0.0 && kappa2 > 0.0 && r > 0.0 && lame > 0.0) {
        return Err(invalid("3D geometry constant needs positive curvatures, R and Lamé factor"));
    }
    let pi = std::f64::consts::PI;
    let integral = integrate(
        |t| (t.cos().powi(2) / kappa1 + t.sin().powi(2) / kappa2).ln(),
        0.0,
        0.5 * pi,
        &[],
        1e-14,
        1e-13,
    )?
    .value;
    Ok(2.0 * r.ln() - 2.0 / pi * integral + (kappa1 * kappa2).sqrt() / (pi * lame) * m3)
}

/// Labeled plain-text dump of the starred entries (value, `eta` and `eta/2` columns) and matrices.
pub fn dump_factors(s: &StarredQuantities, f: &FactorMatrices) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# regime {}", f.regime.label());
    let _ = writeln!(out, "# eta {:.16e} tolerance {:.6e}", s.eta, s.tolerance);
    let _ = writeln!(out, "entry value eta_value half_eta_value rel_diff agree");
    let floor = s.eta_floor();
    let n = s.n();
    for a in 0..n {
        for b in 0..n {
            if s.a11[a][b].is_none() {
                let _ = writeln!(out, "a*_11^{}{} inf inf inf - -", a + 1, b + 1);
            }
        }
    }
    for (name, p) in s.all_pairs() {
        let r = p.rel_diff_floor(floor);
        let _ = writeln!(
            out,
            "{name} {:.16e} {:.16e} {:.16e} {:.3e} {}",
            p.value(),
            p.coarse,
            p.fine,
            r,
            r <= s.tolerance
        );
    }
    for (name, mat) in f.named() {
        let (det, zero) = determinant(mat);
        let _ = writeln!(out, "matrix {name} {}x{} det {:.16e} zero {}", mat.nrows(), mat.ncols(), det, zero);
        for r in 0..mat.nrows() {
            let cells: Vec<String> = (0..mat.ncols()).map(|c| format!("{:.16e}", mat[(r, c)])).collect();
            let _ = writeln!(out, "  {}", cells.join(" "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_rules() {
        assert!(!a11_star_finite(0, 0, 2, 2.0));
        assert!(a11_star_finite(2, 2, 2, 2.0));
        assert!(!a11_star_finite(2, 2, 2, 3.0));
        assert!(!a11_star_finite(0, 1, 2, 2.0));
        assert!(a11_star_finite(0, 2, 2, 4.0));
        assert!(a11_star_finite(0, 0, 3, 1.5));
    }

    #[test]
    fn tails() {
        assert!((squares_tail(0, 2.0, 0.25, 1.0, 1.0).unwrap() + 8.0).abs() < 1e-14);
        let t = squares_tail(2, 3.0, 0.25, 1.0, 1.0).unwrap();
        assert!((t - 2.0 * 0.25f64.ln()).abs() < 1e-14);
        assert!(squares_tail(2, 2.5, 0.25, 1.0, 1.0).is_err());
    }

    #[test]
    fn excess_series_matches_direct() {
        for &m in &[2.0, 3.0, 4.0] {
            for &t in &[0.09, 0.05] {
                let direct = -((-t as f64).ln_1p() / m).exp_m1() - t / m;
                assert!((cap_excess(t, m) - direct).abs() < 1e-15);
            }
        }
        let t = 1e-8;
        assert!((cap_excess(t, 2.0) - t * t / 8.0).abs() < 1e-22);
    }

    #[test]
    fn three_d_constant_closed_form() {
        let (k1, k2) = (0.7, 1.9);
        let v = geometry_constant_3d(k1, k2, 0.5, 1.0, 0.0).unwrap();
        let a: f64 = 1.0 / k1;
        let b: f64 = 1.0 / k2;
        let expect = 2.0 * 0.5f64.ln() - 2.0 * ((a.sqrt() + b.sqrt()) / 2.0).ln();
        assert!((v - expect).abs() < 1e-12);
    }
}
