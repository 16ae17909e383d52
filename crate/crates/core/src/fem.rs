//! Quadratic finite elements for the plane Lamé system with Dirichlet data on
//! every boundary, the energy forms `a_ij^{ab}`, the boundary functionals
//! `b_j^b`, and the limit problem with rigid inclusions.

use std::fmt::Write as _;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::elasticity::{rigid_basis, LameParameters, RigidMotion};
use crate::error::{invalid, Error, Result};
use crate::mesh::{shape_p2, BoundaryEdge, BoundaryTag, Mesh};

/// Degree-4 six-point rule on the reference triangle: `(xi, eta, weight)`, weights sum to 1/2.
pub const QUAD_POINTS: [(f64, f64, f64); 6] = {
    const A: f64 = 0.445_948_490_915_964_9;
    const WA: f64 = 0.223_381_589_678_011_5 / 2.0;
    const B: f64 = 0.091_576_213_509_770_74;
    const WB: f64 = 0.109_951_743_655_321_9 / 2.0;
    [
        (A, A, WA),
        (1.0 - 2.0 * A, A, WA),
        (A, 1.0 - 2.0 * A, WA),
        (B, B, WB),
        (1.0 - 2.0 * B, B, WB),
        (B, 1.0 - 2.0 * B, WB),
    ]
};

/// Five-point Gauss-Legendre rule on `[0, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

const RESIDUAL_TOL: f64 = 1e-10;

/// Physical derivatives of the six shape functions and the Jacobian determinant.
fn physical_gradients(mesh: &Mesh, e: usize, xi: f64, eta: f64) -> ([[f64; 2]; 6], f64) {
    let (_, d) = shape_p2(xi, eta);
    let j = mesh.jacobian(e, xi, eta);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let mut g = [[0.0; 2]; 6];
    for a in 0..6 {
        g[a][0] = d[a][0] * inv[0][0] + d[a][1] * inv[1][0];
        g[a][1] = d[a][0] * inv[0][1] + d[a][1] * inv[1][1];
    }
    (g, det)
}

fn element_stiffness(mesh: &Mesh, params: &LameParameters, e: usize) -> [[f64; 12]; 12] {
    let (l, m) = (params.lambda, params.mu);
    let mut ke = [[0.0; 12]; 12];
    for &(xi, eta, w) in &QUAD_POINTS {
        let (g, det) = physical_gradients(mesh, e, xi, eta);
        let s = w * det;
        for a in 0..6 {
            let (ax, ay) = (g[a][0], g[a][1]);
            for b in 0..6 {
                let (bx, by) = (g[b][0], g[b][1]);
                ke[2 * a][2 * b] += s * ((l + 2.0 * m) * ax * bx + m * ay * by);
                ke[2 * a][2 * b + 1] += s * (l * ax * by + m * ay * bx);
                ke[2 * a + 1][2 * b] += s * (l * ay * bx + m * ax * by);
                ke[2 * a + 1][2 * b + 1] += s * ((l + 2.0 * m) * ay * by + m * ax * bx);
            }
        }
    }
    ke
}

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len() / 4);
        let mut vals: Vec<f64> = Vec::with_capacity(t.len() / 4);
        let mut last = (usize::MAX, usize::MAX);
        for (r, c, v) in t {
            if (r, c) == last {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = (r, c);
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
            .collect()
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|r| x[r] * (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * y[self.cols[k]]).sum::<f64>())
            .sum()
    }
}

/// Vector boundary data `g(x)`; tags without data get zero.
#[derive(Clone, Default)]
pub struct BoundaryData {
    pub name: String,
    pieces: Vec<(BoundaryTag, Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>)>,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tags: Vec<_> = self.pieces.iter().map(|p| p.0).collect();
        write!(f, "BoundaryData({}, {:?})", self.name, tags)
    }
}

impl BoundaryData {
    pub fn zero(name: impl Into<String>) -> Self {
        Self { name: name.into(), pieces: Vec::new() }
    }

    pub fn on(mut self, tag: BoundaryTag, f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> Self {
        self.pieces.retain(|p| p.0 != tag);
        self.pieces.push((tag, Arc::new(f)));
        self
    }

    pub fn on_arc(mut self, tag: BoundaryTag, f: Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>) -> Self {
        self.pieces.retain(|p| p.0 != tag);
        self.pieces.push((tag, f));
        self
    }

    /// The same rigid motion on every listed tag.
    pub fn rigid(name: impl Into<String>, motion: RigidMotion, tags: &[BoundaryTag]) -> Self {
        let mut d = Self::zero(name);
        for &t in tags {
            d = d.on(t, move |p| {
                let v = motion.eval(&p);
                [v[0], v[1]]
            });
        }
        d
    }

    pub fn value(&self, tag: BoundaryTag, p: [f64; 2]) -> [f64; 2] {
        self.pieces.iter().find(|q| q.0 == tag).map_or([0.0, 0.0], |q| (q.1)(p))
    }

    pub fn is_zero_on(&self, tag: BoundaryTag) -> bool {
        !self.pieces.iter().any(|q| q.0 == tag)
    }
}

/// Which subproblem a field solves.
#[derive(Debug, Clone, PartialEq)]
pub enum SolutionKind {
    /// `v_i^alpha`, zero-based `i` and `alpha`.
    Basis { i: usize, alpha: usize },
    /// `v_1^alpha + v_2^alpha`.
    BasisSum { alpha: usize },
    Outer,
    StarBasis { i: usize, alpha: usize },
    StarOuter,
    Composite,
    Dirichlet(String),
}

impl SolutionKind {
    pub fn label(&self) -> String {
        match self {
            SolutionKind::Basis { i, alpha } => format!("v_{}^{}", i + 1, alpha + 1),
            SolutionKind::BasisSum { alpha } => format!("v_1^{0}+v_2^{0}", alpha + 1),
            SolutionKind::Outer => "v_0".into(),
            SolutionKind::StarBasis { i, alpha } => format!("v*_{}^{}", i + 1, alpha + 1),
            SolutionKind::StarOuter => "v*_0".into(),
            SolutionKind::Composite => "u".into(),
            SolutionKind::Dirichlet(s) => s.clone(),
        }
    }
}

/// Nodal displacement field on a mesh.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub mesh: Arc<Mesh>,
    /// `[u_x(0), u_y(0), u_x(1), ...]`
    pub values: Vec<f64>,
    pub kind: SolutionKind,
    pub epsilon: f64,
    pub data_id: String,
    pub residual: f64,
}

impl FieldSolution {
    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> [f64; 2], kind: SolutionKind) -> Self {
        let mut values = vec![0.0; 2 * mesh.n_nodes()];
        for (i, p) in mesh.nodes.iter().enumerate() {
            let v = f(*p);
            values[2 * i] = v[0];
            values[2 * i + 1] = v[1];
        }
        let epsilon = mesh.epsilon;
        Self { mesh, values, kind, epsilon, data_id: "interpolant".into(), residual: 0.0 }
    }

    pub fn node_value(&self, i: usize) -> [f64; 2] {
        [self.values[2 * i], self.values[2 * i + 1]]
    }

    pub fn element_gradient(&self, e: usize, xi: f64, eta: f64) -> DMatrix<f64> {
        let (g, _) = physical_gradients(&self.mesh, e, xi, eta);
        let mut out = DMatrix::zeros(2, 2);
        for (a, &n) in self.mesh.elements[e].iter().enumerate() {
            for k in 0..2 {
                for j in 0..2 {
                    out[(k, j)] += self.values[2 * n + k] * g[a][j];
                }
            }
        }
        out
    }

    /// `G[k][j] = d u_k / d x_j` at `p`.
    pub fn gradient_at(&self, p: [f64; 2]) -> Result<DMatrix<f64>> {
        let (e, xi, eta) = self
            .mesh
            .locate(p)
            .ok_or_else(|| Error::OutsideChart(format!("point ({}, {}) is outside the mesh", p[0], p[1])))?;
        Ok(self.element_gradient(e, xi, eta))
    }

    pub fn value_at(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let (e, xi, eta) = self
            .mesh
            .locate(p)
            .ok_or_else(|| Error::OutsideChart(format!("point ({}, {}) is outside the mesh", p[0], p[1])))?;
        let (n, _) = shape_p2(xi, eta);
        let mut v = [0.0; 2];
        for (a, &id) in self.mesh.elements[e].iter().enumerate() {
            v[0] += n[a] * self.values[2 * id];
            v[1] += n[a] * self.values[2 * id + 1];
        }
        Ok(v)
    }

    /// Linear combination `sum c_k f_k` of fields on the same mesh.
    pub fn combine(terms: &[(f64, &FieldSolution)], kind: SolutionKind) -> Result<Self> {
        let first = terms.first().ok_or_else(|| invalid("empty combination"))?.1;
        let mut values = vec![0.0; first.values.len()];
        let mut residual: f64 = 0.0;
        for (c, f) in terms {
            if !Arc::ptr_eq(&f.mesh, &first.mesh) {
                return Err(Error::DimensionMismatch("fields live on different meshes".into()));
            }
            for (v, x) in values.iter_mut().zip(&f.values) {
                *v += c * x;
            }
            residual = residual.max(f.residual);
        }
        Ok(Self {
            mesh: first.mesh.clone(),
            values,
            kind,
            epsilon: first.epsilon,
            data_id: "combination".into(),
            residual,
        })
    }

    /// Plain-text dump: metadata header and node table with 17 significant digits.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# field {}", self.kind.label());
        let _ = writeln!(s, "# epsilon {:.16e}", self.epsilon);
        let _ = writeln!(s, "# data {}", self.data_id);
        let _ = writeln!(s, "# residual {:.16e}", self.residual);
        let _ = writeln!(s, "node x y ux uy");
        for (i, p) in self.mesh.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i} {:.16e} {:.16e} {:.16e} {:.16e}",
                p[0],
                p[1],
                self.values[2 * i],
                self.values[2 * i + 1]
            );
        }
        s
    }
}

/// Energy `int (C e(u), e(v))` by element quadrature.
pub fn energy_inner(u: &FieldSolution, v: &FieldSolution, params: &LameParameters) -> Result<f64> {
    if !Arc::ptr_eq(&u.mesh, &v.mesh) {
        return Err(Error::DimensionMismatch("energy of fields on different meshes".into()));
    }
    let mesh = &u.mesh;
    let total: f64 = (0..mesh.elements.len())
        .into_par_iter()
        .map(|e| {
            let mut acc = 0.0;
            for &(xi, eta, w) in &QUAD_POINTS {
                let (_, det) = physical_gradients(mesh, e, xi, eta);
                let gu = u.element_gradient(e, xi, eta);
                let gv = v.element_gradient(e, xi, eta);
                let eu = crate::elasticity::sym(&gu);
                let ev = crate::elasticity::sym(&gv);
                acc += w * det * params.energy_density(&eu, &ev).unwrap_or(f64::NAN);
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total)
}

/// Assembled stiffness with a factored interior block.
pub struct ElasticityProblem {
    pub mesh: Arc<Mesh>,
    pub params: LameParameters,
    pub stiffness: CsrMatrix,
    free: Vec<usize>,
    llt: Option<Llt<usize, f64>>,
}

impl std::fmt::Debug for ElasticityProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ElasticityProblem(dofs={}, free={})", self.stiffness.n, self.free.len())
    }
}

impl ElasticityProblem {
    /// Assembles the global stiffness and factors its interior block.
    pub fn new(mesh: Arc<Mesh>, params: LameParameters) -> Result<Self> {
        if params.dim != 2 {
            return Err(invalid("the finite-element solver is two-dimensional"));
        }
        let blocks: Vec<[[f64; 12]; 12]> =
            (0..mesh.elements.len()).into_par_iter().map(|e| element_stiffness(&mesh, &params, e)).collect();
        let ndof = 2 * mesh.n_nodes();
        let mut trip = Vec::with_capacity(blocks.len() * 144);
        for (e, ke) in blocks.iter().enumerate() {
            let el = &mesh.elements[e];
            for a in 0..12 {
                let ga = 2 * el[a / 2] + a % 2;
                for b in 0..12 {
                    let gb = 2 * el[b / 2] + b % 2;
                    trip.push((ga, gb, ke[a][b]));
                }
            }
        }
        let stiffness = CsrMatrix::from_triplets(ndof, trip);
        let mut free_of = vec![usize::MAX; ndof];
        let mut free = Vec::new();
        for (i, t) in mesh.tags.iter().enumerate() {
            if !t.is_boundary() {
                for k in 0..2 {
                    free_of[2 * i + k] = free.len();
                    free.push(2 * i + k);
                }
            }
        }
        let mut ff = Vec::new();
        for &r in &free {
            let fr = free_of[r];
            for k in stiffness.row_ptr[r]..stiffness.row_ptr[r + 1] {
                let fc = free_of[stiffness.cols[k]];
                if fc != usize::MAX && fc <= fr {
                    ff.push(Triplet::new(fr, fc, stiffness.vals[k]));
                }
            }
        }
        let llt = if free.is_empty() {
            None
        } else {
            let a = SparseColMat::<usize, f64>::try_new_from_triplets(free.len(), free.len(), &ff)
                .map_err(|e| Error::Solver(format!("sparse matrix creation failed: {e:?}")))?;
            Some(
                a.sp_cholesky(Side::Lower)
                    .map_err(|e| Error::Singular(format!("interior stiffness is not positive definite: {e:?}")))?,
            )
        };
        Ok(Self { mesh, params, stiffness, free, llt })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Nodal vector holding the boundary data, zero at interior nodes.
    pub fn boundary_vector(&self, data: &BoundaryData) -> Vec<f64> {
        let mut g = vec![0.0; self.stiffness.n];
        for (i, (p, t)) in self.mesh.nodes.iter().zip(&self.mesh.tags).enumerate() {
            if t.is_boundary() {
                let v = data.value(*t, *p);
                g[2 * i] = v[0];
                g[2 * i + 1] = v[1];
            }
        }
        g
    }

    fn solve_interior(&self, rhs: &mut Mat<f64>) {
        if let Some(llt) = &self.llt {
            llt.solve_in_place(rhs.as_mut());
        }
    }

    /// Solves every data set with the shared factorization, refining until the
    /// interior residual is below `1e-10` relative.
    pub fn solve_many(&self, data: &[(BoundaryData, SolutionKind)]) -> Result<Vec<FieldSolution>> {
        let nf = self.free.len();
        let k = data.len();
        let lifts: Vec<Vec<f64>> = data.par_iter().map(|(d, _)| self.boundary_vector(d)).collect();
        let rhs_full: Vec<Vec<f64>> = lifts.par_iter().map(|g| self.stiffness.matvec(g)).collect();
        let mut rhs = Mat::<f64>::zeros(nf, k);
        for (c, r) in rhs_full.iter().enumerate() {
            for (fi, &dof) in self.free.iter().enumerate() {
                rhs[(fi, c)] = -r[dof];
            }
        }
        let norms: Vec<f64> = (0..k)
            .map(|c| (0..nf).map(|i| rhs[(i, c)].powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut sol = rhs.clone();
        self.solve_interior(&mut sol);
        let mut values: Vec<Vec<f64>> = lifts;
        let assign = |values: &mut Vec<Vec<f64>>, sol: &Mat<f64>| {
            for (c, v) in values.iter_mut().enumerate() {
                for (fi, &dof) in self.free.iter().enumerate() {
                    v[dof] = sol[(fi, c)];
                }
            }
        };
        assign(&mut values, &sol);
        let mut residuals = vec![0.0; k];
        for _ in 0..4 {
            let res: Vec<Vec<f64>> = values.par_iter().map(|v| self.stiffness.matvec(v)).collect();
            let mut corr = Mat::<f64>::zeros(nf, k);
            let mut worst: f64 = 0.0;
            for c in 0..k {
                let mut s = 0.0;
                for (fi, &dof) in self.free.iter().enumerate() {
                    corr[(fi, c)] = -res[c][dof];
                    s += res[c][dof].powi(2);
                }
                let scale = if norms[c] > 0.0 { norms[c] } else { 1.0 };
                residuals[c] = s.sqrt() / scale;
                worst = worst.max(residuals[c]);
            }
            if worst <= RESIDUAL_TOL || nf == 0 {
                break;
            }
            self.solve_interior(&mut corr);
            for c in 0..k {
                for fi in 0..nf {
                    sol[(fi, c)] += corr[(fi, c)];
                }
            }
            assign(&mut values, &sol);
        }
        if let Some(bad) = residuals.iter().position(|r| !(r <= &RESIDUAL_TOL)) {
            return Err(Error::Solver(format!(
                "relative residual {:e} above {RESIDUAL_TOL:e} for {}",
                residuals[bad],
                data[bad].1.label()
            )));
        }
        Ok(values
            .into_iter()
            .zip(data)
            .zip(residuals)
            .map(|((v, (d, kind)), r)| FieldSolution {
                mesh: self.mesh.clone(),
                values: v,
                kind: kind.clone(),
                epsilon: self.mesh.epsilon,
                data_id: d.name.clone(),
                residual: r,
            })
            .collect())
    }

    pub fn solve_dirichlet(&self, data: &BoundaryData, kind: SolutionKind) -> Result<FieldSolution> {
        Ok(self.solve_many(&[(data.clone(), kind)])?.remove(0))
    }

    /// `u^T K v`; equals the energy integral for fields on this mesh.
    pub fn energy(&self, u: &FieldSolution, v: &FieldSolution) -> Result<f64> {
        if !Arc::ptr_eq(&u.mesh, &self.mesh) || !Arc::ptr_eq(&v.mesh, &self.mesh) {
            return Err(Error::DimensionMismatch("field belongs to another mesh".into()));
        }
        Ok(self.stiffness.bilinear(&u.values, &v.values))
    }

    /// Nodal lift of boundary data: the data at boundary nodes, zero inside.
    pub fn nodal_lift(&self, data: &BoundaryData) -> FieldSolution {
        FieldSolution {
            mesh: self.mesh.clone(),
            values: self.boundary_vector(data),
            kind: SolutionKind::Dirichlet(format!("nodal lift of {}", data.name)),
            epsilon: self.mesh.epsilon,
            data_id: data.name.clone(),
            residual: 0.0,
        }
    }

    /// `int_{edges tagged tag} (sigma(u) n) . psi ds` with `n` the outward normal of the mesh region,
    /// together with the same integral of `|sigma(u) n| |psi|` as a scale.
    pub fn flux_moment(&self, u: &FieldSolution, tag: BoundaryTag, psi: &RigidMotion) -> (f64, f64) {
        let (l, m) = (self.params.lambda, self.params.mu);
        let mut total = 0.0;
        let mut scale = 0.0;
        for be in self.mesh.boundary_edges.iter().filter(|b| b.tag == tag) {
            for &(t, w) in &GAUSS5 {
                let (xi, eta, dxi, deta) = edge_param(be, t);
                let jac = self.mesh.jacobian(be.element, xi, eta);
                let tx = jac[0][0] * dxi + jac[0][1] * deta;
                let ty = jac[1][0] * dxi + jac[1][1] * deta;
                let normal = [ty, -tx];
                let g = u.element_gradient(be.element, xi, eta);
                let div = g[(0, 0)] + g[(1, 1)];
                let s = [
                    [l * div + 2.0 * m * g[(0, 0)], m * (g[(0, 1)] + g[(1, 0)])],
                    [m * (g[(0, 1)] + g[(1, 0)]), l * div + 2.0 * m * g[(1, 1)]],
                ];
                let tr = [s[0][0] * normal[0] + s[0][1] * normal[1], s[1][0] * normal[0] + s[1][1] * normal[1]];
                let x = self.mesh.map_point(be.element, xi, eta);
                let pv = psi.eval(&x);
                total += w * (tr[0] * pv[0] + tr[1] * pv[1]);
                scale += w * (tr[0].hypot(tr[1])) * pv[0].hypot(pv[1]);
            }
        }
        (total, scale)
    }
}

/// Local coordinates along edge `be` at parameter `t` and their `t`-derivatives.
fn edge_param(be: &BoundaryEdge, t: f64) -> (f64, f64, f64, f64) {
    match be.local {
        0 => (t, 0.0, 1.0, 0.0),
        1 => (1.0 - t, t, -1.0, 1.0),
        _ => (0.0, 1.0 - t, 0.0, -1.0),
    }
}

/// All `v_i^alpha` and `v_0` of one configuration together with their energies.
#[derive(Debug, Clone)]
pub struct Subproblems {
    /// `basis[i][alpha]`
    pub basis: [Vec<FieldSolution>; 2],
    pub sums: Vec<FieldSolution>,
    pub outer: FieldSolution,
    pub n_rigid: usize,
    a: Vec<f64>,
    a_sum_first: Vec<f64>,
    a_sum_sum: Vec<f64>,
    b: [Vec<f64>; 2],
    b_sum: Vec<f64>,
}

/// Data set of `v_i^alpha`: the rigid motion on inclusion `i`, zero elsewhere,
/// plus `extra` on the remaining tags (used for the cusp cut).
pub fn basis_data(i: usize, motion: RigidMotion, extra: Option<(BoundaryTag, Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>)>) -> BoundaryData {
    let tag = if i == 0 { BoundaryTag::Inclusion1 } else { BoundaryTag::Inclusion2 };
    let mut d = BoundaryData::rigid(format!("psi on inclusion {}", i + 1), motion, &[tag]);
    if let Some((t, f)) = extra {
        d = d.on_arc(t, f);
    }
    d
}

impl Subproblems {
    /// Solves every `v_i^alpha` and `v_0` for outer data `phi`. `cusp` supplies the
    /// cut data of `v_i^alpha` on touching meshes.
    pub fn solve(
        problem: &ElasticityProblem,
        phi: &BoundaryData,
        cusp: Option<&dyn Fn(usize, usize) -> Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>>,
        starred: bool,
    ) -> Result<Self> {
        let basis = rigid_basis(2)?;
        let n = basis.len();
        let mut data = Vec::with_capacity(2 * n + 1);
        for i in 0..2 {
            for (alpha, &mot) in basis.motions.iter().enumerate() {
                let extra = cusp.map(|f| (BoundaryTag::CuspCut, f(i, alpha)));
                let kind = if starred { SolutionKind::StarBasis { i, alpha } } else { SolutionKind::Basis { i, alpha } };
                data.push((basis_data(i, mot, extra), kind));
            }
        }
        let mut outer_data = BoundaryData::zero(phi.name.clone());
        if let Some(p) = phi.pieces.iter().find(|p| p.0 == BoundaryTag::Outer) {
            outer_data = outer_data.on_arc(BoundaryTag::Outer, p.1.clone());
        }
        data.push((outer_data, if starred { SolutionKind::StarOuter } else { SolutionKind::Outer }));
        let mut sols = problem.solve_many(&data)?;
        let outer = sols.pop().unwrap();
        let second: Vec<FieldSolution> = sols.split_off(n);
        let first = sols;
        let sums: Vec<FieldSolution> = (0..n)
            .map(|a| FieldSolution::combine(&[(1.0, &first[a]), (1.0, &second[a])], SolutionKind::BasisSum { alpha: a }))
            .collect::<Result<_>>()?;
        let basis_arr = [first, second];
        let idx = |i: usize, a: usize, j: usize, b: usize| ((i * n + a) * 2 + j) * n + b;
        let mut a = vec![0.0; 4 * n * n];
        for i in 0..2 {
            for al in 0..n {
                for j in 0..2 {
                    for be in 0..n {
                        a[idx(i, al, j, be)] = problem.energy(&basis_arr[i][al], &basis_arr[j][be])?;
                    }
                }
            }
        }
        let mut a_sum_first = vec![0.0; n * n];
        let mut a_sum_sum = vec![0.0; n * n];
        for al in 0..n {
            for be in 0..n {
                a_sum_first[al * n + be] = problem.energy(&sums[al], &basis_arr[0][be])?;
                a_sum_sum[al * n + be] = problem.energy(&sums[al], &sums[be])?;
            }
        }
        let mut b = [vec![0.0; n], vec![0.0; n]];
        for i in 0..2 {
            for be in 0..n {
                b[i][be] = -problem.energy(&basis_arr[i][be], &outer)?;
            }
        }
        let b_sum = (0..n).map(|be| problem.energy(&sums[be], &outer).map(|e| -e)).collect::<Result<Vec<_>>>()?;
        Ok(Self { basis: basis_arr, sums, outer, n_rigid: n, a, a_sum_first, a_sum_sum, b, b_sum })
    }

    /// `a_ij^{alpha beta}` (zero-based indices).
    pub fn a(&self, i: usize, j: usize, alpha: usize, beta: usize) -> f64 {
        let n = self.n_rigid;
        self.a[((i * n + alpha) * 2 + j) * n + beta]
    }

    /// `sum_i a_{i1}^{alpha beta}`, from the energy of the sum field.
    pub fn a_sum_i1(&self, alpha: usize, beta: usize) -> f64 {
        self.a_sum_first[alpha * self.n_rigid + beta]
    }

    /// `sum_{i,j} a_ij^{alpha beta}`.
    pub fn a_sum_all(&self, alpha: usize, beta: usize) -> f64 {
        self.a_sum_sum[alpha * self.n_rigid + beta]
    }

    /// `b_i^beta`.
    pub fn b(&self, i: usize, beta: usize) -> f64 {
        self.b[i][beta]
    }

    /// `sum_i b_i^beta`.
    pub fn b_sum(&self, beta: usize) -> f64 {
        self.b_sum[beta]
    }
}

/// `a_ij^{alpha beta}` with one-based indices as they are usually written.
pub fn compute_a(i: usize, j: usize, alpha: usize, beta: usize, sub: &Subproblems) -> Result<f64> {
    let n = sub.n_rigid;
    if !(1..=2).contains(&i) || !(1..=2).contains(&j) || !(1..=n).contains(&alpha) || !(1..=n).contains(&beta) {
        return Err(invalid(format!("a_{i}{j}^{alpha}{beta} is out of range")));
    }
    Ok(sub.a(i - 1, j - 1, alpha - 1, beta - 1))
}

/// `b_i^beta = -a(v_i^beta, w)` for a lift `w` of the outer data (one-based indices).
pub fn compute_b(problem: &ElasticityProblem, i: usize, beta: usize, sub: &Subproblems, lift: &FieldSolution) -> Result<f64> {
    let n = sub.n_rigid;
    if !(1..=2).contains(&i) || !(1..=n).contains(&beta) {
        return Err(invalid(format!("b_{i}^{beta} is out of range")));
    }
    Ok(-problem.energy(&sub.basis[i - 1][beta - 1], lift)?)
}

/// Coefficients of the decomposition and the block system they solve.
#[derive(Debug, Clone)]
pub struct CoefficientSolution {
    /// `C_1^alpha - C_2^alpha`
    pub x1: Vec<f64>,
    /// `C_2^alpha`
    pub x2: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// Reciprocal condition number (smallest over largest singular value).
    pub rcond: f64,
    pub matrix: DMatrix<f64>,
    /// Traction moments over each inclusion against each rigid motion, relative to their scale.
    pub flux_residuals: Vec<f64>,
}

impl CoefficientSolution {
    pub fn c1(&self) -> Vec<f64> {
        self.x1.iter().zip(&self.x2).map(|(a, b)| a + b).collect()
    }
    pub fn c2(&self) -> Vec<f64> {
        self.x2.clone()
    }
}

/// Assembles `[[A, B], [C, D]]` (rows are the test function, columns the unknown)
/// and the two right-hand sides.
pub fn block_system(sub: &Subproblems) -> (DMatrix<f64>, DVector<f64>) {
    let n = sub.n_rigid;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let mut rhs = DVector::zeros(2 * n);
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] = sub.a(0, 0, c, r);
            m[(r, n + c)] = sub.a_sum_i1(c, r);
            m[(n + r, c)] = sub.a_sum_i1(r, c);
            m[(n + r, n + c)] = sub.a_sum_all(c, r);
        }
        rhs[r] = sub.b(0, r);
        rhs[n + r] = sub.b_sum(r);
    }
    (m, rhs)
}

pub(crate) fn check_conditioning(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    let low = sv.min();
    let rcond = if top > 0.0 { low / top } else { 0.0 };
    if !(rcond > 1e-12) {
        return Err(Error::Singular(format!("{what} is singular (reciprocal condition {rcond:e})")));
    }
    Ok(rcond)
}

/// Solves the limit problem with rigid inclusions for outer data `phi`.
pub fn solve_limit_problem(problem: &ElasticityProblem, phi: &BoundaryData) -> Result<(FieldSolution, CoefficientSolution, Subproblems)> {
    let sub = Subproblems::solve(problem, phi, None, false)?;
    let (coeffs, u) = coefficients_from(problem, &sub)?;
    Ok((u, coeffs, sub))
}

/// Block solve and reconstruction from already computed subproblems.
pub fn coefficients_from(problem: &ElasticityProblem, sub: &Subproblems) -> Result<(CoefficientSolution, FieldSolution)> {
    let n = sub.n_rigid;
    let (m, rhs) = block_system(sub);
    let rcond = check_conditioning(&m, "coefficient block system")?;
    let x = m.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular("coefficient block system".into()))?;
    let x1: Vec<f64> = (0..n).map(|a| x[a]).collect();
    let x2: Vec<f64> = (0..n).map(|a| x[n + a]).collect();
    let mut terms: Vec<(f64, &FieldSolution)> = Vec::with_capacity(2 * n + 1);
    for a in 0..n {
        terms.push((x1[a], &sub.basis[0][a]));
        terms.push((x2[a], &sub.sums[a]));
    }
    terms.push((1.0, &sub.outer));
    let u = FieldSolution::combine(&terms, SolutionKind::Composite)?;
    let basis = rigid_basis(2)?;
    let mut flux_residuals = Vec::with_capacity(2 * n);
    for tag in [BoundaryTag::Inclusion1, BoundaryTag::Inclusion2] {
        for mot in &basis.motions {
            let (v, s) = problem.flux_moment(&u, tag, mot);
            flux_residuals.push(if s > 0.0 { v.abs() / s } else { v.abs() });
        }
    }
    let coeffs = CoefficientSolution {
        x1,
        x2,
        y1: (0..n).map(|r| rhs[r]).collect(),
        y2: (0..n).map(|r| rhs[n + r]).collect(),
        rcond,
        matrix: m,
        flux_residuals,
    };
    Ok((coeffs, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::rectangle(0.0, 1.0, 0.0, 1.0, n, n).unwrap())
    }

    #[test]
    fn quadrature_integrates_quartics() {
        let s: f64 = QUAD_POINTS.iter().map(|q| q.2 * q.0.powi(4)).sum();
        assert!((s - 1.0 / 30.0).abs() < 1e-15);
        let s2: f64 = QUAD_POINTS.iter().map(|q| q.2 * q.0 * q.0 * q.1 * q.1).sum();
        assert!((s2 - 1.0 / 180.0).abs() < 1e-15);
    }

    #[test]
    fn manufactured_energy() {
        let mesh = square(3);
        let p = LameParameters::new(1.0, 1.0, 2).unwrap();
        let u = FieldSolution::from_fn(mesh, |x| [x[0] * x[0], 0.0], SolutionKind::Dirichlet("x1^2".into()));
        let e = energy_inner(&u, &u, &p).unwrap();
        assert!((e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn linear_patch() {
        let mesh = square(4);
        let p = LameParameters::new(2.0, 0.7, 2).unwrap();
        let prob = ElasticityProblem::new(mesh.clone(), p).unwrap();
        let data = BoundaryData::zero("linear").on(BoundaryTag::Outer, |x| [0.3 * x[0] - 0.2 * x[1] + 1.0, 0.5 * x[0] + 0.1 * x[1]]);
        let u = prob.solve_dirichlet(&data, SolutionKind::Dirichlet("linear".into())).unwrap();
        for (i, x) in mesh.nodes.iter().enumerate() {
            let v = u.node_value(i);
            assert!((v[0] - (0.3 * x[0] - 0.2 * x[1] + 1.0)).abs() < 1e-10);
            assert!((v[1] - (0.5 * x[0] + 0.1 * x[1])).abs() < 1e-10);
        }
        let g = u.gradient_at([0.37, 0.61]).unwrap();
        assert!((g[(0, 1)] + 0.2).abs() < 1e-10 && (g[(1, 0)] - 0.5).abs() < 1e-10);
    }
}
