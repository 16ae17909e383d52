//! Quadratic triangle meshes of the matrix region.
//!
//! The narrow gap `|x1| <= R` is filled with a structured block of layered
//! triangles. The rest of the region between the inclusions and the outer circle
//! is a constrained Delaunay triangulation that shares the block's end nodes.
//! Midside nodes on curved boundaries are snapped onto the analytic curves.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainSpec, InclusionShape};

/// Which boundary a node lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    Outer,
    Inclusion1,
    Inclusion2,
    /// Artificial cut `|x1| = eta` closing the truncated cusp.
    CuspCut,
}

impl BoundaryTag {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryTag::Interior => "interior",
            BoundaryTag::Outer => "outer",
            BoundaryTag::Inclusion1 => "inclusion1",
            BoundaryTag::Inclusion2 => "inclusion2",
            BoundaryTag::CuspCut => "cusp_cut",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "interior" => BoundaryTag::Interior,
            "outer" => BoundaryTag::Outer,
            "inclusion1" => BoundaryTag::Inclusion1,
            "inclusion2" => BoundaryTag::Inclusion2,
            "cusp_cut" => BoundaryTag::CuspCut,
            other => return Err(Error::Parse(format!("unknown boundary tag '{other}'"))),
        })
    }

    pub fn is_boundary(&self) -> bool {
        *self != BoundaryTag::Interior
    }
}

/// Mesh size controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshGrading {
    /// Element layers across the gap thickness.
    pub n_layers: usize,
    /// Boundary spacing on the inclusions away from the gap.
    pub target_h: f64,
    /// Geometric growth of the gap column widths.
    pub gap_refinement_ratio: f64,
    /// First gap column width is `scale / first_column_divisor`, with `scale = (eps/tau)^{1/m}` or `eta`.
    pub first_column_divisor: f64,
    /// Largest accepted element aspect ratio.
    pub max_aspect: f64,
    /// Aspect limit of touching meshes, whose layers thin out like `|x'|^m` towards the cut.
    pub cusp_max_aspect: f64,
    /// Minimum angle requested from the Delaunay refinement, in degrees.
    pub min_angle_deg: f64,
}

impl Default for MeshGrading {
    fn default() -> Self {
        Self {
            n_layers: 8,
            target_h: 0.1,
            gap_refinement_ratio: 1.15,
            first_column_divisor: 8.0,
            max_aspect: 2000.0,
            cusp_max_aspect: 1e9,
            min_angle_deg: 25.0,
        }
    }
}

impl MeshGrading {
    /// Uniform refinement by `level` halvings.
    pub fn at_level(&self, level: u32) -> Self {
        let f = 2f64.powi(level as i32);
        Self {
            n_layers: self.n_layers * (1 << level),
            target_h: self.target_h / f,
            gap_refinement_ratio: 1.0 + (self.gap_refinement_ratio - 1.0) / f,
            first_column_divisor: self.first_column_divisor * f,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(invalid("n_layers must be positive"));
        }
        if !(self.target_h > 0.0) || !(self.gap_refinement_ratio >= 1.0) || !(self.first_column_divisor >= 1.0) {
            return Err(invalid("mesh grading needs target_h > 0, gap_refinement_ratio >= 1, first_column_divisor >= 1"));
        }
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg < 34.0) {
            return Err(invalid("min_angle_deg must lie in (0, 34)"));
        }
        Ok(())
    }
}

/// Boundary side of an element: local edge `k` joins local vertices `k` and `(k+1) % 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub element: usize,
    pub local: usize,
    pub tag: BoundaryTag,
}

/// Size and quality figures of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshStats {
    pub nodes: usize,
    pub vertices: usize,
    pub elements: usize,
    pub gap_elements: usize,
    pub exterior_nodes: usize,
    pub max_aspect: f64,
    pub min_jacobian: f64,
}

/// Structured part of the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GapBlock {
    pub columns: Vec<f64>,
    pub n_layers: usize,
    pub half_width: f64,
}

/// Six-node triangles; local nodes are three vertices then the midsides of
/// edges 0-1, 1-2, 2-0.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 6]>,
    pub tags: Vec<BoundaryTag>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub epsilon: f64,
    pub gap: Option<GapBlock>,
    pub quadrature_order: usize,
    locator: Locator,
}

const EDGE_MID: [usize; 3] = [3, 4, 5];

/// Positions `x_start = x_0 < ... < x_n = R` with geometrically growing widths.
fn column_positions(start: f64, end: f64, first: f64, ratio: f64, cap: f64) -> Vec<f64> {
    let mut xs = vec![start];
    let mut w = first.min(cap);
    while *xs.last().unwrap() < end {
        let next = xs.last().unwrap() + w;
        xs.push(next);
        w = (w * ratio).min(cap);
    }
    let over = xs.last().unwrap() - start;
    if xs.len() > 2 && (xs[xs.len() - 1] - end) > 0.5 * (xs[xs.len() - 1] - xs[xs.len() - 2]) {
        xs.pop();
    }
    let last = *xs.last().unwrap() - start;
    let scale = if xs.len() > 1 { (end - start) / last } else { (end - start) / over };
    if xs.len() == 1 {
        xs.push(end);
    }
    for x in xs.iter_mut() {
        *x = start + (*x - start) * scale;
    }
    *xs.last_mut().unwrap() = end;
    xs
}

/// Samples the arc `theta in [t0, t1]` of `shape` with spacing that grows
/// linearly from `h_end` at both ends up to `h_max`.
fn graded_arc(shape: &InclusionShape, t0: f64, t1: f64, h_end: f64, h_max: f64, growth: f64) -> Vec<[f64; 2]> {
    const FINE: usize = 8192;
    let thetas: Vec<f64> = (0..=FINE).map(|k| t0 + (t1 - t0) * k as f64 / FINE as f64).collect();
    let pts: Vec<[f64; 2]> = thetas.iter().map(|&t| shape.point(t)).collect();
    let mut s = vec![0.0; FINE + 1];
    for k in 1..=FINE {
        s[k] = s[k - 1] + ((pts[k][0] - pts[k - 1][0]).powi(2) + (pts[k][1] - pts[k - 1][1]).powi(2)).sqrt();
    }
    let total = s[FINE];
    let h = |x: f64| h_max.min(h_end + growth * x.min(total - x));
    let mut phi = vec![0.0; FINE + 1];
    for k in 1..=FINE {
        let mid = 0.5 * (s[k] + s[k - 1]);
        phi[k] = phi[k - 1] + (s[k] - s[k - 1]) / h(mid);
    }
    let n = (phi[FINE].round() as usize).max(2);
    let mut out = Vec::with_capacity(n + 1);
    out.push(pts[0]);
    let mut k = 1;
    for j in 1..n {
        let target = phi[FINE] * j as f64 / n as f64;
        while phi[k] < target {
            k += 1;
        }
        let f = (target - phi[k - 1]) / (phi[k] - phi[k - 1]);
        out.push(shape.point(thetas[k - 1] + f * (thetas[k] - thetas[k - 1])));
    }
    out.push(pts[FINE]);
    out
}

struct Builder {
    nodes: Vec<[f64; 2]>,
    tags: Vec<BoundaryTag>,
    tris: Vec<[usize; 3]>,
}

impl Builder {
    fn add(&mut self, p: [f64; 2], tag: BoundaryTag) -> usize {
        self.nodes.push(p);
        self.tags.push(tag);
        self.nodes.len() - 1
    }

    fn add_tri(&mut self, t: [usize; 3]) {
        let [a, b, c] = t;
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        self.tris.push(if area > 0.0 { t } else { [a, c, b] });
    }
}

/// Builds the quadratic mesh of `spec`'s matrix region.
pub fn build_mesh(spec: &DomainSpec, grading: &MeshGrading) -> Result<Mesh> {
    grading.validate()?;
    let profile = &spec.profile;
    let eps = spec.epsilon;
    let r = profile.r_chart;
    let n = grading.n_layers;
    let (scale, start) = if spec.is_touching() {
        let eta = spec.eta.ok_or_else(|| invalid("touching mesh needs eta"))?;
        (eta, eta)
    } else {
        ((eps / profile.tau).powf(1.0 / profile.m).min(r), 0.0)
    };
    let cap = 0.5 * grading.target_h;
    let right = column_positions(start, r, scale / grading.first_column_divisor, grading.gap_refinement_ratio, cap);
    let mut columns: Vec<f64> = right.iter().rev().map(|x| -x).collect();
    if spec.is_touching() {
        columns.push(f64::NAN);
    } else {
        columns.pop();
    }
    columns.extend(right.iter().copied());

    let mut b = Builder { nodes: Vec::new(), tags: Vec::new(), tris: Vec::new() };
    let mut col_nodes: Vec<Option<Vec<usize>>> = Vec::with_capacity(columns.len());
    for &x in &columns {
        if x.is_nan() {
            col_nodes.push(None);
            continue;
        }
        let top = eps + profile.h1(&[x])?.value;
        let bot = profile.h2(&[x])?.value;
        let cut = spec.is_touching() && (x.abs() - start).abs() < 1e-15;
        let ids = (0..=n)
            .map(|k| {
                let (y, tag) = if k == 0 {
                    (bot, BoundaryTag::Inclusion2)
                } else if k == n {
                    (top, BoundaryTag::Inclusion1)
                } else {
                    let s = k as f64 / n as f64;
                    (bot + s * (top - bot), if cut { BoundaryTag::CuspCut } else { BoundaryTag::Interior })
                };
                b.add([x, y], tag)
            })
            .collect();
        col_nodes.push(Some(ids));
    }
    for w in col_nodes.windows(2) {
        if let (Some(l), Some(rr)) = (&w[0], &w[1]) {
            for k in 0..n {
                b.add_tri([l[k], rr[k], rr[k + 1]]);
                b.add_tri([l[k], rr[k + 1], l[k + 1]]);
            }
        }
    }
    let left_end = col_nodes.first().unwrap().clone().unwrap();
    let right_end = col_nodes.last().unwrap().clone().unwrap();

    let h_end = (right[right.len() - 1] - right[right.len() - 2]).min(grading.target_h);
    let growth = 0.25;
    let inc1 = spec.inclusion1;
    let inc2 = spec.inclusion2;
    let p1r = b.nodes[*right_end.last().unwrap()];
    let p2r = b.nodes[right_end[0]];
    let t1r = inc1.angle_of(p1r);
    let arc1 = graded_arc(&inc1, t1r, std::f64::consts::PI - t1r, h_end, grading.target_h, growth);
    let t2r = inc2.angle_of(p2r);
    let arc2 = graded_arc(&inc2, std::f64::consts::PI - t2r, t2r + std::f64::consts::TAU, h_end, grading.target_h, growth);

    // Inner loop: arc 1 (right to left over the top), left segment downwards,
    // arc 2 (left to right under the bottom), right segment upwards.
    let mut inner: Vec<usize> = vec![*right_end.last().unwrap()];
    for p in &arc1[1..arc1.len() - 1] {
        inner.push(b.add(*p, BoundaryTag::Inclusion1));
    }
    inner.extend(left_end.iter().rev());
    for p in &arc2[1..arc2.len() - 1] {
        inner.push(b.add(*p, BoundaryTag::Inclusion2));
    }
    inner.extend(right_end[..n].iter());

    let outer_h = 3.0 * grading.target_h;
    let n_outer = ((std::f64::consts::TAU * spec.outer_radius / outer_h).ceil() as usize).max(16);
    let c = spec.outer_center;
    let outer: Vec<usize> = (0..n_outer)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n_outer as f64;
            b.add([c[0] + spec.outer_radius * t.cos(), c[1] + spec.outer_radius * t.sin()], BoundaryTag::Outer)
        })
        .collect();

    // Exterior triangulation over the loop vertices only.
    let mut local_of: HashMap<usize, usize> = HashMap::new();
    let mut global_of: Vec<usize> = Vec::new();
    let mut pts = Vec::new();
    let mut edges = Vec::new();
    for lp in [&inner, &outer] {
        let base = global_of.len();
        for &g in lp.iter() {
            local_of.insert(g, global_of.len());
            global_of.push(g);
            pts.push(Point2::new(b.nodes[g][0], b.nodes[g][1]));
        }
        for k in 0..lp.len() {
            edges.push([base + k, base + (k + 1) % lp.len()]);
        }
    }
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(pts, edges)
        .map_err(|e| Error::Mesh(format!("constrained triangulation failed: {e:?}")))?;
    if cdt.num_vertices() != global_of.len() {
        return Err(Error::Mesh("duplicate boundary vertices".into()));
    }
    let spacing_budget = 40 * global_of.len() + 10_000;
    let result = cdt.refine(
        RefinementParameters::<f64>::new()
            .keep_constraint_edges()
            .exclude_outer_faces(true)
            .with_angle_limit(AngleLimit::from_deg(grading.min_angle_deg))
            .with_max_additional_vertices(spacing_budget),
    );
    let excluded: HashSet<_> = result.excluded_faces.iter().copied().collect();
    let mut vertex_map: Vec<usize> = Vec::with_capacity(cdt.num_vertices());
    for (k, v) in cdt.vertices().enumerate() {
        if k < global_of.len() {
            vertex_map.push(global_of[k]);
        } else {
            let p = v.position();
            vertex_map.push(b.add([p.x, p.y], BoundaryTag::Interior));
        }
    }
    for f in cdt.inner_faces() {
        if excluded.contains(&f.fix()) {
            continue;
        }
        let vs = f.vertices().map(|v| vertex_map[v.fix().index()]);
        b.add_tri(vs);
    }
    let n_vertices = b.nodes.len();

    // Midside nodes.
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut elements = Vec::with_capacity(b.tris.len());
    let mut edge_count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for (e, t) in b.tris.iter().enumerate() {
        let mut el = [t[0], t[1], t[2], 0, 0, 0];
        for k in 0..3 {
            let (a, c2) = (t[k], t[(k + 1) % 3]);
            let key = (a.min(c2), a.max(c2));
            let entry = edge_count.entry(key).or_insert((0, e, k));
            entry.0 += 1;
            let id = *mid.entry(key).or_insert_with(|| {
                let pa = b.nodes[a];
                let pc = b.nodes[c2];
                b.nodes.push([0.5 * (pa[0] + pc[0]), 0.5 * (pa[1] + pc[1])]);
                b.tags.push(BoundaryTag::Interior);
                b.nodes.len() - 1
            });
            el[EDGE_MID[k]] = id;
        }
        elements.push(el);
    }
    let mut boundary_edges = Vec::new();
    for (&(a, c2), &(count, e, k)) in &edge_count {
        if count != 1 {
            continue;
        }
        let (ta, tc) = (b.tags[a], b.tags[c2]);
        let tag = classify_edge(ta, tc, b.nodes[a], b.nodes[c2], spec.is_touching())
            .ok_or_else(|| Error::Mesh(format!("boundary edge {a}-{c2} joins {ta:?} and {tc:?}")))?;
        let m = mid[&(a, c2)];
        b.tags[m] = tag;
        let pa = b.nodes[a];
        let pc = b.nodes[c2];
        let xm = 0.5 * (pa[0] + pc[0]);
        b.nodes[m] = match tag {
            BoundaryTag::Inclusion1 if xm.abs() <= r && in_gap_band(spec, [xm, 0.5 * (pa[1] + pc[1])]) => {
                [xm, eps + profile.h1(&[xm])?.value]
            }
            BoundaryTag::Inclusion2 if xm.abs() <= r && in_gap_band(spec, [xm, 0.5 * (pa[1] + pc[1])]) => {
                [xm, profile.h2(&[xm])?.value]
            }
            BoundaryTag::Inclusion1 => inc1.project(b.nodes[m]),
            BoundaryTag::Inclusion2 => inc2.project(b.nodes[m]),
            BoundaryTag::Outer => {
                let p = b.nodes[m];
                let t = (p[1] - c[1]).atan2(p[0] - c[0]);
                [c[0] + spec.outer_radius * t.cos(), c[1] + spec.outer_radius * t.sin()]
            }
            _ => b.nodes[m],
        };
        boundary_edges.push(BoundaryEdge { element: e, local: k, tag });
    }
    boundary_edges.sort_by_key(|be| (be.element, be.local));
    let _ = n_vertices;
    let mesh = Mesh::assemble(
        b.nodes,
        elements,
        b.tags,
        boundary_edges,
        eps,
        Some(GapBlock { columns: columns.into_iter().filter(|x| !x.is_nan()).collect(), n_layers: n, half_width: r }),
    );
    let stats = mesh.stats(spec);
    if stats.min_jacobian <= 0.0 {
        return Err(Error::Mesh(format!("inverted element (min Jacobian {:e})", stats.min_jacobian)));
    }
    let limit = if spec.is_touching() { grading.cusp_max_aspect } else { grading.max_aspect };
    if stats.max_aspect > limit {
        return Err(Error::Mesh(format!("element aspect ratio {:.1} exceeds the limit {limit:.1}", stats.max_aspect)));
    }
    Ok(mesh)
}

fn in_gap_band(spec: &DomainSpec, p: [f64; 2]) -> bool {
    let r = spec.profile.r_chart;
    p[0].abs() <= r * (1.0 + 1e-12) && p[1].abs() < 0.5 * spec.inclusion1.r.min(spec.inclusion2.r)
}

fn classify_edge(a: BoundaryTag, c: BoundaryTag, pa: [f64; 2], pc: [f64; 2], touching: bool) -> Option<BoundaryTag> {
    use BoundaryTag::*;
    match (a, c) {
        (x, y) if x == y && x != Interior => Some(x),
        (CuspCut, Inclusion1 | Inclusion2) | (Inclusion1 | Inclusion2, CuspCut) => Some(CuspCut),
        (Inclusion1, Inclusion2) | (Inclusion2, Inclusion1) if touching && (pa[0] - pc[0]).abs() < 1e-14 => {
            Some(CuspCut)
        }
        _ => None,
    }
}

/// Uniform bucket grid over element bounding boxes.
#[derive(Debug, Clone, Default)]
struct Locator {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn build(nodes: &[[f64; 2]], elements: &[[usize; 6]]) -> Self {
        if elements.is_empty() {
            return Self::default();
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
        let nx_target = ((elements.len() as f64).sqrt().ceil() as usize).clamp(1, 1024);
        let cell = span / nx_target as f64 * 1.000001;
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (e, el) in elements.iter().enumerate() {
            let (elo, ehi) = bbox(nodes, el);
            let i0 = ((elo[0] - lo[0]) / cell).floor().max(0.0) as usize;
            let i1 = (((ehi[0] - lo[0]) / cell).floor() as usize).min(nx - 1);
            let j0 = ((elo[1] - lo[1]) / cell).floor().max(0.0) as usize;
            let j1 = (((ehi[1] - lo[1]) / cell).floor() as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(e as u32);
                }
            }
        }
        Self { origin: lo, cell, nx, ny, buckets }
    }

    fn candidates(&self, p: [f64; 2]) -> &[u32] {
        if self.buckets.is_empty() {
            return &[];
        }
        let fi = (p[0] - self.origin[0]) / self.cell;
        let fj = (p[1] - self.origin[1]) / self.cell;
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return &[];
        }
        &self.buckets[fj as usize * self.nx + fi as usize]
    }
}

fn bbox(nodes: &[[f64; 2]], el: &[usize; 6]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &n in el {
        for k in 0..2 {
            lo[k] = lo[k].min(nodes[n][k]);
            hi[k] = hi[k].max(nodes[n][k]);
        }
    }
    // Curved sides bulge at most a quarter of the midside offset beyond the hull.
    let pad = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    ([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad])
}

/// P2 shape functions and local derivatives at `(xi, eta)`.
pub fn shape_p2(xi: f64, eta: f64) -> ([f64; 6], [[f64; 2]; 6]) {
    let l1 = 1.0 - xi - eta;
    let (l2, l3) = (xi, eta);
    let n = [
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        l3 * (2.0 * l3 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l3,
        4.0 * l3 * l1,
    ];
    let d = [
        [1.0 - 4.0 * l1, 1.0 - 4.0 * l1],
        [4.0 * l2 - 1.0, 0.0],
        [0.0, 4.0 * l3 - 1.0],
        [4.0 * (l1 - l2), -4.0 * l2],
        [4.0 * l3, 4.0 * l2],
        [-4.0 * l3, 4.0 * (l1 - l3)],
    ];
    (n, d)
}

impl Mesh {
    fn assemble(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 6]>,
        tags: Vec<BoundaryTag>,
        boundary_edges: Vec<BoundaryEdge>,
        epsilon: f64,
        gap: Option<GapBlock>,
    ) -> Self {
        let locator = Locator::build(&nodes, &elements);
        Self { nodes, elements, tags, boundary_edges, epsilon, gap, quadrature_order: 4, locator }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Jacobian matrix `[[dx/dxi, dx/deta], [dy/dxi, dy/deta]]` of element `e`.
    pub fn jacobian(&self, e: usize, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let (_, d) = shape_p2(xi, eta);
        let mut j = [[0.0; 2]; 2];
        for (a, &n) in self.elements[e].iter().enumerate() {
            for r in 0..2 {
                for c in 0..2 {
                    j[r][c] += self.nodes[n][r] * d[a][c];
                }
            }
        }
        j
    }

    pub fn map_point(&self, e: usize, xi: f64, eta: f64) -> [f64; 2] {
        let (n, _) = shape_p2(xi, eta);
        let mut p = [0.0; 2];
        for (a, &id) in self.elements[e].iter().enumerate() {
            p[0] += n[a] * self.nodes[id][0];
            p[1] += n[a] * self.nodes[id][1];
        }
        p
    }

    /// Local coordinates of `p` in element `e` when it lies inside (with tolerance).
    pub fn inverse_map(&self, e: usize, p: [f64; 2]) -> Option<(f64, f64)> {
        let el = &self.elements[e];
        let v = |k: usize| self.nodes[el[k]];
        let (a, b2, c) = (v(0), v(1), v(2));
        let det = (b2[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b2[1] - a[1]);
        let mut xi = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let mut eta = ((b2[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b2[1] - a[1])) / det;
        for _ in 0..30 {
            let q = self.map_point(e, xi, eta);
            let j = self.jacobian(e, xi, eta);
            let dj = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let rx = p[0] - q[0];
            let ry = p[1] - q[1];
            let dxi = (j[1][1] * rx - j[0][1] * ry) / dj;
            let deta = (-j[1][0] * rx + j[0][0] * ry) / dj;
            xi += dxi;
            eta += deta;
            if dxi.abs() + deta.abs() < 1e-14 {
                break;
            }
        }
        let tol = 1e-10;
        if xi >= -tol && eta >= -tol && xi + eta <= 1.0 + tol {
            Some((xi, eta))
        } else {
            None
        }
    }

    /// The element containing `p` and the local coordinates of `p` in it.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, f64, f64)> {
        for &e in self.locator.candidates(p) {
            if let Some((xi, eta)) = self.inverse_map(e as usize, p) {
                return Some((e as usize, xi, eta));
            }
        }
        None
    }

    /// Nodes of a local edge: two ends and the midside.
    pub fn edge_nodes(&self, be: &BoundaryEdge) -> [usize; 3] {
        let el = &self.elements[be.element];
        [el[be.local], el[(be.local + 1) % 3], el[EDGE_MID[be.local]]]
    }

    pub fn in_gap_block(&self, p: [f64; 2], spec: &DomainSpec) -> bool {
        let r = spec.profile.r_chart;
        if p[0].abs() > r * (1.0 + 1e-12) {
            return false;
        }
        let x = p[0].clamp(-r, r);
        let (Ok(top), Ok(bot)) = (spec.profile.h1(&[x]), spec.profile.h2(&[x])) else {
            return false;
        };
        p[1] >= bot.value - 1e-12 && p[1] <= self.epsilon + top.value + 1e-12
    }

    pub fn stats(&self, spec: &DomainSpec) -> MeshStats {
        let vertices: HashSet<usize> = self.elements.iter().flat_map(|e| e[..3].iter().copied()).collect();
        let mut max_aspect: f64 = 0.0;
        let mut min_jacobian = f64::INFINITY;
        let mut gap_elements = 0;
        for (e, el) in self.elements.iter().enumerate() {
            let p: Vec<[f64; 2]> = el[..3].iter().map(|&n| self.nodes[n]).collect();
            let len = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let longest = len(p[0], p[1]).max(len(p[1], p[2])).max(len(p[2], p[0]));
            let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
            let height = 2.0 * area.abs() / longest;
            max_aspect = max_aspect.max(longest / height);
            for (xi, eta) in crate::fem::QUAD_POINTS.iter().map(|q| (q.0, q.1)).chain([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]) {
                let j = self.jacobian(e, xi, eta);
                let dj = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                min_jacobian = min_jacobian.min(dj / (2.0 * area.abs()));
            }
            let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            if self.in_gap_block(c, spec) {
                gap_elements += 1;
            }
        }
        let exterior_nodes = self.nodes.iter().filter(|&&p| !self.in_gap_block(p, spec)).count();
        MeshStats {
            nodes: self.nodes.len(),
            vertices: vertices.len(),
            elements: self.elements.len(),
            gap_elements,
            exterior_nodes,
            max_aspect,
            min_jacobian,
        }
    }

    /// Number of distinct elements met by the vertical segment across the gap at `x1`.
    pub fn layers_at(&self, spec: &DomainSpec, x1: f64) -> Result<usize> {
        let top = self.epsilon + spec.profile.h1(&[x1])?.value;
        let bot = spec.profile.h2(&[x1])?.value;
        let n = 64 * self.gap.as_ref().map_or(8, |g| g.n_layers);
        let mut seen = Vec::new();
        for k in 0..n {
            let y = bot + (top - bot) * (k as f64 + 0.5) / n as f64;
            if let Some((e, _, _)) = self.locate([x1, y]) {
                if seen.last() != Some(&e) {
                    seen.push(e);
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        Ok(seen.len())
    }

    /// Largest deviation of inclusion-tagged nodes from their analytic curve, in gauge units.
    pub fn boundary_deviation(&self, spec: &DomainSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, t) in self.nodes.iter().zip(&self.tags) {
            let dev = match t {
                BoundaryTag::Inclusion1 => (spec.inclusion1.gauge(*p) - spec.inclusion1.r).abs(),
                BoundaryTag::Inclusion2 => (spec.inclusion2.gauge(*p) - spec.inclusion2.r).abs(),
                BoundaryTag::Outer => {
                    let c = spec.outer_center;
                    (((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - spec.outer_radius).abs()
                }
                _ => 0.0,
            };
            worst = worst.max(dev);
        }
        worst
    }

    /// Plain-text export: `nodes`, `elements` and `tags` tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# lamegap mesh v1");
        let _ = writeln!(s, "epsilon {:.16e}", self.epsilon);
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.16e} {:.16e}", p[0], p[1]);
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for (i, e) in self.elements.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {} {} {} {}", e[0], e[1], e[2], e[3], e[4], e[5]);
        }
        let tagged: Vec<(usize, &BoundaryTag)> = self.tags.iter().enumerate().filter(|(_, t)| t.is_boundary()).collect();
        let _ = writeln!(s, "tags {}", tagged.len());
        for (i, t) in tagged {
            let _ = writeln!(s, "{i} {}", t.name());
        }
        let _ = writeln!(s, "edges {}", self.boundary_edges.len());
        for be in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", be.element, be.local, be.tag.name());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let perr = |m: &str| Error::Parse(format!("mesh file: {m}"));
        let header = |name: &str, lines: &mut dyn Iterator<Item = &str>| -> Result<String> {
            let l = lines.next().ok_or_else(|| perr(&format!("missing '{name}' section")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(perr(&format!("expected '{name}', found '{l}'")));
            }
            it.next().map(str::to_string).ok_or_else(|| perr(&format!("'{name}' needs a value")))
        };
        let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| perr(&format!("bad number '{s}'"))) };
        let idx = |s: &str| -> Result<usize> { s.parse::<usize>().map_err(|_| perr(&format!("bad index '{s}'"))) };
        let epsilon = num(&header("epsilon", &mut lines)?)?;
        let nn = idx(&header("nodes", &mut lines)?)?;
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let l = lines.next().ok_or_else(|| perr("truncated node table"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(perr(&format!("bad node line '{l}'")));
            }
            nodes.push([num(f[1])?, num(f[2])?]);
        }
        let ne = idx(&header("elements", &mut lines)?)?;
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let l = lines.next().ok_or_else(|| perr("truncated element table"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 7 {
                return Err(perr(&format!("bad element line '{l}'")));
            }
            let mut el = [0usize; 6];
            for k in 0..6 {
                el[k] = idx(f[k + 1])?;
                if el[k] >= nn {
                    return Err(perr(&format!("node index {} out of range", el[k])));
                }
            }
            elements.push(el);
        }
        let nt = idx(&header("tags", &mut lines)?)?;
        let mut tags = vec![BoundaryTag::Interior; nn];
        for _ in 0..nt {
            let l = lines.next().ok_or_else(|| perr("truncated tag table"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 2 {
                return Err(perr(&format!("bad tag line '{l}'")));
            }
            let i = idx(f[0])?;
            if i >= nn {
                return Err(perr(&format!("tagged node {i} out of range")));
            }
            tags[i] = BoundaryTag::parse(f[1])?;
        }
        let nb = idx(&header("edges", &mut lines)?)?;
        let mut boundary_edges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let l = lines.next().ok_or_else(|| perr("truncated edge table"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(perr(&format!("bad edge line '{l}'")));
            }
            let element = idx(f[0])?;
            let local = idx(f[1])?;
            if element >= ne || local > 2 {
                return Err(perr(&format!("bad edge reference '{l}'")));
            }
            boundary_edges.push(BoundaryEdge { element, local, tag: BoundaryTag::parse(f[2])? });
        }
        Ok(Self::assemble(nodes, elements, tags, boundary_edges, epsilon, None))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Straight-sided single-triangle-pair mesh of the rectangle `[x0,x1] x [y0,y1]`
    /// split into `nx * ny` cells, every boundary node tagged `Outer`.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x1 > x0 && y1 > y0) {
            return Err(invalid("rectangle mesh needs positive extents and cell counts"));
        }
        let (gx, gy) = (2 * nx + 1, 2 * ny + 1);
        let mut nodes = Vec::with_capacity(gx * gy);
        let mut tags = Vec::with_capacity(gx * gy);
        for j in 0..gy {
            for i in 0..gx {
                nodes.push([x0 + (x1 - x0) * i as f64 / (gx - 1) as f64, y0 + (y1 - y0) * j as f64 / (gy - 1) as f64]);
                let edge = i == 0 || j == 0 || i == gx - 1 || j == gy - 1;
                tags.push(if edge { BoundaryTag::Outer } else { BoundaryTag::Interior });
            }
        }
        let id = |i: usize, j: usize| j * gx + i;
        let mut elements = Vec::new();
        for cj in 0..ny {
            for ci in 0..nx {
                let (i, j) = (2 * ci, 2 * cj);
                elements.push([id(i, j), id(i + 2, j), id(i + 2, j + 2), id(i + 1, j), id(i + 2, j + 1), id(i + 1, j + 1)]);
                elements.push([id(i, j), id(i + 2, j + 2), id(i, j + 2), id(i + 1, j + 1), id(i + 1, j + 2), id(i, j + 1)]);
            }
        }
        let mut boundary_edges = Vec::new();
        for (e, el) in elements.iter().enumerate() {
            for k in 0..3 {
                let m = el[EDGE_MID[k]];
                let (a, b2) = (el[k], el[(k + 1) % 3]);
                if tags[a].is_boundary() && tags[b2].is_boundary() && tags[m].is_boundary() {
                    boundary_edges.push(BoundaryEdge { element: e, local: k, tag: BoundaryTag::Outer });
                }
            }
        }
        Ok(Self::assemble(nodes, elements, tags, boundary_edges, 0.0, None))
    }
}
