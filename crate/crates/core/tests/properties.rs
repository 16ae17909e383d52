//! Randomized invariants of the algebra, the gap formulas, the factor matrices and the harness.

use std::sync::{Arc, OnceLock};

use lamegap::asymptotic::{aux_grad_u1, aux_u1, aux_u2, constants, general_aux_v, AffineField};
use lamegap::elasticity::{rigid_basis, LameParameters, RigidMotion};
use lamegap::factors::{coeff_expansion, determinant, FactorMatrices, Regime, StarredQuantities};
use lamegap::fem::{FieldSolution, SolutionKind};
use lamegap::geometry::{curvilinear_square_profile, DomainSpec, GapProfile};
use lamegap::harness::config::ExperimentConfig;
use lamegap::harness::ratefit::fit_rate;
use lamegap::mesh::{build_mesh, Mesh, MeshGrading};
use lamegap::reconstruction::{compare, AsymptoticModel, Probe};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn lame(d: usize) -> impl Strategy<Value = LameParameters> {
    (0.1f64..5.0, -0.9f64..5.0).prop_filter_map("strongly elliptic", move |(mu, t)| {
        let lambda = t * 2.0 * mu / d as f64;
        LameParameters::new(lambda, mu, d).ok()
    })
}

fn matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, d * d).prop_map(move |v| DMatrix::from_vec(d, d, v))
}

fn tensor(p: &LameParameters, i: usize, j: usize, k: usize, l: usize) -> f64 {
    let dl = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    p.lambda * dl(i, j) * dl(k, l) + p.mu * (dl(i, k) * dl(j, l) + dl(i, l) * dl(j, k))
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn check_tensor(p: &LameParameters, xi: &DMatrix<f64>) -> Result<(), TestCaseError> {
    let d = p.dim;
    let c = p.stiffness_apply(xi).unwrap();
    for i in 0..d {
        for j in 0..d {
            let mut oracle = 0.0;
            for k in 0..d {
                for l in 0..d {
                    oracle += tensor(p, i, j, k, l) * xi[(k, l)];
                    prop_assert_eq!(tensor(p, i, j, k, l), tensor(p, k, l, i, j));
                    prop_assert_eq!(tensor(p, i, j, k, l), tensor(p, k, l, j, i));
                }
            }
            prop_assert!((c[(i, j)] - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
        }
    }
    prop_assert!((&c - c.transpose()).amax() <= 1e-12 * (1.0 + c.amax()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stiffness_matches_the_index_loop_2d(p in lame(2), xi in matrix(2)) {
        check_tensor(&p, &xi)?;
    }

    #[test]
    fn stiffness_matches_the_index_loop_3d(p in lame(3), xi in matrix(3)) {
        check_tensor(&p, &xi)?;
    }

    #[test]
    fn stiffness_is_self_adjoint(p in lame(2), a in matrix(2), b in matrix(2)) {
        let lhs = frob(&p.stiffness_apply(&a).unwrap(), &b);
        let rhs = frob(&a, &p.stiffness_apply(&b).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn skew_matrices_carry_no_stress(p in lame(3), a in matrix(3)) {
        let skew = (&a - a.transpose()) * 0.5;
        prop_assert!(p.stiffness_apply(&skew).unwrap().amax() <= 1e-14 * (1.0 + a.amax()));
    }

    #[test]
    fn rigid_motions_are_strain_free(d in 2usize..=4, x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let basis = rigid_basis(d).unwrap();
        prop_assert_eq!(basis.len(), d * (d + 1) / 2);
        for m in &basis.motions {
            let g = m.gradient(d);
            prop_assert!((&g + g.transpose()).amax() == 0.0);
            let (a, c) = m.affine(d);
            let v = m.eval(&x[..d]);
            for k in 0..d {
                let lin: f64 = (0..d).map(|j| a[(k, j)] * x[j]).sum::<f64>() + c[k];
                prop_assert!((v[k] - lin).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_evaluation_is_injective(d in 2usize..=3, pts in prop::collection::vec(-1.0f64..1.0, 9)) {
        let points: Vec<Vec<f64>> = (0..d).map(|k| pts[3 * k..3 * k + d].to_vec()).collect();
        let basis = rigid_basis(d).unwrap();
        let spread = if d == 2 {
            (points[0][0] - points[1][0]).hypot(points[0][1] - points[1][1])
        } else {
            let u: Vec<f64> = (0..3).map(|i| points[1][i] - points[0][i]).collect();
            let v: Vec<f64> = (0..3).map(|i| points[2][i] - points[0][i]).collect();
            let cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            cr.iter().map(|c| c * c).sum::<f64>().sqrt()
        };
        prop_assume!(spread > 1e-2);
        prop_assert_eq!(basis.evaluation_rank(&points), basis.len());
    }
}

fn profiles() -> Vec<GapProfile> {
    vec![curvilinear_square_profile(1.0, 1.0, 2.0).unwrap(), curvilinear_square_profile(1.0, 1.0, 4.0).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn auxiliary_gradient_matches_differences(which in 0usize..2, alpha in 0usize..3, s in -0.9f64..0.9, v in 0.1f64..0.9, le in 1.0f64..3.0) {
        let prof = &profiles()[which];
        let eps = 10f64.powf(-le);
        let params = LameParameters::new(1.3, 0.8, 2).unwrap();
        let x1 = s * prof.r_chart;
        let delta = prof.delta(eps, &[x1]).unwrap();
        let x = [x1, prof.h2(&[x1]).unwrap().value + v * delta];
        let g = aux_grad_u1(alpha, prof, eps, &params, &x).unwrap();
        let h = [1e-6 * prof.r_chart, 1e-4 * delta];
        let mut fd = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h[j];
            xm[j] -= h[j];
            let up = aux_u1(alpha, prof, eps, &params, &xp).unwrap();
            let um = aux_u1(alpha, prof, eps, &params, &xm).unwrap();
            for k in 0..2 {
                fd[(k, j)] = (up[k] - um[k]) / (2.0 * h[j]);
            }
        }
        prop_assert!((&g - &fd).amax() <= 1e-5 * g.amax().max(1.0), "analytic {g} vs differences {fd}");
    }

    #[test]
    fn general_field_is_bilinear_in_the_data(s in -0.9f64..0.9, v in 0.05f64..0.95, c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
        let prof = &profiles()[0];
        let eps = 1e-2;
        let params = LameParameters::new(1.0, 1.0, 2).unwrap();
        let x1 = s * prof.r_chart;
        let x = [x1, prof.h2(&[x1]).unwrap().value + v * prof.delta(eps, &[x1]).unwrap()];
        let basis = rigid_basis(2).unwrap();
        let field = |m: RigidMotion| AffineField::rigid(m, 2);
        let zero = AffineField::zero(2);
        let (a, b) = (field(basis.motions[0]), field(basis.motions[2]));
        let mix = {
            let (ma, ca) = basis.motions[0].affine(2);
            let (mb, cb) = basis.motions[2].affine(2);
            AffineField { a: ma * c1 + mb * c2, c: ca.iter().zip(&cb).map(|(p, q)| c1 * p + c2 * q).collect() }
        };
        let va = general_aux_v(&a, &zero, prof, eps, &params, &x).unwrap();
        let vb = general_aux_v(&zero, &b, prof, eps, &params, &x).unwrap();
        let vm = general_aux_v(&mix, &zero, prof, eps, &params, &x).unwrap();
        let vab = general_aux_v(&a, &b, prof, eps, &params, &x).unwrap();
        let u1 = aux_u1(0, prof, eps, &params, &x).unwrap();
        let u3 = aux_u1(2, prof, eps, &params, &x).unwrap();
        for k in 0..2 {
            prop_assert!((va[k] - u1[k]).abs() < 1e-12);
            prop_assert!((vab[k] - va[k] - vb[k]).abs() < 1e-12);
            prop_assert!((vm[k] - c1 * u1[k] - c2 * u3[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn auxiliary_pair_sums_to_the_motion(which in 0usize..2, alpha in 0usize..3, s in -1.0f64..1.0, v in 0.0f64..1.0) {
        let prof = &profiles()[which];
        let eps = 1e-2;
        let params = LameParameters::new(0.5, 2.0, 2).unwrap();
        let x1 = s * prof.r_chart;
        let x = [x1, prof.h2(&[x1]).unwrap().value + v * prof.delta(eps, &[x1]).unwrap()];
        let u1 = aux_u1(alpha, prof, eps, &params, &x).unwrap();
        let u2 = aux_u2(alpha, prof, eps, &params, &x).unwrap();
        let psi = rigid_basis(2).unwrap().eval(alpha, &x);
        for k in 0..2 {
            prop_assert!((u1[k] + u2[k] - psi[k]).abs() <= 1e-12);
        }
    }
}

/// Random well-conditioned starred data: symmetric diagonally dominant energies.
fn starred(d: usize, m: f64, vals: &[f64]) -> StarredQuantities {
    let n = d * (d + 1) / 2;
    let mut it = vals.iter().cycle().copied();
    let mut sym = |shift: f64| {
        let mut a = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        a = (&a + a.transpose()) * 0.5;
        for k in 0..n {
            a[(k, k)] += shift;
        }
        a
    };
    let a11 = sym(3.0 * n as f64);
    let dd = sym(2.0 * n as f64);
    let b = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
    let b1: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
    let bs: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
    StarredQuantities::from_entries(d, m, &a11, &b, &dd, &b1, &bs).unwrap()
}

fn permuted(s: &StarredQuantities, p: &[usize]) -> StarredQuantities {
    let n = s.n();
    let full = |f: &dyn Fn(usize, usize) -> f64| DMatrix::from_fn(n, n, |r, c| f(p[r], p[c]));
    let a11 = full(&|r, c| s.a11[r][c].map(|e| e.value()).unwrap_or(0.0));
    let b = full(&|r, c| s.a_sum_i1[r][c].value());
    let dd = full(&|r, c| s.a_sum_all[r][c].value());
    let b1: Vec<f64> = (0..n).map(|k| s.b1[p[k]].value()).collect();
    let bs: Vec<f64> = (0..n).map(|k| s.b_sum[p[k]].value()).collect();
    StarredQuantities::from_entries(s.d, s.m, &a11, &b, &dd, &b1, &bs).unwrap()
}

/// Every determinant that enters the expansion of coefficient `alpha`.
fn dets(f: &FactorMatrices, alpha: usize) -> Vec<f64> {
    let det = |m: &DMatrix<f64>| determinant(m).0;
    match f.regime {
        Regime::Strong => vec![det(&f.f_alpha[alpha]), det(&f.d_star)],
        Regime::Intermediate => {
            let g = f.f1[alpha].as_ref().or(f.f2[alpha].as_ref()).unwrap();
            vec![det(g), det(f.f0.as_ref().unwrap())]
        }
        Regime::Weak => vec![det(&f.f3[alpha]), det(f.f_full.as_ref().unwrap())],
    }
}

/// Block-preserving permutation from a random key: translations among themselves, rotations among themselves.
fn block_permutation(d: usize, keys: &[u32]) -> Vec<usize> {
    let n = d * (d + 1) / 2;
    let mut t: Vec<usize> = (0..d).collect();
    let mut r: Vec<usize> = (d..n).collect();
    t.sort_by_key(|&i| keys[i % keys.len()]);
    r.sort_by_key(|&i| keys[i % keys.len()]);
    t.into_iter().chain(r).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn determinants_survive_consistent_reordering(
        case in 0usize..3,
        vals in prop::collection::vec(-1.0f64..1.0, 40),
        keys in prop::collection::vec(any::<u32>(), 10),
    ) {
        let (d, m) = [(2, 4.0), (2, 2.0), (4, 2.0)][case];
        let s = starred(d, m, &vals);
        let p = block_permutation(d, &keys);
        let f = FactorMatrices::assemble(&s).unwrap();
        let fp = FactorMatrices::assemble(&permuted(&s, &p)).unwrap();
        for alpha in 0..s.n() {
            for (a, b) in dets(&fp, alpha).iter().zip(dets(&f, p[alpha])) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn expansions_are_homogeneous_in_the_data(
        case in 0usize..3,
        vals in prop::collection::vec(-1.0f64..1.0, 40),
        c in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 7.0]),
    ) {
        let (d, m) = [(2, 4.0), (2, 2.0), (4, 2.0)][case];
        let s = starred(d, m, &vals);
        let mut sc = s.clone();
        for e in sc.b1.iter_mut().chain(sc.b_sum.iter_mut()) {
            e.coarse *= c;
            e.fine *= c;
        }
        let f = FactorMatrices::assemble(&s).unwrap();
        let fc = FactorMatrices::assemble(&sc).unwrap();
        prop_assert_eq!(&fc.d_star, &f.d_star);
        let consts = constants(d, m, 1.0, &LameParameters::new(1.0, 1.0, d).unwrap()).unwrap();
        for alpha in 0..s.n() {
            let (g, gc) = (dets(&f, alpha), dets(&fc, alpha));
            prop_assert!((gc[0] - c * g[0]).abs() <= 1e-9 * g[0].abs().max(1e-300));
            prop_assert!((gc[1] - g[1]).abs() <= 1e-12 * g[1].abs());
            if let (Ok(a), Ok(b)) = (coeff_expansion(alpha, m, 1.0, 1e-3, &f, &consts), coeff_expansion(alpha, m, 1.0, 1e-3, &fc, &consts)) {
                prop_assert!((b.value - c * a.value).abs() <= 1e-9 * a.value.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn rate_fit_recovers_powers(p in -2.0f64..2.0, c in 0.01f64..100.0, lo in 1.0f64..2.0, order in any::<u64>()) {
        let mut eps: Vec<f64> = (0..5).map(|k| 10f64.powf(-lo - 0.5 * k as f64)).collect();
        let k = (order % 5) as usize;
        eps.swap(0, k);
        let vals: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
        let f = fit_rate(&eps, &vals).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-10);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        let scaled: Vec<f64> = vals.iter().map(|v| 3.0 * v).collect();
        prop_assert!((fit_rate(&eps, &scaled).unwrap().slope - f.slope).abs() < 1e-10);
    }

    #[test]
    fn decreasing_grids_validate(start in 0.05f64..0.9, steps in prop::collection::vec(1.01f64..5.0, 1..6)) {
        let mut cfg = ExperimentConfig::disks();
        let mut eps = vec![start];
        for s in &steps {
            eps.push(eps.last().unwrap() / s);
        }
        cfg.sweep.eps = eps.clone();
        prop_assert!(cfg.validate().is_ok());
        eps.reverse();
        cfg.sweep.eps = eps;
        prop_assert!(cfg.validate().is_err());
    }

    #[test]
    fn materials_follow_ellipticity(lambda in -3.0f64..3.0, mu in -1.0f64..3.0) {
        let mut cfg = ExperimentConfig::disks();
        cfg.material.lambda = lambda;
        cfg.material.mu = mu;
        let ok = mu > 0.0 && 2.0 * lambda + 2.0 * mu > 0.0;
        prop_assert_eq!(cfg.validate().is_ok(), ok);
    }
}

#[test]
fn ellipticity_bounds_over_parameter_sets() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for d in [2usize, 3] {
        for _ in 0..5 {
            let p = lame(d).new_tree(&mut runner).unwrap().current();
            let (lo, hi) = p.ellipticity_bounds();
            for _ in 0..1000 {
                let a = matrix(d).new_tree(&mut runner).unwrap().current();
                let xi = (&a + a.transpose()) * 0.5;
                let q = p.quadratic_form(&xi).unwrap();
                let n2 = xi.norm_squared();
                assert!(q >= lo * n2 * (1.0 - 1e-12) - 1e-14 && q <= hi * n2 * (1.0 + 1e-12) + 1e-14);
            }
        }
    }
}

/// Placeholder code of an input entry: `1e3 * kind + 10 * first + second`.
fn code(kind: u32, r: usize, c: usize) -> f64 {
    1000.0 * kind as f64 + 10.0 * r as f64 + c as f64
}

fn placeholders(d: usize, m: f64) -> StarredQuantities {
    let n = d * (d + 1) / 2;
    let a11 = DMatrix::from_fn(n, n, |a, b| code(1, a, b));
    let bs = DMatrix::from_fn(n, n, |a, b| code(2, a, b));
    let ds = DMatrix::from_fn(n, n, |a, b| code(3, a, b));
    let b1: Vec<f64> = (0..n).map(|b| code(4, b, 0)).collect();
    let bsum: Vec<f64> = (0..n).map(|b| code(5, b, 0)).collect();
    StarredQuantities::from_entries(d, m, &a11, &bs, &ds, &b1, &bsum).unwrap()
}

/// Reference row-equation matrix built from the entry codes: test function `beta` on
/// the rows, unknown `alpha` on the columns, divergent translation blocks as zero.
fn reference_system(d: usize, zero_translations: bool) -> (DMatrix<f64>, Vec<f64>) {
    let n = d * (d + 1) / 2;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for beta in 0..n {
        for alpha in 0..n {
            m[(beta, alpha)] = if zero_translations && alpha < d && beta < d { 0.0 } else { code(1, alpha, beta) };
            m[(beta, n + alpha)] = code(2, alpha, beta);
            m[(n + beta, alpha)] = code(2, beta, alpha);
            m[(n + beta, n + alpha)] = code(3, alpha, beta);
        }
    }
    let rhs = (0..n).map(|b| code(4, b, 0)).chain((0..n).map(|b| code(5, b, 0))).collect();
    (m, rhs)
}

#[test]
fn strong_regime_layout() {
    let f = FactorMatrices::assemble(&placeholders(2, 4.0)).unwrap();
    assert_eq!(f.regime, Regime::Strong);
    assert_eq!(f.c_star, f.b_star.transpose());
    for alpha in 0..3 {
        let g = &f.f_alpha[alpha];
        assert_eq!(g.shape(), (4, 4));
        assert_eq!(g[(0, 0)], code(4, alpha, 0));
        for k in 0..3 {
            assert_eq!(g[(0, k + 1)], code(2, k, alpha));
            assert_eq!(g[(k + 1, 0)], code(5, k, 0));
            for j in 0..3 {
                assert_eq!(g[(k + 1, j + 1)], code(3, j, k));
            }
        }
    }
    assert!(f.f0.is_none() && f.f_full.is_none());
}

#[test]
fn intermediate_regime_layout() {
    for d in [2usize, 3] {
        let n = d * (d + 1) / 2;
        let f = FactorMatrices::assemble(&placeholders(d, d as f64)).unwrap();
        assert_eq!(f.regime, Regime::Intermediate);
        let (m, rhs) = reference_system(d, true);
        let keep: Vec<usize> = (d..2 * n).collect();
        let f0 = f.f0.as_ref().unwrap();
        for (i, &r) in keep.iter().enumerate() {
            for (j, &c) in keep.iter().enumerate() {
                assert_eq!(f0[(i, j)], m[(r, c)]);
            }
        }
        for alpha in 0..n {
            if alpha < d {
                let f1 = f.f1[alpha].as_ref().unwrap();
                assert!(f.f2[alpha].is_none());
                let rows: Vec<usize> = std::iter::once(alpha).chain(keep.iter().copied()).collect();
                for (i, &r) in rows.iter().enumerate() {
                    assert_eq!(f1[(i, 0)], rhs[r]);
                    for (j, &c) in keep.iter().enumerate() {
                        assert_eq!(f1[(i, j + 1)], m[(r, c)]);
                    }
                }
            } else {
                let f2 = f.f2[alpha].as_ref().unwrap();
                assert!(f.f1[alpha].is_none());
                for (i, &r) in keep.iter().enumerate() {
                    for (j, &c) in keep.iter().enumerate() {
                        let want = if c == alpha { rhs[r] } else { m[(r, c)] };
                        assert_eq!(f2[(i, j)], want);
                    }
                }
            }
        }
    }
}

#[test]
fn weak_regime_layout() {
    let d = 4;
    let n = 10;
    let f = FactorMatrices::assemble(&placeholders(d, 2.0)).unwrap();
    assert_eq!(f.regime, Regime::Weak);
    let (m, rhs) = reference_system(d, false);
    assert_eq!(f.f_full.as_ref().unwrap(), &m);
    let a = f.a_star.as_ref().unwrap();
    for r in 0..n {
        for c in 0..n {
            assert_eq!(a[(r, c)], code(1, c, r));
        }
    }
    for alpha in 0..n {
        let mut want = m.clone();
        for r in 0..2 * n {
            want[(r, alpha)] = rhs[r];
        }
        assert_eq!(f.f3[alpha], want);
    }
}

fn small_disk_mesh() -> &'static Arc<Mesh> {
    static MESH: OnceLock<Arc<Mesh>> = OnceLock::new();
    MESH.get_or_init(|| {
        let p = curvilinear_square_profile(1.0, 1.0, 2.0).unwrap();
        let spec = DomainSpec::new(&p, 1e-1, None).unwrap();
        Arc::new(build_mesh(&spec, &MeshGrading::default().at_level(0)).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn comparison_ignores_probe_order(ts in prop::collection::vec(-0.9f64..0.9, 2..6), a in -2.0f64..2.0, shift in 0usize..5) {
        let p = curvilinear_square_profile(1.0, 1.0, 2.0).unwrap();
        let params = LameParameters::new(1.0, 1.0, 2).unwrap();
        let eps = 1e-1;
        let u = FieldSolution::from_fn(small_disk_mesh().clone(), |x| [a * x[0] * x[1] + x[1], x[0] * x[0]], SolutionKind::Composite);
        let model = AsymptoticModel::new(&p, &params, eps, vec![a, 1.0, 0.1], 1.0).unwrap();
        let probes: Vec<Probe> = ts
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let x1 = t * p.r_chart;
                Probe { id: format!("p{k}"), point: [x1, p.h2(&[x1]).unwrap().value + 0.5 * p.delta(eps, &[x1]).unwrap()] }
            })
            .collect();
        let mut rotated = probes.clone();
        rotated.rotate_left(shift % probes.len());
        let c1 = compare(&u, &model, &probes, None).unwrap();
        let c2 = compare(&u, &model, &rotated, None).unwrap();
        prop_assert_eq!(c1.max_rel_err, c2.max_rel_err);
        for m in &c1.probes {
            let other = c2.probes.iter().find(|q| q.id == m.id).unwrap();
            prop_assert_eq!(m.rel_err, other.rel_err);
        }
    }
}
