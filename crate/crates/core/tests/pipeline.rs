//! End-to-end checks of the solver, the touching pipeline and the command-line front end.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use lamegap::asymptotic::aux_grad_u1;
use lamegap::elasticity::rigid_basis;
use lamegap::fem::{solve_limit_problem, ElasticityProblem};
use lamegap::geometry::{curvilinear_square_profile, DomainSpec, GapProfile};
use lamegap::harness::config::{ExperimentConfig, Preset};
use lamegap::harness::sweep::{run_eps, run_sweep, run_touching};
use lamegap::mesh::{build_mesh, Mesh};
use lamegap::reconstruction::{compare, default_probes, AsymptoticModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn disks(level: u32) -> ExperimentConfig {
    let mut c = ExperimentConfig::disks();
    c.mesh.level = level;
    c
}

fn gap_center(p: &GapProfile, eps: f64) -> [f64; 2] {
    [0.0, p.h2(&[0.0]).unwrap().value + 0.5 * p.delta(eps, &[0.0]).unwrap()]
}

fn solve(cfg: &ExperimentConfig, eps: f64) -> (Arc<Mesh>, lamegap::fem::FieldSolution, lamegap::fem::CoefficientSolution, lamegap::fem::Subproblems) {
    let profile = cfg.profile().unwrap();
    let spec = DomainSpec::new(&profile, eps, None).unwrap();
    let phi = cfg.boundary.data(spec.outer_center).unwrap();
    let mesh = Arc::new(build_mesh(&spec, &cfg.mesh.grading()).unwrap());
    let problem = ElasticityProblem::new(mesh.clone(), cfg.params().unwrap()).unwrap();
    let (u, c, s) = solve_limit_problem(&problem, &phi).unwrap();
    (mesh, u, c, s)
}

#[test]
fn rigid_data_moves_both_inclusions_rigidly() {
    for gamma in 1..=3 {
        let mut cfg = disks(0);
        cfg.boundary.preset = Preset::Rigid;
        cfg.boundary.gamma = Some(gamma);
        let (mesh, u, c, _) = solve(&cfg, 1e-1);
        for b in 0..3 {
            let want = if b + 1 == gamma { 1.0 } else { 0.0 };
            assert!((c.c1()[b] - want).abs() < 1e-6 && (c.c2()[b] - want).abs() < 1e-6, "gamma {gamma}: {:?} {:?}", c.c1(), c.c2());
        }
        let g = rigid_basis(2).unwrap().motions[gamma - 1].gradient(2);
        for e in (0..mesh.elements.len()).step_by(7) {
            assert!((u.element_gradient(e, 1.0 / 3.0, 1.0 / 3.0) - &g).amax() < 1e-6);
        }
    }
}

#[test]
fn solves_are_bit_reproducible() {
    let cfg = disks(0);
    let (_, u1, c1, _) = solve(&cfg, 1e-2);
    let (_, u2, c2, _) = solve(&cfg, 1e-2);
    assert_eq!(u1.dump(), u2.dump());
    assert_eq!(c1.x1, c2.x1);
    assert_eq!(c1.x2, c2.x2);
}

#[test]
fn solver_coefficients_give_zero_discrepancy() {
    let cfg = disks(0);
    let eps = 1e-2;
    let (_, u, c, _) = solve(&cfg, eps);
    let profile = cfg.profile().unwrap();
    let model = AsymptoticModel::new(&profile, &cfg.params().unwrap(), eps, c.x1.clone(), 1.0).unwrap();
    let probes = default_probes(&profile, eps, &[0.0, 0.5, 1.0]).unwrap();
    let cmp = compare(&u, &model, &probes, Some(&c)).unwrap();
    assert!(cmp.coefficient_discrepancy.iter().all(|d| *d == Some(0.0)));
}

#[test]
fn translation_fields_peak_in_the_normal_derivative() {
    let cfg = disks(1);
    let profile = cfg.profile().unwrap();
    let params = cfg.params().unwrap();
    let eps = 1e-2;
    let (_, _, _, sub) = solve(&cfg, eps);
    let x = gap_center(&profile, eps);
    let argmax = |g: &nalgebra::DMatrix<f64>| {
        let mut best = (0, 0);
        for r in 0..2 {
            for c in 0..2 {
                if g[(r, c)].abs() > g[best].abs() {
                    best = (r, c);
                }
            }
        }
        best
    };
    for alpha in 0..2 {
        let direct = sub.basis[0][alpha].gradient_at(x).unwrap();
        let model = aux_grad_u1(alpha, &profile, eps, &params, &x).unwrap();
        assert_eq!(argmax(&direct), (alpha, 1));
        assert_eq!(argmax(&model), (alpha, 1));
    }
}

#[test]
fn basis_gradient_approaches_the_auxiliary_field() {
    let cfg = disks(1);
    let profile = cfg.profile().unwrap();
    let params = cfg.params().unwrap();
    let mut last = f64::INFINITY;
    for eps in [10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5)] {
        let (_, _, _, sub) = solve(&cfg, eps);
        let x = gap_center(&profile, eps);
        let direct = sub.basis[0][0].gradient_at(x).unwrap();
        let model = aux_grad_u1(0, &profile, eps, &params, &x).unwrap();
        let rel = (&direct - &model).norm() / model.norm();
        assert!(rel < last, "relative difference {rel} did not drop below {last} at eps {eps}");
        last = rel;
    }
}

/// Outer circle shifted sideways so that no reflection symmetry forces `a_11^{12} = 0`.
fn shifted_cross_energy(eps: f64) -> (f64, f64) {
    let cfg = disks(1);
    let profile = cfg.profile().unwrap();
    let spec = DomainSpec::new(&profile, eps, None).unwrap();
    let spec = spec.clone().with_outer([1.5, spec.outer_center[1]], spec.outer_radius).unwrap();
    let phi = cfg.boundary.data(spec.outer_center).unwrap();
    let mesh = Arc::new(build_mesh(&spec, &cfg.mesh.grading()).unwrap());
    let problem = ElasticityProblem::new(mesh, cfg.params().unwrap()).unwrap();
    let (_, _, sub) = solve_limit_problem(&problem, &phi).unwrap();
    (sub.a(0, 0, 0, 1), sub.a(0, 0, 1, 0))
}

#[test]
fn cross_translation_energy_grows_at_most_logarithmically() {
    let eps = [10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5), 1e-3];
    let mut vals = Vec::new();
    for &e in &eps {
        let (a12, a21) = shifted_cross_energy(e);
        assert!((a12 - a21).abs() <= 1e-9 * a12.abs().max(1.0));
        vals.push(a12.abs());
    }
    let slope = lamegap::harness::ratefit::fit_rate(&eps, &vals).unwrap().slope;
    assert!(slope >= -0.1, "a11^12 exponent {slope}");
}

#[test]
fn flux_residuals_shrink_under_refinement() {
    let coarse = solve(&disks(0), 1e-2).2.flux_residuals.iter().copied().fold(0.0, f64::max);
    let fine = solve(&disks(1), 1e-2).2.flux_residuals.iter().copied().fold(0.0, f64::max);
    assert!(fine < coarse, "flux residual {fine} at level 1 vs {coarse} at level 0");
}

#[test]
fn meshes_resolve_the_gap_and_round_trip() {
    for m in [2.0, 4.0] {
        let p = curvilinear_square_profile(1.0, 1.0, m).unwrap();
        let spec = DomainSpec::new(&p, 1e-2, None).unwrap();
        let grading = disks(0).mesh.grading();
        let mesh = build_mesh(&spec, &grading).unwrap();
        assert!(mesh.boundary_deviation(&spec) < 1e-10);
        for x1 in [0.0, 0.1, -0.3, 0.45] {
            assert!(mesh.layers_at(&spec, x1).unwrap() >= grading.n_layers);
        }
        let back = Mesh::from_text(&mesh.to_text()).unwrap();
        assert_eq!(back.nodes, mesh.nodes);
        assert_eq!(back.elements, mesh.elements);
        assert_eq!(back.tags, mesh.tags);
    }
}

#[test]
fn gap_region_volume_matches_quadrature() {
    let p = GapProfile::power(2, 2.0, 0.5, 0.5, 1.0, 0.5).unwrap();
    let eps = 1e-2;
    let region = p.omega_t(eps, &[0.0], 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (y0, y1) = (-0.13, 0.14);
    let n = 400_000;
    let hits = (0..n).filter(|_| region.contains(&[rng.gen_range(-0.5..0.5), rng.gen_range(y0..y1)])).count();
    let vol = hits as f64 / n as f64 * (y1 - y0);
    let exact = 2.0 * (eps * 0.5 + 0.5f64.powi(3) / 3.0);
    assert!((vol / exact - 1.0).abs() < 0.02, "{vol} vs {exact}");
    assert!(region.contains(&[0.0, eps / 2.0]));
    assert!(!region.contains(&[0.0, eps]));
}

#[test]
fn square_remainder_constant_is_stable() {
    for m in [3.0, 4.0] {
        let p = curvilinear_square_profile(1.0, 1.0, m).unwrap();
        let k = p.remainder_constant(0.25, 400).unwrap();
        let k2 = p.remainder_constant(0.125, 400).unwrap();
        assert!(k > 0.0 && (k - k2).abs() / k < 0.1, "m = {m}: {k} vs {k2}");
    }
}

#[test]
fn energies_minus_leading_terms_tend_to_the_geometry_constant() {
    let mut cfg = ExperimentConfig::load(&repo("configs/squares_m3.toml")).unwrap();
    cfg.sweep.eps = vec![1e-2, 10f64.powf(-2.5), 1e-3];
    let rep = run_sweep(&cfg).unwrap();
    let g = rep.touching.as_ref().unwrap().geometry.as_ref().unwrap();
    for alpha in [0, 2] {
        let k = g.k[alpha].unwrap();
        let errs: Vec<f64> = rep.records.iter().map(|r| (r.a11_diag[alpha] - r.a11_leading[alpha].unwrap() - k).abs() / k.abs()).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "alpha {}: {errs:?}", alpha + 1);
        assert!(*errs.last().unwrap() < 0.05, "alpha {}: {errs:?}", alpha + 1);
    }
}

#[test]
fn records_are_deterministic_for_a_seed() {
    let mut cfg = disks(0);
    cfg.probes.random = 3;
    let profile = cfg.profile().unwrap();
    let spec = DomainSpec::new(&profile, 1e-2, None).unwrap();
    let phi = cfg.boundary.data(spec.outer_center).unwrap();
    let a = run_eps(&cfg, &phi, 1e-2, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = run_eps(&cfg, &phi, 1e-2, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.max_gap, b.max_gap);
    let pa: Vec<_> = a.probe_gradients.iter().map(|(p, g)| (p.point, *g)).collect();
    let pb: Vec<_> = b.probe_gradients.iter().map(|(p, g)| (p.point, *g)).collect();
    assert_eq!(pa, pb);
}

fn lamegap(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lamegap")).args(args).env_remove("LAMEGAP_THREADS").output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lamegap-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn cli_rejects_unknown_flags_and_bad_configs() {
    let out = lamegap(&["sweep", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[sweep]\neps = [0.001, 0.01]\n").unwrap();
    assert_eq!(lamegap(&["solve", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&cfg, "[geometry]\nshape = \"disks\"\ncolour = 3\n").unwrap();
    assert_eq!(lamegap(&["solve", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lamegap(&["solve", "--config", dir.join("missing.toml").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lamegap(&["solve", "--eps", "2.0"]).status.code(), Some(2));
}

#[test]
fn cli_reports_numerical_failures() {
    let dir = scratch("numeric");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("tight.toml");
    std::fs::write(&cfg, "[geometry]\nshape = \"disks\"\n[mesh]\nmax_aspect = 1.5\n").unwrap();
    let out = lamegap(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh"));
}

#[test]
fn cli_solve_is_reproducible_across_thread_counts() {
    let (a, b) = (scratch("solve-a"), scratch("solve-b"));
    for (d, t) in [(&a, "1"), (&b, "1")] {
        let out = lamegap(&["solve", "--eps", "0.01", "--out", d.to_str().unwrap(), "--threads", t]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(a.join("u.txt")).unwrap(), std::fs::read(b.join("u.txt")).unwrap());
    let mesh = std::fs::read_to_string(a.join("mesh.txt")).unwrap();
    assert!(Mesh::from_text(&mesh).is_ok());
}

#[test]
fn cli_factors_dump_has_the_cutoff_columns() {
    let dir = scratch("factors");
    let cfg = repo("configs/squares_m4.toml");
    let out = lamegap(&["factors", "--config", cfg.to_str().unwrap(), "--eta", "1e-2", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dump = std::fs::read_to_string(dir.join("factors.txt")).unwrap();
    assert!(dump.contains("entry value eta_value half_eta_value rel_diff agree"));
    assert!(dump.contains("matrix F*^3"));
    assert!(dump.lines().filter(|l| l.starts_with("b*_1^")).all(|l| l.ends_with("true")));
}

#[test]
fn cli_asymptotic_uses_the_logarithmic_denominator() {
    let dir = scratch("asym");
    let cfg = repo("configs/squares_m3.toml");
    let out = lamegap(&["asymptotic", "--config", cfg.to_str().unwrap(), "--eps", "1e-3", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("asymptotic.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let row3 = &rows[2];
    let (leading, refined): (f64, f64) = (row3[4].parse().unwrap(), row3[6].parse().unwrap());
    let g = leading / refined * 1e-3f64.ln().abs() - 1e-3f64.ln().abs();
    let lib = ExperimentConfig::load(&cfg).unwrap();
    let profile = lib.profile().unwrap();
    let phi = lib.boundary.data(DomainSpec::new(&profile, 1e-3, None).unwrap().outer_center).unwrap();
    let want = run_touching(&lib, &phi).unwrap().geometry.unwrap().g[2].unwrap();
    assert!((g - want).abs() <= 1e-8 * want.abs(), "denominator constant {g} vs {want}");
}

#[test]
fn cli_sweep_writes_every_artifact() {
    let dir = scratch("sweep");
    let out = lamegap(&["sweep", "--mesh-level", "0", "--eps", "0.03,0.01,0.003", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["sweep.csv", "energies.csv", "rates.csv", "summary.txt", "gradient.svg"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("epsilon,alpha,coeff_direct,coeff_asymptotic,rel_err,probe_id,grad_direct_norm,grad_asym_norm\n"));
    let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("max_gap_grad") && summary.contains("predicted"));
}
