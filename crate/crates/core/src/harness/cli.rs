//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::asymptotic::{constants, rho};
use crate::error::{Error, Result};
use crate::factors::{coeff_expansion, dump_factors, example_squares_expansion};
use crate::fem::{solve_limit_problem, ElasticityProblem};
use crate::geometry::DomainSpec;
use crate::mesh::build_mesh;

use super::config::{ExperimentConfig, Shape};
use super::sweep::{run_sweep, run_touching, summary_text, write_report};

/// Exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lamegap", version, about = "Gap asymptotics and finite-element checks for nearly touching rigid inclusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML); the built-in disks setup when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated epsilon list, overriding `[sweep] eps`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Mesh refinement level, overriding `[mesh] level`.
    #[arg(long = "mesh-level", global = true)]
    pub mesh_level: Option<u32>,
    /// Cusp cutoff, overriding `[factors] eta`.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Worker threads (also `LAMEGAP_THREADS`).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Direct solve at one epsilon; dumps the mesh and the displacement field.
    Solve,
    /// Touching-configuration pipeline; dumps the factor matrices.
    Factors,
    /// Evaluates the coefficient expansions on the epsilon list.
    Asymptotic,
    /// Full epsilon sweep with CSV, SVG and summary output.
    Sweep,
    /// The curvilinear-square example end to end.
    Squares,
}

/// Applies command-line overrides to the configuration.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::disks(),
    };
    if let Some(e) = &cli.eps {
        cfg.sweep.eps = e.clone();
    }
    if let Some(l) = cli.mesh_level {
        cfg.mesh.level = l;
    }
    if let Some(e) = cli.eta {
        cfg.factors.eta = e;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Thread count: `--threads`, then `LAMEGAP_THREADS`, then `[run] threads`.
pub fn thread_count(cli: &Cli, cfg: &ExperimentConfig) -> Result<Option<usize>> {
    if let Some(t) = cli.threads {
        return Ok(Some(t));
    }
    if let Ok(v) = std::env::var("LAMEGAP_THREADS") {
        let t: usize = v.trim().parse().map_err(|_| Error::Config(format!("LAMEGAP_THREADS = {v:?} is not a positive integer")))?;
        if t == 0 {
            return Err(Error::Config("LAMEGAP_THREADS must be positive".into()));
        }
        return Ok(Some(t));
    }
    Ok(cfg.run.threads)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn cmd_solve(cfg: &ExperimentConfig) -> Result<String> {
    let eps = cfg.sweep.eps[0];
    let profile = cfg.profile()?;
    let spec = DomainSpec::new(&profile, eps, None)?;
    let phi = cfg.boundary.data(spec.outer_center)?;
    let mesh = Arc::new(build_mesh(&spec, &cfg.mesh.grading()).map_err(|e| e.at("mesh"))?);
    let problem = ElasticityProblem::new(mesh.clone(), cfg.params()?).map_err(|e| e.at("assembly"))?;
    let (u, c, _) = solve_limit_problem(&problem, &phi).map_err(|e| e.at("direct solve"))?;
    let dir = &cfg.output.dir;
    write(dir, "mesh.txt", &mesh.to_text())?;
    write(dir, "u.txt", &u.dump())?;
    let mut s = String::new();
    let st = mesh.stats(&spec);
    let _ = writeln!(s, "epsilon {eps:e}  nodes {}  elements {}  max aspect {:.1}", st.nodes, st.elements, st.max_aspect);
    for a in 0..c.x1.len() {
        let _ = writeln!(s, "alpha {}  C1 {:.12e}  C2 {:.12e}  C1-C2 {:.12e}", a + 1, c.c1()[a], c.c2()[a], c.x1[a]);
    }
    let _ = writeln!(s, "block system reciprocal condition {:.3e}", c.rcond);
    Ok(s)
}

fn cmd_factors(cfg: &ExperimentConfig) -> Result<String> {
    let profile = cfg.profile()?;
    let spec = DomainSpec::new(&profile, cfg.sweep.eps[0], None)?;
    let phi = cfg.boundary.data(spec.outer_center)?;
    let t = run_touching(cfg, &phi)?;
    let dump = dump_factors(&t.starred, &t.factors);
    write(&cfg.output.dir, "factors.txt", &dump)?;
    let (worst, name) = t.starred.eta_report();
    Ok(format!(
        "{dump}\nworst eta/eta2 change {worst:.3e} ({name}); stable {}\nmin eig D* {:.6e}\n",
        t.starred.is_eta_stable(),
        t.factors.d_star_min_eigenvalue()
    ))
}

fn cmd_asymptotic(cfg: &ExperimentConfig) -> Result<String> {
    let profile = cfg.profile()?;
    let params = cfg.params()?;
    let spec = DomainSpec::new(&profile, cfg.sweep.eps[0], None)?;
    let phi = cfg.boundary.data(spec.outer_center)?;
    let t = run_touching(cfg, &phi)?;
    let consts = constants(2, profile.m, profile.tau, &params)?;
    let mut csv = String::from("epsilon,alpha,rho0,rho2,leading,remainder_order,refined\n");
    let mut s = String::new();
    let _ = writeln!(s, "regime {}  L {:?}  M0 {:?}  M2 {:?}", t.factors.regime.label(), consts.lame, consts.m0, consts.m2);
    for &eps in &cfg.sweep.eps {
        for a in 0..3 {
            let lead = coeff_expansion(a, profile.m, profile.sigma, eps, &t.factors, &consts)?;
            let refined = t.geometry.as_ref().and_then(|g| example_squares_expansion(a, profile.m, eps, g, &t.factors, &consts).ok());
            let r0 = rho(0, 2, profile.m, eps)?;
            let r2 = rho(2, 2, profile.m, eps)?;
            let ro = lead.remainder.map(|v| format!("{v:.6e}")).unwrap_or_default();
            let rf = refined.map(|v| format!("{v:.12e}")).unwrap_or_default();
            let _ = writeln!(csv, "{eps:.16e},{},{r0:.16e},{r2:.16e},{:.16e},{ro},{rf}", a + 1, lead.value);
            let _ = writeln!(s, "eps {eps:.3e} alpha {}  leading {:.8e}  refined {}  remainder {}", a + 1, lead.value, if rf.is_empty() { "-" } else { &rf }, if ro.is_empty() { "-" } else { &ro });
        }
    }
    write(&cfg.output.dir, "asymptotic.csv", &csv)?;
    Ok(s)
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<String> {
    let rep = run_sweep(cfg)?;
    write_report(&rep, &cfg.output.dir)?;
    Ok(summary_text(&rep))
}

fn cmd_squares(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.geometry.shape != Shape::Squares {
        return Err(Error::Config("the squares subcommand needs [geometry] shape = \"squares\"".into()));
    }
    let rep = run_sweep(cfg)?;
    write_report(&rep, &cfg.output.dir)?;
    let mut s = summary_text(&rep);
    let t = rep.touching.as_ref().ok_or_else(|| Error::Config("the squares subcommand needs [factors] enabled = true".into()))?;
    write(&cfg.output.dir, "factors.txt", &dump_factors(&t.starred, &t.factors))?;
    if let Some(g) = &t.geometry {
        let _ = writeln!(s, "\ngeometry constants (r0 = {}, tau0 = {:.6}):", g.r0, g.tau0);
        for a in 0..3 {
            match (g.k[a], g.g[a]) {
                (Some(k), Some(gv)) => {
                    let _ = writeln!(
                        s,
                        "  alpha {}: K* {:.8}  G* {:.8}  M~* {:.8}  M* {:.8}  C* {:.8}",
                        a + 1,
                        k,
                        gv,
                        g.m_tilde[a].unwrap_or(f64::NAN),
                        g.m_star[a].unwrap_or(f64::NAN),
                        g.c_star[a].unwrap_or(f64::NAN)
                    );
                }
                _ => {
                    let _ = writeln!(s, "  alpha {}: undefined for m = {}", a + 1, g.m);
                }
            }
        }
    }
    Ok(s)
}

/// Runs the parsed command; returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    let result = effective_config(cli).and_then(|cfg| {
        if let Some(n) = thread_count(cli, &cfg)? {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        match cli.command {
            Command::Solve => cmd_solve(&cfg),
            Command::Factors => cmd_factors(&cfg),
            Command::Asymptotic => cmd_asymptotic(&cfg),
            Command::Sweep => cmd_sweep(&cfg),
            Command::Squares => cmd_squares(&cfg),
        }
    });
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            }
        }
    }
}
