//! Experiment configuration read from a sectioned TOML file.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::elasticity::{rigid_basis, LameParameters};
use crate::error::{Error, Result};
use crate::fem::BoundaryData;
use crate::geometry::{curvilinear_square_profile, GapProfile};
use crate::mesh::{BoundaryTag, MeshGrading};

/// `{10^-1.5, 10^-2, 10^-2.5, 10^-3}`.
pub fn default_eps_grid() -> Vec<f64> {
    vec![10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5), 1e-3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disks,
    Squares,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub shape: Shape,
    #[serde(default = "one")]
    pub r1: f64,
    #[serde(default = "one")]
    pub r2: f64,
    /// Required for squares; disks use `m = 2`.
    pub m: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { lambda: 1.0, mu: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Generic,
    Rigid,
    Linear,
    Polynomial,
    Table,
    Zero,
}

/// `coeff * x1^px * x2^py` added to component `component` (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub component: usize,
    pub coeff: f64,
    #[serde(default)]
    pub px: u32,
    #[serde(default)]
    pub py: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub preset: Preset,
    /// One-based rigid motion index for `rigid`.
    pub gamma: Option<usize>,
    /// `phi = matrix x + offset` for `linear`.
    pub matrix: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub offset: [f64; 2],
    #[serde(default)]
    pub terms: Vec<PolyTerm>,
    /// Rows `[theta, u1, u2]` on the outer circle, linearly interpolated and periodic.
    #[serde(default)]
    pub table: Vec<[f64; 3]>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { preset: Preset::Generic, gamma: None, matrix: None, offset: [0.0; 2], terms: Vec::new(), table: Vec::new() }
    }
}

/// Terms of the `generic` preset: `(x1 + x2 + 0.2 x2^2, x2 + 0.2 x1^2 + 0.1 x1 x2)`.
pub fn generic_terms() -> Vec<PolyTerm> {
    let t = |component, coeff, px, py| PolyTerm { component, coeff, px, py };
    vec![t(1, 1.0, 1, 0), t(1, 1.0, 0, 1), t(1, 0.2, 0, 2), t(2, 1.0, 0, 1), t(2, 0.2, 2, 0), t(2, 0.1, 1, 1)]
}

fn eval_terms(terms: &[PolyTerm], p: [f64; 2]) -> [f64; 2] {
    let mut v = [0.0; 2];
    for t in terms {
        v[t.component - 1] += t.coeff * p[0].powi(t.px as i32) * p[1].powi(t.py as i32);
    }
    v
}

impl BoundaryConfig {
    /// Outer trace of `phi`; the inclusion boundaries are left at zero.
    pub fn data(&self, outer_center: [f64; 2]) -> Result<BoundaryData> {
        let name = format!("{:?}", self.preset).to_lowercase();
        let d = BoundaryData::zero(name);
        Ok(match self.preset {
            Preset::Zero => d,
            Preset::Generic => {
                let t = generic_terms();
                d.on(BoundaryTag::Outer, move |p| eval_terms(&t, p))
            }
            Preset::Polynomial => {
                let t = self.terms.clone();
                d.on(BoundaryTag::Outer, move |p| eval_terms(&t, p))
            }
            Preset::Rigid => {
                let g = self.gamma.ok_or_else(|| Error::Config("[boundary] rigid preset needs gamma".into()))?;
                let motion = rigid_basis(2)?.motions[g - 1];
                d.on(BoundaryTag::Outer, move |p| {
                    let v = motion.eval(&p);
                    [v[0], v[1]]
                })
            }
            Preset::Linear => {
                let a = self.matrix.ok_or_else(|| Error::Config("[boundary] linear preset needs matrix".into()))?;
                let c = self.offset;
                d.on(BoundaryTag::Outer, move |p| {
                    [a[0][0] * p[0] + a[0][1] * p[1] + c[0], a[1][0] * p[0] + a[1][1] * p[1] + c[1]]
                })
            }
            Preset::Table => {
                let mut rows = self.table.clone();
                rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
                d.on(BoundaryTag::Outer, move |p| {
                    let th = (p[1] - outer_center[1]).atan2(p[0] - outer_center[0]).rem_euclid(TAU);
                    table_lookup(&rows, th)
                })
            }
        })
    }
}

fn table_lookup(rows: &[[f64; 3]], th: f64) -> [f64; 2] {
    let n = rows.len();
    let k = rows.partition_point(|r| r[0] <= th);
    let (a, b) = if k == 0 || k == n { (rows[n - 1], rows[0]) } else { (rows[k - 1], rows[k]) };
    let mut span = b[0] - a[0];
    let mut off = th - a[0];
    if span <= 0.0 {
        span += TAU;
    }
    if off < 0.0 {
        off += TAU;
    }
    let s = if span > 0.0 { off / span } else { 0.0 };
    [a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_eps_grid")]
    pub eps: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { eps: default_eps_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default)]
    pub level: u32,
    pub n_layers: Option<usize>,
    pub target_h: Option<f64>,
    pub gap_refinement_ratio: Option<f64>,
    pub first_column_divisor: Option<f64>,
    pub max_aspect: Option<f64>,
    pub cusp_max_aspect: Option<f64>,
    pub min_angle_deg: Option<f64>,
}

impl MeshConfig {
    pub fn grading(&self) -> MeshGrading {
        let d = MeshGrading::default();
        let base = MeshGrading {
            n_layers: self.n_layers.unwrap_or(d.n_layers),
            target_h: self.target_h.unwrap_or(d.target_h),
            gap_refinement_ratio: self.gap_refinement_ratio.unwrap_or(d.gap_refinement_ratio),
            first_column_divisor: self.first_column_divisor.unwrap_or(d.first_column_divisor),
            max_aspect: self.max_aspect.unwrap_or(d.max_aspect),
            cusp_max_aspect: self.cusp_max_aspect.unwrap_or(d.cusp_max_aspect),
            min_angle_deg: self.min_angle_deg.unwrap_or(d.min_angle_deg),
        };
        base.at_level(self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorsConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
}

fn default_true() -> bool {
    true
}
fn default_eta() -> f64 {
    0.02
}
fn default_tol() -> f64 {
    0.05
}
fn default_r0() -> f64 {
    0.25
}

impl Default for FactorsConfig {
    fn default() -> Self {
        Self { enabled: true, eta: default_eta(), tolerance: default_tol(), r0: default_r0() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbesConfig {
    #[serde(default = "default_ts")]
    pub t: Vec<f64>,
    /// Extra uniformly random gap points per epsilon, drawn from the run seed.
    #[serde(default)]
    pub random: usize,
}

fn default_ts() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 1.0, 2.0]
}

impl Default for ProbesConfig {
    fn default() -> Self {
        Self { t: default_ts(), random: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub factors: FactorsConfig,
    #[serde(default)]
    pub probes: ProbesConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Disks with default material, generic data and the default grid.
    pub fn disks() -> Self {
        Self::parse("[geometry]\nshape = \"disks\"\n").expect("built-in config")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let g = &self.geometry;
        if !(g.r1 > 0.0 && g.r2 > 0.0) {
            return cfg("[geometry] radii must be positive".into());
        }
        match (g.shape, g.m) {
            (Shape::Squares, None) => return cfg("[geometry] squares need m".into()),
            (Shape::Squares, Some(m)) if !(m >= 2.0) => return cfg(format!("[geometry] m must be at least 2, got {m}")),
            (Shape::Disks, Some(m)) if m != 2.0 => return cfg(format!("[geometry] disks have m = 2, got {m}")),
            _ => {}
        }
        LameParameters::new(self.material.lambda, self.material.mu, 2).map_err(|e| Error::Config(format!("[material] {e}")))?;
        let eps = &self.sweep.eps;
        if eps.is_empty() {
            return cfg("[sweep] eps list is empty".into());
        }
        if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return cfg("[sweep] every epsilon must lie in (0, 1)".into());
        }
        if eps.windows(2).any(|w| !(w[0] > w[1])) {
            return cfg("[sweep] eps list must be strictly decreasing".into());
        }
        let b = &self.boundary;
        match b.preset {
            Preset::Rigid => match b.gamma {
                Some(k) if (1..=3).contains(&k) => {}
                _ => return cfg("[boundary] rigid preset needs gamma in 1..=3".into()),
            },
            Preset::Linear if b.matrix.is_none() => return cfg("[boundary] linear preset needs matrix".into()),
            Preset::Polynomial if b.terms.is_empty() || b.terms.iter().any(|t| !(1..=2).contains(&t.component)) => {
                return cfg("[boundary] polynomial preset needs terms with component 1 or 2".into())
            }
            Preset::Table if b.table.len() < 2 => return cfg("[boundary] table preset needs at least two rows".into()),
            _ => {}
        }
        let f = &self.factors;
        if !(f.eta > 0.0 && f.tolerance > 0.0 && f.r0 > f.eta) {
            return cfg("[factors] need eta > 0, tolerance > 0 and r0 > eta".into());
        }
        if self.probes.t.iter().any(|t| !t.is_finite()) {
            return cfg("[probes] t values must be finite".into());
        }
        if self.run.threads == Some(0) {
            return cfg("[run] threads must be positive".into());
        }
        let p = self.profile()?;
        if !(f.eta < 0.5 * p.r_chart && f.r0 <= 2.0 * p.r_chart) {
            return cfg(format!("[factors] need eta < {} and r0 <= {}", 0.5 * p.r_chart, 2.0 * p.r_chart));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<GapProfile> {
        let g = &self.geometry;
        curvilinear_square_profile(g.r1, g.r2, g.m.unwrap_or(2.0))
    }

    pub fn params(&self) -> Result<LameParameters> {
        LameParameters::new(self.material.lambda, self.material.mu, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::disks();
        assert_eq!(c.sweep.eps, default_eps_grid());
        assert_eq!(c.probes.t.len(), 5);
        assert_eq!(c.boundary.preset, Preset::Generic);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[geometry]\nshape = \"squares\"\n",
            "[geometry]\nshape = \"disks\"\n[sweep]\neps = [1e-3, 1e-2]\n",
            "[geometry]\nshape = \"disks\"\n[sweep]\neps = [1.5]\n",
            "[geometry]\nshape = \"disks\"\n[material]\nlambda = -5\nmu = 1\n",
            "[geometry]\nshape = \"disks\"\nbogus = 1\n",
            "[geometry]\nshape = \"disks\"\n[boundary]\npreset = \"rigid\"\n",
        ] {
            let e = ExperimentConfig::parse(text).unwrap_err();
            assert!(e.is_config(), "{text}: {e}");
        }
    }

    #[test]
    fn table_interpolates_periodically() {
        let rows = vec![[0.0, 0.0, 1.0], [std::f64::consts::PI, 2.0, 1.0]];
        assert_eq!(table_lookup(&rows, 0.5 * std::f64::consts::PI), [1.0, 1.0]);
        let v = table_lookup(&rows, 1.5 * std::f64::consts::PI);
        assert!((v[0] - 1.0).abs() < 1e-14);
    }
}
