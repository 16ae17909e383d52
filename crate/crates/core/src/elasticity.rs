//! Isotropic stiffness, pointwise strain/stress algebra and the rigid-motion basis.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Lamé constants of an isotropic matrix material in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LameParameters {
    pub lambda: f64,
    pub mu: f64,
    pub dim: usize,
    pub kappa3: Option<f64>,
}

impl LameParameters {
    /// Validates strong ellipticity: `mu > 0` and `dim * lambda + 2 mu > 0`.
    pub fn new(lambda: f64, mu: f64, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("dimension must be at least 2, got {dim}")));
        }
        if !(lambda.is_finite() && mu.is_finite()) {
            return Err(invalid("Lamé constants must be finite"));
        }
        if mu <= 0.0 {
            return Err(invalid(format!("shear modulus must be positive, got {mu}")));
        }
        if dim as f64 * lambda + 2.0 * mu <= 0.0 {
            return Err(invalid(format!(
                "d*lambda + 2*mu must be positive, got {}",
                dim as f64 * lambda + 2.0 * mu
            )));
        }
        Ok(Self { lambda, mu, dim, kappa3: None })
    }

    /// Attaches the bound box `kappa3 <= mu` and `d*lambda + 2*mu <= 1/kappa3`.
    pub fn with_kappa3(mut self, kappa3: f64) -> Result<Self> {
        if !(kappa3 > 0.0) {
            return Err(invalid("kappa3 must be positive"));
        }
        if kappa3 > self.mu || self.bulk_like() > 1.0 / kappa3 {
            return Err(invalid(format!(
                "Lamé constants (lambda={}, mu={}) violate the kappa3={kappa3} bound box",
                self.lambda, self.mu
            )));
        }
        self.kappa3 = Some(kappa3);
        Ok(self)
    }

    /// `d*lambda + 2*mu`
    pub fn bulk_like(&self) -> f64 {
        self.dim as f64 * self.lambda + 2.0 * self.mu
    }

    /// Lower and upper constants of the ellipticity estimate on symmetric matrices.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        let a = 2.0 * self.mu;
        let b = self.bulk_like();
        (a.min(b), a.max(b))
    }

    /// Same material in another dimension.
    pub fn in_dim(&self, dim: usize) -> Result<Self> {
        let p = Self::new(self.lambda, self.mu, dim)?;
        match self.kappa3 {
            Some(k) => p.with_kappa3(k),
            None => Ok(p),
        }
    }

    fn check_square(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {0}x{0} matrix, got {1}x{2}",
                self.dim,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }

    /// `lambda tr(xi) I + mu (xi + xi^T)`.
    pub fn stiffness_apply(&self, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_square(xi)?;
        let tr = xi.trace();
        let mut out = (xi + xi.transpose()) * self.mu;
        for i in 0..self.dim {
            out[(i, i)] += self.lambda * tr;
        }
        Ok(out)
    }

    /// `(C xi, xi)` for a symmetric `xi`; rejects asymmetric input.
    pub fn quadratic_form(&self, xi: &DMatrix<f64>) -> Result<f64> {
        self.check_square(xi)?;
        let scale = xi.amax().max(f64::MIN_POSITIVE);
        let asym = (xi - xi.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(invalid(format!("quadratic form needs a symmetric matrix (asymmetry {asym:e})")));
        }
        let c = self.stiffness_apply(xi)?;
        Ok(c.component_mul(xi).sum())
    }

    /// Frobenius product `(C a, b)` for arbitrary square matrices.
    pub fn energy_density(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        self.check_square(b)?;
        Ok(self.stiffness_apply(a)?.component_mul(b).sum())
    }
}

/// Symmetric part of a square matrix.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// One element of the rigid displacement space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigidMotion {
    /// `e_i`
    Translation(usize),
    /// `+x_j` in slot `i`, `-x_i` in slot `j` (zero-based, `i < j`).
    Rotation { i: usize, j: usize },
}

impl RigidMotion {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        match *self {
            RigidMotion::Translation(i) => out[i] = 1.0,
            RigidMotion::Rotation { i, j } => {
                out[i] = x[j];
                out[j] = -x[i];
            }
        }
        out
    }

    /// Constant gradient matrix, `G[k][l] = d psi_k / d x_l`.
    pub fn gradient(&self, dim: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(dim, dim);
        if let RigidMotion::Rotation { i, j } = *self {
            g[(i, j)] = 1.0;
            g[(j, i)] = -1.0;
        }
        g
    }

    /// `(A, c)` with `psi(x) = A x + c`.
    pub fn affine(&self, dim: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut c = vec![0.0; dim];
        if let RigidMotion::Translation(i) = *self {
            c[i] = 1.0;
        }
        (self.gradient(dim), c)
    }
}

/// Ordered basis `psi_1, ..., psi_N` of rigid displacements, `N = d(d+1)/2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RigidMotionBasis {
    pub dim: usize,
    pub motions: Vec<RigidMotion>,
}

/// `d(d+1)/2`
pub fn rigid_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Translations first, then the rotations coupling each axis with `x_d`, then the
/// remaining in-plane rotations with pairs enumerated lexicographically.
pub fn rigid_basis(dim: usize) -> Result<RigidMotionBasis> {
    if dim < 2 {
        return Err(invalid(format!("rigid basis needs d >= 2, got {dim}")));
    }
    let mut motions: Vec<RigidMotion> = (0..dim).map(RigidMotion::Translation).collect();
    let last = dim - 1;
    for i in 0..last {
        motions.push(RigidMotion::Rotation { i, j: last });
    }
    for i in 0..last {
        for j in (i + 1)..last {
            motions.push(RigidMotion::Rotation { i, j });
        }
    }
    debug_assert_eq!(motions.len(), rigid_count(dim));
    Ok(RigidMotionBasis { dim, motions })
}

impl RigidMotionBasis {
    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    pub fn eval(&self, alpha: usize, x: &[f64]) -> Vec<f64> {
        self.motions[alpha].eval(x)
    }

    /// Stacks the values of every motion at every point: `(d * points) x N`.
    pub fn evaluation_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d * points.len(), self.len());
        for (p, x) in points.iter().enumerate() {
            for (a, motion) in self.motions.iter().enumerate() {
                let v = motion.eval(x);
                for k in 0..d {
                    m[(p * d + k, a)] = v[k];
                }
            }
        }
        m
    }

    /// Numerical rank of the evaluation matrix at the given points.
    pub fn evaluation_rank(&self, points: &[Vec<f64>]) -> usize {
        let m = self.evaluation_matrix(points);
        let sv = m.svd(false, false).singular_values;
        let top = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_stiffness() {
        let p = LameParameters::new(1.0, 1.0, 2).unwrap();
        let out = p.stiffness_apply(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(out, DMatrix::identity(2, 2) * 4.0);
        assert_eq!(p.quadratic_form(&DMatrix::identity(2, 2)).unwrap(), 8.0);
    }

    #[test]
    fn rejects_asymmetric_and_mismatched() {
        let p = LameParameters::new(1.0, 1.0, 2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(p.quadratic_form(&a).is_err());
        assert!(p.stiffness_apply(&DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(LameParameters::new(1.0, 0.0, 2).is_err());
        assert!(LameParameters::new(-1.0, 0.5, 2).is_err());
        assert!(LameParameters::new(-0.4, 0.5, 2).is_ok());
        assert!(LameParameters::new(1.0, 1.0, 1).is_err());
        let p = LameParameters::new(1.0, 1.0, 2).unwrap();
        assert!(p.with_kappa3(0.2).is_ok());
        assert!(p.with_kappa3(0.5).is_err());
    }

    #[test]
    fn basis_layout_3d() {
        let b = rigid_basis(3).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.eval(3, &[1.0, 2.0, 3.0]), vec![3.0, 0.0, -1.0]);
        assert_eq!(b.eval(4, &[1.0, 2.0, 3.0]), vec![0.0, 3.0, -2.0]);
        assert_eq!(b.eval(5, &[1.0, 2.0, 3.0]), vec![2.0, -1.0, 0.0]);
        assert!(rigid_basis(1).is_err());
    }
}
