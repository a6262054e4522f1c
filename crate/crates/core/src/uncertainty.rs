//! Ellipsoidal uncertainty region for the lifted state and its Kronecker multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    inverse, kron, max_eigenvalue, spd_inverse, spectral_norm, sym, vstack, Mat, MatrixData,
    Vector,
};

/// `{v : [v;1]ᵀ [[Q, S], [Sᵀ, R]] [v;1] ≥ 0}` with cached inverse blocks.
#[derive(Debug, Clone)]
pub struct UncertaintyRegion {
    pub qz: Mat,
    pub sz: Vector,
    pub rz: f64,
    pub q_tilde: Mat,
    pub s_tilde: Vector,
    pub r_tilde: f64,
    /// `Q̃⁻¹`, symmetrized.
    pub q_tilde_inv: Mat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFile {
    #[serde(rename = "Qz")]
    pub qz: MatrixData,
    #[serde(rename = "Sz")]
    pub sz: Vec<f64>,
    #[serde(rename = "Rz")]
    pub rz: f64,
}

impl UncertaintyRegion {
    pub fn new(qz: Mat, sz: Vector, rz: f64) -> Result<Self> {
        let n = qz.nrows();
        check_dim("Q_z columns", n, qz.ncols())?;
        check_dim("S_z length", n, sz.len())?;
        if (&qz - qz.transpose()).amax() > 1e-12 * (1.0 + qz.amax()) {
            return Err(Error::Invalid("Q_z must be symmetric".into()));
        }
        let qz = sym(&qz);
        if !(max_eigenvalue(&qz) < 0.0) {
            return Err(Error::Invalid("Q_z must be negative definite".into()));
        }
        if !(rz > 0.0 && rz.is_finite()) {
            return Err(Error::Invalid(format!("R_z must be positive, got {rz}")));
        }
        let full = Self::assemble(&qz, &sz, rz);
        let inv = sym(&inverse(&full)?);
        let resid = (&full * &inv - Mat::identity(n + 1, n + 1)).amax();
        if !(resid <= 1e-10) {
            return Err(Error::Singular(format!(
                "region matrix inverse residual {resid:.3e}"
            )));
        }
        let q_tilde = inv.view((0, 0), (n, n)).into_owned();
        let s_tilde = inv.view((0, n), (n, 1)).column(0).into_owned();
        let r_tilde = inv[(n, n)];
        let q_tilde_inv = sym(&inverse(&q_tilde)?);
        Ok(Self {
            qz,
            sz,
            rz,
            q_tilde,
            s_tilde,
            r_tilde,
            q_tilde_inv,
        })
    }

    /// `Q_z = −I`, `S_z = 0`.
    pub fn ball(n: usize, rz: f64) -> Result<Self> {
        Self::new(-Mat::identity(n, n), Vector::zeros(n), rz)
    }

    /// `Q_z = −P̂⁻¹/‖P̂⁻¹‖₂`, `S_z = 0`.
    pub fn from_shape(p_hat: &Mat, rz: f64) -> Result<Self> {
        let p_inv = spd_inverse(p_hat)?;
        let qz = -&p_inv / spectral_norm(&p_inv);
        Self::new(qz, Vector::zeros(p_hat.nrows()), rz)
    }

    fn assemble(q: &Mat, s: &Vector, r: f64) -> Mat {
        let n = q.nrows();
        let mut m = Mat::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(q);
        m.view_mut((0, n), (n, 1)).copy_from(s);
        m.view_mut((n, 0), (1, n)).copy_from(&s.transpose());
        m[(n, n)] = r;
        m
    }

    pub fn dim(&self) -> usize {
        self.qz.nrows()
    }

    pub fn matrix(&self) -> Mat {
        Self::assemble(&self.qz, &self.sz, self.rz)
    }

    pub fn inverse_matrix(&self) -> Mat {
        Self::assemble(&self.q_tilde, &self.s_tilde, self.r_tilde)
    }

    /// Returns `(inside, [v;1]ᵀ M [v;1])`.
    pub fn membership(&self, v: &Vector) -> Result<(bool, f64)> {
        check_dim("membership vector", self.dim(), v.len())?;
        let margin = (v.transpose() * &self.qz * v)[(0, 0)] + 2.0 * self.sz.dot(v) + self.rz;
        Ok((margin >= 0.0, margin))
    }

    /// `Π_Δ = [[Λ̃⊗Q, Λ̃⊗S], [Λ̃⊗Sᵀ, Λ̃⊗R]]`.
    pub fn multiplier(&self, lambda_tilde: &Mat) -> Mat {
        self.kron_blocks(lambda_tilde, &self.qz, &self.sz, self.rz)
    }

    /// Closed form of `Π_Δ⁻¹` for `Λ̃ = Λ⁻¹`.
    pub fn multiplier_inverse(&self, lambda: &Mat) -> Result<Mat> {
        check_dim("Lambda columns", lambda.nrows(), lambda.ncols())?;
        let s = lambda.clone().singular_values();
        let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = s.iter().copied().fold(0.0, f64::max);
        if !(smin > 1e-14 * smax.max(1.0)) {
            return Err(Error::Singular("Lambda".into()));
        }
        Ok(self.kron_blocks(lambda, &self.q_tilde, &self.s_tilde, self.r_tilde))
    }

    fn kron_blocks(&self, l: &Mat, q: &Mat, s: &Vector, r: f64) -> Mat {
        let m = l.nrows();
        let n = self.dim();
        let s_col = Mat::from_column_slice(n, 1, s.as_slice());
        let r_mat = Mat::from_element(1, 1, r);
        let mut out = Mat::zeros(m * n + m, m * n + m);
        out.view_mut((0, 0), (m * n, m * n)).copy_from(&kron(l, q));
        let ks = kron(l, &s_col);
        out.view_mut((0, m * n), (m * n, m)).copy_from(&ks);
        out.view_mut((m * n, 0), (m, m * n)).copy_from(&ks.transpose());
        out.view_mut((m * n, m * n), (m, m)).copy_from(&kron(l, &r_mat));
        out
    }

    /// `T = [I_m ⊗ [I_N 0]; I_m ⊗ [0 1]]`.
    pub fn permutation(&self, m: usize) -> Mat {
        let n = self.dim();
        let mut top = Mat::zeros(n, n + 1);
        top.view_mut((0, 0), (n, n)).fill_with_identity();
        let mut bottom = Mat::zeros(1, n + 1);
        bottom[(0, n)] = 1.0;
        let im = Mat::identity(m, m);
        vstack(&[&kron(&im, &top), &kron(&im, &bottom)])
    }

    /// True iff `Δ = I_m ⊗ v` with `v` in the region.
    pub fn kron_delta_membership(&self, delta: &Mat) -> bool {
        let n = self.dim();
        let m = delta.ncols();
        if m == 0 || delta.nrows() != m * n {
            return false;
        }
        let v = delta.view((0, 0), (n, 1)).column(0).into_owned();
        let expected = kron(&Mat::identity(m, m), &Mat::from_column_slice(n, 1, v.as_slice()));
        if delta != &expected {
            return false;
        }
        self.membership(&v).map(|(inside, _)| inside).unwrap_or(false)
    }

    pub fn to_file(&self) -> RegionFile {
        RegionFile {
            qz: MatrixData::from(&self.qz),
            sz: self.sz.iter().copied().collect(),
            rz: self.rz,
        }
    }

    pub fn from_file(f: &RegionFile) -> Result<Self> {
        Self::new(Mat::try_from(&f.qz)?, Vector::from_vec(f.sz.clone()), f.rz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn reference_region_boundaries() {
        let ball = UncertaintyRegion::ball(2, 650.0).unwrap();
        let (inside, margin) = ball.membership(&Vector::from_vec(vec![5.0, 25.0])).unwrap();
        assert!(inside && margin.abs() < 1e-12);
        let (inside, margin) = ball.membership(&Vector::zeros(2)).unwrap();
        assert!(inside && margin == 650.0);

        let q = Mat::from_diagonal(&Vector::from_vec(vec![-0.5 / 25.0, -0.5 / 625.0]));
        let ell = UncertaintyRegion::new(q, Vector::zeros(2), 1.0).unwrap();
        let (_, margin) = ell.membership(&Vector::from_vec(vec![5.0, 25.0])).unwrap();
        assert!(margin.abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_regions() {
        assert!(UncertaintyRegion::new(Mat::identity(2, 2), Vector::zeros(2), 1.0).is_err());
        assert!(UncertaintyRegion::ball(2, 0.0).is_err());
    }

    #[test]
    fn cached_inverse_matches() {
        let q = Mat::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        let r = UncertaintyRegion::new(q, Vector::from_vec(vec![0.2, -0.1]), 3.0).unwrap();
        let prod = r.matrix() * r.inverse_matrix();
        assert!((prod - Mat::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn scalar_multiplier_inverse_is_cached_inverse() {
        let r = UncertaintyRegion::ball(3, 5.0).unwrap();
        let inv = r.multiplier_inverse(&Mat::identity(1, 1)).unwrap();
        assert_eq!(inv, r.inverse_matrix());
        assert!(r.multiplier_inverse(&Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn identity_lambda_is_permuted_block_diagonal() {
        let q = Mat::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        let r = UncertaintyRegion::new(q, Vector::from_vec(vec![0.2, -0.1]), 3.0).unwrap();
        let m = 3;
        let t = r.permutation(m);
        assert!((&t * t.transpose() - Mat::identity(t.nrows(), t.nrows())).amax() == 0.0);
        let direct = &t * kron(&Mat::identity(m, m), &r.inverse_matrix()) * t.transpose();
        let closed = r.multiplier_inverse(&Mat::identity(m, m)).unwrap();
        assert!((direct - closed).amax() < 1e-14);
    }

    #[test]
    fn kron_structure_detection() {
        let r = UncertaintyRegion::ball(2, 10.0).unwrap();
        let v = Mat::from_column_slice(2, 1, &[1.0, 2.0]);
        let good = kron(&Mat::identity(2, 2), &v);
        assert!(r.kron_delta_membership(&good));
        let mut bad = good.clone();
        bad[(3, 1)] = 2.5;
        assert!(!r.kron_delta_membership(&bad));
        assert_eq!(r.kron_delta_membership(&v), r.membership(&v.column(0).into_owned()).unwrap().0);
        let outside = kron(&Mat::identity(2, 2), &(v * 3.0));
        assert!(!r.kron_delta_membership(&outside));
    }

    #[test]
    fn shape_normalization() {
        let p = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let r = UncertaintyRegion::from_shape(&p, 5.0).unwrap();
        assert!((spectral_norm(&r.qz) - 1.0).abs() < 1e-12);
        assert!(max_eigenvalue(&r.qz) < 0.0);
        assert!(min_eigenvalue(&-&r.qz) > 0.0);
    }
}
