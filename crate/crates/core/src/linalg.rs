//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut view = out.view_mut((i * br, j * bc), (br, bc));
            view.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Symmetric part `(m + mᵀ) / 2`.
pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(sym(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Moore–Penrose pseudo-inverse with a relative singular-value cutoff.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: Mat,
    pub rank: usize,
    /// `σ_max / σ_min` over the retained singular values.
    pub condition: f64,
    pub full_rank: bool,
}

pub fn pinv(m: &Mat, rel_cutoff: f64) -> Result<PseudoInverse> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-inverse input".into()));
    }
    let (r, c) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_cutoff * smax;
    let mut out = Mat::zeros(c, r);
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            smin = smin.min(s);
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    let condition = if rank == 0 { f64::INFINITY } else { smax / smin };
    Ok(PseudoInverse {
        matrix: out,
        rank,
        condition,
        full_rank: rank == r.min(c),
    })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    let chol = nalgebra::Cholesky::new(sym(m))
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(sym(&chol.inverse()))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse does not exist".into()))
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &Mat) -> f64 {
    let s = m.clone().singular_values();
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// Symmetric block matrix assembled from lower-triangular blocks.
///
/// `blocks[i][j]` for `j <= i` is the `(i, j)` block; the upper triangle is
/// filled with transposes.
pub fn sym_block(sizes: &[usize], lower: &[Vec<Option<Mat>>]) -> Mat {
    let offsets = offsets(sizes);
    let n: usize = sizes.iter().sum();
    let mut out = Mat::zeros(n, n);
    for (i, row) in lower.iter().enumerate() {
        for (j, block) in row.iter().enumerate().take(i + 1) {
            if let Some(b) = block {
                debug_assert_eq!(b.shape(), (sizes[i], sizes[j]));
                out.view_mut((offsets[i], offsets[j]), b.shape()).copy_from(b);
                if i != j {
                    out.view_mut((offsets[j], offsets[i]), (b.ncols(), b.nrows()))
                        .copy_from(&b.transpose());
                }
            }
        }
    }
    out
}

pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Row-major matrix with explicit shape, the on-disk matrix format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for MatrixData {
    fn from(m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<&MatrixData> for Mat {
    type Error = Error;

    fn try_from(d: &MatrixData) -> Result<Mat> {
        if d.data.len() != d.rows * d.cols {
            return Err(Error::Dimension {
                context: "matrix data length",
                expected: d.rows * d.cols,
                got: d.data.len(),
            });
        }
        Ok(Mat::from_row_slice(d.rows, d.cols, &d.data))
    }
}
