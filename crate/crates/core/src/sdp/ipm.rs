//! Dense primal-dual interior-point method for small block-diagonal SDPs.
//!
//! Solves the pair
//!
//! ```text
//! (P)  min ⟨C, X⟩  s.t. ⟨A_i, X⟩ = b_i, X ⪰ 0
//! (D)  max bᵀy     s.t. C − Σ y_i A_i = S ⪰ 0
//! ```
//!
//! with the HKM search direction and Mehrotra predictor-corrector steps from
//! an infeasible starting point.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::linalg::{sym, sym_eigenvalues, Mat, Vector};

/// Problem data; `a[i]` lists the nonzero blocks of `A_i`.
#[derive(Debug, Clone)]
pub struct StandardSdp {
    pub c: Vec<Mat>,
    pub a: Vec<Vec<(usize, Mat)>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpmOptions {
    pub tolerance: f64,
    /// Looser tolerance met by the best iterate when the run ends early.
    pub inaccurate_tolerance: f64,
    pub max_iterations: usize,
    /// Fraction of the step to the cone boundary.
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, inaccurate_tolerance: 1e-6, max_iterations: 200, step_fraction: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmStatus {
    Converged,
    /// Ended early; the best iterate meets only the looser tolerance.
    Inaccurate,
    IterationLimit,
    NumericalFailure(String),
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    pub y: Vec<f64>,
    pub x: Vec<Mat>,
    pub s: Vec<Mat>,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
}

/// Iterations without a better iterate before giving up.
const STAGNATION_WINDOW: usize = 15;

fn inner(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[Mat]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

impl StandardSdp {
    pub fn num_vars(&self) -> usize {
        self.b.len()
    }

    fn sizes(&self) -> Vec<usize> {
        self.c.iter().map(|m| m.nrows()).collect()
    }

    /// `A(X)_i = ⟨A_i, X⟩`.
    pub fn apply(&self, x: &[Mat]) -> Vec<f64> {
        self.a
            .iter()
            .map(|blocks| blocks.iter().map(|(k, ak)| ak.dot(&x[*k])).sum())
            .collect()
    }

    /// `Σ y_i A_i`.
    pub fn adjoint(&self, y: &[f64]) -> Vec<Mat> {
        let mut out: Vec<Mat> = self.sizes().iter().map(|&n| Mat::zeros(n, n)).collect();
        for (yi, blocks) in y.iter().zip(&self.a) {
            if *yi == 0.0 {
                continue;
            }
            for (k, ak) in blocks {
                out[*k] += ak * *yi;
            }
        }
        out
    }

    pub fn slack(&self, y: &[f64]) -> Vec<Mat> {
        let ay = self.adjoint(y);
        self.c.iter().zip(ay).map(|(c, a)| c - a).collect()
    }
}

fn max_step(x: &[Mat], dx: &[Mat]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xk, dk) in x.iter().zip(dx) {
        let chol = Cholesky::new(xk.clone())?;
        let l = chol.l();
        let linv = l.solve_lower_triangular(&Mat::identity(xk.nrows(), xk.nrows()))?;
        let m = &linv * dk * linv.transpose();
        let lam = sym_eigenvalues(&m)[0];
        if lam < 0.0 {
            alpha = alpha.min(-1.0 / lam);
        }
    }
    Some(alpha)
}

fn initial_point(p: &StandardSdp) -> (Vec<Mat>, Vec<Mat>) {
    let mut xs = Vec::with_capacity(p.c.len());
    let mut ss = Vec::with_capacity(p.c.len());
    for (k, c) in p.c.iter().enumerate() {
        let n = c.nrows();
        let nf = n as f64;
        let mut ratio: f64 = 0.0;
        let mut amax: f64 = 0.0;
        for (i, blocks) in p.a.iter().enumerate() {
            for (bk, a) in blocks {
                if *bk == k {
                    let an = a.norm();
                    ratio = ratio.max((1.0 + p.b[i].abs()) / (1.0 + an));
                    amax = amax.max(an);
                }
            }
        }
        let xi = 10f64.max(nf.sqrt()).max(nf * ratio);
        let eta = 10f64.max(nf.sqrt()).max(amax).max(c.norm());
        xs.push(Mat::identity(n, n) * xi);
        ss.push(Mat::identity(n, n) * eta);
    }
    (xs, ss)
}

/// Residual score and `(x, s, y, iteration)` of an iterate.
type Snapshot = (f64, Vec<Mat>, Vec<Mat>, Vec<f64>, usize);

pub fn solve(p: &StandardSdp, opts: &IpmOptions) -> IpmResult {
    let m = p.num_vars();
    let nblocks = p.c.len();
    let total_dim: f64 = p.c.iter().map(|c| c.nrows() as f64).sum();
    let (mut x, mut s) = initial_point(p);
    let mut y = vec![0.0; m];
    let bnorm = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cnorm = frob(&p.c);

    // Variables touching each block, for the Schur complement.
    let mut by_block: Vec<Vec<(usize, &Mat)>> = vec![Vec::new(); nblocks];
    for (i, blocks) in p.a.iter().enumerate() {
        for (k, a) in blocks {
            by_block[*k].push((i, a));
        }
    }

    let result = |status: IpmStatus, x: Vec<Mat>, s: Vec<Mat>, y: Vec<f64>, it: usize| {
        let ax = p.apply(&x);
        let rp: f64 = ax.iter().zip(&p.b).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let ay = p.adjoint(&y);
        let rd: Vec<Mat> = (0..nblocks).map(|k| &p.c[k] - &s[k] - &ay[k]).collect();
        let pobj = inner(&p.c, &x);
        let dobj: f64 = p.b.iter().zip(&y).map(|(b, y)| b * y).sum();
        IpmResult {
            status,
            primal_objective: pobj,
            dual_objective: dobj,
            primal_infeasibility: rp / (1.0 + bnorm),
            dual_infeasibility: frob(&rd) / (1.0 + cnorm),
            relative_gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
            y,
            x,
            s,
            iterations: it,
        }
    };

    // Best iterate by its worst residual, returned when the run ends early.
    let mut best: Option<Snapshot> = None;
    let fallback = |status: IpmStatus, x, s, y, it, best: Option<Snapshot>| match best {
        Some((score, bx, bs, by, bit)) if score <= opts.inaccurate_tolerance => result(IpmStatus::Inaccurate, bx, bs, by, bit),
        _ => result(status, x, s, y, it),
    };

    let mut stalls = 0;
    for it in 0..opts.max_iterations {
        let ax = p.apply(&x);
        let rp: Vec<f64> = p.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let ay = p.adjoint(&y);
        let rd: Vec<Mat> = (0..nblocks).map(|k| &p.c[k] - &s[k] - &ay[k]).collect();
        let mu = inner(&x, &s) / total_dim;
        let pobj = inner(&p.c, &x);
        let dobj: f64 = p.b.iter().zip(&y).map(|(b, y)| b * y).sum();
        let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + bnorm);
        let dinf = frob(&rd) / (1.0 + cnorm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if !(mu.is_finite() && pinf.is_finite() && dinf.is_finite()) {
            return fallback(IpmStatus::NumericalFailure("non-finite iterate".into()), x, s, y, it, best);
        }
        if pinf <= opts.tolerance && dinf <= opts.tolerance && gap <= opts.tolerance {
            return result(IpmStatus::Converged, x, s, y, it);
        }
        let score = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, x.clone(), s.clone(), y.clone(), it));
        } else if best.as_ref().is_some_and(|b| it > b.4 + STAGNATION_WINDOW) {
            return fallback(IpmStatus::NumericalFailure("no progress".into()), x, s, y, it, best);
        }

        let mut sinv = Vec::with_capacity(nblocks);
        for sk in &s {
            match Cholesky::new(sym(sk)) {
                Some(c) => sinv.push(sym(&c.inverse())),
                None => {
                    return fallback(IpmStatus::NumericalFailure("slack matrix lost definiteness".into()), x, s, y, it, best)
                }
            }
        }

        // Schur complement M_ij = tr(A_i X A_j S⁻¹).
        let mut schur = Mat::zeros(m, m);
        for k in 0..nblocks {
            for &(j, aj) in &by_block[k] {
                let g = &x[k] * aj * &sinv[k];
                let gt = g.transpose();
                for &(i, ai) in &by_block[k] {
                    if i <= j {
                        schur[(i, j)] += ai.dot(&gt);
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let diag_max = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max);
        let factor = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let mut reg = schur.clone();
                for i in 0..m {
                    reg[(i, i)] += 1e-14 * diag_max.max(1.0);
                }
                match Cholesky::new(reg) {
                    Some(c) => c,
                    None => {
                        return fallback(IpmStatus::NumericalFailure("Schur complement is not positive definite".into()), x, s, y, it, best)
                    }
                }
            }
        };

        let a_sinv = p.apply(&sinv);
        let x_rd_sinv: Vec<Mat> = (0..nblocks).map(|k| &x[k] * &rd[k] * &sinv[k]).collect();
        let a_xrd = p.apply(&x_rd_sinv);

        let direction = |sigma: f64, corr: Option<&[Mat]>| -> (Vec<f64>, Vec<Mat>, Vec<Mat>) {
            let a_corr = corr.map(|c| p.apply(c));
            let rhs: Vec<f64> = (0..m)
                .map(|i| {
                    p.b[i] - sigma * mu * a_sinv[i]
                        + a_xrd[i]
                        + a_corr.as_ref().map_or(0.0, |v| v[i])
                })
                .collect();
            let dy = factor.solve(&Vector::from_vec(rhs));
            let dy: Vec<f64> = dy.iter().copied().collect();
            let ady = p.adjoint(&dy);
            let ds: Vec<Mat> = (0..nblocks).map(|k| &rd[k] - &ady[k]).collect();
            let dx: Vec<Mat> = (0..nblocks)
                .map(|k| {
                    let mut d = &sinv[k] * (sigma * mu) - &x[k] - &x[k] * &ds[k] * &sinv[k];
                    if let Some(c) = corr {
                        d -= &c[k];
                    }
                    sym(&d)
                })
                .collect();
            (dy, dx, ds)
        };

        // Predictor.
        let (_, dxa, dsa) = direction(0.0, None);
        let (ap, ad) = match (max_step(&x, &dxa), max_step(&s, &dsa)) {
            (Some(a), Some(b)) => (a.min(1.0), b.min(1.0)),
            _ => return fallback(IpmStatus::NumericalFailure("iterate left the cone".into()), x, s, y, it, best),
        };
        let mu_aff = (0..nblocks)
            .map(|k| (&x[k] + &dxa[k] * ap).dot(&(&s[k] + &dsa[k] * ad)))
            .sum::<f64>()
            / total_dim;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let corr: Vec<Mat> = (0..nblocks).map(|k| &dxa[k] * &dsa[k] * &sinv[k]).collect();
        let (dy, dx, ds) = direction(sigma, Some(&corr));
        let (ap, ad) = match (max_step(&x, &dx), max_step(&s, &ds)) {
            (Some(a), Some(b)) => (
                (opts.step_fraction * a).min(1.0),
                (opts.step_fraction * b).min(1.0),
            ),
            _ => return fallback(IpmStatus::NumericalFailure("iterate left the cone".into()), x, s, y, it, best),
        };
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls > 5 {
                return fallback(IpmStatus::NumericalFailure("step length stalled".into()), x, s, y, it, best);
            }
        } else {
            stalls = 0;
        }
        for k in 0..nblocks {
            x[k] = sym(&(&x[k] + &dx[k] * ap));
            s[k] = sym(&(&s[k] + &ds[k] * ad));
        }
        for (yi, d) in y.iter_mut().zip(&dy) {
            *yi += ad * d;
        }
    }
    fallback(IpmStatus::IterationLimit, x, s, y, opts.max_iterations, best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn linear_program_in_scalar_blocks() {
        // max y s.t. 1 − y ≥ 0, 3 + y ≥ 0.
        let p = StandardSdp {
            c: vec![scalar(1.0), scalar(3.0)],
            a: vec![vec![(0, scalar(1.0)), (1, scalar(-1.0))]],
            b: vec![1.0],
        };
        let r = solve(&p, &IpmOptions::default());
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.y[0] - 1.0).abs() < 1e-7, "{}", r.y[0]);
    }

    #[test]
    fn max_eigenvalue_bound() {
        // max t s.t. C − tI ⪰ 0 gives the minimum eigenvalue of C.
        let c = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = StandardSdp { c: vec![c.clone()], a: vec![vec![(0, Mat::identity(2, 2))]], b: vec![1.0] };
        let r = solve(&p, &IpmOptions::default());
        assert_eq!(r.status, IpmStatus::Converged);
        let expected = sym_eigenvalues(&c)[0];
        assert!((r.y[0] - expected).abs() < 1e-7);
    }
}
