//! Adapter to the Clarabel conic solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{BackendResult, IpmOptions, IpmStatus, SdpBackend, StandardSdp};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, Default)]
pub struct Clarabel;

/// Row of entry `(i, j)`, `i ≤ j`, in the column-wise upper-triangle vectorization.
fn svec_row(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn push_svec(m: &Mat, base: usize, out: &mut Vec<(usize, f64)>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..=j {
            let v = if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] };
            if v != 0.0 {
                out.push((base + svec_row(i, j), v));
            }
        }
    }
}

impl SdpBackend for Clarabel {
    fn solve_standard(&self, sdp: &StandardSdp, opts: &IpmOptions) -> BackendResult {
        let nvar = sdp.num_vars();
        let mut bases = Vec::with_capacity(sdp.c.len());
        let mut rows = 0;
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        for c in &sdp.c {
            bases.push(rows);
            let n = c.nrows();
            rows += svec_len(n);
            match (n, cones.last_mut()) {
                (1, Some(SupportedConeT::NonnegativeConeT(k))) => *k += 1,
                (1, _) => cones.push(SupportedConeT::NonnegativeConeT(1)),
                _ => cones.push(SupportedConeT::PSDTriangleConeT(n)),
            }
        }
        let mut b_entries = Vec::new();
        for (c, &base) in sdp.c.iter().zip(&bases) {
            push_svec(c, base, &mut b_entries);
        }
        let mut b = vec![0.0; rows];
        for (r, v) in b_entries {
            b[r] = v;
        }

        let mut colptr = vec![0];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for blocks in &sdp.a {
            let mut col = Vec::new();
            for (k, a) in blocks {
                push_svec(a, bases[*k], &mut col);
            }
            col.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for (r, v) in col {
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            for (r, v) in merged {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(rows, nvar, colptr, rowval, nzval);
        let p = CscMatrix::<f64>::zeros((nvar, nvar));
        let q: Vec<f64> = sdp.b.iter().map(|v| -v).collect();

        let settings = DefaultSettings {
            verbose: false,
            max_iter: opts.max_iterations as u32,
            tol_feas: opts.tolerance,
            tol_gap_rel: opts.tolerance,
            tol_gap_abs: opts.tolerance,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return BackendResult {
                    status: IpmStatus::NumericalFailure(format!("clarabel setup: {e}")),
                    y: vec![0.0; nvar],
                    iterations: 0,
                }
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => IpmStatus::Converged,
            SolverStatus::AlmostSolved => IpmStatus::Inaccurate,
            SolverStatus::MaxIterations => IpmStatus::IterationLimit,
            other => IpmStatus::NumericalFailure(format!("clarabel: {other:?}")),
        };
        BackendResult { status, y: sol.x.clone(), iterations: sol.iterations as usize }
    }
}
