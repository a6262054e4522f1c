//! Design pipeline: build, solve, verify, and post-solve certificates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::DesignResult;
use crate::edmd::Surrogate;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{block_diag, hstack, kron, max_eigenvalue, spd_inverse, sym, vstack, Mat, MatrixData, Vector};
use crate::lmi::{build_theorem1, build_theorem2, BuildOptions, ProblemManifest, SynthesisProblem, Theorem};
use crate::sdp::{self, SolveOptions, SolveReport, SolveStatus, Verification};
use crate::uncertainty::UncertaintyRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub theorem: Theorem,
    pub build: BuildOptions,
    pub solve: SolveOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { theorem: Theorem::One, build: BuildOptions::default(), solve: SolveOptions::default() }
    }
}

pub fn build(s: &Surrogate, u: &UncertaintyRegion, theorem: Theorem, opts: &BuildOptions) -> Result<SynthesisProblem> {
    match theorem {
        Theorem::One => build_theorem1(s, u, opts),
        Theorem::Two => build_theorem2(s, u, opts),
    }
}

/// Everything produced by one synthesis run.
#[derive(Debug, Clone)]
pub struct Design {
    pub result: DesignResult,
    pub report: SolveReport,
    pub verification: Verification,
    pub manifest: ProblemManifest,
}

/// Human-readable list of the constraints whose margin failed.
fn diagnosis(report: &SolveReport) -> String {
    let failing: Vec<String> = report
        .margins
        .iter()
        .filter(|m| !m.pass)
        .map(|m| format!("{} (min eigenvalue {:.3e}, required {:.3e})", m.name, m.min_eigenvalue, m.required))
        .collect();
    let t = report.phase1_margin.map_or(String::new(), |t| format!("maximal common margin {t:.3e}; "));
    if failing.is_empty() {
        format!("{t}{}", report.message)
    } else {
        format!("{t}failing: {}", failing.join(", "))
    }
}

/// Solves the chosen theorem; a feasible status must also pass the independent verifier.
pub fn synthesize(s: &Surrogate, u: &UncertaintyRegion, opts: &DesignOptions) -> Result<Design> {
    let problem = build(s, u, opts.theorem, &opts.build)?;
    solve_problem(&problem, &opts.solve)
}

pub fn solve_problem(problem: &SynthesisProblem, opts: &SolveOptions) -> Result<Design> {
    let program = sdp::lower(problem)?;
    let report = sdp::solve(&program, opts);
    match report.status {
        SolveStatus::Feasible => {}
        SolveStatus::InfeasibleCertificate => return Err(Error::Infeasible(diagnosis(&report))),
        SolveStatus::NumericalFailure | SolveStatus::IterationLimit => {
            return Err(Error::Solver(format!("{:?}: {}", report.status, diagnosis(&report))))
        }
    }
    let verification = sdp::verify(problem, &report.assignment)?;
    if !verification.pass {
        return Err(Error::Verification(
            verification
                .margins
                .iter()
                .filter(|m| !m.pass)
                .map(|m| format!("{} min eigenvalue {:.3e}", m.name, m.min_eigenvalue))
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    let result = DesignResult::from_problem(problem, &report.assignment, verification.margins.clone())?;
    Ok(Design { result, report, verification, manifest: problem.manifest() })
}

/// Bound on `trace(P̂)` per lifted dimension in the shape-finding step.
pub const SHAPE_TRACE_CAP: f64 = 1e3;

/// Record of the region heuristic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeuristicLog {
    pub theorem: Theorem,
    pub rz: f64,
    pub trace_cap: f64,
    pub p_hat: MatrixData,
    pub qz: MatrixData,
    pub step1_manifest: ProblemManifest,
    pub note: String,
}

/// Solves without the invariance LMI under `Q_z = −I`, then shapes `Q_z` from `P̂`.
pub fn procedure1(s: &Surrogate, rz: f64, opts: &DesignOptions) -> Result<(UncertaintyRegion, HeuristicLog)> {
    let ball = UncertaintyRegion::ball(s.big_n(), rz)?;
    let build_opts = BuildOptions { invariance: false, trace_cap: Some(SHAPE_TRACE_CAP), ..opts.build };
    let problem = build(s, &ball, opts.theorem, &build_opts)?;
    let design = solve_problem(&problem, &opts.solve)?;
    let p_hat = design.result.p.clone();
    let region = UncertaintyRegion::from_shape(&p_hat, rz)?;
    let log = HeuristicLog {
        theorem: opts.theorem,
        rz,
        trace_cap: SHAPE_TRACE_CAP,
        p_hat: (&p_hat).into(),
        qz: (&region.qz).into(),
        step1_manifest: problem.manifest(),
        note: "trace(P) <= N * trace_cap added to bound the shape-finding step".into(),
    };
    Ok((region, log))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualizationReport {
    pub max_eigenvalue: f64,
    pub pass: bool,
}

/// Evaluates the analysis inequality `Ψ̃ᵀ diag(…) Ψ̃` the synthesis LMI dualizes.
///
/// The returned matrix is negative definite for a valid design; the sign
/// convention follows the dissipation inequality before dualization.
pub fn dualization_matrix(s: &Surrogate, u: &UncertaintyRegion, d: &DesignResult) -> Result<Mat> {
    let n = s.big_n();
    let m = s.m();
    check_dim("design lifted dimension", n, d.big_n())?;
    check_dim("design inputs", m, d.m())?;
    let nm = n * m;
    let k = &d.k;
    let kw = d.kw.clone().unwrap_or_else(|| Mat::zeros(m, nm));
    let a_k = &s.a + &s.b0 * k;
    let b_kw = s.b_tilde() + &s.b0 * &kw;
    let i_n = Mat::identity(n, n);
    let z = |r: usize, c: usize| Mat::zeros(r, c);

    let row1 = hstack(&[
        &i_n,
        &a_k.transpose(),
        &z(n, nm),
        &k.transpose(),
        &z(n, n),
        &hstack(&[&i_n, &k.transpose()]),
    ]);
    let row2 = hstack(&[
        &z(nm, n),
        &b_kw.transpose(),
        &Mat::identity(nm, nm),
        &kw.transpose(),
        &z(nm, n),
        &hstack(&[&z(nm, n), &kw.transpose()]),
    ]);
    let row3 = hstack(&[&z(n, n), &i_n, &z(n, nm), &z(n, m), &i_n, &z(n, n + m)]);
    let psi_t = vstack(&[&row1, &row2, &row3]);

    let p_inv = spd_inverse(&d.p)?;
    let mut lyap = Mat::zeros(2 * n, 2 * n);
    lyap.view_mut((0, n), (n, n)).copy_from(&p_inv);
    lyap.view_mut((n, 0), (n, n)).copy_from(&p_inv);
    let lam_tilde = spd_inverse(&sym(&d.lambda))?;
    let pi_delta = u.multiplier(&lam_tilde);
    let mut pi_r = Mat::zeros(2 * n + m, 2 * n + m);
    pi_r.view_mut((0, 0), (n, n)).copy_from(&(-&i_n));
    pi_r
        .view_mut((n, n), (n + m, n + m))
        .copy_from(&(Mat::identity(n + m, n + m) * (2.0 * s.c_r * s.c_r)));
    let pi_r = pi_r / d.tau;
    let middle = block_diag(&[&lyap, &pi_delta, &pi_r]);
    Ok(sym(&(&psi_t * middle * psi_t.transpose())))
}

pub fn dualization_check(s: &Surrogate, u: &UncertaintyRegion, d: &DesignResult) -> Result<DualizationReport> {
    let max_eigenvalue = max_eigenvalue(&dualization_matrix(s, u, d)?);
    Ok(DualizationReport { max_eigenvalue, pass: max_eigenvalue < 0.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub samples: usize,
    /// Largest `V̇ / zᵀP⁻¹z` observed.
    pub worst_rate: f64,
    pub worst_state: Vec<f64>,
    pub pass: bool,
}

/// Samples lifted states in the ellipsoid, scheduling vectors on the region
/// boundary, and remainders saturating their bound, and checks `V̇ < 0`.
pub fn decrease_certificate(
    s: &Surrogate,
    u: &UncertaintyRegion,
    d: &DesignResult,
    samples: usize,
    seed: u64,
) -> Result<DecreaseReport> {
    let n = s.big_n();
    let m = s.m();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chol = d.p.clone().cholesky().ok_or_else(|| Error::Singular("P is not positive definite".into()))?;
    let l = chol.l();
    let mut report = DecreaseReport { samples, worst_rate: f64::NEG_INFINITY, worst_state: Vec::new(), pass: true };
    let b_tilde = s.b_tilde();
    let mut draws = 0;
    let mut i = 0;
    while i < samples {
        draws += 1;
        if draws > 100 * samples.max(1) {
            return Err(Error::Invalid("could not sample the region boundary".into()));
        }
        // State inside the ellipsoid zᵀP⁻¹z ≤ 1.
        let g = gauss(&mut rng, n);
        let radius: f64 = rng.random::<f64>().powf(1.0 / n as f64);
        let z = &l * (&g / g.norm()) * radius;
        // Scheduling vector on the region boundary: scale a random direction.
        let dir = gauss(&mut rng, n);
        let qa = (dir.transpose() * &u.qz * &dir)[(0, 0)];
        let sb = u.sz.dot(&dir);
        let disc = sb * sb - qa * u.rz;
        if !(qa < 0.0 && disc >= 0.0) {
            continue;
        }
        let alpha = (-sb - disc.sqrt()) / qa;
        let delta = &dir * alpha;
        let (uin, _) = match d.lifted_feedback(&z, &delta) {
            Ok(v) => v,
            Err(Error::SingularFeedback { .. }) => continue,
            Err(e) => return Err(e),
        };
        let bil = &b_tilde * kron(&Mat::from_column_slice(m, 1, uin.as_slice()), &Mat::from_column_slice(n, 1, delta.as_slice()));
        let drift = &s.a * &z + &s.b0 * &uin + bil.column(0);
        let grad = &d.p_inv * &z * 2.0;
        let bound = (2.0f64).sqrt() * s.c_r * (z.norm_squared() + uin.norm_squared()).sqrt();
        // Alternate between random and worst-case remainder directions.
        let w = if i % 2 == 0 {
            let r = gauss(&mut rng, n);
            &r / r.norm() * bound
        } else if grad.norm() > 0.0 {
            &grad / grad.norm() * bound
        } else {
            Vector::zeros(n)
        };
        let vdot = grad.dot(&(drift + w));
        let v = (z.transpose() * &d.p_inv * &z)[(0, 0)];
        if v > 0.0 {
            let rate = vdot / v;
            if rate > report.worst_rate {
                report.worst_rate = rate;
                report.worst_state = z.iter().copied().collect();
            }
            if vdot >= 0.0 {
                report.pass = false;
            }
        }
        i += 1;
    }
    Ok(report)
}

fn gauss<R: Rng>(rng: &mut R, k: usize) -> Vector {
    Vector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
