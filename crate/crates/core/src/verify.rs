//! Closed-loop simulation, Lyapunov audits and the LQR baseline.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{feedback, lyapunov, DesignResult};
use crate::error::{check_dim, Error, Result};
use crate::lifting::Lifting;
use crate::linalg::{inverse, kron, pinv, spd_inverse, sym, Mat, Vector};
use crate::plants::Plant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    /// `‖x‖` below which a run counts as converged.
    pub converged_norm: f64,
    /// `‖x‖` above which a run counts as diverged.
    pub escape_norm: f64,
    pub max_step: f64,
    pub initial_step: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            rtol: 1e-9,
            atol: 1e-9,
            converged_norm: 1e-8,
            escape_norm: 1e6,
            max_step: 0.1,
            initial_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    LeftDomain,
    SingularFeedback,
    Horizon,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Lyapunov function samples (`NaN` without a design).
    pub v: Vec<f64>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_norm(&self) -> f64 {
        self.final_state().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Columns `t x₁..x_n u₁..u_m V`.
    pub fn write_dat(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.times.len() {
            write!(f, "{:.12e}", self.times[i])?;
            for v in self.states[i].iter().chain(&self.inputs[i]) {
                write!(f, " {v:.12e}")?;
            }
            writeln!(f, " {:.12e}", self.v[i])?;
        }
        f.flush()?;
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// What the integrator reports at each accepted step.
pub enum StepOutcome {
    Continue,
    Stop(Termination),
}

/// Adaptive Dormand-Prince integration of `ẋ = f(x)`.
///
/// `f` may fail with a termination tag; `observe` sees every accepted state
/// (including the initial one) and may stop the run.
pub fn integrate<F, O>(f: F, x0: &[f64], opts: &SimOptions, mut observe: O) -> Termination
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, Termination>,
    O: FnMut(f64, &[f64]) -> StepOutcome,
{
    let n = x0.len();
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut h = opts.initial_step.min(opts.horizon);
    if let StepOutcome::Stop(r) = observe(t, &x) {
        return r;
    }
    let mut k = vec![vec![0.0; n]; 7];
    k[0] = match f(&x) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let mut stage = vec![0.0; n];
    while t < opts.horizon {
        h = h.min(opts.max_step);
        // Land exactly on the horizon rather than leaving a rounding-sized sliver.
        let last = t + h * (1.0 + 1e-10) >= opts.horizon;
        if last {
            h = opts.horizon - t;
        }
        if h < 1e-14 * (1.0 + t.abs()) {
            return Termination::NumericalFailure;
        }
        let mut failed = None;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            match f(&stage) {
                Ok(v) => k[s] = v,
                Err(r) => {
                    failed = Some(r);
                    break;
                }
            }
        }
        if let Some(r) = failed {
            // Retry with a smaller step before giving up.
            h *= 0.25;
            if h < 1e-14 * (1.0 + t.abs()) {
                return r;
            }
            continue;
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        let mut err: f64 = 0.0;
        let mut x5 = vec![0.0; n];
        for i in 0..n {
            let mut y5 = x[i];
            let mut y4 = x[i];
            for s in 0..7 {
                y5 += h * B5[s] * k[s][i];
                y4 += h * B4[s] * k[s][i];
            }
            x5[i] = y5;
            let sc = opts.atol + opts.rtol * x[i].abs().max(y5.abs());
            err = err.max(((y5 - y4) / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            t = if last { opts.horizon } else { t + h };
            x = x5;
            k[0] = k[6].clone();
            if let StepOutcome::Stop(r) = observe(t, &x) {
                return r;
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Termination::Horizon
}

/// Simulates the true plant under an arbitrary state feedback.
pub fn simulate_with<U, V>(plant: &Plant, control: U, v_fn: V, x0: &[f64], opts: &SimOptions) -> Result<Trajectory>
where
    U: Fn(&[f64]) -> Result<Vector>,
    V: Fn(&[f64]) -> f64,
{
    check_dim("initial state", plant.n(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let field = |x: &[f64]| -> std::result::Result<Vec<f64>, Termination> {
        let u = match control(x) {
            Ok(u) => u,
            Err(Error::SingularFeedback { .. }) => return Err(Termination::SingularFeedback),
            Err(_) => return Err(Termination::NumericalFailure),
        };
        Ok(plant.field_unchecked(x, u.as_slice()))
    };
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), inputs: Vec::new(), v: Vec::new(), termination: Termination::Horizon };
    let termination = integrate(field, x0, opts, |t, x| {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = control(x).map(|u| u.iter().copied().collect()).unwrap_or_else(|_| vec![f64::NAN; plant.m()]);
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.inputs.push(u);
        traj.v.push(v_fn(x));
        if !norm.is_finite() || norm > opts.escape_norm {
            StepOutcome::Stop(Termination::LeftDomain)
        } else if norm <= opts.converged_norm {
            StepOutcome::Stop(Termination::Converged)
        } else {
            StepOutcome::Continue
        }
    });
    traj.termination = termination;
    Ok(traj)
}

pub fn simulate(plant: &Plant, d: &DesignResult, lifting: &Lifting, x0: &[f64], opts: &SimOptions) -> Result<Trajectory> {
    check_dim("lifting state dimension", plant.n(), lifting.n())?;
    simulate_with(
        plant,
        |x| feedback(d, lifting, x),
        |x| lyapunov(d, lifting, x).unwrap_or(f64::NAN),
        x0,
        opts,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub started_inside: bool,
    pub max_increase: f64,
    pub max_v: f64,
    pub pass: bool,
}

/// Absolute slack on the per-step Lyapunov increase, relative to `1 + V`.
pub const AUDIT_SLACK: f64 = 1e-6;

pub fn lyapunov_audit(t: &Trajectory) -> AuditReport {
    let started_inside = t.v.first().is_some_and(|&v| v <= 1.0);
    let mut max_increase: f64 = 0.0;
    let mut pass = t.v.iter().all(|v| v.is_finite());
    for w in t.v.windows(2) {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > AUDIT_SLACK * (1.0 + w[0]) {
            pass = false;
        }
    }
    let max_v = t.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    AuditReport { started_inside, max_increase, max_v, pass }
}

/// Hautus test for eigenvalues with nonnegative real part.
pub fn is_stabilizable(a: &Mat, b: &Mat) -> bool {
    let n = a.nrows();
    for ev in a.complex_eigenvalues().iter() {
        if ev.re < -1e-12 {
            continue;
        }
        // Real embedding of [A − λI, B].
        let mut m = Mat::zeros(2 * n, 2 * (n + b.ncols()));
        let shifted_re = a - Mat::identity(n, n) * ev.re;
        let shifted_im = -Mat::identity(n, n) * ev.im;
        let re = crate::linalg::hstack(&[&shifted_re, b]);
        let im = crate::linalg::hstack(&[&shifted_im, &Mat::zeros(n, b.ncols())]);
        let w = re.ncols();
        m.view_mut((0, 0), (n, w)).copy_from(&re);
        m.view_mut((0, w), (n, w)).copy_from(&(-&im));
        m.view_mut((n, 0), (n, w)).copy_from(&im);
        m.view_mut((n, w), (n, w)).copy_from(&re);
        let sv = m.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0)).count();
        if rank < 2 * n {
            return false;
        }
    }
    true
}

/// Solves `AᵀX + XA = −C` through the Kronecker form.
pub fn lyapunov_solve(a: &Mat, c: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let i = Mat::identity(n, n);
    let op = kron(&i, &a.transpose()) + kron(&a.transpose(), &i);
    let rhs = Vector::from_iterator(n * n, c.iter().map(|v| -v));
    let x = op.lu().solve(&rhs).ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    Ok(sym(&Mat::from_column_slice(n, n, x.as_slice())))
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: Mat,
    pub k: Mat,
    pub residual: f64,
    pub newton_steps: usize,
}

fn care_residual(a: &Mat, b: &Mat, q: &Mat, r_inv: &Mat, p: &Mat) -> f64 {
    (a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q).norm()
}

/// Continuous algebraic Riccati equation.
///
/// A scaled Newton iteration for the sign of the Hamiltonian gives a
/// stabilizing initial solution, which Newton-Kleinman steps refine until
/// the residual is below `1e-10 ‖Q‖_F`.
pub fn care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<CareSolution> {
    let n = a.nrows();
    check_dim("B rows", n, b.nrows())?;
    if !is_stabilizable(a, b) {
        return Err(Error::Invalid("(A, B) is not stabilizable".into()));
    }
    let r_inv = spd_inverse(r)?;
    let g = b * &r_inv * b.transpose();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    for _ in 0..100 {
        let det = z.determinant().abs();
        let c = if det > 0.0 && det.is_finite() { det.powf(-1.0 / (2.0 * n as f64)) } else { 1.0 };
        let zi = inverse(&(&z * c))?;
        let next = (&z * c + zi) * 0.5;
        let delta = (&next - &z).norm();
        z = next;
        if delta <= 1e-12 * z.norm() {
            break;
        }
    }
    let i = Mat::identity(n, n);
    let lhs = crate::linalg::vstack(&[&z.view((0, n), (n, n)).into_owned(), &(z.view((n, n), (n, n)) + &i)]);
    let rhs = -crate::linalg::vstack(&[&(z.view((0, 0), (n, n)) + &i), &z.view((n, 0), (n, n)).into_owned()]);
    let mut p = sym(&(pinv(&lhs, 1e-14)?.matrix * rhs));

    let mut steps = 0;
    let tol = 1e-10 * q.norm().max(f64::MIN_POSITIVE);
    let mut res = care_residual(a, b, q, &r_inv, &p);
    while res > tol && steps < 50 {
        let k = &r_inv * b.transpose() * &p;
        let acl = a - b * &k;
        let next = lyapunov_solve(&acl, &(q + k.transpose() * r * &k))?;
        let next_res = care_residual(a, b, q, &r_inv, &next);
        steps += 1;
        if !(next_res < res) && steps > 3 {
            break;
        }
        p = next;
        res = next_res;
    }
    let k = &r_inv * b.transpose() * &p;
    Ok(CareSolution { p, k, residual: res, newton_steps: steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q: f64,
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self { q: 1.0, r: 1.0 }
    }
}

/// Default weight grid `q, r ∈ {0.1, 1, 10}`.
pub fn default_weight_grid() -> Vec<LqrWeights> {
    let vals = [0.1, 1.0, 10.0];
    vals.iter().flat_map(|&q| vals.iter().map(move |&r| LqrWeights { q, r })).collect()
}

/// LQR gain on the reduced lift for the linear part `(A, B₀)`; the feedback is `u = −K Φ̂(x)`.
pub fn lqr_baseline(a: &Mat, b0: &Mat, w: LqrWeights) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b0.ncols();
    care(a, b0, &(Mat::identity(n, n) * w.q), &(Mat::identity(m, m) * w.r))
}

pub fn simulate_lqr(plant: &Plant, lifting: &Lifting, k: &Mat, x0: &[f64], opts: &SimOptions) -> Result<Trajectory> {
    simulate_with(plant, |x| Ok(-(k * lifting.lift_reduced(x)?)), |_| f64::NAN, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AxisBox;
    use crate::lmi::Theorem;

    fn decay_plant() -> Plant {
        crate::plants::linear(
            -Mat::identity(1, 1),
            Mat::identity(1, 1),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn zero_control(_: &[f64]) -> Result<Vector> {
        Ok(Vector::zeros(1))
    }

    fn error_at_one(rtol: f64) -> f64 {
        let opts = SimOptions { horizon: 1.0, rtol, atol: rtol, max_step: 1.0, converged_norm: 0.0, ..Default::default() };
        let t = simulate_with(&decay_plant(), zero_control, |_| f64::NAN, &[1.0], &opts).unwrap();
        assert_eq!(t.termination, Termination::Horizon);
        assert!((t.times.last().unwrap() - 1.0).abs() < 1e-14);
        (t.final_state()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn exponential_decay_oracle() {
        assert!(error_at_one(1e-9) < 1e-6);
        let coarse = error_at_one(1e-4);
        let fine = error_at_one(1e-4 / 32.0);
        assert!(fine * 4.0 <= coarse, "coarse {coarse:e}, fine {fine:e}");
    }

    #[test]
    fn equilibrium_stays_put() {
        let t = simulate_with(&decay_plant(), zero_control, |_| 0.0, &[0.0], &SimOptions::default()).unwrap();
        assert_eq!(t.termination, Termination::Converged);
        assert_eq!(t.states.len(), 1);
        let audit = lyapunov_audit(&t);
        assert!(audit.pass && audit.max_increase == 0.0);
    }

    #[test]
    fn scalar_riccati_closed_forms() {
        let s = care(&-Mat::identity(1, 1), &Mat::identity(1, 1), &Mat::identity(1, 1), &Mat::identity(1, 1)).unwrap();
        assert!((s.p[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((s.k[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let s = care(&Mat::zeros(1, 1), &Mat::identity(1, 1), &Mat::identity(1, 1), &Mat::identity(1, 1)).unwrap();
        assert!((s.p[(0, 0)] - 1.0).abs() < 1e-12 && (s.k[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn riccati_residual_on_unstable_pair() {
        let a = Mat::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, -4.0, 5.0, 0.0, 0.0, 1.0]);
        let b = Mat::from_column_slice(3, 1, &[0.0, 1.0, 1.0]);
        let q = Mat::identity(3, 3);
        let s = care(&a, &b, &q, &Mat::identity(1, 1)).unwrap();
        assert!(s.residual <= 1e-8 * q.norm());
        let acl = &a - &b * &s.k;
        assert!(acl.complex_eigenvalues().iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        let a = Mat::identity(2, 2);
        let b = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!is_stabilizable(&a, &b));
        assert!(care(&a, &b, &Mat::identity(2, 2), &Mat::identity(1, 1)).is_err());
    }

    #[test]
    fn sign_flipped_gain_fails_audit() {
        let plant = decay_plant().with_boxes(AxisBox::cube(1, -1.0, 1.0).unwrap(), AxisBox::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let lifting = Lifting::with_extras(1, Vec::<crate::lifting::Observable>::new()).unwrap();
        let good = DesignResult::new(Theorem::One, Mat::identity(1, 1), -Mat::identity(1, 1), None, Mat::identity(1, 1), 1.0, None, 1e-6, vec![]).unwrap();
        let bad = DesignResult::new(Theorem::One, Mat::identity(1, 1), Mat::identity(1, 1) * 3.0, None, Mat::identity(1, 1), 1.0, None, 1e-6, vec![]).unwrap();
        let opts = SimOptions { horizon: 5.0, ..Default::default() };
        let t = simulate(&plant, &good, &lifting, &[0.5], &opts).unwrap();
        assert!(lyapunov_audit(&t).pass);
        let t = simulate(&plant, &bad, &lifting, &[0.5], &opts).unwrap();
        assert!(!lyapunov_audit(&t).pass);
    }
}
