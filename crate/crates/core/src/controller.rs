//! Feedback laws and region-of-attraction geometry of solved designs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{check_dim, Error, Result};
use crate::lifting::Lifting;
use crate::linalg::{condition_number, kron, spd_inverse, sym, Mat, MatrixData, Vector};
use crate::lmi::{SynthesisProblem, Theorem};
use crate::sdp::BlockMargin;
use crate::uncertainty::UncertaintyRegion;

/// Condition number above which the scheduled feedback is rejected.
pub const MAX_SCHEDULING_CONDITION: f64 = 1e12;

/// Decision variables of a solved synthesis problem and the derived gains.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub theorem: Theorem,
    pub p: Mat,
    pub p_inv: Mat,
    pub l: Mat,
    pub lw: Option<Mat>,
    /// `Λ` (`1×1` holding `λ` for the single-input theorem).
    pub lambda: Mat,
    pub tau: f64,
    pub nu: Option<f64>,
    pub k: Mat,
    pub kw: Option<Mat>,
    pub epsilon: f64,
    pub margins: Vec<BlockMargin>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub theorem: Theorem,
    #[serde(rename = "P")]
    pub p: MatrixData,
    #[serde(rename = "L")]
    pub l: MatrixData,
    #[serde(rename = "Lw")]
    pub lw: Option<MatrixData>,
    #[serde(rename = "Lambda")]
    pub lambda: MatrixData,
    pub tau: f64,
    pub nu: Option<f64>,
    #[serde(rename = "K")]
    pub k: MatrixData,
    #[serde(rename = "Kw")]
    pub kw: Option<MatrixData>,
    pub epsilon: f64,
    pub margins: Vec<BlockMargin>,
}

fn scalar_of(m: &Mat) -> f64 {
    m[(0, 0)]
}

impl DesignResult {
    /// Assembles a result from raw variables and derives `K`, `K_w`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        theorem: Theorem,
        p: Mat,
        l: Mat,
        lw: Option<Mat>,
        lambda: Mat,
        tau: f64,
        nu: Option<f64>,
        epsilon: f64,
        margins: Vec<BlockMargin>,
    ) -> Result<Self> {
        let n = p.nrows();
        let m = l.nrows();
        check_dim("L columns", n, l.ncols())?;
        check_dim("Lambda size", m, lambda.nrows())?;
        let p = sym(&p);
        let p_inv = sym(&spd_inverse(&p)?);
        let k = &l * &p_inv;
        let kw = match &lw {
            Some(lw) => {
                check_dim("Lw columns", n * m, lw.ncols())?;
                let lam_inv = spd_inverse(&sym(&lambda))?;
                Some(lw * kron(&lam_inv, &Mat::identity(n, n)))
            }
            None => None,
        };
        Ok(Self { theorem, p, p_inv, l, lw, lambda, tau, nu, k, kw, epsilon, margins })
    }

    pub fn from_problem(problem: &SynthesisProblem, z: &[f64], margins: Vec<BlockMargin>) -> Result<Self> {
        let v = problem.unpack(z)?;
        let ids = &problem.ids;
        Self::new(
            problem.theorem,
            v[ids.p].clone(),
            v[ids.l].clone(),
            ids.lw.map(|i| v[i].clone()),
            v[ids.lambda].clone(),
            scalar_of(&v[ids.tau]),
            ids.nu.map(|i| scalar_of(&v[i])),
            problem.epsilon,
            margins,
        )
    }

    pub fn big_n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.l.nrows()
    }

    /// Residuals of `K P = L` and `K_w (Λ ⊗ I) = L_w`.
    pub fn gain_residuals(&self) -> (f64, Option<f64>) {
        let rk = (&self.k * &self.p - &self.l).amax();
        let rw = match (&self.kw, &self.lw) {
            (Some(kw), Some(lw)) => {
                Some((kw * kron(&self.lambda, &Mat::identity(self.big_n(), self.big_n())) - lw).amax())
            }
            _ => None,
        };
        (rk, rw)
    }

    /// Smallest `min eigenvalue − required margin` over all constraints.
    pub fn feasibility_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.min_eigenvalue - m.required).fold(f64::INFINITY, f64::min)
    }

    /// Homogeneous rescaling `(P, L, L_w, Λ, τ) ↦ s·(…)`, leaving the gains unchanged.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Invalid(format!("scale factor must be positive, got {s}")));
        }
        let mut out = self.clone();
        out.p = &self.p * s;
        out.p_inv = &self.p_inv / s;
        out.l = &self.l * s;
        out.lw = self.lw.as_ref().map(|m| m * s);
        out.lambda = &self.lambda * s;
        out.tau = self.tau * s;
        Ok(out)
    }

    pub fn to_file(&self) -> DesignFile {
        DesignFile {
            theorem: self.theorem,
            p: (&self.p).into(),
            l: (&self.l).into(),
            lw: self.lw.as_ref().map(Into::into),
            lambda: (&self.lambda).into(),
            tau: self.tau,
            nu: self.nu,
            k: (&self.k).into(),
            kw: self.kw.as_ref().map(Into::into),
            epsilon: self.epsilon,
            margins: self.margins.clone(),
        }
    }

    pub fn from_file(f: &DesignFile) -> Result<Self> {
        let lw = match &f.lw {
            Some(m) => Some(Mat::try_from(m)?),
            None => None,
        };
        Self::new(
            f.theorem,
            Mat::try_from(&f.p)?,
            Mat::try_from(&f.l)?,
            lw,
            Mat::try_from(&f.lambda)?,
            f.tau,
            f.nu,
            f.epsilon,
            f.margins.clone(),
        )
    }

    /// Feedback `u = K z + K_w (u ⊗ Δ)` for a lifted state `z` and scheduling vector `delta`.
    pub fn lifted_feedback(&self, z: &Vector, delta: &Vector) -> Result<(Vector, f64)> {
        check_dim("lifted state", self.big_n(), z.len())?;
        let kz = &self.k * z;
        let Some(kw) = &self.kw else {
            return Ok((kz, 1.0));
        };
        let m = self.m();
        let dcol = Mat::from_column_slice(delta.len(), 1, delta.as_slice());
        let sched = Mat::identity(m, m) - kw * kron(&Mat::identity(m, m), &dcol);
        let cond = condition_number(&sched);
        let singular = || Error::SingularFeedback { x: z.iter().copied().collect(), condition: cond };
        if !(cond.is_finite() && cond <= MAX_SCHEDULING_CONDITION) {
            return Err(singular());
        }
        let u = sched.lu().solve(&kz).ok_or_else(singular)?;
        Ok((u, cond))
    }
}

/// `μ(x)`; the scheduling condition number is returned alongside.
pub fn feedback_with_condition(d: &DesignResult, lifting: &Lifting, x: &[f64]) -> Result<(Vector, f64)> {
    check_dim("lifting dimension", d.big_n(), lifting.big_n())?;
    let z = lifting.lift_reduced(x)?;
    d.lifted_feedback(&z, &z).map_err(|e| match e {
        Error::SingularFeedback { condition, .. } => Error::SingularFeedback { x: x.to_vec(), condition },
        other => other,
    })
}

pub fn feedback(d: &DesignResult, lifting: &Lifting, x: &[f64]) -> Result<Vector> {
    feedback_with_condition(d, lifting, x).map(|(u, _)| u)
}

/// `V(x) = Φ̂(x)ᵀ P⁻¹ Φ̂(x)`.
pub fn lyapunov(d: &DesignResult, lifting: &Lifting, x: &[f64]) -> Result<f64> {
    let z = lifting.lift_reduced(x)?;
    check_dim("lifting dimension", d.big_n(), z.len())?;
    Ok((z.transpose() * &d.p_inv * &z)[(0, 0)])
}

pub fn roa_membership(d: &DesignResult, lifting: &Lifting, x: &[f64]) -> Result<(bool, f64)> {
    let v = lyapunov(d, lifting, x)?;
    Ok((v <= 1.0, v))
}

/// Ray search cap: `10³ · max |extent|` of the state box.
pub fn ray_cap(state_box: &AxisBox) -> f64 {
    1e3 * state_box.max_abs_extent()
}

const BRACKET_FACTOR: f64 = 1.05;
const BISECTION_TOL: f64 = 1e-8;

/// First crossing of `V = level` along `r·dir`.
///
/// Returns `(radius, open)`; `open` marks rays that stay below the level up
/// to `cap`, in which case the radius is `cap`.
pub fn ray_crossing<F>(v: F, level: f64, cap: f64) -> Result<(f64, bool)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut lo = 0.0;
    let mut hi = 1e-9 * cap;
    loop {
        if v(hi)? > level {
            break;
        }
        lo = hi;
        if hi >= cap {
            return Ok((cap, true));
        }
        hi = (hi * BRACKET_FACTOR).min(cap);
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if v(mid)? > level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, false))
}

/// Closed RoA boundary polyline of a planar design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Boundary {
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub open: Vec<bool>,
}

impl Boundary {
    pub fn any_open(&self) -> bool {
        self.open.iter().any(|&o| o)
    }

    /// Shoelace area of the polygon.
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            s += x0 * y1 - x1 * y0;
        }
        0.5 * s.abs()
    }

    /// Two-column `x₁ x₂` listing, first point repeated at the end.
    pub fn write_dat(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in self.points.iter().chain(self.points.first()) {
            writeln!(f, "{:.12e} {:.12e}", p[0], p[1])?;
        }
        f.flush()?;
        Ok(())
    }
}

pub fn roa_boundary_2d(d: &DesignResult, lifting: &Lifting, resolution: usize, cap: f64) -> Result<Boundary> {
    if lifting.n() != 2 {
        return Err(Error::Invalid(format!("boundary sweep needs n = 2, got {}", lifting.n())));
    }
    if resolution < 3 {
        return Err(Error::Invalid("at least three rays are required".into()));
    }
    let mut b = Boundary { angles: Vec::new(), radii: Vec::new(), points: Vec::new(), open: Vec::new() };
    for i in 0..resolution {
        let th = 2.0 * std::f64::consts::PI * i as f64 / resolution as f64;
        let (c, s) = (th.cos(), th.sin());
        let (r, open) = ray_crossing(|r| lyapunov(d, lifting, &[r * c, r * s]), 1.0, cap)?;
        b.angles.push(th);
        b.radii.push(r);
        b.points.push([r * c, r * s]);
        b.open.push(open);
    }
    Ok(b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub checked: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub witness: Option<Vec<f64>>,
    pub pass: bool,
}

/// Tolerance on the region membership margin.
pub const CONTAINMENT_TOL: f64 = 1e-8;

/// Checks `Φ̂(x) ∈ 𝚫_Φ` on the boundary and on radial grid points inside it.
///
/// Planar designs sweep `resolution` rays; otherwise `resolution` random
/// directions are drawn from a seeded stream.
pub fn containment_check(
    d: &DesignResult,
    region: &UncertaintyRegion,
    lifting: &Lifting,
    resolution: usize,
    cap: f64,
) -> Result<ContainmentReport> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    check_dim("region dimension", d.big_n(), region.dim())?;
    let n = lifting.n();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    let mut report = ContainmentReport { checked: 0, violations: 0, worst_margin: f64::INFINITY, witness: None, pass: true };
    let radial_steps = 20;
    for i in 0..resolution {
        let dir: Vec<f64> = if n == 2 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / resolution as f64;
            vec![th.cos(), th.sin()]
        } else {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.iter().map(|v| v / norm).collect()
        };
        let point = |r: f64| -> Vec<f64> { dir.iter().map(|c| c * r).collect() };
        let (rb, _) = ray_crossing(|r| lyapunov(d, lifting, &point(r)), 1.0, cap)?;
        for k in 1..=radial_steps {
            let x = point(rb * k as f64 / radial_steps as f64);
            let (_, margin) = region.membership(&lifting.lift_reduced(&x)?)?;
            report.checked += 1;
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.witness = Some(x.clone());
            }
            if margin < -CONTAINMENT_TOL {
                report.violations += 1;
            }
        }
    }
    report.pass = report.violations == 0;
    Ok(report)
}

/// Largest `s ≤ 1` with `{V ≤ s}` inside the box along the sampled rays, and the rescaled design.
pub fn rescale_to_box(d: &DesignResult, lifting: &Lifting, state_box: &AxisBox, resolution: usize) -> Result<(DesignResult, f64)> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let n = lifting.n();
    check_dim("box dimension", n, state_box.dim())?;
    if !state_box.contains_in_interior(&vec![0.0; n]) {
        return Err(Error::Invalid("state box must contain the origin in its interior".into()));
    }
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    let mut s: f64 = 1.0;
    for i in 0..resolution {
        let dir: Vec<f64> = if n == 2 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / resolution as f64;
            vec![th.cos(), th.sin()]
        } else {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.iter().map(|v| v / norm).collect()
        };
        // Distance to the box along the ray.
        let r_box = dir
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if c > 0.0 {
                    state_box.upper[j] / c
                } else if c < 0.0 {
                    state_box.lower[j] / c
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min);
        for k in 0..=40 {
            let r = r_box * 10f64.powf(k as f64 / 40.0);
            let x: Vec<f64> = dir.iter().map(|c| c * r).collect();
            s = s.min(lyapunov(d, lifting, &x)?);
        }
    }
    let s = s * (1.0 - 1e-9);
    Ok((d.scaled(s)?, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{cooked_up_lifting, Observable};

    fn identity_design(n: usize) -> DesignResult {
        DesignResult::new(
            Theorem::One,
            Mat::identity(n, n),
            Mat::zeros(1, n),
            None,
            Mat::identity(1, 1),
            1.0,
            Some(1.0),
            1e-6,
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn unit_circle_boundary() {
        let lifting = Lifting::with_extras(2, Vec::<Observable>::new()).unwrap();
        let d = identity_design(2);
        let b = roa_boundary_2d(&d, &lifting, 64, 1e3).unwrap();
        assert!(!b.any_open());
        for r in &b.radii {
            assert!((r - 1.0).abs() < 1e-8);
        }
        let area = b.area();
        assert!((area - std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn reference_gain_feedback() {
        let lifting = cooked_up_lifting(-2.0, 1.0).unwrap();
        let p = Mat::identity(3, 3);
        let l = Mat::from_row_slice(1, 3, &[0.0, -3.77, -3.46]);
        let d = DesignResult::new(Theorem::One, p, l, None, Mat::identity(1, 1), 1.0, None, 1e-6, vec![]).unwrap();
        let u = feedback(&d, &lifting, &[1.0, 2.0]).unwrap();
        assert!((u[0] + 13.768).abs() < 1e-12);
        assert_eq!(feedback(&d, &lifting, &[0.0, 0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn zero_lw_reduces_to_linear_form() {
        let lifting = cooked_up_lifting(-2.0, 1.0).unwrap();
        let p = Mat::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let l = Mat::from_row_slice(1, 3, &[0.3, -1.0, 0.5]);
        let lin = DesignResult::new(Theorem::One, p.clone(), l.clone(), None, Mat::identity(1, 1), 1.0, None, 1e-6, vec![]).unwrap();
        let sched = DesignResult::new(
            Theorem::Two,
            p,
            l,
            Some(Mat::zeros(1, 3)),
            Mat::from_element(1, 1, 2.0),
            1.0,
            None,
            1e-6,
            vec![],
        )
        .unwrap();
        let x = [0.7, -1.3];
        assert_eq!(feedback(&lin, &lifting, &x).unwrap(), feedback(&sched, &lifting, &x).unwrap());
        let (rk, rw) = sched.gain_residuals();
        assert!(rk < 1e-12 && rw.unwrap() < 1e-12);
    }

    #[test]
    fn singular_scheduling_is_reported() {
        let lifting = Lifting::with_extras(1, Vec::<Observable>::new()).unwrap();
        // u = K z + K_w z u with K_w = 1: singular at z = 1.
        let d = DesignResult::new(
            Theorem::Two,
            Mat::identity(1, 1),
            Mat::identity(1, 1),
            Some(Mat::identity(1, 1)),
            Mat::identity(1, 1),
            1.0,
            None,
            1e-6,
            vec![],
        )
        .unwrap();
        let err = feedback(&d, &lifting, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularFeedback { .. }));
        let u = feedback(&d, &lifting, &[0.5]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn containment_detects_shrunken_region() {
        let lifting = Lifting::with_extras(2, Vec::<Observable>::new()).unwrap();
        let d = identity_design(2);
        let exact = UncertaintyRegion::ball(2, 1.0).unwrap();
        let r = containment_check(&d, &exact, &lifting, 32, 1e3).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst_margin.abs() < 1e-7);
        let half = UncertaintyRegion::ball(2, 0.5).unwrap();
        let r = containment_check(&d, &half, &lifting, 32, 1e3).unwrap();
        assert!(!r.pass && r.witness.is_some());
    }

    #[test]
    fn rescaling_fits_box_and_keeps_gains() {
        let lifting = Lifting::with_extras(2, Vec::<Observable>::new()).unwrap();
        let d = identity_design(2).scaled(9.0).unwrap();
        let bx = AxisBox::cube(2, -1.0, 1.0).unwrap();
        let (scaled, s) = rescale_to_box(&d, &lifting, &bx, 64).unwrap();
        assert!((s - 1.0 / 9.0).abs() < 1e-6);
        assert!((&scaled.k - &d.k).amax() < 1e-12);
        let b = roa_boundary_2d(&scaled, &lifting, 64, 1e3).unwrap();
        assert!(b.points.iter().all(|p| bx.contains(p)));
    }

    #[test]
    fn design_file_round_trip() {
        let d = identity_design(3);
        let json = serde_json::to_string(&d.to_file()).unwrap();
        let back = DesignResult::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.p, d.p);
        assert_eq!(back.k, d.k);
    }
}
