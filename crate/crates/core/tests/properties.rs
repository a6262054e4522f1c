//! Randomized checks of the structural invariants.

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use koopcert::config;
use koopcert::controller::{lyapunov, DesignResult};
use koopcert::domain::AxisBox;
use koopcert::edmd::{build_data_matrices, fit, Surrogate};
use koopcert::lifting::{cooked_up_lifting, cooked_up_xy_lifting, pendulum_lifting, Lifting};
use koopcert::linalg::{kron, max_eigenvalue, min_eigenvalue, spd_inverse, Mat, Vector};
use koopcert::lmi::{build_theorem1, build_theorem2, BuildOptions, SynthesisProblem};
use koopcert::plants::{collect, linear, SamplingOptions};
use koopcert::scenarios;
use koopcert::sdp::lower;
use koopcert::uncertainty::UncertaintyRegion;
use koopcert::verify::{care, integrate, SimOptions, StepOutcome, Termination};

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let m = random_mat(rng, n, n, 1.0);
    &m * m.transpose() + Mat::identity(n, n) * 0.1
}

fn random_surrogate(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Surrogate {
    let b = (0..m).map(|_| random_mat(rng, n, n, 1.0)).collect();
    Surrogate::new(random_mat(rng, n, n, 2.0), random_mat(rng, n, m, 1.0), b, 0.1, 0.05).unwrap()
}

/// Negative definite `Q`, arbitrary `S`, positive `R`.
fn random_region(rng: &mut ChaCha8Rng, n: usize) -> UncertaintyRegion {
    let q = -random_spd(rng, n);
    let s = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    UncertaintyRegion::new(q, s, rng.random_range(0.5..50.0)).unwrap()
}

/// A point of the region: a random direction scaled inside the boundary.
fn point_in(rng: &mut ChaCha8Rng, u: &UncertaintyRegion) -> Vector {
    let n = u.dim();
    let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = (v.transpose() * &u.qz * &v)[(0, 0)];
    let b = 2.0 * u.sz.dot(&v);
    let c = u.rz;
    let root = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    v * (root * rng.random_range(0.0..1.0))
}

fn random_values(rng: &mut ChaCha8Rng, p: &SynthesisProblem) -> Vec<Mat> {
    let z: Vec<f64> = (0..p.num_scalars()).map(|_| rng.random_range(-3.0..3.0)).collect();
    p.unpack(&z).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=4, 1usize..=3, any::<u64>())
}

fn liftings() -> Vec<Lifting> {
    vec![
        cooked_up_lifting(-2.0, 1.0).unwrap(),
        cooked_up_xy_lifting(-2.0, 1.0).unwrap(),
        pendulum_lifting().unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lift_has_the_required_structure(x1 in -10.0f64..10.0, x2 in -10.0f64..10.0) {
        let x = [x1, x2];
        for l in liftings() {
            let z = l.lift(&x).unwrap();
            prop_assert_eq!(z[0], 1.0);
            prop_assert_eq!(z[1], x1);
            prop_assert_eq!(z[2], x2);
            let r = l.lift_reduced(&x).unwrap();
            prop_assert!(r.norm_squared() >= x1 * x1 + x2 * x2);
            prop_assert!(l.lift_reduced(&[0.0, 0.0]).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn lift_gradient_matches_finite_differences(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0) {
        let x = [x1, x2];
        for l in liftings() {
            let g = l.lift_gradient(&x).unwrap();
            for j in 0..2 {
                let h = 1e-6 * (1.0 + x[j].abs());
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let fd = (l.lift(&xp).unwrap() - l.lift(&xm).unwrap()) / (2.0 * h);
                for k in 0..fd.len() {
                    let err = (fd[k] - g[(k, j)]).abs();
                    prop_assert!(err <= 1e-6 * g[(k, j)].abs().max(1.0), "obs {} dir {}: {} vs {}", k, j, fd[k], g[(k, j)]);
                }
            }
        }
    }

    #[test]
    fn packing_round_trips((n, m, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_surrogate(&mut rng, n, m);
        let u = random_region(&mut rng, n);
        let p = build_theorem2(&s, &u, &BuildOptions::default()).unwrap();
        let values = random_values(&mut rng, &p);
        let z = p.pack(&values).unwrap();
        let back = p.unpack(&z).unwrap();
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).amax() <= 1e-14 * a.amax().max(1.0));
        }
        prop_assert!(p.pack(&back).unwrap().iter().zip(&z).all(|(a, b)| (a - b).abs() <= 1e-14 * b.abs().max(1.0)));
    }

    #[test]
    fn constraints_are_affine((n, m, seed) in dims(), a in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_surrogate(&mut rng, n, m);
        let u = random_region(&mut rng, n);
        let p = build_theorem2(&s, &u, &BuildOptions::default()).unwrap();
        let v1 = random_values(&mut rng, &p);
        let v2 = random_values(&mut rng, &p);
        let mix: Vec<Mat> = v1.iter().zip(&v2).map(|(x, y)| x * a + y * (1.0 - a)).collect();
        for c in &p.constraints {
            let e1 = c.expr.evaluate(&v1).unwrap();
            let e2 = c.expr.evaluate(&v2).unwrap();
            let em = c.expr.evaluate(&mix).unwrap();
            let expected = &e1 * a + &e2 * (1.0 - a);
            let scale = e1.amax().max(e2.amax()).max(1.0);
            prop_assert!((em - expected).amax() <= 1e-12 * scale, "{}", c.expr.name);
        }
    }

    #[test]
    fn lowering_is_linear((n, m, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_surrogate(&mut rng, n, m);
        let u = random_region(&mut rng, n);
        let p = build_theorem2(&s, &u, &BuildOptions::default()).unwrap();
        let prog = lower(&p).unwrap();
        prop_assert_eq!(prog.blocks.len(), p.constraints.len());
        for _ in 0..20 {
            let z: Vec<f64> = (0..p.num_scalars()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let values = p.unpack(&z).unwrap();
            for (b, c) in prog.blocks.iter().zip(&p.constraints) {
                let mut f = b.f0.clone();
                for (k, fk) in &b.coeffs {
                    f += fk * z[*k];
                }
                let direct = c.expr.evaluate(&values).unwrap();
                prop_assert!((f - &direct).amax() <= 1e-12 * direct.amax().max(1.0));
            }
        }
    }

    #[test]
    fn region_matrix_times_inverse_is_identity(n in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_region(&mut rng, n);
        let prod = u.matrix() * u.inverse_matrix();
        prop_assert!((prod - Mat::identity(n + 1, n + 1)).amax() <= 1e-10);
    }

    #[test]
    fn multiplier_inverse_is_exact((n, m, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_region(&mut rng, n);
        let lambda = random_spd(&mut rng, m);
        let pi = u.multiplier(&spd_inverse(&lambda).unwrap());
        let pi_inv = u.multiplier_inverse(&lambda).unwrap();
        let k = pi.nrows();
        prop_assert!((&pi * &pi_inv - Mat::identity(k, k)).amax() <= 1e-9);
    }

    #[test]
    fn multiplier_is_compatible_with_the_region((n, m, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_region(&mut rng, n);
        let lt = random_spd(&mut rng, m);
        let v = point_in(&mut rng, &u);
        let delta = kron(&Mat::identity(m, m), &Mat::from_column_slice(n, 1, v.as_slice()));
        prop_assert!(u.kron_delta_membership(&delta));
        let mut stacked = Mat::zeros(m * n + m, m);
        stacked.view_mut((0, 0), (m * n, m)).copy_from(&delta);
        stacked.view_mut((m * n, 0), (m, m)).fill_with_identity();
        let form = stacked.transpose() * u.multiplier(&lt) * &stacked;
        prop_assert!(min_eigenvalue(&form) >= -1e-9);
    }

    #[test]
    fn second_theorem_reduces_to_the_first(n in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_surrogate(&mut rng, n, 1);
        let u = random_region(&mut rng, n);
        let opts = BuildOptions { freeze_lw: true, ..BuildOptions::default() };
        let p1 = build_theorem1(&s, &u, &opts).unwrap();
        let p2 = build_theorem2(&s, &u, &opts).unwrap();
        prop_assert_eq!(p1.num_scalars(), p2.num_scalars());
        prop_assert_eq!(p1.constraints.len(), p2.constraints.len());
        let values = random_values(&mut rng, &p1);
        for (c1, c2) in p1.constraints.iter().zip(&p2.constraints) {
            let e1 = c1.expr.evaluate(&values).unwrap();
            let e2 = c2.expr.evaluate(&values).unwrap();
            prop_assert!((&e1 - e2).amax() <= 1e-13 * e1.amax().max(1.0), "{}", c1.expr.name);
        }
    }

    #[test]
    fn care_residual_is_small(n in 1usize..=4, m in 1usize..=2, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mat(&mut rng, n, n, 2.0);
        let b = random_mat(&mut rng, n, m, 1.0);
        let q = Mat::from_diagonal(&Vector::from_fn(n, |_, _| rng.random_range(0.1..10.0)));
        let r = Mat::from_diagonal(&Vector::from_fn(m, |_, _| rng.random_range(0.1..10.0)));
        // Nearly uncontrollable pairs make P so large that the residual hits the rounding floor.
        let mut ctrb = b.clone();
        let mut blk = b.clone();
        for _ in 1..n {
            blk = &a * blk;
            ctrb = koopcert::linalg::hstack(&[&ctrb, &blk]);
        }
        let sv = ctrb.singular_values();
        prop_assume!(sv.min() >= 0.1);
        let sol = care(&a, &b, &q, &r);
        prop_assume!(sol.is_ok());
        let p = sol.unwrap().p;
        let r_inv = spd_inverse(&r).unwrap();
        let res = a.transpose() * &p + &p * &a - &p * &b * r_inv * b.transpose() * &p + &q;
        prop_assert!(res.norm() <= 1e-8 * q.norm(), "residual {}", res.norm());
        prop_assert!(min_eigenvalue(&p) > 0.0);
    }
}

fn cooked_up_design() -> &'static (Lifting, DesignResult, AxisBox) {
    static D: OnceLock<(Lifting, DesignResult, AxisBox)> = OnceLock::new();
    D.get_or_init(|| {
        let p = config::run(&scenarios::cooked_up()).unwrap();
        let b = p.plant.state_box.clone();
        (p.lifting, p.design.result, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_sandwich(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        let (lifting, d, domain) = cooked_up_design();
        let l_phi = lifting.estimate_lipschitz(domain, 20_000, 11).unwrap();
        let p_inv = spd_inverse(&d.p).unwrap();
        let x2n = x1 * x1 + x2 * x2;
        let v = lyapunov(d, lifting, &[x1, x2]).unwrap();
        prop_assert!(min_eigenvalue(&p_inv) * x2n <= v * (1.0 + 1e-12));
        prop_assert!(v <= max_eigenvalue(&p_inv) * l_phi * l_phi * x2n * (1.0 + 1e-12));
    }
}

/// Final state of `ẋ = A x` with `A = [[-1, 2], [-2, -1]]` at `t = 2`, against the closed form.
fn rotation_decay_error(opts: &SimOptions) -> f64 {
    let mut last = vec![1.0, 0.0];
    let mut t_end = 0.0;
    let term = integrate(
        |x: &[f64]| Ok(vec![-x[0] + 2.0 * x[1], -2.0 * x[0] - x[1]]),
        &[1.0, 0.0],
        opts,
        |t, x| {
            last = x.to_vec();
            t_end = t;
            StepOutcome::Continue
        },
    );
    assert_eq!(term, Termination::Horizon);
    let e = (-t_end).exp();
    let exact = [e * (2.0 * t_end).cos(), -e * (2.0 * t_end).sin()];
    ((last[0] - exact[0]).powi(2) + (last[1] - exact[1]).powi(2)).sqrt()
}

#[test]
fn integrator_order() {
    // Loose tolerances leave the step at its cap, so halving the cap shows the method's order.
    let base = SimOptions {
        horizon: 2.0,
        rtol: 1.0,
        atol: 1.0,
        converged_norm: 0.0,
        max_step: 0.2,
        initial_step: 0.2,
        ..SimOptions::default()
    };
    let coarse = rotation_decay_error(&base);
    let fine = rotation_decay_error(&SimOptions { max_step: 0.1, initial_step: 0.1, ..base });
    assert!(coarse / fine >= 4.0, "coarse {coarse:e} fine {fine:e}");

    let mut prev = f64::INFINITY;
    for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let err = rotation_decay_error(&SimOptions { horizon: 2.0, rtol: tol, atol: tol, converged_norm: 0.0, max_step: 2.0, ..SimOptions::default() });
        assert!(err < prev && err <= 100.0 * tol, "tol {tol:e}: error {err:e}");
        prev = err;
    }
}

#[test]
fn least_squares_residual_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a = random_mat(&mut rng, 2, 2, 2.0);
        let b = random_mat(&mut rng, 2, 1, 1.0);
        let plant = linear(a, b, AxisBox::cube(2, -1.0, 1.0).unwrap(), AxisBox::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let lifting = cooked_up_lifting(-2.0, 1.0).unwrap();
        let samples = collect(&plant, &SamplingOptions::new(200, rng.random()).with_noise(0.1)).unwrap();
        let data = build_data_matrices(&lifting, &samples).unwrap();
        let (s, _) = fit(&data).unwrap();
        let r = &data.y[0] - &s.a * &data.x0;
        let lhs = (&r * data.x0.transpose()).norm();
        assert!(lhs <= 1e-8 * data.y[0].norm() * data.x0.norm(), "{lhs:e}");
    }
}

#[test]
fn d0_is_monotone_in_its_parameters() {
    use koopcert::bounds::{compute_d0, Quadrature};
    let cfg = scenarios::cooked_up();
    let plant = cfg.plant().unwrap();
    let lifting = cfg.lifting().unwrap();
    let q = Quadrature::default_for(plant.n());
    let mut grid = Vec::new();
    for c_r in [0.05, 0.1, 0.5] {
        let row: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|&delta| compute_d0(&plant, &lifting, c_r, delta, q).unwrap().d0)
            .collect();
        assert!(row.windows(2).all(|w| w[1] <= w[0]));
        grid.push(row);
    }
    for j in 0..3 {
        assert!(grid.windows(2).all(|w| w[1][j] <= w[0][j]));
    }
}
