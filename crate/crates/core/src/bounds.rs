//! Sufficient-data bound `d₀` and the proportional remainder bound.
//!
//! The Gram and generator-weighted matrices are integrals over `𝕏`
//! (box volume times the mean); the variance matrices use plain means.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::edmd::Surrogate;
use crate::error::{check_dim, Error, Result};
use crate::lifting::Lifting;
use crate::linalg::{inverse, min_eigenvalue, spectral_norm, Mat, MatrixData, Vector};
use crate::plants::Plant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quadrature {
    /// Tensor-product midpoint rule.
    Grid { points_per_axis: usize },
    /// Uniform Monte Carlo, split into `groups` independent groups for the error estimate.
    MonteCarlo { samples: usize, seed: u64, groups: usize },
}

impl Quadrature {
    /// Midpoint grid with 101 points per axis for `n ≤ 3`, otherwise 10⁶ Monte Carlo samples.
    pub fn default_for(n: usize) -> Self {
        if n <= 3 {
            Quadrature::Grid { points_per_axis: 101 }
        } else {
            Quadrature::MonteCarlo { samples: 1_000_000, seed: 0, groups: 10 }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerInput {
    /// Input index; 0 is the drift.
    pub k: usize,
    pub c_r_k: f64,
    pub norm_a_k: f64,
    pub sigma_a_frobenius_sq: f64,
    pub d0_k: f64,
    pub a_k: MatrixData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub scheme: Quadrature,
    pub evaluations: usize,
    /// Standard error of `d₀` across Monte Carlo groups.
    pub d0_standard_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataRequirement {
    pub c_r: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub c_r_tilde: f64,
    pub norm_c_inv: f64,
    pub c_min_eigenvalue: f64,
    pub sigma_c_frobenius_sq: f64,
    pub gram: MatrixData,
    pub per_k: Vec<PerInput>,
    /// Ceiling of the right-hand side, as a float.
    pub d0: f64,
    pub log10_d0: f64,
    /// Exact decimal integer when it fits in 128 bits.
    pub d0_integer: Option<String>,
    pub exceeds_u64: bool,
    pub quadrature: QuadratureInfo,
}

/// Raw moment sums over quadrature nodes.
struct Moments {
    count: usize,
    pp: Mat,
    pp2: Mat,
    pl: Vec<Mat>,
    pl2: Vec<Mat>,
}

impl Moments {
    fn new(size: usize, inputs: usize) -> Self {
        Self {
            count: 0,
            pp: Mat::zeros(size, size),
            pp2: Mat::zeros(size, size),
            pl: vec![Mat::zeros(size, size); inputs],
            pl2: vec![Mat::zeros(size, size); inputs],
        }
    }

    fn add(&mut self, plant: &Plant, lifting: &Lifting, x: &[f64]) -> Result<()> {
        let phi = lifting.lift(x)?;
        let grad = lifting.lift_gradient(x)?;
        let m = plant.m();
        let phi2 = phi.map(|v| v * v);
        self.pp += &phi * phi.transpose();
        self.pp2 += &phi2 * phi2.transpose();
        let drift = Vector::from_vec(plant.drift(x));
        let g = plant.input_matrix(x);
        for k in 0..=m {
            let field = if k == 0 { drift.clone() } else { &drift + g.column(k - 1) };
            let l = &grad * field;
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::Quadrature(format!("non-finite integrand at x = {x:?}")));
            }
            let l2 = l.map(|v| v * v);
            self.pl[k] += &phi * l.transpose();
            self.pl2[k] += &phi2 * l2.transpose();
        }
        self.count += 1;
        Ok(())
    }
}

/// Intermediate quantities of one bound evaluation.
struct Evaluated {
    d0: f64,
    per_k: Vec<PerInput>,
    gram: Mat,
    sigma_c: f64,
    c_min: f64,
    norm_c_inv: f64,
    delta_tilde: f64,
    c_r_tilde: f64,
}

fn evaluate_bound(
    mom: &Moments,
    volume: f64,
    c_r: f64,
    delta: f64,
    m: usize,
    input_l1_max: f64,
) -> Result<Evaluated> {
    let size = mom.pp.nrows();
    let big_n = size - 1;
    let cnt = mom.count as f64;
    let mean_pp = &mom.pp / cnt;
    let gram = &mean_pp * volume;
    let sigma_c: f64 = (&mom.pp2 / cnt - mean_pp.component_mul(&mean_pp)).sum();
    let c_min = min_eigenvalue(&gram);
    if !(c_min > 0.0) {
        return Err(Error::Quadrature(format!(
            "Gram matrix is not positive definite (min eigenvalue {c_min:.3e})"
        )));
    }
    let norm_c_inv = spectral_norm(&inverse(&gram)?);
    let delta_tilde = delta / (3.0 * (m as f64 + 1.0));
    let c_r_tilde = c_r / ((m as f64 + 1.0) * (1.0 + input_l1_max));
    let mut per_k = Vec::with_capacity(m + 1);
    let mut d0 = 0.0f64;
    for k in 0..=m {
        let mean_pl = &mom.pl[k] / cnt;
        let a_k = &mean_pl * volume;
        let sigma_a: f64 = (&mom.pl2[k] / cnt - mean_pl.component_mul(&mean_pl)).sum();
        let norm_a = spectral_norm(&a_k);
        let prod = norm_a * norm_c_inv;
        let c_r_k = if prod > 0.0 {
            (1.0f64).min(1.0 / prod) * norm_a * c_r_tilde / (2.0 * prod + c_r_tilde)
        } else {
            // A^{(k)} = 0: the ratio degenerates and the bound is vacuous.
            return Err(Error::Quadrature(format!("generator-weighted matrix {k} vanishes")));
        };
        let d0_k = ((big_n + 1) as f64).powi(2) / (delta_tilde * c_r_k * c_r_k)
            * sigma_a.max(sigma_c);
        d0 = d0.max(d0_k);
        per_k.push(PerInput {
            k,
            c_r_k,
            norm_a_k: norm_a,
            sigma_a_frobenius_sq: sigma_a,
            d0_k,
            a_k: MatrixData::from(&a_k),
        });
    }
    Ok(Evaluated { d0, per_k, gram, sigma_c, c_min, norm_c_inv, delta_tilde, c_r_tilde })
}

pub fn compute_d0(
    plant: &Plant,
    lifting: &Lifting,
    c_r: f64,
    delta: f64,
    quadrature: Quadrature,
) -> Result<DataRequirement> {
    if !(c_r > 0.0 && c_r.is_finite()) {
        return Err(Error::Invalid(format!("c_r must be positive, got {c_r}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    check_dim("lifting state dimension", plant.n(), lifting.n())?;
    let n = plant.n();
    let m = plant.m();
    let size = lifting.big_n() + 1;
    let bx = &plant.state_box;
    let volume = bx.volume();
    let input_l1_max: f64 = plant
        .input_box
        .lower
        .iter()
        .zip(&plant.input_box.upper)
        .map(|(lo, hi)| lo.abs().max(hi.abs()))
        .sum();

    let (total, groups) = match quadrature {
        Quadrature::Grid { points_per_axis } => {
            if points_per_axis == 0 {
                return Err(Error::Invalid("grid needs at least one point per axis".into()));
            }
            let mut mom = Moments::new(size, m + 1);
            let total = points_per_axis.pow(n as u32);
            let mut x = vec![0.0; n];
            for idx in 0..total {
                let mut rem = idx;
                for (axis, xi) in x.iter_mut().enumerate() {
                    let i = rem % points_per_axis;
                    rem /= points_per_axis;
                    let (lo, hi) = (bx.lower[axis], bx.upper[axis]);
                    *xi = lo + (i as f64 + 0.5) / points_per_axis as f64 * (hi - lo);
                }
                mom.add(plant, lifting, &x)?;
            }
            (mom, Vec::new())
        }
        Quadrature::MonteCarlo { samples, seed, groups } => {
            let groups = groups.max(1);
            if samples < groups {
                return Err(Error::Invalid("fewer Monte Carlo samples than groups".into()));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let per = samples / groups;
            let mut total = Moments::new(size, m + 1);
            let mut group_moments = Vec::with_capacity(groups);
            for gi in 0..groups {
                let count = if gi + 1 == groups { samples - per * (groups - 1) } else { per };
                let mut mom = Moments::new(size, m + 1);
                for _ in 0..count {
                    mom.add(plant, lifting, &bx.sample(&mut rng))?;
                }
                total.count += mom.count;
                total.pp += &mom.pp;
                total.pp2 += &mom.pp2;
                for k in 0..=m {
                    total.pl[k] += &mom.pl[k];
                    total.pl2[k] += &mom.pl2[k];
                }
                group_moments.push(mom);
            }
            (total, group_moments)
        }
    };

    let Evaluated { d0, per_k, gram, sigma_c, c_min, norm_c_inv, delta_tilde, c_r_tilde } =
        evaluate_bound(&total, volume, c_r, delta, m, input_l1_max)?;

    let d0_standard_error = if groups.len() > 1 {
        let vals = groups
            .iter()
            .map(|g| evaluate_bound(g, volume, c_r, delta, m, input_l1_max).map(|r| r.d0))
            .collect::<Result<Vec<f64>>>()?;
        let g = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / g;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (g - 1.0);
        Some((var / g).sqrt())
    } else {
        None
    };

    if !d0.is_finite() {
        return Err(Error::Quadrature("d0 is not finite".into()));
    }
    let d0 = d0.ceil().max(1.0);
    let d0_integer = (d0 < 2f64.powi(127)).then(|| format!("{}", d0 as u128));
    Ok(DataRequirement {
        c_r,
        delta,
        delta_tilde,
        c_r_tilde,
        norm_c_inv,
        c_min_eigenvalue: c_min,
        sigma_c_frobenius_sq: sigma_c,
        gram: MatrixData::from(&gram),
        per_k,
        d0,
        log10_d0: d0.log10(),
        d0_integer,
        exceeds_u64: d0 > u64::MAX as f64,
        quadrature: QuadratureInfo {
            scheme: quadrature,
            evaluations: total.count,
            d0_standard_error,
        },
    })
}

/// `c_r (‖z‖ + ‖u‖)`.
pub fn remainder_bound(surrogate: &Surrogate, z: &Vector, u: &Vector) -> f64 {
    surrogate.c_r * (z.norm() + u.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::cooked_up_lifting;
    use crate::plants::cooked_up;

    fn grid(p: usize) -> Quadrature {
        Quadrature::Grid { points_per_axis: p }
    }

    #[test]
    fn remainder_bound_formula() {
        let s = Surrogate::new(Mat::zeros(2, 2), Mat::zeros(2, 1), vec![Mat::zeros(2, 2)], 0.1, 0.05)
            .unwrap();
        let z = Vector::from_vec(vec![2.0, 0.0]);
        let u = Vector::from_vec(vec![1.0]);
        assert!((remainder_bound(&s, &z, &u) - 0.3).abs() < 1e-15);
        assert_eq!(remainder_bound(&s, &Vector::zeros(2), &Vector::zeros(1)), 0.0);
        let t = 3.5;
        assert!((remainder_bound(&s, &(&z * t), &(&u * t)) - t * 0.3).abs() < 1e-14);
    }

    #[test]
    fn gram_is_positive_definite_and_delta_scaling() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        let l = cooked_up_lifting(-2.0, 1.0).unwrap();
        let r = compute_d0(&p, &l, 0.1, 0.05, grid(41)).unwrap();
        assert!(r.c_min_eigenvalue > 0.0);
        let half = compute_d0(&p, &l, 0.1, 0.025, grid(41)).unwrap();
        assert!(half.d0 >= 2.0 * r.d0 - 1.0);
        assert!((r.delta_tilde - 0.05 / 6.0).abs() < 1e-15);
        assert!((r.c_r_tilde - 0.1 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        let l = cooked_up_lifting(-2.0, 1.0).unwrap();
        assert!(compute_d0(&p, &l, 0.0, 0.05, grid(5)).is_err());
        assert!(compute_d0(&p, &l, 0.1, 1.0, grid(5)).is_err());
    }
}
