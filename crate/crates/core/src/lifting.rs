//! Observable dictionaries `Φ = (1, x, φ_{n+1}, …, φ_N)`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, Vector};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One term `coeff · Π x_k^{powers[k]}` of a polynomial observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Serializable observable kinds. `Custom` only records a name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ObservableSpec {
    Constant,
    Coordinate { index: usize },
    Polynomial { terms: Vec<Monomial> },
    Sin { index: usize },
    CosMinusOne { index: usize },
    Custom { name: String },
}

/// User-supplied observable. Without a gradient, central differences are used.
#[derive(Clone)]
pub struct CustomObservable {
    pub name: String,
    pub value: ScalarFn,
    pub gradient: Option<GradientFn>,
}

impl fmt::Debug for CustomObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomObservable")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Observable {
    Catalog(ObservableSpec),
    Custom(CustomObservable),
}

impl Observable {
    pub fn polynomial(terms: Vec<(f64, Vec<u32>)>) -> Self {
        Observable::Catalog(ObservableSpec::Polynomial {
            terms: terms
                .into_iter()
                .map(|(coeff, powers)| Monomial { coeff, powers })
                .collect(),
        })
    }

    pub fn sin(index: usize) -> Self {
        Observable::Catalog(ObservableSpec::Sin { index })
    }

    pub fn cos_minus_one(index: usize) -> Self {
        Observable::Catalog(ObservableSpec::CosMinusOne { index })
    }

    pub fn custom<F>(name: impl Into<String>, value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Observable::Custom(CustomObservable {
            name: name.into(),
            value: Arc::new(value),
            gradient: None,
        })
    }

    pub fn custom_with_gradient<F, G>(name: impl Into<String>, value: F, gradient: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Observable::Custom(CustomObservable {
            name: name.into(),
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        })
    }

    fn spec(&self) -> ObservableSpec {
        match self {
            Observable::Catalog(s) => s.clone(),
            Observable::Custom(c) => ObservableSpec::Custom {
                name: c.name.clone(),
            },
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Catalog(spec) => match spec {
                ObservableSpec::Constant => 1.0,
                ObservableSpec::Coordinate { index } => x[*index],
                ObservableSpec::Polynomial { terms } => terms
                    .iter()
                    .map(|t| {
                        t.coeff
                            * t.powers
                                .iter()
                                .zip(x)
                                .map(|(&p, &v)| v.powi(p as i32))
                                .product::<f64>()
                    })
                    .sum(),
                ObservableSpec::Sin { index } => x[*index].sin(),
                ObservableSpec::CosMinusOne { index } => x[*index].cos() - 1.0,
                ObservableSpec::Custom { .. } => f64::NAN,
            },
            Observable::Custom(c) => (c.value)(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        match self {
            Observable::Catalog(spec) => match spec {
                ObservableSpec::Constant => {}
                ObservableSpec::Coordinate { index } => g[*index] = 1.0,
                ObservableSpec::Polynomial { terms } => {
                    for t in terms {
                        for k in 0..n {
                            let pk = t.powers.get(k).copied().unwrap_or(0);
                            if pk == 0 {
                                continue;
                            }
                            let mut d = t.coeff * pk as f64 * x[k].powi(pk as i32 - 1);
                            for (j, &pj) in t.powers.iter().enumerate() {
                                if j != k {
                                    d *= x[j].powi(pj as i32);
                                }
                            }
                            g[k] += d;
                        }
                    }
                }
                ObservableSpec::Sin { index } => g[*index] = x[*index].cos(),
                ObservableSpec::CosMinusOne { index } => g[*index] = -x[*index].sin(),
                ObservableSpec::Custom { .. } => g.fill(f64::NAN),
            },
            Observable::Custom(c) => match &c.gradient {
                Some(grad) => g = grad(x),
                None => {
                    let mut xp = x.to_vec();
                    for k in 0..n {
                        let h = 1e-6 * (1.0 + x[k].abs());
                        xp[k] = x[k] + h;
                        let fp = (c.value)(&xp);
                        xp[k] = x[k] - h;
                        let fm = (c.value)(&xp);
                        xp[k] = x[k];
                        g[k] = (fp - fm) / (2.0 * h);
                    }
                }
            },
        }
        g
    }
}

/// Serializable description of a dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingDescriptor {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub observables: Vec<ObservableSpec>,
}

#[derive(Debug, Clone)]
pub struct Lifting {
    n: usize,
    observables: Vec<Observable>,
    pub lipschitz_hint: Option<f64>,
}

impl Lifting {
    /// Validates the full list `(1, x_1, …, x_n, extras…)`.
    pub fn new(n: usize, observables: Vec<Observable>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dictionary("state dimension must be positive".into()));
        }
        if observables.len() < n + 1 {
            return Err(Error::Dictionary(format!(
                "need at least {} observables, got {}",
                n + 1,
                observables.len()
            )));
        }
        if !matches!(observables[0], Observable::Catalog(ObservableSpec::Constant)) {
            return Err(Error::Dictionary("observable 0 must be the constant 1".into()));
        }
        for (k, obs) in observables.iter().enumerate().skip(1).take(n) {
            match obs {
                Observable::Catalog(ObservableSpec::Coordinate { index }) if *index == k - 1 => {}
                _ => {
                    return Err(Error::Dictionary(format!(
                        "observable {k} must be the coordinate x_{k}"
                    )))
                }
            }
        }
        let zero = vec![0.0; n];
        for (k, obs) in observables.iter().enumerate().skip(n + 1) {
            check_spec_indices(obs, n)?;
            let v = obs.value(&zero);
            if !v.is_finite() || v.abs() > 1e-12 {
                return Err(Error::Dictionary(format!(
                    "observable {k} evaluates to {v} at the origin, expected 0"
                )));
            }
        }
        Ok(Self {
            n,
            observables,
            lipschitz_hint: None,
        })
    }

    /// Constant and coordinates followed by `extras`.
    pub fn with_extras(n: usize, extras: Vec<Observable>) -> Result<Self> {
        let mut obs = Vec::with_capacity(n + 1 + extras.len());
        obs.push(Observable::Catalog(ObservableSpec::Constant));
        obs.extend((0..n).map(|index| Observable::Catalog(ObservableSpec::Coordinate { index })));
        obs.extend(extras);
        Self::new(n, obs)
    }

    pub fn from_descriptor(d: &LiftingDescriptor) -> Result<Self> {
        if d.observables.iter().any(|o| matches!(o, ObservableSpec::Custom { .. })) {
            return Err(Error::Dictionary(
                "custom observables cannot be restored from a descriptor".into(),
            ));
        }
        if d.observables.len() != d.big_n + 1 {
            return Err(Error::Dimension {
                context: "lifting descriptor",
                expected: d.big_n + 1,
                got: d.observables.len(),
            });
        }
        let obs = d.observables.iter().cloned().map(Observable::Catalog).collect();
        Self::new(d.n, obs)
    }

    pub fn descriptor(&self) -> LiftingDescriptor {
        LiftingDescriptor {
            n: self.n,
            big_n: self.big_n(),
            observables: self.observables.iter().map(Observable::spec).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Reduced dimension `N`; the full dictionary has `N + 1` entries.
    pub fn big_n(&self) -> usize {
        self.observables.len() - 1
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn lift(&self, x: &[f64]) -> Result<Vector> {
        check_dim("lift state", self.n, x.len())?;
        let v = Vector::from_iterator(
            self.observables.len(),
            self.observables.iter().map(|o| o.value(x)),
        );
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("lift at x = {x:?}")));
        }
        Ok(v)
    }

    /// `Φ̂(x)`: the lift without its constant entry.
    pub fn lift_reduced(&self, x: &[f64]) -> Result<Vector> {
        let full = self.lift(x)?;
        Ok(full.rows(1, self.big_n()).into_owned())
    }

    /// Rows are `∇φ_kᵀ`, shape `(N+1) × n`.
    pub fn lift_gradient(&self, x: &[f64]) -> Result<Mat> {
        check_dim("gradient state", self.n, x.len())?;
        let mut g = Mat::zeros(self.observables.len(), self.n);
        for (k, obs) in self.observables.iter().enumerate() {
            let row = obs.gradient(x);
            if row.iter().any(|e| !e.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of observable {k}")));
            }
            for (j, v) in row.into_iter().enumerate() {
                g[(k, j)] = v;
            }
        }
        Ok(g)
    }

    /// Largest difference quotient over `samples` random pairs.
    ///
    /// Pairs are drawn sequentially from one seeded stream, so increasing
    /// `samples` only appends pairs and the estimate cannot decrease.
    pub fn estimate_lipschitz(&self, domain: &AxisBox, samples: usize, seed: u64) -> Result<f64> {
        check_dim("lipschitz domain", self.n, domain.dim())?;
        if samples < 2 {
            return Err(Error::Invalid("need at least two samples".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut best: f64 = 1.0;
        for _ in 0..samples {
            let x = domain.sample(&mut rng);
            let y = domain.sample(&mut rng);
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dx == 0.0 {
                continue;
            }
            let d = (self.lift(&x)? - self.lift(&y)?).norm();
            best = best.max(d / dx);
        }
        Ok(best)
    }
}

fn check_spec_indices(obs: &Observable, n: usize) -> Result<()> {
    let bad = match obs {
        Observable::Catalog(ObservableSpec::Coordinate { index })
        | Observable::Catalog(ObservableSpec::Sin { index })
        | Observable::Catalog(ObservableSpec::CosMinusOne { index }) => *index >= n,
        Observable::Catalog(ObservableSpec::Polynomial { terms }) => {
            terms.iter().any(|t| t.powers.len() > n)
        }
        Observable::Catalog(ObservableSpec::Constant) => {
            return Err(Error::Dictionary("extra constant observable".into()))
        }
        Observable::Catalog(ObservableSpec::Custom { .. }) => {
            return Err(Error::Dictionary("custom spec without closure".into()))
        }
        Observable::Custom(_) => false,
    };
    if bad {
        Err(Error::Dictionary("observable references a missing coordinate".into()))
    } else {
        Ok(())
    }
}

/// Dictionary used for the cooked-up system: `(1, x₁, x₂, x₂ − λ/(λ−2ρ)·x₁²)`.
pub fn cooked_up_lifting(rho: f64, lambda: f64) -> Result<Lifting> {
    let c = lambda / (lambda - 2.0 * rho);
    Lifting::with_extras(
        2,
        vec![Observable::polynomial(vec![(1.0, vec![0, 1]), (-c, vec![2, 0])])],
    )
}

/// The cooked-up dictionary extended by `x₁x₂`.
pub fn cooked_up_xy_lifting(rho: f64, lambda: f64) -> Result<Lifting> {
    let c = lambda / (lambda - 2.0 * rho);
    Lifting::with_extras(
        2,
        vec![
            Observable::polynomial(vec![(1.0, vec![0, 1]), (-c, vec![2, 0])]),
            Observable::polynomial(vec![(1.0, vec![1, 1])]),
        ],
    )
}

/// `(1, x₁, x₂, sin x₁)`.
pub fn pendulum_lifting() -> Result<Lifting> {
    Lifting::with_extras(2, vec![Observable::sin(0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_lift_at_origin() {
        let l = pendulum_lifting().unwrap();
        assert_eq!(l.lift(&[0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(l.lift_reduced(&[0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        let g = l.lift_gradient(&[0.0, 0.0]).unwrap();
        assert_eq!((g[(3, 0)], g[(3, 1)]), (1.0, 0.0));
    }

    #[test]
    fn cooked_up_lift_values() {
        let l = cooked_up_lifting(-2.0, 1.0).unwrap();
        let v = l.lift(&[1.0, 2.0]).unwrap();
        assert!((v - Vector::from_vec(vec![1.0, 1.0, 2.0, 1.8])).amax() < 1e-15);
        let r = l.lift_reduced(&[1.0, 2.0]).unwrap();
        assert!((r - Vector::from_vec(vec![1.0, 2.0, 1.8])).amax() < 1e-15);

        let l = cooked_up_xy_lifting(-2.0, 1.0).unwrap();
        let v = l.lift(&[2.0, 3.0]).unwrap();
        assert!((v - Vector::from_vec(vec![1.0, 2.0, 3.0, 2.2, 6.0])).amax() < 1e-14);
    }

    #[test]
    fn gradient_structure() {
        let l = cooked_up_xy_lifting(-2.0, 1.0).unwrap();
        let g = l.lift_gradient(&[0.3, -1.2]).unwrap();
        assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(g.view((1, 0), (2, 2)).into_owned(), Mat::identity(2, 2));
        assert!((g[(3, 0)] + 0.4 * 0.3).abs() < 1e-15);
        assert!((g[(4, 0)] + 1.2).abs() < 1e-15 && (g[(4, 1)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_conforming_dictionaries() {
        let missing_const = vec![Observable::Catalog(ObservableSpec::Coordinate { index: 0 })];
        assert!(matches!(Lifting::new(1, missing_const), Err(Error::Dictionary(_))));
        let swapped = vec![
            Observable::Catalog(ObservableSpec::Constant),
            Observable::Catalog(ObservableSpec::Coordinate { index: 1 }),
            Observable::Catalog(ObservableSpec::Coordinate { index: 0 }),
        ];
        assert!(Lifting::new(2, swapped).is_err());
        let offset = Observable::custom("cos", |x: &[f64]| x[0].cos());
        assert!(Lifting::with_extras(1, vec![offset]).is_err());
        assert!(Lifting::with_extras(1, vec![Observable::sin(3)]).is_err());
    }

    #[test]
    fn lift_rejects_wrong_dimension_and_nan() {
        let l = pendulum_lifting().unwrap();
        assert!(matches!(l.lift(&[1.0]), Err(Error::Dimension { .. })));
        let bad = Lifting::with_extras(
            1,
            vec![Observable::custom("blowup", |x: &[f64]| if x[0] > 1.0 { f64::NAN } else { 0.0 })],
        )
        .unwrap();
        assert!(matches!(bad.lift(&[2.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn custom_finite_difference_gradient() {
        let l = Lifting::with_extras(1, vec![Observable::custom("cube", |x: &[f64]| x[0].powi(3))])
            .unwrap();
        let g = l.lift_gradient(&[2.0]).unwrap();
        assert!((g[(2, 0)] - 12.0).abs() < 1e-6);
    }

    #[test]
    fn lipschitz_estimates() {
        let ident = Lifting::with_extras(2, vec![]).unwrap();
        let b = AxisBox::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(ident.estimate_lipschitz(&b, 100, 3).unwrap(), 1.0);

        let quad =
            Lifting::with_extras(1, vec![Observable::polynomial(vec![(1.0, vec![2])])]).unwrap();
        let b = AxisBox::cube(1, -5.0, 5.0).unwrap();
        let few = quad.estimate_lipschitz(&b, 100, 9).unwrap();
        let many = quad.estimate_lipschitz(&b, 20_000, 9).unwrap();
        assert!(few <= many);
        assert!(many > 9.5 && many <= 101f64.sqrt() + 1e-12, "{many}");
    }

    #[test]
    fn descriptor_round_trip() {
        let l = cooked_up_xy_lifting(-2.0, 1.0).unwrap();
        let json = serde_json::to_string(&l.descriptor()).unwrap();
        assert!(json.contains("\"N\":4"));
        let back: LiftingDescriptor = serde_json::from_str(&json).unwrap();
        let l2 = Lifting::from_descriptor(&back).unwrap();
        assert_eq!(l2.lift(&[0.7, -0.2]).unwrap(), l.lift(&[0.7, -0.2]).unwrap());
    }
}
