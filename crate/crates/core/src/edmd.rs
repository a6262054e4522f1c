//! Generator EDMD producing the structured bilinear surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lifting::{Lifting, LiftingDescriptor};
use crate::linalg::{hstack, kron, pinv, Mat, MatrixData, Vector};
use crate::plants::SampleSet;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Data matrices, one entry per identification input.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    /// `X⁰`, `N × d⁰` (constant row removed).
    pub x0: Mat,
    /// `X^{e_i}`, `(N+1) × d^{e_i}`.
    pub xe: Vec<Mat>,
    /// `Y^ū` for `ū = 0, e_1, …, e_m`.
    pub y: Vec<Mat>,
    /// Scale `α_i` of the `i`-th identification input.
    pub alpha: Vec<f64>,
}

impl DataMatrices {
    pub fn big_n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.xe.len()
    }
}

pub fn build_data_matrices(lifting: &Lifting, samples: &SampleSet) -> Result<DataMatrices> {
    let batches = &samples.batches;
    if batches.is_empty() {
        return Err(Error::MissingBatch(0));
    }
    let m = batches[0].input.len();
    if batches.len() < m + 1 {
        return Err(Error::MissingBatch(batches.len()));
    }
    let n = lifting.n();
    let big_n = lifting.big_n();

    let mut alpha = Vec::with_capacity(m);
    for (k, b) in batches.iter().enumerate().take(m + 1) {
        check_dim("batch input", m, b.input.len())?;
        if b.is_empty() {
            return Err(Error::MissingBatch(k));
        }
        for (i, &v) in b.input.iter().enumerate() {
            let expected_nonzero = k > 0 && i == k - 1;
            if expected_nonzero == (v == 0.0) {
                return Err(Error::Invalid(format!(
                    "batch {k} input {:?} is not a scaled unit vector",
                    b.input
                )));
            }
        }
        if k > 0 {
            alpha.push(b.input[k - 1]);
        }
    }

    let mut x0 = Mat::zeros(big_n, 0);
    let mut xe = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m + 1);
    for (k, b) in batches.iter().enumerate().take(m + 1) {
        let d = b.len();
        let mut xk = Mat::zeros(big_n + 1, d);
        let mut yk = Mat::zeros(big_n, d);
        for (j, (x, dx)) in b.states.iter().zip(&b.derivatives).enumerate() {
            check_dim("sample state", n, x.len())?;
            check_dim("sample derivative", n, dx.len())?;
            if x.iter().chain(dx).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {j} of batch {k}")));
            }
            xk.set_column(j, &lifting.lift(x)?);
            let grad = lifting.lift_gradient(x)?;
            let ld = &grad * Vector::from_column_slice(dx);
            yk.set_column(j, &ld.rows(1, big_n));
        }
        y.push(yk);
        if k == 0 {
            x0 = xk.rows(1, big_n).into_owned();
        } else {
            xe.push(xk);
        }
    }
    Ok(DataMatrices { x0, xe, y, alpha })
}

/// Diagnostics of one least-squares solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchFit {
    /// `‖Y − ΘX‖_F`.
    pub residual: f64,
    pub rank: usize,
    pub rows: usize,
    pub condition: f64,
    pub full_rank: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub batches: Vec<BatchFit>,
    pub warnings: Vec<String>,
}

/// Bilinear lifted model `ż = Az + B₀u + Σ u_i B_i z`.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub a: Mat,
    pub b0: Mat,
    pub b: Vec<Mat>,
    pub c_r: f64,
    pub delta: f64,
    pub lifting: Option<LiftingDescriptor>,
}

pub fn fit(data: &DataMatrices) -> Result<(Surrogate, FitReport)> {
    let big_n = data.big_n();
    let m = data.m();
    let mut report = FitReport {
        batches: Vec::with_capacity(m + 1),
        warnings: Vec::new(),
    };

    let mut solve = |x: &Mat, y: &Mat, label: String| -> Result<Mat> {
        let p = pinv(x, PINV_CUTOFF)?;
        let theta = y * &p.matrix;
        let residual = (y - &theta * x).norm();
        if p.rank < x.nrows() {
            report.warnings.push(format!(
                "{label}: data matrix has rank {} < {} rows (condition {:.3e}); minimum-norm solution used",
                p.rank,
                x.nrows(),
                p.condition
            ));
        }
        report.batches.push(BatchFit {
            residual,
            rank: p.rank,
            rows: x.nrows(),
            condition: p.condition,
            full_rank: p.rank == x.nrows(),
        });
        Ok(theta)
    };

    let a = solve(&data.x0, &data.y[0], "u = 0".into())?;
    let mut b0 = Mat::zeros(big_n, m);
    let mut b = Vec::with_capacity(m);
    for i in 0..m {
        let theta = solve(&data.xe[i], &data.y[i + 1], format!("u = e_{}", i + 1))?;
        let alpha = data.alpha[i];
        b0.set_column(i, &(theta.column(0) / alpha));
        let b_hat = theta.columns(1, big_n).into_owned();
        b.push((b_hat - &a) / alpha);
    }
    Ok((
        Surrogate {
            a,
            b0,
            b,
            c_r: f64::NAN,
            delta: f64::NAN,
            lifting: None,
        },
        report,
    ))
}

impl Surrogate {
    pub fn new(a: Mat, b0: Mat, b: Vec<Mat>, c_r: f64, delta: f64) -> Result<Self> {
        let s = Self {
            a,
            b0,
            b,
            c_r,
            delta,
            lifting: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_dim("A columns", n, self.a.ncols())?;
        check_dim("B0 rows", n, self.b0.nrows())?;
        check_dim("number of B_i", self.b0.ncols(), self.b.len())?;
        for bi in &self.b {
            check_dim("B_i rows", n, bi.nrows())?;
            check_dim("B_i columns", n, bi.ncols())?;
        }
        let all = self.a.iter().chain(self.b0.iter()).chain(self.b.iter().flat_map(|m| m.iter()));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surrogate matrices".into()));
        }
        Ok(())
    }

    pub fn with_bounds(mut self, c_r: f64, delta: f64) -> Result<Self> {
        if !(c_r > 0.0 && c_r.is_finite()) {
            return Err(Error::Invalid(format!("c_r must be positive, got {c_r}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        self.c_r = c_r;
        self.delta = delta;
        Ok(self)
    }

    pub fn with_lifting(mut self, lifting: &Lifting) -> Self {
        self.lifting = Some(lifting.descriptor());
        self
    }

    pub fn big_n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b0.ncols()
    }

    /// `B̃ = [B_1 … B_m]`.
    pub fn b_tilde(&self) -> Mat {
        let refs: Vec<&Mat> = self.b.iter().collect();
        hstack(&refs)
    }

    /// `Az + B₀u + B̃(u ⊗ z)`, remainder excluded.
    pub fn predict(&self, z: &Vector, u: &Vector) -> Result<Vector> {
        check_dim("predict state", self.big_n(), z.len())?;
        check_dim("predict input", self.m(), u.len())?;
        let uz = kron(&Mat::from_column_slice(u.len(), 1, u.as_slice()), &Mat::from_column_slice(z.len(), 1, z.as_slice()));
        let out = &self.a * z + &self.b0 * u + self.b_tilde() * uz;
        Ok(out.column(0).into_owned())
    }

    /// Full generator compressions `(𝓛⁰_d, [𝓛^{e_i}_d])`, each `(N+1) × (N+1)`.
    pub fn generator_matrices(&self) -> (Mat, Vec<Mat>) {
        let n = self.big_n();
        let mut l0 = Mat::zeros(n + 1, n + 1);
        l0.view_mut((1, 1), (n, n)).copy_from(&self.a);
        let le = (0..self.m())
            .map(|i| {
                let mut l = Mat::zeros(n + 1, n + 1);
                l.view_mut((1, 0), (n, 1)).copy_from(&self.b0.column(i));
                l.view_mut((1, 1), (n, n)).copy_from(&(&self.a + &self.b[i]));
                l
            })
            .collect();
        (l0, le)
    }

    pub fn to_file(&self) -> SurrogateFile {
        SurrogateFile {
            a: MatrixData::from(&self.a),
            b0: MatrixData::from(&self.b0),
            b: self.b.iter().map(MatrixData::from).collect(),
            c_r: self.c_r,
            delta: self.delta,
            lifting: self.lifting.clone(),
        }
    }

    pub fn from_file(f: &SurrogateFile) -> Result<Self> {
        let s = Self {
            a: Mat::try_from(&f.a)?,
            b0: Mat::try_from(&f.b0)?,
            b: f.b.iter().map(Mat::try_from).collect::<Result<_>>()?,
            c_r: f.c_r,
            delta: f.delta,
            lifting: f.lifting.clone(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// On-disk surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateFile {
    #[serde(rename = "A")]
    pub a: MatrixData,
    #[serde(rename = "B0")]
    pub b0: MatrixData,
    #[serde(rename = "B")]
    pub b: Vec<MatrixData>,
    pub c_r: f64,
    pub delta: f64,
    pub lifting: Option<LiftingDescriptor>,
}

/// Data matrices, fit and bound attachment in one call.
pub fn identify(
    lifting: &Lifting,
    samples: &SampleSet,
    c_r: f64,
    delta: f64,
) -> Result<(Surrogate, FitReport)> {
    let data = build_data_matrices(lifting, samples)?;
    let (s, report) = fit(&data)?;
    Ok((s.with_bounds(c_r, delta)?.with_lifting(lifting), report))
}
