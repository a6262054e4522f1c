//! Symmetric affine matrix expressions and the synthesis LMIs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::edmd::Surrogate;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{kron, max_abs, min_eigenvalue, Mat};
use crate::uncertainty::UncertaintyRegion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VarKind {
    Symmetric { n: usize },
    Full { rows: usize, cols: usize },
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
}

impl VarSpec {
    pub fn symmetric(name: &str, n: usize) -> Self {
        Self { name: name.into(), kind: VarKind::Symmetric { n } }
    }

    pub fn full(name: &str, rows: usize, cols: usize) -> Self {
        Self { name: name.into(), kind: VarKind::Full { rows, cols } }
    }

    pub fn scalar(name: &str) -> Self {
        Self { name: name.into(), kind: VarKind::Scalar }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            VarKind::Symmetric { n } => (n, n),
            VarKind::Full { rows, cols } => (rows, cols),
            VarKind::Scalar => (1, 1),
        }
    }

    /// Number of scalar coordinates.
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Symmetric { n } => n * (n + 1) / 2,
            VarKind::Full { rows, cols } => rows * cols,
            VarKind::Scalar => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upper triangle with `√2` off-diagonal scaling, or row-major.
    pub fn vectorize(&self, m: &Mat) -> Vec<f64> {
        match self.kind {
            VarKind::Symmetric { n } => {
                let mut out = Vec::with_capacity(self.len());
                for i in 0..n {
                    for j in i..n {
                        if i == j {
                            out.push(m[(i, i)]);
                        } else {
                            out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
                        }
                    }
                }
                out
            }
            VarKind::Full { rows, cols } => {
                (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)])).collect()
            }
            VarKind::Scalar => vec![m[(0, 0)]],
        }
    }

    pub fn devectorize(&self, z: &[f64]) -> Mat {
        let (r, c) = self.shape();
        let mut m = Mat::zeros(r, c);
        for (k, &v) in z.iter().enumerate().take(self.len()) {
            m += self.basis(k) * v;
        }
        m
    }

    /// Matrix of the `k`-th coordinate direction.
    pub fn basis(&self, k: usize) -> Mat {
        let (r, c) = self.shape();
        let mut e = Mat::zeros(r, c);
        match self.kind {
            VarKind::Symmetric { n } => {
                let (i, j) = sym_index(n, k);
                if i == j {
                    e[(i, i)] = 1.0;
                } else {
                    let s = std::f64::consts::FRAC_1_SQRT_2;
                    e[(i, j)] = s;
                    e[(j, i)] = s;
                }
            }
            VarKind::Full { cols, .. } => e[(k / cols, k % cols)] = 1.0,
            VarKind::Scalar => e[(0, 0)] = 1.0,
        }
        e
    }
}

fn sym_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i;
        if k < row {
            return (i, i + k);
        }
        k -= row;
    }
    panic!("symmetric coordinate out of range");
}

pub type LinearMap = Arc<dyn Fn(&Mat) -> Mat + Send + Sync>;

#[derive(Clone)]
pub struct BlockTerm {
    pub var: usize,
    pub row: usize,
    pub col: usize,
    pub map: LinearMap,
}

impl fmt::Debug for BlockTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockTerm(var {}, block ({}, {}))", self.var, self.row, self.col)
    }
}

/// Symmetric matrix-valued affine function of the decision variables.
///
/// Terms live in the lower block triangle; block `(i, j)` with `i > j` is
/// mirrored to `(j, i)` and diagonal blocks are symmetrized, so every value is
/// exactly symmetric.
#[derive(Debug, Clone)]
pub struct AffineMatrixExpr {
    pub name: String,
    pub sizes: Vec<usize>,
    pub constants: Vec<(usize, usize, Mat)>,
    pub terms: Vec<BlockTerm>,
}

impl AffineMatrixExpr {
    pub fn new(name: &str, sizes: Vec<usize>) -> Self {
        Self { name: name.into(), sizes, constants: Vec::new(), terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn constant(&mut self, row: usize, col: usize, m: Mat) -> &mut Self {
        assert!(row >= col, "terms must lie in the lower block triangle");
        self.constants.push((row, col, m));
        self
    }

    pub fn term<F>(&mut self, var: usize, row: usize, col: usize, f: F) -> &mut Self
    where
        F: Fn(&Mat) -> Mat + Send + Sync + 'static,
    {
        assert!(row >= col, "terms must lie in the lower block triangle");
        self.terms.push(BlockTerm { var, row, col, map: Arc::new(f) });
        self
    }

    fn place(&self, acc: &mut Mat, offsets: &[usize], row: usize, col: usize, m: &Mat) -> Result<()> {
        if m.shape() != (self.sizes[row], self.sizes[col]) {
            return Err(Error::Dimension {
                context: "LMI block",
                expected: self.sizes[row] * self.sizes[col],
                got: m.len(),
            });
        }
        let mut view = acc.view_mut((offsets[row], offsets[col]), m.shape());
        if row == col {
            view += m * 0.5;
        } else {
            view += m;
        }
        Ok(())
    }

    fn finish(acc: Mat) -> Mat {
        &acc + acc.transpose()
    }

    fn offsets(&self) -> Vec<usize> {
        crate::linalg::offsets(&self.sizes)
    }

    /// Constant part only.
    pub fn constant_value(&self) -> Result<Mat> {
        let off = self.offsets();
        let mut acc = Mat::zeros(self.dim(), self.dim());
        for (r, c, m) in &self.constants {
            self.place(&mut acc, &off, *r, *c, m)?;
        }
        Ok(Self::finish(acc))
    }

    /// Linear part for variable `var` set to `value`, all others zero.
    pub fn linear_value(&self, var: usize, value: &Mat) -> Result<Mat> {
        let off = self.offsets();
        let mut acc = Mat::zeros(self.dim(), self.dim());
        for t in self.terms.iter().filter(|t| t.var == var) {
            self.place(&mut acc, &off, t.row, t.col, &(t.map)(value))?;
        }
        Ok(Self::finish(acc))
    }

    pub fn evaluate(&self, values: &[Mat]) -> Result<Mat> {
        let off = self.offsets();
        let mut acc = Mat::zeros(self.dim(), self.dim());
        for (r, c, m) in &self.constants {
            self.place(&mut acc, &off, *r, *c, m)?;
        }
        for t in &self.terms {
            let v = values
                .get(t.var)
                .ok_or_else(|| Error::Invalid(format!("missing value for variable {}", t.var)))?;
            self.place(&mut acc, &off, t.row, t.col, &(t.map)(v))?;
        }
        Ok(Self::finish(acc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Required `⪰ εI`.
    Strict,
    /// Required `⪰ 0`.
    NonStrict,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub expr: AffineMatrixExpr,
    pub strictness: Strictness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

/// Indices of the named decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarIds {
    pub p: usize,
    pub l: usize,
    pub lw: Option<usize>,
    /// `λ` for the first theorem, `Λ` for the second.
    pub lambda: usize,
    pub tau: usize,
    pub nu: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub theorem: Theorem,
    pub big_n: usize,
    pub m: usize,
    pub vars: Vec<VarSpec>,
    pub ids: VarIds,
    pub constraints: Vec<Constraint>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Absolute strictness margin; `None` uses the data-scaled default.
    pub epsilon: Option<f64>,
    /// Include the invariance LMI.
    pub invariance: bool,
    /// Bound `trace(P) ≤ N · cap`, used without the invariance LMI.
    pub trace_cap: Option<f64>,
    /// Second theorem only: drop `L_w` (treated as zero).
    pub freeze_lw: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { epsilon: None, invariance: true, trace_cap: None, freeze_lw: false }
    }
}

/// Scale used for the default margin: `1e-6 · max(1, max |data entry|)`.
pub fn default_epsilon(s: &Surrogate, u: &UncertaintyRegion) -> f64 {
    let scale = [
        max_abs(&s.a),
        max_abs(&s.b0),
        s.b.iter().map(max_abs).fold(0.0, f64::max),
        max_abs(&u.q_tilde_inv),
        u.s_tilde.amax(),
        u.r_tilde.abs(),
    ]
    .into_iter()
    .fold(1.0, f64::max);
    1e-6 * scale
}

fn check_inputs(s: &Surrogate, u: &UncertaintyRegion) -> Result<()> {
    s.validate()?;
    check_dim("region dimension", s.big_n(), u.dim())?;
    if !(s.c_r > 0.0 && s.c_r.is_finite()) {
        return Err(Error::Invalid("surrogate has no remainder bound c_r".into()));
    }
    Ok(())
}

fn col(v: &crate::linalg::Vector) -> Mat {
    Mat::from_column_slice(v.len(), 1, v.as_slice())
}

/// The invariance LMI in `(P, ν)`, block sizes `(N, 1, N, 1)`.
pub fn invariance_lmi(u: &UncertaintyRegion, p: usize, nu: usize) -> Result<AffineMatrixExpr> {
    let n = u.dim();
    let s = col(&u.sz);
    let q_inv = crate::linalg::sym(&crate::linalg::inverse(&u.qz)?);
    let rz = u.rz;
    let mut e = AffineMatrixExpr::new("invariance", vec![n, 1, n, 1]);
    e.term(p, 0, 0, |p| p.clone());
    let st = s.transpose();
    e.term(p, 1, 0, move |p| &st * p);
    e.term(nu, 1, 1, move |v| v * rz);
    e.term(p, 2, 0, |p| p.clone());
    e.term(nu, 2, 2, move |v| -(&q_inv * v[(0, 0)]));
    e.term(nu, 3, 1, |v| v.clone());
    e.constant(3, 3, Mat::from_element(1, 1, 1.0));
    Ok(e)
}

fn scalar_lower_bounds(constraints: &mut Vec<Constraint>, vars: &[VarSpec], ids: &[usize]) {
    for &v in ids {
        let n = vars[v].shape().0;
        let mut e = AffineMatrixExpr::new(&format!("{} positive", vars[v].name), vec![n]);
        e.term(v, 0, 0, |x| x.clone());
        constraints.push(Constraint { expr: e, strictness: Strictness::Strict });
    }
}

fn trace_cap_constraint(p: usize, n: usize, cap: f64) -> Constraint {
    let mut e = AffineMatrixExpr::new("trace cap", vec![1]);
    e.constant(0, 0, Mat::from_element(1, 1, n as f64 * cap));
    e.term(p, 0, 0, |x| Mat::from_element(1, 1, -x.trace()));
    Constraint { expr: e, strictness: Strictness::NonStrict }
}

/// Single-input synthesis LMI with block sizes `(N, 1, N+1, N)`.
pub fn build_theorem1(
    s: &Surrogate,
    u: &UncertaintyRegion,
    opts: &BuildOptions,
) -> Result<SynthesisProblem> {
    check_inputs(s, u)?;
    if s.m() != 1 {
        return Err(Error::Invalid(format!("single-input theorem needs m = 1, got {}", s.m())));
    }
    let n = s.big_n();
    let mut vars = vec![
        VarSpec::symmetric("P", n),
        VarSpec::full("L", 1, n),
        VarSpec::scalar("lambda"),
        VarSpec::scalar("tau"),
    ];
    if opts.invariance {
        vars.push(VarSpec::scalar("nu"));
    }
    let (p, l, lam, tau, nu) = (0, 1, 2, 3, 4);
    let a = s.a.clone();
    let b0 = s.b0.clone();
    let b1 = s.b[0].clone();
    let st = col(&u.s_tilde);
    let rt = u.r_tilde;
    let qti = u.q_tilde_inv.clone();
    let cr2 = s.c_r.powi(-2);

    let mut e = AffineMatrixExpr::new("synthesis", vec![n, 1, n + 1, n]);
    {
        let a = a.clone();
        e.term(p, 0, 0, move |p| -(&a * p) - p * a.transpose());
    }
    {
        let b0 = b0.clone();
        e.term(l, 0, 0, move |l| -(&b0 * l) - l.transpose() * b0.transpose());
    }
    e.term(tau, 0, 0, move |t| -Mat::identity(n, n) * t[(0, 0)]);
    e.term(l, 1, 0, |l| -l);
    {
        let stb = st.transpose() * b1.transpose();
        e.term(lam, 1, 0, move |v| -(&stb * v[(0, 0)]));
    }
    e.term(lam, 1, 1, move |v| v * rt);
    e.term(p, 2, 0, move |p| {
        let mut m = Mat::zeros(n + 1, n);
        m.view_mut((0, 0), (n, n)).copy_from(&-p);
        m
    });
    e.term(l, 2, 0, move |l| {
        let mut m = Mat::zeros(n + 1, n);
        m.view_mut((n, 0), (1, n)).copy_from(&-l);
        m
    });
    e.term(tau, 2, 2, move |t| Mat::identity(n + 1, n + 1) * (0.5 * cr2 * t[(0, 0)]));
    {
        let b1t = b1.transpose();
        e.term(lam, 3, 0, move |v| &b1t * v[(0, 0)]);
    }
    e.term(lam, 3, 3, move |v| -(&qti * v[(0, 0)]));

    let mut constraints = vec![Constraint { expr: e, strictness: Strictness::Strict }];
    if opts.invariance {
        constraints.push(Constraint { expr: invariance_lmi(u, p, nu)?, strictness: Strictness::NonStrict });
    }
    if let Some(cap) = opts.trace_cap {
        constraints.push(trace_cap_constraint(p, n, cap));
    }
    let mut positive = vec![p, lam, tau];
    if opts.invariance {
        positive.push(nu);
    }
    scalar_lower_bounds(&mut constraints, &vars, &positive);
    Ok(SynthesisProblem {
        theorem: Theorem::One,
        big_n: n,
        m: 1,
        vars,
        ids: VarIds { p, l, lw: None, lambda: lam, tau, nu: opts.invariance.then_some(nu) },
        constraints,
        epsilon: opts.epsilon.unwrap_or_else(|| default_epsilon(s, u)),
    })
}

/// Multi-input synthesis LMI with block sizes `(N, m, N+m, Nm)`.
pub fn build_theorem2(
    s: &Surrogate,
    u: &UncertaintyRegion,
    opts: &BuildOptions,
) -> Result<SynthesisProblem> {
    check_inputs(s, u)?;
    let n = s.big_n();
    let m = s.m();
    if m == 0 {
        return Err(Error::Invalid("at least one input is required".into()));
    }
    let mut vars = vec![VarSpec::symmetric("P", n), VarSpec::full("L", m, n)];
    let lw = if opts.freeze_lw {
        None
    } else {
        vars.push(VarSpec::full("Lw", m, n * m));
        Some(vars.len() - 1)
    };
    vars.push(VarSpec::symmetric("Lambda", m));
    let lam = vars.len() - 1;
    vars.push(VarSpec::scalar("tau"));
    let tau = vars.len() - 1;
    let nu = vars.len();
    if opts.invariance {
        vars.push(VarSpec::scalar("nu"));
    }
    let (p, l) = (0, 1);

    let a = s.a.clone();
    let b0 = s.b0.clone();
    let bt = s.b_tilde();
    let st = col(&u.s_tilde);
    let rt = Mat::from_element(1, 1, u.r_tilde);
    let qti = u.q_tilde_inv.clone();
    let cr2 = s.c_r.powi(-2);
    let im = Mat::identity(m, m);
    let in_ = Mat::identity(n, n);
    let i_s = kron(&im, &st);

    let mut e = AffineMatrixExpr::new("synthesis", vec![n, m, n + m, n * m]);
    {
        let a = a.clone();
        e.term(p, 0, 0, move |p| -(&a * p) - p * a.transpose());
    }
    {
        let b0 = b0.clone();
        e.term(l, 0, 0, move |l| -(&b0 * l) - l.transpose() * b0.transpose());
    }
    e.term(tau, 0, 0, move |t| -Mat::identity(n, n) * t[(0, 0)]);

    e.term(l, 1, 0, |l| -l);
    {
        let (st, btt) = (st.clone(), bt.transpose());
        e.term(lam, 1, 0, move |v| -(kron(v, &st.transpose()) * &btt));
    }
    {
        let rt = rt.clone();
        e.term(lam, 1, 1, move |v| kron(v, &rt));
    }
    e.term(p, 2, 0, move |p| {
        let mut out = Mat::zeros(n + m, n);
        out.view_mut((0, 0), (n, n)).copy_from(&-p);
        out
    });
    e.term(l, 2, 0, move |l| {
        let mut out = Mat::zeros(n + m, n);
        out.view_mut((n, 0), (m, n)).copy_from(&-l);
        out
    });
    e.term(tau, 2, 2, move |t| Mat::identity(n + m, n + m) * (0.5 * cr2 * t[(0, 0)]));
    {
        let (in_, btt) = (in_.clone(), bt.transpose());
        e.term(lam, 3, 0, move |v| kron(v, &in_) * &btt);
    }
    {
        let qti = qti.clone();
        e.term(lam, 3, 3, move |v| -kron(v, &qti));
    }
    if let Some(lw) = lw {
        {
            let (i_s, b0t) = (i_s.clone(), b0.transpose());
            e.term(lw, 1, 0, move |w| -(i_s.transpose() * w.transpose() * &b0t));
        }
        {
            let i_s = i_s.clone();
            e.term(lw, 1, 1, move |w| {
                let x = w * &i_s;
                -(&x + x.transpose())
            });
        }
        {
            let i_s = i_s.clone();
            e.term(lw, 2, 1, move |w| {
                let mut out = Mat::zeros(n + m, m);
                out.view_mut((n, 0), (m, m)).copy_from(&-(w * &i_s));
                out
            });
        }
        {
            let b0t = b0.transpose();
            e.term(lw, 3, 0, move |w| w.transpose() * &b0t);
        }
        e.term(lw, 3, 1, |w| w.transpose());
        e.term(lw, 3, 2, move |w| {
            let mut out = Mat::zeros(n * m, n + m);
            out.view_mut((0, n), (n * m, m)).copy_from(&-w.transpose());
            out
        });
    }

    let mut constraints = vec![Constraint { expr: e, strictness: Strictness::Strict }];
    if opts.invariance {
        constraints.push(Constraint { expr: invariance_lmi(u, p, nu)?, strictness: Strictness::NonStrict });
    }
    if let Some(cap) = opts.trace_cap {
        constraints.push(trace_cap_constraint(p, n, cap));
    }
    let mut positive = vec![p, lam, tau];
    if opts.invariance {
        positive.push(nu);
    }
    scalar_lower_bounds(&mut constraints, &vars, &positive);
    Ok(SynthesisProblem {
        theorem: Theorem::Two,
        big_n: n,
        m,
        vars,
        ids: VarIds { p, l, lw, lambda: lam, tau, nu: opts.invariance.then_some(nu) },
        constraints,
        epsilon: opts.epsilon.unwrap_or_else(|| default_epsilon(s, u)),
    })
}

/// Value and minimum eigenvalue of one constraint.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: Mat,
    pub min_eigenvalue: f64,
}

pub fn evaluate(expr: &AffineMatrixExpr, values: &[Mat]) -> Result<Evaluation> {
    let value = expr.evaluate(values)?;
    let min_eigenvalue = min_eigenvalue(&value);
    Ok(Evaluation { value, min_eigenvalue })
}

impl SynthesisProblem {
    pub fn num_scalars(&self) -> usize {
        self.vars.iter().map(VarSpec::len).sum()
    }

    pub fn var_offsets(&self) -> Vec<usize> {
        let sizes: Vec<usize> = self.vars.iter().map(VarSpec::len).collect();
        crate::linalg::offsets(&sizes)
    }

    /// Splits a flat coordinate vector into variable values.
    pub fn unpack(&self, z: &[f64]) -> Result<Vec<Mat>> {
        check_dim("assignment length", self.num_scalars(), z.len())?;
        let off = self.var_offsets();
        Ok(self
            .vars
            .iter()
            .zip(off)
            .map(|(v, o)| v.devectorize(&z[o..o + v.len()]))
            .collect())
    }

    pub fn pack(&self, values: &[Mat]) -> Result<Vec<f64>> {
        check_dim("number of variable values", self.vars.len(), values.len())?;
        let mut z = Vec::with_capacity(self.num_scalars());
        for (v, m) in self.vars.iter().zip(values) {
            if m.shape() != v.shape() {
                return Err(Error::Invalid(format!("value for {} has shape {:?}", v.name, m.shape())));
            }
            z.extend(v.vectorize(m));
        }
        Ok(z)
    }

    pub fn manifest(&self) -> ProblemManifest {
        ProblemManifest {
            theorem: self.theorem,
            big_n: self.big_n,
            m: self.m,
            epsilon: self.epsilon,
            variables: self.vars.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintManifest {
                    name: c.expr.name.clone(),
                    block_sizes: c.expr.sizes.clone(),
                    dimension: c.expr.dim(),
                    strictness: c.strictness,
                })
                .collect(),
        }
    }

    pub fn has_constraint(&self, name: &str) -> bool {
        self.constraints.iter().any(|c| c.expr.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintManifest {
    pub name: String,
    pub block_sizes: Vec<usize>,
    pub dimension: usize,
    pub strictness: Strictness,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemManifest {
    pub theorem: Theorem,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub variables: Vec<VarSpec>,
    pub constraints: Vec<ConstraintManifest>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    fn exact_surrogate() -> Surrogate {
        let a = Mat::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, -4.0, 5.0, 0.0, 0.0, 1.0]);
        let b0 = Mat::from_column_slice(3, 1, &[0.0, 1.0, 1.0]);
        Surrogate::new(a, b0, vec![Mat::zeros(3, 3)], 0.1, 0.05).unwrap()
    }

    #[test]
    fn symmetric_vectorization_round_trip() {
        let v = VarSpec::symmetric("P", 3);
        let p = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let z = v.vectorize(&p);
        assert_eq!(z.len(), 6);
        assert!((z[1] - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((v.devectorize(&z) - &p).amax() < 1e-14);
        let f = VarSpec::full("L", 2, 3);
        let l = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.vectorize(&l), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(f.devectorize(&f.vectorize(&l)), l);
    }

    #[test]
    fn theorem1_dimensions_and_zero_value() {
        let s = exact_surrogate();
        let u = UncertaintyRegion::ball(3, 500.0).unwrap();
        let prob = build_theorem1(&s, &u, &BuildOptions::default()).unwrap();
        assert_eq!(prob.constraints[0].expr.dim(), 3 * 3 + 2);
        assert_eq!(prob.num_scalars(), 12);
        let zero: Vec<Mat> = prob.vars.iter().map(|v| Mat::zeros(v.shape().0, v.shape().1)).collect();
        let v = evaluate(&prob.constraints[0].expr, &zero).unwrap();
        assert_eq!(v.value, Mat::zeros(11, 11));
        let inv = evaluate(&prob.constraints[1].expr, &zero).unwrap();
        assert_eq!(inv.min_eigenvalue, 0.0);
    }

    #[test]
    fn theorem1_rejects_multi_input() {
        let s = Surrogate::new(Mat::zeros(2, 2), Mat::zeros(2, 2), vec![Mat::zeros(2, 2); 2], 0.1, 0.05)
            .unwrap();
        let u = UncertaintyRegion::ball(2, 1.0).unwrap();
        assert!(build_theorem1(&s, &u, &BuildOptions::default()).is_err());
        let p = build_theorem2(&s, &u, &BuildOptions::default()).unwrap();
        assert_eq!(p.constraints[0].expr.dim(), 2 * 2 + 2 * 2 + 2 * 2);
    }

    #[test]
    fn values_are_exactly_symmetric() {
        let s = Surrogate::new(
            Mat::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3 + 0.1),
            Mat::from_fn(3, 2, |i, j| (i + j) as f64 * 0.2),
            vec![Mat::from_fn(3, 3, |i, j| (i * j) as f64 * 0.05 - 0.1); 2],
            0.1,
            0.05,
        )
        .unwrap();
        let u = UncertaintyRegion::new(
            Mat::from_row_slice(3, 3, &[-2.0, 0.1, 0.0, 0.1, -1.0, 0.2, 0.0, 0.2, -3.0]),
            Vector::from_vec(vec![0.1, 0.0, -0.2]),
            4.0,
        )
        .unwrap();
        let prob = build_theorem2(&s, &u, &BuildOptions::default()).unwrap();
        let vals: Vec<Mat> = prob
            .vars
            .iter()
            .enumerate()
            .map(|(k, v)| Mat::from_fn(v.shape().0, v.shape().1, |i, j| ((i * 7 + j * 3 + k) % 5) as f64 - 1.7))
            .collect();
        for c in &prob.constraints {
            let m = c.expr.evaluate(&vals).unwrap();
            assert_eq!(m, m.transpose());
        }
    }

    #[test]
    fn manifest_lists_constraints() {
        let s = exact_surrogate();
        let u = UncertaintyRegion::ball(3, 500.0).unwrap();
        let opts = BuildOptions { invariance: false, trace_cap: Some(1e3), ..Default::default() };
        let prob = build_theorem1(&s, &u, &opts).unwrap();
        assert!(!prob.has_constraint("invariance"));
        assert!(prob.has_constraint("trace cap"));
        let json = serde_json::to_string(&prob.manifest()).unwrap();
        assert!(json.contains("synthesis"));
    }
}
