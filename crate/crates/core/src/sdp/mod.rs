//! Conic lowering of synthesis problems and feasibility solves.
//!
//! A [`ConicProgram`] asks for `F₀ + Σ z_k F_k ⪰ margin·I` on every block.
//! [`solve`] first maximizes a common margin `t` over all blocks; `t* < 0`
//! is an infeasibility certificate. A feasible program is then re-solved for
//! a well-centred point according to [`Goal`].

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{min_eigenvalue, Mat};
use crate::lmi::{evaluate, Strictness, SynthesisProblem, VarSpec};

#[cfg(feature = "clarabel")]
pub mod clarabel_backend;
pub mod ipm;

pub use ipm::{IpmOptions, IpmResult, IpmStatus, StandardSdp};

/// One PSD block `F₀ + Σ z_k F_k`.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub name: String,
    pub strictness: Strictness,
    pub f0: Mat,
    pub coeffs: Vec<(usize, Mat)>,
}

impl PsdBlock {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn value(&self, z: &[f64]) -> Mat {
        let mut v = self.f0.clone();
        for (k, f) in &self.coeffs {
            v += f * z[*k];
        }
        v
    }
}

/// Position of a matrix variable inside the scalar vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSlot {
    pub var: VarSpec,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub slots: Vec<VarSlot>,
    pub blocks: Vec<PsdBlock>,
    /// Linear objective (minimized); all zero for feasibility.
    pub objective: Vec<f64>,
    /// Required margin of strict blocks.
    pub epsilon: f64,
}

impl ConicProgram {
    pub fn new(num_vars: usize, epsilon: f64) -> Self {
        Self { num_vars, slots: Vec::new(), blocks: Vec::new(), objective: vec![0.0; num_vars], epsilon }
    }

    pub fn push_block(&mut self, block: PsdBlock) -> Result<()> {
        let n = block.dim();
        check_dim("block constant columns", n, block.f0.ncols())?;
        for (k, f) in &block.coeffs {
            if *k >= self.num_vars {
                return Err(Error::Invalid(format!("coefficient for missing variable {k}")));
            }
            if f.shape() != (n, n) {
                return Err(Error::Invalid(format!("coefficient shape {:?} in block {}", f.shape(), block.name)));
            }
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.epsilon.is_finite()
            && self.objective.iter().all(|v| v.is_finite())
            && self.blocks.iter().all(|b| {
                b.f0.iter().all(|v| v.is_finite())
                    && b.coeffs.iter().all(|(_, f)| f.iter().all(|v| v.is_finite()))
            })
    }

    pub fn required_margin(&self, s: Strictness) -> f64 {
        match s {
            Strictness::Strict => self.epsilon,
            Strictness::NonStrict => 0.0,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&VarSlot> {
        self.slots.iter().find(|s| s.var.name == name)
    }

    /// Sparse triplet listing.
    ///
    /// A header line `program <num_vars> <num_blocks> <epsilon>` is followed,
    /// per block, by `block <index> <dim> <strict|nonstrict> <name>` and one
    /// `<k> <i> <j> <value>` line per nonzero upper-triangle entry (`i ≤ j`,
    /// zero based). `k = 0` denotes `F₀` and `k ≥ 1` the coefficient of
    /// `z_{k-1}`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "program {} {} {:e}", self.num_vars, self.blocks.len(), self.epsilon)?;
        for (bi, b) in self.blocks.iter().enumerate() {
            let tag = match b.strictness {
                Strictness::Strict => "strict",
                Strictness::NonStrict => "nonstrict",
            };
            writeln!(w, "block {bi} {} {tag} {}", b.dim(), b.name)?;
            let mut emit = |k: usize, m: &Mat| -> std::io::Result<()> {
                for j in 0..m.ncols() {
                    for i in 0..=j {
                        if m[(i, j)] != 0.0 {
                            writeln!(w, "{k} {i} {j} {:e}", m[(i, j)])?;
                        }
                    }
                }
                Ok(())
            };
            emit(0, &b.f0)?;
            for (k, f) in &b.coeffs {
                emit(k + 1, f)?;
            }
        }
        Ok(())
    }
}

/// Lowers every constraint through the variables' coordinate bases.
pub fn lower(problem: &SynthesisProblem) -> Result<ConicProgram> {
    let offsets = problem.var_offsets();
    let mut program = ConicProgram::new(problem.num_scalars(), problem.epsilon);
    program.slots = problem
        .vars
        .iter()
        .zip(&offsets)
        .map(|(v, &o)| VarSlot { var: v.clone(), offset: o })
        .collect();
    for c in &problem.constraints {
        let f0 = c.expr.constant_value()?;
        let mut coeffs = Vec::new();
        for (vi, v) in problem.vars.iter().enumerate() {
            if !c.expr.terms.iter().any(|t| t.var == vi) {
                continue;
            }
            for k in 0..v.len() {
                let f = c.expr.linear_value(vi, &v.basis(k))?;
                if f.amax() != 0.0 {
                    coeffs.push((offsets[vi] + k, f));
                }
            }
        }
        program.push_block(PsdBlock { name: c.expr.name.clone(), strictness: c.strictness, f0, coeffs })?;
    }
    Ok(program)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "variable", rename_all = "snake_case")]
pub enum Goal {
    /// No objective. Interior-point iterates settle at the analytic center of
    /// the feasible set intersected with the variable box.
    Feasibility,
    /// Return the maximal-common-margin point.
    MaxMargin,
    /// Maximize the margin of strict blocks with non-strict blocks backed off slightly.
    Centered,
    /// Maximize the minimum eigenvalue of the named symmetric variable.
    MaxMinEigenvalue(String),
    /// Minimize the program's linear objective.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Ipm,
    Clarabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub backend: Backend,
    pub ipm: IpmOptions,
    pub goal: Goal,
    /// Box `|z_k| ≤ bound` keeping the margin problems bounded.
    pub box_bound: f64,
    pub margin_cap: f64,
    /// Upper limit of the margin imposed on non-strict blocks in the second solve.
    pub nonstrict_backoff: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Ipm,
            ipm: IpmOptions::default(),
            goal: Goal::Feasibility,
            box_bound: 1e6,
            margin_cap: 1e3,
            nonstrict_backoff: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    InfeasibleCertificate,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockMargin {
    pub name: String,
    pub min_eigenvalue: f64,
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub assignment: Vec<f64>,
    pub margins: Vec<BlockMargin>,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Optimal common margin of the first solve.
    pub phase1_margin: Option<f64>,
    pub backend: Backend,
    pub message: String,
}

/// Verification slack on eigenvalues.
pub const VERIFY_SLACK: f64 = 1e-7;

/// Uniform view of a backend's answer to a [`StandardSdp`].
#[derive(Debug, Clone)]
pub struct BackendResult {
    pub status: IpmStatus,
    pub y: Vec<f64>,
    pub iterations: usize,
}

pub trait SdpBackend {
    fn solve_standard(&self, sdp: &StandardSdp, opts: &IpmOptions) -> BackendResult;
}

/// The bundled dense interior-point method.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseIpm;

impl SdpBackend for DenseIpm {
    fn solve_standard(&self, sdp: &StandardSdp, opts: &IpmOptions) -> BackendResult {
        let r = ipm::solve(sdp, opts);
        BackendResult { status: r.status, y: r.y, iterations: r.iterations }
    }
}

fn backend_for(b: Backend) -> std::result::Result<Box<dyn SdpBackend>, String> {
    match b {
        Backend::Ipm => Ok(Box::new(DenseIpm)),
        #[cfg(feature = "clarabel")]
        Backend::Clarabel => Ok(Box::new(clarabel_backend::Clarabel)),
        #[cfg(not(feature = "clarabel"))]
        Backend::Clarabel => Err("built without the `clarabel` feature".into()),
    }
}

fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// Per-block margin handling of an auxiliary solve.
enum Margin {
    /// `F − m I − t I ⪰ 0`.
    Shifted(f64),
    /// `F − m I ⪰ 0`.
    Fixed(f64),
}

/// Builds `max bᵀy` over `y = (z, t)` with the given per-block margins.
fn auxiliary(program: &ConicProgram, margins: &[Margin], extra: Option<(usize, usize)>, opts: &SolveOptions) -> StandardSdp {
    let n = program.num_vars;
    let t = n;
    let mut c = Vec::new();
    let mut a: Vec<Vec<(usize, Mat)>> = vec![Vec::new(); n + 1];
    for (block, margin) in program.blocks.iter().zip(margins) {
        let k = c.len();
        let d = block.dim();
        let (m, shifted) = match margin {
            Margin::Shifted(m) => (*m, true),
            Margin::Fixed(m) => (*m, false),
        };
        c.push(&block.f0 - Mat::identity(d, d) * m);
        for (v, f) in &block.coeffs {
            a[*v].push((k, -f));
        }
        if shifted {
            a[t].push((k, Mat::identity(d, d)));
        }
    }
    // `t I ⪯ X` for a symmetric variable X, in coordinates.
    if let Some((offset, len)) = extra {
        let slot = program.slots.iter().find(|s| s.offset == offset).expect("slot");
        let d = slot.var.shape().0;
        let k = c.len();
        c.push(Mat::zeros(d, d));
        for j in 0..len {
            a[offset + j].push((k, -slot.var.basis(j)));
        }
        a[t].push((k, Mat::identity(d, d)));
    }
    for av in a.iter_mut().take(n) {
        let k = c.len();
        c.push(scalar(opts.box_bound));
        c.push(scalar(opts.box_bound));
        av.push((k, scalar(1.0)));
        av.push((k + 1, scalar(-1.0)));
    }
    let k = c.len();
    c.push(scalar(opts.margin_cap));
    a[t].push((k, scalar(1.0)));
    let mut b = vec![0.0; n + 1];
    b[t] = 1.0;
    StandardSdp { c, a, b }
}

/// `min cᵀz` with every block at its required margin, inside the box.
fn linear_program(program: &ConicProgram, objective: &[f64], opts: &SolveOptions) -> StandardSdp {
    let n = program.num_vars;
    let mut c = Vec::new();
    let mut a: Vec<Vec<(usize, Mat)>> = vec![Vec::new(); n];
    for block in &program.blocks {
        let k = c.len();
        let d = block.dim();
        c.push(&block.f0 - Mat::identity(d, d) * program.required_margin(block.strictness));
        for (v, f) in &block.coeffs {
            a[*v].push((k, -f));
        }
    }
    for av in a.iter_mut().take(n) {
        let k = c.len();
        c.push(scalar(opts.box_bound));
        c.push(scalar(opts.box_bound));
        av.push((k, scalar(1.0)));
        av.push((k + 1, scalar(-1.0)));
    }
    let b = objective.iter().map(|v| -v).collect();
    StandardSdp { c, a, b }
}

/// Program-level eigenvalue check of an assignment.
pub fn check_assignment(program: &ConicProgram, z: &[f64]) -> Vec<BlockMargin> {
    program
        .blocks
        .iter()
        .map(|b| {
            let required = program.required_margin(b.strictness);
            let min_eigenvalue = min_eigenvalue(&b.value(z));
            BlockMargin {
                name: b.name.clone(),
                min_eigenvalue,
                required,
                pass: min_eigenvalue >= required - VERIFY_SLACK,
            }
        })
        .collect()
}

fn usable(s: &IpmStatus) -> bool {
    matches!(s, IpmStatus::Converged | IpmStatus::Inaccurate)
}

fn status_of(s: &IpmStatus) -> SolveStatus {
    match s {
        IpmStatus::Converged | IpmStatus::Inaccurate => SolveStatus::Feasible,
        IpmStatus::IterationLimit => SolveStatus::IterationLimit,
        IpmStatus::NumericalFailure(_) => SolveStatus::NumericalFailure,
    }
}

pub fn solve(program: &ConicProgram, opts: &SolveOptions) -> SolveReport {
    let start = Instant::now();
    let mut report = SolveReport {
        status: SolveStatus::NumericalFailure,
        assignment: Vec::new(),
        margins: Vec::new(),
        iterations: 0,
        wall_time_s: 0.0,
        phase1_margin: None,
        backend: opts.backend,
        message: String::new(),
    };
    let finish = |mut r: SolveReport| {
        r.wall_time_s = start.elapsed().as_secs_f64();
        r
    };
    if !program.is_finite() {
        report.message = "program data not finite".into();
        return finish(report);
    }
    let backend = match backend_for(opts.backend) {
        Ok(b) => b,
        Err(msg) => {
            report.message = msg;
            return finish(report);
        }
    };
    let n = program.num_vars;

    let phase1_margins: Vec<Margin> = program
        .blocks
        .iter()
        .map(|b| Margin::Shifted(program.required_margin(b.strictness)))
        .collect();
    let r1 = backend.solve_standard(&auxiliary(program, &phase1_margins, None, opts), &opts.ipm);
    report.iterations = r1.iterations;
    if !usable(&r1.status) {
        report.status = status_of(&r1.status);
        report.message = format!("margin solve: {:?}", r1.status);
        return finish(report);
    }
    let t1 = r1.y[n];
    report.phase1_margin = Some(t1);
    let z1: Vec<f64> = r1.y[..n].to_vec();
    let margins1 = check_assignment(program, &z1);
    if t1 < -VERIFY_SLACK && !margins1.iter().all(|m| m.pass) {
        report.status = SolveStatus::InfeasibleCertificate;
        report.message = format!("maximal common margin {t1:.3e} is negative");
        report.assignment = z1;
        report.margins = margins1;
        return finish(report);
    }

    let second = match &opts.goal {
        Goal::MaxMargin => None,
        Goal::Feasibility => Some((linear_program(program, &vec![0.0; n], opts), false)),
        Goal::Centered => {
            let eta = opts.nonstrict_backoff.min(0.5 * t1.max(0.0));
            let m: Vec<Margin> = program
                .blocks
                .iter()
                .map(|b| match b.strictness {
                    Strictness::Strict => Margin::Shifted(program.epsilon),
                    Strictness::NonStrict => Margin::Fixed(eta),
                })
                .collect();
            Some((auxiliary(program, &m, None, opts), true))
        }
        Goal::MaxMinEigenvalue(name) => match program.slot(name) {
            Some(slot) if matches!(slot.var.kind, crate::lmi::VarKind::Symmetric { .. }) => {
                let m: Vec<Margin> = program
                    .blocks
                    .iter()
                    .map(|b| Margin::Fixed(program.required_margin(b.strictness)))
                    .collect();
                Some((auxiliary(program, &m, Some((slot.offset, slot.var.len())), opts), true))
            }
            _ => {
                report.message = format!("no symmetric variable named {name}; returning margin point");
                None
            }
        },
        Goal::Linear => Some((linear_program(program, &program.objective, opts), false)),
    };

    let mut z = z1;
    if let Some((sdp, _)) = second {
        let r2 = backend.solve_standard(&sdp, &opts.ipm);
        report.iterations += r2.iterations;
        if usable(&r2.status) {
            let z2: Vec<f64> = r2.y[..n].to_vec();
            if check_assignment(program, &z2).iter().all(|m| m.pass) {
                z = z2;
            } else {
                report.message = "second solve failed verification; using margin point".into();
            }
        } else {
            report.message = format!("second solve: {:?}; using margin point", r2.status);
        }
    }
    let margins = check_assignment(program, &z);
    report.status = if margins.iter().all(|m| m.pass) {
        SolveStatus::Feasible
    } else if t1 < 0.0 {
        SolveStatus::InfeasibleCertificate
    } else {
        SolveStatus::NumericalFailure
    };
    report.assignment = z;
    report.margins = margins;
    finish(report)
}

/// Independent check through the LMI evaluator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verification {
    pub margins: Vec<BlockMargin>,
    pub pass: bool,
}

pub fn verify(problem: &SynthesisProblem, assignment: &[f64]) -> Result<Verification> {
    let values = problem.unpack(assignment)?;
    let mut margins = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let e = evaluate(&c.expr, &values)?;
        let required = match c.strictness {
            Strictness::Strict => problem.epsilon,
            Strictness::NonStrict => 0.0,
        };
        let pass = e.min_eigenvalue >= -VERIFY_SLACK && e.min_eigenvalue >= required - VERIFY_SLACK;
        margins.push(BlockMargin { name: c.expr.name.clone(), min_eigenvalue: e.min_eigenvalue, required, pass });
    }
    let pass = margins.iter().all(|m| m.pass);
    Ok(Verification { margins, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edmd::Surrogate;
    use crate::lmi::{build_theorem1, BuildOptions};
    use crate::uncertainty::UncertaintyRegion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_var(blocks: &[(f64, f64)], strictness: Strictness) -> ConicProgram {
        let mut p = ConicProgram::new(1, 1e-6);
        for (i, (c0, c1)) in blocks.iter().enumerate() {
            p.push_block(PsdBlock {
                name: format!("b{i}"),
                strictness,
                f0: scalar(*c0),
                coeffs: vec![(0, scalar(*c1))],
            })
            .unwrap();
        }
        p
    }

    #[test]
    fn trivially_feasible() {
        let p = one_var(&[(-1.0, 1.0)], Strictness::NonStrict);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Feasible);
        assert!(r.assignment[0] >= 1.0 - 1e-7);
    }

    #[test]
    fn trivially_infeasible() {
        let p = one_var(&[(-1.0, 1.0), (-1.0, -1.0)], Strictness::NonStrict);
        let r = solve(&p, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::InfeasibleCertificate);
        assert!((r.phase1_margin.unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_goal_reaches_bound() {
        let mut p = one_var(&[(-1.0, 1.0)], Strictness::NonStrict);
        p.objective = vec![1.0];
        let opts = SolveOptions { goal: Goal::Linear, ..Default::default() };
        let r = solve(&p, &opts);
        assert_eq!(r.status, SolveStatus::Feasible);
        assert!((r.assignment[0] - 1.0).abs() < 1e-6);
    }

    fn surrogate() -> Surrogate {
        let a = Mat::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, -4.0, 5.0, 0.0, 0.0, 1.0]);
        let b0 = Mat::from_column_slice(3, 1, &[0.0, 1.0, 1.0]);
        Surrogate::new(a, b0, vec![Mat::zeros(3, 3)], 0.1, 0.05).unwrap()
    }

    #[test]
    fn lowering_is_affine_and_exact() {
        let s = surrogate();
        let u = UncertaintyRegion::ball(3, 500.0).unwrap();
        let problem = build_theorem1(&s, &u, &BuildOptions::default()).unwrap();
        let program = lower(&problem).unwrap();
        assert_eq!(program.num_vars, 12);
        assert_eq!(program.blocks.len(), problem.constraints.len());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let z: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let values = problem.unpack(&z).unwrap();
            for (c, b) in problem.constraints.iter().zip(&program.blocks) {
                let direct = c.expr.evaluate(&values).unwrap();
                assert!((direct - b.value(&z)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn theorem1_example_is_feasible_and_verified() {
        let s = surrogate();
        let u = UncertaintyRegion::ball(3, 500.0).unwrap();
        let problem = build_theorem1(&s, &u, &BuildOptions::default()).unwrap();
        let program = lower(&problem).unwrap();
        let r = solve(&program, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Feasible, "{}", r.message);
        let v = verify(&problem, &r.assignment).unwrap();
        assert!(v.pass);

        // Pushing P below its strict margin must be caught.
        let mut values = problem.unpack(&r.assignment).unwrap();
        let p = values[problem.ids.p].clone();
        let eig = p.clone().symmetric_eigen();
        let (i, lmin) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &l)| if l < a.1 { (i, l) } else { a });
        let v0 = eig.eigenvectors.column(i).into_owned();
        let shift = lmin - problem.epsilon + 2.0 * problem.epsilon;
        values[problem.ids.p] = &p - &v0 * v0.transpose() * shift;
        let z = problem.pack(&values).unwrap();
        assert!(!verify(&problem, &z).unwrap().pass);
    }

    #[test]
    fn triplet_export_lists_blocks() {
        let p = one_var(&[(-1.0, 1.0)], Strictness::Strict);
        let mut buf = Vec::new();
        p.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("program 1 1"));
        assert!(text.contains("block 0 1 strict b0"));
        assert!(text.contains("1 0 0 1e0"));
    }
}
