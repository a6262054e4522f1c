//! Run configuration and the stage functions driven by it.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::Quadrature;
use crate::controller::{lyapunov, ray_cap, ray_crossing, DesignResult};
use crate::domain::AxisBox;
use crate::edmd::{self, FitReport, Surrogate};
use crate::error::{Error, Result};
use crate::lifting::{cooked_up_lifting, cooked_up_xy_lifting, pendulum_lifting, Lifting, LiftingDescriptor};
use crate::linalg::{Mat, MatrixData, Vector};
use crate::lmi::{BuildOptions, Theorem};
use crate::plants::{self, Plant, PlantSpec, SampleSet, SamplingOptions};
use crate::sdp::SolveOptions;
use crate::synthesis::{self, Design, DesignOptions, HeuristicLog};
use crate::uncertainty::UncertaintyRegion;
use crate::verify::{self, AuditReport, LqrWeights, SimOptions, Termination, Trajectory};

/// Dictionary selector. `Preset` picks the dictionary paired with the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LiftingConfig {
    Preset,
    Explicit(LiftingDescriptor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionConfig {
    Explicit {
        #[serde(rename = "Qz")]
        qz: MatrixData,
        #[serde(rename = "Sz")]
        sz: Vec<f64>,
        #[serde(rename = "Rz")]
        rz: f64,
    },
    /// `Q_z = −I`, `S_z = 0`.
    Ball {
        #[serde(rename = "Rz")]
        rz: f64,
    },
    /// Shape found by the two-step heuristic.
    Heuristic {
        #[serde(rename = "Rz")]
        rz: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Random starts inside `{V ≤ level}`.
    pub monte_carlo: usize,
    pub level: f64,
    pub seed: u64,
    /// Additional explicit starts.
    pub starts: Vec<Vec<f64>>,
    pub sim: SimOptions,
    pub lqr: bool,
    pub lqr_grid: Vec<LqrWeights>,
    /// Samples for the lifted decrease certificate.
    pub decrease_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            monte_carlo: 20,
            level: 0.99,
            seed: 7,
            starts: Vec::new(),
            sim: SimOptions::default(),
            lqr: false,
            lqr_grid: verify::default_weight_grid(),
            decrease_samples: 2000,
        }
    }
}

/// One file drives the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub plant: PlantSpec,
    #[serde(default = "preset_lifting")]
    pub lifting: LiftingConfig,
    #[serde(default)]
    pub state_box: Option<AxisBox>,
    #[serde(default)]
    pub input_box: Option<AxisBox>,
    pub sampling: SamplingOptions,
    pub c_r: f64,
    pub delta: f64,
    pub region: RegionConfig,
    pub theorem: Theorem,
    #[serde(default)]
    pub build: BuildOptions,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default = "default_resolution")]
    pub boundary_resolution: usize,
    #[serde(default)]
    pub quadrature: Option<Quadrature>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn preset_lifting() -> LiftingConfig {
    LiftingConfig::Preset
}

fn default_resolution() -> usize {
    360
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return Err(Error::Invalid(format!("c_r must be positive, got {}", self.c_r)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.sampling.d.is_empty() || self.sampling.d.contains(&0) {
            return Err(Error::Invalid("every batch needs d >= 1".into()));
        }
        let rz = match &self.region {
            RegionConfig::Explicit { rz, .. } | RegionConfig::Ball { rz } | RegionConfig::Heuristic { rz } => *rz,
        };
        if !(rz > 0.0 && rz.is_finite()) {
            return Err(Error::Invalid(format!("R_z must be positive, got {rz}")));
        }
        if self.boundary_resolution < 3 {
            return Err(Error::Invalid("boundary resolution must be at least 3".into()));
        }
        let plant = self.plant()?;
        let lifting = self.lifting()?;
        if lifting.n() != plant.n() {
            return Err(Error::Dimension { context: "lifting state dimension", expected: plant.n(), got: lifting.n() });
        }
        if plant.m() > 1 && self.theorem == Theorem::One {
            return Err(Error::Invalid("the first theorem is single-input; use theorem 2".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn plant(&self) -> Result<Plant> {
        let p = Plant::from_spec(&self.plant)?;
        let sb = self.state_box.clone().unwrap_or_else(|| p.state_box.clone());
        let ib = self.input_box.clone().unwrap_or_else(|| p.input_box.clone());
        p.with_boxes(sb, ib)
    }

    pub fn lifting(&self) -> Result<Lifting> {
        match &self.lifting {
            LiftingConfig::Explicit(d) => Lifting::from_descriptor(d),
            LiftingConfig::Preset => match &self.plant {
                PlantSpec::CookedUp { rho, lambda } => cooked_up_lifting(*rho, *lambda),
                PlantSpec::CookedUpXy { rho, lambda } => cooked_up_xy_lifting(*rho, *lambda),
                PlantSpec::Pendulum { .. } => pendulum_lifting(),
                PlantSpec::Linear { a, .. } => Lifting::with_extras(a.rows, Vec::new()),
            },
        }
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions { theorem: self.theorem, build: self.build, solve: self.solver.clone() }
    }
}

pub fn collect(cfg: &RunConfig) -> Result<SampleSet> {
    plants::collect(&cfg.plant()?, &cfg.sampling)
}

pub fn fit(cfg: &RunConfig, samples: &SampleSet) -> Result<(Surrogate, FitReport)> {
    edmd::identify(&cfg.lifting()?, samples, cfg.c_r, cfg.delta)
}

/// Resolves the region, running the heuristic when requested.
pub fn region(cfg: &RunConfig, s: &Surrogate) -> Result<(UncertaintyRegion, Option<HeuristicLog>)> {
    match &cfg.region {
        RegionConfig::Explicit { qz, sz, rz } => {
            let qz = Mat::try_from(qz)?;
            Ok((UncertaintyRegion::new(qz, Vector::from_vec(sz.clone()), *rz)?, None))
        }
        RegionConfig::Ball { rz } => Ok((UncertaintyRegion::ball(s.big_n(), *rz)?, None)),
        RegionConfig::Heuristic { rz } => {
            let (u, log) = synthesis::procedure1(s, *rz, &cfg.design_options())?;
            Ok((u, Some(log)))
        }
    }
}

pub fn design(cfg: &RunConfig, s: &Surrogate, u: &UncertaintyRegion) -> Result<Design> {
    synthesis::synthesize(s, u, &cfg.design_options())
}

/// Every artifact of one collect, fit, region and design pass.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub plant: Plant,
    pub lifting: Lifting,
    pub samples: SampleSet,
    pub surrogate: Surrogate,
    pub fit_report: FitReport,
    pub region: UncertaintyRegion,
    pub heuristic: Option<HeuristicLog>,
    pub design: Design,
}

pub fn run(cfg: &RunConfig) -> Result<Pipeline> {
    cfg.validate()?;
    let samples = collect(cfg)?;
    let (surrogate, fit_report) = fit(cfg, &samples)?;
    let (region, heuristic) = region(cfg, &surrogate)?;
    let design = design(cfg, &surrogate, &region)?;
    Ok(Pipeline {
        config: cfg.clone(),
        plant: cfg.plant()?,
        lifting: cfg.lifting()?,
        samples,
        surrogate,
        fit_report,
        region,
        heuristic,
        design,
    })
}

/// Draws starts with `V(x₀) ≤ level` by picking a random direction and a
/// random level, then locating that level set along the ray.
pub fn roa_starts(d: &DesignResult, lifting: &Lifting, state_box: &AxisBox, count: usize, level: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = lifting.n();
    let cap = ray_cap(state_box);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let dir: Vec<f64> = g.iter().map(|v| v / norm).collect();
        let target = level * rng.random::<f64>();
        let (r, open) = ray_crossing(|r| lyapunov(d, lifting, &scale(&dir, r)), target, cap)?;
        if open {
            continue;
        }
        out.push(scale(&dir, r));
    }
    Ok(out)
}

fn scale(dir: &[f64], r: f64) -> Vec<f64> {
    dir.iter().map(|c| c * r).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub x0: Vec<f64>,
    pub v0: f64,
    pub termination: Termination,
    pub final_norm: f64,
    pub final_time: f64,
    pub audit: AuditReport,
}

impl RunSummary {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            x0: t.states.first().cloned().unwrap_or_default(),
            v0: t.v.first().copied().unwrap_or(f64::NAN),
            termination: t.termination,
            final_norm: t.final_norm(),
            final_time: t.times.last().copied().unwrap_or(0.0),
            audit: verify::lyapunov_audit(t),
        }
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqrSummary {
    pub weights: LqrWeights,
    pub gain: MatrixData,
    pub care_residual: f64,
    pub runs: Vec<RunSummary>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifySummary {
    pub runs: Vec<RunSummary>,
    pub converged: usize,
    pub audit_failures: usize,
    pub lqr: Vec<LqrSummary>,
}

/// Simulates the design from every start, and the LQR baselines when enabled.
pub fn verify_design(
    cfg: &RunConfig,
    plant: &Plant,
    lifting: &Lifting,
    s: &Surrogate,
    d: &DesignResult,
    starts: &[Vec<f64>],
) -> Result<(VerifySummary, Vec<Trajectory>)> {
    let mut trajectories = Vec::with_capacity(starts.len());
    let mut runs = Vec::with_capacity(starts.len());
    for x0 in starts {
        let t = verify::simulate(plant, d, lifting, x0, &cfg.verify.sim)?;
        runs.push(RunSummary::from_trajectory(&t));
        trajectories.push(t);
    }
    let converged = runs.iter().filter(|r| r.converged()).count();
    let audit_failures = runs.iter().filter(|r| r.audit.started_inside && !r.audit.pass).count();
    let mut lqr = Vec::new();
    if cfg.verify.lqr {
        for &w in &cfg.verify.lqr_grid {
            let care = verify::lqr_baseline(&s.a, &s.b0, w)?;
            let mut lruns = Vec::with_capacity(starts.len());
            for x0 in starts {
                let t = verify::simulate_lqr(plant, lifting, &care.k, x0, &cfg.verify.sim)?;
                lruns.push(RunSummary::from_trajectory(&t));
            }
            let failures = lruns.iter().filter(|r| !r.converged()).count();
            lqr.push(LqrSummary { weights: w, gain: (&care.k).into(), care_residual: care.residual, runs: lruns, failures });
        }
    }
    Ok((VerifySummary { runs, converged, audit_failures, lqr }, trajectories))
}
