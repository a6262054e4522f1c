//! Plot data behind the figures: region geometry, RoA boundaries and trajectories.
//!
//! Every curve is a whitespace-separated `.dat` file, one point per row, so
//! gnuplot or pgfplots can read it directly.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{self, Pipeline, RunConfig};
use crate::controller::{lyapunov, ray_cap, ray_crossing, roa_boundary_2d, Boundary, DesignResult};
use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::lifting::Lifting;
use crate::lmi::Theorem;
use crate::scenarios;
use crate::uncertainty::UncertaintyRegion;
use crate::verify::{self, LqrWeights, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureId {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl FigureId {
    pub const ALL: [FigureId; 5] = [FigureId::Fig1, FigureId::Fig2, FigureId::Fig3, FigureId::Fig4, FigureId::Fig5];
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = FigureId::ALL.iter().position(|x| x == self).unwrap_or(0) + 1;
        write!(f, "fig{i}")
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .iter()
            .copied()
            .find(|id| id.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown figure {s:?}; expected fig1 to fig5")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// A level set `V = 1` of a design.
    Roa,
    /// Boundary of `{x : Φ̂(x) ∈ 𝚫_Φ}`.
    Region,
    /// Closed-form geometry.
    Geometry,
    /// A state box outline.
    Box,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub kind: CurveKind,
    /// Name of the design a `Roa` curve belongs to.
    pub design: Option<String>,
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Curve {
    fn geometry(name: &str, points: Vec<[f64; 2]>, closed: bool) -> Self {
        Self { name: name.into(), kind: CurveKind::Geometry, design: None, points, closed }
    }

    pub fn write_dat(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let tail = if self.closed { self.points.first() } else { None };
        for p in self.points.iter().chain(tail) {
            writeln!(f, "{:.12e} {:.12e}", p[0], p[1])?;
        }
        f.flush()?;
        Ok(())
    }

    /// Shoelace area of the closed polygon.
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let s: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.points[i];
                let [x1, y1] = self.points[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        0.5 * s.abs()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub name: String,
    pub controller: String,
    pub trajectory: Trajectory,
}

/// A design used by a figure, kept for checks on the emitted data.
#[derive(Debug, Clone)]
pub struct FigureDesign {
    pub name: String,
    pub config: RunConfig,
    pub lifting: Lifting,
    pub result: DesignResult,
    pub region: UncertaintyRegion,
}

#[derive(Debug, Clone)]
pub struct FigureData {
    pub id: FigureId,
    pub curves: Vec<Curve>,
    pub trajectories: Vec<LabeledTrajectory>,
    pub designs: Vec<FigureDesign>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureManifest {
    pub figure: FigureId,
    pub files: Vec<String>,
    pub designs: Vec<String>,
    pub areas: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl FigureData {
    pub fn roa(&self, design: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.kind == CurveKind::Roa && c.design.as_deref() == Some(design))
    }

    /// Writes every curve and trajectory into `dir/<figure>/` plus a manifest.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let out = dir.join(self.id.to_string());
        std::fs::create_dir_all(&out)?;
        let mut files = Vec::new();
        for c in &self.curves {
            let p = out.join(format!("{}.dat", c.name));
            c.write_dat(&p)?;
            files.push(p);
        }
        for t in &self.trajectories {
            let p = out.join(format!("{}.dat", t.name));
            t.trajectory.write_dat(&p)?;
            files.push(p);
        }
        let manifest = FigureManifest {
            figure: self.id,
            files: files.iter().filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect(),
            designs: self.designs.iter().map(|d| d.name.clone()).collect(),
            areas: self
                .curves
                .iter()
                .filter(|c| c.closed && c.kind != CurveKind::Box)
                .map(|c| (c.name.clone(), c.area()))
                .collect(),
            notes: self.notes.clone(),
        };
        let mp = out.join("manifest.json");
        std::fs::write(&mp, serde_json::to_string_pretty(&manifest)?)?;
        files.push(mp);
        Ok(files)
    }
}

/// Rays used for boundary sweeps.
pub const RESOLUTION: usize = 360;

pub fn parabola() -> Curve {
    let pts = (0..=200)
        .map(|i| {
            let x = -5.0 + 10.0 * i as f64 / 200.0;
            [x, x * x]
        })
        .collect();
    Curve::geometry("parabola", pts, false)
}

/// Axis-aligned ellipse `x²/a² + y²/b² = 1`.
pub fn ellipse(name: &str, a: f64, b: f64) -> Curve {
    let pts = (0..RESOLUTION)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / RESOLUTION as f64;
            [a * th.cos(), b * th.sin()]
        })
        .collect();
    Curve::geometry(name, pts, true)
}

/// Region geometry for the dictionary `(x, x²)`: the curve traced by the
/// lifted state, the ball region and the reshaped ellipse.
pub fn fig1() -> FigureData {
    FigureData {
        id: FigureId::Fig1,
        curves: vec![
            parabola(),
            ellipse("circle", 650f64.sqrt(), 650f64.sqrt()),
            ellipse("ellipse", 50f64.sqrt(), 1250f64.sqrt()),
        ],
        trajectories: Vec::new(),
        designs: Vec::new(),
        notes: vec!["parabola (x, x^2) on [-5, 5]; circle radius sqrt(650); ellipse semi-axes sqrt(50), sqrt(1250)".into()],
    }
}

fn box_curve(name: &str, b: &AxisBox) -> Curve {
    let (l, u) = (&b.lower, &b.upper);
    Curve {
        name: name.into(),
        kind: CurveKind::Box,
        design: None,
        points: vec![[l[0], l[1]], [u[0], l[1]], [u[0], u[1]], [l[0], u[1]]],
        closed: true,
    }
}

fn roa_curve(name: &str, p: &Pipeline) -> Result<(Curve, Boundary)> {
    let b = roa_boundary_2d(&p.design.result, &p.lifting, RESOLUTION, ray_cap(&p.plant.state_box))?;
    let c = Curve { name: format!("roa_{name}"), kind: CurveKind::Roa, design: Some(name.into()), points: b.points.clone(), closed: true };
    Ok((c, b))
}

/// First crossing of the region boundary along each ray.
pub fn region_boundary(region: &UncertaintyRegion, lifting: &Lifting, cap: f64) -> Result<Curve> {
    let mut points = Vec::with_capacity(RESOLUTION);
    for i in 0..RESOLUTION {
        let th = 2.0 * std::f64::consts::PI * i as f64 / RESOLUTION as f64;
        let (c, s) = (th.cos(), th.sin());
        let (r, _) = ray_crossing(
            |r| Ok(-region.membership(&lifting.lift_reduced(&[r * c, r * s])?)?.1),
            0.0,
            cap,
        )?;
        points.push([r * c, r * s]);
    }
    Ok(Curve { name: "region".into(), kind: CurveKind::Region, design: None, points, closed: true })
}

fn figure_design(name: &str, p: &Pipeline) -> FigureDesign {
    FigureDesign {
        name: name.into(),
        config: p.config.clone(),
        lifting: p.lifting.clone(),
        result: p.design.result.clone(),
        region: p.region.clone(),
    }
}

fn roa_figure(id: FigureId, runs: &[(&str, RunConfig)], with_region: bool) -> Result<(FigureData, Vec<Pipeline>)> {
    let mut fig = FigureData { id, curves: Vec::new(), trajectories: Vec::new(), designs: Vec::new(), notes: Vec::new() };
    let mut pipes = Vec::new();
    for (name, cfg) in runs {
        let p = config::run(cfg)?;
        let (c, b) = roa_curve(name, &p)?;
        if b.any_open() {
            fig.notes.push(format!("{name}: some rays did not cross V = 1 before the search cap"));
        }
        fig.curves.push(c);
        fig.designs.push(figure_design(name, &p));
        pipes.push(p);
    }
    if with_region {
        let p = &pipes[0];
        let mut c = region_boundary(&p.region, &p.lifting, ray_cap(&p.plant.state_box))?;
        if pipes.len() > 1 {
            c.name = format!("region_{}", runs[0].0);
        }
        fig.curves.push(c);
    }
    fig.curves.push(box_curve("state_box", &pipes[0].plant.state_box));
    Ok((fig, pipes))
}

/// RoA of the single-input polynomial example.
pub fn fig2() -> Result<FigureData> {
    Ok(roa_figure(FigureId::Fig2, &[("mu", scenarios::cooked_up())], false)?.0)
}

/// RoAs of the extended-dictionary example under the ball and tuned regions.
pub fn fig3() -> Result<FigureData> {
    Ok(roa_figure(
        FigureId::Fig3,
        &[("mu1", scenarios::cooked_up_xy()), ("mu2", scenarios::cooked_up_xy_tuned())],
        false,
    )?
    .0)
}

/// Pendulum under the ball region: region, first and second theorem RoAs.
pub fn fig4() -> Result<FigureData> {
    Ok(roa_figure(
        FigureId::Fig4,
        &[("mu1", scenarios::pendulum(Theorem::One)), ("mu2", scenarios::pendulum(Theorem::Two))],
        true,
    )?
    .0)
}

/// Starts on the diagonals inside every given RoA.
pub fn fig5_starts(designs: &[&Pipeline]) -> Result<Vec<Vec<f64>>> {
    let mut radii = Vec::new();
    for &th in &scenarios::COMPARISON_ANGLES {
        let (c, s) = (th.cos(), th.sin());
        let mut r_min = f64::INFINITY;
        for p in designs {
            let (r, _) = ray_crossing(
                |r| lyapunov(&p.design.result, &p.lifting, &[r * c, r * s]),
                1.0,
                ray_cap(&p.plant.state_box),
            )?;
            r_min = r_min.min(r);
        }
        radii.push((th, r_min));
    }
    Ok(scenarios::comparison_starts(|th| {
        radii.iter().find(|(a, _)| *a == th).map_or(0.0, |(_, r)| *r)
    }))
}

/// Pendulum under the heuristic region, with trajectories of both designs
/// and the lifted LQR from the comparison starts.
pub fn fig5() -> Result<FigureData> {
    let (mut fig, pipes) = roa_figure(
        FigureId::Fig5,
        &[("mu3", scenarios::pendulum_heuristic(Theorem::One)), ("mu4", scenarios::pendulum_heuristic(Theorem::Two))],
        true,
    )?;
    let starts = fig5_starts(&pipes.iter().collect::<Vec<_>>())?;
    let sim = pipes[0].config.verify.sim;
    for (k, x0) in starts.iter().enumerate() {
        for (name, p) in ["mu3", "mu4"].iter().zip(&pipes) {
            let t = verify::simulate(&p.plant, &p.design.result, &p.lifting, x0, &sim)?;
            fig.trajectories.push(LabeledTrajectory { name: format!("traj_{name}_{k}"), controller: (*name).into(), trajectory: t });
        }
        let p = &pipes[0];
        let care = verify::lqr_baseline(&p.surrogate.a, &p.surrogate.b0, LqrWeights::default())?;
        let t = verify::simulate_lqr(&p.plant, &p.lifting, &care.k, x0, &sim)?;
        fig.trajectories.push(LabeledTrajectory { name: format!("traj_lqr_{k}"), controller: "lqr".into(), trajectory: t });
    }
    fig.notes.push(format!(
        "starts on the diagonals at {} of the smallest RoA radius; LQR weights Q = I, R = I",
        scenarios::COMPARISON_FRACTION
    ));
    Ok(fig)
}

pub fn reproduce(id: FigureId) -> Result<FigureData> {
    match id {
        FigureId::Fig1 => Ok(fig1()),
        FigureId::Fig2 => fig2(),
        FigureId::Fig3 => fig3(),
        FigureId::Fig4 => fig4(),
        FigureId::Fig5 => fig5(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_ids_round_trip() {
        for id in FigureId::ALL {
            assert_eq!(id.to_string().parse::<FigureId>().unwrap(), id);
        }
        assert!("fig6".parse::<FigureId>().is_err());
    }

    #[test]
    fn geometry_curves_satisfy_their_equations() {
        let f = fig1();
        for c in &f.curves {
            for p in &c.points {
                let r = match c.name.as_str() {
                    "parabola" => p[1] - p[0] * p[0],
                    "circle" => (p[0] * p[0] + p[1] * p[1]) / 650.0 - 1.0,
                    _ => p[0] * p[0] / 50.0 + p[1] * p[1] / 1250.0 - 1.0,
                };
                assert!(r.abs() <= 1e-12, "{} {r}", c.name);
            }
        }
    }

    #[test]
    fn shoelace_area_of_unit_square() {
        let c = box_curve("b", &AxisBox::cube(2, 0.0, 1.0).unwrap());
        assert!((c.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn files_are_written_with_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let files = fig1().write(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let text = std::fs::read_to_string(dir.path().join("fig1/parabola.dat")).unwrap();
        assert_eq!(text.lines().count(), 201);
        let circle = std::fs::read_to_string(dir.path().join("fig1/circle.dat")).unwrap();
        assert_eq!(circle.lines().count(), RESOLUTION + 1);
    }
}
