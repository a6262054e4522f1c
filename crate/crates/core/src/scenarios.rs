//! Ready-made configurations for the worked examples.

use crate::config::{LiftingConfig, RegionConfig, RunConfig, VerifyConfig};
use crate::linalg::MatrixData;
use crate::lmi::{BuildOptions, Theorem};
use crate::plants::{PlantSpec, SamplingOptions};
use crate::sdp::SolveOptions;

fn base(name: &str, plant: PlantSpec, sampling: SamplingOptions, c_r: f64, region: RegionConfig, theorem: Theorem) -> RunConfig {
    RunConfig {
        name: name.into(),
        plant,
        lifting: LiftingConfig::Preset,
        state_box: None,
        input_box: None,
        sampling,
        c_r,
        delta: 0.05,
        region,
        theorem,
        build: BuildOptions::default(),
        solver: SolveOptions::default(),
        verify: VerifyConfig::default(),
        boundary_resolution: 360,
        quadrature: None,
        output_dir: None,
    }
}

/// Polynomial system with exact dictionary, ball region `R_z = 500`.
pub fn cooked_up() -> RunConfig {
    base(
        "cooked_up",
        PlantSpec::cooked_up(),
        SamplingOptions::new(5000, 1),
        0.1,
        RegionConfig::Ball { rz: 500.0 },
        Theorem::One,
    )
}

/// Extended dictionary under noisy derivatives, ball region.
pub fn cooked_up_xy() -> RunConfig {
    base(
        "cooked_up_xy",
        PlantSpec::CookedUpXy { rho: -2.0, lambda: 1.0 },
        SamplingOptions::new(5000, 2).with_noise(0.05),
        0.01,
        RegionConfig::Ball { rz: 1000.0 },
        Theorem::Two,
    )
}

/// As [`cooked_up_xy`] with a hand-tuned diagonal region.
pub fn cooked_up_xy_tuned() -> RunConfig {
    let mut c = cooked_up_xy();
    c.name = "cooked_up_xy_tuned".into();
    c.region = RegionConfig::Explicit {
        qz: diag(&[-2.5, -2.5, -1.25, -0.005]),
        sz: vec![0.0; 4],
        rz: 1000.0,
    };
    c
}

/// Pendulum with ball region `R_z = 30`.
pub fn pendulum(theorem: Theorem) -> RunConfig {
    let name = match theorem {
        Theorem::One => "pendulum_t1",
        Theorem::Two => "pendulum_t2",
    };
    let mut c = base(
        name,
        PlantSpec::pendulum(),
        SamplingOptions::new(15000, 3),
        0.02,
        RegionConfig::Ball { rz: 30.0 },
        theorem,
    );
    c.verify.lqr = true;
    c
}

/// Pendulum with the heuristic region, `R_z = 5`.
pub fn pendulum_heuristic(theorem: Theorem) -> RunConfig {
    let mut c = pendulum(theorem);
    c.name = match theorem {
        Theorem::One => "pendulum_heuristic_t1",
        Theorem::Two => "pendulum_heuristic_t2",
    }
    .into();
    c.region = RegionConfig::Heuristic { rz: 5.0 };
    c
}

pub fn all() -> Vec<RunConfig> {
    vec![
        cooked_up(),
        cooked_up_xy(),
        cooked_up_xy_tuned(),
        pendulum(Theorem::One),
        pendulum(Theorem::Two),
        pendulum_heuristic(Theorem::One),
        pendulum_heuristic(Theorem::Two),
    ]
}

pub fn by_name(name: &str) -> Option<RunConfig> {
    all().into_iter().find(|c| c.name == name)
}

fn diag(v: &[f64]) -> MatrixData {
    let n = v.len();
    let mut data = vec![0.0; n * n];
    for (i, x) in v.iter().enumerate() {
        data[i * n + i] = *x;
    }
    MatrixData { rows: n, cols: n, data }
}

/// Angles of the four comparison starts.
pub const COMPARISON_ANGLES: [f64; 4] = [
    std::f64::consts::FRAC_PI_4,
    3.0 * std::f64::consts::FRAC_PI_4,
    5.0 * std::f64::consts::FRAC_PI_4,
    7.0 * std::f64::consts::FRAC_PI_4,
];

/// Fraction of the smallest boundary radius used for the comparison starts.
pub const COMPARISON_FRACTION: f64 = 0.9;

/// Four starts on the diagonals at a fixed fraction of the smallest RoA
/// radius among the given boundaries, so they lie inside every region.
pub fn comparison_starts(radii_along: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    COMPARISON_ANGLES
        .iter()
        .map(|&th| {
            let r = COMPARISON_FRACTION * radii_along(th);
            vec![r * th.cos(), r * th.sin()]
        })
        .collect()
}
