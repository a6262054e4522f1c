//! Ground-truth example plants and sample generation.
//!
//! Sampling uses ChaCha20 seeded from a single `u64`. Streams are split by
//! `set_stream`: with shared states every batch draws states from stream 0,
//! otherwise batch `k` uses stream `1 + k`. Derivative noise for batch `k`
//! comes from stream `1000 + k`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, MatrixData};

type Field = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type InputField = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;

const NOISE_STREAM_OFFSET: u64 = 1000;

/// Serializable plant selector with parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum PlantSpec {
    CookedUp {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    /// Same dynamics as `CookedUp`; paired with the extended dictionary.
    CookedUpXy {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Pendulum {
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "one")]
        length: f64,
        #[serde(default = "default_friction")]
        friction: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    /// `ẋ = A x + B u`.
    Linear { a: MatrixData, b: MatrixData },
}

fn default_rho() -> f64 {
    -2.0
}
fn default_lambda() -> f64 {
    1.0
}
fn one() -> f64 {
    1.0
}
fn default_friction() -> f64 {
    0.01
}
fn default_gravity() -> f64 {
    9.81
}

impl PlantSpec {
    pub fn cooked_up() -> Self {
        PlantSpec::CookedUp {
            rho: default_rho(),
            lambda: default_lambda(),
        }
    }

    pub fn pendulum() -> Self {
        PlantSpec::Pendulum {
            mass: 1.0,
            length: 1.0,
            friction: default_friction(),
            gravity: default_gravity(),
        }
    }
}

#[derive(Clone)]
pub struct Plant {
    pub name: String,
    n: usize,
    m: usize,
    drift: Field,
    input: InputField,
    pub state_box: AxisBox,
    pub input_box: AxisBox,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("state_box", &self.state_box)
            .field("input_box", &self.input_box)
            .finish()
    }
}

impl Plant {
    /// `drift` is `f`, `input` returns the `n × m` matrix `[g_1 … g_m]`.
    pub fn new<F, G>(
        name: impl Into<String>,
        n: usize,
        m: usize,
        drift: F,
        input: G,
        state_box: AxisBox,
        input_box: AxisBox,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        G: Fn(&[f64]) -> Mat + Send + Sync + 'static,
    {
        check_dim("state box", n, state_box.dim())?;
        check_dim("input box", m, input_box.dim())?;
        if !input_box.contains_in_interior(&vec![0.0; m]) {
            return Err(Error::Invalid("input box must contain 0 in its interior".into()));
        }
        let f0 = drift(&vec![0.0; n]);
        check_dim("drift output", n, f0.len())?;
        if f0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Invalid("origin is not an equilibrium of the drift".into()));
        }
        Ok(Self {
            name: name.into(),
            n,
            m,
            drift: Arc::new(drift),
            input: Arc::new(input),
            state_box,
            input_box,
        })
    }

    pub fn from_spec(spec: &PlantSpec) -> Result<Self> {
        match spec {
            PlantSpec::CookedUp { rho, lambda } => cooked_up(*rho, *lambda),
            PlantSpec::CookedUpXy { rho, lambda } => {
                let mut p = cooked_up(*rho, *lambda)?;
                p.name = "cooked_up_xy".into();
                Ok(p)
            }
            PlantSpec::Pendulum {
                mass,
                length,
                friction,
                gravity,
            } => pendulum(*mass, *length, *friction, *gravity),
            PlantSpec::Linear { a, b } => {
                let a = Mat::try_from(a)?;
                let b = Mat::try_from(b)?;
                let n = a.nrows();
                let m = b.ncols();
                check_dim("linear plant A", n, a.ncols())?;
                check_dim("linear plant B", n, b.nrows())?;
                linear(a, b, AxisBox::cube(n, -1.0, 1.0)?, AxisBox::cube(m, -1.0, 1.0)?)
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.drift)(x)
    }

    pub fn input_matrix(&self, x: &[f64]) -> Mat {
        (self.input)(x)
    }

    /// `f(x) + Σ u_i g_i(x)`.
    pub fn evaluate_vector_field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("vector field state", self.n, x.len())?;
        check_dim("vector field input", self.m, u.len())?;
        Ok(self.field_unchecked(x, u))
    }

    pub(crate) fn field_unchecked(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = (self.drift)(x);
        if u.iter().any(|v| *v != 0.0) {
            let g = (self.input)(x);
            for (i, d) in dx.iter_mut().enumerate() {
                for (k, uk) in u.iter().enumerate() {
                    *d += g[(i, k)] * uk;
                }
            }
        }
        dx
    }

    pub fn with_boxes(mut self, state_box: AxisBox, input_box: AxisBox) -> Result<Self> {
        check_dim("state box", self.n, state_box.dim())?;
        check_dim("input box", self.m, input_box.dim())?;
        if !input_box.contains_in_interior(&vec![0.0; self.m]) {
            return Err(Error::Invalid("input box must contain 0 in its interior".into()));
        }
        self.state_box = state_box;
        self.input_box = input_box;
        Ok(self)
    }

    /// Inputs `{0, α_1 e_1, …, α_m e_m}` with `α_i = min(1, upper_i)` so each lies in `𝕌`.
    pub fn identification_inputs(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.m]];
        for i in 0..self.m {
            let mut e = vec![0.0; self.m];
            e[i] = self.input_box.upper[i].min(1.0);
            out.push(e);
        }
        out
    }
}

/// `ẋ₁ = ρx₁`, `ẋ₂ = λ(x₂ − x₁²) + u` on `[−1, 1]² × [−1, 1]`.
pub fn cooked_up(rho: f64, lambda: f64) -> Result<Plant> {
    if lambda - 2.0 * rho == 0.0 {
        return Err(Error::Invalid("λ − 2ρ must be nonzero".into()));
    }
    Plant::new(
        "cooked_up",
        2,
        1,
        move |x| vec![rho * x[0], lambda * (x[1] - x[0] * x[0])],
        |_| Mat::from_column_slice(2, 1, &[0.0, 1.0]),
        AxisBox::cube(2, -1.0, 1.0)?,
        AxisBox::cube(1, -1.0, 1.0)?,
    )
}

/// Inverted pendulum on `[−2, 10]² × [−10, 10]`.
pub fn pendulum(mass: f64, length: f64, friction: f64, gravity: f64) -> Result<Plant> {
    if !(mass > 0.0 && length > 0.0) {
        return Err(Error::Invalid("mass and length must be positive".into()));
    }
    let inertia = mass * length * length;
    Plant::new(
        "pendulum",
        2,
        1,
        move |x| {
            vec![
                x[1],
                gravity / length * x[0].sin() - friction / inertia * x[1],
            ]
        },
        move |_| Mat::from_column_slice(2, 1, &[0.0, 1.0 / inertia]),
        AxisBox::cube(2, -2.0, 10.0)?,
        AxisBox::cube(1, -10.0, 10.0)?,
    )
}

pub fn linear(a: Mat, b: Mat, state_box: AxisBox, input_box: AxisBox) -> Result<Plant> {
    let (n, m) = (a.nrows(), b.ncols());
    let a2 = a.clone();
    Plant::new(
        "linear",
        n,
        m,
        move |x| (0..n).map(|i| (0..n).map(|j| a2[(i, j)] * x[j]).sum()).collect(),
        move |_| b.clone(),
        state_box,
        input_box,
    )
}

/// States and derivatives collected under one constant input.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Samples per batch, one entry per input or a single shared count.
    pub d: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub noise_bound: f64,
    /// Reuse one state stream across batches.
    #[serde(default = "default_true")]
    pub shared_states: bool,
}

fn default_true() -> bool {
    true
}

impl SamplingOptions {
    pub fn new(d: usize, seed: u64) -> Self {
        Self {
            d: vec![d],
            seed,
            noise_bound: 0.0,
            shared_states: true,
        }
    }

    pub fn with_noise(mut self, noise_bound: f64) -> Self {
        self.noise_bound = noise_bound;
        self
    }

    fn count(&self, k: usize) -> Result<usize> {
        let d = match self.d.len() {
            1 => self.d[0],
            _ => *self.d.get(k).ok_or(Error::MissingBatch(k))?,
        };
        if d == 0 {
            return Err(Error::Invalid("sample count must be at least 1".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub plant: String,
    pub seed: u64,
    pub d: Vec<usize>,
    pub noise_bound: f64,
    pub shared_states: bool,
    pub inputs: Vec<Vec<f64>>,
    pub state_box: AxisBox,
    pub input_box: AxisBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub batches: Vec<Batch>,
    pub metadata: SampleMetadata,
}

/// Draws one batch. `state_stream` and `noise_stream` select ChaCha streams.
pub fn sample_batch(
    plant: &Plant,
    input: &[f64],
    d: usize,
    seed: u64,
    state_stream: u64,
    noise_stream: u64,
    noise_bound: f64,
) -> Result<Batch> {
    check_dim("sample input", plant.m(), input.len())?;
    if d == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
        return Err(Error::Invalid(format!("noise bound {noise_bound}")));
    }
    let mut srng = ChaCha20Rng::seed_from_u64(seed);
    srng.set_stream(state_stream);
    let mut nrng = ChaCha20Rng::seed_from_u64(seed);
    nrng.set_stream(noise_stream);
    let mut states = Vec::with_capacity(d);
    let mut derivatives = Vec::with_capacity(d);
    for _ in 0..d {
        let x = plant.state_box.sample(&mut srng);
        let mut dx = plant.field_unchecked(&x, input);
        if noise_bound > 0.0 {
            for v in dx.iter_mut() {
                *v += nrng.random_range(-noise_bound..=noise_bound);
            }
        }
        states.push(x);
        derivatives.push(dx);
    }
    Ok(Batch {
        input: input.to_vec(),
        states,
        derivatives,
    })
}

/// Exact uniform samples under a constant input.
pub fn sample_uniform(plant: &Plant, input: &[f64], d: usize, seed: u64) -> Result<Batch> {
    sample_batch(plant, input, d, seed, 0, NOISE_STREAM_OFFSET, 0.0)
}

/// Collects batches for every identification input.
pub fn collect(plant: &Plant, opts: &SamplingOptions) -> Result<SampleSet> {
    let inputs = plant.identification_inputs();
    let mut batches = Vec::with_capacity(inputs.len());
    let mut counts = Vec::with_capacity(inputs.len());
    for (k, u) in inputs.iter().enumerate() {
        let d = opts.count(k)?;
        let state_stream = if opts.shared_states { 0 } else { 1 + k as u64 };
        batches.push(sample_batch(
            plant,
            u,
            d,
            opts.seed,
            state_stream,
            NOISE_STREAM_OFFSET + k as u64,
            opts.noise_bound,
        )?);
        counts.push(d);
    }
    Ok(SampleSet {
        batches,
        metadata: SampleMetadata {
            plant: plant.name.clone(),
            seed: opts.seed,
            d: counts,
            noise_bound: opts.noise_bound,
            shared_states: opts.shared_states,
            inputs,
            state_box: plant.state_box.clone(),
            input_box: plant.input_box.clone(),
        },
    })
}

pub const METADATA_FILE: &str = "samples_meta.json";

pub fn batch_file_name(k: usize) -> String {
    format!("samples_u{k}.csv")
}

impl SampleSet {
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (k, batch) in self.batches.iter().enumerate() {
            let path = dir.join(batch_file_name(k));
            let mut w = csv::Writer::from_path(&path)?;
            let n = batch.states.first().map_or(0, Vec::len);
            let header: Vec<String> = (1..=n)
                .map(|i| format!("x_{i}"))
                .chain((1..=n).map(|i| format!("xdot_{i}")))
                .collect();
            w.write_record(&header)?;
            for (x, dx) in batch.states.iter().zip(&batch.derivatives) {
                w.write_record(x.iter().chain(dx).map(|v| v.to_string()))?;
            }
            w.flush()?;
            written.push(path);
        }
        let meta = dir.join(METADATA_FILE);
        fs::write(&meta, serde_json::to_string_pretty(&self.metadata)?)?;
        written.push(meta);
        Ok(written)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let metadata: SampleMetadata =
            serde_json::from_str(&fs::read_to_string(dir.join(METADATA_FILE))?)?;
        let mut batches = Vec::with_capacity(metadata.inputs.len());
        for (k, input) in metadata.inputs.iter().enumerate() {
            let path = dir.join(batch_file_name(k));
            if !path.exists() {
                return Err(Error::MissingBatch(k));
            }
            let mut r = csv::Reader::from_path(&path)?;
            let width = r.headers()?.len();
            if width % 2 != 0 || width == 0 {
                return Err(Error::Invalid(format!("{} has {width} columns", path.display())));
            }
            let n = width / 2;
            let mut states = Vec::new();
            let mut derivatives = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let vals = rec
                    .iter()
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                states.push(vals[..n].to_vec());
                derivatives.push(vals[n..].to_vec());
            }
            batches.push(Batch {
                input: input.clone(),
                states,
                derivatives,
            });
        }
        Ok(Self { batches, metadata })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_fields() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        assert_eq!(p.drift(&[1.0, 0.0]), vec![-2.0, -1.0]);
        assert_eq!(p.evaluate_vector_field(&[0.0, 0.0], &[0.5]).unwrap(), vec![0.0, 0.5]);

        let p = Plant::from_spec(&PlantSpec::pendulum()).unwrap();
        let v = 3.0;
        let f = p.drift(&[0.0, v]);
        assert_eq!(f[0], v);
        assert!((f[1] + 0.01 * v).abs() < 1e-15);
        assert_eq!(p.evaluate_vector_field(&[0.0, 0.0], &[1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_plants() {
        let b = AxisBox::cube(1, -1.0, 1.0).unwrap();
        let off = Plant::new("off", 1, 1, |x| vec![x[0] + 1.0], |_| Mat::zeros(1, 1), b.clone(), b.clone());
        assert!(off.is_err());
        let u = AxisBox::cube(1, 0.5, 1.0).unwrap();
        assert!(Plant::new("u", 1, 1, |x| vec![-x[0]], |_| Mat::zeros(1, 1), b, u).is_err());
    }

    #[test]
    fn sampling_is_exact_and_deterministic() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        let b1 = sample_uniform(&p, &[0.0], 50, 11).unwrap();
        let b2 = sample_uniform(&p, &[0.0], 50, 11).unwrap();
        assert_eq!(b1, b2);
        for (x, dx) in b1.states.iter().zip(&b1.derivatives) {
            assert!(p.state_box.contains(x));
            assert_eq!(dx[0], -2.0 * x[0]);
            assert_eq!(*dx, p.evaluate_vector_field(x, &[0.0]).unwrap());
        }
    }

    #[test]
    fn noise_stays_within_bound() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        let set = collect(&p, &SamplingOptions::new(200, 4).with_noise(0.05)).unwrap();
        for batch in &set.batches {
            for (x, dx) in batch.states.iter().zip(&batch.derivatives) {
                let truth = p.evaluate_vector_field(x, &batch.input).unwrap();
                let err = dx.iter().zip(&truth).fold(0.0f64, |a, (v, t)| a.max((v - t).abs()));
                assert!(err <= 0.05);
            }
        }
    }

    #[test]
    fn shared_and_independent_state_streams() {
        let p = cooked_up(-2.0, 1.0).unwrap();
        let shared = collect(&p, &SamplingOptions::new(10, 1)).unwrap();
        assert_eq!(shared.batches[0].states, shared.batches[1].states);
        let mut opts = SamplingOptions::new(10, 1);
        opts.shared_states = false;
        let indep = collect(&p, &opts).unwrap();
        assert_ne!(indep.batches[0].states, indep.batches[1].states);
    }

    #[test]
    fn scaled_identification_inputs() {
        let p = cooked_up(-2.0, 1.0)
            .unwrap()
            .with_boxes(AxisBox::cube(2, -1.0, 1.0).unwrap(), AxisBox::cube(1, -0.5, 0.5).unwrap())
            .unwrap();
        assert_eq!(p.identification_inputs(), vec![vec![0.0], vec![0.5]]);
    }

    #[test]
    fn csv_round_trip() {
        let p = Plant::from_spec(&PlantSpec::pendulum()).unwrap();
        let set = collect(&p, &SamplingOptions::new(7, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = set.write_dir(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let text = fs::read_to_string(dir.path().join("samples_u0.csv")).unwrap();
        assert!(text.starts_with("x_1,x_2,xdot_1,xdot_2\n"));
        assert_eq!(SampleSet::read_dir(dir.path()).unwrap(), set);
    }
}
