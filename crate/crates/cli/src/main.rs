//! `koopcert` command-line driver.
//!
//! Each subcommand reads one JSON run config (or a named preset), works in
//! `<out>/<config name>/` and writes a `manifest_<command>.json` with the
//! SHA-256 of every input and an echo of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use koopcert::bounds::{compute_d0, Quadrature};
use koopcert::config::{self, RegionConfig, RunConfig};
use koopcert::controller::{containment_check, ray_cap, roa_boundary_2d, DesignFile};
use koopcert::edmd::SurrogateFile;
use koopcert::figures::{self, FigureId};
use koopcert::sdp::Backend;
use koopcert::synthesis::{dualization_check, decrease_certificate};
use koopcert::{scenarios, DesignResult, Error, SampleSet, Surrogate, Theorem};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;
const EXIT_BAD_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "koopcert", version, about = "Certified controller design from Koopman-generator surrogates")]
struct Cli {
    /// Output root; artifacts go to `<out>/<config name>/`.
    #[arg(long, global = true, env = "KOOPCERT_OUT", default_value = "koopcert-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset config as JSON.
    Config {
        /// Preset name; omit to list the presets.
        preset: Option<String>,
    },
    /// Sample the plant and write one CSV per identification input.
    Collect(RunArgs),
    /// Fit the bilinear surrogate from the collected samples.
    Fit(RunArgs),
    /// Sufficient sample count for the configured error bound.
    D0(RunArgs),
    /// Resolve the region, solve the LMI and export the design.
    Design(RunArgs),
    /// Simulate the plant under the exported design.
    Verify(RunArgs),
    /// Regenerate the data behind a figure (`fig1` to `fig5`, or `all`).
    Reproduce { figure: String },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per batch.
    #[arg(long)]
    d: Option<usize>,
    /// Derivative noise bound.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    c_r: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Ball region `Q_z = −I` with this `R_z`.
    #[arg(long, conflicts_with = "heuristic")]
    rz: Option<f64>,
    /// Heuristic region with this `R_z`.
    #[arg(long)]
    heuristic: Option<f64>,
    #[arg(long, value_parser = ["1", "2"])]
    theorem: Option<String>,
    #[arg(long, value_parser = ["ipm", "clarabel"])]
    backend: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Monte Carlo starts for `verify`.
    #[arg(long)]
    starts: Option<usize>,
    /// Run the LQR baseline in `verify`.
    #[arg(long)]
    lqr: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::from_json(&fs::read_to_string(p)?)?,
            (None, Some(name)) => scenarios::by_name(name).ok_or_else(|| Error::Invalid(format!("unknown preset {name:?}")))?,
            (None, None) => return Err(Error::Invalid("pass --config FILE or --preset NAME".into())),
        };
        if let Some(v) = self.seed {
            cfg.sampling.seed = v;
        }
        if let Some(v) = self.d {
            cfg.sampling.d = vec![v];
        }
        if let Some(v) = self.noise {
            cfg.sampling.noise_bound = v;
        }
        if let Some(v) = self.c_r {
            cfg.c_r = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(rz) = self.rz {
            cfg.region = RegionConfig::Ball { rz };
        }
        if let Some(rz) = self.heuristic {
            cfg.region = RegionConfig::Heuristic { rz };
        }
        if let Some(t) = &self.theorem {
            cfg.theorem = if t == "1" { Theorem::One } else { Theorem::Two };
        }
        if let Some(b) = &self.backend {
            cfg.solver.backend = if b == "ipm" { Backend::Ipm } else { Backend::Clarabel };
        }
        if let Some(e) = self.epsilon {
            cfg.build.epsilon = Some(e);
        }
        if let Some(n) = self.starts {
            cfg.verify.monte_carlo = n;
        }
        if self.lqr {
            cfg.verify.lqr = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

struct Workspace {
    dir: PathBuf,
    cfg: RunConfig,
}

impl Workspace {
    fn new(out: &Path, cfg: RunConfig) -> Result<Self, Error> {
        let dir = cfg.output_dir.clone().unwrap_or_else(|| out.join(&cfg.name));
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, cfg })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(p)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, Error> {
        let p = self.path(name);
        let text = fs::read_to_string(&p)
            .map_err(|e| Error::Invalid(format!("cannot read {}: {e}; run the earlier stage first", p.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn manifest(&self, command: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<(), Error> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputHash { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>, Error>>()?;
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.cfg,
            inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        self.write_json(&format!("manifest_{command}.json"), &m)?;
        Ok(())
    }

    fn sample_files(&self) -> Vec<PathBuf> {
        let mut files = vec![self.path(koopcert::plants::METADATA_FILE)];
        let mut k = 0;
        while self.path(&koopcert::plants::batch_file_name(k)).exists() {
            files.push(self.path(&koopcert::plants::batch_file_name(k)));
            k += 1;
        }
        files
    }

    fn surrogate(&self) -> Result<Surrogate, Error> {
        Surrogate::from_file(&self.read_json::<SurrogateFile>(SURROGATE)?)
    }

    fn design(&self) -> Result<DesignResult, Error> {
        DesignResult::from_file(&self.read_json::<DesignFile>(DESIGN)?)
    }
}

const SURROGATE: &str = "surrogate.json";
const REGION: &str = "region.json";
const DESIGN: &str = "design.json";

fn cmd_collect(ws: &Workspace) -> Result<(), Error> {
    let samples = config::collect(&ws.cfg)?;
    let files = samples.write_dir(&ws.dir)?;
    for (b, f) in samples.batches.iter().zip(&files) {
        println!("{}: {} rows", f.display(), b.len());
    }
    ws.manifest("collect", &[], &files)
}

fn cmd_fit(ws: &Workspace) -> Result<(), Error> {
    let inputs = ws.sample_files();
    let samples = SampleSet::read_dir(&ws.dir)?;
    let (s, report) = config::fit(&ws.cfg, &samples)?;
    let out = vec![ws.write_json(SURROGATE, &s.to_file())?, ws.write_json("fit_report.json", &report)?];
    println!("A =\n{:.6}B0 =\n{:.6}", s.a, s.b0);
    for (i, b) in s.b.iter().enumerate() {
        println!("B{} =\n{:.6}", i + 1, b);
    }
    ws.manifest("fit", &inputs, &out)
}

fn cmd_d0(ws: &Workspace) -> Result<(), Error> {
    let plant = ws.cfg.plant()?;
    let lifting = ws.cfg.lifting()?;
    let q = ws.cfg.quadrature.unwrap_or_else(|| Quadrature::default_for(plant.n()));
    let r = compute_d0(&plant, &lifting, ws.cfg.c_r, ws.cfg.delta, q)?;
    let out = ws.write_json("d0.json", &r)?;
    println!("d0 = {:.3e} (log10 {:.3})", r.d0, r.log10_d0);
    ws.manifest("d0", &[], &[out])
}

#[derive(Serialize)]
struct DesignChecks {
    dualization: koopcert::synthesis::DualizationReport,
    decrease: koopcert::synthesis::DecreaseReport,
    containment: Option<koopcert::controller::ContainmentReport>,
    roa_area: Option<f64>,
    roa_open_rays: bool,
}

fn cmd_design(ws: &Workspace) -> Result<(), Error> {
    let inputs = vec![ws.path(SURROGATE)];
    // The error bound comes from the current config, not the fit stage.
    let s = ws.surrogate()?.with_bounds(ws.cfg.c_r, ws.cfg.delta)?;
    let plant = ws.cfg.plant()?;
    let lifting = ws.cfg.lifting()?;
    let (u, log) = config::region(&ws.cfg, &s)?;
    let mut out = vec![ws.write_json(REGION, &u.to_file())?];
    if let Some(log) = &log {
        out.push(ws.write_json("heuristic.json", log)?);
    }
    let d = config::design(&ws.cfg, &s, &u)?;
    out.push(ws.write_json(DESIGN, &d.result.to_file())?);
    out.push(ws.write_json("solve_report.json", &d.report)?);
    out.push(ws.write_json("problem_manifest.json", &d.manifest)?);

    let dual = dualization_check(&s, &u, &d.result)?;
    let dec = decrease_certificate(&s, &u, &d.result, ws.cfg.verify.decrease_samples, ws.cfg.verify.seed)?;
    let cap = ray_cap(&plant.state_box);
    let mut checks = DesignChecks { dualization: dual, decrease: dec, containment: None, roa_area: None, roa_open_rays: false };
    if lifting.n() == 2 {
        let b = roa_boundary_2d(&d.result, &lifting, ws.cfg.boundary_resolution, cap)?;
        let p = ws.path("roa.dat");
        b.write_dat(&p)?;
        out.push(p);
        checks.roa_area = Some(b.area());
        checks.roa_open_rays = b.any_open();
    }
    checks.containment = Some(containment_check(&d.result, &u, &lifting, ws.cfg.boundary_resolution, cap)?);
    out.push(ws.write_json("design_checks.json", &checks)?);

    println!("K  = {:.4}", d.result.k);
    if let Some(kw) = &d.result.kw {
        println!("Kw = {:.4}", kw);
    }
    println!(
        "margin {:.3e}, dualization {:.3e}, decrease {}",
        d.result.feasibility_margin(),
        checks.dualization.max_eigenvalue,
        if checks.decrease.pass { "pass" } else { "FAIL" }
    );
    ws.manifest("design", &inputs, &out)?;
    let contained = checks.containment.as_ref().is_none_or(|c| c.pass);
    if !(checks.dualization.pass && checks.decrease.pass && contained) {
        return Err(Error::Verification("post-solve certificate failed; see design_checks.json".into()));
    }
    Ok(())
}

fn cmd_verify(ws: &Workspace) -> Result<(), Error> {
    let inputs = vec![ws.path(SURROGATE), ws.path(DESIGN)];
    let s = ws.surrogate()?;
    let d = ws.design()?;
    let plant = ws.cfg.plant()?;
    let lifting = ws.cfg.lifting()?;
    let v = &ws.cfg.verify;
    let mut starts = config::roa_starts(&d, &lifting, &plant.state_box, v.monte_carlo, v.level, v.seed)?;
    starts.extend(v.starts.iter().cloned());
    let (summary, trajectories) = config::verify_design(&ws.cfg, &plant, &lifting, &s, &d, &starts)?;
    let traj_dir = ws.path("trajectories");
    fs::create_dir_all(&traj_dir)?;
    let mut out = Vec::new();
    for (k, t) in trajectories.iter().enumerate() {
        let p = traj_dir.join(format!("traj_{k}.dat"));
        t.write_dat(&p)?;
        out.push(p);
    }
    out.push(ws.write_json("verify_summary.json", &summary)?);
    println!("{}/{} converged, {} audit failures", summary.converged, summary.runs.len(), summary.audit_failures);
    for l in &summary.lqr {
        println!("LQR q={} r={}: {}/{} not converged", l.weights.q, l.weights.r, l.failures, l.runs.len());
    }
    ws.manifest("verify", &inputs, &out)
}

fn cmd_reproduce(out: &Path, figure: &str) -> Result<(), Error> {
    let ids: Vec<FigureId> = if figure == "all" { FigureId::ALL.to_vec() } else { vec![figure.parse()?] };
    let dir = out.join("figures");
    for id in ids {
        let data = figures::reproduce(id)?;
        let files = data.write(&dir)?;
        println!("{id}: {} files in {}", files.len(), dir.join(id.to_string()).display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Verification(_) => EXIT_VERIFICATION,
        Error::Invalid(_)
        | Error::Dimension { .. }
        | Error::Dictionary(_)
        | Error::MissingBatch(_)
        | Error::NonFinite(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_BAD_INPUT,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Config { preset: None } => {
            for c in scenarios::all() {
                println!("{}", c.name);
            }
            Ok(())
        }
        Command::Config { preset: Some(name) } => {
            let c = scenarios::by_name(&name).ok_or_else(|| Error::Invalid(format!("unknown preset {name:?}")))?;
            println!("{}", c.to_json());
            Ok(())
        }
        Command::Collect(a) => cmd_collect(&Workspace::new(&cli.out, a.load()?)?),
        Command::Fit(a) => cmd_fit(&Workspace::new(&cli.out, a.load()?)?),
        Command::D0(a) => cmd_d0(&Workspace::new(&cli.out, a.load()?)?),
        Command::Design(a) => cmd_design(&Workspace::new(&cli.out, a.load()?)?),
        Command::Verify(a) => cmd_verify(&Workspace::new(&cli.out, a.load()?)?),
        Command::Reproduce { figure } => cmd_reproduce(&cli.out, &figure),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
