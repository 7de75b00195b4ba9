//! Reproducible experiment driver.
//!
//! A run takes one JSON config, produces an artifact directory with a
//! byte-for-byte copy of the config, command-specific CSV/JSON outputs, and
//! a manifest tying them together. Identical config and seed give identical
//! CSV bytes on the same platform, for any `COLANDER_THREADS` setting, since
//! all Monte Carlo streams are counter-derived.
//!
//! Stream labels in use: `measure`, `decay/<index>`, `layers`, `capacity`,
//! `construct`, `heart`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capacity::{equilibrium_solve, mc_capacity_d3};
use crate::construction::{build, AmplitudeMode, BuildOptions};
use crate::error::{Error, Result};
use crate::harmonic::{decay_fit, layer_bounds, wos_escape, EstimateCI, WoSConfig};
use crate::mathcore::{envelope_integral, Profile};
use crate::rng::StreamKey;
use crate::setgen::{make_cube_colander, Ball, BallUnion, Colander};

/// Experiment kinds, matching the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ValidateProfile,
    Capacity,
    Measure,
    Layers,
    DecayStudy,
    Construct,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ValidateProfile => "validate-profile",
            Command::Capacity => "capacity",
            Command::Measure => "measure",
            Command::Layers => "layers",
            Command::DecayStudy => "decay-study",
            Command::Construct => "construct",
        }
    }
}

/// Colander geometry described declaratively.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    /// One obstacle ball per lattice cube inside `B(0, rho)`.
    Cube { rho: f64, fill: f64 },
    /// Single centered obstacle ball.
    Annulus { rho: f64, r_inner: f64 },
    /// Explicit balls, each `[cx_1, .., cx_d, r]`.
    Balls { rho: f64, balls: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WosSection {
    /// Absorption width relative to the outer radius.
    pub delta_rel: f64,
    pub n_walks: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_max_steps() -> u64 {
    100_000
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersSection {
    pub a_scale: f64,
    pub n_layers: usize,
    pub m_points: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySection {
    pub nodes_per_ball: usize,
    #[serde(default)]
    pub reg: f64,
    /// Cross-check with the hitting-probability estimator (d = 3 only).
    #[serde(default)]
    pub mc_walks: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSection {
    pub k_max: usize,
    #[serde(default)]
    pub c_override: Option<f64>,
    #[serde(default = "default_a_mode")]
    pub a_mode: AmplitudeMode,
    /// Growth-profile radii (absolute); optional.
    #[serde(default)]
    pub growth_radii: Vec<f64>,
    /// Comparison radii for the measure inequality; optional.
    #[serde(default)]
    pub heart_radii: Vec<f64>,
    #[serde(default)]
    pub samples_per_sphere: Option<usize>,
}

fn default_a_mode() -> AmplitudeMode {
    AmplitudeMode::Bisection
}


/// One experiment: command, profile, geometry, and estimator budgets.
/// Unknown keys are rejected everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub profile: Profile,
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub wos: Option<WosSection>,
    #[serde(default)]
    pub layers: Option<LayersSection>,
    /// Outer radii for decay studies.
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub capacity: Option<CapacitySection>,
    #[serde(default)]
    pub construct: Option<ConstructSection>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Where a run failed, mapped to the process exit code.
#[derive(Debug)]
pub enum RunError {
    /// Config parse/validation problems: exit 2.
    Validation(Error),
    /// Solver or estimator failure after validation: exit 3.
    Execution(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Execution(_) => 3,
        }
    }

    pub fn inner(&self) -> &Error {
        match self {
            RunError::Validation(e) | RunError::Execution(e) => e,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub millis: u128,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub artifact_dir: PathBuf,
    pub manifest: RunManifest,
}

fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn build_colander(p: &Profile, geom: &GeometryConfig, seed: u64) -> Result<Colander> {
    match geom {
        GeometryConfig::Cube { rho, fill } => make_cube_colander(p, *rho, *fill, seed),
        GeometryConfig::Annulus { rho, r_inner } => {
            let union = BallUnion::new(
                p.dim().usize(),
                vec![Ball {
                    center: [0.0, 0.0, 0.0],
                    radius: *r_inner,
                }],
            )?;
            Colander::new(*rho, union)
        }
        GeometryConfig::Balls { rho, balls } => {
            let d = p.dim().usize();
            let parsed: Result<Vec<Ball>> = balls
                .iter()
                .map(|row| {
                    if row.len() != d + 1 {
                        return Err(Error::Config(format!(
                            "ball row needs {} entries, got {}",
                            d + 1,
                            row.len()
                        )));
                    }
                    let center = if d == 2 {
                        [row[0], row[1], 0.0]
                    } else {
                        [row[0], row[1], row[2]]
                    };
                    Ok(Ball {
                        center,
                        radius: row[d],
                    })
                })
                .collect();
            Colander::new(*rho, BallUnion::new(d, parsed?)?)
        }
    }
}


/// Structural checks beyond serde, done before touching the filesystem.
fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let needs_geometry = matches!(
        cfg.command,
        Command::Capacity | Command::Measure | Command::Layers | Command::DecayStudy
    );
    if needs_geometry && cfg.geometry.is_none() {
        return Err(Error::Config(format!(
            "command {} needs a geometry section",
            cfg.command.name()
        )));
    }
    let needs_wos = matches!(
        cfg.command,
        Command::Measure | Command::Layers | Command::DecayStudy
    );
    if needs_wos && cfg.wos.is_none() {
        return Err(Error::Config(format!(
            "command {} needs a wos section",
            cfg.command.name()
        )));
    }
    if let Some(w) = &cfg.wos {
        if !(w.delta_rel > 0.0 && w.delta_rel <= 1e-2) {
            return Err(Error::Config(format!(
                "delta_rel {} outside (0, 1e-2]",
                w.delta_rel
            )));
        }
        if w.n_walks == 0 {
            return Err(Error::Config("n_walks must be positive".into()));
        }
    }
    match cfg.command {
        Command::Layers if cfg.layers.is_none() => {
            Err(Error::Config("layers command needs a layers section".into()))
        }
        Command::DecayStudy if cfg.radii.len() < 4 => Err(Error::Config(
            "decay-study needs at least 4 radii".into(),
        )),
        Command::DecayStudy
            if cfg.radii.windows(2).any(|w| w[1] <= w[0]) =>
        {
            Err(Error::Config("decay radii must increase".into()))
        }
        Command::Capacity if cfg.capacity.is_none() => Err(Error::Config(
            "capacity command needs a capacity section".into(),
        )),
        Command::Construct if cfg.construct.is_none() => Err(Error::Config(
            "construct command needs a construct section".into(),
        )),
        _ => Ok(()),
    }
}

fn wos_config(w: &WosSection, rho: f64, seed: u64) -> WoSConfig {
    WoSConfig {
        delta: w.delta_rel * rho,
        n_walks: w.n_walks,
        max_steps: w.max_steps,
        seed,
    }
}

/// The measure/decay CSV schema.
const MEASURE_HEADER: &str = "rho,int_phi,p_hat,stderr,n_success,n_fail,n_censored,seed,delta";

fn measure_row(rho: f64, int_phi: f64, est: &EstimateCI, seed: u64, delta: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        rho,
        int_phi,
        est.p_hat,
        est.stderr,
        est.n_success,
        est.n_fail,
        est.n_censored,
        seed,
        delta
    )
}

struct Stages {
    list: Vec<StageTiming>,
    clock: Instant,
}

impl Stages {
    fn new() -> Self {
        Self {
            list: Vec::new(),
            clock: Instant::now(),
        }
    }

    fn mark(&mut self, name: &str) {
        self.list.push(StageTiming {
            name: name.to_string(),
            millis: self.clock.elapsed().as_millis(),
        });
        self.clock = Instant::now();
    }
}

struct OutputSink {
    dir: PathBuf,
    names: Vec<String>,
}

impl OutputSink {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn execute(
    cfg: &ExperimentConfig,
    seed: u64,
    sink: &mut OutputSink,
    stages: &mut Stages,
) -> Result<()> {
    let p = &cfg.profile;
    match cfg.command {
        Command::ValidateProfile => {
            let r = p.report();
            #[derive(Serialize)]
            struct Validation<'a> {
                d: u32,
                c_r: f64,
                sup_r_slope: f64,
                sup_d_inv_phi: f64,
                t_max: f64,
                r0_below_one: bool,
                profile: &'a Profile,
            }
            sink.write_json(
                "validation.json",
                &Validation {
                    d: p.dim().get(),
                    c_r: r.c_r,
                    sup_r_slope: r.sup_r_slope,
                    sup_d_inv_phi: r.sup_d_inv_phi,
                    t_max: r.t_max,
                    r0_below_one: r.r0_below_one,
                    profile: p,
                },
            )?;
            stages.mark("validate");
        }
        Command::Capacity => {
            let geom = cfg.geometry.as_ref().unwrap();
            let cap = cfg.capacity.unwrap();
            let colander = build_colander(p, geom, seed)?;
            let (_, result) = equilibrium_solve(colander.obstacles(), cap.nodes_per_ball, cap.reg)?;
            stages.mark("equilibrium");
            #[derive(Serialize)]
            struct CapacityOut {
                capacity: f64,
                robin: f64,
                residual: f64,
                nodes: usize,
                seed: u64,
            }
            sink.write_json(
                "capacity.json",
                &CapacityOut {
                    capacity: result.capacity,
                    robin: result.robin,
                    residual: result.residual,
                    nodes: result.nodes,
                    seed,
                },
            )?;
            if let Some(mc_walks) = cap.mc_walks {
                let mc = mc_capacity_d3(
                    colander.obstacles(),
                    mc_walks,
                    StreamKey::new(seed, "capacity").to_seed(),
                )?;
                sink.write_json("capacity_mc.json", &mc)?;
                stages.mark("mc-cross-check");
            }
        }
        Command::Measure => {
            let geom = cfg.geometry.as_ref().unwrap();
            let w = cfg.wos.unwrap();
            let colander = build_colander(p, geom, seed)?;
            let rho = colander.rho_outer();
            let run_seed = StreamKey::new(seed, "measure").to_seed();
            let wcfg = wos_config(&w, rho, run_seed);
            let est = wos_escape(&colander, [0.0, 0.0, 0.0], &wcfg)?;
            stages.mark("walks");
            let mut csv = String::from(MEASURE_HEADER);
            csv.push('\n');
            csv.push_str(&measure_row(
                rho,
                envelope_integral(p, rho)?,
                &est,
                run_seed,
                wcfg.delta,
            ));
            sink.write("measure.csv", csv.as_bytes())?;
        }
        Command::Layers => {
            let geom = cfg.geometry.as_ref().unwrap();
            let w = cfg.wos.unwrap();
            let lay = cfg.layers.unwrap();
            let colander = build_colander(p, geom, seed)?;
            let run_seed = StreamKey::new(seed, "layers").to_seed();
            let wcfg = wos_config(&w, colander.rho_outer(), run_seed);
            let bounds = layer_bounds(
                &colander,
                p,
                lay.a_scale,
                lay.n_layers,
                lay.m_points,
                &wcfg,
            )?;
            stages.mark("layer-walks");
            let mut csv = String::from("k,rho_k,inf_hat,inf_se,sup_hat,sup_se,m_points\n");
            for l in &bounds.scheme.layers {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    l.k, l.rho_k, l.inf.p_hat, l.inf.stderr, l.sup.p_hat, l.sup.stderr, l.m_points
                ));
            }
            sink.write("layers.csv", csv.as_bytes())?;
            sink.write_json("layer_bounds.json", &bounds)?;
        }
        Command::DecayStudy => {
            let geom = cfg.geometry.as_ref().unwrap();
            let w = cfg.wos.unwrap();
            let mut csv = String::from(MEASURE_HEADER);
            csv.push('\n');
            let mut ests = Vec::new();
            for (i, &rho) in cfg.radii.iter().enumerate() {
                let colander = match geom {
                    GeometryConfig::Cube { fill, .. } => make_cube_colander(p, rho, *fill, seed)?,
                    _ => build_colander(p, geom, seed)?.with_outer(rho)?,
                };
                let run_seed = StreamKey::new(seed, "decay").child(i as u64).to_seed();
                let wcfg = wos_config(&w, rho, run_seed);
                let est = wos_escape(&colander, [0.0, 0.0, 0.0], &wcfg)?;
                csv.push_str(&measure_row(
                    rho,
                    envelope_integral(p, rho)?,
                    &est,
                    run_seed,
                    wcfg.delta,
                ));
                ests.push(est);
            }
            stages.mark("walks");
            sink.write("decay.csv", csv.as_bytes())?;
            let fit = decay_fit(p, &cfg.radii, &ests)?;
            sink.write_json("fit.json", &fit)?;
            stages.mark("fit");
        }
        Command::Construct => {
            let sec = cfg.construct.as_ref().unwrap();
            let opts = BuildOptions {
                k_max: sec.k_max,
                seed: StreamKey::new(seed, "construct").to_seed(),
                c_override: sec.c_override,
                a_mode: sec.a_mode,
            };
            let cons = build(p, &opts)?;
            stages.mark("build");
            sink.write_json("construction.json", &cons.manifest())?;
            let mut wells = String::from("k,center_radius,ball_radius,a_coeff,zero_radius,required_radius\n");
            for s in cons.shells() {
                wells.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.k,
                    s.center_radius,
                    s.ball_radius,
                    s.a_coeff,
                    s.zero_radius,
                    s.ball_radius * s.eps0
                ));
            }
            sink.write("wells.csv", wells.as_bytes())?;
            if !sec.growth_radii.is_empty() {
                let growth =
                    cons.growth_profile(&sec.growth_radii, sec.samples_per_sphere.unwrap_or(512))?;
                let mut csv = String::from("rho,m_hat,ratio,flagged\n");
                for g in &growth {
                    csv.push_str(&format!("{},{},{},{}\n", g.rho, g.m_hat, g.ratio, g.flagged));
                }
                sink.write("growth.csv", csv.as_bytes())?;
                stages.mark("growth");
            }
            if !sec.heart_radii.is_empty() {
                let w = cfg.wos.ok_or_else(|| {
                    Error::Config("heart radii need a wos section".into())
                })?;
                let mut reports = Vec::new();
                for (i, &rho) in sec.heart_radii.iter().enumerate() {
                    let run_seed = StreamKey::new(seed, "heart").child(i as u64).to_seed();
                    let wcfg = wos_config(&w, rho, run_seed);
                    reports.push(cons.heart_check(rho, &wcfg)?);
                }
                sink.write_json("heart.json", &reports)?;
                stages.mark("heart");
            }
        }
    }
    Ok(())
}

/// Run one experiment end to end.
///
/// Creates the artifact directory, locks it, copies the config, executes
/// the command, and writes the manifest atomically. On failure every file
/// written this run is removed.
pub fn run(
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> std::result::Result<RunOutcome, RunError> {
    let started = unix_ms();
    let raw = std::fs::read(config_path)
        .map_err(|e| RunError::Validation(Error::Io(e)))?;
    let cfg: ExperimentConfig =
        serde_json::from_slice(&raw).map_err(|e| RunError::Validation(Error::Json(e)))?;
    validate(&cfg).map_err(RunError::Validation)?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| {
            RunError::Validation(Error::Config(
                "no output directory (config `out` or --out)".into(),
            ))
        })?;

    std::fs::create_dir_all(&dir).map_err(|e| RunError::Execution(Error::Io(e)))?;
    let lock_path = dir.join(".lock");
    let lock = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock_path);
    let mut lock_file = match lock {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(RunError::Execution(Error::Config(format!(
                "artifact directory {} is locked by another run",
                dir.display()
            ))));
        }
        Err(e) => return Err(RunError::Execution(Error::Io(e))),
    };
    let _ = writeln!(lock_file, "{}", std::process::id());

    let mut sink = OutputSink {
        dir: dir.clone(),
        names: Vec::new(),
    };
    let mut stages = Stages::new();
    let result = (|| -> Result<()> {
        sink.write("config.json", &raw)?;
        let threads = std::env::var("COLANDER_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok());
        match threads {
            Some(n) if n >= 1 => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                pool.install(|| execute(&cfg, seed, &mut sink, &mut stages))
            }
            _ => execute(&cfg, seed, &mut sink, &mut stages),
        }
    })();

    match result {
        Ok(()) => {
            let manifest = RunManifest {
                config_sha256: hex_digest(&raw),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                started_unix_ms: started,
                finished_unix_ms: unix_ms(),
                stages: stages.list,
                outputs: sink.names.clone(),
            };
            let tmp = dir.join("manifest.json.tmp");
            let write = (|| -> Result<()> {
                let mut text = serde_json::to_string_pretty(&manifest)?;
                text.push('\n');
                std::fs::write(&tmp, text)?;
                std::fs::rename(&tmp, dir.join("manifest.json"))?;
                Ok(())
            })();
            let _ = std::fs::remove_file(&lock_path);
            write.map_err(RunError::Execution)?;
            Ok(RunOutcome {
                artifact_dir: dir,
                manifest,
            })
        }
        Err(e) => {
            for name in &sink.names {
                let _ = std::fs::remove_file(dir.join(name));
            }
            let _ = std::fs::remove_file(&lock_path);
            Err(RunError::Execution(e))
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Emit gnuplot-ready two-column data from a finished artifact directory:
/// `(int_phi, -log p_hat)` pairs from the decay CSV and cumulative
/// `(k, lower, upper)` bounds from the layer CSV.
pub fn plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let decay = dir.join("decay.csv");
    let layers = dir.join("layers.csv");
    if !decay.exists() && !layers.exists() {
        return Err(Error::Config(format!(
            "{} holds neither decay.csv nor layers.csv",
            dir.display()
        )));
    }
    if decay.exists() {
        let text = std::fs::read_to_string(&decay)?;
        let mut out = String::new();
        let mut rows = 0;
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let int_phi: f64 = fields[1]
                .parse()
                .map_err(|e| Error::Config(format!("decay.csv: {e}")))?;
            let p_hat: f64 = fields[2]
                .parse()
                .map_err(|e| Error::Config(format!("decay.csv: {e}")))?;
            if p_hat > 0.0 {
                out.push_str(&format!("{} {}\n", int_phi, -p_hat.ln()));
                rows += 1;
            }
        }
        if rows == 0 {
            eprintln!("warning: decay.csv has no usable rows");
        }
        let path = dir.join("decay.dat");
        std::fs::write(&path, out)?;
        written.push(path);
    }
    if layers.exists() {
        let text = std::fs::read_to_string(&layers)?;
        // slack constant from the bounds record when available
        let alpha = std::fs::read_to_string(dir.join("layer_bounds.json"))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v["scheme"]["alpha"].as_f64())
            .unwrap_or(1.0);
        let mut out = String::new();
        let mut sum_sup = 0.0;
        let mut sum_inf = 0.0;
        let mut rows = 0;
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let k = fields[0];
            let inf: f64 = fields[2]
                .parse()
                .map_err(|e| Error::Config(format!("layers.csv: {e}")))?;
            let sup: f64 = fields[4]
                .parse()
                .map_err(|e| Error::Config(format!("layers.csv: {e}")))?;
            sum_inf += inf;
            sum_sup += sup;
            out.push_str(&format!(
                "{} {} {}\n",
                k,
                (-alpha * sum_sup).exp(),
                (-sum_inf).exp()
            ));
            rows += 1;
        }
        if rows == 0 {
            eprintln!("warning: layers.csv has no usable rows");
        }
        let path = dir.join("layers.dat");
        std::fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}
