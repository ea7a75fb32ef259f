//! Configuration, subcommands and CSV output for the `kinetrate` binary.

use crate::chv;
use crate::error::{Error, Result};
use crate::evolution::{
    decay_curve, distance_to_equilibrium, geometric_times, mc_evolve, rates_initial_datum, CellPartition,
    ParticleEnsemble, RenewalState,
};
use crate::geometry::{Domain, Vec3};
use crate::linalg::c;
use crate::phase_grid::{GridSpec, PhaseDensity, PhaseGrid, RadialWeight, VelocityMeasure, C64};
use crate::resolvent_steady::{boundary_function, invariant_density, BoundaryMethod};
use crate::transfer_operator::{leading_eigenpair, spectral_radius, Model, TransferMatrix};
use crate::wall_kernels::{DiffuseKernel, KernelFamily, ThetaField};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    /// "disk" | "ellipse" | "ball"
    pub shape: String,
    pub semi_axes: Option<Vec<f64>>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { shape: "disk".into(), semi_axes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub boundary_nodes: usize,
    pub speeds: usize,
    pub angles: usize,
    pub chord_nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let b = GridSpec::baseline();
        GridConfig { boundary_nodes: b.boundary_nodes, speeds: b.speeds, angles: b.angles, chord_nodes: b.chord_nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    /// "lebesgue" | "power:<a>"
    pub weight: String,
    pub c: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { weight: "lebesgue".into(), c: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaConfig {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// "maxwellian" | "generalized-radial" | "power-law" | "separable-rank-one"
    pub family: String,
    pub theta: ThetaConfig,
    pub exponent_a: f64,
    /// speed power of the generalized radial family
    pub p: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { family: "maxwellian".into(), theta: ThetaConfig::Value(1.0), exponent_a: 2.0, p: 0.0 }
    }
}

/// Subcommand-specific settings; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub eta: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub f0: Option<String>,
    pub horizon: Option<f64>,
    pub method: Option<String>,
    pub k: Option<Vec<u32>>,
    pub dt: Option<f64>,
    pub particles: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub measure: MeasureConfig,
    pub kernel: KernelConfig,
    pub experiment: ExperimentBlock,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: Option<String>,
}

/// Parses and validates a JSON configuration; missing keys take defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(json_path(&e), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn json_path(e: &serde_json::Error) -> String {
    // serde reports unknown fields by name; point at the line otherwise
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    format!("line {} column {}", e.line(), e.column())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        let c = self.measure.c;
        if !(c > 0.0 && c <= 0.9) {
            return Err(Error::config("measure.c", format!("must lie in (0, 0.9], got {c}")));
        }
        RadialWeight::parse(&self.measure.weight)?;
        let g = &self.grid;
        for (key, v, min) in [
            ("grid.boundary_nodes", g.boundary_nodes, 8),
            ("grid.speeds", g.speeds, 2),
            ("grid.angles", g.angles, 4),
            ("grid.chord_nodes", g.chord_nodes, 2),
        ] {
            if v < min {
                return Err(Error::config(key, format!("must be at least {min}, got {v}")));
            }
        }
        self.kernel_family()?;
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::config("threads", "must be positive"));
            }
        }
        let e = &self.experiment;
        if let Some(h) = e.horizon {
            if !(h > 0.0) {
                return Err(Error::config("experiment.horizon", "must be positive"));
            }
        }
        if let Some(dt) = e.dt {
            if !(dt > 0.0) {
                return Err(Error::config("experiment.dt", "must be positive"));
            }
        }
        if let Some(m) = &e.method {
            if m != "renewal" && m != "mc" {
                return Err(Error::config("experiment.method", format!("expected `renewal` or `mc`, got `{m}`")));
            }
        }
        if let Some(f) = &e.f0 {
            if preset_name(f).is_err() && !Path::new(f).is_file() {
                return Err(Error::config("experiment.f0", format!("`{f}` is neither a preset nor a file")));
            }
        }
        if let Some(eps) = &e.eps {
            if eps.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::config("experiment.eps", "entries must be positive"));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        let ax = self.domain.semi_axes.clone();
        match self.domain.shape.as_str() {
            "disk" => match ax {
                None => Ok(Domain::disk()),
                Some(v) if v.len() == 2 && v[0] == 1.0 && v[1] == 1.0 => Ok(Domain::disk()),
                Some(_) => Err(Error::config("domain.semi_axes", "the disk is the unit disk; use `ellipse`")),
            },
            "ellipse" => {
                let v = ax.unwrap_or_else(|| vec![2.0, 1.0]);
                if v.len() != 2 {
                    return Err(Error::config("domain.semi_axes", "an ellipse needs two semi-axes"));
                }
                Domain::ellipse(v[0], v[1]).map_err(|e| Error::config("domain.semi_axes", e.to_string()))
            }
            "ball" => match ax {
                None => Ok(Domain::ball()),
                Some(v) if v.len() == 3 && v.iter().all(|x| *x == 1.0) => Ok(Domain::ball()),
                Some(_) => Err(Error::config("domain.semi_axes", "only the unit ball is supported")),
            },
            other => Err(Error::config("domain.shape", format!("unknown shape `{other}`"))),
        }
    }

    pub fn measure(&self) -> Result<VelocityMeasure> {
        VelocityMeasure::new(RadialWeight::parse(&self.measure.weight)?, self.measure.c)
    }

    fn theta(&self) -> Result<ThetaField> {
        match &self.kernel.theta {
            ThetaConfig::Value(t) if *t > 0.0 => Ok(ThetaField::Constant(*t)),
            ThetaConfig::Value(t) => Err(Error::config("kernel.theta", format!("must be positive, got {t}"))),
            ThetaConfig::Named(s) if s == "bump" => Ok(ThetaField::Bump),
            ThetaConfig::Named(s) if s == "step" => Ok(ThetaField::Step),
            ThetaConfig::Named(s) => Err(Error::config("kernel.theta", format!("expected a number, `bump` or `step`, got `{s}`"))),
        }
    }

    pub fn kernel_family(&self) -> Result<KernelFamily> {
        match self.kernel.family.as_str() {
            "maxwellian" => Ok(KernelFamily::Maxwellian { theta: self.theta()? }),
            "generalized-radial" => Ok(KernelFamily::GeneralizedRadial { theta: self.theta()?, p: self.kernel.p }),
            "power-law" => {
                let a = self.kernel.exponent_a;
                if !(a >= 0.0) {
                    return Err(Error::config("kernel.exponent_a", format!("must be ≥ 0, got {a}")));
                }
                Ok(KernelFamily::PowerLaw { a })
            }
            "separable-rank-one" => Ok(KernelFamily::SeparableRankOne),
            other => Err(Error::config("kernel.family", format!("unknown family `{other}`"))),
        }
    }

    pub fn kernel(&self) -> Result<DiffuseKernel> {
        DiffuseKernel::new(self.kernel_family()?, self.measure()?, self.domain()?.dim())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            boundary_nodes: self.grid.boundary_nodes,
            speeds: self.grid.speeds,
            angles: self.grid.angles,
            chord_nodes: self.grid.chord_nodes,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let grid = PhaseGrid::new(self.domain()?, self.measure()?, self.grid_spec())?;
        Ok(Model::new(grid, self.kernel()?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Initial-datum presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// smooth spatial bump times a Maxwellian, projected to zero mean
    Bump,
    /// sign(x₁) times a Maxwellian, projected to zero mean
    Halfspace,
    /// the invariant density
    Psi,
}

fn preset_name(s: &str) -> Result<Preset> {
    match s {
        "bump" => Ok(Preset::Bump),
        "halfspace" => Ok(Preset::Halfspace),
        "psi" => Ok(Preset::Psi),
        other => Err(Error::Usage(format!("unknown preset `{other}` (bump | halfspace | psi)"))),
    }
}

/// The preset density on the model's grid; Ψ must be supplied.
pub fn preset_density(model: &Model, preset: Preset, psi: &PhaseDensity) -> Result<PhaseDensity> {
    let grid = &model.grid;
    let maxw = |v: &Vec3| (-0.5 * (v[0] * v[0] + v[1] * v[1])).exp();
    match preset {
        Preset::Psi => Ok(psi.clone()),
        Preset::Bump => {
            let f = grid.sample(|x, v| (-4.0 * ((x[0] - 0.3).powi(2) + x[1] * x[1])).exp() * maxw(v));
            grid.zero_mean_projected(&f, Some(psi))
        }
        Preset::Halfspace => {
            let f = grid.sample(|x, v| if x[0] >= 0.0 { maxw(v) } else { -maxw(v) });
            grid.zero_mean_projected(&f, Some(psi))
        }
    }
}

/// Writes a CSV atomically (temporary file, then rename). Floats use 17
/// significant digits.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|c| c.render()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out.csv");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a CSV written by [`write_csv`] back into header and string cells.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format_float(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

/// Round-trip representation with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Parser, Debug)]
#[command(name = "kinetrate", about = "Kinetic transport with diffuse walls: spectra, resolvents and relaxation")]
pub struct Cli {
    /// JSON configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output CSV path
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads (falls back to KINETRATE_THREADS)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// invariant density on the phase grid
    Invariant,
    /// spectral radius and ‖(M H)²‖ along the imaginary axis
    Spectrum {
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
    },
    /// leading eigenvalue ν(ε) and its finite-difference slope
    NuCurve {
        /// comma list, or `lo..hi` for a logarithmic ladder of 7 values
        #[arg(long)]
        eps: Option<String>,
    },
    /// distance to equilibrium over time
    Relax {
        #[arg(long)]
        f0: Option<String>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        method: Option<String>,
    },
    /// fitted decay exponents for rate-test initial data
    Rates {
        /// kernel override, e.g. `power:2`
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<u32>>,
    },
    /// change-of-variables checks
    VerifyChv {
        #[arg(long)]
        domain: Option<String>,
    },
    /// boundary function R_f(η) with ε-ladder diagnostics
    BoundaryFunction {
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
        #[arg(long)]
        f: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Invariant => "invariant",
            Command::Spectrum { .. } => "spectrum",
            Command::NuCurve { .. } => "nu-curve",
            Command::Relax { .. } => "relax",
            Command::Rates { .. } => "rates",
            Command::VerifyChv { .. } => "verify-chv",
            Command::BoundaryFunction { .. } => "boundary-function",
        }
    }
}

/// Resolves the thread count: flag, then config, then `KINETRATE_THREADS`.
pub fn thread_count(flag: Option<usize>, cfg: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag.or(cfg) {
        return Ok(Some(n));
    }
    match std::env::var("KINETRATE_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Error::Usage(format!("KINETRATE_THREADS must be a positive integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn parse_eps(s: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: f64 = a.trim().parse().map_err(|_| Error::Usage(format!("bad ε range `{s}`")))?;
        let hi: f64 = b.trim().parse().map_err(|_| Error::Usage(format!("bad ε range `{s}`")))?;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Usage(format!("bad ε range `{s}`")));
        }
        let n = 7;
        return Ok((0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad ε value `{x}`"))))
        .collect()
}

/// Applies command-line overrides to the configuration.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(&std::fs::read_to_string(p).map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.display().to_string());
    }
    cfg.threads = thread_count(cli.threads, cfg.threads)?;
    let e = &mut cfg.experiment;
    match &cli.command {
        Command::Spectrum { eta } | Command::BoundaryFunction { eta, .. } if eta.is_some() => e.eta = eta.clone(),
        Command::NuCurve { eps: Some(s) } => e.eps = Some(parse_eps(s)?),
        _ => {}
    }
    match &cli.command {
        Command::Relax { f0, horizon, method } => {
            if f0.is_some() {
                e.f0 = f0.clone();
            }
            if horizon.is_some() {
                e.horizon = *horizon;
            }
            if method.is_some() {
                e.method = method.clone();
            }
        }
        Command::BoundaryFunction { f: Some(f), .. } => e.f0 = Some(f.clone()),
        Command::Rates { kernel, k } => {
            if let Some(kk) = k {
                e.k = Some(kk.clone());
            }
            let spec = kernel.clone().unwrap_or_else(|| "power:2".into());
            let a = spec
                .strip_prefix("power:")
                .and_then(|a| a.parse::<f64>().ok())
                .ok_or_else(|| Error::Usage(format!("rates expects --kernel power:<a>, got `{spec}`")))?;
            cfg.kernel.family = "power-law".into();
            cfg.kernel.exponent_a = a;
        }
        Command::VerifyChv { domain: Some(d) } => {
            cfg.domain.shape = d.clone();
            cfg.domain.semi_axes = None;
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

type Table = (Vec<&'static str>, Vec<Vec<Cell>>);

/// Runs one subcommand and returns the CSV table it produces.
pub fn run_subcommand(command: &Command, cfg: &ExperimentConfig) -> Result<Table> {
    match command {
        Command::Invariant => run_invariant(cfg),
        Command::Spectrum { .. } => run_spectrum(cfg),
        Command::NuCurve { .. } => run_nu_curve(cfg),
        Command::Relax { .. } => run_relax(cfg),
        Command::Rates { .. } => run_rates(cfg),
        Command::VerifyChv { .. } => run_verify_chv(cfg),
        Command::BoundaryFunction { .. } => run_boundary_function(cfg),
    }
}

fn run_invariant(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let inv = invariant_density(&model)?;
    let grid = &model.grid;
    let nc = grid.nc();
    let mut rows = Vec::with_capacity(grid.n_phase());
    for p in 0..grid.n_plus() {
        let v = grid.phase_velocity(p);
        for m in 0..nc {
            let x = grid.phase_point(p, m);
            let i = p * nc + m;
            let mut row = vec![Cell::I(i as i64)];
            row.extend(x.iter().chain(v.iter()).map(|c| Cell::F(*c)));
            row.push(Cell::F(inv.psi.values[i].re));
            rows.push(row);
        }
    }
    Ok((vec!["cell", "x1", "x2", "x3", "v1", "v2", "v3", "value"], rows))
}

fn run_spectrum(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let etas = cfg.experiment.eta.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0]);
    let mut rows = Vec::new();
    for eta in etas {
        let t = TransferMatrix::assemble(&model, C64::new(0.0, eta))?;
        let r = spectral_radius(&model, &t)?.value;
        rows.push(vec![Cell::F(eta), Cell::F(r), Cell::F(1.0 - r), Cell::F(t.norm_squared_op(&model))]);
    }
    Ok((vec!["eta", "r_sigma", "margin", "norm_M2"], rows))
}

fn run_nu_curve(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let eps = cfg.experiment.eps.clone().unwrap_or_else(|| parse_eps("1e-3..0.1").expect("valid range"));
    let nu0 = leading_eigenpair(&model, c(0.0))?.nu;
    let mut rows = Vec::new();
    for e in eps {
        let nu = leading_eigenpair(&model, c(e))?.nu;
        rows.push(vec![Cell::F(e), Cell::F(nu.re), Cell::F(nu.im), Cell::F((nu - nu0).re / e)]);
    }
    Ok((vec!["eps", "re_nu", "im_nu", "nu_prime_fd"], rows))
}

fn relax_times(model: &Model, horizon: f64) -> Vec<f64> {
    let d = model.diameter();
    let mut t = vec![0.0];
    t.extend(geometric_times(d / 16.0, horizon, 1.25));
    t
}

fn run_relax(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let inv = invariant_density(&model)?;
    let e = &cfg.experiment;
    let preset = preset_name(e.f0.as_deref().unwrap_or("bump"))?;
    let f0 = preset_density(&model, preset, &inv.psi)?;
    let horizon = e.horizon.unwrap_or(50.0 * model.diameter());
    let times = relax_times(&model, horizon);
    let header = vec!["t", "distance", "mass"];
    match e.method.as_deref().unwrap_or("renewal") {
        "mc" => {
            let grid = &model.grid;
            let n = e.particles.unwrap_or(100_000);
            let cells = CellPartition { sectors: 8, rings: 4 };
            let rho = grid.mass(&f0).re;
            let psi_cells = RenewalState::new(&model, &inv.psi, e.dt)?.cell_masses(&cells, 256);
            let mut ens = ParticleEnsemble::sample(grid, &f0, n, cfg.seed)?;
            let mut rows = Vec::new();
            for &t in &times {
                mc_evolve(&model, &mut ens, t)?;
                let (h, _) = ens.histogram(grid, &cells);
                let dist: f64 = h.iter().zip(&psi_cells).map(|(a, b)| (a - rho * b).abs()).sum();
                rows.push(vec![Cell::F(t), Cell::F(dist), Cell::F(ens.total_weight())]);
            }
            Ok((header, rows))
        }
        _ => {
            let grid = &model.grid;
            let rho = grid.mass(&f0).re;
            let mut st = RenewalState::new(&model, &f0, e.dt)?;
            let mut rows = Vec::new();
            for &t in &times {
                st.advance_to(t);
                let d = distance_to_equilibrium(grid, &st.density(), rho, &inv.psi);
                rows.push(vec![Cell::F(st.time()), Cell::F(d), Cell::F(st.mass())]);
            }
            Ok((header, rows))
        }
    }
}

/// Spatial factor of the rate-test initial data.
pub fn rates_spatial_profile(x: &Vec3) -> f64 {
    1.0 + x[0] + 0.5 * x[1] * x[1]
}

fn run_rates(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let inv = invariant_density(&model)?;
    let d = model.diameter();
    let window = (5.0 * d, 50.0 * d);
    let times = geometric_times(d / 2.0, window.1, 1.25);
    let ks = cfg.experiment.k.clone().unwrap_or_else(|| vec![0, 1, 2]);
    let mut rows = Vec::new();
    let mut first_err = None;
    for k in ks {
        let f0 = rates_initial_datum(&model, &inv.psi, k, rates_spatial_profile)?;
        let mut curve = decay_curve(&model, &inv.psi, &f0, &times, cfg.experiment.dt)?;
        let win = format!("{}..{}", window.0, window.1);
        match curve.fit(window) {
            Ok(fit) => rows.push(vec![Cell::I(k as i64), Cell::F(fit.alpha), Cell::F(fit.sigma), Cell::S(win)]),
            Err(e) => {
                rows.push(vec![Cell::I(k as i64), Cell::F(f64::NAN), Cell::F(f64::NAN), Cell::S(win)]);
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(Error::Fit(format!("{e}; partial table: {}", render_rows(&rows)))),
        None => Ok((vec!["k", "alpha", "sigma", "window"], rows)),
    }
}

fn render_rows(rows: &[Vec<Cell>]) -> String {
    rows.iter().map(|r| r.iter().map(|c| c.render()).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join("; ")
}

fn run_verify_chv(cfg: &ExperimentConfig) -> Result<Table> {
    let domain = cfg.domain()?;
    let dim = domain.dim();
    let mut rows = Vec::new();
    let mut push = |id: &str, lhs: f64, rhs: f64, slack: f64| {
        rows.push(vec![Cell::S(id.into()), Cell::F(lhs), Cell::F(rhs), Cell::F((lhs - rhs).abs()), Cell::F(slack)]);
    };
    let x = match dim {
        3 => domain.boundary_chart([0.9, 0.4]).x,
        _ => domain.boundary_chart([0.7, 0.0]).x,
    };
    let n = domain.outward_normal(&x)?;
    let id = chv::chv_identity_residual(&domain, &x, |_| 1.0)?;
    push("identity_g1", id.lhs, id.rhs, f64::NAN);
    let id = chv::chv_identity_residual(&domain, &x, |s| crate::geometry::dot(s, &n).powi(2))?;
    push("identity_cos2", id.lhs, id.rhs, f64::NAN);
    let id = chv::chv_identity_residual(&domain, &x, |s| 1.0 + 0.5 * s[0] - 0.25 * s[1] * s[1])?;
    push("identity_poly", id.lhs, id.rhs, f64::NAN);
    let pairs = chv::sample_pairs(&domain, 10_000, cfg.seed);
    let c_omega = chv::c2_bound_constant(&domain, &pairs)?;
    let c_re = chv::c2_bound_constant(&domain, &chv::sample_pairs(&domain, 10_000, cfg.seed.wrapping_add(1)))?;
    push("c_omega_resample", c_omega, c_re, f64::NAN);
    let pc = chv::pair_checks(&domain, &pairs, c_omega)?;
    push("symmetry", pc.max_asymmetry, 0.0, f64::NAN);
    push("bound_basic", 0.0, 0.0, pc.slack_basic);
    push("bound_c2", 0.0, 0.0, pc.slack_c2);
    if dim == 2 {
        for delta in [0.4, 0.2, 0.1, 0.05] {
            let v = chv::delta_shell_integral(&domain, &x, delta)?;
            let exact = if domain == Domain::disk() { chv::circle_shell_exact(delta) } else { f64::NAN };
            push(&format!("shell_{delta}"), v, exact, f64::NAN);
        }
    }
    let kernel = cfg.kernel()?;
    let agree = chv::l0_form_agreement(&domain, &kernel, 5, 4, cfg.seed)?;
    push("l0_forms", agree, 0.0, f64::NAN);
    Ok((vec!["test_id", "lhs", "rhs", "residual", "bound_slack"], rows))
}

fn run_boundary_function(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.model()?;
    let inv = invariant_density(&model)?;
    let source = cfg.experiment.f0.as_deref().unwrap_or("bump");
    let f = match preset_name(source) {
        Ok(preset) => preset_density(&model, preset, &inv.psi)?,
        Err(_) => density_from_csv(&model, Path::new(source))?,
    };
    let etas = cfg.experiment.eta.clone().unwrap_or_else(|| vec![0.0, 1.0]);
    let mut rows = Vec::new();
    for eta in etas {
        let r = boundary_function(&model, &f, eta)?;
        let method = match r.method {
            BoundaryMethod::Direct => "direct",
            BoundaryMethod::Spectral => "spectral",
            BoundaryMethod::Extrapolated => "extrapolated",
        };
        let last = r.increments.last().copied().unwrap_or(f64::NAN);
        rows.push(vec![Cell::F(eta), Cell::F(model.grid.norm_x(&r.value, 0)), Cell::S(method.into()), Cell::F(last)]);
    }
    Ok((vec!["eta", "norm_x0", "method", "last_increment"], rows))
}

/// Reads the `value` column of a CSV in the layout written by `invariant`.
pub fn density_from_csv(model: &Model, path: &Path) -> Result<PhaseDensity> {
    let (header, rows) = read_csv(path)?;
    let col = header
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| Error::Usage(format!("{}: no `value` column", path.display())))?;
    let n = model.grid.n_phase();
    if rows.len() != n {
        return Err(Error::Usage(format!("{}: expected {n} rows, found {}", path.display(), rows.len())));
    }
    let values = rows
        .iter()
        .map(|r| {
            r.get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .map(|x| C64::new(x, 0.0))
                .ok_or_else(|| Error::Usage(format!("{}: bad value cell", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseDensity { values })
}

fn default_output(command: &Command) -> &'static str {
    match command {
        Command::Invariant => "psi.csv",
        Command::Spectrum { .. } => "spectrum.csv",
        Command::NuCurve { .. } => "nu.csv",
        Command::Relax { .. } => "decay.csv",
        Command::Rates { .. } => "rates.csv",
        Command::VerifyChv { .. } => "chv.csv",
        Command::BoundaryFunction { .. } => "rf.csv",
    }
}

fn append_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, wall: f64, status: &str) -> Result<()> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let line = serde_json::json!({
        "command": command,
        "config_hash": cfg.hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall,
        "status": status,
        "output": out.display().to_string(),
    });
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }).to_string()
}

/// Runs the command line `args` (including the program name); returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            return e.exit_code();
        }
    };
    if let Some(n) = cfg.threads {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    eprintln!("effective config: {}", cfg.to_json());
    let out = PathBuf::from(cfg.output.clone().unwrap_or_else(|| default_output(&cli.command).into()));
    let start = Instant::now();
    let result = run_subcommand(&cli.command, &cfg).and_then(|(header, rows)| write_csv(&out, &header, &rows));
    let wall = start.elapsed().as_secs_f64();
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => e.kind().to_string(),
    };
    if let Err(e) = append_manifest(&out, cli.command.name(), &cfg, wall, &status) {
        eprintln!("{}", error_record(&e));
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}

pub fn main_entry() -> i32 {
    run_cli(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_baseline() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.grid_spec(), GridSpec::baseline());
    }

    #[test]
    fn range_error_names_key() {
        match parse_config(r#"{"measure": {"c": 1.5}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "measure.c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        match parse_config(r#"{"grid": {"nodes": 3}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "nodes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn eps_range_is_logarithmic() {
        let e = parse_eps("1e-3..0.1").unwrap();
        assert_eq!(e.len(), 7);
        assert!((e[0] - 1e-3).abs() < 1e-18 && (e[6] - 0.1).abs() < 1e-15);
    }
}
