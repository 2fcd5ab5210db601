//! Config-driven runs. A scenario file is JSON with a closed schema: unknown
//! keys are rejected so a typo cannot silently disable a check. Execution
//! builds the spacetime, grid and operator, runs one scenario kind, writes
//! field artifacts and evaluates the declared checks.
//!
//! Check semantics: each named metric is dimensionless (a relative defect, a
//! count, or a reach) and carries a sense, since demos that must diverge
//! compare with `ge` rather than `le`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal::{
    causal_future, causal_past, conformal_invariance_check, cumulative_light_integral, EventSet,
    GridEvent,
};
use crate::cauchy::{demo_cylinder_time, demo_strip_nonuniqueness, propagation_check, solve, CauchyData};
use crate::error::{Error, Result};
use crate::green::{
    adjoint_identity_check, directional_leakage, green_apply, interior_max_abs_diff, GreenDirection,
};
use crate::io;
use crate::linalg::C64;
use crate::manifold::{self, Grid, SpacetimeSpec};
use crate::operators::WaveOperator;
use crate::sections::GridSection;
use crate::suite::{self, rng_for, SuiteCheck, SuiteReport, Sense};
use crate::tolerances::{DEFAULT_CFL_SAFETY, SUPPORT_DILATION_CELLS, SUPPORT_THRESHOLD};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub spacetime: SpacetimeConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Minkowski,
    Rescaled,
    Desitter,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacetimeConfig {
    pub preset: Preset,
    pub lengths: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    /// Constant lapse squared; `rescaled` only.
    #[serde(default)]
    pub beta0: Option<f64>,
    /// Optional overall conformal factor applied to the metric.
    #[serde(default)]
    pub conformal_kappa: Option<f64>,
}

impl SpacetimeConfig {
    pub fn build(&self) -> Result<SpacetimeSpec> {
        let spec = match self.preset {
            Preset::Minkowski | Preset::Desitter => {
                if self.beta0.is_some() {
                    return Err(Error::Config("beta0 only applies to the rescaled preset".into()));
                }
                match self.preset {
                    Preset::Minkowski => SpacetimeSpec::minkowski(&self.lengths, self.t_min, self.t_max)?,
                    _ => SpacetimeSpec::desitter(&self.lengths, self.t_min, self.t_max)?,
                }
            }
            Preset::Rescaled => {
                let beta0 = self
                    .beta0
                    .ok_or_else(|| Error::Config("rescaled preset needs beta0".into()))?;
                SpacetimeSpec::rescaled(&self.lengths, beta0, self.t_min, self.t_max)?
            }
        };
        match self.conformal_kappa {
            Some(kappa) => Ok(spec.conformal_scale(kappa)?),
            None => Ok(spec),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nt: usize,
    pub nx: Vec<usize>,
    #[serde(default)]
    pub cfl_safety: Option<f64>,
}

impl GridConfig {
    pub fn build(&self, spec: &SpacetimeSpec) -> Result<Grid> {
        Grid::new(spec, self.nt, &self.nx, self.cfl_safety.unwrap_or(DEFAULT_CFL_SAFETY))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Dalembert {
        #[serde(default = "one")]
        rank: usize,
    },
    KleinGordon {
        mass: f64,
        #[serde(default = "one")]
        rank: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self::Dalembert { rank: 1 }
    }
}

impl OperatorConfig {
    pub fn build(&self, spec: &SpacetimeSpec, grid: &Grid) -> Result<WaveOperator> {
        match *self {
            Self::Dalembert { rank } => WaveOperator::dalembert(spec, grid, rank),
            Self::KleinGordon { mass, rank } => {
                let rr = rank * rank;
                let zero = GridSection::zeros(grid, rr);
                let zero_x = vec![GridSection::zeros(grid, rr); grid.dim];
                let m2 = C64::new(mass * mass, 0.0);
                let mut b = GridSection::zeros(grid, rr);
                for v in b.values.iter_mut().step_by(rank + 1) {
                    *v = m2;
                }
                WaveOperator::custom(spec, grid, rank, zero, zero_x, b)
            }
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            Self::Dalembert { rank } | Self::KleinGordon { rank, .. } => rank,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    /// March initial data, optionally forced.
    Cauchy,
    /// One directed Green sweep over a compactly supported source.
    Green { direction: DirectionSpec },
    /// Cone rasters of a source set.
    Causal {
        #[serde(default)]
        kappas: Vec<f64>,
    },
    /// Two solutions agreeing on a strip until an outside cone crosses in.
    DemoStrip { window: [f64; 2], outside_event: Vec<f64> },
    /// Periodicity of cylinder time evolution over the full slab.
    DemoCylinder,
    /// A named invariant battery; checks come from the suite itself.
    Check { suite: String },
}

impl ScenarioKind {
    fn name(&self) -> &'static str {
        match self {
            Self::Cauchy => "cauchy",
            Self::Green { .. } => "green",
            Self::Causal { .. } => "causal",
            Self::DemoStrip { .. } => "demo_strip",
            Self::DemoCylinder => "demo_cylinder",
            Self::Check { .. } => "check",
        }
    }

    fn available_metrics(&self) -> &'static [&'static str] {
        match self {
            Self::Cauchy => &["interior_residual", "cone_leakage", "convergence_ratio_deviation"],
            Self::Green { .. } => &["inverse_defect", "cone_leakage", "adjoint_identity_defect"],
            Self::Causal { .. } => {
                &["conformal_differing_cells", "light_reach_max", "frontier_gudermannian_defect"]
            }
            Self::DemoStrip { .. } => &["initial_agreement", "strip_residual", "gap"],
            Self::DemoCylinder => &["periodicity_defect", "derivative_defect"],
            Self::Check { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum DirectionSpec {
    #[serde(rename = "+")]
    Future,
    #[serde(rename = "-")]
    Past,
}

impl DirectionSpec {
    pub fn green(self) -> GreenDirection {
        match self {
            Self::Future => GreenDirection::Advanced,
            Self::Past => GreenDirection::Retarded,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub u0: Option<DataProfile>,
    pub u1: Option<DataProfile>,
    /// Spacetime forcing for cauchy and the strip demo.
    pub source: Option<DataProfile>,
    /// Spacetime test source for green sweeps.
    pub phi: Option<DataProfile>,
    /// Source set for causal rasters.
    pub set: Option<SetDescriptor>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataProfile {
    /// Periodic gaussian. Spatial contexts take `center` of the spatial
    /// dimension; spacetime contexts prepend the time coordinate.
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "fone")]
        amplitude: f64,
    },
    /// amplitude * sin(sum 2 pi k_i x_i / L_i + phase); constant in time.
    Sine {
        k: Vec<i64>,
        #[serde(default = "fone")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Zero,
    /// A serialised field. Spatial contexts require a one-slice file.
    FieldFile { path: String },
}

fn fone() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDescriptor {
    Point { event: Vec<f64> },
    Ball { event: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    pub tolerance: f64,
    #[serde(default = "default_sense")]
    pub sense: Sense,
}

fn default_sense() -> Sense {
    Sense::Le
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub formats: Option<Vec<Format>>,
}

/// Overrides coming from outside the config file. `out_dir` is the already
/// resolved command line / environment override.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub formats: Option<Vec<Format>>,
    pub plot: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridEcho {
    pub nt: usize,
    pub nx: Vec<usize>,
    pub dt: f64,
    pub dx: Vec<f64>,
    pub max_light_speed: f64,
    pub cfl_ratio: f64,
    pub cfl_safety: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub grid: GridEcho,
    pub checks: Vec<SuiteCheck>,
    pub artifacts: Vec<String>,
    pub passed: bool,
    /// Stage timings in seconds; excluded from the serialised report so
    /// byte-identical reruns stay byte-identical.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        config.validate_checks()?;
        Ok(config)
    }

    /// Loads a config file; the returned base dir anchors relative
    /// field-file references.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let config = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok((config, base))
    }

    fn validate_checks(&self) -> Result<()> {
        let available = self.scenario.available_metrics();
        if matches!(self.scenario, ScenarioKind::Check { .. }) && !self.checks.is_empty() {
            return Err(Error::Config(
                "check scenarios take their metrics from the suite; leave `checks` empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &self.checks {
            if !(c.tolerance > 0.0) {
                return Err(Error::Config(format!(
                    "check {:?} needs a positive tolerance, got {}",
                    c.name, c.tolerance
                )));
            }
            if !available.contains(&c.name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown check {:?} for a {} scenario; available: {:?}",
                    c.name,
                    self.scenario.name(),
                    available
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("check {:?} declared twice", c.name)));
            }
        }
        Ok(())
    }
}

fn torus_gap(x: f64, c: f64, l: f64) -> f64 {
    let d = (x - c).rem_euclid(l);
    d.min(l - d)
}

fn lens_of(grid: &Grid) -> [f64; 2] {
    [grid.nx[0] as f64 * grid.dx[0], grid.nx[1] as f64 * grid.dx[1]]
}

/// Materialises a spatial profile at cell centers, component 0; length
/// cells * rank.
fn spatial_values(
    profile: &DataProfile,
    grid: &Grid,
    rank: usize,
    base: &Path,
    label: &str,
) -> Result<Vec<C64>> {
    let lens = lens_of(grid);
    let mut out = vec![C64::new(0.0, 0.0); grid.cells() * rank];
    match profile {
        DataProfile::Zero => {}
        DataProfile::Gaussian { center, width, amplitude } => {
            if center.len() != grid.dim {
                return Err(Error::Config(format!(
                    "{label}: gaussian center needs {} spatial coordinates, got {}",
                    grid.dim,
                    center.len()
                )));
            }
            if !(*width > 0.0) {
                return Err(Error::Config(format!("{label}: gaussian width must be positive")));
            }
            for cell in 0..grid.cells() {
                let x = grid.cell_center(cell);
                let mut d2 = torus_gap(x[0], center[0], lens[0]).powi(2);
                if grid.dim == 2 {
                    d2 += torus_gap(x[1], center[1], lens[1]).powi(2);
                }
                out[cell * rank] = C64::new(amplitude * (-0.5 * d2 / (width * width)).exp(), 0.0);
            }
        }
        DataProfile::Sine { k, amplitude, phase } => {
            if k.len() != grid.dim {
                return Err(Error::Config(format!(
                    "{label}: sine needs {} wave numbers, got {}",
                    grid.dim,
                    k.len()
                )));
            }
            for cell in 0..grid.cells() {
                let x = grid.cell_center(cell);
                let mut arg = *phase;
                for (i, &ki) in k.iter().enumerate() {
                    arg += std::f64::consts::TAU * ki as f64 * x[i] / lens[i];
                }
                out[cell * rank] = C64::new(amplitude * arg.sin(), 0.0);
            }
        }
        DataProfile::FieldFile { path } => {
            let loaded = io::load_field(&base.join(path))?;
            let s = &loaded.shape;
            if s.nt != 1 || s.nx != grid.nx || s.rank != rank {
                return Err(Error::Config(format!(
                    "{label}: expected a one-slice field of shape nx={:?} rank={rank}, found nt={} nx={:?} rank={}",
                    grid.nx, s.nt, s.nx, s.rank
                )));
            }
            out.copy_from_slice(&loaded.section.values);
        }
    }
    Ok(out)
}

/// Materialises a spacetime profile; gaussian centers carry the time
/// coordinate first.
fn spacetime_section(
    profile: &DataProfile,
    grid: &Grid,
    rank: usize,
    base: &Path,
    label: &str,
) -> Result<GridSection> {
    let lens = lens_of(grid);
    match profile {
        DataProfile::Zero => Ok(GridSection::zeros(grid, rank)),
        DataProfile::Gaussian { center, width, amplitude } => {
            if center.len() != grid.dim + 1 {
                return Err(Error::Config(format!(
                    "{label}: spacetime gaussian center needs {} coordinates (t first), got {}",
                    grid.dim + 1,
                    center.len()
                )));
            }
            if !(*width > 0.0) {
                return Err(Error::Config(format!("{label}: gaussian width must be positive")));
            }
            let (c, w, a) = (center.clone(), *width, *amplitude);
            let dim = grid.dim;
            Ok(GridSection::from_fn(grid, rank, move |t, x, k| {
                if k != 0 {
                    return C64::new(0.0, 0.0);
                }
                let mut d2 = (t - c[0]).powi(2) + torus_gap(x[0], c[1], lens[0]).powi(2);
                if dim == 2 {
                    d2 += torus_gap(x[1], c[2], lens[1]).powi(2);
                }
                C64::new(a * (-0.5 * d2 / (w * w)).exp(), 0.0)
            }))
        }
        DataProfile::Sine { k, amplitude, phase } => {
            if k.len() != grid.dim {
                return Err(Error::Config(format!(
                    "{label}: sine needs {} wave numbers, got {}",
                    grid.dim,
                    k.len()
                )));
            }
            let (kk, a, ph) = (k.clone(), *amplitude, *phase);
            Ok(GridSection::from_fn(grid, rank, move |_, x, comp| {
                if comp != 0 {
                    return C64::new(0.0, 0.0);
                }
                let mut arg = ph;
                for (i, &ki) in kk.iter().enumerate() {
                    arg += std::f64::consts::TAU * ki as f64 * x[i] / lens[i];
                }
                C64::new(a * arg.sin(), 0.0)
            }))
        }
        DataProfile::FieldFile { path } => {
            let loaded = io::load_field(&base.join(path))?;
            let s = &loaded.shape;
            if s.nt != grid.nt || s.nx != grid.nx || s.rank != rank {
                return Err(Error::Config(format!(
                    "{label}: field shape nt={} nx={:?} rank={} does not match grid nt={} nx={:?} rank={rank}",
                    s.nt, s.nx, s.rank, grid.nt, grid.nx
                )));
            }
            Ok(loaded.section)
        }
    }
}

fn require_profile<'a>(p: &'a Option<DataProfile>, label: &str) -> Result<&'a DataProfile> {
    p.as_ref().ok_or_else(|| Error::Config(format!("scenario needs data.{label}")))
}

pub fn build_set(desc: &SetDescriptor, spec: &SpacetimeSpec, grid: &Grid) -> Result<EventSet> {
    let point_of = |event: &Vec<f64>| -> Result<GridEvent> {
        if event.len() != grid.dim + 1 {
            return Err(Error::Config(format!(
                "set event needs {} coordinates (t first), got {}",
                grid.dim + 1,
                event.len()
            )));
        }
        let (slice, cell, _) = grid.nearest_event(spec, event[0], &event[1..])?;
        Ok(GridEvent { slice, cell })
    };
    match desc {
        SetDescriptor::Point { event } => Ok(EventSet::point(grid, point_of(event)?)),
        SetDescriptor::Ball { event, radius } => {
            if !(*radius > 0.0) {
                return Err(Error::Config("ball radius must be positive".into()));
            }
            let center = point_of(event)?;
            let lens = lens_of(grid);
            let cx = grid.cell_center(center.cell);
            let events = (0..grid.cells()).filter_map(|cell| {
                let x = grid.cell_center(cell);
                let mut d2 = torus_gap(x[0], cx[0], lens[0]).powi(2);
                if grid.dim == 2 {
                    d2 += torus_gap(x[1], cx[1], lens[1]).powi(2);
                }
                (d2.sqrt() <= *radius).then_some(GridEvent { slice: center.slice, cell })
            });
            Ok(EventSet::from_events(grid, events))
        }
    }
}

/// 0/1 raster of an event set, for writing cone masks as fields.
pub fn mask_section(grid: &Grid, set: &EventSet) -> GridSection {
    let mut m = GridSection::zeros(grid, 1);
    for e in set.events() {
        m.set(e.slice, e.cell, 0, C64::new(1.0, 0.0));
    }
    m
}

fn ensure_finite(label: &str, field: &GridSection) -> Result<()> {
    if field.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite(format!("{label} contains a non-finite value")));
    }
    Ok(())
}

/// Closed form of the integral of sech: the conformal horizon radius of the
/// cosh warp.
fn gudermannian(t: f64) -> f64 {
    2.0 * (0.5 * t).tanh().atan()
}

struct Emitter<'a> {
    dir: PathBuf,
    grid: &'a Grid,
    formats: Vec<Format>,
    plot: bool,
    manifest: Vec<String>,
}

impl<'a> Emitter<'a> {
    fn emit(&mut self, name: &str, field: &GridSection) -> Result<()> {
        for format in &self.formats {
            let file = match format {
                Format::Csv => {
                    let f = format!("{name}.csv");
                    io::save_text(&self.dir.join(&f), self.grid, field)?;
                    f
                }
                Format::Bin => {
                    let f = format!("{name}.wvlb");
                    io::save_binary(&self.dir.join(&f), self.grid, field)?;
                    f
                }
            };
            self.manifest.push(file);
        }
        if self.plot {
            let f = format!("{name}_plot.dat");
            let mut w = std::io::BufWriter::new(std::fs::File::create(self.dir.join(&f))?);
            io::write_plot(self.grid, field, &mut w)?;
            self.manifest.push(f);
        }
        Ok(())
    }
}

fn requested(checks: &[CheckSpec], name: &str) -> bool {
    checks.iter().any(|c| c.name == name)
}

/// Executes one scenario. Writes artifacts under the resolved output
/// directory, which the caller owns exclusively for the duration.
pub fn run_scenario(
    config: &ScenarioConfig,
    base_dir: &Path,
    options: &RunOptions,
) -> Result<RunReport> {
    config.validate_checks()?;
    let started = std::time::Instant::now();
    let mut timings = Vec::new();

    let spec = config.spacetime.build()?;
    let grid = config.grid.build(&spec)?;
    let validation = manifold::validate(&spec, &grid)?;
    let op = config.operator.build(&spec, &grid)?;
    let rank = op.rank;
    let seed = options.seed.or(config.seed).unwrap_or(suite::DEFAULT_SEED);

    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wavelab-out"));
    std::fs::create_dir_all(&out_dir)?;
    let formats = options
        .formats
        .clone()
        .or_else(|| config.output.formats.clone())
        .unwrap_or_else(|| vec![Format::Csv]);
    let mut emitter =
        Emitter { dir: out_dir, grid: &grid, formats, plot: options.plot, manifest: Vec::new() };
    timings.push(("build".into(), started.elapsed().as_secs_f64()));

    let stage = std::time::Instant::now();
    let mut checks: Vec<SuiteCheck> = Vec::new();
    let mut against = |spec_checks: &[CheckSpec], name: &str, value: f64| {
        for c in spec_checks {
            if c.name == name {
                checks.push(match c.sense {
                    Sense::Le => SuiteCheck::le(name, value, c.tolerance),
                    Sense::Ge => SuiteCheck::ge(name, value, c.tolerance),
                });
            }
        }
    };

    match &config.scenario {
        ScenarioKind::Cauchy => {
            let mut data = CauchyData::zero(&grid, rank, 0);
            data.u0 = spatial_values(require_profile(&config.data.u0, "u0")?, &grid, rank, base_dir, "u0")?;
            data.u1 = spatial_values(require_profile(&config.data.u1, "u1")?, &grid, rank, base_dir, "u1")?;
            if let Some(p) = &config.data.source {
                data = data.with_source(spacetime_section(p, &grid, rank, base_dir, "source")?);
            }
            let sol = solve(&op, &data)?;
            ensure_finite("solution", &sol.field)?;
            emitter.emit("solution", &sol.field)?;

            let scale = sol.field.max_abs().max(1e-30);
            against(
                &config.checks,
                "interior_residual",
                sol.report.interior_residual * grid.dt * grid.dt / scale,
            );
            if requested(&config.checks, "cone_leakage") {
                let supp = data.support(&grid, rank);
                against(
                    &config.checks,
                    "cone_leakage",
                    propagation_check(&op, &sol.field, &supp, SUPPORT_DILATION_CELLS),
                );
            }
            if requested(&config.checks, "convergence_ratio_deviation") {
                let value = convergence_deviation(config, base_dir, &spec, &grid, &sol.field)?;
                against(&config.checks, "convergence_ratio_deviation", value);
            }
        }
        ScenarioKind::Green { direction } => {
            let dir = direction.green();
            let phi = spacetime_section(require_profile(&config.data.phi, "phi")?, &grid, rank, base_dir, "phi")?;
            let field = green_apply(&op, dir, &phi)?;
            ensure_finite("green image", &field)?;
            emitter.emit("phi", &phi)?;
            emitter.emit("green", &field)?;

            if requested(&config.checks, "inverse_defect") {
                let back = op.apply(&field)?;
                let defect = interior_max_abs_diff(&back, &phi)?;
                against(
                    &config.checks,
                    "inverse_defect",
                    defect * grid.dt * grid.dt / phi.max_abs().max(1e-30),
                );
            }
            if requested(&config.checks, "cone_leakage") {
                let supp = phi.support(&grid, SUPPORT_THRESHOLD * phi.max_abs());
                against(
                    &config.checks,
                    "cone_leakage",
                    directional_leakage(&op, &field, &supp, SUPPORT_DILATION_CELLS, dir),
                );
            }
            if requested(&config.checks, "adjoint_identity_defect") {
                let mut rng = rng_for(seed, 0xADD0);
                let mut worst: f64 = 0.0;
                for _ in 0..3 {
                    let a = suite::random_padded_section(&grid, rank, 3, &mut rng);
                    let b = suite::random_padded_section(&grid, rank, 3, &mut rng);
                    worst = worst.max(adjoint_identity_check(&op, &a, &b)?);
                }
                against(&config.checks, "adjoint_identity_defect", worst);
            }
        }
        ScenarioKind::Causal { kappas } => {
            let desc = config
                .data
                .set
                .as_ref()
                .ok_or_else(|| Error::Config("scenario needs data.set".into()))?;
            let set = build_set(desc, &spec, &grid)?;
            if set.is_empty() {
                return Err(Error::Config("source set snapped to no grid events".into()));
            }
            let future = causal_future(&spec, &grid, &set);
            let past = causal_past(&spec, &grid, &set);
            emitter.emit("future", &mask_section(&grid, &future))?;
            emitter.emit("past", &mask_section(&grid, &past))?;

            if requested(&config.checks, "conformal_differing_cells") {
                let mut differing = 0usize;
                for &kappa in kappas {
                    let rep = conformal_invariance_check(&spec, &grid, &set, kappa)?;
                    differing += rep.causal_differing_cells + rep.chronological_differing_cells;
                }
                against(&config.checks, "conformal_differing_cells", differing as f64);
            }
            let cum = cumulative_light_integral(&spec, &grid);
            against(
                &config.checks,
                "light_reach_max",
                cum.iter().cloned().fold(0.0, f64::max),
            );
            if requested(&config.checks, "frontier_gudermannian_defect") {
                if config.spacetime.preset != Preset::Desitter
                    || config.spacetime.conformal_kappa.is_some()
                {
                    return Err(Error::Config(
                        "frontier_gudermannian_defect applies to the plain desitter preset".into(),
                    ));
                }
                let mut worst: f64 = 0.0;
                for (n, reach) in cum.iter().enumerate() {
                    let want = gudermannian(grid.t(n)) - gudermannian(spec.t_min);
                    worst = worst.max((reach - want).abs());
                }
                against(&config.checks, "frontier_gudermannian_defect", worst);
            }
        }
        ScenarioKind::DemoStrip { window, outside_event } => {
            let mut data = CauchyData::zero(&grid, rank, 0);
            data.u0 = spatial_values(require_profile(&config.data.u0, "u0")?, &grid, rank, base_dir, "u0")?;
            data.u1 = spatial_values(require_profile(&config.data.u1, "u1")?, &grid, rank, base_dir, "u1")?;
            if let Some(p) = &config.data.source {
                data = data.with_source(spacetime_section(p, &grid, rank, base_dir, "source")?);
            }
            if outside_event.len() != grid.dim + 1 {
                return Err(Error::Config(format!(
                    "outside_event needs {} coordinates (t first), got {}",
                    grid.dim + 1,
                    outside_event.len()
                )));
            }
            let (slice, cell, _) = grid.nearest_event(&spec, outside_event[0], &outside_event[1..])?;
            let report = demo_strip_nonuniqueness(&op, &data, (window[0], window[1]), GridEvent { slice, cell })?;
            ensure_finite("perturbed candidate", &report.perturbed)?;
            emitter.emit("base", &report.base)?;
            emitter.emit("perturbed", &report.perturbed)?;

            against(&config.checks, "initial_agreement", report.initial_agreement / report.scale);
            against(
                &config.checks,
                "strip_residual",
                report.base_residual.max(report.perturbed_residual) * grid.dt * grid.dt / report.scale,
            );
            against(&config.checks, "gap", report.gap / report.scale);
        }
        ScenarioKind::DemoCylinder => {
            let mut data = CauchyData::zero(&grid, rank, 0);
            data.u0 = spatial_values(require_profile(&config.data.u0, "u0")?, &grid, rank, base_dir, "u0")?;
            data.u1 = spatial_values(require_profile(&config.data.u1, "u1")?, &grid, rank, base_dir, "u1")?;
            let report = demo_cylinder_time(&op, &data)?;
            ensure_finite("solution", &report.solution.field)?;
            emitter.emit("solution", &report.solution.field)?;

            against(&config.checks, "periodicity_defect", report.relative_defect);
            against(
                &config.checks,
                "derivative_defect",
                report.derivative_defect / report.data_scale.max(1e-30),
            );
        }
        ScenarioKind::Check { suite: suite_name } => {
            let report = suite::run_suite(suite_name, seed)?;
            checks = report.checks;
        }
    }
    timings.push(("run".into(), stage.elapsed().as_secs_f64()));

    let passed = checks.iter().all(|c| c.pass);
    Ok(RunReport {
        name: config.name.clone().unwrap_or_else(|| config.scenario.name().into()),
        kind: config.scenario.name().into(),
        seed,
        grid: GridEcho {
            nt: grid.nt,
            nx: grid.nx[..grid.dim].to_vec(),
            dt: grid.dt,
            dx: grid.dx[..grid.dim].to_vec(),
            max_light_speed: validation.max_light_speed,
            cfl_ratio: validation.cfl_ratio,
            cfl_safety: validation.cfl_safety,
        },
        checks,
        artifacts: emitter.manifest,
        passed,
        timings,
    })
}

/// Re-solves at two dyadic coarsenings and compares on shared nodes; second
/// order convergence puts the error ratio near four.
fn convergence_deviation(
    config: &ScenarioConfig,
    base_dir: &Path,
    spec: &SpacetimeSpec,
    grid: &Grid,
    fine: &GridSection,
) -> Result<f64> {
    if (grid.nt - 1) % 4 != 0 || grid.nx[..grid.dim].iter().any(|&n| n % 4 != 0) {
        return Err(Error::Config(
            "convergence_ratio_deviation needs nt - 1 and nx divisible by 4".into(),
        ));
    }
    let mut solutions: Vec<(Grid, GridSection)> = Vec::new();
    for level in [4usize, 2] {
        let nx: Vec<usize> = grid.nx[..grid.dim].iter().map(|&n| n / level).collect();
        let g = Grid::new(spec, (grid.nt - 1) / level + 1, &nx, grid.cfl_safety)?;
        let o = config.operator.build(spec, &g)?;
        let mut data = CauchyData::zero(&g, o.rank, 0);
        data.u0 = spatial_values(require_profile(&config.data.u0, "u0")?, &g, o.rank, base_dir, "u0")?;
        data.u1 = spatial_values(require_profile(&config.data.u1, "u1")?, &g, o.rank, base_dir, "u1")?;
        if let Some(p) = &config.data.source {
            data = data.with_source(spacetime_section(p, &g, o.rank, base_dir, "source")?);
        }
        solutions.push((g, solve(&o, &data)?.field));
    }
    let diff_on = |coarse: &(Grid, GridSection), fine_grid: &Grid, fine_field: &GridSection, step: usize| -> f64 {
        let (cg, cf) = coarse;
        let mut worst: f64 = 0.0;
        for n in 0..cg.nt {
            for cell in 0..cg.cells() {
                let (jx, jy) = cg.cell_coords(cell);
                let fcell = fine_grid.cell_index(jx * step, jy * step);
                for k in 0..cf.rank {
                    worst = worst.max((cf.get(n, cell, k) - fine_field.get(n * step, fcell, k)).norm());
                }
            }
        }
        worst
    };
    let e1 = diff_on(&solutions[0], &solutions[1].0, &solutions[1].1, 2);
    let e2 = diff_on(&solutions[1], grid, fine, 2);
    Ok((e1 / e2.max(1e-300) - 4.0).abs())
}

/// Serialises a report with a stable layout, one check per line.
pub fn report_to_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialisation cannot fail")
}

/// Serialises a suite report the same way.
pub fn suite_report_to_json(report: &SuiteReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialisation cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_out(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("wavelab-scenario-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn cauchy_config(dir: &Path) -> String {
        format!(
            r#"{{
              "name": "gaussian-drop",
              "spacetime": {{"preset": "minkowski", "lengths": [6.283185307179586], "t_min": 0.0, "t_max": 1.2}},
              "grid": {{"nt": 65, "nx": [48]}},
              "scenario": {{"kind": "cauchy"}},
              "data": {{
                "u0": {{"profile": "gaussian", "center": [3.0], "width": 0.8}},
                "u1": {{"profile": "zero"}}
              }},
              "checks": [
                {{"name": "interior_residual", "tolerance": 1e-11}},
                {{"name": "cone_leakage", "tolerance": 1e-8}}
              ],
              "output": {{"dir": {:?}, "formats": ["csv", "bin"]}}
            }}"#,
            dir.to_str().unwrap()
        )
    }

    #[test]
    fn cauchy_scenario_runs_and_reports() {
        let dir = temp_out("cauchy");
        let config = ScenarioConfig::from_json(&cauchy_config(&dir)).unwrap();
        let report = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap();
        assert!(report.passed, "{:?}", report.checks);
        assert_eq!(report.checks.len(), 2);
        assert_eq!(report.artifacts, vec!["solution.csv", "solution.wvlb"]);
        assert!(dir.join("solution.csv").is_file());
        assert!(dir.join("solution.wvlb").is_file());
        assert!(report.grid.cfl_ratio <= report.grid.cfl_safety);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_keys_and_bad_checks_are_schema_errors() {
        let dir = temp_out("schema");
        let good = cauchy_config(&dir);
        let with_typo = good.replace("\"grid\"", "\"grids\"");
        assert!(matches!(ScenarioConfig::from_json(&with_typo), Err(Error::Config(_))));

        let bad_check = good.replace("interior_residual", "interior_residuals");
        assert!(matches!(ScenarioConfig::from_json(&bad_check), Err(Error::Config(_))));

        let negative = good.replace("\"tolerance\": 1e-11", "\"tolerance\": -1.0");
        assert!(matches!(ScenarioConfig::from_json(&negative), Err(Error::Config(_))));

        let duplicated = good.replace(
            "{\"name\": \"cone_leakage\", \"tolerance\": 1e-8}",
            "{\"name\": \"interior_residual\", \"tolerance\": 1e-8}",
        );
        assert!(matches!(ScenarioConfig::from_json(&duplicated), Err(Error::Config(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tiny_grids_are_rejected_before_running() {
        let dir = temp_out("tiny");
        let config_text = cauchy_config(&dir).replace("\"nt\": 65", "\"nt\": 2");
        let config = ScenarioConfig::from_json(&config_text).unwrap();
        let err = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)), "{err:?}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn blow_up_amplitudes_report_non_finite() {
        let dir = temp_out("blowup");
        let config_text = cauchy_config(&dir).replace("\"width\": 0.8", "\"width\": 0.8, \"amplitude\": 1e308");
        let config = ScenarioConfig::from_json(&config_text).unwrap();
        let err = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err:?}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn green_scenario_checks_pass() {
        let dir = temp_out("green");
        let text = format!(
            r#"{{
              "spacetime": {{"preset": "desitter", "lengths": [6.283185307179586], "t_min": 0.0, "t_max": 1.5}},
              "grid": {{"nt": 49, "nx": [36]}},
              "scenario": {{"kind": "green", "direction": "+"}},
              "data": {{"phi": {{"profile": "gaussian", "center": [0.75, 3.0], "width": 0.09}}}},
              "checks": [
                {{"name": "inverse_defect", "tolerance": 1e-11}},
                {{"name": "cone_leakage", "tolerance": 1e-8}},
                {{"name": "adjoint_identity_defect", "tolerance": 1e-11}}
              ],
              "output": {{"dir": {:?}}}
            }}"#,
            dir.to_str().unwrap()
        );
        let config = ScenarioConfig::from_json(&text).unwrap();
        let report = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap();
        assert!(report.passed, "{:?}", report.checks);
        assert_eq!(report.artifacts, vec!["phi.csv", "green.csv"]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn causal_scenario_measures_the_horizon() {
        let dir = temp_out("causal");
        let text = format!(
            r#"{{
              "spacetime": {{"preset": "desitter", "lengths": [12.566370614359172], "t_min": 0.0, "t_max": 3.0}},
              "grid": {{"nt": 257, "nx": [64]}},
              "scenario": {{"kind": "causal", "kappas": [1e-3, 1.0, 1e3]}},
              "data": {{"set": {{"point": {{"event": [0.0, 6.0]}}}}}},
              "checks": [
                {{"name": "conformal_differing_cells", "tolerance": 0.5}},
                {{"name": "light_reach_max", "tolerance": 1.5707963267948966}},
                {{"name": "frontier_gudermannian_defect", "tolerance": 1e-4}}
              ],
              "output": {{"dir": {:?}}}
            }}"#,
            dir.to_str().unwrap()
        );
        let config = ScenarioConfig::from_json(&text).unwrap();
        let report = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap();
        assert!(report.passed, "{:?}", report.checks);
        assert!(report.artifacts.contains(&"future.csv".to_string()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn field_file_round_trips_through_a_green_scenario() {
        let dir = temp_out("fieldfile");
        // stash a padded source section, then reference it from the config
        let spec = SpacetimeSpec::desitter(&[std::f64::consts::TAU], 0.0, 1.5).unwrap();
        let grid = Grid::new(&spec, 49, &[36], DEFAULT_CFL_SAFETY).unwrap();
        let mut rng = rng_for(11, 5);
        let phi = suite::random_padded_section(&grid, 1, 4, &mut rng);
        io::save_binary(&dir.join("phi_in.wvlb"), &grid, &phi).unwrap();
        let text = format!(
            r#"{{
              "spacetime": {{"preset": "desitter", "lengths": [6.283185307179586], "t_min": 0.0, "t_max": 1.5}},
              "grid": {{"nt": 49, "nx": [36]}},
              "scenario": {{"kind": "green", "direction": "-"}},
              "data": {{"phi": {{"profile": "field_file", "path": "phi_in.wvlb"}}}},
              "checks": [{{"name": "inverse_defect", "tolerance": 1e-11}}],
              "output": {{"dir": {:?}}}
            }}"#,
            dir.to_str().unwrap()
        );
        let config = ScenarioConfig::from_json(&text).unwrap();
        let report = run_scenario(&config, &dir, &RunOptions::default()).unwrap();
        assert!(report.passed, "{:?}", report.checks);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn check_scenario_embeds_a_suite_and_rejects_extra_checks() {
        let dir = temp_out("check");
        let text = format!(
            r#"{{
              "spacetime": {{"preset": "minkowski", "lengths": [6.283185307179586], "t_min": 0.0, "t_max": 1.0}},
              "grid": {{"nt": 17, "nx": [12]}},
              "scenario": {{"kind": "check", "suite": "sections"}},
              "output": {{"dir": {:?}}}
            }}"#,
            dir.to_str().unwrap()
        );
        let config = ScenarioConfig::from_json(&text).unwrap();
        let report = run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap();
        assert!(report.passed);
        assert!(report.checks.iter().all(|c| c.name.starts_with("sections.")));

        let with_checks = text.replace(
            "\"output\"",
            "\"checks\": [{\"name\": \"x\", \"tolerance\": 1.0}], \"output\"",
        );
        assert!(matches!(ScenarioConfig::from_json(&with_checks), Err(Error::Config(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn reports_serialise_identically_across_runs() {
        let dir = temp_out("determinism");
        let config = ScenarioConfig::from_json(&cauchy_config(&dir)).unwrap();
        let a = report_to_json(&run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap());
        let b = report_to_json(&run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap());
        assert_eq!(a, b);
        let bytes_a = std::fs::read(dir.join("solution.wvlb")).unwrap();
        let csv_a = std::fs::read(dir.join("solution.csv")).unwrap();
        run_scenario(&config, Path::new("."), &RunOptions::default()).unwrap();
        assert_eq!(bytes_a, std::fs::read(dir.join("solution.wvlb")).unwrap());
        assert_eq!(csv_a, std::fs::read(dir.join("solution.csv")).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
