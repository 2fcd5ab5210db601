//! Spacetime slabs `[t_min, t_max] x T^d` with metric
//! `g = -beta(t) dt^2 + f(t)^2 dx^2` on a flat torus, plus the uniform
//! space-time grid all other modules share.
//!
//! A conformal factor `kappa` is carried symbolically: it rescales `beta`
//! and `f^2` in all metric data, while the coordinate light speed
//! `c(t) = sqrt(beta)/f` is computed on the unscaled functions because the
//! factor cancels identically. Causal predicates therefore agree bit for bit
//! under conformal scaling.

use crate::error::{Error, Result};

/// Samples used when certifying positivity of `beta` and `f` over the slab.
pub const VALIDATION_SAMPLES: usize = 4096;

/// Coefficient function of time: preset closed forms or a cubic spline
/// through tabulated samples.
#[derive(Debug, Clone)]
pub enum TimeFunction {
    Constant(f64),
    Cosh,
    /// Coefficients in ascending order: c0 + c1 t + c2 t^2 + ...
    Polynomial(Vec<f64>),
    Tabulated(Spline),
}

impl TimeFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Cosh => t.cosh(),
            TimeFunction::Polynomial(c) => horner(c, t),
            TimeFunction::Tabulated(s) => s.eval(t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(_) => 0.0,
            TimeFunction::Cosh => t.sinh(),
            TimeFunction::Polynomial(c) => horner_deriv(c, t),
            TimeFunction::Tabulated(s) => s.deriv(t),
        }
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(_) => 0.0,
            TimeFunction::Cosh => t.cosh(),
            TimeFunction::Polynomial(c) => horner_deriv2(c, t),
            TimeFunction::Tabulated(s) => s.deriv2(t),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        match self {
            TimeFunction::Constant(c) if !c.is_finite() => {
                Err(Error::InvalidSpacetime(format!("{what}: non-finite constant")))
            }
            TimeFunction::Polynomial(c) if c.is_empty() => {
                Err(Error::InvalidSpacetime(format!("{what}: empty polynomial")))
            }
            TimeFunction::Polynomial(c) if c.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidSpacetime(format!("{what}: non-finite coefficient")))
            }
            _ => Ok(()),
        }
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

fn horner_deriv(c: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for k in (1..c.len()).rev() {
        acc = acc * t + c[k] * k as f64;
    }
    acc
}

fn horner_deriv2(c: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for k in (2..c.len()).rev() {
        acc = acc * t + c[k] * (k * (k - 1)) as f64;
    }
    acc
}

/// Natural cubic spline through strictly increasing knots. Natural end
/// conditions cost an O(h^2) boundary layer in the first derivative near
/// the table ends; sample generously past the slab if that matters.
/// Evaluation outside the table extends the end polynomials;
/// `SpacetimeSpec::validate` requires the table to cover the slab.
#[derive(Debug, Clone)]
pub struct Spline {
    ts: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (natural: zero at the ends).
    m: Vec<f64>,
}

impl Spline {
    pub fn new(ts: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if ts.len() < 2 || ts.len() != ys.len() {
            return Err(Error::InvalidSpacetime(
                "tabulated function needs at least two samples, times and values of equal length".into(),
            ));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpacetime("tabulated times must be strictly increasing".into()));
        }
        if ts.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpacetime("tabulated samples must be finite".into()));
        }
        let n = ts.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = ts[i] - ts[i - 1];
                let h1 = ts[i + 1] - ts[i];
                sub[i] = h0 / 6.0;
                diag[i] = (h0 + h1) / 3.0;
                sup[i] = h1 / 6.0;
                rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
            }
            for i in 2..n - 1 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[n - 2] = rhs[n - 2] / diag[n - 2];
            for i in (1..n - 2).rev() {
                m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
            }
        }
        Ok(Self { ts, ys, m })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.ts.len();
        match self.ts.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        a * self.m[i] + b * self.m[i + 1]
    }

    pub fn range(&self) -> (f64, f64) {
        (self.ts[0], *self.ts.last().unwrap())
    }
}

/// Flat torus `T^d`, d = 1 or 2, with per-axis periods.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialManifold {
    pub dim: usize,
    pub lengths: [f64; 2],
}

impl SpatialManifold {
    pub fn torus(lengths: &[f64]) -> Result<Self> {
        let dim = lengths.len();
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidSpacetime(format!("spatial dim must be 1 or 2, got {dim}")));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidSpacetime("torus periods must be positive and finite".into()));
        }
        let mut ls = [0.0; 2];
        ls[..dim].copy_from_slice(lengths);
        Ok(Self { dim, lengths: ls })
    }

    /// Geodesic distance on the flat torus between coordinate points.
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let l = self.lengths[i];
            let mut d = (a[i] - b[i]).abs() % l;
            if d > l / 2.0 {
                d = l - d;
            }
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Largest possible distance between two points.
    pub fn diameter(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let h = self.lengths[i] / 2.0;
            acc += h * h;
        }
        acc.sqrt()
    }
}

/// Description of the metric data at a fixed time, with the conformal
/// factor folded in.
#[derive(Debug, Clone, Copy)]
pub struct MetricData {
    pub beta: f64,
    pub warp: f64,
    pub g_tt_inv: f64,
    pub g_xx_inv: f64,
    pub vol_density: f64,
}

/// Warped-product slab spacetime. `conformal_factor` multiplies the whole
/// metric; see the module docs for how it is threaded through.
#[derive(Debug, Clone)]
pub struct SpacetimeSpec {
    pub spatial: SpatialManifold,
    pub beta: TimeFunction,
    pub warp: TimeFunction,
    pub t_min: f64,
    pub t_max: f64,
    pub conformal_factor: f64,
}

impl SpacetimeSpec {
    pub fn new(
        spatial: SpatialManifold,
        beta: TimeFunction,
        warp: TimeFunction,
        t_min: f64,
        t_max: f64,
    ) -> Result<Self> {
        let spec = Self { spatial, beta, warp, t_min, t_max, conformal_factor: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    /// Minkowski cylinder/torus: beta = 1, f = 1.
    pub fn minkowski(lengths: &[f64], t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(
            SpatialManifold::torus(lengths)?,
            TimeFunction::Constant(1.0),
            TimeFunction::Constant(1.0),
            t_min,
            t_max,
        )
    }

    /// Constant lapse rescale: beta = beta0, f = 1.
    pub fn rescaled(lengths: &[f64], beta0: f64, t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(
            SpatialManifold::torus(lengths)?,
            TimeFunction::Constant(beta0),
            TimeFunction::Constant(1.0),
            t_min,
            t_max,
        )
    }

    /// Expanding warp f = cosh t, beta = 1 (compactified deSitter-type slab).
    pub fn desitter(lengths: &[f64], t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(
            SpatialManifold::torus(lengths)?,
            TimeFunction::Constant(1.0),
            TimeFunction::Cosh,
            t_min,
            t_max,
        )
    }

    pub fn dim(&self) -> usize {
        self.spatial.dim
    }

    /// Multiply the metric by `kappa > 0`: beta -> kappa beta, f -> sqrt(kappa) f.
    pub fn conformal_scale(&self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidSpacetime(format!("conformal factor must be positive, got {kappa}")));
        }
        let mut s = self.clone();
        s.conformal_factor *= kappa;
        Ok(s)
    }

    /// Slab reflected in time: t -> -t. Used to derive past cones from
    /// future cones; the reflected coefficient evaluations are bitwise equal
    /// to the originals at mirrored times.
    pub fn time_reflected(&self) -> Self {
        let mut s = self.clone();
        s.t_min = -self.t_max;
        s.t_max = -self.t_min;
        s.beta = reflect(&self.beta);
        s.warp = reflect(&self.warp);
        s
    }

    /// Effective (conformally scaled) beta and its t-derivatives.
    pub fn beta_eff(&self, t: f64) -> f64 {
        self.conformal_factor * self.beta.eval(t)
    }
    pub fn beta_eff_d(&self, t: f64) -> f64 {
        self.conformal_factor * self.beta.deriv(t)
    }
    pub fn beta_eff_dd(&self, t: f64) -> f64 {
        self.conformal_factor * self.beta.deriv2(t)
    }

    /// Effective warp and its t-derivatives.
    pub fn warp_eff(&self, t: f64) -> f64 {
        self.conformal_factor.sqrt() * self.warp.eval(t)
    }
    pub fn warp_eff_d(&self, t: f64) -> f64 {
        self.conformal_factor.sqrt() * self.warp.deriv(t)
    }
    pub fn warp_eff_dd(&self, t: f64) -> f64 {
        self.conformal_factor.sqrt() * self.warp.deriv2(t)
    }

    /// Coordinate light speed c(t) = sqrt(beta)/f. The conformal factor
    /// cancels in this ratio and is deliberately not applied, so causal
    /// predicates are exactly conformally invariant.
    pub fn light_speed(&self, t: f64) -> f64 {
        self.beta.eval(t).sqrt() / self.warp.eval(t)
    }

    pub fn metric_data(&self, t: f64) -> MetricData {
        let beta = self.beta_eff(t);
        let warp = self.warp_eff(t);
        MetricData {
            beta,
            warp,
            g_tt_inv: -1.0 / beta,
            g_xx_inv: 1.0 / (warp * warp),
            vol_density: beta.sqrt() * warp.powi(self.dim() as i32),
        }
    }

    /// sqrt|g| at time t.
    pub fn vol_density(&self, t: f64) -> f64 {
        self.beta_eff(t).sqrt() * self.warp_eff(t).powi(self.dim() as i32)
    }

    /// Positivity and shape certification: beta, f sampled at
    /// `VALIDATION_SAMPLES` points across the slab, strict positivity and
    /// finiteness required everywhere.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::InvalidSpacetime(format!(
                "need t_min < t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        self.beta.check("beta")?;
        self.warp.check("warp")?;
        if let TimeFunction::Tabulated(s) = &self.beta {
            let (lo, hi) = s.range();
            if lo > self.t_min || hi < self.t_max {
                return Err(Error::InvalidSpacetime(format!(
                    "tabulated beta covers [{lo}, {hi}], slab is [{}, {}]",
                    self.t_min, self.t_max
                )));
            }
        }
        if let TimeFunction::Tabulated(s) = &self.warp {
            let (lo, hi) = s.range();
            if lo > self.t_min || hi < self.t_max {
                return Err(Error::InvalidSpacetime(format!(
                    "tabulated warp covers [{lo}, {hi}], slab is [{}, {}]",
                    self.t_min, self.t_max
                )));
            }
        }
        for k in 0..VALIDATION_SAMPLES {
            let t = self.t_min
                + (self.t_max - self.t_min) * k as f64 / (VALIDATION_SAMPLES - 1) as f64;
            let b = self.beta.eval(t);
            let f = self.warp.eval(t);
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::InvalidSpacetime(format!("beta(t) = {b} not positive at t = {t}")));
            }
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidSpacetime(format!("warp f(t) = {f} not positive at t = {t}")));
            }
        }
        Ok(())
    }

    /// Max of c(t) over the slab, sampled densely plus at grid slices.
    pub fn max_light_speed(&self, grid: &Grid) -> f64 {
        let mut cmax: f64 = 0.0;
        for k in 0..VALIDATION_SAMPLES {
            let t = self.t_min
                + (self.t_max - self.t_min) * k as f64 / (VALIDATION_SAMPLES - 1) as f64;
            cmax = cmax.max(self.light_speed(t));
        }
        for n in 0..grid.nt {
            cmax = cmax.max(self.light_speed(grid.t(n)));
        }
        cmax
    }
}

fn reflect(f: &TimeFunction) -> TimeFunction {
    match f {
        TimeFunction::Constant(c) => TimeFunction::Constant(*c),
        TimeFunction::Cosh => TimeFunction::Cosh,
        TimeFunction::Polynomial(c) => TimeFunction::Polynomial(
            c.iter().enumerate().map(|(k, &v)| if k % 2 == 1 { -v } else { v }).collect(),
        ),
        TimeFunction::Tabulated(s) => {
            let ts: Vec<f64> = s.ts.iter().rev().map(|&t| -t).collect();
            let ys: Vec<f64> = s.ys.iter().rev().copied().collect();
            TimeFunction::Tabulated(Spline::new(ts, ys).expect("reflected spline"))
        }
    }
}

/// Uniform grid over the slab: nt slices including both ends, nx periodic
/// cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nt: usize,
    pub nx: [usize; 2],
    pub dim: usize,
    pub t_min: f64,
    pub dt: f64,
    pub dx: [f64; 2],
    pub cfl_safety: f64,
}

impl Grid {
    pub fn new(spec: &SpacetimeSpec, nt: usize, nx: &[usize], cfl_safety: f64) -> Result<Self> {
        if nt < 3 {
            return Err(Error::InvalidGrid(format!("need nt >= 3, got {nt}")));
        }
        if nx.len() != spec.dim() {
            return Err(Error::InvalidGrid(format!(
                "grid has {} spatial axes, spacetime has {}",
                nx.len(),
                spec.dim()
            )));
        }
        if nx.iter().any(|&n| n < 4) {
            return Err(Error::InvalidGrid(format!("need nx >= 4 per axis, got {nx:?}")));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(Error::InvalidGrid(format!("cfl safety must lie in (0, 1], got {cfl_safety}")));
        }
        let dim = spec.dim();
        let mut nxs = [1usize; 2];
        nxs[..dim].copy_from_slice(nx);
        let mut dx = [0.0f64; 2];
        for i in 0..dim {
            dx[i] = spec.spatial.lengths[i] / nxs[i] as f64;
        }
        Ok(Self {
            nt,
            nx: nxs,
            dim,
            t_min: spec.t_min,
            dt: (spec.t_max - spec.t_min) / (nt - 1) as f64,
            dx,
            cfl_safety,
        })
    }

    pub fn t(&self, n: usize) -> f64 {
        self.t_min + n as f64 * self.dt
    }

    pub fn cells(&self) -> usize {
        self.nx[0] * self.nx[1]
    }

    pub fn nodes(&self) -> usize {
        self.nt * self.cells()
    }

    pub fn node(&self, slice: usize, cell: usize) -> usize {
        slice * self.cells() + cell
    }

    pub fn cell_index(&self, jx: usize, jy: usize) -> usize {
        jy * self.nx[0] + jx
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx[0], cell / self.nx[0])
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (jx, jy) = self.cell_coords(cell);
        [jx as f64 * self.dx[0], jy as f64 * self.dx[1]]
    }

    /// Half of the cell diagonal: the rasterisation rounding margin.
    pub fn half_cell_diagonal(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += self.dx[i] * self.dx[i];
        }
        acc.sqrt() / 2.0
    }

    pub fn min_dx(&self) -> f64 {
        let mut m = self.dx[0];
        for i in 1..self.dim {
            m = m.min(self.dx[i]);
        }
        m
    }

    /// Snap continuous coordinates to the nearest grid event. Returns the
    /// event and the snap distance in (t, x) coordinates.
    pub fn nearest_event(&self, spec: &SpacetimeSpec, t: f64, x: &[f64]) -> Result<(usize, usize, f64)> {
        if x.len() != self.dim {
            return Err(Error::OffGrid(format!("point has {} spatial coords, grid has {}", x.len(), self.dim)));
        }
        if t < self.t_min - 0.5 * self.dt || t > self.t(self.nt - 1) + 0.5 * self.dt {
            return Err(Error::OffGrid(format!("t = {t} outside the slab")));
        }
        let n = (((t - self.t_min) / self.dt).round().max(0.0) as usize).min(self.nt - 1);
        let mut js = [0usize; 2];
        let mut snap2 = (t - self.t(n)) * (t - self.t(n));
        for i in 0..self.dim {
            let l = spec.spatial.lengths[i];
            let xi = x[i].rem_euclid(l);
            let j = ((xi / self.dx[i]).round() as usize) % self.nx[i];
            js[i] = j;
            let mut d = (xi - j as f64 * self.dx[i]).abs();
            if d > l / 2.0 {
                d = l - d;
            }
            snap2 += d * d;
        }
        Ok((n, self.cell_index(js[0], js[1]), snap2.sqrt()))
    }

    /// Scalar volume weight at a node: sqrt|g| dt dx, with the time factor
    /// halved on the two boundary slices so that sums over nodes integrate
    /// constants exactly (trapezoid in time, periodic in space).
    pub fn volume_weight(&self, spec: &SpacetimeSpec, slice: usize, _cell: usize) -> f64 {
        let theta = if slice == 0 || slice == self.nt - 1 { 0.5 } else { 1.0 };
        let mut w = spec.vol_density(self.t(slice)) * self.dt * theta;
        for i in 0..self.dim {
            w *= self.dx[i];
        }
        w
    }

    /// All volume weights, node-major.
    pub fn volume_weights(&self, spec: &SpacetimeSpec) -> Vec<f64> {
        let cells = self.cells();
        let mut w = Vec::with_capacity(self.nodes());
        for n in 0..self.nt {
            let wn = self.volume_weight(spec, n, 0);
            w.extend(std::iter::repeat(wn).take(cells));
        }
        w
    }
}

/// Certification of a (spec, grid) pair: spacetime shape, grid invariants
/// and the CFL margin.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub max_light_speed: f64,
    pub cfl_ratio: f64,
    pub cfl_safety: f64,
    pub max_admissible_dt: f64,
}

pub fn validate(spec: &SpacetimeSpec, grid: &Grid) -> Result<ValidationReport> {
    spec.validate()?;
    let cmax = spec.max_light_speed(grid);
    let ratio = cmax * grid.dt / grid.min_dx();
    let report = ValidationReport {
        max_light_speed: cmax,
        cfl_ratio: ratio,
        cfl_safety: grid.cfl_safety,
        max_admissible_dt: grid.cfl_safety * grid.min_dx() / cmax,
    };
    if ratio > grid.cfl_safety {
        return Err(Error::CflViolation {
            ratio,
            eta: grid.cfl_safety,
            max_dt: report.max_admissible_dt,
        });
    }
    Ok(report)
}
