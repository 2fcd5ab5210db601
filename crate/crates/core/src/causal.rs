//! Causal structure on the slab: rasterised `J`/`I` cone sets driven by a
//! continuous frontier radius, achronality tests for graph hypersurfaces,
//! and the conformal-invariance certificate.
//!
//! A causal curve satisfies `f(t)^2 |dx/dt|^2 <= beta(t)`, so cones grow in
//! coordinate radius at `c(t) = sqrt(beta)/f`. Frontier radii are the
//! differences of one canonical cumulative trapezoid integral of `c` over
//! the slices; both cone directions read the same array, which makes the
//! future/past membership duality exact in floating point. Rasterisation
//! rounds outward by half a cell diagonal for `J` (closed) and inward for
//! `I` (open), so `I` is always contained in `J`.

use crate::error::{Error, Result};
use crate::manifold::{Grid, SpacetimeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridEvent {
    pub slice: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Future,
    Past,
}

/// Fixed-size bitmask over the spatial cells of one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmask {
    bits: Vec<u64>,
    len: usize,
}

impl Bitmask {
    pub fn empty(len: usize) -> Self {
        Self { bits: vec![0; (len + 63) / 64], len }
    }

    pub fn full(len: usize) -> Self {
        let mut m = Self::empty(len);
        for i in 0..len {
            m.insert(i);
        }
        m
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.bits[i / 64] |= 1u64 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.bits[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &Self) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &Self) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }
}

/// Set of grid events, stored as one bitmask per time slice. When the set
/// was generated by cone propagation from a single event the continuous
/// frontier radii are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    pub nt: usize,
    pub cells: usize,
    pub slices: Vec<Bitmask>,
    pub frontier: Option<Frontier>,
}

/// Continuous frontier radius per slice for a single-source cone.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub source: GridEvent,
    pub direction: Direction,
    /// (slice, radius) for every slice the cone meets, source slice included
    /// with radius zero.
    pub radii: Vec<(usize, f64)>,
}

impl EventSet {
    pub fn empty(grid: &Grid) -> Self {
        Self {
            nt: grid.nt,
            cells: grid.cells(),
            slices: vec![Bitmask::empty(grid.cells()); grid.nt],
            frontier: None,
        }
    }

    pub fn point(grid: &Grid, e: GridEvent) -> Self {
        let mut s = Self::empty(grid);
        s.slices[e.slice].insert(e.cell);
        s
    }

    pub fn from_events<I: IntoIterator<Item = GridEvent>>(grid: &Grid, events: I) -> Self {
        let mut s = Self::empty(grid);
        for e in events {
            s.slices[e.slice].insert(e.cell);
        }
        s
    }

    pub fn full_slice(grid: &Grid, slice: usize) -> Self {
        let mut s = Self::empty(grid);
        s.slices[slice] = Bitmask::full(grid.cells());
        s
    }

    pub fn contains(&self, e: GridEvent) -> bool {
        e.slice < self.nt && self.slices[e.slice].contains(e.cell)
    }

    pub fn count(&self) -> usize {
        self.slices.iter().map(|m| m.count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.frontier = None;
        for (a, b) in out.slices.iter_mut().zip(&other.slices) {
            a.union_with(b);
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.frontier = None;
        for (a, b) in out.slices.iter_mut().zip(&other.slices) {
            a.intersect_with(b);
        }
        out
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.slices.iter().zip(&other.slices).all(|(a, b)| a.is_subset_of(b))
    }

    /// Cells in `self` but not in `other`, counted.
    pub fn differing_cells(&self, other: &Self) -> usize {
        let mut n = 0;
        for (a, b) in self.slices.iter().zip(&other.slices) {
            for i in a.iter() {
                if !b.contains(i) {
                    n += 1;
                }
            }
            for i in b.iter() {
                if !a.contains(i) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn events(&self) -> Vec<GridEvent> {
        let mut out = Vec::new();
        for (slice, mask) in self.slices.iter().enumerate() {
            for cell in mask.iter() {
                out.push(GridEvent { slice, cell });
            }
        }
        out
    }

    /// Morphological dilation by `m` cells per spatial axis (Chebyshev box),
    /// wrapping around the torus. Time slices are not mixed.
    pub fn dilate(&self, grid: &Grid, m: usize) -> Self {
        let mut out = self.clone();
        out.frontier = None;
        if m == 0 {
            return out;
        }
        let (nx, ny) = (grid.nx[0], grid.nx[1]);
        for (slice, mask) in self.slices.iter().enumerate() {
            let mut new_mask = mask.clone();
            for cell in mask.iter() {
                let (jx, jy) = grid.cell_coords(cell);
                let yr = if grid.dim == 2 { m as isize } else { 0 };
                for wy in -yr..=yr {
                    for wx in -(m as isize)..=(m as isize) {
                        let x = (jx as isize + wx).rem_euclid(nx as isize) as usize;
                        let y = (jy as isize + wy).rem_euclid(ny as isize) as usize;
                        new_mask.insert(grid.cell_index(x, y));
                    }
                }
            }
            out.slices[slice] = new_mask;
        }
        out
    }

    /// min/max slice and per-axis index ranges of the occupied cells.
    pub fn bounding_box(&self, grid: &Grid) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for (slice, mask) in self.slices.iter().enumerate() {
            for cell in mask.iter() {
                let (jx, jy) = grid.cell_coords(cell);
                let b = bb.get_or_insert(BoundingBox {
                    slice_min: slice,
                    slice_max: slice,
                    x_min: jx,
                    x_max: jx,
                    y_min: jy,
                    y_max: jy,
                });
                b.slice_min = b.slice_min.min(slice);
                b.slice_max = b.slice_max.max(slice);
                b.x_min = b.x_min.min(jx);
                b.x_max = b.x_max.max(jx);
                b.y_min = b.y_min.min(jy);
                b.y_max = b.y_max.max(jy);
            }
        }
        bb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub slice_min: usize,
    pub slice_max: usize,
    pub x_min: usize,
    pub x_max: usize,
    pub y_min: usize,
    pub y_max: usize,
}

/// Torus distance between two cells, computed from index differences so
/// aligned grids produce exactly representable distances.
pub fn cell_distance(grid: &Grid, a: usize, b: usize) -> f64 {
    let (ax, ay) = grid.cell_coords(a);
    let (bx, by) = grid.cell_coords(b);
    let wrap = |j: usize, k: usize, n: usize| -> usize {
        let d = j.abs_diff(k);
        d.min(n - d)
    };
    let kx = wrap(ax, bx, grid.nx[0]) as f64 * grid.dx[0];
    if grid.dim == 1 {
        kx
    } else {
        let ky = wrap(ay, by, grid.nx[1]) as f64 * grid.dx[1];
        (kx * kx + ky * ky).sqrt()
    }
}

/// Canonical cumulative trapezoid integral of the light speed over the
/// slices: `C[0] = 0`, `C[n+1] = C[n] + dt (c_n + c_{n+1})/2`. Every frontier
/// radius in this module is a difference of entries of this array.
pub fn cumulative_light_integral(spec: &SpacetimeSpec, grid: &Grid) -> Vec<f64> {
    let c: Vec<f64> = (0..grid.nt).map(|n| spec.light_speed(grid.t(n))).collect();
    let mut cum = Vec::with_capacity(grid.nt);
    let mut acc = 0.0;
    cum.push(0.0);
    for n in 0..grid.nt - 1 {
        acc += grid.dt * (c[n] + c[n + 1]) / 2.0;
        cum.push(acc);
    }
    cum
}

struct ConePair {
    causal: EventSet,
    chronological: EventSet,
}

/// Shared cone engine. Sources grouped by slice; each group gets one
/// distance field, then every slice in the chosen direction is rasterised
/// against the frontier radius.
fn cone(spec: &SpacetimeSpec, grid: &Grid, sources: &EventSet, dir: Direction) -> ConePair {
    let cum = cumulative_light_integral(spec, grid);
    let h2 = grid.half_cell_diagonal();
    let cells = grid.cells();
    let mut causal = EventSet::empty(grid);
    let mut chron = EventSet::empty(grid);

    let mut single: Option<GridEvent> = None;
    if sources.count() == 1 {
        single = sources.events().first().copied();
    }

    for (ns, mask) in sources.slices.iter().enumerate() {
        if mask.count() == 0 {
            continue;
        }
        // distance to the source cells of this slice
        let src: Vec<usize> = mask.iter().collect();
        let mut dist = vec![f64::INFINITY; cells];
        for (cell, d) in dist.iter_mut().enumerate() {
            for &s in &src {
                let v = cell_distance(grid, cell, s);
                if v < *d {
                    *d = v;
                }
            }
        }
        let range: Box<dyn Iterator<Item = usize>> = match dir {
            Direction::Future => Box::new(ns..grid.nt),
            Direction::Past => Box::new((0..=ns).rev()),
        };
        for n in range {
            let r = match dir {
                Direction::Future => cum[n] - cum[ns],
                Direction::Past => cum[ns] - cum[n],
            };
            let r_out = r + h2;
            let r_in = r - h2;
            for (cell, &d) in dist.iter().enumerate() {
                if d <= r_out {
                    causal.slices[n].insert(cell);
                    if d < r_in {
                        chron.slices[n].insert(cell);
                    }
                }
            }
        }
    }

    if let Some(source) = single {
        let radii: Vec<(usize, f64)> = match dir {
            Direction::Future => (source.slice..grid.nt).map(|n| (n, cum[n] - cum[source.slice])).collect(),
            Direction::Past => (0..=source.slice).map(|n| (n, cum[source.slice] - cum[n])).collect(),
        };
        causal.frontier = Some(Frontier { source, direction: dir, radii });
    }
    ConePair { causal, chronological: chron }
}

pub fn causal_future(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet) -> EventSet {
    cone(spec, grid, a, Direction::Future).causal
}

pub fn causal_past(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet) -> EventSet {
    cone(spec, grid, a, Direction::Past).causal
}

pub fn chronological_future(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet) -> EventSet {
    cone(spec, grid, a, Direction::Future).chronological
}

pub fn chronological_past(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet) -> EventSet {
    cone(spec, grid, a, Direction::Past).chronological
}

/// J(A) = J+(A) union J-(A).
pub fn causal_hull(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet) -> EventSet {
    causal_future(spec, grid, a).union(&causal_past(spec, grid, a))
}

#[derive(Debug, Clone)]
pub struct DiamondReport {
    pub set: EventSet,
    pub is_empty: bool,
    pub cell_count: usize,
    pub bounding_box: Option<BoundingBox>,
}

/// J+(p) intersect J-(q), with an emptiness flag when q is not causally
/// after p.
pub fn causal_diamond(spec: &SpacetimeSpec, grid: &Grid, p: GridEvent, q: GridEvent) -> DiamondReport {
    let fut = causal_future(spec, grid, &EventSet::point(grid, p));
    let past = causal_past(spec, grid, &EventSet::point(grid, q));
    let set = fut.intersection(&past);
    let count = set.count();
    DiamondReport {
        is_empty: count == 0 || !fut.contains(q),
        cell_count: count,
        bounding_box: set.bounding_box(grid),
        set,
    }
}

/// Graph hypersurface t = h(x) over the spatial torus. Partial graphs are
/// representable; predicates that require totality report it.
#[derive(Debug, Clone)]
pub struct GraphHypersurface {
    pub values: Vec<Option<f64>>,
}

impl GraphHypersurface {
    pub fn from_fn<F: Fn([f64; 2]) -> f64>(grid: &Grid, f: F) -> Self {
        let values = (0..grid.cells()).map(|c| Some(f(grid.cell_center(c)))).collect();
        Self { values }
    }

    pub fn fully_defined(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct AchronalReport {
    pub achronal: bool,
    pub acausal: bool,
    /// First chronal pair found: (cell_a, cell_b, time needed, time available).
    pub violation: Option<(usize, usize, f64, f64)>,
}

/// Fine cumulative integral of c over the slab for off-slice time bounds.
struct FineIntegral {
    t_min: f64,
    h: f64,
    cum: Vec<f64>,
}

impl FineIntegral {
    fn build(spec: &SpacetimeSpec, grid: &Grid) -> Self {
        let m = (4 * grid.nt).max(4096);
        let t_min = spec.t_min;
        let h = (spec.t_max - spec.t_min) / m as f64;
        let c: Vec<f64> = (0..=m).map(|k| spec.light_speed(t_min + k as f64 * h)).collect();
        let mut cum = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for k in 0..m {
            acc += h * (c[k] + c[k + 1]) / 2.0;
            cum.push(acc);
        }
        Self { t_min, h, cum }
    }

    /// Integral of c from t_min to t, linear interpolation between samples.
    fn at(&self, t: f64) -> f64 {
        let s = (t - self.t_min) / self.h;
        let k = (s.floor().max(0.0) as usize).min(self.cum.len() - 2);
        let frac = s - k as f64;
        self.cum[k] + frac * (self.cum[k + 1] - self.cum[k])
    }
}

/// All-pairs achronality test: a pair (x, y) of graph points is timelike
/// related iff the light integral between their times strictly exceeds the
/// torus distance, causally related iff it reaches it.
pub fn is_achronal(spec: &SpacetimeSpec, grid: &Grid, h: &GraphHypersurface) -> Result<AchronalReport> {
    if h.values.len() != grid.cells() {
        return Err(Error::Domain(format!(
            "graph has {} values, grid has {} cells",
            h.values.len(),
            grid.cells()
        )));
    }
    let mut times = Vec::with_capacity(grid.cells());
    for (cell, v) in h.values.iter().enumerate() {
        match v {
            None => {
                return Err(Error::Domain(format!("graph undefined at cell {cell}")));
            }
            Some(t) => {
                if !(*t > spec.t_min && *t < spec.t_max) {
                    return Err(Error::Domain(format!(
                        "graph value {t} at cell {cell} outside the open slab ({}, {})",
                        spec.t_min, spec.t_max
                    )));
                }
                times.push(*t);
            }
        }
    }
    let fine = FineIntegral::build(spec, grid);
    let mut achronal = true;
    let mut acausal = true;
    let mut violation = None;
    'outer: for a in 0..grid.cells() {
        for b in a + 1..grid.cells() {
            let dist = cell_distance(grid, a, b);
            let reach = (fine.at(times[b]) - fine.at(times[a])).abs();
            if reach >= dist {
                acausal = false;
                if reach > dist {
                    achronal = false;
                    violation = Some((a, b, dist, reach));
                    break 'outer;
                }
            }
        }
    }
    Ok(AchronalReport { achronal, acausal, violation })
}

pub fn is_acausal(spec: &SpacetimeSpec, grid: &Grid, h: &GraphHypersurface) -> Result<bool> {
    // a chronal violation also breaks acausality, so one scan suffices
    let rep = is_achronal_full_scan(spec, grid, h)?;
    Ok(rep.acausal)
}

/// Like `is_achronal` but never early-exits, so the acausal flag is exact.
fn is_achronal_full_scan(spec: &SpacetimeSpec, grid: &Grid, h: &GraphHypersurface) -> Result<AchronalReport> {
    if h.values.len() != grid.cells() {
        return Err(Error::Domain("graph size mismatch".into()));
    }
    let mut times = Vec::with_capacity(grid.cells());
    for (cell, v) in h.values.iter().enumerate() {
        let t = v.ok_or_else(|| Error::Domain(format!("graph undefined at cell {cell}")))?;
        if !(t > spec.t_min && t < spec.t_max) {
            return Err(Error::Domain(format!("graph value {t} at cell {cell} outside the open slab")));
        }
        times.push(t);
    }
    let fine = FineIntegral::build(spec, grid);
    let mut achronal = true;
    let mut acausal = true;
    let mut violation = None;
    for a in 0..grid.cells() {
        for b in a + 1..grid.cells() {
            let dist = cell_distance(grid, a, b);
            let reach = (fine.at(times[b]) - fine.at(times[a])).abs();
            if reach >= dist {
                acausal = false;
                if reach > dist {
                    achronal = false;
                    if violation.is_none() {
                        violation = Some((a, b, dist, reach));
                    }
                }
            }
        }
    }
    Ok(AchronalReport { achronal, acausal, violation })
}

#[derive(Debug, Clone)]
pub struct CauchyGraphReport {
    pub is_cauchy: bool,
    pub fully_defined: bool,
    pub achronal: Option<bool>,
    pub window: Option<(f64, f64)>,
    pub reason: Option<String>,
}

/// Sufficient criterion: total graph, achronal, values in a window strictly
/// inside the slab. Partial graphs report false rather than erroring.
pub fn is_cauchy_graph(spec: &SpacetimeSpec, grid: &Grid, h: &GraphHypersurface) -> CauchyGraphReport {
    if !h.fully_defined() {
        return CauchyGraphReport {
            is_cauchy: false,
            fully_defined: false,
            achronal: None,
            window: None,
            reason: Some("graph not defined on every spatial cell".into()),
        };
    }
    match is_achronal(spec, grid, h) {
        Err(e) => CauchyGraphReport {
            is_cauchy: false,
            fully_defined: true,
            achronal: None,
            window: None,
            reason: Some(e.to_string()),
        },
        Ok(rep) => {
            let lo = h.values.iter().map(|v| v.unwrap()).fold(f64::INFINITY, f64::min);
            let hi = h.values.iter().map(|v| v.unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let inside = lo > spec.t_min && hi < spec.t_max;
            CauchyGraphReport {
                is_cauchy: rep.achronal && inside,
                fully_defined: true,
                achronal: Some(rep.achronal),
                window: Some((lo, hi)),
                reason: if rep.achronal { None } else { Some("graph admits a timelike chord".into()) },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConformalInvarianceReport {
    pub equal: bool,
    pub causal_differing_cells: usize,
    pub chronological_differing_cells: usize,
}

/// Recomputes the cone sets of `a` under the metric scaled by `kappa` and
/// compares rasters for exact equality. Cone slopes are conformal
/// invariants, and the scaled spec evaluates them identically, so any
/// difference indicates a leak of the conformal factor into the causal
/// pipeline.
pub fn conformal_invariance_check(
    spec: &SpacetimeSpec,
    grid: &Grid,
    a: &EventSet,
    kappa: f64,
) -> Result<ConformalInvarianceReport> {
    let scaled = spec.conformal_scale(kappa)?;
    let base = cone(spec, grid, a, Direction::Future);
    let other = cone(&scaled, grid, a, Direction::Future);
    let dj = base.causal.differing_cells(&other.causal);
    let di = base.chronological.differing_cells(&other.chronological);
    Ok(ConformalInvarianceReport {
        equal: dj == 0 && di == 0,
        causal_differing_cells: dj,
        chronological_differing_cells: di,
    })
}

#[derive(Debug, Clone)]
pub struct TraceReport {
    pub set: EventSet,
    pub cell_count: usize,
    pub bounding_box: Option<BoundingBox>,
}

/// A intersect J-(p): the past-compact trace certificate.
pub fn past_compact_trace(spec: &SpacetimeSpec, grid: &Grid, a: &EventSet, p: GridEvent) -> TraceReport {
    let past = causal_past(spec, grid, &EventSet::point(grid, p));
    let set = a.intersection(&past);
    TraceReport { cell_count: set.count(), bounding_box: set.bounding_box(grid), set }
}
