//! Rank-r complex fields on the grid, the bilinear volume pairing, C^k
//! seminorms, and grid distributions.
//!
//! The pairing is bilinear with no conjugation: [u, v] = sum_i w_i u_i v_i
//! with w the metric volume weights. A distribution stores one complex
//! weight per node and component and acts by plain weighted summation, so
//! the embedding of a section g has weights w * g and its action on phi
//! reproduces [g, phi] bitwise (same products, same accumulation order).

use crate::causal::{EventSet, GridEvent};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::manifold::{Grid, SpacetimeSpec};

/// Support rasters reuse the causal event-set machinery.
pub type SupportSet = EventSet;

/// Values live t-major, cell-minor, component innermost:
/// `idx = (slice * cells + cell) * rank + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub nt: usize,
    pub cells: usize,
    pub rank: usize,
    pub values: Vec<C64>,
}

impl GridSection {
    pub fn zeros(grid: &Grid, rank: usize) -> Self {
        Self {
            nt: grid.nt,
            cells: grid.cells(),
            rank,
            values: vec![C64::new(0.0, 0.0); grid.nodes() * rank],
        }
    }

    pub fn from_fn<F: Fn(f64, [f64; 2], usize) -> C64>(grid: &Grid, rank: usize, f: F) -> Self {
        let mut s = Self::zeros(grid, rank);
        for n in 0..grid.nt {
            let t = grid.t(n);
            for cell in 0..grid.cells() {
                let x = grid.cell_center(cell);
                for k in 0..rank {
                    let i = s.idx(n, cell, k);
                    s.values[i] = f(t, x, k);
                }
            }
        }
        s
    }

    #[inline]
    pub fn idx(&self, slice: usize, cell: usize, k: usize) -> usize {
        (slice * self.cells + cell) * self.rank + k
    }

    pub fn get(&self, slice: usize, cell: usize, k: usize) -> C64 {
        self.values[self.idx(slice, cell, k)]
    }

    pub fn set(&mut self, slice: usize, cell: usize, k: usize, v: C64) {
        let i = self.idx(slice, cell, k);
        self.values[i] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.nt == other.nt && self.cells == other.cells && self.rank == other.rank
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::GridMismatch(format!(
                "section shapes differ: ({}, {}, {}) vs ({}, {}, {})",
                self.nt, self.cells, self.rank, other.nt, other.cells, other.rank
            )));
        }
        Ok(())
    }

    pub fn slice_data(&self, n: usize) -> &[C64] {
        let w = self.cells * self.rank;
        &self.values[n * w..(n + 1) * w]
    }

    pub fn slice_data_mut(&mut self, n: usize) -> &mut [C64] {
        let w = self.cells * self.rank;
        &mut self.values[n * w..(n + 1) * w]
    }

    /// self += alpha * other
    pub fn add_scaled(&mut self, alpha: C64, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: C64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Euclidean magnitude over the fibre at one node.
    pub fn node_magnitude(&self, slice: usize, cell: usize) -> f64 {
        let base = (slice * self.cells + cell) * self.rank;
        self.values[base..base + self.rank]
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest magnitude in the first and last `pad` slices, with the slice
    /// where it occurs. None when `pad` is zero.
    pub fn padding_violation(&self, pad: usize, tol: f64) -> Option<(usize, f64)> {
        let mut worst: Option<(usize, f64)> = None;
        for n in (0..pad.min(self.nt)).chain(self.nt.saturating_sub(pad)..self.nt) {
            for v in self.slice_data(n) {
                let m = v.norm();
                if m > tol && worst.map_or(true, |(_, w)| m > w) {
                    worst = Some((n, m));
                }
            }
        }
        worst
    }

    pub fn require_padding(&self, pad: usize, tol: f64) -> Result<()> {
        match self.padding_violation(pad, tol) {
            None => Ok(()),
            Some((slice, mag)) => Err(Error::Padding {
                required: pad,
                violation: format!("found magnitude {mag:.3e} on slice {slice}"),
            }),
        }
    }

    /// Nodes where the fibre magnitude exceeds `threshold`.
    pub fn support(&self, grid: &Grid, threshold: f64) -> SupportSet {
        let mut set = EventSet::empty(grid);
        for n in 0..self.nt {
            for cell in 0..self.cells {
                if self.node_magnitude(n, cell) > threshold {
                    set.slices[n].insert(cell);
                }
            }
        }
        set
    }
}

/// Bilinear pairing [u, v] = sum_i w_i u_i v_i, products associated as
/// (u * w) * v so that the distribution embedding reproduces it bitwise.
pub fn pair(weights: &[f64], u: &GridSection, v: &GridSection) -> Result<C64> {
    u.check_shape(v)?;
    if weights.len() != u.nt * u.cells {
        return Err(Error::GridMismatch(format!(
            "{} weights for {} nodes",
            weights.len(),
            u.nt * u.cells
        )));
    }
    let mut acc = C64::new(0.0, 0.0);
    for (i, (a, b)) in u.values.iter().zip(&v.values).enumerate() {
        acc += (a * weights[i / u.rank]) * b;
    }
    Ok(acc)
}

/// One complex weight per node and component; layout matches `GridSection`.
/// The action on a test section is the plain bilinear sum of weight times
/// value, no volume factors (they are already inside the weights).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub nt: usize,
    pub cells: usize,
    pub rank: usize,
    pub weights: Vec<C64>,
}

impl DiscreteDistribution {
    pub fn zeros(grid: &Grid, rank: usize) -> Self {
        Self {
            nt: grid.nt,
            cells: grid.cells(),
            rank,
            weights: vec![C64::new(0.0, 0.0); grid.nodes() * rank],
        }
    }

    #[inline]
    pub fn idx(&self, slice: usize, cell: usize, k: usize) -> usize {
        (slice * self.cells + cell) * self.rank + k
    }

    pub fn action(&self, phi: &GridSection) -> Result<C64> {
        if self.nt != phi.nt || self.cells != phi.cells || self.rank != phi.rank {
            return Err(Error::GridMismatch("distribution and test section shapes differ".into()));
        }
        let mut acc = C64::new(0.0, 0.0);
        for (w, v) in self.weights.iter().zip(&phi.values) {
            acc += w * v;
        }
        Ok(acc)
    }

    /// Embedding of a section: weights = volume weight times value, so the
    /// action equals `pair(vol, g, phi)` bitwise.
    pub fn from_section(spec: &SpacetimeSpec, grid: &Grid, g: &GridSection) -> Self {
        let vol = grid.volume_weights(spec);
        let mut d = Self::zeros(grid, g.rank);
        for (i, v) in g.values.iter().enumerate() {
            d.weights[i] = v * vol[i / g.rank];
        }
        d
    }

    /// Density against the volume weights; the smooth-section preimage when
    /// the distribution is an embedding.
    pub fn density(&self, spec: &SpacetimeSpec, grid: &Grid) -> GridSection {
        let vol = grid.volume_weights(spec);
        let mut g = GridSection::zeros(grid, self.rank);
        for (i, w) in self.weights.iter().enumerate() {
            g.values[i] = w / vol[i / self.rank];
        }
        g
    }

    /// Support is measured on the density so it matches the support of the
    /// embedded section: nodes with zero weight stay exactly zero under the
    /// divide, and the threshold applies at section scale.
    pub fn support(&self, spec: &SpacetimeSpec, grid: &Grid, threshold: f64) -> SupportSet {
        self.density(spec, grid).support(grid, threshold)
    }

    /// Total-variation style bound: |T[phi]| <= bound * sup|phi|.
    pub fn sup_norm_bound(&self) -> f64 {
        self.weights.iter().map(|w| w.norm()).sum()
    }
}

/// Unit point evaluation in component `k` at the grid event nearest to
/// `(t, x)`. Returns the snapped event and the snap distance so callers can
/// see the placement policy in action.
pub fn delta(
    spec: &SpacetimeSpec,
    grid: &Grid,
    rank: usize,
    component: usize,
    t: f64,
    x: &[f64],
) -> Result<(DiscreteDistribution, GridEvent, f64)> {
    if component >= rank {
        return Err(Error::RankMismatch { expected: rank, got: component });
    }
    let (slice, cell, snap) = grid.nearest_event(spec, t, x)?;
    let mut d = DiscreteDistribution::zeros(grid, rank);
    let i = d.idx(slice, cell, component);
    d.weights[i] = C64::new(1.0, 0.0);
    Ok((d, GridEvent { slice, cell }, snap))
}

/// Push a wave operator through a distribution: (P T)[phi] = T[Pt phi] with
/// Pt the volume-weighted transpose. Realised on the density: divide by w,
/// apply the plain stencil, multiply by w. For an embedded section this
/// returns the embedding of the stencil image.
pub fn apply_op_to_distribution(
    op: &crate::operators::WaveOperator,
    t: &DiscreteDistribution,
) -> Result<DiscreteDistribution> {
    let spec = &op.spec;
    let grid = &op.grid;
    if t.nt != grid.nt || t.cells != grid.cells() || t.rank != op.rank {
        return Err(Error::GridMismatch("distribution does not match the operator grid".into()));
    }
    let d = t.density(spec, grid);
    let sd = op.apply(&d)?;
    Ok(DiscreteDistribution::from_section(spec, grid, &sd))
}

const MAX_DERIVATIVE_ORDER: usize = 4;

/// One discrete first derivative along `axis` (0 = time, 1.. = spatial).
/// Interior rows are centered; time boundary rows use the one-sided
/// second-order rule; spatial axes wrap around the torus.
fn derivative(grid: &Grid, u: &GridSection, axis: usize) -> GridSection {
    let mut out = GridSection::zeros_like(u);
    let r = u.rank;
    match axis {
        0 => {
            let s = 1.0 / (2.0 * grid.dt);
            for n in 0..u.nt {
                for cell in 0..u.cells {
                    for k in 0..r {
                        let v = if n == 0 {
                            (-3.0 * u.get(0, cell, k) + 4.0 * u.get(1, cell, k) - u.get(2, cell, k)) * s
                        } else if n == u.nt - 1 {
                            (3.0 * u.get(n, cell, k) - 4.0 * u.get(n - 1, cell, k) + u.get(n - 2, cell, k)) * s
                        } else {
                            (u.get(n + 1, cell, k) - u.get(n - 1, cell, k)) * s
                        };
                        out.set(n, cell, k, v);
                    }
                }
            }
        }
        a => {
            let ax = a - 1;
            let s = 1.0 / (2.0 * grid.dx[ax]);
            let (nx, ny) = (grid.nx[0], grid.nx[1]);
            for n in 0..u.nt {
                for cell in 0..u.cells {
                    let (jx, jy) = grid.cell_coords(cell);
                    let (plus, minus) = if ax == 0 {
                        (grid.cell_index((jx + 1) % nx, jy), grid.cell_index((jx + nx - 1) % nx, jy))
                    } else {
                        (grid.cell_index(jx, (jy + 1) % ny), grid.cell_index(jx, (jy + ny - 1) % ny))
                    };
                    for k in 0..r {
                        out.set(n, cell, k, (u.get(n, plus, k) - u.get(n, minus, k)) * s);
                    }
                }
            }
        }
    }
    out
}

impl GridSection {
    fn zeros_like(u: &Self) -> Self {
        Self {
            nt: u.nt,
            cells: u.cells,
            rank: u.rank,
            values: vec![C64::new(0.0, 0.0); u.values.len()],
        }
    }
}

fn multisets(n_axes: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(n_axes: usize, order: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for a in start..n_axes {
            cur.push(a);
            rec(n_axes, order, a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n_axes, order, 0, &mut Vec::new(), &mut out);
    out
}

fn multinomial(multiset: &[usize], n_axes: usize) -> f64 {
    let mut counts = vec![0usize; n_axes];
    for &a in multiset {
        counts[a] += 1;
    }
    let fact = |m: usize| (1..=m).product::<usize>() as f64;
    fact(multiset.len()) / counts.iter().map(|&c| fact(c)).product::<f64>()
}

/// Discrete C^k norm: max over orders j <= k of the sup over nodes of the
/// flat derivative tensor norm, |D^j u|^2 = sum over index tuples of the
/// squared component magnitudes. Derivatives commute here, so tuples are
/// grouped into sorted multisets with multinomial multiplicity.
pub fn ck_norm(grid: &Grid, u: &GridSection, k: usize) -> Result<f64> {
    if k > MAX_DERIVATIVE_ORDER {
        return Err(Error::UnsupportedOrder(k));
    }
    let n_axes = grid.dim + 1;
    let nodes = u.nt * u.cells;
    let mut best = 0.0f64;
    for order in 0..=k {
        let mut sq = vec![0.0f64; nodes];
        for ms in multisets(n_axes, order) {
            let mult = multinomial(&ms, n_axes);
            let mut field = u.clone();
            for &axis in &ms {
                field = derivative(grid, &field, axis);
            }
            for node in 0..nodes {
                let mut m = 0.0;
                for k2 in 0..u.rank {
                    m += field.values[node * u.rank + k2].norm_sqr();
                }
                sq[node] += mult * m;
            }
        }
        let sup = sq.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt();
        best = best.max(sup);
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct WeakLimitReport {
    pub actions: Vec<C64>,
    pub successive_differences: Vec<f64>,
    /// Sup-norm operator bound per term; growth across the sequence means
    /// the limit functional needs derivatives of the test section.
    pub sup_norm_bounds: Vec<f64>,
    pub converged: bool,
    pub limit_estimate: C64,
}

/// Evaluate a sequence of distributions against one test section and report
/// whether the actions settle, together with the sup-norm bounds that
/// witness (or deny) uniform boundedness of the sequence.
pub fn weak_limit_probe(
    seq: &[DiscreteDistribution],
    phi: &GridSection,
    tol: f64,
) -> Result<WeakLimitReport> {
    if seq.is_empty() {
        return Err(Error::Domain("weak limit probe needs at least one distribution".into()));
    }
    let mut actions = Vec::with_capacity(seq.len());
    let mut bounds = Vec::with_capacity(seq.len());
    for t in seq {
        actions.push(t.action(phi)?);
        bounds.push(t.sup_norm_bound());
    }
    let diffs: Vec<f64> = actions.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let converged = diffs.last().map_or(true, |d| *d < tol);
    // Aitken extrapolation when the tail looks geometric, else the last value
    let n = actions.len();
    let limit_estimate = if n >= 3 {
        let (a0, a1, a2) = (actions[n - 3], actions[n - 2], actions[n - 1]);
        let denom = a2 - 2.0 * a1 + a0;
        if denom.norm() > 1e-14 * a2.norm().max(1.0) {
            a2 - (a2 - a1) * (a2 - a1) / denom
        } else {
            a2
        }
    } else {
        actions[n - 1]
    };
    Ok(WeakLimitReport {
        actions,
        successive_differences: diffs,
        sup_norm_bounds: bounds,
        converged,
        limit_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::SpacetimeSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(nt: usize, nx: usize) -> (SpacetimeSpec, Grid) {
        let spec = SpacetimeSpec::minkowski(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, nt, &[nx], 1.0).unwrap();
        (spec, grid)
    }

    fn random_section(grid: &Grid, rank: usize, rng: &mut ChaCha8Rng) -> GridSection {
        let mut s = GridSection::zeros(grid, rank);
        for v in &mut s.values {
            *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        s
    }

    #[test]
    fn pairing_matches_independent_resummation() {
        let (spec, grid) = setup(17, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u = random_section(&grid, 2, &mut rng);
        let v = random_section(&grid, 2, &mut rng);
        let w = grid.volume_weights(&spec);
        let p = pair(&w, &u, &v).unwrap();
        // oracle: reversed traversal with Kahan compensation
        let mut sum = C64::new(0.0, 0.0);
        let mut comp = C64::new(0.0, 0.0);
        for i in (0..u.values.len()).rev() {
            let term = u.values[i] * v.values[i] * w[i / u.rank] - comp;
            let t = sum + term;
            comp = (t - sum) - term;
            sum = t;
        }
        assert!((p - sum).norm() <= 1e-13 * sum.norm().max(1.0));
    }

    #[test]
    fn pairing_is_bilinear_and_symmetric() {
        let (spec, grid) = setup(9, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_section(&grid, 1, &mut rng);
        let v = random_section(&grid, 1, &mut rng);
        let w = grid.volume_weights(&spec);
        let alpha = C64::new(0.7, -1.3);
        let mut au = u.clone();
        au.scale(alpha);
        let lhs = pair(&w, &au, &v).unwrap();
        let rhs = alpha * pair(&w, &u, &v).unwrap();
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        // bilinear pairing of complex sections is symmetric, not hermitian
        let uv = pair(&w, &u, &v).unwrap();
        let vu = pair(&w, &v, &u).unwrap();
        assert!((uv - vu).norm() <= 1e-13 * uv.norm().max(1.0));
    }

    #[test]
    fn embedding_action_reproduces_pairing_bitwise() {
        let (spec, grid) = setup(11, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_section(&grid, 2, &mut rng);
        let phi = random_section(&grid, 2, &mut rng);
        let t = DiscreteDistribution::from_section(&spec, &grid, &g);
        let action = t.action(&phi).unwrap();
        let w = grid.volume_weights(&spec);
        let p = pair(&w, &g, &phi).unwrap();
        assert_eq!(action.re.to_bits(), p.re.to_bits());
        assert_eq!(action.im.to_bits(), p.im.to_bits());
    }

    #[test]
    fn delta_evaluates_test_sections() {
        let (spec, grid) = setup(17, 32);
        let phi = GridSection::from_fn(&grid, 2, |t, x, k| {
            C64::new(t * x[0].cos(), k as f64 + x[0].sin())
        });
        let t_at = grid.t(5);
        let x_at = [grid.cell_center(12)[0]];
        let (d, event, snap) = delta(&spec, &grid, 2, 1, t_at, &x_at).unwrap();
        assert_eq!(snap, 0.0, "on-grid placement has zero snap distance");
        assert_eq!(event, GridEvent { slice: 5, cell: 12 });
        let a = d.action(&phi).unwrap();
        let expect = phi.get(5, 12, 1);
        assert_eq!(a.re.to_bits(), expect.re.to_bits());
        assert_eq!(a.im.to_bits(), expect.im.to_bits());
    }

    #[test]
    fn delta_snaps_off_grid_points_deterministically() {
        let (spec, grid) = setup(17, 32);
        // a third of a cell to the right of node 12
        let x = [grid.cell_center(12)[0] + grid.dx[0] / 3.0];
        let (_, event, snap) = delta(&spec, &grid, 1, 0, grid.t(5) + grid.dt / 4.0, &x).unwrap();
        assert_eq!(event, GridEvent { slice: 5, cell: 12 });
        let expect = ((grid.dx[0] / 3.0).powi(2) + (grid.dt / 4.0).powi(2)).sqrt();
        assert!((snap - expect).abs() < 1e-12);
        // component out of range is a rank error
        assert!(delta(&spec, &grid, 1, 1, grid.t(5), &x).is_err());
    }

    #[test]
    fn ck_norm_matches_analytic_tensor_norms() {
        // u = t^2 cos x: all flat derivatives in closed form
        let (_, grid) = setup(129, 128);
        let u = GridSection::from_fn(&grid, 1, |t, x, _| C64::new(t * t * x[0].cos(), 0.0));
        // analytic per-order sup over the same nodes
        let mut sup = [0.0f64; 4];
        for n in 0..grid.nt {
            let t = grid.t(n);
            for cell in 0..grid.cells() {
                let x = grid.cell_center(cell)[0];
                let (c, s) = (x.cos(), x.sin());
                let o0: f64 = (t * t * c).abs();
                let o1 = ((2.0 * t * c).powi(2) + (t * t * s).powi(2)).sqrt();
                let o2 = ((2.0 * c).powi(2) + 2.0 * (2.0 * t * s).powi(2) + (t * t * c).powi(2)).sqrt();
                let o3 = (3.0 * (2.0 * s).powi(2) + 3.0 * (2.0 * t * c).powi(2) + (t * t * s).powi(2)).sqrt();
                sup[0] = sup[0].max(o0);
                sup[1] = sup[1].max(o1);
                sup[2] = sup[2].max(o2);
                sup[3] = sup[3].max(o3);
            }
        }
        let expect_k = |k: usize| sup[..=k].iter().fold(0.0f64, |a, &b| a.max(b));
        for k in 0..=3 {
            let got = ck_norm(&grid, &u, k).unwrap();
            let want = expect_k(k);
            assert!(
                (got - want).abs() <= 5e-3 * want,
                "k = {k}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn ck_norm_monotone_and_rejects_high_order() {
        let (_, grid) = setup(33, 32);
        let u = GridSection::from_fn(&grid, 2, |t, x, k| {
            C64::new((1.0 + k as f64) * (x[0] * 2.0).sin(), t)
        });
        let mut prev = 0.0;
        for k in 0..=4 {
            let n = ck_norm(&grid, &u, k).unwrap();
            assert!(n >= prev, "C^{k} norm must dominate C^{}", k.saturating_sub(1));
            prev = n;
        }
        assert!(matches!(ck_norm(&grid, &u, 5), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn support_commutes_with_embedding() {
        let (spec, grid) = setup(17, 32);
        // a blob: exact zeros outside a window, O(1) inside
        let u = GridSection::from_fn(&grid, 1, |t, x, _| {
            if (0.3..0.6).contains(&t) && (1.0..2.0).contains(&x[0]) {
                C64::new(1.0 + t + x[0], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let thr = crate::tolerances::SUPPORT_THRESHOLD;
        let s1 = u.support(&grid, thr);
        let t = DiscreteDistribution::from_section(&spec, &grid, &u);
        let s2 = t.support(&spec, &grid, thr);
        assert_eq!(s1, s2);
        assert!(s1.count() > 0);
        assert!(s1.count() < grid.nodes());
    }

    #[test]
    fn padding_check_reports_offending_slice() {
        let (_, grid) = setup(17, 16);
        let mut u = GridSection::zeros(&grid, 1);
        u.set(1, 3, 0, C64::new(0.5, 0.0));
        assert!(u.require_padding(1, 0.0).is_ok());
        let err = u.require_padding(2, 0.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("slice 1"), "message was: {msg}");
        assert!(msg.contains('2'));
    }

    #[test]
    fn difference_quotients_converge_to_derivative_with_unbounded_constants() {
        // T_h[phi] = (phi(x0 + h) - phi(x0)) / h marches toward phi'(x0);
        // each term is order zero but the sup-norm bounds blow up like 2/h,
        // which is exactly the warning the probe is built to surface.
        let (spec, grid) = setup(5, 256);
        let phi = GridSection::from_fn(&grid, 1, |_, x, _| C64::new(x[0].sin(), 0.0));
        let x0 = 0usize;
        let mut seq = Vec::new();
        for steps in [64usize, 32, 16, 8, 4, 2, 1] {
            let h = steps as f64 * grid.dx[0];
            let mut d = DiscreteDistribution::zeros(&grid, 1);
            let i_plus = d.idx(2, x0 + steps, 0);
            let i_zero = d.idx(2, x0, 0);
            d.weights[i_plus] = C64::new(1.0 / h, 0.0);
            d.weights[i_zero] = C64::new(-1.0 / h, 0.0);
            seq.push(d);
        }
        let rep = weak_limit_probe(&seq, &phi, 1e-3).unwrap();
        assert!(rep.converged);
        // derivative of sin at 0 is 1; finite h leaves an O(h^2) gap
        let last = rep.actions.last().unwrap();
        assert!((last.re - 1.0).abs() < 1e-3, "action {last}");
        assert!((rep.limit_estimate.re - 1.0).abs() < 1e-3);
        let first_bound = rep.sup_norm_bounds[0];
        let last_bound = *rep.sup_norm_bounds.last().unwrap();
        assert!(
            last_bound > 10.0 * first_bound,
            "limit functional is not uniformly order zero: bounds {first_bound} .. {last_bound}"
        );
        // time-level placement respects the layout: nothing off slice 2
        let supp = seq[0].support(&spec, &grid, 1e-12);
        assert_eq!(supp.events().iter().filter(|e| e.slice != 2).count(), 0);
    }
}
