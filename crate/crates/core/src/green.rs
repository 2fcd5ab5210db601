//! Green operators by time marching.
//!
//! The advanced operator solves the interior rows upward with zero data on
//! the two bottom slices, the retarded one mirrors this downward. Their
//! volume-weighted transposes are realised as reverse substitution sweeps on
//! the same factored blocks, so the duality pairings close at rounding level
//! instead of merely at discretization order.
//!
//! Row bookkeeping: the two time-boundary rows of the stencil are one-sided
//! extrapolation rows, not equations the sweeps solve. Identities of the
//! form P(G f) = f therefore hold on interior rows; `interior_max_abs_diff`
//! measures exactly that.

use crate::causal::{causal_future, causal_past, EventSet, GridEvent};
use crate::error::{Error, Result};
use crate::linalg::{matvec_sub, matvec_transpose_sub, solve_in_place, DenseLu, C64};
use crate::operators::WaveOperator;
use crate::sections::{pair, DiscreteDistribution, GridSection};
use crate::tolerances::{RESIDUAL_FLOOR, SUPPORT_DILATION_CELLS, SUPPORT_THRESHOLD};

/// Slices that must vanish at each end of the slab before a sweep.
pub const GREEN_PADDING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenDirection {
    /// Support pushed toward the future of the source.
    Advanced,
    /// Support pushed toward the past.
    Retarded,
}

impl GreenDirection {
    pub fn flip(self) -> Self {
        match self {
            GreenDirection::Advanced => GreenDirection::Retarded,
            GreenDirection::Retarded => GreenDirection::Advanced,
        }
    }
}

pub struct GreenOperator<'a> {
    pub op: &'a WaveOperator,
    pub direction: GreenDirection,
    /// When set, the sweep realises the volume-weighted transpose
    /// W^{-1} G^T W of the plain operator with the opposite direction.
    pub adjoint: bool,
    slice_weights: Vec<f64>,
}

impl<'a> GreenOperator<'a> {
    fn build(op: &'a WaveOperator, direction: GreenDirection, adjoint: bool) -> Self {
        let grid = &op.grid;
        let slice_weights = (0..grid.nt).map(|n| grid.volume_weight(&op.spec, n, 0)).collect();
        GreenOperator { op, direction, adjoint, slice_weights }
    }

    pub fn advanced(op: &'a WaveOperator) -> Self {
        Self::build(op, GreenDirection::Advanced, false)
    }

    pub fn retarded(op: &'a WaveOperator) -> Self {
        Self::build(op, GreenDirection::Retarded, false)
    }

    /// Transpose of the retarded sweep; output supported toward the future.
    pub fn adjoint_advanced(op: &'a WaveOperator) -> Self {
        Self::build(op, GreenDirection::Advanced, true)
    }

    /// Transpose of the advanced sweep; output supported toward the past.
    pub fn adjoint_retarded(op: &'a WaveOperator) -> Self {
        Self::build(op, GreenDirection::Retarded, true)
    }

    fn check_source(&self, phi: &GridSection) -> Result<()> {
        let grid = &self.op.grid;
        if phi.rank != self.op.rank || phi.nt != grid.nt || phi.cells != grid.cells() {
            return Err(Error::GridMismatch("source does not match the operator grid".into()));
        }
        phi.require_padding(GREEN_PADDING, SUPPORT_THRESHOLD * phi.max_abs())
    }

    pub fn apply(&self, phi: &GridSection) -> Result<GridSection> {
        self.check_source(phi)?;
        if self.adjoint {
            self.sweep_transposed(phi)
        } else {
            self.sweep_plain(phi)
        }
    }

    /// March the interior rows in the direction of support. Forward: row n
    /// determines slice n+1 from M+(n) u' = phi^n - C0(n) u^n - M-(n) u^{n-1}.
    fn sweep_plain(&self, phi: &GridSection) -> Result<GridSection> {
        let op = self.op;
        let grid = &op.grid;
        let (nt, cells, r) = (grid.nt, grid.cells(), op.rank);
        let mut u = GridSection::zeros(grid, r);
        let len = cells * r;
        let mut far = vec![C64::new(0.0, 0.0); len];
        let mut cur = vec![C64::new(0.0, 0.0); len];
        let mut new = vec![C64::new(0.0, 0.0); len];
        let mut spb = vec![C64::new(0.0, 0.0); len];
        let mut mat = vec![C64::new(0.0, 0.0); r * r];
        let mut rhs = vec![C64::new(0.0, 0.0); r];
        let forward = self.direction == GreenDirection::Advanced;
        let rows: Vec<usize> =
            if forward { (1..nt - 1).collect() } else { (1..nt - 1).rev().collect() };
        for n in rows {
            op.spatial_zeroth_slice(n, &cur, &mut spb);
            let c0 = op.time_diag_scalar(n);
            let src = phi.slice_data(n);
            let (known_sign, solve_sign) = if forward { (-1.0, 1.0) } else { (1.0, -1.0) };
            for cell in 0..cells {
                for i in 0..r {
                    let e = cell * r + i;
                    rhs[i] = src[e] - cur[e] * c0 - spb[e];
                }
                op.time_neighbor_matrix(n, cell, known_sign, &mut mat);
                matvec_sub(&mat, &far[cell * r..(cell + 1) * r], &mut rhs);
                op.time_neighbor_matrix(n, cell, solve_sign, &mut mat);
                solve_in_place(&mut mat, &mut rhs)?;
                new[cell * r..(cell + 1) * r].copy_from_slice(&rhs);
            }
            let target = if forward { n + 1 } else { n - 1 };
            u.slice_data_mut(target).copy_from_slice(&new);
            std::mem::swap(&mut far, &mut cur);
            std::mem::swap(&mut cur, &mut new);
        }
        Ok(u)
    }

    /// Reverse substitution on the transposed blocks. For the retarded
    /// adjoint the equations are the columns of the advanced march:
    ///   M+(j-1)^T l^{j-1} + C0(j)^T l^j + M-(j+1)^T l^{j+1} = w_j phi^j,
    /// solved downward from j = nt-1, with l supported on slices 1..nt-2.
    /// Output is v = l / w. The advanced adjoint mirrors this upward.
    fn sweep_transposed(&self, phi: &GridSection) -> Result<GridSection> {
        let op = self.op;
        let grid = &op.grid;
        let (nt, cells, r) = (grid.nt, grid.cells(), op.rank);
        let mut v = GridSection::zeros(grid, r);
        let len = cells * r;
        let mut lam_far = vec![C64::new(0.0, 0.0); len];
        let mut lam_cur = vec![C64::new(0.0, 0.0); len];
        let mut lam_new = vec![C64::new(0.0, 0.0); len];
        let mut spbt = vec![C64::new(0.0, 0.0); len];
        let mut mat = vec![C64::new(0.0, 0.0); r * r];
        let mut rhs = vec![C64::new(0.0, 0.0); r];
        let downward = self.direction == GreenDirection::Retarded;

        // j walks the transposed equations; l^{target} is the new unknown.
        let js: Vec<usize> =
            if downward { (2..nt).rev().collect() } else { (0..nt - 2).collect() };
        let mut have_cur = false;
        let mut have_far = false;
        for j in js {
            let wj = self.slice_weights[j];
            if have_cur {
                op.spatial_zeroth_slice_transposed(j, &lam_cur, &mut spbt);
            }
            let c0 = op.time_diag_scalar(j);
            let src = phi.slice_data(j);
            for cell in 0..cells {
                for i in 0..r {
                    let e = cell * r + i;
                    rhs[i] = src[e] * wj;
                    if have_cur {
                        rhs[i] -= lam_cur[e] * c0 + spbt[e];
                    }
                }
                if have_far {
                    let far_slice = if downward { j + 1 } else { j - 1 };
                    let far_sign = if downward { -1.0 } else { 1.0 };
                    op.time_neighbor_matrix(far_slice, cell, far_sign, &mut mat);
                    matvec_transpose_sub(&mat, &lam_far[cell * r..(cell + 1) * r], &mut rhs);
                }
                let (target, sign) = if downward { (j - 1, 1.0) } else { (j + 1, -1.0) };
                op.time_neighbor_matrix(target, cell, sign, &mut mat);
                transpose_in_place(&mut mat, r);
                solve_in_place(&mut mat, &mut rhs)?;
                lam_new[cell * r..(cell + 1) * r].copy_from_slice(&rhs);
            }
            let target = if downward { j - 1 } else { j + 1 };
            let wt = self.slice_weights[target];
            let out = v.slice_data_mut(target);
            for e in 0..len {
                out[e] = lam_new[e] / wt;
            }
            std::mem::swap(&mut lam_far, &mut lam_cur);
            std::mem::swap(&mut lam_cur, &mut lam_new);
            have_far = have_cur;
            have_cur = true;
        }
        Ok(v)
    }
}

fn transpose_in_place(m: &mut [C64], r: usize) {
    for i in 0..r {
        for j in (i + 1)..r {
            m.swap(i * r + j, j * r + i);
        }
    }
}

/// One Green application: source must vanish on `GREEN_PADDING` slices at
/// each end of the slab.
pub fn green_apply(op: &WaveOperator, direction: GreenDirection, phi: &GridSection) -> Result<GridSection> {
    match direction {
        GreenDirection::Advanced => GreenOperator::advanced(op).apply(phi),
        GreenDirection::Retarded => GreenOperator::retarded(op).apply(phi),
    }
}

/// G = G_adv - G_ret, the kernel-of-P propagator.
pub fn causal_propagator(op: &WaveOperator, phi: &GridSection) -> Result<GridSection> {
    let mut g = GreenOperator::advanced(op).apply(phi)?;
    let ret = GreenOperator::retarded(op).apply(phi)?;
    g.add_scaled(C64::new(-1.0, 0.0), &ret)?;
    Ok(g)
}

/// max |a - b| over interior time rows (the rows the sweeps actually solve).
pub fn interior_max_abs_diff(a: &GridSection, b: &GridSection) -> Result<f64> {
    if a.nt != b.nt || a.cells != b.cells || a.rank != b.rank {
        return Err(Error::GridMismatch("section shapes differ".into()));
    }
    let mut worst: f64 = 0.0;
    for n in 1..a.nt - 1 {
        let (ra, rb) = (a.slice_data(n), b.slice_data(n));
        for e in 0..ra.len() {
            worst = worst.max((ra[e] - rb[e]).norm());
        }
    }
    Ok(worst)
}

/// Fundamental solution anchored at one grid event: one distribution per
/// fibre component, with weights (w_j / w_x) (G e_{x,k})_j. Its action on a
/// padded section equals the opposite adjoint sweep evaluated at the base
/// point, which is the matrix-free route to the same numbers.
pub struct FundamentalSolutionAt {
    pub base: GridEvent,
    pub direction: GreenDirection,
    pub components: Vec<DiscreteDistribution>,
}

impl FundamentalSolutionAt {
    pub fn action(&self, phi: &GridSection) -> Result<Vec<C64>> {
        self.components.iter().map(|c| c.action(phi)).collect()
    }
}

pub fn fundamental_solution(
    op: &WaveOperator,
    x: GridEvent,
    direction: GreenDirection,
) -> Result<FundamentalSolutionAt> {
    let grid = &op.grid;
    let (nt, cells, r) = (grid.nt, grid.cells(), op.rank);
    if x.cell >= cells {
        return Err(Error::OffGrid(format!("cell {} outside the grid", x.cell)));
    }
    if x.slice < GREEN_PADDING || x.slice + GREEN_PADDING + 1 > nt {
        return Err(Error::Domain(format!(
            "base slice {} too close to the slab boundary; needs {} clear slices at each end",
            x.slice, GREEN_PADDING
        )));
    }
    let w_base = grid.volume_weight(&op.spec, x.slice, x.cell);
    let green = GreenOperator::build(op, direction, false);
    let mut components = Vec::with_capacity(r);
    for k0 in 0..r {
        let mut e = GridSection::zeros(grid, r);
        e.set(x.slice, x.cell, k0, C64::new(1.0, 0.0));
        let kernel = green.apply(&e)?;
        let mut dist = DiscreteDistribution::from_section(&op.spec, grid, &kernel);
        let inv = 1.0 / w_base;
        for w in dist.weights.iter_mut() {
            *w *= inv;
        }
        components.push(dist);
    }
    Ok(FundamentalSolutionAt { base: x, direction, components })
}

/// The matrix-free route: F_dir(x)[phi] = (adjoint sweep of the flipped
/// direction)(phi) read off at x.
pub fn fundamental_action_via_sweep(
    op: &WaveOperator,
    x: GridEvent,
    direction: GreenDirection,
    phi: &GridSection,
) -> Result<Vec<C64>> {
    let sweep = match direction {
        GreenDirection::Advanced => GreenOperator::adjoint_retarded(op),
        GreenDirection::Retarded => GreenOperator::adjoint_advanced(op),
    };
    let v = sweep.apply(phi)?;
    Ok((0..op.rank).map(|k| v.get(x.slice, x.cell, k)).collect())
}

/// C-infinity window, identically zero outside (a, b). Forces exact time
/// padding on otherwise analytic profiles.
pub fn smooth_window(t: f64, a: f64, b: f64) -> f64 {
    if t <= a || t >= b {
        return 0.0;
    }
    let s = 2.0 * (t - a) / (b - a) - 1.0;
    (1.0 - 1.0 / (1.0 - s * s)).exp()
}

/// sup of |field| outside the dilated one-sided causal hull of `base`,
/// relative to the overall sup. Zero field reports zero.
pub fn directional_leakage(
    op: &WaveOperator,
    field: &GridSection,
    base: &EventSet,
    margin: usize,
    direction: GreenDirection,
) -> f64 {
    let grid = &op.grid;
    let hull = match direction {
        GreenDirection::Advanced => causal_future(&op.spec, grid, base),
        GreenDirection::Retarded => causal_past(&op.spec, grid, base),
    };
    let dilated = hull.dilate(grid, margin);
    let mut outside: f64 = 0.0;
    let mut overall: f64 = 0.0;
    for n in 0..grid.nt {
        for cell in 0..grid.cells() {
            let m = field.node_magnitude(n, cell);
            overall = overall.max(m);
            if !dilated.contains(GridEvent { slice: n, cell }) {
                outside = outside.max(m);
            }
        }
    }
    if overall == 0.0 {
        0.0
    } else {
        outside / overall
    }
}

/// Duality between the adjoint and plain sweeps of opposite directions:
/// <G~_adv phi, psi>_W = <phi, G_ret psi>_W and the mirrored pairing.
/// Returns the worse of the two relative defects.
pub fn adjoint_identity_check(op: &WaveOperator, phi: &GridSection, psi: &GridSection) -> Result<f64> {
    let weights = op.grid.volume_weights(&op.spec);
    let rel = |a: C64, b: C64| -> f64 {
        let scale = a.norm().max(b.norm()).max(RESIDUAL_FLOOR);
        (a - b).norm() / scale
    };
    let lhs_a = pair(&weights, &GreenOperator::adjoint_advanced(op).apply(phi)?, psi)?;
    let rhs_a = pair(&weights, phi, &GreenOperator::retarded(op).apply(psi)?)?;
    let lhs_r = pair(&weights, &GreenOperator::adjoint_retarded(op).apply(phi)?, psi)?;
    let rhs_r = pair(&weights, phi, &GreenOperator::advanced(op).apply(psi)?)?;
    Ok(rel(lhs_a, rhs_a).max(rel(lhs_r, rhs_r)))
}

#[derive(Debug, Clone)]
pub struct ExactSequenceReport {
    /// |G(P psi)| / |psi|: the composite through the middle vanishes.
    pub compose_gp: f64,
    /// |P(G psi)| (interior rows) / |psi|: and in the other order.
    pub compose_pg: f64,
    /// For phi in the image of P, the advanced primitive reproduces psi.
    pub reconstruction_defect: f64,
    /// Leakage of that primitive outside the dilated causal diamond of
    /// supp(P psi), relative to its own sup.
    pub diamond_leakage: f64,
    /// Interior-row mismatch between P rho_2 and -P rho_1 for the ramp
    /// splitting rho = rho_1 + rho_2 of a kernel element, relative scale.
    pub splitting_agreement: f64,
    /// |G psi' - rho| / |rho| with psi' = P rho_2: the kernel element is hit.
    pub splitting_defect: f64,
    pub battery_size: usize,
}

fn smoothstep(tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        tau * tau * (3.0 - 2.0 * tau)
    }
}

/// Exactness of 0 -> compact -> compact -> spacelike-compact -> ... -> 0 in
/// its discrete form, probed on a battery of sections padded by at least
/// four slices at each end.
pub fn exact_sequence_check(op: &WaveOperator, battery: &[GridSection]) -> Result<ExactSequenceReport> {
    if battery.is_empty() {
        return Err(Error::Domain("exact sequence check needs at least one section".into()));
    }
    let grid = &op.grid;
    let nt = grid.nt;
    let mut report = ExactSequenceReport {
        compose_gp: 0.0,
        compose_pg: 0.0,
        reconstruction_defect: 0.0,
        diamond_leakage: 0.0,
        splitting_agreement: 0.0,
        splitting_defect: 0.0,
        battery_size: battery.len(),
    };
    for psi in battery {
        psi.require_padding(4, SUPPORT_THRESHOLD * psi.max_abs())?;
        let scale = psi.max_abs().max(RESIDUAL_FLOOR);

        // ker G = im P: P psi is annihilated by G and recovered by the
        // advanced primitive.
        let phi_ker = op.apply(psi)?;
        let g_phi = causal_propagator(op, &phi_ker)?;
        report.compose_gp = report.compose_gp.max(g_phi.max_abs() / scale);
        let primitive = GreenOperator::advanced(op).apply(&phi_ker)?;
        report.reconstruction_defect =
            report.reconstruction_defect.max(primitive.max_abs_diff(psi)? / scale);

        // Support of the primitive: inside the dilated diamond of the
        // source support.
        let ksupp = phi_ker.support(grid, SUPPORT_THRESHOLD * phi_ker.max_abs());
        let diamond = causal_future(&op.spec, grid, &ksupp)
            .intersection(&causal_past(&op.spec, grid, &ksupp))
            .dilate(grid, SUPPORT_DILATION_CELLS);
        let mut outside: f64 = 0.0;
        for n in 0..nt {
            for cell in 0..grid.cells() {
                if !diamond.contains(GridEvent { slice: n, cell }) {
                    outside = outside.max(primitive.node_magnitude(n, cell));
                }
            }
        }
        report.diamond_leakage =
            report.diamond_leakage.max(outside / primitive.max_abs().max(RESIDUAL_FLOOR));

        // ker P (interior rows) = im G: split rho = G psi across the source
        // band with a smooth ramp and hit it with one Green application.
        let rho = causal_propagator(op, psi)?;
        report.compose_pg = report.compose_pg.max(interior_max_abs_diff(
            &op.apply(&rho)?,
            &GridSection::zeros(grid, op.rank),
        )? / scale);

        let bb = psi
            .support(grid, SUPPORT_THRESHOLD * psi.max_abs())
            .bounding_box(grid)
            .ok_or_else(|| Error::Domain("battery section has empty support".into()))?;
        let (lo, hi) = (bb.slice_min, bb.slice_max.max(bb.slice_min + 1));
        let (t_lo, t_hi) = (grid.t(lo), grid.t(hi));
        let mut rho2 = rho.clone();
        for n in 0..nt {
            let chi = smoothstep((grid.t(n) - t_lo) / (t_hi - t_lo));
            let row = rho2.slice_data_mut(n);
            for v in row.iter_mut() {
                *v *= chi;
            }
        }
        let mut rho1 = rho.clone();
        rho1.add_scaled(C64::new(-1.0, 0.0), &rho2)?;

        // The time-boundary rows of the stencil are extrapolation rows; the
        // band section is defined by its interior rows, so zero them.
        let mut psi_prime = op.apply(&rho2)?;
        psi_prime.slice_data_mut(0).fill(C64::new(0.0, 0.0));
        psi_prime.slice_data_mut(nt - 1).fill(C64::new(0.0, 0.0));
        let mut minus_p_rho1 = op.apply(&rho1)?;
        minus_p_rho1.scale(C64::new(-1.0, 0.0));
        minus_p_rho1.slice_data_mut(0).fill(C64::new(0.0, 0.0));
        minus_p_rho1.slice_data_mut(nt - 1).fill(C64::new(0.0, 0.0));
        let agree = interior_max_abs_diff(&psi_prime, &minus_p_rho1)?
            / psi_prime.max_abs().max(RESIDUAL_FLOOR);
        report.splitting_agreement = report.splitting_agreement.max(agree);

        let recovered = causal_propagator(op, &psi_prime)?;
        report.splitting_defect = report
            .splitting_defect
            .max(recovered.max_abs_diff(&rho)? / rho.max_abs().max(RESIDUAL_FLOOR));
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub input_defects: Vec<f64>,
    pub output_defects: Vec<f64>,
    /// output defect per unit input defect; bounded ratios are the discrete
    /// shadow of sequential continuity of G.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

pub fn green_continuity_probe(
    op: &WaveOperator,
    direction: GreenDirection,
    seq: &[GridSection],
    limit: &GridSection,
) -> Result<ContinuityReport> {
    let g_limit = green_apply(op, direction, limit)?;
    let mut input_defects = Vec::with_capacity(seq.len());
    let mut output_defects = Vec::with_capacity(seq.len());
    let mut ratios = Vec::with_capacity(seq.len());
    for phi in seq {
        let din = phi.max_abs_diff(limit)?;
        let dout = green_apply(op, direction, phi)?.max_abs_diff(&g_limit)?;
        input_defects.push(din);
        output_defects.push(dout);
        if din > 0.0 {
            ratios.push(dout / din);
        }
    }
    let max_ratio = ratios.iter().cloned().fold(0.0_f64, f64::max);
    Ok(ContinuityReport { input_defects, output_defects, ratios, max_ratio })
}

/// Assemble the full space-time system the sweep solves implicitly (identity
/// rows for the two zero-data slices, interior stencil rows for the rest),
/// solve it densely, and return the worst deviation from the sweep. Meant
/// for coarse grids; refuses anything above 4096 unknowns.
pub fn dense_cross_check(
    op: &WaveOperator,
    direction: GreenDirection,
    phi: &GridSection,
) -> Result<f64> {
    let grid = &op.grid;
    let (nt, cells, r) = (grid.nt, grid.cells(), op.rank);
    let n_unknowns = nt * cells * r;
    if n_unknowns > 4096 {
        return Err(Error::Domain(format!(
            "dense cross check limited to 4096 unknowns, got {n_unknowns}"
        )));
    }
    let sweep = green_apply(op, direction, phi)?;

    let forward = direction == GreenDirection::Advanced;
    let mut a = vec![C64::new(0.0, 0.0); n_unknowns * n_unknowns];
    let mut b = vec![C64::new(0.0, 0.0); n_unknowns];
    let idx = |slice: usize, cell: usize, k: usize| (slice * cells + cell) * r + k;

    let (zero_lo, zero_hi) = if forward { (0, 1) } else { (nt - 2, nt - 1) };
    for slice in [zero_lo, zero_hi] {
        for cell in 0..cells {
            for k in 0..r {
                let row = idx(slice, cell, k);
                a[row * n_unknowns + row] = C64::new(1.0, 0.0);
            }
        }
    }
    let mut scratch = Vec::new();
    for m in 1..nt - 1 {
        // Interior row m is the equation that determines slice m+1 (advanced)
        // or m-1 (retarded).
        let target = if forward { m + 1 } else { m - 1 };
        for cell in 0..cells {
            let base = idx(target, cell, 0);
            op.for_each_row_block(m, cell, &mut scratch, &mut |slice2, cell2, block: &[C64]| {
                for i in 0..r {
                    for j in 0..r {
                        a[(base + i) * n_unknowns + idx(slice2, cell2, j)] += block[i * r + j];
                    }
                }
            });
            for i in 0..r {
                b[base + i] = phi.get(m, cell, i);
            }
        }
    }
    let lu = DenseLu::factor(a, n_unknowns)?;
    let x = lu.solve(&b);
    let mut worst: f64 = 0.0;
    for slice in 0..nt {
        for cell in 0..cells {
            for k in 0..r {
                worst = worst.max((x[idx(slice, cell, k)] - sweep.get(slice, cell, k)).norm());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{Grid, SpacetimeSpec};
    use crate::sections::apply_op_to_distribution;
    use crate::tolerances::{
        TOL_DENSE_CROSS_CHECK, TOL_MACHINE_IDENTITY, TOL_ONE_APPLICATION, TOL_SUPPORT_LEAKAGE,
    };
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn padded_section(grid: &Grid, rank: usize, pad: usize, kx: f64) -> GridSection {
        let (a, b) = (grid.t(pad), grid.t(grid.nt - 1 - pad));
        GridSection::from_fn(grid, rank, |t, x, k| {
            let env = smooth_window(t, a, b);
            c(env * ((kx + k as f64) * x[0]).sin() + env * 0.3 * (x[0] * (1.0 + k as f64)).cos())
        })
    }

    #[test]
    fn padding_is_enforced() {
        let spec = SpacetimeSpec::minkowski(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 17, &[12], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let mut phi = GridSection::zeros(&grid, 1);
        phi.set(1, 3, 0, c(1.0));
        match GreenOperator::advanced(&op).apply(&phi) {
            Err(Error::Padding { required, .. }) => assert_eq!(required, GREEN_PADDING),
            other => panic!("expected padding error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn both_directions_invert_the_operator() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.5).unwrap();
        let grid = Grid::new(&spec, 49, &[32], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let psi = padded_section(&grid, 1, 5, 2.0);
        let phi_ker = op.apply(&psi).unwrap();

        let adv = GreenOperator::advanced(&op).apply(&phi_ker).unwrap();
        let ret = GreenOperator::retarded(&op).apply(&phi_ker).unwrap();
        let scale = psi.max_abs();
        let da = adv.max_abs_diff(&psi).unwrap();
        let dr = ret.max_abs_diff(&psi).unwrap();
        assert!(da <= TOL_MACHINE_IDENTITY * scale, "advanced round trip {da}");
        assert!(dr <= TOL_MACHINE_IDENTITY * scale, "retarded round trip {dr}");

        // P G phi = phi on the rows the sweep solves, for a generic padded
        // source (not an operator image).
        let phi = padded_section(&grid, 1, 3, 3.0);
        for dir in [GreenDirection::Advanced, GreenDirection::Retarded] {
            let u = green_apply(&op, dir, &phi).unwrap();
            let pu = op.apply(&u).unwrap();
            let d = interior_max_abs_diff(&pu, &phi).unwrap();
            assert!(d <= TOL_MACHINE_IDENTITY * phi.max_abs() / (grid.dt * grid.dt), "{d}");
        }
    }

    #[test]
    fn sweeps_match_dense_solves() {
        let spec = SpacetimeSpec::minkowski(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 14, &[10], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let phi = padded_section(&grid, 1, 2, 1.0);
        for dir in [GreenDirection::Advanced, GreenDirection::Retarded] {
            let worst = dense_cross_check(&op, dir, &phi).unwrap();
            assert!(worst <= TOL_DENSE_CROSS_CHECK * phi.max_abs(), "{dir:?}: {worst}");
        }

        // Rank two with a connection: the dense system sees the same blocks.
        let spec2 = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 0.75).unwrap();
        let grid2 = Grid::new(&spec2, 10, &[6], 0.8).unwrap();
        let conn_t = GridSection::from_fn(&grid2, 4, |t, _, e| match e {
            1 => C64::new(0.1 * t, 0.05),
            2 => C64::new(-0.05, 0.02 * t),
            _ => c(0.0),
        });
        let conn_x = GridSection::from_fn(&grid2, 4, |_, x, e| match e {
            0 => C64::new(0.0, 0.1 * (x[0]).sin()),
            3 => c(0.07),
            _ => c(0.0),
        });
        let pot = GridSection::from_fn(&grid2, 4, |_, x, e| {
            if e == 1 { C64::new(0.2 * (x[0]).cos(), 0.0) } else { c(0.0) }
        });
        let op2 =
            WaveOperator::connection_dalembert(&spec2, &grid2, 2, conn_t, vec![conn_x], pot).unwrap();
        let phi2 = padded_section(&grid2, 2, 2, 1.0);
        for dir in [GreenDirection::Advanced, GreenDirection::Retarded] {
            let worst = dense_cross_check(&op2, dir, &phi2).unwrap();
            assert!(worst <= TOL_DENSE_CROSS_CHECK * phi2.max_abs(), "{dir:?}: {worst}");
        }
    }

    #[test]
    fn time_reflection_swaps_directions_bitwise() {
        // Dyadic symmetric slab: reflected slice times coincide bitwise, and
        // the even warp reflects onto itself, so the retarded sweep of the
        // operator equals the reflected advanced sweep of the reflected
        // operator with no rounding slack at all.
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], -1.5, 1.5).unwrap();
        let grid = Grid::new(&spec, 49, &[24], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let rspec = spec.time_reflected();
        let rgrid = Grid::new(&rspec, 49, &[24], 0.8).unwrap();
        let rop = WaveOperator::dalembert(&rspec, &rgrid, 1).unwrap();

        let nt = grid.nt;
        let phi = padded_section(&grid, 1, 4, 2.0);
        let mut phi_reflected = GridSection::zeros(&rgrid, 1);
        for n in 0..nt {
            let src = phi.slice_data(n).to_vec();
            phi_reflected.slice_data_mut(nt - 1 - n).copy_from_slice(&src);
        }

        let ret = GreenOperator::retarded(&op).apply(&phi).unwrap();
        let adv_reflected = GreenOperator::advanced(&rop).apply(&phi_reflected).unwrap();
        for n in 0..nt {
            let a = ret.slice_data(n);
            let b = adv_reflected.slice_data(nt - 1 - n);
            for e in 0..a.len() {
                assert!(a[e] == b[e], "slice {n} entry {e}: {:?} vs {:?}", a[e], b[e]);
            }
        }
    }

    #[test]
    fn adjoint_sweeps_pair_against_plain_sweeps() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 33, &[24], 0.8).unwrap();
        let conn_t = GridSection::from_fn(&grid, 4, |t, x, e| match e {
            0 => C64::new(0.05 * (x[0]).sin(), 0.1 * t),
            3 => C64::new(-0.04, 0.0),
            _ => c(0.0),
        });
        let conn_x = GridSection::from_fn(&grid, 4, |_, x, e| {
            if e == 2 { C64::new(0.08 * (x[0]).cos(), -0.03) } else { c(0.0) }
        });
        let pot = GridSection::from_fn(&grid, 4, |t, _, e| {
            if e == 0 { C64::new(0.3, 0.1 * t) } else { c(0.0) }
        });
        let op = WaveOperator::connection_dalembert(&spec, &grid, 2, conn_t, vec![conn_x], pot).unwrap();
        let phi = padded_section(&grid, 2, 3, 2.0);
        let psi = padded_section(&grid, 2, 4, 5.0);
        let defect = adjoint_identity_check(&op, &phi, &psi).unwrap();
        assert!(defect <= TOL_MACHINE_IDENTITY, "pairing defect {defect}");
    }

    #[test]
    fn fundamental_solution_routes_agree() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 33, &[24], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 2).unwrap();
        let x = GridEvent { slice: 9, cell: 7 };
        let phi = padded_section(&grid, 2, 3, 2.0);

        for dir in [GreenDirection::Advanced, GreenDirection::Retarded] {
            let fund = fundamental_solution(&op, x, dir).unwrap();
            let via_weights = fund.action(&phi).unwrap();
            let via_sweep = fundamental_action_via_sweep(&op, x, dir, &phi).unwrap();
            let scale = via_weights.iter().map(|v| v.norm()).fold(0.0_f64, f64::max).max(1e-30);
            for k in 0..2 {
                let d = (via_weights[k] - via_sweep[k]).norm();
                assert!(d <= 1e-12 * scale.max(1.0), "{dir:?} component {k}: {d}");
            }

            // P pushed through the distribution gives the delta at the base:
            // pairing with a padded section reads off its value there.
            for k0 in 0..2 {
                let pushed = apply_op_to_distribution(&op, &fund.components[k0]).unwrap();
                let got = pushed.action(&phi).unwrap();
                let want = phi.get(x.slice, x.cell, k0);
                assert!(
                    (got - want).norm() <= 1e-10 * phi.max_abs().max(1.0),
                    "{dir:?} delta property, component {k0}: {got} vs {want}"
                );
            }
        }

        // The advanced kernel vanishes identically below its base slice and
        // outside the one-cell-per-step dependence cone.
        let fund = fundamental_solution(&op, x, GreenDirection::Advanced).unwrap();
        for k0 in 0..2 {
            let d = &fund.components[k0];
            for n in 0..grid.nt {
                for cell in 0..grid.cells() {
                    let reach = n as i64 - x.slice as i64;
                    let dist = (cell as i64 - x.cell as i64).rem_euclid(grid.nx[0] as i64);
                    let dist = dist.min(grid.nx[0] as i64 - dist);
                    let inside = reach >= 1 && dist <= reach;
                    if !inside {
                        for k in 0..2 {
                            let w = d.weights[(n * grid.cells() + cell) * 2 + k];
                            assert_eq!(w, c(0.0), "leak at slice {n} cell {cell}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fundamental_field_solves_the_adjoint_equation() {
        // chi(y) = F_adv(y)[phi] over all bases y is one adjoint retarded
        // sweep; the weighted transpose operator applied to it returns phi
        // on every row that sweep solves.
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 33, &[24], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let phi = padded_section(&grid, 1, 3, 3.0);
        let chi = GreenOperator::adjoint_retarded(&op).apply(&phi).unwrap();
        let back = op.discrete_adjoint(&chi).unwrap();
        let mut worst: f64 = 0.0;
        for n in 2..grid.nt {
            for cell in 0..grid.cells() {
                worst = worst.max((back.get(n, cell, 0) - phi.get(n, cell, 0)).norm());
            }
        }
        assert!(
            worst <= TOL_MACHINE_IDENTITY * phi.max_abs() / (grid.dt * grid.dt),
            "adjoint rows defect {worst}"
        );
    }

    #[test]
    fn exact_sequence_report_within_tolerances() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.5).unwrap();
        let grid = Grid::new(&spec, 65, &[48], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let battery = vec![
            GridSection::from_fn(&grid, 1, |t, x, _| {
                let env = smooth_window(t, grid.t(8), grid.t(20));
                let d = (x[0] - PI).abs().min(2.0 * PI - (x[0] - PI).abs());
                c(env * (-0.5 * d * d / 0.16).exp())
            }),
            padded_section(&grid, 1, 8, 2.0),
        ];
        let report = exact_sequence_check(&op, &battery).unwrap();
        assert!(report.compose_gp <= TOL_MACHINE_IDENTITY, "G P = 0 defect {}", report.compose_gp);
        assert!(
            report.compose_pg <= TOL_MACHINE_IDENTITY / (grid.dt * grid.dt),
            "P G = 0 defect {}",
            report.compose_pg
        );
        assert!(
            report.reconstruction_defect <= TOL_MACHINE_IDENTITY,
            "primitive defect {}",
            report.reconstruction_defect
        );
        assert!(report.diamond_leakage <= TOL_SUPPORT_LEAKAGE, "diamond leak {}", report.diamond_leakage);
        assert!(
            report.splitting_agreement <= TOL_MACHINE_IDENTITY,
            "splitting rows defect {}",
            report.splitting_agreement
        );
        assert!(report.splitting_defect <= TOL_ONE_APPLICATION, "splitting {}", report.splitting_defect);
    }

    #[test]
    fn smooth_source_stays_in_dilated_cone() {
        let spec = SpacetimeSpec::minkowski(&[2.0 * PI], 0.0, 2.0).unwrap();
        let grid = Grid::new(&spec, 129, &[96], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let phi = GridSection::from_fn(&grid, 1, |t, x, _| {
            let env = smooth_window(t, grid.t(4), grid.t(16));
            let d = (x[0] - 2.0).abs().min(2.0 * PI - (x[0] - 2.0).abs());
            c(env * (-0.5 * d * d / 0.04).exp())
        });
        let supp = phi.support(&grid, SUPPORT_THRESHOLD * phi.max_abs());
        for dir in [GreenDirection::Advanced, GreenDirection::Retarded] {
            let u = green_apply(&op, dir, &phi).unwrap();
            let leak = directional_leakage(&op, &u, &supp, SUPPORT_DILATION_CELLS, dir);
            assert!(leak <= TOL_SUPPORT_LEAKAGE, "{dir:?} leak {leak}");
        }
    }

    #[test]
    fn continuity_probe_ratios_track_the_operator_norm() {
        let spec = SpacetimeSpec::desitter(&[2.0 * PI], 0.0, 1.0).unwrap();
        let grid = Grid::new(&spec, 33, &[24], 0.8).unwrap();
        let op = WaveOperator::dalembert(&spec, &grid, 1).unwrap();
        let limit = padded_section(&grid, 1, 3, 2.0);
        let bump = padded_section(&grid, 1, 4, 6.0);
        let seq: Vec<GridSection> = (1..=5)
            .map(|j| {
                let mut phi = limit.clone();
                phi.add_scaled(C64::new(0.5_f64.powi(j), 0.0), &bump).unwrap();
                phi
            })
            .collect();
        let report = green_continuity_probe(&op, GreenDirection::Advanced, &seq, &limit).unwrap();
        assert_eq!(report.ratios.len(), 5);
        // Linear operator: every ratio is the same Rayleigh quotient.
        let r0 = report.ratios[0];
        for r in &report.ratios {
            assert!((r - r0).abs() <= 1e-6 * r0, "ratios drift: {:?}", report.ratios);
        }
        assert!(report.max_ratio.is_finite() && report.max_ratio > 0.0);
        // And the outputs genuinely converge.
        assert!(report.output_defects.last().unwrap() < report.output_defects.first().unwrap());
    }
}
